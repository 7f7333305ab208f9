//! Linear probing of frozen features: mean-pooled dense tube features per
//! clip, multinomial logistic regression on top, top-1 accuracy out.

use super::segmentation::extract_dense_features;
use crate::error::{Error, Result};
use crate::synthetic::VideoClip;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::TrainState;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Full-batch gradient iterations; the objective is convex and zero
    /// initialization makes the run fully deterministic.
    pub iterations: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weight matrix.
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { iterations: 400, learning_rate: 0.5, l2: 1e-4 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("probe needs at least one iteration".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("probe learning rate must be positive".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config("probe l2 must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Mean-pool the dense tube features of each clip: one row per clip.
pub fn pooled_features(clips: &[VideoClip], state: &TrainState) -> Result<Tensor> {
    if clips.is_empty() {
        return Err(Error::Config("no clips to featurize".into()));
    }
    let d = state.config.model.d_model;
    let mut out = Tensor::zeros(clips.len(), d);
    for (row, clip) in clips.iter().enumerate() {
        let dense = extract_dense_features(clip, state)?;
        let n = dense.data.rows() as f64;
        for j in 0..d {
            let mean: f64 = (0..dense.data.rows()).map(|i| dense.data.get(i, j)).sum::<f64>() / n;
            out.set(row, j, mean);
        }
    }
    Ok(out)
}

/// Labels of a clip set; errors on missing labels.
pub fn labels_of(clips: &[VideoClip]) -> Result<Vec<usize>> {
    clips
        .iter()
        .map(|c| {
            c.label
                .map(usize::from)
                .ok_or_else(|| Error::Config(format!("clip {} has no label", c.clip_id)))
        })
        .collect()
}

/// Train a softmax classifier on frozen features and report top-1 accuracy
/// on the test split. Features are standardized with training statistics.
pub fn linear_probe(
    train_features: &Tensor,
    train_labels: &[usize],
    test_features: &Tensor,
    test_labels: &[usize],
    config: &ProbeConfig,
) -> Result<f64> {
    config.validate()?;
    if train_features.rows() != train_labels.len() || test_features.rows() != test_labels.len() {
        return Err(Error::Shape("feature/label counts differ".into()));
    }
    if train_features.rows() == 0 || test_features.rows() == 0 {
        return Err(Error::Config("probe needs non-empty train and test splits".into()));
    }
    if train_features.cols() != test_features.cols() {
        return Err(Error::Shape("train/test feature dims differ".into()));
    }
    let n_classes = train_labels.iter().chain(test_labels).max().expect("non-empty") + 1;
    {
        let mut seen = vec![false; n_classes];
        for &l in train_labels {
            seen[l] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::Config("training split has fewer than two classes".into()));
        }
    }

    // Standardize with train statistics.
    let d = train_features.cols();
    let n_train = train_features.rows() as f64;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let m: f64 = (0..train_features.rows()).map(|i| train_features.get(i, j)).sum::<f64>() / n_train;
        let v: f64 = (0..train_features.rows())
            .map(|i| (train_features.get(i, j) - m).powi(2))
            .sum::<f64>()
            / n_train;
        mean[j] = m;
        std[j] = (v + 1e-8).sqrt();
    }
    let normalize = |t: &Tensor| {
        Tensor::from_fn(t.rows(), t.cols(), |i, j| (t.get(i, j) - mean[j]) / std[j])
    };
    let x_train = normalize(train_features);
    let x_test = normalize(test_features);

    let one_hot = Tensor::from_fn(train_labels.len(), n_classes, |i, j| {
        if train_labels[i] == j {
            1.0
        } else {
            0.0
        }
    });

    // Full-batch gradient descent from zero init on the convex objective.
    let mut weight = Tensor::zeros(d, n_classes);
    let mut bias = Tensor::zeros(1, n_classes);
    for _ in 0..config.iterations {
        let mut tape = Tape::new();
        let w = tape.param(weight.clone());
        let b = tape.param(bias.clone());
        let x = tape.constant(x_train.clone());
        let logits = tape.linear(x, w, b);
        let ce = crate::objectives::cross_entropy_term(&mut tape, logits, &one_hot, 1.0)?;
        let w_sq = tape.mul(w, w);
        let w_sum = tape.sum_all(w_sq);
        let reg = tape.scale(w_sum, 0.5 * config.l2);
        let loss = tape.add(ce, reg);
        let grads = tape.backward(loss);
        let gw = grads.get(w).expect("weight on loss path");
        let gb = grads.get(b).expect("bias on loss path");
        for (p, g) in weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *p -= config.learning_rate * g;
        }
        for (p, g) in bias.as_mut_slice().iter_mut().zip(gb.as_slice()) {
            *p -= config.learning_rate * g;
        }
    }

    // Top-1 accuracy (ties resolve to the lowest class id).
    let logits = {
        let mut t = x_test.matmul(&weight);
        for i in 0..t.rows() {
            for (v, b) in t.row_mut(i).iter_mut().zip(bias.row(0)) {
                *v += b;
            }
        }
        t
    };
    let mut correct = 0usize;
    for i in 0..logits.rows() {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (j, &v) in logits.row(i).iter().enumerate() {
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        if best == test_labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_labels.len() as f64)
}

/// Deterministic index-based split: every `1/test_fraction`-th clip goes to
/// the test set, preserving the round-robin label balance.
pub fn split_indices(n: usize, test_every: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..n {
        if i % test_every == test_every - 1 {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_clips: usize,
    pub test_clips: usize,
    pub classes: usize,
}

/// Probe a frozen encoder on labeled clips with a deterministic split.
pub fn probe_encoder(
    clips: &[VideoClip],
    state: &TrainState,
    config: &ProbeConfig,
    test_every: usize,
) -> Result<ProbeReport> {
    if test_every < 2 {
        return Err(Error::Config("test_every must be at least 2".into()));
    }
    let features = pooled_features(clips, state)?;
    let labels = labels_of(clips)?;
    let (train_idx, test_idx) = split_indices(clips.len(), test_every);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config(format!(
            "split produced empty sides from {} clips",
            clips.len()
        )));
    }
    let take = |idx: &[usize]| {
        let mut t = Tensor::zeros(idx.len(), features.cols());
        for (r, &i) in idx.iter().enumerate() {
            t.row_mut(r).copy_from_slice(features.row(i));
        }
        t
    };
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let test_labels: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    let accuracy = linear_probe(
        &take(&train_idx),
        &train_labels,
        &take(&test_idx),
        &test_labels,
        config,
    )?;
    let classes = labels.iter().max().expect("non-empty") + 1;
    Ok(ProbeReport {
        accuracy,
        train_clips: train_idx.len(),
        test_clips: test_idx.len(),
        classes,
    })
}
