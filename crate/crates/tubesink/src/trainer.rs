//! Pretraining loop: batching, masking, forward/backward, AdamW with a
//! warmup + cosine schedule, collapse diagnostics, and checkpointing.
//!
//! Every random decision derives from `(seed, label, counters)`, so a run is
//! a pure function of its config and dataset: restarts from a checkpoint
//! continue bit-exactly, and epoch shuffles and per-clip masks never depend
//! on how many steps were executed in this process.

use crate::checkpoint::{self, Checkpoint};
use crate::data_io::FeatureStore;
use crate::error::{Error, Result};
use crate::nets::params::{BoundParams, ParamStore};
use crate::nets::transformer::Dropout;
use crate::nets::{PhiConfig, PhiMlp, PsiModel, TransformerConfig};
use crate::objectives::{feature_l2_loss, pixel_l2_loss, sigma_loss, LossReport, SigmaConfig};
use crate::optim::{cosine_lr, AdamW, OptimizerConfig};
use crate::prototypes::PrototypeBank;
use crate::rng::stream;
use crate::sinkhorn::entropy;
use crate::synthetic::{GeneratorConfig, VideoClip};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenize::{extract_tubes, sample_mask, MaskPartition, TubeGeometry};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    PixelL2,
    FeatureL2,
    Sigma,
}

/// Where projection targets come from: the jointly trained MLP or a frozen
/// file-backed feature store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Mlp,
    External { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Clips per optimizer step; partial trailing batches are dropped.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub mask_ratio: f64,
    /// Channel count the models were built for; must match the dataset.
    pub channels: usize,
    pub optimizer: OptimizerConfig,
    pub geometry: TubeGeometry,
    pub model: TransformerConfig,
    pub phi: PhiConfig,
    pub projection: Projection,
    pub prototype_count: usize,
    pub sigma: SigmaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Sigma,
            batch_size: 8,
            epochs: 24,
            learning_rate: 2e-3,
            warmup_epochs: 2,
            seed: 0,
            mask_ratio: 0.9,
            channels: 3,
            optimizer: OptimizerConfig::default(),
            geometry: TubeGeometry::default(),
            model: TransformerConfig::default(),
            phi: PhiConfig::default(),
            projection: Projection::Mlp,
            prototype_count: 64,
            sigma: SigmaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup epochs {} must be below total epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask ratio {} out of (0, 1)", self.mask_ratio)));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.model.validate()?;
        self.phi.validate()?;
        self.sigma.validate()?;
        if self.objective == Objective::Sigma && self.prototype_count < 2 {
            return Err(Error::Config("sigma objective needs at least 2 prototypes".into()));
        }
        Ok(())
    }

    fn wants_phi_mlp(&self) -> bool {
        self.objective != Objective::PixelL2 && self.projection == Projection::Mlp
    }
}

/// All learnable state plus the step counter and derivation seed.
pub struct TrainState {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub psi: PsiModel,
    pub phi: Option<PhiMlp>,
    pub bank: Option<PrototypeBank>,
    pub optimizer: AdamW,
    pub step: u64,
}

impl TrainState {
    /// Fresh state from a validated config; initialization derives from
    /// `config.seed` only.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let tube_len = config.geometry.tube_len(config.channels);
        let mut store = ParamStore::new();
        let mut init_rng = stream(config.seed, "init", 0, 0);

        let with_pixel_head = config.objective == Objective::PixelL2;
        let psi = PsiModel::build(&mut store, &config.model, tube_len, with_pixel_head, &mut init_rng)?;
        let phi = config
            .wants_phi_mlp()
            .then(|| PhiMlp::build(&mut store, &config.phi, tube_len, config.model.d_feat, &mut init_rng))
            .transpose()?;
        let bank = (config.objective == Objective::Sigma)
            .then(|| {
                PrototypeBank::build(
                    &mut store,
                    config.prototype_count,
                    config.model.d_feat,
                    config.sigma.normalize,
                    &mut init_rng,
                )
            })
            .transpose()?;

        let optimizer = AdamW::new(&store);
        Ok(TrainState { config, store, psi, phi, bank, optimizer, step: 0 })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config_json = serde_json::to_string(&self.config)
            .map_err(|e| Error::Parse(format!("config serialization failed: {e}")))?;
        let params: Vec<(String, Tensor)> =
            self.store.entries().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let names: Vec<String> = self.store.entries().map(|(n, _)| n.to_string()).collect();
        let moments_m = names.iter().cloned().zip(self.optimizer.m.iter().cloned()).collect();
        let moments_v = names.iter().cloned().zip(self.optimizer.v.iter().cloned()).collect();
        Ok(Checkpoint {
            config_json,
            params,
            moments_m,
            moments_v,
            seed: self.config.seed,
            step: self.step,
        })
    }

    /// Rebuild a state from a checkpoint; architecture comes from the
    /// embedded config, tensors overwrite the fresh initialization.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::Parse(format!("bad config in checkpoint: {e}")))?;
        let mut state = TrainState::new(config)?;
        if ckpt.params.len() != state.store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model needs {}",
                ckpt.params.len(),
                state.store.len()
            )));
        }
        for (name, tensor) in &ckpt.params {
            let id = state
                .store
                .id_of(name)
                .ok_or_else(|| Error::Config(format!("checkpoint tensor {name} unknown to this model")))?;
            if state.store.get(id).shape() != tensor.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    state.store.get(id).shape()
                )));
            }
            *state.store.get_mut(id) = tensor.clone();
        }
        let load_moments = |section: &[(String, Tensor)], dest: &mut Vec<Tensor>| -> Result<()> {
            for (name, tensor) in section {
                let id = state
                    .store
                    .id_of(name)
                    .ok_or_else(|| Error::Config(format!("moment tensor {name} unknown")))?;
                let index = state
                    .store
                    .entries()
                    .position(|(n, _)| n == name)
                    .expect("id_of succeeded");
                let _ = id;
                dest[index] = tensor.clone();
            }
            Ok(())
        };
        load_moments(&ckpt.moments_m, &mut state.optimizer.m)?;
        load_moments(&ckpt.moments_v, &mut state.optimizer.v)?;
        state.optimizer.updates = ckpt.step;
        state.step = ckpt.step;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_checkpoint()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load(path)?)
    }
}

/// One CSV row of training metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub ce_psi: Option<f64>,
    pub ce_phi: Option<f64>,
    pub feat_variance: f64,
    pub usage_entropy: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,epoch,lr,loss,ce_psi,ce_phi,feat_variance,usage_entropy";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.epoch,
            r.lr,
            r.loss,
            fmt_opt(r.ce_psi),
            fmt_opt(r.ce_phi),
            r.feat_variance,
            fmt_opt(r.usage_entropy),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Collapse diagnostics computed per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseMetrics {
    /// Mean over feature dims of the per-dim variance across the batch.
    pub feat_variance: f64,
    /// Entropy of the mean pseudo-label row, normalized by log K.
    pub usage_entropy: Option<f64>,
}

pub fn collapse_metrics(x_psi: &Tensor, pseudo_labels: Option<&Tensor>) -> CollapseMetrics {
    let rows = x_psi.rows() as f64;
    let mut variance_sum = 0.0;
    for j in 0..x_psi.cols() {
        let mean: f64 = (0..x_psi.rows()).map(|i| x_psi.get(i, j)).sum::<f64>() / rows;
        let var: f64 =
            (0..x_psi.rows()).map(|i| (x_psi.get(i, j) - mean).powi(2)).sum::<f64>() / rows;
        variance_sum += var;
    }
    let feat_variance = variance_sum / x_psi.cols() as f64;

    let usage_entropy = pseudo_labels.map(|q| {
        let k = q.cols();
        let mut mean_row = vec![0.0; k];
        for i in 0..q.rows() {
            for (m, v) in mean_row.iter_mut().zip(q.row(i)) {
                *m += v;
            }
        }
        for m in mean_row.iter_mut() {
            *m /= q.rows() as f64;
        }
        entropy(&mean_row) / (k as f64).ln()
    });
    CollapseMetrics { feat_variance, usage_entropy }
}

/// Owns a training run over an in-memory dataset.
pub struct Trainer {
    state: TrainState,
    /// Cached (raw tubes, positions) per clip, in dataset order.
    tokenized: Vec<(Tensor, Vec<[usize; 3]>)>,
    clip_ids: Vec<u64>,
    external: Option<FeatureStore>,
    metrics: Vec<StepMetrics>,
    steps_per_epoch: u64,
    n_tokens: usize,
}

impl Trainer {
    pub fn new(generator: &GeneratorConfig, clips: &[VideoClip], config: TrainConfig) -> Result<Self> {
        let state = TrainState::new(config)?;
        Self::with_state(generator, clips, state)
    }

    /// Continue from an existing (possibly checkpointed) state.
    pub fn with_state(
        generator: &GeneratorConfig,
        clips: &[VideoClip],
        state: TrainState,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        let config = &state.config;
        if generator.channels != config.channels {
            return Err(Error::Config(format!(
                "dataset has {} channels, config expects {}",
                generator.channels, config.channels
            )));
        }
        config.geometry.validate_for(generator.frames, generator.height, generator.width)?;
        if clips.len() < config.batch_size {
            return Err(Error::Config(format!(
                "dataset of {} clips is smaller than one batch of {}",
                clips.len(),
                config.batch_size
            )));
        }

        let mut tokenized = Vec::with_capacity(clips.len());
        let mut clip_ids = Vec::with_capacity(clips.len());
        for clip in clips {
            tokenized.push(extract_tubes(clip, &config.geometry)?);
            clip_ids.push(clip.clip_id);
        }
        let n_tokens = tokenized[0].0.rows();

        let external = match &config.projection {
            Projection::External { path } if config.objective != Objective::PixelL2 => {
                let store = FeatureStore::open(Path::new(path))?;
                if store.rows != n_tokens {
                    return Err(Error::Shape(format!(
                        "feature store has {} rows per clip, geometry needs {n_tokens}",
                        store.rows
                    )));
                }
                if store.dim != config.model.d_feat {
                    return Err(Error::Shape(format!(
                        "feature store dim {} does not match d_feat {}",
                        store.dim, config.model.d_feat
                    )));
                }
                Some(store)
            }
            _ => None,
        };

        let steps_per_epoch = (clips.len() / config.batch_size) as u64;
        Ok(Trainer {
            state,
            tokenized,
            clip_ids,
            external,
            metrics: Vec::new(),
            steps_per_epoch,
            n_tokens,
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch * self.state.config.epochs as u64
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn metrics(&self) -> &[StepMetrics] {
        &self.metrics
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let n = self.tokenized.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(self.state.config.seed, "shuffle", epoch, 0);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        order
    }

    fn mask_for(&self, epoch: u64, clip_id: u64) -> Result<MaskPartition> {
        let mut rng = stream(self.state.config.seed, "mask", epoch, clip_id);
        sample_mask(self.n_tokens, self.state.config.mask_ratio, &mut rng)
    }

    /// Run one optimizer step; returns its metrics row.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.state.step;
        self.step_inner().map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("at step {step}: {msg}")),
            other => other,
        })
    }

    fn step_inner(&mut self) -> Result<StepMetrics> {
        let config = self.state.config.clone();
        let step = self.state.step;
        let epoch = step / self.steps_per_epoch;
        let batch_index = (step % self.steps_per_epoch) as usize;
        let order = self.epoch_order(epoch);
        let batch = &order[batch_index * config.batch_size..(batch_index + 1) * config.batch_size];

        let mut tape = Tape::new();
        let bound = BoundParams::bind(&self.state.store, &mut tape);

        let mut psi_parts: Vec<Var> = Vec::with_capacity(batch.len());
        let mut pixel_parts: Vec<Var> = Vec::with_capacity(batch.len());
        let mut masked_raw_rows: Vec<Tensor> = Vec::with_capacity(batch.len());
        let mut external_rows: Vec<Tensor> = Vec::with_capacity(batch.len());

        let mut dropout_rng = stream(config.seed, "dropout", epoch, step);

        for &clip_index in batch {
            let (raw, positions) = &self.tokenized[clip_index];
            let clip_id = self.clip_ids[clip_index];
            let mask = self.mask_for(epoch, clip_id)?;

            let visible_raw = select_rows(raw, &mask.visible_idx);
            let masked_raw = select_rows(raw, &mask.masked_idx);
            let visible_pos: Vec<[usize; 3]> =
                mask.visible_idx.iter().map(|&i| positions[i]).collect();
            let masked_pos: Vec<[usize; 3]> =
                mask.masked_idx.iter().map(|&i| positions[i]).collect();

            let tokens = self.state.psi.embed(&mut tape, &bound, &visible_raw)?;
            let drop = (config.model.dropout > 0.0)
                .then(|| Dropout { rate: config.model.dropout, rng: &mut dropout_rng });
            let out =
                self.state
                    .psi
                    .forward(&mut tape, &bound, tokens, &visible_pos, &masked_pos, drop)?;
            psi_parts.push(out.features);
            if let Some(p) = out.pixel_pred {
                pixel_parts.push(p);
            }
            if let Some(store) = &self.external {
                external_rows
                    .push(crate::nets::phi_forward_external(store, clip_id, &mask, config.model.d_feat)?);
            }
            masked_raw_rows.push(masked_raw);
        }

        let x_psi = tape.concat_rows(&psi_parts);
        let masked_raw_all = stack_rows(&masked_raw_rows);

        let (loss_var, report, q_phi): (Var, LossReport, Option<Tensor>) = match config.objective {
            Objective::PixelL2 => {
                let pixel_pred = tape.concat_rows(&pixel_parts);
                let (loss, report) = pixel_l2_loss(&mut tape, pixel_pred, &masked_raw_all)?;
                (loss, report, None)
            }
            Objective::FeatureL2 => {
                let x_phi = self.phi_features(&mut tape, &bound, &masked_raw_all, &external_rows)?;
                let (loss, report) = feature_l2_loss(&mut tape, x_phi, x_psi)?;
                (loss, report, None)
            }
            Objective::Sigma => {
                let x_phi = self.phi_features(&mut tape, &bound, &masked_raw_all, &external_rows)?;
                let bank = self.state.bank.as_ref().expect("sigma state has a bank");
                let out = sigma_loss(&mut tape, x_phi, x_psi, bound.var(bank.param), &config.sigma)?;
                (out.loss, out.report, Some(out.q_phi))
            }
        };

        let collapse = collapse_metrics(tape.value(x_psi), q_phi.as_ref());

        let grads_raw = tape.backward(loss_var);
        let grads = bound.collect_gradients(&self.state.store, &grads_raw);
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                let name = self
                    .state
                    .store
                    .entries()
                    .nth(i)
                    .map(|(n, _)| n.to_string())
                    .unwrap_or_default();
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
        }

        let lr = cosine_lr(
            step,
            self.total_steps(),
            self.steps_per_epoch * config.warmup_epochs as u64,
            config.learning_rate,
        );
        self.state.optimizer.step(&mut self.state.store, &grads, lr, &config.optimizer)?;
        if let Some(bank) = &self.state.bank {
            bank.renormalize(&mut self.state.store);
        }
        self.state.step += 1;

        let row = StepMetrics {
            step,
            epoch,
            lr,
            loss: report.total,
            ce_psi: report.ce_psi,
            ce_phi: report.ce_phi,
            feat_variance: collapse.feat_variance,
            usage_entropy: collapse.usage_entropy,
        };
        self.metrics.push(row.clone());
        Ok(row)
    }

    fn phi_features(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        masked_raw_all: &Tensor,
        external_rows: &[Tensor],
    ) -> Result<Var> {
        match (&self.state.phi, &self.external) {
            (Some(phi), _) => phi.forward(tape, bound, masked_raw_all),
            (None, Some(_)) => Ok(tape.constant(stack_rows(external_rows))),
            (None, None) => Err(Error::Config(
                "objective needs projection features but no projection is configured".into(),
            )),
        }
    }

    /// Train until the configured number of epochs is complete.
    pub fn run(&mut self) -> Result<()> {
        while self.state.step < self.total_steps() {
            self.step()?;
        }
        Ok(())
    }
}

fn select_rows(matrix: &Tensor, indices: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(indices.len(), matrix.cols());
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(matrix.row(i));
    }
    out
}

fn stack_rows(parts: &[Tensor]) -> Tensor {
    if parts.is_empty() {
        return Tensor::zeros(0, 0);
    }
    let cols = parts[0].cols();
    let rows = parts.iter().map(|p| p.rows()).sum();
    let mut out = Tensor::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        for i in 0..p.rows() {
            out.row_mut(at).copy_from_slice(p.row(i));
            at += 1;
        }
    }
    out
}

/// Convenience wrapper: fresh state, full run, final state plus metrics.
pub fn train(
    generator: &GeneratorConfig,
    clips: &[VideoClip],
    config: TrainConfig,
) -> Result<(TrainState, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(generator, clips, config)?;
    trainer.run()?;
    let metrics = trainer.metrics().to_vec();
    Ok((trainer.into_state(), metrics))
}
