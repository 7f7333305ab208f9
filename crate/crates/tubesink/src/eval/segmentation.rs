//! Unsupervised video object segmentation: k-means over dense space-time
//! features, cluster-to-object matching (Hungarian or pixel-precision), and
//! mIoU scoring against ground-truth instance masks.

use super::hungarian::assign_max;
use super::kmeans::kmeans;
use crate::error::{Error, Result};
use crate::nets::params::BoundParams;
use crate::synthetic::VideoClip;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::tokenize::{extract_tubes, TubeGeometry};
use crate::trainer::TrainState;
use serde::{Deserialize, Serialize};

/// Encoder features of every tube, kept in (t, y, x) row-major token order
/// alongside the grid dims.
#[derive(Clone, Debug)]
pub struct DenseFeatures {
    /// `[N_T, d]` feature rows.
    pub data: Tensor,
    /// Token grid (time, rows, cols).
    pub grid: (usize, usize, usize),
}

/// Run the encoder over all tubes (mask ratio 0 path) and return the dense
/// feature grid. Deterministic; dropout is inactive outside training.
pub fn extract_dense_features(clip: &VideoClip, state: &TrainState) -> Result<DenseFeatures> {
    let geom = &state.config.geometry;
    let (raw, positions) = extract_tubes(clip, geom)?;
    let [t_len, _, h, w] = clip.frames_shape;
    let grid = geom.grid(t_len, h, w);

    let mut tape = Tape::new();
    let bound = BoundParams::bind(&state.store, &mut tape);
    let tokens = state.psi.embed(&mut tape, &bound, &raw)?;
    let encoded = state.psi.encode(&mut tape, &bound, tokens, &positions, &mut None);
    let data = tape.value(encoded).clone();
    data.ensure_finite("dense features")?;
    Ok(DenseFeatures { data, grid })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Hungarian,
    Precision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// K = per-clip ground-truth object count plus background.
    Clustering,
    /// K = 3x the dataset-average object count.
    Overclustering,
}

/// Match cluster ids against ground-truth objects and compute mIoU over the
/// foreground classes. Both maps are flat `[T*H*W]` label arrays.
///
/// Hungarian matching is one-to-one over all ground-truth classes including
/// background; unmatched clusters fall to background. Precision matching
/// sends each cluster to the class it overlaps most.
pub fn match_and_score(cluster_map: &[u16], gt_map: &[u16], method: MatchMethod) -> Result<f64> {
    if cluster_map.len() != gt_map.len() {
        return Err(Error::Shape(format!(
            "cluster map has {} entries, ground truth {}",
            cluster_map.len(),
            gt_map.len()
        )));
    }
    let n_classes = *gt_map.iter().max().unwrap_or(&0) as usize + 1;
    if n_classes < 2 {
        return Err(Error::Config("ground truth has no foreground objects".into()));
    }

    // Compact cluster ids.
    let mut cluster_ids: Vec<u16> = cluster_map.to_vec();
    cluster_ids.sort_unstable();
    cluster_ids.dedup();
    let cluster_index = |c: u16| cluster_ids.binary_search(&c).expect("id collected above");
    let n_clusters = cluster_ids.len();

    let mut overlap = vec![vec![0usize; n_classes]; n_clusters];
    let mut cluster_size = vec![0usize; n_clusters];
    let mut class_size = vec![0usize; n_classes];
    for (&c, &g) in cluster_map.iter().zip(gt_map) {
        let ci = cluster_index(c);
        overlap[ci][g as usize] += 1;
        cluster_size[ci] += 1;
        class_size[g as usize] += 1;
    }

    // Cluster -> class assignment; background (class 0) is the fallback.
    let mut assignment = vec![0usize; n_clusters];
    match method {
        MatchMethod::Hungarian => {
            let iou = Tensor::from_fn(n_clusters, n_classes, |c, g| {
                let inter = overlap[c][g] as f64;
                let union = (cluster_size[c] + class_size[g] - overlap[c][g]) as f64;
                if union > 0.0 {
                    inter / union
                } else {
                    0.0
                }
            });
            for (c, matched) in assign_max(&iou).into_iter().enumerate() {
                assignment[c] = matched.unwrap_or(0);
            }
        }
        MatchMethod::Precision => {
            for c in 0..n_clusters {
                let best = (0..n_classes)
                    .max_by(|&a, &b| {
                        overlap[c][a]
                            .cmp(&overlap[c][b])
                            .then(b.cmp(&a)) // ties to the smaller class id
                    })
                    .expect("at least background exists");
                assignment[c] = best;
            }
        }
    }

    // Merged prediction map, then IoU per foreground class.
    let mut inter = vec![0usize; n_classes];
    let mut pred_size = vec![0usize; n_classes];
    for (&c, &g) in cluster_map.iter().zip(gt_map) {
        let predicted = assignment[cluster_index(c)];
        pred_size[predicted] += 1;
        if predicted == g as usize {
            inter[g as usize] += 1;
        }
    }
    let mut total = 0.0;
    let mut counted = 0;
    for g in 1..n_classes {
        if class_size[g] == 0 {
            continue;
        }
        let union = pred_size[g] + class_size[g] - inter[g];
        total += inter[g] as f64 / union as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Config("ground truth has no foreground objects".into()));
    }
    Ok(total / counted as f64)
}

/// Nearest-neighbor upsampling of a tube-grid label map to pixel resolution
/// (temporal repeat by tube frames, spatial repeat by tube size).
pub fn upsample_cluster_map(
    labels: &[usize],
    grid: (usize, usize, usize),
    geom: &TubeGeometry,
) -> Vec<u16> {
    let (gt, gy, gx) = grid;
    let t_len = gt * geom.tube_frames;
    let h = gy * geom.tube_size;
    let w = gx * geom.tube_size;
    let mut out = vec![0u16; t_len * h * w];
    for t in 0..t_len {
        for y in 0..h {
            for x in 0..w {
                let token =
                    ((t / geom.tube_frames) * gy + y / geom.tube_size) * gx + x / geom.tube_size;
                out[(t * h + y) * w + x] = labels[token] as u16;
            }
        }
    }
    out
}

/// Nearest-neighbor downsampling of the ground truth onto the tube grid
/// (the alternative matching resolution).
pub fn downsample_gt(masks: &[u16], shape: [usize; 4], geom: &TubeGeometry) -> Vec<u16> {
    let [t_len, _, h, w] = shape;
    let (gt, gy, gx) = geom.grid(t_len, h, w);
    let mut out = vec![0u16; gt * gy * gx];
    for tg in 0..gt {
        let t = tg * geom.tube_frames + geom.tube_frames / 2;
        for yg in 0..gy {
            let y = yg * geom.tube_size + geom.tube_size / 2;
            for xg in 0..gx {
                let x = xg * geom.tube_size + geom.tube_size / 2;
                out[(tg * gy + yg) * gx + xg] = masks[(t * h + y) * w + x];
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub regime: Regime,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    /// Upsample cluster maps to pixel resolution (default); otherwise the
    /// ground truth is downsampled to the tube grid.
    pub upsample_features: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            regime: Regime::Clustering,
            seed: 0,
            kmeans_max_iters: 100,
            upsample_features: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: u64,
    pub k_used: usize,
    pub hungarian_miou: f64,
    pub precision_miou: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub regime: Regime,
    pub mean_hungarian_miou: f64,
    pub mean_precision_miou: f64,
    /// Clips without instance masks, skipped with a warning.
    pub skipped: usize,
    pub per_clip: Vec<ClipScore>,
}

fn object_count(masks: &[u16]) -> usize {
    *masks.iter().max().unwrap_or(&0) as usize
}

/// Cluster one clip's dense features and score both matching methods.
pub fn segment_clip(
    features: &DenseFeatures,
    masks: &[u16],
    frames_shape: [usize; 4],
    geom: &TubeGeometry,
    k: usize,
    config: &SegmentationConfig,
    clip_id: u64,
) -> Result<ClipScore> {
    let clusters = kmeans(&features.data, k, config.seed ^ clip_id, config.kmeans_max_iters)?;
    let (cluster_map, gt_map): (Vec<u16>, Vec<u16>) = if config.upsample_features {
        (
            upsample_cluster_map(&clusters.labels, features.grid, geom),
            masks.to_vec(),
        )
    } else {
        (
            clusters.labels.iter().map(|&l| l as u16).collect(),
            downsample_gt(masks, frames_shape, geom),
        )
    };
    Ok(ClipScore {
        clip_id,
        k_used: k,
        hungarian_miou: match_and_score(&cluster_map, &gt_map, MatchMethod::Hungarian)?,
        precision_miou: match_and_score(&cluster_map, &gt_map, MatchMethod::Precision)?,
    })
}

/// Evaluate a frozen encoder over a labeled dataset in one regime,
/// reporting both matching methods.
pub fn segmentation_benchmark(
    clips: &[VideoClip],
    state: &TrainState,
    config: &SegmentationConfig,
) -> Result<SegmentationReport> {
    let with_masks: Vec<&VideoClip> = clips.iter().filter(|c| c.instance_masks.is_some()).collect();
    let skipped = clips.len() - with_masks.len();
    if skipped > 0 {
        log::warn!("segmentation: skipping {skipped} clips without instance masks");
    }
    if with_masks.is_empty() {
        return Err(Error::Config("no clips with instance masks to evaluate".into()));
    }

    // Overclustering uses a dataset-level K.
    let mean_objects = with_masks
        .iter()
        .map(|c| object_count(c.instance_masks.as_ref().expect("filtered")) as f64)
        .sum::<f64>()
        / with_masks.len() as f64;
    let overcluster_k = (3.0 * mean_objects).round().max(2.0) as usize;

    let mut per_clip = Vec::with_capacity(with_masks.len());
    for clip in &with_masks {
        let masks = clip.instance_masks.as_ref().expect("filtered");
        let k = match config.regime {
            Regime::Clustering => object_count(masks) + 1,
            Regime::Overclustering => overcluster_k,
        };
        let features = extract_dense_features(clip, state)?;
        per_clip.push(segment_clip(
            &features,
            masks,
            clip.frames_shape,
            &state.config.geometry,
            k,
            config,
            clip.clip_id,
        )?);
    }
    let n = per_clip.len() as f64;
    Ok(SegmentationReport {
        regime: config.regime,
        mean_hungarian_miou: per_clip.iter().map(|c| c.hungarian_miou).sum::<f64>() / n,
        mean_precision_miou: per_clip.iter().map(|c| c.precision_miou).sum::<f64>() / n,
        skipped,
        per_clip,
    })
}
