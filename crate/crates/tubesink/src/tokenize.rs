//! Space-time tube tokenization and random mask sampling.
//!
//! A clip is cut into non-overlapping `t_k x s_k x s_k` pixel blocks
//! ("tubes"), each flattened to one row and linearly embedded to one token.
//! Masking hides a high fraction of tubes from the encoder; the masked set
//! is what the model must predict.

use crate::error::{Error, Result};
use crate::synthetic::VideoClip;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Tube extents. The temporal extent must divide the clip length and the
/// spatial extent must divide both clip height and width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeGeometry {
    pub tube_frames: usize,
    pub tube_size: usize,
}

impl Default for TubeGeometry {
    fn default() -> Self {
        // Desk scale; the conventional 2x16x16 remains a config choice.
        TubeGeometry { tube_frames: 2, tube_size: 8 }
    }
}

impl TubeGeometry {
    pub fn validate_for(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        if self.tube_frames == 0 || self.tube_size == 0 {
            return Err(Error::Config("tube extents must be positive".into()));
        }
        if frames % self.tube_frames != 0 {
            return Err(Error::Shape(format!(
                "clip length {frames} not divisible by tube frames {}",
                self.tube_frames
            )));
        }
        if height % self.tube_size != 0 || width % self.tube_size != 0 {
            return Err(Error::Shape(format!(
                "clip {height}x{width} not divisible by tube size {}",
                self.tube_size
            )));
        }
        Ok(())
    }

    /// Token grid dims (time, rows, cols) for a clip of the given size.
    pub fn grid(&self, frames: usize, height: usize, width: usize) -> (usize, usize, usize) {
        (frames / self.tube_frames, height / self.tube_size, width / self.tube_size)
    }

    pub fn token_count(&self, frames: usize, height: usize, width: usize) -> usize {
        let (t, y, x) = self.grid(frames, height, width);
        t * y * x
    }

    /// Flattened pixels per tube.
    pub fn tube_len(&self, channels: usize) -> usize {
        self.tube_frames * channels * self.tube_size * self.tube_size
    }
}

/// Disjoint masked/visible index sets covering all tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPartition {
    pub masked_idx: Vec<usize>,
    pub visible_idx: Vec<usize>,
    pub ratio: f64,
}

impl MaskPartition {
    /// The mask-ratio-0 partition used for dense feature extraction.
    pub fn all_visible(n_tokens: usize) -> Self {
        MaskPartition { masked_idx: Vec::new(), visible_idx: (0..n_tokens).collect(), ratio: 0.0 }
    }

    pub fn token_count(&self) -> usize {
        self.masked_idx.len() + self.visible_idx.len()
    }
}

/// Uniform random subset of `round(ratio * n_tokens)` masked indices,
/// without replacement, deterministic given the generator state. Both index
/// lists come back sorted ascending.
pub fn sample_mask(n_tokens: usize, ratio: f64, rng: &mut impl Rng) -> Result<MaskPartition> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("mask ratio must lie in (0, 1), got {ratio}")));
    }
    let n_masked = (ratio * n_tokens as f64).round() as usize;
    if n_masked == 0 || n_masked == n_tokens {
        return Err(Error::DegenerateMask(format!(
            "ratio {ratio} over {n_tokens} tokens masks {n_masked} of them; both sides must be non-empty"
        )));
    }
    // Partial Fisher-Yates: the first n_masked slots are a uniform subset.
    let mut indices: Vec<usize> = (0..n_tokens).collect();
    for i in 0..n_masked {
        let j = rng.gen_range(i..n_tokens);
        indices.swap(i, j);
    }
    let mut masked_idx: Vec<usize> = indices[..n_masked].to_vec();
    let mut visible_idx: Vec<usize> = indices[n_masked..].to_vec();
    masked_idx.sort_unstable();
    visible_idx.sort_unstable();
    Ok(MaskPartition { masked_idx, visible_idx, ratio })
}

/// Linear tube embedding: `[tube_len, d_model]` weight plus bias.
#[derive(Clone, Debug)]
pub struct EmbedParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl EmbedParams {
    pub fn identity(tube_len: usize) -> Self {
        EmbedParams {
            weight: Tensor::from_fn(tube_len, tube_len, |i, j| if i == j { 1.0 } else { 0.0 }),
            bias: Tensor::zeros(1, tube_len),
        }
    }
}

/// A clip as token rows: embeddings, grid positions, raw tube pixels, and
/// the current mask partition.
#[derive(Clone, Debug)]
pub struct TokenizedClip {
    /// `[N_T, d_model]`, rows ordered row-major over (t, y, x).
    pub tokens: Tensor,
    /// Grid coordinate triple per token.
    pub positions: Vec<[usize; 3]>,
    /// `[N_T, tube_len]` exact pixel content of each tube, flattened in
    /// (frame, channel, row, col) order.
    pub raw_tubes: Tensor,
    pub mask: MaskPartition,
}

impl TokenizedClip {
    pub fn token_count(&self) -> usize {
        self.raw_tubes.rows()
    }

    /// Replace the mask; the partition must cover exactly this clip's tokens.
    pub fn set_mask(&mut self, mask: MaskPartition) -> Result<()> {
        if mask.token_count() != self.token_count() {
            return Err(Error::Shape(format!(
                "mask covers {} tokens, clip has {}",
                mask.token_count(),
                self.token_count()
            )));
        }
        self.mask = mask;
        Ok(())
    }

    pub fn positions_of(&self, indices: &[usize]) -> Vec<[usize; 3]> {
        indices.iter().map(|&i| self.positions[i]).collect()
    }
}

/// Extract raw tubes and their grid positions without embedding.
pub fn extract_tubes(clip: &VideoClip, geom: &TubeGeometry) -> Result<(Tensor, Vec<[usize; 3]>)> {
    let [t_len, c_len, h, w] = clip.frames_shape;
    geom.validate_for(t_len, h, w)?;
    let (gt, gy, gx) = geom.grid(t_len, h, w);
    let tube_len = geom.tube_len(c_len);
    let n_tokens = gt * gy * gx;

    let mut raw = Tensor::zeros(n_tokens, tube_len);
    let mut positions = Vec::with_capacity(n_tokens);
    let mut row = 0;
    for t_g in 0..gt {
        for y_g in 0..gy {
            for x_g in 0..gx {
                let dst = raw.row_mut(row);
                let mut k = 0;
                for dt in 0..geom.tube_frames {
                    let t = t_g * geom.tube_frames + dt;
                    for c in 0..c_len {
                        for dy in 0..geom.tube_size {
                            let y = y_g * geom.tube_size + dy;
                            for dx in 0..geom.tube_size {
                                let x = x_g * geom.tube_size + dx;
                                dst[k] = clip.frame_pixel(t, c, y, x) as f64;
                                k += 1;
                            }
                        }
                    }
                }
                positions.push([t_g, y_g, x_g]);
                row += 1;
            }
        }
    }
    Ok((raw, positions))
}

/// Tokenize a clip: raw tubes, their positions, and the linear embedding
/// `tokens[i] = raw_tubes[i] . W + b`. The mask starts all-visible.
pub fn tubify(clip: &VideoClip, geom: &TubeGeometry, embed: &EmbedParams) -> Result<TokenizedClip> {
    let (raw_tubes, positions) = extract_tubes(clip, geom)?;
    if embed.weight.rows() != raw_tubes.cols() {
        return Err(Error::Shape(format!(
            "embedding expects {} inputs, tubes have {}",
            embed.weight.rows(),
            raw_tubes.cols()
        )));
    }
    let mut tokens = raw_tubes.matmul(&embed.weight);
    for i in 0..tokens.rows() {
        for (t, b) in tokens.row_mut(i).iter_mut().zip(embed.bias.row(0)) {
            *t += b;
        }
    }
    let n = raw_tubes.rows();
    Ok(TokenizedClip { tokens, positions, raw_tubes, mask: MaskPartition::all_visible(n) })
}

/// Rows of `features` at the masked indices, preserving their order
/// ("inverse masking": select exactly the tubes the model must predict).
pub fn inverse_mask_select(features: &Tensor, mask: &MaskPartition) -> Result<Tensor> {
    if mask.token_count() != features.rows() {
        return Err(Error::Shape(format!(
            "mask covers {} tokens but features have {} rows",
            mask.token_count(),
            features.rows()
        )));
    }
    let mut out = Tensor::zeros(mask.masked_idx.len(), features.cols());
    for (r, &idx) in mask.masked_idx.iter().enumerate() {
        if idx >= features.rows() {
            return Err(Error::Shape(format!("masked index {idx} out of range")));
        }
        out.row_mut(r).copy_from_slice(features.row(idx));
    }
    Ok(out)
}

/// Re-place raw tubes at their grid positions, undoing `extract_tubes`.
pub fn reassemble_clip(
    raw_tubes: &Tensor,
    positions: &[[usize; 3]],
    geom: &TubeGeometry,
    frames_shape: [usize; 4],
) -> Vec<f32> {
    let [t_len, c_len, h, w] = frames_shape;
    let mut frames = vec![0f32; t_len * c_len * h * w];
    for (row, pos) in positions.iter().enumerate() {
        let [t_g, y_g, x_g] = *pos;
        let src = raw_tubes.row(row);
        let mut k = 0;
        for dt in 0..geom.tube_frames {
            let t = t_g * geom.tube_frames + dt;
            for c in 0..c_len {
                for dy in 0..geom.tube_size {
                    let y = y_g * geom.tube_size + dy;
                    for dx in 0..geom.tube_size {
                        let x = x_g * geom.tube_size + dx;
                        frames[((t * c_len + c) * h + y) * w + x] = src[k] as f32;
                        k += 1;
                    }
                }
            }
        }
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::synthetic::{generate_clip, GeneratorConfig};

    fn default_clip() -> VideoClip {
        generate_clip(&GeneratorConfig::default(), 0).unwrap()
    }

    #[test]
    fn default_geometry_yields_128_tokens() {
        let geom = TubeGeometry::default();
        assert_eq!(geom.token_count(16, 32, 32), 8 * 4 * 4);
    }

    #[test]
    fn identity_embedding_returns_raw_tubes() {
        let clip = default_clip();
        let geom = TubeGeometry::default();
        let embed = EmbedParams::identity(geom.tube_len(3));
        let tokenized = tubify(&clip, &geom, &embed).unwrap();
        assert_eq!(tokenized.tokens, tokenized.raw_tubes);
    }

    #[test]
    fn positions_are_a_row_major_bijection() {
        let clip = default_clip();
        let geom = TubeGeometry::default();
        let (_, positions) = extract_tubes(&clip, &geom).unwrap();
        let (gt, gy, gx) = geom.grid(16, 32, 32);
        let mut expected = Vec::new();
        for t in 0..gt {
            for y in 0..gy {
                for x in 0..gx {
                    expected.push([t, y, x]);
                }
            }
        }
        assert_eq!(positions, expected);
    }

    #[test]
    fn inverse_tiling_reproduces_the_clip_exactly() {
        let clip = default_clip();
        let geom = TubeGeometry::default();
        let (raw, positions) = extract_tubes(&clip, &geom).unwrap();
        let rebuilt = reassemble_clip(&raw, &positions, &geom, clip.frames_shape);
        assert_eq!(rebuilt, clip.frames);
    }

    #[test]
    fn indivisible_geometry_is_a_shape_error() {
        let clip = default_clip();
        let geom = TubeGeometry { tube_frames: 3, tube_size: 8 };
        assert!(matches!(extract_tubes(&clip, &geom), Err(Error::Shape(_))));
        let geom = TubeGeometry { tube_frames: 2, tube_size: 5 };
        assert!(matches!(extract_tubes(&clip, &geom), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_counts_match_rounding() {
        let mut rng = stream(0, "test-mask", 0, 0);
        let mask = sample_mask(128, 0.9, &mut rng).unwrap();
        assert_eq!(mask.masked_idx.len(), 115);
        assert_eq!(mask.visible_idx.len(), 13);

        let mask = sample_mask(2, 0.5, &mut rng).unwrap();
        assert_eq!(mask.masked_idx.len(), 1);
        assert_eq!(mask.visible_idx.len(), 1);
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let mut rng = stream(0, "test-mask", 1, 0);
        assert!(matches!(sample_mask(10, 0.01, &mut rng), Err(Error::DegenerateMask(_))));
        assert!(matches!(sample_mask(10, 0.99, &mut rng), Err(Error::DegenerateMask(_))));
        assert!(sample_mask(10, 1.2, &mut rng).is_err());
    }

    #[test]
    fn partition_property_holds_for_many_draws() {
        let mut rng = stream(1, "test-mask", 2, 0);
        for n in [2usize, 7, 64, 128] {
            for _ in 0..50 {
                let mask = sample_mask(n, 0.5, &mut rng).unwrap();
                let mut all: Vec<usize> =
                    mask.masked_idx.iter().chain(&mask.visible_idx).copied().collect();
                all.sort_unstable();
                let expected: Vec<usize> = (0..n).collect();
                assert_eq!(all, expected, "not a partition for n={n}");
            }
        }
    }

    #[test]
    fn per_index_mask_frequency_approaches_the_ratio() {
        let n = 128;
        let draws = 10_000;
        let mut rng = stream(2, "test-mask", 3, 0);
        let mut hits = vec![0usize; n];
        for _ in 0..draws {
            let mask = sample_mask(n, 0.9, &mut rng).unwrap();
            for &i in &mask.masked_idx {
                hits[i] += 1;
            }
        }
        for (i, &h) in hits.iter().enumerate() {
            let freq = h as f64 / draws as f64;
            assert!((freq - 0.9).abs() <= 0.01, "index {i} masked at frequency {freq}");
        }
    }

    #[test]
    fn inverse_mask_select_preserves_order() {
        let features = Tensor::from_fn(4, 2, |i, j| (10 * i + j) as f64);
        let mask = MaskPartition { masked_idx: vec![3, 1], visible_idx: vec![0, 2], ratio: 0.5 };
        let picked = inverse_mask_select(&features, &mask).unwrap();
        assert_eq!(picked.row(0), &[30.0, 31.0]);
        assert_eq!(picked.row(1), &[10.0, 11.0]);
    }

    #[test]
    fn masked_and_visible_selections_reassemble_the_matrix() {
        let features = Tensor::from_fn(8, 3, |i, j| (i * 3 + j) as f64 * 0.5);
        let mut rng = stream(3, "test-mask", 4, 0);
        let mask = sample_mask(8, 0.6, &mut rng).unwrap();
        let masked = inverse_mask_select(&features, &mask).unwrap();
        let complement = MaskPartition {
            masked_idx: mask.visible_idx.clone(),
            visible_idx: mask.masked_idx.clone(),
            ratio: 1.0 - mask.ratio,
        };
        let visible = inverse_mask_select(&features, &complement).unwrap();

        let mut rebuilt = Tensor::zeros(8, 3);
        for (r, &i) in mask.masked_idx.iter().enumerate() {
            rebuilt.row_mut(i).copy_from_slice(masked.row(r));
        }
        for (r, &i) in mask.visible_idx.iter().enumerate() {
            rebuilt.row_mut(i).copy_from_slice(visible.row(r));
        }
        assert_eq!(rebuilt, features);
    }

    #[test]
    fn selecting_all_rows_is_the_identity_permutation() {
        let features = Tensor::from_fn(5, 2, |i, j| (i + j) as f64);
        let mask = MaskPartition {
            masked_idx: (0..5).collect(),
            visible_idx: vec![],
            ratio: 1.0,
        };
        let picked = inverse_mask_select(&features, &mask).unwrap();
        assert_eq!(picked, features);
    }
}
