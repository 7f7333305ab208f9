//! The two jointly trained networks: the encoder-decoder video model (tube
//! embeddings in, per-masked-tube feature vectors out) and the projection
//! network that produces its reconstruction targets.

pub mod params;
pub mod posenc;
pub mod transformer;

use crate::data_io::FeatureStore;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenize::MaskPartition;
use params::{BoundParams, ParamId, ParamStore};
use posenc::posenc_3d;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use transformer::{init_matrix, BlockParams, Dropout, NormParams};

/// Video model architecture. Defaults are desk scale; the conventional
/// larger sizes are plain config choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    /// Encoder blocks.
    pub depth: usize,
    /// Decoder blocks (runs at half the encoder width).
    pub decoder_depth: usize,
    pub heads: usize,
    pub decoder_heads: usize,
    pub mlp_ratio: usize,
    /// Output feature dimension of the predictive task.
    pub d_feat: usize,
    pub dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 64,
            depth: 2,
            decoder_depth: 1,
            heads: 4,
            decoder_heads: 2,
            mlp_ratio: 4,
            d_feat: 64,
            dropout: 0.0,
        }
    }
}

impl TransformerConfig {
    pub fn decoder_dim(&self) -> usize {
        self.d_model / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % 4 != 0 {
            return Err(Error::Config(format!(
                "d_model must be a positive multiple of 4, got {}",
                self.d_model
            )));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads {} must divide d_model {}",
                self.heads, self.d_model
            )));
        }
        if self.decoder_heads == 0 || self.decoder_dim() % self.decoder_heads != 0 {
            return Err(Error::Config(format!(
                "decoder heads {} must divide decoder width {}",
                self.decoder_heads,
                self.decoder_dim()
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        if self.d_feat == 0 {
            return Err(Error::Config("d_feat must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} out of [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-masked-tube predictions of the video model.
pub struct VideoModelOutput {
    /// `[n_masked, d_feat]` features for the predictive task.
    pub features: Var,
    /// `[n_masked, tube_len]` pixel reconstruction, when the head exists.
    pub pixel_pred: Option<Var>,
}

/// The video model: tube embedding, encoder over visible tokens, a narrow
/// decoder over encoder outputs plus mask tokens, and output heads.
pub struct PsiModel {
    pub config: TransformerConfig,
    pub tube_len: usize,
    embed_w: ParamId,
    embed_b: ParamId,
    encoder: Vec<BlockParams>,
    encoder_norm: Option<NormParams>,
    decoder_proj_w: ParamId,
    decoder_proj_b: ParamId,
    mask_token: ParamId,
    decoder: Vec<BlockParams>,
    decoder_norm: Option<NormParams>,
    feature_w: ParamId,
    feature_b: ParamId,
    pixel_head: Option<(ParamId, ParamId)>,
}

impl PsiModel {
    /// Register all parameters in `store` under the `psi.` prefix.
    /// `with_pixel_head` adds the reconstruction head used by the pixel
    /// objective; without it every parameter sits on the feature path.
    pub fn build(
        store: &mut ParamStore,
        config: &TransformerConfig,
        tube_len: usize,
        with_pixel_head: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if tube_len == 0 {
            return Err(Error::Config("tube length must be positive".into()));
        }
        let d = config.d_model;
        let dd = config.decoder_dim();

        let embed_w = store.add("psi.embed.w", init_matrix(rng, tube_len, d));
        let embed_b = store.add("psi.embed.b", Tensor::zeros(1, d));
        let encoder = (0..config.depth)
            .map(|i| BlockParams::build(store, &format!("psi.enc{i}"), d, config.heads, config.mlp_ratio, rng))
            .collect::<Vec<_>>();
        // The final norms belong to the block stacks: a depth-0 stack is the
        // identity, which keeps the no-block model affine end to end.
        let encoder_norm =
            (config.depth > 0).then(|| NormParams::build(store, "psi.enc_norm", d));
        let decoder_proj_w = store.add("psi.dec_proj.w", init_matrix(rng, d, dd));
        let decoder_proj_b = store.add("psi.dec_proj.b", Tensor::zeros(1, dd));
        let mask_token = store.add("psi.mask_token", init_matrix(rng, 1, dd));
        let decoder = (0..config.decoder_depth)
            .map(|i| {
                BlockParams::build(store, &format!("psi.dec{i}"), dd, config.decoder_heads, config.mlp_ratio, rng)
            })
            .collect::<Vec<_>>();
        let decoder_norm =
            (config.decoder_depth > 0).then(|| NormParams::build(store, "psi.dec_norm", dd));
        let feature_w = store.add("psi.feature.w", init_matrix(rng, dd, config.d_feat));
        let feature_b = store.add("psi.feature.b", Tensor::zeros(1, config.d_feat));
        let pixel_head = with_pixel_head.then(|| {
            (
                store.add("psi.pixel.w", init_matrix(rng, dd, tube_len)),
                store.add("psi.pixel.b", Tensor::zeros(1, tube_len)),
            )
        });

        Ok(PsiModel {
            config: config.clone(),
            tube_len,
            embed_w,
            embed_b,
            encoder,
            encoder_norm,
            decoder_proj_w,
            decoder_proj_b,
            mask_token,
            decoder,
            decoder_norm,
            feature_w,
            feature_b,
            pixel_head,
        })
    }

    /// Linear tube embedding: `raw [n, tube_len] -> tokens [n, d_model]`.
    pub fn embed(&self, tape: &mut Tape, bound: &BoundParams, raw_tubes: &Tensor) -> Result<Var> {
        if raw_tubes.cols() != self.tube_len {
            return Err(Error::Shape(format!(
                "tubes have {} pixels, embedding expects {}",
                raw_tubes.cols(),
                self.tube_len
            )));
        }
        let raw = tape.constant(raw_tubes.clone());
        Ok(tape.linear(raw, bound.var(self.embed_w), bound.var(self.embed_b)))
    }

    /// Encoder stack over a token set with positional information.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: Var,
        positions: &[[usize; 3]],
        drop: &mut Option<Dropout>,
    ) -> Var {
        let pe = tape.constant(posenc_3d(positions, self.config.d_model));
        let mut x = tape.add(tokens, pe);
        for block in &self.encoder {
            x = block.forward(tape, bound, x, drop);
        }
        if let Some(norm) = &self.encoder_norm {
            x = norm.forward(tape, bound, x);
        }
        x
    }

    /// Full masked-prediction forward pass. The encoder sees only visible
    /// tokens; the decoder sees their projections plus one learnable mask
    /// token per masked position. Output row `i` corresponds to
    /// `masked_positions[i]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        visible_tokens: Var,
        visible_positions: &[[usize; 3]],
        masked_positions: &[[usize; 3]],
        mut drop: Option<Dropout>,
    ) -> Result<VideoModelOutput> {
        let n_visible = tape.value(visible_tokens).rows();
        if n_visible == 0 {
            return Err(Error::DegenerateMask("encoder needs at least one visible token".into()));
        }
        if n_visible != visible_positions.len() {
            return Err(Error::Shape(format!(
                "{n_visible} visible tokens but {} positions",
                visible_positions.len()
            )));
        }
        if masked_positions.is_empty() {
            return Err(Error::DegenerateMask("prediction needs at least one masked token".into()));
        }

        let encoded = self.encode(tape, bound, visible_tokens, visible_positions, &mut drop);

        let dd = self.config.decoder_dim();
        let projected =
            tape.linear(encoded, bound.var(self.decoder_proj_w), bound.var(self.decoder_proj_b));
        let vis_pe = tape.constant(posenc_3d(visible_positions, dd));
        let visible_in = tape.add(projected, vis_pe);

        let mask_tokens = tape.repeat_row(bound.var(self.mask_token), masked_positions.len());
        let mask_pe = tape.constant(posenc_3d(masked_positions, dd));
        let masked_in = tape.add(mask_tokens, mask_pe);

        let mut x = tape.concat_rows(&[visible_in, masked_in]);
        for block in &self.decoder {
            x = block.forward(tape, bound, x, &mut drop);
        }
        if let Some(norm) = &self.decoder_norm {
            x = norm.forward(tape, bound, x);
        }

        let masked_rows: Vec<usize> =
            (n_visible..n_visible + masked_positions.len()).collect();
        let masked_out = tape.gather_rows(x, &masked_rows);

        let features = tape.linear(masked_out, bound.var(self.feature_w), bound.var(self.feature_b));
        tape.value(features).ensure_finite("video model features")?;
        let pixel_pred = match self.pixel_head {
            Some((w, b)) => {
                let p = tape.linear(masked_out, bound.var(w), bound.var(b));
                tape.value(p).ensure_finite("pixel reconstruction")?;
                Some(p)
            }
            None => None,
        };
        Ok(VideoModelOutput { features, pixel_pred })
    }
}

/// Projection network architecture variants (hidden width `h`):
/// `Base` is in -> h -> h -> out, `Shallower` drops one hidden layer,
/// `Deeper` adds one, `Wider` doubles the hidden width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiArch {
    Base,
    Shallower,
    Deeper,
    Wider,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiConfig {
    pub arch: PhiArch,
    /// Hidden width at desk scale; the conventional choice is 1024.
    pub hidden: usize,
    /// Standardize each tube row (zero mean, unit variance) before the MLP.
    pub standardize_input: bool,
}

impl Default for PhiConfig {
    fn default() -> Self {
        PhiConfig { arch: PhiArch::Base, hidden: 128, standardize_input: true }
    }
}

impl PhiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("projection hidden width must be positive".into()));
        }
        Ok(())
    }

    fn layer_dims(&self, input: usize, d_feat: usize) -> Vec<(usize, usize)> {
        let h = self.hidden;
        match self.arch {
            PhiArch::Shallower => vec![(input, h), (h, d_feat)],
            PhiArch::Base => vec![(input, h), (h, h), (h, d_feat)],
            PhiArch::Deeper => vec![(input, h), (h, h), (h, h), (h, d_feat)],
            PhiArch::Wider => vec![(input, 2 * h), (2 * h, 2 * h), (2 * h, d_feat)],
        }
    }
}

/// The learned projection network: a per-tube MLP with GELU between linear
/// layers. No information crosses rows.
pub struct PhiMlp {
    pub config: PhiConfig,
    pub input_len: usize,
    pub d_feat: usize,
    layers: Vec<(ParamId, ParamId)>,
}

impl PhiMlp {
    pub fn build(
        store: &mut ParamStore,
        config: &PhiConfig,
        input_len: usize,
        d_feat: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims(input_len, d_feat)
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                (
                    store.add(format!("phi.l{i}.w"), init_matrix(rng, fan_in, fan_out)),
                    store.add(format!("phi.l{i}.b"), Tensor::zeros(1, fan_out)),
                )
            })
            .collect();
        Ok(PhiMlp { config: config.clone(), input_len, d_feat, layers })
    }

    /// Map raw masked tubes `[n, tube_len]` to target features `[n, d_feat]`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, raw_tubes: &Tensor) -> Result<Var> {
        if raw_tubes.cols() != self.input_len {
            return Err(Error::Shape(format!(
                "projection input has {} columns, expected {}",
                raw_tubes.cols(),
                self.input_len
            )));
        }
        let input = if self.config.standardize_input {
            standardize_rows(raw_tubes)
        } else {
            raw_tubes.clone()
        };
        let mut x = tape.constant(input);
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            x = tape.linear(x, bound.var(*w), bound.var(*b));
            if i != last {
                x = tape.gelu(x);
            }
        }
        tape.value(x).ensure_finite("projection features")?;
        Ok(x)
    }
}

/// Per-row standardization to zero mean and unit variance.
pub fn standardize_rows(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-6).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Frozen file-backed projection targets: rows of the stored `[N_T, d_feat]`
/// matrix at the masked indices. Nothing flows back into the store.
pub fn phi_forward_external(
    store: &FeatureStore,
    clip_id: u64,
    mask: &MaskPartition,
    d_feat: usize,
) -> Result<Tensor> {
    if store.dim != d_feat {
        return Err(Error::Shape(format!(
            "feature store dimension {} does not match d_feat {d_feat}",
            store.dim
        )));
    }
    let all = store.features_for(clip_id)?;
    crate::tokenize::inverse_mask_select(all, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tape::Tape;

    fn tiny_config(d_model: usize, depth: usize) -> TransformerConfig {
        TransformerConfig {
            d_model,
            depth,
            decoder_depth: 1,
            heads: 2,
            decoder_heads: 2,
            mlp_ratio: 2,
            d_feat: 8,
            dropout: 0.0,
        }
    }

    fn grid_positions(n: usize) -> Vec<[usize; 3]> {
        (0..n).map(|i| [i / 4, (i / 2) % 2, i % 2]).collect()
    }

    fn run_forward(
        config: &TransformerConfig,
        tube_len: usize,
        raw_visible: &Tensor,
        visible_pos: &[[usize; 3]],
        masked_pos: &[[usize; 3]],
    ) -> (Tensor, Option<Tensor>) {
        let mut store = ParamStore::new();
        let mut rng = stream(9, "init", 0, 0);
        let model = PsiModel::build(&mut store, config, tube_len, true, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&store, &mut tape);
        let tokens = model.embed(&mut tape, &bound, raw_visible).unwrap();
        let out = model
            .forward(&mut tape, &bound, tokens, visible_pos, masked_pos, None)
            .unwrap();
        let features = tape.value(out.features).clone();
        let pixels = out.pixel_pred.map(|p| tape.value(p).clone());
        (features, pixels)
    }

    #[test]
    fn output_shapes_hold_across_the_config_grid() {
        let tube_len = 12;
        for &d_model in &[32usize, 64] {
            for &depth in &[1usize, 2] {
                let config = TransformerConfig {
                    d_feat: 16,
                    ..tiny_config(d_model, depth)
                };
                let raw = Tensor::from_fn(5, tube_len, |i, j| ((i * 13 + j) % 7) as f64 * 0.1);
                let (features, pixels) =
                    run_forward(&config, tube_len, &raw, &grid_positions(5), &grid_positions(3));
                assert_eq!(features.shape(), (3, 16));
                assert_eq!(pixels.unwrap().shape(), (3, tube_len));
            }
        }
    }

    #[test]
    fn permuting_visible_tokens_leaves_output_unchanged() {
        let tube_len = 12;
        let config = tiny_config(32, 2);
        let raw = Tensor::from_fn(6, tube_len, |i, j| ((i * 31 + j * 7) % 11) as f64 * 0.09 - 0.3);
        let positions = grid_positions(6);
        let masked = vec![[7usize, 1, 1], [6, 0, 1]];
        let (base, _) = run_forward(&config, tube_len, &raw, &positions, &masked);

        let perm = [4usize, 2, 0, 5, 1, 3];
        let raw_perm = Tensor::from_fn(6, tube_len, |i, j| raw.get(perm[i], j));
        let pos_perm: Vec<[usize; 3]> = perm.iter().map(|&i| positions[i]).collect();
        let (permuted, _) = run_forward(&config, tube_len, &raw_perm, &pos_perm, &masked);
        assert!(base.max_abs_diff(&permuted) < 1e-5);
    }

    #[test]
    fn no_block_model_is_affine_in_its_inputs() {
        // With zero encoder and decoder blocks only linear maps remain, so
        // the superposition residual f(a+b) - f(a) - f(b) + f(0) vanishes.
        let tube_len = 8;
        let config = TransformerConfig {
            depth: 0,
            decoder_depth: 0,
            ..tiny_config(32, 0)
        };
        let positions = grid_positions(4);
        let masked = vec![[5usize, 1, 0]];
        let a = Tensor::from_fn(4, tube_len, |i, j| (i + j) as f64 * 0.05);
        let b = Tensor::from_fn(4, tube_len, |i, j| ((i * j) % 3) as f64 * 0.11 - 0.1);
        let ab = a.zip_map(&b, |x, y| x + y);
        let zero = Tensor::zeros(4, tube_len);

        let f = |input: &Tensor| run_forward(&config, tube_len, input, &positions, &masked).0;
        let residual = f(&ab)
            .zip_map(&f(&a), |x, y| x - y)
            .zip_map(&f(&b), |x, y| x - y)
            .zip_map(&f(&zero), |x, y| x + y);
        assert!(residual.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn empty_visible_or_masked_sets_are_degenerate() {
        let mut store = ParamStore::new();
        let mut rng = stream(9, "init", 1, 0);
        let config = tiny_config(32, 1);
        let model = PsiModel::build(&mut store, &config, 8, false, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&store, &mut tape);
        let no_tokens = tape.constant(Tensor::zeros(0, 32));
        let err = model.forward(&mut tape, &bound, no_tokens, &[], &[[0, 0, 0]], None);
        assert!(matches!(err, Err(Error::DegenerateMask(_))));

        let tokens = model.embed(&mut tape, &bound, &Tensor::zeros(2, 8)).unwrap();
        let err = model.forward(&mut tape, &bound, tokens, &grid_positions(2), &[], None);
        assert!(matches!(err, Err(Error::DegenerateMask(_))));
    }

    fn build_phi(config: &PhiConfig, input_len: usize, d_feat: usize) -> (ParamStore, PhiMlp) {
        let mut store = ParamStore::new();
        let mut rng = stream(10, "init", 0, 0);
        let phi = PhiMlp::build(&mut store, config, input_len, d_feat, &mut rng).unwrap();
        (store, phi)
    }

    fn phi_eval(store: &ParamStore, phi: &PhiMlp, input: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(store, &mut tape);
        let out = phi.forward(&mut tape, &bound, input).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn identical_rows_map_to_identical_outputs() {
        let config = PhiConfig { hidden: 16, ..Default::default() };
        let (store, phi) = build_phi(&config, 10, 6);
        let mut input = Tensor::from_fn(3, 10, |_, j| (j as f64) * 0.2 - 1.0);
        input.row_mut(2).copy_from_slice(&Tensor::from_fn(1, 10, |_, j| j as f64 * 0.2 - 1.0).as_slice().to_vec());
        let out = phi_eval(&store, &phi, &input);
        assert_eq!(out.row(0).to_vec(), out.row(2).to_vec());
    }

    #[test]
    fn zero_weights_make_every_row_the_final_bias() {
        let config = PhiConfig { hidden: 8, standardize_input: false, ..Default::default() };
        let (mut store, phi) = build_phi(&config, 5, 4);
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        let bias = Tensor::from_vec(1, 4, vec![0.5, -1.0, 2.0, 0.25]);
        let last_bias = store.id_of("phi.l2.b").unwrap();
        *store.get_mut(last_bias) = bias.clone();
        let out = phi_eval(&store, &phi, &Tensor::from_fn(3, 5, |i, j| (i * j) as f64));
        for i in 0..3 {
            assert_eq!(out.row(i), bias.row(0));
        }
    }

    #[test]
    fn cross_row_jacobian_is_zero() {
        // Finite differences on the input: perturbing row 1 must not move
        // row 0 or row 2 of the output.
        let config = PhiConfig { hidden: 12, ..Default::default() };
        let (store, phi) = build_phi(&config, 7, 5);
        let input = Tensor::from_fn(3, 7, |i, j| ((i * 5 + j) % 4) as f64 * 0.3 - 0.4);
        let base = phi_eval(&store, &phi, &input);
        for j in 0..7 {
            let mut bumped = input.clone();
            bumped.set(1, j, bumped.get(1, j) + 1e-3);
            let out = phi_eval(&store, &phi, &bumped);
            for row in [0usize, 2] {
                let delta: f64 = out
                    .row(row)
                    .iter()
                    .zip(base.row(row))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                assert_eq!(delta, 0.0, "row {row} moved when row 1 was perturbed");
            }
        }
    }

    #[test]
    fn arch_variants_have_expected_layer_counts() {
        let dims = |arch: PhiArch| {
            PhiConfig { arch, hidden: 8, ..Default::default() }.layer_dims(10, 4)
        };
        assert_eq!(dims(PhiArch::Shallower).len(), 2);
        assert_eq!(dims(PhiArch::Base).len(), 3);
        assert_eq!(dims(PhiArch::Deeper).len(), 4);
        let wider = dims(PhiArch::Wider);
        assert_eq!(wider.len(), 3);
        assert_eq!(wider[0].1, 16);
    }

    #[test]
    fn external_features_match_store_rows() {
        use crate::data_io::write_feature_store;
        let dir = tempfile::tempdir().unwrap();
        let matrix = Tensor::from_fn(6, 4, |i, j| (i * 4 + j) as f64 * 0.5);
        write_feature_store(dir.path(), &[(3, matrix.clone())]).unwrap();
        let store = FeatureStore::open(dir.path()).unwrap();

        let mask = MaskPartition { masked_idx: vec![5, 0, 2], visible_idx: vec![1, 3, 4], ratio: 0.5 };
        let picked = phi_forward_external(&store, 3, &mask, 4).unwrap();
        assert_eq!(picked.row(0), matrix.row(5));
        assert_eq!(picked.row(1), matrix.row(0));
        assert_eq!(picked.row(2), matrix.row(2));

        assert!(matches!(phi_forward_external(&store, 9, &mask, 4), Err(Error::Lookup(_))));
        assert!(matches!(phi_forward_external(&store, 3, &mask, 8), Err(Error::Shape(_))));
    }

    #[test]
    fn single_masked_index_selects_one_row() {
        use crate::data_io::write_feature_store;
        let dir = tempfile::tempdir().unwrap();
        let matrix = Tensor::from_fn(3, 2, |i, j| (10 * i + j) as f64);
        write_feature_store(dir.path(), &[(0, matrix.clone())]).unwrap();
        let store = FeatureStore::open(dir.path()).unwrap();
        let mask = MaskPartition { masked_idx: vec![0], visible_idx: vec![1, 2], ratio: 0.33 };
        let picked = phi_forward_external(&store, 0, &mask, 2).unwrap();
        assert_eq!(picked.shape(), (1, 2));
        assert_eq!(picked.row(0), matrix.row(0));
    }
}
