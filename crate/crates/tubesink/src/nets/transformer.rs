//! Pre-norm transformer blocks on the tape.

use super::params::{BoundParams, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Inverted dropout context; active only during training steps.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

pub fn apply_dropout(tape: &mut Tape, x: Var, drop: &mut Option<Dropout>) -> Var {
    match drop {
        Some(d) if d.rate > 0.0 => {
            let (rows, cols) = tape.value(x).shape();
            let keep = 1.0 - d.rate;
            let mask = Tensor::from_fn(rows, cols, |_, _| {
                if d.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            let m = tape.constant(mask);
            tape.mul(x, m)
        }
        _ => x,
    }
}

pub fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let normal = Normal::new(0.0, INIT_STD).expect("fixed stddev");
    Tensor::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// One attention + MLP block (pre-norm, GELU).
pub struct BlockParams {
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    attn_proj_w: ParamId,
    attn_proj_b: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
    mlp_fc_w: ParamId,
    mlp_fc_b: ParamId,
    mlp_proj_w: ParamId,
    mlp_proj_b: ParamId,
    dim: usize,
    heads: usize,
}

impl BlockParams {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let hidden = dim * mlp_ratio;
        BlockParams {
            ln1_gamma: store.add(format!("{prefix}.ln1.gamma"), Tensor::from_fn(1, dim, |_, _| 1.0)),
            ln1_beta: store.add(format!("{prefix}.ln1.beta"), Tensor::zeros(1, dim)),
            qkv_w: store.add(format!("{prefix}.attn.qkv.w"), init_matrix(rng, dim, 3 * dim)),
            qkv_b: store.add(format!("{prefix}.attn.qkv.b"), Tensor::zeros(1, 3 * dim)),
            attn_proj_w: store.add(format!("{prefix}.attn.proj.w"), init_matrix(rng, dim, dim)),
            attn_proj_b: store.add(format!("{prefix}.attn.proj.b"), Tensor::zeros(1, dim)),
            ln2_gamma: store.add(format!("{prefix}.ln2.gamma"), Tensor::from_fn(1, dim, |_, _| 1.0)),
            ln2_beta: store.add(format!("{prefix}.ln2.beta"), Tensor::zeros(1, dim)),
            mlp_fc_w: store.add(format!("{prefix}.mlp.fc.w"), init_matrix(rng, dim, hidden)),
            mlp_fc_b: store.add(format!("{prefix}.mlp.fc.b"), Tensor::zeros(1, hidden)),
            mlp_proj_w: store.add(format!("{prefix}.mlp.proj.w"), init_matrix(rng, hidden, dim)),
            mlp_proj_b: store.add(format!("{prefix}.mlp.proj.b"), Tensor::zeros(1, dim)),
            dim,
            heads,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        drop: &mut Option<Dropout>,
    ) -> Var {
        let normed = tape.layer_norm(x, bound.var(self.ln1_gamma), bound.var(self.ln1_beta), LN_EPS);
        let attended = self.attention(tape, bound, normed);
        let attended = apply_dropout(tape, attended, drop);
        let x = tape.add(x, attended);

        let normed = tape.layer_norm(x, bound.var(self.ln2_gamma), bound.var(self.ln2_beta), LN_EPS);
        let hidden = tape.linear(normed, bound.var(self.mlp_fc_w), bound.var(self.mlp_fc_b));
        let hidden = tape.gelu(hidden);
        let out = tape.linear(hidden, bound.var(self.mlp_proj_w), bound.var(self.mlp_proj_b));
        let out = apply_dropout(tape, out, drop);
        tape.add(x, out)
    }

    fn attention(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Var {
        let qkv = tape.linear(x, bound.var(self.qkv_w), bound.var(self.qkv_b));
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = tape.slice_cols(qkv, h * head_dim, head_dim);
            let k = tape.slice_cols(qkv, self.dim + h * head_dim, head_dim);
            let v = tape.slice_cols(qkv, 2 * self.dim + h * head_dim, head_dim);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scaled = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scaled);
            heads.push(tape.matmul(probs, v));
        }
        let merged = tape.concat_cols(&heads);
        tape.linear(merged, bound.var(self.attn_proj_w), bound.var(self.attn_proj_b))
    }
}

/// Final layer norm applied after a block stack.
pub struct NormParams {
    gamma: ParamId,
    beta: ParamId,
}

impl NormParams {
    pub fn build(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        NormParams {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::from_fn(1, dim, |_, _| 1.0)),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Var {
        tape.layer_norm(x, bound.var(self.gamma), bound.var(self.beta), LN_EPS)
    }
}
