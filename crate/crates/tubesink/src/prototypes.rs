//! Learnable prototypes: the shared clustering space both networks project
//! onto. Scores are (by default cosine) similarities between feature rows
//! and prototype rows; the temperature softmax over scores is the model's
//! predicted assignment distribution.

use crate::error::{Error, Result};
use crate::nets::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Handle to the `[K, d_feat]` prototype matrix inside a parameter store.
pub struct PrototypeBank {
    pub param: ParamId,
    pub count: usize,
    pub dim: usize,
    /// When set, prototype rows are re-normalized to unit length after
    /// every optimizer step and scores are cosine similarities.
    pub normalize: bool,
}

impl PrototypeBank {
    /// Rows start uniformly distributed on the unit sphere.
    pub fn build(
        store: &mut ParamStore,
        count: usize,
        dim: usize,
        normalize: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if count < 2 {
            return Err(Error::Config(format!("need at least 2 prototypes, got {count}")));
        }
        if dim == 0 {
            return Err(Error::Config("prototype dimension must be positive".into()));
        }
        let mut matrix = Tensor::from_fn(count, dim, |_, _| StandardNormal.sample(rng));
        normalize_rows_in_place(&mut matrix);
        let param = store.add("prototypes", matrix);
        Ok(PrototypeBank { param, count, dim, normalize })
    }

    pub fn matrix<'a>(&self, store: &'a ParamStore) -> &'a Tensor {
        store.get(self.param)
    }

    /// Restore unit row norms (call after each optimizer step).
    pub fn renormalize(&self, store: &mut ParamStore) {
        if self.normalize {
            normalize_rows_in_place(store.get_mut(self.param));
        }
    }
}

fn normalize_rows_in_place(matrix: &mut Tensor) {
    for i in 0..matrix.rows() {
        let norm = matrix.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in matrix.row_mut(i).iter_mut() {
                *v /= norm;
            }
        }
    }
}

fn check_rows_nonzero(matrix: &Tensor, what: &str) -> Result<()> {
    for i in 0..matrix.rows() {
        let norm: f64 = matrix.row(i).iter().map(|v| v * v).sum();
        if norm == 0.0 {
            return Err(Error::Numeric(format!("{what} row {i} has zero norm")));
        }
    }
    Ok(())
}

/// Score matrix `x_tilde[b, k]`: cosine similarity when `normalize` is set,
/// otherwise the raw dot product.
pub fn scores(features: &Tensor, bank: &Tensor, normalize: bool) -> Result<Tensor> {
    if features.cols() != bank.cols() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match prototype dim {}",
            features.cols(),
            bank.cols()
        )));
    }
    if normalize {
        check_rows_nonzero(features, "feature")?;
        check_rows_nonzero(bank, "prototype")?;
        let mut f = features.clone();
        let mut c = bank.clone();
        normalize_rows_in_place(&mut f);
        normalize_rows_in_place(&mut c);
        Ok(f.matmul_a_bt(&c))
    } else {
        Ok(features.matmul_a_bt(bank))
    }
}

/// Differentiable version of [`scores`] for the loss path.
pub fn scores_var(tape: &mut Tape, features: Var, bank: Var, normalize: bool) -> Result<Var> {
    if tape.value(features).cols() != tape.value(bank).cols() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match prototype dim {}",
            tape.value(features).cols(),
            tape.value(bank).cols()
        )));
    }
    if normalize {
        check_rows_nonzero(tape.value(features), "feature")?;
        check_rows_nonzero(tape.value(bank), "prototype")?;
        let f = tape.normalize_rows(features);
        let c = tape.normalize_rows(bank);
        let ct = tape.transpose(c);
        Ok(tape.matmul(f, ct))
    } else {
        let ct = tape.transpose(bank);
        Ok(tape.matmul(features, ct))
    }
}

/// Row-wise temperature softmax of the scores (max-subtraction stabilized).
pub fn softmax_probs(x_tilde: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let mut out = Tensor::zeros(x_tilde.rows(), x_tilde.cols());
    for i in 0..x_tilde.rows() {
        let row = x_tilde.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out.row_mut(i).iter_mut().zip(row) {
            *o = ((v - max) / tau).exp();
            sum += *o;
        }
        for o in out.row_mut(i).iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}
