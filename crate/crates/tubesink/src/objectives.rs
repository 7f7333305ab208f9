//! Training objectives: masked pixel regression, raw feature regression
//! (the objective that collapses), and the symmetric cluster-assignment
//! prediction loss built on Sinkhorn pseudo-labels.

use crate::error::{Error, Result};
use crate::prototypes::scores_var;
use crate::sinkhorn::{pseudo_labels, sinkhorn, OtProblem, SinkhornMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Scalar loss value plus the per-term breakdown for the symmetric loss.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub total: f64,
    /// Cross-entropy of the video model's scores against the projection
    /// network's pseudo-labels.
    pub ce_psi: Option<f64>,
    /// Cross-entropy of the projection scores against the video model's
    /// pseudo-labels.
    pub ce_phi: Option<f64>,
    pub batch_size: usize,
}

fn mean_squared_rows(tape: &mut Tape, diff: Var, rows: usize) -> Var {
    let sq = tape.mul(diff, diff);
    let sum = tape.sum_all(sq);
    tape.scale(sum, 1.0 / rows as f64)
}

/// Mean over masked tubes of the squared L2 pixel reconstruction error.
pub fn pixel_l2_loss(tape: &mut Tape, pixel_pred: Var, raw_tubes_masked: &Tensor) -> Result<(Var, LossReport)> {
    let shape = tape.value(pixel_pred).shape();
    if shape != raw_tubes_masked.shape() {
        return Err(Error::Shape(format!(
            "pixel prediction {:?} does not match targets {:?}",
            shape,
            raw_tubes_masked.shape()
        )));
    }
    if raw_tubes_masked.rows() == 0 {
        return Err(Error::Shape("pixel loss needs at least one masked tube".into()));
    }
    let target = tape.constant(raw_tubes_masked.clone());
    let diff = tape.sub(pixel_pred, target);
    let loss = mean_squared_rows(tape, diff, shape.0);
    let total = tape.value(loss).item();
    ensure_finite_loss(total)?;
    Ok((loss, LossReport { total, ce_psi: None, ce_phi: None, batch_size: shape.0 }))
}

/// Mean squared distance between the two networks' features. Both sides
/// receive gradient; nothing stops them agreeing on a constant, which is
/// exactly the collapse this loss demonstrates.
pub fn feature_l2_loss(tape: &mut Tape, x_phi: Var, x_psi: Var) -> Result<(Var, LossReport)> {
    let shape = tape.value(x_phi).shape();
    if shape != tape.value(x_psi).shape() {
        return Err(Error::Shape(format!(
            "feature shapes differ: {:?} vs {:?}",
            shape,
            tape.value(x_psi).shape()
        )));
    }
    if shape.0 == 0 {
        return Err(Error::Shape("feature loss needs at least one row".into()));
    }
    let diff = tape.sub(x_phi, x_psi);
    let loss = mean_squared_rows(tape, diff, shape.0);
    let total = tape.value(loss).item();
    ensure_finite_loss(total)?;
    Ok((loss, LossReport { total, ce_psi: None, ce_phi: None, batch_size: shape.0 }))
}

/// Mean over rows of `-sum_k q_k log softmax(x_tilde / tau)_k`. Targets are
/// validated probability rows and treated as constants.
pub fn cross_entropy_term(tape: &mut Tape, x_tilde: Var, q_targets: &Tensor, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let shape = tape.value(x_tilde).shape();
    if shape != q_targets.shape() {
        return Err(Error::Shape(format!(
            "scores {:?} do not match targets {:?}",
            shape,
            q_targets.shape()
        )));
    }
    for i in 0..q_targets.rows() {
        let row = q_targets.row(i);
        if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Target(format!("target row {i} has negative or non-finite mass")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Target(format!("target row {i} sums to {sum}, not 1")));
        }
    }
    let scaled = tape.scale(x_tilde, 1.0 / tau);
    let log_probs = tape.log_softmax_rows(scaled);
    let q = tape.constant(q_targets.clone());
    let weighted = tape.mul(log_probs, q);
    let sum = tape.sum_all(weighted);
    Ok(tape.scale(sum, -1.0 / shape.0 as f64))
}

/// Settings for the symmetric Sinkhorn-guided objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaConfig {
    /// Softmax temperature of the prediction distributions.
    pub tau: f64,
    /// Entropy-regularization strength of the transport problem.
    pub lambda: f64,
    /// Sinkhorn iterations per step (fixed count during training).
    pub sinkhorn_iterations: usize,
    /// Cosine scores (normalized features and prototypes) when set.
    pub normalize: bool,
    /// Equipartition guard: error out when prototypes outnumber batch
    /// samples by more than this factor.
    pub max_prototypes_per_sample: f64,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        SigmaConfig {
            tau: 0.1,
            lambda: 20.0,
            sinkhorn_iterations: 3,
            normalize: true,
            max_prototypes_per_sample: 16.0,
        }
    }
}

impl SigmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.sinkhorn_iterations == 0 {
            return Err(Error::Config("sinkhorn_iterations must be at least 1".into()));
        }
        if !(self.max_prototypes_per_sample >= 1.0) {
            return Err(Error::Config("max_prototypes_per_sample must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mode(&self) -> SinkhornMode {
        SinkhornMode::FixedIterations(self.sinkhorn_iterations)
    }
}

/// Symmetric loss output: the scalar plus the detached pseudo-labels, which
/// the trainer also uses for usage diagnostics.
pub struct SigmaOutput {
    pub loss: Var,
    pub report: LossReport,
    /// Pseudo-labels of the projection features (targets for the video
    /// model), one probability row per sample.
    pub q_phi: Tensor,
    /// Pseudo-labels of the video model features (targets for the
    /// projection network).
    pub q_psi: Tensor,
}

/// The symmetric cluster-prediction objective. Each side's features are
/// scored against the shared prototypes; the other side's Sinkhorn
/// pseudo-labels are the (detached) targets. Gradients flow into `x_phi`,
/// `x_psi`, and the prototype bank only through the score matrices.
pub fn sigma_loss(
    tape: &mut Tape,
    x_phi: Var,
    x_psi: Var,
    bank: Var,
    config: &SigmaConfig,
) -> Result<SigmaOutput> {
    config.validate()?;
    let shape = tape.value(x_phi).shape();
    if shape != tape.value(x_psi).shape() {
        return Err(Error::Shape(format!(
            "feature shapes differ: {:?} vs {:?}",
            shape,
            tape.value(x_psi).shape()
        )));
    }
    let batch = shape.0;
    let k = tape.value(bank).rows();
    if (k as f64) > batch as f64 * config.max_prototypes_per_sample {
        return Err(Error::Config(format!(
            "batch of {batch} cannot equipartition {k} prototypes (guard factor {})",
            config.max_prototypes_per_sample
        )));
    }

    let scores_phi = scores_var(tape, x_phi, bank, config.normalize)?;
    let scores_psi = scores_var(tape, x_psi, bank, config.normalize)?;

    // Targets come from solved transport plans on the detached scores.
    let q_phi = solve_targets(tape.value(scores_phi), config)?;
    let q_psi = solve_targets(tape.value(scores_psi), config)?;

    let (loss, report) =
        sigma_loss_with_targets(tape, scores_phi, scores_psi, &q_phi, &q_psi, config.tau)?;
    Ok(SigmaOutput { loss, report, q_phi, q_psi })
}

fn solve_targets(scores: &Tensor, config: &SigmaConfig) -> Result<Tensor> {
    let problem = OtProblem::new(scores.transpose(), config.lambda)?;
    let assignment = sinkhorn(&problem, &config.mode())?;
    pseudo_labels(&assignment)
}

/// The two cross-entropy terms against fixed pseudo-label targets. Split
/// out so gradient checks can hold the targets frozen.
pub fn sigma_loss_with_targets(
    tape: &mut Tape,
    scores_phi: Var,
    scores_psi: Var,
    q_phi: &Tensor,
    q_psi: &Tensor,
    tau: f64,
) -> Result<(Var, LossReport)> {
    let batch = tape.value(scores_phi).rows();
    // The projection side predicts the video model's assignments and
    // vice versa.
    let ce_phi = cross_entropy_term(tape, scores_phi, q_psi, tau)?;
    let ce_psi = cross_entropy_term(tape, scores_psi, q_phi, tau)?;
    let loss = tape.add(ce_phi, ce_psi);
    let total = tape.value(loss).item();
    ensure_finite_loss(total)?;
    Ok((
        loss,
        LossReport {
            total,
            ce_psi: Some(tape.value(ce_psi).item()),
            ce_phi: Some(tape.value(ce_phi).item()),
            batch_size: batch,
        },
    ))
}

fn ensure_finite_loss(total: f64) -> Result<()> {
    if total.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("loss is not finite: {total}")))
    }
}
