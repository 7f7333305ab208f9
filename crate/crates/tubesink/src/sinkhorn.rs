//! Entropy-regularized optimal transport between batch samples and
//! prototypes, solved by Sinkhorn-Knopp in the log domain.
//!
//! The problem: given a score matrix `S` of shape `[K, B]` (prototype-sample
//! similarities) and regularization strength `lambda`, find the transport
//! plan `Q >= 0` minimizing `<Q, -S> + (1/lambda) * KL(Q || r c^T)` subject
//! to uniform marginals `Q 1 = r = 1/K` and `Q^T 1 = c = 1/B`. The solution
//! has the form `Q_ij = exp(lambda * S_ij + f_i + g_j)` for scaling
//! potentials `f, g`, which alternating row/column updates drive to
//! feasibility. Working with the potentials directly makes overflow
//! impossible for finite scores.
//!
//! Columns are normalized last, so each sample's pseudo-label is a valid
//! distribution even when the solver exits before convergence. No gradient
//! flows through the solver; its output is a constant target.

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Tensor};

/// Transport problem over a `[K, B]` score matrix with uniform marginals.
#[derive(Clone, Debug)]
pub struct OtProblem {
    /// Prototype-sample similarity scores, one row per prototype.
    pub scores: Tensor,
    /// Entropy-regularization strength; larger values sharpen the plan.
    pub lambda: f64,
}

impl OtProblem {
    pub fn new(scores: Tensor, lambda: f64) -> Result<Self> {
        if scores.rows() == 0 || scores.cols() == 0 {
            return Err(Error::Shape("score matrix must be non-empty".into()));
        }
        if !scores.is_finite() {
            return Err(Error::Numeric("non-finite entries in score matrix".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive and finite, got {lambda}")));
        }
        Ok(OtProblem { scores, lambda })
    }

    pub fn prototype_count(&self) -> usize {
        self.scores.rows()
    }

    pub fn sample_count(&self) -> usize {
        self.scores.cols()
    }
}

/// Iteration policy for the solver.
#[derive(Clone, Debug)]
pub enum SinkhornMode {
    /// Run exactly this many row+column update pairs (training default).
    FixedIterations(usize),
    /// Iterate until the row-marginal violation drops below `tol`.
    Convergence { tol: f64, max_iters: usize },
}

impl SinkhornMode {
    /// Convergence mode with the tolerance used throughout the test suites.
    /// The cap is generous: near-deterministic plans (small matrices under
    /// strong regularization) converge linearly with a rate that approaches
    /// 1, so they need many iterations, each of them cheap.
    pub fn test_convergence() -> Self {
        SinkhornMode::Convergence { tol: 1e-6, max_iters: 500_000 }
    }
}

impl SinkhornMode {
    fn validate(&self) -> Result<()> {
        match *self {
            SinkhornMode::FixedIterations(n) if n >= 1 => Ok(()),
            SinkhornMode::FixedIterations(n) => {
                Err(Error::Config(format!("fixed-iteration mode needs n >= 1, got {n}")))
            }
            SinkhornMode::Convergence { tol, max_iters } if tol > 0.0 && max_iters >= 1 => Ok(()),
            SinkhornMode::Convergence { tol, max_iters } => Err(Error::Config(format!(
                "convergence mode needs tol > 0 and max_iters >= 1, got tol={tol} max_iters={max_iters}"
            ))),
        }
    }
}

/// Solver output: the plan plus how hard it was to get.
#[derive(Clone, Debug)]
pub struct Assignment {
    /// Transport plan `[K, B]`; nonnegative, total mass 1, columns sum to
    /// exactly `1/B`, rows to `1/K` within `max_row_violation`.
    pub plan: Tensor,
    /// Row+column update pairs performed.
    pub iterations: usize,
    /// Largest `|row_sum - 1/K|` after the final column normalization.
    pub max_row_violation: f64,
}

/// Solve the transport problem with alternating log-domain updates.
pub fn sinkhorn(problem: &OtProblem, mode: &SinkhornMode) -> Result<Assignment> {
    mode.validate()?;
    let k = problem.prototype_count();
    let b = problem.sample_count();
    let r = 1.0 / k as f64;
    let c = 1.0 / b as f64;
    let log_r = -(k as f64).ln();
    let log_c = -(b as f64).ln();

    // Gibbs kernel in the log domain.
    let logk = problem.scores.scale(problem.lambda);

    let mut f = vec![0.0f64; k];
    let mut g = vec![0.0f64; b];
    let mut buf = vec![0.0f64; b.max(k)];

    let (max_iters, tol) = match *mode {
        SinkhornMode::FixedIterations(n) => (n, None),
        SinkhornMode::Convergence { tol, max_iters } => (max_iters, Some(tol)),
    };

    let mut iterations = 0;
    for _ in 0..max_iters {
        // Row update: makes row sums exactly r.
        for i in 0..k {
            let row = logk.row(i);
            for j in 0..b {
                buf[j] = row[j] + g[j];
            }
            f[i] = log_r - log_sum_exp(&buf[..b]);
        }
        // Column update: makes column sums exactly c.
        for j in 0..b {
            for i in 0..k {
                buf[i] = logk.get(i, j) + f[i];
            }
            g[j] = log_c - log_sum_exp(&buf[..k]);
        }
        iterations += 1;
        if let Some(tol) = tol {
            // Hard instances take many cheap iterations; amortize the check.
            let check = iterations <= 32 || iterations % 8 == 0 || iterations == max_iters;
            if check && row_violation(&logk, &f, &g, r) <= tol {
                break;
            }
        }
    }

    // Materialize and force exact column marginals (up to roundoff); the
    // remaining infeasibility lands on the rows and is reported.
    let mut plan = Tensor::zeros(k, b);
    for i in 0..k {
        for j in 0..b {
            plan.set(i, j, (logk.get(i, j) + f[i] + g[j]).exp());
        }
    }
    let col_sums = plan.col_sums();
    for j in 0..b {
        let scale = c / col_sums[j];
        for i in 0..k {
            plan.set(i, j, plan.get(i, j) * scale);
        }
    }
    let max_row_violation = plan
        .row_sums()
        .iter()
        .map(|s| (s - r).abs())
        .fold(0.0, f64::max);

    Ok(Assignment { plan, iterations, max_row_violation })
}

fn row_violation(logk: &Tensor, f: &[f64], g: &[f64], r: f64) -> f64 {
    let (k, b) = logk.shape();
    let mut worst = 0.0f64;
    let mut buf = vec![0.0f64; b];
    for i in 0..k {
        let row = logk.row(i);
        for j in 0..b {
            buf[j] = row[j] + g[j];
        }
        let row_sum = (f[i] + log_sum_exp(&buf)).exp();
        worst = worst.max((row_sum - r).abs());
    }
    worst
}

/// Per-sample soft pseudo-labels: column `j` of the plan rescaled to sum 1
/// and transposed, giving a `[B, K]` matrix of probability rows.
pub fn pseudo_labels(assignment: &Assignment) -> Result<Tensor> {
    let (k, b) = assignment.plan.shape();
    let mut out = Tensor::zeros(b, k);
    for j in 0..b {
        let mass: f64 = (0..k).map(|i| assignment.plan.get(i, j)).sum();
        if !(mass > 0.0) {
            // Cannot happen after column normalization; kept as a hard check.
            return Err(Error::Numeric(format!("column {j} of transport plan has zero mass")));
        }
        for i in 0..k {
            out.set(j, i, assignment.plan.get(i, j) / mass);
        }
    }
    Ok(out)
}

/// Shannon entropy of a probability row (natural log).
pub fn entropy(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}
