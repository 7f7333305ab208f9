//! Reverse-mode automatic differentiation on a Wengert list (tape).
//!
//! Every differentiable computation in the crate is expressed through this
//! module: a forward pass pushes nodes onto a [`Tape`], `backward` walks the
//! list in reverse and accumulates exact gradients for every trainable leaf.
//! The op set is the minimum needed for the transformer, the projection MLP,
//! the prototype scores, and the losses. Execution is single-threaded with a
//! fixed summation order, so results are bit-reproducible.

use crate::tensor::Tensor;

const GELU_COEF: f64 = 0.044715;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    RepeatRow(Var),
    NormalizeRows(Var),
    SumAll(Var),
    MeanAll(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward root w.r.t. `v`, if `v` was on a grad path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Like `get`, but zeros of the given shape when the node got no gradient.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor {
        match self.grads[v.0] {
            Some(ref g) => g.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked through it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input; `backward` accumulates a gradient for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Matmul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// `[m,n] + [1,n]` with the bias broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "bias must be 1xN");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, Op::AddRowBroadcast(a, bias), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with learnable scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        assert_eq!(gv.shape(), (1, xv.cols()), "gamma must be 1xN");
        assert_eq!(bv.shape(), (1, xv.cols()), "beta must be 1xN");
        let mut value = Tensor::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let (mu, var) = mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            for (j, o) in value.row_mut(i).iter_mut().enumerate() {
                *o = (row[j] - mu) * inv * gv.get(0, j) + bv.get(0, j);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, eps }, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = Tensor::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            softmax_into(av.row(i), value.row_mut(i));
        }
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = Tensor::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let row = av.row(i);
            let lse = crate::tensor::log_sum_exp(row);
            for (j, o) in value.row_mut(i).iter_mut().enumerate() {
                *o = row[j] - lse;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(pv.as_slice());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols height mismatch");
            for i in 0..rows {
                value.row_mut(i)[offset..offset + pv.cols()].copy_from_slice(pv.row(i));
            }
            offset += pv.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Select rows by index, in the given order. Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = self.value(a);
        let mut value = Tensor::zeros(indices.len(), av.cols());
        for (out_i, &src_i) in indices.iter().enumerate() {
            value.row_mut(out_i).copy_from_slice(av.row(src_i));
        }
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, indices.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut value = Tensor::zeros(av.rows(), len);
        for i in 0..av.rows() {
            value.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start, len), rg)
    }

    /// Broadcast a `1xN` row to `count` identical rows.
    pub fn repeat_row(&mut self, a: Var, count: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), 1, "repeat_row input must be 1xN");
        let mut value = Tensor::zeros(count, av.cols());
        for i in 0..count {
            value.row_mut(i).copy_from_slice(av.row(0));
        }
        let rg = self.rg(a);
        self.push(value, Op::RepeatRow(a), rg)
    }

    /// L2-normalize each row. Rows with zero norm are a caller error; they
    /// are checked upstream where the spec demands a numeric error.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = Tensor::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let row = av.row(i);
            let norm = l2_norm(row);
            for (j, o) in value.row_mut(i).iter_mut().enumerate() {
                *o = row[j] / norm;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::NormalizeRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(value, Op::MeanAll(a), rg)
    }

    /// x·W + b, the standard dense layer ([in,out] weight, 1xout bias).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row_broadcast(xw, b)
    }

    /// Accumulate gradients of scalar `root` w.r.t. every grad-requiring node.
    pub fn backward(&mut self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(grad_out) = grads[idx].take() else { continue };
            self.dispatch_backward(idx, &grad_out, &mut grads);
            grads[idx] = Some(grad_out);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match grads[v.0] {
            Some(ref mut g) => g.add_assign(&delta),
            None => grads[v.0] = Some(delta),
        }
    }

    fn dispatch_backward(&self, idx: usize, grad_out: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let da = grad_out.matmul_a_bt(self.value(b));
                    self.accumulate(grads, a, da);
                }
                if self.rg(b) {
                    let db = self.value(a).matmul_at_b(grad_out);
                    self.accumulate(grads, b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, grad_out.clone());
                self.accumulate(grads, *b, grad_out.clone());
            }
            Op::AddRowBroadcast(a, bias) => {
                self.accumulate(grads, *a, grad_out.clone());
                if self.rg(*bias) {
                    let sums = grad_out.col_sums();
                    self.accumulate(grads, *bias, Tensor::from_vec(1, sums.len(), sums));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, grad_out.clone());
                self.accumulate(grads, *b, grad_out.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    self.accumulate(grads, a, grad_out.zip_map(self.value(b), |g, y| g * y));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, grad_out.zip_map(self.value(a), |g, x| g * x));
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, grad_out.scale(*c));
            }
            Op::Gelu(a) => {
                let da = grad_out.zip_map(self.value(*a), |g, x| g * gelu_grad(x));
                self.accumulate(grads, *a, da);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                self.layer_norm_backward(*x, *gamma, *beta, *eps, grad_out, grads);
            }
            Op::SoftmaxRows(a) => {
                let p = &self.nodes[idx].value;
                let mut dx = Tensor::zeros(p.rows(), p.cols());
                for i in 0..p.rows() {
                    let dot: f64 =
                        grad_out.row(i).iter().zip(p.row(i)).map(|(g, q)| g * q).sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = p.get(i, j) * (grad_out.get(i, j) - dot);
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gsum: f64 = grad_out.row(i).iter().sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = grad_out.get(i, j) - y.get(i, j).exp() * gsum;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, grad_out.transpose());
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.rg(p) {
                        let mut dp = Tensor::zeros(rows, grad_out.cols());
                        for i in 0..rows {
                            dp.row_mut(i).copy_from_slice(grad_out.row(offset + i));
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.rg(p) {
                        let mut dp = Tensor::zeros(grad_out.rows(), cols);
                        for i in 0..grad_out.rows() {
                            dp.row_mut(i).copy_from_slice(&grad_out.row(i)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += cols;
                }
            }
            Op::GatherRows(a, indices) => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for (out_i, &src_i) in indices.iter().enumerate() {
                    for (o, g) in da.row_mut(src_i).iter_mut().zip(grad_out.row(out_i)) {
                        *o += g;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::SliceCols(a, start, len) => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    da.row_mut(i)[*start..start + len].copy_from_slice(grad_out.row(i));
                }
                self.accumulate(grads, *a, da);
            }
            Op::RepeatRow(a) => {
                let sums = grad_out.col_sums();
                self.accumulate(grads, *a, Tensor::from_vec(1, sums.len(), sums));
            }
            Op::NormalizeRows(a) => {
                let xv = self.value(*a);
                let y = &self.nodes[idx].value;
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for i in 0..xv.rows() {
                    let norm = l2_norm(xv.row(i));
                    let dot: f64 =
                        y.row(i).iter().zip(grad_out.row(i)).map(|(u, g)| u * g).sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = (grad_out.get(i, j) - y.get(i, j) * dot) / norm;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                let g = grad_out.item();
                self.accumulate(grads, *a, Tensor::from_fn(av.rows(), av.cols(), |_, _| g));
            }
            Op::MeanAll(a) => {
                let av = self.value(*a);
                let g = grad_out.item() / av.len() as f64;
                self.accumulate(grads, *a, Tensor::from_fn(av.rows(), av.cols(), |_, _| g));
            }
        }
    }

    fn layer_norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        grad_out: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let n = xv.cols() as f64;
        let mut dx = Tensor::zeros(xv.rows(), xv.cols());
        let mut dgamma = Tensor::zeros(1, xv.cols());
        let mut dbeta = Tensor::zeros(1, xv.cols());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let (mu, var) = mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            let mut dnorm_mean = 0.0;
            let mut dnorm_hat_mean = 0.0;
            for j in 0..row.len() {
                let hat = (row[j] - mu) * inv;
                let dnorm = grad_out.get(i, j) * gv.get(0, j);
                dnorm_mean += dnorm;
                dnorm_hat_mean += dnorm * hat;
                dgamma.row_mut(0)[j] += grad_out.get(i, j) * hat;
                dbeta.row_mut(0)[j] += grad_out.get(i, j);
            }
            dnorm_mean /= n;
            dnorm_hat_mean /= n;
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                let hat = (row[j] - mu) * inv;
                let dnorm = grad_out.get(i, j) * gv.get(0, j);
                *o = (dnorm - dnorm_mean - hat * dnorm_hat_mean) * inv;
            }
        }
        self.accumulate(grads, x, dx);
        self.accumulate(grads, gamma, dgamma);
        self.accumulate(grads, beta, dbeta);
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var)
}

fn l2_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let arg = s * (x + GELU_COEF * x * x * x);
    let t = arg.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_COEF * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Checks analytic gradients against central finite differences for a
    /// scalar-valued graph over a single parameter tensor.
    fn check_op(rows: usize, cols: usize, seed: u64, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = random_tensor(&mut rng, rows, cols);

        let mut tape = Tape::new();
        let p = tape.param(theta.clone());
        let root = build(&mut tape, p);
        let grads = tape.backward(root);
        let analytic = grads.get(p).expect("parameter must receive a gradient");

        let fd = finite_difference(&theta, 1e-6, |t| {
            let mut tape = Tape::new();
            let p = tape.param(t.clone());
            let root = build(&mut tape, p);
            tape.value(root).item()
        });
        let err = analytic.max_abs_diff(&fd);
        assert!(err < 1e-7, "gradient mismatch {err:.3e}");
    }

    #[test]
    fn matmul_gradients() {
        check_op(3, 4, 1, |t, p| {
            let c = t.constant(Tensor::from_fn(4, 2, |i, j| (i + j) as f64 * 0.1 - 0.2));
            let y = t.matmul(p, c);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
        // and as the right operand
        check_op(4, 2, 2, |t, p| {
            let c = t.constant(Tensor::from_fn(3, 4, |i, j| (2 * i + j) as f64 * 0.05));
            let y = t.matmul(c, p);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
    }

    #[test]
    fn elementwise_and_broadcast_gradients() {
        check_op(3, 3, 3, |t, p| {
            let c = t.constant(Tensor::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.2 - 0.5));
            let a = t.add(p, c);
            let s = t.sub(a, p);
            let m = t.mul(s, p);
            let sc = t.scale(m, 0.7);
            t.mean_all(sc)
        });
        check_op(1, 5, 4, |t, p| {
            let x = t.constant(Tensor::from_fn(4, 5, |i, j| (i + j) as f64 * 0.1));
            let y = t.add_row_broadcast(x, p);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
    }

    #[test]
    fn gelu_gradient() {
        check_op(2, 6, 5, |t, p| {
            let g = t.gelu(p);
            let g2 = t.mul(g, g);
            t.sum_all(g2)
        });
    }

    #[test]
    fn layer_norm_gradients_for_all_inputs() {
        // w.r.t. x
        check_op(3, 5, 6, |t, p| {
            let gamma = t.constant(Tensor::from_fn(1, 5, |_, j| 1.0 + 0.1 * j as f64));
            let beta = t.constant(Tensor::from_fn(1, 5, |_, j| 0.05 * j as f64));
            let y = t.layer_norm(p, gamma, beta, 1e-5);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
        // w.r.t. gamma and beta
        check_op(1, 5, 7, |t, p| {
            let x = t.constant(Tensor::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.3 - 1.0));
            let beta = t.constant(Tensor::zeros(1, 5));
            let y = t.layer_norm(x, p, beta, 1e-5);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
        check_op(1, 5, 8, |t, p| {
            let x = t.constant(Tensor::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.3 - 1.0));
            let gamma = t.constant(Tensor::from_fn(1, 5, |_, _| 1.0));
            let y = t.layer_norm(x, gamma, p, 1e-5);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
    }

    #[test]
    fn softmax_and_log_softmax_gradients() {
        check_op(3, 4, 9, |t, p| {
            let s = t.softmax_rows(p);
            let w = t.constant(Tensor::from_fn(3, 4, |i, j| ((i + j) % 3) as f64 - 1.0));
            let ws = t.mul(s, w);
            t.sum_all(ws)
        });
        check_op(3, 4, 10, |t, p| {
            let s = t.log_softmax_rows(p);
            let w = t.constant(Tensor::from_fn(3, 4, |i, j| ((i * j) % 2) as f64 + 0.3));
            let ws = t.mul(s, w);
            t.sum_all(ws)
        });
    }

    #[test]
    fn structural_op_gradients() {
        check_op(4, 3, 11, |t, p| {
            let tr = t.transpose(p);
            let g = t.gather_rows(tr, &[2, 0, 2]);
            let sl = t.slice_cols(g, 1, 3);
            let c = t.concat_rows(&[sl, sl]);
            let c2 = t.mul(c, c);
            t.sum_all(c2)
        });
        check_op(1, 4, 12, |t, p| {
            let r = t.repeat_row(p, 3);
            let w = t.constant(Tensor::from_fn(3, 4, |i, j| (i + 2 * j) as f64 * 0.1));
            let m = t.mul(r, w);
            t.sum_all(m)
        });
        check_op(3, 2, 13, |t, p| {
            let c = t.constant(Tensor::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.4));
            let cc = t.concat_cols(&[p, c]);
            let sq = t.mul(cc, cc);
            t.mean_all(sq)
        });
    }

    #[test]
    fn normalize_rows_gradient() {
        check_op(3, 5, 14, |t, p| {
            let n = t.normalize_rows(p);
            let w = t.constant(Tensor::from_fn(3, 5, |i, j| ((i + j) % 4) as f64 * 0.25));
            let m = t.mul(n, w);
            t.sum_all(m)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::from_vec(1, 2, vec![1.0, 2.0]));
        let p = tape.param(Tensor::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
        let y = tape.matmul(c, p);
        let s = tape.sum_all(y);
        let grads = tape.backward(s);
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_some());
    }

    #[test]
    fn gradient_accumulates_over_reused_nodes() {
        // y = p + p: dy/dp = 2
        let mut tape = Tape::new();
        let p = tape.param(Tensor::from_vec(1, 2, vec![0.5, -0.5]));
        let y = tape.add(p, p);
        let s = tape.sum_all(y);
        let grads = tape.backward(s);
        assert_eq!(grads.get(p).unwrap().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn repeated_builds_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let x = random_tensor(&mut rng, 5, 4);
            let w = random_tensor(&mut rng, 4, 3);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let wv = tape.param(w);
            let y = tape.matmul(xv, wv);
            let g = tape.gelu(y);
            let s = tape.mean_all(g);
            let grads = tape.backward(s);
            (tape.value(s).item(), grads.get(wv).unwrap().clone())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert_eq!(g1, g2);
    }
}
