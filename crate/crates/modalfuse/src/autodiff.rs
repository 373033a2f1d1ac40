//! Reverse-mode automatic differentiation over f64 matrices.
//!
//! An eager tape: every operation appends a node holding its value, so one
//! `Graph` spans a whole batch (encoders, transformer, pooling, loss) and a
//! single [`Graph::backward`] walk yields gradients for every trainable
//! leaf. Double precision keeps finite-difference checks tight.

use ndarray::{concatenate, s, Array2, Axis};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[n x d] * [1 x d]`, broadcast over rows.
    MulRow(NodeId, NodeId),
    /// `[n x d] + [1 x d]`, broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    Abs(NodeId),
    /// Row-wise normalization to zero mean, unit variance. No affine part;
    /// compose with `MulRow`/`AddRow` for learnable scale and shift.
    LayerNormRows(NodeId, f64),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    Transpose(NodeId),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    /// Column means: `[n x d] -> [1 x d]`.
    MeanRows(NodeId),
    L2NormalizeRows(NodeId),
    /// Main diagonal of a square matrix as `[n x 1]`.
    Diag(NodeId),
    /// Mean of all entries as `[1 x 1]`.
    MeanAll(NodeId),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Gradients from one backward pass, indexed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node, if the node needed one.
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }
}

const GELU_C: f64 = 0.7978845608028654;
const GELU_A: f64 = 0.044715;
const NORM_FLOOR: f64 = 1e-12;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn row_norms(x: &Array2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR))
        .collect()
}

/// Eager computation tape.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable leaf; gradients are retained for it.
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v, self.needs(a) || self.needs(b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v, self.needs(a) || self.needs(b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v, self.needs(a) || self.needs(b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v, self.needs(a) || self.needs(b))
    }

    /// Broadcasts `row` (`[1 x d]`) over the rows of `a` (`[n x d]`), multiplying.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) * &self.value(row).row(0);
        self.push(Op::MulRow(a, row), v, self.needs(a) || self.needs(row))
    }

    /// Broadcasts `row` (`[1 x d]`) over the rows of `a` (`[n x d]`), adding.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + &self.value(row).row(0);
        self.push(Op::AddRow(a, row), v, self.needs(a) || self.needs(row))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a) * factor;
        self.push(Op::Scale(a, factor), v, self.needs(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v, self.needs(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu_scalar);
        self.push(Op::Gelu(a), v, self.needs(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::abs);
        self.push(Op::Abs(a), v, self.needs(a))
    }

    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = self.value(a);
        let d = x.ncols() as f64;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let denom = (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) / denom);
        }
        self.push(Op::LayerNormRows(a, eps), v, self.needs(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v, self.needs(a))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmaxRows(a), v, self.needs(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v, self.needs(a))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows(a, start, len), v, self.needs(a))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start, len), v, self.needs(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("row concat shape mismatch");
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatRows(parts.to_vec()), v, needs)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("col concat shape mismatch");
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), v, needs)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        self.push(Op::MeanRows(a), v, self.needs(a))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let norms = row_norms(x);
        let mut v = x.clone();
        for (mut row, &n) in v.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|x| x / n);
        }
        self.push(Op::L2NormalizeRows(a), v, self.needs(a))
    }

    pub fn diag(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.nrows(), x.ncols(), "diag needs a square matrix");
        let v = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| x[[i, i]]);
        self.push(Op::Diag(a), v, self.needs(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / (x.len() as f64));
        self.push(Op::MeanAll(a), v, self.needs(a))
    }

    /// Backpropagates from a scalar `[1 x 1]` loss node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            // Leaves keep their gradient; interior grads are dropped once used.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let acc = |grads: &mut [Option<Array2<f64>>], id: NodeId, add: Array2<f64>| {
            if !self.needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => *existing += &add,
                slot => *slot = Some(add),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(grads, *a, g.dot(&self.value(*b).t()));
                acc(grads, *b, self.value(*a).t().dot(g));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * self.value(*b));
                acc(grads, *b, g * self.value(*a));
            }
            Op::MulRow(a, row) => {
                acc(grads, *a, g * &self.value(*row).row(0));
                let gr = (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                acc(grads, *row, gr);
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, f) => acc(grads, *a, g * *f),
            Op::Relu(a) => {
                let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                acc(grads, *a, g * &mask);
            }
            Op::Gelu(a) => {
                let d = self.value(*a).mapv(gelu_grad_scalar);
                acc(grads, *a, g * &d);
            }
            Op::Abs(a) => {
                let sign = self.value(*a).mapv(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                acc(grads, *a, g * &sign);
            }
            Op::LayerNormRows(a, eps) => {
                let x = self.value(*a);
                let y = &self.nodes[idx].value;
                let d = x.ncols() as f64;
                let mut dx = Array2::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    let xr = x.row(i);
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let mean = xr.sum() / d;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                    let denom = (var + eps).sqrt();
                    let g_mean = gr.sum() / d;
                    let gy_mean = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
                    for j in 0..x.ncols() {
                        dx[[i, j]] = (gr[j] - g_mean - yr[j] * gy_mean) / denom;
                    }
                }
                acc(grads, *a, dx);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut dx = g * y;
                for i in 0..dx.nrows() {
                    let dot: f64 = dx.row(i).sum();
                    let yr = y.row(i).to_owned();
                    let mut row = dx.row_mut(i);
                    row.zip_mut_with(&yr, |r, &yv| *r -= dot * yv);
                }
                acc(grads, *a, dx);
            }
            Op::LogSoftmaxRows(a) => {
                let p = softmax_rows(self.value(*a));
                let mut dx = g.clone();
                for i in 0..dx.nrows() {
                    let gsum: f64 = g.row(i).sum();
                    let pr = p.row(i).to_owned();
                    let mut row = dx.row_mut(i);
                    row.zip_mut_with(&pr, |r, &pv| *r -= gsum * pv);
                }
                acc(grads, *a, dx);
            }
            Op::Transpose(a) => acc(grads, *a, g.t().to_owned()),
            Op::SliceRows(a, start, len) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                dx.slice_mut(s![*start..start + len, ..]).assign(g);
                acc(grads, *a, dx);
            }
            Op::SliceCols(a, start, len) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                dx.slice_mut(s![.., *start..start + len]).assign(g);
                acc(grads, *a, dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).nrows();
                    acc(grads, p, g.slice(s![offset..offset + rows, ..]).to_owned());
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).ncols();
                    acc(grads, p, g.slice(s![.., offset..offset + cols]).to_owned());
                    offset += cols;
                }
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).nrows();
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                let scaled = g.row(0).mapv(|v| v / n as f64);
                for mut row in dx.rows_mut() {
                    row.assign(&scaled);
                }
                acc(grads, *a, dx);
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let y = &self.nodes[idx].value;
                let norms = row_norms(x);
                let mut dx = Array2::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    let gr = g.row(i);
                    let yr = y.row(i);
                    let dot: f64 = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..x.ncols() {
                        dx[[i, j]] = (gr[j] - yr[j] * dot) / norms[i];
                    }
                }
                acc(grads, *a, dx);
            }
            Op::Diag(a) => {
                let mut dx = Array2::zeros(self.value(*a).raw_dim());
                for i in 0..g.nrows() {
                    dx[[i, i]] = g[[i, 0]];
                }
                acc(grads, *a, dx);
            }
            Op::MeanAll(a) => {
                let x = self.value(*a);
                let scale = g[[0, 0]] / x.len() as f64;
                acc(grads, *a, Array2::from_elem(x.raw_dim(), scale));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        use rand_distr::{Distribution, StandardNormal};
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    /// Builds the scalar loss with `x` bound as the single trainable leaf.
    type Build = dyn Fn(&mut Graph, NodeId) -> NodeId;

    fn loss_at(x: &Array2<f64>, f: &Build) -> f64 {
        let mut g = Graph::new();
        let id = g.leaf(x.clone());
        let loss = f(&mut g, id);
        g.value(loss)[[0, 0]]
    }

    fn fd_check(x0: &Array2<f64>, f: &Build) {
        let mut g = Graph::new();
        let id = g.leaf(x0.clone());
        let loss = f(&mut g, id);
        let grads = g.backward(loss);
        let analytic = grads.get(id).expect("leaf gradient missing");

        let h = 1e-5;
        for i in 0..x0.nrows() {
            for j in 0..x0.ncols() {
                let mut plus = x0.clone();
                plus[[i, j]] += h;
                let mut minus = x0.clone();
                minus[[i, j]] -= h;
                let fd = (loss_at(&plus, f) - loss_at(&minus, f)) / (2.0 * h);
                let a = analytic[[i, j]];
                let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1.0);
                assert!(rel <= 1e-6, "grad mismatch at ({i},{j}): analytic {a}, fd {fd}");
            }
        }
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 3, 4);
        let w = randn(&mut rng, 4, 2);
        fd_check(&x, &move |g, id| {
            let w = g.constant(w.clone());
            let y = g.matmul(id, w);
            g.mean_all(y)
        });
    }

    #[test]
    fn matmul_right_operand_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randn(&mut rng, 2, 3);
        let x = randn(&mut rng, 3, 5);
        fd_check(&x, &move |g, id| {
            let a = g.constant(a.clone());
            let y = g.matmul(a, id);
            g.mean_all(y)
        });
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, 3, 3);
        let other = randn(&mut rng, 3, 3);
        let o1 = other.clone();
        fd_check(&x, &move |g, id| {
            let c = g.constant(o1.clone());
            let sum = g.add(id, c);
            let diff = g.sub(sum, c);
            let prod = g.mul(diff, c);
            let scaled = g.scale(prod, 1.7);
            g.mean_all(scaled)
        });
    }

    #[test]
    fn row_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn(&mut rng, 4, 3);
        let row = randn(&mut rng, 1, 3);
        let r2 = row.clone();
        fd_check(&x, &move |g, id| {
            let row = g.constant(row.clone());
            let y = g.mul_row(id, row);
            let z = g.add_row(y, row);
            g.mean_all(z)
        });
        // And with the row vector as the trainable side.
        let base = randn(&mut rng, 4, 3);
        fd_check(&r2, &move |g, id| {
            let base = g.constant(base.clone());
            let y = g.mul_row(base, id);
            let z = g.add_row(y, id);
            g.mean_all(z)
        });
    }

    #[test]
    fn activation_gradients() {
        // Keep entries away from the relu/abs kinks.
        let x = array![[0.7, -1.3, 2.1], [-0.4, 0.9, -2.2]];
        fd_check(&x, &|g, id| {
            let y = g.relu(id);
            g.mean_all(y)
        });
        fd_check(&x, &|g, id| {
            let y = g.gelu(id);
            g.mean_all(y)
        });
        fd_check(&x, &|g, id| {
            let y = g.abs(id);
            g.mean_all(y)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&mut rng, 3, 6);
        let w = randn(&mut rng, 3, 6);
        fd_check(&x, &move |g, id| {
            let y = g.layer_norm_rows(id, 1e-5);
            let w = g.constant(w.clone());
            let z = g.mul(y, w);
            g.mean_all(z)
        });
    }

    #[test]
    fn softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = randn(&mut rng, 3, 5);
        let w = randn(&mut rng, 3, 5);
        let w2 = w.clone();
        fd_check(&x, &move |g, id| {
            let y = g.softmax_rows(id);
            let w = g.constant(w.clone());
            let z = g.mul(y, w);
            g.mean_all(z)
        });
        fd_check(&x, &move |g, id| {
            let y = g.log_softmax_rows(id);
            let w = g.constant(w2.clone());
            let z = g.mul(y, w);
            g.mean_all(z)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = randn(&mut rng, 4, 6);
        let w = randn(&mut rng, 6, 2);
        fd_check(&x, &move |g, id| {
            let t = g.transpose(id);
            let back = g.transpose(t);
            let rows = g.slice_rows(back, 1, 2);
            let cols = g.slice_cols(rows, 2, 4);
            let cat = g.concat_rows(&[cols, cols]);
            let wide = g.concat_cols(&[cat, cat]);
            let narrow = g.slice_cols(wide, 0, 6);
            let w = g.constant(w.clone());
            let y = g.matmul(narrow, w);
            g.mean_all(y)
        });
    }

    #[test]
    fn reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = randn(&mut rng, 5, 3);
        let w = randn(&mut rng, 1, 3);
        fd_check(&x, &move |g, id| {
            let m = g.mean_rows(id);
            let w = g.constant(w.clone());
            let z = g.mul(m, w);
            g.mean_all(z)
        });
    }

    #[test]
    fn normalize_and_diag_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = randn(&mut rng, 4, 4);
        fd_check(&x, &|g, id| {
            let y = g.l2_normalize_rows(id);
            let t = g.transpose(y);
            let sim = g.matmul(y, t);
            let d = g.diag(sim);
            g.mean_all(d)
        });
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        // x used twice: loss = mean(x*x + x), grad = (2x + 1)/len.
        let x = array![[1.0, -2.0], [3.0, 0.5]];
        let mut g = Graph::new();
        let id = g.leaf(x.clone());
        let sq = g.mul(id, id);
        let sum = g.add(sq, id);
        let loss = g.mean_all(sum);
        let grads = g.backward(loss);
        let got = grads.get(id).unwrap();
        let expect = x.mapv(|v| (2.0 * v + 1.0) / 4.0);
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(array![[1.0, 2.0]]);
        let c = g.constant(array![[3.0, 4.0]]);
        let y = g.mul(x, c);
        let loss = g.mean_all(y);
        let grads = g.backward(loss);
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_underflows() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.0, -1e9, 2.0], [5.0, 5.0, -1e9]]);
        let y = g.softmax_rows(x);
        let v = g.value(y);
        for row in v.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        // The -1e9 bias underflows to exactly zero probability.
        assert_eq!(v[[0, 1]], 0.0);
        assert_eq!(v[[1, 2]], 0.0);
        assert_eq!(v[[1, 0]], 0.5);
    }

    #[test]
    fn layer_norm_rows_standardizes() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]]);
        let y = g.layer_norm_rows(x, 1e-12);
        for row in g.value(y).rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn l2_normalize_produces_unit_rows() {
        let mut g = Graph::new();
        let x = g.constant(array![[3.0, 4.0], [0.3, -0.4]]);
        let y = g.l2_normalize_rows(x);
        for row in g.value(y).rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_mlp_end_to_end_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = randn(&mut rng, 3, 4);
        let w1 = randn(&mut rng, 4, 8);
        let b1 = randn(&mut rng, 1, 8);
        let w2 = randn(&mut rng, 8, 2);
        fd_check(&x, &move |g, id| {
            let w1 = g.constant(w1.clone());
            let b1 = g.constant(b1.clone());
            let w2 = g.constant(w2.clone());
            let h = g.matmul(id, w1);
            let h = g.add_row(h, b1);
            let h = g.gelu(h);
            let out = g.matmul(h, w2);
            let normed = g.l2_normalize_rows(out);
            g.mean_all(normed)
        });
    }
}
