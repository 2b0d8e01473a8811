//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] records operations in topological order; [`Tape::backward`]
//! walks them in reverse and accumulates gradients for every node that
//! requires them. Leaves can borrow parameter tensors, so binding a model
//! into a tape never copies the parameter storage.

use ndarray::{s, Array2, Axis};

/// Additive mask sentinel standing in for minus infinity. Kept finite so a
/// row softmax underflows to exact zero instead of producing NaN.
pub const NEG_SENTINEL: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Val<'a> {
    Owned(Array2<f64>),
    Borrowed(&'a Array2<f64>),
}

impl<'a> Val<'a> {
    fn get(&self) -> &Array2<f64> {
        match self {
            Val::Owned(a) => a,
            Val::Borrowed(a) => a,
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    /// Row-broadcast add: lhs is n x k, rhs is 1 x k.
    AddRow(Var, Var),
    /// Broadcast add of a 1x1 scalar node.
    AddScalar(Var, Var),
    Mul(Var, Var),
    /// Multiply by a 1x1 scalar node.
    MulScalar(Var, Var),
    /// Divide by a 1x1 scalar node.
    DivScalar(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    /// a @ b^T without materializing the transpose.
    MatMulNT(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Log2Clamped(Var, f64),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    RepeatRows(Var),
    StackRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    /// Scatter per-type scores (U x 1) onto edge cells of an N x N grid.
    /// The id grid holds 1-based type ids, 0 meaning "no edge".
    ScatterEdges(Var, Array2<u32>),
    /// Negative log-softmax of a 1 x C logit row at the given class.
    CrossEntropyLogits(Var, usize),
}

struct Node<'a> {
    value: Val<'a>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, if any was reached.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Consuming accessor, used when accumulating into batch buffers.
    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        self.nodes[v.0].value.get()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Val::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Non-differentiable leaf that borrows its storage.
    pub fn constant(&mut self, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: Val::Borrowed(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf that owns its storage.
    pub fn constant_owned(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that borrows parameter storage.
    pub fn param(&mut self, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: Val::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ra, ca) = self.value(a).dim();
        let (rb, cb) = self.value(row).dim();
        assert_eq!((rb, cb), (1, ca), "add_row: {}x{} + {}x{}", ra, ca, rb, cb);
        let v = self.value(a) + &self.value(row).row(0);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn add_scalar(&mut self, a: Var, scalar: Var) -> Var {
        assert_eq!(self.value(scalar).dim(), (1, 1), "add_scalar: rhs must be 1x1");
        let s = self.value(scalar)[(0, 0)];
        let v = self.value(a).mapv(|x| x + s);
        let rg = self.rg(a) || self.rg(scalar);
        self.push(v, Op::AddScalar(a, scalar), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, scalar: Var) -> Var {
        assert_eq!(self.value(scalar).dim(), (1, 1), "mul_scalar: rhs must be 1x1");
        let s = self.value(scalar)[(0, 0)];
        let v = self.value(a).mapv(|x| x * s);
        let rg = self.rg(a) || self.rg(scalar);
        self.push(v, Op::MulScalar(a, scalar), rg)
    }

    pub fn div_scalar(&mut self, a: Var, scalar: Var) -> Var {
        assert_eq!(self.value(scalar).dim(), (1, 1), "div_scalar: rhs must be 1x1");
        let s = self.value(scalar)[(0, 0)];
        let v = self.value(a).mapv(|x| x / s);
        let rg = self.rg(a) || self.rg(scalar);
        self.push(v, Op::DivScalar(a, scalar), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulNT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    /// Row-wise softmax with max subtraction, so additive [`NEG_SENTINEL`]
    /// entries underflow to exact zero.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - m).exp());
            let z: f64 = row.sum();
            row.mapv_inplace(|e| e / z);
        }
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Elementwise log2 with the argument clamped below at `eps`.
    pub fn log2_clamped(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(eps).log2());
        let rg = self.rg(a);
        self.push(v, Op::Log2Clamped(a, eps), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        let rg = self.rg(a);
        self.push(v, Op::Mean(a), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut v = Array2::zeros((idx.len(), x.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).assign(&x.row(i));
        }
        let rg = self.rg(a);
        self.push(v, Op::GatherRows(a, idx), rg)
    }

    /// Column means: n x k -> 1 x k.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let v = x
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            .mapv(|e| e / n);
        let rg = self.rg(a);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), 1, "repeat_rows expects a single row");
        let mut v = Array2::zeros((n, x.ncols()));
        for mut row in v.rows_mut() {
            row.assign(&x.row(0));
        }
        let rg = self.rg(a);
        self.push(v, Op::RepeatRows(a), rg)
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows on empty slice");
        let k = self.value(rows[0]).ncols();
        let mut v = Array2::zeros((rows.len(), k));
        let mut rg = false;
        for (r, &var) in rows.iter().enumerate() {
            let x = self.value(var);
            assert_eq!(x.dim(), (1, k), "stack_rows: row {} has shape {:?}", r, x.dim());
            v.row_mut(r).assign(&x.row(0));
            rg |= self.rg(var);
        }
        self.push(v, Op::StackRows(rows.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let v = self.value(a).slice(s![.., from..to]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, from, to), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let x = self.value(a);
        let y = self.value(b);
        assert_eq!(x.nrows(), y.nrows(), "concat_cols: row mismatch");
        let mut v = Array2::zeros((x.nrows(), x.ncols() + y.ncols()));
        v.slice_mut(s![.., ..x.ncols()]).assign(x);
        v.slice_mut(s![.., x.ncols()..]).assign(y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::ConcatCols(a, b), rg)
    }

    pub fn scatter_edges(&mut self, scores: Var, ids: Array2<u32>) -> Var {
        let alpha = self.value(scores);
        assert_eq!(alpha.ncols(), 1, "scatter_edges: scores must be U x 1");
        let u = alpha.nrows() as u32;
        let mut v = Array2::zeros(ids.dim());
        for ((i, j), &t) in ids.indexed_iter() {
            if t != 0 {
                assert!(t <= u, "scatter_edges: type id {} out of range 1..={}", t, u);
                v[(i, j)] = alpha[(t as usize - 1, 0)];
            }
        }
        let rg = self.rg(scores);
        self.push(v, Op::ScatterEdges(scores, ids), rg)
    }

    pub fn cross_entropy_logits(&mut self, logits: Var, label: usize) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), 1, "cross_entropy_logits expects a 1 x C row");
        assert!(label < x.ncols(), "label {} out of range", label);
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x.iter().map(|&e| (e - m).exp()).sum::<f64>().ln();
        let v = Array2::from_elem((1, 1), lse - x[(0, label)]);
        let rg = self.rg(logits);
        self.push(v, Op::CrossEntropyLogits(logits, label), rg)
    }

    /// Backpropagate from a 1x1 root node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be 1x1");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            self.step_backward(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        match &mut grads[v.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn step_backward(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let acc = Self::accumulate;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*row) {
                    acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::AddScalar(a, sc) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*sc) {
                    acc(grads, *sc, Array2::from_elem((1, 1), g.sum()));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(grads, *b, g * self.value(*a));
                }
            }
            Op::MulScalar(a, sc) => {
                let s = self.value(*sc)[(0, 0)];
                if self.rg(*a) {
                    acc(grads, *a, g.mapv(|e| e * s));
                }
                if self.rg(*sc) {
                    let d = (g * self.value(*a)).sum();
                    acc(grads, *sc, Array2::from_elem((1, 1), d));
                }
            }
            Op::DivScalar(a, sc) => {
                let s = self.value(*sc)[(0, 0)];
                if self.rg(*a) {
                    acc(grads, *a, g.mapv(|e| e / s));
                }
                if self.rg(*sc) {
                    let d = -(g * self.value(*a)).sum() / (s * s);
                    acc(grads, *sc, Array2::from_elem((1, 1), d));
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    acc(grads, *a, g.mapv(|e| e * c));
                }
            }
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    acc(grads, *a, g.t().to_owned());
                }
            }
            Op::Tanh(a) => {
                if self.rg(*a) {
                    let y = self.value(Var(idx));
                    acc(grads, *a, g * &y.mapv(|e| 1.0 - e * e));
                }
            }
            Op::Sigmoid(a) => {
                if self.rg(*a) {
                    let y = self.value(Var(idx));
                    acc(grads, *a, g * &y.mapv(|e| e * (1.0 - e)));
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let y = self.value(Var(idx));
                    let mut d = g.clone();
                    d.zip_mut_with(y, |gi, &yi| {
                        if yi <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    acc(grads, *a, d);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.rg(*a) {
                    let y = self.value(Var(idx));
                    let mut d = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(&yi, &gi)| yi * gi).sum();
                        for c in 0..y.ncols() {
                            d[(r, c)] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(grads, *a, d);
                }
            }
            Op::Log2Clamped(a, eps) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let ln2 = std::f64::consts::LN_2;
                    let mut d = g.clone();
                    d.zip_mut_with(x, |gi, &xi| {
                        if xi > *eps {
                            *gi /= xi * ln2;
                        } else {
                            *gi = 0.0;
                        }
                    });
                    acc(grads, *a, d);
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let s = g[(0, 0)];
                    acc(grads, *a, Array2::from_elem(self.value(*a).dim(), s));
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let s = g[(0, 0)] / x.len() as f64;
                    acc(grads, *a, Array2::from_elem(x.dim(), s));
                }
            }
            Op::GatherRows(a, idxs) => {
                if self.rg(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    for (r, &i) in idxs.iter().enumerate() {
                        let mut target = d.row_mut(i);
                        target += &g.row(r);
                    }
                    acc(grads, *a, d);
                }
            }
            Op::MeanRows(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let n = x.nrows();
                    let mut d = Array2::zeros(x.dim());
                    let scaled = g.row(0).mapv(|e| e / n as f64);
                    for mut row in d.rows_mut() {
                        row.assign(&scaled);
                    }
                    acc(grads, *a, d);
                }
            }
            Op::RepeatRows(a) => {
                if self.rg(*a) {
                    acc(grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::StackRows(rows) => {
                for (r, &var) in rows.iter().enumerate() {
                    if self.rg(var) {
                        acc(grads, var, g.row(r).to_owned().insert_axis(Axis(0)));
                    }
                }
            }
            Op::SliceCols(a, from, to) => {
                if self.rg(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *from..*to]).assign(g);
                    acc(grads, *a, d);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).ncols();
                if self.rg(*a) {
                    acc(grads, *a, g.slice(s![.., ..ca]).to_owned());
                }
                if self.rg(*b) {
                    acc(grads, *b, g.slice(s![.., ca..]).to_owned());
                }
            }
            Op::ScatterEdges(scores, ids) => {
                if self.rg(*scores) {
                    let u = self.value(*scores).nrows();
                    let mut d = Array2::zeros((u, 1));
                    for ((i, j), &t) in ids.indexed_iter() {
                        if t != 0 {
                            d[(t as usize - 1, 0)] += g[(i, j)];
                        }
                    }
                    acc(grads, *scores, d);
                }
            }
            Op::CrossEntropyLogits(a, label) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut soft = x.mapv(|e| (e - m).exp());
                    let z = soft.sum();
                    soft.mapv_inplace(|e| e / z);
                    soft[(0, *label)] -= 1.0;
                    acc(grads, *a, soft.mapv(|e| e * g[(0, 0)]));
                }
            }
        }
    }
}
