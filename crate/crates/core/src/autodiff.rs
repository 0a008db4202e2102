//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records the forward graph as an append-only arena, so creation
//! order is already a topological order. [`Tape::backward`] seeds the scalar
//! loss with 1 and walks the arena once in reverse, accumulating adjoints.
//! Re-running backward allocates fresh adjoint storage and therefore yields
//! identical gradients.
//!
//! The op set is deliberately small and fused where fusion keeps gradients
//! simple and numerically stable (row softmax, cosine, cross-entropy from
//! logits, BCE from logits).

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait methods back f64 math under no_std
use num_traits::Float;

use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    /// `a * b^T`
    MatmulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    /// Matrix `a` times 1x1 scalar node `s`.
    MulScalar(Var, Var),
    /// Matrix `a` divided by 1x1 scalar node `s`.
    DivScalar(Var, Var),
    Relu(Var),
    Abs(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    RowNormalize(Var),
    /// Broadcast-add a 1xC bias row to every row of `a`.
    AddBiasRow(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    /// Tile a 1xC row vector into R identical rows.
    RepeatRows(Var),
    SelectElem(Var, usize, usize),
    SumAll(Var),
    MeanAll(Var),
    /// Guarded cosine similarity of two equal-shaped matrices viewed flat.
    Cosine(Var, Var),
    /// Whole-matrix L2 normalization (used on row vectors).
    L2Normalize(Var),
    /// Label-smoothed cross-entropy of a 1xC logits row against `target`.
    SmoothedCeLogits { logits: Var, target: usize, alpha: f64 },
    /// Mean binary cross-entropy of logits against fixed 0/1 targets.
    BceWithLogitsMean { logits: Var, targets: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recorded operation graph with per-node value storage.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by one backward pass.
pub struct Grads {
    adj: Vec<Option<Matrix>>,
}

impl Grads {
    /// Gradient for `v`, or `None` if the node was not gradient-tracked or
    /// unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adj[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient-tracked input (parameter or anything whose adjoint is read).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked input; backward never allocates an adjoint for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, a: Var, value: Matrix, op: Op) -> Var {
        let ng = self.needs(a);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.binary(a, b, value, Op::Matmul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        self.binary(a, b, value, Op::MatmulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.binary(a, b, value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.binary(a, b, value, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b));
        self.binary(a, b, value, Op::Hadamard(a, b))
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.unary(a, value, Op::ScaleConst(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.unary(a, value, Op::AddConst(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).scalar();
        let value = self.value(a).scale(sv);
        self.binary(a, s, value, Op::MulScalar(a, s))
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).scalar();
        let value = self.value(a).scale(1.0 / sv);
        self.binary(a, s, value, Op::DivScalar(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.unary(a, value, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.abs());
        self.unary(a, value, Op::Abs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    /// Softmax applied independently to each row (unit temperature; divide the
    /// input first for other temperatures).
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for i in 0..m.rows() {
            let p = crate::matrix::softmax(m.row(i), 1.0);
            out.row_mut(i).copy_from_slice(&p);
        }
        self.unary(a, out, Op::RowSoftmax(a))
    }

    /// Row-stochastic normalization with the self-loop fallback for zero rows.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let value = self.value(a).row_normalize();
        self.unary(a, value, Op::RowNormalize(a))
    }

    pub fn add_bias_row(&mut self, a: Var, bias: Var) -> Var {
        let m = self.value(a);
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        assert_eq!(b.cols(), m.cols(), "bias width mismatch");
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(b.row(0)) {
                *o += bv;
            }
        }
        self.binary(a, bias, out, Op::AddBiasRow(a, bias))
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.unary(a, value, Op::Transpose(a))
    }

    /// Vertical concatenation; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Matrix::zeros(total, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            for i in 0..m.rows() {
                out.row_mut(offset + i).copy_from_slice(m.row(i));
            }
            offset += m.rows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        assert!(!idx.is_empty());
        let m = self.value(a);
        let mut out = Matrix::zeros(idx.len(), m.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(m.row(i));
        }
        self.unary(a, out, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows(), 1, "repeat_rows takes a row vector");
        let mut out = Matrix::zeros(rows, m.cols());
        for i in 0..rows {
            out.row_mut(i).copy_from_slice(m.row(0));
        }
        self.unary(a, out, Op::RepeatRows(a))
    }

    pub fn select_elem(&mut self, a: Var, i: usize, j: usize) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).get(i, j)]);
        self.unary(a, value, Op::SelectElem(a, i, j))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        self.unary(a, value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = (m.rows() * m.cols()) as f64;
        let value = Matrix::from_vec(1, 1, vec![m.sum() / n]);
        self.unary(a, value, Op::MeanAll(a))
    }

    /// Cosine similarity of two equal-shaped matrices viewed as flat vectors.
    /// Returns 0 with zero gradient if either side has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let value = Matrix::from_vec(
            1,
            1,
            vec![crate::matrix::cosine_guarded(
                self.value(a).data(),
                self.value(b).data(),
            )],
        );
        self.binary(a, b, value, Op::Cosine(a, b))
    }

    /// Scales the whole matrix to unit Frobenius/L2 norm (zero stays zero).
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = crate::matrix::l2_norm(m.data());
        let value = if n > 0.0 { m.scale(1.0 / n) } else { m.clone() };
        self.unary(a, value, Op::L2Normalize(a))
    }

    /// Label-smoothed cross-entropy from a 1xC logits row:
    /// `-(1-alpha) log p_target - (alpha/C) sum_c log p_c`.
    pub fn smoothed_ce_logits(&mut self, logits: Var, target: usize, alpha: f64) -> Var {
        let m = self.value(logits);
        assert_eq!(m.rows(), 1, "logits must be a row vector");
        let c = m.cols();
        assert!(target < c, "target class out of range");
        assert!((0.0..1.0).contains(&alpha), "alpha must be in [0,1)");
        let log_p = log_softmax_row(m.row(0));
        let mut loss = -(1.0 - alpha) * log_p[target];
        let smooth: f64 = log_p.iter().sum();
        loss -= alpha / c as f64 * smooth;
        let value = Matrix::from_vec(1, 1, vec![loss]);
        self.unary(
            logits,
            value,
            Op::SmoothedCeLogits {
                logits,
                target,
                alpha,
            },
        )
    }

    /// Mean binary cross-entropy computed stably from logits.
    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: &[f64]) -> Var {
        let m = self.value(logits);
        assert_eq!(
            m.rows() * m.cols(),
            targets.len(),
            "targets length mismatch"
        );
        let mut loss = 0.0;
        for (&o, &y) in m.data().iter().zip(targets.iter()) {
            loss += o.max(0.0) - o * y + (-o.abs()).exp().ln_1p();
        }
        loss /= targets.len() as f64;
        let value = Matrix::from_vec(1, 1, vec![loss]);
        self.unary(
            logits,
            value,
            Op::BceWithLogitsMean {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Backpropagates from a scalar loss node; adjoints are populated for
    /// every gradient-tracked node reachable from it.
    pub fn backward(&self, loss: Var) -> Grads {
        let lm = self.value(loss);
        assert!(
            lm.rows() == 1 && lm.cols() == 1,
            "backward requires a scalar loss node"
        );
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Grads { adj }
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(a) => a.add_scaled_assign(&delta, 1.0),
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&self, idx: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let da = g.matmul_bt(self.value(b));
                    self.accumulate(adj, a, da);
                }
                if self.needs(b) {
                    let db = self.value(a).matmul_tb(g);
                    self.accumulate(adj, b, db);
                }
            }
            Op::MatmulBt(a, b) => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let da = g.matmul(self.value(b));
                    self.accumulate(adj, a, da);
                }
                if self.needs(b) {
                    let db = g.matmul_tb(self.value(a));
                    self.accumulate(adj, b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.scale(-1.0));
            }
            Op::Hadamard(a, b) => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    self.accumulate(adj, a, g.hadamard(self.value(b)));
                }
                if self.needs(b) {
                    self.accumulate(adj, b, g.hadamard(self.value(a)));
                }
            }
            Op::ScaleConst(a, c) => self.accumulate(adj, *a, g.scale(*c)),
            Op::AddConst(a) => self.accumulate(adj, *a, g.clone()),
            Op::MulScalar(a, s) => {
                let (a, s) = (*a, *s);
                let sv = self.value(s).scalar();
                if self.needs(a) {
                    self.accumulate(adj, a, g.scale(sv));
                }
                if self.needs(s) {
                    let ds = g.hadamard(self.value(a)).sum();
                    self.accumulate(adj, s, Matrix::from_vec(1, 1, vec![ds]));
                }
            }
            Op::DivScalar(a, s) => {
                let (a, s) = (*a, *s);
                let sv = self.value(s).scalar();
                if self.needs(a) {
                    self.accumulate(adj, a, g.scale(1.0 / sv));
                }
                if self.needs(s) {
                    let ds = -g.hadamard(self.value(a)).sum() / (sv * sv);
                    self.accumulate(adj, s, Matrix::from_vec(1, 1, vec![ds]));
                }
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(adj, *a, g.hadamard(&mask));
            }
            Op::Abs(a) => {
                let sign = self.value(*a).map(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                self.accumulate(adj, *a, g.hadamard(&sign));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let dy = y.map(|v| v * (1.0 - v));
                self.accumulate(adj, *a, g.hadamard(&dy));
            }
            Op::RowSoftmax(a) => {
                let p = &self.nodes[idx].value;
                let mut da = Matrix::zeros(p.rows(), p.cols());
                for i in 0..p.rows() {
                    let gp: f64 = g.row(i).iter().zip(p.row(i)).map(|(x, y)| x * y).sum();
                    for (o, (&gj, &pj)) in da
                        .row_mut(i)
                        .iter_mut()
                        .zip(g.row(i).iter().zip(p.row(i)))
                    {
                        *o = pj * (gj - gp);
                    }
                }
                self.accumulate(adj, *a, da);
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let y = &self.nodes[idx].value;
                let mut da = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let r: f64 = x.row(i).iter().sum();
                    if r == 0.0 {
                        continue; // fallback row is locally constant
                    }
                    let gy: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for (o, &gj) in da.row_mut(i).iter_mut().zip(g.row(i)) {
                        *o = (gj - gy) / r;
                    }
                }
                self.accumulate(adj, *a, da);
            }
            Op::AddBiasRow(a, bias) => {
                let (a, bias) = (*a, *bias);
                if self.needs(a) {
                    self.accumulate(adj, a, g.clone());
                }
                if self.needs(bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &gv) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                    self.accumulate(adj, bias, db);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let m = self.value(p);
                    if self.needs(p) {
                        let mut dp = Matrix::zeros(m.rows(), m.cols());
                        for i in 0..m.rows() {
                            dp.row_mut(i)
                                .copy_from_slice(&g.row(i)[offset..offset + m.cols()]);
                        }
                        self.accumulate(adj, p, dp);
                    }
                    offset += m.cols();
                }
            }
            Op::Transpose(a) => {
                self.accumulate(adj, *a, g.transpose());
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let m = self.value(p);
                    if self.needs(p) {
                        let mut dp = Matrix::zeros(m.rows(), m.cols());
                        for i in 0..m.rows() {
                            dp.row_mut(i).copy_from_slice(g.row(offset + i));
                        }
                        self.accumulate(adj, p, dp);
                    }
                    offset += m.rows();
                }
            }
            Op::SelectRows(a, idx_list) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                for (r, &i) in idx_list.iter().enumerate() {
                    for (o, &gv) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                self.accumulate(adj, *a, da);
            }
            Op::RepeatRows(a) => {
                let mut da = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &gv) in da.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += gv;
                    }
                }
                self.accumulate(adj, *a, da);
            }
            Op::SelectElem(a, i, j) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                da.set(*i, *j, g.scalar());
                self.accumulate(adj, *a, da);
            }
            Op::SumAll(a) => {
                let m = self.value(*a);
                let da = Matrix::from_fn(m.rows(), m.cols(), |_, _| g.scalar());
                self.accumulate(adj, *a, da);
            }
            Op::MeanAll(a) => {
                let m = self.value(*a);
                let n = (m.rows() * m.cols()) as f64;
                let da = Matrix::from_fn(m.rows(), m.cols(), |_, _| g.scalar() / n);
                self.accumulate(adj, *a, da);
            }
            Op::Cosine(a, b) => {
                let (a, b) = (*a, *b);
                let u = self.value(a);
                let v = self.value(b);
                let nu = crate::matrix::l2_norm(u.data());
                let nv = crate::matrix::l2_norm(v.data());
                if nu <= crate::matrix::COSINE_NORM_EPS || nv <= crate::matrix::COSINE_NORM_EPS {
                    return;
                }
                let c = self.nodes[idx].value.scalar();
                let gs = g.scalar();
                if self.needs(a) {
                    let mut da = v.scale(1.0 / (nu * nv));
                    da.add_scaled_assign(u, -c / (nu * nu));
                    self.accumulate(adj, a, da.scale(gs));
                }
                if self.needs(b) {
                    let mut db = u.scale(1.0 / (nu * nv));
                    db.add_scaled_assign(v, -c / (nv * nv));
                    self.accumulate(adj, b, db.scale(gs));
                }
            }
            Op::L2Normalize(a) => {
                let x = self.value(*a);
                let n = crate::matrix::l2_norm(x.data());
                if n == 0.0 {
                    return;
                }
                let y = &self.nodes[idx].value;
                let gy: f64 = g
                    .data()
                    .iter()
                    .zip(y.data().iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let mut da = g.clone();
                da.add_scaled_assign(y, -gy);
                self.accumulate(adj, *a, da.scale(1.0 / n));
            }
            Op::SmoothedCeLogits {
                logits,
                target,
                alpha,
            } => {
                let m = self.value(*logits);
                let c = m.cols();
                let p = crate::matrix::softmax(m.row(0), 1.0);
                let gs = g.scalar();
                let mut da = Matrix::zeros(1, c);
                for (j, o) in da.row_mut(0).iter_mut().enumerate() {
                    let t = if j == *target { 1.0 - alpha } else { 0.0 } + alpha / c as f64;
                    *o = gs * (p[j] - t);
                }
                self.accumulate(adj, *logits, da);
            }
            Op::BceWithLogitsMean { logits, targets } => {
                let m = self.value(*logits);
                let n = targets.len() as f64;
                let gs = g.scalar();
                let mut da = m.clone();
                for (o, &y) in da.data_mut().iter_mut().zip(targets.iter()) {
                    *o = gs * (sigmoid(*o) - y) / n;
                }
                self.accumulate(adj, *logits, da);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_row(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    v.iter().map(|&x| x - lse).collect()
}
