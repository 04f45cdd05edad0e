//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass together with its
//! output value. [`Tape::backward`] walks the record once in reverse order and
//! accumulates `d loss / d parameter` into the [`ParameterStore`] gradient
//! buffers. Values that feed several consumers receive the sum of all
//! contributions.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::params::{ParamId, ParameterStore};
use super::NnError;
use crate::matrix::Matrix;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u32,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    MulCol(usize, usize),
    DivCol(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Exp(usize),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    RowNorm(usize),
    RowSums(usize),
    ColMeans(usize),
    Sum(usize),
    Mean(usize),
    AbsSum(usize),
    Transpose(usize),
    GatherRows(usize, Vec<usize>),
    PickCols(usize, Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    /// Output = constant base with `out[dst] = src[src_idx]` for each pair.
    Scatter(usize, Vec<(usize, usize)>),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Operation record for one forward pass.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    macs: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, a: &Matrix, b: &Matrix) -> NnError {
    NnError::Dimension { op, lhs: a.shape(), rhs: b.shape() }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), macs: 0 }
    }

    /// Number of recorded operations (including leaves).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations performed by the forward pass so far.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Matrix {
        debug_assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).scalar()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var { idx: self.nodes.len() - 1, tape: self.id }
    }

    fn v(&self, v: Var) -> &Matrix {
        &self.nodes[v.idx].value
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records the current value of a trainable parameter.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.v(a), self.v(b));
        if av.cols() != bv.rows() {
            return Err(dim_err("matmul", av, bv));
        }
        let macs = (av.rows() * av.cols() * bv.cols()) as u64;
        let out = av.matmul(bv);
        self.macs += macs;
        Ok(self.push(out, Op::MatMul(a.idx, b.idx)))
    }

    /// `a + bias`, with a `1 x c` bias broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.v(a), self.v(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(dim_err("add_bias", av, bv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(a.idx, bias.idx)))
    }

    /// Affine map `x W + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, NnError> {
        let (av, bv) = (self.v(a), self.v(b));
        if av.shape() != bv.shape() {
            return Err(dim_err(name, av, bv));
        }
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Matrix::from_vec(av.rows(), av.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a.idx, b.idx)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a.idx, b.idx)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.macs += out.len() as u64;
        Ok(self.push(out, Op::Mul(a.idx, b.idx)))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_with("min", a, b, |x, y| if x <= y { x } else { y })?;
        Ok(self.push(out, Op::Min(a.idx, b.idx)))
    }

    /// `a[r, c] * s[r]` for a column vector `s`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var, NnError> {
        let (av, sv) = (self.v(a), self.v(s));
        if sv.cols() != 1 || sv.rows() != av.rows() {
            return Err(dim_err("mul_col", av, sv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let k = sv.as_slice()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= k);
        }
        self.macs += out.len() as u64;
        Ok(self.push(out, Op::MulCol(a.idx, s.idx)))
    }

    /// `a[r, c] / s[r]` for a column vector `s`.
    pub fn div_col(&mut self, a: Var, s: Var) -> Result<Var, NnError> {
        let (av, sv) = (self.v(a), self.v(s));
        if sv.cols() != 1 || sv.rows() != av.rows() {
            return Err(dim_err("div_col", av, sv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let k = sv.as_slice()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x /= k);
        }
        self.macs += out.len() as u64;
        Ok(self.push(out, Op::DivCol(a.idx, s.idx)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.v(a).map(|x| x * k);
        self.macs += out.len() as u64;
        self.push(out, Op::Scale(a.idx, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.v(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a.idx))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.v(a).map(libm::exp);
        self.push(out, Op::Exp(a.idx))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.v(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a.idx, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.v(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.macs += out.len() as u64;
        self.push(out, Op::SoftmaxRows(a.idx))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.v(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(row.iter().map(|&x| libm::exp(x - m)).sum::<f64>());
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a.idx))
    }

    /// Euclidean norm of each row, as an `r x 1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let av = self.v(a);
        let data = (0..av.rows()).map(|r| libm::sqrt(av.row(r).iter().map(|x| x * x).sum())).collect();
        let macs = av.len() as u64;
        let out = Matrix::from_vec(av.rows(), 1, data);
        self.macs += macs;
        self.push(out, Op::RowNorm(a.idx))
    }

    /// Sum of each row, as an `r x 1` column.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let av = self.v(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(av.rows(), 1, data);
        self.push(out, Op::RowSums(a.idx))
    }

    /// Mean over rows, as a `1 x c` row.
    pub fn col_means(&mut self, a: Var) -> Result<Var, NnError> {
        let av = self.v(a);
        if av.rows() == 0 {
            return Err(NnError::Empty("col_means"));
        }
        let mut out = Matrix::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, x) in out.as_mut_slice().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let n = av.rows() as f64;
        out.as_mut_slice().iter_mut().for_each(|x| *x /= n);
        Ok(self.push(out, Op::ColMeans(a.idx)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.v(a).sum());
        self.push(out, Op::Sum(a.idx))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NnError> {
        let av = self.v(a);
        if av.is_empty() {
            return Err(NnError::Empty("mean"));
        }
        let out = Matrix::filled(1, 1, av.sum() / av.len() as f64);
        Ok(self.push(out, Op::Mean(a.idx)))
    }

    /// L1 norm of all entries.
    pub fn abs_sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.v(a).as_slice().iter().map(|x| x.abs()).sum());
        self.push(out, Op::AbsSum(a.idx))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.v(a).transpose();
        self.push(out, Op::Transpose(a.idx))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NnError> {
        let av = self.v(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= av.rows()) {
            return Err(NnError::Index { op: "gather_rows", index: bad, len: av.rows() });
        }
        let mut data = Vec::with_capacity(rows.len() * av.cols());
        for &r in rows {
            data.extend_from_slice(av.row(r));
        }
        let out = Matrix::from_vec(rows.len(), av.cols(), data);
        Ok(self.push(out, Op::GatherRows(a.idx, rows.to_vec())))
    }

    /// Picks `a[r, cols[r]]` for every row, as an `r x 1` column.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var, NnError> {
        let av = self.v(a);
        if cols.len() != av.rows() {
            return Err(NnError::Index { op: "pick_cols", index: cols.len(), len: av.rows() });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= av.cols()) {
            return Err(NnError::Index { op: "pick_cols", index: bad, len: av.cols() });
        }
        let data = cols.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect();
        let out = Matrix::from_vec(av.rows(), 1, data);
        Ok(self.push(out, Op::PickCols(a.idx, cols.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let av = self.v(a);
        if start + len > av.rows() {
            return Err(NnError::Index { op: "slice_rows", index: start + len, len: av.rows() });
        }
        let c = av.cols();
        let out = Matrix::from_vec(len, c, av.as_slice()[start * c..(start + len) * c].to_vec());
        Ok(self.push(out, Op::SliceRows(a.idx, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let av = self.v(a);
        if start + len > av.cols() {
            return Err(NnError::Index { op: "slice_cols", index: start + len, len: av.cols() });
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Matrix::from_vec(av.rows(), len, data);
        Ok(self.push(out, Op::SliceCols(a.idx, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts.first().ok_or(NnError::Empty("concat_rows"))?;
        let cols = self.v(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.v(*p);
            if pv.cols() != cols {
                return Err(dim_err("concat_rows", self.v(*first), pv));
            }
            data.extend_from_slice(pv.as_slice());
            rows += pv.rows();
        }
        let out = Matrix::from_vec(rows, cols, data);
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.idx).collect())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts.first().ok_or(NnError::Empty("concat_cols"))?;
        let rows = self.v(*first).rows();
        for p in parts {
            if self.v(*p).rows() != rows {
                return Err(dim_err("concat_cols", self.v(*first), self.v(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.v(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let pv = self.v(*p);
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
                off += pv.cols();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.idx).collect())))
    }

    /// Builds `base` with selected entries replaced by entries of `src`.
    ///
    /// `map` holds `(src_flat_index, dst_flat_index)` pairs in row-major order.
    /// Each destination may appear at most once.
    pub fn scatter(&mut self, src: Var, base: Matrix, map: Vec<(usize, usize)>) -> Result<Var, NnError> {
        let sv = self.v(src);
        let mut out = base;
        for &(s, d) in &map {
            if s >= sv.len() {
                return Err(NnError::Index { op: "scatter", index: s, len: sv.len() });
            }
            if d >= out.len() {
                return Err(NnError::Index { op: "scatter", index: d, len: out.len() });
            }
            out.as_mut_slice()[d] = sv.as_slice()[s];
        }
        Ok(self.push(out, Op::Scatter(src.idx, map)))
    }

    /// Mean squared error between two equally shaped values.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Reverse pass from a `1 x 1` loss into the store's gradient buffers.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<(), NnError> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(NnError::Tape("loss was not recorded on this tape"));
        }
        if self.nodes[loss.idx].value.shape() != (1, 1) {
            return Err(NnError::Tape("loss must be a 1x1 value"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.grad_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut grads, *a, g.matmul_t(bv));
                    accumulate(&mut grads, *b, av.t_matmul(&g));
                }
                Op::AddBias(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut grads, *a, hadamard(&g, bv));
                    accumulate(&mut grads, *b, hadamard(&g, av));
                }
                Op::Min(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let mut ga = g.clone();
                    let mut gb = g;
                    for k in 0..ga.len() {
                        if av.as_slice()[k] <= bv.as_slice()[k] {
                            gb.as_mut_slice()[k] = 0.0;
                        } else {
                            ga.as_mut_slice()[k] = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulCol(a, s) => {
                    let (av, sv) = (&self.nodes[*a].value, &self.nodes[*s].value);
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(sv.rows(), 1);
                    for r in 0..g.rows() {
                        let k = sv.as_slice()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= k);
                        gs.as_mut_slice()[r] = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *s, gs);
                }
                Op::DivCol(a, s) => {
                    let sv = &self.nodes[*s].value;
                    let out = &node.value;
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(sv.rows(), 1);
                    for r in 0..g.rows() {
                        let k = sv.as_slice()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x /= k);
                        gs.as_mut_slice()[r] = -g.row(r).iter().zip(out.row(r)).map(|(x, y)| x * y).sum::<f64>() / k;
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *s, gs);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.map(|x| x * k)),
                Op::Relu(a) => {
                    let av = &self.nodes[*a].value;
                    let mut ga = g;
                    for (x, &v) in ga.as_mut_slice().iter_mut().zip(av.as_slice()) {
                        if v <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, hadamard(&g, &node.value)),
                Op::Clamp(a, lo, hi) => {
                    let av = &self.nodes[*a].value;
                    let mut ga = g;
                    for (x, &v) in ga.as_mut_slice().iter_mut().zip(av.as_slice()) {
                        if v < *lo || v > *hi {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, g.get(r, c) - libm::exp(y.get(r, c)) * gsum);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowNorm(a) => {
                    let av = &self.nodes[*a].value;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let n = node.value.as_slice()[r];
                        if n > 0.0 {
                            let k = g.as_slice()[r] / n;
                            for (o, x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                                *o = k * x;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowSums(a) => {
                    let av = &self.nodes[*a].value;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        ga.row_mut(r).fill(g.as_slice()[r]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ColMeans(a) => {
                    let av = &self.nodes[*a].value;
                    let n = av.rows() as f64;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.as_slice()) {
                            *o = x / n;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.scalar()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.scalar() / (r * c) as f64));
                }
                Op::AbsSum(a) => {
                    let k = g.scalar();
                    let ga = self.nodes[*a].value.map(|x| {
                        if x > 0.0 {
                            k
                        } else if x < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::GatherRows(a, rows) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &src) in rows.iter().enumerate() {
                        for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::PickCols(a, cols) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (row, &col) in cols.iter().enumerate() {
                        ga.set(row, col, g.as_slice()[row]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    ga.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for row in 0..r {
                        ga.row_mut(row)[*start..start + g.cols()].copy_from_slice(g.row(row));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.nodes[p].value.shape();
                        let gp = Matrix::from_vec(r, c, g.as_slice()[off..off + r * c].to_vec());
                        off += r * c;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.nodes[p].value.shape();
                        let mut gp = Matrix::zeros(r, c);
                        for row in 0..r {
                            gp.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                        }
                        off += c;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::Scatter(src, map) => {
                    let (r, c) = self.nodes[*src].value.shape();
                    let mut gs = Matrix::zeros(r, c);
                    for &(s, d) in map {
                        gs.as_mut_slice()[s] += g.as_slice()[d];
                    }
                    accumulate(&mut grads, *src, gs);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// Numerically stable in-place softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - m);
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Matrix)]) -> (ParameterStore, Vec<ParamId>) {
        let mut s = ParameterStore::new();
        let ids = values.iter().map(|(n, m)| s.add(n, m.clone()).unwrap()).collect();
        (s, ids)
    }

    #[test]
    fn identity_loss_has_unit_gradient() {
        let (mut s, ids) = store_with(&[("w", Matrix::filled(1, 1, 0.7))]);
        let mut t = Tape::new();
        let w = t.param(&s, ids[0]);
        t.backward(w, &mut s).unwrap();
        assert_eq!(s.grad(ids[0]).scalar(), 1.0);
    }

    #[test]
    fn square_gradient_is_two_w() {
        let (mut s, ids) = store_with(&[("w", Matrix::filled(1, 1, 3.0))]);
        let mut t = Tape::new();
        let w = t.param(&s, ids[0]);
        let sq = t.mul(w, w).unwrap();
        assert_eq!(t.scalar(sq), 9.0);
        t.backward(sq, &mut s).unwrap();
        assert_eq!(s.grad(ids[0]).scalar(), 6.0);
    }

    #[test]
    fn fan_out_sums_contributions() {
        let (mut s, ids) = store_with(&[("w", Matrix::filled(1, 1, -1.25))]);
        let mut t = Tape::new();
        let w = t.param(&s, ids[0]);
        let ww = t.add(w, w).unwrap();
        t.backward(ww, &mut s).unwrap();
        assert_eq!(s.grad(ids[0]).scalar(), 2.0);
    }

    #[test]
    fn loss_from_other_tape_is_rejected() {
        let (mut s, ids) = store_with(&[("w", Matrix::filled(1, 1, 1.0))]);
        let mut a = Tape::new();
        let b = Tape::new();
        let w = a.param(&s, ids[0]);
        assert!(matches!(b.backward(w, &mut s), Err(NnError::Tape(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (mut s, ids) = store_with(&[("w", Matrix::zeros(2, 2))]);
        let mut t = Tape::new();
        let w = t.param(&s, ids[0]);
        assert!(matches!(t.backward(w, &mut s), Err(NnError::Tape(_))));
    }

    #[test]
    fn dense_shape_mismatch_names_operands() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 3));
        let w = t.constant(Matrix::zeros(2, 2));
        let b = t.constant(Matrix::zeros(1, 2));
        let err = t.dense(x, w, b).unwrap_err();
        assert_eq!(err, NnError::Dimension { op: "matmul", lhs: (1, 3), rhs: (2, 2) });
    }

    #[test]
    fn dense_forward_examples() {
        let mut t = Tape::new();
        let w_any = t.constant(Matrix::from_rows(&[&[3.0, -1.0], &[7.0, 2.0]]));
        let zero = t.constant(Matrix::row_vector(&[0.0, 0.0]));
        let b12 = t.constant(Matrix::row_vector(&[1.0, 2.0]));
        let y = t.dense(zero, w_any, b12).unwrap();
        assert_eq!(t.value(y).as_slice(), &[1.0, 2.0]);

        let x10 = t.constant(Matrix::row_vector(&[1.0, 0.0]));
        let eye = t.constant(Matrix::identity(2));
        let y = t.dense(x10, eye, zero).unwrap();
        assert_eq!(t.value(y).as_slice(), &[1.0, 0.0]);

        let x12 = t.constant(Matrix::row_vector(&[1.0, 2.0]));
        let ones = t.constant(Matrix::filled(2, 2, 1.0));
        let y = t.dense(x12, ones, zero).unwrap();
        assert_eq!(t.value(y).as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn min_routes_gradient_to_smaller_branch() {
        let (mut s, ids) =
            store_with(&[("a", Matrix::row_vector(&[1.0, 5.0])), ("b", Matrix::row_vector(&[2.0, 3.0]))]);
        let mut t = Tape::new();
        let a = t.param(&s, ids[0]);
        let b = t.param(&s, ids[1]);
        let m = t.min(a, b).unwrap();
        let l = t.sum(m);
        t.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(ids[0]).as_slice(), &[1.0, 0.0]);
        assert_eq!(s.grad(ids[1]).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn mac_count_tracks_matmul() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(4, 8));
        let b = t.constant(Matrix::zeros(8, 3));
        t.matmul(a, b).unwrap();
        assert_eq!(t.mac_count(), 96);
    }
}
