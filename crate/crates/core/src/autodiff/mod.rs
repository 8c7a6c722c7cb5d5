//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! Operations are recorded on a [`Tape`] in topological order; [`Tape::backward`]
//! replays them in reverse. The op set is exactly what the model forward pass
//! needs: matmul, sparse propagation, elementwise arithmetic, ReLU, row softmax,
//! masked fill, row gather/concat, dropout, clamped logs and reductions.

mod adam;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use params::ParamRegistry;

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sparse::Csr;
use crate::tensor::Tensor;

/// Fill value for masked attention logits. exp(x - max) underflows to exactly
/// zero for any realistic unmasked max, so masked entries get weight 0.0.
const MASK_FILL: f64 = -1.0e30;

/// Probability clamp used by the log ops feeding binary cross-entropy.
const PROB_EPS: f64 = 1.0e-12;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<R: Real> {
    Leaf,
    MatMul { a: usize, b: usize },
    /// y = a . b^T
    MatMulNt { a: usize, b: usize },
    /// y = p . h with constant sparse p; only p^T is needed for backward.
    SpMm { pt: Rc<Csr<R>>, h: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// y[i,:] = a[i,:] + bias[0,:]
    AddRow { a: usize, bias: usize },
    Scale { a: usize, c: R },
    Relu { a: usize },
    RowSoftmax { a: usize },
    /// Entries where keep[i] is false are replaced by MASK_FILL.
    MaskedFill { a: usize, keep: Rc<Vec<bool>> },
    MulConst { a: usize, m: Rc<Tensor<R>> },
    GatherRows { table: usize, idx: Rc<Vec<usize>> },
    ConcatRows { parts: Vec<(usize, usize)> },
    Reshape { a: usize },
    SliceCols { a: usize, start: usize },
    ConcatCols { parts: Vec<(usize, usize)> },
    Dropout { a: usize, mask: Rc<Vec<R>> },
    LnClamped { a: usize },
    LnOneMinusClamped { a: usize },
    Sum { a: usize },
}

struct Node<R: Real> {
    value: Tensor<R>,
    op: Op<R>,
}

pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads[v.0].take()
    }
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input node. Parameters and batch constants enter here.
    pub fn leaf(&mut self, value: Tensor<R>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::non_finite("tape leaf"));
        }
        Ok(self.push(value, Op::Leaf))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul { a: a.0, b: b.0 }))
    }

    /// `a . b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatMulNt { a: a.0, b: b.0 }))
    }

    /// Constant sparse matrix times tape node.
    pub fn spmm(&mut self, p: &Rc<Csr<R>>, pt: &Rc<Csr<R>>, h: Var) -> Result<Var> {
        if p.ncols() != self.value(h).rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                lhs: format!("[{}, {}]", p.nrows(), p.ncols()),
                rhs: format!("{:?}", self.value(h).shape()),
            });
        }
        let v = p.matmul_dense(self.value(h));
        Ok(self.push(
            v,
            Op::SpMm {
                pt: Rc::clone(pt),
                h: h.0,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Broadcasts a 1 x n bias over every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: format!("{:?}", av.shape()),
                rhs: format!("{:?}", bv.shape()),
            });
        }
        let n = av.cols();
        let mut out = av.clone();
        let brow: Vec<R> = bv.row(0).to_vec();
        for r in 0..out.rows() {
            let orow = &mut out.data_mut()[r * n..(r + 1) * n];
            for j in 0..n {
                orow[j] += brow[j];
            }
        }
        Ok(self.push(out, Op::AddRow { a: a.0, bias: bias.0 }))
    }

    pub fn scale(&mut self, a: Var, c: R) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale { a: a.0, c })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > R::zero() { x } else { R::zero() });
        self.push(v, Op::Relu { a: a.0 })
    }

    /// Softmax over each row. Entries at exactly `MASK_FILL` (from
    /// [`Tape::masked_fill`]) come out as exact zeros.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(m, n);
        for r in 0..m {
            let row = av.row(r);
            let max = row.iter().fold(R::neg_infinity(), |acc, &v| acc.max(v));
            let mut sum = R::zero();
            let orow = &mut out.data_mut()[r * n..(r + 1) * n];
            for j in 0..n {
                let e = (row[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::RowSoftmax { a: a.0 })
    }

    /// Replaces entries whose keep flag is false with a large negative value.
    pub fn masked_fill(&mut self, a: Var, keep: Rc<Vec<bool>>) -> Result<Var> {
        let av = self.value(a);
        if keep.len() != av.numel() {
            return Err(Error::ShapeMismatch {
                op: "masked_fill",
                lhs: format!("{:?}", av.shape()),
                rhs: format!("mask len {}", keep.len()),
            });
        }
        let fill = R::from_f64_lossy(MASK_FILL);
        let mut out = av.clone();
        for (v, &k) in out.data_mut().iter_mut().zip(keep.iter()) {
            if !k {
                *v = fill;
            }
        }
        Ok(self.push(out, Op::MaskedFill { a: a.0, keep }))
    }

    /// Elementwise product with a constant tensor (masks, one-hot targets).
    pub fn mul_const(&mut self, a: Var, m: Rc<Tensor<R>>) -> Result<Var> {
        let v = self.value(a).mul(&m)?;
        Ok(self.push(v, Op::MulConst { a: a.0, m }))
    }

    /// Embedding-style row lookup; backward scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let tv = self.value(table);
        let n = tv.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= tv.rows()) {
            return Err(Error::data(format!(
                "gather_rows index {} out of range for table with {} rows",
                bad,
                tv.rows()
            )));
        }
        let mut out = Tensor::zeros(idx.len(), n);
        for (r, &i) in idx.iter().enumerate() {
            out.data_mut()[r * n..(r + 1) * n].copy_from_slice(tv.row(i));
        }
        Ok(self.push(out, Op::GatherRows { table: table.0, idx }))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: format!("[., {}]", n),
                    rhs: format!("{:?}", pv.shape()),
                });
            }
            rows += pv.rows();
        }
        let mut out = Tensor::zeros(rows, n);
        let mut off = 0;
        let mut meta = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p).clone();
            let r = pv.rows();
            out.data_mut()[off * n..(off + r) * n].copy_from_slice(pv.data());
            off += r;
            meta.push((p.0, r));
        }
        Ok(self.push(out, Op::ConcatRows { parts: meta }))
    }

    /// Reinterprets the buffer with a new 2-D shape (row-major, free).
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if rows * cols != av.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: format!("{:?}", av.shape()),
                rhs: format!("[{}, {}]", rows, cols),
            });
        }
        let out = Tensor::new(vec![rows, cols], av.data().to_vec())?;
        Ok(self.push(out, Op::Reshape { a: a.0 }))
    }

    /// Column slice `a[:, start..start+len]` (multi-head attention splits).
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: format!("{:?}", av.shape()),
                rhs: format!("cols {}..{}", start, start + len),
            });
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(m, len);
        for r in 0..m {
            out.data_mut()[r * len..(r + 1) * len]
                .copy_from_slice(&av.data()[r * n + start..r * n + start + len]);
        }
        Ok(self.push(out, Op::SliceCols { a: a.0, start }))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: format!("[{}, .]", m),
                    rhs: format!("{:?}", pv.shape()),
                });
            }
            cols += pv.cols();
        }
        let mut out = Tensor::zeros(m, cols);
        let mut off = 0;
        let mut meta = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p).clone();
            let w = pv.cols();
            for r in 0..m {
                out.data_mut()[r * cols + off..r * cols + off + w]
                    .copy_from_slice(&pv.data()[r * w..(r + 1) * w]);
            }
            off += w;
            meta.push((p.0, w));
        }
        Ok(self.push(out, Op::ConcatCols { parts: meta }))
    }

    /// Inverted dropout: kept entries scale by 1/(1-rate), so eval is identity.
    pub fn dropout(
        &mut self,
        a: Var,
        rate: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {} outside [0,1)", rate)));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = R::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Rc<Vec<R>> = Rc::new(
            (0..self.value(a).numel())
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        R::zero()
                    } else {
                        keep
                    }
                })
                .collect(),
        );
        let av = self.value(a);
        let mut out = av.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(mask.iter()) {
            *v *= m;
        }
        Ok(self.push(out, Op::Dropout { a: a.0, mask }))
    }

    /// `ln(clamp(x, eps, 1-eps))`; gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var) -> Var {
        let lo = R::from_f64_lossy(PROB_EPS);
        let hi = R::one() - lo;
        let v = self.value(a).map(|x| x.max(lo).min(hi).ln());
        self.push(v, Op::LnClamped { a: a.0 })
    }

    /// `ln(1 - clamp(x, eps, 1-eps))`.
    pub fn ln_one_minus_clamped(&mut self, a: Var) -> Var {
        let lo = R::from_f64_lossy(PROB_EPS);
        let hi = R::one() - lo;
        let v = self.value(a).map(|x| (R::one() - x.max(lo).min(hi)).ln());
        self.push(v, Op::LnOneMinusClamped { a: a.0 })
    }

    /// Sums all entries into a 1x1 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum { a: a.0 })
    }

    /// Reverse pass from a scalar loss. Nodes unreachable from the loss get
    /// no gradient entry; callers treat that as zero.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::data(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(R::one()));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        i: usize,
        g: &Tensor<R>,
        grads: &mut [Option<Tensor<R>>],
    ) -> Result<()> {
        let add_to = |grads: &mut [Option<Tensor<R>>], idx: usize, delta: Tensor<R>| {
            match &mut grads[idx] {
                Some(t) => t.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                add_to(grads, *a, g.matmul_nt(bv)?);
                add_to(grads, *b, av.matmul_tn(g)?);
            }
            Op::MatMulNt { a, b } => {
                // y = a b^T: da = g b, db = g^T a
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                add_to(grads, *a, g.matmul(bv)?);
                add_to(grads, *b, g.matmul_tn(av)?);
            }
            Op::SpMm { pt, h } => {
                add_to(grads, *h, pt.matmul_dense(g));
            }
            Op::Add { a, b } => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.scale(-R::one()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                add_to(grads, *a, g.mul(bv)?);
                add_to(grads, *b, g.mul(av)?);
            }
            Op::AddRow { a, bias } => {
                add_to(grads, *a, g.clone());
                let n = g.cols();
                let mut db = Tensor::zeros(1, n);
                for r in 0..g.rows() {
                    let grow = g.row(r).to_vec();
                    for j in 0..n {
                        db.data_mut()[j] += grow[j];
                    }
                }
                add_to(grads, *bias, db);
            }
            Op::Scale { a, c } => {
                add_to(grads, *a, g.scale(*c));
            }
            Op::Relu { a } => {
                let av = &self.nodes[*a].value;
                let mut da = g.clone();
                for (d, &x) in da.data_mut().iter_mut().zip(av.data()) {
                    if x <= R::zero() {
                        *d = R::zero();
                    }
                }
                add_to(grads, *a, da);
            }
            Op::RowSoftmax { a } => {
                // dx = y * (g - <g, y>_row)
                let y = &self.nodes[i].value;
                let (m, n) = (y.rows(), y.cols());
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: R = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    let drow = &mut da.data_mut()[r * n..(r + 1) * n];
                    for j in 0..n {
                        drow[j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::MaskedFill { a, keep } => {
                let mut da = g.clone();
                for (d, &k) in da.data_mut().iter_mut().zip(keep.iter()) {
                    if !k {
                        *d = R::zero();
                    }
                }
                add_to(grads, *a, da);
            }
            Op::MulConst { a, m } => {
                add_to(grads, *a, g.mul(m)?);
            }
            Op::GatherRows { table, idx } => {
                let tv = &self.nodes[*table].value;
                let n = tv.cols();
                let mut dt = Tensor::zeros(tv.rows(), n);
                for (r, &src) in idx.iter().enumerate() {
                    let grow = g.row(r).to_vec();
                    let drow = &mut dt.data_mut()[src * n..(src + 1) * n];
                    for j in 0..n {
                        drow[j] += grow[j];
                    }
                }
                add_to(grads, *table, dt);
            }
            Op::ConcatRows { parts } => {
                let n = g.cols();
                let mut off = 0;
                for &(p, rows) in parts {
                    let mut dp = Tensor::zeros(rows, n);
                    dp.data_mut()
                        .copy_from_slice(&g.data()[off * n..(off + rows) * n]);
                    add_to(grads, p, dp);
                    off += rows;
                }
            }
            Op::Reshape { a } => {
                let ashape = self.nodes[*a].value.shape().to_vec();
                let da = Tensor::new(ashape, g.data().to_vec())?;
                add_to(grads, *a, da);
            }
            Op::SliceCols { a, start } => {
                let av = &self.nodes[*a].value;
                let (m, n, w) = (av.rows(), av.cols(), g.cols());
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    da.data_mut()[r * n + start..r * n + start + w]
                        .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                add_to(grads, *a, da);
            }
            Op::ConcatCols { parts } => {
                let m = g.rows();
                let n = g.cols();
                let mut off = 0;
                for &(p, w) in parts {
                    let mut dp = Tensor::zeros(m, w);
                    for r in 0..m {
                        dp.data_mut()[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data()[r * n + off..r * n + off + w]);
                    }
                    add_to(grads, p, dp);
                    off += w;
                }
            }
            Op::Dropout { a, mask } => {
                let mut da = g.clone();
                for (d, &m) in da.data_mut().iter_mut().zip(mask.iter()) {
                    *d *= m;
                }
                add_to(grads, *a, da);
            }
            Op::LnClamped { a } => {
                let av = &self.nodes[*a].value;
                let lo = R::from_f64_lossy(PROB_EPS);
                let hi = R::one() - lo;
                let mut da = g.clone();
                for (d, &x) in da.data_mut().iter_mut().zip(av.data()) {
                    *d = if x >= lo && x <= hi { *d / x } else { R::zero() };
                }
                add_to(grads, *a, da);
            }
            Op::LnOneMinusClamped { a } => {
                let av = &self.nodes[*a].value;
                let lo = R::from_f64_lossy(PROB_EPS);
                let hi = R::one() - lo;
                let mut da = g.clone();
                for (d, &x) in da.data_mut().iter_mut().zip(av.data()) {
                    *d = if x >= lo && x <= hi {
                        -*d / (R::one() - x)
                    } else {
                        R::zero()
                    };
                }
                add_to(grads, *a, da);
            }
            Op::Sum { a } => {
                let av = &self.nodes[*a].value;
                let gs = g.data()[0];
                add_to(grads, *a, Tensor::full(av.rows(), av.cols(), gs));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    type T = Tensor<f64>;

    fn scalar_sum(tape: &mut Tape<f64>, v: Var) -> Var {
        tape.sum(v)
    }

    #[test]
    fn sum_of_matrix_grad_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(T::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let loss = scalar_sum(&mut tape, w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap(), &T::full(2, 2, 1.0));
    }

    #[test]
    fn relu_subgradient_zero_at_negative() {
        let mut tape = Tape::new();
        let w = tape.leaf(T::from_rows(&[vec![-1.0, 2.0]])).unwrap();
        let r = tape.relu(w);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(T::from_rows(&[vec![0.0, 0.0, 0.0], vec![5.0, -3.0, 1.0]]))
            .unwrap();
        let y = tape.row_softmax(x);
        let yv = tape.value(y);
        for r in 0..2 {
            let s: f64 = yv.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(yv.row(r).iter().all(|&p| p > 0.0));
        }
        assert!((yv.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(T::from_rows(&[vec![1.0, 2.0, 3.0]])).unwrap();
        let m = tape
            .masked_fill(x, Rc::new(vec![true, true, false]))
            .unwrap();
        let y = tape.row_softmax(m);
        let yv = tape.value(y);
        assert_eq!(yv.get(0, 2), 0.0);
        let s: f64 = yv.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disconnected_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(T::scalar(1.0)).unwrap();
        let b = tape.leaf(T::scalar(2.0)).unwrap();
        let loss = tape.sum(a);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(b).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(T::zeros(2, 2)).unwrap();
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn leaf_rejects_nan() {
        let mut tape: Tape<f64> = Tape::new();
        assert!(tape.leaf(T::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = tape.leaf(T::from_rows(&[vec![1.0, -2.0, 3.0]])).unwrap();
        let d = tape.dropout(a, 0.5, false, &mut rng).unwrap();
        assert_eq!(d, a);
    }

    #[test]
    fn dropout_train_scales_kept_entries() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = tape.leaf(T::full(1, 1000, 1.0)).unwrap();
        let d = tape.dropout(a, 0.5, true, &mut rng).unwrap();
        for &v in tape.value(d).data() {
            assert!(v == 0.0 || v == 2.0);
        }
    }

    #[test]
    fn repeated_backward_is_bitwise_identical() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(T::from_rows(&[vec![0.3, -0.7], vec![0.1, 0.9]]))
            .unwrap();
        let b = tape
            .leaf(T::from_rows(&[vec![0.5, 0.2], vec![-0.4, 0.8]]))
            .unwrap();
        let c = tape.matmul(a, b).unwrap();
        let r = tape.relu(c);
        let loss = tape.sum(r);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1.wrt(a), g2.wrt(a));
        assert_eq!(g1.wrt(b), g2.wrt(b));
    }
}
