//! Reverse-mode differentiation over a Wengert tape.
//!
//! A tape is single-threaded and owns every intermediate of one forward
//! pass; ops are recorded in execution order (so inputs always precede
//! their consumers) and replayed exactly once in reverse by `backward`.
//! Leaves snapshot their source tensor at registration, so later mutation
//! of the original cannot corrupt a recorded pass. Batch parallelism runs
//! one tape per prompt on disjoint data.

use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Exact bilinear unit evaluated alongside the feed-forward block:
/// `out[out_row, j] += coeff * u[a_row, j] * u[b_row, j]`.
///
/// Only explicit weight constructions create these; they are not part of
/// the learnable parameterization and never receive parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductUnit<S: Scalar> {
    pub a_row: usize,
    pub b_row: usize,
    pub out_row: usize,
    pub coeff: S,
}

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    /// c = op(a) * op(b) with optional transpositions.
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { a: Var, c: S },
    /// a + bias * 1^T, bias broadcast over columns.
    AddBiasCol { a: Var, bias: Var },
    Relu { a: Var },
    LeakyRelu { a: Var, slope: S },
    ColumnSoftmax { a: Var },
    GatherCols { a: Var, idx: Vec<usize> },
    NarrowCols { a: Var, start: usize, len: usize },
    ProductUnits { a: Var, units: Vec<ProductUnit<S>> },
    /// sum of squares of all entries (scalar output).
    SquareSumAll { a: Var },
    SumAll { a: Var },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    op: Op<S>,
    requires: bool,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a leaf, snapshotting value and `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        let req = t.requires_grad();
        self.push(t.clone(), Op::Leaf, req)
    }

    /// Register a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// a^T * b
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, true, false)
    }

    /// a * b^T
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let (m, ka) = if ta {
            (va.cols(), va.rows())
        } else {
            (va.rows(), va.cols())
        };
        let (kb, n) = if tb {
            (vb.cols(), vb.rows())
        } else {
            (vb.rows(), vb.cols())
        };
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out = gemm_ex(va, vb, ta, tb, m, ka, n);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Matmul { a, b, ta, tb }, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let out = Tensor::from_raw(data, va.shape().to_vec());
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Add { a, b }, req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| *x - *y)
            .collect();
        let out = Tensor::from_raw(data, va.shape().to_vec());
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Sub { a, b }, req))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| *x * c).collect();
        let out = Tensor::from_raw(data, va.shape().to_vec());
        let req = self.requires(a);
        self.push(out, Op::Scale { a, c }, req)
    }

    /// Broadcast a length-r bias over the columns of an r x c matrix.
    /// This is the only broadcasting the tape supports.
    pub fn add_bias_col(&mut self, a: Var, bias: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(bias);
        let (r, c) = (va.rows(), va.cols());
        if vb.len() != r || vb.rank() > 1 {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias_col",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut data = va.data().to_vec();
        for i in 0..r {
            let bv = vb.data()[i];
            for j in 0..c {
                data[i * c + j] += bv;
            }
        }
        let out = Tensor::from_raw(data, va.shape().to_vec());
        let req = self.requires(a) || self.requires(bias);
        Ok(self.push(out, Op::AddBiasCol { a, bias }, req))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x.max(S::zero())).collect();
        let out = Tensor::from_raw(data, va.shape().to_vec());
        let req = self.requires(a);
        self.push(out, Op::Relu { a }, req)
    }

    /// `max(x, slope*x)` with `slope` in (0,1).
    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var> {
        if slope <= S::zero() || slope >= S::one() {
            return Err(TensorError::Contract {
                op: "leaky_relu",
                msg: format!("slope must lie in (0,1), got {slope}"),
            });
        }
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .map(|x| if *x > S::zero() { *x } else { *x * slope })
            .collect();
        let out = Tensor::from_raw(data, va.shape().to_vec());
        let req = self.requires(a);
        Ok(self.push(out, Op::LeakyRelu { a, slope }, req))
    }

    /// Normalize each column to a probability vector (softmax over the key
    /// index). Stabilized by subtracting the column max, which is exact by
    /// shift invariance.
    pub fn column_softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        va.assert_finite("column_softmax")?;
        let out = column_softmax_plain(va);
        let req = self.requires(a);
        Ok(self.push(out, Op::ColumnSoftmax { a }, req))
    }

    pub fn gather_cols(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(TensorError::Contract {
                op: "gather_cols",
                msg: format!("column {bad} out of range for {c} columns"),
            });
        }
        let mut data = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            for &j in &idx {
                data.push(va.data()[i * c + j]);
            }
        }
        let out = Tensor::from_raw(data, vec![r, idx.len()]);
        let req = self.requires(a);
        Ok(self.push(out, Op::GatherCols { a, idx }, req))
    }

    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        if start + len > c {
            return Err(TensorError::Contract {
                op: "narrow_cols",
                msg: format!("range {start}..{} out of {c} columns", start + len),
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&va.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::from_raw(data, vec![r, len]);
        let req = self.requires(a);
        Ok(self.push(out, Op::NarrowCols { a, start, len }, req))
    }

    /// Evaluate exact bilinear units against `a`, producing a same-shape
    /// tensor that is zero outside the written rows.
    pub fn product_units(&mut self, a: Var, units: Vec<ProductUnit<S>>) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        for u in &units {
            if u.a_row >= r || u.b_row >= r || u.out_row >= r {
                return Err(TensorError::Contract {
                    op: "product_units",
                    msg: format!(
                        "unit rows ({}, {}, {}) out of {r} rows",
                        u.a_row, u.b_row, u.out_row
                    ),
                });
            }
        }
        let mut data = vec![S::zero(); r * c];
        for u in &units {
            for j in 0..c {
                data[u.out_row * c + j] +=
                    u.coeff * va.data()[u.a_row * c + j] * va.data()[u.b_row * c + j];
            }
        }
        let out = Tensor::from_raw(data, va.shape().to_vec());
        let req = self.requires(a);
        Ok(self.push(out, Op::ProductUnits { a, units }, req))
    }

    pub fn square_sum_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().fold(S::zero(), |acc, v| acc + *v * *v);
        let req = self.requires(a);
        self.push(Tensor::scalar(s), Op::SquareSumAll { a }, req)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().fold(S::zero(), |acc, v| acc + *v);
        let req = self.requires(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, req)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse traversal from a scalar loss. Propagation runs in a fresh
    /// buffer each call and the result is added onto the persistent
    /// per-node grads, so a second backward without zeroing exactly
    /// doubles every grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut local: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        local[loss.0] = Some(Tensor::scalar(S::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires || local[i].is_none() {
                continue;
            }
            let g = local[i].take().unwrap();
            self.backward_op(i, &g, &mut local);
            local[i] = Some(g);
        }
        for (i, g) in local.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.nodes[i].grad {
                    Some(existing) => {
                        for (e, gv) in existing.data_mut().iter_mut().zip(g.data()) {
                            *e += *gv;
                        }
                    }
                    None => self.nodes[i].grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, g: &Tensor<S>, local: &mut [Option<Tensor<S>>]) {
        fn accum<S: Scalar>(local: &mut [Option<Tensor<S>>], v: Var, d: Tensor<S>) {
            match &mut local[v.0] {
                Some(existing) => {
                    for (e, gv) in existing.data_mut().iter_mut().zip(d.data()) {
                        *e += *gv;
                    }
                }
                None => local[v.0] = Some(d),
            }
        }
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let va = self.value(a);
                let vb = self.value(b);
                if self.requires(a) {
                    // dA = dC * opB(B)^T, transposed back when A was transposed
                    let da = if ta {
                        gemm_ex(vb, g, tb, true, va.rows(), g.cols(), va.cols())
                    } else {
                        gemm_ex(g, vb, false, !tb, va.rows(), g.cols(), va.cols())
                    };
                    accum(local, a, da);
                }
                if self.requires(b) {
                    let db = if tb {
                        gemm_ex(g, va, true, ta, vb.rows(), g.rows(), vb.cols())
                    } else {
                        gemm_ex(va, g, !ta, false, vb.rows(), g.rows(), vb.cols())
                    };
                    accum(local, b, db);
                }
            }
            Op::Add { a, b } => {
                if self.requires(*a) {
                    accum(local, *a, g.clone());
                }
                if self.requires(*b) {
                    accum(local, *b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.requires(*a) {
                    accum(local, *a, g.clone());
                }
                if self.requires(*b) {
                    let neg = Tensor::from_raw(
                        g.data().iter().map(|v| S::zero() - *v).collect(),
                        g.shape().to_vec(),
                    );
                    accum(local, *b, neg);
                }
            }
            Op::Scale { a, c } => {
                if self.requires(*a) {
                    let da = Tensor::from_raw(
                        g.data().iter().map(|v| *v * *c).collect(),
                        g.shape().to_vec(),
                    );
                    accum(local, *a, da);
                }
            }
            Op::AddBiasCol { a, bias } => {
                if self.requires(*a) {
                    accum(local, *a, g.clone());
                }
                if self.requires(*bias) {
                    let r = self.value(*bias).len();
                    let c = g.cols();
                    let mut db = vec![S::zero(); r];
                    for i in 0..r {
                        for j in 0..c {
                            db[i] += g.data()[i * c + j];
                        }
                    }
                    accum(local, *bias, Tensor::from_raw(db, vec![r]));
                }
            }
            Op::Relu { a } => {
                // gradient at exactly 0 is the negative-side slope (0)
                if self.requires(*a) {
                    let va = self.value(*a);
                    let da = Tensor::from_raw(
                        va.data()
                            .iter()
                            .zip(g.data())
                            .map(|(x, gv)| if *x > S::zero() { *gv } else { S::zero() })
                            .collect(),
                        g.shape().to_vec(),
                    );
                    accum(local, *a, da);
                }
            }
            Op::LeakyRelu { a, slope } => {
                if self.requires(*a) {
                    let va = self.value(*a);
                    let da = Tensor::from_raw(
                        va.data()
                            .iter()
                            .zip(g.data())
                            .map(|(x, gv)| if *x > S::zero() { *gv } else { *gv * *slope })
                            .collect(),
                        g.shape().to_vec(),
                    );
                    accum(local, *a, da);
                }
            }
            Op::ColumnSoftmax { a } => {
                if self.requires(*a) {
                    let y = &self.nodes[i].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut da = vec![S::zero(); r * c];
                    for j in 0..c {
                        let mut dot = S::zero();
                        for row in 0..r {
                            dot += g.data()[row * c + j] * y.data()[row * c + j];
                        }
                        for row in 0..r {
                            da[row * c + j] =
                                y.data()[row * c + j] * (g.data()[row * c + j] - dot);
                        }
                    }
                    accum(local, *a, Tensor::from_raw(da, vec![r, c]));
                }
            }
            Op::GatherCols { a, idx } => {
                if self.requires(*a) {
                    let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                    let mut da = vec![S::zero(); r * c];
                    for row in 0..r {
                        for (out_j, &j) in idx.iter().enumerate() {
                            da[row * c + j] += g.data()[row * idx.len() + out_j];
                        }
                    }
                    accum(local, *a, Tensor::from_raw(da, vec![r, c]));
                }
            }
            Op::NarrowCols { a, start, len } => {
                if self.requires(*a) {
                    let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                    let mut da = vec![S::zero(); r * c];
                    for row in 0..r {
                        for j in 0..*len {
                            da[row * c + start + j] = g.data()[row * len + j];
                        }
                    }
                    accum(local, *a, Tensor::from_raw(da, vec![r, c]));
                }
            }
            Op::ProductUnits { a, units } => {
                if self.requires(*a) {
                    let va = self.value(*a);
                    let (r, c) = (va.rows(), va.cols());
                    let mut da = vec![S::zero(); r * c];
                    for u in units {
                        for j in 0..c {
                            let go = g.data()[u.out_row * c + j];
                            da[u.a_row * c + j] += go * u.coeff * va.data()[u.b_row * c + j];
                            da[u.b_row * c + j] += go * u.coeff * va.data()[u.a_row * c + j];
                        }
                    }
                    accum(local, *a, Tensor::from_raw(da, vec![r, c]));
                }
            }
            Op::SquareSumAll { a } => {
                if self.requires(*a) {
                    let va = self.value(*a);
                    let gv = g.scalar_value();
                    let two = S::from_f64(2.0);
                    let da = Tensor::from_raw(
                        va.data().iter().map(|x| two * *x * gv).collect(),
                        va.shape().to_vec(),
                    );
                    accum(local, *a, da);
                }
            }
            Op::SumAll { a } => {
                if self.requires(*a) {
                    let va = self.value(*a);
                    let gv = g.scalar_value();
                    let da = Tensor::from_raw(vec![gv; va.len()], va.shape().to_vec());
                    accum(local, *a, da);
                }
            }
        }
    }

    /// Accumulate the grad of a leaf back into its source tensor.
    pub fn write_grad(&self, v: Var, target: &mut Tensor<S>) -> Result<()> {
        if let Some(g) = self.grad(v) {
            target.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn gemm_ex<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
) -> Tensor<S> {
    let mut out = vec![S::zero(); m * n];
    if m > 0 && k > 0 && n > 0 {
        let (rsa, csa) = if ta {
            (1, a.cols() as isize)
        } else {
            (a.cols() as isize, 1)
        };
        let (rsb, csb) = if tb {
            (1, b.cols() as isize)
        } else {
            (b.cols() as isize, 1)
        };
        S::gemm(
            m,
            k,
            n,
            S::one(),
            a.data(),
            rsa,
            csa,
            b.data(),
            rsb,
            csb,
            S::zero(),
            &mut out,
            n as isize,
            1,
        );
    }
    Tensor::from_raw(out, vec![m, n])
}

/// Softmax over the key index of each column, without a tape.
pub fn column_softmax_plain<S: Scalar>(z: &Tensor<S>) -> Tensor<S> {
    let (r, c) = (z.rows(), z.cols());
    let mut out = vec![S::zero(); r * c];
    for j in 0..c {
        let mut m = S::neg_infinity();
        for i in 0..r {
            m = m.max(z.data()[i * c + j]);
        }
        let mut sum = S::zero();
        for i in 0..r {
            let e = (z.data()[i * c + j] - m).exp();
            out[i * c + j] = e;
            sum += e;
        }
        for i in 0..r {
            out[i * c + j] /= sum;
        }
    }
    Tensor::from_raw(out, vec![r, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: Vec<f64>, shape: Vec<usize>) -> Tensor<f64> {
        Tensor::new(data, shape).unwrap()
    }

    #[test]
    fn sum_grad_is_ones() {
        let w = t(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&w);
        let loss = tape.sum_all(v);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = t(vec![1.0, 2.0], vec![2]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&w);
        assert!(matches!(
            tape.backward(v),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn least_squares_grad_matches_hand_derivation() {
        // loss = ||Wx - y||^2 / 2, grad(W) = (Wx - y) x^T
        let w = t(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).with_grad();
        let x = t(vec![0.5, -1.0], vec![2, 1]);
        let y = t(vec![1.0, 0.0], vec![2, 1]);
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let wx = tape.matmul(wv, xv).unwrap();
        let r = tape.sub(wx, yv).unwrap();
        let ss = tape.square_sum_all(r);
        let loss = tape.scale(ss, 0.5);
        tape.backward(loss).unwrap();

        let wx_val = w.matmul_plain(&x).unwrap();
        let resid = t(
            vec![
                wx_val.data()[0] - y.data()[0],
                wx_val.data()[1] - y.data()[1],
            ],
            vec![2, 1],
        );
        let expected = resid.matmul_plain(&x.transpose_plain()).unwrap();
        let got = tape.grad(wv).unwrap();
        assert!(got.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn double_backward_doubles_leaf_grads() {
        let w = t(vec![1.0, -2.0, 0.5], vec![3]).with_grad();
        let x = t(vec![2.0, 0.3, -1.0], vec![3]);
        let mut tape = Tape::new();
        let v = tape.leaf(&w);
        let xv = tape.constant(x);
        let s = tape.add(v, xv).unwrap();
        let loss = tape.square_sum_all(s);
        tape.backward(loss).unwrap();
        let once: Vec<f64> = tape.grad(v).unwrap().data().to_vec();
        tape.backward(loss).unwrap();
        let twice: Vec<f64> = tape.grad(v).unwrap().data().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(*b, 2.0 * *a, "second backward must exactly double");
        }
    }

    #[test]
    fn identical_tapes_give_bitwise_identical_grads() {
        let run = || {
            let w = t(vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9], vec![2, 3]).with_grad();
            let x = t(vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25], vec![3, 2]);
            let mut tape = Tape::new();
            let wv = tape.leaf(&w);
            let xv = tape.constant(x);
            let p = tape.matmul(wv, xv).unwrap();
            let sm = tape.column_softmax(p).unwrap();
            let loss = tape.square_sum_all(sm);
            tape.backward(loss).unwrap();
            tape.grad(wv).unwrap().data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn column_softmax_pinned_values() {
        // [[0,1],[0,0]]: column 1 -> [0.5, 0.5]; column 2 -> [e/(e+1), 1/(e+1)]
        let z = t(vec![0.0, 1.0, 0.0, 0.0], vec![2, 2]);
        let y = column_softmax_plain(&z);
        let e = std::f64::consts::E;
        assert!((y.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((y.at(1, 0) - 0.5).abs() < 1e-15);
        assert!((y.at(0, 1) - e / (e + 1.0)).abs() < 1e-15);
        assert!((y.at(1, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn column_softmax_all_zero_column_is_uniform() {
        let z = Tensor::<f64>::zeros(vec![5, 3]);
        let y = column_softmax_plain(&z);
        for i in 0..5 {
            for j in 0..3 {
                assert!((y.at(i, j) - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn column_softmax_shift_invariance() {
        let z = t(vec![0.3, -1.0, 2.0, 0.1, 0.0, 4.0], vec![3, 2]);
        let mut shifted = z.clone();
        for i in 0..3 {
            let v = shifted.at(i, 1) + 123.5;
            shifted.set(i, 1, v);
        }
        let a = column_softmax_plain(&z);
        let b = column_softmax_plain(&shifted);
        for i in 0..3 {
            assert!((a.at(i, 1) - b.at(i, 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn column_softmax_rejects_non_finite() {
        let mut tape = Tape::<f64>::new();
        let z = Tensor::from_raw(vec![f64::INFINITY, 0.0], vec![2, 1]);
        let v = tape.constant(z);
        assert!(matches!(
            tape.column_softmax(v),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn relu_and_leaky_values() {
        let x = t(vec![-1.0, 2.0], vec![2]);
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let r = tape.relu(v);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let l = tape.leaky_relu(v, 0.01).unwrap();
        assert_eq!(tape.value(l).data(), &[-0.01, 2.0]);
        assert!(tape.leaky_relu(v, 1.5).is_err());
        assert!(tape.leaky_relu(v, 0.0).is_err());
    }

    #[test]
    fn product_units_forward_and_backward() {
        // out[2,j] = 3 * u[0,j] * u[1,j]
        let x = t(vec![1.0, 2.0, 4.0, -1.0, 0.0, 0.0], vec![3, 2]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let p = tape
            .product_units(
                v,
                vec![ProductUnit {
                    a_row: 0,
                    b_row: 1,
                    out_row: 2,
                    coeff: 3.0,
                }],
            )
            .unwrap();
        assert_eq!(tape.value(p).at(2, 0), 12.0);
        assert_eq!(tape.value(p).at(2, 1), -6.0);
        let loss = tape.sum_all(p);
        tape.backward(loss).unwrap();
        let g = tape.grad(v).unwrap();
        assert_eq!(g.at(0, 0), 3.0 * 4.0);
        assert_eq!(g.at(1, 0), 3.0 * 1.0);
    }

    #[test]
    fn matmul_transpose_variants_agree_with_plain() {
        let a = t(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3]);
        let b = t(vec![1.0, -1.0, 0.5, 2.0, 0.0, 1.0], vec![2, 3]);
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let bv = tape.constant(b.clone());
        let tn = tape.matmul_tn(av, bv).unwrap(); // (3x2)*(2x3) = 3x3
        let expected = a.transpose_plain().matmul_plain(&b).unwrap();
        assert!(tape.value(tn).max_abs_diff(&expected) < 1e-14);
        let nt = tape.matmul_nt(av, bv).unwrap(); // (2x3)*(3x2) = 2x2
        let expected = a.matmul_plain(&b.transpose_plain()).unwrap();
        assert!(tape.value(nt).max_abs_diff(&expected) < 1e-14);
    }
}
