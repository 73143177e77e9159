//! Dense real tensor of rank <= 3: the universal numeric carrier.
//!
//! Values are immutable once created; only the optional gradient buffer is
//! mutated (by `Tape::backward` write-back or `zero_grad`). Rank-2 tensors
//! are row-major.

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("tensor rank {0} exceeds the supported maximum of 3")]
    RankTooHigh(usize),
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    /// Checked constructor: validates rank, length and finiteness.
    pub fn new(data: Vec<S>, shape: Vec<usize>) -> Result<Self> {
        if shape.len() > 3 {
            return Err(TensorError::RankTooHigh(shape.len()));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Tensor::new" });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Internal constructor for op outputs whose finiteness follows from the
    /// inputs. Shape/length must already agree.
    pub(crate) fn from_raw(data: Vec<S>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_raw(vec![S::zero(); n], shape)
    }

    pub fn scalar(v: S) -> Self {
        Self::from_raw(vec![v], vec![])
    }

    /// r x c matrix from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_raw(data, vec![rows, cols])
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { S::one() } else { S::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Rows of a rank-2 tensor (a vector counts as a single column).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    pub fn scalar_value(&self) -> S {
        debug_assert!(self.data.len() == 1);
        self.data[0]
    }

    pub fn assert_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            Err(TensorError::NonFinite { op })
        } else {
            Ok(())
        }
    }

    // ── gradient buffer ────────────────────────────────────────────────

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Accumulate `g` into the gradient buffer (allocating it on first use).
    pub fn accumulate_grad(&mut self, g: &Tensor<S>) -> Result<()> {
        if g.shape != self.shape {
            return Err(TensorError::ShapeMismatch {
                op: "accumulate_grad",
                lhs: self.shape.clone(),
                rhs: g.shape.clone(),
            });
        }
        match &mut self.grad {
            Some(buf) => {
                for (b, gv) in buf.iter_mut().zip(g.data.iter()) {
                    *b += *gv;
                }
            }
            None => self.grad = Some(g.data.clone()),
        }
        Ok(())
    }

    // ── convenience numerics (oracle/test helpers, not tape ops) ───────

    pub fn frobenius_norm(&self) -> S {
        self.data
            .iter()
            .fold(S::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> S {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Plain (untaped) matrix product, used by oracles and weight builders.
    pub fn matmul_plain(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        if m > 0 && k > 0 && n > 0 {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                &self.data,
                k as isize,
                1,
                &other.data,
                n as isize,
                1,
                S::zero(),
                &mut out,
                n as isize,
                1,
            );
        }
        Ok(Tensor::from_raw(out, vec![m, n]))
    }

    pub fn transpose_plain(&self) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        Tensor::from_fn(c, r, |i, j| self.at(j, i))
    }
}

/// Relative error with a floor guard: |a-b| / max(floor, |a|, |b|).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / floor.max(a.abs()).max(b.abs())
}
