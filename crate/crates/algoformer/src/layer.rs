//! The transformer layer: multi-head softmax attention with a residual
//! connection, followed by a residual two-layer ReLU feed-forward applied
//! per token. There is no layer normalization and no score scaling by
//! 1/sqrt(k); the explicit weight constructions depend on raw scores.
//!
//! Shapes: tokens are columns of `X (D x N)`; per head `W_Q, W_K (k x D)`
//! and `W_V (D x D)`; the feed-forward is `W_1 (m x D)`, `b_1 (m)`,
//! `W_2 (D x m)`, `b_2 (D)`.

use crate::scalar::Scalar;
use crate::tape::{ProductUnit, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};
use rand::Rng;
use rand_distr::StandardNormal;

/// Additive pre-softmax constant for masked positions. At 64-bit the
/// masked weights underflow to exactly zero after normalization.
pub const CAUSAL_MASK_VALUE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Full,
    /// Token j attends only to tokens <= j.
    Causal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<S: Scalar> {
    pub w_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayerParams<S: Scalar> {
    pub heads: Vec<HeadParams<S>>,
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
    /// Exact bilinear units used by explicit constructions only; never
    /// produced by `init_params` and not counted as learnable parameters.
    pub product_units: Vec<ProductUnit<S>>,
}

#[derive(Debug, Clone, Copy)]
pub enum InitScheme {
    Zeros,
    /// Zero-mean Gaussian weights with the given std; biases zero.
    Gaussian { std: f64 },
    /// Gaussian queries/keys and first FFN matrix, but zero W_V and W_2:
    /// every layer starts as an exact identity, so a weight-shared loop
    /// of any depth is stable at initialization while the score matrices
    /// already carry signal.
    ZeroResidual { std: f64 },
}

impl InitScheme {
    pub fn default_gaussian() -> Self {
        InitScheme::Gaussian { std: 0.02 }
    }
}

impl<S: Scalar> TransformerLayerParams<S> {
    pub fn d_model(&self) -> usize {
        self.w2.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w_q.rows())
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn ffn_dim(&self) -> usize {
        self.w1.rows()
    }

    /// Exact count of stored learnable scalars:
    /// `h (2 k D + D^2) + m D + m + D m + D`.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    /// Visit every learnable tensor in a fixed canonical order.
    pub fn visit(&self, f: &mut impl FnMut(&Tensor<S>)) {
        for h in &self.heads {
            f(&h.w_q);
            f(&h.w_k);
            f(&h.w_v);
        }
        f(&self.w1);
        f(&self.b1);
        f(&self.w2);
        f(&self.b2);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor<S>)) {
        for h in &mut self.heads {
            f(&mut h.w_q);
            f(&mut h.w_k);
            f(&mut h.w_v);
        }
        f(&mut self.w1);
        f(&mut self.b1);
        f(&mut self.w2);
        f(&mut self.b2);
    }
}

/// Closed-form learnable parameter count for one layer.
pub fn layer_param_count(d: usize, k: usize, m: usize, h: usize) -> usize {
    h * (2 * k * d + d * d) + m * d + m + d * m + d
}

fn gaussian_tensor<S: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor<S> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let z: f64 = rng.sample(StandardNormal);
        data.push(S::from_f64(z * std));
    }
    if cols == 0 {
        Tensor::from_raw(data, vec![rows])
    } else {
        Tensor::from_raw(data, vec![rows, cols])
    }
}

/// Draw fresh layer parameters. Weights follow the scheme, biases are zero.
pub fn init_params<S: Scalar, R: Rng>(
    d: usize,
    k: usize,
    m: usize,
    h: usize,
    scheme: InitScheme,
    rng: &mut R,
) -> TransformerLayerParams<S> {
    let mut mat = |rows: usize, cols: usize, residual: bool| -> Tensor<S> {
        match scheme {
            InitScheme::Zeros => Tensor::zeros(vec![rows, cols]),
            InitScheme::Gaussian { std } => gaussian_tensor(rows, cols, std, rng),
            InitScheme::ZeroResidual { std } => {
                if residual {
                    Tensor::zeros(vec![rows, cols])
                } else {
                    gaussian_tensor(rows, cols, std, rng)
                }
            }
        }
    };
    let heads = (0..h)
        .map(|_| HeadParams {
            w_q: mat(k, d, false),
            w_k: mat(k, d, false),
            w_v: mat(d, d, true),
        })
        .collect();
    let w1 = mat(m, d, false);
    let w2 = mat(d, m, true);
    TransformerLayerParams {
        heads,
        w1,
        b1: Tensor::zeros(vec![m]),
        w2,
        b2: Tensor::zeros(vec![d]),
        product_units: Vec::new(),
    }
}

/// Additive causal mask, indexed (query row, key column): zero on the
/// lower triangle including the diagonal, a large negative constant on
/// strictly upper entries.
pub fn causal_mask<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::from_fn(n, n, |q, k| {
        if k <= q {
            S::zero()
        } else {
            S::from_f64(CAUSAL_MASK_VALUE)
        }
    })
}

/// Var handles for one layer's parameters on a tape. Registering the
/// leaves once and reusing the handles is what makes the looped stack
/// weight-shared: gradients from every application accumulate into the
/// same leaf.
pub struct LayerVars<S: Scalar> {
    pub heads: Vec<(Var, Var, Var)>,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub product_units: Vec<ProductUnit<S>>,
}

impl<S: Scalar> LayerVars<S> {
    pub fn register(tape: &mut Tape<S>, p: &TransformerLayerParams<S>) -> Self {
        LayerVars {
            heads: p
                .heads
                .iter()
                .map(|h| (tape.leaf(&h.w_q), tape.leaf(&h.w_k), tape.leaf(&h.w_v)))
                .collect(),
            w1: tape.leaf(&p.w1),
            b1: tape.leaf(&p.b1),
            w2: tape.leaf(&p.w2),
            b2: tape.leaf(&p.b2),
            product_units: p.product_units.clone(),
        }
    }

    /// Leaf handles in the same canonical order as `visit`.
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.heads.len() * 3 + 4);
        for (q, k, v) in &self.heads {
            out.push(*q);
            out.push(*k);
            out.push(*v);
        }
        out.push(self.w1);
        out.push(self.b1);
        out.push(self.w2);
        out.push(self.b2);
        out
    }
}

/// `Attn(X) = X + sum_i W_V^(i) X softmax(X^T W_K^(i)T W_Q^(i) X)` with
/// optional causal masking applied to the scores before the softmax.
pub fn attention_forward<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &LayerVars<S>,
    x: Var,
    mode: AttentionMode,
) -> Result<Var> {
    let n = tape.value(x).cols();
    let d = tape.value(x).rows();
    for (wq, _, _) in &vars.heads {
        let dk = tape.value(*wq).cols();
        if dk != d {
            return Err(TensorError::ShapeMismatch {
                op: "attention_forward",
                lhs: tape.value(*wq).shape().to_vec(),
                rhs: tape.value(x).shape().to_vec(),
            });
        }
    }
    // scores are indexed (key row, query column); the causal mask is
    // stated in (query, key) orientation, so transpose it here
    let mask = match mode {
        AttentionMode::Full => None,
        AttentionMode::Causal => {
            let m = causal_mask::<S>(n).transpose_plain();
            Some(tape.constant(m))
        }
    };
    let mut acc: Option<Var> = None;
    for (wq, wk, wv) in &vars.heads {
        let q = tape.matmul(*wq, x)?;
        let k = tape.matmul(*wk, x)?;
        let mut z = tape.matmul_tn(k, q)?;
        if let Some(mv) = mask {
            z = tape.add(z, mv)?;
        }
        let a = tape.column_softmax(z)?;
        let v = tape.matmul(*wv, x)?;
        let hv = tape.matmul(v, a)?;
        acc = Some(match acc {
            None => hv,
            Some(prev) => tape.add(prev, hv)?,
        });
    }
    match acc {
        None => Ok(x),
        Some(sum) => tape.add(x, sum),
    }
}

/// `TF(X) = Attn(X) + W_2 ReLU(W_1 Attn(X) + b_1) + b_2`, plus any exact
/// bilinear units a construction attached to this layer.
pub fn transformer_layer_forward<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &LayerVars<S>,
    x: Var,
    mode: AttentionMode,
) -> Result<Var> {
    let u = attention_forward(tape, vars, x, mode)?;
    let h_pre = tape.matmul(vars.w1, u)?;
    let h_pre = tape.add_bias_col(h_pre, vars.b1)?;
    let h = tape.relu(h_pre);
    let f = tape.matmul(vars.w2, h)?;
    let f = tape.add_bias_col(f, vars.b2)?;
    let mut out = tape.add(u, f)?;
    if !vars.product_units.is_empty() {
        let p = tape.product_units(u, vars.product_units.clone())?;
        out = tape.add(out, p)?;
    }
    Ok(out)
}

/// One-shot layer application for callers that hold plain params.
pub fn layer_forward_plain<S: Scalar>(
    params: &TransformerLayerParams<S>,
    x: &Tensor<S>,
    mode: AttentionMode,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = LayerVars::register(&mut tape, params);
    let out = transformer_layer_forward(&mut tape, &vars, xv, mode)?;
    Ok(tape.value(out).clone())
}
