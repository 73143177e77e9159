//! Small programs compiled into exact feed-forward weights.
//!
//! The constructions only ever need the FFN output `v` (added to the
//! attention output `u`) to be a combination of three primitives:
//!
//!  * linear taps      `v[out] += coeff * u[in]`
//!  * gated taps       `v[out] += coeff * u[in] * [gate(u) >= 1]`
//!  * bilinear taps    `v[out] += coeff * u[a] * u[b]`
//!
//! Linear taps use the identity `a = ReLU(a) - ReLU(-a)`, which holds
//! exactly in floating point. Gated taps use half-integer thresholding:
//! with `m = B (g - 1/2)` and `B/2` above any attainable |u[in]|,
//! `(ReLU(a + m) - ReLU(-a + m)) / 2` equals `a` when g >= 1 and is an
//! exact 0 when g <= 0; gates must be integer-valued expressions of
//! indicator/index rows. Bilinear taps compile either to exact product
//! units (the default inside constructions) or to a piecewise-linear
//! ReLU interpolation of `x*y = ((x+y)^2 - (x-y)^2)/4` whose error is
//! measured rather than assumed.

use crate::tape::ProductUnit;
use crate::tensor::Tensor;

/// Integer-valued affine gate over token rows: `g(u) = sum coeff*u[row] + offset`.
/// Keep when g >= 1, suppress when g <= 0; values strictly between are
/// not attainable by contract.
#[derive(Debug, Clone)]
pub struct GateExpr {
    pub terms: Vec<(usize, f64)>,
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub enum FfnTerm {
    Linear {
        out_row: usize,
        in_row: usize,
        coeff: f64,
    },
    Gated {
        out_row: usize,
        in_row: usize,
        coeff: f64,
        gate: GateExpr,
    },
    Product {
        out_row: usize,
        a_row: usize,
        b_row: usize,
        coeff: f64,
    },
}

/// How bilinear taps are realized.
#[derive(Debug, Clone, Copy)]
pub enum ProductMode {
    /// Exact, non-learnable product units.
    Exact,
    /// Piecewise-linear ReLU interpolation of t^2 over [-range, range]
    /// with the given segment count; a genuine Eq.-(1) feed-forward.
    PiecewiseLinear { range: f64, segments: usize },
}

/// Saturation scale for gated taps. The compiled gate is exact as long as
/// every gated |u[in]| stays below `bound/2`; construction magnitudes are
/// O(|x| + |y|), far under the default.
pub const DEFAULT_GATE_BOUND: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct FfnProgram {
    pub d: usize,
    pub terms: Vec<FfnTerm>,
    pub product_mode: ProductMode,
    pub gate_bound: f64,
}

pub struct CompiledFfn {
    pub w1: Tensor<f64>,
    pub b1: Tensor<f64>,
    pub w2: Tensor<f64>,
    pub b2: Tensor<f64>,
    pub product_units: Vec<ProductUnit<f64>>,
}

impl FfnProgram {
    pub fn new(d: usize) -> Self {
        FfnProgram {
            d,
            terms: Vec::new(),
            product_mode: ProductMode::Exact,
            gate_bound: DEFAULT_GATE_BOUND,
        }
    }

    pub fn with_product_mode(mut self, mode: ProductMode) -> Self {
        self.product_mode = mode;
        self
    }

    pub fn linear(mut self, out_row: usize, in_row: usize, coeff: f64) -> Self {
        self.terms.push(FfnTerm::Linear {
            out_row,
            in_row,
            coeff,
        });
        self
    }

    pub fn gated(mut self, out_row: usize, in_row: usize, coeff: f64, gate: GateExpr) -> Self {
        self.terms.push(FfnTerm::Gated {
            out_row,
            in_row,
            coeff,
            gate,
        });
        self
    }

    pub fn product(mut self, out_row: usize, a_row: usize, b_row: usize, coeff: f64) -> Self {
        self.terms.push(FfnTerm::Product {
            out_row,
            a_row,
            b_row,
            coeff,
        });
        self
    }

    pub fn compile(&self) -> CompiledFfn {
        let d = self.d;
        // hidden rows of (w1, b1) with per-unit output taps
        let mut w1_rows: Vec<Vec<f64>> = Vec::new();
        let mut b1_vals: Vec<f64> = Vec::new();
        let mut taps: Vec<(usize, usize, f64)> = Vec::new(); // (out_row, hidden, weight)
        let mut product_units = Vec::new();

        let push_unit = |w1_rows: &mut Vec<Vec<f64>>, b1_vals: &mut Vec<f64>, row: Vec<f64>, b: f64| -> usize {
            w1_rows.push(row);
            b1_vals.push(b);
            w1_rows.len() - 1
        };

        for term in &self.terms {
            match term {
                FfnTerm::Linear {
                    out_row,
                    in_row,
                    coeff,
                } => {
                    let mut plus = vec![0.0; d];
                    plus[*in_row] = 1.0;
                    let mut minus = vec![0.0; d];
                    minus[*in_row] = -1.0;
                    let hp = push_unit(&mut w1_rows, &mut b1_vals, plus, 0.0);
                    let hm = push_unit(&mut w1_rows, &mut b1_vals, minus, 0.0);
                    taps.push((*out_row, hp, *coeff));
                    taps.push((*out_row, hm, -*coeff));
                }
                FfnTerm::Gated {
                    out_row,
                    in_row,
                    coeff,
                    gate,
                } => {
                    let b = self.gate_bound;
                    let mut plus = vec![0.0; d];
                    plus[*in_row] += 1.0;
                    let mut minus = vec![0.0; d];
                    minus[*in_row] -= 1.0;
                    for (row, scale) in &gate.terms {
                        plus[*row] += b * scale;
                        minus[*row] += b * scale;
                    }
                    let bias = b * (gate.offset - 0.5);
                    let hp = push_unit(&mut w1_rows, &mut b1_vals, plus, bias);
                    let hm = push_unit(&mut w1_rows, &mut b1_vals, minus, bias);
                    taps.push((*out_row, hp, coeff / 2.0));
                    taps.push((*out_row, hm, -coeff / 2.0));
                }
                FfnTerm::Product {
                    out_row,
                    a_row,
                    b_row,
                    coeff,
                } => match self.product_mode {
                    ProductMode::Exact => product_units.push(ProductUnit {
                        a_row: *a_row,
                        b_row: *b_row,
                        out_row: *out_row,
                        coeff: *coeff,
                    }),
                    ProductMode::PiecewiseLinear { range, segments } => {
                        // coeff/4 * [PL(a+b) - PL(a-b)]; the shared constant
                        // of the interpolant cancels between the two calls
                        let knots: Vec<f64> = (0..segments)
                            .map(|j| -range + 2.0 * range * j as f64 / segments as f64)
                            .collect();
                        let gamma = |j: usize| -> f64 {
                            // slope increments of the interpolant of t^2
                            let delta = 2.0 * range / segments as f64;
                            if j == 0 {
                                2.0 * knots[0] + delta
                            } else {
                                2.0 * delta
                            }
                        };
                        for (sign_b, outer) in [(1.0, 1.0), (-1.0, -1.0)] {
                            for (j, k) in knots.iter().enumerate() {
                                let mut row = vec![0.0; d];
                                row[*a_row] += 1.0;
                                row[*b_row] += sign_b;
                                let h = push_unit(&mut w1_rows, &mut b1_vals, row, -k);
                                taps.push((*out_row, h, outer * coeff / 4.0 * gamma(j)));
                            }
                        }
                    }
                },
            }
        }

        if w1_rows.is_empty() {
            // a single dead unit keeps the shapes legal
            w1_rows.push(vec![0.0; d]);
            b1_vals.push(-1.0);
        }
        let m = w1_rows.len();
        let w1 = Tensor::from_fn(m, d, |r, c| w1_rows[r][c]);
        let b1 = Tensor::new(b1_vals, vec![m]).expect("finite biases");
        let mut w2 = Tensor::zeros(vec![d, m]);
        for (out, h, w) in taps {
            let v = w2.at(out, h) + w;
            w2.set(out, h, v);
        }
        CompiledFfn {
            w1,
            b1,
            w2,
            b2: Tensor::zeros(vec![d]),
            product_units,
        }
    }
}

/// Selector-style attention weight: `coeff` on (out_row(i), in_row(i))
/// pairs, zero elsewhere.
pub fn band_selector(
    rows: usize,
    cols: usize,
    pairs: impl IntoIterator<Item = (usize, usize)>,
    coeff: f64,
) -> Tensor<f64> {
    let mut t = Tensor::zeros(vec![rows, cols]);
    for (r, c) in pairs {
        t.set(r, c, coeff);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{layer_forward_plain, AttentionMode, TransformerLayerParams};

    /// A layer that is pure FFN: no attention (zero values), program FFN.
    fn ffn_only_layer(program: &FfnProgram) -> TransformerLayerParams<f64> {
        let c = program.compile();
        TransformerLayerParams {
            heads: vec![],
            w1: c.w1,
            b1: c.b1,
            w2: c.w2,
            b2: c.b2,
            product_units: c.product_units,
        }
    }

    #[test]
    fn linear_tap_is_exact() {
        let prog = FfnProgram::new(4).linear(2, 0, -3.5);
        let layer = ffn_only_layer(&prog);
        let x = Tensor::from_fn(4, 3, |r, c| (r as f64 - 1.3) * (c as f64 + 0.7));
        let out = layer_forward_plain(&layer, &x, AttentionMode::Full).unwrap();
        for j in 0..3 {
            assert_eq!(out.at(2, j), x.at(2, j) + -3.5 * x.at(0, j));
            assert_eq!(out.at(0, j), x.at(0, j));
        }
    }

    #[test]
    fn gated_tap_keeps_and_suppresses_exactly() {
        // gate: keep iff u[3] >= 1 (indicator row)
        let gate = GateExpr {
            terms: vec![(3, 1.0)],
            offset: 0.0,
        };
        let prog = FfnProgram::new(4).gated(1, 0, 2.0, gate);
        let layer = ffn_only_layer(&prog);
        let mut x = Tensor::zeros(vec![4, 2]);
        x.set(0, 0, 0.37);
        x.set(3, 0, 1.0); // keep
        x.set(0, 1, -5.21);
        x.set(3, 1, 0.0); // suppress
        let out = layer_forward_plain(&layer, &x, AttentionMode::Full).unwrap();
        assert!((out.at(1, 0) - 2.0 * 0.37).abs() < 1e-12);
        assert_eq!(out.at(1, 1), 0.0, "suppressed branch is exactly zero");
    }

    #[test]
    fn gate_with_index_row_thresholds_at_half_integers() {
        // keep iff t - 2 >= 1, i.e. t >= 3, with t an integer row
        let gate = GateExpr {
            terms: vec![(1, 1.0)],
            offset: -2.0,
        };
        let prog = FfnProgram::new(3).gated(2, 0, 1.0, gate);
        let layer = ffn_only_layer(&prog);
        let x = Tensor::from_fn(3, 6, |r, c| match r {
            0 => 1.5,
            1 => c as f64, // t = 0..5
            _ => 0.0,
        });
        let out = layer_forward_plain(&layer, &x, AttentionMode::Full).unwrap();
        for t in 0..6 {
            let expect = if t >= 3 { 1.5 } else { 0.0 };
            assert!((out.at(2, t) - expect).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn exact_product_tap() {
        let prog = FfnProgram::new(3).product(2, 0, 1, 0.5);
        let layer = ffn_only_layer(&prog);
        let x = Tensor::new(vec![2.0, -3.0, 4.0, 7.0, 0.0, 0.0], vec![3, 2]).unwrap();
        let out = layer_forward_plain(&layer, &x, AttentionMode::Full).unwrap();
        assert_eq!(out.at(2, 0), 0.0 + 0.5 * 2.0 * 4.0);
        assert_eq!(out.at(2, 1), 0.0 + 0.5 * (-3.0) * 7.0);
    }

    #[test]
    fn piecewise_linear_product_error_shrinks_quadratically() {
        let measure = |segments: usize| -> f64 {
            let prog = FfnProgram::new(3)
                .with_product_mode(ProductMode::PiecewiseLinear {
                    range: 4.0,
                    segments,
                })
                .product(2, 0, 1, 1.0);
            let layer = ffn_only_layer(&prog);
            assert!(layer.product_units.is_empty(), "PWL uses only ReLU units");
            let mut worst = 0.0f64;
            for i in 0..21 {
                for j in 0..21 {
                    let a = -1.9 + 0.19 * i as f64;
                    let b = -1.9 + 0.19 * j as f64;
                    let x = Tensor::new(vec![a, b, 0.0], vec![3, 1]).unwrap();
                    let out = layer_forward_plain(&layer, &x, AttentionMode::Full).unwrap();
                    worst = worst.max((out.at(2, 0) - a * b).abs());
                }
            }
            worst
        };
        let e16 = measure(16);
        let e64 = measure(64);
        // theory: max error = (range/segments)^2 / 4 per squared term
        assert!(e16 < 0.07, "16 segments: {e16}");
        assert!(e64 < 0.005, "64 segments: {e64}");
        assert!(e64 < e16 / 8.0, "quadratic-ish improvement: {e16} -> {e64}");
    }
}
