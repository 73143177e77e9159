//! Explicit weights realizing the Newton-Schulz scheme
//! `M_0 = alpha S`, `M_{k+1} = 2 M_k - M_k S M_k`, `w_k = M_k X^T y`.
//!
//! Pre layer: the two-head pin trick over x.x scores writes
//! `M_0 x_i = alpha S x_i` into the Mx band of each sample token.
//! Loop layer: scores `x_i . M_k x_j` produce `c M_k S M_k x_j` on the
//! scratch band, folded into `2 M_k x_j - M_k S M_k x_j`.
//! Post: a pair broadcast puts y_i on both tokens of its pair, then the
//! same pin trick contracts to `w_T . x_test` on the query's label row.

use crate::constructions::ffn::{band_selector, FfnProgram, GateExpr};
use crate::constructions::layout::NewtonLayout;
use crate::constructions::{ConstructionScale, Result};
use crate::layer::{layer_forward_plain, AttentionMode, HeadParams, TransformerLayerParams};
use crate::tensor::Tensor;

pub struct NewtonBlocks {
    pub pre: TransformerLayerParams<f64>,
    pub loop_layer: TransformerLayerParams<f64>,
    pub post: [TransformerLayerParams<f64>; 2],
}

fn ones_query_row(l: &NewtonLayout, row: usize, t: &mut Tensor<f64>) {
    // every token carries exactly one of the four indicators
    t.set(row, l.ind_x, 1.0);
    t.set(row, l.ind_y, 1.0);
    t.set(row, l.ind_test, 1.0);
    t.set(row, l.ind_trail, 1.0);
}

/// Writes `M_0 x_i = alpha S x_i` into the Mx band of the sample tokens.
pub fn build_newton_pre_layer(
    l: &NewtonLayout,
    s: &ConstructionScale,
    alpha: f64,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let (d, w) = (l.d, l.width);
    let k = d + 1;
    let e_c = s.big_c.exp();
    // queries x_j (+1), keys c x_i (pin on the trailing token), values
    // e^C x_i restricted to the sample tokens
    let mut wq1 = band_selector(k, w, (0..d).map(|r| (r, l.feat.at(r))), 1.0);
    ones_query_row(l, d, &mut wq1);
    let mut wk = band_selector(k, w, (0..d).map(|r| (r, l.feat.at(r))), s.small_c);
    wk.set(d, l.ind_trail, s.big_c);
    let wv1 = band_selector(w, w, (0..d).map(|r| (l.scratch.at(r), l.feat_s.at(r))), e_c);
    let mut wq2 = Tensor::zeros(vec![k, w]);
    ones_query_row(l, d, &mut wq2);
    let wv2 = band_selector(w, w, (0..d).map(|r| (l.scratch.at(r), l.feat_s.at(r))), -e_c);

    let gate_x = GateExpr {
        terms: vec![(l.ind_x, 1.0)],
        offset: 0.0,
    };
    let mut prog = FfnProgram::new(w);
    for r in 0..d {
        prog = prog
            .gated(l.mx.at(r), l.scratch.at(r), alpha / s.small_c, gate_x.clone())
            .linear(l.scratch.at(r), l.scratch.at(r), -1.0);
    }
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![
            HeadParams {
                w_q: wq1,
                w_k: wk.clone(),
                w_v: wv1,
            },
            HeadParams {
                w_q: wq2,
                w_k: wk,
                w_v: wv2,
            },
        ],
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}

/// Maps the Mx band through one Newton step.
pub fn build_newton_loop_layer(
    l: &NewtonLayout,
    s: &ConstructionScale,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let (d, w) = (l.d, l.width);
    let k = d + 1;
    let e_c = s.big_c.exp();
    // queries M_k x_j (+1), keys c x_i (pin), values e^C M_k x_i
    let mut wq1 = band_selector(k, w, (0..d).map(|r| (r, l.mx.at(r))), 1.0);
    ones_query_row(l, d, &mut wq1);
    let mut wk = band_selector(k, w, (0..d).map(|r| (r, l.feat.at(r))), s.small_c);
    wk.set(d, l.ind_trail, s.big_c);
    let wv1 = band_selector(w, w, (0..d).map(|r| (l.scratch.at(r), l.mx.at(r))), e_c);
    let mut wq2 = Tensor::zeros(vec![k, w]);
    ones_query_row(l, d, &mut wq2);
    let wv2 = band_selector(w, w, (0..d).map(|r| (l.scratch.at(r), l.mx.at(r))), -e_c);

    // M_{k+1} x = 2 M_k x - (1/c) scratch, sample tokens only (elsewhere
    // both the Mx band and the scratch are zero)
    let mut prog = FfnProgram::new(w);
    for r in 0..d {
        prog = prog
            .linear(l.mx.at(r), l.mx.at(r), 1.0)
            .linear(l.mx.at(r), l.scratch.at(r), -1.0 / s.small_c)
            .linear(l.scratch.at(r), l.scratch.at(r), -1.0);
    }
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![
            HeadParams {
                w_q: wq1,
                w_k: wk.clone(),
                w_v: wv1,
            },
            HeadParams {
                w_q: wq2,
                w_k: wk,
                w_v: wv2,
            },
        ],
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}

/// Post layer one: pair attention with doubled label values writes y_i
/// onto the label row of each sample feature token.
pub fn build_newton_broadcast_layer(
    l: &NewtonLayout,
    s: &ConstructionScale,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let w = l.width;
    let wq = band_selector(l.pos.len, w, (0..l.pos.len).map(|r| (r, l.pos.at(r))), s.tau);
    let wk = band_selector(l.pos.len, w, (0..l.pos.len).map(|r| (r, l.pos.at(r))), 1.0);
    let wv = band_selector(w, w, [(l.scratch.at(0), l.label)], 2.0);
    let gate_x = GateExpr {
        terms: vec![(l.ind_x, 1.0)],
        offset: 0.0,
    };
    let prog = FfnProgram::new(w)
        .gated(l.label, l.scratch.at(0), 1.0, gate_x)
        .linear(l.scratch.at(0), l.scratch.at(0), -1.0);
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![HeadParams {
            w_q: wq,
            w_k: wk,
            w_v: wv,
        }],
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}

/// Post layer two: scores x_j . M_T x_i against broadcast labels contract
/// to `c w_T . x_j`; the query token's label row receives the prediction.
pub fn build_newton_contract_layer(
    l: &NewtonLayout,
    s: &ConstructionScale,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let (d, w) = (l.d, l.width);
    let k = d + 1;
    let e_c = s.big_c.exp();
    let mut wq1 = band_selector(k, w, (0..d).map(|r| (r, l.feat.at(r))), s.small_c);
    ones_query_row(l, d, &mut wq1);
    let mut wk = band_selector(k, w, (0..d).map(|r| (r, l.mx.at(r))), 1.0);
    wk.set(d, l.ind_trail, s.big_c);
    let wv1 = band_selector(w, w, [(l.scratch.at(0), l.label)], e_c);
    let mut wq2 = Tensor::zeros(vec![k, w]);
    ones_query_row(l, d, &mut wq2);
    let wv2 = band_selector(w, w, [(l.scratch.at(0), l.label)], -e_c);

    let gate_test = GateExpr {
        terms: vec![(l.ind_test, 1.0)],
        offset: 0.0,
    };
    let prog = FfnProgram::new(w)
        .gated(l.label, l.scratch.at(0), 1.0 / s.small_c, gate_test)
        .linear(l.scratch.at(0), l.scratch.at(0), -1.0);
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![
            HeadParams {
                w_q: wq1,
                w_k: wk.clone(),
                w_v: wv1,
            },
            HeadParams {
                w_q: wq2,
                w_k: wk,
                w_v: wv2,
            },
        ],
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}

/// All four layers of the Newton construction.
pub fn build_newton_blocks(
    l: &NewtonLayout,
    s: &ConstructionScale,
    alpha: f64,
    alpha_max: f64,
) -> Result<NewtonBlocks> {
    if alpha <= 0.0 || alpha > alpha_max * (1.0 + 1e-12) {
        return Err(crate::constructions::ConstructionError::AlphaOutOfRange { alpha, alpha_max });
    }
    Ok(NewtonBlocks {
        pre: build_newton_pre_layer(l, s, alpha)?,
        loop_layer: build_newton_loop_layer(l, s)?,
        post: [
            build_newton_broadcast_layer(l, s)?,
            build_newton_contract_layer(l, s)?,
        ],
    })
}

impl NewtonBlocks {
    /// Pre, then t loop applications, then the two post layers. Returns
    /// the state after pre and after each loop application, plus the
    /// final output.
    pub fn run(
        &self,
        prompt: &Tensor<f64>,
        t: usize,
    ) -> crate::tensor::Result<(Vec<Tensor<f64>>, Tensor<f64>)> {
        let mut state = layer_forward_plain(&self.pre, prompt, AttentionMode::Full)?;
        let mut states = vec![state.clone()];
        for _ in 0..t {
            state = layer_forward_plain(&self.loop_layer, &state, AttentionMode::Full)?;
            states.push(state.clone());
        }
        let mut out = state;
        for layer in &self.post {
            out = layer_forward_plain(layer, &out, AttentionMode::Full)?;
        }
        Ok((states, out))
    }

    /// The prediction `w_T . x_test`: label row of the query token.
    pub fn prediction(&self, l: &NewtonLayout, out: &Tensor<f64>) -> f64 {
        out.at(l.label, out.cols() - 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{newton_solve, well_conditioned_instance, RegressionInstance};
    use crate::constructions::layout::newton_layout;
    use crate::constructions::quasi;
    use crate::seed;

    fn instance_vectors(inst: &RegressionInstance) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = (0..inst.n())
            .map(|i| (0..inst.d()).map(|j| inst.x.at(i, j)).collect())
            .collect();
        (xs, inst.y.clone())
    }

    #[test]
    fn identity_gram_with_alpha_one_is_a_fixed_point() {
        // S = I: M_0 = I and the loop must hold every Mx band still
        let d = 3;
        let n = 6;
        let mut rng = seed::stream(1, "newton-test");
        let (inst, _) = well_conditioned_instance(d, n, 1.0, &mut rng);
        // rescale columns so S = I exactly (kappa = 1 gives S = n I)
        let scale = (inst.s.at(0, 0)).sqrt();
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..d).map(|j| inst.x.at(i, j) / scale).collect())
            .collect();
        let ys = vec![1.0, -0.5, 0.25, 0.8, -1.2, 0.4];
        let inst = RegressionInstance::from_rows(&xs, &ys);
        assert!(inst.s.max_abs_diff(&Tensor::eye(d)) < 1e-12);

        let l = newton_layout(d, n + 1);
        let codes = quasi::orthonormal(n + 1, n + 1);
        let s = ConstructionScale::default();
        let blocks = build_newton_blocks(&l, &s, 1.0, inst.alpha_max()).unwrap();
        let x_test = vec![0.3, -0.1, 0.9];
        let mut prompt = l.build_prompt(&xs, &ys, &x_test);
        l.write_positionals(&mut prompt, &codes.vectors);
        let (states, _) = blocks.run(&prompt, 4).unwrap();
        for k in 1..states.len() {
            for i in 0..n {
                let m0 = l.read_mx(&states[0], 2 * i);
                let mk = l.read_mx(&states[k], 2 * i);
                for r in 0..d {
                    assert!(
                        (m0[r] - mk[r]).abs() <= 1e-6,
                        "loop must be a fixed point at S = I (step {k})"
                    );
                }
            }
        }
    }

    #[test]
    fn blocks_track_the_newton_oracle_and_prediction() {
        let mut rng = seed::stream(2, "newton-test");
        let (inst, w_true) = well_conditioned_instance(4, 8, 3.0, &mut rng);
        let (xs, ys) = instance_vectors(&inst);
        let x_test = vec![0.7, -0.3, 0.2, 1.0];
        let alpha = 0.75 * inst.alpha_max();
        let t = 8;
        let oracle = newton_solve(&inst, alpha, t).unwrap();

        let l = newton_layout(4, xs.len() + 1);
        let codes = quasi::orthonormal(xs.len() + 1, xs.len() + 1);
        let s = ConstructionScale::default();
        let blocks = build_newton_blocks(&l, &s, alpha, inst.alpha_max()).unwrap();
        let mut prompt = l.build_prompt(&xs, &ys, &x_test);
        l.write_positionals(&mut prompt, &codes.vectors);
        let (states, out) = blocks.run(&prompt, t).unwrap();

        // Mx bands track M_k x_i
        for (k, state) in states.iter().enumerate() {
            let m_k = &oracle.ms[k];
            let mut worst: f64 = 0.0;
            let mut scale_max: f64 = 1.0;
            for (i, x) in xs.iter().enumerate() {
                let got = l.read_mx(state, 2 * i);
                for r in 0..4 {
                    let want: f64 = (0..4).map(|q| m_k.at(r, q) * x[q]).sum();
                    worst = worst.max((got[r] - want).abs());
                    scale_max = scale_max.max(want.abs());
                }
            }
            assert!(
                worst / scale_max <= 1e-3,
                "step {k}: Mx rel err {}",
                worst / scale_max
            );
        }

        // final prediction matches w_T . x_test, which is near w* . x_test
        let got = blocks.prediction(&l, &out);
        let w_t = oracle.iterates.last().unwrap();
        let want: f64 = w_t.iter().zip(&x_test).map(|(a, b)| a * b).sum();
        assert!(
            (got - want).abs() / want.abs().max(1.0) <= 1e-3,
            "prediction {got} vs oracle {want}"
        );
        let w_star: f64 = w_true.iter().zip(&x_test).map(|(a, b)| a * b).sum();
        assert!((want - w_star).abs() <= 1e-6, "oracle converged");
    }

    #[test]
    fn alpha_range_is_enforced_at_build_time() {
        let l = newton_layout(3, 4);
        let s = ConstructionScale::default();
        assert!(build_newton_blocks(&l, &s, 0.5, 0.4).is_err());
        assert!(build_newton_blocks(&l, &s, -1.0, 0.4).is_err());
        assert!(build_newton_blocks(&l, &s, 0.3, 0.4).is_ok());
    }
}
