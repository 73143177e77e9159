//! Causal (decoder) gradient descent: each feature token maintains its
//! own weight w^i over the loss restricted to its prefix pairs.
//!
//! Head one: queries w^i against keys c x_j stored on the label tokens
//! (so the running sum excludes the query's own x), values (e^C/c) x_j,
//! pinned on token one. Head two repeats with constant queries against
//! keys c y_j and negated values. Their sum leaves
//! `sum_{j<i} (w^i . x_j - y_j) x_j` on the scratch band; the
//! feed-forward multiplies by the token-carried 1/(i-1) and -eta via an
//! exact product and updates the weight band in place. Token one carries
//! scale 0, so its weight never moves.

use crate::constructions::ffn::{band_selector, FfnProgram};
use crate::constructions::layout::DecoderLayout;
use crate::constructions::{ConstructionScale, Result};
use crate::layer::{HeadParams, TransformerLayerParams};
use crate::tensor::Tensor;

pub fn build_decoder_gd_layer(
    l: &DecoderLayout,
    s: &ConstructionScale,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let (d, w) = (l.d, l.width);
    let k = d + 1;
    let e_c_over_c = s.big_c.exp() / s.small_c;

    let mut wq1 = band_selector(k, w, (0..d).map(|r| (r, l.weight.at(r))), 1.0);
    wq1.set(d, l.ind_x, 1.0);
    wq1.set(d, l.ind_y, 1.0);
    let mut wk1 = band_selector(k, w, (0..d).map(|r| (r, l.shifted.at(r))), s.small_c);
    wk1.set(d, l.ind_tok1, s.big_c);
    let wv1 = band_selector(
        w,
        w,
        (0..d).map(|r| (l.scratch.at(r), l.shifted.at(r))),
        e_c_over_c,
    );

    let mut wq2 = Tensor::zeros(vec![k, w]);
    wq2.set(0, l.ind_x, 1.0);
    wq2.set(0, l.ind_y, 1.0);
    wq2.set(d, l.ind_x, 1.0);
    wq2.set(d, l.ind_y, 1.0);
    let mut wk2 = band_selector(k, w, [(0, l.label)], s.small_c);
    wk2.set(d, l.ind_tok1, s.big_c);
    let wv2 = band_selector(
        w,
        w,
        (0..d).map(|r| (l.scratch.at(r), l.shifted.at(r))),
        -e_c_over_c,
    );

    let mut prog = FfnProgram::new(w);
    for r in 0..d {
        prog = prog
            .product(l.weight.at(r), l.scale_row, l.scratch.at(r), -s.eta)
            .linear(l.scratch.at(r), l.scratch.at(r), -1.0);
    }
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![
            HeadParams {
                w_q: wq1,
                w_k: wk1,
                w_v: wv1,
            },
            HeadParams {
                w_q: wq2,
                w_k: wk2,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{gd_solve, RegressionInstance};
    use crate::constructions::layout::decoder_layout;
    use crate::layer::{layer_forward_plain, AttentionMode};
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, d: usize, seed_v: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = seed::stream(seed_v, "decoder-test");
        let w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let ys = xs
            .iter()
            .map(|x| {
                w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + 0.1 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (xs, ys)
    }

    #[test]
    fn per_token_weights_match_prefix_gd() {
        let (n, d, t) = (8, 3, 6);
        let (xs, ys) = random_problem(n, d, 1);
        let l = decoder_layout(d);
        let s = ConstructionScale::default();
        let layer = build_decoder_gd_layer(&l, &s).unwrap();
        let mut state = l.build_prompt(&xs, &ys);
        let mut per_step: Vec<Tensor<f64>> = vec![state.clone()];
        for _ in 0..t {
            state = layer_forward_plain(&layer, &state, AttentionMode::Causal).unwrap();
            per_step.push(state.clone());
        }
        for i in 1..n {
            // token of x_{i+1} (0-based sample index i) has prefix pairs 1..=i
            let inst = RegressionInstance::from_rows(&xs[..i], &ys[..i]);
            let oracle = gd_solve(&inst, s.eta, t, &vec![0.0; d]);
            for (k, state) in per_step.iter().enumerate() {
                let got = l.read_weight(state, i);
                let want = &oracle.iterates[k];
                let mut worst: f64 = 0.0;
                let mut scale: f64 = 1.0;
                for r in 0..d {
                    worst = worst.max((got[r] - want[r]).abs());
                    scale = scale.max(want[r].abs());
                }
                assert!(
                    worst / scale <= 1e-3,
                    "sample {i} step {k}: rel err {}",
                    worst / scale
                );
            }
        }
    }

    #[test]
    fn first_token_weight_never_moves() {
        let (xs, ys) = random_problem(5, 3, 2);
        let l = decoder_layout(3);
        let layer = build_decoder_gd_layer(&l, &ConstructionScale::default()).unwrap();
        let mut state = l.build_prompt(&xs, &ys);
        for _ in 0..4 {
            state = layer_forward_plain(&layer, &state, AttentionMode::Causal).unwrap();
        }
        assert!(l.read_weight(&state, 0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_pair_prompt_never_updates() {
        let (xs, ys) = random_problem(1, 3, 3);
        let l = decoder_layout(3);
        let layer = build_decoder_gd_layer(&l, &ConstructionScale::default()).unwrap();
        let prompt = l.build_prompt(&xs, &ys);
        let out = layer_forward_plain(&layer, &prompt, AttentionMode::Causal).unwrap();
        assert!(l.read_weight(&out, 0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn suffix_perturbation_leaves_prefix_weights_bitwise_unchanged() {
        let (xs, ys) = random_problem(6, 3, 4);
        let l = decoder_layout(3);
        let layer = build_decoder_gd_layer(&l, &ConstructionScale::default()).unwrap();
        let run = |xs: &[Vec<f64>], ys: &[f64]| {
            let mut state = l.build_prompt(xs, ys);
            for _ in 0..3 {
                state = layer_forward_plain(&layer, &state, AttentionMode::Causal).unwrap();
            }
            state
        };
        let base = run(&xs, &ys);
        let mut xs2 = xs.clone();
        let mut ys2 = ys.clone();
        xs2[5] = vec![100.0, -50.0, 3.0];
        ys2[5] = -77.0;
        ys2[4] = 12.0;
        let pert = run(&xs2, &ys2);
        for i in 0..4 {
            assert_eq!(
                l.read_weight(&base, i),
                l.read_weight(&pert, i),
                "w^{} trajectories must be bitwise stable",
                i + 1
            );
        }
    }

    #[test]
    fn one_step_from_zero_matches_the_closed_form_first_update() {
        // w^i_1 = (eta/(i-1)) sum_{j<i} y_j x_j when w^0 = 0
        let (xs, ys) = random_problem(6, 2, 5);
        let l = decoder_layout(2);
        let s = ConstructionScale::default();
        let layer = build_decoder_gd_layer(&l, &s).unwrap();
        let prompt = l.build_prompt(&xs, &ys);
        let out = layer_forward_plain(&layer, &prompt, AttentionMode::Causal).unwrap();
        for i in 1..6 {
            let got = l.read_weight(&out, i);
            for r in 0..2 {
                let want: f64 = (0..i).map(|j| ys[j] * xs[j][r]).sum::<f64>() * s.eta / i as f64;
                assert!(
                    (got[r] - want).abs() / want.abs().max(1.0) <= 1e-3,
                    "sample {i} row {r}: {} vs {want}",
                    got[r]
                );
            }
        }
    }
}
