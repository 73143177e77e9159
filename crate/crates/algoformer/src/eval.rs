//! Evaluation curves: error versus in-context samples and error versus
//! loop iterations, plus the isotonic fit used for trend checks.

use crate::layer::AttentionMode;
use crate::model::{embed_prompt, readout, AlgoFormerConfig, AlgoFormerParams, ModelVars};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tasks::Prompt;
use crate::tensor::Tensor;
use crate::train::{Result, TrainError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveAxis {
    InContextSamples,
    LoopIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub x: usize,
    pub mean_mse: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalCurve {
    pub axis: CurveAxis,
    pub model_tag: String,
    pub points: Vec<CurvePoint>,
}

fn tokens_as<S: Scalar>(t: &Tensor<f64>) -> Tensor<S> {
    Tensor::from_raw(
        t.data().iter().map(|v| S::from_f64(*v)).collect(),
        t.shape().to_vec(),
    )
}

fn summarize(mut per_x: Vec<(usize, Vec<f64>)>) -> Vec<CurvePoint> {
    per_x.sort_by_key(|p| p.0);
    per_x
        .into_iter()
        .map(|(x, errs)| {
            let n = errs.len();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
            CurvePoint {
                x,
                mean_mse: mean,
                std: var.sqrt(),
                n,
            }
        })
        .collect()
}

/// Squared prediction error at each supervised position of one prompt,
/// indexed by the number of prior in-context samples.
fn per_position_errors<S: Scalar>(
    params: &AlgoFormerParams<S>,
    cfg: &AlgoFormerConfig,
    prompt: &Prompt,
    t: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params);
    let tokens = tokens_as::<S>(&prompt.tokens);
    let emb = embed_prompt(&mut tape, &vars, &tokens, cfg.n_max)?;
    let out = crate::model::forward(&mut tape, &vars, emb, t, cfg.attention)?;
    let pred = readout(&mut tape, &vars, out, &prompt.supervised)?;
    let d_y = prompt.targets.rows();
    let mut errs = Vec::with_capacity(prompt.supervised.len());
    for (k, _pos) in prompt.supervised.iter().enumerate() {
        let mut e = 0.0;
        for r in 0..d_y {
            let diff = tape.value(pred).at(r, k).as_f64() - prompt.targets.at(r, k);
            e += diff * diff;
        }
        errs.push((k, e));
    }
    Ok(errs)
}

/// Error after conditioning on the first x samples. In causal mode the
/// mask guarantees position k sees exactly k prior samples, so one pass
/// per prompt yields the whole curve; in full-attention mode each grid
/// point truncates the prompt to its first x pairs plus the query.
pub fn curve_in_context_samples<S: Scalar>(
    params: &AlgoFormerParams<S>,
    cfg: &AlgoFormerConfig,
    prompts: &[Prompt],
    grid: &[usize],
    threads: usize,
) -> Result<EvalCurve> {
    if grid.is_empty() {
        return Err(TrainError::Config("empty evaluation grid".into()));
    }
    let t = cfg.t_loops;
    let collect = |prompt: &Prompt| -> Result<Vec<(usize, f64)>> {
        match cfg.attention {
            AttentionMode::Causal => {
                let all = per_position_errors(params, cfg, prompt, t)?;
                Ok(grid
                    .iter()
                    .filter_map(|&x| all.get(x).map(|(k, e)| (*k, *e)))
                    .collect())
            }
            AttentionMode::Full => {
                let mut out = Vec::with_capacity(grid.len());
                for &x in grid {
                    let truncated = truncate_to_samples(prompt, x);
                    let pos = truncated.query_pos;
                    let mut tape = Tape::new();
                    let vars = ModelVars::register(&mut tape, params);
                    let tokens = tokens_as::<S>(&truncated.tokens);
                    let emb = embed_prompt(&mut tape, &vars, &tokens, cfg.n_max)?;
                    let o = crate::model::forward(&mut tape, &vars, emb, t, cfg.attention)?;
                    let pred = readout(&mut tape, &vars, o, &[pos])?;
                    let idx = truncated
                        .supervised
                        .iter()
                        .position(|p| *p == pos)
                        .expect("query supervised");
                    let d_y = truncated.targets.rows();
                    let mut e = 0.0;
                    for r in 0..d_y {
                        let diff =
                            tape.value(pred).at(r, 0).as_f64() - truncated.targets.at(r, idx);
                        e += diff * diff;
                    }
                    out.push((x, e));
                }
                Ok(out)
            }
        }
    };
    let rows: Vec<Result<Vec<(usize, f64)>>> = if threads > 1 {
        prompts.par_iter().map(collect).collect()
    } else {
        prompts.iter().map(collect).collect()
    };
    let mut per_x: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for row in rows {
        for (x, e) in row? {
            per_x.entry(x).or_default().push(e);
        }
    }
    Ok(EvalCurve {
        axis: CurveAxis::InContextSamples,
        model_tag: String::new(),
        points: summarize(per_x.into_iter().collect()),
    })
}

/// Truncate a regression prompt to its first x pairs: the feature token
/// x_{x+1} becomes the query, exactly the window a causal pass sees at
/// that position.
pub fn truncate_to_samples(prompt: &Prompt, x: usize) -> Prompt {
    let width = prompt.tokens.rows();
    let n_keep = 2 * x + 1;
    debug_assert!(n_keep <= prompt.tokens.cols());
    let mut tokens = Tensor::zeros(vec![width, n_keep]);
    for r in 0..width {
        for c in 0..n_keep {
            tokens.set(r, c, prompt.tokens.at(r, c));
        }
    }
    let supervised: Vec<usize> = (0..=x).map(|i| 2 * i).collect();
    let d_y = prompt.targets.rows();
    let targets = Tensor::from_fn(d_y, x + 1, |r, j| prompt.targets.at(r, j));
    Prompt {
        tokens,
        supervised,
        targets,
        query_pos: n_keep - 1,
    }
}

/// Error of `forward(.; t)` at the query position across loop counts,
/// evaluated incrementally (one loop pass up to the largest t).
pub fn curve_loop_iterations<S: Scalar>(
    params: &AlgoFormerParams<S>,
    cfg: &AlgoFormerConfig,
    prompts: &[Prompt],
    grid: &[usize],
    threads: usize,
) -> Result<EvalCurve> {
    if grid.is_empty() {
        return Err(TrainError::Config("empty evaluation grid".into()));
    }
    if cfg.l_loop == 0 || cfg.t_loops == 0 {
        return Err(TrainError::Config(
            "loop-iteration axis needs a looped model (t_loops > 0)".into(),
        ));
    }
    let t_max = *grid.iter().max().expect("non-empty grid");
    let one = |prompt: &Prompt| -> Result<Vec<(usize, f64)>> {
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, params);
        let tokens = tokens_as::<S>(&prompt.tokens);
        let emb = embed_prompt(&mut tape, &vars, &tokens, cfg.n_max)?;
        let states = crate::model::forward_states(&mut tape, &vars, emb, t_max, cfg.attention)?;
        let qidx = prompt
            .supervised
            .iter()
            .position(|p| *p == prompt.query_pos)
            .expect("query supervised");
        let d_y = prompt.targets.rows();
        let mut out = Vec::with_capacity(grid.len());
        for &t in grid {
            let mut cur = states[t];
            for layer in &vars.post {
                cur = crate::layer::transformer_layer_forward(&mut tape, layer, cur, cfg.attention)?;
            }
            let pred = readout(&mut tape, &vars, cur, &[prompt.query_pos])?;
            let mut e = 0.0;
            for r in 0..d_y {
                let diff = tape.value(pred).at(r, 0).as_f64() - prompt.targets.at(r, qidx);
                e += diff * diff;
            }
            out.push((t, e));
        }
        Ok(out)
    };
    let rows: Vec<Result<Vec<(usize, f64)>>> = if threads > 1 {
        prompts.par_iter().map(one).collect()
    } else {
        prompts.iter().map(one).collect()
    };
    let mut per_x: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for row in rows {
        for (x, e) in row? {
            per_x.entry(x).or_default().push(e);
        }
    }
    Ok(EvalCurve {
        axis: CurveAxis::LoopIterations,
        model_tag: String::new(),
        points: summarize(per_x.into_iter().collect()),
    })
}

/// Pool-adjacent-violators fit of a non-increasing sequence, plus the
/// worst absolute residual as a fraction of the data range.
pub fn isotonic_non_increasing(ys: &[f64]) -> (Vec<f64>, f64) {
    // PAV on the negated sequence gives the non-decreasing fit
    let mut blocks: Vec<(f64, usize)> = Vec::new(); // (mean, count) of -y
    for &y in ys {
        blocks.push((-y, 1));
        while blocks.len() >= 2 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            blocks.pop();
            let c = c1 + c2;
            blocks.push(((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c));
        }
    }
    let mut fit = Vec::with_capacity(ys.len());
    for (m, c) in blocks {
        for _ in 0..c {
            fit.push(-m);
        }
    }
    let range = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst = ys
        .iter()
        .zip(&fit)
        .map(|(y, f)| (y - f).abs())
        .fold(0.0, f64::max);
    let frac = if range > 0.0 { worst / range } else { 0.0 };
    (fit, frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::InitScheme;
    use crate::model::init_model;
    use crate::tasks::{gen_eval_batch, lr_spec};

    fn small_model(attention: AttentionMode) -> (AlgoFormerConfig, AlgoFormerParams<f64>) {
        let cfg = AlgoFormerConfig {
            d_model: 12,
            feat_dim: 3,
            label_dim: 1,
            l_pre: 1,
            l_loop: 1,
            l_post: 1,
            heads: 2,
            t_loops: 3,
            delta_t: 2,
            attention,
            ffn_dim: 24,
            key_dim: 12,
            n_max: 13,
        };
        let mut rng = crate::seed::stream(5, crate::seed::labels::INIT);
        let p = init_model(&cfg, InitScheme::Gaussian { std: 0.05 }, &mut rng).unwrap();
        (cfg, p)
    }

    #[test]
    fn causal_curve_has_one_point_per_grid_entry() {
        let (cfg, params) = small_model(AttentionMode::Causal);
        let prompts = gen_eval_batch(&lr_spec(3, 6, 0.0), 1, 8).unwrap().prompts;
        let curve =
            curve_in_context_samples(&params, &cfg, &prompts, &[0, 2, 4, 6], 1).unwrap();
        assert_eq!(curve.points.len(), 4);
        assert!(curve.points.iter().all(|p| p.n == 8));
        // an untrained model sits near the trivial predictor: flat high error
        let first = curve.points[0].mean_mse;
        let last = curve.points[3].mean_mse;
        assert!(first > 0.1 && last > 0.1);
    }

    #[test]
    fn encoder_truncation_matches_causal_masking_semantics() {
        // in causal mode, truncating the prompt to x samples must give the
        // same prediction as reading position x of the full prompt
        let (cfg, params) = small_model(AttentionMode::Causal);
        let prompt = &gen_eval_batch(&lr_spec(3, 6, 0.0), 2, 1).unwrap().prompts[0];
        let full = per_position_errors(&params, &cfg, prompt, cfg.t_loops).unwrap();
        for x in [0usize, 2, 5] {
            let trunc = truncate_to_samples(prompt, x);
            let errs = per_position_errors(&params, &cfg, &trunc, cfg.t_loops).unwrap();
            let (_, e_trunc) = errs[x];
            let (_, e_full) = full[x];
            assert!(
                (e_trunc - e_full).abs() < 1e-20,
                "x={x}: {e_trunc} vs {e_full}"
            );
        }
    }

    #[test]
    fn loop_axis_errors_on_unloopable_model() {
        let (mut cfg, params) = small_model(AttentionMode::Causal);
        cfg.t_loops = 0;
        cfg.delta_t = 0;
        let prompts = gen_eval_batch(&lr_spec(3, 6, 0.0), 3, 2).unwrap().prompts;
        assert!(curve_loop_iterations(&params, &cfg, &prompts, &[1, 2], 1).is_err());
    }

    #[test]
    fn loop_axis_incremental_matches_direct_forward() {
        let (cfg, params) = small_model(AttentionMode::Causal);
        let prompts = gen_eval_batch(&lr_spec(3, 6, 0.0), 4, 3).unwrap().prompts;
        let curve = curve_loop_iterations(&params, &cfg, &prompts, &[0, 1, 3, 5], 1).unwrap();
        // direct recomputation at t = 3 for comparison
        let direct = crate::train::eval_query_mse(&params, &cfg, &prompts, 3, 1).unwrap();
        let point = curve.points.iter().find(|p| p.x == 3).unwrap();
        assert!((point.mean_mse - direct).abs() < 1e-12);
    }

    #[test]
    fn pava_fits_monotone_and_noisy_sequences() {
        let (fit, res) = isotonic_non_increasing(&[5.0, 4.0, 3.0, 2.0]);
        assert_eq!(fit, vec![5.0, 4.0, 3.0, 2.0]);
        assert_eq!(res, 0.0);
        let (fit, res) = isotonic_non_increasing(&[5.0, 2.9, 3.1, 1.0]);
        assert!(fit.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        assert!(res > 0.0 && res < 0.05, "small violation: {res}");
        let (_, res) = isotonic_non_increasing(&[1.0, 5.0, 1.0, 5.0]);
        assert!(res > 0.3, "badly non-monotone: {res}");
    }
}
