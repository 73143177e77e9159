//! Shared machinery for the trend criteria: a process-wide cache of
//! trained models (several criteria reuse the same (T, dT) = (20, 15)
//! models) and evaluation shorthands.

use algoformer::eval::{curve_in_context_samples, curve_loop_iterations, EvalCurve};
use algoformer::tasks::gen_eval_batch;
use algoformer::train::{train, TrainConfig, TrainRun};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

static CACHE: OnceLock<Mutex<HashMap<String, Arc<TrainRun>>>> = OnceLock::new();

/// Train (or fetch the cached result of) one configuration.
pub fn trained(cfg: &TrainConfig) -> Arc<TrainRun> {
    let key = format!("{cfg:?}");
    if let Some(hit) = CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .unwrap()
        .get(&key)
    {
        return hit.clone();
    }
    let t0 = std::time::Instant::now();
    let run = Arc::new(train(cfg).expect("training run"));
    eprintln!(
        "[trend] trained {:?} T={} dT={} seed={} in {:.0}s (final loss {:.4})",
        cfg.task.family,
        cfg.model.t_loops,
        cfg.model.delta_t,
        cfg.seed,
        t0.elapsed().as_secs_f64(),
        run.loss_log.last().map(|r| r.loss).unwrap_or(f64::NAN)
    );
    CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .unwrap()
        .insert(key, run.clone());
    run
}

pub const EVAL_SEED: u64 = 777;
pub const EVAL_PROMPTS: usize = 256;

/// Mean squared error at the query position (40 in-context samples).
pub fn mse_at_full_context(run: &TrainRun) -> f64 {
    let prompts = gen_eval_batch(&run.config.task, EVAL_SEED, EVAL_PROMPTS)
        .expect("eval prompts")
        .prompts;
    algoformer::train::eval_query_mse(
        &run.params,
        &run.config.model,
        &prompts,
        run.config.model.t_loops,
        2,
    )
    .expect("eval")
}

/// Full error-vs-samples curve at the model's training loop count.
pub fn samples_curve(run: &TrainRun, grid: &[usize]) -> EvalCurve {
    let prompts = gen_eval_batch(&run.config.task, EVAL_SEED, EVAL_PROMPTS)
        .expect("eval prompts")
        .prompts;
    curve_in_context_samples::<f64>(&run.params, &run.config.model, &prompts, grid, 2)
        .expect("curve")
}

/// Error at the query as a function of the loop count.
pub fn loops_curve(run: &TrainRun, grid: &[usize]) -> EvalCurve {
    let prompts = gen_eval_batch(&run.config.task, EVAL_SEED, EVAL_PROMPTS)
        .expect("eval prompts")
        .prompts;
    curve_loop_iterations::<f64>(&run.params, &run.config.model, &prompts, grid, 2)
        .expect("curve")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
