//! Training: Adam over the averaged-iteration loss, fresh prompts every
//! step, deterministic from (config, master seed).
//!
//! Gradients are computed per prompt on independent tapes and reduced in
//! prompt order, so the result is bitwise identical no matter how many
//! worker threads run the batch.

use crate::layer::AttentionMode;
use crate::layer::InitScheme;
use crate::model::{
    embed_prompt, init_model, loop_loss, AlgoFormerConfig, AlgoFormerParams, ModelError,
    ModelVars,
};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tasks::{self, Prompt, TaskError, TaskSpec};
use crate::tensor::{Tensor, TensorError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}; last good checkpoint is at step {last_good}")]
    NanLoss { step: u64, last_good: u64 },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Linear learning-rate warmup over this many steps (0 = none).
    /// Without layer normalization the early steps are the fragile ones.
    #[serde(default)]
    pub warmup_steps: u64,
    /// Clip the global gradient norm to this value before the update
    /// (None = no clipping).
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Cosine-decay the learning rate to `final_lr_frac * lr` over the
    /// run after warmup (None = constant).
    #[serde(default)]
    pub final_lr_frac: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            warmup_steps: 0,
            clip_norm: None,
            final_lr_frac: None,
        }
    }
}

/// First/second moment buffers in the canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S: Scalar> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn zeros_like(params: &AlgoFormerParams<S>) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |t| m.push(Tensor::zeros(t.shape().to_vec())));
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Learning rate at a given optimizer step under warmup + cosine decay.
pub fn scheduled_lr(hyper: &AdamHyper, step: u64, total_steps: u64) -> f64 {
    let warm = if hyper.warmup_steps > 0 && step < hyper.warmup_steps {
        (step + 1) as f64 / hyper.warmup_steps as f64
    } else {
        1.0
    };
    let decay = match hyper.final_lr_frac {
        Some(frac) if total_steps > hyper.warmup_steps && step >= hyper.warmup_steps => {
            let progress = (step - hyper.warmup_steps) as f64
                / (total_steps - hyper.warmup_steps).max(1) as f64;
            frac + (1.0 - frac) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
        _ => 1.0,
    };
    hyper.lr * warm * decay
}

/// One bias-corrected Adam update over parallel (param, grad) lists.
pub fn adam_step<S: Scalar>(
    params: &mut AlgoFormerParams<S>,
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    hyper: &AdamHyper,
) -> Result<()> {
    let warm = if hyper.warmup_steps > 0 && state.step < hyper.warmup_steps {
        (state.step + 1) as f64 / hyper.warmup_steps as f64
    } else {
        1.0
    };
    adam_step_with_lr(params, grads, state, hyper, hyper.lr * warm)
}

/// Adam update with an externally scheduled learning rate.
pub fn adam_step_with_lr<S: Scalar>(
    params: &mut AlgoFormerParams<S>,
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    hyper: &AdamHyper,
    lr_value: f64,
) -> Result<()> {
    let n_tensors = params.n_tensors();
    if grads.len() != n_tensors || state.m.len() != n_tensors {
        return Err(TrainError::Config(format!(
            "adam_step: {} grads / {} moments for {} parameter tensors",
            grads.len(),
            state.m.len(),
            n_tensors
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = S::from_f64(hyper.beta1);
    let b2 = S::from_f64(hyper.beta2);
    let lr = S::from_f64(lr_value);
    let eps = S::from_f64(hyper.eps);
    let one = S::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let mut idx = 0;
    let mut bad: Option<(Vec<usize>, Vec<usize>)> = None;
    params.visit_mut(&mut |p| {
        let g = &grads[idx];
        if g.shape() != p.shape() {
            if bad.is_none() {
                bad = Some((p.shape().to_vec(), g.shape().to_vec()));
            }
            idx += 1;
            return;
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (one - b1) * gi;
            let vi = b2 * v.data()[i] + (one - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] = p.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        idx += 1;
    });
    if let Some((p, g)) = bad {
        return Err(TrainError::Tensor(TensorError::ShapeMismatch {
            op: "adam_step",
            lhs: p,
            rhs: g,
        }));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub model: AlgoFormerConfig,
    #[serde(default)]
    pub optim: AdamHyper,
    pub batch_size: usize,
    pub steps: u64,
    /// 0 disables periodic evaluation.
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default = "default_eval_prompts")]
    pub eval_prompts: usize,
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub precision: Precision,
    /// Weight init std (biases zero).
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Residual-branch handling at init: `zero_residual` starts every
    /// layer as an exact identity (stable for deep weight-shared loops).
    #[serde(default)]
    pub init_kind: InitKind,
    /// Optional training curriculum over (dimension, samples); evaluation
    /// always uses the full task.
    #[serde(default)]
    pub curriculum: Option<Curriculum>,
}

/// Stages of (from_step, effective d, effective n), consulted in order;
/// regression families only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curriculum {
    pub stages: Vec<(u64, usize, usize)>,
}

impl Curriculum {
    pub fn at(&self, step: u64, full_d: usize, full_n: usize) -> (usize, usize) {
        let mut cur = (full_d, full_n);
        for (from, d, n) in &self.stages {
            if step >= *from {
                cur = (*d, *n);
            }
        }
        cur
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Gaussian,
    ZeroResidual,
}

fn default_eval_prompts() -> usize {
    1024
}
fn default_threads() -> usize {
    1
}
fn default_init_std() -> f64 {
    0.02
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be at least 1".into()));
        }
        if self.optim.lr <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        self.task.validate()?;
        self.model.validate()?;
        if self.model.feat_dim != self.task.d || self.model.label_dim != self.task.d_y {
            return Err(TrainError::Config(format!(
                "model dims (d={}, d_y={}) must match the task (d={}, d_y={})",
                self.model.feat_dim, self.model.label_dim, self.task.d, self.task.d_y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRow {
    pub step: u64,
    pub loss: f64,
    /// query-position eval MSE when an eval fell on this step
    pub eval_mse: Option<f64>,
}

pub struct TrainRun {
    pub config: TrainConfig,
    /// Final parameters, always stored at 64-bit.
    pub params: AlgoFormerParams<f64>,
    pub adam: AdamState<f64>,
    pub next_step: u64,
    pub loss_log: Vec<LossRow>,
}

fn convert_params<A: Scalar, B: Scalar>(p: &AlgoFormerParams<A>) -> AlgoFormerParams<B> {
    let conv = |t: &Tensor<A>| -> Tensor<B> {
        Tensor::from_raw(
            t.data().iter().map(|v| B::from_f64(v.as_f64())).collect(),
            t.shape().to_vec(),
        )
    };
    let conv_layer = |l: &crate::layer::TransformerLayerParams<A>| {
        crate::layer::TransformerLayerParams {
            heads: l
                .heads
                .iter()
                .map(|h| crate::layer::HeadParams {
                    w_q: conv(&h.w_q),
                    w_k: conv(&h.w_k),
                    w_v: conv(&h.w_v),
                })
                .collect(),
            w1: conv(&l.w1),
            b1: conv(&l.b1),
            w2: conv(&l.w2),
            b2: conv(&l.b2),
            product_units: l
                .product_units
                .iter()
                .map(|u| crate::tape::ProductUnit {
                    a_row: u.a_row,
                    b_row: u.b_row,
                    out_row: u.out_row,
                    coeff: B::from_f64(u.coeff.as_f64()),
                })
                .collect(),
        }
    };
    AlgoFormerParams {
        read_in: conv(&p.read_in),
        positional: conv(&p.positional),
        pre: p.pre.iter().map(conv_layer).collect(),
        loop_stack: p.loop_stack.iter().map(conv_layer).collect(),
        post: p.post.iter().map(conv_layer).collect(),
        read_out: conv(&p.read_out),
    }
}

fn convert_adam<A: Scalar, B: Scalar>(s: &AdamState<A>) -> AdamState<B> {
    let conv = |t: &Tensor<A>| -> Tensor<B> {
        Tensor::from_raw(
            t.data().iter().map(|v| B::from_f64(v.as_f64())).collect(),
            t.shape().to_vec(),
        )
    };
    AdamState {
        m: s.m.iter().map(&conv).collect(),
        v: s.v.iter().map(&conv).collect(),
        step: s.step,
    }
}

fn tokens_as<S: Scalar>(t: &Tensor<f64>) -> Tensor<S> {
    Tensor::from_raw(
        t.data().iter().map(|v| S::from_f64(*v)).collect(),
        t.shape().to_vec(),
    )
}

/// Loss and canonical-order gradients for one prompt.
fn prompt_loss_and_grads<S: Scalar>(
    params: &AlgoFormerParams<S>,
    cfg: &AlgoFormerConfig,
    prompt: &Prompt,
) -> Result<(f64, Vec<Tensor<S>>)> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params);
    let tokens = tokens_as::<S>(&prompt.tokens);
    let emb = embed_prompt(&mut tape, &vars, &tokens, cfg.n_max)?;
    let (positions, targets) = supervision_for(cfg.attention, prompt);
    let targets = tokens_as::<S>(&targets);
    let loss = loop_loss(
        &mut tape,
        &vars,
        emb,
        &positions,
        &targets,
        cfg.t_loops,
        cfg.delta_t,
        cfg.attention,
    )?;
    tape.backward(loss)?;
    let grads = vars
        .leaves()
        .iter()
        .map(|v| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape().to_vec()))
        })
        .collect();
    Ok((tape.value(loss).scalar_value().as_f64(), grads))
}

/// Decoder mode supervises every feature token; encoder mode supervises
/// the query token only.
pub fn supervision_for(mode: AttentionMode, prompt: &Prompt) -> (Vec<usize>, Tensor<f64>) {
    match mode {
        AttentionMode::Causal => (prompt.supervised.clone(), prompt.targets.clone()),
        AttentionMode::Full => {
            let idx = prompt
                .supervised
                .iter()
                .position(|p| *p == prompt.query_pos)
                .expect("query position is supervised");
            let d_y = prompt.targets.rows();
            let t = Tensor::from_fn(d_y, 1, |r, _| prompt.targets.at(r, idx));
            (vec![prompt.query_pos], t)
        }
    }
}

/// Mean loss and mean gradients over a batch, reduced in prompt order.
pub fn batch_loss_and_grads<S: Scalar>(
    params: &AlgoFormerParams<S>,
    cfg: &AlgoFormerConfig,
    prompts: &[Prompt],
    threads: usize,
) -> Result<(f64, Vec<Tensor<S>>)> {
    let per_prompt: Vec<Result<(f64, Vec<Tensor<S>>)>> = if threads > 1 {
        prompts
            .par_iter()
            .map(|p| prompt_loss_and_grads(params, cfg, p))
            .collect()
    } else {
        prompts
            .iter()
            .map(|p| prompt_loss_and_grads(params, cfg, p))
            .collect()
    };
    let scale = S::from_f64(1.0 / prompts.len() as f64);
    let mut loss_sum = 0.0;
    let mut acc: Option<Vec<Tensor<S>>> = None;
    for r in per_prompt {
        let (loss, grads) = r?;
        loss_sum += loss;
        match &mut acc {
            None => acc = Some(grads),
            Some(a) => {
                for (dst, src) in a.iter_mut().zip(&grads) {
                    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                        *d += *s;
                    }
                }
            }
        }
    }
    let mut grads = acc.expect("non-empty batch");
    for g in &mut grads {
        for v in g.data_mut() {
            *v *= scale;
        }
    }
    Ok((loss_sum / prompts.len() as f64, grads))
}

/// Scale all gradients so their concatenated norm is at most `clip`.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], clip: f64) {
    let mut norm_sq = 0.0f64;
    for g in grads.iter() {
        for v in g.data() {
            let x = v.as_f64();
            norm_sq += x * x;
        }
    }
    let norm = norm_sq.sqrt();
    if norm > clip && norm.is_finite() {
        let scale = S::from_f64(clip / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Mean squared error at the query position with t loop iterations.
pub fn eval_query_mse<S: Scalar>(
    params: &AlgoFormerParams<S>,
    cfg: &AlgoFormerConfig,
    prompts: &[Prompt],
    t: usize,
    threads: usize,
) -> Result<f64> {
    let errs = eval_query_errors(params, cfg, prompts, t, threads)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Per-prompt squared error at the query position.
pub fn eval_query_errors<S: Scalar>(
    params: &AlgoFormerParams<S>,
    cfg: &AlgoFormerConfig,
    prompts: &[Prompt],
    t: usize,
    threads: usize,
) -> Result<Vec<f64>> {
    let one = |prompt: &Prompt| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, params);
        let tokens = tokens_as::<S>(&prompt.tokens);
        let emb = embed_prompt(&mut tape, &vars, &tokens, cfg.n_max)?;
        let out = crate::model::forward(&mut tape, &vars, emb, t, cfg.attention)?;
        let pred = crate::model::readout(&mut tape, &vars, out, &[prompt.query_pos])?;
        let idx = prompt
            .supervised
            .iter()
            .position(|p| *p == prompt.query_pos)
            .expect("query position is supervised");
        let d_y = prompt.targets.rows();
        let mut err = 0.0;
        for r in 0..d_y {
            let diff = tape.value(pred).at(r, 0).as_f64() - prompt.targets.at(r, idx);
            err += diff * diff;
        }
        Ok(err)
    };
    if threads > 1 {
        prompts.par_iter().map(one).collect()
    } else {
        prompts.iter().map(one).collect()
    }
}

fn train_generic<S: Scalar>(config: &TrainConfig, start: Option<TrainRun>) -> Result<TrainRun> {
    config.validate()?;
    let (mut params, mut adam, first_step, mut loss_log) = match start {
        Some(run) => (
            convert_params::<f64, S>(&run.params),
            convert_adam::<f64, S>(&run.adam),
            run.next_step,
            run.loss_log,
        ),
        None => {
            let mut rng = crate::seed::stream(config.seed, crate::seed::labels::INIT);
            let scheme = match config.init_kind {
                InitKind::Gaussian => InitScheme::Gaussian {
                    std: config.init_std,
                },
                InitKind::ZeroResidual => InitScheme::ZeroResidual {
                    std: config.init_std,
                },
            };
            let params = init_model::<S, _>(&config.model, scheme, &mut rng)?;
            let adam = AdamState::zeros_like(&params);
            (params, adam, 0, Vec::new())
        }
    };
    let set_grad = |p: &mut AlgoFormerParams<S>| {
        p.visit_mut(&mut |t| t.set_requires_grad(true));
    };
    set_grad(&mut params);

    let eval_prompts = if config.eval_every > 0 {
        tasks::gen_eval_batch(&config.task, config.seed, config.eval_prompts)?.prompts
    } else {
        Vec::new()
    };

    let mut last_good = first_step;
    for step in first_step..config.steps {
        let batch = match &config.curriculum {
            Some(c) => {
                let (d_cur, n_cur) = c.at(step, config.task.d, config.task.n);
                tasks::gen_batch_curriculum(
                    &config.task,
                    d_cur,
                    n_cur,
                    config.seed,
                    step,
                    config.batch_size,
                )?
            }
            None => tasks::gen_batch(&config.task, config.seed, step, config.batch_size)?,
        };
        let (loss, mut grads) =
            batch_loss_and_grads(&params, &config.model, &batch.prompts, config.threads)?;
        if !loss.is_finite() {
            return Err(TrainError::NanLoss { step, last_good });
        }
        if let Some(clip) = config.optim.clip_norm {
            clip_global_norm(&mut grads, clip);
        }
        let lr_now = scheduled_lr(&config.optim, step, config.steps);
        adam_step_with_lr(&mut params, &grads, &mut adam, &config.optim, lr_now)?;
        last_good = step;
        let eval_mse = if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            Some(eval_query_mse(
                &params,
                &config.model,
                &eval_prompts,
                config.model.t_loops,
                config.threads,
            )?)
        } else {
            None
        };
        loss_log.push(LossRow {
            step,
            loss,
            eval_mse,
        });
    }
    Ok(TrainRun {
        config: config.clone(),
        params: convert_params::<S, f64>(&params),
        adam: convert_adam::<S, f64>(&adam),
        next_step: config.steps,
        loss_log,
    })
}

/// Train from scratch (or resume from a loaded run) at the configured
/// precision. Single-threaded runs from the same (config, seed) are
/// bitwise reproducible; multi-threaded runs reduce in a fixed order and
/// reproduce the single-threaded result exactly.
pub fn train(config: &TrainConfig) -> Result<TrainRun> {
    match config.precision {
        Precision::F64 => train_generic::<f64>(config, None),
        Precision::F32 => train_generic::<f32>(config, None),
    }
}

pub fn resume(config: &TrainConfig, from: TrainRun) -> Result<TrainRun> {
    match config.precision {
        Precision::F64 => train_generic::<f64>(config, Some(from)),
        Precision::F32 => train_generic::<f32>(config, Some(from)),
    }
}
