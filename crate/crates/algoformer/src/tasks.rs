//! Synthetic task generators and prompt assembly.
//!
//! Four families: (sparse) linear regression, regression with a fixed
//! representation, order-q autoregression with a fixed representation,
//! and chain-of-thought sequences generated by a per-prompt MLP. Given
//! (spec, seed) every generator is pure; batches derive one stream per
//! prompt index, so generation parallelizes without reordering effects.
//!
//! Prompt labels carry the noisy observations; supervision targets are
//! the clean function values.

use crate::seed;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task spec: {0}")]
    Spec(String),
    #[error("autoregressive rollout diverged at step {step} (|x| = {norm:.3e})")]
    Divergent { step: usize, norm: f64 },
    #[error("mixed families in one batch: {0:?} and {1:?}")]
    MixedFamilies(TaskFamily, TaskFamily),
}

pub type Result<T> = std::result::Result<T, TaskError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    LinearRegression,
    SparseLinearRegression,
    RepresentationRegression,
    ArQ,
    CotMlp,
}

/// Distribution tag for task weights and inputs: i.i.d. zero-mean
/// Gaussians with the given entry std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTag {
    pub std: f64,
}

impl Default for GaussianTag {
    fn default() -> Self {
        GaussianTag { std: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// Fixed leaky-ReLU MLP drawn once from `phi_seed`.
    #[default]
    Mlp,
    /// Pass-through surrogate (requires matching in/out widths).
    Identity,
}

fn default_leaky_slope() -> f64 {
    0.01
}

fn default_mlp_layers() -> usize {
    3
}

fn default_q() -> usize {
    3
}

fn default_phi_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub family: TaskFamily,
    /// Feature dimension d.
    pub d: usize,
    /// Label dimension d_y (1 for regression; d for AR and CoT).
    pub d_y: usize,
    /// In-context samples per prompt.
    pub n: usize,
    /// Label noise std.
    #[serde(default)]
    pub sigma: f64,
    /// Fraction of weight coordinates zeroed (sparse family only).
    #[serde(default)]
    pub sparsity: f64,
    /// Lag order q (AR family only).
    #[serde(default = "default_q")]
    pub q: usize,
    /// Depth L of the representation / chain MLP.
    #[serde(default = "default_mlp_layers")]
    pub mlp_layers: usize,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    /// Seed fixing the shared representation across every prompt of a run.
    #[serde(default = "default_phi_seed")]
    pub phi_seed: u64,
    #[serde(default)]
    pub phi: PhiKind,
    #[serde(default)]
    pub p_x: GaussianTag,
    #[serde(default)]
    pub p_a: GaussianTag,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(TaskError::Spec("d and n must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(TaskError::Spec(format!(
                "sparsity {} outside [0, 1)",
                self.sparsity
            )));
        }
        if self.q == 0 {
            return Err(TaskError::Spec("q must be at least 1".into()));
        }
        if self.mlp_layers == 0 {
            return Err(TaskError::Spec("mlp_layers must be at least 1".into()));
        }
        if !(0.0 < self.leaky_slope && self.leaky_slope < 1.0) {
            return Err(TaskError::Spec(format!(
                "leaky slope {} outside (0,1)",
                self.leaky_slope
            )));
        }
        match self.family {
            TaskFamily::LinearRegression | TaskFamily::SparseLinearRegression
            | TaskFamily::RepresentationRegression => {
                if self.d_y != 1 {
                    return Err(TaskError::Spec("regression families use d_y = 1".into()));
                }
            }
            TaskFamily::ArQ | TaskFamily::CotMlp => {
                if self.d_y != self.d {
                    return Err(TaskError::Spec("AR/CoT families use d_y = d".into()));
                }
                if self.family == TaskFamily::CotMlp && self.mlp_layers < 2 {
                    return Err(TaskError::Spec("CoT needs mlp_layers >= 2".into()));
                }
            }
        }
        Ok(())
    }

    /// The fixed representation for this spec, drawn from `phi_seed` alone.
    pub fn phi(&self) -> Mlp {
        match self.phi {
            PhiKind::Identity => Mlp::identity(self.phi_input_dim(), self.leaky_slope),
            PhiKind::Mlp => {
                let mut rng = seed::stream(self.phi_seed, seed::labels::PHI);
                Mlp::he_init(
                    self.phi_input_dim(),
                    self.d,
                    self.mlp_layers,
                    self.leaky_slope,
                    1.0,
                    &mut rng,
                )
            }
        }
    }

    pub fn phi_input_dim(&self) -> usize {
        match self.family {
            TaskFamily::ArQ => self.q * self.d,
            _ => self.d,
        }
    }
}

// ── leaky-ReLU MLP (bias-free) ──────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Tensor<f64>>,
    pub slope: f64,
}

impl Mlp {
    /// Layer widths in -> out -> out ... with N(0, scale^2 * 2/fan_in)
    /// entries, so activations neither explode nor vanish across depth.
    pub fn he_init(
        input: usize,
        out: usize,
        layers: usize,
        slope: f64,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut weights = Vec::with_capacity(layers);
        let mut fan_in = input;
        for _ in 0..layers {
            let std = scale * (2.0 / fan_in as f64).sqrt();
            weights.push(Tensor::from_fn(out, fan_in, |_, _| {
                rng.sample::<f64, _>(StandardNormal) * std
            }));
            fan_in = out;
        }
        Mlp { weights, slope }
    }

    pub fn identity(dim: usize, slope: f64) -> Self {
        Mlp {
            weights: vec![Tensor::eye(dim)],
            slope,
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.rows())
    }

    fn leaky(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            v * self.slope
        }
    }

    pub fn layer(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.weights[l];
        (0..w.rows())
            .map(|r| {
                let mut s = 0.0;
                for c in 0..w.cols() {
                    s += w.at(r, c) * x[c];
                }
                self.leaky(s)
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..self.depth() {
            cur = self.layer(l, &cur);
        }
        cur
    }

    /// Every intermediate state s^1..s^L.
    pub fn chain(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut states = Vec::with_capacity(self.depth());
        let mut cur = x.to_vec();
        for l in 0..self.depth() {
            cur = self.layer(l, &cur);
            states.push(cur.clone());
        }
        states
    }
}

// ── generated sample sets ───────────────────────────────────────────────

/// N in-context pairs plus a query, with clean targets for every feature
/// token (position i sees i-1 prior pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSamples {
    pub xs: Vec<Vec<f64>>,
    /// noisy labels for the N in-context pairs (prompt content)
    pub ys: Vec<Vec<f64>>,
    /// clean f(x) for all N+1 feature tokens (supervision targets)
    pub clean: Vec<Vec<f64>>,
    /// the hidden linear weight (d_y x d or d_y x rep-dim)
    pub truth: Tensor<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArSamples {
    /// x_1..x_N (noisy rollout, burn-in discarded)
    pub seq: Vec<Vec<f64>>,
    /// clean next-step value for each position: f([x_{t+1-q}..x_t])
    pub clean_next: Vec<Vec<f64>>,
    pub truth: Tensor<f64>,
    /// number of leading rollout steps discarded before the window
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotSamples {
    /// N full chains [x, s^1, .., s^L]
    pub chains: Vec<Vec<Vec<f64>>>,
    /// test chain [x_test, s^1, .., s^ell]
    pub test_chain: Vec<Vec<f64>>,
    /// truncation depth ell in 0..L
    pub ell: usize,
    /// the held-out answer s^{ell+1}
    pub target: Vec<f64>,
    /// per-prompt chain generator
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySamples {
    Regression(RegressionSamples),
    Ar(ArSamples),
    Cot(CotSamples),
}

fn gauss_vec(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect()
}

/// Linear and sparse linear regression. For the sparse family, exactly
/// round(sparsity * d) coordinates of w are zeroed, support resampled per
/// prompt.
pub fn gen_linear_regression(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<RegressionSamples> {
    spec.validate()?;
    let mut w = gauss_vec(rng, spec.d, spec.p_a.std);
    if spec.family == TaskFamily::SparseLinearRegression {
        let n_zero = (spec.sparsity * spec.d as f64).round() as usize;
        let mut idx: Vec<usize> = (0..spec.d).collect();
        // Fisher-Yates; the first n_zero entries form the masked support
        for i in (1..spec.d).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        for &i in idx.iter().take(n_zero) {
            w[i] = 0.0;
        }
    }
    let truth = Tensor::new(w.clone(), vec![1, spec.d]).expect("finite weight");
    let mut xs = Vec::with_capacity(spec.n + 1);
    let mut ys = Vec::with_capacity(spec.n);
    let mut clean = Vec::with_capacity(spec.n + 1);
    for i in 0..=spec.n {
        let x = gauss_vec(rng, spec.d, spec.p_x.std);
        let f: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        clean.push(vec![f]);
        if i < spec.n {
            let eps = rng.sample::<f64, _>(StandardNormal) * spec.sigma;
            ys.push(vec![f + eps]);
        }
        xs.push(x);
    }
    Ok(RegressionSamples {
        xs,
        ys,
        clean,
        truth,
    })
}

/// y = A phi(x) + eps with the representation fixed across prompts and a
/// fresh A per prompt.
pub fn gen_representation_regression(
    spec: &TaskSpec,
    rng: &mut ChaCha8Rng,
) -> Result<RegressionSamples> {
    spec.validate()?;
    let phi = spec.phi();
    let rep_dim = phi.out_dim();
    let a = Tensor::from_fn(spec.d_y, rep_dim, |_, _| {
        rng.sample::<f64, _>(StandardNormal) * spec.p_a.std
    });
    let mut xs = Vec::with_capacity(spec.n + 1);
    let mut ys = Vec::with_capacity(spec.n);
    let mut clean = Vec::with_capacity(spec.n + 1);
    for i in 0..=spec.n {
        let x = gauss_vec(rng, spec.d, spec.p_x.std);
        let rep = phi.forward(&x);
        let f: Vec<f64> = (0..spec.d_y)
            .map(|r| (0..rep_dim).map(|c| a.at(r, c) * rep[c]).sum())
            .collect();
        clean.push(f.clone());
        if i < spec.n {
            let y: Vec<f64> = f
                .iter()
                .map(|v| v + rng.sample::<f64, _>(StandardNormal) * spec.sigma)
                .collect();
            ys.push(y);
        }
        xs.push(x);
    }
    Ok(RegressionSamples {
        xs,
        ys,
        clean,
        truth: a,
    })
}

const AR_OVERFLOW_GUARD: f64 = 1e12;

/// Roll out x_{t+1} = A phi([x_{t+1-q}..x_t]) + eps from a zero history,
/// discarding a q-step burn-in so the reported window is not dominated by
/// the zero start.
pub fn gen_ar_q(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<ArSamples> {
    spec.validate()?;
    let phi = spec.phi();
    if phi.weights[0].cols() != spec.q * spec.d {
        return Err(TaskError::Spec(format!(
            "phi input width {} but q*d = {}",
            phi.weights[0].cols(),
            spec.q * spec.d
        )));
    }
    let a = Tensor::from_fn(spec.d, spec.d, |_, _| {
        rng.sample::<f64, _>(StandardNormal) * spec.p_a.std
    });
    let burn_in = spec.q;
    let total = burn_in + spec.n;
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(total + 1);
    let mut clean_all: Vec<Vec<f64>> = Vec::with_capacity(total + 1);
    for t in 0..=total {
        // stack [x_{t-q+1-1}, ..., x_{t-1}] with zeros for indices < 1
        let mut stacked = vec![0.0; spec.q * spec.d];
        for lag in 0..spec.q {
            let idx = t as isize - (spec.q - lag) as isize;
            if idx >= 0 {
                let src = &history[idx as usize];
                stacked[lag * spec.d..(lag + 1) * spec.d].copy_from_slice(src);
            }
        }
        let rep = phi.forward(&stacked);
        let f: Vec<f64> = (0..spec.d)
            .map(|r| (0..spec.d).map(|c| a.at(r, c) * rep[c]).sum())
            .collect();
        let x: Vec<f64> = f
            .iter()
            .map(|v| v + rng.sample::<f64, _>(StandardNormal) * spec.sigma)
            .collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > AR_OVERFLOW_GUARD {
            return Err(TaskError::Divergent { step: t, norm });
        }
        clean_all.push(f);
        history.push(x);
    }
    // window: tokens are x_{burn_in}..x_{burn_in+n-1}; the clean target of
    // token t is the pre-noise value of x_{t+1}
    let seq = history[burn_in..burn_in + spec.n].to_vec();
    let clean_next = clean_all[burn_in + 1..=burn_in + spec.n].to_vec();
    Ok(ArSamples {
        seq,
        clean_next,
        truth: a,
        burn_in,
    })
}

/// N full chains plus a test chain truncated at a uniform depth
/// ell in 0..L; the answer is s^{ell+1}.
pub fn gen_cot_mlp(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<CotSamples> {
    spec.validate()?;
    let mlp = Mlp::he_init(
        spec.d,
        spec.d,
        spec.mlp_layers,
        spec.leaky_slope,
        spec.p_a.std,
        rng,
    );
    let mut chains = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x = gauss_vec(rng, spec.d, spec.p_x.std);
        let mut chain = vec![x.clone()];
        chain.extend(mlp.chain(&x));
        chains.push(chain);
    }
    let x_test = gauss_vec(rng, spec.d, spec.p_x.std);
    let full: Vec<Vec<f64>> = {
        let mut c = vec![x_test.clone()];
        c.extend(mlp.chain(&x_test));
        c
    };
    let ell = rng.gen_range(0..spec.mlp_layers);
    let test_chain = full[..=ell].to_vec();
    let target = full[ell + 1].clone();
    Ok(CotSamples {
        chains,
        test_chain,
        ell,
        target,
        mlp,
    })
}

pub fn generate(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<FamilySamples> {
    match spec.family {
        TaskFamily::LinearRegression | TaskFamily::SparseLinearRegression => {
            Ok(FamilySamples::Regression(gen_linear_regression(spec, rng)?))
        }
        TaskFamily::RepresentationRegression => Ok(FamilySamples::Regression(
            gen_representation_regression(spec, rng)?,
        )),
        TaskFamily::ArQ => Ok(FamilySamples::Ar(gen_ar_q(spec, rng)?)),
        TaskFamily::CotMlp => Ok(FamilySamples::Cot(gen_cot_mlp(spec, rng)?)),
    }
}

// ── prompts ─────────────────────────────────────────────────────────────

/// One prompt: raw token columns of width d + d_y (features in the top
/// slot, labels zero-padded into the bottom slot), the supervised token
/// positions with their clean targets, and the query position.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub tokens: Tensor<f64>,
    pub supervised: Vec<usize>,
    /// d_y x supervised.len()
    pub targets: Tensor<f64>,
    pub query_pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBatch {
    pub family: TaskFamily,
    pub prompts: Vec<Prompt>,
}

impl PromptBatch {
    pub fn new(family: TaskFamily, prompts: Vec<Prompt>) -> Self {
        PromptBatch { family, prompts }
    }
}

/// Interleave one sample set into its token matrix.
pub fn build_prompt(spec: &TaskSpec, samples: &FamilySamples) -> Result<Prompt> {
    let width = spec.d + spec.d_y;
    match samples {
        FamilySamples::Regression(r) => {
            // x_1, y_1, ..., x_N, y_N, x_test: 2N+1 tokens
            let n = r.ys.len();
            let n_tokens = 2 * n + 1;
            let mut tokens = Tensor::zeros(vec![width, n_tokens]);
            for i in 0..=n {
                for (row, v) in r.xs[i].iter().enumerate() {
                    tokens.set(row, 2 * i, *v);
                }
            }
            for (i, y) in r.ys.iter().enumerate() {
                for (row, v) in y.iter().enumerate() {
                    tokens.set(spec.d + row, 2 * i + 1, *v);
                }
            }
            let supervised: Vec<usize> = (0..=n).map(|i| 2 * i).collect();
            let targets = Tensor::from_fn(spec.d_y, supervised.len(), |r_, j| r.clean[j][r_]);
            Ok(Prompt {
                tokens,
                supervised,
                targets,
                query_pos: 2 * n,
            })
        }
        FamilySamples::Ar(ar) => {
            // no interleaving: N feature tokens
            let n = ar.seq.len();
            let mut tokens = Tensor::zeros(vec![width, n]);
            for (t, x) in ar.seq.iter().enumerate() {
                for (row, v) in x.iter().enumerate() {
                    tokens.set(row, t, *v);
                }
            }
            let supervised: Vec<usize> = (0..n).collect();
            let targets = Tensor::from_fn(spec.d_y, n, |r_, j| ar.clean_next[j][r_]);
            Ok(Prompt {
                tokens,
                supervised,
                targets,
                query_pos: n - 1,
            })
        }
        FamilySamples::Cot(c) => {
            // N chains of length L+1 followed by the partial test chain
            let l = spec.mlp_layers;
            let n_tokens = c.chains.len() * (l + 1) + c.test_chain.len();
            let mut tokens = Tensor::zeros(vec![width, n_tokens]);
            let mut supervised = Vec::new();
            let mut target_cols: Vec<&[f64]> = Vec::new();
            let mut col = 0;
            for chain in &c.chains {
                for (j, state) in chain.iter().enumerate() {
                    for (row, v) in state.iter().enumerate() {
                        tokens.set(row, col, *v);
                    }
                    // every token whose successor lies in the same chain
                    if j + 1 < chain.len() {
                        supervised.push(col);
                        target_cols.push(&chain[j + 1]);
                    }
                    col += 1;
                }
            }
            for (j, state) in c.test_chain.iter().enumerate() {
                for (row, v) in state.iter().enumerate() {
                    tokens.set(row, col, *v);
                }
                if j + 1 < c.test_chain.len() {
                    supervised.push(col);
                    target_cols.push(&c.test_chain[j + 1]);
                } else {
                    supervised.push(col);
                    target_cols.push(&c.target);
                }
                col += 1;
            }
            let targets = Tensor::from_fn(spec.d_y, supervised.len(), |r_, j| target_cols[j][r_]);
            Ok(Prompt {
                tokens,
                supervised,
                targets,
                query_pos: n_tokens - 1,
            })
        }
    }
}

/// Invert the regression prompt layout back into (xs, ys).
pub fn extract_regression(spec: &TaskSpec, prompt: &Prompt) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n_tokens = prompt.tokens.cols();
    let n = (n_tokens - 1) / 2;
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n);
    for i in 0..=n {
        xs.push((0..spec.d).map(|r| prompt.tokens.at(r, 2 * i)).collect());
        if i < n {
            ys.push(
                (0..spec.d_y)
                    .map(|r| prompt.tokens.at(spec.d + r, 2 * i + 1))
                    .collect(),
            );
        }
    }
    (xs, ys)
}

/// Deterministic batch: prompt p of step s draws from the stream derived
/// from (master, "data", s, p).
pub fn gen_batch(spec: &TaskSpec, master: u64, step: u64, batch: usize) -> Result<PromptBatch> {
    gen_batch_curriculum(spec, spec.d, spec.n, master, step, batch)
}

/// Batch at a reduced effective dimension/sample count: tasks are drawn
/// in `d_cur` dimensions with `n_cur` pairs and the feature slots above
/// `d_cur` are zero-padded, so prompts stay compatible with the full-size
/// model while the regression itself is easier. The final curriculum
/// stage (`d_cur = d`, `n_cur = n`) is exactly the plain batch.
pub fn gen_batch_curriculum(
    spec: &TaskSpec,
    d_cur: usize,
    n_cur: usize,
    master: u64,
    step: u64,
    batch: usize,
) -> Result<PromptBatch> {
    let d_cur = d_cur.clamp(1, spec.d);
    let n_cur = n_cur.clamp(1, spec.n);
    let stage_spec = TaskSpec {
        d: d_cur,
        n: n_cur,
        ..spec.clone()
    };
    let pad = spec.d - d_cur;
    let mut prompts = Vec::with_capacity(batch);
    for p in 0..batch {
        let mut rng = seed::prompt_stream(master, seed::labels::DATA, step, p as u64);
        let mut samples = generate(&stage_spec, &mut rng)?;
        if pad > 0 {
            if let FamilySamples::Regression(r) = &mut samples {
                for x in r.xs.iter_mut() {
                    x.extend(std::iter::repeat(0.0).take(pad));
                }
            }
        }
        let padded_spec = TaskSpec {
            n: n_cur,
            ..spec.clone()
        };
        prompts.push(build_prompt(&padded_spec, &samples)?);
    }
    Ok(PromptBatch::new(spec.family, prompts))
}

/// Like `gen_batch` but from the held-out eval stream.
pub fn gen_eval_batch(spec: &TaskSpec, master: u64, batch: usize) -> Result<PromptBatch> {
    let mut prompts = Vec::with_capacity(batch);
    for p in 0..batch {
        let mut rng = seed::prompt_stream(master, seed::labels::EVAL, 0, p as u64);
        let samples = generate(spec, &mut rng)?;
        prompts.push(build_prompt(spec, &samples)?);
    }
    Ok(PromptBatch::new(spec.family, prompts))
}

pub fn lr_spec(d: usize, n: usize, sigma: f64) -> TaskSpec {
    TaskSpec {
        family: TaskFamily::LinearRegression,
        d,
        d_y: 1,
        n,
        sigma,
        sparsity: 0.0,
        q: default_q(),
        mlp_layers: default_mlp_layers(),
        leaky_slope: default_leaky_slope(),
        phi_seed: 0,
        phi: PhiKind::Mlp,
        p_x: GaussianTag::default(),
        p_a: GaussianTag::default(),
    }
}
