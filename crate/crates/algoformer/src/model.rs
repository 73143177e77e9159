//! The three-part model: pre-transformer, weight-shared looped transformer
//! applied `t` times, post-transformer, with a linear read-in plus learned
//! positional columns on the way in and a linear read-out on the way out.
//!
//! Weight sharing falls out of the tape: each loop layer's leaves are
//! registered once per tape and the same handles are reused for every
//! application, so gradients from all iterations accumulate into one copy.

use crate::layer::{
    init_params, transformer_layer_forward, AttentionMode, InitScheme, LayerVars,
    TransformerLayerParams,
};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("prompt has {n} tokens but the positional table holds {n_max}")]
    Capacity { n: usize, n_max: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoFormerConfig {
    /// Model width D.
    pub d_model: usize,
    /// Feature dimension d of the task inputs.
    pub feat_dim: usize,
    /// Label dimension d_y.
    pub label_dim: usize,
    pub l_pre: usize,
    pub l_loop: usize,
    pub l_post: usize,
    pub heads: usize,
    /// Loop count T used at training time.
    pub t_loops: usize,
    /// Spread of supervised loop counts; the loss averages t = T-dT..=T.
    pub delta_t: usize,
    pub attention: AttentionMode,
    /// FFN hidden width m (the paper leaves it open; default 4D).
    pub ffn_dim: usize,
    /// Key/query inner dimension k (the paper leaves it open; default D).
    pub key_dim: usize,
    /// Maximum number of tokens the positional table supports.
    pub n_max: usize,
}

impl AlgoFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_t > self.t_loops {
            return Err(ModelError::Config(format!(
                "delta_t {} exceeds t_loops {}",
                self.delta_t, self.t_loops
            )));
        }
        if self.d_model < self.feat_dim {
            return Err(ModelError::Config(format!(
                "d_model {} must be at least feat_dim {} for an injective read-in",
                self.d_model, self.feat_dim
            )));
        }
        if self.heads == 0 || self.d_model == 0 || self.n_max == 0 {
            return Err(ModelError::Config("zero-sized model".into()));
        }
        Ok(())
    }

    /// Width of a raw token column: zero-padded feature and label slots.
    pub fn token_width(&self) -> usize {
        self.feat_dim + self.label_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoFormerParams<S: Scalar> {
    pub read_in: Tensor<S>,
    /// Learned positional columns, one per token slot (D x n_max).
    pub positional: Tensor<S>,
    pub pre: Vec<TransformerLayerParams<S>>,
    /// Stored once; applied t times.
    pub loop_stack: Vec<TransformerLayerParams<S>>,
    pub post: Vec<TransformerLayerParams<S>>,
    pub read_out: Tensor<S>,
}

impl<S: Scalar> AlgoFormerParams<S> {
    /// Visit every learnable tensor in a fixed canonical order.
    pub fn visit(&self, f: &mut impl FnMut(&Tensor<S>)) {
        f(&self.read_in);
        f(&self.positional);
        for l in &self.pre {
            l.visit(f);
        }
        for l in &self.loop_stack {
            l.visit(f);
        }
        for l in &self.post {
            l.visit(f);
        }
        f(&self.read_out);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor<S>)) {
        f(&mut self.read_in);
        f(&mut self.positional);
        for l in &mut self.pre {
            l.visit_mut(f);
        }
        for l in &mut self.loop_stack {
            l.visit_mut(f);
        }
        for l in &mut self.post {
            l.visit_mut(f);
        }
        f(&mut self.read_out);
    }

    /// Exact count of stored scalars; the loop stack counts once no matter
    /// how many times it is applied.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    pub fn n_tensors(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

pub fn init_model<S: Scalar, R: Rng>(
    cfg: &AlgoFormerConfig,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<AlgoFormerParams<S>> {
    cfg.validate()?;
    fn mat<S: Scalar, R: Rng>(rows: usize, cols: usize, scheme: InitScheme, rng: &mut R) -> Tensor<S> {
        match scheme {
            InitScheme::Zeros => Tensor::zeros(vec![rows, cols]),
            // read-in/read-out/positional are not residual branches
            InitScheme::Gaussian { std } | InitScheme::ZeroResidual { std } => {
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(S::from_f64(z * std));
                }
                Tensor::from_raw(data, vec![rows, cols])
            }
        }
    }
    fn stack<S: Scalar, R: Rng>(
        layers: usize,
        cfg: &AlgoFormerConfig,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Vec<TransformerLayerParams<S>> {
        (0..layers)
            .map(|_| init_params(cfg.d_model, cfg.key_dim, cfg.ffn_dim, cfg.heads, scheme, rng))
            .collect()
    }
    let read_in = mat(cfg.d_model, cfg.token_width(), scheme, rng);
    let positional = mat(cfg.d_model, cfg.n_max, scheme, rng);
    let pre = stack(cfg.l_pre, cfg, scheme, rng);
    let loop_stack = stack(cfg.l_loop, cfg, scheme, rng);
    let post = stack(cfg.l_post, cfg, scheme, rng);
    let read_out = mat(cfg.label_dim, cfg.d_model, scheme, rng);
    Ok(AlgoFormerParams {
        read_in,
        positional,
        pre,
        loop_stack,
        post,
        read_out,
    })
}

/// Tape handles for a full model; the canonical leaf order matches `visit`.
pub struct ModelVars<S: Scalar> {
    pub read_in: Var,
    pub positional: Var,
    pub pre: Vec<LayerVars<S>>,
    pub loop_stack: Vec<LayerVars<S>>,
    pub post: Vec<LayerVars<S>>,
    pub read_out: Var,
}

impl<S: Scalar> ModelVars<S> {
    pub fn register(tape: &mut Tape<S>, p: &AlgoFormerParams<S>) -> Self {
        ModelVars {
            read_in: tape.leaf(&p.read_in),
            positional: tape.leaf(&p.positional),
            pre: p.pre.iter().map(|l| LayerVars::register(tape, l)).collect(),
            loop_stack: p
                .loop_stack
                .iter()
                .map(|l| LayerVars::register(tape, l))
                .collect(),
            post: p
                .post
                .iter()
                .map(|l| LayerVars::register(tape, l))
                .collect(),
            read_out: tape.leaf(&p.read_out),
        }
    }

    pub fn leaves(&self) -> Vec<Var> {
        let mut out = vec![self.read_in, self.positional];
        for l in &self.pre {
            out.extend(l.leaves());
        }
        for l in &self.loop_stack {
            out.extend(l.leaves());
        }
        for l in &self.post {
            out.extend(l.leaves());
        }
        out.push(self.read_out);
        out
    }
}

/// Embed raw token columns: read-in map plus the learned positional column
/// for each token index.
pub fn embed_prompt<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars<S>,
    tokens: &Tensor<S>,
    n_max: usize,
) -> Result<Var> {
    let n = tokens.cols();
    if n > n_max {
        return Err(ModelError::Capacity { n, n_max });
    }
    let raw = tape.constant(tokens.clone());
    let x = tape.matmul(vars.read_in, raw)?;
    let pos = tape.narrow_cols(vars.positional, 0, n)?;
    Ok(tape.add(x, pos)?)
}

fn apply_stack<S: Scalar>(
    tape: &mut Tape<S>,
    stack: &[LayerVars<S>],
    x: Var,
    mode: AttentionMode,
) -> Result<Var> {
    let mut cur = x;
    for layer in stack {
        cur = transformer_layer_forward(tape, layer, cur, mode)?;
    }
    Ok(cur)
}

/// `post(loop^t(pre(x)))`.
pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars<S>,
    x_emb: Var,
    t: usize,
    mode: AttentionMode,
) -> Result<Var> {
    let mut s = apply_stack(tape, &vars.pre, x_emb, mode)?;
    for _ in 0..t {
        s = apply_stack(tape, &vars.loop_stack, s, mode)?;
    }
    apply_stack(tape, &vars.post, s, mode)
}

/// Run the loop once up to `t_max`, returning the state after the pre
/// stack and after each loop application: `states[t]` is `loop^t(pre(x))`.
/// This is what makes the multi-t loss cost one loop pass.
pub fn forward_states<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars<S>,
    x_emb: Var,
    t_max: usize,
    mode: AttentionMode,
) -> Result<Vec<Var>> {
    let mut states = Vec::with_capacity(t_max + 1);
    let mut s = apply_stack(tape, &vars.pre, x_emb, mode)?;
    states.push(s);
    for _ in 0..t_max {
        s = apply_stack(tape, &vars.loop_stack, s, mode)?;
        states.push(s);
    }
    Ok(states)
}

/// Apply the read-out map to the designated output columns.
pub fn readout<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars<S>,
    y: Var,
    positions: &[usize],
) -> Result<Var> {
    let g = tape.gather_cols(y, positions.to_vec())?;
    Ok(tape.matmul(vars.read_out, g)?)
}

/// Mean over t = max(T-dT,0)..=T of the mean squared prediction error at
/// the supervised positions. The divisor is the number of summed terms,
/// so dT = 0 degenerates to the single-t loss at t = T.
#[allow(clippy::too_many_arguments)]
pub fn loop_loss<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars<S>,
    x_emb: Var,
    positions: &[usize],
    targets: &Tensor<S>,
    t_loops: usize,
    delta_t: usize,
    mode: AttentionMode,
) -> Result<Var> {
    let t0 = t_loops.saturating_sub(delta_t);
    let states = forward_states(tape, vars, x_emb, t_loops, mode)?;
    let tv = tape.constant(targets.clone());
    let n_sup = positions.len().max(1);
    let mut acc: Option<Var> = None;
    for state in states.iter().take(t_loops + 1).skip(t0) {
        let out = apply_stack(tape, &vars.post, *state, mode)?;
        let pred = readout(tape, vars, out, positions)?;
        let diff = tape.sub(pred, tv)?;
        let sq = tape.square_sum_all(diff);
        let term = tape.scale(sq, S::from_f64(1.0 / n_sup as f64));
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term)?,
        });
    }
    let n_terms = (t_loops - t0 + 1) as f64;
    Ok(tape.scale(acc.expect("at least one term"), S::from_f64(1.0 / n_terms)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(t: usize, dt: usize) -> AlgoFormerConfig {
        AlgoFormerConfig {
            d_model: 8,
            feat_dim: 3,
            label_dim: 1,
            l_pre: 1,
            l_loop: 1,
            l_post: 1,
            heads: 2,
            t_loops: t,
            delta_t: dt,
            attention: AttentionMode::Causal,
            ffn_dim: 16,
            key_dim: 8,
            n_max: 12,
        }
    }

    fn model(t: usize, dt: usize, seed: u64) -> AlgoFormerParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_model(&cfg(t, dt), InitScheme::Gaussian { std: 0.3 }, &mut rng).unwrap()
    }

    fn tokens(n: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(4, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(3, 5);
        assert!(c.validate().is_err(), "delta_t > t rejected");
        c.delta_t = 2;
        assert!(c.validate().is_ok());
        c.d_model = 2;
        assert!(c.validate().is_err(), "d_model < feat_dim rejected");
    }

    #[test]
    fn embed_respects_capacity_and_is_deterministic() {
        let p = model(2, 1, 1);
        let toks = tokens(6, 2);
        let embed = |tok: &Tensor<f64>| {
            let mut tape = Tape::new();
            let vars = ModelVars::register(&mut tape, &p);
            let e = embed_prompt(&mut tape, &vars, tok, 12).unwrap();
            tape.value(e).clone()
        };
        assert_eq!(embed(&toks).data(), embed(&toks).data());
        let too_many = tokens(13, 2);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        assert!(matches!(
            embed_prompt(&mut tape, &vars, &too_many, 12),
            Err(ModelError::Capacity { n: 13, n_max: 12 })
        ));
    }

    #[test]
    fn zero_read_in_embedding_is_positional_only() {
        let mut p = model(1, 0, 3);
        p.read_in = Tensor::zeros(vec![8, 4]);
        let toks = tokens(5, 4);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
        for j in 0..5 {
            for r in 0..8 {
                assert_eq!(tape.value(e).at(r, j), p.positional.at(r, j));
            }
        }
    }

    #[test]
    fn t0_equals_post_pre_and_t1_matches_manual_chain() {
        let p = model(2, 1, 5);
        let toks = tokens(6, 6);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
        let t0 = forward(&mut tape, &vars, e, 0, AttentionMode::Causal).unwrap();
        let manual0 = {
            let s = apply_stack(&mut tape, &vars.pre, e, AttentionMode::Causal).unwrap();
            apply_stack(&mut tape, &vars.post, s, AttentionMode::Causal).unwrap()
        };
        assert_eq!(tape.value(t0).data(), tape.value(manual0).data());

        let t1 = forward(&mut tape, &vars, e, 1, AttentionMode::Causal).unwrap();
        let manual1 = {
            let s = apply_stack(&mut tape, &vars.pre, e, AttentionMode::Causal).unwrap();
            let s = apply_stack(&mut tape, &vars.loop_stack, s, AttentionMode::Causal).unwrap();
            apply_stack(&mut tape, &vars.post, s, AttentionMode::Causal).unwrap()
        };
        assert_eq!(tape.value(t1).data(), tape.value(manual1).data());
    }

    #[test]
    fn incremental_states_match_independent_recomputation() {
        let p = model(4, 2, 7);
        let toks = tokens(6, 8);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
        let states = forward_states(&mut tape, &vars, e, 4, AttentionMode::Causal).unwrap();
        for (t, s) in states.iter().enumerate() {
            let out_inc = apply_stack(&mut tape, &vars.post, *s, AttentionMode::Causal).unwrap();
            let out_rec = forward(&mut tape, &vars, e, t, AttentionMode::Causal).unwrap();
            let d = tape.value(out_inc).max_abs_diff(tape.value(out_rec));
            assert!(d <= 1e-12, "t={t}: incremental vs recomputed diff {d}");
        }
    }

    #[test]
    fn weight_sharing_has_no_hidden_copies() {
        let mut p = model(3, 0, 9);
        let toks = tokens(6, 10);
        let run = |p: &AlgoFormerParams<f64>| {
            let mut tape = Tape::new();
            let vars = ModelVars::register(&mut tape, p);
            let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
            let out = forward(&mut tape, &vars, e, 3, AttentionMode::Causal).unwrap();
            tape.value(out).clone()
        };
        let before = run(&p);
        // nudging the single stored loop copy must change every iteration;
        // the value path is used unconditionally, unlike a ReLU unit
        let v = p.loop_stack[0].heads[0].w_v.at(0, 0) + 0.5;
        p.loop_stack[0].heads[0].w_v.set(0, 0, v);
        let after = run(&p);
        assert!(before.max_abs_diff(&after) > 0.0);
        // and the parameter count is independent of T
        assert_eq!(
            model(3, 0, 9).param_count(),
            model(30, 0, 9).param_count()
        );
    }

    #[test]
    fn loop_loss_delta_zero_is_single_term_and_perfect_predictor_is_zero() {
        let p = model(2, 0, 11);
        let toks = tokens(5, 12);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
        let positions = vec![0usize, 2, 4];
        // targets equal to the model's own prediction at t=2 -> loss 0
        let out = forward(&mut tape, &vars, e, 2, AttentionMode::Causal).unwrap();
        let pred = readout(&mut tape, &vars, out, &positions).unwrap();
        let targets = tape.value(pred).clone();
        let loss = loop_loss(
            &mut tape,
            &vars,
            e,
            &positions,
            &targets,
            2,
            0,
            AttentionMode::Causal,
        )
        .unwrap();
        assert!(tape.value(loss).scalar_value().abs() < 1e-24);
    }

    #[test]
    fn loop_loss_averages_t_terms() {
        // (T, dT) = (2, 2): loss is the mean of the t = 0, 1, 2 losses
        let p = model(2, 2, 13);
        let toks = tokens(5, 14);
        let positions = vec![0usize, 2];
        let targets = Tensor::<f64>::zeros(vec![1, 2]);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
        let loss = loop_loss(
            &mut tape,
            &vars,
            e,
            &positions,
            &targets,
            2,
            2,
            AttentionMode::Causal,
        )
        .unwrap();
        let mut per_t = Vec::new();
        for t in 0..=2 {
            let out = forward(&mut tape, &vars, e, t, AttentionMode::Causal).unwrap();
            let pred = readout(&mut tape, &vars, out, &positions).unwrap();
            let v = tape.value(pred).clone();
            let mse = v.data().iter().map(|x| x * x).sum::<f64>() / positions.len() as f64;
            per_t.push(mse);
        }
        let want = per_t.iter().sum::<f64>() / 3.0;
        let got = tape.value(loss).scalar_value();
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn loop_loss_gradient_passes_fd_check() {
        // D=8, N=6, T=3, tol 1e-4, checked wrt the shared loop layer's W_1
        let p = model(3, 2, 15);
        let toks = tokens(6, 16);
        let positions = vec![0usize, 2, 4];
        let targets = Tensor::<f64>::from_fn(1, 3, |_, j| 0.1 * (j as f64 + 1.0));
        let report = crate::gradcheck::grad_check(
            |tape, v| {
                let mut q = p.clone();
                q.loop_stack[0].w1 = Tensor::zeros(vec![16, 8]); // replaced by leaf below
                let mut vars = ModelVars::register(tape, &q);
                vars.loop_stack[0].w1 = v;
                let e = embed_prompt(tape, &vars, &toks, 12)
                    .map_err(|_| crate::tensor::TensorError::Contract {
                        op: "embed",
                        msg: "capacity".into(),
                    })?;
                let loss = loop_loss(
                    tape,
                    &vars,
                    e,
                    &positions,
                    &targets,
                    3,
                    2,
                    AttentionMode::Causal,
                )
                .map_err(|_| crate::tensor::TensorError::Contract {
                    op: "loop_loss",
                    msg: "loss".into(),
                })?;
                Ok(loss)
            },
            &p.loop_stack[0].w1,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn readout_shapes_and_zero_map() {
        let mut p = model(1, 0, 17);
        p.read_out = Tensor::zeros(vec![1, 8]);
        let toks = tokens(5, 18);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
        let out = forward(&mut tape, &vars, e, 1, AttentionMode::Causal).unwrap();
        let pred = readout(&mut tape, &vars, out, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(tape.value(pred).shape(), &[1, 5]);
        assert!(tape.value(pred).data().iter().all(|v| *v == 0.0));
        // out-of-range position is an error
        assert!(readout(&mut tape, &vars, out, &[7]).is_err());
    }

    #[test]
    fn standard_transformer_is_the_same_code_path() {
        // L_pre = L_standard, T = 0, L_post = 0
        let c = AlgoFormerConfig {
            l_pre: 3,
            l_loop: 1,
            l_post: 0,
            t_loops: 0,
            delta_t: 0,
            ..cfg(0, 0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let p: AlgoFormerParams<f64> =
            init_model(&c, InitScheme::Gaussian { std: 0.2 }, &mut rng).unwrap();
        let toks = tokens(5, 20);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &p);
        let e = embed_prompt(&mut tape, &vars, &toks, 12).unwrap();
        let out = forward(&mut tape, &vars, e, 0, AttentionMode::Causal).unwrap();
        let manual = apply_stack(&mut tape, &vars.pre, e, AttentionMode::Causal).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(manual).data());
    }

    #[test]
    fn one_layer_stacks_are_quarter_of_twelve_layer_params() {
        // three one-layer stacks vs a 12-layer standard stack at equal widths
        let one = layer_count_for(1, 1, 1);
        let twelve = layer_count_for(12, 0, 0);
        assert_eq!(one * 4, twelve);
        fn layer_count_for(pre: usize, lp: usize, post: usize) -> usize {
            (pre + lp + post) * crate::layer::layer_param_count(8, 8, 32, 2)
        }
    }
}
