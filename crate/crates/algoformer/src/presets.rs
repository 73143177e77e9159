//! Ready-made desk-scale training configurations for the reproduction
//! experiments, plus the paper-scale numbers for anyone with the budget
//! to run them. The desk-scale step counts, batch sizes and learning
//! rates are calibrated so the qualitative trends emerge in minutes on a
//! CPU; the paper protocol (D = 256, 500K Adam steps at 1e-4) is kept in
//! `paper_exact_*` for reference.

use crate::layer::AttentionMode;
use crate::model::AlgoFormerConfig;
use crate::tasks::{GaussianTag, PhiKind, TaskFamily, TaskSpec};
use crate::train::{AdamHyper, Curriculum, InitKind, Precision, TrainConfig};

/// d = 20 features, 40 in-context samples: the shared task geometry.
pub const FEAT_DIM: usize = 20;
pub const N_SAMPLES: usize = 40;

/// Desk-scale training budget shared by every trend comparison.
pub const DESK_STEPS: u64 = 2000;
pub const DESK_BATCH: usize = 16;
pub const DESK_LR: f64 = 3e-3;
pub const DESK_WARMUP: u64 = 100;

fn desk_optim() -> AdamHyper {
    AdamHyper {
        lr: DESK_LR,
        warmup_steps: DESK_WARMUP,
        clip_norm: Some(1.0),
        final_lr_frac: Some(0.1),
        ..Default::default()
    }
}

/// Width-64 two-head model geometry; k and m are kept at D/2 and 2D to
/// fit the wall-clock budget (both are exposed knobs the paper never
/// pins).
fn desk_model(l_pre: usize, l_loop: usize, l_post: usize, t: usize, dt: usize) -> AlgoFormerConfig {
    AlgoFormerConfig {
        d_model: 64,
        feat_dim: FEAT_DIM,
        label_dim: 1,
        l_pre,
        l_loop,
        l_post,
        heads: 2,
        t_loops: t,
        delta_t: dt,
        attention: AttentionMode::Causal,
        ffn_dim: 128,
        key_dim: 32,
        n_max: 2 * N_SAMPLES + 1,
    }
}

fn desk_train(task: TaskSpec, model: AlgoFormerConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        task,
        model,
        optim: desk_optim(),
        batch_size: DESK_BATCH,
        steps: DESK_STEPS,
        eval_every: 0,
        eval_prompts: 256,
        seed,
        threads: 2,
        precision: Precision::F32,
        init_std: 0.075, // ~0.6/sqrt(D) at D = 64
        init_kind: InitKind::ZeroResidual,
        // bootstrap the in-context circuit on small easy tasks, then grow
        // to the full geometry; evaluation always runs the full task
        curriculum: Some(Curriculum {
            stages: vec![(0, 5, 10), (400, 10, 20), (800, 15, 30), (1200, 20, 40)],
        }),
    }
}

pub fn sparse_lr_task(sigma: f64) -> TaskSpec {
    TaskSpec {
        family: TaskFamily::SparseLinearRegression,
        d: FEAT_DIM,
        d_y: 1,
        n: N_SAMPLES,
        sigma,
        sparsity: 0.85,
        q: 3,
        mlp_layers: 3,
        leaky_slope: 0.01,
        phi_seed: 0,
        phi: PhiKind::Mlp,
        p_x: GaussianTag::default(),
        p_a: GaussianTag::default(),
    }
}

pub fn lr_task(sigma: f64) -> TaskSpec {
    TaskSpec {
        family: TaskFamily::LinearRegression,
        sparsity: 0.0,
        ..sparse_lr_task(sigma)
    }
}

pub fn representation_task(sigma: f64, phi_seed: u64) -> TaskSpec {
    TaskSpec {
        family: TaskFamily::RepresentationRegression,
        sparsity: 0.0,
        phi_seed,
        ..sparse_lr_task(sigma)
    }
}

/// Sparse linear regression, AlgoFormer (T, dT) = (12, 10) against the
/// standard 12-layer transformer of matched width.
pub fn trend_fig2_algoformer(seed: u64) -> TrainConfig {
    desk_train(sparse_lr_task(1.0), desk_model(1, 1, 1, 12, 10), seed)
}

pub fn trend_fig2_standard(seed: u64) -> TrainConfig {
    desk_train(sparse_lr_task(1.0), desk_model(12, 1, 0, 0, 0), seed)
}

/// Regression with representation (sigma = 0): AlgoFormer (20, 15)
/// against the vanilla looped transformer (same loop stack, no pre/post).
pub fn trend_fig3_algoformer(seed: u64) -> TrainConfig {
    desk_train(representation_task(0.0, 1), desk_model(1, 1, 1, 20, 15), seed)
}

pub fn trend_fig3_vanilla_loop(seed: u64) -> TrainConfig {
    desk_train(representation_task(0.0, 1), desk_model(0, 1, 0, 20, 15), seed)
}

/// Loop-stability study: same task and T, varying dT.
pub fn trend_fig5_delta(seed: u64, delta_t: usize) -> TrainConfig {
    desk_train(
        representation_task(0.0, 1),
        desk_model(1, 1, 1, 20, delta_t),
        seed,
    )
}

/// Plain linear regression vs grid-searched GD/Newton; (T, dT) = (10, 10)
/// is one of the paper's two listed settings.
pub fn trend_fig6_algoformer(sigma: f64, seed: u64) -> TrainConfig {
    desk_train(lr_task(sigma), desk_model(1, 1, 1, 10, 10), seed)
}

/// The paper's full-scale protocol, for reference only: D = 256, k = D,
/// m = 4D, Adam at 1e-4 for 500K steps.
pub fn paper_exact_algoformer(seed: u64) -> TrainConfig {
    let mut cfg = desk_train(
        representation_task(0.0, 1),
        AlgoFormerConfig {
            d_model: 256,
            ffn_dim: 1024,
            key_dim: 256,
            ..desk_model(1, 1, 1, 20, 15)
        },
        seed,
    );
    cfg.optim = AdamHyper {
        lr: 1e-4,
        ..Default::default()
    };
    cfg.batch_size = 64;
    cfg.steps = 500_000;
    cfg.init_std = 0.02;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            trend_fig2_algoformer(1),
            trend_fig2_standard(1),
            trend_fig3_algoformer(1),
            trend_fig3_vanilla_loop(1),
            trend_fig5_delta(1, 5),
            trend_fig6_algoformer(1.0, 1),
            paper_exact_algoformer(1),
        ] {
            cfg.validate().unwrap();
        }
        // the standard baseline is the same code path at T = 0
        let std_cfg = trend_fig2_standard(1);
        assert_eq!(std_cfg.model.l_pre, 12);
        assert_eq!(std_cfg.model.t_loops, 0);
        // the vanilla looped transformer drops pre/post only
        let vl = trend_fig3_vanilla_loop(1);
        assert_eq!((vl.model.l_pre, vl.model.l_post), (0, 0));
        assert_eq!(vl.model.t_loops, 20);
    }
}
