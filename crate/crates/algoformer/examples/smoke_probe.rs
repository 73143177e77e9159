use algoformer::experiment::smoke_train_config;
use algoformer::train::{batch_loss_and_grads, train, InitKind};

fn main() {
    for (lr, batch, beta2, init, kind) in [
        (3e-3, 32usize, 0.999, 0.15, InitKind::ZeroResidual),
        (1e-2, 32, 0.999, 0.15, InitKind::ZeroResidual),
        (1e-2, 32, 0.99, 0.15, InitKind::ZeroResidual),
        (1e-2, 64, 0.99, 0.15, InitKind::ZeroResidual),
        (1e-2, 32, 0.99, 0.25, InitKind::ZeroResidual),
        (3e-2, 32, 0.99, 0.15, InitKind::ZeroResidual),
        (1e-2, 32, 0.99, 0.15, InitKind::Gaussian),
        (3e-2, 64, 0.99, 0.15, InitKind::ZeroResidual),
    ] {
        let mut cfg = smoke_train_config(3);
        cfg.steps = 200;
        cfg.batch_size = batch;
        cfg.optim.lr = lr;
        cfg.optim.beta2 = beta2;
        cfg.optim.warmup_steps = 20;
        cfg.init_std = init;
        cfg.init_kind = kind;
        cfg.threads = 2;
        let reference = algoformer::tasks::gen_batch(&cfg.task, cfg.seed, 0, 64).unwrap();
        let loss_of = |params: &algoformer::model::AlgoFormerParams<f64>| {
            batch_loss_and_grads(params, &cfg.model, &reference.prompts, 2).unwrap().0
        };
        let mut zs = cfg.clone();
        zs.steps = 1;
        zs.optim.lr = 1e-30;
        let initial = loss_of(&train(&zs).unwrap().params);
        match train(&cfg) {
            Ok(run) => {
                let fin = loss_of(&run.params);
                println!("lr={lr:.0e} b={batch} b2={beta2} init={init} {kind:?}: {initial:.3} -> {fin:.3}  {}", if fin < initial { "OK" } else { "no" });
            }
            Err(e) => println!("lr={lr:.0e} b={batch}: FAILED {e}"),
        }
    }
}
