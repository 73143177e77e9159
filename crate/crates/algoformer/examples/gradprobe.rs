use algoformer::experiment::smoke_train_config;
use algoformer::model::{init_model, AlgoFormerParams};
use algoformer::layer::InitScheme;
use algoformer::tasks::gen_batch;
use algoformer::train::batch_loss_and_grads;

fn main() {
    let mut cfg = smoke_train_config(1);
    cfg.init_std = 0.02;
    let mut rng = algoformer::seed::stream(cfg.seed, algoformer::seed::labels::INIT);
    let mut params: AlgoFormerParams<f64> =
        init_model(&cfg.model, InitScheme::Gaussian { std: cfg.init_std }, &mut rng).unwrap();
    params.visit_mut(&mut |t| t.set_requires_grad(true));
    let batch = gen_batch(&cfg.task, cfg.seed, 0, 8).unwrap();
    let (loss, grads) = batch_loss_and_grads(&params, &cfg.model, &batch.prompts, 1).unwrap();
    println!("loss at init: {loss:.4}");
    let mut names = vec!["read_in", "positional"];
    for tag in ["pre", "loop", "post"] {
        for part in ["wq0", "wk0", "wv0", "wq1", "wk1", "wv1", "w1", "b1", "w2", "b2"] {
            names.push(Box::leak(format!("{tag}.{part}").into_boxed_str()));
        }
    }
    names.push("read_out");
    for (i, g) in grads.iter().enumerate() {
        let norm = g.frobenius_norm();
        let n = g.len() as f64;
        println!("{:>14}: |g|={:.3e} rms={:.3e}", names.get(i).unwrap_or(&"?"), norm, norm / n.sqrt());
    }
}
