use algoformer::experiment::smoke_train_config;
use algoformer::tasks::gen_eval_batch;
use algoformer::train::{eval_query_mse, train};
use std::time::Instant;

// args: steps batch lr init_std [d_model t dt]
fn main() {
    let a: Vec<String> = std::env::args().collect();
    let steps: u64 = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(1000);
    let batch: usize = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(16);
    let lr: f64 = a.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let init: f64 = a.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let d_model: usize = a.get(5).map(|s| s.parse().unwrap()).unwrap_or(16);
    let t: usize = a.get(6).map(|s| s.parse().unwrap()).unwrap_or(3);
    let dt: usize = a.get(7).map(|s| s.parse().unwrap()).unwrap_or(2);

    let mut cfg = smoke_train_config(1);
    cfg.steps = steps;
    cfg.batch_size = batch;
    cfg.optim.lr = lr;
    cfg.init_std = init;
    cfg.threads = 2;
    cfg.model.d_model = d_model;
    cfg.model.key_dim = d_model;
    cfg.model.ffn_dim = 4 * d_model;
    cfg.model.t_loops = t;
    cfg.model.delta_t = dt;
    let t0 = Instant::now();
    match train(&cfg) {
        Ok(run) => {
            let n = run.loss_log.len();
            let avg = |a: usize, b: usize| -> f64 {
                run.loss_log[a..b].iter().map(|r| r.loss).sum::<f64>() / (b - a) as f64
            };
            let prompts = gen_eval_batch(&cfg.task, 999, 256).unwrap().prompts;
            let mse = eval_query_mse(&run.params, &cfg.model, &prompts, t, 2).unwrap();
            println!(
                "steps={steps} batch={batch} lr={lr:.0e} init={init} D={d_model} T={t}/{dt}: \
                 loss {:.3} -> {:.3} -> {:.3}, eval@query {mse:.4} ({:.1}s)",
                avg(0, 20.min(n)),
                avg(n / 2, (n / 2 + 20).min(n)),
                avg(n - 20.min(n), n),
                t0.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("steps={steps} lr={lr:.0e} init={init}: FAILED {e}"),
    }
}
