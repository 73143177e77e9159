use algoformer::presets;
use algoformer::tasks::gen_eval_batch;
use algoformer::train::{eval_query_mse, train, TrainConfig};
use std::time::Instant;

fn run(tag: &str, mut cfg: TrainConfig, steps: u64) {
    cfg.steps = steps;
    cfg.threads = 2;
    cfg.eval_every = (steps / 8).max(1);
    cfg.eval_prompts = 64;
    let t0 = Instant::now();
    match train(&cfg) {
        Ok(run) => {
            let evals: Vec<String> = run
                .loss_log
                .iter()
                .filter_map(|r| r.eval_mse.map(|e| format!("{}:{e:.3}", r.step + 1)))
                .collect();
            let prompts = gen_eval_batch(&cfg.task, 999, 192).unwrap().prompts;
            let mse =
                eval_query_mse(&run.params, &cfg.model, &prompts, cfg.model.t_loops, 2).unwrap();
            println!(
                "{tag}: eval trajectory [{}] final@40 {mse:.4}  ({:.0}s)",
                evals.join(" "),
                t0.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("{tag}: FAILED {e}"),
    }
}

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let steps: u64 = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(800);
    let seed: u64 = a.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);
    let beta2: f64 = a.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.999);
    let lr: f64 = a.get(5).map(|s| s.parse().unwrap()).unwrap_or(presets::DESK_LR);
    let batch: usize = a.get(6).map(|s| s.parse().unwrap()).unwrap_or(presets::DESK_BATCH);
    let which = a.get(1).cloned().unwrap_or_default();
    let mut cfg = match which.as_str() {
        "fig2-af" => presets::trend_fig2_algoformer(seed),
        "fig2-std" => presets::trend_fig2_standard(seed),
        "fig2-af-sigma0" => {
            let mut c = presets::trend_fig2_algoformer(seed);
            c.task.sigma = 0.0;
            c
        }
        "fig2-af-t4" => {
            let mut c = presets::trend_fig2_algoformer(seed);
            c.model.t_loops = 4;
            c.model.delta_t = 3;
            c
        }
        "fig3-af" => presets::trend_fig3_algoformer(seed),
        "fig3-vl" => presets::trend_fig3_vanilla_loop(seed),
        "fig5-dt5" => presets::trend_fig5_delta(seed, 5),
        "fig6" => presets::trend_fig6_algoformer(1.0, seed),
        other => {
            println!("unknown probe {other}");
            return;
        }
    };
    cfg.optim.beta2 = beta2;
    cfg.optim.lr = lr;
    cfg.batch_size = batch;
    run(&format!("{which} b2={beta2} lr={lr:.0e} b={batch}"), cfg, steps);
}
