//! Command-line interface: training, evaluation, construction
//! verification, solver baselines, experiment sweeps and task dumps.

use algoformer::constructions::{verify, ConstructionScale};
use algoformer::experiment::{
    load_experiment, run_experiment, run_lr_baselines, BaselineSpec, TaskDumpConfig,
};
use algoformer::io::{
    self, load_checkpoint, save_checkpoint, write_curve_csv, write_loss_log_csv,
    write_trajectory_csv, ResultManifest,
};
use algoformer::tasks::gen_batch;
use algoformer::train::{train, Precision};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "algoformer", version, about = "pre/looped/post transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    InContextSamples,
    LoopIterations,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (1 = strict single-thread reproducibility).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Validate and print the plan without executing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a TOML config and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Evaluate a checkpoint along an axis and write a curve CSV.
    Eval {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated grid, e.g. "0,5,10,20,40".
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 256)]
        n_prompts: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "curve.csv")]
        out: PathBuf,
    },
    /// Verify the explicit-weight constructions against their oracles.
    VerifyConstructions {
        /// all | gd | newton | copy | decoder
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-searched GD/Newton baselines on linear regression.
    Baselines {
        #[arg(long, default_value_t = 20)]
        d: usize,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 40)]
        iters: usize,
        #[arg(long, default_value_t = 64)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "out/baselines")]
        out_dir: PathBuf,
    },
    /// Run a declarative experiment (training runs x seeds + eval +
    /// baselines) into a result directory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Generate task batches and dump them for offline inspection.
    DumpTasks {
        /// TOML with [task], batches, batch_size, seed.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out/tasks")]
        out_dir: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train {
            config,
            precision,
            common,
        } => {
            let mut cfg = io::load_train_config(&config).map_err(|e| e.to_string())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(t) = common.threads {
                cfg.threads = t;
            }
            if let Some(p) = precision {
                cfg.precision = match p {
                    PrecisionArg::F32 => Precision::F32,
                    PrecisionArg::F64 => Precision::F64,
                };
            }
            cfg.validate().map_err(|e| e.to_string())?;
            if common.dry_run {
                println!(
                    "would train {:?} for {} steps (batch {}, lr {:.1e}, seed {})",
                    cfg.task.family, cfg.steps, cfg.batch_size, cfg.optim.lr, cfg.seed
                );
                return Ok(());
            }
            let run = train(&cfg).map_err(|e| e.to_string())?;
            let ckpt = common.out_dir.join("checkpoint");
            save_checkpoint(&ckpt, &run).map_err(|e| e.to_string())?;
            write_loss_log_csv(&common.out_dir.join("loss.csv"), &run.loss_log)
                .map_err(|e| e.to_string())?;
            let final_loss = run.loss_log.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} steps, final loss {:.6}; checkpoint at {}",
                run.next_step,
                final_loss,
                ckpt.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            axis,
            grid,
            n_prompts,
            seed,
            threads,
            out,
        } => {
            let run = load_checkpoint(&checkpoint).map_err(|e| e.to_string())?;
            let grid: Vec<usize> = grid
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            let eval_seed = seed.unwrap_or(run.config.seed ^ 0xe7a1);
            let threads = threads.unwrap_or(run.config.threads);
            let prompts =
                algoformer::tasks::gen_eval_batch(&run.config.task, eval_seed, n_prompts)
                    .map_err(|e| e.to_string())?
                    .prompts;
            let mut curve = match axis {
                AxisArg::InContextSamples => algoformer::eval::curve_in_context_samples::<f64>(
                    &run.params,
                    &run.config.model,
                    &prompts,
                    &grid,
                    threads,
                ),
                AxisArg::LoopIterations => algoformer::eval::curve_loop_iterations::<f64>(
                    &run.params,
                    &run.config.model,
                    &prompts,
                    &grid,
                    threads,
                ),
            }
            .map_err(|e| e.to_string())?;
            curve.model_tag = checkpoint.display().to_string();
            write_curve_csv(&out, &curve).map_err(|e| e.to_string())?;
            println!("wrote {} points to {}", curve.points.len(), out.display());
            Ok(())
        }
        Command::VerifyConstructions {
            which,
            instances,
            tol,
            seed,
            out,
        } => {
            let scale = ConstructionScale::default();
            let mut all = serde_json::Map::new();
            let mut pass = true;
            if which == "all" || which == "gd" {
                let r =
                    verify::verify_gd(instances, &scale, tol, seed).map_err(|e| e.to_string())?;
                println!("{}", r.summary());
                pass &= r.pass;
                all.insert("gd".into(), serde_json::to_value(&r).unwrap());
                let sweep = verify::gd_calibration_sweep(
                    &verify::GD_CALIBRATION_PATH,
                    &scale,
                    seed,
                    instances.min(6),
                )
                .map_err(|e| e.to_string())?;
                println!("  calibration (C, c, err): {sweep:?}");
                all.insert(
                    "gd_calibration".into(),
                    serde_json::to_value(&sweep).unwrap(),
                );
            }
            if which == "all" || which == "newton" {
                let r = verify::verify_newton(instances, &scale, tol, 1e-10, seed)
                    .map_err(|e| e.to_string())?;
                println!(
                    "newton: max band err {:.3e}, prediction err {:.3e}, contraction defect {:.3e} -> {}",
                    r.instances.iter().map(|i| i.max_err).fold(0.0, f64::max),
                    r.max_prediction_err,
                    r.max_contraction_defect,
                    if r.pass { "pass" } else { "FAIL" }
                );
                pass &= r.pass;
                all.insert("newton".into(), serde_json::to_value(&r).unwrap());
            }
            if which == "all" || which == "copy" {
                let r =
                    verify::verify_copy(3, 16, 8, 100.0, 1e-8, seed).map_err(|e| e.to_string())?;
                println!("{}", r.summary());
                pass &= r.pass;
                all.insert("copy".into(), serde_json::to_value(&r).unwrap());
            }
            if which == "all" || which == "decoder" {
                let r = verify::verify_decoder(instances, &scale, tol, seed)
                    .map_err(|e| e.to_string())?;
                println!("{}", r.summary());
                pass &= r.pass;
                all.insert("decoder".into(), serde_json::to_value(&r).unwrap());
            }
            if let Some(path) = out {
                std::fs::write(
                    &path,
                    serde_json::to_vec_pretty(&serde_json::Value::Object(all))
                        .map_err(|e| e.to_string())?,
                )
                .map_err(|e| e.to_string())?;
                println!("report written to {}", path.display());
            }
            if pass {
                Ok(())
            } else {
                Err("construction verification failed".into())
            }
        }
        Command::Baselines {
            d,
            n,
            sigma,
            iters,
            instances,
            seed,
            out_dir,
        } => {
            let spec = BaselineSpec {
                d,
                n,
                sigma,
                iters,
                n_instances: instances,
                seed,
            };
            let out = run_lr_baselines(&spec).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            std::fs::write(
                out_dir.join("grid.json"),
                serde_json::to_vec_pretty(&out.summary()).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            write_trajectory_csv(&out_dir.join("gd_trajectory.csv"), &out.gd_best_trajectory)
                .map_err(|e| e.to_string())?;
            write_trajectory_csv(
                &out_dir.join("newton_trajectory.csv"),
                &out.newton_best_trajectory,
            )
            .map_err(|e| e.to_string())?;
            println!(
                "best GD step {} (query err {:.4}); best Newton fraction {} (query err {:.4})",
                out.gd.best, out.gd.best_err, out.newton.best, out.newton.best_err
            );
            Ok(())
        }
        Command::Sweep { config, common } => {
            let cfg = load_experiment(&config).map_err(|e| e.to_string())?;
            print!("{}", cfg.plan());
            if common.dry_run {
                return Ok(());
            }
            let outcome =
                run_experiment(&cfg, &common.out_dir, common.threads).map_err(|e| e.to_string())?;
            println!(
                "completed {} runs into {}",
                outcome.runs.len(),
                common.out_dir.display()
            );
            Ok(())
        }
        Command::DumpTasks {
            config,
            seed,
            out_dir,
            dry_run,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| e.to_string())?;
            let mut cfg: TaskDumpConfig = io::parse_toml(&text).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.task.validate().map_err(|e| e.to_string())?;
            if dry_run {
                println!(
                    "would dump {} batches of {} {:?} prompts (seed {})",
                    cfg.batches, cfg.batch_size, cfg.task.family, cfg.seed
                );
                return Ok(());
            }
            std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            let mut manifest = ResultManifest::new("task-dump");
            for b in 0..cfg.batches {
                let batch = gen_batch(&cfg.task, cfg.seed, b as u64, cfg.batch_size)
                    .map_err(|e| e.to_string())?;
                let path = out_dir.join(format!("batch_{b:04}.bin"));
                io::dump_batch(&path, &cfg.task, &batch, cfg.seed, b as u64)
                    .map_err(|e| e.to_string())?;
                manifest
                    .add_file(&out_dir, &path)
                    .map_err(|e| e.to_string())?;
            }
            manifest.write(&out_dir).map_err(|e| e.to_string())?;
            println!("dumped {} batches to {}", cfg.batches, out_dir.display());
            Ok(())
        }
    }
}
