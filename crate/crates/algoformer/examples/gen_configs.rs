// Regenerates the TOML files in configs/ from the preset builders.
use algoformer::presets;
use std::fmt::Write as _;

fn main() {
    let dir = std::path::Path::new("configs");
    std::fs::create_dir_all(dir).unwrap();

    let smoke = algoformer::experiment::smoke_train_config(7);
    std::fs::write(dir.join("smoke.toml"), toml::to_string_pretty(&smoke).unwrap()).unwrap();

    let single = presets::trend_fig2_algoformer(1);
    std::fs::write(dir.join("trend-fig2-algoformer.toml"), toml::to_string_pretty(&single).unwrap()).unwrap();

    let paper = presets::paper_exact_algoformer(1);
    std::fs::write(dir.join("paper-exact.toml"), toml::to_string_pretty(&paper).unwrap()).unwrap();

    // experiment files: runs + eval (+ baselines)
    let experiment = |name: &str, runs: Vec<(&str, Vec<u64>, algoformer::train::TrainConfig)>, eval: &str, baselines: Option<&str>| {
        let mut s = format!("name = \"{name}\"\n");
        for (rname, seeds, cfg) in runs {
            let _ = write!(s, "\n[[runs]]\nname = \"{rname}\"\nseeds = {seeds:?}\n");
            let cfg_toml = toml::to_string_pretty(&cfg).unwrap();
            // indent the config table under runs.config
            for line in cfg_toml.lines() {
                if line.starts_with('[') {
                    let inner = line.trim_start_matches('[').trim_end_matches(']');
                    let _ = writeln!(s, "[runs.config.{inner}]");
                } else if line.is_empty() {
                    s.push('\n');
                } else {
                    let _ = writeln!(s, "{line}");
                }
            }
            // top-level keys of TrainConfig come before its tables; toml
            // serializes scalars first, so wrap them under [runs.config]
        }
        if !eval.is_empty() {
            s.push_str(eval);
        }
        if let Some(b) = baselines {
            s.push_str(b);
        }
        s
    };
    let _ = experiment; // see below: simpler explicit emit

    // toml pretty-printing of nested [[runs]] with inline configs is easier
    // to emit by hand:
    let emit = |name: &str, path: &str, arms: Vec<(&str, Vec<u64>, algoformer::train::TrainConfig)>, eval: &str, baselines: &str| {
        let mut s = format!("name = \"{name}\"\n");
        for (rname, seeds, cfg) in arms {
            let _ = write!(s, "\n[[runs]]\nname = \"{rname}\"\nseeds = {seeds:?}\n");
            let cfg_toml = toml::to_string_pretty(&cfg).unwrap();
            let mut in_table = false;
            let mut scalars = String::new();
            let mut tables = String::new();
            for line in cfg_toml.lines() {
                if line.starts_with('[') {
                    in_table = true;
                    let inner = line.trim_start_matches('[').trim_end_matches(']');
                    let _ = writeln!(tables, "[runs.config.{inner}]");
                } else if in_table {
                    let _ = writeln!(tables, "{line}");
                } else {
                    let _ = writeln!(scalars, "{line}");
                }
            }
            let _ = writeln!(s, "[runs.config]\n{scalars}{tables}");
        }
        s.push_str(eval);
        s.push_str(baselines);
        std::fs::write(dir.join(path), s).unwrap();
    };

    emit(
        "fig2-desk",
        "experiment-fig2.toml",
        vec![
            ("algoformer-12-10", vec![1, 2, 3], presets::trend_fig2_algoformer(1)),
            ("standard-12-layer", vec![1, 2, 3], presets::trend_fig2_standard(1)),
        ],
        "\n[eval]\naxis = \"in_context_samples\"\ngrid = [0, 2, 5, 10, 15, 20, 25, 30, 35, 40]\nn_prompts = 256\neval_seed = 777\n",
        "",
    );
    emit(
        "fig3-desk",
        "experiment-fig3.toml",
        vec![
            ("algoformer-20-15", vec![1, 2, 3], presets::trend_fig3_algoformer(1)),
            ("vanilla-loop-20-15", vec![1, 2, 3], presets::trend_fig3_vanilla_loop(1)),
        ],
        "\n[eval]\naxis = \"in_context_samples\"\ngrid = [0, 2, 5, 10, 15, 20, 25, 30, 35, 40]\nn_prompts = 256\neval_seed = 777\n",
        "",
    );
    emit(
        "fig5-desk",
        "experiment-fig5.toml",
        vec![
            ("delta-15", vec![1, 2, 3], presets::trend_fig5_delta(1, 15)),
            ("delta-5", vec![1, 2, 3], presets::trend_fig5_delta(1, 5)),
        ],
        "\n[eval]\naxis = \"loop_iterations\"\ngrid = [20, 28, 36, 44, 52, 60]\nn_prompts = 256\neval_seed = 777\n",
        "",
    );
    emit(
        "fig6-desk",
        "experiment-fig6.toml",
        vec![("algoformer-10-10", vec![1], presets::trend_fig6_algoformer(1.0, 1))],
        "\n[eval]\naxis = \"in_context_samples\"\ngrid = [0, 10, 20, 30, 40]\nn_prompts = 256\neval_seed = 777\n",
        "\n[baselines]\nd = 20\nn = 40\nsigma = 1.0\niters = 40\nn_instances = 128\nseed = 906\n",
    );

    // task dump config
    let dump = "batches = 4\nbatch_size = 16\nseed = 11\n\n[task]\nfamily = \"sparse_linear_regression\"\nd = 20\nd_y = 1\nn = 40\nsigma = 1.0\nsparsity = 0.85\n";
    std::fs::write(dir.join("dump-sparse-lr.toml"), dump).unwrap();
    println!("configs written");
}
