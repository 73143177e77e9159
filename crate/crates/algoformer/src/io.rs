//! On-disk formats.
//!
//! Parameters: a flat little-endian 64-bit blob in canonical visit order,
//! with a JSON sidecar naming every tensor and its shape; load/save round
//! trips are bitwise exact. Checkpoints add Adam moments, the config, the
//! master seed and the step counter, all content-addressed by SHA-256 in
//! the manifest. Task batches dump as a JSON header plus raw 64-bit
//! token/target matrices.

use crate::model::{AlgoFormerConfig, AlgoFormerParams};
use crate::tasks::{PromptBatch, Prompt, TaskSpec};
use crate::tensor::Tensor;
use crate::train::{AdamState, LossRow, TrainConfig, TrainRun};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("blob hash mismatch for {file}: manifest {expected}, found {found}")]
    HashMismatch {
        file: String,
        expected: String,
        found: String,
    },
}

pub type Result<T> = std::result::Result<T, IoError>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ── parameter blobs ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeManifest {
    pub tensors: Vec<TensorEntry>,
    pub total_scalars: usize,
}

fn tensor_names(p: &AlgoFormerParams<f64>) -> Vec<String> {
    let mut names = vec!["read_in".to_string(), "positional".to_string()];
    let stack = |tag: &str, layers: usize, heads: usize, names: &mut Vec<String>| {
        for l in 0..layers {
            for h in 0..heads {
                names.push(format!("{tag}.{l}.head{h}.w_q"));
                names.push(format!("{tag}.{l}.head{h}.w_k"));
                names.push(format!("{tag}.{l}.head{h}.w_v"));
            }
            names.push(format!("{tag}.{l}.w1"));
            names.push(format!("{tag}.{l}.b1"));
            names.push(format!("{tag}.{l}.w2"));
            names.push(format!("{tag}.{l}.b2"));
        }
    };
    let heads = p.pre.first().or(p.loop_stack.first()).map_or(0, |l| l.n_heads());
    stack("pre", p.pre.len(), heads.max(p.pre.first().map_or(0, |l| l.n_heads())), &mut names);
    stack(
        "loop",
        p.loop_stack.len(),
        p.loop_stack.first().map_or(0, |l| l.n_heads()),
        &mut names,
    );
    stack("post", p.post.len(), p.post.first().map_or(0, |l| l.n_heads()), &mut names);
    names.push("read_out".to_string());
    names
}

pub fn params_to_blob(p: &AlgoFormerParams<f64>) -> (Vec<u8>, ShapeManifest) {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let names = tensor_names(p);
    let mut idx = 0;
    let mut total = 0;
    p.visit(&mut |t| {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: names.get(idx).cloned().unwrap_or_else(|| format!("t{idx}")),
            shape: t.shape().to_vec(),
        });
        total += t.len();
        idx += 1;
    });
    (
        blob,
        ShapeManifest {
            tensors,
            total_scalars: total,
        },
    )
}

pub fn params_from_blob(
    blob: &[u8],
    manifest: &ShapeManifest,
    template: &AlgoFormerParams<f64>,
) -> Result<AlgoFormerParams<f64>> {
    if blob.len() != manifest.total_scalars * 8 {
        return Err(IoError::Format(format!(
            "blob holds {} bytes, manifest expects {}",
            blob.len(),
            manifest.total_scalars * 8
        )));
    }
    let mut out = template.clone();
    let mut offset = 0usize;
    let mut idx = 0usize;
    let mut err = None;
    out.visit_mut(&mut |t| {
        let entry = &manifest.tensors[idx];
        if entry.shape != t.shape() {
            if err.is_none() {
                err = Some(format!(
                    "tensor {} shape {:?} does not match template {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                ));
            }
        } else {
            for i in 0..t.len() {
                let mut bytes = [0u8; 8];
                bytes.copy_from_slice(&blob[offset..offset + 8]);
                t.data_mut()[i] = f64::from_le_bytes(bytes);
                offset += 8;
            }
        }
        idx += 1;
    });
    match err {
        Some(e) => Err(IoError::Format(e)),
        None => Ok(out),
    }
}

// ── checkpoints ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: String,
    pub seed: u64,
    pub next_step: u64,
    pub params: ShapeManifest,
    pub params_sha256: String,
    pub adam_sha256: String,
    pub config_sha256: String,
}

fn adam_to_blob(s: &AdamState<f64>) -> Vec<u8> {
    let mut blob = Vec::new();
    blob.extend_from_slice(&s.step.to_le_bytes());
    for t in s.m.iter().chain(&s.v) {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    blob
}

fn adam_from_blob(blob: &[u8], template: &AdamState<f64>) -> Result<AdamState<f64>> {
    let mut s = template.clone();
    if blob.len() < 8 {
        return Err(IoError::Format("adam blob too short".into()));
    }
    let mut step_bytes = [0u8; 8];
    step_bytes.copy_from_slice(&blob[..8]);
    s.step = u64::from_le_bytes(step_bytes);
    let mut offset = 8usize;
    for t in s.m.iter_mut().chain(s.v.iter_mut()) {
        for i in 0..t.len() {
            if offset + 8 > blob.len() {
                return Err(IoError::Format("adam blob truncated".into()));
            }
            let mut bytes = [0u8; 8];
            bytes.copy_from_slice(&blob[offset..offset + 8]);
            t.data_mut()[i] = f64::from_le_bytes(bytes);
            offset += 8;
        }
    }
    Ok(s)
}

/// Write `params.bin`, `adam.bin`, `config.toml` and `manifest.json`.
pub fn save_checkpoint(dir: &Path, run: &TrainRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (params_blob, shapes) = params_to_blob(&run.params);
    let adam_blob = adam_to_blob(&run.adam);
    let config_text = toml::to_string_pretty(&run.config)
        .map_err(|e| IoError::Format(format!("config serialization: {e}")))?;
    fs::write(dir.join("params.bin"), &params_blob)?;
    fs::write(dir.join("adam.bin"), &adam_blob)?;
    fs::write(dir.join("config.toml"), &config_text)?;
    let manifest = CheckpointManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: run.config.seed,
        next_step: run.next_step,
        params: shapes,
        params_sha256: sha256_hex(&params_blob),
        adam_sha256: sha256_hex(&adam_blob),
        config_sha256: sha256_hex(config_text.as_bytes()),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainRun> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let config_text = fs::read_to_string(dir.join("config.toml"))?;
    let config: TrainConfig = toml::from_str(&config_text)?;
    let params_blob = fs::read(dir.join("params.bin"))?;
    let adam_blob = fs::read(dir.join("adam.bin"))?;
    for (file, blob, expected) in [
        ("params.bin", &params_blob, &manifest.params_sha256),
        ("adam.bin", &adam_blob, &manifest.adam_sha256),
    ] {
        let found = sha256_hex(blob);
        if &found != expected {
            return Err(IoError::HashMismatch {
                file: file.into(),
                expected: expected.clone(),
                found,
            });
        }
    }
    // the template fixes shapes; contents are overwritten from the blob
    let mut rng = crate::seed::stream(config.seed, crate::seed::labels::INIT);
    let template = crate::model::init_model::<f64, _>(
        &config.model,
        crate::layer::InitScheme::Zeros,
        &mut rng,
    )
    .map_err(|e| IoError::Format(e.to_string()))?;
    let params = params_from_blob(&params_blob, &manifest.params, &template)?;
    let adam = adam_from_blob(&adam_blob, &AdamState::zeros_like(&params))?;
    Ok(TrainRun {
        config,
        params,
        adam,
        next_step: manifest.next_step,
        loss_log: Vec::new(),
    })
}

// ── task batch dumps ────────────────────────────────────────────────────

const BATCH_MAGIC: &[u8; 8] = b"AFBATCH1";

#[derive(Debug, Serialize, Deserialize)]
struct BatchHeader {
    spec: TaskSpec,
    n_prompts: usize,
    /// (rows, cols) of each prompt's token matrix and target matrix
    token_shapes: Vec<(usize, usize)>,
    target_shapes: Vec<(usize, usize)>,
    supervised: Vec<Vec<usize>>,
    query_pos: Vec<usize>,
    seed: u64,
    step: u64,
}

/// One file per batch: magic, header length, JSON header, raw 64-bit
/// token and target matrices.
pub fn dump_batch(
    path: &Path,
    spec: &TaskSpec,
    batch: &PromptBatch,
    seed: u64,
    step: u64,
) -> Result<()> {
    let header = BatchHeader {
        spec: spec.clone(),
        n_prompts: batch.prompts.len(),
        token_shapes: batch
            .prompts
            .iter()
            .map(|p| (p.tokens.rows(), p.tokens.cols()))
            .collect(),
        target_shapes: batch
            .prompts
            .iter()
            .map(|p| (p.targets.rows(), p.targets.cols()))
            .collect(),
        supervised: batch.prompts.iter().map(|p| p.supervised.clone()).collect(),
        query_pos: batch.prompts.iter().map(|p| p.query_pos).collect(),
        seed,
        step,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut f = fs::File::create(path)?;
    f.write_all(BATCH_MAGIC)?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    for p in &batch.prompts {
        for v in p.tokens.data() {
            f.write_all(&v.to_le_bytes())?;
        }
        for v in p.targets.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_batch(path: &Path) -> Result<(TaskSpec, PromptBatch, u64, u64)> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(IoError::Format("not a batch dump".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: BatchHeader = serde_json::from_slice(&header_json)?;
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Tensor<f64>> {
        let mut data = vec![0.0f64; rows * cols];
        let mut bytes = vec![0u8; rows * cols * 8];
        f.read_exact(&mut bytes)?;
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            let mut b = [0u8; 8];
            b.copy_from_slice(chunk);
            data[i] = f64::from_le_bytes(b);
        }
        Ok(Tensor::from_raw(data, vec![rows, cols]))
    };
    let mut prompts = Vec::with_capacity(header.n_prompts);
    for i in 0..header.n_prompts {
        let tokens = read_matrix(header.token_shapes[i].0, header.token_shapes[i].1)?;
        let targets = read_matrix(header.target_shapes[i].0, header.target_shapes[i].1)?;
        prompts.push(Prompt {
            tokens,
            supervised: header.supervised[i].clone(),
            targets,
            query_pos: header.query_pos[i],
        });
    }
    let batch = PromptBatch::new(header.spec.family, prompts);
    Ok((header.spec, batch, header.seed, header.step))
}

// ── CSV writers ─────────────────────────────────────────────────────────

pub fn write_loss_log_csv(path: &Path, log: &[LossRow]) -> Result<()> {
    let mut s = String::from("step,loss,eval_mse\n");
    for row in log {
        let eval = row
            .eval_mse
            .map(|v| format!("{v:.17e}"))
            .unwrap_or_default();
        s.push_str(&format!("{},{:.17e},{}\n", row.step, row.loss, eval));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, curve: &crate::eval::EvalCurve) -> Result<()> {
    let mut s = String::from("x,mean_mse,std,n\n");
    for p in &curve.points {
        s.push_str(&format!("{},{:.17e},{:.17e},{}\n", p.x, p.mean_mse, p.std, p.n));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Trajectory rows: (k, loss, |w_k - w*|, |I - M_k S| where applicable).
pub struct TrajectoryRow {
    pub k: usize,
    pub loss: f64,
    pub dist_to_star: f64,
    pub newton_residual: Option<f64>,
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut s = String::from("k,loss,dist_to_star,newton_residual\n");
    for r in rows {
        let res = r
            .newton_residual
            .map(|v| format!("{v:.17e}"))
            .unwrap_or_default();
        s.push_str(&format!(
            "{},{:.17e},{:.17e},{}\n",
            r.k, r.loss, r.dist_to_star, res
        ));
    }
    fs::write(path, s)?;
    Ok(())
}

// ── result-bundle manifest ──────────────────────────────────────────────

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ResultManifest {
    pub experiment: String,
    pub version: String,
    pub master_seeds: Vec<u64>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

impl ResultManifest {
    pub fn new(experiment: &str) -> Self {
        ResultManifest {
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seeds: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add_file(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let rel = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.artifacts.push(ArtifactEntry {
            path: rel,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

/// Strict TOML parsing for any of the config types.
pub fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(toml::from_str(text)?)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    parse_toml(&fs::read_to_string(path)?)
}

#[allow(unused)]
fn model_config_sanity(c: &AlgoFormerConfig) -> bool {
    c.validate().is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{AttentionMode, InitScheme};
    use crate::model::init_model;
    use crate::tasks::{gen_batch, lr_spec, TaskFamily};
    use crate::train::{train, AdamHyper, Precision};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            task: lr_spec(3, 4, 0.1),
            model: AlgoFormerConfig {
                d_model: 8,
                feat_dim: 3,
                label_dim: 1,
                l_pre: 1,
                l_loop: 1,
                l_post: 1,
                heads: 1,
                t_loops: 2,
                delta_t: 1,
                attention: AttentionMode::Causal,
                ffn_dim: 16,
                key_dim: 8,
                n_max: 9,
            },
            optim: AdamHyper::default(),
            batch_size: 4,
            steps: 6,
            eval_every: 0,
            eval_prompts: 4,
            seed: 21,
            threads: 1,
            precision: Precision::F64,
            init_std: 0.02,
            init_kind: crate::train::InitKind::Gaussian,
            curriculum: None,
        }
    }

    #[test]
    fn params_blob_round_trip_is_bitwise() {
        let cfg = tiny_config();
        let mut rng = crate::seed::stream(9, "io-test");
        let params =
            init_model::<f64, _>(&cfg.model, InitScheme::Gaussian { std: 0.3 }, &mut rng).unwrap();
        let (blob, manifest) = params_to_blob(&params);
        assert_eq!(manifest.total_scalars, params.param_count());
        let restored = params_from_blob(&blob, &manifest, &params).unwrap();
        assert_eq!(params, restored);
        let (blob2, _) = params_to_blob(&restored);
        assert_eq!(blob, blob2);
    }

    #[test]
    fn checkpoint_round_trip_and_hash_guard() {
        let dir = tempfile::tempdir().unwrap();
        let run = train(&tiny_config()).unwrap();
        save_checkpoint(dir.path(), &run).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(run.params, loaded.params);
        assert_eq!(run.adam, loaded.adam);
        assert_eq!(run.next_step, loaded.next_step);
        // corrupting the blob trips the hash check
        let p = dir.path().join("params.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(IoError::HashMismatch { .. })
        ));
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_bitwise() {
        let mut cfg = tiny_config();
        cfg.steps = 10;
        let full = train(&cfg).unwrap();

        let mut half_cfg = cfg.clone();
        half_cfg.steps = 5;
        let half = train(&half_cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &half).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        let resumed = crate::train::resume(&cfg, loaded).unwrap();
        assert_eq!(full.params, resumed.params, "resume must be bitwise exact");
    }

    #[test]
    fn batch_dump_round_trip_is_bitwise() {
        let spec = lr_spec(3, 4, 0.2);
        let batch = gen_batch(&spec, 5, 0, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        dump_batch(&path, &spec, &batch, 5, 0).unwrap();
        let (spec2, batch2, seed, step) = load_batch(&path).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(seed, 5);
        assert_eq!(step, 0);
        assert_eq!(batch2.family, TaskFamily::LinearRegression);
        assert_eq!(batch.prompts, batch2.prompts);
    }

    #[test]
    fn strict_toml_rejects_unknown_fields() {
        let cfg = tiny_config();
        let mut text = toml::to_string(&cfg).unwrap();
        text.push_str("\nunknown_field = 3\n");
        let parsed: Result<TrainConfig> = parse_toml(&text);
        assert!(parsed.is_err(), "unknown fields must be rejected");
    }

    #[test]
    fn csv_writers_emit_headers_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_log_csv(
            &p,
            &[LossRow {
                step: 0,
                loss: 1.5,
                eval_mse: Some(2.0),
            }],
        )
        .unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("step,loss,eval_mse\n"));
        assert!(text.contains("0,1.5"));
    }
}
