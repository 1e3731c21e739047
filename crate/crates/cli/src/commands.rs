use std::path::Path;

use jtve_core::data::{Dataset, DatasetSpec};
use jtve_core::eval::{
    auprc, auroc, energy_score, loglik_histogram, mmd, neg_elbo_score, reconstruction_rmse, render_samples, ScoredSet,
};
use jtve_core::models::TriModel;
use jtve_core::trainer::{resume_loop, train_loop, Checkpoint, RunArtifacts, TrainConfig};
use jtve_core::{Error, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::{overrides, Metric, ScoreKind};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Posterior draws per sample for ELBO scores.
const ELBO_DRAWS: usize = 16;
/// Cap on the sample count used for MMD (the kernel sums are quadratic).
const MMD_MAX: usize = 2000;

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Hex SHA-256 of the fully resolved config, which includes the seed.
pub fn run_id(config: &TrainConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn resolve_config(path: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let mut value = match path {
        Some(p) => serde_json::from_str(&read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => Value::Object(Map::new()),
    };
    for s in sets {
        let (key, v) = overrides::parse(s)?;
        overrides::apply(&mut value, &key, v)?;
    }
    TrainConfig::from_value(value)
}

fn manifest(config: &TrainConfig, artifacts: &RunArtifacts, manifest_path: &Path) -> Value {
    json!({
        "run_id": run_id(config),
        "config": config,
        "artifacts": {
            "manifest": manifest_path,
            "metrics": artifacts.metrics,
            "final_checkpoint": artifacts.final_checkpoint,
            "checkpoints": artifacts.checkpoints,
        },
    })
}

pub fn train(config_path: Option<&Path>, sets: &[String], resume: Option<&Path>) -> Result<Value> {
    let (trainer, artifacts) = match resume {
        Some(ckpt) => {
            log::info!("resuming from {}", ckpt.display());
            resume_loop(ckpt)?
        }
        None => {
            let config = resolve_config(config_path, sets)?;
            log::info!("run {} writing to {}", run_id(&config), config.output.dir.display());
            train_loop(&config)?
        }
    };
    let config = trainer.config();
    let path = config.output.dir.join(MANIFEST_FILE);
    let m = manifest(config, &artifacts, &path);
    write(&path, serde_json::to_string_pretty(&m).expect("manifest serializes").as_bytes())?;
    Ok(json!({
        "run_id": m["run_id"],
        "steps": trainer.step(),
        "manifest": path,
        "metrics": artifacts.metrics,
        "final_checkpoint": artifacts.final_checkpoint,
    }))
}

fn load_model(path: &Path) -> Result<TriModel> {
    Ok(Checkpoint::load(path)?.model)
}

fn load_data(spec: &str, model: &TriModel, seed: u64) -> Result<Dataset> {
    let ds = spec.parse::<DatasetSpec>()?.load(seed)?;
    if ds.dim() != model.data_dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects D = {}, dataset {spec:?} has D = {}",
            model.data_dim(),
            ds.dim()
        )));
    }
    Ok(ds)
}

fn scores(model: &TriModel, x: &Tensor, kind: ScoreKind, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    match kind {
        ScoreKind::Energy => energy_score(model, x),
        ScoreKind::Elbo => neg_elbo_score(model, x, ELBO_DRAWS, rng),
    }
}

pub struct EvalArgs {
    pub data: String,
    pub ood: Option<String>,
    pub holdout: Option<u32>,
    pub metrics: Vec<Metric>,
    pub score: ScoreKind,
    pub bins: usize,
    pub seed: u64,
}

/// Scores with labels: `--data` as normal and `--ood` as anomalous, or
/// `--holdout` marking a class of `--data` as anomalous.
fn scored_set(model: &TriModel, data: &Dataset, ood: Option<&Dataset>, args: &EvalArgs, rng: &mut ChaCha8Rng) -> Result<ScoredSet> {
    let mut s = scores(model, data.samples(), args.score, rng)?;
    let mut labels = match (args.holdout, data.labels()) {
        (Some(k), Some(l)) => l.iter().map(|&c| c == k).collect(),
        (Some(_), None) => return Err(Error::Config("--holdout needs a labelled dataset".into())),
        (None, _) => vec![false; data.len()],
    };
    if let Some(o) = ood {
        s.extend(scores(model, o.samples(), args.score, rng)?);
        labels.extend(std::iter::repeat_n(true, o.len()));
    }
    ScoredSet::new(s, labels)
}

pub fn eval(checkpoint: &Path, args: &EvalArgs) -> Result<Value> {
    let model = load_model(checkpoint)?;
    let data = load_data(&args.data, &model, args.seed)?;
    let ood = args.ood.as_deref().map(|s| load_data(s, &model, args.seed.wrapping_add(1))).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = Map::new();
    let mut ranked = None;
    for metric in &args.metrics {
        let (key, value) = match metric {
            Metric::Rmse => ("rmse", json!(reconstruction_rmse(&model, data.samples())?)),
            Metric::Auroc | Metric::Auprc => {
                if ranked.is_none() {
                    ranked = Some(scored_set(&model, &data, ood.as_ref(), args, &mut rng)?);
                }
                let s = ranked.as_ref().expect("scored above");
                match metric {
                    Metric::Auroc => ("auroc", json!(auroc(s)?)),
                    _ => ("auprc", json!(auprc(s)?)),
                }
            }
            Metric::Mmd => {
                let n = data.len().min(MMD_MAX);
                let real = data.samples().select_rows(&(0..n).collect::<Vec<_>>());
                let (_, fake) = model.generator.synthesis_sample(n, false, &mut rng)?;
                ("mmd", json!(mmd(&fake, &real, None)?))
            }
            Metric::Histogram => {
                let mut sets = vec![("data", data.samples())];
                if let Some(o) = &ood {
                    sets.push(("ood", o.samples()));
                }
                let h = loglik_histogram(&model, &sets, args.bins)?;
                let edges = &h.edges;
                let rows: Vec<Value> = h
                    .counts
                    .iter()
                    .flat_map(|(name, counts)| {
                        counts.iter().enumerate().map(move |(k, &c)| {
                            json!({"dataset": name, "bin_left": edges[k], "bin_right": edges[k + 1], "count": c})
                        })
                    })
                    .collect();
                ("histogram", Value::Array(rows))
            }
        };
        out.insert(key.to_string(), value);
    }
    Ok(Value::Object(out))
}

pub fn sample(checkpoint: &Path, rows: usize, cols: usize, out: &Path, seed: u64) -> Result<Value> {
    let model = load_model(checkpoint)?;
    let bytes = render_samples(&model, rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))?;
    write(out, &bytes)?;
    let format = if bytes.starts_with(b"P5\n") { "pgm" } else { "csv" };
    Ok(json!({"path": out, "rows": rows, "cols": cols, "format": format}))
}

pub fn score(checkpoint: &Path, data: &str, kind: ScoreKind, seed: u64) -> Result<Value> {
    let model = load_model(checkpoint)?;
    let ds = load_data(data, &model, seed)?;
    let s = scores(&model, ds.samples(), kind, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(json!({ "scores": s }))
}
