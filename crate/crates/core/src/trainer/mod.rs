//! The joint training loop: per step, draw synthesis and inference samples,
//! then update the energy model, the inference model and the generator in
//! turn. Includes metric logging and checkpoint/resume.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use config::{BaselineMode, DataSection, OutputSection, Stage, TrainConfig, TrainerSection, DEFAULT_STAGE_ORDER};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_anomaly_split, BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::models::TriModel;
use crate::nn::{AdamState, ParamGroup};
use crate::objectives::{ebm_grad, generator_grad, inference_grad, vae_elbo, Batch};
use crate::tensor::Tensor;

/// RNG streams derived from the run seed, one per purpose.
const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_DATA: u64 = 2;
const BATCH_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.jtve";

pub const METRICS_HEADER: &str = "step,loss_ebm,loss_gen_recon,loss_inf,energy_pos,energy_neg,\
grad_norm_alpha,grad_norm_theta,grad_norm_phi,wall_ms";

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Diagnostics of one training step. Quantities a mode does not compute are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// EBM surrogate `mean f(x̃, z) − mean f(x, z̃)` (weighted).
    pub loss_ebm: f64,
    /// `−mean log p_θ(x | z̃)`.
    pub loss_gen_recon: f64,
    /// Inference surrogate, or `−ELBO` in vae_only mode.
    pub loss_inf: f64,
    pub energy_pos: f64,
    pub energy_neg: f64,
    pub grad_norm_alpha: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: f64,
    pub wall_ms: f64,
}

impl StepMetrics {
    fn empty(step: u64) -> Self {
        StepMetrics {
            step,
            loss_ebm: f64::NAN,
            loss_gen_recon: f64::NAN,
            loss_inf: f64::NAN,
            energy_pos: f64::NAN,
            energy_neg: f64::NAN,
            grad_norm_alpha: f64::NAN,
            grad_norm_theta: f64::NAN,
            grad_norm_phi: f64::NAN,
            wall_ms: 0.0,
        }
    }

    /// One CSV row matching [`METRICS_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3}",
            self.step,
            self.loss_ebm,
            self.loss_gen_recon,
            self.loss_inf,
            self.energy_pos,
            self.energy_neg,
            self.grad_norm_alpha,
            self.grad_norm_theta,
            self.grad_norm_phi,
            self.wall_ms
        )
    }
}

/// Adam states for the three parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub alpha: AdamState,
    pub theta: AdamState,
    pub phi: AdamState,
}

impl Optimizers {
    pub fn new(model: &TriModel, t: &TrainerSection) -> Self {
        Optimizers {
            alpha: AdamState::new(t.adam(t.lr_alpha), model.energy.params()),
            theta: AdamState::new(t.adam(t.lr_theta), model.generator.params()),
            phi: AdamState::new(t.adam(t.lr_phi), model.inference.params()),
        }
    }
}

fn adam_update<P: ParamGroup>(opt: &mut AdamState, group: &mut P, grads: &[Tensor]) -> Result<()> {
    let names = group.param_names();
    opt.step(&mut group.params_mut(), grads, &names)
}

fn norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

/// One step of joint (or vae_only) training on `batch_x`.
///
/// Joint mode draws synthesis then inference samples and runs the stages
/// in `config.trainer.stage_order`. Before each stage the shared draws are
/// re-evaluated under the current parameters, so every stage sees the
/// updates made earlier in the step. The energy model takes one
/// spectral-norm power iteration right before its update.
pub fn train_step(
    model: &mut TriModel,
    opts: &mut Optimizers,
    batch_x: Tensor,
    rng: &mut ChaCha8Rng,
    config: &TrainConfig,
    step: u64,
) -> Result<StepMetrics> {
    let t = &config.trainer;
    let mut m = StepMetrics::empty(step);
    if config.model.spectral_norm_inference {
        model.inference.spectral_step();
    }
    let noise = config.model.synthesis_noise;
    match t.baseline_mode {
        BaselineMode::VaeOnly => {
            let batch = Batch::draw(model, batch_x, t.synth_batch_size, noise, rng)?;
            let est = vae_elbo(model, &batch)?;
            adam_update(&mut opts.theta, &mut model.generator, &est.theta)?;
            adam_update(&mut opts.phi, &mut model.inference, &est.phi)?;
            m.loss_gen_recon = -est.recon;
            m.loss_inf = -est.elbo;
            m.grad_norm_theta = norm(&est.theta);
            m.grad_norm_phi = norm(&est.phi);
        }
        BaselineMode::Joint => {
            let mut batch = Batch::draw(model, batch_x.clone(), t.synth_batch_size, noise, rng)?;
            let mut stale = false;
            for stage in &t.stage_order {
                if t.redraw_per_stage && stale {
                    batch = Batch::draw(model, batch_x.clone(), t.synth_batch_size, noise, rng)?;
                } else if stale {
                    batch.refresh(model)?;
                }
                match stage {
                    Stage::Ebm => {
                        model.energy.spectral_step();
                        let est = ebm_grad(model, &batch, &config.objective.kl_weights)?;
                        adam_update(&mut opts.alpha, &mut model.energy, &est.grads)?;
                        m.loss_ebm = est.loss;
                        m.energy_pos = est.energy_pos;
                        m.energy_neg = est.energy_neg;
                        m.grad_norm_alpha = est.norm();
                        // α does not enter z̃ or x̃.
                        stale |= t.redraw_per_stage;
                    }
                    Stage::Inference => {
                        let est = inference_grad(model, &batch, &config.objective)?;
                        adam_update(&mut opts.phi, &mut model.inference, &est.grads)?;
                        m.loss_inf = est.loss;
                        m.grad_norm_phi = est.norm();
                        stale = true;
                    }
                    Stage::Generator => {
                        let est = generator_grad(model, &batch, &config.objective.kl_weights)?;
                        adam_update(&mut opts.theta, &mut model.generator, &est.grads)?;
                        m.loss_gen_recon = -est.recon;
                        m.grad_norm_theta = est.norm();
                        stale = true;
                    }
                }
            }
        }
    }
    model.check_finite()?;
    Ok(m)
}

/// Training data after any anomaly split.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub train: Dataset,
    /// Anomaly test partition when `data.holdout` is set.
    pub test: Option<Dataset>,
}

/// Loads the configured dataset, applying the anomaly split and cap.
pub fn load_training_data(config: &TrainConfig) -> Result<TrainingData> {
    let seed = config.trainer.seed;
    let ds = config.dataset()?.load(seed)?;
    let mut rng = seeded(seed, STREAM_DATA);
    match config.data.holdout {
        Some(class) => {
            let split = make_anomaly_split(&ds, class, config.data.train_cap, config.data.test_fraction, &mut rng)?;
            Ok(TrainingData { train: split.train, test: Some(split.test) })
        }
        None => {
            let train = match config.data.train_cap {
                Some(cap) if cap < ds.len() => {
                    let mut idx: Vec<usize> = (0..ds.len()).collect();
                    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
                    idx.truncate(cap);
                    ds.subset(&idx)?
                }
                _ => ds,
            };
            Ok(TrainingData { train, test: None })
        }
    }
}

/// Attaches the step index to an error raised inside a step.
fn at_step(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite { what } => Error::NonFinite { what: format!("{what} at step {step}") },
        other => other,
    }
}

/// Owns model, optimizers, RNG and batch position across steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: TriModel,
    opts: Optimizers,
    rng: ChaCha8Rng,
    stream: BatchStream,
    step: u64,
    data: Dataset,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Dataset) -> Result<Self> {
        config.validate()?;
        let seed = config.trainer.seed;
        let model = TriModel::new(&config.model, data.dim(), &mut seeded(seed, STREAM_INIT))?;
        let opts = Optimizers::new(&model, &config.trainer);
        let stream = BatchStream::new(data.len(), config.trainer.batch_size, seed ^ BATCH_SEED_SALT)?;
        Ok(Trainer { model, opts, rng: seeded(seed, STREAM_TRAIN), stream, step: 0, data, config })
    }

    /// Restores a run; `data` must be the dataset the checkpoint was trained on.
    pub fn from_checkpoint(ckpt: Checkpoint, data: Dataset) -> Result<Self> {
        if data.dim() != ckpt.model.data_dim() {
            return Err(Error::Shape(format!(
                "checkpoint expects D = {}, dataset has D = {}",
                ckpt.model.data_dim(),
                data.dim()
            )));
        }
        let seed = ckpt.config.trainer.seed;
        let stream = BatchStream::resume(
            data.len(),
            ckpt.config.trainer.batch_size,
            seed ^ BATCH_SEED_SALT,
            ckpt.batch_epoch,
            ckpt.batch_cursor,
        )?;
        Ok(Trainer {
            model: ckpt.model,
            opts: Optimizers { alpha: ckpt.adam_alpha, theta: ckpt.adam_theta, phi: ckpt.adam_phi },
            rng: ckpt.rng.restore(),
            stream,
            step: ckpt.step,
            data,
            config: ckpt.config,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            model: self.model.clone(),
            adam_alpha: self.opts.alpha.clone(),
            adam_theta: self.opts.theta.clone(),
            adam_phi: self.opts.phi.clone(),
            rng: RngState::capture(&self.rng),
            batch_epoch: self.stream.epoch(),
            batch_cursor: self.stream.cursor(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &TriModel {
        &self.model
    }

    pub fn optimizers(&self) -> &Optimizers {
        &self.opts
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.trainer.steps
    }

    /// Runs one step on the next batch. On error the trainer is left as it
    /// was before the step.
    pub fn advance(&mut self) -> Result<StepMetrics> {
        let start = Instant::now();
        let saved = (self.model.clone(), self.opts.clone(), self.rng.clone(), self.stream.clone());
        let next = self.step + 1;
        let result = self
            .stream
            .next_batch(&self.data)
            .and_then(|x| train_step(&mut self.model, &mut self.opts, x, &mut self.rng, &self.config, next));
        match result {
            Ok(mut m) => {
                self.step = next;
                m.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                Ok(m)
            }
            Err(e) => {
                (self.model, self.opts, self.rng, self.stream) = saved;
                Err(at_step(next, e))
            }
        }
    }

    /// Runs to `config.trainer.steps`, handing each step's metrics to `sink`
    /// and saving a checkpoint every `checkpoint_every` steps into `ckpt_dir`.
    pub fn run(&mut self, ckpt_dir: Option<&Path>, mut sink: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        let every = self.config.output.checkpoint_every;
        while !self.is_done() {
            let m = self.advance()?;
            sink(&m)?;
            if let Some(dir) = ckpt_dir {
                if every > 0 && self.step % every == 0 && !self.is_done() {
                    self.checkpoint().save(&step_checkpoint_path(dir, self.step))?;
                }
            }
        }
        Ok(())
    }
}

pub fn step_checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:08}.jtve"))
}

/// Appends metrics rows to a CSV file with a fixed header.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    /// Starts a fresh file.
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter { out: BufWriter::new(f), path: path.to_path_buf() };
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    /// Keeps the header and rows with `step ≤ keep_through`, then appends.
    pub fn resume(path: &Path, keep_through: u64) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut kept = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if i == 0 {
                continue;
            }
            let step: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: malformed metrics row {}", path.display(), i + 1)))?;
            if step <= keep_through {
                kept.push(line);
            }
        }
        let mut w = Self::create(path)?;
        for line in kept {
            w.line(&line)?;
        }
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        self.line(&m.csv_row())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Paths written by a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub metrics: PathBuf,
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

fn run_to_end(mut trainer: Trainer, mut writer: MetricsWriter) -> Result<(Trainer, RunArtifacts)> {
    let dir = trainer.config.output.dir.clone();
    let every = trainer.config.output.checkpoint_every;
    let first = trainer.step;
    let total = trainer.config.trainer.steps;
    let report = (total / 20).max(1);
    let run = trainer.run(Some(&dir), |m| {
        writer.write(m)?;
        if m.step % report == 0 || m.step == total {
            log::info!(
                "step {}/{}: energy pos {:.4} neg {:.4}, recon {:.4}",
                m.step,
                total,
                m.energy_pos,
                m.energy_neg,
                m.loss_gen_recon
            );
        }
        // Rows must reach disk before a checkpoint that claims them.
        if every > 0 && m.step % every == 0 {
            writer.flush()?;
        }
        Ok(())
    });
    writer.flush()?;
    run?;
    let final_checkpoint = dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&final_checkpoint)?;
    let checkpoints = if every > 0 {
        (first + 1..trainer.step).filter(|s| s % every == 0).map(|s| step_checkpoint_path(&dir, s)).collect()
    } else {
        Vec::new()
    };
    let artifacts = RunArtifacts { metrics: dir.join(METRICS_FILE), final_checkpoint, checkpoints };
    Ok((trainer, artifacts))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains from scratch: metrics every step, checkpoints at the configured
/// cadence and at the end.
pub fn train_loop(config: &TrainConfig) -> Result<(Trainer, RunArtifacts)> {
    config.validate()?;
    let data = load_training_data(config)?;
    ensure_dir(&config.output.dir)?;
    let trainer = Trainer::new(config.clone(), data.train)?;
    let writer = MetricsWriter::create(&config.output.dir.join(METRICS_FILE))?;
    run_to_end(trainer, writer)
}

/// Continues the run saved in `checkpoint` up to its configured step count,
/// truncating the metrics file to the checkpoint's step first.
pub fn resume_loop(checkpoint: &Path) -> Result<(Trainer, RunArtifacts)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = load_training_data(&ckpt.config)?;
    let dir = ckpt.config.output.dir.clone();
    ensure_dir(&dir)?;
    let step = ckpt.step;
    let trainer = Trainer::from_checkpoint(ckpt, data.train)?;
    let writer = MetricsWriter::resume(&dir.join(METRICS_FILE), step)?;
    run_to_end(trainer, writer)
}
