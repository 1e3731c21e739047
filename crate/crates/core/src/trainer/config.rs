use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::nn::AdamConfig;
use crate::objectives::ObjectiveConfig;

/// Which players are trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Energy model, inference model and generator on the divergence triangle.
    #[default]
    Joint,
    /// Generator and inference model on the ELBO alone; the energy model is untouched.
    VaeOnly,
}

/// One update stage within a training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ebm,
    Inference,
    Generator,
}

pub const DEFAULT_STAGE_ORDER: [Stage; 3] = [Stage::Ebm, Stage::Inference, Stage::Generator];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    /// Iteration count `T`.
    pub steps: u64,
    /// Data batch size `M`.
    pub batch_size: usize,
    /// Synthesis batch size `M̃`.
    pub synth_batch_size: usize,
    pub lr_alpha: f64,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub baseline_mode: BaselineMode,
    /// Update order within a step; anything but the default is an ablation.
    pub stage_order: Vec<Stage>,
    /// Draw fresh samples before every stage instead of once per step.
    pub redraw_per_stage: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            steps: 20_000,
            batch_size: 128,
            synth_batch_size: 128,
            lr_alpha: 1e-4,
            lr_theta: 1e-4,
            lr_phi: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            baseline_mode: BaselineMode::Joint,
            stage_order: DEFAULT_STAGE_ORDER.to_vec(),
            redraw_per_stage: false,
        }
    }
}

impl TrainerSection {
    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset spec string, e.g. `synthetic:ring8:20000`.
    pub train: String,
    /// Anomaly class removed from training; enables the anomaly split.
    pub holdout: Option<u32>,
    /// Cap on the number of training samples after the split.
    pub train_cap: Option<usize>,
    /// Share of the dataset reserved as the anomaly test partition.
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: "synthetic:ring8:20000".into(),
            holdout: None,
            train_cap: None,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs/default"), checkpoint_every: 0 }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub trainer: TrainerSection,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub data: DataSection,
    pub output: OutputSection,
}

impl TrainConfig {
    /// Parses JSON, naming the offending key path on failure, then validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: TrainConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// As [`TrainConfig::from_json`], from an already parsed value.
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: TrainConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dataset(&self) -> Result<DatasetSpec> {
        self.data.train.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trainer;
        let bad = |key: &str, why: String| Err(Error::Config(format!("{key}: {why}")));
        if t.steps == 0 {
            return bad("trainer.steps", "must be ≥ 1".into());
        }
        if t.batch_size == 0 {
            return bad("trainer.batch_size", "must be ≥ 1".into());
        }
        if t.synth_batch_size == 0 {
            return bad("trainer.synth_batch_size", "must be ≥ 1".into());
        }
        for (key, lr) in [("trainer.lr_alpha", t.lr_alpha), ("trainer.lr_theta", t.lr_theta), ("trainer.lr_phi", t.lr_phi)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(key, format!("learning rate {lr} must be positive"));
            }
        }
        for (key, b) in [("trainer.beta1", t.beta1), ("trainer.beta2", t.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(key, format!("{b} must lie in [0, 1)"));
            }
        }
        if !(t.adam_eps > 0.0) {
            return bad("trainer.adam_eps", "must be positive".into());
        }
        let mut order = t.stage_order.clone();
        order.sort_by_key(|s| *s as u8);
        if order != DEFAULT_STAGE_ORDER {
            return bad("trainer.stage_order", "must list ebm, inference and generator once each".into());
        }
        self.model.validate()?;
        let w = &self.objective.kl_weights;
        if [w.q_p, w.p_pi, w.q_pi].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("objective.kl_weights", "weights must be finite and non-negative".into());
        }
        self.dataset()?;
        let f = self.data.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad("data.test_fraction", format!("{f} must lie in (0, 1)"));
        }
        if self.data.train_cap == Some(0) {
            return bad("data.train_cap", "must be ≥ 1".into());
        }
        Ok(())
    }
}
