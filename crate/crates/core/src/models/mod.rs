//! Generator `p_θ(x, z)`, inference model `q_φ(z | x)` and latent energy
//! model `f_α(x, z)`.

mod energy;
mod generator;
mod inference;

pub use energy::{BoundEnergy, EnergyModel};
pub use generator::{BoundGenerator, GeneratorModel};
pub use inference::{
    entropy_from_log_var, log_normal_diag, BoundInference, InferenceModel, LOG_VAR_CLAMP,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LinearLayer, ParamGroup};
use crate::tensor::Tensor;

/// `ln 2π`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Architecture knobs shared by the three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Observation noise std of `p_θ(x | z)`.
    pub sigma: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Nonlinearity after every hidden layer of all three networks.
    pub activation: Activation,
    /// Width `k` of the energy model's x-encoding.
    pub energy_encoding_dim: usize,
    /// Add `σ·ε` to synthesized samples.
    pub synthesis_noise: bool,
    /// Spectrally normalize the inference network too.
    pub spectral_norm_inference: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 2,
            sigma: 0.3,
            hidden_width: 128,
            hidden_layers: 2,
            activation: Activation::LeakyRelu,
            energy_encoding_dim: 64,
            synthesis_noise: false,
            spectral_norm_inference: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("model.latent_dim must be ≥ 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("model.sigma must be > 0, got {}", self.sigma)));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("model.hidden_width must be ≥ 1".into()));
        }
        if self.activation == Activation::Identity {
            return Err(Error::Config("model.activation must be nonlinear".into()));
        }
        if self.energy_encoding_dim == 0 {
            return Err(Error::Config("model.energy_encoding_dim must be ≥ 1".into()));
        }
        Ok(())
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }
}

/// The generator, inference and energy models trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct TriModel {
    pub generator: GeneratorModel,
    pub inference: InferenceModel,
    pub energy: EnergyModel,
}

impl TriModel {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, data_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if data_dim == 0 {
            return Err(Error::Config("data dimension must be ≥ 1".into()));
        }
        let hidden = config.hidden();
        let d = config.latent_dim;
        let act = config.activation;
        let generator = GeneratorModel::new(d, &hidden, data_dim, config.sigma, act, rng)?;
        let mut inference = InferenceModel::new(data_dim, &hidden, d, act, rng);
        if config.spectral_norm_inference {
            inference.enable_spectral_norm(rng);
        }
        let energy = EnergyModel::new(data_dim, d, &hidden, config.energy_encoding_dim, act, rng);
        Ok(TriModel { generator, inference, energy })
    }

    pub fn from_parts(generator: GeneratorModel, inference: InferenceModel, energy: EnergyModel) -> Result<Self> {
        let d = generator.latent_dim();
        let dim = generator.data_dim();
        if inference.latent_dim() != d || energy.latent_dim() != d {
            return Err(Error::Shape("latent dimensions of the three models differ".into()));
        }
        if inference.data_dim() != dim || energy.data_dim() != dim {
            return Err(Error::Shape("data dimensions of the three models differ".into()));
        }
        Ok(TriModel { generator, inference, energy })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.generator.data_dim()
    }

    /// Every linear layer: generator, inference trunk, mean head, log-variance
    /// head, energy encoder, energy head.
    pub fn layers(&self) -> Vec<&LinearLayer> {
        let g = &self.generator.net.layers;
        let inf = &self.inference;
        let e = &self.energy;
        g.iter()
            .chain(&inf.trunk.layers)
            .chain([&inf.mean_head, &inf.log_var_head])
            .chain(&e.encoder.layers)
            .chain(&e.head.layers)
            .collect()
    }

    /// [`TriModel::layers`], mutably and in the same order.
    pub fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        let inf = &mut self.inference;
        let e = &mut self.energy;
        self.generator
            .net
            .layers
            .iter_mut()
            .chain(inf.trunk.layers.iter_mut())
            .chain([&mut inf.mean_head, &mut inf.log_var_head])
            .chain(e.encoder.layers.iter_mut())
            .chain(e.head.layers.iter_mut())
            .collect()
    }

    /// Checks every parameter tensor for NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        let groups: [&dyn ParamGroup; 3] = [&self.generator, &self.inference, &self.energy];
        for group in groups {
            for (p, name) in group.params().into_iter().zip(group.param_names()) {
                if !p.is_finite() {
                    return Err(Error::NonFinite { what: name });
                }
            }
        }
        Ok(())
    }
}

/// Per-sample squared reconstruction error `‖x − g_θ(μ_φ(x))‖²`.
pub fn reconstruction_error(model: &TriModel, x: &Tensor) -> Result<Tensor> {
    let (mu, _) = model.inference.posterior(x)?;
    let recon = model.generator.decode(&mu)?;
    let errs: Vec<f64> = (0..x.rows())
        .map(|i| x.row(i).iter().zip(recon.row(i)).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    Tensor::new(&[errs.len()], errs)
}
