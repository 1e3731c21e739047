//! Divergence-triangle losses and their Monte-Carlo gradient estimators.
//!
//! The three players minimise
//!
//! ```text
//! L = KL(q_φ ‖ p_θ) + KL(p_θ ‖ π_α) − KL(q_φ ‖ π_α)
//! ```
//!
//! over θ and φ while α maximises it.
//! Each estimator builds a scalar surrogate on a [`Graph`] whose gradient is
//! the required Monte-Carlo estimate; `log q_data(x)` never appears because
//! it does not depend on any parameter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::{entropy_from_log_var, log_normal_diag, TriModel};
use crate::nn::ParamGroup;
use crate::tensor::Tensor;


/// How φ is trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// `KL(q‖p_θ) − KL(q‖π_α)`.
    #[default]
    Triangle,
    /// `KL(q‖p_θ) + KL(q‖π_α)`.
    Plus,
}

/// How `E_q[log q_φ]` is evaluated in the inference loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// `−H(q_φ(·|x))` from the Gaussian entropy formula.
    #[default]
    ClosedForm,
    /// `log q_φ(z̃ | x)` at the reparameterized sample.
    Sampled,
}

/// Multipliers on the three KL terms. All 1 reproduces the unweighted loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlWeights {
    pub q_p: f64,
    pub p_pi: f64,
    pub q_pi: f64,
}

impl Default for KlWeights {
    fn default() -> Self {
        KlWeights { q_p: 1.0, p_pi: 1.0, q_pi: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub inference_mode: InferenceMode,
    pub entropy: EntropyMode,
    /// Keep both `log q_φ` terms of the triangle inference loss. They cancel
    /// analytically; turning this off drops them.
    pub include_log_q: bool,
    pub kl_weights: KlWeights,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            inference_mode: InferenceMode::Triangle,
            entropy: EntropyMode::ClosedForm,
            include_log_q: true,
            kl_weights: KlWeights::default(),
        }
    }
}

/// The draws shared by the three estimators within one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Data `x_i`, `M × D`.
    pub x: Tensor,
    /// Reparameterization noise `e₂`, `M × d`.
    pub eps: Tensor,
    /// `z̃_i = μ_φ(x_i) + V_φ(x_i)^{1/2} e₂`, `M × d`.
    pub z_post: Tensor,
    /// Prior draws `z_i`, `M̃ × d`.
    pub z_prior: Tensor,
    /// Observation noise added to synthesized samples, if enabled.
    pub synth_noise: Option<Tensor>,
    /// `x̃_i = g_θ(z_i) (+ σ·e₁)`, `M̃ × D`.
    pub x_synth: Tensor,
}

impl Batch {
    /// Draws synthesis samples, then inference samples, from the current model.
    pub fn draw<R: Rng + ?Sized>(
        model: &TriModel,
        x: Tensor,
        synth_count: usize,
        synth_noise: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if x.rank() != 2 || x.rows() == 0 || x.cols() != model.data_dim() {
            return Err(Error::Shape(format!(
                "data batch must be [M ≥ 1, {}], got {:?}",
                model.data_dim(),
                x.shape()
            )));
        }
        let gen = &model.generator;
        let (z_prior, x_clean) = gen.synthesis_sample(synth_count, false, rng)?;
        let (synth_noise, x_synth) = if synth_noise {
            let e = Tensor::randn(x_clean.shape(), gen.sigma, rng);
            let mut xs = x_clean;
            xs.data_mut().iter_mut().zip(e.data()).for_each(|(a, b)| *a += b);
            (Some(e), xs)
        } else {
            (None, x_clean)
        };
        let (z_post, eps) = model.inference.inference_sample(&x, rng)?;
        Ok(Batch { x, eps, z_post, z_prior, synth_noise, x_synth })
    }

    /// Builds a batch from fixed draws, recomputing `z̃` and `x̃` from `model`.
    pub fn from_draws(
        model: &TriModel,
        x: Tensor,
        eps: Tensor,
        z_prior: Tensor,
        synth_noise: Option<Tensor>,
    ) -> Result<Self> {
        let mut g = Graph::new();
        let inf = model.inference.bind(&mut g, false)?;
        let (xv, ev) = (g.constant(x.clone()), g.constant(eps.clone()));
        let zp = inf.sample(&mut g, xv, ev)?;
        let z_post = g.value(zp).clone();
        let mut x_synth = model.generator.decode(&z_prior)?;
        if let Some(e) = &synth_noise {
            if e.shape() != x_synth.shape() {
                return Err(Error::Shape("synthesis noise shape mismatch".into()));
            }
            x_synth.data_mut().iter_mut().zip(e.data()).for_each(|(a, b)| *a += b);
        }
        Ok(Batch { x, eps, z_post, z_prior, synth_noise, x_synth })
    }

    /// Recomputes `z̃` and `x̃` from the stored noise under `model`'s current
    /// parameters.
    pub fn refresh(&mut self, model: &TriModel) -> Result<()> {
        let fresh = Batch::from_draws(
            model,
            self.x.clone(),
            self.eps.clone(),
            self.z_prior.clone(),
            self.synth_noise.clone(),
        )?;
        *self = fresh;
        Ok(())
    }
}

/// Gradient of one parameter group plus diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    /// In the group's [`ParamGroup::params`] order.
    pub grads: Vec<Tensor>,
    /// Value of the surrogate loss.
    pub loss: f64,
    /// `mean f_α(x_i, z̃_i)`.
    pub energy_pos: f64,
    /// `mean f_α(x̃_i, z_i)`.
    pub energy_neg: f64,
    /// `mean log p_θ(x_i | z̃_i)`.
    pub recon: f64,
    /// Mean entropy of `q_φ(·|x_i)`.
    pub entropy: f64,
}

impl GradEstimate {
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Graph leaves for θ, φ and α.
#[derive(Clone, Debug)]
pub struct TriLeaves {
    pub theta: Vec<Var>,
    pub phi: Vec<Var>,
    pub alpha: Vec<Var>,
}

impl TriLeaves {
    /// Every parameter as a trainable leaf.
    pub fn new(g: &mut Graph, model: &TriModel) -> Self {
        TriLeaves {
            theta: model.generator.leaves(g, true),
            phi: model.inference.leaves(g, true),
            alpha: model.energy.leaves(g, true),
        }
    }
}

fn detach_all(g: &mut Graph, vars: &[Var]) -> Vec<Var> {
    vars.iter().map(|&v| g.detach(v)).collect()
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    g.value(v).item()
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what: what.to_string() })
    }
}

/// Scalar nodes produced by a surrogate builder.
#[derive(Clone, Copy, Debug)]
pub struct Surrogate {
    pub loss: Var,
    pub energy_pos: Option<Var>,
    pub energy_neg: Option<Var>,
    pub recon: Option<Var>,
    pub entropy: Option<Var>,
}

impl Surrogate {
    fn of(loss: Var) -> Self {
        Surrogate { loss, energy_pos: None, energy_neg: None, recon: None, entropy: None }
    }
}

/// `w_pπ · mean f_α(x̃, z) − w_qπ · mean f_α(x, z̃)`; only α is live.
///
/// Its α-gradient is `−mean ∂f(x_i, z̃_i) + mean ∂f(x̃_i, z_i)`. The positive
/// and negative batches go through separate forward passes.
pub fn ebm_loss(
    g: &mut Graph,
    model: &TriModel,
    leaves: &TriLeaves,
    batch: &Batch,
    weights: &KlWeights,
) -> Result<Surrogate> {
    let ebm = model.energy.bind_leaves(g, &leaves.alpha)?;
    let (x, zp) = (g.constant(batch.x.clone()), g.constant(batch.z_post.clone()));
    let (xs, zs) = (g.constant(batch.x_synth.clone()), g.constant(batch.z_prior.clone()));
    let f_pos = ebm.energy(g, x, zp)?;
    let pos = g.mean(f_pos)?;
    finite(scalar(g, pos)?, "positive-phase energy")?;
    let f_neg = ebm.energy(g, xs, zs)?;
    let neg = g.mean(f_neg)?;
    finite(scalar(g, neg)?, "negative-phase energy")?;
    let a = g.scale(neg, weights.p_pi)?;
    let b = g.scale(pos, -weights.q_pi)?;
    let loss = g.add(a, b)?;
    Ok(Surrogate { energy_pos: Some(pos), energy_neg: Some(neg), ..Surrogate::of(loss) })
}

/// `−w_qp · mean log p_θ(x | z̃) − w_pπ · mean f_α(g_θ(z), z)`; only θ is live.
///
/// `z̃` comes from the batch as a constant. `x̃` is recomputed from θ so the
/// second term backpropagates through the generator.
pub fn generator_loss(
    g: &mut Graph,
    model: &TriModel,
    leaves: &TriLeaves,
    batch: &Batch,
    weights: &KlWeights,
) -> Result<Surrogate> {
    let alpha = detach_all(g, &leaves.alpha);
    let ebm = model.energy.bind_leaves(g, &alpha)?;
    let gen = model.generator.bind_leaves(g, &leaves.theta)?;
    let (x, zp) = (g.constant(batch.x.clone()), g.constant(batch.z_post.clone()));
    let ll = gen.log_likelihood(g, x, zp)?;
    let recon = g.mean(ll)?;
    finite(scalar(g, recon)?, "reconstruction log-likelihood")?;

    let z = g.constant(batch.z_prior.clone());
    let mut xs = gen.decode(g, z)?;
    if let Some(e) = &batch.synth_noise {
        let ev = g.constant(e.clone());
        xs = g.add(xs, ev)?;
    }
    let f_neg = ebm.energy(g, xs, z)?;
    let neg = g.mean(f_neg)?;
    finite(scalar(g, neg)?, "negative-phase energy")?;

    let a = g.scale(recon, -weights.q_p)?;
    let b = g.scale(neg, -weights.p_pi)?;
    let loss = g.add(a, b)?;
    Ok(Surrogate { recon: Some(recon), energy_neg: Some(neg), ..Surrogate::of(loss) })
}

/// Inference loss with `z̃(φ)` recomputed from the batch noise; only φ is live.
///
/// triangle: `w_qp·mean(log q − log p_θ(x, z̃)) − w_qπ·mean(log q − f_α(x, z̃))`
///
/// plus:     `w_qp·mean(log q − log p_θ(x, z̃)) + w_qπ·mean(log q − f_α(x, z̃))`
pub fn inference_loss(
    g: &mut Graph,
    model: &TriModel,
    leaves: &TriLeaves,
    batch: &Batch,
    config: &ObjectiveConfig,
) -> Result<Surrogate> {
    let theta = detach_all(g, &leaves.theta);
    let alpha = detach_all(g, &leaves.alpha);
    let gen = model.generator.bind_leaves(g, &theta)?;
    let ebm = model.energy.bind_leaves(g, &alpha)?;
    let inf = model.inference.bind_leaves(g, &leaves.phi)?;

    let x = g.constant(batch.x.clone());
    let eps = g.constant(batch.eps.clone());
    let (mu, lv) = inf.posterior(g, x)?;
    let z = inf.sample_from(g, mu, lv, eps)?;

    let lp = gen.log_joint(g, x, z)?;
    let mean_lp = g.mean(lp)?;
    finite(scalar(g, mean_lp)?, "log p(x, z̃)")?;
    let f = ebm.energy(g, x, z)?;
    let mean_f = g.mean(f)?;
    finite(scalar(g, mean_f)?, "positive-phase energy")?;
    let h = entropy_from_log_var(g, lv)?;
    let mean_h = g.mean(h)?;

    let w = &config.kl_weights;
    let sign = match config.inference_mode {
        InferenceMode::Triangle => -1.0,
        InferenceMode::Plus => 1.0,
    };
    let use_log_q = config.include_log_q || config.inference_mode == InferenceMode::Plus;
    let mean_lq = if use_log_q {
        let v = match config.entropy {
            EntropyMode::ClosedForm => g.neg(mean_h)?,
            EntropyMode::Sampled => {
                let lq = log_normal_diag(g, z, mu, lv)?;
                g.mean(lq)?
            }
        };
        finite(scalar(g, v)?, "log q(z̃ | x)")?;
        Some(v)
    } else {
        None
    };

    let first = match mean_lq {
        Some(lq) => g.sub(lq, mean_lp)?,
        None => g.neg(mean_lp)?,
    };
    let second = match mean_lq {
        Some(lq) => g.sub(lq, mean_f)?,
        None => g.neg(mean_f)?,
    };
    let a = g.scale(first, w.q_p)?;
    let b = g.scale(second, sign * w.q_pi)?;
    let loss = g.add(a, b)?;
    Ok(Surrogate { energy_pos: Some(mean_f), entropy: Some(mean_h), ..Surrogate::of(loss) })
}

/// Negative ELBO `−mean[log p_θ(x, z̃) − log q_φ(z̃ | x)]`; θ and φ are live.
pub fn neg_elbo_loss(g: &mut Graph, model: &TriModel, leaves: &TriLeaves, batch: &Batch) -> Result<Surrogate> {
    let gen = model.generator.bind_leaves(g, &leaves.theta)?;
    let inf = model.inference.bind_leaves(g, &leaves.phi)?;
    let x = g.constant(batch.x.clone());
    let eps = g.constant(batch.eps.clone());
    let (mu, lv) = inf.posterior(g, x)?;
    let z = inf.sample_from(g, mu, lv, eps)?;
    let lp = gen.log_joint(g, x, z)?;
    let lq = log_normal_diag(g, z, mu, lv)?;
    let diff = g.sub(lp, lq)?;
    let elbo = g.mean(diff)?;
    finite(scalar(g, elbo)?, "ELBO")?;
    let ll = gen.log_likelihood(g, x, z)?;
    let recon = g.mean(ll)?;
    let h = entropy_from_log_var(g, lv)?;
    let mean_h = g.mean(h)?;
    let loss = g.neg(elbo)?;
    Ok(Surrogate { recon: Some(recon), entropy: Some(mean_h), ..Surrogate::of(loss) })
}

fn collect(
    g: &mut Graph,
    s: Surrogate,
    wrt: &[Var],
    names: Vec<String>,
) -> Result<GradEstimate> {
    let loss = finite(scalar(g, s.loss)?, "loss")?;
    let read = |g: &Graph, v: Option<Var>| -> Result<f64> {
        match v {
            Some(v) => scalar(g, v),
            None => Ok(f64::NAN),
        }
    };
    let energy_pos = read(g, s.energy_pos)?;
    let energy_neg = read(g, s.energy_neg)?;
    let recon = read(g, s.recon)?;
    let entropy = read(g, s.entropy)?;
    let grads = g.backward(s.loss)?;
    let grads: Vec<Tensor> = wrt.iter().map(|&v| grads.wrt(v)).collect();
    for (t, name) in grads.iter().zip(names) {
        if !t.is_finite() {
            return Err(Error::NonFinite { what: format!("gradient of {name}") });
        }
    }
    Ok(GradEstimate { grads, loss, energy_pos, energy_neg, recon, entropy })
}

/// Leaves with the chosen groups trainable and the rest constant.
fn only(g: &mut Graph, model: &TriModel, theta: bool, phi: bool, alpha: bool) -> TriLeaves {
    TriLeaves {
        theta: model.generator.leaves(g, theta),
        phi: model.inference.leaves(g, phi),
        alpha: model.energy.leaves(g, alpha),
    }
}

/// α-gradient of the EBM loss.
pub fn ebm_grad(model: &TriModel, batch: &Batch, weights: &KlWeights) -> Result<GradEstimate> {
    let mut g = Graph::new();
    let leaves = only(&mut g, model, false, false, true);
    let s = ebm_loss(&mut g, model, &leaves, batch, weights)?;
    collect(&mut g, s, &leaves.alpha, model.energy.param_names())
}

/// θ-gradient of the generator loss.
pub fn generator_grad(model: &TriModel, batch: &Batch, weights: &KlWeights) -> Result<GradEstimate> {
    let mut g = Graph::new();
    let leaves = only(&mut g, model, true, false, false);
    let s = generator_loss(&mut g, model, &leaves, batch, weights)?;
    collect(&mut g, s, &leaves.theta, model.generator.param_names())
}

/// φ-gradient of the inference loss.
pub fn inference_grad(model: &TriModel, batch: &Batch, config: &ObjectiveConfig) -> Result<GradEstimate> {
    let mut g = Graph::new();
    let leaves = only(&mut g, model, false, true, false);
    let s = inference_loss(&mut g, model, &leaves, batch, config)?;
    collect(&mut g, s, &leaves.phi, model.inference.param_names())
}

/// ELBO and the gradients of `−ELBO` for the VAE-only baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub recon: f64,
    pub entropy: f64,
    pub theta: Vec<Tensor>,
    pub phi: Vec<Tensor>,
}

pub fn vae_elbo(model: &TriModel, batch: &Batch) -> Result<ElboEstimate> {
    let mut g = Graph::new();
    let leaves = only(&mut g, model, true, true, false);
    let s = neg_elbo_loss(&mut g, model, &leaves, batch)?;
    let wrt: Vec<Var> = leaves.theta.iter().chain(&leaves.phi).copied().collect();
    let mut names = model.generator.param_names();
    names.extend(model.inference.param_names());
    let est = collect(&mut g, s, &wrt, names)?;
    let mut theta = est.grads;
    let phi = theta.split_off(leaves.theta.len());
    Ok(ElboEstimate { elbo: -est.loss, recon: est.recon, entropy: est.entropy, theta, phi })
}
