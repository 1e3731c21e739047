use rand::Rng;

use crate::autodiff::{Graph, ReduceOp, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, BoundLinear, BoundMlp, LinearLayer, Mlp, ParamGroup};
use crate::tensor::Tensor;

use super::LN_2PI;

/// Default bound on the log-variance head output.
pub const LOG_VAR_CLAMP: f64 = 10.0;

/// Amortized diagonal-Gaussian posterior `q_φ(z | x) = N(μ_φ(x), diag V_φ(x))`.
///
/// A shared trunk feeds two linear heads: the mean and the log-variance,
/// the latter clamped to `[−clamp, clamp]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceModel {
    pub trunk: Mlp,
    pub mean_head: LinearLayer,
    pub log_var_head: LinearLayer,
    pub log_var_clamp: f64,
}

impl InferenceModel {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let dims: Vec<usize> = std::iter::once(data_dim).chain(hidden.iter().copied()).collect();
        let trunk = Mlp::new(&dims, activation, activation, rng);
        let feat = *dims.last().expect("non-empty dims");
        InferenceModel {
            trunk,
            mean_head: LinearLayer::init(feat, latent_dim, rng),
            log_var_head: LinearLayer::init(feat, latent_dim, rng),
            log_var_clamp: LOG_VAR_CLAMP,
        }
    }

    pub fn from_parts(trunk: Mlp, mean_head: LinearLayer, log_var_head: LinearLayer) -> Result<Self> {
        let feat = trunk.output_dim().unwrap_or(mean_head.inputs());
        if mean_head.inputs() != feat
            || log_var_head.inputs() != feat
            || mean_head.outputs() != log_var_head.outputs()
        {
            return Err(Error::Shape("inference heads do not fit the trunk".into()));
        }
        Ok(InferenceModel {
            trunk,
            mean_head,
            log_var_head,
            log_var_clamp: LOG_VAR_CLAMP,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.outputs()
    }

    pub fn data_dim(&self) -> usize {
        self.trunk.input_dim().unwrap_or(self.mean_head.inputs())
    }

    pub fn enable_spectral_norm<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.trunk.enable_spectral_norm(rng);
        self.mean_head.enable_spectral_norm(rng);
        self.log_var_head.enable_spectral_norm(rng);
    }

    pub fn spectral_step(&mut self) {
        self.trunk.spectral_step();
        self.mean_head.spectral_step();
        self.log_var_head.spectral_step();
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundInference> {
        let leaves = self.leaves(g, trainable);
        self.bind_leaves(g, &leaves)
    }

    /// Binds onto existing leaves given in [`ParamGroup::params`] order.
    pub fn bind_leaves(&self, g: &mut Graph, leaves: &[Var]) -> Result<BoundInference> {
        let n = 2 * self.trunk.layers.len();
        if leaves.len() != n + 4 {
            return Err(Error::Shape(format!("expected {} leaves, got {}", n + 4, leaves.len())));
        }
        Ok(BoundInference {
            trunk: self.trunk.bind_leaves(g, &leaves[..n])?,
            mean_head: self.mean_head.bind_leaves(g, leaves[n], leaves[n + 1])?,
            log_var_head: self.log_var_head.bind_leaves(g, leaves[n + 2], leaves[n + 3])?,
            log_var_clamp: self.log_var_clamp,
        })
    }

    /// `(μ_φ(x), log V_φ(x))` without a graph.
    pub fn posterior(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let xv = g.constant(x.clone());
        let (mu, lv) = b.posterior(&mut g, xv)?;
        Ok((g.value(mu).clone(), g.value(lv).clone()))
    }

    /// Reparameterized draw `z̃ = μ + V^{1/2} ⊙ e`; returns `(z̃, e)`.
    pub fn inference_sample<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
        if !x.is_finite() {
            return Err(Error::NonFinite { what: "inference input".into() });
        }
        let eps = Tensor::randn(&[x.rows(), self.latent_dim()], 1.0, rng);
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let (xv, ev) = (g.constant(x.clone()), g.constant(eps.clone()));
        let z = b.sample(&mut g, xv, ev)?;
        Ok((g.value(z).clone(), eps))
    }

    /// Per-sample `log q_φ(z | x)`.
    pub fn log_posterior(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let (xv, zv) = (g.constant(x.clone()), g.constant(z.clone()));
        let lq = b.log_posterior(&mut g, xv, zv)?;
        Ok(g.value(lq).clone())
    }

    /// Per-sample differential entropy of `q_φ(· | x)`.
    pub fn entropy(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let xv = g.constant(x.clone());
        let h = b.entropy(&mut g, xv)?;
        Ok(g.value(h).clone())
    }
}

impl ParamGroup for InferenceModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.params();
        p.extend([&self.mean_head.weight, &self.mean_head.bias]);
        p.extend([&self.log_var_head.weight, &self.log_var_head.bias]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        p.extend([&mut self.mean_head.weight, &mut self.mean_head.bias]);
        p.extend([&mut self.log_var_head.weight, &mut self.log_var_head.bias]);
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = self.trunk.param_names("inf.trunk");
        n.extend(["inf.mean.weight", "inf.mean.bias", "inf.log_var.weight", "inf.log_var.bias"].map(String::from));
        n
    }
}

#[derive(Clone, Debug)]
pub struct BoundInference {
    pub trunk: BoundMlp,
    pub mean_head: BoundLinear,
    pub log_var_head: BoundLinear,
    pub log_var_clamp: f64,
}

impl BoundInference {
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = self.trunk.leaves();
        v.extend(self.mean_head.leaves());
        v.extend(self.log_var_head.leaves());
        v
    }

    /// `(μ, log V)` nodes for a batch `x`.
    pub fn posterior(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward(g, x)?;
        let mu = self.mean_head.forward(g, h)?;
        let raw = self.log_var_head.forward(g, h)?;
        let lv = g.clamp(raw, -self.log_var_clamp, self.log_var_clamp)?;
        Ok((mu, lv))
    }

    /// `z̃ = μ + exp(½ log V) ⊙ e`, differentiable in φ.
    pub fn sample(&self, g: &mut Graph, x: Var, eps: Var) -> Result<Var> {
        let (mu, lv) = self.posterior(g, x)?;
        self.sample_from(g, mu, lv, eps)
    }

    pub fn sample_from(&self, g: &mut Graph, mu: Var, lv: Var, eps: Var) -> Result<Var> {
        let half = g.scale(lv, 0.5)?;
        let std = g.exp(half)?;
        let noise = g.mul(std, eps)?;
        g.add(mu, noise)
    }

    pub fn log_posterior(&self, g: &mut Graph, x: Var, z: Var) -> Result<Var> {
        let (mu, lv) = self.posterior(g, x)?;
        log_normal_diag(g, z, mu, lv)
    }

    pub fn entropy(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, lv) = self.posterior(g, x)?;
        entropy_from_log_var(g, lv)
    }
}

/// Per-sample `log N(z; μ, diag e^{lv})`.
pub fn log_normal_diag(g: &mut Graph, z: Var, mu: Var, lv: Var) -> Result<Var> {
    let d = g.shape(z)[1] as f64;
    let diff = g.sub(z, mu)?;
    let sq = g.square(diff)?;
    let neg_lv = g.neg(lv)?;
    let prec = g.exp(neg_lv)?;
    let maha = g.mul(sq, prec)?;
    let inner = g.add(maha, lv)?;
    let s = g.reduce(ReduceOp::Sum, inner, Some(1))?;
    let half = g.scale(s, -0.5)?;
    let c = g.constant(Tensor::scalar(-0.5 * d * LN_2PI));
    g.add(half, c)
}

/// Per-sample `(d/2)(1 + log 2π) + ½ Σ_j lv_j`.
pub fn entropy_from_log_var(g: &mut Graph, lv: Var) -> Result<Var> {
    let d = g.shape(lv)[1] as f64;
    let s = g.reduce(ReduceOp::Sum, lv, Some(1))?;
    let half = g.scale(s, 0.5)?;
    let c = g.constant(Tensor::scalar(0.5 * d * (1.0 + LN_2PI)));
    g.add(half, c)
}
