use rand::Rng;

use crate::autodiff::{Graph, ReduceOp, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, BoundMlp, Mlp, ParamGroup};
use crate::tensor::Tensor;

use super::LN_2PI;

/// Top-down generator `x = g_θ(z) + σ·ε` with `z ~ N(0, I_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub net: Mlp,
    pub sigma: f64,
}

impl GeneratorModel {
    /// MLP `d → hidden… → D` with a tanh output, so generated points stay
    /// inside `[−1, 1]^D`.
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        hidden: &[usize],
        data_dim: usize,
        sigma: f64,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(latent_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(data_dim))
            .collect();
        let net = Mlp::new(&dims, activation, Activation::Tanh, rng);
        Self::from_parts(net, sigma)
    }

    pub fn from_parts(net: Mlp, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("observation noise σ must be > 0, got {sigma}")));
        }
        if net.layers.is_empty() {
            return Err(Error::Config("generator needs at least one layer".into()));
        }
        Ok(GeneratorModel { net, sigma })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim().expect("non-empty generator")
    }

    pub fn data_dim(&self) -> usize {
        self.net.output_dim().expect("non-empty generator")
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundGenerator> {
        let leaves = self.leaves(g, trainable);
        self.bind_leaves(g, &leaves)
    }

    /// Binds onto existing leaves given in [`ParamGroup::params`] order.
    pub fn bind_leaves(&self, g: &mut Graph, leaves: &[Var]) -> Result<BoundGenerator> {
        Ok(BoundGenerator {
            net: self.net.bind_leaves(g, leaves)?,
            sigma: self.sigma,
        })
    }

    /// `g_θ(z)` without a graph.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.net.forward(z)
    }

    /// Draws `count` pairs `(z_i, x̃_i)` with `z_i ~ N(0, I)` and `x̃_i = g_θ(z_i)`,
    /// plus `σ·ε` when `with_noise` is set.
    pub fn synthesis_sample<R: Rng + ?Sized>(
        &self,
        count: usize,
        with_noise: bool,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor)> {
        if count == 0 {
            return Err(Error::Contract("synthesis batch size must be ≥ 1".into()));
        }
        let z = Tensor::randn(&[count, self.latent_dim()], 1.0, rng);
        let mut x = self.decode(&z)?;
        if with_noise {
            let e = Tensor::randn(x.shape(), self.sigma, rng);
            x.data_mut().iter_mut().zip(e.data()).for_each(|(a, b)| *a += b);
        }
        Ok((z, x))
    }

    /// Per-sample `log p_θ(x, z)`.
    pub fn log_joint(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let (xv, zv) = (g.constant(x.clone()), g.constant(z.clone()));
        let lj = b.log_joint(&mut g, xv, zv)?;
        Ok(g.value(lj).clone())
    }
}

impl ParamGroup for GeneratorModel {
    fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.net.param_names("gen.net")
    }
}

#[derive(Clone, Debug)]
pub struct BoundGenerator {
    pub net: BoundMlp,
    pub sigma: f64,
}

impl BoundGenerator {
    pub fn leaves(&self) -> Vec<Var> {
        self.net.leaves()
    }

    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.net.forward(g, z)
    }

    /// Per-sample `log N(z; 0, I)`.
    pub fn log_prior(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let d = g.shape(z)[1] as f64;
        let sq = g.square(z)?;
        let s = g.reduce(ReduceOp::Sum, sq, Some(1))?;
        let half = g.scale(s, -0.5)?;
        let c = g.constant(Tensor::scalar(-0.5 * d * LN_2PI));
        g.add(half, c)
    }

    /// Per-sample `log N(x; g_θ(z), σ² I)`.
    pub fn log_likelihood(&self, g: &mut Graph, x: Var, z: Var) -> Result<Var> {
        let mean = self.decode(g, z)?;
        self.log_likelihood_at(g, x, mean)
    }

    /// Per-sample `log N(x; mean, σ² I)` for an already decoded mean.
    pub fn log_likelihood_at(&self, g: &mut Graph, x: Var, mean: Var) -> Result<Var> {
        let dim = g.shape(x)[1] as f64;
        let diff = g.sub(x, mean)?;
        let sq = g.square(diff)?;
        let s = g.reduce(ReduceOp::Sum, sq, Some(1))?;
        let scaled = g.scale(s, -0.5 / (self.sigma * self.sigma))?;
        let c = g.constant(Tensor::scalar(
            -0.5 * dim * (LN_2PI + (self.sigma * self.sigma).ln()),
        ));
        g.add(scaled, c)
    }

    /// Per-sample `log p_θ(x, z) = log p(z) + log p_θ(x | z)`.
    pub fn log_joint(&self, g: &mut Graph, x: Var, z: Var) -> Result<Var> {
        let lp = self.log_prior(g, z)?;
        let ll = self.log_likelihood(g, x, z)?;
        g.add(lp, ll)
    }
}
