use rand::Rng;

use crate::autodiff::{Graph, ReduceOp, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, BoundMlp, Mlp, ParamGroup};
use crate::tensor::Tensor;

/// Latent energy model: `x` is encoded to `k` features, concatenated with
/// `z`, and mapped to the scalar `f_α(x, z)`. Higher `f_α` means lower energy.
///
/// Every layer is spectrally normalized. The output bias of the head is held
/// at its initial zero and is not a parameter: a constant shift of `f_α` is
/// absorbed into `log Z(α)` and gets no gradient from any objective.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub encoder: Mlp,
    pub head: Mlp,
}

impl EnergyModel {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        encoding_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let enc_dims: Vec<usize> = std::iter::once(data_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(encoding_dim))
            .collect();
        let head_dims: Vec<usize> = std::iter::once(encoding_dim + latent_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let mut encoder = Mlp::new(&enc_dims, activation, activation, rng);
        let mut head = Mlp::new(&head_dims, activation, Activation::Identity, rng);
        encoder.enable_spectral_norm(rng);
        head.enable_spectral_norm(rng);
        EnergyModel { encoder, head }
    }

    pub fn from_parts(encoder: Mlp, head: Mlp) -> Result<Self> {
        if head.output_dim() != Some(1) {
            return Err(Error::Shape("energy head must output one value".into()));
        }
        Ok(EnergyModel { encoder, head })
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim().expect("non-empty encoder")
    }

    pub fn latent_dim(&self) -> usize {
        let enc = self.encoder.output_dim().expect("non-empty encoder");
        self.head.input_dim().expect("non-empty head") - enc
    }

    /// One power iteration on every layer.
    pub fn spectral_step(&mut self) {
        self.encoder.spectral_step();
        self.head.spectral_step();
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundEnergy> {
        let leaves = self.leaves(g, trainable);
        self.bind_leaves(g, &leaves)
    }

    /// Binds onto existing leaves given in [`ParamGroup::params`] order.
    pub fn bind_leaves(&self, g: &mut Graph, leaves: &[Var]) -> Result<BoundEnergy> {
        let n = 2 * self.encoder.layers.len();
        let expected = n + 2 * self.head.layers.len() - 1;
        if leaves.len() != expected {
            return Err(Error::Shape(format!("expected {expected} leaves, got {}", leaves.len())));
        }
        let mut head_leaves = leaves[n..].to_vec();
        head_leaves.push(g.constant(self.output_bias().clone()));
        Ok(BoundEnergy {
            encoder: self.encoder.bind_leaves(g, &leaves[..n])?,
            head: self.head.bind_leaves(g, &head_leaves)?,
        })
    }

    fn output_bias(&self) -> &Tensor {
        &self.head.layers.last().expect("non-empty head").bias
    }

    /// Per-sample `f_α(x, z)`.
    pub fn energy(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let (xv, zv) = (g.constant(x.clone()), g.constant(z.clone()));
        let f = b.energy(&mut g, xv, zv)?;
        Ok(g.value(f).clone())
    }

    /// Zeroes the last head layer so that `f_α ≡ 0`, and drops its
    /// normalization since `W/σ̂` is undefined at `W = 0`.
    pub fn zero_output(&mut self) {
        let last = self.head.layers.last_mut().expect("non-empty head");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
        last.spectral = None;
    }
}

impl ParamGroup for EnergyModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p.pop();
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p.pop();
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = self.encoder.param_names("ebm.enc");
        n.extend(self.head.param_names("ebm.head"));
        n.pop();
        n
    }
}

#[derive(Clone, Debug)]
pub struct BoundEnergy {
    pub encoder: BoundMlp,
    pub head: BoundMlp,
}

impl BoundEnergy {
    /// Per-sample `f_α(x, z)` as a rank-1 node.
    pub fn energy(&self, g: &mut Graph, x: Var, z: Var) -> Result<Var> {
        let enc = self.encoder.forward(g, x)?;
        let joint = g.concat(enc, z)?;
        let out = self.head.forward(g, joint)?;
        g.reduce(ReduceOp::Sum, out, Some(1))
    }

    /// Leaves in [`ParamGroup::params`] order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = self.encoder.leaves();
        v.extend(self.head.leaves());
        v.pop();
        v
    }
}
