use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::linear::{BoundLinear, LinearLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::LeakyRelu => g.leaky_relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Softplus => g.softplus(x),
        }
    }
}

/// Stack of linear layers; `hidden` follows every layer but the last,
/// `output` follows the last. With no layers the MLP is the identity map.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::init(w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            hidden,
            output,
        }
    }

    pub fn from_layers(layers: Vec<LinearLayer>, hidden: Activation, output: Activation) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Mlp {
            layers,
            hidden,
            output,
        })
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(LinearLayer::inputs)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(LinearLayer::outputs)
    }

    pub fn enable_spectral_norm<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            l.enable_spectral_norm(rng);
        }
    }

    pub fn spectral_step(&mut self) {
        for l in &mut self.layers {
            l.spectral_step();
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundMlp> {
        let layers = self
            .layers
            .iter()
            .map(|l| l.bind(g, trainable))
            .collect::<Result<_>>()?;
        Ok(BoundMlp {
            layers,
            hidden: self.hidden,
            output: self.output,
        })
    }

    /// Binds onto existing leaves given in [`Mlp::params`] order.
    pub fn bind_leaves(&self, g: &mut Graph, leaves: &[Var]) -> Result<BoundMlp> {
        if leaves.len() != 2 * self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} leaves, got {}",
                2 * self.layers.len(),
                leaves.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(leaves.chunks(2))
            .map(|(l, wb)| l.bind_leaves(g, wb[0], wb[1]))
            .collect::<Result<_>>()?;
        Ok(BoundMlp {
            layers,
            hidden: self.hidden,
            output: self.output,
        })
    }

    /// Graph-free forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let xv = g.constant(x.clone());
        let y = b.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
    hidden: Activation,
    output: Activation,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(g, h)?;
        }
        Ok(h)
    }

    /// Parameter leaves in the same order as [`Mlp::params`].
    pub fn leaves(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.leaves()).collect()
    }
}
