//! Layers, initialisation, spectral normalization and the Adam optimizer.

mod adam;
mod init;
mod linear;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use init::{init_params, INIT_STD};
pub use linear::{BoundLinear, LinearLayer, SpectralState};
pub use mlp::{Activation, BoundMlp, Mlp};

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

/// A named, ordered set of trainable tensors.
pub trait ParamGroup {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// One graph leaf per parameter, in [`ParamGroup::params`] order.
    fn leaves(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
            .collect()
    }
}
