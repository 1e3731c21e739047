use rand::Rng;

use crate::autodiff::{bilinear, Graph, Var, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::init::INIT_STD;

/// Power-iteration state for spectral normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    /// Left singular vector estimate, length `out`.
    pub u: Tensor,
    /// Right singular vector estimate, length `in`.
    pub v: Tensor,
    /// Most recent `σ̂ = uᵀWv`, floored at [`SIGMA_FLOOR`].
    pub sigma: f64,
}

/// Fully connected layer `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub spectral: Option<SpectralState>,
}

impl LinearLayer {
    /// Weights `N(0, 0.02²)`, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        LinearLayer {
            weight: Tensor::randn(&[outputs, inputs], INIT_STD, rng),
            bias: Tensor::zeros(&[outputs]),
            spectral: None,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.rows()] {
            return Err(Error::Shape(format!(
                "bias {:?} does not fit weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(LinearLayer {
            weight,
            bias,
            spectral: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    /// Turns on spectral normalization with a random unit `u` and one power
    /// iteration to initialise `v` and `σ̂`.
    pub fn enable_spectral_norm<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut u = Tensor::randn(&[self.outputs()], 1.0, rng);
        normalize_in_place(u.data_mut());
        if u.norm() == 0.0 {
            u.data_mut()[0] = 1.0;
        }
        self.spectral = Some(SpectralState {
            u,
            v: Tensor::zeros(&[self.inputs()]),
            sigma: SIGMA_FLOOR,
        });
        self.spectral_step();
    }

    /// One power iteration: `v ← Wᵀu/‖Wᵀu‖`, `u ← Wv/‖Wv‖`, `σ̂ ← uᵀWv`.
    ///
    /// A vector whose update has (numerically) zero norm keeps its previous
    /// value, so a zero weight leaves the state usable and `σ̂` at the floor.
    /// Returns the new `σ̂`, or `None` when spectral normalization is off.
    pub fn spectral_step(&mut self) -> Option<f64> {
        let w = &self.weight;
        let state = self.spectral.as_mut()?;
        let (rows, cols) = (w.rows(), w.cols());

        let mut v_new = vec![0.0; cols];
        for r in 0..rows {
            let ur = state.u.data()[r];
            for (acc, wv) in v_new.iter_mut().zip(w.row(r)) {
                *acc += wv * ur;
            }
        }
        if normalize_in_place(&mut v_new) {
            state.v.data_mut().copy_from_slice(&v_new);
        }

        let mut u_new: Vec<f64> = (0..rows)
            .map(|r| w.row(r).iter().zip(state.v.data()).map(|(a, b)| a * b).sum())
            .collect();
        if normalize_in_place(&mut u_new) {
            state.u.data_mut().copy_from_slice(&u_new);
        }

        let raw = bilinear(w, state.u.data(), state.v.data());
        state.sigma = if raw > SIGMA_FLOOR { raw } else { SIGMA_FLOOR };
        Some(state.sigma)
    }

    /// The weight actually applied: `W/σ̂` when normalized, else `W`.
    ///
    /// `σ̂` is recomputed as `uᵀWv` from the current state, matching what
    /// [`LinearLayer::bind`] puts on a graph.
    pub fn effective_weight(&self) -> Tensor {
        match &self.spectral {
            None => self.weight.clone(),
            Some(s) => {
                let raw = bilinear(&self.weight, s.u.data(), s.v.data());
                let sigma = if raw > SIGMA_FLOOR { raw } else { SIGMA_FLOOR };
                self.weight.map(|x| x / sigma)
            }
        }
    }

    /// Places the layer's parameters on `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundLinear> {
        let (w_leaf, b_leaf) = if trainable {
            (g.param(self.weight.clone()), g.param(self.bias.clone()))
        } else {
            (g.constant(self.weight.clone()), g.constant(self.bias.clone()))
        };
        self.bind_leaves(g, w_leaf, b_leaf)
    }

    /// Uses existing nodes as the weight and bias; the spectral state still
    /// comes from `self`.
    pub fn bind_leaves(&self, g: &mut Graph, w_leaf: Var, b_leaf: Var) -> Result<BoundLinear> {
        if g.shape(w_leaf) != self.weight.shape() || g.shape(b_leaf) != self.bias.shape() {
            return Err(Error::Shape("leaf shapes do not match the layer".into()));
        }
        let weight = match &self.spectral {
            Some(s) => g.spectral_normalize(w_leaf, &s.u, &s.v)?,
            None => w_leaf,
        };
        Ok(BoundLinear {
            weight,
            bias: b_leaf,
            weight_leaf: w_leaf,
        })
    }

    /// Graph-free forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let xv = g.constant(x.clone());
        let y = bound.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

/// A [`LinearLayer`] whose parameters live on a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    /// Effective (possibly normalized) weight.
    pub weight: Var,
    pub bias: Var,
    /// The raw weight leaf that receives gradients.
    pub weight_leaf: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let wshape = g.shape(self.weight);
        let xshape = g.shape(x);
        if xshape.len() != 2 || xshape[1] != wshape[1] {
            return Err(Error::Shape(format!(
                "linear layer expects [batch, {}], got {:?}",
                wshape[1], xshape
            )));
        }
        let h = g.matmul_t(x, self.weight)?;
        g.add(h, self.bias)
    }

    pub fn leaves(&self) -> [Var; 2] {
        [self.weight_leaf, self.bias]
    }
}

/// Divides by the Euclidean norm; returns false (leaving the slice as is)
/// when the norm is below [`SIGMA_FLOOR`].
fn normalize_in_place(x: &mut [f64]) -> bool {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > SIGMA_FLOOR) {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= n);
    true
}
