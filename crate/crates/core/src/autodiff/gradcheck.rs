//! Finite-difference checks of reverse-mode gradients.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor on the denominator of the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Central differences `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for every coordinate
/// of every parameter tensor.
pub fn central_difference<F>(f: F, params: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite evaluation perturbing parameter {p} entry {i}"
                )));
            }
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// `max |a − n| / max(1e-8, |a| + |n|)` over all coordinates.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient list lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.shape(), n.shape(), "gradient shapes differ");
            a.data().iter().zip(n.data()).map(|(&a, &n)| {
                (a - n).abs() / REL_ERR_FLOOR.max(a.abs() + n.abs())
            })
        })
        .fold(0.0, f64::max)
}

/// Compares reverse-mode gradients of a graph-built scalar against central
/// differences and returns the worst relative error.
///
/// `f` receives a fresh graph and one [`Var`] per parameter, and must return
/// a scalar node.
pub fn gradcheck<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let value = g.value(root).item()?;
    if !value.is_finite() {
        return Err(Error::Domain("non-finite gradcheck objective".into()));
    }
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let numeric = central_difference(
        |ps| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
            let root = f(&mut g, &vars)?;
            g.value(root).item()
        },
        params,
        step,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
