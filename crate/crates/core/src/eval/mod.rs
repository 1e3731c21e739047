//! Energy-based scoring, ranking metrics, reconstruction error, MMD,
//! log-likelihood histograms and sample export.

mod metrics;

pub use metrics::{auprc, auroc, median_bandwidth, mmd, mode_coverage, ModeCoverage, ScoredSet};

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::data::unit_to_pixel;
use crate::error::{Error, Result};
use crate::models::{reconstruction_error, TriModel};
use crate::tensor::Tensor;

/// Side length of the square images written as PGM grids.
pub const IMAGE_SIDE: usize = 28;

fn check_input(model: &TriModel, x: &Tensor) -> Result<()> {
    if x.rank() != 2 || x.cols() != model.data_dim() {
        return Err(Error::Shape(format!(
            "model expects N×{} inputs, got {:?}",
            model.data_dim(),
            x.shape()
        )));
    }
    Ok(())
}

/// Unnormalized log-likelihood `f_α(x, μ_φ(x))` per sample.
pub fn log_likelihood(model: &TriModel, x: &Tensor) -> Result<Vec<f64>> {
    check_input(model, x)?;
    let (mu, _) = model.inference.posterior(x)?;
    Ok(model.energy.energy(x, &mu)?.into_data())
}

/// Anomaly score `−f_α(x, μ_φ(x))`; higher means more anomalous.
pub fn energy_score(model: &TriModel, x: &Tensor) -> Result<Vec<f64>> {
    Ok(log_likelihood(model, x)?.into_iter().map(|f| -f).collect())
}

/// Negative ELBO per sample, averaged over `draws` posterior samples.
///
/// The anomaly score for models trained without an energy function.
pub fn neg_elbo_score<R: Rng + ?Sized>(model: &TriModel, x: &Tensor, draws: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_input(model, x)?;
    if draws == 0 {
        return Err(Error::Config("ELBO score needs at least one draw".into()));
    }
    let mut total = vec![0.0; x.rows()];
    for _ in 0..draws {
        let (z, _) = model.inference.inference_sample(x, rng)?;
        let lp = model.generator.log_joint(x, &z)?;
        let lq = model.inference.log_posterior(x, &z)?;
        for (t, (p, q)) in total.iter_mut().zip(lp.data().iter().zip(lq.data())) {
            *t -= p - q;
        }
    }
    Ok(total.into_iter().map(|t| t / draws as f64).collect())
}

/// `sqrt(mean over samples and dims of (x − g_θ(μ_φ(x)))²)`.
pub fn reconstruction_rmse(model: &TriModel, x: &Tensor) -> Result<f64> {
    check_input(model, x)?;
    let err = reconstruction_error(model, x)?;
    Ok((err.sum() / x.numel() as f64).sqrt())
}

/// Histograms over shared bin edges, one row of counts per named dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<(String, Vec<usize>)>,
}

impl Histogram {
    /// Bins every value list over `[min, max]` of all values; the last bin is closed.
    pub fn build(values: &[(String, Vec<f64>)], bins: usize) -> Result<Histogram> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let all = values.iter().flat_map(|(_, v)| v.iter().copied());
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NonFinite { what: "histogram values".into() });
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let counts = values
            .iter()
            .map(|(name, vals)| {
                let mut c = vec![0; bins];
                for &v in vals {
                    let k = (((v - lo) / width) as usize).min(bins - 1);
                    c[k] += 1;
                }
                (name.clone(), c)
            })
            .collect();
        Ok(Histogram { edges, counts })
    }

    /// CSV with columns `dataset,bin_left,bin_right,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,bin_left,bin_right,count\n");
        for (name, counts) in &self.counts {
            for (k, c) in counts.iter().enumerate() {
                let _ = writeln!(out, "{name},{},{},{c}", self.edges[k], self.edges[k + 1]);
            }
        }
        out
    }
}

/// Histogram of `f_α(x, μ_φ(x))` for each named dataset.
pub fn loglik_histogram(model: &TriModel, datasets: &[(&str, &Tensor)], bins: usize) -> Result<Histogram> {
    let values = datasets
        .iter()
        .map(|(name, x)| Ok((name.to_string(), log_likelihood(model, x)?)))
        .collect::<Result<Vec<_>>>()?;
    Histogram::build(&values, bins)
}

/// Tiles `rows × cols` flattened 28×28 images into a binary PGM (P5).
pub fn pgm_grid(images: &Tensor, rows: usize, cols: usize) -> Result<Vec<u8>> {
    let side = IMAGE_SIDE;
    if images.rank() != 2 || images.cols() != side * side || images.rows() != rows * cols {
        return Err(Error::Shape(format!(
            "{rows}×{cols} grid needs {}×{} images, got {:?}",
            rows * cols,
            side * side,
            images.shape()
        )));
    }
    let (w, h) = (cols * side, rows * side);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + w * h, 0);
    for tile in 0..rows * cols {
        let (tr, tc) = (tile / cols, tile % cols);
        let img = images.row(tile);
        for py in 0..side {
            for px in 0..side {
                out[header + (tr * side + py) * w + tc * side + px] = unit_to_pixel(img[py * side + px]);
            }
        }
    }
    Ok(out)
}

/// CSV of sample rows with header `x1,...,xD`.
pub fn scatter_csv(points: &Tensor) -> String {
    let header: Vec<String> = (1..=points.cols()).map(|j| format!("x{j}")).collect();
    let mut out = header.join(",") + "\n";
    for i in 0..points.rows() {
        let row: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Renders `rows·cols` generator samples: a PGM grid for 28×28 images,
/// otherwise a scatter CSV.
pub fn render_samples<R: Rng + ?Sized>(model: &TriModel, rows: usize, cols: usize, rng: &mut R) -> Result<Vec<u8>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!("sample grid {rows}×{cols} is empty")));
    }
    let (_, x) = model.generator.synthesis_sample(rows * cols, false, rng)?;
    if model.data_dim() == IMAGE_SIDE * IMAGE_SIDE {
        pgm_grid(&x, rows, cols)
    } else {
        Ok(scatter_csv(&x).into_bytes())
    }
}

/// Writes [`render_samples`] output to `path`.
pub fn sample_grid<R: Rng + ?Sized>(model: &TriModel, rows: usize, cols: usize, rng: &mut R, path: &Path) -> Result<()> {
    let bytes = render_samples(model, rows, cols, rng)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
