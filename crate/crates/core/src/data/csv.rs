use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Source};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-column affine map `x ↦ a·x + b` onto `[−1, 1]`.
///
/// Constant columns map to 0 and invert back to their constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ColumnScaling {
    /// Fits min/max per column of a row-major `rows × cols` buffer.
    pub fn fit(data: &[f64], cols: usize) -> Self {
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for row in data.chunks(cols) {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        ColumnScaling { min, max }
    }

    pub fn forward(&self, col: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[col], self.max[col]);
        if hi > lo {
            (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn inverse(&self, col: usize, u: f64) -> f64 {
        let (lo, hi) = (self.min[col], self.max[col]);
        if hi > lo {
            lo + (u + 1.0) * 0.5 * (hi - lo)
        } else {
            lo
        }
    }

    /// Maps scaled rows back to original units.
    pub fn inverse_tensor(&self, t: &Tensor) -> Result<Tensor> {
        if t.rank() != 2 || t.cols() != self.min.len() {
            return Err(Error::Shape(format!(
                "scaling has {} columns, tensor is {:?}",
                self.min.len(),
                t.shape()
            )));
        }
        let cols = t.cols();
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &u)| self.inverse(i % cols, u))
            .collect();
        Tensor::new(t.shape(), data)
    }
}

/// Parses headerless comma-separated numeric rows and scales each column.
///
/// Blank lines are skipped. Errors carry the byte offset of the offending field.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            continue;
        }
        let mut field_start = line_start;
        let mut n = 0;
        for field in body.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(field_start, format!("not a number: {:?}", field.trim())))?;
            if !v.is_finite() {
                return Err(Error::parse(field_start, "non-finite value"));
            }
            data.push(v);
            field_start += field.len() + 1;
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(Error::parse(line_start, format!("row has {n} fields, expected {c}")));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse(0, "no data rows"))?;
    let scaling = ColumnScaling::fit(&data, cols);
    let scaled = data
        .iter()
        .enumerate()
        .map(|(i, &v)| scaling.forward(i % cols, v))
        .collect();
    Ok(Dataset::new(Tensor::new(&[rows, cols], scaled)?, None, Source::Csv)?.with_scaling(scaling))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}
