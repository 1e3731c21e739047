//! Datasets scaled to `[−1, 1]`: IDX images, synthetic 2D densities and CSV
//! tables, plus anomaly splits and shuffled batching.

mod batches;
mod csv;
mod idx;
mod split;
mod synthetic;

pub use batches::BatchStream;
pub use csv::{load_csv, parse_csv, ColumnScaling};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, pixel_to_unit, unit_to_pixel, IdxImages};
pub use split::{make_anomaly_split, AnomalySplit};
pub use synthetic::{sample_mixture, sample_uniform, Mixture, RING8_MODES, RING8_RADIUS, RING8_STD};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Idx,
    Synthetic(Mixture),
    Uniform,
    Csv,
    Derived,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Idx => write!(f, "idx"),
            Source::Synthetic(m) => write!(f, "synthetic:{m}"),
            Source::Uniform => write!(f, "uniform"),
            Source::Csv => write!(f, "csv"),
            Source::Derived => write!(f, "derived"),
        }
    }
}

/// `N × D` samples in `[−1, 1]` with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Option<Vec<u32>>,
    source: Source,
    scaling: Option<ColumnScaling>,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Option<Vec<u32>>, source: Source) -> Result<Self> {
        if samples.rank() != 2 || samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::Shape(format!(
                "dataset needs at least one sample and one column, got {:?}",
                samples.shape()
            )));
        }
        if let Some(i) = samples.data().iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!(
                "dataset entry {i} = {} lies outside [−1, 1]",
                samples.data()[i]
            )));
        }
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.rows()
                )));
            }
        }
        Ok(Dataset { samples, labels, source, scaling: None })
    }

    pub fn with_scaling(mut self, scaling: ColumnScaling) -> Self {
        self.scaling = Some(scaling);
        self
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    /// Per-column affine map applied at load time, if any.
    pub fn scaling(&self) -> Option<&ColumnScaling> {
        self.scaling.as_ref()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Rows `idx` in the given order, labels carried along.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let samples = self.samples.select_rows(idx);
        let labels = self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        let mut ds = Dataset::new(samples, labels, Source::Derived)?;
        ds.scaling = self.scaling.clone();
        Ok(ds)
    }
}

/// A dataset description as written in configs.
///
/// `idx:<images>[,<labels>]`, `synthetic:<name>:<N>`, `csv:<path>`,
/// `uniform:<N>` (uniform noise on `[−1, 1]^2`).
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Idx { images: PathBuf, labels: Option<PathBuf> },
    Synthetic { mixture: Mixture, count: usize },
    Csv { path: PathBuf },
    Uniform { count: usize },
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("dataset spec {s:?}: {why}"));
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected <kind>:<args>"))?;
        let count = |n: &str| -> Result<usize> {
            match n.parse::<usize>() {
                Ok(c) if c > 0 => Ok(c),
                _ => Err(bad("sample count must be a positive integer")),
            }
        };
        match kind {
            "idx" => {
                let (images, labels) = match rest.split_once(',') {
                    Some((i, l)) => (i, Some(l)),
                    None => (rest, None),
                };
                if images.is_empty() || labels == Some("") {
                    return Err(bad("empty path"));
                }
                Ok(DatasetSpec::Idx {
                    images: images.into(),
                    labels: labels.map(PathBuf::from),
                })
            }
            "synthetic" => {
                let (name, n) = rest.split_once(':').ok_or_else(|| bad("expected synthetic:<name>:<N>"))?;
                Ok(DatasetSpec::Synthetic { mixture: name.parse()?, count: count(n)? })
            }
            "csv" if !rest.is_empty() => Ok(DatasetSpec::Csv { path: rest.into() }),
            "uniform" => Ok(DatasetSpec::Uniform { count: count(rest)? }),
            _ => Err(bad("unknown dataset kind")),
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Idx { images, labels: Some(l) } => write!(f, "idx:{},{}", images.display(), l.display()),
            DatasetSpec::Idx { images, labels: None } => write!(f, "idx:{}", images.display()),
            DatasetSpec::Synthetic { mixture, count } => write!(f, "synthetic:{mixture}:{count}"),
            DatasetSpec::Csv { path } => write!(f, "csv:{}", path.display()),
            DatasetSpec::Uniform { count } => write!(f, "uniform:{count}"),
        }
    }
}

impl DatasetSpec {
    /// Loads or generates the dataset; random kinds draw from `seed`.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Idx { images, labels } => load_idx(images, labels.as_deref()),
            DatasetSpec::Synthetic { mixture, count } => {
                sample_mixture(*mixture, *count, &mut ChaCha8Rng::seed_from_u64(seed))
            }
            DatasetSpec::Csv { path } => load_csv(path),
            DatasetSpec::Uniform { count } => sample_uniform(*count, 2, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}
