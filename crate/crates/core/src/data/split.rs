use rand::seq::SliceRandom;
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Train/test partition for one-class anomaly detection.
#[derive(Clone, Debug)]
pub struct AnomalySplit {
    /// Normal-class samples only.
    pub train: Dataset,
    /// Held-out partition; labels are 1 for the anomalous class, 0 otherwise.
    pub test: Dataset,
    pub holdout: u32,
}

/// Shuffles `ds`, reserves `test_fraction` of it as the test partition, and
/// keeps the non-`holdout` remainder (capped at `train_cap`) for training.
pub fn make_anomaly_split<R: Rng + ?Sized>(
    ds: &Dataset,
    holdout: u32,
    train_cap: Option<usize>,
    test_fraction: f64,
    rng: &mut R,
) -> Result<AnomalySplit> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Config("anomaly split needs a labelled dataset".into()))?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let n_test = ((ds.len() as f64) * test_fraction).round() as usize;
    let (test_idx, train_pool) = order.split_at(n_test);
    let mut train_idx: Vec<usize> = train_pool.iter().copied().filter(|&i| labels[i] != holdout).collect();
    if let Some(cap) = train_cap {
        train_idx.truncate(cap);
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config("anomaly split leaves an empty partition".into()));
    }
    let anomalies = test_idx.iter().filter(|&&i| labels[i] == holdout).count();
    if anomalies == 0 || anomalies == test_idx.len() {
        return Err(Error::Config(format!(
            "test partition has {anomalies} of {} samples in class {holdout}; both classes are required",
            test_idx.len()
        )));
    }
    let train = ds.subset(&train_idx)?;
    let mut test = ds.subset(test_idx)?;
    let flags = test_idx.iter().map(|&i| u32::from(labels[i] == holdout)).collect();
    test = Dataset::new(test.samples().clone(), Some(flags), test.source().clone())?;
    Ok(AnomalySplit { train, test, holdout })
}
