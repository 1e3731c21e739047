use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shuffled minibatches, reshuffled every epoch.
///
/// The permutation for epoch `e` depends only on `(seed, e)`, so the stream
/// can be resumed from `(epoch, cursor)`. The last batch of an epoch holds
/// the remainder when `M` does not divide `N`.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    m: usize,
    seed: u64,
    epoch: u64,
    cursor: usize,
    perm: Vec<usize>,
}

impl BatchStream {
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        Self::resume(n, m, seed, 0, 0)
    }

    pub fn resume(n: usize, m: usize, seed: u64, epoch: u64, cursor: usize) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::Config(format!("batch size {m} must lie in 1..={n}")));
        }
        if cursor > n {
            return Err(Error::Config(format!("batch cursor {cursor} exceeds dataset size {n}")));
        }
        let mut s = BatchStream { n, m, seed, epoch, cursor, perm: Vec::new() };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.perm = (0..self.n).collect();
        self.perm.shuffle(&mut rng);
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Indices of the next batch.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor >= self.n {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let end = (self.cursor + self.m).min(self.n);
        let idx = self.perm[self.cursor..end].to_vec();
        self.cursor = end;
        idx
    }

    pub fn next_batch(&mut self, ds: &Dataset) -> Result<Tensor> {
        if ds.len() != self.n {
            return Err(Error::Shape(format!(
                "batch stream built for {} samples, dataset has {}",
                self.n,
                ds.len()
            )));
        }
        Ok(ds.samples().select_rows(&self.next_indices()))
    }
}
