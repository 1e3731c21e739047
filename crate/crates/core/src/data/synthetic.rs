use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Source};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RING8_MODES: usize = 8;
pub const RING8_RADIUS: f64 = 0.8;
pub const RING8_STD: f64 = 0.05;

const MOONS_NOISE: f64 = 0.05;
const SPIRAL_NOISE: f64 = 0.02;
const SPIRAL_TURNS: f64 = 1.5;

/// Named 2D toy densities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixture {
    Ring8,
    TwoMoons,
    Spiral,
}

impl fmt::Display for Mixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mixture::Ring8 => "ring8",
            Mixture::TwoMoons => "two_moons",
            Mixture::Spiral => "spiral",
        })
    }
}

impl FromStr for Mixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring8" => Ok(Mixture::Ring8),
            "two_moons" => Ok(Mixture::TwoMoons),
            "spiral" => Ok(Mixture::Spiral),
            _ => Err(Error::Config(format!(
                "unknown mixture {s:?} (expected ring8, two_moons or spiral)"
            ))),
        }
    }
}

impl Mixture {
    /// Mode centres, for mixtures that have discrete modes.
    pub fn centers(&self) -> Option<Vec<[f64; 2]>> {
        match self {
            Mixture::Ring8 => Some(
                (0..RING8_MODES)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / RING8_MODES as f64;
                        [RING8_RADIUS * a.cos(), RING8_RADIUS * a.sin()]
                    })
                    .collect(),
            ),
            _ => None,
        }
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Draws `count` points from `mixture`, clipped to `[−1, 1]^2`.
///
/// Labels are the ring8 mode index, the moon index, or 0 for the spiral.
pub fn sample_mixture<R: Rng + ?Sized>(mixture: Mixture, count: usize, rng: &mut R) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("mixture sample count must be positive".into()));
    }
    let mut data = Vec::with_capacity(2 * count);
    let mut labels = Vec::with_capacity(count);
    match mixture {
        Mixture::Ring8 => {
            let noise = Normal::new(0.0, RING8_STD).expect("valid std");
            let centers = mixture.centers().expect("ring8 has centres");
            for _ in 0..count {
                let k = rng.random_range(0..RING8_MODES);
                let [cx, cy] = centers[k];
                data.push(clip(cx + noise.sample(rng)));
                data.push(clip(cy + noise.sample(rng)));
                labels.push(k as u32);
            }
        }
        Mixture::TwoMoons => {
            let noise = Normal::new(0.0, MOONS_NOISE).expect("valid std");
            for _ in 0..count {
                let t = rng.random_range(0.0..PI);
                let upper = rng.random_bool(0.5);
                let (x, y) = if upper {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                // Raw moons span [−1, 2] × [−0.5, 1]; centre and shrink into the box.
                data.push(clip((x - 0.5) / 1.5 * 0.9 + noise.sample(rng)));
                data.push(clip((y - 0.25) / 0.75 * 0.9 + noise.sample(rng)));
                labels.push(u32::from(!upper));
            }
        }
        Mixture::Spiral => {
            let noise = Normal::new(0.0, SPIRAL_NOISE).expect("valid std");
            let span = 2.0 * PI * SPIRAL_TURNS;
            for _ in 0..count {
                let u: f64 = rng.random();
                let t = u.sqrt() * span;
                let r = 0.9 * t / span;
                data.push(clip(r * t.cos() + noise.sample(rng)));
                data.push(clip(r * t.sin() + noise.sample(rng)));
                labels.push(0);
            }
        }
    }
    Dataset::new(Tensor::new(&[count, 2], data)?, Some(labels), Source::Synthetic(mixture))
}

/// Uniform noise on `[−1, 1]^dim`.
pub fn sample_uniform<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Result<Dataset> {
    if count == 0 || dim == 0 {
        return Err(Error::Config("uniform sample count and dimension must be positive".into()));
    }
    Dataset::new(Tensor::uniform(&[count, dim], -1.0, 1.0, rng), None, Source::Uniform)
}
