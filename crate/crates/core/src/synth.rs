//! Synthetic benchmark: three-component gaussian mixtures per (label, group)
//! cell plus gaussian noise, split into train/validation/test.
//!
//! The stream is fixed by the seed. A `ChaCha8Rng` is seeded with
//! `seed_from_u64(seed)` and cells are generated in the order 00, 01, 10, 11.
//! Each sample takes one `f64` uniform draw to pick a component, then a
//! standard-normal draw for the component, then one for the noise. After all
//! samples exist, each cell's indices are shuffled in the same cell order and
//! cut into `⌊0.7n⌋` train, `⌊0.15n⌋` validation and the rest test.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CellMap, GroupedLogits, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMixture {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub n: usize,
}

impl CellMixture {
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    /// Variance of the mixture itself, without noise.
    pub fn variance(&self) -> f64 {
        let second: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| w * (v + m * m))
            .sum();
        second - self.mean().powi(2)
    }

    fn validate(&self, cell: &str) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(format!("cell {cell}: {m}")));
        let k = self.means.len();
        if k == 0 || self.variances.len() != k || self.weights.len() != k {
            return bad("means, variances and weights need the same non-zero length".into());
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return bad("means must be finite".into());
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("variances must be positive".into());
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be non-negative".into());
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}, expected 1"));
        }
        if self.n == 0 {
            return bad("sample count must be positive".into());
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        self.means[idx] + self.variances[idx].sqrt() * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Indexed `[y][a]`; serialized under keys `"00"`, `"01"`, `"10"`, `"11"`.
    #[serde(with = "cells_serde")]
    pub cells: [[CellMixture; 2]; 2],
    pub noise_sd: f64,
    pub seed: u64,
}

mod cells_serde {
    use super::*;

    pub fn serialize<S: serde::Serializer>(
        cells: &[[CellMixture; 2]; 2],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        CellMap::from_fn(|y, a| cells[y][a].clone()).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        d: D,
    ) -> Result<[[CellMixture; 2]; 2], D::Error> {
        Ok(CellMap::<CellMixture>::deserialize(d)?.into_array())
    }
}

impl MixtureConfig {
    /// The standard benchmark table (variances, not standard deviations).
    pub fn benchmark(seed: u64) -> Self {
        let cell = |means: [f64; 3], variances: [f64; 3], weights: [f64; 3], n| CellMixture {
            means: means.to_vec(),
            variances: variances.to_vec(),
            weights: weights.to_vec(),
            n,
        };
        Self {
            cells: [
                [
                    cell([-7.0, -2.0, 1.1], [3.0, 1.5, 2.0], [0.3, 0.5, 0.2], 5000),
                    cell([-4.5, -1.2, 1.2], [1.2, 1.5, 2.0], [0.3, 0.5, 0.2], 10000),
                ],
                [
                    cell([-1.8, 1.5, 6.0], [1.2, 1.3, 2.0], [0.2, 0.5, 0.3], 15000),
                    cell([-1.1, 2.3, 7.0], [1.2, 1.5, 2.0], [0.2, 0.4, 0.4], 10000),
                ],
            ],
            noise_sd: 1.0,
            seed,
        }
    }

    /// Same mixtures with every cell count multiplied by `factor`, rounded
    /// and kept at least 1.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for row in out.cells.iter_mut() {
            for c in row.iter_mut() {
                c.n = ((c.n as f64 * factor).round() as usize).max(1);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for y in 0..2 {
            for a in 0..2 {
                self.cells[y][a].validate(&format!("{y}{a}"))?;
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(SynthError::InvalidConfig(format!(
                "noise_sd must be non-negative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Cells in order 00, 01, 10, 11.
    pub samples: Vec<Sample>,
    /// Indices into `samples`, ascending within each split.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SynthData {
    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.indices(split)
            .iter()
            .map(|&i| self.samples[i])
            .collect()
    }

    pub fn grouped(&self) -> GroupedLogits {
        self.samples.iter().copied().collect()
    }
}

pub fn generate(config: &MixtureConfig) -> Result<SynthData, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::new();
    let mut ranges = Vec::with_capacity(4);
    for y in 0..2 {
        for a in 0..2 {
            let cell = &config.cells[y][a];
            let start = samples.len();
            for _ in 0..cell.n {
                let clean = cell.draw(&mut rng);
                let z: f64 = rng.sample(StandardNormal);
                let logit = clean + config.noise_sd * z;
                samples.push(Sample {
                    logit,
                    label: y as u8,
                    group: a as u8,
                });
            }
            ranges.push(start..samples.len());
        }
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for range in ranges {
        let n = range.len();
        let mut idx: Vec<usize> = range.collect();
        idx.shuffle(&mut rng);
        let n_train = n * 7 / 10;
        let n_val = n * 15 / 100;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    for v in [&mut train, &mut val, &mut test] {
        v.sort_unstable();
    }
    Ok(SynthData {
        samples,
        train,
        val,
        test,
    })
}
