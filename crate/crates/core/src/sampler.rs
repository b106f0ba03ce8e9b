//! Weighted multi-dataset sampling.
//!
//! Each draw picks a dataset i.i.d. by weight, then the next pair of that
//! dataset's current shuffled epoch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::unify::{DatasetManifest, PairRef, WEIGHT_TOLERANCE};
use crate::{Error, Result};

pub const DEFAULT_HEAVY_WEIGHT: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WeightStrategy {
    /// Proportional to each dataset's pair count.
    Proportional,
    Uniform,
    /// `weight` to one dataset, the rest split evenly among the others.
    Heavy { dataset_id: String, weight: f64 },
    Explicit(BTreeMap<String, f64>),
}

impl WeightStrategy {
    pub fn heavy(dataset_id: impl Into<String>) -> Self {
        WeightStrategy::Heavy {
            dataset_id: dataset_id.into(),
            weight: DEFAULT_HEAVY_WEIGHT,
        }
    }
}

/// Resolves a strategy against per-dataset pair counts.
pub fn resolve_weights_from_counts(counts: &BTreeMap<String, usize>, strategy: &WeightStrategy) -> Result<BTreeMap<String, f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("no datasets to weight".into()));
    }
    let n = counts.len() as f64;
    let weights: BTreeMap<String, f64> = match strategy {
        WeightStrategy::Proportional => {
            let total: usize = counts.values().sum();
            if total == 0 {
                return Err(Error::EmptyDataset("every dataset is empty".into()));
            }
            counts.iter().map(|(k, &c)| (k.clone(), c as f64 / total as f64)).collect()
        }
        WeightStrategy::Uniform => counts.keys().map(|k| (k.clone(), 1.0 / n)).collect(),
        WeightStrategy::Heavy { dataset_id, weight } => {
            if !counts.contains_key(dataset_id) {
                return Err(Error::UnknownDataset(dataset_id.clone()));
            }
            if !(0.0..=1.0).contains(weight) {
                return Err(Error::InvalidWeights(format!("heavy weight {weight} is outside [0, 1]")));
            }
            let rest = if counts.len() > 1 { (1.0 - weight) / (n - 1.0) } else { 0.0 };
            counts
                .keys()
                .map(|k| {
                    let w = if k == dataset_id {
                        if counts.len() > 1 { *weight } else { 1.0 }
                    } else {
                        rest
                    };
                    (k.clone(), w)
                })
                .collect()
        }
        WeightStrategy::Explicit(map) => {
            if let Some(unknown) = map.keys().find(|k| !counts.contains_key(*k)) {
                return Err(Error::UnknownDataset(unknown.clone()));
            }
            counts
                .keys()
                .map(|k| (k.clone(), map.get(k).copied().unwrap_or(0.0)))
                .collect()
        }
    };
    if weights.values().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be non-negative".into()));
    }
    let sum: f64 = weights.values().sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(weights)
}

pub fn resolve_weights(manifest: &DatasetManifest, strategy: &WeightStrategy) -> Result<BTreeMap<String, f64>> {
    let counts = manifest
        .datasets
        .iter()
        .map(|d| (d.dataset_id.clone(), d.pair_count()))
        .collect();
    resolve_weights_from_counts(&counts, strategy)
}

/// One entry of a sample log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub draw: u64,
    pub epoch: u64,
    #[serde(flatten)]
    pub pair: PairRef,
}

struct DatasetCursor {
    id: String,
    pairs: Vec<PairRef>,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

/// Infinite, deterministic stream of pair references.
pub struct SampleStream {
    seed: u64,
    rng: ChaCha8Rng,
    cumulative: Vec<f64>,
    cursors: Vec<DatasetCursor>,
    draw: u64,
}

impl SampleStream {
    pub fn new(manifest: &DatasetManifest, weights: &BTreeMap<String, f64>, seed: u64) -> Result<Self> {
        let mut cumulative = Vec::new();
        let mut cursors = Vec::new();
        let mut acc = 0.0;
        for (id, &w) in weights {
            if !(w >= 0.0) {
                return Err(Error::InvalidWeights(format!("weight of `{id}` is negative")));
            }
            if w == 0.0 {
                continue;
            }
            let entry = manifest.dataset(id).ok_or_else(|| Error::UnknownDataset(id.clone()))?;
            let pairs = manifest.dataset_pairs(entry);
            if pairs.is_empty() {
                return Err(Error::EmptyDataset(id.clone()));
            }
            acc += w;
            cumulative.push(acc);
            cursors.push(DatasetCursor {
                id: id.clone(),
                order: Vec::new(),
                pos: 0,
                epoch: 0,
                pairs,
            });
        }
        if cursors.is_empty() || (acc - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {acc}, not 1")));
        }
        let mut stream = Self {
            seed,
            rng: rng::stream(seed, &[rng::tag("sampler")]),
            cumulative,
            cursors,
            draw: 0,
        };
        for i in 0..stream.cursors.len() {
            stream.shuffle(i);
        }
        Ok(stream)
    }

    fn shuffle(&mut self, i: usize) {
        let c = &mut self.cursors[i];
        let mut r = rng::stream(self.seed, &[rng::tag("epoch"), rng::tag(&c.id), c.epoch]);
        c.order = (0..c.pairs.len()).collect();
        c.order.shuffle(&mut r);
        c.pos = 0;
    }

    fn pick_dataset(&mut self) -> usize {
        let total = *self.cumulative.last().expect("at least one dataset");
        let u = self.rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

impl Iterator for SampleStream {
    type Item = SampleRecord;

    fn next(&mut self) -> Option<SampleRecord> {
        let i = self.pick_dataset();
        if self.cursors[i].pos == self.cursors[i].order.len() {
            self.cursors[i].epoch += 1;
            self.shuffle(i);
        }
        let c = &mut self.cursors[i];
        let pair = c.pairs[c.order[c.pos]].clone();
        c.pos += 1;
        let rec = SampleRecord {
            draw: self.draw,
            epoch: c.epoch,
            pair,
        };
        self.draw += 1;
        Some(rec)
    }
}

pub fn sample_stream(manifest: &DatasetManifest, weights: &BTreeMap<String, f64>, seed: u64) -> Result<SampleStream> {
    SampleStream::new(manifest, weights, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(v: &[(&str, usize)]) -> BTreeMap<String, usize> {
        v.iter().map(|(k, c)| (k.to_string(), *c)).collect()
    }

    #[test]
    fn proportional_from_pair_counts() {
        let w = resolve_weights_from_counts(
            &counts(&[("a", 155000), ("b", 110071), ("c", 27392)]),
            &WeightStrategy::Proportional,
        )
        .unwrap();
        assert!((w["a"] - 0.530).abs() < 5e-4);
        assert!((w["b"] - 0.376).abs() < 5e-4);
        assert!((w["c"] - 0.094).abs() < 5e-4);
    }

    #[test]
    fn heavy_and_uniform() {
        let c = counts(&[("A", 1), ("N", 1), ("W", 1)]);
        let h = resolve_weights_from_counts(&c, &WeightStrategy::heavy("N")).unwrap();
        assert!((h["N"] - 0.90).abs() < 1e-12 && (h["A"] - 0.05).abs() < 1e-12 && (h["W"] - 0.05).abs() < 1e-12);
        let u = resolve_weights_from_counts(&c, &WeightStrategy::Uniform).unwrap();
        assert!(u.values().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        assert!(matches!(
            resolve_weights_from_counts(&c, &WeightStrategy::heavy("X")),
            Err(Error::UnknownDataset(_))
        ));
    }

    #[test]
    fn explicit_must_sum_to_one() {
        let c = counts(&[("a", 1), ("b", 1)]);
        let bad: BTreeMap<String, f64> = [("a".to_string(), 0.5), ("b".to_string(), 0.4)].into();
        assert!(matches!(
            resolve_weights_from_counts(&c, &WeightStrategy::Explicit(bad)),
            Err(Error::InvalidWeights(_))
        ));
    }
}
