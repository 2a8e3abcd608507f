//! Noisy metric samples: file-backed and synthetic sources, plus the
//! per-comparison metric-mean table estimated from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparisons::ResolvedCollection;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::pairs::PairCache;

/// `(x, x', Δ)` with `E[Δ] = d(x, x')` and `Δ ∈ [0, 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    #[serde(rename = "x_id")]
    pub x: String,
    #[serde(rename = "x_prime_id")]
    pub x_prime: String,
    pub delta: f64,
}

/// A metric sample with ids bound to dataset positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedSample {
    pub a: u32,
    pub b: u32,
    pub delta: f64,
}

fn check_delta(delta: f64) -> Result<()> {
    if (0.0..=2.0).contains(&delta) {
        Ok(())
    } else {
        Err(Error::Ingestion(format!("metric sample delta {delta} outside [0, 2]")))
    }
}

pub fn resolve_samples(dataset: &Dataset, samples: &[MetricSample]) -> Result<Vec<ResolvedSample>> {
    samples
        .iter()
        .map(|s| {
            check_delta(s.delta)?;
            Ok(ResolvedSample {
                a: dataset.index_of(&s.x)? as u32,
                b: dataset.index_of(&s.x_prime)? as u32,
                delta: s.delta,
            })
        })
        .collect()
}

/// Ground-truth metrics for synthetic experiments; values are clipped to `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticMetric {
    Constant(f64),
    /// `d(x, x') = |s(x) - s(x')|` for a per-individual score.
    ScoreDifference { scores: Vec<f64> },
    /// Bipartite label construction: `labels[i]` is `Some(y)` on the left
    /// side and `None` on the right. Across sides `d = 1 - y(left)`, within
    /// the left side `d = |y - y'|`, within the right side `d = 0`.
    BipartiteLabel { labels: Vec<Option<f64>> },
}

impl SyntheticMetric {
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let d = match self {
            SyntheticMetric::Constant(c) => *c,
            SyntheticMetric::ScoreDifference { scores } => (scores[a] - scores[b]).abs(),
            SyntheticMetric::BipartiteLabel { labels } => match (labels[a], labels[b]) {
                (Some(y), None) | (None, Some(y)) => 1.0 - y,
                (Some(y), Some(z)) => (y - z).abs(),
                (None, None) => 0.0,
            },
        };
        d.clamp(0.0, 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `Δ = d`
    Exact,
    /// `Δ = clip(d + U(-b, b), 0, 2)`; biased near the boundary.
    Uniform { half_width: f64 },
    /// `Δ = 2 · Bernoulli(d / 2)`; unbiased.
    Bernoulli,
}

impl NoiseModel {
    pub fn observe<R: Rng>(&self, d: f64, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Exact => d,
            NoiseModel::Uniform { half_width } => {
                if half_width > 0.0 {
                    (d + rng.gen_range(-half_width..half_width)).clamp(0.0, 2.0)
                } else {
                    d
                }
            }
            NoiseModel::Bernoulli => {
                if rng.gen::<f64>() < d / 2.0 {
                    2.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// The pair distribution `M`.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSampler {
    /// `x` uniform on `left`, `x'` uniform on `right`, independently.
    UniformProduct { left: Vec<u32>, right: Vec<u32> },
    /// Uniform over a fixed list of ordered pairs.
    Pairs(Vec<(u32, u32)>),
}

impl PairSampler {
    /// Product of the uniform distribution over all `n` individuals with itself.
    pub fn all(n: usize) -> Self {
        let ids: Vec<u32> = (0..n as u32).collect();
        PairSampler::UniformProduct {
            left: ids.clone(),
            right: ids,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (u32, u32) {
        match self {
            PairSampler::UniformProduct { left, right } => {
                let a = left[rng.gen_range(0..left.len())];
                let b = right[rng.gen_range(0..right.len())];
                (a, b)
            }
            PairSampler::Pairs(pairs) => pairs[rng.gen_range(0..pairs.len())],
        }
    }

    /// Every pair in the support with its probability.
    pub fn support(&self) -> Vec<(u32, u32, f64)> {
        match self {
            PairSampler::UniformProduct { left, right } => {
                let p = 1.0 / (left.len() * right.len()) as f64;
                left.iter()
                    .flat_map(|&a| right.iter().map(move |&b| (a, b, p)))
                    .collect()
            }
            PairSampler::Pairs(pairs) => {
                let p = 1.0 / pairs.len() as f64;
                pairs.iter().map(|&(a, b)| (a, b, p)).collect()
            }
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = |i: &u32| (*i as usize) < n;
        let fine = match self {
            PairSampler::UniformProduct { left, right } => {
                !left.is_empty() && !right.is_empty() && left.iter().all(ok) && right.iter().all(ok)
            }
            PairSampler::Pairs(p) => !p.is_empty() && p.iter().all(|(a, b)| ok(a) && ok(b)),
        };
        if fine {
            Ok(())
        } else {
            Err(Error::Config("pair sampler is empty or references unknown individuals".into()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub metric: SyntheticMetric,
    pub noise: NoiseModel,
    pub pairs: PairSampler,
}

impl SyntheticSource {
    /// Lazily draws `m` samples; the sequence is a pure function of `seed`.
    pub fn draws(&self, m: u64, seed: u64) -> impl Iterator<Item = ResolvedSample> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(move |_| {
            let (a, b) = self.pairs.sample(&mut rng);
            let d = self.metric.distance(a as usize, b as usize);
            ResolvedSample {
                a,
                b,
                delta: self.noise.observe(d, &mut rng),
            }
        })
    }

    /// Exact `E_{(x,x')∼S}[d]` for every comparison, computed over the
    /// sampler's support. Comparisons with zero mass are unsupported.
    pub fn exact_means(&self, dataset: &Dataset, coll: &ResolvedCollection) -> MetricMeanTable {
        let support = self.pairs.support();
        let mut mass = vec![0.0; coll.len()];
        let mut sum = vec![0.0; coll.len()];
        for &(a, b, p) in &support {
            let d = self.metric.distance(a as usize, b as usize);
            for k in 0..coll.len() {
                if coll.contains(k, dataset, a as usize, b as usize) {
                    mass[k] += p;
                    sum[k] += p * d;
                }
            }
        }
        MetricMeanTable {
            entries: coll
                .ids()
                .iter()
                .enumerate()
                .map(|(k, id)| MetricMean {
                    id: id.clone(),
                    mean: (mass[k] > 0.0).then(|| sum[k] / mass[k]),
                    count: mass[k],
                    exact: true,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MetricSource {
    /// Samples read from a file, consumed in file order.
    Samples(Vec<ResolvedSample>),
    Synthetic(SyntheticSource),
}

impl MetricSource {
    pub fn resolved_draws(&self, m: u64, seed: u64) -> Result<Vec<ResolvedSample>> {
        if m == 0 {
            return Err(Error::Domain("at least one metric sample must be drawn".into()));
        }
        match self {
            MetricSource::Samples(all) => {
                if (all.len() as u64) < m {
                    return Err(Error::Ingestion(format!(
                        "metric sample file holds {} samples, {m} requested",
                        all.len()
                    )));
                }
                Ok(all[..m as usize].to_vec())
            }
            MetricSource::Synthetic(s) => Ok(s.draws(m, seed).collect()),
        }
    }
}

/// Draws `m` samples and maps them back to individual ids.
pub fn draw_samples(
    source: &MetricSource,
    dataset: &Dataset,
    m: u64,
    seed: u64,
) -> Result<Vec<MetricSample>> {
    Ok(source
        .resolved_draws(m, seed)?
        .into_iter()
        .map(|s| MetricSample {
            x: dataset.get(s.a as usize).id().to_string(),
            x_prime: dataset.get(s.b as usize).id().to_string(),
            delta: s.delta,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMean {
    pub id: String,
    /// `None` when no sample fell in the comparison.
    pub mean: Option<f64>,
    /// Number (or total weight) of in-comparison samples.
    pub count: f64,
    /// Set when the mean is a known expectation rather than an estimate.
    #[serde(default)]
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeanTable {
    pub entries: Vec<MetricMean>,
}

impl MetricMeanTable {
    pub fn mean(&self, k: usize) -> Option<f64> {
        self.entries[k].mean
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unsupported(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.mean.is_none())
            .map(|e| e.id.as_str())
    }

    pub fn all_unsupported(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.mean.is_none())
    }

    /// Table with every comparison pinned to the same mean.
    pub fn constant(coll: &ResolvedCollection, value: f64) -> Self {
        Self {
            entries: coll
                .ids()
                .iter()
                .map(|id| MetricMean {
                    id: id.clone(),
                    mean: Some(value),
                    count: 0.0,
                    exact: true,
                })
                .collect(),
        }
    }
}

/// Arithmetic mean of `Δ` over the samples falling in each comparison.
pub fn estimate_metric_means(
    samples: &[ResolvedSample],
    dataset: &Dataset,
    coll: &ResolvedCollection,
) -> Result<MetricMeanTable> {
    if samples.is_empty() {
        return Err(Error::Domain("metric means need at least one sample".into()));
    }
    let cache = PairCache::from_samples(dataset, coll, samples.iter().copied())?;
    Ok(cache.metric_means())
}
