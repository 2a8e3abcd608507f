//! Constraint residuals `R_S(w) = E_S|f(x) - f(x')| - E_S d` and their
//! subgradients.
//!
//! Residual values use clipped predictions. Subgradients use the linear form
//! `|<w, x - x'>|`, which upper-bounds the clipped deviation.

use serde::{Deserialize, Serialize};

use crate::comparisons::{ResolvedCollection, SoftComparison, DEFAULT_SAMPLE_CONSTANT};
use crate::error::{Error, Result};
use crate::metric::MetricMeanTable;
use crate::model::{clip_unit, Dataset, Design, Hypothesis, Individual};
use crate::pairs::{PairCache, ScanBuffers};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEstimate {
    pub comparison: String,
    pub value: f64,
    /// Hoeffding half-width of the deviation and metric terms combined.
    pub tolerance: f64,
    /// Pair weight behind the deviation term.
    pub pairs: f64,
    /// Sample weight behind the metric mean.
    pub metric_samples: f64,
}

/// Half-width of a two-sided Hoeffding interval for the mean of `count`
/// draws with range 2, at failure probability `delta`.
pub fn hoeffding_half_width(count: f64, delta: f64) -> f64 {
    if count <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * ((2.0 / delta).ln() / (2.0 * count)).sqrt()
}

/// Clipped predictions for every row of `design`.
pub fn clipped_predictions(design: &Design, weights: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(design.rows());
    design.raw_scores_into(weights, &mut out);
    out.iter_mut().for_each(|p| *p = clip_unit(*p));
    out
}

/// Residual estimates for every comparison from one scan of the cache.
/// Comparisons without pairs or without a metric mean yield `Unsupported`.
pub fn residual_estimates(
    predictions: &[f64],
    cache: &PairCache,
    means: &MetricMeanTable,
    delta: f64,
) -> Vec<Result<ResidualEstimate>> {
    let mut buf = ScanBuffers::default();
    cache.deviation_means(predictions, &mut buf);
    (0..cache.num_comparisons())
        .map(|k| estimate_from_deviation(k, buf.deviations[k], cache, means, delta))
        .collect()
}

fn estimate_from_deviation(
    k: usize,
    deviation: f64,
    cache: &PairCache,
    means: &MetricMeanTable,
    delta: f64,
) -> Result<ResidualEstimate> {
    let id = &cache.ids()[k];
    let entry = &means.entries[k];
    let mean = match entry.mean {
        Some(m) if cache.supports(k) => m,
        _ => return Err(Error::Unsupported(id.clone())),
    };
    let pairs = cache.comparison_weight(k);
    let pair_tol = if cache.is_exact() {
        0.0
    } else {
        hoeffding_half_width(pairs, delta)
    };
    let metric_tol = if entry.exact {
        0.0
    } else {
        hoeffding_half_width(entry.count, delta)
    };
    Ok(ResidualEstimate {
        comparison: id.clone(),
        value: deviation - mean,
        tolerance: pair_tol + metric_tol,
        pairs,
        metric_samples: entry.count,
    })
}

/// `R̂_S(w)` for the `k`th comparison of the cache's collection.
pub fn residual_estimate(
    h: &Hypothesis,
    dataset: &Dataset,
    k: usize,
    cache: &PairCache,
    means: &MetricMeanTable,
    delta: f64,
) -> Result<ResidualEstimate> {
    if h.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: h.dim(),
        });
    }
    let preds = clipped_predictions(&Design::from_dataset(dataset), h.weights());
    let mut buf = ScanBuffers::default();
    cache.deviation_means(&preds, &mut buf);
    estimate_from_deviation(k, buf.deviations[k], cache, means, delta)
}

/// Residual of a soft comparison: the deviation and metric terms are both
/// weighted by `S_h` and normalized by the total soft weight.
pub fn soft_residual_estimate(
    predictions: &[f64],
    soft: &SoftComparison,
    coll: &ResolvedCollection,
    dataset: &Dataset,
    cache: &PairCache,
    metric: &PairCache,
    delta: f64,
) -> Result<ResidualEstimate> {
    let (mut dev, mut pairs) = (0.0, 0.0);
    for p in 0..cache.num_pairs() {
        let (a, b) = cache.pair(p);
        let s = cache.weight(p) * soft.weight(coll, dataset, a, b);
        dev += s * (predictions[a] - predictions[b]).abs();
        pairs += s;
    }
    let (mut dsum, mut dcount) = (0.0, 0.0);
    for p in 0..metric.num_pairs() {
        let (a, b) = metric.pair(p);
        let s = soft.weight(coll, dataset, a, b);
        dsum += s * metric.delta_sum(p);
        dcount += s * metric.weight(p);
    }
    if pairs <= 0.0 || dcount <= 0.0 {
        return Err(Error::Unsupported(soft.id.clone()));
    }
    let tol = |exact: bool, c: f64| if exact { 0.0 } else { hoeffding_half_width(c, delta) };
    Ok(ResidualEstimate {
        comparison: soft.id.clone(),
        value: dev / pairs - dsum / dcount,
        tolerance: tol(cache.is_exact(), pairs) + tol(metric.is_exact(), dcount),
        pairs,
        metric_samples: dcount,
    })
}

/// `sgn(<w, x - x'>) (x - x')` with `sgn(0) = 0`.
pub fn residual_subgradient(h: &Hypothesis, x: &Individual, x_prime: &Individual) -> Result<Vec<f64>> {
    for ind in [x, x_prime] {
        if ind.dim() != h.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.dim(),
                actual: ind.dim(),
            });
        }
    }
    let diff: Vec<f64> = x
        .features()
        .iter()
        .zip(x_prime.features())
        .map(|(a, b)| a - b)
        .collect();
    let s = sign(diff.iter().zip(h.weights()).map(|(d, w)| d * w).sum());
    Ok(diff.into_iter().map(|d| s * d).collect())
}

pub(crate) fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pairs needed so deviation means over every comparison are within `tau/5`:
/// `⌈c0 B² ln(|C|/δ) / (γ (τ/5)²)⌉`, with the log floored at one.
pub fn size_pair_cache(num_comparisons: usize, gamma: f64, tau: f64, delta: f64, bound: f64) -> u64 {
    size_pair_cache_with(DEFAULT_SAMPLE_CONSTANT, num_comparisons, gamma, tau, delta, bound)
}

pub fn size_pair_cache_with(
    c0: f64,
    num_comparisons: usize,
    gamma: f64,
    tau: f64,
    delta: f64,
    bound: f64,
) -> u64 {
    let log = (num_comparisons.max(1) as f64 / delta).ln().max(1.0);
    let t = tau / 5.0;
    (c0 * bound * bound * log / (gamma * t * t)).ceil() as u64
}
