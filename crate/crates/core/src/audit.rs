//! Auditing fixed predictions against held-out metric samples.

use serde::{Deserialize, Serialize};

use crate::comparisons::ResolvedCollection;
use crate::error::{Error, Result};
use crate::metric::ResolvedSample;
use crate::model::{Dataset, LossSpec};
use crate::pairs::PairCache;
use crate::residuals::residual_estimates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonAudit {
    pub id: String,
    pub verdict: Verdict,
    pub residual: Option<f64>,
    pub deviation: Option<f64>,
    pub metric_mean: Option<f64>,
    pub tolerance: Option<f64>,
    pub samples: f64,
}

/// One pointwise check: the share of in-comparison samples with
/// `|f(x) - f(x')| ≤ Δ + (ε̂ + τ)/p`. When `epsilon_hat` is absent the
/// comparison's own held-out metric mean is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRequest {
    pub comparison: String,
    pub p: f64,
    #[serde(default)]
    pub epsilon_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseResult {
    pub comparison: String,
    pub p: f64,
    pub epsilon_hat: Option<f64>,
    pub slack: Option<f64>,
    /// Plug-in estimate; `None` when no sample falls in the comparison.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub loss: LossSpec,
    pub mean_loss: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditMetadata {
    pub tau: f64,
    pub delta: f64,
    pub samples: usize,
    pub individuals: usize,
    pub seed: Option<u64>,
    /// Caller's assertion that the samples were not used in training.
    pub held_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub comparisons: Vec<ComparisonAudit>,
    pub pointwise: Vec<PointwiseResult>,
    pub utility: Option<UtilityReport>,
    pub passed: usize,
    pub failed: usize,
    pub unsupported: usize,
    pub metadata: AuditMetadata,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditOptions<'a> {
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub held_out: bool,
    pub pointwise: &'a [PointwiseRequest],
    pub labeled: Option<(&'a [(usize, f64)], LossSpec)>,
}

/// Residual of every comparison on the held-out samples; pass iff `≤ tau`.
pub fn audit(
    predictions: &[f64],
    dataset: &Dataset,
    coll: &ResolvedCollection,
    samples: &[ResolvedSample],
    tau: f64,
    opts: &AuditOptions<'_>,
) -> Result<AuditReport> {
    if predictions.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            actual: predictions.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("audit level {tau} must be positive")));
    }
    if samples.is_empty() {
        return Err(Error::Domain("audit needs at least one metric sample".into()));
    }
    let delta = opts.delta.unwrap_or(0.05);
    let cache = PairCache::from_samples(dataset, coll, samples.iter().copied())?;
    let means = cache.metric_means();
    let mut comparisons = Vec::with_capacity(coll.len());
    for (k, r) in residual_estimates(predictions, &cache, &means, delta).into_iter().enumerate() {
        let mean = means.mean(k);
        comparisons.push(match r {
            Ok(r) => ComparisonAudit {
                id: r.comparison,
                verdict: if r.value <= tau { Verdict::Pass } else { Verdict::Fail },
                residual: Some(r.value),
                deviation: mean.map(|m| r.value + m),
                metric_mean: mean,
                tolerance: Some(r.tolerance),
                samples: r.pairs,
            },
            Err(Error::Unsupported(id)) => ComparisonAudit {
                id,
                verdict: Verdict::Unsupported,
                residual: None,
                deviation: None,
                metric_mean: None,
                tolerance: None,
                samples: 0.0,
            },
            Err(e) => return Err(e),
        });
    }
    let count = |v: Verdict| comparisons.iter().filter(|c| c.verdict == v).count();
    let (passed, failed, unsupported) = (count(Verdict::Pass), count(Verdict::Fail), count(Verdict::Unsupported));
    if passed + failed == 0 {
        return Err(Error::AllUnsupported);
    }

    let mut pointwise = Vec::with_capacity(opts.pointwise.len());
    for req in opts.pointwise {
        let k = coll
            .position(&req.comparison)
            .ok_or_else(|| Error::Config(format!("pointwise check names unknown comparison `{}`", req.comparison)))?;
        let eps = req.epsilon_hat.or(means.mean(k));
        let fraction = match eps {
            Some(e) => match pointwise_fraction(predictions, dataset, coll, k, samples, e, tau, req.p) {
                Ok(f) => Some(f),
                Err(Error::Unsupported(_)) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        pointwise.push(PointwiseResult {
            comparison: req.comparison.clone(),
            p: req.p,
            epsilon_hat: eps,
            slack: eps.map(|e| (e + tau) / req.p),
            fraction,
        });
    }

    let utility = match opts.labeled {
        Some((labeled, loss)) if !labeled.is_empty() => {
            let mut s = 0.0;
            for &(i, y) in labeled {
                let p = *predictions
                    .get(i)
                    .ok_or_else(|| Error::Domain(format!("labeled index {i} out of range")))?;
                s += crate::model::loss_value(loss, p, y)?;
            }
            Some(UtilityReport {
                loss,
                mean_loss: s / labeled.len() as f64,
                examples: labeled.len(),
            })
        }
        _ => None,
    };

    Ok(AuditReport {
        comparisons,
        pointwise,
        utility,
        passed,
        failed,
        unsupported,
        metadata: AuditMetadata {
            tau,
            delta,
            samples: samples.len(),
            individuals: dataset.len(),
            seed: opts.seed,
            held_out: opts.held_out,
        },
    })
}

/// Share of in-comparison samples with `|f(x) - f(x')| ≤ Δ + (ε̂ + τ)/p`.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_fraction(
    predictions: &[f64],
    dataset: &Dataset,
    coll: &ResolvedCollection,
    k: usize,
    samples: &[ResolvedSample],
    epsilon_hat: f64,
    tau: f64,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p = {p} must lie in (0, 1)")));
    }
    let slack = (epsilon_hat + tau) / p;
    let (mut inside, mut ok) = (0usize, 0usize);
    for s in samples {
        let (a, b) = (s.a as usize, s.b as usize);
        if coll.contains(k, dataset, a, b) {
            inside += 1;
            if (predictions[a] - predictions[b]).abs() <= s.delta + slack {
                ok += 1;
            }
        }
    }
    if inside == 0 {
        return Err(Error::Unsupported(coll.id(k).to_string()));
    }
    Ok(ok as f64 / inside as f64)
}
