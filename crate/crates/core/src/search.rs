//! Finding violated constraints: an exhaustive scan over the collection, or
//! the reduction to agnostic learning on pair labels
//! `v(x, x') = |f(x) - f(x')| - Δ(x, x')`.

use serde::{Deserialize, Serialize};

use crate::comparisons::{PairFeature, PairHypothesis, ResolvedCollection, SoftComparison};
use crate::error::{Error, Result};
use crate::metric::MetricMeanTable;
use crate::model::Dataset;
use crate::pairs::{PairCache, ScanBuffers};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub id: String,
    pub residual: f64,
}

/// The comparison with the largest value above `threshold`; ties go to the
/// smallest id. `NaN` entries are skipped.
pub fn select_violation(values: &[f64], ids: &[String], threshold: f64) -> Option<Violation> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if v.is_nan() || v <= threshold {
            continue;
        }
        best = match best {
            Some(b) if values[b] > v || (values[b] == v && ids[b] <= ids[k]) => Some(b),
            _ => Some(k),
        };
    }
    best.map(|k| Violation {
        index: k,
        id: ids[k].clone(),
        residual: values[k],
    })
}

/// Maximum estimated residual over the collection if it exceeds `threshold`.
pub fn find_violation_exhaustive(
    predictions: &[f64],
    cache: &PairCache,
    means: &MetricMeanTable,
    threshold: f64,
) -> Result<Option<Violation>> {
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!("violation threshold {threshold} must be positive")));
    }
    let mut buf = ScanBuffers::default();
    cache.deviation_means(predictions, &mut buf);
    let mut values = Vec::with_capacity(cache.num_comparisons());
    for k in 0..cache.num_comparisons() {
        match means.mean(k) {
            Some(m) if cache.supports(k) => values.push(buf.deviations[k] - m),
            _ => return Err(Error::Unsupported(cache.ids()[k].clone())),
        }
    }
    Ok(select_violation(&values, cache.ids(), threshold))
}

/// Per-pair labels over the distinct pairs of a metric-sample cache. A pair
/// drawn `w` times carries weight `w` and the mean of its observed deltas,
/// so weighted sums equal sums over the raw samples.
#[derive(Debug, Clone)]
pub struct PairLabeling {
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    pub total: f64,
    /// `ρ̂`, the mean label over all samples.
    pub rho: f64,
}

impl PairLabeling {
    /// `E[h v]` for pair-level hypothesis values `h`.
    pub fn correlation(&self, h: impl Iterator<Item = f64>) -> f64 {
        let s: f64 = h
            .zip(self.weights.iter().zip(&self.values))
            .map(|(h, (w, v))| h * w * v)
            .sum();
        s / self.total
    }
}

pub fn build_pair_labels(predictions: &[f64], metric: &PairCache) -> PairLabeling {
    let mut weights = Vec::with_capacity(metric.num_pairs());
    let mut values = Vec::with_capacity(metric.num_pairs());
    let mut acc = 0.0;
    for p in 0..metric.num_pairs() {
        let (a, b) = metric.pair(p);
        let w = metric.weight(p);
        let v = (predictions[a] - predictions[b]).abs() - metric.delta_sum(p) / w;
        acc += w * v;
        weights.push(w);
        values.push(v);
    }
    let total = metric.total_weight();
    PairLabeling {
        weights,
        values,
        total,
        rho: acc / total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerOutput {
    pub hypothesis: PairHypothesis,
    /// `⟨h, v⟩` on the labeling the learner saw.
    pub correlation: f64,
    pub rho: f64,
}

/// What a learner may look at besides the labels.
#[derive(Clone, Copy)]
pub struct LearnContext<'a> {
    pub dataset: &'a Dataset,
    pub collection: &'a ResolvedCollection,
    /// The cache the labeling was built from.
    pub metric: &'a PairCache,
}

pub trait AgnosticLearner: Send + Sync {
    fn name(&self) -> &'static str;
    fn learn(&self, labels: &PairLabeling, ctx: LearnContext<'_>) -> Result<LearnerOutput>;
}

/// Returns the collection concept `c_S ∈ {-1, 1}` of largest correlation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExhaustiveLearner;

impl AgnosticLearner for ExhaustiveLearner {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn learn(&self, labels: &PairLabeling, ctx: LearnContext<'_>) -> Result<LearnerOutput> {
        if ctx.collection.is_empty() {
            return Err(Error::Learner {
                learner: self.name().into(),
                message: "empty concept class".into(),
            });
        }
        let all: f64 = labels.weights.iter().zip(&labels.values).map(|(w, v)| w * v).sum();
        let mut best: Option<(usize, f64)> = None;
        for k in 0..ctx.collection.len() {
            let inside: f64 = ctx
                .metric
                .members(k)
                .map(|p| labels.weights[p] * labels.values[p])
                .sum();
            let corr = (2.0 * inside - all) / labels.total;
            if best.map_or(true, |(_, b)| corr > b) {
                best = Some((k, corr));
            }
        }
        let (k, correlation) = best.expect("nonempty class");
        Ok(LearnerOutput {
            hypothesis: PairHypothesis::Concept {
                index: k,
                id: ctx.collection.id(k).to_string(),
            },
            correlation,
            rho: labels.rho,
        })
    }
}

/// Best single-threshold stump over pair features. A heuristic: nothing is
/// promised about its correlation relative to the best concept.
#[derive(Debug, Clone, Copy, Default)]
pub struct StumpLearner;

impl StumpLearner {
    pub fn features(dim: usize, symmetric: bool) -> Vec<PairFeature> {
        let mut f: Vec<PairFeature> = (0..dim).map(PairFeature::X).collect();
        f.extend((0..dim).map(PairFeature::XPrime));
        if symmetric {
            f.extend((0..dim).map(PairFeature::AbsDiff));
        }
        f
    }
}

impl AgnosticLearner for StumpLearner {
    fn name(&self) -> &'static str {
        "stump"
    }

    fn learn(&self, labels: &PairLabeling, ctx: LearnContext<'_>) -> Result<LearnerOutput> {
        let n = ctx.metric.num_pairs();
        if n == 0 {
            return Err(Error::Learner {
                learner: self.name().into(),
                message: "no labeled pairs".into(),
            });
        }
        let wv: Vec<f64> = labels.weights.iter().zip(&labels.values).map(|(w, v)| w * v).collect();
        let all: f64 = wv.iter().sum();
        let mut best: Option<(PairHypothesis, f64)> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
        for feature in Self::features(ctx.dataset.dim(), ctx.collection.symmetric()) {
            order.clear();
            order.extend((0..n).map(|p| {
                let (a, b) = ctx.metric.pair(p);
                (feature.value(ctx.dataset.get(a).features(), ctx.dataset.get(b).features()), p)
            }));
            order.sort_by(|x, y| x.0.total_cmp(&y.0));
            // h = polarity on {value >= θ}: correlation = polarity (2 above - all) / W
            let mut above = all;
            let mut i = 0;
            while i < n {
                let theta = order[i].0;
                for polarity in [1.0, -1.0] {
                    let corr = polarity * (2.0 * above - all) / labels.total;
                    if best.as_ref().map_or(true, |(_, b)| corr > *b) {
                        best = Some((
                            PairHypothesis::Stump {
                                feature,
                                threshold: theta,
                                polarity,
                            },
                            corr,
                        ));
                    }
                }
                while i < n && order[i].0 == theta {
                    above -= wv[order[i].1];
                    i += 1;
                }
            }
        }
        let (hypothesis, _) = best.expect("at least one feature value");
        // Report the correlation recomputed from the hypothesis itself.
        let correlation = labels.correlation((0..n).map(|p| {
            let (a, b) = ctx.metric.pair(p);
            hypothesis.eval(ctx.collection, ctx.dataset, a, b)
        }));
        Ok(LearnerOutput {
            hypothesis,
            correlation,
            rho: labels.rho,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedViolation {
    pub comparison: SoftComparison,
    /// `E[S_h v]`, summed directly over the labeling.
    pub soft_residual: f64,
    pub correlation: f64,
    pub rho: f64,
}

/// Runs the learner on the labeling and returns `S_h = (h + 1)/2` when its
/// soft residual exceeds `γτ/2`.
pub fn find_violation_learned(
    labels: &PairLabeling,
    learner: &dyn AgnosticLearner,
    ctx: LearnContext<'_>,
    gamma: f64,
    tau: f64,
) -> Result<Option<LearnedViolation>> {
    let out = learner.learn(labels, ctx).map_err(|e| match e {
        Error::Learner { .. } => e,
        other => Error::Learner {
            learner: learner.name().into(),
            message: other.to_string(),
        },
    })?;
    let soft = SoftComparison::from_hypothesis(out.hypothesis.clone());
    let mut s = 0.0;
    for p in 0..ctx.metric.num_pairs() {
        let (a, b) = ctx.metric.pair(p);
        s += soft.weight(ctx.collection, ctx.dataset, a, b) * labels.weights[p] * labels.values[p];
    }
    let soft_residual = s / labels.total;
    Ok((soft_residual > gamma * tau / 2.0).then_some(LearnedViolation {
        comparison: soft,
        soft_residual,
        correlation: out.correlation,
        rho: out.rho,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparisons::{Comparison, ComparisonCollection, ComparisonKind, Literal, Op, Side};
    use crate::metric::{MetricMean, ResolvedSample};
    use crate::model::Individual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn world(n: usize, seed: u64) -> (Dataset, ResolvedCollection) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = Dataset::new(
            (0..n)
                .map(|i| {
                    Individual::new(
                        format!("i{i}"),
                        vec![rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5)],
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let mut comps = Vec::new();
        for (j, t) in [(0, 0.2), (1, 0.3), (0, 0.4)] {
            for side in [Side::X, Side::XPrime] {
                comps.push(Comparison::new(
                    format!("{side:?}{j}>={t}"),
                    ComparisonKind::Conjunction {
                        literals: vec![Literal::new(side, j, Op::Ge, t)],
                    },
                ));
            }
        }
        let coll = ComparisonCollection::new(0.1, false, comps)
            .unwrap()
            .resolve(&ds)
            .unwrap();
        (ds, coll)
    }

    fn samples(n: usize, m: usize, seed: u64) -> Vec<ResolvedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| ResolvedSample {
                a: rng.gen_range(0..n as u32),
                b: rng.gen_range(0..n as u32),
                delta: rng.gen_range(0.0..2.0),
            })
            .collect()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn selection_examples() {
        let names = ids(&["a", "b", "c"]);
        assert_eq!(select_violation(&[-0.1, 0.0, -2.0], &names, 0.08), None);
        let v = select_violation(&[-0.1, 0.5, 0.0], &names, 0.08).unwrap();
        assert_eq!((v.id.as_str(), v.residual), ("b", 0.5));
        let v = select_violation(&[0.3, 0.5, f64::NAN], &names, 0.08).unwrap();
        assert_eq!(v.id, "b");
        let names = ids(&["z", "a"]);
        assert_eq!(select_violation(&[0.5, 0.5], &names, 0.08).unwrap().id, "a");
    }

    #[test]
    fn exhaustive_search_on_a_planted_violator() {
        let (ds, coll) = world(20, 1);
        let all = (0..20u32).flat_map(|a| (0..20u32).map(move |b| (a, b)));
        let cache = PairCache::from_pairs(&ds, &coll, all).unwrap();
        let zero = vec![0.0; 20];
        let mut means = MetricMeanTable::constant(&coll, 0.2);
        assert_eq!(find_violation_exhaustive(&zero, &cache, &means, 0.08).unwrap(), None);

        let preds: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        means.entries[3].mean = Some(0.0);
        let v = find_violation_exhaustive(&preds, &cache, &means, 0.08)
            .unwrap()
            .unwrap();
        assert_eq!(v.index, 3);

        means.entries[1] = MetricMean {
            id: coll.id(1).into(),
            mean: None,
            count: 0.0,
            exact: false,
        };
        assert!(matches!(
            find_violation_exhaustive(&preds, &cache, &means, 0.08),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn labels_at_zero_predictions_are_minus_delta() {
        let (ds, coll) = world(10, 2);
        let s = samples(10, 300, 3);
        let metric = PairCache::from_samples(&ds, &coll, s.iter().copied()).unwrap();
        let labels = build_pair_labels(&vec![0.0; 10], &metric);
        for p in 0..metric.num_pairs() {
            assert!((labels.values[p] + metric.delta_sum(p) / metric.weight(p)).abs() < 1e-15);
        }
        let raw_mean = -s.iter().map(|s| s.delta).sum::<f64>() / 300.0;
        assert!((labels.rho - raw_mean).abs() < 1e-12);

        // zero metric: labels are the absolute deviations
        let zeroed: Vec<_> = s.iter().map(|s| ResolvedSample { delta: 0.0, ..*s }).collect();
        let metric = PairCache::from_samples(&ds, &coll, zeroed).unwrap();
        let preds: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let labels = build_pair_labels(&preds, &metric);
        assert!(labels.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn realizable_labels_give_unit_correlation() {
        let (ds, coll) = world(12, 4);
        let all: Vec<(u32, u32)> = (0..12u32).flat_map(|a| (0..12u32).map(move |b| (a, b))).collect();
        let metric = PairCache::from_pairs(&ds, &coll, all.iter().copied()).unwrap();
        let k = 2;
        let labels = PairLabeling {
            weights: vec![1.0; metric.num_pairs()],
            values: (0..metric.num_pairs())
                .map(|p| {
                    let (a, b) = metric.pair(p);
                    if coll.contains(k, &ds, a, b) {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect(),
            total: metric.num_pairs() as f64,
            rho: 0.0,
        };
        let ctx = LearnContext {
            dataset: &ds,
            collection: &coll,
            metric: &metric,
        };
        let out = ExhaustiveLearner.learn(&labels, ctx).unwrap();
        assert!((out.correlation - 1.0).abs() < 1e-12);
        let stump = StumpLearner.learn(&labels, ctx).unwrap();
        // every collection concept here is itself a stump
        assert!((stump.correlation - 1.0).abs() < 1e-12, "{}", stump.correlation);
    }

    #[test]
    fn stump_on_independent_labels_is_near_zero() {
        let (ds, coll) = world(40, 5);
        let all: Vec<(u32, u32)> = (0..40u32).flat_map(|a| (0..40u32).map(move |b| (a, b))).collect();
        let metric = PairCache::from_pairs(&ds, &coll, all.iter().copied()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = metric.num_pairs();
        let values: Vec<f64> = (0..m).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let labels = PairLabeling {
            rho: values.iter().sum::<f64>() / m as f64,
            weights: vec![1.0; m],
            values,
            total: m as f64,
        };
        let ctx = LearnContext {
            dataset: &ds,
            collection: &coll,
            metric: &metric,
        };
        let out = StumpLearner.learn(&labels, ctx).unwrap();
        assert!(out.correlation.abs() <= 3.0 / (m as f64).sqrt(), "{}", out.correlation);
        let direct = labels.correlation((0..m).map(|p| {
            let (a, b) = metric.pair(p);
            out.hypothesis.eval(&coll, &ds, a, b)
        }));
        assert!((direct - out.correlation).abs() < 1e-12);
    }

    #[test]
    fn zero_labels_never_fire() {
        let (ds, coll) = world(10, 7);
        let s: Vec<_> = samples(10, 200, 8)
            .into_iter()
            .map(|s| ResolvedSample { delta: 0.0, ..s })
            .collect();
        let metric = PairCache::from_samples(&ds, &coll, s).unwrap();
        let labels = build_pair_labels(&vec![0.3; 10], &metric);
        let ctx = LearnContext {
            dataset: &ds,
            collection: &coll,
            metric: &metric,
        };
        assert!(labels.values.iter().all(|&v| v == 0.0));
        for learner in [&ExhaustiveLearner as &dyn AgnosticLearner, &StumpLearner] {
            assert_eq!(find_violation_learned(&labels, learner, ctx, 0.1, 0.1).unwrap(), None);
        }
    }

    #[test]
    fn constant_hypothesis_soft_residual_is_rho() {
        let (ds, coll) = world(10, 9);
        let metric = PairCache::from_samples(&ds, &coll, samples(10, 200, 10)).unwrap();
        let preds: Vec<f64> = (0..10).map(|i| (i as f64 - 5.0) / 5.0).collect();
        let labels = build_pair_labels(&preds, &metric);
        let soft = SoftComparison::from_hypothesis(PairHypothesis::Constant { value: 1.0 });
        let s: f64 = (0..metric.num_pairs())
            .map(|p| {
                let (a, b) = metric.pair(p);
                soft.weight(&coll, &ds, a, b) * labels.weights[p] * labels.values[p]
            })
            .sum::<f64>()
            / labels.total;
        assert!((s - labels.rho).abs() < 1e-12);
    }

    #[test]
    fn transform_identity_holds_for_both_learners() {
        for seed in 0..20 {
            let (ds, coll) = world(15, seed);
            let metric = PairCache::from_samples(&ds, &coll, samples(15, 400, seed + 100)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels = build_pair_labels(&preds, &metric);
            let ctx = LearnContext {
                dataset: &ds,
                collection: &coll,
                metric: &metric,
            };
            for learner in [&ExhaustiveLearner as &dyn AgnosticLearner, &StumpLearner] {
                if let Some(v) = find_violation_learned(&labels, learner, ctx, 1e-6, 1e-6).unwrap() {
                    assert!((2.0 * v.soft_residual - v.rho - v.correlation).abs() < 1e-12);
                }
            }
        }
    }
}
