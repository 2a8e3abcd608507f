//! Two groups `P` and `Q` with subpopulations `P' ⊆ P`, `Q' ⊆ Q` whose
//! members are alike under the metric, while the labels are biased by group.
//!
//! Features are `(1[P], 1[Q], 1[P'], 1[Q'], s, 1) / 4` with score `s ∈ [0, 1]`,
//! and the metric is `|s - s'|`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparisons::{Comparison, ComparisonCollection, ComparisonKind, Literal, Op, Side};
use crate::error::{Error, Result};
use crate::metric::{MetricMeanTable, NoiseModel, PairSampler, SyntheticMetric, SyntheticSource};
use crate::model::{Dataset, Individual};

pub const COARSE_ID: &str = "P-x-Q";
pub const FINE_ID: &str = "Pp-x-Qp";

const SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubpopParams {
    pub p: usize,
    pub q: usize,
    pub p_prime: usize,
    pub q_prime: usize,
    /// Score centre of `P \ P'`.
    pub low_score: f64,
    /// Score centre of `Q \ Q'`.
    pub high_score: f64,
    /// Score centre shared by `P'` and `Q'`.
    pub shared_score: f64,
    /// Scores are drawn uniformly within this distance of their centre.
    pub jitter: f64,
    /// Labels are `s - 1/2 ∓ label_bias` on `P` / `Q`.
    pub label_bias: f64,
    /// Total comparisons, including the coarse and fine ones.
    pub num_comparisons: usize,
    pub gamma: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Leave the fine comparison out of the collection.
    pub coarse_only: bool,
}

impl Default for SubpopParams {
    fn default() -> Self {
        Self {
            p: 30,
            q: 30,
            p_prime: 14,
            q_prime: 14,
            low_score: 0.2,
            high_score: 0.8,
            shared_score: 0.5,
            jitter: 0.02,
            label_bias: 0.4,
            num_comparisons: 50,
            gamma: 0.05,
            noise: NoiseModel::Bernoulli,
            seed: 0,
            coarse_only: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubpopScenario {
    pub dataset: Dataset,
    pub collection: ComparisonCollection,
    pub scores: Vec<f64>,
    /// One label per individual.
    pub labels: Vec<f64>,
    pub source: SyntheticSource,
    pub p_prime: Vec<usize>,
    pub q_prime: Vec<usize>,
}

impl SubpopScenario {
    pub fn exact_means(&self) -> Result<MetricMeanTable> {
        let coll = self.collection.resolve(&self.dataset)?;
        Ok(self.source.exact_means(&self.dataset, &coll))
    }
}

fn indicator_literal(side: Side, feature: usize, on: bool) -> Literal {
    if on {
        Literal::new(side, feature, Op::Ge, SCALE / 2.0)
    } else {
        Literal::new(side, feature, Op::Le, 0.0)
    }
}

/// Individuals `0..p` form `P` (the first `p_prime` of them `P'`), the next
/// `q` form `Q` (the first `q_prime` of those `Q'`). The collection holds
/// `P × Q`, `P' × Q'` and random conjunctions over group indicators and
/// score thresholds whose exact frequency under the uniform pair
/// distribution is at least `gamma`.
pub fn generate_subpop_scenario(params: &SubpopParams) -> Result<SubpopScenario> {
    let sp = params;
    if sp.p_prime > sp.p || sp.q_prime > sp.q || sp.p_prime == 0 || sp.q_prime == 0 {
        return Err(Error::Domain("need 0 < |P'| <= |P| and 0 < |Q'| <= |Q|".into()));
    }
    for s in [sp.low_score, sp.high_score, sp.shared_score] {
        if !(sp.jitter >= 0.0 && s - sp.jitter >= 0.0 && s + sp.jitter <= 1.0) {
            return Err(Error::Domain(format!("score centre {s} with jitter {} leaves [0, 1]", sp.jitter)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed);
    let n = sp.p + sp.q;
    let mut individuals = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let in_p = i < sp.p;
        let sub = if in_p { i < sp.p_prime } else { i - sp.p < sp.q_prime };
        let centre = match (in_p, sub) {
            (_, true) => sp.shared_score,
            (true, false) => sp.low_score,
            (false, false) => sp.high_score,
        };
        let s = if sp.jitter > 0.0 {
            centre + rng.gen_range(-sp.jitter..=sp.jitter)
        } else {
            centre
        };
        let flags = [in_p, !in_p, in_p && sub, !in_p && sub];
        let mut f: Vec<f64> = flags.iter().map(|&b| if b { SCALE } else { 0.0 }).collect();
        f.push(SCALE * s);
        f.push(SCALE);
        individuals.push(Individual::new(format!("u{i}"), f)?);
        scores.push(s);
        let bias = if in_p { -sp.label_bias } else { sp.label_bias };
        labels.push((s - 0.5 + bias).clamp(-1.0, 1.0));
    }
    let dataset = Dataset::new(individuals)?;

    let mut comparisons = vec![Comparison::new(
        COARSE_ID,
        ComparisonKind::Conjunction {
            literals: vec![indicator_literal(Side::X, 0, true), indicator_literal(Side::XPrime, 1, true)],
        },
    )];
    if !sp.coarse_only {
        comparisons.push(Comparison::new(
            FINE_ID,
            ComparisonKind::Conjunction {
                literals: vec![indicator_literal(Side::X, 2, true), indicator_literal(Side::XPrime, 3, true)],
            },
        ));
    }
    let frequency = |lits: &[Literal]| {
        let mut hits = 0usize;
        for a in dataset.individuals() {
            for b in dataset.individuals() {
                if lits.iter().all(|l| l.holds(a.features(), b.features())) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (n * n) as f64
    };
    let mut seen: BTreeSet<String> = comparisons
        .iter()
        .map(|c| serde_json::to_string(&c.kind).expect("serializable"))
        .collect();
    let thresholds = [0.3, 0.4, 0.5, 0.6, 0.7];
    let mut attempts = 0;
    while comparisons.len() < sp.num_comparisons {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Domain(format!(
                "could not find {} distinct comparisons of frequency >= {}",
                sp.num_comparisons, sp.gamma
            )));
        }
        let k = rng.gen_range(1..=2);
        let mut lits: Vec<Literal> = (0..k)
            .map(|_| {
                let side = if rng.gen::<bool>() { Side::X } else { Side::XPrime };
                let feature = rng.gen_range(0..5);
                if feature < 4 {
                    indicator_literal(side, feature, rng.gen::<bool>())
                } else {
                    let t = thresholds[rng.gen_range(0..thresholds.len())];
                    let op = if rng.gen::<bool>() { Op::Ge } else { Op::Le };
                    Literal::new(side, 4, op, SCALE * t)
                }
            })
            .collect();
        lits.sort_by_key(|l| serde_json::to_string(l).expect("serializable"));
        let kind = ComparisonKind::Conjunction { literals: lits };
        let key = serde_json::to_string(&kind).expect("serializable");
        let ComparisonKind::Conjunction { literals } = &kind else { unreachable!() };
        if seen.contains(&key) || frequency(literals) < sp.gamma {
            continue;
        }
        seen.insert(key);
        comparisons.push(Comparison::new(format!("r{:02}", comparisons.len()), kind));
    }
    let collection = ComparisonCollection::new(sp.gamma, false, comparisons)?;
    let p_prime = (0..sp.p_prime).collect();
    let q_prime = (sp.p..sp.p + sp.q_prime).collect();
    Ok(SubpopScenario {
        source: SyntheticSource {
            metric: SyntheticMetric::ScoreDifference { scores: scores.clone() },
            noise: sp.noise,
            pairs: PairSampler::all(n),
        },
        dataset,
        collection,
        scores,
        labels,
        p_prime,
        q_prime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fine_comparison_is_close_under_the_metric() {
        let s = generate_subpop_scenario(&SubpopParams::default()).unwrap();
        let coll = s.collection.resolve(&s.dataset).unwrap();
        let means = s.exact_means().unwrap();
        let fine = means.mean(coll.position(FINE_ID).unwrap()).unwrap();
        let coarse = means.mean(coll.position(COARSE_ID).unwrap()).unwrap();
        // exact: mean of |s - s'| over P' x Q' from the generated scores
        let mut direct = 0.0;
        for &a in &s.p_prime {
            for &b in &s.q_prime {
                direct += (s.scores[a] - s.scores[b]).abs();
            }
        }
        direct /= (s.p_prime.len() * s.q_prime.len()) as f64;
        assert!((fine - direct).abs() < 1e-12);
        assert!(fine < 0.04, "{fine}");
        assert!(coarse > 0.3, "{coarse}");
    }

    #[test]
    fn collection_meets_the_claimed_largeness() {
        let s = generate_subpop_scenario(&SubpopParams::default()).unwrap();
        assert_eq!(s.collection.comparisons.len(), 50);
        let coll = s.collection.resolve(&s.dataset).unwrap();
        let n = s.dataset.len();
        for k in 0..coll.len() {
            let hits = (0..n)
                .flat_map(|a| (0..n).map(move |b| (a, b)))
                .filter(|&(a, b)| coll.contains(k, &s.dataset, a, b))
                .count();
            assert!(hits as f64 / (n * n) as f64 >= 0.05, "{}", coll.id(k));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = SubpopParams {
            seed: 3,
            ..Default::default()
        };
        let a = generate_subpop_scenario(&p).unwrap();
        let b = generate_subpop_scenario(&p).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.collection, b.collection);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let p = SubpopParams {
            p_prime: 31,
            ..Default::default()
        };
        assert!(generate_subpop_scenario(&p).is_err());
    }
}
