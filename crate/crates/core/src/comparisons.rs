//! Comparisons: subsets of ordered pairs of individuals, plus the soft
//! comparisons produced by the learner reduction.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Individual};

/// Constant in front of the logarithmic sample-size bounds.
pub const DEFAULT_SAMPLE_CONSTANT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    X,
    XPrime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
}

/// `side.features[feature] op value`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Literal {
    pub side: Side,
    pub feature: usize,
    pub op: Op,
    pub value: f64,
}

impl Literal {
    pub fn new(side: Side, feature: usize, op: Op, value: f64) -> Self {
        Self {
            side,
            feature,
            op,
            value,
        }
    }

    pub fn holds(&self, x: &[f64], x_prime: &[f64]) -> bool {
        let v = match self.side {
            Side::X => x[self.feature],
            Side::XPrime => x_prime[self.feature],
        };
        match self.op {
            Op::Ge => v >= self.value,
            Op::Le => v <= self.value,
            Op::Eq => v == self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComparisonKind {
    /// An explicit list of ordered `(x, x')` id pairs.
    Explicit { pairs: Vec<(String, String)> },
    /// All literals must hold on the pair.
    Conjunction { literals: Vec<Literal> },
    /// `x ∈ left` and `x' ∈ right`.
    GroupProduct { left: Vec<String>, right: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub id: String,
    #[serde(flatten)]
    pub kind: ComparisonKind,
}

impl Comparison {
    pub fn new(id: impl Into<String>, kind: ComparisonKind) -> Self {
        Self {
            id: id.into(),
            kind,
        }
    }

    /// Ordered membership of `(x, x')`.
    pub fn contains(&self, x: &Individual, x_prime: &Individual) -> bool {
        match &self.kind {
            ComparisonKind::Explicit { pairs } => pairs
                .iter()
                .any(|(a, b)| a == x.id() && b == x_prime.id()),
            ComparisonKind::Conjunction { literals } => literals
                .iter()
                .all(|l| l.holds(x.features(), x_prime.features())),
            ComparisonKind::GroupProduct { left, right } => {
                left.iter().any(|a| a == x.id()) && right.iter().any(|b| b == x_prime.id())
            }
        }
    }
}

/// Indicator of `(x, x') ∈ S`, symmetrised when `symmetric` is set.
pub fn membership(c: &Comparison, x: &Individual, x_prime: &Individual, symmetric: bool) -> f64 {
    let hit = c.contains(x, x_prime) || (symmetric && c.contains(x_prime, x));
    if hit {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCollection {
    pub gamma: f64,
    #[serde(default)]
    pub symmetric: bool,
    pub comparisons: Vec<Comparison>,
}

impl ComparisonCollection {
    pub fn new(gamma: f64, symmetric: bool, comparisons: Vec<Comparison>) -> Result<Self> {
        let c = Self {
            gamma,
            symmetric,
            comparisons,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Domain(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        let mut seen = HashSet::new();
        for c in &self.comparisons {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Ingestion(format!("duplicate comparison id `{}`", c.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.comparisons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comparisons.is_empty()
    }

    /// Binds ids and feature indices to `dataset`, failing on unknown ids.
    pub fn resolve(&self, dataset: &Dataset) -> Result<ResolvedCollection> {
        self.validate()?;
        let n = dataset.len();
        let members = |ids: &[String]| -> Result<Vec<bool>> {
            let mut mask = vec![false; n];
            for id in ids {
                mask[dataset.index_of(id)?] = true;
            }
            Ok(mask)
        };
        let mut resolved = Vec::with_capacity(self.comparisons.len());
        for c in &self.comparisons {
            let r = match &c.kind {
                ComparisonKind::Explicit { pairs } => {
                    let mut set = HashSet::with_capacity(pairs.len());
                    for (a, b) in pairs {
                        set.insert((dataset.index_of(a)? as u32, dataset.index_of(b)? as u32));
                    }
                    Resolved::Explicit(set)
                }
                ComparisonKind::Conjunction { literals } => {
                    if let Some(l) = literals.iter().find(|l| l.feature >= dataset.dim()) {
                        return Err(Error::DimensionMismatch {
                            expected: dataset.dim(),
                            actual: l.feature + 1,
                        });
                    }
                    Resolved::Conjunction(literals.clone())
                }
                ComparisonKind::GroupProduct { left, right } => Resolved::Product {
                    left: members(left)?,
                    right: members(right)?,
                },
            };
            resolved.push(r);
        }
        Ok(ResolvedCollection {
            ids: self.comparisons.iter().map(|c| c.id.clone()).collect(),
            gamma: self.gamma,
            symmetric: self.symmetric,
            resolved,
        })
    }
}

#[derive(Debug, Clone)]
enum Resolved {
    Explicit(HashSet<(u32, u32)>),
    Conjunction(Vec<Literal>),
    Product { left: Vec<bool>, right: Vec<bool> },
}

/// A collection bound to a dataset; membership works on individual indices.
#[derive(Debug, Clone)]
pub struct ResolvedCollection {
    ids: Vec<String>,
    gamma: f64,
    symmetric: bool,
    resolved: Vec<Resolved>,
}

impl ResolvedCollection {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, k: usize) -> &str {
        &self.ids[k]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    fn ordered(&self, k: usize, ds: &Dataset, a: usize, b: usize) -> bool {
        match &self.resolved[k] {
            Resolved::Explicit(set) => set.contains(&(a as u32, b as u32)),
            Resolved::Conjunction(lits) => {
                let (x, y) = (ds.get(a).features(), ds.get(b).features());
                lits.iter().all(|l| l.holds(x, y))
            }
            Resolved::Product { left, right } => left[a] && right[b],
        }
    }

    pub fn contains(&self, k: usize, ds: &Dataset, a: usize, b: usize) -> bool {
        self.ordered(k, ds, a, b) || (self.symmetric && self.ordered(k, ds, b, a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Largeness {
    pub id: String,
    pub frequency: f64,
    pub suspect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargenessReport {
    pub gamma: f64,
    pub pairs: f64,
    pub entries: Vec<Largeness>,
}

impl LargenessReport {
    pub fn suspects(&self) -> impl Iterator<Item = &Largeness> {
        self.entries.iter().filter(|e| e.suspect)
    }

    /// Builds the report from per-comparison hit weights out of `total`.
    pub fn from_hits(coll: &ResolvedCollection, hits: &[f64], total: f64) -> Self {
        let entries = coll
            .ids()
            .iter()
            .zip(hits)
            .map(|(id, &h)| {
                let frequency = h / total;
                Largeness {
                    id: id.clone(),
                    frequency,
                    suspect: frequency < coll.gamma() / 2.0,
                }
            })
            .collect();
        Self {
            gamma: coll.gamma(),
            pairs: total,
            entries,
        }
    }
}

/// Empirical hit frequency of every comparison over `pairs`; comparisons
/// under `gamma / 2` are flagged.
pub fn estimate_largeness(
    coll: &ResolvedCollection,
    dataset: &Dataset,
    pairs: &[(usize, usize)],
) -> Result<LargenessReport> {
    if pairs.is_empty() {
        return Err(Error::Domain("largeness estimate needs at least one pair".into()));
    }
    let hits: Vec<f64> = (0..coll.len())
        .map(|k| {
            pairs
                .iter()
                .filter(|&&(a, b)| coll.contains(k, dataset, a, b))
                .count() as f64
        })
        .collect();
    Ok(LargenessReport::from_hits(coll, &hits, pairs.len() as f64))
}

/// Metric samples needed so every comparison's metric mean is within `tau`
/// with probability `1 - delta`:
/// `m = c0 ln(|C|/δ) / τ²` per comparison, `⌈m ln m / γ⌉` overall.
///
/// `m` is floored at `e` so the log factor never drops below one.
pub fn required_metric_sample_size(num_comparisons: usize, gamma: f64, tau: f64, delta: f64) -> u64 {
    required_metric_sample_size_with(DEFAULT_SAMPLE_CONSTANT, num_comparisons, gamma, tau, delta)
}

pub fn required_metric_sample_size_with(
    c0: f64,
    num_comparisons: usize,
    gamma: f64,
    tau: f64,
    delta: f64,
) -> u64 {
    let per = (c0 * (num_comparisons.max(1) as f64 / delta).ln() / (tau * tau)).max(std::f64::consts::E);
    (per * per.ln() / gamma).ceil() as u64
}

/// Feature of a pair visible to the learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "side", content = "feature", rename_all = "snake_case")]
pub enum PairFeature {
    X(usize),
    XPrime(usize),
    AbsDiff(usize),
}

impl PairFeature {
    pub fn value(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        match *self {
            PairFeature::X(j) => x[j],
            PairFeature::XPrime(j) => x_prime[j],
            PairFeature::AbsDiff(j) => (x[j] - x_prime[j]).abs(),
        }
    }
}

/// A function from pairs to `[-1, 1]` returned by an agnostic learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairHypothesis {
    Constant { value: f64 },
    /// `c_S` of the `index`th collection comparison, in `{-1, 1}`.
    Concept { index: usize, id: String },
    /// `polarity` when `feature ≥ threshold`, `-polarity` otherwise.
    Stump {
        feature: PairFeature,
        threshold: f64,
        polarity: f64,
    },
}

impl PairHypothesis {
    pub fn eval(&self, coll: &ResolvedCollection, ds: &Dataset, a: usize, b: usize) -> f64 {
        match self {
            PairHypothesis::Constant { value } => *value,
            PairHypothesis::Concept { index, .. } => {
                if coll.contains(*index, ds, a, b) {
                    1.0
                } else {
                    -1.0
                }
            }
            PairHypothesis::Stump {
                feature,
                threshold,
                polarity,
            } => {
                let v = feature.value(ds.get(a).features(), ds.get(b).features());
                if v >= *threshold {
                    *polarity
                } else {
                    -*polarity
                }
            }
        }
    }
}

/// `S_h(x, x') = (h(x, x') + 1) / 2`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftComparison {
    pub id: String,
    pub hypothesis: PairHypothesis,
}

impl SoftComparison {
    pub fn from_hypothesis(hypothesis: PairHypothesis) -> Self {
        let id = match &hypothesis {
            PairHypothesis::Constant { value } => format!("soft:const({value})"),
            PairHypothesis::Concept { id, .. } => format!("soft:{id}"),
            PairHypothesis::Stump {
                feature,
                threshold,
                polarity,
            } => format!("soft:stump({feature:?}>={threshold},{polarity})"),
        };
        Self { id, hypothesis }
    }

    pub fn weight(&self, coll: &ResolvedCollection, ds: &Dataset, a: usize, b: usize) -> f64 {
        ((self.hypothesis.eval(coll, ds, a, b) + 1.0) / 2.0).clamp(0.0, 1.0)
    }
}

/// Deterministic id → position lookup for a collection.
pub fn id_positions(coll: &ResolvedCollection) -> HashMap<&str, usize> {
    coll.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset() -> Dataset {
        let mk = |id: &str, f3: f64| Individual::new(id, vec![0.0, 0.0, 0.0, f3]).unwrap();
        Dataset::new(vec![mk("a", 0.6), mk("b", 0.7), mk("c", 0.1)]).unwrap()
    }

    fn pair(id: &str) -> (String, String) {
        let mut it = id.split(',');
        (it.next().unwrap().into(), it.next().unwrap().into())
    }

    #[test]
    fn membership_examples() {
        let ds = dataset();
        let (a, b) = (ds.get(0), ds.get(1));
        let explicit = Comparison::new("e", ComparisonKind::Explicit { pairs: vec![pair("a,b")] });
        assert_eq!(membership(&explicit, a, b, false), 1.0);
        assert_eq!(membership(&explicit, b, a, false), 0.0);
        assert_eq!(membership(&explicit, b, a, true), 1.0);

        let conj = Comparison::new(
            "c",
            ComparisonKind::Conjunction {
                literals: vec![
                    Literal::new(Side::X, 3, Op::Ge, 0.5),
                    Literal::new(Side::XPrime, 3, Op::Ge, 0.5),
                ],
            },
        );
        assert_eq!(membership(&conj, a, b, false), 1.0);
        assert_eq!(membership(&conj, a, ds.get(2), false), 0.0);

        let prod = Comparison::new(
            "g",
            ComparisonKind::GroupProduct {
                left: vec!["a".into()],
                right: vec!["b".into()],
            },
        );
        assert_eq!(membership(&prod, b, a, false), 0.0);
        assert_eq!(membership(&prod, a, b, false), 1.0);
    }

    #[test]
    fn resolve_rejects_unknown_ids() {
        let ds = dataset();
        let coll = ComparisonCollection::new(
            0.5,
            false,
            vec![Comparison::new("e", ComparisonKind::Explicit { pairs: vec![pair("a,zz")] })],
        )
        .unwrap();
        match coll.resolve(&ds) {
            Err(Error::UnknownId(id)) => assert_eq!(id, "zz"),
            other => panic!("expected unknown id, got {other:?}"),
        }
    }

    #[test]
    fn collection_rejects_duplicates_and_bad_gamma() {
        let c = Comparison::new("e", ComparisonKind::Explicit { pairs: vec![] });
        assert!(ComparisonCollection::new(0.5, false, vec![c.clone(), c.clone()]).is_err());
        assert!(ComparisonCollection::new(0.0, false, vec![c.clone()]).is_err());
        assert!(ComparisonCollection::new(1.5, false, vec![c]).is_err());
    }

    #[test]
    fn resolved_membership_agrees_with_direct_membership() {
        let ds = dataset();
        let coll = ComparisonCollection::new(
            0.5,
            true,
            vec![
                Comparison::new("e", ComparisonKind::Explicit { pairs: vec![pair("a,b"), pair("c,c")] }),
                Comparison::new(
                    "c",
                    ComparisonKind::Conjunction {
                        literals: vec![Literal::new(Side::X, 3, Op::Le, 0.6)],
                    },
                ),
                Comparison::new(
                    "g",
                    ComparisonKind::GroupProduct {
                        left: vec!["a".into(), "c".into()],
                        right: vec!["b".into()],
                    },
                ),
            ],
        )
        .unwrap();
        let r = coll.resolve(&ds).unwrap();
        for (k, c) in coll.comparisons.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    let direct = membership(c, ds.get(a), ds.get(b), true);
                    assert_eq!(direct, if r.contains(k, &ds, a, b) { 1.0 } else { 0.0 });
                    // determinism
                    assert_eq!(direct, membership(c, ds.get(a), ds.get(b), true));
                }
            }
        }
    }

    #[test]
    fn largeness_counts() {
        let n = 10;
        let inds: Vec<_> = (0..n)
            .map(|i| Individual::new(format!("i{i}"), vec![i as f64 / 10.0]).unwrap())
            .collect();
        let ds = Dataset::new(inds).unwrap();
        let all: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
        let coll = ComparisonCollection::new(
            0.1,
            false,
            vec![
                Comparison::new("all", ComparisonKind::Conjunction { literals: vec![] }),
                Comparison::new(
                    "none",
                    ComparisonKind::Conjunction {
                        literals: vec![Literal::new(Side::X, 0, Op::Ge, 2.0)],
                    },
                ),
                Comparison::new(
                    "some",
                    ComparisonKind::Conjunction {
                        literals: vec![
                            Literal::new(Side::X, 0, Op::Le, 0.35),
                            Literal::new(Side::XPrime, 0, Op::Le, 0.85),
                        ],
                    },
                ),
            ],
        )
        .unwrap()
        .resolve(&ds)
        .unwrap();
        let rep = estimate_largeness(&coll, &ds, &all).unwrap();
        assert_eq!(rep.entries[0].frequency, 1.0);
        assert!(!rep.entries[0].suspect);
        assert_eq!(rep.entries[1].frequency, 0.0);
        assert!(rep.entries[1].suspect);
        // 4 left values times 9 right values out of 100
        assert!((rep.entries[2].frequency - 0.36).abs() < 1e-12);
        assert!(estimate_largeness(&coll, &ds, &[]).is_err());

        // 37 of 100 sampled pairs, with repeats
        let inside = |&&(a, b): &&(usize, usize)| a <= 3 && b <= 8;
        let sample: Vec<_> = all
            .iter()
            .filter(inside)
            .cycle()
            .take(37)
            .chain(all.iter().filter(|p| !inside(p)).take(63))
            .copied()
            .collect();
        let rep = estimate_largeness(&coll, &ds, &sample).unwrap();
        let expected = 0.37;
        assert!((rep.entries[2].frequency - expected).abs() < 1e-12);
    }

    #[test]
    fn sample_size_at_unit_scale() {
        let s = required_metric_sample_size(1, 1.0, 1.0, 0.5);
        assert!(s >= 2, "{s}");
    }

    #[test]
    fn sample_size_grows_with_collection_size() {
        let mut prev = 0;
        for k in [1usize, 2, 4, 8, 16, 1024, 1 << 20] {
            let s = required_metric_sample_size(k, 0.1, 0.1, 0.05);
            assert!(s >= prev);
            prev = s;
        }
        // concrete instance: recompute the closed form by hand
        let m: f64 = 2.0 * (1024.0f64 / 0.05).ln() / 0.01;
        let expected = (m * m.ln() / 0.1).ceil() as u64;
        assert_eq!(required_metric_sample_size(1024, 0.1, 0.1, 0.05), expected);
    }

    proptest::proptest! {
        #[test]
        fn sample_size_is_monotone(
            k in 1usize..5000,
            gamma in 0.01f64..1.0,
            tau in 0.01f64..1.0,
            delta in 0.001f64..0.9,
            bump in 1.01f64..2.0,
        ) {
            let base = required_metric_sample_size(k, gamma, tau, delta);
            proptest::prop_assert!(required_metric_sample_size(k, (gamma * bump).min(1.0), tau, delta) <= base);
            proptest::prop_assert!(required_metric_sample_size(k, gamma, tau * bump, delta) <= base);
            proptest::prop_assert!(required_metric_sample_size(k, gamma, tau, (delta * bump).min(0.99)) <= base);
            proptest::prop_assert!(required_metric_sample_size(k * 2, gamma, tau, delta) >= base);
        }
    }
}
