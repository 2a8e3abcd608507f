//! Pair caches indexed by comparison membership.
//!
//! Draws are aggregated into distinct ordered pairs with multiplicities. Pairs
//! whose membership vectors over the collection coincide are merged into a
//! class, so a residual scan costs one pass over the pairs plus one pass over
//! (comparison, class) incidences. Within a class, pairs that share a left
//! individual and an identical right multiset reuse a sorted "block" so the
//! deviation sum over a full product costs `O(log)` per left individual.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::comparisons::{LargenessReport, ResolvedCollection};
use crate::error::{Error, Result};
use crate::metric::{MetricMean, MetricMeanTable, ResolvedSample};
use crate::model::Dataset;

const MIN_BLOCK_LEN: usize = 8;

#[derive(Debug, Clone)]
struct PairClass {
    weight: f64,
    delta_sum: f64,
    /// Pair indices scored one by one.
    explicit: Vec<u32>,
    /// `(left individual, block)` segments scored through a sorted block.
    segments: Vec<(u32, u32)>,
    /// Every member pair and the running weight, for sampling.
    members: Vec<u32>,
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Block {
    rights: Vec<u32>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PairCache {
    ids: Vec<String>,
    pairs: Vec<(u32, u32)>,
    weight: Vec<f64>,
    delta_sum: Vec<f64>,
    draws: f64,
    classes: Vec<PairClass>,
    comparison_classes: Vec<Vec<u32>>,
    comparison_cumulative: Vec<Vec<f64>>,
    comparison_weight: Vec<f64>,
    comparison_delta: Vec<f64>,
    all_cumulative: Vec<f64>,
    blocks: Vec<Block>,
    exact: bool,
}

/// Reusable buffers for [`PairCache::deviation_means`].
#[derive(Debug, Default, Clone)]
pub struct ScanBuffers {
    class_sums: Vec<f64>,
    sorted: Vec<(f64, f64)>,
    block_prefix: Vec<Vec<(f64, f64, f64)>>,
    pub deviations: Vec<f64>,
}

impl PairCache {
    /// Unlabeled pairs; each draw has multiplicity one.
    pub fn from_pairs(
        dataset: &Dataset,
        coll: &ResolvedCollection,
        pairs: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        Self::aggregate(dataset, coll, pairs.into_iter().map(|(a, b)| (a, b, 0.0)))
    }

    /// Metric samples; the delta sum per pair is retained.
    pub fn from_samples(
        dataset: &Dataset,
        coll: &ResolvedCollection,
        samples: impl IntoIterator<Item = ResolvedSample>,
    ) -> Result<Self> {
        Self::aggregate(
            dataset,
            coll,
            samples.into_iter().map(|s| (s.a, s.b, s.delta)),
        )
    }

    /// An enumerated pair distribution: `(x, x', weight, d(x, x'))`.
    /// The cache is marked exact, so estimates built on it carry no
    /// sampling tolerance.
    pub fn from_weighted(
        dataset: &Dataset,
        coll: &ResolvedCollection,
        pairs: impl IntoIterator<Item = (u32, u32, f64, f64)>,
    ) -> Result<Self> {
        let mut entries: BTreeMap<(u32, u32), (f64, f64)> = BTreeMap::new();
        for (a, b, w, d) in pairs {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!("pair weight {w} must be finite and nonnegative")));
            }
            let e = entries.entry((a, b)).or_default();
            e.0 += w;
            e.1 += w * d;
        }
        let mut cache = Self::build(dataset, coll, entries)?;
        cache.exact = true;
        Ok(cache)
    }

    fn aggregate(
        dataset: &Dataset,
        coll: &ResolvedCollection,
        draws: impl Iterator<Item = (u32, u32, f64)>,
    ) -> Result<Self> {
        let mut slot: HashMap<(u32, u32), usize> = HashMap::new();
        let mut acc: Vec<((u32, u32), (f64, f64))> = Vec::new();
        for (a, b, delta) in draws {
            let i = *slot.entry((a, b)).or_insert_with(|| {
                acc.push(((a, b), (0.0, 0.0)));
                acc.len() - 1
            });
            acc[i].1 .0 += 1.0;
            acc[i].1 .1 += delta;
        }
        Self::build(dataset, coll, acc.into_iter().collect())
    }

    fn build(
        dataset: &Dataset,
        coll: &ResolvedCollection,
        entries: BTreeMap<(u32, u32), (f64, f64)>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Domain("pair cache needs at least one pair".into()));
        }
        let n = dataset.len();
        if let Some(((a, b), _)) = entries.iter().find(|((a, b), _)| *a as usize >= n || *b as usize >= n) {
            return Err(Error::Domain(format!("pair ({a}, {b}) outside the dataset")));
        }
        let k = coll.len();
        let words = k.div_ceil(64).max(1);
        let mut pairs = Vec::with_capacity(entries.len());
        let mut weight = Vec::with_capacity(entries.len());
        let mut delta_sum = Vec::with_capacity(entries.len());
        let mut signature_class: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut signatures: Vec<Vec<u64>> = Vec::new();
        let mut class_of = Vec::with_capacity(entries.len());
        for ((a, b), (w, d)) in entries {
            let mut sig = vec![0u64; words];
            for c in 0..k {
                if coll.contains(c, dataset, a as usize, b as usize) {
                    sig[c / 64] |= 1 << (c % 64);
                }
            }
            let next = signatures.len() as u32;
            let cls = *signature_class.entry(sig.clone()).or_insert_with(|| {
                signatures.push(sig);
                next
            });
            class_of.push(cls);
            pairs.push((a, b));
            weight.push(w);
            delta_sum.push(d);
        }

        let mut members: Vec<Vec<u32>> = vec![Vec::new(); signatures.len()];
        for (i, &c) in class_of.iter().enumerate() {
            members[c as usize].push(i as u32);
        }

        // Group each class by left individual and look for shared right multisets.
        let mut block_of: HashMap<Vec<(u32, u64)>, u32> = HashMap::new();
        let mut blocks: Vec<Block> = Vec::new();
        let mut block_uses: Vec<usize> = Vec::new();
        let mut class_segments: Vec<Vec<(u32, u32, Vec<u32>)>> = Vec::with_capacity(members.len());
        for m in &members {
            let mut by_left: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for &p in m {
                by_left.entry(pairs[p as usize].0).or_default().push(p);
            }
            let mut segs = Vec::new();
            for (left, ps) in by_left {
                if ps.len() < MIN_BLOCK_LEN {
                    segs.push((left, u32::MAX, ps));
                    continue;
                }
                let key: Vec<(u32, u64)> = ps
                    .iter()
                    .map(|&p| (pairs[p as usize].1, weight[p as usize].to_bits()))
                    .collect();
                let next = blocks.len() as u32;
                let id = *block_of.entry(key).or_insert_with(|| {
                    blocks.push(Block {
                        rights: ps.iter().map(|&p| pairs[p as usize].1).collect(),
                        weights: ps.iter().map(|&p| weight[p as usize]).collect(),
                    });
                    block_uses.push(0);
                    next
                });
                block_uses[id as usize] += 1;
                segs.push((left, id, ps));
            }
            class_segments.push(segs);
        }

        // Only blocks used at least twice are worth sorting; remap the rest.
        let mut remap = vec![u32::MAX; blocks.len()];
        let mut kept = Vec::new();
        for (i, b) in blocks.into_iter().enumerate() {
            if block_uses[i] >= 2 {
                remap[i] = kept.len() as u32;
                kept.push(b);
            }
        }

        let classes: Vec<PairClass> = members
            .iter()
            .zip(class_segments)
            .map(|(m, segs)| {
                let mut explicit = Vec::new();
                let mut segments = Vec::new();
                for (left, block, ps) in segs {
                    if block != u32::MAX && remap[block as usize] != u32::MAX {
                        segments.push((left, remap[block as usize]));
                    } else {
                        explicit.extend(ps);
                    }
                }
                let mut run = 0.0;
                let cumulative = m
                    .iter()
                    .map(|&p| {
                        run += weight[p as usize];
                        run
                    })
                    .collect();
                PairClass {
                    weight: m.iter().map(|&p| weight[p as usize]).sum(),
                    delta_sum: m.iter().map(|&p| delta_sum[p as usize]).sum(),
                    explicit,
                    segments,
                    members: m.clone(),
                    cumulative,
                }
            })
            .collect();

        let mut comparison_classes = vec![Vec::new(); k];
        for (ci, sig) in signatures.iter().enumerate() {
            for (c, list) in comparison_classes.iter_mut().enumerate() {
                if sig[c / 64] >> (c % 64) & 1 == 1 {
                    list.push(ci as u32);
                }
            }
        }
        let comparison_weight: Vec<f64> = comparison_classes
            .iter()
            .map(|cs| cs.iter().map(|&c| classes[c as usize].weight).sum())
            .collect();
        let comparison_delta = comparison_classes
            .iter()
            .map(|cs| cs.iter().map(|&c| classes[c as usize].delta_sum).sum())
            .collect();
        let comparison_cumulative = comparison_classes
            .iter()
            .map(|cs| {
                let mut run = 0.0;
                cs.iter()
                    .map(|&c| {
                        run += classes[c as usize].weight;
                        run
                    })
                    .collect()
            })
            .collect();
        let mut run = 0.0;
        let all_cumulative = weight
            .iter()
            .map(|w| {
                run += w;
                run
            })
            .collect();

        Ok(Self {
            ids: coll.ids().to_vec(),
            draws: weight.iter().sum(),
            pairs,
            weight,
            delta_sum,
            classes,
            comparison_classes,
            comparison_cumulative,
            comparison_weight,
            comparison_delta,
            all_cumulative,
            blocks: kept,
            exact: false,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// True when the cache enumerates a distribution instead of sampling it.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn num_comparisons(&self) -> usize {
        self.ids.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Total multiplicity (number of draws for sampled caches).
    pub fn total_weight(&self) -> f64 {
        self.draws
    }

    pub fn pair(&self, i: usize) -> (usize, usize) {
        let (a, b) = self.pairs[i];
        (a as usize, b as usize)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weight[i]
    }

    pub fn delta_sum(&self, i: usize) -> f64 {
        self.delta_sum[i]
    }

    /// Total multiplicity of pairs inside comparison `k`.
    pub fn comparison_weight(&self, k: usize) -> f64 {
        self.comparison_weight[k]
    }

    pub fn supports(&self, k: usize) -> bool {
        self.comparison_weight[k] > 0.0
    }

    /// Member pair indices of comparison `k`.
    pub fn members(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.comparison_classes[k]
            .iter()
            .flat_map(move |&c| self.classes[c as usize].members.iter().map(|&p| p as usize))
    }

    /// Mean delta per comparison; unsupported comparisons get `None`.
    pub fn metric_means(&self) -> MetricMeanTable {
        MetricMeanTable {
            entries: self
                .ids
                .iter()
                .enumerate()
                .map(|(k, id)| {
                    let w = self.comparison_weight[k];
                    MetricMean {
                        id: id.clone(),
                        mean: (w > 0.0).then(|| self.comparison_delta[k] / w),
                        count: w,
                        exact: self.exact,
                    }
                })
                .collect(),
        }
    }

    pub fn largeness(&self, coll: &ResolvedCollection) -> LargenessReport {
        LargenessReport::from_hits(coll, &self.comparison_weight, self.draws)
    }

    /// Weighted mean of `|f(x) - f(x')|` over each comparison's pairs
    /// (`NaN` where unsupported). Result lives in `buf.deviations`.
    pub fn deviation_means(&self, preds: &[f64], buf: &mut ScanBuffers) {
        self.class_deviation_sums(preds, buf);
        buf.deviations.clear();
        for (k, cs) in self.comparison_classes.iter().enumerate() {
            let w = self.comparison_weight[k];
            if w > 0.0 {
                let s: f64 = cs.iter().map(|&c| buf.class_sums[c as usize]).sum();
                buf.deviations.push(s / w);
            } else {
                buf.deviations.push(f64::NAN);
            }
        }
    }

    fn class_deviation_sums(&self, preds: &[f64], buf: &mut ScanBuffers) {
        buf.block_prefix.resize_with(self.blocks.len(), Vec::new);
        for (block, prefix) in self.blocks.iter().zip(buf.block_prefix.iter_mut()) {
            buf.sorted.clear();
            buf.sorted.extend(
                block
                    .rights
                    .iter()
                    .zip(&block.weights)
                    .map(|(&r, &w)| (preds[r as usize], w)),
            );
            buf.sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
            prefix.clear();
            let (mut sw, mut swf) = (0.0, 0.0);
            for &(f, w) in &buf.sorted {
                sw += w;
                swf += w * f;
                prefix.push((f, sw, swf));
            }
        }
        buf.class_sums.clear();
        for class in &self.classes {
            let mut s = 0.0;
            for &p in &class.explicit {
                let (a, b) = self.pairs[p as usize];
                s += self.weight[p as usize] * (preds[a as usize] - preds[b as usize]).abs();
            }
            for &(left, block) in &class.segments {
                let prefix = &buf.block_prefix[block as usize];
                let fa = preds[left as usize];
                let (_, tw, twf) = *prefix.last().expect("blocks are nonempty");
                let cut = prefix.partition_point(|e| e.0 <= fa);
                let (lw, lwf) = if cut == 0 {
                    (0.0, 0.0)
                } else {
                    (prefix[cut - 1].1, prefix[cut - 1].2)
                };
                s += (fa * lw - lwf) + ((twf - lwf) - fa * (tw - lw));
            }
            buf.class_sums.push(s);
        }
    }

    /// Draws a member pair of comparison `k` with probability proportional
    /// to its multiplicity.
    pub fn sample_member<R: Rng>(&self, k: usize, rng: &mut R) -> Option<usize> {
        let cum = &self.comparison_cumulative[k];
        let total = *cum.last()?;
        if total <= 0.0 {
            return None;
        }
        let u = rng.gen::<f64>() * total;
        let ci = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let class = &self.classes[self.comparison_classes[k][ci] as usize];
        let u = rng.gen::<f64>() * class.weight;
        let pi = class.cumulative.partition_point(|&c| c <= u).min(class.members.len() - 1);
        Some(class.members[pi] as usize)
    }

    /// Draws any cached pair with probability proportional to its multiplicity.
    pub fn sample_any<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.gen::<f64>() * self.draws;
        self.all_cumulative
            .partition_point(|&c| c <= u)
            .min(self.pairs.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparisons::{Comparison, ComparisonCollection, ComparisonKind, Literal, Op, Side};
    use crate::model::Individual;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Dataset, ResolvedCollection) {
        let ds = Dataset::new(
            (0..n)
                .map(|i| Individual::new(format!("i{i}"), vec![i as f64 / n as f64]).unwrap())
                .collect(),
        )
        .unwrap();
        let coll = ComparisonCollection::new(
            0.05,
            false,
            vec![
                Comparison::new(
                    "low-high",
                    ComparisonKind::Conjunction {
                        literals: vec![
                            Literal::new(Side::X, 0, Op::Le, 0.5),
                            Literal::new(Side::XPrime, 0, Op::Ge, 0.5),
                        ],
                    },
                ),
                Comparison::new(
                    "left-third",
                    ComparisonKind::GroupProduct {
                        left: (0..n / 3).map(|i| format!("i{i}")).collect(),
                        right: (0..n).map(|i| format!("i{i}")).collect(),
                    },
                ),
                Comparison::new("all", ComparisonKind::Conjunction { literals: vec![] }),
            ],
        )
        .unwrap()
        .resolve(&ds)
        .unwrap();
        (ds, coll)
    }

    #[test]
    fn deviation_means_match_brute_force() {
        let n = 40;
        let (ds, coll) = setup(n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // full product, so the sorted-block path is exercised
        let full = (0..n as u32).flat_map(|a| (0..n as u32).map(move |b| (a, b, 1.0, 0.0)));
        let cache = PairCache::from_weighted(&ds, &coll, full).unwrap();
        assert!(!cache.blocks.is_empty());
        let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut buf = ScanBuffers::default();
        cache.deviation_means(&preds, &mut buf);
        for k in 0..coll.len() {
            let (mut s, mut w) = (0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    if coll.contains(k, &ds, a, b) {
                        s += (preds[a] - preds[b]).abs();
                        w += 1.0;
                    }
                }
            }
            assert!((buf.deviations[k] - s / w).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn sampled_cache_aggregates_multiplicities() {
        let (ds, coll) = setup(12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<(u32, u32)> = (0..500)
            .map(|_| (rng.gen_range(0..12), rng.gen_range(0..12)))
            .collect();
        let cache = PairCache::from_pairs(&ds, &coll, draws.iter().copied()).unwrap();
        assert_eq!(cache.total_weight(), 500.0);
        let hits = draws
            .iter()
            .filter(|&&(a, b)| coll.contains(0, &ds, a as usize, b as usize))
            .count();
        assert_eq!(cache.comparison_weight(0), hits as f64);
        let members: f64 = cache.members(0).map(|p| cache.weight(p)).sum();
        assert_eq!(members, hits as f64);
    }

    #[test]
    fn member_sampling_stays_inside_the_comparison() {
        let (ds, coll) = setup(15);
        let all = (0..15u32).flat_map(|a| (0..15u32).map(move |b| (a, b)));
        let cache = PairCache::from_pairs(&ds, &coll, all).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..coll.len() {
            for _ in 0..200 {
                let p = cache.sample_member(k, &mut rng).unwrap();
                let (a, b) = cache.pair(p);
                assert!(coll.contains(k, &ds, a, b));
            }
        }
    }

    #[test]
    fn empty_cache_is_rejected() {
        let (ds, coll) = setup(4);
        assert!(PairCache::from_pairs(&ds, &coll, std::iter::empty()).is_err());
        assert!(PairCache::from_pairs(&ds, &coll, [(0, 99)]).is_err());
    }
}
