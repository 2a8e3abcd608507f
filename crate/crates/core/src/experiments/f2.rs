//! The bipartite F₂ construction: a secret linear concept `c` over
//! `{0,1}^n` is hidden in the metric `d(x₀, x₁) = 1 - y(x₀)`, and the
//! collection holds `S_c' = {(x₀, x₁) : c'(x₀) = 1}` for a family of
//! candidate concepts. Learning good post-processed predictions requires
//! enough metric samples to pin down `c`.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparisons::{Comparison, ComparisonCollection, ComparisonKind, ResolvedCollection};
use crate::error::{Error, Result};
use crate::gf2::{parity, rank};
use crate::metric::{MetricMeanTable, NoiseModel, PairSampler, SyntheticMetric, SyntheticSource};
use crate::model::{Dataset, Individual};
use crate::pairs::PairCache;
use crate::residuals::residual_estimates;
use crate::seeds::derive_seed;
use crate::solver::{postprocess, SolverConfig, UnsupportedPolicy};

pub const DEFAULT_GAMMA: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct F2Construction {
    pub n: usize,
    /// Bit-packed points of the left side.
    pub x0: Vec<u64>,
    pub x1_count: usize,
    pub secret: u64,
    /// Candidate concepts; contains `secret`.
    pub family: Vec<u64>,
    /// Left individuals first, then right individuals.
    pub dataset: Dataset,
    pub collection: ComparisonCollection,
    /// Ideal labels: 0 on the left, 1 on the right.
    pub labels: Vec<f64>,
    pub source: SyntheticSource,
}

impl F2Construction {
    pub fn y(&self, i: usize) -> f64 {
        if parity(self.secret, self.x0[i]) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn num_x0(&self) -> usize {
        self.x0.len()
    }

    pub fn resolve(&self) -> Result<ResolvedCollection> {
        self.collection.resolve(&self.dataset)
    }

    /// The pair distribution enumerated exactly: uniform on `X₀ × X₁`.
    pub fn exact_pairs(&self, coll: &ResolvedCollection) -> Result<PairCache> {
        let metric = &self.source.metric;
        PairCache::from_weighted(
            &self.dataset,
            coll,
            self.source
                .pairs
                .support()
                .into_iter()
                .map(|(a, b, _)| (a, b, 1.0, metric.distance(a as usize, b as usize))),
        )
    }
}

/// Candidate family size used by the sweep defaults.
pub const DEFAULT_FAMILY_SIZE: usize = 512;

/// Builds the construction. `num_x0 = 2^n` takes the whole cube; smaller
/// values sample distinct points. The family holds the secret plus distinct
/// random nonzero concepts, in increasing bit order.
pub fn generate_f2(n: usize, num_x0: usize, seed: u64, family_size: usize) -> Result<F2Construction> {
    if !(2..=62).contains(&n) {
        return Err(Error::Domain(format!("dimension {n} must lie in [2, 62]")));
    }
    let cube = 1u64 << n;
    if family_size == 0 || family_size as u64 > cube - 1 {
        return Err(Error::Domain(format!(
            "family size {family_size} must lie in [1, 2^{n} - 1] (nonzero linear concepts)"
        )));
    }
    if num_x0 == 0 || num_x0 as u64 > cube {
        return Err(Error::Domain(format!("|X0| = {num_x0} must lie in [1, 2^{n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let secret = rng.gen_range(1..cube);
    let mut family: BTreeSet<u64> = BTreeSet::from([secret]);
    while family.len() < family_size {
        family.insert(rng.gen_range(1..cube));
    }
    let family: Vec<u64> = family.into_iter().collect();
    let mut x0: Vec<u64> = if num_x0 as u64 == cube {
        (0..cube).collect()
    } else {
        sample(&mut rng, cube as usize, num_x0)
            .into_iter()
            .map(|v| v as u64)
            .collect()
    };
    x0.sort_unstable();
    let x1_count = 2 * num_x0;

    let mut individuals = Vec::with_capacity(num_x0 + x1_count);
    for (i, &v) in x0.iter().enumerate() {
        let features = (0..n).map(|j| ((v >> j) & 1) as f64 / n as f64).collect();
        individuals.push(Individual::new(format!("x0-{i}"), features)?);
    }
    for i in 0..x1_count {
        individuals.push(Individual::new(format!("x1-{i}"), vec![0.0; n])?);
    }
    let dataset = Dataset::new(individuals)?;
    let right: Vec<String> = (0..x1_count).map(|i| format!("x1-{i}")).collect();
    let comparisons = family
        .iter()
        .map(|&c| {
            let left = x0
                .iter()
                .enumerate()
                .filter(|&(_, &v)| parity(c, v))
                .map(|(i, _)| format!("x0-{i}"))
                .collect();
            Comparison::new(
                format!("c{c:0width$b}", width = n),
                ComparisonKind::GroupProduct {
                    left,
                    right: right.clone(),
                },
            )
        })
        .collect();
    let collection = ComparisonCollection::new(DEFAULT_GAMMA, false, comparisons)?;
    let mut labels = vec![0.0; num_x0];
    labels.extend(std::iter::repeat(1.0).take(x1_count));
    let metric_labels = x0
        .iter()
        .map(|&v| Some(if parity(secret, v) { 1.0 } else { -1.0 }))
        .chain(std::iter::repeat(None).take(x1_count))
        .collect();
    let source = SyntheticSource {
        metric: SyntheticMetric::BipartiteLabel {
            labels: metric_labels,
        },
        noise: NoiseModel::Exact,
        pairs: PairSampler::UniformProduct {
            left: (0..num_x0 as u32).collect(),
            right: (num_x0 as u32..(num_x0 + x1_count) as u32).collect(),
        },
    };
    Ok(F2Construction {
        n,
        x0,
        x1_count,
        secret,
        family,
        dataset,
        collection,
        labels,
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub budgets: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: u64,
    pub trial: usize,
    pub seed: u64,
    pub loss: f64,
    /// GF(2) rank of the queried left points.
    pub rank: usize,
    /// Comparisons that received at least one metric sample.
    pub supported: usize,
    /// Comparisons whose exact residual exceeds τ.
    pub violations: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub budget: u64,
    pub trials: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_rank: f64,
    pub mean_violations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub n: usize,
    pub num_x0: usize,
    pub family_size: usize,
    /// Loss with the exact metric means known for every comparison.
    pub informed_loss: f64,
    /// Loss with no metric information (every comparison assumed at distance 0).
    pub no_query_loss: f64,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<BudgetSummary>,
}

impl SweepResult {
    pub fn mean_loss(&self, budget: u64) -> Option<f64> {
        self.summary.iter().find(|s| s.budget == budget).map(|s| s.mean_loss)
    }
}

struct Shared<'a> {
    construction: &'a F2Construction,
    coll: ResolvedCollection,
    pairs: PairCache,
    exact: MetricMeanTable,
    solver: SolverConfig,
}

impl Shared<'_> {
    /// Post-processes the ideal labels under `means` and audits exactly.
    fn solve(&self, means: &MetricMeanTable, seed: u64) -> Result<(f64, usize, f64)> {
        let mut cfg = self.solver.clone();
        cfg.seed = seed;
        let out = postprocess(
            &self.construction.labels,
            &self.construction.dataset,
            &self.coll,
            &self.pairs,
            means,
            None,
            &cfg,
        )?;
        let residuals = residual_estimates(&out.predictions, &self.pairs, &self.exact, cfg.delta);
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        for r in residuals {
            let r = r?;
            if r.value > cfg.tau {
                violations += 1;
            }
            worst = worst.max(r.value);
        }
        Ok((out.report.loss, violations, worst))
    }
}

/// For each budget and trial: draw `budget` metric samples, post-process the
/// ideal labels with the resulting metric means, and record loss, exact
/// violations and the GF(2) rank of the queried left points. Comparisons
/// without samples are treated as distance 0.
pub fn run_sample_sweep(construction: &F2Construction, config: &SweepConfig) -> Result<SweepResult> {
    if config.trials == 0 {
        return Err(Error::Config("sweep needs at least one trial".into()));
    }
    let coll = construction.resolve()?;
    let pairs = construction.exact_pairs(&coll)?;
    let exact = construction.source.exact_means(&construction.dataset, &coll);
    let mut solver = config.solver.clone();
    solver.unsupported = UnsupportedPolicy::AssumeZeroDistance;
    let shared = Shared {
        construction,
        coll,
        pairs,
        exact,
        solver,
    };

    let mut budgets = config.budgets.clone();
    budgets.sort_unstable();
    budgets.dedup();
    let tasks: Vec<(u64, usize)> = budgets
        .iter()
        .flat_map(|&b| (0..config.trials).map(move |t| (b, t)))
        .collect();
    let nothing = MetricMeanTable {
        entries: shared
            .coll
            .ids()
            .iter()
            .map(|id| crate::metric::MetricMean {
                id: id.clone(),
                mean: None,
                count: 0.0,
                exact: false,
            })
            .collect(),
    };

    let mut results: Vec<Result<SweepRow>> = Vec::new();
    let mut oracles: Vec<Result<(f64, usize, f64)>> = Vec::new();
    rayon::join(
        || {
            results = tasks
                .par_iter()
                .map(|&(budget, trial)| {
                    let seed = derive_seed(derive_seed(config.seed, budget), trial as u64);
                    let draws: Vec<_> = construction
                        .source
                        .draws(budget, derive_seed(seed, 0))
                        .collect();
                    let means = if draws.is_empty() {
                        nothing.clone()
                    } else {
                        PairCache::from_samples(&construction.dataset, &shared.coll, draws.iter().copied())?
                            .metric_means()
                    };
                    let queried: Vec<u64> = draws.iter().map(|s| construction.x0[s.a as usize]).collect();
                    let supported = means.entries.iter().filter(|e| e.mean.is_some()).count();
                    let (loss, violations, max_residual) = shared.solve(&means, derive_seed(seed, 1))?;
                    Ok(SweepRow {
                        budget,
                        trial,
                        seed,
                        loss,
                        rank: rank(&queried),
                        supported,
                        violations,
                        max_residual,
                    })
                })
                .collect()
        },
        || {
            let informed_seed = derive_seed(config.seed, u64::MAX);
            oracles = [&shared.exact, &nothing]
                .par_iter()
                .map(|m| shared.solve(m, informed_seed))
                .collect();
        },
    );
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let oracles = oracles.into_iter().collect::<Result<Vec<_>>>()?;

    let summary = budgets
        .iter()
        .map(|&b| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.budget == b).collect();
            let k = sel.len() as f64;
            let mean = sel.iter().map(|r| r.loss).sum::<f64>() / k;
            let var = sel.iter().map(|r| (r.loss - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            BudgetSummary {
                budget: b,
                trials: sel.len(),
                mean_loss: mean,
                std_loss: var.sqrt(),
                mean_rank: sel.iter().map(|r| r.rank as f64).sum::<f64>() / k,
                mean_violations: sel.iter().map(|r| r.violations as f64).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(SweepResult {
        n: construction.n,
        num_x0: construction.num_x0(),
        family_size: construction.family.len(),
        informed_loss: oracles[0].0,
        no_query_loss: oracles[1].0,
        rows,
        summary,
    })
}
