//! Switching subgradient descent over the box `[-B, B]^n`, and the
//! post-processing mode that projects fixed predictions onto the
//! multifair set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparisons::{LargenessReport, ResolvedCollection, SoftComparison};
use crate::error::{Error, Result};
use crate::metric::MetricMeanTable;
use crate::model::{clip_unit, Dataset, Design, LossKind, LossSpec};
use crate::pairs::{PairCache, ScanBuffers};
use crate::residuals::{clipped_predictions, residual_estimates, sign, ResidualEstimate};
use crate::search::{
    build_pair_labels, find_violation_learned, select_violation, AgnosticLearner,
    ExhaustiveLearner, LearnContext, StumpLearner,
};
use crate::seeds::derive_seed;

pub const DEFAULT_MAX_ITERATIONS: u64 = 50_000_000;

/// What to do with comparisons that no metric sample falls in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsupportedPolicy {
    #[default]
    Error,
    /// Treat the unknown metric mean as 0, the most demanding value.
    AssumeZeroDistance,
}

/// Norm bounds behind the step sizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormBound {
    /// `M = 2√n`, `G = g√n`, from coordinatewise bounds.
    #[default]
    Coordinate,
    /// `M = 2`, `G = g`: valid because `‖x - x'‖₂ ≤ ‖x - x'‖₁ ≤ 2` and `‖x‖₂ ≤ 1`.
    Euclidean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    Exhaustive,
    Stump,
}

impl LearnerKind {
    pub fn learner(self) -> &'static dyn AgnosticLearner {
        match self {
            LearnerKind::Exhaustive => &ExhaustiveLearner,
            LearnerKind::Stump => &StumpLearner,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Exhaustive,
    Learned {
        #[serde(default)]
        learner: LearnerKind,
    },
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_cap() -> u64 {
    DEFAULT_MAX_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tau: f64,
    pub delta: f64,
    pub bound: f64,
    pub loss: LossSpec,
    #[serde(default)]
    pub t_override: Option<u64>,
    /// Hard cap on `T`; a longer run is refused, never truncated.
    #[serde(default = "default_cap")]
    pub max_iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub minibatch: usize,
    #[serde(default)]
    pub search: SearchMode,
    #[serde(default)]
    pub unsupported: UnsupportedPolicy,
    #[serde(default)]
    pub norm_bound: NormBound,
    #[serde(default = "yes")]
    pub record_log: bool,
    #[serde(default)]
    pub record_iterates: bool,
}

impl SolverConfig {
    pub fn new(tau: f64, delta: f64, bound: f64, loss: LossKind) -> Self {
        Self {
            tau,
            delta,
            bound,
            loss: LossSpec::new(loss),
            t_override: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 0,
            minibatch: 1,
            search: SearchMode::Exhaustive,
            unsupported: UnsupportedPolicy::Error,
            norm_bound: NormBound::Coordinate,
            record_log: true,
            record_iterates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.into()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return bad("bound must be positive");
        }
        if self.minibatch == 0 {
            return bad("minibatch must be at least 1");
        }
        if self.t_override == Some(0) {
            return bad("t_override must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub eta_l: f64,
    pub eta_r: f64,
    pub t: u64,
    pub g: f64,
    pub m: f64,
    /// Iteration count from the closed form, before any override.
    pub t_formula: f64,
}

/// Step sizes and iteration count:
/// `η_R = τ/M²`, `η_L = τ/(GM)`, `T = ⌈900 M² B² n ln(n/δ) / τ²⌉`.
pub fn derive_hyperparameters(config: &SolverConfig, n: usize) -> Result<Hyperparameters> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let nf = n as f64;
    let g_coord = config.loss.lipschitz_bound();
    let (m, g) = match config.norm_bound {
        NormBound::Coordinate => (2.0 * nf.sqrt(), g_coord * nf.sqrt()),
        NormBound::Euclidean => (2.0, g_coord),
    };
    let tau = config.tau;
    let t_formula =
        (900.0 * m * m * config.bound * config.bound * nf * (nf / config.delta).ln() / (tau * tau)).ceil();
    let t = match config.t_override {
        Some(t) => t,
        None => t_formula as u64,
    };
    if t > config.max_iterations || (config.t_override.is_none() && t_formula > config.max_iterations as f64) {
        return Err(Error::Config(format!(
            "iteration count {t_formula} exceeds the cap {}; set t_override or raise max_iterations",
            config.max_iterations
        )));
    }
    Ok(Hyperparameters {
        eta_l: tau / (g * m),
        eta_r: tau / (m * m),
        t,
        g,
        m,
        t_formula,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Objective,
    Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub kind: StepKind,
    pub comparison: Option<String>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub weights: Vec<f64>,
    pub feasible_iterations: u64,
    pub total_iterations: u64,
    pub hyperparameters: Hyperparameters,
    pub labeled_consumed: u64,
    pub metric_samples: f64,
    pub pair_cache_weight: f64,
    /// Mean loss of the averaged hypothesis over the labeled examples.
    pub loss: f64,
    pub residuals: Vec<ResidualEstimate>,
    /// Comparisons whose metric mean was assumed to be zero.
    pub assumed_zero: Vec<String>,
    pub largeness: Option<LargenessReport>,
    pub log: Vec<IterationRecord>,
    /// Soft comparisons found by the learner, in order of discovery.
    pub learned: Vec<SoftComparison>,
    #[serde(skip)]
    pub feasible_iterates: Vec<Vec<f64>>,
}

/// Everything the solver reads.
#[derive(Clone, Copy)]
pub struct TrainProblem<'a> {
    /// Individuals as the collection sees them.
    pub dataset: &'a Dataset,
    /// Encoding used by the linear predictor; one row per individual.
    pub design: &'a Design,
    /// `(individual index, label)`.
    pub labeled: &'a [(usize, f64)],
    pub collection: &'a ResolvedCollection,
    pub pairs: &'a PairCache,
    pub means: &'a MetricMeanTable,
    /// Raw metric samples; required by the learned search.
    pub metric: Option<&'a PairCache>,
}

/// Finite labeled set consumed as a seeded shuffle, reshuffled on exhaustion.
struct LabelStream<'a> {
    labeled: &'a [(usize, f64)],
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> LabelStream<'a> {
    fn new(labeled: &'a [(usize, f64)], seed: u64) -> Self {
        Self {
            labeled,
            order: (0..labeled.len()).collect(),
            pos: labeled.len(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> (usize, f64) {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let e = self.labeled[self.order[self.pos]];
        self.pos += 1;
        e
    }
}

/// Applies the unsupported-comparison policy to a metric-mean table.
pub fn apply_unsupported_policy(
    means: &MetricMeanTable,
    policy: UnsupportedPolicy,
) -> Result<(MetricMeanTable, Vec<String>)> {
    let missing: Vec<String> = means.unsupported().map(str::to_string).collect();
    if missing.is_empty() {
        return Ok((means.clone(), missing));
    }
    match policy {
        UnsupportedPolicy::Error if means.all_unsupported() => Err(Error::AllUnsupported),
        UnsupportedPolicy::Error => Err(Error::Unsupported(missing[0].clone())),
        UnsupportedPolicy::AssumeZeroDistance => {
            let mut filled = means.clone();
            for e in &mut filled.entries {
                if e.mean.is_none() {
                    e.mean = Some(0.0);
                }
            }
            Ok((filled, missing))
        }
    }
}

fn check_problem(problem: &TrainProblem<'_>) -> Result<()> {
    let rows = problem.design.rows();
    if rows != problem.dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: problem.dataset.len(),
            actual: rows,
        });
    }
    if problem.labeled.is_empty() {
        return Err(Error::Config("training needs at least one labeled example".into()));
    }
    for &(i, y) in problem.labeled {
        if i >= rows {
            return Err(Error::Domain(format!("labeled example index {i} out of range")));
        }
        if !(-1.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("label {y} outside [-1, 1]")));
        }
    }
    if problem.means.len() != problem.collection.len()
        || problem.pairs.num_comparisons() != problem.collection.len()
    {
        return Err(Error::Config(
            "metric means and pair cache must be built for the same collection".into(),
        ));
    }
    Ok(())
}

/// Runs the switching subgradient method from `init` (zero when absent).
pub fn train(problem: TrainProblem<'_>, config: &SolverConfig, init: Option<&[f64]>) -> Result<TrainReport> {
    check_problem(&problem)?;
    let n = problem.design.dim();
    let hp = derive_hyperparameters(config, n)?;
    let coll = problem.collection;
    let (means, assumed_zero) = apply_unsupported_policy(problem.means, config.unsupported)?;

    let largeness = if coll.is_empty() {
        None
    } else {
        let rep = problem.pairs.largeness(coll);
        if let Some(s) = rep.suspects().next() {
            return Err(Error::NotLarge {
                id: s.id.clone(),
                frequency: s.frequency,
                threshold: coll.gamma() / 2.0,
            });
        }
        Some(rep)
    };
    let learner = match config.search {
        SearchMode::Exhaustive => None,
        SearchMode::Learned { learner } => {
            if problem.metric.is_none() {
                return Err(Error::Config("learned search needs the metric sample cache".into()));
            }
            Some(learner.learner())
        }
    };

    let mut w: Vec<f64> = match init {
        Some(v) if v.len() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: v.len(),
            })
        }
        Some(v) => v.iter().map(|x| x.clamp(-config.bound, config.bound)).collect(),
        None => vec![0.0; n],
    };
    let bound = config.bound;
    let threshold = 4.0 * config.tau / 5.0;
    let mut labels = LabelStream::new(problem.labeled, derive_seed(config.seed, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let mut raw = Vec::with_capacity(problem.design.rows());
    let mut preds = Vec::with_capacity(problem.design.rows());
    let mut buf = ScanBuffers::default();
    let mut values = vec![0.0; coll.len()];
    let mut sum = vec![0.0; n];
    let mut feasible = 0u64;
    let mut consumed = 0u64;
    let mut log = Vec::new();
    let mut learned = Vec::new();
    let mut iterates = Vec::new();
    let mut grad = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    for it in 0..hp.t {
        problem.design.raw_scores_into(&w, &mut raw);
        preds.clear();
        preds.extend(raw.iter().map(|&t| clip_unit(t)));

        // Which comparison, if any, to step on; `None` means feasible.
        let step: Option<(String, f64, Box<dyn Fn(&mut ChaCha8Rng) -> Option<usize> + '_>)> =
            if coll.is_empty() {
                None
            } else if let Some(learner) = learner {
                let metric = problem.metric.expect("checked above");
                let lab = build_pair_labels(&preds, metric);
                let ctx = LearnContext {
                    dataset: problem.dataset,
                    collection: coll,
                    metric,
                };
                find_violation_learned(&lab, learner, ctx, coll.gamma(), config.tau)?.map(|v| {
                    let soft = v.comparison;
                    let cache = problem.pairs;
                    let weights: Vec<f64> = (0..cache.num_pairs())
                        .map(|p| {
                            let (a, b) = cache.pair(p);
                            cache.weight(p) * soft.weight(coll, problem.dataset, a, b)
                        })
                        .collect();
                    let total: f64 = weights.iter().sum();
                    let id = soft.id.clone();
                    learned.push(soft);
                    let sampler: Box<dyn Fn(&mut ChaCha8Rng) -> Option<usize>> =
                        Box::new(move |rng: &mut ChaCha8Rng| {
                            if total <= 0.0 {
                                return None;
                            }
                            let mut u = rng.gen::<f64>() * total;
                            for (p, &x) in weights.iter().enumerate() {
                                if u < x {
                                    return Some(p);
                                }
                                u -= x;
                            }
                            weights.iter().rposition(|&x| x > 0.0)
                        });
                    (id, v.soft_residual, sampler)
                })
            } else {
                problem.pairs.deviation_means(&preds, &mut buf);
                for (k, v) in values.iter_mut().enumerate() {
                    *v = buf.deviations[k] - means.mean(k).expect("policy applied");
                }
                select_violation(&values, coll.ids(), threshold).map(|v| {
                    let cache = problem.pairs;
                    let k = v.index;
                    let sampler: Box<dyn Fn(&mut ChaCha8Rng) -> Option<usize>> =
                        Box::new(move |rng: &mut ChaCha8Rng| cache.sample_member(k, rng));
                    (v.id, v.residual, sampler)
                })
            };

        match step {
            Some((id, residual, sample)) => {
                let scale = 1.0 / config.minibatch as f64;
                for _ in 0..config.minibatch {
                    let Some(p) = sample(&mut rng) else { continue };
                    let (a, b) = problem.pairs.pair(p);
                    let s = sign(raw[a] - raw[b]);
                    if s != 0.0 {
                        for (i, sc) in [(a, s * scale), (b, -s * scale)] {
                            let (cols, vals) = problem.design.row(i);
                            for (&c, &x) in cols.iter().zip(vals) {
                                grad[c as usize] += sc * x;
                                touched.push(c as usize);
                            }
                        }
                    }
                }
                for &c in &touched {
                    if grad[c] != 0.0 {
                        w[c] = (w[c] - hp.eta_r * grad[c]).clamp(-bound, bound);
                        grad[c] = 0.0;
                    }
                }
                touched.clear();
                if config.record_log {
                    log.push(IterationRecord {
                        iteration: it,
                        kind: StepKind::Constraint,
                        comparison: Some(id),
                        residual: Some(residual),
                    });
                }
            }
            None => {
                feasible += 1;
                sum.iter_mut().zip(&w).for_each(|(s, x)| *s += x);
                if config.record_iterates {
                    iterates.push(w.clone());
                }
                let (i, y) = labels.next();
                consumed += 1;
                let t = raw[i];
                if t.abs() < 1.0 {
                    let d = config.loss.derivative(t, y);
                    if d != 0.0 {
                        let (cols, vals) = problem.design.row(i);
                        for (&c, &x) in cols.iter().zip(vals) {
                            let c = c as usize;
                            w[c] = (w[c] - hp.eta_l * d * x).clamp(-bound, bound);
                        }
                    }
                }
                if config.record_log {
                    log.push(IterationRecord {
                        iteration: it,
                        kind: StepKind::Objective,
                        comparison: None,
                        residual: None,
                    });
                }
            }
        }
    }

    if feasible == 0 {
        let preds = clipped_predictions(problem.design, &w);
        let mut worst: Vec<(String, f64)> = residual_estimates(&preds, problem.pairs, &means, config.delta)
            .into_iter()
            .filter_map(|r| r.ok())
            .map(|r| (r.comparison, r.value))
            .collect();
        worst.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        worst.truncate(5);
        return Err(Error::Infeasible {
            iterations: hp.t,
            most_violated: worst,
        });
    }

    let weights: Vec<f64> = sum.iter().map(|s| s / feasible as f64).collect();
    let preds = clipped_predictions(problem.design, &weights);
    let residuals = if coll.is_empty() {
        Vec::new()
    } else {
        residual_estimates(&preds, problem.pairs, &means, config.delta)
            .into_iter()
            .collect::<Result<Vec<_>>>()?
    };
    let loss = problem
        .labeled
        .iter()
        .map(|&(i, y)| config.loss.eval(preds[i], y))
        .sum::<f64>()
        / problem.labeled.len() as f64;
    Ok(TrainReport {
        weights,
        feasible_iterations: feasible,
        total_iterations: hp.t,
        hyperparameters: hp,
        labeled_consumed: consumed,
        metric_samples: problem.metric.map_or(0.0, |m| m.total_weight()),
        pair_cache_weight: problem.pairs.total_weight(),
        loss,
        residuals,
        assumed_zero,
        largeness,
        log,
        learned,
        feasible_iterates: iterates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessOutput {
    pub predictions: Vec<f64>,
    pub report: TrainReport,
}

/// Projects `predictions` toward the multifair set: each individual becomes a
/// standard basis vector, `B = 1`, and the squared loss pulls toward the
/// input. The descent starts at the input, so a feasible input never moves.
pub fn postprocess(
    predictions: &[f64],
    dataset: &Dataset,
    collection: &ResolvedCollection,
    pairs: &PairCache,
    means: &MetricMeanTable,
    metric: Option<&PairCache>,
    config: &SolverConfig,
) -> Result<PostprocessOutput> {
    if predictions.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            actual: predictions.len(),
        });
    }
    if let Some(p) = predictions.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("prediction {p} outside [-1, 1]")));
    }
    let mut cfg = config.clone();
    cfg.bound = 1.0;
    cfg.loss = LossSpec::new(LossKind::Squared);
    let design = Design::identity(dataset.len());
    let labeled: Vec<(usize, f64)> = predictions.iter().copied().enumerate().collect();
    let problem = TrainProblem {
        dataset,
        design: &design,
        labeled: &labeled,
        collection,
        pairs,
        means,
        metric,
    };
    let report = train(problem, &cfg, Some(predictions))?;
    Ok(PostprocessOutput {
        predictions: report.weights.clone(),
        report,
    })
}
