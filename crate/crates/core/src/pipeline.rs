//! End-to-end runs behind the command-line subcommands. Each run reads the
//! inputs named by a [`RunConfig`], writes its artifacts into an output
//! directory and returns a [`RunSummary`] of what it read and wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{audit, AuditOptions, AuditReport};
use crate::comparisons::{required_metric_sample_size, ComparisonCollection, ResolvedCollection};
use crate::config::{
    default_sweep_solver, GenConfig, HeldOutConfig, MetricConfig, PairCacheConfig, PairSamplerConfig, RunConfig,
    SyntheticMetricConfig,
};
use crate::error::{Error, Result};
use crate::experiments::{
    generate_f2, generate_subpop_scenario, run_sample_sweep, BudgetSummary, SweepConfig,
};
use crate::io::{self, IndividualRecord, Individuals};
use crate::metric::{resolve_samples, MetricSample, NoiseModel, PairSampler, ResolvedSample, SyntheticMetric, SyntheticSource};
use crate::model::{Dataset, Design, LossKind, LossSpec};
use crate::pairs::PairCache;
use crate::residuals::{clipped_predictions, size_pair_cache};
use crate::seeds::derive_seed;
use crate::solver::{postprocess, train, SolverConfig, TrainProblem, TrainReport};

/// Stream ids passed to [`derive_seed`] with the master seed.
pub mod streams {
    pub const METRIC: u64 = 10;
    pub const PAIRS: u64 = 11;
    pub const HELD_OUT: u64 = 12;
    pub const SOLVER: u64 = 13;
    pub const GEN: u64 = 14;
    pub const SWEEP: u64 = 15;
}

pub const PREDICTIONS: &str = "predictions.jsonl";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const POSTPROCESS_REPORT: &str = "postprocess_report.json";
pub const ITERATES: &str = "iterates.csv";
pub const AUDIT_REPORT: &str = "audit_report.json";
pub const AUDIT_SUMMARY: &str = "audit_summary.csv";
pub const SWEEP_ROWS: &str = "sweep.csv";
pub const SWEEP_SUMMARY: &str = "sweep_summary.json";
pub const INDIVIDUALS: &str = "individuals.jsonl";
pub const COLLECTION: &str = "collection.json";
pub const METRIC_SAMPLES: &str = "metric_samples.csv";
pub const CONFIG: &str = "config.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Files read, as resolved from the config.
    pub inputs: Vec<PathBuf>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

impl RunSummary {
    fn seed(&mut self, name: &str, master: u64, stream: u64) -> u64 {
        let s = derive_seed(master, stream);
        self.seeds.insert(name.to_string(), s);
        s
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    fn wrote(&mut self, name: &str) {
        self.outputs.push(PathBuf::from(name));
    }
}

struct Inputs {
    individuals: Individuals,
    resolved: ResolvedCollection,
}

fn load_inputs(cfg: &RunConfig, summary: &mut RunSummary) -> Result<Inputs> {
    let ind_path = cfg.individuals_path()?;
    let coll_path = cfg.collection_path()?;
    let individuals = io::read_individuals(ind_path)?;
    let collection: ComparisonCollection = io::read_collection(coll_path)?;
    let resolved = collection.resolve(&individuals.dataset)?;
    summary.inputs.push(ind_path.to_path_buf());
    summary.inputs.push(coll_path.to_path_buf());
    log::info!(
        "{} individuals of dimension {}, {} comparisons",
        individuals.dataset.len(),
        individuals.dataset.dim(),
        resolved.len()
    );
    Ok(Inputs { individuals, resolved })
}

fn ids_to_indices(ds: &Dataset, ids: &[String]) -> Result<Vec<u32>> {
    ids.iter().map(|id| ds.index_of(id).map(|i| i as u32)).collect()
}

/// Builds the synthetic source a `synthetic` metric section describes.
pub fn synthetic_source(
    metric: &SyntheticMetricConfig,
    noise: NoiseModel,
    pairs: &PairSamplerConfig,
    individuals: &Individuals,
) -> Result<SyntheticSource> {
    let ds = &individuals.dataset;
    let score = |i: usize| {
        individuals.scores[i].ok_or_else(|| Error::Config(format!("individual `{}` has no score", ds.get(i).id())))
    };
    let metric = match metric {
        SyntheticMetricConfig::Constant { value } => {
            if !(0.0..=2.0).contains(value) {
                return Err(Error::Config(format!("constant metric {value} outside [0, 2]")));
            }
            SyntheticMetric::Constant(*value)
        }
        SyntheticMetricConfig::ScoreDifference => SyntheticMetric::ScoreDifference {
            scores: (0..ds.len()).map(score).collect::<Result<_>>()?,
        },
        SyntheticMetricConfig::BipartiteLabel => {
            if let Some(y) = individuals.scores.iter().flatten().find(|y| !(-1.0..=1.0).contains(*y)) {
                return Err(Error::Config(format!("bipartite label {y} outside [-1, 1]")));
            }
            SyntheticMetric::BipartiteLabel {
                labels: individuals.scores.clone(),
            }
        }
    };
    if let NoiseModel::Uniform { half_width } = noise {
        if !(half_width >= 0.0 && half_width.is_finite()) {
            return Err(Error::Config(format!("noise half width {half_width} must be finite and >= 0")));
        }
    }
    let pairs = match pairs {
        PairSamplerConfig::All => PairSampler::all(ds.len()),
        PairSamplerConfig::Product { left, right } => PairSampler::UniformProduct {
            left: ids_to_indices(ds, left)?,
            right: ids_to_indices(ds, right)?,
        },
        PairSamplerConfig::Pairs { pairs } => PairSampler::Pairs(
            pairs
                .iter()
                .map(|(a, b)| Ok((ds.index_of(a)? as u32, ds.index_of(b)? as u32)))
                .collect::<Result<_>>()?,
        ),
    };
    pairs.validate(ds.len())?;
    Ok(SyntheticSource { metric, noise, pairs })
}

fn configured_source(cfg: &RunConfig, individuals: &Individuals) -> Result<Option<SyntheticSource>> {
    match cfg.metric()? {
        MetricConfig::File { .. } => Ok(None),
        MetricConfig::Synthetic {
            metric, noise, pairs, ..
        } => synthetic_source(metric, *noise, pairs, individuals).map(Some),
    }
}

/// Metric samples and the cache built from them.
struct MetricData {
    samples: Vec<ResolvedSample>,
    cache: PairCache,
}

fn metric_data(
    cfg: &RunConfig,
    inputs: &Inputs,
    source: Option<&SyntheticSource>,
    solver: &SolverConfig,
    summary: &mut RunSummary,
) -> Result<MetricData> {
    let ds = &inputs.individuals.dataset;
    let coll = &inputs.resolved;
    let required = required_metric_sample_size(coll.len(), coll.gamma(), solver.tau / 5.0, solver.delta);
    let samples = match (cfg.metric()?, source) {
        (MetricConfig::File { path, samples }, _) => {
            summary.inputs.push(path.clone());
            let all = resolve_samples(ds, &io::read_metric_samples(path)?)?;
            match samples {
                Some(m) if (all.len() as u64) < *m => {
                    return Err(Error::Ingestion(format!(
                        "metric sample file holds {} samples, {m} requested",
                        all.len()
                    )))
                }
                Some(m) => all[..*m as usize].to_vec(),
                None => all,
            }
        }
        (MetricConfig::Synthetic { samples, .. }, Some(src)) => {
            let m = samples.unwrap_or(required);
            let seed = summary.seed("metric", cfg.seed, streams::METRIC);
            src.draws(m, seed).collect()
        }
        (MetricConfig::Synthetic { .. }, None) => unreachable!("synthetic source is built first"),
    };
    if samples.is_empty() {
        return Err(Error::Ingestion("no metric samples".into()));
    }
    if (samples.len() as u64) < required {
        summary.warn(format!(
            "{} metric samples is below the concentration size {required} for tau/5 = {}",
            samples.len(),
            solver.tau / 5.0
        ));
    }
    let cache = PairCache::from_samples(ds, coll, samples.iter().copied())?;
    Ok(MetricData { samples, cache })
}

fn pair_cache(
    cfg: &RunConfig,
    inputs: &Inputs,
    source: Option<&SyntheticSource>,
    metric: &MetricData,
    tau: f64,
    delta: f64,
    bound: f64,
    summary: &mut RunSummary,
) -> Result<PairCache> {
    let ds = &inputs.individuals.dataset;
    let coll = &inputs.resolved;
    let required = size_pair_cache(coll.len(), coll.gamma(), tau, delta, bound);
    let (cache, drawn) = match &cfg.pair_cache {
        PairCacheConfig::MetricSamples => (
            PairCache::from_pairs(ds, coll, metric.samples.iter().map(|s| (s.a, s.b)))?,
            metric.samples.len() as u64,
        ),
        PairCacheConfig::File { path } => {
            summary.inputs.push(path.clone());
            let recs = io::read_pairs(path)?;
            let pairs = recs
                .iter()
                .map(|r| Ok((ds.index_of(&r.x_id)? as u32, ds.index_of(&r.x_prime_id)? as u32)))
                .collect::<Result<Vec<_>>>()?;
            let n = pairs.len() as u64;
            (PairCache::from_pairs(ds, coll, pairs)?, n)
        }
        PairCacheConfig::Synthetic { size } => {
            let src = source.ok_or_else(|| Error::Config("a synthetic pair cache needs a synthetic metric".into()))?;
            let n = size.unwrap_or(required);
            let seed = summary.seed("pairs", cfg.seed, streams::PAIRS);
            (PairCache::from_pairs(ds, coll, src.draws(n, seed).map(|s| (s.a, s.b)))?, n)
        }
    };
    if drawn < required {
        summary.warn(format!("pair cache of {drawn} pairs is below the residual size {required}"));
    }
    Ok(cache)
}

fn write_train_outputs(
    out: &Path,
    dataset: &Dataset,
    predictions: &[f64],
    mut report: TrainReport,
    report_name: &str,
    summary: &mut RunSummary,
) -> Result<()> {
    io::write_predictions(&out.join(PREDICTIONS), dataset, predictions)?;
    summary.wrote(PREDICTIONS);
    if !report.log.is_empty() {
        io::write_iterates(&out.join(ITERATES), &report.log)?;
        summary.wrote(ITERATES);
    }
    report.log.clear();
    io::write_json(&out.join(report_name), &report)?;
    summary.wrote(report_name);
    Ok(())
}

/// Learns a multifair linear predictor from the labeled individuals.
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let mut solver = cfg.solver()?.clone();
    solver.validate()?;
    solver.seed = summary.seed("solver", cfg.seed, streams::SOLVER);
    let inputs = load_inputs(cfg, &mut summary)?;
    let labeled = inputs.individuals.labeled();
    if labeled.is_empty() {
        return Err(Error::Config("training needs at least one labeled individual".into()));
    }
    let source = configured_source(cfg, &inputs.individuals)?;
    let metric = metric_data(cfg, &inputs, source.as_ref(), &solver, &mut summary)?;
    let means = metric.cache.metric_means();
    let pairs = pair_cache(
        cfg,
        &inputs,
        source.as_ref(),
        &metric,
        solver.tau,
        solver.delta,
        solver.bound,
        &mut summary,
    )?;
    let ds = &inputs.individuals.dataset;
    let design = Design::from_dataset(ds);
    let problem = TrainProblem {
        dataset: ds,
        design: &design,
        labeled: &labeled,
        collection: &inputs.resolved,
        pairs: &pairs,
        means: &means,
        metric: Some(&metric.cache),
    };
    let report = train(problem, &solver, None)?;
    log::info!(
        "trained: loss {:.6}, {} of {} iterations feasible",
        report.loss,
        report.feasible_iterations,
        report.total_iterations
    );
    let preds = clipped_predictions(&design, &report.weights);
    std::fs::create_dir_all(out)?;
    write_train_outputs(out, ds, &preds, report, TRAIN_REPORT, &mut summary)?;
    Ok(summary)
}

/// Projects the configured predictions onto the multifair set.
pub fn run_postprocess(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let mut solver = cfg.solver()?.clone();
    solver.validate()?;
    solver.seed = summary.seed("solver", cfg.seed, streams::SOLVER);
    let inputs = load_inputs(cfg, &mut summary)?;
    let ds = &inputs.individuals.dataset;
    let pred_path = cfg.predictions_path()?;
    let preds = io::align_predictions(ds, &io::read_predictions(pred_path)?)?;
    summary.inputs.push(pred_path.to_path_buf());
    let source = configured_source(cfg, &inputs.individuals)?;
    let metric = metric_data(cfg, &inputs, source.as_ref(), &solver, &mut summary)?;
    let means = metric.cache.metric_means();
    let pairs = pair_cache(
        cfg,
        &inputs,
        source.as_ref(),
        &metric,
        solver.tau,
        solver.delta,
        1.0,
        &mut summary,
    )?;
    let result = postprocess(&preds, ds, &inputs.resolved, &pairs, &means, Some(&metric.cache), &solver)?;
    std::fs::create_dir_all(out)?;
    write_train_outputs(out, ds, &result.predictions, result.report, POSTPROCESS_REPORT, &mut summary)?;
    Ok(summary)
}

/// Audits the configured predictions on held-out metric samples.
pub fn run_audit(cfg: &RunConfig, out: &Path) -> Result<(RunSummary, AuditReport)> {
    let mut summary = RunSummary::default();
    let tau = cfg
        .audit
        .tau
        .or(cfg.solver.as_ref().map(|s| s.tau))
        .ok_or_else(|| Error::Config("audit needs `audit.tau` or a `solver` section".into()))?;
    let delta = cfg.audit.delta.or(cfg.solver.as_ref().map(|s| s.delta)).unwrap_or(0.1);
    if !(tau > 0.0 && tau.is_finite()) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("audit needs tau > 0 and delta in (0, 1), got {tau}, {delta}")));
    }
    let inputs = load_inputs(cfg, &mut summary)?;
    let ds = &inputs.individuals.dataset;
    let pred_path = cfg.predictions_path()?;
    let preds = io::align_predictions(ds, &io::read_predictions(pred_path)?)?;
    summary.inputs.push(pred_path.to_path_buf());
    let (samples, seed) = match &cfg.audit.held_out {
        HeldOutConfig::File { path } => {
            summary.inputs.push(path.clone());
            (resolve_samples(ds, &io::read_metric_samples(path)?)?, None)
        }
        HeldOutConfig::Synthetic { samples } => {
            let source = configured_source(cfg, &inputs.individuals)?.ok_or_else(|| {
                Error::Config("synthetic held-out samples need a synthetic metric; give `audit.held_out.path`".into())
            })?;
            if *samples == 0 {
                return Err(Error::Config("held-out sample count must be positive".into()));
            }
            let seed = summary.seed("held_out", cfg.seed, streams::HELD_OUT);
            (source.draws(*samples, seed).collect::<Vec<_>>(), Some(seed))
        }
    };
    let labeled = inputs.individuals.labeled();
    let loss = LossSpec::new(
        cfg.audit
            .loss
            .or(cfg.solver.as_ref().map(|s| s.loss.kind()))
            .unwrap_or(LossKind::Squared),
    );
    let opts = AuditOptions {
        delta: Some(delta),
        seed,
        held_out: true,
        pointwise: &cfg.audit.pointwise,
        labeled: (!labeled.is_empty()).then_some((&labeled[..], loss)),
    };
    let report = audit(&preds, ds, &inputs.resolved, &samples, tau, &opts)?;
    log::info!(
        "audit: {} pass, {} fail, {} unsupported",
        report.passed,
        report.failed,
        report.unsupported
    );
    std::fs::create_dir_all(out)?;
    io::write_json(&out.join(AUDIT_REPORT), &report)?;
    summary.wrote(AUDIT_REPORT);
    io::write_audit_summary(&out.join(AUDIT_SUMMARY), &report)?;
    summary.wrote(AUDIT_SUMMARY);
    Ok((summary, report))
}

fn write_dataset(
    out: &Path,
    dataset: &Dataset,
    labels: &[f64],
    scores: &[Option<f64>],
    collection: &ComparisonCollection,
    samples: &[ResolvedSample],
    summary: &mut RunSummary,
) -> Result<()> {
    let recs: Vec<IndividualRecord> = dataset
        .individuals()
        .iter()
        .enumerate()
        .map(|(i, ind)| IndividualRecord {
            id: ind.id().to_string(),
            features: ind.features().to_vec(),
            label: Some(labels[i]),
            score: scores[i],
        })
        .collect();
    io::write_individuals(&out.join(INDIVIDUALS), &recs)?;
    summary.wrote(INDIVIDUALS);
    io::write_json(&out.join(COLLECTION), collection)?;
    summary.wrote(COLLECTION);
    let samples: Vec<MetricSample> = samples
        .iter()
        .map(|s| MetricSample {
            x: dataset.get(s.a as usize).id().to_string(),
            x_prime: dataset.get(s.b as usize).id().to_string(),
            delta: s.delta,
        })
        .collect();
    io::write_metric_samples(&out.join(METRIC_SAMPLES), &samples)?;
    summary.wrote(METRIC_SAMPLES);
    Ok(())
}

/// Writes a synthetic scenario as individuals, collection, metric samples
/// and a ready-to-run config.
pub fn run_gen(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let gen = cfg
        .gen
        .as_ref()
        .ok_or_else(|| Error::Config("missing `gen` section".into()))?;
    let scenario_seed = summary.seed("scenario", cfg.seed, streams::GEN);
    let sample_seed = summary.seed("metric", cfg.seed, streams::METRIC);
    std::fs::create_dir_all(out)?;
    let (metric, noise, pairs, solver) = match gen {
        GenConfig::Subpop { params, metric_samples } => {
            let mut params = params.clone();
            params.seed = scenario_seed;
            let sc = generate_subpop_scenario(&params)?;
            let samples: Vec<_> = sc.source.draws(*metric_samples, sample_seed).collect();
            let scores: Vec<Option<f64>> = sc.scores.iter().map(|&s| Some(s)).collect();
            write_dataset(out, &sc.dataset, &sc.labels, &scores, &sc.collection, &samples, &mut summary)?;
            let mut solver = SolverConfig::new(0.1, 0.1, 4.0, LossKind::Squared);
            solver.t_override = Some(50_000);
            (SyntheticMetricConfig::ScoreDifference, params.noise, PairSamplerConfig::All, solver)
        }
        GenConfig::F2 {
            n,
            num_x0,
            family_size,
            metric_samples,
        } => {
            let c = generate_f2(*n, *num_x0, scenario_seed, *family_size)?;
            let samples: Vec<_> = c.source.draws(*metric_samples, sample_seed).collect();
            let scores: Vec<Option<f64>> = (0..c.dataset.len())
                .map(|i| (i < c.num_x0()).then(|| c.y(i)))
                .collect();
            write_dataset(out, &c.dataset, &c.labels, &scores, &c.collection, &samples, &mut summary)?;
            let ids = |r: std::ops::Range<usize>| r.map(|i| c.dataset.get(i).id().to_string()).collect();
            let pairs = PairSamplerConfig::Product {
                left: ids(0..c.num_x0()),
                right: ids(c.num_x0()..c.dataset.len()),
            };
            (SyntheticMetricConfig::BipartiteLabel, NoiseModel::Exact, pairs, default_sweep_solver())
        }
    };
    let run = RunConfig {
        seed: cfg.seed,
        threads: None,
        individuals: Some(INDIVIDUALS.into()),
        collection: Some(COLLECTION.into()),
        metric: Some(MetricConfig::Synthetic {
            metric,
            noise,
            pairs,
            samples: None,
        }),
        pair_cache: PairCacheConfig::Synthetic { size: None },
        solver: Some(solver),
        predictions: Some(PREDICTIONS.into()),
        audit: Default::default(),
        gen: None,
        sweep: None,
    };
    io::write_json(&out.join(CONFIG), &run)?;
    summary.wrote(CONFIG);
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryFile {
    pub n: usize,
    pub num_x0: usize,
    pub family_size: usize,
    pub trials: usize,
    pub informed_loss: f64,
    pub no_query_loss: f64,
    pub budgets: Vec<BudgetSummary>,
}

/// The F₂ sample-budget sweep.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<(RunSummary, SweepSummaryFile)> {
    let mut summary = RunSummary::default();
    let section = cfg.sweep.clone().unwrap_or_default();
    let solver = cfg.solver.clone().unwrap_or_else(default_sweep_solver);
    solver.validate()?;
    if section.trials == 0 {
        return Err(Error::Config("sweep needs at least one trial".into()));
    }
    let scenario_seed = summary.seed("scenario", cfg.seed, streams::GEN);
    let sweep_seed = summary.seed("sweep", cfg.seed, streams::SWEEP);
    let construction = generate_f2(section.n, section.num_x0, scenario_seed, section.family_size)?;
    let result = run_sample_sweep(
        &construction,
        &SweepConfig {
            budgets: section.budgets(),
            trials: section.trials,
            seed: sweep_seed,
            solver,
        },
    )?;
    std::fs::create_dir_all(out)?;
    io::write_sweep(&out.join(SWEEP_ROWS), &result.rows)?;
    summary.wrote(SWEEP_ROWS);
    let file = SweepSummaryFile {
        n: result.n,
        num_x0: result.num_x0,
        family_size: result.family_size,
        trials: section.trials,
        informed_loss: result.informed_loss,
        no_query_loss: result.no_query_loss,
        budgets: result.summary,
    };
    io::write_json(&out.join(SWEEP_SUMMARY), &file)?;
    summary.wrote(SWEEP_SUMMARY);
    Ok((summary, file))
}
