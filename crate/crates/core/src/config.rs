//! The JSON run configuration. Relative paths resolve against the directory
//! holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::PointwiseRequest;
use crate::error::{Error, Result};
use crate::experiments::SubpopParams;
use crate::model::LossKind;
use crate::metric::NoiseModel;
use crate::solver::{NormBound, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of a run is derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub individuals: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricConfig>,
    #[serde(default)]
    pub pair_cache: PairCacheConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    /// Input predictions for `postprocess` and `audit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricConfig {
    /// A `x_id,x_prime_id,delta` CSV, consumed in file order.
    File {
        path: PathBuf,
        /// Use only the first `samples` rows; all rows when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<u64>,
    },
    Synthetic {
        metric: SyntheticMetricConfig,
        #[serde(default = "exact_noise")]
        noise: NoiseModel,
        #[serde(default)]
        pairs: PairSamplerConfig,
        /// Draw count; the concentration-based size when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<u64>,
    },
}

fn exact_noise() -> NoiseModel {
    NoiseModel::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticMetricConfig {
    Constant { value: f64 },
    /// `|s(x) - s(x')|` over the individuals' `score` field.
    ScoreDifference,
    /// Individuals with a `score` are the left side and the score is their
    /// label `y`; those without are the right side.
    BipartiteLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairSamplerConfig {
    /// Both sides uniform over all individuals.
    #[default]
    All,
    Product { left: Vec<String>, right: Vec<String> },
    Pairs { pairs: Vec<(String, String)> },
}

/// Where the residual estimator's pair cache comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairCacheConfig {
    /// Reuse the pairs of the metric samples.
    #[default]
    MetricSamples,
    /// A CSV with `x_id,x_prime_id` columns.
    File { path: PathBuf },
    /// Fresh draws from the synthetic metric's pair sampler.
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    /// Audit level; the solver's `tau` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub held_out: HeldOutConfig,
    #[serde(default)]
    pub pointwise: Vec<PointwiseRequest>,
    /// Loss for the utility report; squared when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            tau: None,
            delta: None,
            held_out: HeldOutConfig::default(),
            pointwise: Vec::new(),
            loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeldOutConfig {
    File { path: PathBuf },
    /// Fresh draws from the synthetic metric on an independent stream.
    Synthetic { samples: u64 },
}

impl Default for HeldOutConfig {
    fn default() -> Self {
        HeldOutConfig::Synthetic { samples: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenConfig {
    Subpop {
        #[serde(default)]
        params: SubpopParams,
        /// Rows written to `metric_samples.csv`.
        #[serde(default = "default_gen_samples")]
        metric_samples: u64,
    },
    F2 {
        #[serde(default = "default_f2_n")]
        n: usize,
        #[serde(default = "default_f2_x0")]
        num_x0: usize,
        #[serde(default = "default_family")]
        family_size: usize,
        #[serde(default = "default_gen_samples")]
        metric_samples: u64,
    },
}

fn default_gen_samples() -> u64 {
    10_000
}

fn default_f2_n() -> usize {
    16
}

fn default_f2_x0() -> usize {
    256
}

fn default_family() -> usize {
    crate::experiments::DEFAULT_FAMILY_SIZE
}

fn default_trials() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_f2_n")]
    pub n: usize,
    #[serde(default = "default_f2_x0")]
    pub num_x0: usize,
    #[serde(default = "default_family")]
    pub family_size: usize,
    /// `0, n/2, n, 2n, 4n` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<u64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n: default_f2_n(),
            num_x0: default_f2_x0(),
            family_size: default_family(),
            budgets: None,
            trials: default_trials(),
        }
    }
}

impl SweepSection {
    pub fn budgets(&self) -> Vec<u64> {
        self.budgets.clone().unwrap_or_else(|| {
            let n = self.n as u64;
            vec![0, n / 2, n, 2 * n, 4 * n]
        })
    }
}

/// Solver settings used by `sweep` when the config has no `solver` section.
pub fn default_sweep_solver() -> SolverConfig {
    let mut s = SolverConfig::new(0.1, 0.1, 1.0, LossKind::Squared);
    s.t_override = Some(30_000);
    s.norm_bound = NormBound::Euclidean;
    s.record_log = false;
    s
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads the config and rebases its relative paths on the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.individuals, &mut self.collection, &mut self.predictions]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(MetricConfig::File { path, .. }) = &mut self.metric {
            fix(path);
        }
        if let PairCacheConfig::File { path } = &mut self.pair_cache {
            fix(path);
        }
        if let HeldOutConfig::File { path } = &mut self.audit.held_out {
            fix(path);
        }
    }

    pub fn solver(&self) -> Result<&SolverConfig> {
        self.solver
            .as_ref()
            .ok_or_else(|| Error::Config("missing `solver` section".into()))
    }

    pub fn individuals_path(&self) -> Result<&Path> {
        self.individuals
            .as_deref()
            .ok_or_else(|| Error::Config("missing `individuals` path".into()))
    }

    pub fn collection_path(&self) -> Result<&Path> {
        self.collection
            .as_deref()
            .ok_or_else(|| Error::Config("missing `collection` path".into()))
    }

    pub fn metric(&self) -> Result<&MetricConfig> {
        self.metric
            .as_ref()
            .ok_or_else(|| Error::Config("missing `metric` section".into()))
    }

    pub fn predictions_path(&self) -> Result<&Path> {
        self.predictions
            .as_deref()
            .ok_or_else(|| Error::Config("missing `predictions` path".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(
            r#"{
                "individuals": "ind.jsonl",
                "collection": "coll.json",
                "metric": {"kind": "file", "path": "m.csv"},
                "solver": {"tau": 0.1, "delta": 0.1, "bound": 1.0, "loss": "squared"}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.pair_cache, PairCacheConfig::MetricSamples);
        assert_eq!(cfg.audit.held_out, HeldOutConfig::Synthetic { samples: 100_000 });
        assert_eq!(cfg.solver().unwrap().minibatch, 1);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sede": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"metric": {"kind": "file", "path": "a", "extra": 1}}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = RunConfig::from_json(
            r#"{"individuals": "a.jsonl", "collection": "/abs/c.json",
                "metric": {"kind": "file", "path": "m.csv"},
                "audit": {"held_out": {"kind": "file", "path": "h.csv"}}}"#,
        )
        .unwrap();
        cfg.rebase(Path::new("/runs/x"));
        assert_eq!(cfg.individuals.as_deref(), Some(Path::new("/runs/x/a.jsonl")));
        assert_eq!(cfg.collection.as_deref(), Some(Path::new("/abs/c.json")));
        assert_eq!(
            cfg.metric,
            Some(MetricConfig::File {
                path: "/runs/x/m.csv".into(),
                samples: None
            })
        );
        assert_eq!(cfg.audit.held_out, HeldOutConfig::File { path: "/runs/x/h.csv".into() });
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = RunConfig::from_json(r#"{"seed": 5, "sweep": {"trials": 3}}"#).unwrap();
        cfg.solver = Some(default_sweep_solver());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(cfg.sweep.unwrap().budgets(), vec![0, 8, 16, 32, 64]);
    }
}
