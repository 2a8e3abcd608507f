//! File formats: JSON-lines individuals and predictions, CSV metric samples,
//! pair lists, iteration logs and result tables, JSON everything else.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audit::AuditReport;
use crate::comparisons::ComparisonCollection;
use crate::error::{Error, Result};
use crate::experiments::SweepRow;
use crate::metric::MetricSample;
use crate::model::{Dataset, Individual};
use crate::solver::IterationRecord;

/// One line of an individuals file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    /// Per-individual score consumed by score-based synthetic metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Individuals {
    pub dataset: Dataset,
    pub labels: Vec<Option<f64>>,
    pub scores: Vec<Option<f64>>,
}

impl Individuals {
    /// `(index, label)` for every labeled individual.
    pub fn labeled(&self) -> Vec<(usize, f64)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|y| (i, y)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: f64,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Parses one JSON value per non-blank line; errors name the line.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Ingestion(format!("{what} line {}: {e}", n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn individuals_from_records(records: Vec<IndividualRecord>) -> Result<Individuals> {
    let mut inds = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len());
    for r in records {
        if let Some(y) = r.label {
            if !(-1.0..=1.0).contains(&y) {
                return Err(Error::Domain(format!("individual `{}` has label {y} outside [-1, 1]", r.id)));
            }
        }
        if let Some(s) = r.score {
            if !s.is_finite() {
                return Err(Error::Domain(format!("individual `{}` has a non-finite score", r.id)));
            }
        }
        labels.push(r.label);
        scores.push(r.score);
        inds.push(Individual::new(r.id, r.features)?);
    }
    if inds.is_empty() {
        return Err(Error::Ingestion("individuals file is empty".into()));
    }
    Ok(Individuals {
        dataset: Dataset::new(inds)?,
        labels,
        scores,
    })
}

pub fn read_individuals(path: &Path) -> Result<Individuals> {
    individuals_from_records(parse_jsonl(open(path)?, "individuals")?)
}

pub fn write_individuals(path: &Path, records: &[IndividualRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_collection(path: &Path) -> Result<ComparisonCollection> {
    let c: ComparisonCollection = read_json(path)?;
    c.validate()?;
    Ok(c)
}

/// Reads `x_id,x_prime_id,delta` rows in file order.
pub fn read_metric_samples(path: &Path) -> Result<Vec<MetricSample>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (n, rec) in r.deserialize::<MetricSample>().enumerate() {
        let s = rec.map_err(|e| Error::Ingestion(format!("metric samples row {}: {e}", n + 1)))?;
        if !(0.0..=2.0).contains(&s.delta) {
            return Err(Error::Domain(format!(
                "metric samples row {}: delta {} outside [0, 2]",
                n + 1,
                s.delta
            )));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_metric_samples(path: &Path, samples: &[MetricSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub x_id: String,
    pub x_prime_id: String,
}

/// Reads `x_id,x_prime_id` rows; extra columns such as `delta` are ignored.
pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    r.deserialize::<PairRecord>()
        .enumerate()
        .map(|(n, rec)| rec.map_err(|e| Error::Ingestion(format!("pairs row {}: {e}", n + 1))))
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    parse_jsonl(open(path)?, "predictions")
}

/// Predictions aligned with the dataset order.
pub fn align_predictions(dataset: &Dataset, records: &[PredictionRecord]) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; dataset.len()];
    for r in records {
        if !(-1.0..=1.0).contains(&r.prediction) {
            return Err(Error::Domain(format!(
                "prediction {} for `{}` outside [-1, 1]",
                r.prediction, r.id
            )));
        }
        out[dataset.index_of(&r.id)?] = r.prediction;
    }
    if let Some(i) = out.iter().position(|p| p.is_nan()) {
        return Err(Error::Ingestion(format!("no prediction for `{}`", dataset.get(i).id())));
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, dataset: &Dataset, predictions: &[f64]) -> Result<()> {
    let recs: Vec<PredictionRecord> = predictions
        .iter()
        .enumerate()
        .map(|(i, &p)| PredictionRecord {
            id: dataset.get(i).id().to_string(),
            prediction: p,
        })
        .collect();
    write_jsonl(path, &recs)
}

pub fn write_iterates(path: &Path, log: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["iteration", "kind", "comparison", "residual"])?;
    for r in log {
        let kind = match r.kind {
            crate::solver::StepKind::Objective => "objective",
            crate::solver::StepKind::Constraint => "constraint",
        };
        w.write_record([
            r.iteration.to_string(),
            kind.to_string(),
            r.comparison.clone().unwrap_or_default(),
            r.residual.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_audit_summary(path: &Path, report: &AuditReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["comparison", "verdict", "residual", "deviation", "metric_mean", "tolerance", "samples"])?;
    for c in &report.comparisons {
        let verdict = serde_json::to_value(c.verdict)?;
        w.write_record([
            c.id.clone(),
            verdict.as_str().unwrap_or_default().to_string(),
            opt(c.residual),
            opt(c.deviation),
            opt(c.metric_mean),
            opt(c.tolerance),
            c.samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("multifair-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn individuals_round_trip() {
        let recs = vec![
            IndividualRecord {
                id: "a".into(),
                features: vec![0.5, -0.25],
                label: Some(1.0),
                score: None,
            },
            IndividualRecord {
                id: "b".into(),
                features: vec![0.0, 0.1],
                label: None,
                score: Some(0.3),
            },
        ];
        let p = tmp("ind.jsonl");
        write_individuals(&p, &recs).unwrap();
        let back = read_individuals(&p).unwrap();
        assert_eq!(back.dataset.len(), 2);
        assert_eq!(back.labels, vec![Some(1.0), None]);
        assert_eq!(back.scores, vec![None, Some(0.3)]);
        assert_eq!(back.labeled(), vec![(0, 1.0)]);
    }

    #[test]
    fn l1_violation_is_rejected_not_rescaled() {
        let text = "{\"id\":\"a\",\"features\":[0.75,0.5]}\n";
        let recs: Vec<IndividualRecord> = parse_jsonl(text.as_bytes(), "individuals").unwrap();
        assert!(matches!(individuals_from_records(recs), Err(Error::Domain(_))));
    }

    #[test]
    fn bad_line_is_named() {
        let text = "{\"id\":\"a\",\"features\":[0.1]}\n\nnot json\n";
        let err = parse_jsonl::<IndividualRecord>(text.as_bytes(), "individuals").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let text = "{\"id\":\"a\",\"features\":[0.1],\"label\":1.5}\n";
        let recs: Vec<IndividualRecord> = parse_jsonl(text.as_bytes(), "individuals").unwrap();
        assert!(individuals_from_records(recs).is_err());
    }

    #[test]
    fn metric_samples_round_trip_in_order() {
        let s = vec![
            MetricSample {
                x: "b".into(),
                x_prime: "a".into(),
                delta: 0.25,
            },
            MetricSample {
                x: "a".into(),
                x_prime: "b".into(),
                delta: 2.0,
            },
        ];
        let p = tmp("m.csv");
        write_metric_samples(&p, &s).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x_id,x_prime_id,delta\n"), "{text}");
        assert_eq!(read_metric_samples(&p).unwrap(), s);
        let pairs = read_pairs(&p).unwrap();
        assert_eq!(pairs[0].x_id, "b");
    }

    #[test]
    fn delta_out_of_range_is_rejected() {
        let p = tmp("bad.csv");
        std::fs::write(&p, "x_id,x_prime_id,delta\na,b,2.5\n").unwrap();
        assert!(matches!(read_metric_samples(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn predictions_must_cover_the_dataset() {
        let ds = Dataset::new(vec![
            Individual::new("a", vec![0.1]).unwrap(),
            Individual::new("b", vec![0.2]).unwrap(),
        ])
        .unwrap();
        let recs = vec![PredictionRecord {
            id: "b".into(),
            prediction: 0.5,
        }];
        assert!(align_predictions(&ds, &recs).is_err());
        let recs = vec![
            PredictionRecord {
                id: "b".into(),
                prediction: 0.5,
            },
            PredictionRecord {
                id: "a".into(),
                prediction: -0.5,
            },
        ];
        assert_eq!(align_predictions(&ds, &recs).unwrap(), vec![-0.5, 0.5]);
    }
}
