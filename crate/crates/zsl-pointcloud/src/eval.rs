//! Accuracy aggregation and report emission.
//!
//! Reports mirror the shape of the benchmark tables: one row per
//! (protocol, method), one accuracy cell per semantic mode in the fixed
//! order basic, w2v, glove, conc, plus a random-baseline row per protocol.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::cache::CachedDataset;
use crate::dataset::collect_role;
use crate::dataset::split::{Role, SplitManifest};
use crate::semantic::SemanticEmbeddingTable;
use crate::train::{probabilities_for_role, Checkpoint};
use crate::zsl::{predict_from_probs, InferenceHead, ZslError, ZslPrediction};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and truth lists are empty")]
    Empty,
    #[error("prediction and truth lists differ in length ({predictions} vs {truth})")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("label {label} out of range for {classes} classes")]
    UnknownLabel { label: usize, classes: usize },
    #[error("no reports to emit")]
    NoReports,
    #[error("conflicting cell for protocol {protocol}, method {method}, mode {mode}")]
    ConflictingCell { protocol: String, method: String, mode: String },
    #[error(transparent)]
    Zsl(#[from] ZslError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Ingest(#[from] crate::dataset::IngestError),
}

/// Overall top-1 accuracy in percent.
pub fn top1_accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    if predictions.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Per-class accuracy cell: `percent` is `None` for classes with no samples
/// (absent, not zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub class: String,
    pub percent: Option<f64>,
    pub samples: usize,
}

/// One percent per class in `class_list` order.
pub fn per_class_accuracy(
    predictions: &[usize],
    truth: &[usize],
    class_list: &[String],
) -> Result<Vec<PerClassAccuracy>, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    if predictions.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    let classes = class_list.len();
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if t >= classes {
            return Err(EvalError::UnknownLabel { label: t, classes });
        }
        if p >= classes {
            return Err(EvalError::UnknownLabel { label: p, classes });
        }
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    Ok(class_list
        .iter()
        .enumerate()
        .map(|(i, class)| PerClassAccuracy {
            class: class.clone(),
            percent: (totals[i] > 0).then(|| 100.0 * hits[i] as f64 / totals[i] as f64),
            samples: totals[i],
        })
        .collect())
}

/// Chance accuracy for a uniform guess over `unseen_count` classes.
pub fn random_baseline(unseen_count: usize) -> f64 {
    100.0 / unseen_count as f64
}

/// Results of one (protocol, method, semantic-mode) evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub protocol: String,
    /// Encoder + pooling descriptor, e.g. `pointnet+max`.
    pub method: String,
    pub semantic_mode: String,
    pub overall_top1: f64,
    pub per_class: Vec<PerClassAccuracy>,
    pub random_baseline: f64,
    pub t: usize,
    pub samples: usize,
}

impl EvaluationReport {
    /// Builds a report from zero-shot predictions against a manifest.
    pub fn from_predictions(
        predictions: &[ZslPrediction],
        manifest: &SplitManifest,
        method: String,
        semantic_mode: String,
    ) -> Result<Self, EvalError> {
        let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted()).collect();
        let truth: Vec<usize> = predictions.iter().map(|p| p.true_class).collect();
        let overall = top1_accuracy(&predicted, &truth)?;
        let per_class = per_class_accuracy(&predicted, &truth, &manifest.unseen_classes)?;
        let t = predictions.first().map(|p| p.t).unwrap_or(0);
        Ok(EvaluationReport {
            protocol: manifest.dataset.clone(),
            method,
            semantic_mode,
            overall_top1: overall,
            per_class,
            random_baseline: random_baseline(manifest.unseen_classes.len()),
            t,
            samples: predictions.len(),
        })
    }

    /// Sample-weighted mean of the per-class percentages; equals the overall
    /// accuracy by construction.
    pub fn weighted_per_class_mean(&self) -> f64 {
        let mut weighted = 0.0;
        let mut total = 0usize;
        for cell in &self.per_class {
            if let Some(p) = cell.percent {
                weighted += p * cell.samples as f64;
                total += cell.samples;
            }
        }
        weighted / total as f64
    }
}

/// Accuracy as a function of T for one checkpoint, evaluated over the
/// manifest's test-unseen split. Probabilities are computed once and reused
/// across the sweep, so the `t = k` entry is exactly the accuracy of
/// single-shot classification with `T = k`.
pub fn t_sweep(
    cache: &CachedDataset,
    manifest: &SplitManifest,
    checkpoint: &Checkpoint,
    seen_table: &SemanticEmbeddingTable,
    unseen_table: &SemanticEmbeddingTable,
    t_values: &[usize],
) -> Result<Vec<(usize, f64)>, EvalError> {
    let s = manifest.seen_classes.len();
    for &t in t_values {
        if t == 0 || t > s {
            return Err(EvalError::Zsl(ZslError::TOutOfRange { t, s }));
        }
    }
    let set = collect_role(cache, manifest, Role::TestUnseen)?;
    let head = match checkpoint.meta.head {
        crate::encoder::HeadSpec::Semantic { .. } => InferenceHead::Semantic,
        crate::encoder::HeadSpec::Basic { .. } => InferenceHead::Basic,
    };
    let table_for_forward = match head {
        InferenceHead::Semantic => Some(seen_table),
        InferenceHead::Basic => None,
    };
    let prob_rows = probabilities_for_role(checkpoint, cache, &set, table_for_forward)?;
    let mut series = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let mut predicted = Vec::with_capacity(prob_rows.len());
        for (probs, path) in prob_rows.iter().zip(&set.paths) {
            let prediction = predict_from_probs(
                path.clone(),
                0,
                probs.clone(),
                seen_table,
                unseen_table,
                t,
            )?;
            predicted.push(prediction.predicted());
        }
        let accuracy = top1_accuracy(&predicted, &set.labels)?;
        series.push((t, accuracy));
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

const MODE_COLUMNS: [&str; 4] = ["basic", "w2v", "glove", "conc"];

/// Emits a combined document: CSV rows keyed by (protocol, method) with one
/// column per semantic mode and a random row per protocol, or the full
/// reports as JSON. Deterministic: identical inputs produce identical bytes.
pub fn emit_report(reports: &[EvaluationReport], format: ReportFormat) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    match format {
        ReportFormat::Json => {
            Ok(serde_json::to_string_pretty(reports).expect("reports serialize"))
        }
        ReportFormat::Csv => {
            // (protocol, method) -> [cell; 4]
            let mut rows: Vec<(String, String, [Option<f64>; 4], f64)> = Vec::new();
            for report in reports {
                let mode_idx = MODE_COLUMNS
                    .iter()
                    .position(|m| *m == report.semantic_mode)
                    .ok_or_else(|| EvalError::ConflictingCell {
                        protocol: report.protocol.clone(),
                        method: report.method.clone(),
                        mode: report.semantic_mode.clone(),
                    })?;
                let row = match rows
                    .iter_mut()
                    .find(|(p, m, _, _)| p == &report.protocol && m == &report.method)
                {
                    Some(row) => row,
                    None => {
                        rows.push((
                            report.protocol.clone(),
                            report.method.clone(),
                            [None; 4],
                            report.random_baseline,
                        ));
                        rows.last_mut().unwrap()
                    }
                };
                if row.2[mode_idx].is_some() {
                    return Err(EvalError::ConflictingCell {
                        protocol: report.protocol.clone(),
                        method: report.method.clone(),
                        mode: report.semantic_mode.clone(),
                    });
                }
                row.2[mode_idx] = Some(report.overall_top1);
            }
            rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

            let mut out = String::from("protocol,method,basic,w2v,glove,conc\n");
            let mut seen_protocols: Vec<&str> = Vec::new();
            for (protocol, method, cells, _) in &rows {
                if !seen_protocols.contains(&protocol.as_str()) {
                    seen_protocols.push(protocol);
                }
                let rendered: Vec<String> = cells
                    .iter()
                    .map(|c| c.map(|v| format!("{v:.1}")).unwrap_or_default())
                    .collect();
                out.push_str(&format!("{protocol},{method},{}\n", rendered.join(",")));
            }
            for protocol in seen_protocols {
                let baseline = rows
                    .iter()
                    .find(|(p, _, _, _)| p == protocol)
                    .map(|(_, _, _, b)| *b)
                    .unwrap_or_default();
                let cell = format!("{baseline:.1}");
                out.push_str(&format!(
                    "{protocol},random,{cell},{cell},{cell},{cell}\n"
                ));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top1_basic_values() {
        assert_eq!(top1_accuracy(&[1, 2], &[1, 2]).unwrap(), 100.0);
        assert_eq!(top1_accuracy(&[1, 0], &[1, 2]).unwrap(), 50.0);
        assert!(matches!(top1_accuracy(&[], &[]), Err(EvalError::Empty)));
    }

    fn classes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn per_class_accuracy_splits_and_flags_absent() {
        let list = classes(&["a", "b", "c"]);
        // Class a all correct, class b all wrong, class c absent.
        let truth = [0, 0, 1, 1];
        let pred = [0, 0, 0, 2];
        let cells = per_class_accuracy(&pred, &truth, &list).unwrap();
        assert_eq!(cells[0].percent, Some(100.0));
        assert_eq!(cells[1].percent, Some(0.0));
        assert_eq!(cells[2].percent, None);
        assert_eq!(cells[2].samples, 0);
    }

    #[test]
    fn weighted_mean_identity() {
        let list = classes(&["a", "b"]);
        let truth = [0, 0, 0, 1];
        let pred = [0, 1, 0, 1];
        let overall = top1_accuracy(&pred, &truth).unwrap();
        let cells = per_class_accuracy(&pred, &truth, &list).unwrap();
        let weighted: f64 = cells
            .iter()
            .filter_map(|c| c.percent.map(|p| p * c.samples as f64))
            .sum::<f64>()
            / truth.len() as f64;
        assert!((overall - weighted).abs() < 1e-6);
    }

    #[test]
    fn unknown_label_rejected() {
        let list = classes(&["a"]);
        assert!(matches!(
            per_class_accuracy(&[0], &[3], &list),
            Err(EvalError::UnknownLabel { label: 3, .. })
        ));
    }

    #[test]
    fn random_baseline_values() {
        assert_eq!(random_baseline(10), 10.0);
        assert!((random_baseline(14) - 7.142857).abs() < 1e-6);
        assert!((random_baseline(30) - 100.0 / 30.0).abs() < 1e-12);
        for u in [10usize, 14, 30, 7, 123] {
            assert!((random_baseline(u) * u as f64 - 100.0).abs() < 1e-9);
        }
    }

    fn report(protocol: &str, method: &str, mode: &str, value: f64) -> EvaluationReport {
        EvaluationReport {
            protocol: protocol.into(),
            method: method.into(),
            semantic_mode: mode.into(),
            overall_top1: value,
            per_class: vec![],
            random_baseline: 10.0,
            t: 30,
            samples: 100,
        }
    }

    #[test]
    fn csv_report_layout_and_random_row() {
        let reports = vec![
            report("modelnet", "pointnet+max", "basic", 23.1),
            report("modelnet", "pointnet+max", "w2v", 27.0),
            report("modelnet", "pointnet+max", "glove", 14.8),
            report("modelnet", "pointnet+max", "conc", 19.4),
        ];
        let csv = emit_report(&reports, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "protocol,method,basic,w2v,glove,conc");
        assert_eq!(lines[1], "modelnet,pointnet+max,23.1,27.0,14.8,19.4");
        assert_eq!(lines[2], "modelnet,random,10.0,10.0,10.0,10.0");
    }

    #[test]
    fn report_emission_is_deterministic() {
        let reports = vec![
            report("modelnet", "pointnet+max", "w2v", 27.0),
            report("mcgill", "pointnet+max", "w2v", 9.8),
        ];
        let a = emit_report(&reports, ReportFormat::Csv).unwrap();
        let b = emit_report(&reports, ReportFormat::Csv).unwrap();
        assert_eq!(a, b);
        let ja = emit_report(&reports, ReportFormat::Json).unwrap();
        let jb = emit_report(&reports, ReportFormat::Json).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn empty_and_conflicting_reports_rejected() {
        assert!(matches!(emit_report(&[], ReportFormat::Csv), Err(EvalError::NoReports)));
        let duplicated = vec![
            report("modelnet", "pointnet+max", "w2v", 27.0),
            report("modelnet", "pointnet+max", "w2v", 28.0),
        ];
        assert!(matches!(
            emit_report(&duplicated, ReportFormat::Csv),
            Err(EvalError::ConflictingCell { .. })
        ));
    }
}
