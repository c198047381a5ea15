//! Evaluation reports: overall, split-wise, per-class, and per-branch
//! accuracies, with CSV/JSON emission.
//!
//! Empty splits report "NA" rather than zero so absence of classes is never
//! mistaken for failure on them.

use crate::data::{EvalSplit, LongTailDataset};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, predict, ResLTModel, VariantConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

const EVAL_BATCH: usize = 256;

/// Serializes an absent split accuracy as the literal string "NA" instead of
/// null, matching the CSV marker.
mod na_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_f64(*v),
            None => s.serialize_str("NA"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Marker {
            Value(f64),
            Text(String),
        }
        match Marker::deserialize(d)? {
            Marker::Value(v) => Ok(Some(v)),
            Marker::Text(t) if t == "NA" => Ok(None),
            Marker::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"NA\", got {t:?}"
            ))),
        }
    }
}

/// Accuracy row for one scoring scope (fused prediction or a solo branch).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub acc_all: f64,
    #[serde(with = "na_marker")]
    pub acc_many: Option<f64>,
    #[serde(with = "na_marker")]
    pub acc_medium: Option<f64>,
    #[serde(with = "na_marker")]
    pub acc_few: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_all: f64,
    #[serde(with = "na_marker")]
    pub acc_many: Option<f64>,
    #[serde(with = "na_marker")]
    pub acc_medium: Option<f64>,
    #[serde(with = "na_marker")]
    pub acc_few: Option<f64>,
    pub per_class_acc: Vec<f64>,
    pub per_branch: Vec<AccuracyRow>,
}

#[derive(Default, Clone)]
struct SplitCounter {
    correct: Vec<u64>,
    total: Vec<u64>,
}

impl SplitCounter {
    fn new(k: usize) -> Self {
        SplitCounter {
            correct: vec![0; k],
            total: vec![0; k],
        }
    }

    fn record(&mut self, class: usize, hit: bool) {
        self.total[class] += 1;
        if hit {
            self.correct[class] += 1;
        }
    }

    fn row(&self, split: &EvalSplit) -> AccuracyRow {
        let over = |classes: &[usize]| -> Option<f64> {
            let total: u64 = classes.iter().map(|&c| self.total[c]).sum();
            if total == 0 {
                return None;
            }
            let correct: u64 = classes.iter().map(|&c| self.correct[c]).sum();
            Some(correct as f64 / total as f64)
        };
        let all: Vec<usize> = (0..self.total.len()).collect();
        AccuracyRow {
            acc_all: over(&all).unwrap_or(0.0),
            acc_many: over(&split.many),
            acc_medium: over(&split.medium),
            acc_few: over(&split.few),
        }
    }
}

/// Scores the model on a test set: fused predictions per the variant rule
/// plus each branch's solo logits. Split accuracies are sample-weighted
/// within each split.
pub fn evaluate(
    model: &ResLTModel,
    test: &LongTailDataset,
    split: &EvalSplit,
    variant: &VariantConfig,
) -> Result<EvalReport> {
    let k = test.num_classes();
    if k != model.dims.classes {
        return Err(Error::parameter(format!(
            "test set has {k} classes, model scores {}",
            model.dims.classes
        )));
    }
    let groups = model.num_groups();
    let mut fused_counts = SplitCounter::new(k);
    let mut branch_counts = vec![SplitCounter::new(k); groups];

    let indices: Vec<usize> = (0..test.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, labels) = test.batch(chunk);
        let fused_pred = predict(model, &x, variant)?;
        let branch_logits = model.branch_logit_values(&x, variant.specialization)?;
        let branch_preds: Vec<Vec<usize>> = branch_logits.iter().map(argmax_rows).collect();
        for (row, &label) in labels.iter().enumerate() {
            fused_counts.record(label, fused_pred[row] == label);
            for g in 0..groups {
                branch_counts[g].record(label, branch_preds[g][row] == label);
            }
        }
    }

    let fused = fused_counts.row(split);
    let per_class_acc = (0..k)
        .map(|c| {
            if fused_counts.total[c] == 0 {
                0.0
            } else {
                fused_counts.correct[c] as f64 / fused_counts.total[c] as f64
            }
        })
        .collect();
    Ok(EvalReport {
        acc_all: fused.acc_all,
        acc_many: fused.acc_many,
        acc_medium: fused.acc_medium,
        acc_few: fused.acc_few,
        per_class_acc,
        per_branch: branch_counts.iter().map(|c| c.row(split)).collect(),
    })
}

/// For a three-branch report: does each branch score best where it
/// specializes? Branch 0 must be non-increasing many >= medium >= few,
/// branch 1 needs medium >= many, branch 2 needs few as its row maximum.
/// Missing splits fail the check for the branches that need them.
pub fn branch_dominance_check(report: &EvalReport) -> Result<Vec<bool>> {
    if report.per_branch.len() != 3 {
        return Err(Error::parameter(format!(
            "dominance check is defined for 3 branches, report has {}",
            report.per_branch.len()
        )));
    }
    let rows = &report.per_branch;
    let b0 = match (rows[0].acc_many, rows[0].acc_medium, rows[0].acc_few) {
        (Some(many), Some(medium), Some(few)) => many >= medium && medium >= few,
        _ => false,
    };
    let b1 = match (rows[1].acc_many, rows[1].acc_medium) {
        (Some(many), Some(medium)) => medium >= many,
        _ => false,
    };
    let b2 = match (rows[2].acc_many, rows[2].acc_medium, rows[2].acc_few) {
        (Some(many), Some(medium), Some(few)) => few >= many && few >= medium,
        _ => false,
    };
    Ok(vec![b0, b1, b2])
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "NA".to_string(),
    }
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field == "NA" {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::parameter(format!("bad accuracy field {field:?}")))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes the report with a stable field order. The CSV form is one table:
/// a `fused` row, one `branch_<g>` row per branch, then one `class_<c>` row
/// per class carrying its accuracy in the acc_all column.
pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        }
        ReportFormat::Csv => {
            let mut out = String::from("row,acc_all,acc_many,acc_medium,acc_few\n");
            out.push_str(&format!(
                "fused,{},{},{},{}\n",
                report.acc_all,
                fmt_opt(report.acc_many),
                fmt_opt(report.acc_medium),
                fmt_opt(report.acc_few)
            ));
            for (g, row) in report.per_branch.iter().enumerate() {
                out.push_str(&format!(
                    "branch_{g},{},{},{},{}\n",
                    row.acc_all,
                    fmt_opt(row.acc_many),
                    fmt_opt(row.acc_medium),
                    fmt_opt(row.acc_few)
                ));
            }
            for (c, acc) in report.per_class_acc.iter().enumerate() {
                out.push_str(&format!("class_{c},{acc},NA,NA,NA\n"));
            }
            out
        }
    };
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads back a report written by [`emit_report`].
pub fn parse_report(path: &Path, format: ReportFormat) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    match format {
        ReportFormat::Json => serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            offset: 0,
            message: e.to_string(),
        }),
        ReportFormat::Csv => {
            let mut fused: Option<AccuracyRow> = None;
            let mut per_branch = Vec::new();
            let mut per_class_acc = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if idx == 0 {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 5 {
                    return Err(Error::Format {
                        path: path.display().to_string(),
                        offset: 0,
                        message: format!("line {} has {} fields", idx + 1, fields.len()),
                    });
                }
                let row = AccuracyRow {
                    acc_all: fields[1]
                        .parse()
                        .map_err(|_| Error::parameter(format!("bad acc_all {:?}", fields[1])))?,
                    acc_many: parse_opt(fields[2])?,
                    acc_medium: parse_opt(fields[3])?,
                    acc_few: parse_opt(fields[4])?,
                };
                if fields[0] == "fused" {
                    fused = Some(row);
                } else if fields[0].starts_with("branch_") {
                    per_branch.push(row);
                } else if fields[0].starts_with("class_") {
                    per_class_acc.push(row.acc_all);
                }
            }
            let fused = fused.ok_or_else(|| Error::parameter("report csv missing fused row"))?;
            Ok(EvalReport {
                acc_all: fused.acc_all,
                acc_many: fused.acc_many,
                acc_medium: fused.acc_medium,
                acc_few: fused.acc_few,
                per_class_acc,
                per_branch,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> EvalReport {
        EvalReport {
            acc_all: 0.8125,
            acc_many: Some(0.9),
            acc_medium: Some(0.75),
            acc_few: None,
            per_class_acc: vec![0.95, 0.85, 0.75, 0.675],
            per_branch: vec![
                AccuracyRow {
                    acc_all: 0.8,
                    acc_many: Some(0.92),
                    acc_medium: Some(0.7),
                    acc_few: Some(0.5),
                },
                AccuracyRow {
                    acc_all: 0.7,
                    acc_many: Some(0.6),
                    acc_medium: Some(0.75),
                    acc_few: Some(0.65),
                },
                AccuracyRow {
                    acc_all: 0.6,
                    acc_many: Some(0.4),
                    acc_medium: Some(0.55),
                    acc_few: Some(0.8),
                },
            ],
        }
    }

    #[test]
    fn json_round_trip_is_identical() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        emit_report(&report, &path, ReportFormat::Json).unwrap();
        assert_eq!(parse_report(&path, ReportFormat::Json).unwrap(), report);
    }

    #[test]
    fn csv_round_trip_and_single_header() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        emit_report(&report, &path, ReportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let headers = text.lines().filter(|l| l.starts_with("row,")).count();
        assert_eq!(headers, 1);
        assert!(text.contains(",NA"));
        assert_eq!(parse_report(&path, ReportFormat::Csv).unwrap(), report);
    }

    #[test]
    fn dominance_predicates_on_hand_built_rows() {
        let report = sample_report();
        let dominance = branch_dominance_check(&report).unwrap();
        assert_eq!(dominance, vec![true, true, true]);

        let mut flipped = report;
        flipped.per_branch[2].acc_few = Some(0.1);
        assert_eq!(branch_dominance_check(&flipped).unwrap(), vec![true, true, false]);
    }

    #[test]
    fn dominance_requires_three_branches() {
        let mut report = sample_report();
        report.per_branch.pop();
        assert!(branch_dominance_check(&report).is_err());
    }
}
