//! Prediction and metric tables.

use std::collections::BTreeMap;

use prism_core::cohort::ClinicalRecord;
use prism_core::surv::{confusion_metrics, roc_auc, select_threshold, BinaryMetrics};
use prism_core::{PrismError, Result};
use serde::Serialize;

pub const PREDICTIONS_HEADER: [&str; 6] = [
    "patient_id",
    "fold",
    "prob",
    "label5y",
    "time_months",
    "event",
];
pub const METRIC_NAMES: [&str; 4] = ["auc", "accuracy", "sensitivity", "specificity"];
pub const NA: &str = "n/a";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub patient_id: String,
    pub fold: usize,
    pub prob: f64,
    pub label5y: Option<bool>,
    pub time_months: f64,
    pub event: bool,
}

fn csv_err(e: csv::Error) -> PrismError {
    PrismError::data(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| PrismError::data(format!("csv: {e}")))
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PREDICTIONS_HEADER).map_err(csv_err)?;
    for r in rows {
        let label = match r.label5y {
            Some(true) => "1",
            Some(false) => "0",
            None => "NA",
        };
        w.write_record([
            r.patient_id.clone(),
            r.fold.to_string(),
            r.prob.to_string(),
            label.to_string(),
            r.time_months.to_string(),
            (r.event as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn parse_predictions(bytes: &[u8]) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(PREDICTIONS_HEADER) {
        return Err(PrismError::data(format!(
            "predictions header must be {}",
            PREDICTIONS_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad =
            |what: &str| PrismError::data(format!("predictions row {}: bad {what}", line + 1));
        let prob: f64 = rec[2].parse().map_err(|_| bad("prob"))?;
        if !(0.0..=1.0).contains(&prob) {
            return Err(bad("prob"));
        }
        rows.push(PredictionRow {
            patient_id: rec[0].to_string(),
            fold: rec[1].parse().map_err(|_| bad("fold"))?,
            prob,
            label5y: match &rec[3] {
                "1" => Some(true),
                "0" => Some(false),
                "NA" => None,
                _ => return Err(bad("label5y")),
            },
            time_months: rec[4].parse().map_err(|_| bad("time_months"))?,
            event: match &rec[5] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("event")),
            },
        });
    }
    if rows.is_empty() {
        return Err(PrismError::data("predictions table is empty"));
    }
    Ok(rows)
}

/// Labelled `(prob, label)` pairs.
pub fn labelled<'a>(rows: impl IntoIterator<Item = &'a PredictionRow>) -> (Vec<f64>, Vec<bool>) {
    rows.into_iter()
        .filter_map(|r| r.label5y.map(|l| (r.prob, l)))
        .unzip()
}

/// Metrics for one fold; `None` where undefined (a single class present).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n: usize,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl FoldMetrics {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "auc" => self.auc,
            "accuracy" => self.accuracy,
            "sensitivity" => self.sensitivity,
            "specificity" => self.specificity,
            _ => None,
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn fold_metrics(
    fold: usize,
    probs: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<FoldMetrics> {
    let m: BinaryMetrics = confusion_metrics(probs, labels, threshold)?;
    Ok(FoldMetrics {
        fold,
        n: labels.len(),
        threshold,
        auc: roc_auc(probs, labels).ok(),
        accuracy: finite(m.accuracy),
        sensitivity: finite(m.sensitivity),
        specificity: finite(m.specificity),
    })
}

/// Per-fold thresholds: fixed, or Youden-optimal on validation predictions.
pub fn thresholds(
    folds: &[usize],
    fixed: f64,
    validation: Option<&[PredictionRow]>,
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for &f in folds {
        let t = match validation {
            None => fixed,
            Some(rows) => {
                let (p, l) = labelled(rows.iter().filter(|r| r.fold == f));
                select_threshold(&p, &l)
                    .map_err(|e| e.context(format!("validation threshold for fold {f}")))?
            }
        };
        out.insert(f, t);
    }
    Ok(out)
}

/// Metrics per fold, in fold order.
pub fn per_fold(
    rows: &[PredictionRow],
    thresholds: &BTreeMap<usize, f64>,
) -> Result<Vec<FoldMetrics>> {
    let mut out = Vec::new();
    for (&f, &t) in thresholds {
        let (p, l) = labelled(rows.iter().filter(|r| r.fold == f));
        if p.is_empty() {
            continue;
        }
        out.push(fold_metrics(f, &p, &l, t)?);
    }
    Ok(out)
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_sd(values: &[Option<f64>]) -> Option<(f64, f64)> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

fn summary_cell(metric: &str, values: &[Option<f64>]) -> String {
    match mean_sd(values) {
        None => NA.to_string(),
        Some((m, s)) if metric == "auc" => format!("{m:.4}±{s:.4}"),
        Some((m, s)) => format!("{m:.2}±{s:.2}"),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| NA.to_string())
}

pub const METRICS_HEADER: [&str; 7] = [
    "fold",
    "n",
    "threshold",
    "auc",
    "accuracy",
    "sensitivity",
    "specificity",
];

/// One row per fold, then a `mean±sd` row.
pub fn metrics_csv(folds: &[FoldMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for f in folds {
        let mut rec = vec![f.fold.to_string(), f.n.to_string(), f.threshold.to_string()];
        rec.extend(METRIC_NAMES.iter().map(|m| opt_cell(f.get(m))));
        w.write_record(rec).map_err(csv_err)?;
    }
    let mut rec = vec![
        "mean±sd".to_string(),
        folds.iter().map(|f| f.n).sum::<usize>().to_string(),
        String::new(),
    ];
    for m in METRIC_NAMES {
        let vals: Vec<Option<f64>> = folds.iter().map(|f| f.get(m)).collect();
        rec.push(summary_cell(m, &vals));
    }
    w.write_record(rec).map_err(csv_err)?;
    finish(w)
}

/// Per-fold rows of a metrics table, keyed by fold; the summary row is skipped.
pub fn parse_metrics(bytes: &[u8]) -> Result<BTreeMap<usize, BTreeMap<String, Option<f64>>>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(PrismError::data(format!(
            "metrics header must be {}",
            METRICS_HEADER.join(",")
        )));
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let Ok(fold) = rec[0].parse::<usize>() else {
            continue;
        };
        let mut m = BTreeMap::new();
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let cell = &rec[3 + i];
            let v =
                if cell == NA {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        PrismError::data(format!("fold {fold}: bad {name} '{cell}'"))
                    })?)
                };
            m.insert(name.to_string(), v);
        }
        if out.insert(fold, m).is_some() {
            return Err(PrismError::data(format!(
                "fold {fold} appears twice in the metrics table"
            )));
        }
    }
    if out.is_empty() {
        return Err(PrismError::data("metrics table has no fold rows"));
    }
    Ok(out)
}

pub const SUBGROUP_HEADER: [&str; 8] = [
    "column",
    "group",
    "n",
    "folds",
    "auc",
    "accuracy",
    "sensitivity",
    "specificity",
];

/// Mean±sd over folds of each metric within every value of `column`.
pub fn subgroup_csv(
    rows: &[PredictionRow],
    clinical: &BTreeMap<String, ClinicalRecord>,
    column: &str,
    thresholds: &BTreeMap<usize, f64>,
) -> Result<Vec<u8>> {
    let mut groups: BTreeMap<String, Vec<&PredictionRow>> = BTreeMap::new();
    for r in rows {
        let rec = clinical.get(&r.patient_id).ok_or_else(|| {
            PrismError::data(format!(
                "patient {} missing from the clinical table",
                r.patient_id
            ))
        })?;
        let value = rec
            .attribute(column)
            .ok_or_else(|| PrismError::config(format!("unknown subgroup column '{column}'")))?;
        groups.entry(value).or_default().push(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUBGROUP_HEADER).map_err(csv_err)?;
    for (value, members) in groups {
        let mut per_fold = Vec::new();
        for (&f, &t) in thresholds {
            let (p, l) = labelled(members.iter().copied().filter(|r| r.fold == f));
            if !p.is_empty() {
                per_fold.push(fold_metrics(f, &p, &l, t)?);
            }
        }
        let n = members.iter().filter(|r| r.label5y.is_some()).count();
        let mut rec = vec![
            column.to_string(),
            value,
            n.to_string(),
            per_fold.len().to_string(),
        ];
        for m in METRIC_NAMES {
            let vals: Vec<Option<f64>> = per_fold.iter().map(|f| f.get(m)).collect();
            rec.push(summary_cell(m, &vals));
        }
        w.write_record(rec).map_err(csv_err)?;
    }
    finish(w)
}
