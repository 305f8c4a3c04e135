//! Subcommand implementations. Each returns the manifest it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use prism_core::cohort::{
    cohort_load, cohort_save, generate_cohort, generate_patch_dataset, parse_clinical_csv,
    read_manifest, ClinicalRecord, Cohort, PatchFeatureBag, Prototypes,
};
use prism_core::mil::{attention_csv, forward_slide, train_prism, FoldResult, SlidePrediction};
use prism_core::morph::{train_morph, transform_bag, MorphHead, MorphReport, MorphTrainConfig};
use prism_core::stratcv::{
    audit_folds, build_folds, folds_csv, split_roles, FoldAssignment, FoldSplit,
};
use prism_core::surv::{
    concordance_index, dichotomized_cox, roc_curve, wilcoxon_signed_rank, RiskCut, SurvivalCurve,
    Ties,
};
use prism_core::{PrismError, Result, SeedRng};
use serde::Serialize;

use crate::config::{RunConfig, ThresholdMode};
use crate::manifest::OutDir;
use crate::svg::{line_chart, steps, Series};
use crate::tables::{
    labelled, metrics_csv, parse_metrics, parse_predictions, per_fold, predictions_csv,
    subgroup_csv, thresholds, PredictionRow, METRIC_NAMES,
};

pub const MORPH_HEAD: &str = "morph_head.prsm";

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PrismError::io(path, e))
}

/// Worker count for fold training: `PRISM_THREADS` if set, otherwise the
/// available parallelism.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("PRISM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(PrismError::config(format!(
                "PRISM_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
    }
}

/// Run `job` for every index in `0..k` on up to `threads` workers. Results
/// come back in index order; the lowest-index error wins.
pub fn run_indexed<T: Send>(
    k: usize,
    threads: usize,
    job: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..k).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, k.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= k {
                    break;
                }
                let r = job(i);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every index is processed")
        })
        .collect()
}

pub fn cmd_generate(config: &RunConfig, out: &mut OutDir) -> Result<Cohort> {
    out.stage("generate");
    let cohort = generate_cohort(&config.cohort).map_err(|e| e.context("generate"))?;
    let manifest = cohort_save(&cohort, out.root())?;
    for f in manifest.tables.iter().chain(&manifest.bags) {
        out.record(&f.path)?;
    }
    out.record("manifest.json")?;
    Ok(cohort)
}

fn load_cohort(dir: &Path, out: &mut OutDir) -> Result<Cohort> {
    out.stage("load_cohort");
    let cohort = cohort_load(dir).map_err(|e| e.context("load cohort"))?;
    out.input(&dir.join("manifest.json"))?;
    Ok(cohort)
}

fn fit_morph(
    config: &RunConfig,
    cohort_config: &prism_core::cohort::CohortConfig,
) -> Result<(MorphHead, MorphReport)> {
    let root = SeedRng::new(config.seed).split("morph");
    let protos = Prototypes::from_config(cohort_config)?;
    let data = generate_patch_dataset(
        &protos,
        config.morph_patches_per_class,
        &mut root.split("patches"),
    )?;
    train_morph(&data, &config.morph, &mut root.split("train"))
        .map_err(|e| e.context("train-morph"))
}

fn save_morph(
    out: &mut OutDir,
    prefix: &str,
    head: &MorphHead,
    cfg: &MorphTrainConfig,
    report: &MorphReport,
) -> Result<()> {
    let rel = format!("{prefix}{MORPH_HEAD}");
    let path = out.path(&rel);
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| PrismError::io(p, e))?;
    }
    head.save(&path, cfg)?;
    out.record(&rel)?;
    out.record(&format!("{prefix}morph_head.json"))?;
    out.write_json(&format!("{prefix}morph_report.json"), report)
}

pub fn cmd_train_morph(
    config: &RunConfig,
    cohort_dir: &Path,
    out: &mut OutDir,
) -> Result<MorphReport> {
    let manifest_path = cohort_dir.join("manifest.json");
    let manifest = read_manifest(cohort_dir)?;
    out.input(&manifest_path)?;
    out.stage("train_morph");
    let (head, report) = fit_morph(config, &manifest.config)?;
    save_morph(out, "", &head, &config.morph, &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct FoldHistory<'a> {
    fold: usize,
    best_epoch: usize,
    history: &'a [prism_core::mil::EpochRecord],
}

fn prediction_rows(
    records: &[ClinicalRecord],
    fold: usize,
    idx: &[usize],
    preds: &[SlidePrediction],
) -> Vec<PredictionRow> {
    idx.iter()
        .zip(preds)
        .map(|(&i, p)| PredictionRow {
            patient_id: p.patient_id.clone(),
            fold,
            prob: p.probability,
            label5y: records[i].label5y,
            time_months: records[i].time_months,
            event: records[i].event,
        })
        .collect()
}

pub struct TrainOutput {
    pub folds: FoldAssignment,
    pub results: Vec<FoldResult>,
    pub predictions: Vec<PredictionRow>,
}

pub fn cmd_train(
    config: &RunConfig,
    cohort_dir: &Path,
    morph_dir: Option<&Path>,
    out: &mut OutDir,
) -> Result<TrainOutput> {
    let cohort = load_cohort(cohort_dir, out)?;
    let head = match morph_dir {
        Some(dir) => {
            let path = dir.join(MORPH_HEAD);
            out.input(&path)?;
            out.input(&path.with_extension("json"))?;
            MorphHead::load(&path)?.0
        }
        None => {
            out.stage("train_morph");
            let (head, report) = fit_morph(config, &cohort.config)?;
            save_morph(out, "morph/", &head, &config.morph, &report)?;
            head
        }
    };
    out.stage("extract_features");
    let bags: Vec<PatchFeatureBag> = cohort
        .bags
        .iter()
        .map(|b| transform_bag(&head, b))
        .collect::<Result<_>>()
        .map_err(|e| e.context("extract morphology features"))?;

    out.stage("folds");
    let k = config.train.folds;
    let folds = build_folds(
        &cohort.records,
        config.cv_mode,
        k,
        config.kmeans_clusters,
        config.folds_seed(),
    )
    .map_err(|e| e.context("folds"))?;
    let mut splits = Vec::with_capacity(k);
    for t in 0..k {
        let roles = split_roles(&folds, t, config.folds_seed())?;
        out.write(
            &format!("folds/test_fold_{t}.csv"),
            &folds_csv(&cohort.records, &folds, &roles)?,
        )?;
        splits.push(FoldSplit::from_roles(t, &roles));
    }

    out.stage("train");
    let dims = config.dims(cohort.config.d_g, head.widths.h1);
    let hyper = config.hyper();
    let results = run_indexed(k, thread_cap()?, |t| {
        train_prism(&bags, &cohort.records, &splits[t], dims, &hyper)
            .map_err(|e| e.context(format!("train fold {t}")))
    })?;

    out.stage("write");
    let mut predictions = Vec::new();
    let mut val_rows = Vec::new();
    let mut attention = Vec::new();
    let mut history = Vec::new();
    for (r, split) in results.iter().zip(&splits) {
        let rel = format!("models/fold_{}.prsm", r.fold);
        let path = out.path(&rel);
        fs::create_dir_all(path.parent().expect("models dir"))
            .map_err(|e| PrismError::io(&path, e))?;
        r.model.save(&path, Some(r.fold))?;
        out.record(&rel)?;
        out.record(&format!("models/fold_{}.json", r.fold))?;
        predictions.extend(prediction_rows(
            &cohort.records,
            r.fold,
            &split.test,
            &r.test,
        ));
        let val: Vec<SlidePrediction> = split
            .val
            .iter()
            .map(|&i| forward_slide(&r.model, &bags[i]))
            .collect::<Result<_>>()?;
        val_rows.extend(prediction_rows(&cohort.records, r.fold, &split.val, &val));
        attention.extend(r.test.iter().cloned());
        history.push(FoldHistory {
            fold: r.fold,
            best_epoch: r.best_epoch,
            history: &r.history,
        });
    }
    out.write("predictions.csv", &predictions_csv(&predictions)?)?;
    out.write("val_predictions.csv", &predictions_csv(&val_rows)?)?;
    out.write("attention.csv", &attention_csv(&attention)?)?;
    out.write_json("history.json", &history)?;
    Ok(TrainOutput {
        folds,
        results,
        predictions,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoxReport {
    pub beta: f64,
    pub se: f64,
    pub hr: f64,
    pub ci95: [f64; 2],
    pub ties: Ties,
    pub converged: bool,
    pub iterations: usize,
    pub cut: f64,
    pub n_high: usize,
    pub n_low: usize,
    pub c_index: Option<f64>,
    pub diagnostic: Option<String>,
}

pub fn cox_report(
    rows: &[PredictionRow],
    ties: Ties,
) -> Result<(CoxReport, SurvivalCurve, SurvivalCurve)> {
    let probs: Vec<f64> = rows.iter().map(|r| r.prob).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.time_months).collect();
    let events: Vec<bool> = rows.iter().map(|r| r.event).collect();
    let d = dichotomized_cox(&probs, &times, &events, RiskCut::Median, ties)?;
    let report = CoxReport {
        beta: d.fit.beta,
        se: d.fit.std_err,
        hr: d.fit.hazard_ratio,
        ci95: [d.fit.ci95.0, d.fit.ci95.1],
        ties,
        converged: d.fit.converged,
        iterations: d.fit.iterations,
        cut: d.cut,
        n_high: d.n_high,
        n_low: d.n_low,
        c_index: concordance_index(&probs, &times, &events).ok(),
        diagnostic: d.fit.diagnostic.clone(),
    };
    Ok((report, d.high, d.low))
}

fn km_outputs(out: &mut OutDir, high: &SurvivalCurve, low: &SurvivalCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PrismError::data(format!("csv: {e}"));
    w.write_record(["time", "at_risk", "deaths", "survival", "group"])
        .map_err(err)?;
    for (name, c) in [("high", high), ("low", low)] {
        for i in 0..c.len() {
            w.write_record([
                c.times[i].to_string(),
                c.at_risk[i].to_string(),
                c.deaths[i].to_string(),
                c.survival[i].to_string(),
                name.to_string(),
            ])
            .map_err(err)?;
        }
    }
    out.write(
        "km.csv",
        &w.into_inner()
            .map_err(|e| PrismError::data(e.to_string()))?,
    )?;
    let x_max = high
        .times
        .iter()
        .chain(&low.times)
        .fold(0.0f64, |a, &b| a.max(b));
    let series: Vec<Series> = [("high risk", high), ("low risk", low)]
        .into_iter()
        .map(|(name, c)| Series {
            name,
            points: steps(
                &c.times
                    .iter()
                    .copied()
                    .zip(c.survival.iter().copied())
                    .collect::<Vec<_>>(),
            ),
        })
        .collect();
    out.write(
        "km.svg",
        line_chart(
            "Overall survival by predicted risk",
            "months",
            "survival",
            x_max,
            &series,
        )
        .as_bytes(),
    )
}

pub fn cmd_km(predictions: &Path, out: &mut OutDir) -> Result<()> {
    out.input(predictions)?;
    let rows = parse_predictions(&read(predictions)?)?;
    let (_, high, low) = cox_report(&rows, Ties::Efron)?;
    km_outputs(out, &high, &low)
}

pub fn cmd_cox(predictions: &Path, ties: Ties, out: &mut OutDir) -> Result<CoxReport> {
    out.input(predictions)?;
    let rows = parse_predictions(&read(predictions)?)?;
    let (report, _, _) = cox_report(&rows, ties)?;
    out.write_json("cox.json", &report)?;
    Ok(report)
}

pub struct EvaluateArgs<'a> {
    pub predictions: &'a Path,
    pub val_predictions: Option<&'a Path>,
    pub clinical: Option<&'a Path>,
    pub group_by: &'a [String],
    pub threshold: Option<f64>,
}

pub fn cmd_evaluate(
    config: &RunConfig,
    args: &EvaluateArgs,
    out: &mut OutDir,
) -> Result<Vec<crate::tables::FoldMetrics>> {
    out.stage("evaluate");
    out.input(args.predictions)?;
    let rows = parse_predictions(&read(args.predictions)?)?;
    let fold_ids: Vec<usize> = {
        let mut f: Vec<usize> = rows.iter().map(|r| r.fold).collect();
        f.sort_unstable();
        f.dedup();
        f
    };
    let val = match (config.threshold_mode, args.val_predictions) {
        (ThresholdMode::Validation, Some(p)) => {
            out.input(p)?;
            Some(parse_predictions(&read(p)?)?)
        }
        (ThresholdMode::Validation, None) => {
            return Err(PrismError::config(
                "threshold_mode validation needs --val-predictions",
            ));
        }
        _ => None,
    };
    let fixed = args.threshold.unwrap_or(config.threshold);
    let th = thresholds(&fold_ids, fixed, val.as_deref())?;
    let metrics = per_fold(&rows, &th)?;
    out.write("metrics.csv", &metrics_csv(&metrics)?)?;

    let (p, l) = labelled(&rows);
    if let Ok(curve) = roc_curve(&p, &l) {
        let mut csv_bytes = String::from("fpr,tpr\n");
        for (x, y) in &curve {
            csv_bytes.push_str(&format!("{x},{y}\n"));
        }
        out.write("roc.csv", csv_bytes.as_bytes())?;
        let svg = line_chart(
            "ROC, pooled test folds",
            "false positive rate",
            "true positive rate",
            1.0,
            &[Series {
                name: "PRISM",
                points: curve,
            }],
        );
        out.write("roc.svg", svg.as_bytes())?;
    }

    let (cox, high, low) = cox_report(&rows, Ties::Efron)?;
    out.write_json("cox.json", &cox)?;
    km_outputs(out, &high, &low)?;

    let columns: Vec<String> = if args.group_by.is_empty() {
        config.subgroup_columns.clone()
    } else {
        args.group_by.to_vec()
    };
    if let Some(clin) = args.clinical {
        out.input(clin)?;
        let records: BTreeMap<String, ClinicalRecord> = parse_clinical_csv(&read(clin)?)?
            .into_iter()
            .map(|r| (r.patient_id.clone(), r))
            .collect();
        for c in &columns {
            out.write(
                &format!("subgroups_{c}.csv"),
                &subgroup_csv(&rows, &records, c, &th)?,
            )?;
        }
    } else if !args.group_by.is_empty() {
        return Err(PrismError::config("--group-by needs --clinical"));
    }
    Ok(metrics)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricComparison {
    pub metric: String,
    pub n_folds: usize,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub w_plus: Option<f64>,
    pub n_nonzero: Option<usize>,
    pub p_value: Option<f64>,
    pub method: Option<String>,
    pub error: Option<String>,
}

pub fn cmd_compare(a: &Path, b: &Path, out: &mut OutDir) -> Result<Vec<MetricComparison>> {
    out.input(a)?;
    out.input(b)?;
    let ma = parse_metrics(&read(a)?)?;
    let mb = parse_metrics(&read(b)?)?;
    if ma.keys().ne(mb.keys()) {
        return Err(PrismError::data(format!(
            "metric tables are not paired: {} folds vs {} folds",
            ma.len(),
            mb.len()
        )));
    }
    let mut report = Vec::new();
    let mut first_error = None;
    for metric in METRIC_NAMES {
        let pairs: Option<Vec<(f64, f64)>> = ma
            .iter()
            .map(|(f, row)| Some((row[metric]?, mb[f][metric]?)))
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut entry = MetricComparison {
            metric: metric.to_string(),
            n_folds: ma.len(),
            mean_a: None,
            mean_b: None,
            w_plus: None,
            n_nonzero: None,
            p_value: None,
            method: None,
            error: None,
        };
        let outcome = match pairs {
            None => Err(PrismError::data(format!(
                "{metric} is undefined in some fold"
            ))),
            Some(pairs) => {
                let (xa, xb): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                entry.mean_a = Some(mean(&xa));
                entry.mean_b = Some(mean(&xb));
                wilcoxon_signed_rank(&xa, &xb)
            }
        };
        match outcome {
            Ok(w) => {
                entry.w_plus = Some(w.w_plus);
                entry.n_nonzero = Some(w.n_nonzero);
                entry.p_value = Some(w.p_value);
                entry.method = Some(format!("{:?}", w.method).to_lowercase());
            }
            Err(e) => {
                entry.error = Some(e.to_string());
                first_error.get_or_insert(e);
            }
        }
        report.push(entry);
    }
    if report.iter().all(|e| e.error.is_some()) {
        return Err(first_error
            .expect("an error was recorded")
            .context("compare"));
    }
    out.write_json("compare.json", &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct FoldsReport {
    mode: String,
    k: usize,
    test_fold: usize,
    audit: prism_core::stratcv::FoldAudit,
    strata: Vec<prism_core::stratcv::StratumRate>,
    income_median: f64,
}

pub fn cmd_folds(
    config: &RunConfig,
    cohort_dir: &Path,
    test_fold: usize,
    out: &mut OutDir,
) -> Result<FoldAssignment> {
    let clinical = cohort_dir.join("clinical.csv");
    out.input(&clinical)?;
    let records = parse_clinical_csv(&read(&clinical)?)?;
    let k = config.train.folds;
    let folds = build_folds(
        &records,
        config.cv_mode,
        k,
        config.kmeans_clusters,
        config.folds_seed(),
    )?;
    let roles = split_roles(&folds, test_fold, config.folds_seed())?;
    out.write("folds.csv", &folds_csv(&records, &folds, &roles)?)?;
    let strata = prism_core::stratcv::assign_strata(&records)?;
    out.write_json(
        "audit.json",
        &FoldsReport {
            mode: config.cv_mode.to_string(),
            k,
            test_fold,
            audit: audit_folds(&records, &folds)?,
            strata: strata.rates,
            income_median: strata.income_median,
        },
    )?;
    Ok(folds)
}
