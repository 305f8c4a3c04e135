//! End-to-end checks through the `prism` binary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn prism(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prism"))
        .args(args)
        .env("PRISM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = prism(args);
    assert!(
        out.status.success(),
        "prism {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    prism(args).status.code().expect("exit code")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    s(&p)
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Small cohort plus a quick training run shared by several tests.
struct Trained {
    dir: TempDir,
    config: String,
}

impl Trained {
    fn new(extra: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let config = write_config(
            dir.path(),
            &format!(
                r#"{{"seed": 5, "cohort": {{"n_patients": 90}}, "train": {{"epochs": 3}}{extra}}}"#
            ),
        );
        let t = Self { dir, config };
        ok(&[
            "generate",
            "--config",
            &t.config,
            "--out",
            &s(&t.path("cohort")),
        ]);
        ok(&[
            "train",
            "--config",
            &t.config,
            "--cohort",
            &s(&t.path("cohort")),
            "--out",
            &s(&t.path("run")),
        ]);
        t
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

#[test]
fn generate_default_size_and_n_override() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "generate",
        "--seed",
        "1",
        "--out",
        &s(&dir.path().join("full")),
    ]);
    assert_eq!(rows(&dir.path().join("full/clinical.csv")).len(), 424);
    ok(&[
        "generate",
        "--seed",
        "1",
        "--n",
        "50",
        "--out",
        &s(&dir.path().join("small")),
    ]);
    assert_eq!(rows(&dir.path().join("small/clinical.csv")).len(), 50);
}

#[test]
fn generate_twice_gives_identical_manifest() {
    let dir = TempDir::new().unwrap();
    for name in ["a", "b"] {
        ok(&[
            "generate",
            "--seed",
            "9",
            "--n",
            "40",
            "--out",
            &s(&dir.path().join(name)),
        ]);
    }
    for file in ["run_manifest.json", "manifest.json", "clinical.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(file)).unwrap(),
            fs::read(dir.path().join("b").join(file)).unwrap()
        );
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = s(&dir.path().join("cohort"));
    ok(&["generate", "--n", "30", "--out", &out]);
    // non-empty output without --force
    assert_eq!(code(&["generate", "--n", "30", "--out", &out]), 2);
    ok(&["generate", "--n", "30", "--force", "--out", &out]);
    // unknown config key, unknown flag, bad enum value
    let bad = write_config(dir.path(), r#"{"seed": 1, "epochs": 3}"#);
    assert_eq!(
        code(&[
            "generate",
            "--config",
            &bad,
            "--out",
            &s(&dir.path().join("x"))
        ]),
        2
    );
    assert_eq!(code(&["generate", "--bogus"]), 2);
    assert_eq!(code(&["train", "--cv-mode", "random", "--cohort", &out]), 2);
    // missing input
    let missing = s(&dir.path().join("nowhere"));
    assert_eq!(
        code(&[
            "train",
            "--cohort",
            &missing,
            "--out",
            &s(&dir.path().join("y"))
        ]),
        5
    );
    // malformed predictions
    let preds = dir.path().join("bad.csv");
    fs::write(
        &preds,
        "patient_id,fold,prob,label5y,time_months,event\nP1,0,1.7,1,3,1\n",
    )
    .unwrap();
    assert_eq!(
        code(&[
            "evaluate",
            "--predictions",
            &s(&preds),
            "--out",
            &s(&dir.path().join("z"))
        ]),
        3
    );
}

#[test]
fn five_folds_cover_every_patient_once() {
    let t = Trained::new("");
    for k in 0..5 {
        assert!(t.path(&format!("run/models/fold_{k}.prsm")).is_file());
        assert!(t.path(&format!("run/folds/test_fold_{k}.csv")).is_file());
    }
    assert!(!t.path("run/models/fold_5.prsm").exists());
    let ids: Vec<String> = rows(&t.path("run/predictions.csv"))
        .into_iter()
        .map(|r| r[0].clone())
        .collect();
    let unique: BTreeSet<&String> = ids.iter().collect();
    assert_eq!(ids.len(), 90);
    assert_eq!(unique.len(), 90);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(t.path("run/run_manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "predictions.csv"));
}

#[test]
fn reused_morph_head_matches_internal_training() {
    let t = Trained::new("");
    ok(&[
        "train-morph",
        "--config",
        &t.config,
        "--cohort",
        &s(&t.path("cohort")),
        "--out",
        &s(&t.path("morph")),
    ]);
    ok(&[
        "train",
        "--config",
        &t.config,
        "--cohort",
        &s(&t.path("cohort")),
        "--morph",
        &s(&t.path("morph")),
        "--out",
        &s(&t.path("run2")),
    ]);
    assert_eq!(
        fs::read(t.path("run/predictions.csv")).unwrap(),
        fs::read(t.path("run2/predictions.csv")).unwrap()
    );
}

#[test]
fn cv_modes_change_folds_not_patients() {
    let dir = TempDir::new().unwrap();
    let cohort = s(&dir.path().join("cohort"));
    ok(&["generate", "--n", "120", "--seed", "3", "--out", &cohort]);
    let mut tables = BTreeMap::new();
    for mode in ["stratified", "naive"] {
        let out = dir.path().join(mode);
        ok(&[
            "folds",
            "--seed",
            "3",
            "--cv-mode",
            mode,
            "--cohort",
            &cohort,
            "--out",
            &s(&out),
        ]);
        tables.insert(mode, rows(&out.join("folds.csv")));
    }
    let ids = |m: &str| {
        tables[m]
            .iter()
            .map(|r| r[0].clone())
            .collect::<BTreeSet<_>>()
    };
    assert_eq!(ids("stratified"), ids("naive"));
    assert_ne!(tables["stratified"], tables["naive"]);
}

/// Rank-sum AUC from the predictions table, independent of the library.
fn pair_auc(rows: &[&Vec<String>]) -> f64 {
    let lab: Vec<(f64, bool)> = rows
        .iter()
        .filter(|r| r[3] != "NA")
        .map(|r| (r[2].parse().unwrap(), r[3] == "1"))
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for &(p, y) in &lab {
        for &(q, z) in &lab {
            if y && !z {
                den += 1.0;
                num += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

#[test]
fn evaluate_matches_recomputation_and_is_pure() {
    let t = Trained::new("");
    let preds = s(&t.path("run/predictions.csv"));
    let clinical = s(&t.path("cohort/clinical.csv"));
    for name in ["eval", "eval2"] {
        ok(&[
            "evaluate",
            "--predictions",
            &preds,
            "--clinical",
            &clinical,
            "--group-by",
            "treatment",
            "--out",
            &s(&t.path(name)),
        ]);
    }
    for file in [
        "metrics.csv",
        "cox.json",
        "km.csv",
        "km.svg",
        "roc.csv",
        "subgroups_treatment.csv",
        "run_manifest.json",
    ] {
        assert_eq!(
            fs::read(t.path("eval").join(file)).unwrap(),
            fs::read(t.path("eval2").join(file)).unwrap(),
            "{file}"
        );
    }
    let pred_rows = rows(&t.path("run/predictions.csv"));
    let metrics = rows(&t.path("eval/metrics.csv"));
    for m in metrics.iter().filter(|m| m[0] != "mean±sd") {
        let fold_rows: Vec<&Vec<String>> = pred_rows.iter().filter(|r| r[1] == m[0]).collect();
        let expected = pair_auc(&fold_rows);
        let got: f64 = m[3].parse().unwrap();
        assert!(
            (got - expected).abs() < 1e-6,
            "fold {}: {got} vs {expected}",
            m[0]
        );
    }
    let sub = rows(&t.path("eval/subgroups_treatment.csv"));
    assert_eq!(sub.len(), 2);
    assert!(sub
        .iter()
        .all(|r| r[0] == "treatment" && r[4].contains('±') || r[4] == "n/a"));
}

fn write_predictions(path: &Path, rows: &[(usize, f64, &str, f64, u8)]) {
    let mut text = String::from("patient_id,fold,prob,label5y,time_months,event\n");
    for (i, (fold, p, label, time, event)) in rows.iter().enumerate() {
        text.push_str(&format!(
            "P{:04},{fold},{p},{label},{time},{event}\n",
            i + 1
        ));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn perfect_predictions_score_perfectly() {
    let dir = TempDir::new().unwrap();
    let mut fixture = Vec::new();
    for fold in 0..2 {
        for k in 0..6 {
            let died = k % 2 == 0;
            let (p, label, time, event) = if died {
                (0.9 - 0.01 * k as f64, "1", 10.0 + k as f64, 1)
            } else {
                (0.1, "0", 70.0 + k as f64, 0)
            };
            fixture.push((fold, p, label, time, event));
        }
    }
    let preds = dir.path().join("preds.csv");
    write_predictions(&preds, &fixture);
    ok(&[
        "evaluate",
        "--predictions",
        &s(&preds),
        "--out",
        &s(&dir.path().join("eval")),
    ]);
    for m in rows(&dir.path().join("eval/metrics.csv"))
        .iter()
        .filter(|m| m[0] != "mean±sd")
    {
        assert_eq!(m[3], "1");
        assert_eq!(m[4], "100");
    }
}

#[test]
fn single_class_subgroup_is_marked_not_crashed() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    ok(&["generate", "--n", "40", "--seed", "2", "--out", &s(&cohort)]);
    let clinical = rows(&cohort.join("clinical.csv"));
    // every labelled patient gets the same label: AUC undefined everywhere
    let fixture: Vec<(usize, f64, &str, f64, u8)> = (0..clinical.len())
        .map(|i| {
            (
                i % 2,
                0.2 + 0.01 * i as f64,
                "0",
                10.0 + i as f64,
                (i % 3 == 0) as u8,
            )
        })
        .collect();
    let preds = dir.path().join("preds.csv");
    write_predictions(&preds, &fixture);
    ok(&[
        "evaluate",
        "--predictions",
        &s(&preds),
        "--clinical",
        &s(&cohort.join("clinical.csv")),
        "--group-by",
        "sex",
        "--out",
        &s(&dir.path().join("eval")),
    ]);
    let sub = rows(&dir.path().join("eval/subgroups_sex.csv"));
    assert!(!sub.is_empty());
    assert!(sub.iter().all(|r| r[4] == "n/a"));
}

fn write_metrics(path: &Path, aucs: &[f64]) {
    let mut text = String::from("fold,n,threshold,auc,accuracy,sensitivity,specificity\n");
    for (f, a) in aucs.iter().enumerate() {
        text.push_str(&format!(
            "{f},20,0.5,{a},{},{},{}\n",
            60.0 + f as f64,
            40.0 + f as f64,
            80.0 - f as f64
        ));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn compare_paired_tables() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let aucs = [0.61, 0.7, 0.66, 0.73, 0.69];
    write_metrics(&a, &aucs);
    write_metrics(&b, &aucs.map(|x| x + 1e-3));
    assert_eq!(
        code(&[
            "compare",
            "--a",
            &s(&a),
            "--b",
            &s(&a),
            "--out",
            &s(&dir.path().join("same"))
        ]),
        3
    );
    ok(&[
        "compare",
        "--a",
        &s(&a),
        "--b",
        &s(&b),
        "--out",
        &s(&dir.path().join("cmp")),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("cmp/compare.json")).unwrap()).unwrap();
    let auc = report
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["metric"] == "auc")
        .unwrap();
    assert_eq!(auc["p_value"].as_f64().unwrap(), 0.0625);
    assert_eq!(auc["method"], "exact");
    // other metrics are identical in both tables and carry an error instead
    assert!(report
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["metric"] != "auc")
        .all(|e| e["error"].is_string()));

    let short = dir.path().join("short.csv");
    write_metrics(&short, &aucs[..4]);
    assert_eq!(
        code(&[
            "compare",
            "--a",
            &s(&a),
            "--b",
            &s(&short),
            "--out",
            &s(&dir.path().join("unpaired"))
        ]),
        3
    );
}

#[test]
fn km_and_cox_subcommands() {
    let t = Trained::new("");
    let preds = s(&t.path("run/predictions.csv"));
    ok(&["km", "--predictions", &preds, "--out", &s(&t.path("km"))]);
    let header = fs::read_to_string(t.path("km/km.csv")).unwrap();
    assert!(header.starts_with("time,at_risk,deaths,survival,group\n"));
    assert!(fs::read_to_string(t.path("km/km.svg"))
        .unwrap()
        .starts_with("<svg"));
    ok(&[
        "cox",
        "--ties",
        "breslow",
        "--predictions",
        &preds,
        "--out",
        &s(&t.path("cox")),
    ]);
    let cox: serde_json::Value =
        serde_json::from_slice(&fs::read(t.path("cox/cox.json")).unwrap()).unwrap();
    assert_eq!(cox["ties"], "breslow");
    for key in ["beta", "se", "hr", "ci95", "converged"] {
        assert!(cox.get(key).is_some(), "{key}");
    }
}

#[test]
fn exact_fusion_mode_trains() {
    let t = Trained::new(r#", "model": {"fusion_mode": "exact"}"#);
    let sidecar: serde_json::Value =
        serde_json::from_slice(&fs::read(t.path("run/models/fold_0.json")).unwrap()).unwrap();
    assert!(sidecar.to_string().contains("exact"), "{sidecar}");
}
