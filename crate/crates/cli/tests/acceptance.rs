//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Built with `harness = false` so the summary is
//! always visible under `cargo test`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use prism_cli::tables::parse_metrics;
use prism_core::cohort::{
    generate_clinical, generate_patch_dataset, CohortConfig, PatchFeatureBag, Prototypes,
};
use prism_core::fusion::{
    diagonal_selector, fuse_exact, fuse_factorized, FusionMode, FusionParams,
};
use prism_core::mil::{forward_slide, ModelDims, PrismModel, TrainHyper};
use prism_core::morph::{train_morph, MorphTrainConfig};
use prism_core::numcore::{finite_diff_check, Matrix};
use prism_core::stratcv::{audit_folds, build_folds, CvMode};
use prism_core::surv::{
    concordance_index, cox_fit, kaplan_meier, roc_auc, wilcoxon_signed_rank, Ties,
};
use prism_core::SeedRng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_matrix(r: usize, c: usize, rng: &mut SeedRng) -> Matrix {
    Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

fn random_bag(n: usize, d_g: usize, d_m: usize, rng: &mut SeedRng) -> PatchFeatureBag {
    PatchFeatureBag::new(
        "P0001".into(),
        random_matrix(n, d_g, rng),
        random_matrix(n, d_m, rng),
        (0..n).map(|j| j % 13).collect(),
    )
    .unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for mode in [FusionMode::Factorized, FusionMode::Exact] {
        let dims = ModelDims {
            d_g: 6,
            d_m: 5,
            rank: 3,
            d: 4,
            l: 3,
            mode,
        };
        for point in 0..3u64 {
            let mut rng = SeedRng::new(100 + point);
            let base = PrismModel::init(dims, TrainHyper::default(), &rng.split("model")).unwrap();
            let bag = random_bag(3, 6, 5, &mut rng);
            let label = point != 1;
            let mut params = base.params();
            let r = finite_diff_check(&mut params, 1e-6, |ps| {
                let mut m = base.clone();
                m.set_params(ps)?;
                let (loss, grads) = m.loss_and_grad(&bag, label, 5e-4)?;
                for (p, g) in ps.iter_mut().zip(grads) {
                    p.grad = g;
                }
                Ok(loss)
            })
            .map_err(|e| e.to_string())?;
            worst = worst.max(r.max_rel_error);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    ensure(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "max relative error {worst:.2e} over 6 points, {secs:.2}s"
    ))
}

fn mil_invariants() -> Outcome {
    let mut rng = SeedRng::new(7);
    let dims = ModelDims::new(6, 5);
    let model = PrismModel::init(dims, TrainHyper::default(), &rng.split("model")).unwrap();
    let (mut perm_err, mut sum_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.int_inclusive(1, 40);
        let bag = random_bag(n, 6, 5, &mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let shuffled = PatchFeatureBag::new(
            bag.patient_id.clone(),
            bag.generic.select_rows(&order),
            bag.morph.select_rows(&order),
            order.iter().map(|&i| bag.patch_class[i]).collect(),
        )
        .unwrap();
        let a = forward_slide(&model, &bag).map_err(|e| e.to_string())?;
        let b = forward_slide(&model, &shuffled).map_err(|e| e.to_string())?;
        perm_err = perm_err.max((a.probability - b.probability).abs());
        for (k, &i) in order.iter().enumerate() {
            perm_err = perm_err.max((b.attention[k] - a.attention[i]).abs());
        }
        sum_err = sum_err.max((a.attention.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(
        perm_err <= 1e-12,
        format!("permutation changed output by {perm_err:.3e}"),
    )?;
    ensure(
        sum_err <= 1e-9,
        format!("attention sum off by {sum_err:.3e}"),
    )?;
    Ok(format!(
        "permutation error {perm_err:.1e}, attention-sum error {sum_err:.1e} on 100 bags"
    ))
}

/// Direct double loop over the outer product, written from the definition.
fn outer_product_oracle(g: &[f64], m: &[f64], p: &FusionParams) -> Vec<f64> {
    let r = p.rank();
    let proj = |w: &Matrix, x: &[f64]| -> Vec<f64> {
        (0..r)
            .map(|a| (0..x.len()).map(|i| w.get(i, a) * x[i]).sum())
            .collect()
    };
    let (pg, qm) = (proj(&p.w_g, g), proj(&p.w_m, m));
    (0..p.out_dim())
        .map(|o| {
            let mut s = 0.0;
            for a in 0..r {
                for b in 0..r {
                    s += p.w_fusion.get(a * r + b, o) * pg[a] * qm[b];
                }
            }
            s
        })
        .collect()
}

fn fusion_oracle() -> Outcome {
    let mut rng = SeedRng::new(11);
    let (mut exact_err, mut diag_err): (f64, f64) = (0.0, 0.0);
    for rank in 1..=4 {
        for _ in 0..10 {
            let (d_g, d_m, out) = (
                rng.int_inclusive(1, 7),
                rng.int_inclusive(1, 7),
                rng.int_inclusive(1, 6),
            );
            let g: Vec<f64> = (0..d_g).map(|_| rng.normal()).collect();
            let m: Vec<f64> = (0..d_m).map(|_| rng.normal()).collect();
            let exact =
                FusionParams::init(FusionMode::Exact, d_g, d_m, rank, out, &mut rng).unwrap();
            let got = fuse_exact(&g, &m, &exact).map_err(|e| e.to_string())?;
            for (x, y) in got.iter().zip(outer_product_oracle(&g, &m, &exact)) {
                exact_err = exact_err.max((x - y).abs());
            }
            let fact =
                FusionParams::init(FusionMode::Factorized, d_g, d_m, rank, out, &mut rng).unwrap();
            let lifted = diagonal_selector(&fact).map_err(|e| e.to_string())?;
            let a = fuse_factorized(&g, &m, &fact).map_err(|e| e.to_string())?;
            let b = fuse_exact(&g, &m, &lifted).map_err(|e| e.to_string())?;
            for (x, y) in a.iter().zip(&b) {
                diag_err = diag_err.max((x - y).abs());
            }
        }
    }
    ensure(
        exact_err <= 1e-12,
        format!("exact vs oracle {exact_err:.3e}"),
    )?;
    ensure(
        diag_err <= 1e-12,
        format!("diagonal selector {diag_err:.3e}"),
    )?;
    Ok(format!(
        "exact vs loop {exact_err:.1e}, factorized vs lifted {diag_err:.1e}, ranks 1..=4"
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let code = prism_cli::main_with_args(std::iter::once("prism").chain(args.iter().copied()));
    ensure(code == 0, format!("prism {} exited {code}", args.join(" ")))
}

struct PipelineResult {
    mean_auc: f64,
    hr: f64,
    ci95: (f64, f64),
}

/// generate, train and evaluate through the command-line entry point.
fn pipeline(
    root: &Path,
    seed: u64,
    signal: f64,
    n: usize,
    epochs: usize,
) -> Result<PipelineResult, String> {
    let config = root.join("config.json");
    let json = serde_json::json!({
        "seed": seed,
        "cohort": { "n_patients": n, "signal_strength": signal },
        "train": { "epochs": epochs },
    });
    fs::write(&config, json.to_string()).map_err(|e| e.to_string())?;
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let cfg = config.to_string_lossy().into_owned();
    run_cli(&["generate", "--config", &cfg, "--out", &p("cohort")])?;
    run_cli(&[
        "train",
        "--config",
        &cfg,
        "--cohort",
        &p("cohort"),
        "--out",
        &p("run"),
    ])?;
    run_cli(&[
        "evaluate",
        "--config",
        &cfg,
        "--predictions",
        &p("run/predictions.csv"),
        "--clinical",
        &p("cohort/clinical.csv"),
        "--out",
        &p("eval"),
    ])?;
    let metrics =
        parse_metrics(&fs::read(root.join("eval/metrics.csv")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let aucs: Vec<f64> = metrics.values().filter_map(|m| m["auc"]).collect();
    ensure(aucs.len() == metrics.len(), "AUC undefined in some fold")?;
    let cox: serde_json::Value =
        serde_json::from_slice(&fs::read(root.join("eval/cox.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let num = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);
    Ok(PipelineResult {
        mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
        hr: num(&cox["hr"]),
        ci95: (num(&cox["ci95"][0]), num(&cox["ci95"][1])),
    })
}

fn planted_signal() -> Outcome {
    std::env::set_var("PRISM_THREADS", "1");
    let start = Instant::now();
    let strong_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let strong = pipeline(strong_dir.path(), 1, 8.0, 400, 150)?;
    let null_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let null = pipeline(null_dir.path(), 1, 0.0, 400, 150)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "signal 8: AUC {:.3}, HR {:.2} [{:.2}, {:.2}]; signal 0: AUC {:.3}; {secs:.0}s",
        strong.mean_auc, strong.hr, strong.ci95.0, strong.ci95.1, null.mean_auc
    );
    ensure(
        strong.mean_auc >= 0.90,
        format!("strong-signal AUC below 0.90: {detail}"),
    )?;
    ensure(
        strong.hr > 1.0 && strong.ci95.0 > 1.0,
        format!("HR interval includes 1: {detail}"),
    )?;
    ensure(
        (0.40..=0.60).contains(&null.mean_auc),
        format!("null AUC off chance: {detail}"),
    )?;
    ensure(secs < 600.0, format!("too slow: {detail}"))?;
    Ok(detail)
}

/// Partial log-likelihood with no tied event times, straight from the
/// definition.
fn hand_partial_loglik(beta: f64, x: &[f64], t: &[f64], d: &[bool]) -> f64 {
    let mut ll = 0.0;
    for i in 0..t.len() {
        if d[i] {
            let risk: f64 = (0..t.len())
                .filter(|&j| t[j] >= t[i])
                .map(|j| (beta * x[j]).exp())
                .sum();
            ll += beta * x[i] - risk.ln();
        }
    }
    ll
}

fn cox_oracle() -> Outcome {
    let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let d = [true, true, true, false, true, false];
    let x = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
    // coarse grid then successive refinement
    let (mut lo, mut hi, mut best) = (-10.0f64, 10.0f64, 0.0f64);
    for _ in 0..8 {
        let step = (hi - lo) / 2000.0;
        best = (0..=2000)
            .map(|k| lo + k as f64 * step)
            .max_by(|a, b| {
                hand_partial_loglik(*a, &x, &t, &d).total_cmp(&hand_partial_loglik(*b, &x, &t, &d))
            })
            .unwrap();
        (lo, hi) = (best - 2.0 * step, best + 2.0 * step);
    }
    let fit = cox_fit(&x, &t, &d, Ties::Efron).map_err(|e| e.to_string())?;
    ensure(
        (fit.beta - best).abs() < 1e-4,
        format!("beta {} vs grid {best}", fit.beta),
    )?;

    let mut rng = SeedRng::new(500);
    let n = 500;
    let cov: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for &c in &cov {
        let death = -rng.uniform().ln() / (1.2 * c).exp();
        let censor = 3.0 * rng.uniform();
        times.push(death.min(censor));
        events.push(death <= censor);
    }
    let planted = cox_fit(&cov, &times, &events, Ties::Efron).map_err(|e| e.to_string())?;
    ensure(
        (planted.beta - 1.2).abs() <= 0.2,
        format!("planted log-HR 1.2 fitted as {}", planted.beta),
    )?;

    let z0 = planted.wald_z();
    let mut z_err: f64 = 0.0;
    for (scale, shift) in [(0.1, 0.0), (7.5, 0.0), (1.0, -4.0), (2.5, 3.0)] {
        let moved: Vec<f64> = cov.iter().map(|c| scale * c + shift).collect();
        let f = cox_fit(&moved, &times, &events, Ties::Efron).map_err(|e| e.to_string())?;
        z_err = z_err.max((f.wald_z() - z0).abs());
    }
    ensure(z_err <= 1e-6, format!("Wald z moved by {z_err:.3e}"))?;
    Ok(format!(
        "fixture beta {:.6} vs grid {best:.6}; planted 1.2 -> {:.3}; Wald z drift {z_err:.1e}",
        fit.beta, planted.beta
    ))
}

fn km_fixture() -> Outcome {
    let c = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]).map_err(|e| e.to_string())?;
    ensure(
        c.survival == vec![2.0 / 3.0, 2.0 / 3.0, 0.0],
        format!("fixture curve {:?}", c.survival),
    )?;
    let mut rng = SeedRng::new(6);
    for _ in 0..10 {
        let n = rng.int_inclusive(2, 30);
        let times: Vec<f64> = (0..n).map(|_| rng.int_inclusive(1, 12) as f64).collect();
        let curve = kaplan_meier(&times, &vec![true; n]).map_err(|e| e.to_string())?;
        for (k, &tk) in curve.times.iter().enumerate() {
            let surviving = times.iter().filter(|&&t| t > tk).count() as f64 / n as f64;
            ensure(
                (curve.survival[k] - surviving).abs() < 1e-12,
                format!(
                    "no-censoring curve {} vs empirical {surviving} at {tk}",
                    curve.survival[k]
                ),
            )?;
        }
    }
    Ok("fixture (2/3, 2/3, 0) exact; uncensored curve equals empirical survivor fraction".into())
}

fn brute_c_index(s: &[f64], t: &[f64], e: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if i != j && e[i] && t[i] < t[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn brute_auc(p: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p.len() {
        for j in 0..p.len() {
            if y[i] && !y[j] {
                den += 1.0;
                num += if p[i] > p[j] {
                    1.0
                } else if p[i] == p[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn pair_enumerators() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = SeedRng::new(700 + seed);
        let n = 50;
        // coarse values so that ties in scores and times occur
        let s: Vec<f64> = (0..n)
            .map(|_| (rng.uniform() * 10.0).floor() / 10.0)
            .collect();
        let t: Vec<f64> = (0..n).map(|_| rng.int_inclusive(1, 20) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.6)).collect();
        let y: Vec<bool> = (0..n).map(|i| i % 3 == 0 || rng.bernoulli(0.3)).collect();
        let c = concordance_index(&s, &t, &e).map_err(|e| e.to_string())?;
        let a = roc_auc(&s, &y).map_err(|e| e.to_string())?;
        worst = worst
            .max((c - brute_c_index(&s, &t, &e)).abs())
            .max((a - brute_auc(&s, &y)).abs());
    }
    ensure(worst < 1e-12, format!("disagreement {worst:.3e}"))?;
    Ok(format!(
        "c-index and AUC agree with pair enumeration to {worst:.1e} on 10 seeds"
    ))
}

/// Two-sided p from all 2^n sign assignments of the observed ranks.
fn enumerated_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        for k in i..=j {
            ranks[order[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let observed: f64 = (0..n).filter(|&k| diffs[k] > 0.0).map(|k| ranks[k]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n)
            .filter(|&k| mask & (1 << k) != 0)
            .map(|k| ranks[k])
            .sum();
        le += (w <= observed + 1e-9) as u64;
        ge += (w >= observed - 1e-9) as u64;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

fn wilcoxon_exact() -> Outcome {
    let mut rng = SeedRng::new(808);
    let mut worst: f64 = 0.0;
    for inst in 0..10 {
        let n = 5 + inst % 8;
        let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.normal() + 0.3).collect();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let r = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((r.p_value - enumerated_p(&diffs)).abs());
    }
    ensure(worst < 1e-12, format!("p-value disagreement {worst:.3e}"))?;
    Ok(format!(
        "exact p matches 2^n enumeration to {worst:.1e}, n in 5..=12"
    ))
}

fn stratified_cv() -> Outcome {
    for seed in 0..20u64 {
        let mut rng = SeedRng::new(seed);
        let cfg = CohortConfig {
            n_patients: rng.int_inclusive(60, 400),
            seed,
            ..CohortConfig::default()
        };
        let records = generate_clinical(&cfg).map_err(|e| e.to_string())?;
        let k = rng.int_inclusive(2, 8);
        let f = build_folds(&records, CvMode::Stratified, k, 6, seed).map_err(|e| e.to_string())?;
        ensure(
            f.len() == records.len() && f.fold.iter().all(|&x| x < k),
            format!("seed {seed}: not a partition"),
        )?;
        let sizes = f.fold_sizes();
        let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        ensure(spread <= 1, format!("seed {seed}: fold sizes {sizes:?}"))?;
        ensure(
            f.max_cell_imbalance() <= 1,
            format!("seed {seed}: cell imbalance {}", f.max_cell_imbalance()),
        )?;
    }
    let mut wins = 0;
    for seed in 0..20u64 {
        let cfg = CohortConfig {
            n_patients: 400,
            seed: 1000 + seed,
            ..CohortConfig::default()
        };
        let records = generate_clinical(&cfg).map_err(|e| e.to_string())?;
        let dev = |mode| -> Result<f64, String> {
            let f = build_folds(&records, mode, 5, 6, seed).map_err(|e| e.to_string())?;
            Ok(audit_folds(&records, &f)
                .map_err(|e| e.to_string())?
                .max_deviation)
        };
        if dev(CvMode::Stratified)? < dev(CvMode::Naive)? {
            wins += 1;
        }
    }
    ensure(
        wins >= 14,
        format!("stratified beat naive in {wins}/20 seeds"),
    )?;
    Ok(format!(
        "20 partitions balanced within 1; stratified beat naive in {wins}/20 seeds"
    ))
}

fn morph_classifier() -> Outcome {
    let cfg = CohortConfig::default();
    let protos = Prototypes::from_config(&cfg).map_err(|e| e.to_string())?;
    let rng = SeedRng::new(31);
    let data = generate_patch_dataset(&protos, 200, &mut rng.split("patches"))
        .map_err(|e| e.to_string())?;
    let config = MorphTrainConfig::default();
    let (_, report) =
        train_morph(&data, &config, &mut rng.split("train")).map_err(|e| e.to_string())?;

    let held = generate_patch_dataset(&protos, 100, &mut rng.split("held-out"))
        .map_err(|e| e.to_string())?;
    let mut correct = 0;
    for (i, &label) in held.labels.iter().enumerate() {
        let x = held.features.row(i);
        let nearest = (0..13)
            .min_by(|&a, &b| {
                let d = |c: usize| {
                    protos
                        .morph
                        .row(c)
                        .iter()
                        .zip(x)
                        .map(|(p, v)| (p - v).powi(2))
                        .sum::<f64>()
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        correct += (nearest == label) as usize;
    }
    let oracle = correct as f64 / held.labels.len() as f64;

    let mut shuffled = data.clone();
    rng.split("shuffle-labels").shuffle(&mut shuffled.labels);
    let (_, chance) =
        train_morph(&shuffled, &config, &mut rng.split("train")).map_err(|e| e.to_string())?;
    let detail = format!(
        "test accuracy {:.3}, nearest-prototype oracle {oracle:.3}, shuffled labels {:.3}",
        report.test_accuracy, chance.test_accuracy
    );
    ensure(
        report.test_accuracy >= 0.85,
        format!("classifier too weak: {detail}"),
    )?;
    ensure(oracle >= 0.9, format!("oracle below 0.9: {detail}"))?;
    ensure(
        (chance.test_accuracy - 1.0 / 13.0).abs() <= 0.06,
        format!("shuffled labels not at chance: {detail}"),
    )?;
    Ok(detail)
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "timings.json") {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path(), 42, 4.0, 120, 5)?;
    pipeline(b.path(), 42, 4.0, 120, 5)?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    ensure(ta.keys().eq(tb.keys()), "runs produced different file sets")?;
    let differing: Vec<&String> = ta
        .iter()
        .filter(|(k, v)| tb[*k] != **v)
        .map(|(k, _)| k)
        .collect();
    ensure(differing.is_empty(), format!("files differ: {differing:?}"))?;
    let manifests = ta
        .keys()
        .filter(|k| k.ends_with("run_manifest.json"))
        .count();
    Ok(format!(
        "{} files byte-identical across two runs, including {manifests} manifests",
        ta.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient correctness", gradients),
        ("MIL invariants", mil_invariants),
        ("fusion oracle", fusion_oracle),
        ("planted-signal recovery", planted_signal),
        ("Cox oracle", cox_oracle),
        ("Kaplan-Meier fixture", km_fixture),
        ("c-index and AUC", pair_enumerators),
        ("Wilcoxon exact", wilcoxon_exact),
        ("stratified CV", stratified_cv),
        ("morphology classifier", morph_classifier),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
