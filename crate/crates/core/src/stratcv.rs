//! Demographic strata and stratified cross-validation folds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::ClinicalRecord;
use crate::error::{PrismError, Result};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    AtMost65,
    Over65,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BmiBand {
    Under25,
    From25To30,
    AtLeast30,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IncomeBand {
    AtMostMedian,
    AboveMedian,
}

/// Five-year outcome; `Unknown` for patients censored before 60 months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Died5y,
    Survived5y,
    Unknown,
}

impl Outcome {
    pub fn from_label(label: Option<bool>) -> Self {
        match label {
            Some(true) => Outcome::Died5y,
            Some(false) => Outcome::Survived5y,
            None => Outcome::Unknown,
        }
    }
}

impl AgeBand {
    pub fn of(age: f64) -> Self {
        if age <= 65.0 {
            AgeBand::AtMost65
        } else {
            AgeBand::Over65
        }
    }
}

impl BmiBand {
    pub fn of(bmi: f64) -> Self {
        if bmi < 25.0 {
            BmiBand::Under25
        } else if bmi < 30.0 {
            BmiBand::From25To30
        } else {
            BmiBand::AtLeast30
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub age: AgeBand,
    pub bmi: BmiBand,
    pub income: IncomeBand,
    pub outcome: Outcome,
}

impl Stratum {
    /// Demographic part of the label, without the outcome.
    pub fn demographic_label(&self) -> String {
        let age = match self.age {
            AgeBand::AtMost65 => "age<=65",
            AgeBand::Over65 => "age>65",
        };
        let bmi = match self.bmi {
            BmiBand::Under25 => "bmi<25",
            BmiBand::From25To30 => "bmi25-30",
            BmiBand::AtLeast30 => "bmi>=30",
        };
        let income = match self.income {
            IncomeBand::AtMostMedian => "income<=median",
            IncomeBand::AboveMedian => "income>median",
        };
        format!("{age}/{bmi}/{income}")
    }
}

fn outcome_label(o: Outcome) -> &'static str {
    match o {
        Outcome::Died5y => "died5y",
        Outcome::Survived5y => "survived5y",
        Outcome::Unknown => "unknown",
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}",
            self.demographic_label(),
            outcome_label(self.outcome)
        )
    }
}

/// Lower median: the `⌈n/2⌉`-th smallest value.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumRate {
    pub stratum: String,
    pub n: usize,
    pub n_labelled: usize,
    pub deaths: usize,
    /// Five-year death rate among labelled patients; `None` if nobody is labelled.
    pub death_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataReport {
    pub strata: Vec<Stratum>,
    pub income_median: f64,
    /// Rates per demographic stratum (outcome pooled), sorted by label.
    pub rates: Vec<StratumRate>,
}

pub fn assign_strata(records: &[ClinicalRecord]) -> Result<StrataReport> {
    for r in records {
        for (name, v) in [("age", r.age), ("bmi", r.bmi), ("income", r.income)] {
            if !v.is_finite() {
                return Err(PrismError::data(format!(
                    "patient {} has missing {name}",
                    r.patient_id
                )));
            }
        }
    }
    let incomes: Vec<f64> = records.iter().map(|r| r.income).collect();
    let median =
        lower_median(&incomes).ok_or_else(|| PrismError::data("no patients to stratify"))?;
    let strata: Vec<Stratum> = records
        .iter()
        .map(|r| Stratum {
            age: AgeBand::of(r.age),
            bmi: BmiBand::of(r.bmi),
            income: if r.income <= median {
                IncomeBand::AtMostMedian
            } else {
                IncomeBand::AboveMedian
            },
            outcome: Outcome::from_label(r.label5y),
        })
        .collect();
    let mut groups: BTreeMap<String, StratumRate> = BTreeMap::new();
    for (s, r) in strata.iter().zip(records) {
        let key = s.demographic_label();
        let e = groups.entry(key.clone()).or_insert(StratumRate {
            stratum: key,
            n: 0,
            n_labelled: 0,
            deaths: 0,
            death_rate: None,
        });
        e.n += 1;
        if let Some(l) = r.label5y {
            e.n_labelled += 1;
            e.deaths += l as usize;
        }
    }
    let rates = groups
        .into_values()
        .map(|mut e| {
            e.death_rate = (e.n_labelled > 0).then(|| e.deaths as f64 / e.n_labelled as f64);
            e
        })
        .collect();
    Ok(StrataReport {
        strata,
        income_median: median,
        rates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMode {
    #[default]
    Stratified,
    Kmeans,
    Naive,
}

impl fmt::Display for CvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvMode::Stratified => "stratified",
            CvMode::Kmeans => "kmeans",
            CvMode::Naive => "naive",
        })
    }
}

impl FromStr for CvMode {
    type Err = PrismError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stratified" => Ok(CvMode::Stratified),
            "kmeans" => Ok(CvMode::Kmeans),
            "naive" => Ok(CvMode::Naive),
            other => Err(PrismError::config(format!(
                "unknown cv mode '{other}' (expected stratified, kmeans or naive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

/// Fold index and cell label per patient, in cohort order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold: Vec<usize>,
    pub cell: Vec<String>,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.fold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold.is_empty()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold {
            s[f] += 1;
        }
        s
    }

    /// Largest gap between two folds' counts within any cell.
    pub fn max_cell_imbalance(&self) -> usize {
        let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (c, &f) in self.cell.iter().zip(&self.fold) {
            counts.entry(c).or_insert_with(|| vec![0; self.k])[f] += 1;
        }
        counts
            .values()
            .map(|v| v.iter().max().unwrap() - v.iter().min().unwrap())
            .max()
            .unwrap_or(0)
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(PrismError::config(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    if k > n {
        return Err(PrismError::config(format!(
            "{k} folds requested for {n} patients"
        )));
    }
    Ok(())
}

/// Members per cell. Cells are ordered by their last `/` segment (the
/// outcome) first, so a pointer dealt across cells sweeps each outcome
/// contiguously.
fn group_cells(cells: &[String]) -> BTreeMap<(&str, &str), Vec<usize>> {
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        let outcome = c.rsplit('/').next().unwrap_or("");
        groups.entry((outcome, c.as_str())).or_default().push(i);
    }
    groups
}

/// Shuffle each cell and deal its members round-robin into `k` folds. The
/// dealing position carries over from one cell to the next, so fold totals
/// stay balanced as well.
pub fn make_folds(cells: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    check_k(k, cells.len())?;
    let mut rng = SeedRng::new(seed).split("folds");
    let mut fold = vec![0; cells.len()];
    let mut next = 0;
    for (_, mut members) in group_cells(cells) {
        rng.shuffle(&mut members);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment {
        k,
        fold,
        cell: cells.to_vec(),
    })
}

/// Cell labels (stratum including outcome) for threshold stratification.
pub fn stratum_cells(report: &StrataReport) -> Vec<String> {
    report.strata.iter().map(|s| s.to_string()).collect()
}

/// Plain shuffled K-fold ignoring all patient attributes.
pub fn naive_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    check_k(k, n)?;
    let mut rng = SeedRng::new(seed).split("naive");
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut fold = vec![0; n];
    for (pos, i) in order.into_iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(FoldAssignment {
        k,
        fold,
        cell: vec!["all".to_string(); n],
    })
}

/// Seeded Lloyd's k-means on z-scored age, BMI and income. Returns one
/// cluster index per record.
pub fn kmeans_clusters(records: &[ClinicalRecord], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > records.len() {
        return Err(PrismError::config(format!(
            "{k} clusters requested for {} patients",
            records.len()
        )));
    }
    let cols: [Vec<f64>; 3] = [
        records.iter().map(|r| r.age).collect(),
        records.iter().map(|r| r.bmi).collect(),
        records.iter().map(|r| r.income).collect(),
    ];
    let z: Vec<[f64; 3]> = {
        let stats: Vec<(f64, f64)> = cols
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                let mean = c.iter().sum::<f64>() / n;
                let sd = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                (mean, if sd > 0.0 { sd } else { 1.0 })
            })
            .collect();
        (0..records.len())
            .map(|i| std::array::from_fn(|j| (cols[j][i] - stats[j].0) / stats[j].1))
            .collect()
    };
    let mut rng = SeedRng::new(seed).split("kmeans");
    let mut order: Vec<usize> = (0..z.len()).collect();
    rng.shuffle(&mut order);
    let mut centers: Vec<[f64; 3]> = order[..k].iter().map(|&i| z[i]).collect();
    let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|j| (a[j] - b[j]).powi(2)).sum::<f64>();
    let mut assign = vec![usize::MAX; z.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in z.iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if dist(p, &centers[c]) < dist(p, &centers[best]) {
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64; 3]> = z
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                *center = std::array::from_fn(|j| {
                    members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64
                });
            }
        }
    }
    Ok(assign)
}

/// Cell labels for the k-means reading: cluster crossed with outcome.
pub fn cluster_cells(records: &[ClinicalRecord], clusters: &[usize]) -> Vec<String> {
    records
        .iter()
        .zip(clusters)
        .map(|(r, c)| {
            format!(
                "cluster{c}/{}",
                outcome_label(Outcome::from_label(r.label5y))
            )
        })
        .collect()
}

/// Fold `test_fold` becomes the test set. The remaining patients are dealt
/// cell by cell into eight slots; slot 0 is validation and the rest train.
pub fn split_roles(folds: &FoldAssignment, test_fold: usize, seed: u64) -> Result<Vec<Role>> {
    if test_fold >= folds.k {
        return Err(PrismError::config(format!(
            "test fold {test_fold} out of range for {} folds",
            folds.k
        )));
    }
    let mut rng = SeedRng::new(seed).split(&format!("roles/{test_fold}"));
    let mut roles = vec![Role::Train; folds.len()];
    let mut next = 0usize;
    for (_, members) in group_cells(&folds.cell) {
        let mut rest = Vec::new();
        for i in members {
            if folds.fold[i] == test_fold {
                roles[i] = Role::Test;
            } else {
                rest.push(i);
            }
        }
        rng.shuffle(&mut rest);
        for i in rest {
            if next.is_multiple_of(8) {
                roles[i] = Role::Val;
            }
            next += 1;
        }
    }
    Ok(roles)
}

/// Indices per role for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    pub fn from_roles(fold: usize, roles: &[Role]) -> Self {
        let pick = |want: Role| (0..roles.len()).filter(|&i| roles[i] == want).collect();
        Self {
            fold,
            train: pick(Role::Train),
            val: pick(Role::Val),
            test: pick(Role::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldStats {
    pub fold: usize,
    pub n: usize,
    pub n_labelled: usize,
    pub deaths: usize,
    pub prevalence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldAudit {
    pub cohort_prevalence: f64,
    pub folds: Vec<FoldStats>,
    /// Largest |fold prevalence − cohort prevalence| over folds.
    pub max_deviation: f64,
}

pub fn audit_folds(records: &[ClinicalRecord], folds: &FoldAssignment) -> Result<FoldAudit> {
    if records.len() != folds.len() {
        return Err(PrismError::dim("fold assignment does not match the cohort"));
    }
    let rate = |deaths: usize, n: usize| (n > 0).then(|| deaths as f64 / n as f64);
    let mut stats: Vec<FoldStats> = (0..folds.k)
        .map(|fold| FoldStats {
            fold,
            n: 0,
            n_labelled: 0,
            deaths: 0,
            prevalence: None,
        })
        .collect();
    for (r, &f) in records.iter().zip(&folds.fold) {
        let s = &mut stats[f];
        s.n += 1;
        if let Some(l) = r.label5y {
            s.n_labelled += 1;
            s.deaths += l as usize;
        }
    }
    let total_l: usize = stats.iter().map(|s| s.n_labelled).sum();
    let total_d: usize = stats.iter().map(|s| s.deaths).sum();
    let cohort_prevalence =
        rate(total_d, total_l).ok_or_else(|| PrismError::data("no labelled patients"))?;
    let mut max_deviation: f64 = 0.0;
    for s in &mut stats {
        s.prevalence = rate(s.deaths, s.n_labelled);
        if let Some(p) = s.prevalence {
            max_deviation = max_deviation.max((p - cohort_prevalence).abs());
        }
    }
    Ok(FoldAudit {
        cohort_prevalence,
        folds: stats,
        max_deviation,
    })
}

pub const FOLDS_HEADER: [&str; 4] = ["patient_id", "stratum", "fold", "role"];

/// Folds CSV for one experiment (`roles` from [`split_roles`]).
pub fn folds_csv(
    records: &[ClinicalRecord],
    folds: &FoldAssignment,
    roles: &[Role],
) -> Result<Vec<u8>> {
    if records.len() != folds.len() || roles.len() != folds.len() {
        return Err(PrismError::dim("fold table inputs have different lengths"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PrismError::data(e.to_string());
    w.write_record(FOLDS_HEADER).map_err(csv_err)?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            r.patient_id.as_str(),
            &folds.cell[i],
            &folds.fold[i].to_string(),
            &roles[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| PrismError::data(e.to_string()))
}

/// Build the fold assignment for the requested mode.
pub fn build_folds(
    records: &[ClinicalRecord],
    mode: CvMode,
    k: usize,
    clusters: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    match mode {
        CvMode::Stratified => make_folds(&stratum_cells(&assign_strata(records)?), k, seed),
        CvMode::Kmeans => {
            assign_strata(records)?;
            let c = kmeans_clusters(records, clusters, seed)?;
            make_folds(&cluster_cells(records, &c), k, seed)
        }
        CvMode::Naive => naive_folds(records.len(), k, seed),
    }
}
