//! On-disk cohort layout:
//!
//! ```text
//! <dir>/clinical.csv     one row per patient, fixed header
//! <dir>/latent.csv       patient_id, burden
//! <dir>/<patient_id>.bag generic, morph and class tensors
//! <dir>/manifest.json    config echo and content hashes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClinicalRecord, Cohort, CohortConfig, PatchFeatureBag, Sex, Treatment, LOCATIONS};
use crate::digest::{sha256_hex, write_hashed};
use crate::error::{PrismError, Result};
use crate::numcore::tensor_io::{decode_tensors, encode_tensors, Tensor};

pub const CLINICAL_HEADER: [&str; 11] = [
    "patient_id",
    "age",
    "bmi",
    "income",
    "sex",
    "treatment",
    "grade",
    "location",
    "time_months",
    "event",
    "label5y",
];
const LATENT_HEADER: [&str; 2] = ["patient_id", "burden"];
const MANIFEST: &str = "manifest.json";
const CLINICAL: &str = "clinical.csv";
const LATENT: &str = "latent.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub n_patients: usize,
    pub config: CohortConfig,
    pub tables: Vec<FileHash>,
    pub bags: Vec<FileHash>,
}

fn label_str(l: Option<bool>) -> &'static str {
    match l {
        Some(true) => "1",
        Some(false) => "0",
        None => "NA",
    }
}

pub fn clinical_csv(records: &[ClinicalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PrismError::data(format!("csv encode: {e}"));
    w.write_record(CLINICAL_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.patient_id.clone(),
            r.age.to_string(),
            r.bmi.to_string(),
            r.income.to_string(),
            r.sex.to_string(),
            r.treatment.to_string(),
            r.grade.to_string(),
            LOCATIONS[r.location].to_string(),
            r.time_months.to_string(),
            (r.event as u8).to_string(),
            label_str(r.label5y).to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| PrismError::data(format!("csv encode: {e}")))
}

fn parse_f64(s: &str, what: &str, row: usize) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| PrismError::data(format!("row {row}: bad {what} '{s}'")))
}

/// Parse a clinical table. The latent burden is left at 0; see [`cohort_load`].
pub fn parse_clinical_csv(bytes: &[u8]) -> Result<Vec<ClinicalRecord>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| PrismError::data(format!("clinical header: {e}")))?;
    if headers.iter().collect::<Vec<_>>() != CLINICAL_HEADER {
        return Err(PrismError::data(format!(
            "unexpected clinical header {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| PrismError::data(format!("clinical row {i}: {e}")))?;
        let sex = match &row[4] {
            "F" => Sex::F,
            "M" => Sex::M,
            s => return Err(PrismError::data(format!("row {i}: bad sex '{s}'"))),
        };
        let treatment = match &row[5] {
            "FL" => Treatment::FL,
            "IFL" => Treatment::IFL,
            s => return Err(PrismError::data(format!("row {i}: bad treatment '{s}'"))),
        };
        let grade: u8 = row[6]
            .parse()
            .ok()
            .filter(|g| (1..=3).contains(g))
            .ok_or_else(|| PrismError::data(format!("row {i}: bad grade '{}'", &row[6])))?;
        let location = LOCATIONS
            .iter()
            .position(|l| *l == &row[7])
            .ok_or_else(|| PrismError::data(format!("row {i}: bad location '{}'", &row[7])))?;
        let event = match &row[9] {
            "1" => true,
            "0" => false,
            s => return Err(PrismError::data(format!("row {i}: bad event '{s}'"))),
        };
        let label5y = match &row[10] {
            "1" => Some(true),
            "0" => Some(false),
            "NA" => None,
            s => return Err(PrismError::data(format!("row {i}: bad label5y '{s}'"))),
        };
        let time_months = parse_f64(&row[8], "time_months", i)?;
        if label5y != ClinicalRecord::derive_label(time_months, event) {
            return Err(PrismError::data(format!(
                "row {i}: label5y inconsistent with time and event"
            )));
        }
        out.push(ClinicalRecord {
            patient_id: row[0].to_string(),
            age: parse_f64(&row[1], "age", i)?,
            bmi: parse_f64(&row[2], "bmi", i)?,
            income: parse_f64(&row[3], "income", i)?,
            sex,
            treatment,
            grade,
            location,
            time_months,
            event,
            label5y,
            burden: 0.0,
        });
    }
    Ok(out)
}

fn latent_csv(records: &[ClinicalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PrismError::data(format!("csv encode: {e}"));
    w.write_record(LATENT_HEADER).map_err(err)?;
    for r in records {
        w.write_record([r.patient_id.clone(), r.burden.to_string()])
            .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| PrismError::data(format!("csv encode: {e}")))
}

pub fn encode_bag(bag: &PatchFeatureBag) -> Vec<u8> {
    let classes = Tensor::vector(bag.patch_class.iter().map(|&c| c as f64).collect());
    encode_tensors(&[
        Tensor::from(&bag.generic),
        Tensor::from(&bag.morph),
        classes,
    ])
}

pub fn decode_bag(patient_id: &str, bytes: &[u8]) -> Result<PatchFeatureBag> {
    let mut ts = decode_tensors(bytes)?;
    if ts.len() != 3 {
        return Err(PrismError::data(format!(
            "expected 3 tensors, found {}",
            ts.len()
        )));
    }
    let classes = ts.pop().unwrap();
    let morph = ts.pop().unwrap().into_matrix()?;
    let generic = ts.pop().unwrap().into_matrix()?;
    let patch_class = classes
        .data
        .iter()
        .map(|&c| {
            if c >= 0.0 && c.fract() == 0.0 {
                Ok(c as usize)
            } else {
                Err(PrismError::data(format!("bad class code {c}")))
            }
        })
        .collect::<Result<_>>()?;
    PatchFeatureBag::new(patient_id.to_string(), generic, morph, patch_class)
}

/// Write `cohort` into `dir` (created if missing).
pub fn cohort_save(cohort: &Cohort, dir: &Path) -> Result<CohortManifest> {
    fs::create_dir_all(dir).map_err(|e| PrismError::io(dir, e))?;
    if cohort.records.len() != cohort.bags.len() {
        return Err(PrismError::data("cohort has mismatched records and bags"));
    }
    let mut tables = Vec::new();
    for (name, bytes) in [
        (CLINICAL, clinical_csv(&cohort.records)?),
        (LATENT, latent_csv(&cohort.records)?),
    ] {
        let sha256 = write_hashed(&dir.join(name), &bytes)?;
        tables.push(FileHash {
            path: name.to_string(),
            sha256,
        });
    }
    let mut bags = Vec::with_capacity(cohort.bags.len());
    for (rec, bag) in cohort.records.iter().zip(&cohort.bags) {
        if rec.patient_id != bag.patient_id {
            return Err(PrismError::data(format!(
                "record {} paired with bag {}",
                rec.patient_id, bag.patient_id
            )));
        }
        let name = format!("{}.bag", bag.patient_id);
        let sha256 = write_hashed(&dir.join(&name), &encode_bag(bag))?;
        bags.push(FileHash { path: name, sha256 });
    }
    let manifest = CohortManifest {
        format: "prism-cohort".to_string(),
        version: 1,
        seed: cohort.config.seed,
        n_patients: cohort.records.len(),
        config: cohort.config.clone(),
        tables,
        bags,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| PrismError::data(e.to_string()))?;
    write_hashed(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

fn read_verified(dir: &Path, entry: &FileHash) -> Result<Vec<u8>> {
    if entry.path.contains('/') || entry.path.contains('\\') || entry.path.starts_with('.') {
        return Err(PrismError::io(
            dir.join(&entry.path),
            "manifest path escapes cohort directory",
        ));
    }
    let path = dir.join(&entry.path);
    let bytes = fs::read(&path).map_err(|e| PrismError::io(&path, e))?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(PrismError::io(&path, "content hash mismatch with manifest"));
    }
    Ok(bytes)
}

pub fn read_manifest(dir: &Path) -> Result<CohortManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| PrismError::io(&path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PrismError::io(&path, format!("invalid manifest: {e}")))
}

/// Load and hash-verify a cohort written by [`cohort_save`].
pub fn cohort_load(dir: &Path) -> Result<Cohort> {
    let manifest = read_manifest(dir)?;
    let table = |name: &str| -> Result<Vec<u8>> {
        let entry = manifest
            .tables
            .iter()
            .find(|t| t.path == name)
            .ok_or_else(|| PrismError::io(dir.join(name), "missing from manifest"))?;
        read_verified(dir, entry)
    };
    let clinical_path = dir.join(CLINICAL);
    let mut records =
        parse_clinical_csv(&table(CLINICAL)?).map_err(|e| PrismError::io(&clinical_path, e))?;
    let latent_path = dir.join(LATENT);
    let latent = table(LATENT)?;
    let mut rdr = csv::Reader::from_reader(latent.as_slice());
    let mut n_latent = 0;
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| PrismError::io(&latent_path, e))?;
        let rec = records
            .get_mut(i)
            .filter(|r| r.patient_id == row[0])
            .ok_or_else(|| {
                PrismError::io(
                    &latent_path,
                    format!("row {i} does not match clinical table"),
                )
            })?;
        rec.burden =
            parse_f64(&row[1], "burden", i).map_err(|e| PrismError::io(&latent_path, e))?;
        n_latent += 1;
    }
    if n_latent != records.len()
        || records.len() != manifest.n_patients
        || manifest.bags.len() != records.len()
    {
        return Err(PrismError::io(
            dir.join(MANIFEST),
            "patient counts disagree across files",
        ));
    }
    let mut bags = Vec::with_capacity(records.len());
    for (rec, entry) in records.iter().zip(&manifest.bags) {
        let path = dir.join(&entry.path);
        if entry.path != format!("{}.bag", rec.patient_id) {
            return Err(PrismError::io(
                &path,
                "bag order does not match clinical table",
            ));
        }
        let bytes = read_verified(dir, entry)?;
        bags.push(decode_bag(&rec.patient_id, &bytes).map_err(|e| PrismError::io(&path, e))?);
    }
    Ok(Cohort {
        config: manifest.config,
        records,
        bags,
    })
}
