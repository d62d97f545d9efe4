//! Pipe-separated patient files: one header line, one row per ICU hour,
//! missing cells written as the literal `NaN`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

/// Patients with fewer hourly rows than this are dropped from the cohort.
pub const MIN_HOURS: usize = 24;

pub const MISSING_TOKEN: &str = "NaN";

pub const VITAL_COLUMNS: [&str; 8] = ["HR", "O2Sat", "Temp", "SBP", "MAP", "DBP", "Resp", "EtCO2"];

pub const LAB_COLUMNS: [&str; 26] = [
    "BaseExcess",
    "HCO3",
    "FiO2",
    "pH",
    "PaCO2",
    "SaO2",
    "AST",
    "BUN",
    "Alkalinephos",
    "Calcium",
    "Chloride",
    "Creatinine",
    "Bilirubin_direct",
    "Glucose",
    "Lactate",
    "Magnesium",
    "Phosphate",
    "Potassium",
    "Bilirubin_total",
    "TroponinI",
    "Hct",
    "Hgb",
    "PTT",
    "WBC",
    "Fibrinogen",
    "Platelets",
];

pub const DEMOGRAPHIC_COLUMNS: [&str; 6] =
    ["Age", "Gender", "Unit1", "Unit2", "HospAdmTime", "ICULOS"];

pub const LABEL_COLUMN: &str = "SepsisLabel";

/// Column layout of a patient file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawColumnSchema {
    names: Vec<String>,
    vital_indices: Vec<usize>,
    lab_indices: Vec<usize>,
    demographic_indices: Vec<usize>,
    label_index: usize,
}

impl RawColumnSchema {
    pub fn new(
        names: Vec<String>,
        vital_indices: Vec<usize>,
        lab_indices: Vec<usize>,
        demographic_indices: Vec<usize>,
        label_index: usize,
    ) -> Result<Self> {
        let schema = Self {
            names,
            vital_indices,
            lab_indices,
            demographic_indices,
            label_index,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// The 2019 challenge layout: 8 vitals, 26 labs, 6 demographics, label last.
    pub fn physionet_2019() -> Self {
        let names: Vec<String> = VITAL_COLUMNS
            .iter()
            .chain(LAB_COLUMNS.iter())
            .chain(DEMOGRAPHIC_COLUMNS.iter())
            .chain(std::iter::once(&LABEL_COLUMN))
            .map(|s| s.to_string())
            .collect();
        let v = VITAL_COLUMNS.len();
        let l = LAB_COLUMNS.len();
        let d = DEMOGRAPHIC_COLUMNS.len();
        Self {
            names,
            vital_indices: (0..v).collect(),
            lab_indices: (v..v + l).collect(),
            demographic_indices: (v + l..v + l + d).collect(),
            label_index: v + l + d,
        }
    }

    /// Builds a schema from a header line, classifying each column by its
    /// challenge name. Column order is taken from the header.
    pub fn from_header(header: &str) -> Result<Self> {
        let names: Vec<String> = split_fields(header).map(str::to_string).collect();
        let mut vitals = Vec::new();
        let mut labs = Vec::new();
        let mut demos = Vec::new();
        let mut label = None;
        for (i, name) in names.iter().enumerate() {
            let n = name.as_str();
            if VITAL_COLUMNS.contains(&n) {
                vitals.push(i);
            } else if LAB_COLUMNS.contains(&n) {
                labs.push(i);
            } else if DEMOGRAPHIC_COLUMNS.contains(&n) {
                demos.push(i);
            } else if n == LABEL_COLUMN {
                label = Some(i);
            } else {
                return Err(Error::InvalidSchema(format!("unknown column `{n}`")));
            }
        }
        let label =
            label.ok_or_else(|| Error::InvalidSchema(format!("no `{LABEL_COLUMN}` column")))?;
        Self::new(names, vitals, labs, demos, label)
    }

    fn validate(&self) -> Result<()> {
        let n = self.names.len();
        let checks = [
            ("vital", self.vital_indices.len(), VITAL_COLUMNS.len()),
            ("lab", self.lab_indices.len(), LAB_COLUMNS.len()),
            (
                "demographic",
                self.demographic_indices.len(),
                DEMOGRAPHIC_COLUMNS.len(),
            ),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::InvalidSchema(format!(
                    "{got} {what} columns, expected {want}"
                )));
            }
        }
        let mut seen = BTreeSet::new();
        let all = self
            .vital_indices
            .iter()
            .chain(&self.lab_indices)
            .chain(&self.demographic_indices)
            .chain(std::iter::once(&self.label_index));
        for &i in all {
            if i >= n {
                return Err(Error::InvalidSchema(format!(
                    "index {i} out of range for {n} columns"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidSchema(format!("column {i} assigned twice")));
            }
        }
        if seen.len() != n {
            return Err(Error::InvalidSchema(
                "column groups do not cover every column".into(),
            ));
        }
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn vital_indices(&self) -> &[usize] {
        &self.vital_indices
    }

    pub fn lab_indices(&self) -> &[usize] {
        &self.lab_indices
    }

    pub fn demographic_indices(&self) -> &[usize] {
        &self.demographic_indices
    }

    pub fn label_index(&self) -> usize {
        self.label_index
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn header_line(&self) -> String {
        self.names.join("|")
    }
}

impl Default for RawColumnSchema {
    fn default() -> Self {
        Self::physionet_2019()
    }
}

/// One hour of observations; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawRow {
    pub values: Vec<Option<f64>>,
}

impl RawRow {
    pub fn get(&self, column: usize) -> Option<f64> {
        self.values[column]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    #[serde(rename = "id")]
    pub patient_id: String,
    pub rows: Vec<RawRow>,
    pub labels: Vec<bool>,
}

impl PatientRecord {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Patient-level outcome: septic if any hour is labeled positive.
    pub fn is_septic(&self) -> bool {
        self.labels.iter().any(|&y| y)
    }
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.trim_end_matches(['\r', '\n']).split('|')
}

/// Parses one patient file. Lines and columns in errors are 1-based, with
/// the header on line 1.
pub fn parse_patient_file(
    patient_id: impl Into<String>,
    text: &str,
    schema: &RawColumnSchema,
) -> Result<PatientRecord> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .ok_or_else(|| Error::Empty("patient file has no header".into()))?;
    let header_fields: Vec<&str> = split_fields(header).collect();
    for (index, expected) in schema.names.iter().enumerate() {
        match header_fields.get(index) {
            Some(&found) if found == expected => {}
            found => {
                return Err(Error::Schema {
                    index,
                    expected: expected.clone(),
                    found: found.unwrap_or(&"<missing>").to_string(),
                })
            }
        }
    }
    if header_fields.len() > schema.len() {
        return Err(Error::Schema {
            index: schema.len(),
            expected: "<end of header>".into(),
            found: header_fields[schema.len()].to_string(),
        });
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(schema.len());
        for (col, token) in split_fields(line).enumerate() {
            if token == MISSING_TOKEN {
                values.push(None);
                continue;
            }
            match token.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(Some(v)),
                _ => {
                    if col == schema.label_index {
                        return Err(Error::Label {
                            line: line_no,
                            token: token.to_string(),
                        });
                    }
                    return Err(Error::Parse {
                        line: line_no,
                        column: col + 1,
                        token: token.to_string(),
                    });
                }
            }
        }
        if values.len() != schema.len() {
            return Err(Error::FieldCount {
                line: line_no,
                expected: schema.len(),
                found: values.len(),
            });
        }
        let label = match values[schema.label_index] {
            Some(0.0) => false,
            Some(1.0) => true,
            _ => {
                return Err(Error::Label {
                    line: line_no,
                    token: split_fields(line)
                        .nth(schema.label_index)
                        .unwrap_or("")
                        .to_string(),
                })
            }
        };
        labels.push(label);
        rows.push(RawRow { values });
    }
    if rows.is_empty() {
        return Err(Error::Empty("patient file has no data rows".into()));
    }
    Ok(PatientRecord {
        patient_id: patient_id.into(),
        rows,
        labels,
    })
}

/// Renders a record back to the pipe-separated format. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_patient_file(record: &PatientRecord, schema: &RawColumnSchema) -> String {
    let mut out = schema.header_line();
    out.push('\n');
    for row in &record.rows {
        for (j, v) in row.values.iter().enumerate() {
            if j > 0 {
                out.push('|');
            }
            match v {
                Some(x) => {
                    let _ = write!(out, "{x}");
                }
                None => out.push_str(MISSING_TOKEN),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    /// Retained patients, sorted by id.
    pub patients: Vec<PatientRecord>,
    /// Patients dropped for having fewer than [`MIN_HOURS`] rows.
    pub dropped: usize,
}

impl Cohort {
    pub fn septic_count(&self) -> usize {
        self.patients.iter().filter(|p| p.is_septic()).count()
    }
}

fn psv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "psv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_patient_file(path: &Path, schema: &RawColumnSchema) -> Result<PatientRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_patient_file(id, &text, schema).map_err(|e| e.in_file(path))
}

/// Loads every `.psv` file in `dir` and drops patients with fewer than
/// [`MIN_HOURS`] rows.
pub fn load_cohort(dir: &Path, schema: &RawColumnSchema, mode: Parallelism) -> Result<Cohort> {
    let files = psv_files(dir)?;
    let records = par::try_map(mode, &files, |path| read_patient_file(path, schema))?;
    let total = records.len();
    let mut patients: Vec<PatientRecord> = records
        .into_iter()
        .filter(|r| r.len() >= MIN_HOURS)
        .collect();
    patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let dropped = total - patients.len();
    Ok(Cohort { patients, dropped })
}

/// Writes one JSON object per patient: `{"id", "rows", "labels"}`, missing
/// cells as `null`.
pub fn write_jsonl<W: Write>(mut out: W, patients: &[PatientRecord]) -> Result<()> {
    for p in patients {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<PatientRecord>> {
    let mut patients = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(&line)?;
        if record.rows.len() != record.labels.len() || record.rows.is_empty() {
            return Err(Error::Config(format!(
                "malformed record `{}`",
                record.patient_id
            )));
        }
        patients.push(record);
    }
    Ok(patients)
}
