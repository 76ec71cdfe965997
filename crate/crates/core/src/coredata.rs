//! Domain records, the [`Dataset`] container and their file formats.
//!
//! Raw inputs are CSV (`patient_id,day,value` observations,
//! `patient_id,drug_code,start_day,end_day` prescriptions,
//! `patient_id,code,day` diagnoses, `patient_id,code` long-form covariates).
//! Datasets are a versioned JSON document.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stratify::Covariates;

pub const FORMAT_VERSION: u32 = 1;

/// Days in the pre-exposure lookback ("a year").
pub const DAYS_PER_YEAR: i64 = 365;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabObservation {
    pub patient_id: String,
    pub day: i64,
    /// mg/dL
    pub value: f64,
}

impl LabObservation {
    pub fn new(patient_id: impl Into<String>, day: i64, value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Validation(format!(
                "lab value must be finite and non-negative, got {value}"
            )));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            day,
            value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrescriptionRecord {
    pub patient_id: String,
    pub drug_code: String,
    pub start_day: i64,
    pub end_day: i64,
}

impl PrescriptionRecord {
    pub fn new(
        patient_id: impl Into<String>,
        drug_code: impl Into<String>,
        start_day: i64,
        end_day: i64,
    ) -> Result<Self> {
        if start_day > end_day {
            return Err(Error::Validation(format!(
                "prescription starts after it ends ({start_day} > {end_day})"
            )));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            drug_code: drug_code.into(),
            start_day,
            end_day,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub patient_id: String,
    /// ICD-9 style code, e.g. `250.02`.
    pub code: String,
    pub day: i64,
}

/// A maximal interval of continuous exposure to one drug class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureEra {
    pub patient_id: String,
    pub start_day: i64,
    pub end_day: i64,
}

impl ExposureEra {
    pub fn new(patient_id: impl Into<String>, start_day: i64, end_day: i64) -> Result<Self> {
        if start_day > end_day {
            return Err(Error::Validation(format!(
                "era starts after it ends ({start_day} > {end_day})"
            )));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            start_day,
            end_day,
        })
    }

    pub fn contains(&self, day: i64) -> bool {
        (self.start_day..=self.end_day).contains(&day)
    }
}

/// Pre-exposure and during-exposure measurements around one era.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub patient_id: String,
    pub pre: Vec<(i64, f64)>,
    pub during: Vec<(i64, f64)>,
    pub era: ExposureEra,
}

impl RawSegment {
    pub fn new(
        era: ExposureEra,
        pre: Vec<(i64, f64)>,
        during: Vec<(i64, f64)>,
        lookback_days: i64,
    ) -> Result<Self> {
        if pre.is_empty() || during.is_empty() {
            return Err(Error::Validation(
                "segment needs at least one pre and one during measurement".into(),
            ));
        }
        let strictly_increasing = |xs: &[(i64, f64)]| xs.windows(2).all(|w| w[0].0 < w[1].0);
        if !strictly_increasing(&pre) || !strictly_increasing(&during) {
            return Err(Error::Validation(
                "segment days must be strictly increasing".into(),
            ));
        }
        let pre_window = (era.start_day - lookback_days)..era.start_day;
        if pre.iter().any(|(d, _)| !pre_window.contains(d)) {
            return Err(Error::Validation(format!(
                "pre-exposure day outside [{}, {})",
                pre_window.start, pre_window.end
            )));
        }
        if during.iter().any(|(d, _)| !era.contains(*d)) {
            return Err(Error::Validation(format!(
                "during-exposure day outside [{}, {}]",
                era.start_day, era.end_day
            )));
        }
        Ok(Self {
            patient_id: era.patient_id.clone(),
            pre,
            during,
            era,
        })
    }
}

/// Central-mass interval used to map mg/dL onto [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub lo: f64,
    pub hi: f64,
}

impl NormBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!(
                "normalization bounds need lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }
}

/// How many resampled points fall before and during exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesLayout {
    pub n_pre: usize,
    pub n_during: usize,
}

impl Default for SeriesLayout {
    fn default() -> Self {
        Self {
            n_pre: 8,
            n_during: 8,
        }
    }
}

impl SeriesLayout {
    pub fn new(n_pre: usize, n_during: usize) -> Result<Self> {
        if n_pre == 0 || n_during == 0 {
            return Err(Error::Validation(
                "series layout needs at least one pre and one during point".into(),
            ));
        }
        Ok(Self { n_pre, n_during })
    }

    pub fn len(&self) -> usize {
        self.n_pre + self.n_during
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pre_range(&self) -> std::ops::Range<usize> {
        0..self.n_pre
    }

    pub fn during_range(&self) -> std::ops::Range<usize> {
        self.n_pre..self.len()
    }
}

/// A normalized, fixed-length pre/during series; the unit of GAN training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSeries {
    pub patient_id: String,
    pub values: Vec<f64>,
}

impl AlignedSeries {
    pub fn new(patient_id: impl Into<String>, values: Vec<f64>, layout: SeriesLayout) -> Result<Self> {
        let series = Self {
            patient_id: patient_id.into(),
            values,
        };
        series.validate(layout)?;
        Ok(series)
    }

    pub fn validate(&self, layout: SeriesLayout) -> Result<()> {
        if self.values.len() != layout.len() {
            return Err(Error::Validation(format!(
                "series `{}` has {} values, layout needs {}",
                self.patient_id,
                self.values.len(),
                layout.len()
            )));
        }
        if let Some(v) = self
            .values
            .iter()
            .find(|v| !(v.is_finite() && (-1.0..=1.0).contains(*v)))
        {
            return Err(Error::Validation(format!(
                "series `{}` has value {v} outside [-1, 1]",
                self.patient_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Simulated { seed: u64 },
    /// Drawn from a trained generator.
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: SeriesLayout,
    pub series: Vec<AlignedSeries>,
    pub covariates: Option<Covariates>,
    pub bounds: NormBounds,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        layout: SeriesLayout,
        series: Vec<AlignedSeries>,
        covariates: Option<Covariates>,
        bounds: NormBounds,
        provenance: Provenance,
    ) -> Result<Self> {
        let ds = Self {
            layout,
            series,
            covariates,
            bounds,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        NormBounds::new(self.bounds.lo, self.bounds.hi)?;
        SeriesLayout::new(self.layout.n_pre, self.layout.n_during)?;
        for s in &self.series {
            s.validate(self.layout)?;
        }
        if let Some(cov) = &self.covariates {
            cov.validate()?;
            if cov.rows.len() != self.series.len() {
                return Err(Error::Validation(format!(
                    "{} series but {} covariate rows",
                    self.series.len(),
                    cov.rows.len()
                )));
            }
            if let Some((s, c)) = self
                .series
                .iter()
                .zip(&cov.rows)
                .find(|(s, c)| s.patient_id != c.patient_id)
            {
                return Err(Error::Validation(format!(
                    "covariate row `{}` misaligned with series `{}`",
                    c.patient_id, s.patient_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// The subset of series at `indices`, covariates carried along.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Precondition(format!(
                "index {i} out of range for {} series",
                self.len()
            )));
        }
        let series = indices.iter().map(|&i| self.series[i].clone()).collect();
        let covariates = self.covariates.as_ref().map(|c| Covariates {
            vocabulary: c.vocabulary.clone(),
            rows: indices.iter().map(|&i| c.rows[i].clone()).collect(),
        });
        Dataset::new(self.layout, series, covariates, self.bounds, self.provenance)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    count: usize,
    layout: SeriesLayout,
    bounds: NormBounds,
    provenance: Provenance,
    series: Vec<AlignedSeries>,
    covariates: Option<Covariates>,
}

pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    ds.validate()?;
    let file = DatasetFile {
        format_version: FORMAT_VERSION,
        count: ds.series.len(),
        layout: ds.layout,
        bounds: ds.bounds,
        provenance: ds.provenance,
        series: ds.series.clone(),
        covariates: ds.covariates.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if file.count != file.series.len() {
        return Err(Error::Validation(format!(
            "file declares {} series but holds {}",
            file.count,
            file.series.len()
        )));
    }
    Dataset::new(
        file.layout,
        file.series,
        file.covariates,
        file.bounds,
        file.provenance,
    )
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let text = dataset_to_json(ds)?;
    write_text(path, &text)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_json(&std::fs::read_to_string(path)?)
}

/// Pretty JSON for any serializable artifact (models, reports, configs).
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn read_rows<T>(
    path: &Path,
    header: &[&str],
    mut parse: impl FnMut(&csv::StringRecord) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let found: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let row = parse(&record).map_err(|message| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        })?;
        out.push(row);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str) -> std::result::Result<T, String> {
    let raw = &record[idx];
    raw.parse()
        .map_err(|_| format!("invalid {name} `{raw}`"))
}

/// Reads `patient_id,day,value` rows in file order.
pub fn read_observations(path: impl AsRef<Path>) -> Result<Vec<LabObservation>> {
    let path = path.as_ref();
    let mut invalid = None;
    let rows = read_rows(path, &["patient_id", "day", "value"], |r| {
        let line = r.position().map_or(0, |p| p.line());
        let obs = LabObservation {
            patient_id: r[0].to_owned(),
            day: field(r, 1, "day")?,
            value: field(r, 2, "value")?,
        };
        if invalid.is_none() && !(obs.value.is_finite() && obs.value >= 0.0) {
            invalid = Some((line, obs.value));
        }
        Ok(obs)
    })?;
    if let Some((line, value)) = invalid {
        return Err(Error::Validation(format!(
            "{}: line {line}: lab value must be non-negative, got {value}",
            path.display()
        )));
    }
    Ok(rows)
}

pub fn read_prescriptions(path: impl AsRef<Path>) -> Result<Vec<PrescriptionRecord>> {
    read_rows(
        path.as_ref(),
        &["patient_id", "drug_code", "start_day", "end_day"],
        |r| {
            PrescriptionRecord::new(
                &r[0],
                &r[1],
                field(r, 2, "start_day")?,
                field(r, 3, "end_day")?,
            )
            .map_err(|e| e.to_string())
        },
    )
}

pub fn read_diagnoses(path: impl AsRef<Path>) -> Result<Vec<DiagnosisRecord>> {
    read_rows(path.as_ref(), &["patient_id", "code", "day"], |r| {
        Ok(DiagnosisRecord {
            patient_id: r[0].to_owned(),
            code: r[1].to_owned(),
            day: field(r, 2, "day")?,
        })
    })
}

/// Long-form covariates: one `(patient_id, code)` pair per row.
pub fn read_covariate_codes(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    read_rows(path.as_ref(), &["patient_id", "code"], |r| {
        Ok((r[0].to_owned(), r[1].to_owned()))
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new().from_path(path)?)
}

pub fn write_observations(rows: &[LabObservation], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["patient_id", "day", "value"])?;
    for o in rows {
        w.write_record([o.patient_id.clone(), o.day.to_string(), o.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prescriptions(rows: &[PrescriptionRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["patient_id", "drug_code", "start_day", "end_day"])?;
    for p in rows {
        w.write_record([
            p.patient_id.clone(),
            p.drug_code.clone(),
            p.start_day.to_string(),
            p.end_day.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnoses(rows: &[DiagnosisRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["patient_id", "code", "day"])?;
    for d in rows {
        w.write_record([d.patient_id.clone(), d.code.clone(), d.day.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_covariate_codes(cov: &Covariates, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["patient_id", "code"])?;
    for row in &cov.rows {
        for (code, _) in cov.vocabulary.iter().zip(&row.bits).filter(|(_, &b)| b == 1) {
            w.write_record([row.patient_id.as_str(), code.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}
