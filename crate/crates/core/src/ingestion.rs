//! Sensor CSV and monitoring-dataset ingestion.
//!
//! Two inputs are supported. Raw sensor CSVs hold three 10-bit ADC readings
//! per row (MQ-7, MQ-2, MQ-135) and become records through an affine
//! calibration plus a [`SiteMeta`]. Monitoring datasets already carry all ten
//! record fields, one row per record.

use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaincode::{quantize, validate_record, EmissionRecord, LocationType, Violation};

pub const ADC_MAX: u16 = 1023;
/// The bundled fourteen-row MQ sensor table.
pub const SENSOR_SAMPLES_CSV: &str = include_str!("../fixtures/sensor_samples.csv");
pub const SENSOR_HEADER: [&str; 3] = ["mq7_co", "mq2_smoke", "mq135_co2"];
pub const DATASET_HEADER: [&str; 10] = [
    "timestamp",
    "location_type",
    "so2",
    "no2",
    "rspm",
    "co",
    "industry_names",
    "monitoring_location",
    "penalty_value",
    "reporting_agency",
];
/// Separator between industry names inside one dataset cell.
pub const INDUSTRY_SEPARATOR: char = ';';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawSensorSample {
    pub mq7_co: u16,
    pub mq2_smoke: u16,
    pub mq135_co2: u16,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RowErrorKind {
    #[error("expected {expected} columns, found {found}")]
    ColumnCount { expected: usize, found: usize },
    #[error("{column}: {value:?} is not an integer")]
    NotInteger { column: &'static str, value: String },
    #[error("{column}: {value} is outside 0..={ADC_MAX}")]
    OutOfRange { column: &'static str, value: i64 },
    #[error("{column}: {message}")]
    BadField { column: &'static str, message: String },
    #[error("{}", join_violations(.0))]
    Violations(Vec<Violation>),
    #[error("unreadable row: {0}")]
    Csv(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A rejected input row. `line` is the 1-based line in the source text.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct RowError {
    pub line: u64,
    pub kind: RowErrorKind,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("calibration for {channel} must be finite (slope {slope}, offset {offset})")]
    Calibration {
        channel: &'static str,
        slope: f64,
        offset: f64,
    },
    #[error("channels {0} and {1} both map to {2}")]
    DuplicateMapping(&'static str, &'static str, Pollutant),
    #[error("invalid site metadata: {0}")]
    Meta(String),
    #[error("{channel} reading {value} is outside 0..={ADC_MAX}")]
    SampleRange { channel: &'static str, value: u16 },
    #[error("calibrated record is invalid: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

/// Result of parsing a whole file: the good rows and every bad one.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub errors: Vec<RowError>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Self {
            items: Vec::new(),
            errors: Vec::new(),
        }
    }
}

fn csv_rows(text: &str) -> csv::StringRecordsIntoIter<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .into_records()
}

fn is_header(row: &csv::StringRecord, header: &[&str]) -> bool {
    row.len() == header.len() && row.iter().zip(header).all(|(got, want)| got.eq_ignore_ascii_case(want))
}

/// Parses every row, skipping a leading header, and splits the results into
/// items and per-row errors. Never stops early.
fn parse_rows<T>(
    text: &str,
    header: &[&str],
    mut parse: impl FnMut(&csv::StringRecord) -> Result<T, RowErrorKind>,
) -> Parsed<T> {
    let mut out = Parsed::default();
    for (i, row) in csv_rows(text).enumerate() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError {
                    line,
                    kind: RowErrorKind::Csv(e.to_string()),
                });
                continue;
            }
        };
        if i == 0 && is_header(&row, header) {
            continue;
        }
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            out.errors.push(RowError {
                line,
                kind: RowErrorKind::ColumnCount {
                    expected: header.len(),
                    found: row.len(),
                },
            });
            continue;
        }
        match parse(&row) {
            Ok(item) => out.items.push(item),
            Err(kind) => out.errors.push(RowError { line, kind }),
        }
    }
    out
}

/// Accepts the typographic minus sign (U+2212) as well as ASCII '-'.
fn normalize_minus(s: &str) -> String {
    s.replace('\u{2212}', "-")
}

fn adc(column: &'static str, cell: &str) -> Result<u16, RowErrorKind> {
    let value: i64 = normalize_minus(cell).parse().map_err(|_| RowErrorKind::NotInteger {
        column,
        value: cell.to_owned(),
    })?;
    u16::try_from(value)
        .ok()
        .filter(|v| *v <= ADC_MAX)
        .ok_or(RowErrorKind::OutOfRange { column, value })
}

pub fn parse_sensor_csv(text: &str) -> Parsed<RawSensorSample> {
    parse_rows(text, &SENSOR_HEADER, |row| {
        Ok(RawSensorSample {
            mq7_co: adc(SENSOR_HEADER[0], &row[0])?,
            mq2_smoke: adc(SENSOR_HEADER[1], &row[1])?,
            mq135_co2: adc(SENSOR_HEADER[2], &row[2])?,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pollutant {
    So2,
    No2,
    Rspm,
    Co,
}

impl std::fmt::Display for Pollutant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pollutant::So2 => "so2",
            Pollutant::No2 => "no2",
            Pollutant::Rspm => "rspm",
            Pollutant::Co => "co",
        })
    }
}

/// Readings for the four record pollutants, in record units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PollutantValues {
    pub so2: f64,
    pub no2: f64,
    pub rspm: f64,
    pub co: f64,
}

impl PollutantValues {
    pub fn get(&self, p: Pollutant) -> f64 {
        match p {
            Pollutant::So2 => self.so2,
            Pollutant::No2 => self.no2,
            Pollutant::Rspm => self.rspm,
            Pollutant::Co => self.co,
        }
    }

    pub fn get_mut(&mut self, p: Pollutant) -> &mut f64 {
        match p {
            Pollutant::So2 => &mut self.so2,
            Pollutant::No2 => &mut self.no2,
            Pollutant::Rspm => &mut self.rspm,
            Pollutant::Co => &mut self.co,
        }
    }

    fn iter(&self) -> impl Iterator<Item = f64> {
        [self.so2, self.no2, self.rspm, self.co].into_iter()
    }
}

/// `value = slope × counts + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    pub slope: f64,
    #[serde(default)]
    pub offset: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Affine {
    pub const IDENTITY: Affine = Affine { slope: 1.0, offset: 0.0 };

    pub fn apply(self, counts: u16) -> f64 {
        self.slope * f64::from(counts) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelMap {
    pub target: Pollutant,
    #[serde(default)]
    pub calibration: Affine,
}

impl ChannelMap {
    pub fn identity(target: Pollutant) -> Self {
        Self {
            target,
            calibration: Affine::IDENTITY,
        }
    }
}

/// Which record field each sensor channel feeds, and how. An absent channel
/// is ignored. The default routes MQ-7 to `co` and MQ-2 to `rspm`, both
/// uncalibrated, and leaves MQ-135 unused.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SensorMapping {
    pub mq7_co: Option<ChannelMap>,
    pub mq2_smoke: Option<ChannelMap>,
    pub mq135_co2: Option<ChannelMap>,
}

impl Default for SensorMapping {
    fn default() -> Self {
        Self {
            mq7_co: Some(ChannelMap::identity(Pollutant::Co)),
            mq2_smoke: Some(ChannelMap::identity(Pollutant::Rspm)),
            mq135_co2: None,
        }
    }
}

impl SensorMapping {
    fn channels(&self) -> [(&'static str, Option<ChannelMap>); 3] {
        [
            (SENSOR_HEADER[0], self.mq7_co),
            (SENSOR_HEADER[1], self.mq2_smoke),
            (SENSOR_HEADER[2], self.mq135_co2),
        ]
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen: Vec<(&'static str, Pollutant)> = Vec::new();
        for (channel, map) in self.channels() {
            let Some(map) = map else { continue };
            let Affine { slope, offset } = map.calibration;
            if !slope.is_finite() || !offset.is_finite() {
                return Err(IngestError::Calibration { channel, slope, offset });
            }
            if let Some((other, _)) = seen.iter().find(|(_, p)| *p == map.target) {
                return Err(IngestError::DuplicateMapping(other, channel, map.target));
            }
            seen.push((channel, map.target));
        }
        Ok(())
    }

    /// Calibrated readings. Unmapped pollutants stay at 0.
    pub fn calibrate(&self, sample: &RawSensorSample) -> Result<PollutantValues, IngestError> {
        self.validate()?;
        let counts = [sample.mq7_co, sample.mq2_smoke, sample.mq135_co2];
        let mut values = PollutantValues::default();
        for ((_, map), c) in self.channels().into_iter().zip(counts) {
            if let Some(map) = map {
                *values.get_mut(map.target) = quantize(map.calibration.apply(c));
            }
        }
        Ok(values)
    }
}

/// Static description of a monitoring site.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SiteMeta {
    pub monitoring_location: String,
    pub location_type: LocationType,
    pub industry_names: Vec<String>,
    pub reporting_agency: String,
    pub thresholds: PollutantValues,
    pub penalty_rate: f64,
}

impl SiteMeta {
    pub fn validate(&self) -> Result<(), IngestError> {
        for (name, t) in DATASET_HEADER[2..6].iter().zip(self.thresholds.iter()) {
            if !(t.is_finite() && t > 0.0) {
                return Err(IngestError::Meta(format!("{name} threshold must be > 0, got {t}")));
            }
        }
        if !(self.penalty_rate.is_finite() && self.penalty_rate >= 0.0) {
            return Err(IngestError::Meta(format!(
                "penalty rate must be ≥ 0, got {}",
                self.penalty_rate
            )));
        }
        Ok(())
    }
}

/// `rate × Σ max(0, value − threshold)` over the four pollutants.
pub fn penalty(values: &PollutantValues, meta: &SiteMeta) -> f64 {
    let exceedance: f64 = values
        .iter()
        .zip(meta.thresholds.iter())
        .map(|(v, t)| (v - t).max(0.0))
        .sum();
    quantize(meta.penalty_rate * exceedance)
}

/// Converts one sample with the default channel mapping.
pub fn raw_to_record(sample: &RawSensorSample, meta: &SiteMeta, timestamp: u64) -> Result<EmissionRecord, IngestError> {
    raw_to_record_with(sample, meta, &SensorMapping::default(), timestamp)
}

pub fn raw_to_record_with(
    sample: &RawSensorSample,
    meta: &SiteMeta,
    mapping: &SensorMapping,
    timestamp: u64,
) -> Result<EmissionRecord, IngestError> {
    for (channel, value) in SENSOR_HEADER
        .into_iter()
        .zip([sample.mq7_co, sample.mq2_smoke, sample.mq135_co2])
    {
        if value > ADC_MAX {
            return Err(IngestError::SampleRange { channel, value });
        }
    }
    meta.validate()?;
    let values = mapping.calibrate(sample)?;
    let record = EmissionRecord {
        timestamp,
        location_type: meta.location_type,
        so2: values.so2,
        no2: values.no2,
        rspm: values.rspm,
        co: values.co,
        industry_names: meta.industry_names.clone(),
        monitoring_location: meta.monitoring_location.clone(),
        penalty_value: penalty(&values, meta),
        reporting_agency: meta.reporting_agency.clone(),
    };
    validate_record(&record).map_err(IngestError::Invalid)?;
    Ok(record)
}

fn decimal(column: &'static str, cell: &str) -> Result<f64, RowErrorKind> {
    normalize_minus(cell).parse().map_err(|_| RowErrorKind::BadField {
        column,
        message: format!("{cell:?} is not a number"),
    })
}

fn rfc3339_ms(cell: &str) -> Result<u64, RowErrorKind> {
    let bad = |message: String| RowErrorKind::BadField {
        column: "timestamp",
        message,
    };
    let ts = DateTime::parse_from_rfc3339(cell).map_err(|e| bad(format!("{cell:?}: {e}")))?;
    u64::try_from(ts.timestamp_millis()).map_err(|_| bad(format!("{cell:?} precedes 1970")))
}

pub fn format_rfc3339_ms(ms: u64) -> String {
    i64::try_from(ms)
        .ok()
        .and_then(DateTime::<Utc>::from_timestamp_millis)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_else(|| ms.to_string())
}

fn dataset_row(row: &csv::StringRecord) -> Result<EmissionRecord, RowErrorKind> {
    let record = EmissionRecord {
        timestamp: rfc3339_ms(&row[0])?,
        location_type: row[1].parse().map_err(|message| RowErrorKind::BadField {
            column: "location_type",
            message,
        })?,
        so2: decimal("so2", &row[2])?,
        no2: decimal("no2", &row[3])?,
        rspm: decimal("rspm", &row[4])?,
        co: decimal("co", &row[5])?,
        industry_names: if row[6].is_empty() {
            Vec::new()
        } else {
            row[6].split(INDUSTRY_SEPARATOR).map(|s| s.trim().to_owned()).collect()
        },
        monitoring_location: row[7].to_owned(),
        penalty_value: decimal("penalty_value", &row[8])?,
        reporting_agency: row[9].to_owned(),
    };
    validate_record(&record).map_err(RowErrorKind::Violations)?;
    Ok(record)
}

/// Parses dataset text. Every returned record passes `validate_record`.
pub fn parse_monitoring_dataset(text: &str) -> Parsed<EmissionRecord> {
    parse_rows(text, &DATASET_HEADER, dataset_row)
}

pub fn load_monitoring_dataset(path: &Path) -> Result<Parsed<EmissionRecord>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(parse_monitoring_dataset(&text))
}

/// Renders records in the dataset layout, header included.
pub fn format_dataset(records: &[EmissionRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DATASET_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            format_rfc3339_ms(r.timestamp),
            r.location_type.to_string(),
            r.so2.to_string(),
            r.no2.to_string(),
            r.rspm.to_string(),
            r.co.to_string(),
            r.industry_names.join(&INDUSTRY_SEPARATOR.to_string()),
            r.monitoring_location.clone(),
            r.penalty_value.to_string(),
            r.reporting_agency.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}
