//! The air-quality emission record and its validation rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

/// Decimal readings travel as signed micro-units.
pub const MICROS_PER_UNIT: f64 = 1_000_000.0;

/// Largest accepted reading or penalty. Keeps micro-unit values below 2^53 so
/// that every on-grid value converts exactly between `f64` and `i64`.
pub const MAX_VALUE: f64 = 1_000_000_000.0;

// Reserved micro-unit codes for non-finite inputs, so a malformed reading
// survives transport and is rejected where it is validated.
const NAN_MICROS: i64 = i64::MIN;
const NEG_INF_MICROS: i64 = i64::MIN + 1;
const POS_INF_MICROS: i64 = i64::MAX;

/// Converts a reading to fixed-point micro-units, rounding to the nearest
/// micro-unit. Non-finite inputs map to reserved codes.
pub fn to_micros(value: f64) -> i64 {
    if value.is_nan() {
        NAN_MICROS
    } else if value == f64::INFINITY {
        POS_INF_MICROS
    } else if value == f64::NEG_INFINITY {
        NEG_INF_MICROS
    } else {
        let scaled = (value * MICROS_PER_UNIT).round();
        scaled.clamp((NEG_INF_MICROS + 1) as f64, (POS_INF_MICROS - 1) as f64) as i64
    }
}

pub fn from_micros(micros: i64) -> f64 {
    match micros {
        NAN_MICROS => f64::NAN,
        NEG_INF_MICROS => f64::NEG_INFINITY,
        POS_INF_MICROS => f64::INFINITY,
        m => m as f64 / MICROS_PER_UNIT,
    }
}

/// Rounds to the micro-unit grid.
pub fn quantize(value: f64) -> f64 {
    from_micros(to_micros(value))
}

fn on_grid(value: f64) -> bool {
    quantize(value) == value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, Serialize)]
pub enum LocationType {
    Residential,
    Industrial,
    Sensitive,
    Other,
}

impl LocationType {
    pub const ALL: [LocationType; 4] = [
        LocationType::Residential,
        LocationType::Industrial,
        LocationType::Sensitive,
        LocationType::Other,
    ];

    pub fn code(self) -> u8 {
        match self {
            LocationType::Residential => 0,
            LocationType::Industrial => 1,
            LocationType::Sensitive => 2,
            LocationType::Other => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LocationType::Residential => "Residential",
            LocationType::Industrial => "Industrial",
            LocationType::Sensitive => "Sensitive",
            LocationType::Other => "Other",
        }
    }
}

impl fmt::Display for LocationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LocationType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown location type {t:?}"))
    }
}

/// One submitted emission measurement. Field order is the wire order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionRecord {
    /// UTC milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub location_type: LocationType,
    /// µg/m³
    pub so2: f64,
    /// µg/m³
    pub no2: f64,
    /// µg/m³ (RSPM / PM10)
    pub rspm: f64,
    /// mg/m³
    pub co: f64,
    pub industry_names: Vec<String>,
    pub monitoring_location: String,
    pub penalty_value: f64,
    pub reporting_agency: String,
}

impl EmissionRecord {
    /// State key: `<monitoring_location>/<timestamp>`.
    pub fn state_key(&self) -> String {
        format!("{}/{}", self.monitoring_location, self.timestamp)
    }

    /// Decimal fields in wire order, with their names.
    pub fn decimal_fields(&self) -> [(&'static str, f64); 5] {
        [
            ("so2", self.so2),
            ("no2", self.no2),
            ("rspm", self.rspm),
            ("co", self.co),
            ("penalty_value", self.penalty_value),
        ]
    }
}

impl Canonical for EmissionRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.timestamp)
            .put_u8(self.location_type.code())
            .put_i64(to_micros(self.so2))
            .put_i64(to_micros(self.no2))
            .put_i64(to_micros(self.rspm))
            .put_i64(to_micros(self.co))
            .put_list(&self.industry_names)
            .put_str(&self.monitoring_location)
            .put_i64(to_micros(self.penalty_value))
            .put_str(&self.reporting_agency);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let timestamp = dec.u64()?;
        let tag = dec.u8()?;
        let location_type = LocationType::from_code(tag).ok_or(DecodeError::InvalidTag {
            what: "location_type",
            tag,
        })?;
        Ok(Self {
            timestamp,
            location_type,
            so2: from_micros(dec.i64()?),
            no2: from_micros(dec.i64()?),
            rspm: from_micros(dec.i64()?),
            co: from_micros(dec.i64()?),
            industry_names: dec.list()?,
            monitoring_location: dec.string()?,
            penalty_value: from_micros(dec.i64()?),
            reporting_agency: dec.string()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    NonNegative,
    Finite,
    MaxValue,
    Precision,
    NonEmpty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: Rule,
}

impl Violation {
    fn new(field: impl Into<String>, rule: Rule) -> Self {
        Self {
            field: field.into(),
            rule,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let field = &self.field;
        match self.rule {
            Rule::NonNegative => write!(f, "{field} must be ≥ 0"),
            Rule::Finite => write!(f, "{field} must be finite"),
            Rule::MaxValue => write!(f, "{field} must be ≤ {MAX_VALUE}"),
            Rule::Precision => write!(f, "{field} has more than 6 decimal places"),
            Rule::NonEmpty => write!(f, "{field} must be non-empty"),
        }
    }
}

impl Canonical for Violation {
    fn encode(&self, enc: &mut Encoder) {
        let code = match self.rule {
            Rule::NonNegative => 0,
            Rule::Finite => 1,
            Rule::MaxValue => 2,
            Rule::Precision => 3,
            Rule::NonEmpty => 4,
        };
        enc.put_str(&self.field).put_u8(code);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let field = dec.string()?;
        let rule = match dec.u8()? {
            0 => Rule::NonNegative,
            1 => Rule::Finite,
            2 => Rule::MaxValue,
            3 => Rule::Precision,
            4 => Rule::NonEmpty,
            tag => return Err(DecodeError::InvalidTag { what: "rule", tag }),
        };
        Ok(Self { field, rule })
    }
}

/// Returns every violated invariant, in field order.
pub fn validate_record(record: &EmissionRecord) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for (field, value) in record.decimal_fields() {
        if !value.is_finite() {
            out.push(Violation::new(field, Rule::Finite));
        } else if value < 0.0 {
            out.push(Violation::new(field, Rule::NonNegative));
        } else if value > MAX_VALUE {
            out.push(Violation::new(field, Rule::MaxValue));
        } else if !on_grid(value) {
            out.push(Violation::new(field, Rule::Precision));
        }
    }
    if record.industry_names.is_empty() {
        out.push(Violation::new("industry_names", Rule::NonEmpty));
    }
    for (i, name) in record.industry_names.iter().enumerate() {
        if name.trim().is_empty() {
            out.push(Violation::new(format!("industry_names[{i}]"), Rule::NonEmpty));
        }
    }
    if record.monitoring_location.trim().is_empty() {
        out.push(Violation::new("monitoring_location", Rule::NonEmpty));
    }
    if record.reporting_agency.trim().is_empty() {
        out.push(Violation::new("reporting_agency", Rule::NonEmpty));
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
