//! Per-phase timing of a pipeline run.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Prerequisites,
    GenerateCertificates,
    EstablishChannel,
    PeerJoin,
    ChaincodeInstall,
    ChaincodeInstantiate,
    Invoke,
    Query,
}

impl Phase {
    /// Every phase, in pipeline order.
    pub const ALL: [Phase; 8] = [
        Phase::Prerequisites,
        Phase::GenerateCertificates,
        Phase::EstablishChannel,
        Phase::PeerJoin,
        Phase::ChaincodeInstall,
        Phase::ChaincodeInstantiate,
        Phase::Invoke,
        Phase::Query,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Prerequisites => "prerequisites",
            Phase::GenerateCertificates => "generate_certificates",
            Phase::EstablishChannel => "establish_channel",
            Phase::PeerJoin => "peer_join",
            Phase::ChaincodeInstall => "chaincode_install",
            Phase::ChaincodeInstantiate => "chaincode_instantiate",
            Phase::Invoke => "invoke",
            Phase::Query => "query",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ReportError::UnknownPhase(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unknown phase {0:?}")]
    UnknownPhase(String),
    #[error("phase list must be exactly {expected:?}, got {found:?}")]
    Shape {
        expected: Vec<&'static str>,
        found: Vec<String>,
    },
    #[error("bad duration {value:?} for {phase}")]
    BadDuration { phase: String, value: String },
    #[error("malformed report: {0}")]
    Csv(String),
}

/// Source of elapsed time for phase measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    /// Wall-clock time.
    Real,
    /// Virtual milliseconds of the simulated network.
    Simulated,
}

/// Start point of one measurement.
#[derive(Debug, Clone, Copy)]
pub struct Mark {
    wall: Instant,
    virtual_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimingReport {
    phases: Vec<(Phase, Duration)>,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str = "phase,milliseconds";

    /// Builds a report, rejecting anything but the eight phases in order.
    pub fn new(phases: Vec<(Phase, Duration)>) -> Result<Self, ReportError> {
        if phases.iter().map(|(p, _)| *p).ne(Phase::ALL) {
            return Err(ReportError::Shape {
                expected: Phase::ALL.iter().map(|p| p.name()).collect(),
                found: phases.iter().map(|(p, _)| p.name().to_owned()).collect(),
            });
        }
        Ok(Self { phases })
    }

    pub fn phases(&self) -> &[(Phase, Duration)] {
        &self.phases
    }

    pub fn get(&self, phase: Phase) -> Duration {
        self.phases[phase as usize].1
    }

    pub fn total(&self) -> Duration {
        self.phases.iter().map(|(_, d)| *d).sum()
    }

    /// `phase,milliseconds` rows, header first.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (p, d) in &self.phases {
            out.push_str(&format!("{},{}\n", p, fmt_ms(*d)));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut phases = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| ReportError::Csv(e.to_string()))?;
            if row.len() != 2 {
                return Err(ReportError::Csv(format!("expected 2 columns, found {}", row.len())));
            }
            let phase: Phase = row[0].parse()?;
            let d = parse_ms(&row[1]).ok_or_else(|| ReportError::BadDuration {
                phase: row[0].to_owned(),
                value: row[1].to_owned(),
            })?;
            phases.push((phase, d));
        }
        Self::new(phases)
    }

    pub fn to_table(&self) -> String {
        let width = Phase::ALL.iter().map(|p| p.name().len()).max().unwrap_or(0);
        let mut out = format!("{:<width$}  {:>12}\n", "phase", "ms");
        for (p, d) in &self.phases {
            out.push_str(&format!("{:<width$}  {:>12}\n", p.name(), fmt_ms(*d)));
        }
        out.push_str(&format!("{:<width$}  {:>12}\n", "total", fmt_ms(self.total())));
        out
    }
}

/// Milliseconds with microsecond resolution; whole values print without a
/// fraction.
pub fn fmt_ms(d: Duration) -> String {
    let micros = d.as_micros();
    if micros.is_multiple_of(1000) {
        (micros / 1000).to_string()
    } else {
        format!("{}.{:03}", micros / 1000, micros % 1000)
    }
}

/// Inverse of [`fmt_ms`]: whole milliseconds with up to three decimals.
fn parse_ms(s: &str) -> Option<Duration> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    let all_digits = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
    if whole.is_empty() || frac.len() > 3 || !all_digits(whole) || !all_digits(frac) {
        return None;
    }
    let ms: u64 = whole.parse().ok()?;
    let micros: u64 = format!("{frac:0<3}").parse().ok()?;
    Some(Duration::from_millis(ms) + Duration::from_micros(micros))
}

/// Collects phase durations as a run proceeds.
#[derive(Debug)]
pub struct PhaseTimer {
    clock: ClockKind,
    phases: Vec<(Phase, Duration)>,
}

impl PhaseTimer {
    pub fn new(clock: ClockKind) -> Self {
        Self {
            clock,
            phases: Vec::with_capacity(Phase::ALL.len()),
        }
    }

    pub fn clock(&self) -> ClockKind {
        self.clock
    }

    pub fn start(&self, virtual_now_ms: u64) -> Mark {
        Mark {
            wall: Instant::now(),
            virtual_ms: virtual_now_ms,
        }
    }

    pub fn stop(&mut self, phase: Phase, mark: Mark, virtual_now_ms: u64) {
        let elapsed = match self.clock {
            ClockKind::Real => mark.wall.elapsed(),
            ClockKind::Simulated => Duration::from_millis(virtual_now_ms.saturating_sub(mark.virtual_ms)),
        };
        self.phases.push((phase, elapsed));
    }

    /// Records a phase that had nothing to do.
    pub fn skip(&mut self, phase: Phase) {
        self.phases.push((phase, Duration::ZERO));
    }

    pub fn finish(self) -> Result<TimingReport, ReportError> {
        TimingReport::new(self.phases)
    }
}
