//! End-to-end run: bring the network up, deploy the emission chaincode,
//! submit records, query them back, and time every phase.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use aqms_core::chaincode::{ChaincodePackage, EmissionRecord, InstantiationRecord};
use aqms_core::config::NetworkConfig;
use aqms_core::digest::Digest;
use aqms_core::identity::TrustRoots;
use aqms_core::ingestion::{
    parse_monitoring_dataset, parse_sensor_csv, raw_to_record_with, IngestError, PollutantValues, SensorMapping,
    SiteMeta, SENSOR_HEADER, SENSOR_SAMPLES_CSV,
};
use aqms_core::chaincode::LocationType;
use aqms_core::network::{
    LinkLatency, NetworkBuilder, NetworkError, NetworkOptions, PeerStatus, ProcessingCosts, RuntimeKind, TimeMode,
};
use thiserror::Error;

use crate::artifacts;
use crate::timing::{ClockKind, Phase, PhaseTimer, ReportError, TimingReport};

/// Timestamp given to the first sensor sample; later samples follow at
/// [`SAMPLE_INTERVAL_MS`] spacing.
pub const SAMPLE_START_MS: u64 = 1_579_082_400_000;
pub const SAMPLE_INTERVAL_MS: u64 = 60_000;

/// Site used for sensor samples when none is configured. Thresholds are in
/// raw ADC counts, matching the identity calibration.
pub fn default_site() -> SiteMeta {
    SiteMeta {
        monitoring_location: "iiit-kottayam".into(),
        location_type: LocationType::Industrial,
        industry_names: vec!["Rubber Processing".into()],
        reporting_agency: "KSPCB".into(),
        thresholds: PollutantValues {
            so2: 80.0,
            no2: 80.0,
            rspm: 380.0,
            co: 390.0,
        },
        penalty_rate: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// The bundled fourteen-row sensor table.
    Bundled,
    /// A sensor CSV (3 columns) or monitoring dataset (10 columns), told
    /// apart by the width of the first row.
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub source: DataSource,
    pub site: SiteMeta,
    pub mapping: SensorMapping,
    /// How many records to submit; `None` submits all of them.
    pub records: Option<usize>,
    pub seed: Option<u64>,
    pub clock: ClockKind,
    /// Run each node on its own thread (real clock only).
    pub threaded: bool,
    pub latency: LinkLatency,
    pub costs: ProcessingCosts,
    /// Certificates are written here while they are generated.
    pub dump_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(network: NetworkConfig) -> Self {
        Self {
            network,
            source: DataSource::Bundled,
            site: default_site(),
            mapping: SensorMapping::default(),
            records: None,
            seed: None,
            clock: ClockKind::Real,
            threaded: false,
            latency: LinkLatency::default(),
            costs: ProcessingCosts::default(),
            dump_dir: None,
        }
    }

    /// Bundled two-org topology and sensor samples, seeded simulated clock.
    pub fn simulated(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            clock: ClockKind::Simulated,
            ..Self::new(NetworkConfig::fibchannel())
        }
    }

    fn options(&self) -> NetworkOptions {
        let runtime = match (self.threaded, self.clock) {
            (true, _) => RuntimeKind::Threaded,
            (false, ClockKind::Simulated) => RuntimeKind::Simulated(TimeMode::Virtual),
            (false, ClockKind::Real) => RuntimeKind::Simulated(TimeMode::Wall),
        };
        NetworkOptions {
            seed: self.seed,
            runtime,
            latency: self.latency,
            costs: self.costs,
            ..NetworkOptions::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum Failure {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Artifact(#[from] artifacts::ArtifactError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("requested {requested} records but only {available} are available")]
    NotEnoughRecords { requested: usize, available: usize },
    #[error("the threaded runtime needs the real clock")]
    ThreadedSimulation,
}

/// A failure together with the phase it happened in.
#[derive(Debug, Error)]
#[error("{phase} failed: {source}")]
pub struct PipelineError {
    pub phase: Phase,
    #[source]
    pub source: Failure,
}

fn at<E: Into<Failure>>(phase: Phase) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        phase,
        source: e.into(),
    }
}

/// Records read from the input, plus a message per unusable row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedData {
    pub records: Vec<EmissionRecord>,
    pub errors: Vec<String>,
}

fn read_source(source: &DataSource) -> Result<String, IngestError> {
    match source {
        DataSource::Bundled => Ok(SENSOR_SAMPLES_CSV.to_owned()),
        DataSource::File(path) => fs::read_to_string(path).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }),
    }
}

fn looks_like_sensor_csv(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.split(',').count() == SENSOR_HEADER.len())
}

pub fn load_records(source: &DataSource, site: &SiteMeta, mapping: &SensorMapping) -> Result<LoadedData, IngestError> {
    let text = read_source(source)?;
    let mut out = LoadedData::default();
    if looks_like_sensor_csv(&text) {
        site.validate()?;
        mapping.validate()?;
        let parsed = parse_sensor_csv(&text);
        out.errors.extend(parsed.errors.iter().map(ToString::to_string));
        for (i, sample) in parsed.items.iter().enumerate() {
            let ts = SAMPLE_START_MS + i as u64 * SAMPLE_INTERVAL_MS;
            match raw_to_record_with(sample, site, mapping, ts) {
                Ok(r) => out.records.push(r),
                Err(e) => out.errors.push(format!("sample {}: {e}", i + 1)),
            }
        }
    } else {
        let parsed = parse_monitoring_dataset(&text);
        out.errors.extend(parsed.errors.iter().map(ToString::to_string));
        out.records = parsed.items;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub records_loaded: usize,
    pub input_errors: Vec<String>,
    pub submitted: usize,
    /// Refused by the endorsers, so never ordered.
    pub rejected: usize,
    /// Transaction count of each block after genesis.
    pub block_sizes: Vec<usize>,
    pub valid_tx: usize,
    pub invalid_tx: usize,
    pub queried: usize,
    /// Queries whose answer differed from the submitted record.
    pub query_mismatches: usize,
    pub genesis: Digest,
    pub peers: BTreeMap<String, PeerStatus>,
}

impl RunSummary {
    pub fn tips_agree(&self) -> bool {
        self.peers.values().map(|s| (s.tip_digest, s.chain_len)).collect::<BTreeSet<_>>().len() <= 1
    }

    pub fn all_chains_valid(&self) -> bool {
        self.peers.values().all(|s| s.valid)
    }

    pub fn healthy(&self) -> bool {
        self.tips_agree() && self.all_chains_valid()
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records loaded:    {}", self.records_loaded)?;
        writeln!(f, "input errors:      {}", self.input_errors.len())?;
        for e in &self.input_errors {
            writeln!(f, "  {e}")?;
        }
        writeln!(f, "submitted:         {}", self.submitted)?;
        writeln!(f, "rejected:          {}", self.rejected)?;
        writeln!(f, "blocks committed:  {} {:?}", self.block_sizes.len(), self.block_sizes)?;
        writeln!(f, "valid tx:          {}", self.valid_tx)?;
        writeln!(f, "invalid tx:        {}", self.invalid_tx)?;
        writeln!(f, "queried:           {} ({} mismatched)", self.queried, self.query_mismatches)?;
        writeln!(f, "genesis:           {}", self.genesis)?;
        for (peer, s) in &self.peers {
            writeln!(
                f,
                "peer {peer}: height {} tip {} {}",
                s.chain_len,
                s.tip_digest,
                if s.valid { "valid" } else { "INVALID" }
            )?;
        }
        Ok(())
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub network: NetworkConfig,
    pub instantiation: InstantiationRecord,
    pub roots: TrustRoots,
    /// Ledger dump per peer id.
    pub ledgers: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: TimingReport,
    pub summary: RunSummary,
    pub artifacts: RunArtifacts,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    use Phase::*;

    let mut timer = PhaseTimer::new(cfg.clock);
    if cfg.threaded && cfg.clock == ClockKind::Simulated {
        return Err(at(Prerequisites)(Failure::ThreadedSimulation));
    }

    let mark = timer.start(0);
    let data = load_records(&cfg.source, &cfg.site, &cfg.mapping).map_err(at(Prerequisites))?;
    let wanted = cfg.records.unwrap_or(data.records.len());
    if wanted > data.records.len() {
        return Err(at(Prerequisites)(Failure::NotEnoughRecords {
            requested: wanted,
            available: data.records.len(),
        }));
    }
    let mut builder = NetworkBuilder::new(cfg.network.clone(), cfg.options());
    builder.prerequisites().map_err(at(Prerequisites))?;
    timer.stop(Prerequisites, mark, builder.virtual_now());

    let mark = timer.start(builder.virtual_now());
    let identities = builder.generate_certificates().map_err(at(GenerateCertificates))?.clone();
    if let Some(dir) = &cfg.dump_dir {
        artifacts::write_certificates(dir, &identities).map_err(at(GenerateCertificates))?;
    }
    timer.stop(GenerateCertificates, mark, builder.virtual_now());

    let mark = timer.start(builder.virtual_now());
    let genesis = builder.establish_channel().map_err(at(EstablishChannel))?;
    timer.stop(EstablishChannel, mark, builder.virtual_now());

    let mark = timer.start(builder.virtual_now());
    let mut net = builder.peer_join().map_err(at(PeerJoin))?;
    timer.stop(PeerJoin, mark, net.now_ms());

    let package = ChaincodePackage::emission();
    let mark = timer.start(net.now_ms());
    net.install_everywhere(&package).map_err(at(ChaincodeInstall))?;
    timer.stop(ChaincodeInstall, mark, net.now_ms());

    let mark = timer.start(net.now_ms());
    let instantiation = net.instantiate_default(&package).map_err(at(ChaincodeInstantiate))?;
    timer.stop(ChaincodeInstantiate, mark, net.now_ms());

    let records = &data.records[..wanted];
    let actor = net.actor_ids()[0].clone();
    let mut by_tx = BTreeMap::new();
    if records.is_empty() {
        timer.skip(Invoke);
    } else {
        let mark = timer.start(net.now_ms());
        let results = net.submit_many(&actor, records.iter().cloned()).map_err(at(Invoke))?;
        timer.stop(Invoke, mark, net.now_ms());
        for r in results {
            let proposal = r.map_err(at(Invoke))?;
            by_tx.insert(proposal.tx_id(), proposal.record);
        }
    }

    let reference = net.peer_ids()[0].clone();
    let events = net.commit_events(&reference);
    let committed: Vec<&EmissionRecord> = events
        .iter()
        .flat_map(|e| &e.tx_status)
        .filter(|(_, v)| v.is_valid())
        .filter_map(|(id, _)| by_tx.get(id))
        .collect();
    let mut query_mismatches = 0;
    if committed.is_empty() {
        timer.skip(Query);
    } else {
        let mark = timer.start(net.now_ms());
        for record in &committed {
            let got = net.query(&reference, &record.state_key()).map_err(at(Query))?;
            if got.as_ref() != Some(*record) {
                query_mismatches += 1;
            }
        }
        timer.stop(Query, mark, net.now_ms());
    }
    let report = timer.finish().map_err(at(Query))?;

    let peers = net.statuses().map_err(at(Query))?;
    let mut ledgers = BTreeMap::new();
    for peer in net.peer_ids() {
        let dump = net.dump_ledger(&peer).map_err(at(Query))?;
        ledgers.insert(peer, dump);
    }
    let summary = RunSummary {
        records_loaded: data.records.len(),
        input_errors: data.errors,
        submitted: records.len(),
        rejected: net.rejected().len(),
        block_sizes: events.iter().map(|e| e.tx_status.len()).collect(),
        valid_tx: events.iter().map(|e| e.valid_count()).sum(),
        invalid_tx: events.iter().map(|e| e.invalid_count()).sum(),
        queried: committed.len(),
        query_mismatches,
        genesis,
        peers,
    };
    let artifacts = RunArtifacts {
        network: cfg.network.clone(),
        instantiation,
        roots: identities.roots,
        ledgers,
    };
    net.shutdown();
    Ok(RunOutcome {
        report,
        summary,
        artifacts,
    })
}

/// Loads a site description from TOML: a `[site]` table in [`SiteMeta`]
/// shape and an optional `[mapping]` table in [`SensorMapping`] shape.
pub fn load_site_file(path: &Path) -> Result<(SiteMeta, SensorMapping), IngestError> {
    let io = |message: String| IngestError::Io {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| io(e.to_string()))?;
    let site: SiteMeta = table
        .remove("site")
        .ok_or_else(|| io("missing [site] table".into()))?
        .try_into()
        .map_err(|e: toml::de::Error| io(e.to_string()))?;
    let mapping = match table.remove("mapping") {
        Some(m) => m.try_into().map_err(|e: toml::de::Error| io(e.to_string()))?,
        None => SensorMapping::default(),
    };
    if let Some(extra) = table.keys().next() {
        return Err(io(format!("unknown table [{extra}]")));
    }
    site.validate()?;
    mapping.validate()?;
    Ok((site, mapping))
}
