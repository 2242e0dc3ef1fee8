use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aqms_core::chaincode::EmissionRecord;
use aqms_core::codec::Canonical;
use aqms_core::config::NetworkConfig;
use aqms_core::ingestion::format_rfc3339_ms;
use aqms_core::network::LinkLatency;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::artifacts::{tamper_block, RunDir, TamperField};
use crate::pipeline::{load_site_file, run_pipeline, DataSource, RunConfig};
use crate::timing::{fmt_ms, ClockKind, Phase};

pub const EXIT_OK: u8 = 0;
/// A chain failed verification or replicas disagree.
pub const EXIT_INVALID: u8 = 1;
/// Bad input, unreadable files, or a failed phase.
pub const EXIT_ERROR: u8 = 2;
/// The queried key is not in the world state.
pub const EXIT_ABSENT: u8 = 3;

pub const DEFAULT_DUMP_DIR: &str = "aqms-data";

/// Text for stdout and stderr plus the process exit code.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Output {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    fn error(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_ERROR,
            stderr: format!("error: {e}\n"),
            ..Self::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "aqms", version, about = "Simulated permissioned ledger for air-quality emission records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bring up the network, submit records and time every phase.
    Run(RunArgs),
    /// Check a peer's dumped ledger block by block.
    Verify {
        /// Peer id or volume label.
        peer: String,
        #[arg(long, default_value = DEFAULT_DUMP_DIR)]
        dump_dir: PathBuf,
    },
    /// Change one field of one stored block in a peer's dump.
    Tamper {
        peer: String,
        height: u64,
        field: FieldArg,
        #[arg(long, default_value = DEFAULT_DUMP_DIR)]
        dump_dir: PathBuf,
    },
    /// Look up an emission record by key (`<location>/<timestamp ms>`).
    Query {
        key: String,
        /// Peer to read from; defaults to the first configured peer.
        #[arg(long)]
        peer: Option<String>,
        #[arg(long, default_value = DEFAULT_DUMP_DIR)]
        dump_dir: PathBuf,
    },
    /// Print the timing report of the last run.
    Report {
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
        #[arg(long, default_value = DEFAULT_DUMP_DIR)]
        dump_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Network topology (TOML). Defaults to the bundled two-org channel.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of records to submit; all of them when omitted.
    #[arg(long)]
    pub records: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Time phases on the simulated network clock instead of the wall clock.
    #[arg(long)]
    pub sim_clock: bool,
    #[arg(long, default_value = DEFAULT_DUMP_DIR)]
    pub dump_dir: PathBuf,
    /// Sensor CSV or monitoring dataset. Defaults to the bundled sensor table.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Site metadata and sensor mapping (TOML with [site] and [mapping]).
    #[arg(long)]
    pub site: Option<PathBuf>,
    /// One OS thread per node.
    #[arg(long, conflicts_with = "sim_clock")]
    pub threaded: bool,
    /// Base one-way link latency in milliseconds.
    #[arg(long)]
    pub latency_ms: Option<u64>,
    /// Maximum random extra latency per message in milliseconds.
    #[arg(long)]
    pub jitter_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    So2,
    No2,
    Rspm,
    Co,
    Penalty,
    Timestamp,
    PrevHash,
    TxRoot,
}

impl From<FieldArg> for TamperField {
    fn from(f: FieldArg) -> Self {
        match f {
            FieldArg::So2 => TamperField::So2,
            FieldArg::No2 => TamperField::No2,
            FieldArg::Rspm => TamperField::Rspm,
            FieldArg::Co => TamperField::Co,
            FieldArg::Penalty => TamperField::Penalty,
            FieldArg::Timestamp => TamperField::Timestamp,
            FieldArg::PrevHash => TamperField::PrevHash,
            FieldArg::TxRoot => TamperField::TxRoot,
        }
    }
}

pub fn execute(cli: Cli) -> Output {
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Verify { peer, dump_dir } => verify(&dump_dir, &peer),
        Command::Tamper {
            peer,
            height,
            field,
            dump_dir,
        } => tamper(&dump_dir, &peer, height, field.into()),
        Command::Query { key, peer, dump_dir } => query(&dump_dir, &key, peer.as_deref()),
        Command::Report { format, dump_dir } => report(&dump_dir, format),
    }
}

fn run_config(args: &RunArgs) -> Result<RunConfig, String> {
    let network = match &args.config {
        Some(path) => NetworkConfig::load(path).map_err(|e| e.to_string())?,
        None => NetworkConfig::fibchannel(),
    };
    let mut cfg = RunConfig::new(network);
    if let Some(path) = &args.dataset {
        cfg.source = DataSource::File(path.clone());
    }
    if let Some(path) = &args.site {
        (cfg.site, cfg.mapping) = load_site_file(path).map_err(|e| e.to_string())?;
    }
    cfg.records = args.records;
    cfg.seed = args.seed;
    cfg.clock = if args.sim_clock {
        ClockKind::Simulated
    } else {
        ClockKind::Real
    };
    cfg.threaded = args.threaded;
    let defaults = LinkLatency::default();
    cfg.latency = LinkLatency {
        base_ms: args.latency_ms.unwrap_or(defaults.base_ms),
        jitter_ms: args.jitter_ms.unwrap_or(defaults.jitter_ms),
    };
    cfg.dump_dir = Some(args.dump_dir.clone());
    Ok(cfg)
}

pub fn run(args: &RunArgs) -> Output {
    let cfg = match run_config(args) {
        Ok(c) => c,
        Err(e) => return Output::error(e),
    };
    let outcome = match run_pipeline(&cfg) {
        Ok(o) => o,
        Err(e) => return Output::error(e),
    };
    if let Err(e) = crate::artifacts::write_run(&args.dump_dir, &outcome) {
        return Output::error(e);
    }
    let mut out = Output::default();
    out.stdout.push_str(&outcome.report.to_table());
    out.stdout.push('\n');
    out.stdout.push_str(&outcome.summary.to_string());
    let r = &outcome.report;
    if cfg.clock == ClockKind::Real
        && outcome.summary.submitted >= 10
        && r.get(Phase::ChaincodeInstantiate) <= r.get(Phase::ChaincodeInstall)
    {
        let _ = writeln!(
            out.stderr,
            "WARN: chaincode_instantiate ({} ms) did not exceed chaincode_install ({} ms)",
            fmt_ms(r.get(Phase::ChaincodeInstantiate)),
            fmt_ms(r.get(Phase::ChaincodeInstall)),
        );
    }
    let s = &outcome.summary;
    if s.healthy() {
        out.stdout.push_str("status: OK\n");
    } else {
        out.code = EXIT_INVALID;
        let _ = writeln!(
            out.stdout,
            "status: FAILED (tips agree: {}, all chains valid: {})",
            s.tips_agree(),
            s.all_chains_valid()
        );
    }
    out
}

pub fn verify(dir: &Path, peer: &str) -> Output {
    let result = RunDir::open(dir).and_then(|run| {
        let ledger = run.load_ledger(peer)?;
        Ok(ledger.verify_chain(&run.validator()))
    });
    let report = match result {
        Ok(r) => r,
        Err(e) => return Output::error(e),
    };
    let mut out = Output::default();
    for b in &report.blocks {
        if b.is_ok() {
            let _ = writeln!(out.stdout, "block {}: ok", b.index);
        } else {
            let list: Vec<String> = b.mismatches.iter().map(ToString::to_string).collect();
            let _ = writeln!(out.stdout, "block {}: MISMATCH {}", b.index, list.join(", "));
        }
    }
    let _ = writeln!(
        out.stdout,
        "world state: {}",
        if report.state_matches { "consistent" } else { "INCONSISTENT" }
    );
    if report.valid {
        out.stdout.push_str("VALID\n");
    } else {
        out.code = EXIT_INVALID;
        match report.first_mismatch() {
            Some(h) => {
                let _ = writeln!(out.stdout, "INVALID at height {h}");
            }
            None => out.stdout.push_str("INVALID\n"),
        }
    }
    out
}

pub fn tamper(dir: &Path, peer: &str, height: u64, field: TamperField) -> Output {
    let result = RunDir::open(dir).and_then(|run| {
        let mut ledger = run.load_ledger(peer)?;
        tamper_block(&mut ledger, height, field)?;
        run.store_ledger(peer, &ledger)?;
        run.ledger_path(peer)
    });
    match result {
        Ok((peer_id, path)) => Output {
            stdout: format!(
                "tampered {} of block {height} on {peer_id} ({})\n",
                field.name(),
                path.display()
            ),
            ..Output::default()
        },
        Err(e) => Output::error(e),
    }
}

/// Ten labeled lines, one per record field.
pub fn render_record(r: &EmissionRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "timestamp:           {} ({})", format_rfc3339_ms(r.timestamp), r.timestamp);
    let _ = writeln!(s, "location_type:       {}", r.location_type);
    let _ = writeln!(s, "so2:                 {}", r.so2);
    let _ = writeln!(s, "no2:                 {}", r.no2);
    let _ = writeln!(s, "rspm:                {}", r.rspm);
    let _ = writeln!(s, "co:                  {}", r.co);
    let _ = writeln!(s, "industry_names:      {}", r.industry_names.join("; "));
    let _ = writeln!(s, "monitoring_location: {}", r.monitoring_location);
    let _ = writeln!(s, "penalty_value:       {}", r.penalty_value);
    let _ = writeln!(s, "reporting_agency:    {}", r.reporting_agency);
    s
}

pub fn query(dir: &Path, key: &str, peer: Option<&str>) -> Output {
    let started = Instant::now();
    let result = RunDir::open(dir).and_then(|run| {
        let peer = peer.unwrap_or(run.default_peer()).to_owned();
        let ledger = run.load_ledger(&peer)?;
        Ok(ledger.query_state(key).map(<[u8]>::to_vec))
    });
    let value = match result {
        Ok(v) => v,
        Err(e) => return Output::error(e),
    };
    let mut out = Output::default();
    match value {
        None => {
            out.code = EXIT_ABSENT;
            out.stdout.push_str("absent\n");
        }
        Some(bytes) => match EmissionRecord::from_canonical_bytes(&bytes) {
            Ok(r) => out.stdout.push_str(&render_record(&r)),
            Err(e) => return Output::error(format!("stored value for {key} does not decode: {e}")),
        },
    }
    let _ = writeln!(out.stderr, "query took {} ms", fmt_ms(started.elapsed()));
    out
}

pub fn report(dir: &Path, format: ReportFormat) -> Output {
    match RunDir::open(dir).and_then(|run| run.report()) {
        Ok(r) => Output {
            stdout: match format {
                ReportFormat::Table => r.to_table(),
                ReportFormat::Csv => r.to_csv(),
            },
            ..Output::default()
        },
        Err(e) => Output::error(e),
    }
}
