//! On-disk layout of a finished run.
//!
//! ```text
//! <dir>/network.toml          topology used by the run
//! <dir>/channel.bin           instantiation record and CA roots
//! <dir>/<volume>.ledger       one ledger dump per peer
//! <dir>/certs/<node>.cert     canonical certificate per node
//! <dir>/report.csv            phase,milliseconds
//! <dir>/summary.txt           human-readable run summary
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use aqms_core::chaincode::{EmissionRecord, InstantiationRecord};
use aqms_core::codec::{Canonical, DecodeError, Decoder, Encoder};
use aqms_core::config::{ConfigError, NetworkConfig};
use aqms_core::identity::TrustRoots;
use aqms_core::ledger::{Block, Ledger, LedgerError};
use aqms_core::network::{EndorsementValidator, Identities};
use aqms_core::tx::Transaction;
use thiserror::Error;

use crate::pipeline::RunOutcome;
use crate::timing::{ReportError, TimingReport};

pub const NETWORK_FILE: &str = "network.toml";
pub const CHANNEL_FILE: &str = "channel.bin";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CERT_DIR: &str = "certs";
pub const LEDGER_EXT: &str = "ledger";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("no peer named {0:?} in this run")]
    UnknownPeer(String),
    #[error("block {height} holds no emission record")]
    NoRecord { height: u64 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>, ArtifactError> {
    fs::read(path).map_err(io_err(path))
}

/// Writes every node's certificate as `<dir>/certs/<node>.cert`.
pub fn write_certificates(dir: &Path, identities: &Identities) -> Result<(), ArtifactError> {
    for (node, cert) in &identities.certificates {
        write(&dir.join(CERT_DIR).join(format!("{node}.cert")), cert.to_canonical_bytes())?;
    }
    Ok(())
}

fn encode_channel(record: &InstantiationRecord, roots: &TrustRoots) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.put(record).put(roots);
    enc.into_bytes()
}

fn decode_channel(bytes: &[u8]) -> Result<(InstantiationRecord, TrustRoots), DecodeError> {
    let mut dec = Decoder::new(bytes);
    let out = (dec.get()?, dec.get()?);
    dec.finish()?;
    Ok(out)
}

pub fn ledger_file_name(volume: &str) -> String {
    format!("{volume}.{LEDGER_EXT}")
}

/// Writes everything a run produced, except certificates, into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<(), ArtifactError> {
    let a = &outcome.artifacts;
    write(&dir.join(NETWORK_FILE), a.network.to_toml())?;
    write(&dir.join(CHANNEL_FILE), encode_channel(&a.instantiation, &a.roots))?;
    for (peer, dump) in &a.ledgers {
        let (_, cfg) = a.network.peer(peer).ok_or_else(|| ArtifactError::UnknownPeer(peer.clone()))?;
        write(&dir.join(ledger_file_name(cfg.volume())), dump)?;
    }
    write(&dir.join(REPORT_FILE), outcome.report.to_csv())?;
    write(&dir.join(SUMMARY_FILE), outcome.summary.to_string())?;
    Ok(())
}

/// A run directory opened for inspection.
#[derive(Debug, Clone)]
pub struct RunDir {
    dir: PathBuf,
    network: NetworkConfig,
    instantiation: InstantiationRecord,
    roots: TrustRoots,
}

impl RunDir {
    pub fn open(dir: &Path) -> Result<Self, ArtifactError> {
        let cfg_path = dir.join(NETWORK_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
        let network = NetworkConfig::from_toml(&text)?;
        let chan_path = dir.join(CHANNEL_FILE);
        let (instantiation, roots) = decode_channel(&read(&chan_path)?).map_err(|source| ArtifactError::Decode {
            path: chan_path.clone(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_owned(),
            network,
            instantiation,
            roots,
        })
    }

    pub fn network(&self) -> &NetworkConfig {
        &self.network
    }

    pub fn validator(&self) -> EndorsementValidator {
        EndorsementValidator::new(&self.instantiation, self.roots.clone())
    }

    /// Resolves a peer by id or volume label to `(peer_id, dump path)`.
    pub fn ledger_path(&self, peer: &str) -> Result<(String, PathBuf), ArtifactError> {
        let (_, cfg) = self
            .network
            .find_peer(peer)
            .ok_or_else(|| ArtifactError::UnknownPeer(peer.to_owned()))?;
        Ok((cfg.peer_id.clone(), self.dir.join(ledger_file_name(cfg.volume()))))
    }

    /// Peer id of the first configured peer.
    pub fn default_peer(&self) -> &str {
        self.network.peers().next().map(|(_, p)| p.peer_id.as_str()).unwrap_or_default()
    }

    /// Rebuilds a peer's replica from its dump. Corrupt blocks are kept so
    /// that verification can report them.
    pub fn load_ledger(&self, peer: &str) -> Result<Ledger, ArtifactError> {
        let (_, path) = self.ledger_path(peer)?;
        Ok(Ledger::from_dump(&read(&path)?, &self.validator())?)
    }

    pub fn store_ledger(&self, peer: &str, ledger: &Ledger) -> Result<(), ArtifactError> {
        let (_, path) = self.ledger_path(peer)?;
        write(&path, ledger.to_dump())
    }

    pub fn report(&self) -> Result<TimingReport, ArtifactError> {
        let path = self.dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(TimingReport::from_csv(&text)?)
    }
}

/// Fields `tamper` knows how to change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TamperField {
    So2,
    No2,
    Rspm,
    Co,
    Penalty,
    /// Header timestamp, plus one millisecond.
    Timestamp,
    /// Lowest bit of the header's prev_hash.
    PrevHash,
    /// Lowest bit of the header's tx_root.
    TxRoot,
}

impl TamperField {
    pub const ALL: [TamperField; 8] = [
        TamperField::So2,
        TamperField::No2,
        TamperField::Rspm,
        TamperField::Co,
        TamperField::Penalty,
        TamperField::Timestamp,
        TamperField::PrevHash,
        TamperField::TxRoot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TamperField::So2 => "so2",
            TamperField::No2 => "no2",
            TamperField::Rspm => "rspm",
            TamperField::Co => "co",
            TamperField::Penalty => "penalty",
            TamperField::Timestamp => "timestamp",
            TamperField::PrevHash => "prev_hash",
            TamperField::TxRoot => "tx_root",
        }
    }

    fn bump_record(self, r: &mut EmissionRecord) {
        let slot = match self {
            TamperField::So2 => &mut r.so2,
            TamperField::No2 => &mut r.no2,
            TamperField::Rspm => &mut r.rspm,
            TamperField::Co => &mut r.co,
            TamperField::Penalty => &mut r.penalty_value,
            _ => unreachable!("header field"),
        };
        *slot += 1.0;
    }
}

fn flip_low_bit(d: &mut aqms_core::digest::Digest) {
    let mut b = *d.as_bytes();
    b[31] ^= 1;
    *d = aqms_core::digest::Digest::from_bytes(b);
}

/// Rewrites block `height` with one field changed. Record fields change by
/// +1 in the first emission transaction, both in the signed proposal and in
/// the stored write set, as a forger would do it.
pub fn tamper_block(ledger: &mut Ledger, height: u64, field: TamperField) -> Result<(), ArtifactError> {
    let mut block: Block = ledger.block(height)?;
    match field {
        TamperField::Timestamp => block.header.timestamp += 1,
        TamperField::PrevHash => flip_low_bit(&mut block.header.prev_hash),
        TamperField::TxRoot => flip_low_bit(&mut block.header.tx_root),
        record_field => {
            let tx = block
                .transactions
                .iter_mut()
                .find_map(|t| match t {
                    Transaction::Endorsed(e) => Some(e),
                    Transaction::Config(_) => None,
                })
                .ok_or(ArtifactError::NoRecord { height })?;
            let key = tx.proposal.record.state_key();
            record_field.bump_record(&mut tx.proposal.record);
            for w in tx.write_set.writes.iter_mut().filter(|w| w.key == key) {
                if let Ok(mut stored) = EmissionRecord::from_canonical_bytes(&w.value) {
                    record_field.bump_record(&mut stored);
                    w.value = stored.to_canonical_bytes();
                }
            }
        }
    }
    ledger.overwrite_block_bytes(height, block.to_canonical_bytes())?;
    Ok(())
}
