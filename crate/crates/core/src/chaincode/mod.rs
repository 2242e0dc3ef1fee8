//! Contract execution and the chaincode lifecycle.
//!
//! A contract is a compiled-in implementation of [`Contract`]. Peers install
//! packages into their local [`ChaincodeRegistry`]; a channel-level
//! [`InstantiationRecord`] then binds a package name to an endorsement
//! policy. Contracts only read state and return a [`WriteSet`]; the ledger
//! applies it at commit time.

mod emission;
mod record;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::digest::{sha256, Digest};
use crate::ledger::{StateReader, Version};
use crate::policy::EndorsementPolicy;

pub use emission::{EmissionContract, IdentityPenalty, PenaltyRule, EMISSION_CODE_ID};
pub use record::{
    from_micros, quantize, to_micros, validate_record, EmissionRecord, LocationType, Rule,
    Violation, MAX_VALUE, MICROS_PER_UNIT,
};

#[cfg(test)]
pub(crate) use record::tests::{arb_record, sample_record};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRead {
    pub key: String,
    /// `None` when the key was absent at simulation time.
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyWrite {
    pub key: String,
    pub value: Vec<u8>,
}

/// Reads observed and writes proposed by one contract invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteSet {
    pub reads: Vec<KeyRead>,
    pub writes: Vec<KeyWrite>,
}

impl WriteSet {
    pub fn digest(&self) -> Digest {
        sha256(&self.to_canonical_bytes())
    }
}

impl Canonical for KeyRead {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.key).put_option(self.version.as_ref());
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            key: dec.string()?,
            version: dec.option()?,
        })
    }
}

impl Canonical for KeyWrite {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.key).put_bytes(&self.value);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            key: dec.string()?,
            value: dec.bytes()?.to_vec(),
        })
    }
}

impl Canonical for WriteSet {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_list(&self.reads).put_list(&self.writes);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            reads: dec.list()?,
            writes: dec.list()?,
        })
    }
}

/// What a contract may see while executing: the channel and committed state.
pub struct ExecutionContext<'a> {
    pub channel: &'a str,
    pub state: &'a dyn StateReader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub write_set: WriteSet,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChaincodeError {
    #[error("record failed validation: {}", join_violations(.0))]
    Validation(Vec<Violation>),
    #[error("malformed arguments: {0}")]
    BadArguments(DecodeError),
    #[error("stored value at {key} is corrupt: {source}")]
    Corrupt { key: String, source: DecodeError },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A contract hosted by the engine. Implementations must be deterministic
/// functions of `(context, arguments)`.
pub trait Contract: Send + Sync {
    /// Identity of the implementation, compared on reinstall.
    fn code_id(&self) -> &str;

    fn invoke(&self, ctx: &ExecutionContext<'_>, args: &[u8]) -> Result<Invocation, ChaincodeError>;

    fn query(&self, ctx: &ExecutionContext<'_>, key: &str) -> Result<Option<Vec<u8>>, ChaincodeError>;
}

/// Looks up a compiled-in contract by code id.
pub fn builtin_contract(code_id: &str) -> Option<Arc<dyn Contract>> {
    match code_id {
        EMISSION_CODE_ID => Some(Arc::new(EmissionContract::default())),
        _ => None,
    }
}

#[derive(Clone)]
pub struct ChaincodePackage {
    pub name: String,
    pub version: String,
    pub contract: Arc<dyn Contract>,
}

impl ChaincodePackage {
    pub fn new(name: &str, version: &str, contract: Arc<dyn Contract>) -> Self {
        Self {
            name: name.to_owned(),
            version: version.to_owned(),
            contract,
        }
    }

    /// The air-quality contract as package `aqms` v1.
    pub fn emission() -> Self {
        Self::new("aqms", "1", Arc::new(EmissionContract::default()))
    }

    pub fn code_id(&self) -> &str {
        self.contract.code_id()
    }
}

impl fmt::Debug for ChaincodePackage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChaincodePackage")
            .field("name", &self.name)
            .field("version", &self.version)
            .field("code_id", &self.code_id())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("{name} v{version} is already installed with different code ({installed} vs {offered})")]
    Conflict {
        name: String,
        version: String,
        installed: String,
        offered: String,
    },
    #[error("peer {0} has not joined a channel")]
    NotJoined(String),
    #[error("unknown contract code {0}")]
    UnknownCode(String),
    #[error("chaincode {name} is not installed on: {}", .peers.join(", "))]
    MissingInstallation { name: String, peers: Vec<String> },
    #[error("invalid endorsement policy: {0}")]
    InvalidPolicy(String),
    #[error("chaincode {name} is not instantiated on channel {channel}")]
    NotInstantiated { channel: String, name: String },
    #[error("chaincode {name} v{version} is not installed on this peer")]
    NotInstalled { name: String, version: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstallReceipt {
    pub peer_id: String,
    pub name: String,
    pub version: String,
    /// False when the package was already present.
    pub newly_installed: bool,
}

/// A peer's local chaincode store, keyed by `(name, version)`.
#[derive(Debug, Clone, Default)]
pub struct ChaincodeRegistry {
    packages: BTreeMap<(String, String), ChaincodePackage>,
}

impl ChaincodeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    /// Idempotent for an identical package; a different implementation under
    /// the same `(name, version)` is a conflict.
    pub fn install(&mut self, package: ChaincodePackage) -> Result<bool, LifecycleError> {
        let key = (package.name.clone(), package.version.clone());
        if let Some(existing) = self.packages.get(&key) {
            if existing.code_id() != package.code_id() {
                return Err(LifecycleError::Conflict {
                    installed: existing.code_id().to_owned(),
                    offered: package.code_id().to_owned(),
                    name: package.name,
                    version: package.version,
                });
            }
            return Ok(false);
        }
        self.packages.insert(key, package);
        Ok(true)
    }

    pub fn get(&self, name: &str, version: &str) -> Option<&ChaincodePackage> {
        self.packages.get(&(name.to_owned(), version.to_owned()))
    }

    pub fn contains(&self, name: &str, version: &str) -> bool {
        self.get(name, version).is_some()
    }
}

/// Channel-level binding of a chaincode to its endorsement policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstantiationRecord {
    pub channel: String,
    pub chaincode: String,
    pub version: String,
    pub policy: EndorsementPolicy,
}

impl Canonical for InstantiationRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.channel)
            .put_str(&self.chaincode)
            .put_str(&self.version)
            .put(&self.policy);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            channel: dec.string()?,
            chaincode: dec.string()?,
            version: dec.string()?,
            policy: dec.get()?,
        })
    }
}
