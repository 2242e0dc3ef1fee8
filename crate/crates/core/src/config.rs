//! Network topology: organizations, peers, the orderer, the channel and the
//! block-cutting parameters. Read from TOML; canonically encoded into the
//! genesis block.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

/// The two-organization `fibchannel` topology shipped with the crate.
pub const FIBCHANNEL_TOML: &str = include_str!("../fixtures/fibchannel.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config has no organizations")]
    NoOrgs,
    #[error("organization {0} has no peers")]
    NoPeers(String),
    #[error("organization {0} has no endorsing peer")]
    NoEndorser(String),
    #[error("expected exactly one orderer, found {0}")]
    OrdererCount(usize),
    #[error("channel name must be non-empty")]
    EmptyChannel,
    #[error("empty identifier in {0}")]
    EmptyId(&'static str),
    #[error("service URI {0} is used by more than one node")]
    DuplicateUri(String),
    #[error("node id {0} is used by more than one node")]
    DuplicateNode(String),
    #[error("organization id {0} is declared twice")]
    DuplicateOrg(String),
    #[error("block_cut.max_tx must be positive")]
    InvalidBlockCut,
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub channel: String,
    #[serde(default)]
    pub block_cut: BlockCut,
    pub orgs: Vec<OrgConfig>,
    pub orderers: Vec<OrdererConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockCut {
    pub max_tx: u32,
    pub max_wait_ms: u64,
}

impl Default for BlockCut {
    fn default() -> Self {
        Self {
            max_tx: 10,
            max_wait_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrgConfig {
    pub org_id: String,
    pub peers: Vec<PeerConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerConfig {
    pub peer_id: String,
    pub service_uri: String,
    /// Label of the peer's ledger dump file.
    #[serde(default)]
    pub volume: Option<String>,
    #[serde(default)]
    pub endorsing: bool,
    /// Display names of the parties this peer endorses for.
    #[serde(default)]
    pub labels: Vec<String>,
}

impl PeerConfig {
    pub fn volume(&self) -> &str {
        self.volume.as_deref().unwrap_or(&self.peer_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdererConfig {
    pub orderer_id: String,
    pub org_id: String,
    pub service_uri: String,
    #[serde(default)]
    pub volume: Option<String>,
}

impl NetworkConfig {
    pub fn fibchannel() -> Self {
        Self::from_toml(FIBCHANNEL_TOML).expect("bundled topology parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.channel.is_empty() {
            return Err(ConfigError::EmptyChannel);
        }
        if self.orgs.is_empty() {
            return Err(ConfigError::NoOrgs);
        }
        if self.orderers.len() != 1 {
            return Err(ConfigError::OrdererCount(self.orderers.len()));
        }
        if self.block_cut.max_tx == 0 {
            return Err(ConfigError::InvalidBlockCut);
        }
        let mut uris = BTreeSet::new();
        let mut ids = BTreeSet::new();
        let mut orgs = BTreeSet::new();
        for org in &self.orgs {
            if org.org_id.is_empty() {
                return Err(ConfigError::EmptyId("org_id"));
            }
            if !orgs.insert(org.org_id.as_str()) {
                return Err(ConfigError::DuplicateOrg(org.org_id.clone()));
            }
            if org.peers.is_empty() {
                return Err(ConfigError::NoPeers(org.org_id.clone()));
            }
            if !org.peers.iter().any(|p| p.endorsing) {
                return Err(ConfigError::NoEndorser(org.org_id.clone()));
            }
            for peer in &org.peers {
                if peer.peer_id.is_empty() {
                    return Err(ConfigError::EmptyId("peer_id"));
                }
                if !ids.insert(peer.peer_id.as_str()) {
                    return Err(ConfigError::DuplicateNode(peer.peer_id.clone()));
                }
                if !uris.insert(peer.service_uri.as_str()) {
                    return Err(ConfigError::DuplicateUri(peer.service_uri.clone()));
                }
            }
        }
        let orderer = &self.orderers[0];
        if orderer.orderer_id.is_empty() {
            return Err(ConfigError::EmptyId("orderer_id"));
        }
        if orderer.org_id.is_empty() {
            return Err(ConfigError::EmptyId("orderer org_id"));
        }
        if !ids.insert(orderer.orderer_id.as_str()) {
            return Err(ConfigError::DuplicateNode(orderer.orderer_id.clone()));
        }
        if !uris.insert(orderer.service_uri.as_str()) {
            return Err(ConfigError::DuplicateUri(orderer.service_uri.clone()));
        }
        Ok(())
    }

    /// Valid configs have exactly one orderer.
    pub fn orderer(&self) -> &OrdererConfig {
        &self.orderers[0]
    }

    /// All peers with their org, in config order.
    pub fn peers(&self) -> impl Iterator<Item = (&str, &PeerConfig)> {
        self.orgs
            .iter()
            .flat_map(|o| o.peers.iter().map(move |p| (o.org_id.as_str(), p)))
    }

    pub fn peer(&self, peer_id: &str) -> Option<(&str, &PeerConfig)> {
        self.peers().find(|(_, p)| p.peer_id == peer_id)
    }

    /// Resolves a peer by id or by its volume label.
    pub fn find_peer(&self, name: &str) -> Option<(&str, &PeerConfig)> {
        self.peers()
            .find(|(_, p)| p.peer_id == name || p.volume() == name)
    }

    /// Every organization that needs a CA, including the orderer's.
    pub fn org_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = self.orgs.iter().map(|o| o.org_id.clone()).collect();
        for o in &self.orderers {
            if !out.contains(&o.org_id) {
                out.push(o.org_id.clone());
            }
        }
        out
    }
}

impl Canonical for BlockCut {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.max_tx).put_u64(self.max_wait_ms);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            max_tx: dec.u32()?,
            max_wait_ms: dec.u64()?,
        })
    }
}

impl Canonical for PeerConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.peer_id)
            .put_str(&self.service_uri)
            .put_option(self.volume.as_ref())
            .put_bool(self.endorsing)
            .put_list(&self.labels);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            peer_id: dec.string()?,
            service_uri: dec.string()?,
            volume: dec.option()?,
            endorsing: dec.bool()?,
            labels: dec.list()?,
        })
    }
}

impl Canonical for OrgConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.org_id).put_list(&self.peers);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            org_id: dec.string()?,
            peers: dec.list()?,
        })
    }
}

impl Canonical for OrdererConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.orderer_id)
            .put_str(&self.org_id)
            .put_str(&self.service_uri)
            .put_option(self.volume.as_ref());
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            orderer_id: dec.string()?,
            org_id: dec.string()?,
            service_uri: dec.string()?,
            volume: dec.option()?,
        })
    }
}

impl Canonical for NetworkConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.channel)
            .put(&self.block_cut)
            .put_list(&self.orgs)
            .put_list(&self.orderers);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            channel: dec.string()?,
            block_cut: dec.get()?,
            orgs: dec.list()?,
            orderers: dec.list()?,
        })
    }
}
