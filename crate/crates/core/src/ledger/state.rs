use std::collections::BTreeMap;
use std::fmt;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

/// Position of the transaction that last wrote a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Version {
    pub height: u64,
    pub tx_index: u32,
}

impl Version {
    pub fn new(height: u64, tx_index: u32) -> Self {
        Self { height, tx_index }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.height, self.tx_index)
    }
}

impl Canonical for Version {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.height).put_u32(self.tx_index);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: dec.u64()?,
            tx_index: dec.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedValue {
    pub value: Vec<u8>,
    pub version: Version,
}

/// Read access to committed state, as seen by chaincode simulation.
pub trait StateReader {
    fn get_versioned(&self, key: &str) -> Option<&VersionedValue>;

    fn get(&self, key: &str) -> Option<&[u8]> {
        self.get_versioned(key).map(|v| v.value.as_slice())
    }

    fn version(&self, key: &str) -> Option<Version> {
        self.get_versioned(key).map(|v| v.version)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<String, VersionedValue>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VersionedValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn put(&mut self, key: String, value: Vec<u8>, version: Version) {
        if let Some(old) = self.entries.get(&key) {
            debug_assert!(old.version <= version, "version regressed for {key}");
        }
        self.entries.insert(key, VersionedValue { value, version });
    }
}

impl StateReader for WorldState {
    fn get_versioned(&self, key: &str) -> Option<&VersionedValue> {
        self.entries.get(key)
    }
}
