//! Endorsement policy: the set of `(org, peer)` pairs that must all sign.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::config::NetworkConfig;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolicyMember {
    pub org_id: String,
    pub peer_id: String,
}

impl PolicyMember {
    pub fn new(org_id: impl Into<String>, peer_id: impl Into<String>) -> Self {
        Self {
            org_id: org_id.into(),
            peer_id: peer_id.into(),
        }
    }
}

impl fmt::Display for PolicyMember {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.peer_id, self.org_id)
    }
}

impl Canonical for PolicyMember {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.org_id).put_str(&self.peer_id);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            org_id: dec.string()?,
            peer_id: dec.string()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("endorsement policy is empty")]
    Empty,
    #[error("policy member {0} is not an endorsing peer in the network config")]
    NotAnEndorser(PolicyMember),
    #[error("policy lists {0} twice")]
    Duplicate(PolicyMember),
}

/// Conjunction over named peers: every member must endorse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementPolicy {
    required: Vec<PolicyMember>,
}

impl EndorsementPolicy {
    pub fn new(required: Vec<PolicyMember>) -> Result<Self, PolicyError> {
        if required.is_empty() {
            return Err(PolicyError::Empty);
        }
        let mut seen = BTreeSet::new();
        for m in &required {
            if !seen.insert(m) {
                return Err(PolicyError::Duplicate(m.clone()));
            }
        }
        Ok(Self { required })
    }

    /// Every endorsing peer of the config; in the bundled topology this is
    /// peer 0 of each organization.
    pub fn all_endorsers(config: &NetworkConfig) -> Result<Self, PolicyError> {
        Self::new(
            config
                .peers()
                .filter(|(_, p)| p.endorsing)
                .map(|(org, p)| PolicyMember::new(org, &p.peer_id))
                .collect(),
        )
    }

    pub fn required(&self) -> &[PolicyMember] {
        &self.required
    }

    /// Checks that each member names an endorsing peer of `config`.
    pub fn validate_against(&self, config: &NetworkConfig) -> Result<(), PolicyError> {
        for m in &self.required {
            let ok = config
                .peer(&m.peer_id)
                .is_some_and(|(org, p)| org == m.org_id && p.endorsing);
            if !ok {
                return Err(PolicyError::NotAnEndorser(m.clone()));
            }
        }
        Ok(())
    }

    /// Members not covered by `present`, in policy order. Empty means the
    /// policy is satisfied.
    pub fn missing<'a>(
        &self,
        present: impl IntoIterator<Item = &'a PolicyMember>,
    ) -> Vec<PolicyMember> {
        let present: BTreeSet<&PolicyMember> = present.into_iter().collect();
        self.required
            .iter()
            .filter(|m| !present.contains(m))
            .cloned()
            .collect()
    }

    pub fn is_satisfied_by<'a>(&self, present: impl IntoIterator<Item = &'a PolicyMember>) -> bool {
        self.missing(present).is_empty()
    }
}

impl Canonical for EndorsementPolicy {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_list(&self.required);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Self::new(dec.list()?).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}
