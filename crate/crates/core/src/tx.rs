//! Proposals, endorsements and the transactions that end up in blocks.

use crate::chaincode::{EmissionRecord, WriteSet};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::digest::{sha256, sha256_concat, Digest};
use crate::identity::{sign, Certificate, Signature, SigningKey};
use crate::policy::PolicyMember;

pub const NONCE_LEN: usize = 16;

/// A signed request from an actor to record one emission.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub actor_id: String,
    pub channel: String,
    pub chaincode: String,
    pub record: EmissionRecord,
    pub nonce: [u8; NONCE_LEN],
    /// The actor's certificate, checked against the actor org's CA root.
    pub creator: Certificate,
    pub actor_signature: Signature,
}

impl Proposal {
    /// Builds and signs a proposal.
    pub fn signed(
        creator: Certificate,
        key: &SigningKey,
        channel: &str,
        chaincode: &str,
        record: EmissionRecord,
        nonce: [u8; NONCE_LEN],
    ) -> Self {
        let mut p = Self {
            actor_id: creator.subject.clone(),
            channel: channel.to_owned(),
            chaincode: chaincode.to_owned(),
            record,
            nonce,
            creator,
            actor_signature: Signature::empty(),
        };
        p.actor_signature = sign(key, &p.signing_bytes());
        p
    }

    /// Everything except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        enc.into_bytes()
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.put_str(&self.actor_id)
            .put_str(&self.channel)
            .put_str(&self.chaincode)
            .put(&self.record)
            .put_fixed(&self.nonce)
            .put(&self.creator);
    }

    /// Transaction id: digest of the signed portion.
    pub fn tx_id(&self) -> Digest {
        sha256(&self.signing_bytes())
    }
}

impl Canonical for Proposal {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.put(&self.actor_signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            actor_id: dec.string()?,
            channel: dec.string()?,
            chaincode: dec.string()?,
            record: dec.get()?,
            nonce: dec.take_array()?,
            creator: dec.get()?,
            actor_signature: dec.get()?,
        })
    }
}

/// A peer's signed statement that executing `tx_id` produced `result_digest`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub endorser: Certificate,
    pub result_digest: Digest,
    pub signature: Signature,
}

impl Endorsement {
    pub fn signed(endorser: Certificate, key: &SigningKey, tx_id: &Digest, result_digest: Digest) -> Self {
        let signature = sign(key, &Self::message(tx_id, &result_digest));
        Self {
            endorser,
            result_digest,
            signature,
        }
    }

    /// Bytes covered by the endorsement signature.
    pub fn message(tx_id: &Digest, result_digest: &Digest) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put_fixed(b"endorse").put(tx_id).put(result_digest);
        enc.into_bytes()
    }

    pub fn peer_id(&self) -> &str {
        &self.endorser.subject
    }

    pub fn org_id(&self) -> &str {
        &self.endorser.org_id
    }

    pub fn member(&self) -> PolicyMember {
        PolicyMember::new(self.org_id(), self.peer_id())
    }
}

impl Canonical for Endorsement {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.endorser)
            .put(&self.result_digest)
            .put(&self.signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            endorser: dec.get()?,
            result_digest: dec.get()?,
            signature: dec.get()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndorsedTransaction {
    pub proposal: Proposal,
    pub write_set: WriteSet,
    pub endorsements: Vec<Endorsement>,
}

impl EndorsedTransaction {
    pub fn tx_id(&self) -> Digest {
        self.proposal.tx_id()
    }
}

impl Canonical for EndorsedTransaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.proposal)
            .put(&self.write_set)
            .put_list(&self.endorsements);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            proposal: dec.get()?,
            write_set: dec.get()?,
            endorsements: dec.list()?,
        })
    }
}

/// Channel configuration carried by the genesis block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigTransaction {
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Transaction {
    Config(ConfigTransaction),
    Endorsed(EndorsedTransaction),
}

impl Transaction {
    pub fn id(&self) -> Digest {
        match self {
            Transaction::Config(c) => sha256_concat([&b"config"[..], &c.payload]),
            Transaction::Endorsed(t) => t.tx_id(),
        }
    }

    pub fn as_endorsed(&self) -> Option<&EndorsedTransaction> {
        match self {
            Transaction::Endorsed(t) => Some(t),
            Transaction::Config(_) => None,
        }
    }
}

impl From<EndorsedTransaction> for Transaction {
    fn from(t: EndorsedTransaction) -> Self {
        Transaction::Endorsed(t)
    }
}

impl Canonical for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Transaction::Config(c) => {
                enc.put_u8(0).put_bytes(&c.payload);
            }
            Transaction::Endorsed(t) => {
                enc.put_u8(1).put(t);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Transaction::Config(ConfigTransaction {
                payload: dec.bytes()?.to_vec(),
            })),
            1 => Ok(Transaction::Endorsed(dec.get()?)),
            tag => Err(DecodeError::InvalidTag {
                what: "transaction",
                tag,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::sample_record;
    use crate::identity::{create_ca, verify};

    #[test]
    fn proposal_signature_covers_signing_bytes() {
        let mut ca = create_ca("org1", Some(b"t"));
        let (cert, key) = ca.issue_certificate("gateway-1", "org1").unwrap();
        let p = Proposal::signed(cert.clone(), &key, "fibchannel", "aqms", sample_record(), [7; 16]);
        assert_eq!(p.actor_id, "gateway-1");
        assert!(verify(&cert, &p.signing_bytes(), &p.actor_signature));
        let back = Proposal::from_canonical_bytes(&p.to_canonical_bytes()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.tx_id(), p.tx_id());
    }

    #[test]
    fn nonce_changes_tx_id() {
        let mut ca = create_ca("org1", Some(b"t"));
        let (cert, key) = ca.issue_certificate("gateway-1", "org1").unwrap();
        let a = Proposal::signed(cert.clone(), &key, "fibchannel", "aqms", sample_record(), [1; 16]);
        let b = Proposal::signed(cert, &key, "fibchannel", "aqms", sample_record(), [2; 16]);
        assert_ne!(a.tx_id(), b.tx_id());
    }

    #[test]
    fn unknown_transaction_tag_is_rejected() {
        assert!(matches!(
            Transaction::from_canonical_bytes(&[7]),
            Err(DecodeError::InvalidTag { .. })
        ));
    }
}
