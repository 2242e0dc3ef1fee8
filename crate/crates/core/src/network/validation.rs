use std::collections::BTreeSet;

use crate::chaincode::InstantiationRecord;
use crate::identity::TrustRoots;
use crate::ledger::{TxValidator, TxValidity};
use crate::policy::{EndorsementPolicy, PolicyMember};
use crate::tx::{Endorsement, EndorsedTransaction};

/// Commit-time checks of an endorsed transaction against the channel's
/// instantiated chaincode and trust roots.
///
/// Checks run in order: target, creator, write-set digest, then policy
/// coverage counting only endorsements whose certificate and signature verify.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementValidator {
    pub channel: String,
    pub chaincode: String,
    pub policy: EndorsementPolicy,
    pub roots: TrustRoots,
}

impl EndorsementValidator {
    pub fn new(record: &InstantiationRecord, roots: TrustRoots) -> Self {
        Self {
            channel: record.channel.clone(),
            chaincode: record.chaincode.clone(),
            policy: record.policy.clone(),
            roots,
        }
    }

    /// Members whose endorsement on `tx` verifies.
    pub fn verified_members(&self, tx: &EndorsedTransaction) -> BTreeSet<PolicyMember> {
        let tx_id = tx.tx_id();
        tx.endorsements
            .iter()
            .filter(|e| {
                let msg = Endorsement::message(&tx_id, &e.result_digest);
                self.roots.verify_signed(&e.endorser, &msg, &e.signature).is_ok()
            })
            .map(Endorsement::member)
            .collect()
    }
}

impl TxValidator for EndorsementValidator {
    fn validate(&self, tx: &EndorsedTransaction) -> TxValidity {
        let p = &tx.proposal;
        if p.channel != self.channel || p.chaincode != self.chaincode {
            return TxValidity::WrongTarget;
        }
        if self
            .roots
            .verify_signed(&p.creator, &p.signing_bytes(), &p.actor_signature)
            .is_err()
            || p.actor_id != p.creator.subject
        {
            return TxValidity::BadCreator;
        }
        let digest = tx.write_set.digest();
        if tx.endorsements.iter().any(|e| e.result_digest != digest) {
            return TxValidity::DigestMismatch;
        }
        if self.policy.is_satisfied_by(&self.verified_members(tx)) {
            TxValidity::Valid
        } else {
            TxValidity::PolicyUnsatisfied
        }
    }
}

/// Rejects every endorsed transaction; used by peers that joined a channel
/// before any chaincode was instantiated on it.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoChaincode;

impl TxValidator for NoChaincode {
    fn validate(&self, _: &EndorsedTransaction) -> TxValidity {
        TxValidity::WrongTarget
    }
}
