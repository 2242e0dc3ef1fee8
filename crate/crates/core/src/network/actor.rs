use std::collections::{BTreeMap, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::chaincode::{EmissionRecord, InstantiationRecord};
use crate::digest::Digest;
use crate::identity::{Certificate, SigningKey};
use crate::policy::{EndorsementPolicy, PolicyMember};
use crate::tx::{EndorsedTransaction, Proposal, NONCE_LEN};

use super::message::{Endorsed, Message, Rejection};
use super::runtime::{Ctx, HARNESS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("endorsement policy unsatisfied; missing {}", fmt_members(.missing))]
    PolicyUnsatisfied { missing: Vec<PolicyMember> },
    #[error("endorsement from {peer} signs result {found}, expected {expected}")]
    DigestMismatch {
        peer: String,
        expected: Digest,
        found: Digest,
    },
}

fn fmt_members(m: &[PolicyMember]) -> String {
    m.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Builds a transaction from endorsement responses. Every response must sign
/// the digest of the same write set, and together they must cover `policy`.
pub fn assemble_transaction(
    proposal: Proposal,
    responses: Vec<Endorsed>,
    policy: &EndorsementPolicy,
) -> Result<EndorsedTransaction, AssembleError> {
    let Some(first) = responses.first() else {
        return Err(AssembleError::PolicyUnsatisfied {
            missing: policy.required().to_vec(),
        });
    };
    let write_set = first.write_set.clone();
    let expected = write_set.digest();
    for r in &responses {
        for found in [r.endorsement.result_digest, r.write_set.digest()] {
            if found != expected {
                return Err(AssembleError::DigestMismatch {
                    peer: r.endorsement.peer_id().to_owned(),
                    expected,
                    found,
                });
            }
        }
    }
    let members: Vec<PolicyMember> = responses.iter().map(|r| r.endorsement.member()).collect();
    let missing = policy.missing(&members);
    if !missing.is_empty() {
        return Err(AssembleError::PolicyUnsatisfied { missing });
    }
    Ok(EndorsedTransaction {
        proposal,
        write_set,
        endorsements: responses.into_iter().map(|r| r.endorsement).collect(),
    })
}

#[derive(Debug)]
struct InFlight {
    proposal: Proposal,
    responses: BTreeMap<String, Result<Endorsed, Rejection>>,
    outcome: Option<Result<EndorsedTransaction, String>>,
}

/// A client that signs proposals, gathers endorsements and hands assembled
/// transactions to the orderer strictly in submission order.
#[derive(Debug)]
pub struct ActorNode {
    id: String,
    cert: Certificate,
    key: Option<SigningKey>,
    orderer: String,
    instantiation: Option<InstantiationRecord>,
    rng: ChaCha20Rng,
    queue: VecDeque<InFlight>,
    forwarded: Vec<Digest>,
}

impl ActorNode {
    pub fn new(cert: Certificate, key: SigningKey, orderer: &str, nonce_seed: [u8; 32]) -> Self {
        Self {
            id: cert.subject.clone(),
            cert,
            key: Some(key),
            orderer: orderer.to_owned(),
            instantiation: None,
            rng: ChaCha20Rng::from_seed(nonce_seed),
            queue: VecDeque::new(),
            forwarded: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    /// Transaction ids handed to the orderer, in order.
    pub fn forwarded(&self) -> &[Digest] {
        &self.forwarded
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Signs a proposal for `record` on the instantiated chaincode.
    pub fn propose(&mut self, record: EmissionRecord) -> Result<Proposal, String> {
        let key = self.key.as_ref().ok_or("signing key revoked")?;
        let inst = self.instantiation.as_ref().ok_or("chaincode not instantiated")?;
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        Ok(Proposal::signed(
            self.cert.clone(),
            key,
            &inst.channel,
            &inst.chaincode,
            record,
            nonce,
        ))
    }

    fn on_response(&mut self, from: &str, tx_id: Digest, result: Result<Endorsed, Rejection>) {
        let Some(policy) = self.instantiation.as_ref().map(|i| &i.policy) else {
            return;
        };
        let Some(entry) = self.queue.iter_mut().find(|f| f.proposal.tx_id() == tx_id) else {
            return;
        };
        if entry.outcome.is_some() || !policy.required().iter().any(|m| m.peer_id == from) {
            return;
        }
        entry.responses.insert(from.to_owned(), result);
        if entry.responses.len() < policy.required().len() {
            return;
        }
        let mut endorsed = Vec::new();
        let mut rejections = Vec::new();
        for (peer, r) in std::mem::take(&mut entry.responses) {
            match r {
                Ok(e) => endorsed.push(e),
                Err(rej) => rejections.push(format!("{peer}: {rej}")),
            }
        }
        entry.outcome = Some(if rejections.is_empty() {
            assemble_transaction(entry.proposal.clone(), endorsed, policy).map_err(|e| e.to_string())
        } else {
            Err(rejections.join("; "))
        });
    }

    /// Releases finished transactions from the head of the queue.
    fn flush(&mut self, ctx: &mut Ctx) {
        while self.queue.front().is_some_and(|f| f.outcome.is_some()) {
            let done = self.queue.pop_front().expect("front exists");
            let tx_id = done.proposal.tx_id();
            match done.outcome.expect("checked above") {
                Ok(tx) => {
                    ctx.send(&self.orderer, &Message::SubmitTx { tx: tx.into() });
                    self.forwarded.push(tx_id);
                    ctx.send(HARNESS, &Message::TxForwarded { tx_id });
                }
                Err(reason) => ctx.send(HARNESS, &Message::TxRejected { tx_id, reason }),
            }
        }
    }

    pub fn handle(&mut self, from: &str, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::InstantiateCommit { record } => {
                self.instantiation = Some(record);
                ctx.send(from, &Message::InstantiateCommitAck);
            }
            Message::SubmitRecord { seq, record } => match self.propose(record) {
                Ok(proposal) => {
                    let policy = &self.instantiation.as_ref().expect("checked by propose").policy;
                    for member in policy.required() {
                        ctx.send(
                            &member.peer_id,
                            &Message::Proposal {
                                proposal: proposal.clone(),
                            },
                        );
                    }
                    ctx.send(
                        from,
                        &Message::Submitted {
                            seq,
                            proposal: proposal.clone(),
                        },
                    );
                    self.queue.push_back(InFlight {
                        proposal,
                        responses: BTreeMap::new(),
                        outcome: None,
                    });
                }
                Err(reason) => ctx.send(from, &Message::SubmitFailed { seq, reason }),
            },
            Message::ProposalResponse { tx_id, result } => {
                self.on_response(from, tx_id, result);
                self.flush(ctx);
            }
            Message::RevokeKey => self.key = None,
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::{sample_record, KeyWrite, WriteSet};
    use crate::identity::create_ca;
    use crate::tx::Endorsement;

    struct Setup {
        proposal: Proposal,
        responses: Vec<Endorsed>,
        policy: EndorsementPolicy,
    }

    fn setup() -> Setup {
        let mut ca1 = create_ca("org1", Some(b"a"));
        let mut ca2 = create_ca("org2", Some(b"a"));
        let (ac, ak) = ca1.issue_certificate("gateway-1", "org1").unwrap();
        let proposal = Proposal::signed(ac, &ak, "fibchannel", "aqms", sample_record(), [0; 16]);
        let ws = WriteSet {
            reads: vec![],
            writes: vec![KeyWrite {
                key: "k".into(),
                value: vec![1],
            }],
        };
        let mut responses = Vec::new();
        for (ca, org, peer) in [(&mut ca1, "org1", "p1"), (&mut ca2, "org2", "p2")] {
            let (c, k) = ca.issue_certificate(peer, org).unwrap();
            responses.push(Endorsed {
                endorsement: Endorsement::signed(c, &k, &proposal.tx_id(), ws.digest()),
                write_set: ws.clone(),
            });
        }
        let policy =
            EndorsementPolicy::new(vec![PolicyMember::new("org1", "p1"), PolicyMember::new("org2", "p2")]).unwrap();
        Setup {
            proposal,
            responses,
            policy,
        }
    }

    /// Brute-force reading of the conjunctive policy: satisfied iff every
    /// required member appears among the endorsers.
    fn oracle(present: &[PolicyMember], required: &[PolicyMember]) -> Vec<PolicyMember> {
        required.iter().filter(|m| !present.contains(m)).cloned().collect()
    }

    #[test]
    fn subset_lattice_matches_oracle() {
        let s = setup();
        for mask in 0u8..4 {
            let subset: Vec<Endorsed> = s
                .responses
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, r)| r.clone())
                .collect();
            let present: Vec<PolicyMember> = subset.iter().map(|r| r.endorsement.member()).collect();
            let expected_missing = oracle(&present, s.policy.required());
            let got = assemble_transaction(s.proposal.clone(), subset, &s.policy);
            if expected_missing.is_empty() {
                assert_eq!(got.unwrap().endorsements.len(), 2);
            } else {
                assert_eq!(
                    got.unwrap_err(),
                    AssembleError::PolicyUnsatisfied {
                        missing: expected_missing
                    }
                );
            }
        }
    }

    #[test]
    fn org1_only_names_missing_org2_peer() {
        let s = setup();
        let err = assemble_transaction(s.proposal, s.responses[..1].to_vec(), &s.policy).unwrap_err();
        assert_eq!(
            err,
            AssembleError::PolicyUnsatisfied {
                missing: vec![PolicyMember::new("org2", "p2")]
            }
        );
        assert!(err.to_string().contains("p2@org2"));
    }

    #[test]
    fn divergent_results_are_a_digest_mismatch() {
        let s = setup();
        let mut responses = s.responses.clone();
        responses[1].write_set.writes[0].value = vec![2];
        let err = assemble_transaction(s.proposal, responses, &s.policy).unwrap_err();
        assert!(matches!(err, AssembleError::DigestMismatch { ref peer, .. } if peer == "p2"));
    }

    #[test]
    fn revoked_key_cannot_sign() {
        let mut ca = create_ca("org1", Some(b"a"));
        let (c, k) = ca.issue_certificate("gateway-1", "org1").unwrap();
        let mut a = ActorNode::new(c, k, "orderer", [0; 32]);
        a.instantiation = Some(InstantiationRecord {
            channel: "fibchannel".into(),
            chaincode: "aqms".into(),
            version: "1".into(),
            policy: setup().policy,
        });
        assert!(a.propose(sample_record()).is_ok());
        let mut ctx = Ctx::new(0, 0, Default::default());
        a.handle(HARNESS, Message::RevokeKey, &mut ctx);
        assert_eq!(a.propose(sample_record()).unwrap_err(), "signing key revoked");
    }

    #[test]
    fn nonces_differ_between_proposals() {
        let mut ca = create_ca("org1", Some(b"a"));
        let (c, k) = ca.issue_certificate("gateway-1", "org1").unwrap();
        let mut a = ActorNode::new(c, k, "orderer", [7; 32]);
        assert_eq!(a.propose(sample_record()).unwrap_err(), "chaincode not instantiated");
        a.instantiation = Some(InstantiationRecord {
            channel: "fibchannel".into(),
            chaincode: "aqms".into(),
            version: "1".into(),
            policy: setup().policy,
        });
        let p1 = a.propose(sample_record()).unwrap();
        let p2 = a.propose(sample_record()).unwrap();
        assert_ne!(p1.tx_id(), p2.tx_id());
    }
}
