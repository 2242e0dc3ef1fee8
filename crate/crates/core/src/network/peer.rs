use std::collections::BTreeMap;

use crate::chaincode::{
    builtin_contract, ChaincodeError, ChaincodePackage, ChaincodeRegistry, EmissionRecord, ExecutionContext,
    InstantiationRecord, LifecycleError,
};
use crate::codec::Canonical;
use crate::config::NetworkConfig;
use crate::digest::Digest;
use crate::identity::{Certificate, SigningKey, TrustRoots};
use crate::ledger::{Block, ByteEdit, Ledger, LedgerError, TxValidator};
use crate::tx::{ConfigTransaction, Endorsement, Proposal, Transaction};

use super::message::{CommitEvent, Endorsed, Message, PeerStatus, Rejection};
use super::runtime::Ctx;
use super::validation::{EndorsementValidator, NoChaincode};

/// A peer: always commits, and endorses when configured to.
#[derive(Debug)]
pub struct PeerNode {
    id: String,
    org_id: String,
    endorsing: bool,
    cert: Certificate,
    key: SigningKey,
    channel: Option<String>,
    ledger: Option<Ledger>,
    roots: TrustRoots,
    registry: ChaincodeRegistry,
    instantiation: Option<InstantiationRecord>,
    validator: Option<EndorsementValidator>,
    /// Blocks that arrived before their predecessor, by height.
    pending: BTreeMap<u64, Block>,
}

impl PeerNode {
    pub fn new(id: &str, org_id: &str, endorsing: bool, cert: Certificate, key: SigningKey) -> Self {
        Self {
            id: id.to_owned(),
            org_id: org_id.to_owned(),
            endorsing,
            cert,
            key,
            channel: None,
            ledger: None,
            roots: TrustRoots::new(),
            registry: ChaincodeRegistry::new(),
            instantiation: None,
            validator: None,
            pending: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn org_id(&self) -> &str {
        &self.org_id
    }

    pub fn is_endorsing(&self) -> bool {
        self.endorsing
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    pub fn channel(&self) -> Option<&str> {
        self.channel.as_deref()
    }

    pub fn ledger(&self) -> Option<&Ledger> {
        self.ledger.as_ref()
    }

    pub fn registry(&self) -> &ChaincodeRegistry {
        &self.registry
    }

    pub fn instantiation(&self) -> Option<&InstantiationRecord> {
        self.instantiation.as_ref()
    }

    fn commit_validator(&self) -> &dyn TxValidator {
        match &self.validator {
            Some(v) => v,
            None => &NoChaincode,
        }
    }

    /// Joins the channel described by `genesis`. Re-joining with the same
    /// genesis is a no-op.
    pub fn join(&mut self, genesis_bytes: &[u8], roots: TrustRoots) -> Result<Digest, String> {
        let genesis = Block::from_canonical_bytes(genesis_bytes).map_err(|e| format!("bad genesis: {e}"))?;
        let channel = match genesis.transactions.as_slice() {
            [Transaction::Config(ConfigTransaction { payload })] => {
                NetworkConfig::from_canonical_bytes(payload)
                    .map_err(|e| format!("bad genesis config: {e}"))?
                    .channel
            }
            _ => return Err("genesis carries no configuration".into()),
        };
        if let Some(ledger) = &self.ledger {
            return match ledger.raw_block(0) {
                Some(b) if b == genesis_bytes => Ok(genesis.hash()),
                _ => Err(format!("already joined channel {}", self.channel.as_deref().unwrap_or("?"))),
            };
        }
        let ledger = Ledger::from_genesis(&genesis).map_err(|e| e.to_string())?;
        self.ledger = Some(ledger);
        self.channel = Some(channel);
        self.roots = roots;
        Ok(genesis.hash())
    }

    pub fn install(&mut self, name: &str, version: &str, code_id: &str) -> Result<bool, LifecycleError> {
        if self.ledger.is_none() {
            return Err(LifecycleError::NotJoined(self.id.clone()));
        }
        let contract = builtin_contract(code_id).ok_or_else(|| LifecycleError::UnknownCode(code_id.to_owned()))?;
        self.registry.install(ChaincodePackage::new(name, version, contract))
    }

    pub fn instantiate(&mut self, record: InstantiationRecord) {
        self.validator = Some(EndorsementValidator::new(&record, self.roots.clone()));
        self.instantiation = Some(record);
    }

    fn active_package(&self, channel: &str, chaincode: &str) -> Result<&ChaincodePackage, Rejection> {
        let inst = self
            .instantiation
            .as_ref()
            .filter(|i| i.channel == channel && i.chaincode == chaincode)
            .ok_or(Rejection::NotInstantiated)?;
        self.registry
            .get(&inst.chaincode, &inst.version)
            .ok_or(Rejection::NotInstalled)
    }

    /// Authenticates the creator, then simulates the chaincode against the
    /// committed state without changing it.
    pub fn endorse(&self, proposal: &Proposal) -> Result<Endorsed, Rejection> {
        if !self.endorsing {
            return Err(Rejection::NotEndorser);
        }
        let ledger = self.ledger.as_ref().ok_or(Rejection::NotInstantiated)?;
        if proposal.actor_id != proposal.creator.subject {
            return Err(Rejection::Authentication(format!(
                "actor {} presented certificate for {}",
                proposal.actor_id, proposal.creator.subject
            )));
        }
        self.roots
            .verify_signed(&proposal.creator, &proposal.signing_bytes(), &proposal.actor_signature)
            .map_err(|e| Rejection::Authentication(e.to_string()))?;
        let package = self.active_package(&proposal.channel, &proposal.chaincode)?;
        let ctx = ExecutionContext {
            channel: &proposal.channel,
            state: ledger.state(),
        };
        let invocation = package
            .contract
            .invoke(&ctx, &proposal.record.to_canonical_bytes())
            .map_err(|e| match e {
                ChaincodeError::Validation(v) => Rejection::Validation(v),
                other => Rejection::Chaincode(other.to_string()),
            })?;
        let write_set = invocation.write_set;
        let endorsement = Endorsement::signed(self.cert.clone(), &self.key, &proposal.tx_id(), write_set.digest());
        Ok(Endorsed {
            endorsement,
            write_set,
        })
    }

    /// [`PeerNode::endorse`] over raw proposal bytes, as received off the wire.
    pub fn endorse_bytes(&self, bytes: &[u8]) -> Result<Endorsed, Rejection> {
        let proposal = Proposal::from_canonical_bytes(bytes).map_err(|e| Rejection::Malformed(e.to_string()))?;
        self.endorse(&proposal)
    }

    /// Commits `block` if it is next, buffering it otherwise. Returns one
    /// event per block committed, including buffered successors.
    pub fn receive_block(&mut self, block: Block) -> Result<Vec<CommitEvent>, LedgerError> {
        let Some(ledger) = &self.ledger else {
            return Ok(Vec::new());
        };
        let next = ledger.len();
        match block.header.height {
            h if h < next => return Ok(Vec::new()),
            h if h > next => {
                self.pending.insert(h, block);
                return Ok(Vec::new());
            }
            _ => {}
        }
        let mut events = Vec::new();
        let mut current = Some(block);
        while let Some(b) = current {
            let validator: &dyn TxValidator = match &self.validator {
                Some(v) => v,
                None => &NoChaincode,
            };
            let ledger = self.ledger.as_mut().expect("joined");
            let summary = match ledger.append_block(&b, validator) {
                Ok(s) => s,
                Err(e) if events.is_empty() => return Err(e),
                Err(_) => break,
            };
            events.push(CommitEvent {
                peer: self.id.clone(),
                height: summary.height,
                block_hash: summary.block_hash,
                tx_status: summary.tx_status,
            });
            let next = summary.height + 1;
            current = self.pending.remove(&next);
        }
        Ok(events)
    }

    pub fn query(&self, key: &str) -> Result<Option<EmissionRecord>, String> {
        let inst = self.instantiation.as_ref().ok_or_else(|| Rejection::NotInstantiated.to_string())?;
        let package = self
            .active_package(&inst.channel, &inst.chaincode)
            .map_err(|r| r.to_string())?;
        let ledger = self.ledger.as_ref().ok_or("not joined")?;
        let ctx = ExecutionContext {
            channel: &inst.channel,
            state: ledger.state(),
        };
        let bytes = package.contract.query(&ctx, key).map_err(|e| e.to_string())?;
        bytes
            .map(|b| EmissionRecord::from_canonical_bytes(&b).map_err(|e| format!("corrupt value at {key}: {e}")))
            .transpose()
    }

    pub fn status(&self) -> PeerStatus {
        let (chain_len, tip_digest, valid) = match &self.ledger {
            Some(l) => (l.len(), l.tip_digest(), l.verify_chain(self.commit_validator()).valid),
            None => (0, Digest::ZERO, false),
        };
        PeerStatus {
            peer: self.id.clone(),
            chain_len,
            tip_digest,
            valid,
            buffered: self.pending.len() as u64,
        }
    }

    /// Test-only backdoor over the stored block bytes.
    pub fn tamper(&mut self, height: u64, edits: &[ByteEdit]) -> Result<(), LedgerError> {
        match self.ledger.as_mut() {
            Some(l) => l.tamper(height, edits),
            None => Err(LedgerError::OutOfRange { height, len: 0 }),
        }
    }

    pub fn handle(&mut self, from: &str, msg: Message, ctx: &mut Ctx) {
        let reply = match msg {
            Message::JoinChannel { genesis, roots } => Message::JoinAck {
                result: self.join(&genesis, roots),
            },
            Message::Install {
                name,
                version,
                code_id,
            } => {
                ctx.charge(ctx.costs().install_ms);
                Message::InstallAck {
                    result: self.install(&name, &version, &code_id).map_err(|e| e.to_string()),
                }
            }
            Message::InstantiateCheck { name, version } => Message::InstantiateCheckAck {
                installed: self.registry.contains(&name, &version),
            },
            Message::InstantiateCommit { record } => {
                self.instantiate(record);
                Message::InstantiateCommitAck
            }
            Message::Proposal { proposal } => {
                ctx.charge(ctx.costs().endorse_ms);
                Message::ProposalResponse {
                    tx_id: proposal.tx_id(),
                    result: self.endorse(&proposal),
                }
            }
            Message::Deliver { block } => {
                let Ok(block) = Block::from_canonical_bytes(&block) else {
                    return;
                };
                ctx.charge(ctx.costs().commit_ms);
                if let Ok(events) = self.receive_block(block) {
                    for ev in events {
                        ctx.send(super::HARNESS, &Message::Commit(ev));
                    }
                }
                return;
            }
            Message::Query { key } => {
                ctx.charge(ctx.costs().query_ms);
                Message::QueryResponse {
                    result: self.query(&key),
                    key,
                }
            }
            Message::Status => Message::StatusReport(self.status()),
            Message::Tamper { height, edits } => Message::TamperAck {
                result: self.tamper(height, &edits).map_err(|e| e.to_string()),
            },
            Message::DumpLedger => Message::LedgerDump {
                bytes: self.ledger.as_ref().map(Ledger::to_dump).unwrap_or_default(),
            },
            _ => return,
        };
        ctx.send(from, &reply);
    }
}
