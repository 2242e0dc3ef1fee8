//! Frames exchanged over the simulated bus: a one-byte message tag followed
//! by the canonical encoding of the body.

use std::fmt;

use crate::chaincode::{EmissionRecord, InstantiationRecord, Violation, WriteSet};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::digest::Digest;
use crate::identity::TrustRoots;
use crate::ledger::{ByteEdit, TxValidity};
use crate::tx::{Endorsement, Proposal, Transaction};

/// Why an endorsing peer refused a proposal.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    /// Creator certificate or proposal signature failed to verify.
    Authentication(String),
    /// The chaincode found the record invalid.
    Validation(Vec<Violation>),
    NotInstantiated,
    NotInstalled,
    NotEndorser,
    /// The proposal bytes did not decode.
    Malformed(String),
    /// Any other chaincode failure.
    Chaincode(String),
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Authentication(e) => write!(f, "authentication failure: {e}"),
            Rejection::Validation(v) => {
                f.write_str("validation failure: ")?;
                for (i, violation) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{violation}")?;
                }
                Ok(())
            }
            Rejection::NotInstantiated => f.write_str("chaincode not instantiated"),
            Rejection::NotInstalled => f.write_str("chaincode not installed"),
            Rejection::NotEndorser => f.write_str("peer does not endorse"),
            Rejection::Malformed(e) => write!(f, "malformed proposal: {e}"),
            Rejection::Chaincode(e) => write!(f, "chaincode error: {e}"),
        }
    }
}

impl Canonical for Rejection {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Rejection::Authentication(e) => enc.put_u8(0).put_str(e),
            Rejection::Validation(v) => enc.put_u8(1).put_list(v),
            Rejection::NotInstantiated => enc.put_u8(2),
            Rejection::NotInstalled => enc.put_u8(3),
            Rejection::NotEndorser => enc.put_u8(4),
            Rejection::Malformed(e) => enc.put_u8(5).put_str(e),
            Rejection::Chaincode(e) => enc.put_u8(6).put_str(e),
        };
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Rejection::Authentication(dec.string()?),
            1 => Rejection::Validation(dec.list()?),
            2 => Rejection::NotInstantiated,
            3 => Rejection::NotInstalled,
            4 => Rejection::NotEndorser,
            5 => Rejection::Malformed(dec.string()?),
            6 => Rejection::Chaincode(dec.string()?),
            tag => return Err(DecodeError::InvalidTag { what: "rejection", tag }),
        })
    }
}

/// A successful endorsement together with the write set it signs.
#[derive(Debug, Clone, PartialEq)]
pub struct Endorsed {
    pub endorsement: Endorsement,
    pub write_set: WriteSet,
}

/// Result of a committed block as seen by one peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitEvent {
    pub peer: String,
    pub height: u64,
    pub block_hash: Digest,
    pub tx_status: Vec<(Digest, TxValidity)>,
}

impl CommitEvent {
    pub fn valid_count(&self) -> usize {
        self.tx_status.iter().filter(|(_, v)| v.is_valid()).count()
    }

    pub fn invalid_count(&self) -> usize {
        self.tx_status.len() - self.valid_count()
    }
}

/// A peer's view of its own replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerStatus {
    pub peer: String,
    pub chain_len: u64,
    pub tip_digest: Digest,
    pub valid: bool,
    /// Blocks received ahead of their predecessor and still waiting.
    pub buffered: u64,
}

pub(crate) const DELIVER_TAG: u8 = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Harness → orderer: start the channel from this genesis block.
    CreateChannel { genesis: Vec<u8> },
    CreateChannelAck { genesis_hash: Digest },
    /// Harness → peer.
    JoinChannel { genesis: Vec<u8>, roots: TrustRoots },
    JoinAck { result: Result<Digest, String> },
    Install { name: String, version: String, code_id: String },
    InstallAck { result: Result<bool, String> },
    /// Asks a policy peer whether the package is present.
    InstantiateCheck { name: String, version: String },
    InstantiateCheckAck { installed: bool },
    InstantiateCommit { record: InstantiationRecord },
    InstantiateCommitAck,
    /// Harness → actor: sign and submit this record.
    SubmitRecord { seq: u64, record: EmissionRecord },
    /// Actor → harness.
    Submitted { seq: u64, proposal: Proposal },
    SubmitFailed { seq: u64, reason: String },
    /// Actor → endorsing peer.
    Proposal { proposal: Proposal },
    ProposalResponse { tx_id: Digest, result: Result<Endorsed, Rejection> },
    /// Actor → harness: the transaction was handed to the orderer, or dropped.
    TxForwarded { tx_id: Digest },
    TxRejected { tx_id: Digest, reason: String },
    /// Anyone → orderer.
    SubmitTx { tx: Transaction },
    /// Orderer → itself.
    OrdererTimer { epoch: u64 },
    /// Orderer → peers.
    Deliver { block: Vec<u8> },
    Commit(CommitEvent),
    Query { key: String },
    QueryResponse { key: String, result: Result<Option<EmissionRecord>, String> },
    Status,
    StatusReport(PeerStatus),
    /// Test-only backdoor: XOR bytes of one stored block.
    Tamper { height: u64, edits: Vec<ByteEdit> },
    TamperAck { result: Result<(), String> },
    DumpLedger,
    LedgerDump { bytes: Vec<u8> },
    /// Drops the actor's signing key.
    RevokeKey,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::CreateChannel { .. } => 1,
            Message::CreateChannelAck { .. } => 2,
            Message::JoinChannel { .. } => 3,
            Message::JoinAck { .. } => 4,
            Message::Install { .. } => 5,
            Message::InstallAck { .. } => 6,
            Message::InstantiateCheck { .. } => 7,
            Message::InstantiateCheckAck { .. } => 8,
            Message::InstantiateCommit { .. } => 9,
            Message::InstantiateCommitAck => 10,
            Message::SubmitRecord { .. } => 11,
            Message::Submitted { .. } => 12,
            Message::SubmitFailed { .. } => 13,
            Message::Proposal { .. } => 14,
            Message::ProposalResponse { .. } => 15,
            Message::TxForwarded { .. } => 16,
            Message::TxRejected { .. } => 17,
            Message::SubmitTx { .. } => 18,
            Message::OrdererTimer { .. } => 19,
            Message::Deliver { .. } => DELIVER_TAG,
            Message::Commit(_) => 21,
            Message::Query { .. } => 22,
            Message::QueryResponse { .. } => 23,
            Message::Status => 24,
            Message::StatusReport(_) => 25,
            Message::Tamper { .. } => 26,
            Message::TamperAck { .. } => 27,
            Message::DumpLedger => 28,
            Message::LedgerDump { .. } => 29,
            Message::RevokeKey => 30,
        }
    }

    pub fn to_frame(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put_u8(self.tag());
        self.encode_body(&mut enc);
        enc.into_bytes()
    }

    pub fn from_frame(frame: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(frame);
        let msg = Self::decode_body(dec.u8()?, &mut dec)?;
        dec.finish()?;
        Ok(msg)
    }

    fn encode_body(&self, enc: &mut Encoder) {
        match self {
            Message::CreateChannel { genesis } => {
                enc.put_bytes(genesis);
            }
            Message::CreateChannelAck { genesis_hash } => {
                enc.put(genesis_hash);
            }
            Message::JoinChannel { genesis, roots } => {
                enc.put_bytes(genesis).put(roots);
            }
            Message::JoinAck { result } => put_result(enc, result, |e, d| {
                e.put(d);
            }),
            Message::Install {
                name,
                version,
                code_id,
            } => {
                enc.put_str(name).put_str(version).put_str(code_id);
            }
            Message::InstallAck { result } => put_result(enc, result, |e, b| {
                e.put_bool(*b);
            }),
            Message::InstantiateCheck { name, version } => {
                enc.put_str(name).put_str(version);
            }
            Message::InstantiateCheckAck { installed } => {
                enc.put_bool(*installed);
            }
            Message::InstantiateCommit { record } => {
                enc.put(record);
            }
            Message::InstantiateCommitAck | Message::Status | Message::DumpLedger | Message::RevokeKey => {}
            Message::SubmitRecord { seq, record } => {
                enc.put_u64(*seq).put(record);
            }
            Message::Submitted { seq, proposal } => {
                enc.put_u64(*seq).put(proposal);
            }
            Message::SubmitFailed { seq, reason } => {
                enc.put_u64(*seq).put_str(reason);
            }
            Message::Proposal { proposal } => {
                enc.put(proposal);
            }
            Message::ProposalResponse { tx_id, result } => {
                enc.put(tx_id);
                match result {
                    Ok(ok) => enc.put_u8(0).put(&ok.endorsement).put(&ok.write_set),
                    Err(r) => enc.put_u8(1).put(r),
                };
            }
            Message::TxForwarded { tx_id } => {
                enc.put(tx_id);
            }
            Message::TxRejected { tx_id, reason } => {
                enc.put(tx_id).put_str(reason);
            }
            Message::SubmitTx { tx } => {
                enc.put(tx);
            }
            Message::OrdererTimer { epoch } => {
                enc.put_u64(*epoch);
            }
            Message::Deliver { block } => {
                enc.put_bytes(block);
            }
            Message::Commit(ev) => {
                enc.put_str(&ev.peer)
                    .put_u64(ev.height)
                    .put(&ev.block_hash)
                    .put_len(ev.tx_status.len());
                for (id, v) in &ev.tx_status {
                    enc.put(id).put_u8(v.code());
                }
            }
            Message::Query { key } => {
                enc.put_str(key);
            }
            Message::QueryResponse { key, result } => {
                enc.put_str(key);
                put_result(enc, result, |e, r| {
                    e.put_option(r.as_ref());
                });
            }
            Message::StatusReport(s) => {
                enc.put_str(&s.peer)
                    .put_u64(s.chain_len)
                    .put(&s.tip_digest)
                    .put_bool(s.valid)
                    .put_u64(s.buffered);
            }
            Message::Tamper { height, edits } => {
                enc.put_u64(*height).put_len(edits.len());
                for e in edits {
                    enc.put_u64(e.offset as u64).put_u8(e.mask);
                }
            }
            Message::TamperAck { result } => put_result(enc, result, |_, ()| {}),
            Message::LedgerDump { bytes } => {
                enc.put_bytes(bytes);
            }
        }
    }

    fn decode_body(tag: u8, dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match tag {
            1 => Message::CreateChannel {
                genesis: dec.bytes()?.to_vec(),
            },
            2 => Message::CreateChannelAck { genesis_hash: dec.get()? },
            3 => Message::JoinChannel {
                genesis: dec.bytes()?.to_vec(),
                roots: dec.get()?,
            },
            4 => Message::JoinAck {
                result: take_result(dec, |d| d.get())?,
            },
            5 => Message::Install {
                name: dec.string()?,
                version: dec.string()?,
                code_id: dec.string()?,
            },
            6 => Message::InstallAck {
                result: take_result(dec, |d| d.bool())?,
            },
            7 => Message::InstantiateCheck {
                name: dec.string()?,
                version: dec.string()?,
            },
            8 => Message::InstantiateCheckAck { installed: dec.bool()? },
            9 => Message::InstantiateCommit { record: dec.get()? },
            10 => Message::InstantiateCommitAck,
            11 => Message::SubmitRecord {
                seq: dec.u64()?,
                record: dec.get()?,
            },
            12 => Message::Submitted {
                seq: dec.u64()?,
                proposal: dec.get()?,
            },
            13 => Message::SubmitFailed {
                seq: dec.u64()?,
                reason: dec.string()?,
            },
            14 => Message::Proposal { proposal: dec.get()? },
            15 => {
                let tx_id = dec.get()?;
                let result = match dec.u8()? {
                    0 => Ok(Endorsed {
                        endorsement: dec.get()?,
                        write_set: dec.get()?,
                    }),
                    1 => Err(dec.get()?),
                    tag => return Err(DecodeError::InvalidTag { what: "result", tag }),
                };
                Message::ProposalResponse { tx_id, result }
            }
            16 => Message::TxForwarded { tx_id: dec.get()? },
            17 => Message::TxRejected {
                tx_id: dec.get()?,
                reason: dec.string()?,
            },
            18 => Message::SubmitTx { tx: dec.get()? },
            19 => Message::OrdererTimer { epoch: dec.u64()? },
            20 => Message::Deliver {
                block: dec.bytes()?.to_vec(),
            },
            21 => {
                let peer = dec.string()?;
                let height = dec.u64()?;
                let block_hash = dec.get()?;
                let n = dec.length_prefix()?;
                let mut tx_status = Vec::with_capacity(n.min(dec.remaining()));
                for _ in 0..n {
                    let id = dec.get()?;
                    let code = dec.u8()?;
                    let v = TxValidity::from_code(code).ok_or(DecodeError::InvalidTag {
                        what: "tx validity",
                        tag: code,
                    })?;
                    tx_status.push((id, v));
                }
                Message::Commit(CommitEvent {
                    peer,
                    height,
                    block_hash,
                    tx_status,
                })
            }
            22 => Message::Query { key: dec.string()? },
            23 => Message::QueryResponse {
                key: dec.string()?,
                result: take_result(dec, |d| d.option())?,
            },
            24 => Message::Status,
            25 => Message::StatusReport(PeerStatus {
                peer: dec.string()?,
                chain_len: dec.u64()?,
                tip_digest: dec.get()?,
                valid: dec.bool()?,
                buffered: dec.u64()?,
            }),
            26 => {
                let height = dec.u64()?;
                let n = dec.length_prefix()?;
                let mut edits = Vec::with_capacity(n.min(dec.remaining()));
                for _ in 0..n {
                    let offset = usize::try_from(dec.u64()?)
                        .map_err(|_| DecodeError::Invalid("offset overflows usize".into()))?;
                    edits.push(ByteEdit { offset, mask: dec.u8()? });
                }
                Message::Tamper { height, edits }
            }
            27 => Message::TamperAck {
                result: take_result(dec, |_| Ok(()))?,
            },
            28 => Message::DumpLedger,
            29 => Message::LedgerDump {
                bytes: dec.bytes()?.to_vec(),
            },
            30 => Message::RevokeKey,
            tag => return Err(DecodeError::InvalidTag { what: "message", tag }),
        })
    }
}

fn put_result<T>(enc: &mut Encoder, result: &Result<T, String>, put_ok: impl FnOnce(&mut Encoder, &T)) {
    match result {
        Ok(v) => {
            enc.put_u8(0);
            put_ok(enc, v);
        }
        Err(e) => {
            enc.put_u8(1).put_str(e);
        }
    }
}

fn take_result<'a, T>(
    dec: &mut Decoder<'a>,
    take_ok: impl FnOnce(&mut Decoder<'a>) -> Result<T, DecodeError>,
) -> Result<Result<T, String>, DecodeError> {
    match dec.u8()? {
        0 => Ok(Ok(take_ok(dec)?)),
        1 => Ok(Err(dec.string()?)),
        tag => Err(DecodeError::InvalidTag { what: "result", tag }),
    }
}
