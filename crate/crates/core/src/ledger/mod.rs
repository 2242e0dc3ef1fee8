//! Hash-chained block store plus the versioned world state derived from it.
//!
//! Blocks are kept as the canonical bytes they were committed with, together
//! with the header hash observed at commit time and the per-transaction
//! validity flags. Everything else (decoded blocks, state replay, tip
//! digests) is derived from those bytes, so a byte-level mutation of a
//! stored block is visible to [`Ledger::verify_chain`].

mod block;
mod state;
mod verify;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder};
use crate::digest::{sha256, sha256_concat, Digest};
use crate::tx::{EndorsedTransaction, Transaction};

pub use block::{compute_header_hash, compute_tx_root, make_genesis, Block, BlockHeader, RawBlock, HEADER_LEN};
pub use state::{StateReader, Version, VersionedValue, WorldState};
pub use verify::{BlockCheck, Mismatch, VerificationReport};

/// Commit-time outcome of a single transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxValidity {
    Valid,
    /// Channel or chaincode differ from the instantiated contract.
    WrongTarget,
    /// Creator certificate or proposal signature does not verify.
    BadCreator,
    /// Endorsements disagree with each other or with the write set.
    DigestMismatch,
    /// Verified endorsements do not cover the endorsement policy.
    PolicyUnsatisfied,
    /// A key read during simulation changed before commit.
    MvccConflict,
    /// Transaction kind not allowed at this height.
    BadPayload,
}

impl TxValidity {
    pub fn is_valid(self) -> bool {
        self == TxValidity::Valid
    }

    pub fn code(self) -> u8 {
        match self {
            TxValidity::Valid => 0,
            TxValidity::WrongTarget => 1,
            TxValidity::BadCreator => 2,
            TxValidity::DigestMismatch => 3,
            TxValidity::PolicyUnsatisfied => 4,
            TxValidity::MvccConflict => 5,
            TxValidity::BadPayload => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => TxValidity::Valid,
            1 => TxValidity::WrongTarget,
            2 => TxValidity::BadCreator,
            3 => TxValidity::DigestMismatch,
            4 => TxValidity::PolicyUnsatisfied,
            5 => TxValidity::MvccConflict,
            6 => TxValidity::BadPayload,
            _ => return None,
        })
    }
}

/// Commit-time check of an endorsed transaction (signatures and policy).
/// Read-version conflicts are checked by the ledger itself.
pub trait TxValidator {
    fn validate(&self, tx: &EndorsedTransaction) -> TxValidity;
}

/// Remembers the verdicts of another validator, keyed by a hash of each
/// transaction's canonical bytes. Repeated verification of an unchanged
/// chain then skips signature checks on transactions already seen, while any
/// transaction whose bytes differ is validated afresh.
pub struct CachingValidator<'a> {
    inner: &'a dyn TxValidator,
    verdicts: RefCell<HashMap<Digest, TxValidity>>,
}

impl<'a> CachingValidator<'a> {
    pub fn new(inner: &'a dyn TxValidator) -> Self {
        Self {
            inner,
            verdicts: RefCell::default(),
        }
    }

    /// Number of distinct transactions validated so far.
    pub fn len(&self) -> usize {
        self.verdicts.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TxValidator for CachingValidator<'_> {
    fn validate(&self, tx: &EndorsedTransaction) -> TxValidity {
        let key = sha256(&tx.to_canonical_bytes());
        if let Some(v) = self.verdicts.borrow().get(&key) {
            return *v;
        }
        let v = self.inner.validate(tx);
        self.verdicts.borrow_mut().insert(key, v);
        v
    }
}

/// Treats every endorsed transaction as well-endorsed.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl TxValidator for AcceptAll {
    fn validate(&self, _: &EndorsedTransaction) -> TxValidity {
        TxValidity::Valid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("block height {got} does not follow chain length {expected}")]
    HeightMismatch { expected: u64, got: u64 },
    #[error("block {height} prev_hash {got} does not match tip hash {expected}")]
    PrevHashMismatch {
        height: u64,
        expected: Digest,
        got: Digest,
    },
    #[error("block {height} tx_root does not match its transactions")]
    TxRootMismatch { height: u64 },
    #[error("block {0} has no transactions")]
    EmptyBlock(u64),
    #[error("invalid genesis block: {0}")]
    BadGenesis(String),
    #[error("stored tip block is corrupt: {0}")]
    CorruptTip(DecodeError),
    #[error("height {height} out of range for chain of length {len}")]
    OutOfRange { height: u64, len: u64 },
    #[error("byte offset {offset} out of range for block {height} of {len} bytes")]
    OffsetOutOfRange { height: u64, offset: usize, len: usize },
    #[error("malformed ledger dump: {0}")]
    BadDump(DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StoredBlock {
    bytes: Vec<u8>,
    header_hash: Digest,
    validity: Vec<TxValidity>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitSummary {
    pub height: u64,
    pub block_hash: Digest,
    pub tx_status: Vec<(Digest, TxValidity)>,
}

impl CommitSummary {
    pub fn valid_count(&self) -> usize {
        self.tx_status.iter().filter(|(_, v)| v.is_valid()).count()
    }

    pub fn invalid_count(&self) -> usize {
        self.tx_status.len() - self.valid_count()
    }
}

/// XOR `mask` into the byte at `offset` of a stored block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteEdit {
    pub offset: usize,
    pub mask: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<StoredBlock>,
    state: WorldState,
}

/// Validity flags plus the writes of valid transactions, in order.
struct Evaluation {
    validity: Vec<TxValidity>,
    writes: Vec<(String, Vec<u8>, Version)>,
}

/// Validates every transaction of `block` against `state`, applying earlier
/// valid writes of the same block before checking later reads.
fn evaluate_block(block: &Block, state: &WorldState, validator: &dyn TxValidator) -> Evaluation {
    let height = block.header.height;
    let mut overlay: BTreeMap<&str, Version> = BTreeMap::new();
    let mut validity = Vec::with_capacity(block.transactions.len());
    let mut writes = Vec::new();
    for (index, tx) in block.transactions.iter().enumerate() {
        let verdict = match tx {
            Transaction::Config(_) if height == 0 => TxValidity::Valid,
            Transaction::Config(_) => TxValidity::BadPayload,
            Transaction::Endorsed(_) if height == 0 => TxValidity::BadPayload,
            Transaction::Endorsed(etx) => {
                let v = validator.validate(etx);
                if !v.is_valid() {
                    v
                } else {
                    let current = |key: &str| overlay.get(key).copied().or_else(|| state.version(key));
                    let stale = etx.write_set.reads.iter().any(|r| current(&r.key) != r.version);
                    if stale {
                        TxValidity::MvccConflict
                    } else {
                        let version = Version::new(height, index as u32);
                        for w in &etx.write_set.writes {
                            overlay.insert(&w.key, version);
                            writes.push((w.key.clone(), w.value.clone(), version));
                        }
                        TxValidity::Valid
                    }
                }
            }
        };
        validity.push(verdict);
    }
    Evaluation { validity, writes }
}

fn apply(state: &mut WorldState, writes: Vec<(String, Vec<u8>, Version)>) {
    for (key, value, version) in writes {
        state.put(key, value, version);
    }
}

impl Ledger {
    /// Starts a chain from its genesis block.
    pub fn from_genesis(genesis: &Block) -> Result<Self, LedgerError> {
        let h = &genesis.header;
        if h.height != 0 {
            return Err(LedgerError::BadGenesis(format!("height {}", h.height)));
        }
        if !h.prev_hash.is_zero() {
            return Err(LedgerError::BadGenesis("prev_hash is not zero".into()));
        }
        if !matches!(genesis.transactions.as_slice(), [Transaction::Config(_)]) {
            return Err(LedgerError::BadGenesis(
                "expected a single configuration transaction".into(),
            ));
        }
        if genesis.recompute_tx_root() != h.tx_root {
            return Err(LedgerError::TxRootMismatch { height: 0 });
        }
        Ok(Self {
            blocks: vec![StoredBlock {
                bytes: genesis.to_canonical_bytes(),
                header_hash: genesis.hash(),
                validity: vec![TxValidity::Valid],
            }],
            state: WorldState::new(),
        })
    }

    /// Number of blocks, genesis included.
    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn query_state(&self, key: &str) -> Option<&[u8]> {
        self.state.get(key)
    }

    pub fn raw_block(&self, height: u64) -> Option<&[u8]> {
        self.blocks.get(height as usize).map(|b| b.bytes.as_slice())
    }

    pub fn raw_blocks(&self) -> impl Iterator<Item = &[u8]> {
        self.blocks.iter().map(|b| b.bytes.as_slice())
    }

    pub fn block(&self, height: u64) -> Result<Block, LedgerError> {
        let raw = self.raw_block(height).ok_or(LedgerError::OutOfRange {
            height,
            len: self.len(),
        })?;
        Block::from_canonical_bytes(raw).map_err(LedgerError::CorruptTip)
    }

    pub fn validity(&self, height: u64) -> Option<&[TxValidity]> {
        self.blocks.get(height as usize).map(|b| b.validity.as_slice())
    }

    /// Header of the stored tip, parsed from its bytes.
    pub fn tip_header(&self) -> Result<BlockHeader, LedgerError> {
        let tip = self.blocks.last().expect("ledger always holds genesis");
        let mut dec = Decoder::new(&tip.bytes);
        BlockHeader::decode(&mut dec).map_err(LedgerError::CorruptTip)
    }

    /// Hash of the stored tip header.
    pub fn tip_hash(&self) -> Result<Digest, LedgerError> {
        self.tip_header().map(|h| compute_header_hash(&h))
    }

    /// Replica fingerprint for cross-peer comparison. For an intact chain this
    /// is the tip header hash; a chain failing its structural self-check
    /// reports a digest over all of its stored bytes instead, so it never
    /// agrees with an intact replica.
    pub fn tip_digest(&self) -> Digest {
        if self.structural_checks().iter().all(BlockCheck::is_ok) {
            if let Ok(h) = self.tip_hash() {
                return h;
            }
        }
        sha256_concat(
            std::iter::once(&b"corrupt-chain"[..]).chain(self.blocks.iter().map(|b| b.bytes.as_slice())),
        )
    }

    /// Appends the next block, validating each transaction and applying the
    /// writes of valid ones. The ledger is unchanged on error.
    pub fn append_block(&mut self, block: &Block, validator: &dyn TxValidator) -> Result<CommitSummary, LedgerError> {
        let expected_height = self.len();
        let h = &block.header;
        if h.height != expected_height {
            return Err(LedgerError::HeightMismatch {
                expected: expected_height,
                got: h.height,
            });
        }
        let tip = self.tip_hash()?;
        if h.prev_hash != tip {
            return Err(LedgerError::PrevHashMismatch {
                height: h.height,
                expected: tip,
                got: h.prev_hash,
            });
        }
        if block.transactions.is_empty() {
            return Err(LedgerError::EmptyBlock(h.height));
        }
        if block.recompute_tx_root() != h.tx_root {
            return Err(LedgerError::TxRootMismatch { height: h.height });
        }

        let eval = evaluate_block(block, &self.state, validator);
        apply(&mut self.state, eval.writes);
        let tx_status = block
            .transactions
            .iter()
            .map(Transaction::id)
            .zip(eval.validity.iter().copied())
            .collect();
        let block_hash = block.hash();
        self.blocks.push(StoredBlock {
            bytes: block.to_canonical_bytes(),
            header_hash: block_hash,
            validity: eval.validity,
        });
        Ok(CommitSummary {
            height: h.height,
            block_hash,
            tx_status,
        })
    }

    /// Fault-injection backdoor: XORs bytes of one stored block in place.
    /// Neither the commit-time hash nor the world state is touched.
    pub fn tamper(&mut self, height: u64, edits: &[ByteEdit]) -> Result<(), LedgerError> {
        let len = self.len();
        let block = self
            .blocks
            .get_mut(height as usize)
            .ok_or(LedgerError::OutOfRange { height, len })?;
        if let Some(bad) = edits.iter().find(|e| e.offset >= block.bytes.len()) {
            return Err(LedgerError::OffsetOutOfRange {
                height,
                offset: bad.offset,
                len: block.bytes.len(),
            });
        }
        for e in edits {
            block.bytes[e.offset] ^= e.mask;
        }
        Ok(())
    }

    /// Fault-injection backdoor: replaces one stored block's bytes wholesale.
    pub fn overwrite_block_bytes(&mut self, height: u64, bytes: Vec<u8>) -> Result<(), LedgerError> {
        let len = self.len();
        let block = self
            .blocks
            .get_mut(height as usize)
            .ok_or(LedgerError::OutOfRange { height, len })?;
        block.bytes = bytes;
        Ok(())
    }

    /// Dump layout, per block: `u32 len ‖ block bytes ‖ commit-time header hash (32)`.
    pub fn to_dump(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for b in &self.blocks {
            crate::codec::write_length_prefixed(&mut out, &b.bytes);
            out.extend_from_slice(b.header_hash.as_bytes());
        }
        out
    }

    /// Loads a dump without rejecting corrupt blocks, so that
    /// [`Ledger::verify_chain`] can report them. State is rebuilt by replaying
    /// every block that still decodes.
    pub fn from_dump(bytes: &[u8], validator: &dyn TxValidator) -> Result<Self, LedgerError> {
        let mut dec = Decoder::new(bytes);
        let mut blocks = Vec::new();
        while dec.remaining() > 0 {
            let raw = dec.bytes().map_err(LedgerError::BadDump)?.to_vec();
            let header_hash = dec.get::<Digest>().map_err(LedgerError::BadDump)?;
            blocks.push(StoredBlock {
                bytes: raw,
                header_hash,
                validity: Vec::new(),
            });
        }
        if blocks.is_empty() {
            return Err(LedgerError::BadGenesis("dump holds no blocks".into()));
        }
        let mut state = WorldState::new();
        for b in &mut blocks {
            if let Ok(block) = Block::from_canonical_bytes(&b.bytes) {
                let eval = evaluate_block(&block, &state, validator);
                apply(&mut state, eval.writes);
                b.validity = eval.validity;
            }
        }
        Ok(Self { blocks, state })
    }
}

#[cfg(test)]
mod tests;
