use std::fmt;

use super::{apply, compute_header_hash, evaluate_block, Block, Ledger, RawBlock, TxValidator, WorldState};
use crate::codec::Canonical;
use crate::digest::Digest;
use crate::tx::Transaction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mismatch {
    /// Block bytes do not parse.
    Undecodable(String),
    /// Header hash differs from the one recorded at commit.
    HeaderHash,
    /// Stored height differs from the block's position.
    Height { found: u64 },
    /// prev_hash differs from the recomputed hash of the previous header.
    PrevHash,
    /// tx_root differs from the digest of the stored transactions.
    TxRoot,
    /// Genesis is not a single configuration transaction.
    Genesis,
    /// Replayed transaction validity differs from the commit-time flags.
    Validity,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::Undecodable(e) => write!(f, "undecodable ({e})"),
            Mismatch::HeaderHash => f.write_str("header hash"),
            Mismatch::Height { found } => write!(f, "height field {found}"),
            Mismatch::PrevHash => f.write_str("prev_hash link"),
            Mismatch::TxRoot => f.write_str("tx_root"),
            Mismatch::Genesis => f.write_str("genesis shape"),
            Mismatch::Validity => f.write_str("transaction validity"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCheck {
    pub index: u64,
    pub mismatches: Vec<Mismatch>,
}

impl BlockCheck {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub blocks: Vec<BlockCheck>,
    /// Replaying all blocks from empty state reproduces the stored state.
    pub state_matches: bool,
    pub valid: bool,
}

impl VerificationReport {
    /// Indices of blocks with at least one mismatch, ascending.
    pub fn mismatched_indices(&self) -> Vec<u64> {
        self.blocks
            .iter()
            .filter(|b| !b.is_ok())
            .map(|b| b.index)
            .collect()
    }

    pub fn first_mismatch(&self) -> Option<u64> {
        self.blocks.iter().find(|b| !b.is_ok()).map(|b| b.index)
    }
}

impl Ledger {
    /// Per-block hash, height, linkage and tx_root checks over stored bytes.
    pub(super) fn structural_checks(&self) -> Vec<BlockCheck> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut prev: Option<Digest> = None;
        for (i, stored) in self.blocks.iter().enumerate() {
            let index = i as u64;
            let mut mismatches = Vec::new();
            match RawBlock::parse(&stored.bytes) {
                Err(e) => {
                    mismatches.push(Mismatch::Undecodable(e.to_string()));
                    prev = None;
                }
                Ok(raw) => {
                    let hash = compute_header_hash(&raw.header);
                    if hash != stored.header_hash {
                        mismatches.push(Mismatch::HeaderHash);
                    }
                    if raw.header.height != index {
                        mismatches.push(Mismatch::Height {
                            found: raw.header.height,
                        });
                    }
                    let expected_prev = if i == 0 { Some(Digest::ZERO) } else { prev };
                    if expected_prev != Some(raw.header.prev_hash) {
                        mismatches.push(Mismatch::PrevHash);
                    }
                    if raw.recompute_tx_root() != raw.header.tx_root {
                        mismatches.push(Mismatch::TxRoot);
                    }
                    for tx in &raw.transactions {
                        if let Err(e) = Transaction::from_canonical_bytes(tx) {
                            mismatches.push(Mismatch::Undecodable(e.to_string()));
                            break;
                        }
                    }
                    if i == 0
                        && (raw.transactions.len() != 1
                            || !matches!(
                                Transaction::from_canonical_bytes(raw.transactions[0]),
                                Ok(Transaction::Config(_))
                            ))
                    {
                        mismatches.push(Mismatch::Genesis);
                    }
                    prev = Some(hash);
                }
            }
            out.push(BlockCheck { index, mismatches });
        }
        out
    }

    /// Recomputes every header hash, tx_root and link, then replays all
    /// transactions from empty state. Corruption is reported, never raised.
    pub fn verify_chain(&self, validator: &dyn TxValidator) -> VerificationReport {
        let mut blocks = self.structural_checks();
        let mut replayed = WorldState::new();
        for (check, stored) in blocks.iter_mut().zip(&self.blocks) {
            let Ok(block) = Block::from_canonical_bytes(&stored.bytes) else {
                continue;
            };
            let eval = evaluate_block(&block, &replayed, validator);
            if eval.validity != stored.validity {
                check.mismatches.push(Mismatch::Validity);
            }
            apply(&mut replayed, eval.writes);
        }
        let state_matches = replayed == self.state;
        let valid = state_matches && blocks.iter().all(BlockCheck::is_ok);
        VerificationReport {
            blocks,
            state_matches,
            valid,
        }
    }
}
