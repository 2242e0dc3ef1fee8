use std::collections::BTreeMap;

use proptest::prelude::*;
use sha2::{Digest as _, Sha256};

use super::*;
use crate::chaincode::EmissionRecord;
use crate::config::NetworkConfig;
use crate::testing::{emission_tx, record_at};

const T0: u64 = 1_700_000_000_000;

fn genesis_ledger() -> Ledger {
    Ledger::from_genesis(&make_genesis(&NetworkConfig::fibchannel(), T0).unwrap()).unwrap()
}

fn next_block(ledger: &Ledger, txs: Vec<Transaction>) -> Block {
    Block::new(ledger.len(), ledger.tip_hash().unwrap(), T0 + ledger.len() * 1000, txs)
}

/// Genesis plus `blocks` blocks of `per_block` distinct emission writes.
fn build_chain(blocks: u64, per_block: u64) -> Ledger {
    let mut ledger = genesis_ledger();
    let mut n = 0u64;
    for _ in 0..blocks {
        let txs = (0..per_block)
            .map(|_| {
                n += 1;
                emission_tx(record_at("KTYM-01", T0 + n, n as f64), None, n as u8)
            })
            .collect();
        let b = next_block(&ledger, txs);
        ledger.append_block(&b, &AcceptAll).unwrap();
    }
    ledger
}

/// Independent re-derivation of block hashes straight from the bytes, using
/// only the documented layout.
fn oracle_header_hashes(ledger: &Ledger) -> Vec<[u8; 32]> {
    ledger
        .raw_blocks()
        .map(|b| Sha256::digest(&b[..HEADER_LEN]).into())
        .collect()
}

#[test]
fn append_extends_chain() {
    let mut ledger = genesis_ledger();
    let b = next_block(&ledger, vec![emission_tx(record_at("S", 1, 1.0), None, 1)]);
    let summary = ledger.append_block(&b, &AcceptAll).unwrap();
    assert_eq!(ledger.len(), 2);
    assert_eq!(summary.height, 1);
    assert_eq!(summary.valid_count(), 1);
    assert_eq!(ledger.tip_hash().unwrap(), b.hash());
}

#[test]
fn broken_link_is_rejected_and_ledger_unchanged() {
    let mut ledger = build_chain(1, 1);
    let before = ledger.clone();
    let mut b = next_block(&ledger, vec![emission_tx(record_at("S", 9, 1.0), None, 9)]);
    b.header.prev_hash = Digest::ZERO;
    assert!(matches!(
        ledger.append_block(&b, &AcceptAll),
        Err(LedgerError::PrevHashMismatch { .. })
    ));
    let mut wrong_height = next_block(&ledger, vec![emission_tx(record_at("S", 9, 1.0), None, 9)]);
    wrong_height.header.height = 5;
    assert!(matches!(
        ledger.append_block(&wrong_height, &AcceptAll),
        Err(LedgerError::HeightMismatch { expected: 2, got: 5 })
    ));
    assert_eq!(ledger, before);
}

#[test]
fn empty_block_and_bad_tx_root_are_rejected() {
    let mut ledger = genesis_ledger();
    let b = next_block(&ledger, vec![]);
    assert_eq!(ledger.append_block(&b, &AcceptAll), Err(LedgerError::EmptyBlock(1)));
    let mut b = next_block(&ledger, vec![emission_tx(record_at("S", 1, 1.0), None, 1)]);
    b.header.tx_root = Digest::ZERO;
    assert_eq!(
        ledger.append_block(&b, &AcceptAll),
        Err(LedgerError::TxRootMismatch { height: 1 })
    );
}

#[test]
fn genesis_must_be_well_formed() {
    let mut g = make_genesis(&NetworkConfig::fibchannel(), T0).unwrap();
    g.header.prev_hash = Digest::from_bytes([1; 32]);
    assert!(matches!(Ledger::from_genesis(&g), Err(LedgerError::BadGenesis(_))));
}

#[test]
fn three_writes_match_sequential_map() {
    let mut ledger = genesis_ledger();
    let records: Vec<EmissionRecord> = (0..3).map(|i| record_at("KTYM-01", T0 + i, i as f64)).collect();
    let txs = records
        .iter()
        .enumerate()
        .map(|(i, r)| emission_tx(r.clone(), None, i as u8))
        .collect();
    let b = next_block(&ledger, txs);
    ledger.append_block(&b, &AcceptAll).unwrap();

    let mut oracle = BTreeMap::new();
    for r in &records {
        oracle.insert(r.state_key(), r.to_canonical_bytes());
    }
    for (k, v) in &oracle {
        assert_eq!(ledger.query_state(k), Some(v.as_slice()));
    }
    assert_eq!(ledger.state().len(), oracle.len());
    assert_eq!(ledger.query_state("unknown"), None);
}

#[test]
fn later_write_wins_with_later_version() {
    let mut ledger = genesis_ledger();
    let first = record_at("site-17", 1_704_067_200_000, 1.0);
    let b1 = next_block(&ledger, vec![emission_tx(first.clone(), None, 1)]);
    ledger.append_block(&b1, &AcceptAll).unwrap();
    let mut second = first.clone();
    second.so2 = 2.0;
    let b2 = next_block(&ledger, vec![emission_tx(second.clone(), Some(Version::new(1, 0)), 2)]);
    ledger.append_block(&b2, &AcceptAll).unwrap();
    let key = first.state_key();
    assert_eq!(ledger.query_state(&key), Some(second.to_canonical_bytes().as_slice()));
    assert_eq!(ledger.state().version(&key), Some(Version::new(2, 0)));
}

#[test]
fn same_key_same_read_version_in_one_block_conflicts() {
    let mut ledger = genesis_ledger();
    let r = record_at("KTYM-01", 5, 1.0);
    let mut r2 = r.clone();
    r2.so2 = 3.0;
    let b = next_block(&ledger, vec![emission_tx(r.clone(), None, 1), emission_tx(r2, None, 2)]);
    let summary = ledger.append_block(&b, &AcceptAll).unwrap();
    let flags: Vec<_> = summary.tx_status.iter().map(|(_, v)| *v).collect();
    assert_eq!(flags, [TxValidity::Valid, TxValidity::MvccConflict]);
    assert_eq!(ledger.query_state(&r.state_key()), Some(r.to_canonical_bytes().as_slice()));
    assert_eq!(ledger.validity(1).unwrap(), &flags);
}

struct RejectAll;

impl TxValidator for RejectAll {
    fn validate(&self, _: &EndorsedTransaction) -> TxValidity {
        TxValidity::PolicyUnsatisfied
    }
}

#[test]
fn policy_failures_are_recorded_and_skipped() {
    let mut ledger = genesis_ledger();
    let b = next_block(&ledger, vec![emission_tx(record_at("S", 1, 1.0), None, 1)]);
    let summary = ledger.append_block(&b, &RejectAll).unwrap();
    assert_eq!(summary.invalid_count(), 1);
    assert!(ledger.state().is_empty());
    assert!(ledger.verify_chain(&RejectAll).valid);
    // Replaying under a different validator disagrees with the stored flags.
    let report = ledger.verify_chain(&AcceptAll);
    assert!(!report.valid);
    assert_eq!(report.mismatched_indices(), [1]);
}

/// Counts calls and rejects transactions whose so2 reading is odd.
#[derive(Default)]
struct Counting(std::cell::Cell<usize>);

impl TxValidator for Counting {
    fn validate(&self, tx: &EndorsedTransaction) -> TxValidity {
        self.0.set(self.0.get() + 1);
        if tx.proposal.record.so2 as u64 % 2 == 1 {
            TxValidity::PolicyUnsatisfied
        } else {
            TxValidity::Valid
        }
    }
}

#[test]
fn caching_validator_agrees_and_skips_repeats() {
    let inner = Counting::default();
    let mut ledger = genesis_ledger();
    for h in 0..3u64 {
        let txs = (0..4u64).map(|i| emission_tx(record_at("S", h * 10 + i, i as f64), None, (h * 4 + i) as u8)).collect();
        let b = next_block(&ledger, txs);
        ledger.append_block(&b, &inner).unwrap();
    }
    let calls_at_commit = inner.0.get();
    assert_eq!(calls_at_commit, 12);

    let cached = CachingValidator::new(&inner);
    for _ in 0..5 {
        assert_eq!(ledger.verify_chain(&cached), ledger.verify_chain(&inner));
    }
    assert_eq!(cached.len(), 12);
    assert_eq!(inner.0.get(), calls_at_commit + 12 + 5 * 12);

    // A transaction whose bytes change is validated afresh, not served stale.
    let mut block = ledger.block(2).unwrap();
    if let Transaction::Endorsed(tx) = &mut block.transactions[0] {
        tx.proposal.record.so2 = 1.0;
    }
    ledger.overwrite_block_bytes(2, block.to_canonical_bytes()).unwrap();
    let report = ledger.verify_chain(&cached);
    assert_eq!(cached.len(), 13);
    assert_eq!(report, ledger.verify_chain(&inner));
    assert!(report.blocks[2].mismatches.contains(&Mismatch::Validity));
}

#[test]
fn config_transaction_after_genesis_is_invalid() {
    let mut ledger = genesis_ledger();
    let cfg_tx = make_genesis(&NetworkConfig::fibchannel(), T0).unwrap().transactions[0].clone();
    let b = next_block(&ledger, vec![cfg_tx]);
    let s = ledger.append_block(&b, &AcceptAll).unwrap();
    assert_eq!(s.tx_status[0].1, TxValidity::BadPayload);
}

#[test]
fn fresh_chains_verify() {
    assert!(genesis_ledger().verify_chain(&AcceptAll).valid);
    let ledger = build_chain(3, 2);
    assert_eq!(ledger.len(), 4);
    let report = ledger.verify_chain(&AcceptAll);
    assert!(report.valid, "{report:?}");
    assert!(report.mismatched_indices().is_empty());
}

#[test]
fn chain_links_match_independent_hashes() {
    let ledger = build_chain(5, 2);
    let hashes = oracle_header_hashes(&ledger);
    for i in 1..ledger.len() {
        let b = ledger.block(i).unwrap();
        assert_eq!(b.header.prev_hash.as_bytes(), &hashes[i as usize - 1]);
    }
    assert_eq!(ledger.tip_digest().as_bytes(), hashes.last().unwrap());
}

/// Mutates the SO2 reading stored in block `height`'s first transaction.
fn bump_so2(ledger: &mut Ledger, height: u64) {
    let mut block = ledger.block(height).unwrap();
    let Transaction::Endorsed(tx) = &mut block.transactions[0] else {
        panic!("expected an endorsed transaction");
    };
    let mut rec = EmissionRecord::from_canonical_bytes(&tx.write_set.writes[0].value).unwrap();
    rec.so2 += 1.0;
    tx.write_set.writes[0].value = rec.to_canonical_bytes();
    // Header left as committed.
    ledger.overwrite_block_bytes(height, block.to_canonical_bytes()).unwrap();
}

#[test]
fn mutated_so2_is_reported_at_its_block() {
    let mut ledger = build_chain(3, 2);
    let pristine = ledger.clone();
    bump_so2(&mut ledger, 2);
    // Oracle: the only block whose bytes differ from the pristine copy.
    let changed: Vec<u64> = (0..ledger.len())
        .filter(|&i| ledger.raw_block(i) != pristine.raw_block(i))
        .collect();
    assert_eq!(changed, [2]);
    let report = ledger.verify_chain(&AcceptAll);
    assert!(!report.valid);
    assert_eq!(report.mismatched_indices(), changed);
    assert!(report.blocks[2].mismatches.contains(&Mismatch::TxRoot));
    assert!(!report.state_matches);
    assert_ne!(ledger.tip_digest(), pristine.tip_digest());
}

#[test]
fn tamper_bounds_and_identity_edit() {
    let mut ledger = build_chain(2, 1);
    assert!(matches!(ledger.tamper(9, &[]), Err(LedgerError::OutOfRange { .. })));
    assert!(matches!(
        ledger.tamper(1, &[ByteEdit { offset: 1 << 20, mask: 1 }]),
        Err(LedgerError::OffsetOutOfRange { .. })
    ));
    let before = ledger.tip_digest();
    ledger.tamper(1, &[]).unwrap();
    ledger.tamper(1, &[ByteEdit { offset: 3, mask: 0 }]).unwrap();
    assert!(ledger.verify_chain(&AcceptAll).valid);
    assert_eq!(ledger.tip_digest(), before);
}

#[test]
fn tip_timestamp_edit_is_detected() {
    let mut ledger = build_chain(2, 1);
    let tip = ledger.len() - 1;
    ledger.tamper(tip, &[ByteEdit { offset: HEADER_LEN - 1, mask: 1 }]).unwrap();
    let report = ledger.verify_chain(&AcceptAll);
    assert_eq!(report.mismatched_indices(), [tip]);
    assert_eq!(report.blocks[tip as usize].mismatches, [Mismatch::HeaderHash]);
}

#[test]
fn dump_round_trip_and_tampered_dump() {
    let ledger = build_chain(3, 2);
    let dump = ledger.to_dump();
    let loaded = Ledger::from_dump(&dump, &AcceptAll).unwrap();
    assert_eq!(loaded, ledger);
    assert!(loaded.verify_chain(&AcceptAll).valid);

    let mut bad = dump.clone();
    let last = bad.len() - 40;
    bad[last] ^= 0x40;
    let loaded = Ledger::from_dump(&bad, &AcceptAll).unwrap();
    assert!(!loaded.verify_chain(&AcceptAll).valid);

    assert!(matches!(Ledger::from_dump(&dump[..dump.len() - 1], &AcceptAll), Err(LedgerError::BadDump(_))));
    assert!(Ledger::from_dump(&[], &AcceptAll).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_single_byte_mutation_is_detected(
        block in 0u64..6,
        pos in any::<proptest::sample::Index>(),
        mask in 1u8..=255,
    ) {
        let mut ledger = build_chain(5, 2);
        let len = ledger.raw_block(block).unwrap().len();
        let offset = pos.index(len);
        ledger.tamper(block, &[ByteEdit { offset, mask }]).unwrap();
        let report = ledger.verify_chain(&AcceptAll);
        prop_assert!(!report.valid);
        prop_assert_eq!(report.first_mismatch(), Some(block));
    }

    #[test]
    fn replay_matches_naive_map(ops in proptest::collection::vec((0u8..6, 0u32..1000, 1usize..4), 1..12)) {
        // Each op is (site, reading, block size). Reads use the version the
        // oracle currently holds, so every transaction is conflict-free.
        let mut ledger = genesis_ledger();
        let mut oracle: BTreeMap<String, (Vec<u8>, Version)> = BTreeMap::new();
        let mut nonce = 0u8;
        for (site, reading, size) in ops {
            let height = ledger.len();
            let mut txs = Vec::new();
            let mut pending = oracle.clone();
            for i in 0..size {
                let rec = record_at(&format!("S{site}"), u64::from(reading) + i as u64, f64::from(reading));
                let key = rec.state_key();
                let read = pending.get(&key).map(|(_, v)| *v);
                let version = Version::new(height, i as u32);
                pending.insert(key, (rec.to_canonical_bytes(), version));
                nonce = nonce.wrapping_add(1);
                txs.push(emission_tx(rec, read, nonce));
            }
            let b = next_block(&ledger, txs);
            let s = ledger.append_block(&b, &AcceptAll).unwrap();
            prop_assert_eq!(s.invalid_count(), 0);
            oracle = pending;
        }
        let got: BTreeMap<String, (Vec<u8>, Version)> = ledger
            .state()
            .iter()
            .map(|(k, v)| (k.to_owned(), (v.value.clone(), v.version)))
            .collect();
        prop_assert_eq!(got, oracle);
        prop_assert!(ledger.verify_chain(&AcceptAll).valid);
    }
}
