//! Fixtures shared by unit tests.

use crate::chaincode::{sample_record, EmissionRecord, KeyRead, KeyWrite, WriteSet};
use crate::codec::Canonical;
use crate::identity::{create_ca, Certificate, SigningKey};
use crate::ledger::Version;
use crate::tx::{EndorsedTransaction, Proposal, Transaction};

pub(crate) fn actor() -> (Certificate, SigningKey) {
    create_ca("org1", Some(b"unit")).issue_certificate("gateway-1", "org1").unwrap()
}

pub(crate) fn record_at(site: &str, timestamp: u64, so2: f64) -> EmissionRecord {
    let mut r = sample_record();
    r.monitoring_location = site.to_owned();
    r.timestamp = timestamp;
    r.so2 = so2;
    r
}

/// An emission transaction with no endorsements; pair with `AcceptAll`.
pub(crate) fn emission_tx(record: EmissionRecord, read: Option<Version>, nonce: u8) -> Transaction {
    let (cert, key) = actor();
    let key_name = record.state_key();
    let write_set = WriteSet {
        reads: vec![KeyRead {
            key: key_name.clone(),
            version: read,
        }],
        writes: vec![KeyWrite {
            key: key_name,
            value: record.to_canonical_bytes(),
        }],
    };
    let proposal = Proposal::signed(cert, &key, "fibchannel", "aqms", record, [nonce; 16]);
    Transaction::Endorsed(EndorsedTransaction {
        proposal,
        write_set,
        endorsements: vec![],
    })
}
