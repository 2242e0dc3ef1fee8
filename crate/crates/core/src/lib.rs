//! Permissioned emission-record ledger: canonical encoding, identities,
//! chaincode, the hash-chained ledger and a simulated peer network.

pub mod chaincode;
pub mod codec;
pub mod config;
pub mod digest;
pub mod identity;
pub mod ingestion;
pub mod ledger;
pub mod network;
pub mod policy;
pub mod tx;

#[cfg(test)]
pub(crate) mod testing;
