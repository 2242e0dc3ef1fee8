use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::config::{ConfigError, NetworkConfig};
use crate::digest::{sha256, sha256_concat, Digest};
use crate::tx::{ConfigTransaction, Transaction};

/// Serialized header size: `height(8) ‖ prev_hash(32) ‖ tx_root(32) ‖ timestamp(8)`.
pub const HEADER_LEN: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    /// UTC milliseconds, assigned by the orderer when the block is cut.
    pub timestamp: u64,
}

impl Canonical for BlockHeader {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.height)
            .put(&self.prev_hash)
            .put(&self.tx_root)
            .put_u64(self.timestamp);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: dec.u64()?,
            prev_hash: dec.get()?,
            tx_root: dec.get()?,
            timestamp: dec.u64()?,
        })
    }
}

pub fn compute_header_hash(header: &BlockHeader) -> Digest {
    sha256(&header.to_canonical_bytes())
}

/// Flat hash list: SHA-256 over the concatenated per-transaction digests.
pub fn compute_tx_root<'a>(tx_bytes: impl IntoIterator<Item = &'a [u8]>) -> Digest {
    let leaves: Vec<Digest> = tx_bytes.into_iter().map(sha256).collect();
    sha256_concat(leaves.iter().map(|d| &d.as_bytes()[..]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    /// Assembles a block and derives its `tx_root`.
    pub fn new(height: u64, prev_hash: Digest, timestamp: u64, transactions: Vec<Transaction>) -> Self {
        let encoded: Vec<Vec<u8>> = transactions.iter().map(Canonical::to_canonical_bytes).collect();
        let tx_root = compute_tx_root(encoded.iter().map(Vec::as_slice));
        Self {
            header: BlockHeader {
                height,
                prev_hash,
                tx_root,
                timestamp,
            },
            transactions,
        }
    }

    pub fn hash(&self) -> Digest {
        compute_header_hash(&self.header)
    }

    pub fn recompute_tx_root(&self) -> Digest {
        let encoded: Vec<Vec<u8>> = self.transactions.iter().map(Canonical::to_canonical_bytes).collect();
        compute_tx_root(encoded.iter().map(Vec::as_slice))
    }
}

// Layout: header ‖ u32 count ‖ (u32 len ‖ transaction bytes)*
impl Canonical for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.header).put_len(self.transactions.len());
        for tx in &self.transactions {
            enc.put_bytes(&tx.to_canonical_bytes());
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let header = dec.get()?;
        let count = dec.length_prefix()?;
        let mut transactions = Vec::with_capacity(count.min(dec.remaining()));
        for _ in 0..count {
            transactions.push(Transaction::from_canonical_bytes(dec.bytes()?)?);
        }
        Ok(Self {
            header,
            transactions,
        })
    }
}

/// A block split into its header and raw transaction slices, without decoding
/// the transactions. Used to recompute `tx_root` over the bytes as stored.
#[derive(Debug)]
pub struct RawBlock<'a> {
    pub header: BlockHeader,
    pub transactions: Vec<&'a [u8]>,
}

impl<'a> RawBlock<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let header = dec.get()?;
        let count = dec.length_prefix()?;
        let mut transactions = Vec::with_capacity(count.min(dec.remaining()));
        for _ in 0..count {
            transactions.push(dec.bytes()?);
        }
        dec.finish()?;
        Ok(Self {
            header,
            transactions,
        })
    }

    pub fn recompute_tx_root(&self) -> Digest {
        compute_tx_root(self.transactions.iter().copied())
    }
}

/// Builds the height-0 block carrying the channel configuration.
pub fn make_genesis(config: &NetworkConfig, timestamp: u64) -> Result<Block, ConfigError> {
    config.validate()?;
    let tx = Transaction::Config(ConfigTransaction {
        payload: config.to_canonical_bytes(),
    });
    Ok(Block::new(0, Digest::ZERO, timestamp, vec![tx]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_serialization_is_80_bytes_in_field_order() {
        let h = BlockHeader {
            height: 1,
            prev_hash: Digest::ZERO,
            tx_root: Digest::from_bytes([0x11; 32]),
            timestamp: 1_700_000_000_000,
        };
        let b = h.to_canonical_bytes();
        assert_eq!(b.len(), HEADER_LEN);
        assert_eq!(&b[..8], &1u64.to_be_bytes());
        assert_eq!(&b[8..40], &[0u8; 32]);
        assert_eq!(&b[40..72], &[0x11u8; 32]);
        assert_eq!(&b[72..], &1_700_000_000_000u64.to_be_bytes());
    }

    #[test]
    fn header_hash_golden_vector() {
        // Reference value computed with an independent SHA-256 implementation
        // over the 80-byte big-endian header layout.
        let h = BlockHeader {
            height: 1,
            prev_hash: Digest::ZERO,
            tx_root: Digest::from_bytes([0x11; 32]),
            timestamp: 1_700_000_000_000,
        };
        assert_eq!(
            compute_header_hash(&h).to_hex(),
            "e3f360e9b4db92154427bc31bd95d9b884d5bdb13009463ebb4d56207361234a"
        );
        assert_eq!(compute_header_hash(&h), compute_header_hash(&h));
    }

    #[test]
    fn genesis_for_bundled_topology() {
        let cfg = NetworkConfig::fibchannel();
        let g = make_genesis(&cfg, 1_700_000_000_000).unwrap();
        assert_eq!(g.header.height, 0);
        assert!(g.header.prev_hash.is_zero());
        assert!(!g.hash().is_zero());
        assert_eq!(g.transactions.len(), 1);
        match &g.transactions[0] {
            Transaction::Config(c) => {
                assert_eq!(NetworkConfig::from_canonical_bytes(&c.payload).unwrap(), cfg)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn genesis_is_deterministic() {
        let cfg = NetworkConfig::fibchannel();
        let a = make_genesis(&cfg, 42).unwrap().to_canonical_bytes();
        let b = make_genesis(&cfg, 42).unwrap().to_canonical_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn genesis_rejects_invalid_config() {
        let mut cfg = NetworkConfig::fibchannel();
        cfg.orgs.clear();
        assert_eq!(make_genesis(&cfg, 0), Err(ConfigError::NoOrgs));
    }

    #[test]
    fn raw_and_decoded_tx_roots_agree() {
        let g = make_genesis(&NetworkConfig::fibchannel(), 7).unwrap();
        let bytes = g.to_canonical_bytes();
        let raw = RawBlock::parse(&bytes).unwrap();
        assert_eq!(raw.recompute_tx_root(), g.header.tx_root);
        assert_eq!(g.recompute_tx_root(), g.header.tx_root);
        assert_eq!(Block::from_canonical_bytes(&bytes).unwrap(), g);
    }
}
