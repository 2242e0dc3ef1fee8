use crate::codec::Canonical;
use crate::config::BlockCut;
use crate::digest::Digest;
use crate::identity::Certificate;
use crate::ledger::Block;
use crate::tx::Transaction;

use super::message::Message;
use super::runtime::Ctx;

/// Sequences transactions into blocks. A block is cut once `max_tx`
/// transactions are pending, or `max_wait_ms` after the first of them
/// arrived, whichever comes first.
#[derive(Debug)]
pub struct OrdererNode {
    id: String,
    cert: Certificate,
    cut: BlockCut,
    peers: Vec<String>,
    next_height: u64,
    prev_hash: Option<Digest>,
    pending: Vec<Transaction>,
    /// Bumped on every cut so that an older timer is recognized as stale.
    epoch: u64,
    block_sizes: Vec<usize>,
    /// Transactions that arrived before the channel existed.
    dropped: u64,
}

impl OrdererNode {
    pub fn new(id: &str, cert: Certificate, cut: BlockCut, peers: Vec<String>) -> Self {
        Self {
            id: id.to_owned(),
            cert,
            cut,
            peers,
            next_height: 0,
            prev_hash: None,
            pending: Vec::new(),
            epoch: 0,
            block_sizes: Vec::new(),
            dropped: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    /// Transaction counts of every block cut so far, genesis excluded.
    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn create_channel(&mut self, genesis: &[u8]) -> Result<Digest, String> {
        let block = Block::from_canonical_bytes(genesis).map_err(|e| e.to_string())?;
        if block.header.height != 0 {
            return Err("genesis must have height 0".into());
        }
        let hash = block.hash();
        if self.prev_hash.is_none() {
            self.prev_hash = Some(hash);
            self.next_height = 1;
        }
        Ok(hash)
    }

    fn cut_block(&mut self, ctx: &mut Ctx) {
        let take = self.pending.len().min(self.cut.max_tx as usize);
        if take == 0 {
            return;
        }
        let txs: Vec<Transaction> = self.pending.drain(..take).collect();
        let prev = self.prev_hash.expect("channel created");
        let block = Block::new(self.next_height, prev, ctx.timestamp_ms(), txs);
        self.block_sizes.push(take);
        self.prev_hash = Some(block.hash());
        self.next_height += 1;
        self.epoch += 1;
        let frame = Message::Deliver {
            block: block.to_canonical_bytes(),
        };
        for peer in &self.peers {
            ctx.send(peer, &frame);
        }
        if !self.pending.is_empty() {
            ctx.schedule(self.cut.max_wait_ms, &Message::OrdererTimer { epoch: self.epoch });
        }
    }

    pub fn handle(&mut self, from: &str, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::CreateChannel { genesis } => {
                if let Ok(genesis_hash) = self.create_channel(&genesis) {
                    ctx.send(from, &Message::CreateChannelAck { genesis_hash });
                }
            }
            Message::SubmitTx { tx } => {
                if self.prev_hash.is_none() {
                    self.dropped += 1;
                    return;
                }
                self.pending.push(tx);
                if self.pending.len() >= self.cut.max_tx as usize {
                    self.cut_block(ctx);
                } else if self.pending.len() == 1 {
                    ctx.schedule(self.cut.max_wait_ms, &Message::OrdererTimer { epoch: self.epoch });
                }
            }
            Message::OrdererTimer { epoch } if epoch == self.epoch => self.cut_block(ctx),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::sample_record;
    use crate::config::NetworkConfig;
    use crate::ledger::make_genesis;
    use crate::network::runtime::{Outgoing, ProcessingCosts};
    use crate::testing::{actor, emission_tx};

    /// Drives an orderer by hand: timers fire only when `fire_timers` is called.
    struct Harness {
        orderer: OrdererNode,
        now: u64,
        timers: Vec<(u64, Vec<u8>)>,
        delivered: Vec<Block>,
    }

    impl Harness {
        fn new(max_tx: u32, max_wait_ms: u64) -> Self {
            let orderer = OrdererNode::new("orderer", actor().0, BlockCut { max_tx, max_wait_ms }, vec!["p".into()]);
            let genesis = make_genesis(&NetworkConfig::fibchannel(), 0).unwrap();
            let mut h = Self {
                orderer,
                now: 0,
                timers: vec![],
                delivered: vec![],
            };
            h.send(Message::CreateChannel {
                genesis: genesis.to_canonical_bytes(),
            });
            h
        }

        fn send(&mut self, msg: Message) {
            let mut ctx = Ctx::new(self.now, 0, ProcessingCosts::default());
            self.orderer.handle("h", msg, &mut ctx);
            for out in ctx.out {
                match out {
                    Outgoing::Send { frame, .. } => {
                        if let Ok(Message::Deliver { block }) = Message::from_frame(&frame) {
                            self.delivered.push(Block::from_canonical_bytes(&block).unwrap());
                        }
                    }
                    Outgoing::Timer { delay_ms, frame } => self.timers.push((self.now + delay_ms, frame)),
                }
            }
        }

        fn submit(&mut self, n: u8) {
            for i in 0..n {
                self.send(Message::SubmitTx {
                    tx: emission_tx(sample_record(), None, i),
                });
            }
        }

        fn fire_timers(&mut self) {
            while !self.timers.is_empty() {
                let (at, frame) = self.timers.remove(0);
                self.now = self.now.max(at);
                self.send(Message::from_frame(&frame).unwrap());
            }
        }

        fn sizes(&self) -> Vec<usize> {
            self.delivered.iter().map(|b| b.transactions.len()).collect()
        }
    }

    #[test]
    fn five_transactions_max_two_cut_as_2_2_1() {
        let mut h = Harness::new(2, 100);
        h.submit(5);
        assert_eq!(h.sizes(), [2, 2]);
        h.fire_timers();
        assert_eq!(h.sizes(), [2, 2, 1]);
        assert_eq!(h.orderer.block_sizes(), [2, 2, 1]);
        // The final block was cut by its timer, at max_wait after arrival.
        assert_eq!(h.now, 100);
    }

    #[test]
    fn single_transaction_waits_for_timer() {
        let mut h = Harness::new(10, 100);
        h.submit(1);
        assert!(h.delivered.is_empty());
        h.fire_timers();
        assert_eq!(h.sizes(), [1]);
        assert_eq!(h.delivered[0].header.timestamp, 100);
    }

    #[test]
    fn blocks_are_chained_from_genesis() {
        let mut h = Harness::new(1, 100);
        h.submit(3);
        let genesis = make_genesis(&NetworkConfig::fibchannel(), 0).unwrap();
        let mut prev = genesis.hash();
        for (i, b) in h.delivered.iter().enumerate() {
            assert_eq!(b.header.height, i as u64 + 1);
            assert_eq!(b.header.prev_hash, prev);
            prev = b.hash();
        }
        // Stale timers do not produce empty blocks.
        h.fire_timers();
        assert_eq!(h.sizes(), [1, 1, 1]);
    }

    #[test]
    fn transactions_before_channel_creation_are_dropped() {
        let mut o = OrdererNode::new("o", actor().0, BlockCut::default(), vec![]);
        let mut ctx = Ctx::new(0, 0, ProcessingCosts::default());
        o.handle(
            "h",
            Message::SubmitTx {
                tx: emission_tx(sample_record(), None, 0),
            },
            &mut ctx,
        );
        assert_eq!((o.pending(), o.dropped()), (0, 1));
    }
}
