//! Message delivery between node state machines.
//!
//! Nodes never share state; they only exchange frames. [`SimRuntime`] runs
//! every node on the calling thread from a seeded event queue, so a run is a
//! pure function of its inputs. [`ThreadedRuntime`](super::ThreadedRuntime)
//! gives each node its own OS thread instead.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::actor::ActorNode;
use super::message::{Message, DELIVER_TAG};
use super::orderer::OrdererNode;
use super::peer::PeerNode;
use super::threaded::ThreadedRuntime;

/// Address of the driver outside the network.
pub const HARNESS: &str = "harness";

/// Wall-clock origin (UTC ms) used for timestamps under virtual time.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

/// Per-link delivery delay: `base_ms` plus a seeded draw from `0..=jitter_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkLatency {
    pub base_ms: u64,
    pub jitter_ms: u64,
}

impl Default for LinkLatency {
    fn default() -> Self {
        Self {
            base_ms: 1,
            jitter_ms: 1,
        }
    }
}

/// Fixed processing costs charged to the virtual clock. Ignored when running
/// against real time, where the work itself takes time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessingCosts {
    pub config_check_ms: u64,
    pub cert_issue_ms: u64,
    pub install_ms: u64,
    pub endorse_ms: u64,
    pub commit_ms: u64,
    pub query_ms: u64,
}

impl Default for ProcessingCosts {
    fn default() -> Self {
        Self {
            config_check_ms: 1,
            cert_issue_ms: 1,
            install_ms: 2,
            endorse_ms: 1,
            commit_ms: 1,
            query_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeMode {
    /// Time advances only through latencies and charged costs.
    #[default]
    Virtual,
    /// Events are paced against the real clock.
    Wall,
}

pub(crate) enum Outgoing {
    Send { to: String, frame: Vec<u8> },
    Timer { delay_ms: u64, frame: Vec<u8> },
}

/// What a node may do while handling one message.
pub struct Ctx {
    now_ms: u64,
    epoch_ms: u64,
    charged_ms: u64,
    costs: ProcessingCosts,
    pub(crate) out: Vec<Outgoing>,
}

impl Ctx {
    pub(crate) fn new(now_ms: u64, epoch_ms: u64, costs: ProcessingCosts) -> Self {
        Self {
            now_ms,
            epoch_ms,
            charged_ms: 0,
            costs,
            out: Vec::new(),
        }
    }

    pub fn send(&mut self, to: &str, msg: &Message) {
        self.out.push(Outgoing::Send {
            to: to.to_owned(),
            frame: msg.to_frame(),
        });
    }

    /// Delivers `msg` back to the current node after `delay_ms`.
    pub fn schedule(&mut self, delay_ms: u64, msg: &Message) {
        self.out.push(Outgoing::Timer {
            delay_ms,
            frame: msg.to_frame(),
        });
    }

    /// Accounts local work; outgoing messages leave after the charged time.
    pub fn charge(&mut self, ms: u64) {
        self.charged_ms += ms;
    }

    pub fn costs(&self) -> ProcessingCosts {
        self.costs
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    /// UTC milliseconds for block timestamps.
    pub fn timestamp_ms(&self) -> u64 {
        self.epoch_ms + self.now_ms + self.charged_ms
    }

    pub(crate) fn charged_ms(&self) -> u64 {
        self.charged_ms
    }
}

#[derive(Debug)]
pub enum Node {
    Peer(PeerNode),
    Orderer(OrdererNode),
    Actor(ActorNode),
}

impl Node {
    pub fn id(&self) -> &str {
        match self {
            Node::Peer(p) => p.id(),
            Node::Orderer(o) => o.id(),
            Node::Actor(a) => a.id(),
        }
    }

    pub fn handle(&mut self, from: &str, frame: &[u8], ctx: &mut Ctx) {
        // Undecodable frames carry no usable reply address, so they are dropped.
        let Ok(msg) = Message::from_frame(frame) else {
            return;
        };
        match self {
            Node::Peer(p) => p.handle(from, msg, ctx),
            Node::Orderer(o) => o.handle(from, msg, ctx),
            Node::Actor(a) => a.handle(from, msg, ctx),
        }
    }

    pub fn as_peer(&self) -> Option<&PeerNode> {
        match self {
            Node::Peer(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_peer_mut(&mut self) -> Option<&mut PeerNode> {
        match self {
            Node::Peer(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_orderer(&self) -> Option<&OrdererNode> {
        match self {
            Node::Orderer(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_actor(&self) -> Option<&ActorNode> {
        match self {
            Node::Actor(a) => Some(a),
            _ => None,
        }
    }
}

/// A message that reached the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbound {
    pub at_ms: u64,
    pub from: String,
    pub message: Message,
}

/// One frame handed to a node (or the harness).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub at_ms: u64,
    pub from: String,
    pub to: String,
    pub tag: u8,
}

struct Event {
    from: String,
    to: String,
    frame: Vec<u8>,
}

/// Single-threaded discrete-event runtime.
pub struct SimRuntime {
    nodes: BTreeMap<String, Node>,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: HashMap<u64, Event>,
    next_seq: u64,
    now_ms: u64,
    rng: ChaCha8Rng,
    latency: LinkLatency,
    costs: ProcessingCosts,
    /// Latest scheduled arrival per directed link; keeps links FIFO.
    link_tail: HashMap<(String, String), u64>,
    reorder_deliveries: bool,
    mode: TimeMode,
    started: Instant,
    epoch_ms: u64,
    inbox: Vec<Inbound>,
    deliveries: Vec<Delivery>,
}

#[derive(Debug, Clone, Copy)]
pub struct SimSettings {
    pub seed: u64,
    pub latency: LinkLatency,
    pub costs: ProcessingCosts,
    pub mode: TimeMode,
    /// Let block deliveries overtake each other on a link.
    pub reorder_deliveries: bool,
    /// Virtual time at which the runtime starts.
    pub start_ms: u64,
}

impl SimRuntime {
    pub fn new(nodes: Vec<Node>, settings: SimSettings) -> Self {
        let epoch_ms = match settings.mode {
            TimeMode::Virtual => SIM_EPOCH_MS,
            TimeMode::Wall => unix_now_ms(),
        };
        Self {
            nodes: nodes.into_iter().map(|n| (n.id().to_owned(), n)).collect(),
            queue: BinaryHeap::new(),
            events: HashMap::new(),
            next_seq: 0,
            now_ms: settings.start_ms,
            rng: ChaCha8Rng::seed_from_u64(settings.seed),
            latency: settings.latency,
            costs: settings.costs,
            link_tail: HashMap::new(),
            reorder_deliveries: settings.reorder_deliveries,
            mode: settings.mode,
            started: Instant::now() - Duration::from_millis(settings.start_ms),
            epoch_ms,
            inbox: Vec::new(),
            deliveries: Vec::new(),
        }
    }

    pub fn now_ms(&self) -> u64 {
        match self.mode {
            TimeMode::Virtual => self.now_ms,
            TimeMode::Wall => self.started.elapsed().as_millis() as u64,
        }
    }

    pub fn epoch_ms(&self) -> u64 {
        self.epoch_ms
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.get_mut(id)
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn send(&mut self, to: &str, msg: &Message) {
        let now = self.now_ms();
        self.enqueue_link(HARNESS, to, msg.to_frame(), now);
    }

    fn push(&mut self, at: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.insert(seq, event);
        self.queue.push(Reverse((at, seq)));
    }

    fn enqueue_link(&mut self, from: &str, to: &str, frame: Vec<u8>, depart_ms: u64) {
        let jitter = if self.latency.jitter_ms == 0 {
            0
        } else {
            self.rng.gen_range(0..=self.latency.jitter_ms)
        };
        let mut at = depart_ms + self.latency.base_ms + jitter;
        let overtaking = self.reorder_deliveries && frame.first() == Some(&DELIVER_TAG);
        if !overtaking {
            let tail = self.link_tail.entry((from.to_owned(), to.to_owned())).or_insert(0);
            at = at.max(*tail);
            *tail = at;
        }
        self.push(
            at,
            Event {
                from: from.to_owned(),
                to: to.to_owned(),
                frame,
            },
        );
    }

    /// Processes events until none remain; returns what reached the harness.
    pub fn run_until_quiet(&mut self) -> Vec<Inbound> {
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            let event = self.events.remove(&seq).expect("queued event exists");
            match self.mode {
                TimeMode::Virtual => self.now_ms = self.now_ms.max(at),
                TimeMode::Wall => {
                    let now = self.now_ms();
                    if at > now {
                        std::thread::sleep(Duration::from_millis(at - now));
                    }
                }
            }
            let now = self.now_ms();
            self.deliveries.push(Delivery {
                at_ms: now,
                from: event.from.clone(),
                to: event.to.clone(),
                tag: event.frame.first().copied().unwrap_or(0),
            });
            if event.to == HARNESS {
                if let Ok(message) = Message::from_frame(&event.frame) {
                    self.inbox.push(Inbound {
                        at_ms: now,
                        from: event.from,
                        message,
                    });
                }
                continue;
            }
            let Some(node) = self.nodes.get_mut(&event.to) else {
                continue;
            };
            let mut ctx = Ctx::new(now, self.epoch_ms, self.costs);
            node.handle(&event.from, &event.frame, &mut ctx);
            let charged = match self.mode {
                TimeMode::Virtual => ctx.charged_ms(),
                TimeMode::Wall => 0,
            };
            let depart = now + charged;
            if self.mode == TimeMode::Virtual {
                // The node's work is visible to the clock even if it sends nothing.
                self.now_ms = self.now_ms.max(depart);
            }
            for out in ctx.out {
                match out {
                    Outgoing::Send { to, frame } => self.enqueue_link(&event.to, &to, frame, depart),
                    Outgoing::Timer { delay_ms, frame } => {
                        let me = event.to.clone();
                        self.push(
                            depart + delay_ms,
                            Event {
                                from: me.clone(),
                                to: me,
                                frame,
                            },
                        );
                    }
                }
            }
        }
        std::mem::take(&mut self.inbox)
    }

    /// Advances the virtual clock by local harness work.
    pub fn advance(&mut self, ms: u64) {
        if self.mode == TimeMode::Virtual {
            self.now_ms += ms;
        }
    }

    pub fn into_nodes(self) -> BTreeMap<String, Node> {
        self.nodes
    }
}

pub(crate) fn unix_now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Either runtime, behind one interface. There is one per network, so the
/// variant size difference does not matter.
#[allow(clippy::large_enum_variant)]
pub enum Runtime {
    Sim(SimRuntime),
    Threaded(ThreadedRuntime),
}

impl Runtime {
    pub fn send(&mut self, to: &str, msg: &Message) {
        match self {
            Runtime::Sim(s) => s.send(to, msg),
            Runtime::Threaded(t) => t.send(to, msg),
        }
    }

    pub fn run_until_quiet(&mut self) -> Vec<Inbound> {
        match self {
            Runtime::Sim(s) => s.run_until_quiet(),
            Runtime::Threaded(t) => t.run_until_quiet(),
        }
    }

    pub fn now_ms(&self) -> u64 {
        match self {
            Runtime::Sim(s) => s.now_ms(),
            Runtime::Threaded(t) => t.now_ms(),
        }
    }

    pub fn epoch_ms(&self) -> u64 {
        match self {
            Runtime::Sim(s) => s.epoch_ms(),
            Runtime::Threaded(t) => t.epoch_ms(),
        }
    }

    pub fn advance(&mut self, ms: u64) {
        if let Runtime::Sim(s) = self {
            s.advance(ms);
        }
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        match self {
            Runtime::Sim(s) => s.deliveries().to_vec(),
            Runtime::Threaded(t) => t.deliveries(),
        }
    }

    pub fn shutdown(self) -> BTreeMap<String, Node> {
        match self {
            Runtime::Sim(s) => s.into_nodes(),
            Runtime::Threaded(t) => t.shutdown(),
        }
    }
}
