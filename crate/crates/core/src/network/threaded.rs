//! Stress runtime: one OS thread per node, real time, real interleavings.
//!
//! Quiescence is detected with a counter of frames (and timers) that have
//! been sent but not yet fully handled. A handler's own sends are counted
//! before its input is released, so the counter only reaches zero when
//! nothing is left to do.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::message::Message;
use super::runtime::{unix_now_ms, Ctx, Delivery, Inbound, Node, Outgoing, ProcessingCosts, HARNESS};

enum Envelope {
    Frame { from: String, frame: Vec<u8> },
    Shutdown,
}

struct Shared {
    senders: BTreeMap<String, Sender<Envelope>>,
    harness: Mutex<Sender<Inbound>>,
    in_flight: AtomicUsize,
    started: Instant,
    epoch_ms: u64,
    costs: ProcessingCosts,
    deliveries: Mutex<Vec<Delivery>>,
}

impl Shared {
    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn log(&self, from: &str, to: &str, frame: &[u8]) {
        let d = Delivery {
            at_ms: self.now_ms(),
            from: from.to_owned(),
            to: to.to_owned(),
            tag: frame.first().copied().unwrap_or(0),
        };
        self.deliveries.lock().expect("delivery log poisoned").push(d);
    }

    fn route(&self, from: &str, to: &str, frame: Vec<u8>) {
        if to == HARNESS {
            self.log(from, to, &frame);
            if let Ok(message) = Message::from_frame(&frame) {
                let inbound = Inbound {
                    at_ms: self.now_ms(),
                    from: from.to_owned(),
                    message,
                };
                let _ = self.harness.lock().expect("harness channel poisoned").send(inbound);
            }
            return;
        }
        if let Some(tx) = self.senders.get(to) {
            self.in_flight.fetch_add(1, Ordering::SeqCst);
            let sent = tx.send(Envelope::Frame {
                from: from.to_owned(),
                frame,
            });
            if sent.is_err() {
                self.in_flight.fetch_sub(1, Ordering::SeqCst);
            }
        }
    }
}

pub struct ThreadedRuntime {
    shared: Arc<Shared>,
    harness_rx: Receiver<Inbound>,
    threads: Vec<JoinHandle<Node>>,
}

impl ThreadedRuntime {
    pub fn new(nodes: Vec<Node>, costs: ProcessingCosts) -> Self {
        let mut senders = BTreeMap::new();
        let mut receivers = Vec::new();
        for node in nodes {
            let (tx, rx) = mpsc::channel();
            senders.insert(node.id().to_owned(), tx);
            receivers.push((node, rx));
        }
        let (harness_tx, harness_rx) = mpsc::channel();
        let shared = Arc::new(Shared {
            senders,
            harness: Mutex::new(harness_tx),
            in_flight: AtomicUsize::new(0),
            started: Instant::now(),
            epoch_ms: unix_now_ms(),
            costs,
            deliveries: Mutex::new(Vec::new()),
        });
        let threads = receivers
            .into_iter()
            .map(|(node, rx)| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(node.id().to_owned())
                    .spawn(move || node_loop(node, rx, &shared))
                    .expect("spawn node thread")
            })
            .collect();
        Self {
            shared,
            harness_rx,
            threads,
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.shared.now_ms()
    }

    pub fn epoch_ms(&self) -> u64 {
        self.shared.epoch_ms
    }

    pub fn send(&mut self, to: &str, msg: &Message) {
        self.shared.route(HARNESS, to, msg.to_frame());
    }

    /// Blocks until no frame or timer is outstanding.
    pub fn run_until_quiet(&mut self) -> Vec<Inbound> {
        while self.shared.in_flight.load(Ordering::SeqCst) != 0 {
            std::thread::sleep(Duration::from_micros(200));
        }
        let mut out: Vec<Inbound> = self.harness_rx.try_iter().collect();
        out.sort_by_key(|i| i.at_ms);
        out
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        self.shared.deliveries.lock().expect("delivery log poisoned").clone()
    }

    pub fn shutdown(self) -> BTreeMap<String, Node> {
        for tx in self.shared.senders.values() {
            let _ = tx.send(Envelope::Shutdown);
        }
        self.threads
            .into_iter()
            .map(|t| {
                let node = t.join().expect("node thread panicked");
                (node.id().to_owned(), node)
            })
            .collect()
    }
}

fn node_loop(mut node: Node, rx: Receiver<Envelope>, shared: &Shared) -> Node {
    let me = node.id().to_owned();
    let mut timers: BinaryHeap<Reverse<(Instant, u64)>> = BinaryHeap::new();
    let mut timer_frames: HashMap<u64, Vec<u8>> = HashMap::new();
    let mut next_timer = 0u64;
    loop {
        let due = timers.peek().map(|Reverse((at, _))| *at);
        let received = match due {
            // A due timer goes first so a busy inbox cannot starve it.
            Some(at) if at <= Instant::now() => Err(RecvTimeoutError::Timeout),
            Some(at) => rx.recv_timeout(at.saturating_duration_since(Instant::now())),
            None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        let (from, frame) = match received {
            Ok(Envelope::Frame { from, frame }) => (from, frame),
            Ok(Envelope::Shutdown) | Err(RecvTimeoutError::Disconnected) => return node,
            Err(RecvTimeoutError::Timeout) => {
                let Reverse((_, id)) = timers.pop().expect("timer was due");
                (me.clone(), timer_frames.remove(&id).expect("timer frame"))
            }
        };
        shared.log(&from, &me, &frame);
        let mut ctx = Ctx::new(shared.now_ms(), shared.epoch_ms, shared.costs);
        node.handle(&from, &frame, &mut ctx);
        for out in ctx.out {
            match out {
                Outgoing::Send { to, frame } => shared.route(&me, &to, frame),
                Outgoing::Timer { delay_ms, frame } => {
                    shared.in_flight.fetch_add(1, Ordering::SeqCst);
                    timers.push(Reverse((Instant::now() + Duration::from_millis(delay_ms), next_timer)));
                    timer_frames.insert(next_timer, frame);
                    next_timer += 1;
                }
            }
        }
        shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}
