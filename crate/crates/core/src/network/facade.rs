use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::chaincode::{ChaincodePackage, EmissionRecord, InstallReceipt, InstantiationRecord, LifecycleError};
use crate::codec::{Canonical, DecodeError};
use crate::config::{ConfigError, NetworkConfig};
use crate::digest::{sha256_concat, Digest};
use crate::identity::{create_ca, Certificate, CertificateAuthority, IdentityError, SigningKey, TrustRoots};
use crate::ledger::{make_genesis, Block, ByteEdit, Ledger, LedgerError};
use crate::policy::{EndorsementPolicy, PolicyMember};
use crate::tx::{Proposal, Transaction, NONCE_LEN};

use super::actor::ActorNode;
use super::message::{CommitEvent, Message, PeerStatus};
use super::orderer::OrdererNode;
use super::peer::PeerNode;
use super::runtime::{Delivery, Inbound, LinkLatency, Node, ProcessingCosts, Runtime, SimRuntime, SimSettings, TimeMode};
use super::threaded::ThreadedRuntime;
use super::validation::EndorsementValidator;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("no {expected} from {node}")]
    NoResponse { node: String, expected: &'static str },
    #[error("{node}: {reason}")]
    Node { node: String, reason: String },
    #[error("actor {actor} could not submit: {reason}")]
    Submit { actor: String, reason: String },
    #[error("{0} must run before this step")]
    OutOfOrder(&'static str),
    #[error("invalid actor {0}")]
    BadActor(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorSpec {
    pub actor_id: String,
    pub org_id: String,
}

impl ActorSpec {
    pub fn new(actor_id: &str, org_id: &str) -> Self {
        Self {
            actor_id: actor_id.to_owned(),
            org_id: org_id.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuntimeKind {
    Simulated(TimeMode),
    /// One thread per node against the real clock.
    Threaded,
}

#[derive(Debug, Clone)]
pub struct NetworkOptions {
    /// Fixes CA keys, nonces and link jitter. `None` draws fresh randomness.
    pub seed: Option<u64>,
    pub runtime: RuntimeKind,
    pub latency: LinkLatency,
    pub costs: ProcessingCosts,
    pub actors: Vec<ActorSpec>,
    pub reorder_deliveries: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            seed: None,
            runtime: RuntimeKind::Simulated(TimeMode::Virtual),
            latency: LinkLatency::default(),
            costs: ProcessingCosts::default(),
            actors: vec![ActorSpec::new("gateway-1", "org1")],
            reorder_deliveries: false,
        }
    }
}

impl NetworkOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }
}

/// Certificates of every node plus the roots they chain to.
#[derive(Debug, Clone, Default)]
pub struct Identities {
    pub roots: TrustRoots,
    pub certificates: BTreeMap<String, Certificate>,
}

/// Walks through network establishment one phase at a time, so callers can
/// time each phase separately.
pub struct NetworkBuilder {
    config: NetworkConfig,
    options: NetworkOptions,
    clock_ms: u64,
    checked: bool,
    identities: Option<(Identities, BTreeMap<String, SigningKey>)>,
    runtime: Option<Runtime>,
    genesis: Option<Block>,
}

impl NetworkBuilder {
    pub fn new(config: NetworkConfig, options: NetworkOptions) -> Self {
        Self {
            config,
            options,
            clock_ms: 0,
            checked: false,
            identities: None,
            runtime: None,
            genesis: None,
        }
    }

    /// Virtual time consumed so far (always 0 outside the virtual clock).
    pub fn virtual_now(&self) -> u64 {
        match (&self.runtime, self.options.runtime) {
            (Some(r), RuntimeKind::Simulated(TimeMode::Virtual)) => r.now_ms(),
            (None, RuntimeKind::Simulated(TimeMode::Virtual)) => self.clock_ms,
            _ => 0,
        }
    }

    fn seed_bytes(&self) -> Option<[u8; 8]> {
        self.options.seed.map(u64::to_be_bytes)
    }

    /// Validates the configuration and actor list.
    pub fn prerequisites(&mut self) -> Result<(), NetworkError> {
        self.config.validate()?;
        let mut ids: BTreeSet<&str> = self.config.peers().map(|(_, p)| p.peer_id.as_str()).collect();
        ids.insert(&self.config.orderer().orderer_id);
        let orgs = self.config.org_ids();
        for a in &self.options.actors {
            if a.actor_id.is_empty() || a.actor_id == super::HARNESS || !ids.insert(&a.actor_id) {
                return Err(NetworkError::BadActor(a.actor_id.clone()));
            }
            if !orgs.contains(&a.org_id) {
                return Err(NetworkError::BadActor(format!("{} (unknown org {})", a.actor_id, a.org_id)));
            }
        }
        self.clock_ms += self.options.costs.config_check_ms;
        self.checked = true;
        Ok(())
    }

    /// One CA per organization (the orderer's included); certificates for
    /// every peer, the orderer and each actor.
    pub fn generate_certificates(&mut self) -> Result<&Identities, NetworkError> {
        if !self.checked {
            return Err(NetworkError::OutOfOrder("prerequisites"));
        }
        let seed = self.seed_bytes();
        let mut cas: BTreeMap<String, CertificateAuthority> = BTreeMap::new();
        let mut orgs = self.config.org_ids();
        orgs.push(self.config.orderer().org_id.clone());
        for org in orgs {
            cas.entry(org.clone())
                .or_insert_with(|| create_ca(&org, seed.as_ref().map(|s| &s[..])));
        }
        let mut subjects: Vec<(String, String)> = self
            .config
            .peers()
            .map(|(org, p)| (p.peer_id.clone(), org.to_owned()))
            .collect();
        let o = self.config.orderer();
        subjects.push((o.orderer_id.clone(), o.org_id.clone()));
        subjects.extend(self.options.actors.iter().map(|a| (a.actor_id.clone(), a.org_id.clone())));

        let mut identities = Identities::default();
        let mut keys = BTreeMap::new();
        for (subject, org) in subjects {
            let ca = cas.get_mut(&org).expect("CA exists for every org");
            let (cert, key) = ca.issue_certificate(&subject, &org)?;
            identities.certificates.insert(subject.clone(), cert);
            keys.insert(subject, key);
            self.clock_ms += self.options.costs.cert_issue_ms;
        }
        for ca in cas.values() {
            identities.roots.trust(ca);
        }
        self.identities = Some((identities, keys));
        Ok(&self.identities.as_ref().expect("just set").0)
    }

    fn spawn_nodes(&self, keys: &BTreeMap<String, SigningKey>, identities: &Identities) -> Vec<Node> {
        let mut nodes = Vec::new();
        let peer_ids: Vec<String> = self.config.peers().map(|(_, p)| p.peer_id.clone()).collect();
        for (org, p) in self.config.peers() {
            nodes.push(Node::Peer(PeerNode::new(
                &p.peer_id,
                org,
                p.endorsing,
                identities.certificates[&p.peer_id].clone(),
                keys[&p.peer_id].clone(),
            )));
        }
        let o = self.config.orderer();
        nodes.push(Node::Orderer(OrdererNode::new(
            &o.orderer_id,
            identities.certificates[&o.orderer_id].clone(),
            self.config.block_cut,
            peer_ids,
        )));
        for a in &self.options.actors {
            let nonce_seed = match self.seed_bytes() {
                Some(s) => *sha256_concat([&b"actor-nonce"[..], &s, a.actor_id.as_bytes()]).as_bytes(),
                None => rand::random(),
            };
            nodes.push(Node::Actor(ActorNode::new(
                identities.certificates[&a.actor_id].clone(),
                keys[&a.actor_id].clone(),
                &o.orderer_id,
                nonce_seed,
            )));
        }
        nodes
    }

    /// Starts every node, builds the genesis block and creates the channel on
    /// the orderer.
    pub fn establish_channel(&mut self) -> Result<Digest, NetworkError> {
        let (identities, keys) = self
            .identities
            .as_ref()
            .ok_or(NetworkError::OutOfOrder("generate_certificates"))?;
        let nodes = self.spawn_nodes(keys, identities);
        let mut runtime = match self.options.runtime {
            RuntimeKind::Simulated(mode) => Runtime::Sim(SimRuntime::new(
                nodes,
                SimSettings {
                    seed: self.options.seed.unwrap_or_else(rand::random),
                    latency: self.options.latency,
                    costs: self.options.costs,
                    mode,
                    reorder_deliveries: self.options.reorder_deliveries,
                    start_ms: self.clock_ms,
                },
            )),
            RuntimeKind::Threaded => Runtime::Threaded(ThreadedRuntime::new(nodes, self.options.costs)),
        };
        let genesis = make_genesis(&self.config, runtime.epoch_ms() + runtime.now_ms())?;
        let orderer = self.config.orderer().orderer_id.clone();
        runtime.send(
            &orderer,
            &Message::CreateChannel {
                genesis: genesis.to_canonical_bytes(),
            },
        );
        let inbound = runtime.run_until_quiet();
        let acked = inbound
            .iter()
            .any(|i| i.from == orderer && matches!(&i.message, Message::CreateChannelAck { genesis_hash } if *genesis_hash == genesis.hash()));
        self.runtime = Some(runtime);
        if !acked {
            return Err(NetworkError::NoResponse {
                node: orderer,
                expected: "channel creation ack",
            });
        }
        let hash = genesis.hash();
        self.genesis = Some(genesis);
        Ok(hash)
    }

    /// Sends the genesis block to every peer and waits for all of them to join.
    pub fn peer_join(mut self) -> Result<Network, NetworkError> {
        let genesis = self.genesis.take().ok_or(NetworkError::OutOfOrder("establish_channel"))?;
        let runtime = self.runtime.take().expect("runtime exists once genesis does");
        let (identities, mut keys) = self.identities.take().expect("identities exist once genesis does");
        let actor_keys = self
            .options
            .actors
            .iter()
            .filter_map(|a| keys.remove_entry(&a.actor_id))
            .collect();
        let mut net = Network {
            config: self.config,
            options: self.options,
            runtime,
            identities,
            genesis,
            instantiation: None,
            next_seq: 0,
            log: Vec::new(),
            actor_keys,
        };
        let peers = net.peer_ids();
        let msg = Message::JoinChannel {
            genesis: net.genesis.to_canonical_bytes(),
            roots: net.identities.roots.clone(),
        };
        let replies = net.request(&peers, &msg, "join ack")?;
        for (peer, reply) in replies {
            match reply {
                Message::JoinAck { result: Ok(h) } if h == net.genesis.hash() => {}
                Message::JoinAck { result: Ok(h) } => {
                    return Err(NetworkError::Node {
                        node: peer,
                        reason: format!("joined with genesis {h}"),
                    })
                }
                Message::JoinAck { result: Err(reason) } => return Err(NetworkError::Node { node: peer, reason }),
                _ => unreachable!("filtered by request"),
            }
        }
        Ok(net)
    }
}

/// Runs all establishment phases back to back.
pub fn establish_network(config: NetworkConfig, options: NetworkOptions) -> Result<Network, NetworkError> {
    let mut b = NetworkBuilder::new(config, options);
    b.prerequisites()?;
    b.generate_certificates()?;
    b.establish_channel()?;
    b.peer_join()
}

/// Handle to a running network. Every interaction is a message exchange;
/// the handle owns the runtime and therefore the scheduler.
pub struct Network {
    config: NetworkConfig,
    options: NetworkOptions,
    runtime: Runtime,
    identities: Identities,
    genesis: Block,
    instantiation: Option<InstantiationRecord>,
    next_seq: u64,
    log: Vec<Inbound>,
    actor_keys: BTreeMap<String, SigningKey>,
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn options(&self) -> &NetworkOptions {
        &self.options
    }

    pub fn genesis(&self) -> &Block {
        &self.genesis
    }

    pub fn identities(&self) -> &Identities {
        &self.identities
    }

    pub fn instantiation(&self) -> Option<&InstantiationRecord> {
        self.instantiation.as_ref()
    }

    /// Virtual ms under the virtual clock, real elapsed ms otherwise.
    pub fn now_ms(&self) -> u64 {
        self.runtime.now_ms()
    }

    pub fn peer_ids(&self) -> Vec<String> {
        self.config.peers().map(|(_, p)| p.peer_id.clone()).collect()
    }

    pub fn endorsing_peer_ids(&self) -> Vec<String> {
        self.config
            .peers()
            .filter(|(_, p)| p.endorsing)
            .map(|(_, p)| p.peer_id.clone())
            .collect()
    }

    pub fn orderer_id(&self) -> &str {
        &self.config.orderer().orderer_id
    }

    pub fn actor_ids(&self) -> Vec<String> {
        self.options.actors.iter().map(|a| a.actor_id.clone()).collect()
    }

    /// Every message that has reached the harness so far.
    pub fn log(&self) -> &[Inbound] {
        &self.log
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        self.runtime.deliveries()
    }

    /// Sends any message to any node; replies land in [`Network::log`].
    pub fn send_raw(&mut self, to: &str, msg: &Message) {
        self.runtime.send(to, msg);
    }

    /// Runs until nothing is in flight; returns the messages that reached the
    /// harness meanwhile.
    pub fn run_until_quiet(&mut self) -> Vec<Inbound> {
        let inbound = self.runtime.run_until_quiet();
        self.log.extend(inbound.iter().cloned());
        inbound
    }

    /// Sends `msg` to each target, runs to quiescence, and returns each
    /// target's reply with the expected tag.
    fn request(
        &mut self,
        targets: &[String],
        msg: &Message,
        expected: &'static str,
    ) -> Result<BTreeMap<String, Message>, NetworkError> {
        let reply_tag = reply_tag(msg);
        for t in targets {
            self.runtime.send(t, msg);
        }
        let mut replies = BTreeMap::new();
        for i in self.run_until_quiet() {
            if i.message.tag() == reply_tag && targets.contains(&i.from) {
                replies.entry(i.from).or_insert(i.message);
            }
        }
        if let Some(missing) = targets.iter().find(|t| !replies.contains_key(*t)) {
            return Err(NetworkError::NoResponse {
                node: missing.clone(),
                expected,
            });
        }
        Ok(replies)
    }

    fn check_peer(&self, peer: &str) -> Result<(), NetworkError> {
        if self.config.peer(peer).is_some() {
            Ok(())
        } else {
            Err(NetworkError::UnknownNode(peer.to_owned()))
        }
    }

    /// Installs `package` on the listed peers.
    pub fn install(&mut self, peers: &[String], package: &ChaincodePackage) -> Result<Vec<InstallReceipt>, NetworkError> {
        for p in peers {
            self.check_peer(p)?;
        }
        let msg = Message::Install {
            name: package.name.clone(),
            version: package.version.clone(),
            code_id: package.code_id().to_owned(),
        };
        let mut receipts = Vec::new();
        for (peer, reply) in self.request(peers, &msg, "install ack")? {
            match reply {
                Message::InstallAck { result: Ok(newly) } => receipts.push(InstallReceipt {
                    peer_id: peer,
                    name: package.name.clone(),
                    version: package.version.clone(),
                    newly_installed: newly,
                }),
                Message::InstallAck { result: Err(reason) } => return Err(NetworkError::Node { node: peer, reason }),
                _ => unreachable!("filtered by request"),
            }
        }
        Ok(receipts)
    }

    pub fn install_everywhere(&mut self, package: &ChaincodePackage) -> Result<Vec<InstallReceipt>, NetworkError> {
        let peers = self.peer_ids();
        self.install(&peers, package)
    }

    /// Binds `name`/`version` to the channel under `members`. Blocks until
    /// every policy peer confirms the package and every node acknowledges.
    pub fn instantiate(
        &mut self,
        name: &str,
        version: &str,
        members: Vec<PolicyMember>,
    ) -> Result<InstantiationRecord, NetworkError> {
        let policy = EndorsementPolicy::new(members)
            .and_then(|p| p.validate_against(&self.config).map(|()| p))
            .map_err(|e| LifecycleError::InvalidPolicy(e.to_string()))?;
        let policy_peers: Vec<String> = policy.required().iter().map(|m| m.peer_id.clone()).collect();
        let check = Message::InstantiateCheck {
            name: name.to_owned(),
            version: version.to_owned(),
        };
        let lacking: Vec<String> = self
            .request(&policy_peers, &check, "installation check")?
            .into_iter()
            .filter(|(_, m)| matches!(m, Message::InstantiateCheckAck { installed: false }))
            .map(|(p, _)| p)
            .collect();
        if !lacking.is_empty() {
            return Err(LifecycleError::MissingInstallation {
                name: name.to_owned(),
                peers: lacking,
            }
            .into());
        }
        let record = InstantiationRecord {
            channel: self.config.channel.clone(),
            chaincode: name.to_owned(),
            version: version.to_owned(),
            policy,
        };
        let mut targets = self.peer_ids();
        targets.extend(self.actor_ids());
        self.request(
            &targets,
            &Message::InstantiateCommit { record: record.clone() },
            "instantiation ack",
        )?;
        self.instantiation = Some(record.clone());
        Ok(record)
    }

    /// Instantiates under the default policy: every endorsing peer.
    pub fn instantiate_default(&mut self, package: &ChaincodePackage) -> Result<InstantiationRecord, NetworkError> {
        let policy = EndorsementPolicy::all_endorsers(&self.config)
            .map_err(|e| LifecycleError::InvalidPolicy(e.to_string()))?;
        self.instantiate(&package.name, &package.version, policy.required().to_vec())
    }

    fn check_actor(&self, actor: &str) -> Result<(), NetworkError> {
        if self.options.actors.iter().any(|a| a.actor_id == actor) {
            Ok(())
        } else {
            Err(NetworkError::UnknownNode(actor.to_owned()))
        }
    }

    /// Queues `record` at `actor` without running the network; returns the
    /// request sequence number.
    pub fn enqueue(&mut self, actor: &str, record: EmissionRecord) -> Result<u64, NetworkError> {
        self.check_actor(actor)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.runtime.send(actor, &Message::SubmitRecord { seq, record });
        Ok(seq)
    }

    /// Submits every record, then runs the pipeline to quiescence. Results
    /// are in submission order.
    pub fn submit_many(
        &mut self,
        actor: &str,
        records: impl IntoIterator<Item = EmissionRecord>,
    ) -> Result<Vec<Result<Proposal, NetworkError>>, NetworkError> {
        let seqs = records
            .into_iter()
            .map(|r| self.enqueue(actor, r))
            .collect::<Result<Vec<_>, _>>()?;
        let mut by_seq: BTreeMap<u64, Result<Proposal, NetworkError>> = BTreeMap::new();
        for i in self.run_until_quiet() {
            if i.from != actor {
                continue;
            }
            match i.message {
                Message::Submitted { seq, proposal } => {
                    by_seq.insert(seq, Ok(proposal));
                }
                Message::SubmitFailed { seq, reason } => {
                    by_seq.insert(
                        seq,
                        Err(NetworkError::Submit {
                            actor: actor.to_owned(),
                            reason,
                        }),
                    );
                }
                _ => {}
            }
        }
        Ok(seqs
            .into_iter()
            .map(|s| {
                by_seq.remove(&s).unwrap_or_else(|| {
                    Err(NetworkError::NoResponse {
                        node: actor.to_owned(),
                        expected: "submission receipt",
                    })
                })
            })
            .collect())
    }

    /// Submits one record and runs the pipeline until it settles.
    pub fn submit_sensor_data(&mut self, actor: &str, record: EmissionRecord) -> Result<Proposal, NetworkError> {
        self.submit_many(actor, [record])?.pop().expect("one result per record")
    }

    /// Signs a proposal with `actor`'s credentials without involving the
    /// actor node, so the caller decides where it goes.
    pub fn sign_proposal(
        &self,
        actor: &str,
        record: EmissionRecord,
        nonce: [u8; NONCE_LEN],
    ) -> Result<Proposal, NetworkError> {
        let key = self
            .actor_keys
            .get(actor)
            .ok_or_else(|| NetworkError::UnknownNode(actor.to_owned()))?;
        let inst = self.instantiation.as_ref().ok_or(NetworkError::OutOfOrder("instantiate"))?;
        Ok(Proposal::signed(
            self.identities.certificates[actor].clone(),
            key,
            &inst.channel,
            &inst.chaincode,
            record,
            nonce,
        ))
    }

    /// Hands a transaction straight to the orderer, bypassing any actor.
    pub fn submit_transaction(&mut self, tx: Transaction) {
        let orderer = self.orderer_id().to_owned();
        self.runtime.send(&orderer, &Message::SubmitTx { tx });
    }

    pub fn revoke_actor_key(&mut self, actor: &str) -> Result<(), NetworkError> {
        self.check_actor(actor)?;
        self.runtime.send(actor, &Message::RevokeKey);
        self.run_until_quiet();
        Ok(())
    }

    /// Commit events from `peer` so far, in commit order.
    pub fn commit_events(&self, peer: &str) -> Vec<CommitEvent> {
        self.log
            .iter()
            .filter_map(|i| match &i.message {
                Message::Commit(ev) if ev.peer == peer => Some(ev.clone()),
                _ => None,
            })
            .collect()
    }

    /// Transactions an actor refused to forward, with reasons.
    pub fn rejected(&self) -> Vec<(Digest, String)> {
        self.log
            .iter()
            .filter_map(|i| match &i.message {
                Message::TxRejected { tx_id, reason } => Some((*tx_id, reason.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn forwarded(&self) -> Vec<Digest> {
        self.log
            .iter()
            .filter_map(|i| match &i.message {
                Message::TxForwarded { tx_id } => Some(*tx_id),
                _ => None,
            })
            .collect()
    }

    pub fn query(&mut self, peer: &str, key: &str) -> Result<Option<EmissionRecord>, NetworkError> {
        self.check_peer(peer)?;
        let msg = Message::Query { key: key.to_owned() };
        let targets = [peer.to_owned()];
        match self.request(&targets, &msg, "query response")?.remove(peer) {
            Some(Message::QueryResponse { result, .. }) => result.map_err(|reason| NetworkError::Node {
                node: peer.to_owned(),
                reason,
            }),
            _ => unreachable!("filtered by request"),
        }
    }

    pub fn statuses(&mut self) -> Result<BTreeMap<String, PeerStatus>, NetworkError> {
        let peers = self.peer_ids();
        Ok(self
            .request(&peers, &Message::Status, "status report")?
            .into_iter()
            .map(|(p, m)| match m {
                Message::StatusReport(s) => (p, s),
                _ => unreachable!("filtered by request"),
            })
            .collect())
    }

    pub fn tip_digests(&mut self) -> Result<BTreeMap<String, Digest>, NetworkError> {
        Ok(self
            .statuses()?
            .into_iter()
            .map(|(p, s)| (p, s.tip_digest))
            .collect())
    }

    /// Test-only: mutates one peer's stored block.
    pub fn tamper(&mut self, peer: &str, height: u64, edits: Vec<ByteEdit>) -> Result<(), NetworkError> {
        self.check_peer(peer)?;
        let targets = [peer.to_owned()];
        match self.request(&targets, &Message::Tamper { height, edits }, "tamper ack")?.remove(peer) {
            Some(Message::TamperAck { result }) => result.map_err(|reason| NetworkError::Node {
                node: peer.to_owned(),
                reason,
            }),
            _ => unreachable!("filtered by request"),
        }
    }

    pub fn dump_ledger(&mut self, peer: &str) -> Result<Vec<u8>, NetworkError> {
        self.check_peer(peer)?;
        let targets = [peer.to_owned()];
        match self.request(&targets, &Message::DumpLedger, "ledger dump")?.remove(peer) {
            Some(Message::LedgerDump { bytes }) => Ok(bytes),
            _ => unreachable!("filtered by request"),
        }
    }

    /// Validator matching the instantiated chaincode, for offline replay.
    pub fn validator(&self) -> Option<EndorsementValidator> {
        self.instantiation
            .as_ref()
            .map(|r| EndorsementValidator::new(r, self.identities.roots.clone()))
    }

    /// Reconstructs a peer's replica from its dump.
    pub fn ledger(&mut self, peer: &str) -> Result<Ledger, NetworkError> {
        let dump = self.dump_ledger(peer)?;
        let validator = self.validator().ok_or(NetworkError::OutOfOrder("instantiate"))?;
        Ok(Ledger::from_dump(&dump, &validator)?)
    }

    /// Stops all nodes and hands back their final state.
    pub fn shutdown(self) -> BTreeMap<String, Node> {
        self.runtime.shutdown()
    }
}

fn reply_tag(msg: &Message) -> u8 {
    let reply = match msg {
        Message::JoinChannel { .. } => Message::JoinAck { result: Ok(Digest::ZERO) },
        Message::Install { .. } => Message::InstallAck { result: Ok(false) },
        Message::InstantiateCheck { .. } => Message::InstantiateCheckAck { installed: false },
        Message::InstantiateCommit { .. } => Message::InstantiateCommitAck,
        Message::Query { .. } => Message::QueryResponse {
            key: String::new(),
            result: Ok(None),
        },
        Message::Status => Message::Status,
        Message::Tamper { .. } => Message::TamperAck { result: Ok(()) },
        Message::DumpLedger => Message::LedgerDump { bytes: vec![] },
        other => unreachable!("no reply defined for tag {}", other.tag()),
    };
    // Status replies with StatusReport, the tag after it.
    if matches!(reply, Message::Status) {
        Message::StatusReport(PeerStatus {
            peer: String::new(),
            chain_len: 0,
            tip_digest: Digest::ZERO,
            valid: false,
            buffered: 0,
        })
        .tag()
    } else {
        reply.tag()
    }
}
