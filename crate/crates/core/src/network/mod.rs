//! Message-passing channel network: peers, an orderer and client actors as
//! independent state machines driven by a runtime.

mod actor;
mod facade;
mod message;
mod orderer;
mod peer;
mod runtime;
mod threaded;
mod validation;

pub use actor::{assemble_transaction, ActorNode, AssembleError};
pub use facade::{
    establish_network, ActorSpec, Identities, Network, NetworkBuilder, NetworkError, NetworkOptions, RuntimeKind,
};
pub use message::{CommitEvent, Endorsed, Message, PeerStatus, Rejection};
pub use orderer::OrdererNode;
pub use peer::PeerNode;
pub use runtime::{
    Ctx, Delivery, Inbound, LinkLatency, Node, ProcessingCosts, Runtime, SimRuntime, SimSettings, TimeMode, HARNESS,
    SIM_EPOCH_MS,
};
pub use threaded::ThreadedRuntime;
pub use validation::{EndorsementValidator, NoChaincode};
