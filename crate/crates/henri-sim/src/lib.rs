//! Scenario harness for the negotiation system: loads declarative
//! scenario files, runs broker matching and the episode loop over an
//! in-process or TCP transport, and emits replayable transcripts.

pub mod net;
pub mod runner;
pub mod scenario;
pub mod transcript;

use thiserror::Error;

use henri::agent::AgentError;
use henri::broker::BrokerError;
use henri::protocol::{CodecError, ProtocolViolation};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario load error at {field}: {reason}")]
    Load { field: String, reason: String },
    #[error("transcript parse error at line {line}: {reason}")]
    TranscriptParse { line: usize, reason: String },
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub use runner::{run, RunReport};
pub use scenario::{Scenario, Transport};
pub use transcript::{replay, ReplayReport, Transcript};
