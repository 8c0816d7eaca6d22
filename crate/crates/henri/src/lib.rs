//! Multi-party, multi-issue automated negotiation.
//!
//! The crate is split along the system's seams:
//!
//! - [`valuation`]: pure utility, payoff, acceptance, and concession
//!   arithmetic over per-issue valuations.
//! - [`broker`]: the advertisement repository (agents, products,
//!   attribute trees, ads with TTL counters, ongoing negotiations) and
//!   the condition checker that matches buyers to sellers by product.
//! - [`protocol`]: the message vocabulary, its newline-delimited wire
//!   encoding, and the per-episode/per-issue state machine.
//! - [`agent`]: the master-coordinator / coordinator hierarchy that
//!   drives utility-based concession and the multi-party finalize
//!   selection.

pub mod agent;
pub mod broker;
pub mod ids;
pub mod protocol;
pub mod valuation;
