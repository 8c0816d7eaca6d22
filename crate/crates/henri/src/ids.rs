//! Opaque identifier newtypes shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Identifies one node of a product issue tree.
    IssueId
);
id_type!(
    /// Identifies a registered agent.
    AgentId
);
id_type!(
    /// Identifies a product listed with the broker.
    ProductId
);
id_type!(
    /// Identifies a submitted advertisement.
    AdId
);
id_type!(
    /// Identifies one negotiation episode between a pair of agents.
    EpisodeId
);

/// Whether an agent buys or sells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Buyer,
    Seller,
}

impl AgentKind {
    pub fn opposite(self) -> AgentKind {
        match self {
            AgentKind::Buyer => AgentKind::Seller,
            AgentKind::Seller => AgentKind::Buyer,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentKind::Buyer => f.write_str("buyer"),
            AgentKind::Seller => f.write_str("seller"),
        }
    }
}
