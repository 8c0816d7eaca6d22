//! Episode and per-issue session state machine.
//!
//! An episode tracks one negotiation between a set of participants over
//! the leaf issues of a product. Sessions move OPEN → TEMP_ACCEPTED →
//! FINALIZED (or REJECTED); the episode ends AGREED exactly when every
//! session is FINALIZED, or ABORTED on reject, withdraw, decline of the
//! whole temporary settlement, a buyer null response, or the round
//! limit.

mod wire;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use wire::{decode, decode_bytes, encode, CodecError, MessageBody, NegotiationMessage};

use crate::ids::{AgentId, EpisodeId, IssueId};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolViolation {
    #[error("episode is terminal ({0:?}); no further transitions")]
    EpisodeTerminal(Outcome),
    #[error("message episode id does not match this episode")]
    EpisodeMismatch,
    #[error("sender {0} is not a participant")]
    NotParticipant(AgentId),
    #[error("kind {kind} is illegal for a session in status {status:?}")]
    IllegalTransition { status: SessionStatus, kind: String },
    #[error("kind {0} belongs before an episode exists")]
    PreEpisodeKind(String),
    #[error("unknown issue {0}")]
    UnknownIssue(IssueId),
    #[error("offer carries no issue prices")]
    EmptyOffer,
    #[error("issue {issue}: offer round {got} does not advance past {have}")]
    StaleRound { issue: IssueId, have: u32, got: u32 },
    #[error("sessions already connected")]
    AlreadyConnected,
    #[error("no session is temporarily accepted")]
    NothingAccepted,
    #[error("round limit already reached")]
    RoundLimitReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Open,
    TempAccepted,
    Rejected,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueSessionState {
    pub issue_id: IssueId,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_offer_price: Option<f64>,
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Running,
    Agreed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub episode_id: EpisodeId,
    pub participants: BTreeSet<AgentId>,
    pub issue_sessions: BTreeMap<IssueId, IssueSessionState>,
    pub rounds_used: u32,
    pub max_rounds: u32,
    pub outcome: Outcome,
}

impl EpisodeState {
    /// A fresh episode with no sessions yet; CONNECT_THREAD populates
    /// the session map.
    pub fn new(
        episode_id: impl Into<EpisodeId>,
        participants: impl IntoIterator<Item = AgentId>,
        max_rounds: u32,
    ) -> Self {
        EpisodeState {
            episode_id: episode_id.into(),
            participants: participants.into_iter().collect(),
            issue_sessions: BTreeMap::new(),
            rounds_used: 0,
            max_rounds,
            outcome: Outcome::Running,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome != Outcome::Running
    }

    pub fn open_issues(&self) -> impl Iterator<Item = &IssueSessionState> {
        self.issue_sessions
            .values()
            .filter(|s| s.status == SessionStatus::Open)
    }

    pub fn all_temp_accepted(&self) -> bool {
        !self.issue_sessions.is_empty()
            && self
                .issue_sessions
                .values()
                .all(|s| s.status == SessionStatus::TempAccepted)
    }

    /// Sum of sealed prices; meaningful once every session is sealed.
    pub fn accepted_total(&self) -> f64 {
        self.issue_sessions
            .values()
            .filter(|s| {
                matches!(s.status, SessionStatus::TempAccepted | SessionStatus::Finalized)
            })
            .filter_map(|s| s.last_offer_price)
            .sum::<f64>()
            + 0.0 // squash the empty sum's negative zero
    }

    fn guard_not_terminal(&self) -> Result<(), ProtocolViolation> {
        if self.is_terminal() {
            Err(ProtocolViolation::EpisodeTerminal(self.outcome))
        } else {
            Ok(())
        }
    }

    fn session_mut<'a>(
        sessions: &'a mut BTreeMap<IssueId, IssueSessionState>,
        issue: &IssueId,
    ) -> Result<&'a mut IssueSessionState, ProtocolViolation> {
        sessions
            .get_mut(issue)
            .ok_or_else(|| ProtocolViolation::UnknownIssue(issue.clone()))
    }

    /// Applies one message, returning the successor state. Any illegal
    /// transition leaves `self` untouched and names the offending
    /// (status, kind) pair.
    pub fn apply(&self, msg: &NegotiationMessage) -> Result<EpisodeState, ProtocolViolation> {
        self.guard_not_terminal()?;
        match &msg.episode {
            Some(id) if *id == self.episode_id => {}
            _ => return Err(ProtocolViolation::EpisodeMismatch),
        }
        if !self.participants.contains(&msg.sender) {
            return Err(ProtocolViolation::NotParticipant(msg.sender.clone()));
        }

        let mut next = self.clone();
        match &msg.body {
            MessageBody::SendAdvertisement { .. } | MessageBody::SendIdentity { .. } => {
                return Err(ProtocolViolation::PreEpisodeKind(msg.kind().to_owned()));
            }
            MessageBody::ConnectThread { issues, .. } => {
                if !next.issue_sessions.is_empty() {
                    return Err(ProtocolViolation::AlreadyConnected);
                }
                if issues.is_empty() {
                    return Err(ProtocolViolation::EmptyOffer);
                }
                for issue in issues {
                    next.issue_sessions.insert(
                        issue.clone(),
                        IssueSessionState {
                            issue_id: issue.clone(),
                            status: SessionStatus::Open,
                            last_offer_price: None,
                            round: 0,
                        },
                    );
                }
            }
            MessageBody::Offer { prices } | MessageBody::CounterOffer { prices } => {
                if prices.is_empty() {
                    return Err(ProtocolViolation::EmptyOffer);
                }
                for (issue, price) in prices {
                    let session = Self::session_mut(&mut next.issue_sessions, issue)?;
                    if session.status != SessionStatus::Open {
                        return Err(ProtocolViolation::IllegalTransition {
                            status: session.status,
                            kind: msg.kind().to_owned(),
                        });
                    }
                    if msg.round <= session.round {
                        return Err(ProtocolViolation::StaleRound {
                            issue: issue.clone(),
                            have: session.round,
                            got: msg.round,
                        });
                    }
                    session.round = msg.round;
                    session.last_offer_price = Some(*price);
                }
            }
            MessageBody::Accept { issue } => {
                let session = Self::session_mut(&mut next.issue_sessions, issue)?;
                if session.status != SessionStatus::Open {
                    return Err(ProtocolViolation::IllegalTransition {
                        status: session.status,
                        kind: msg.kind().to_owned(),
                    });
                }
                session.status = SessionStatus::TempAccepted;
            }
            MessageBody::Decline { issue: Some(issue) } => {
                let session = Self::session_mut(&mut next.issue_sessions, issue)?;
                if session.status != SessionStatus::TempAccepted {
                    return Err(ProtocolViolation::IllegalTransition {
                        status: session.status,
                        kind: msg.kind().to_owned(),
                    });
                }
                session.status = SessionStatus::Rejected;
            }
            MessageBody::Decline { issue: None } => {
                // decline the whole temporary settlement
                if !next
                    .issue_sessions
                    .values()
                    .any(|s| s.status == SessionStatus::TempAccepted)
                {
                    return Err(ProtocolViolation::NothingAccepted);
                }
                for session in next.issue_sessions.values_mut() {
                    if session.status == SessionStatus::TempAccepted {
                        session.status = SessionStatus::Rejected;
                    }
                }
                next.outcome = Outcome::Aborted;
            }
            MessageBody::Reject { issue } => {
                let session = Self::session_mut(&mut next.issue_sessions, issue)?;
                if session.status != SessionStatus::Open {
                    return Err(ProtocolViolation::IllegalTransition {
                        status: session.status,
                        kind: msg.kind().to_owned(),
                    });
                }
                session.status = SessionStatus::Rejected;
                next.outcome = Outcome::Aborted;
            }
            MessageBody::Withdraw => {
                next.outcome = Outcome::Aborted;
            }
            MessageBody::Finalize => {
                if next.issue_sessions.is_empty() {
                    return Err(ProtocolViolation::NothingAccepted);
                }
                if let Some(bad) = next
                    .issue_sessions
                    .values()
                    .find(|s| s.status != SessionStatus::TempAccepted)
                {
                    return Err(ProtocolViolation::IllegalTransition {
                        status: bad.status,
                        kind: msg.kind().to_owned(),
                    });
                }
                for session in next.issue_sessions.values_mut() {
                    session.status = SessionStatus::Finalized;
                }
                next.outcome = Outcome::Agreed;
            }
        }
        debug_assert_eq!(
            next.outcome == Outcome::Agreed,
            !next.issue_sessions.is_empty()
                && next
                    .issue_sessions
                    .values()
                    .all(|s| s.status == SessionStatus::Finalized)
        );
        Ok(next)
    }

    /// Advances the time-limit counter; hitting the limit with any open
    /// session aborts the episode.
    pub fn tick_round(&self) -> Result<EpisodeState, ProtocolViolation> {
        self.guard_not_terminal()?;
        if self.rounds_used >= self.max_rounds {
            return Err(ProtocolViolation::RoundLimitReached);
        }
        let mut next = self.clone();
        next.rounds_used += 1;
        if next.rounds_used == next.max_rounds && next.open_issues().next().is_some() {
            next.outcome = Outcome::Aborted;
        }
        Ok(next)
    }

    /// A counterpart answered an offer with null: terminate.
    pub fn null_response(&self) -> Result<EpisodeState, ProtocolViolation> {
        self.guard_not_terminal()?;
        let mut next = self.clone();
        next.outcome = Outcome::Aborted;
        Ok(next)
    }
}
