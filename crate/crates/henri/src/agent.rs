//! Agent-side negotiation machinery.
//!
//! A master coordinator owns one coordinator per counterpart; each
//! coordinator drives one episode, conceding per round on every issue
//! still open and sealing issues whose offered price clears its bounds.
//! Once at least one coordinator holds a full temporary acceptance, the
//! master finalizes the most favorable counterpart and declines the
//! rest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, AgentKind, IssueId};
use crate::protocol::{
    EpisodeState, MessageBody, NegotiationMessage, ProtocolViolation, SessionStatus,
};
use crate::valuation::{
    buyer_accepts, decay_utility, derive_lambda, raise_utility,
    seller_accepts, ConcessionState, IssueNode, IssueValuation, NonFunctionalAttributes,
    ValuationError,
};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
    #[error("product tree has no negotiable issues")]
    NoIssues,
    #[error("missing valuation for issue {0}")]
    MissingValuation(IssueId),
    #[error("buyer bounds invalid: {0}")]
    InvalidBounds(String),
    #[error("no coordinator holds a full temporary acceptance")]
    NothingAccepted,
    #[error("finalize decision already made")]
    AlreadyDecided,
}

/// Aggregate knowledge of a buyer that was not given per-issue data:
/// only an overall cost interval, plus optional weights and NFA maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerBounds {
    pub min_cost: f64,
    pub max_cost: f64,
    /// Per-issue weights; issues not listed fall back to `equal_weight`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<IssueId, f64>>,
    /// Uniform weight used when no per-issue weight is supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equal_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfa: Option<BTreeMap<IssueId, NonFunctionalAttributes>>,
}

/// What an agent knows about the product it negotiates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationSource {
    /// Seller side: one valuation per leaf issue.
    PerIssue(Vec<IssueValuation>),
    /// Buyer side: aggregate bounds, split per leaf at bootstrap.
    Aggregate(BuyerBounds),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: AgentId,
    pub kind: AgentKind,
    pub tree: IssueNode,
    pub valuations: ValuationSource,
    pub max_rounds: u32,
}

impl AgentConfig {
    /// Per-leaf valuations for this agent. Sellers must cover every
    /// leaf; buyers bootstrap from their aggregate bounds, pulling NFA
    /// maps from `advertised_nfa` when their own config has none.
    pub fn resolve_valuations(
        &self,
        advertised_nfa: &BTreeMap<IssueId, NonFunctionalAttributes>,
    ) -> Result<Vec<IssueValuation>, AgentError> {
        self.tree.validate()?;
        let leaves = self.tree.leaves();
        if leaves.is_empty() {
            return Err(AgentError::NoIssues);
        }
        let valuations = match &self.valuations {
            ValuationSource::PerIssue(vs) => {
                for leaf in &leaves {
                    if !vs.iter().any(|v| v.issue_id == leaf.id) {
                        return Err(AgentError::MissingValuation(leaf.id.clone()));
                    }
                }
                vs.clone()
            }
            ValuationSource::Aggregate(bounds) => {
                bootstrap_buyer(&self.tree, bounds, advertised_nfa)?
            }
        };
        for v in &valuations {
            v.validate()?;
        }
        Ok(valuations)
    }
}

/// Splits a buyer's aggregate cost interval evenly over the leaves:
/// per-leaf actual cost `min_cost / n` and margin cost `max_cost / n`.
/// Weights default to a uniform value, NFA maps to the advertised ones.
pub fn bootstrap_buyer(
    tree: &IssueNode,
    bounds: &BuyerBounds,
    advertised_nfa: &BTreeMap<IssueId, NonFunctionalAttributes>,
) -> Result<Vec<IssueValuation>, AgentError> {
    let leaves = tree.leaves();
    if leaves.is_empty() {
        return Err(AgentError::NoIssues);
    }
    if !(bounds.min_cost.is_finite() && bounds.max_cost.is_finite()) {
        return Err(AgentError::InvalidBounds("costs must be finite".into()));
    }
    if bounds.min_cost < 0.0 || bounds.min_cost > bounds.max_cost {
        return Err(AgentError::InvalidBounds(
            "need 0 <= min_cost <= max_cost".into(),
        ));
    }
    let n = leaves.len() as f64;
    let equal_weight = bounds.equal_weight.unwrap_or(1.0);
    Ok(leaves
        .iter()
        .map(|leaf| {
            let weight = bounds
                .weights
                .as_ref()
                .and_then(|w| w.get(&leaf.id).copied())
                .unwrap_or(equal_weight);
            let nfa = bounds
                .nfa
                .as_ref()
                .and_then(|m| m.get(&leaf.id).cloned())
                .or_else(|| advertised_nfa.get(&leaf.id).cloned())
                .unwrap_or_default();
            IssueValuation {
                issue_id: leaf.id.clone(),
                actual_cost: bounds.min_cost / n,
                cost_with_margin: bounds.max_cost / n,
                weight,
                nfa,
            }
        })
        .collect())
}

/// Per-issue verdict on an incoming offer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Counter,
}

/// Drives one episode against one counterpart. Holds the agent's own
/// copy of the episode state plus its concession positions.
#[derive(Debug, Clone)]
pub struct Coordinator {
    pub self_id: AgentId,
    pub role: AgentKind,
    pub counterpart: AgentId,
    pub episode: EpisodeState,
    pub concessions: BTreeMap<IssueId, ConcessionState>,
    pub lambda_current: f64,
    /// Stamp of the moment every session became temporarily accepted,
    /// used as the finalize tie-break.
    pub fully_accepted_at: Option<u64>,
}

impl Coordinator {
    /// Seller positions open at `u_max` and concede down; buyer
    /// positions open at `u_min` and concede up.
    pub fn new(
        self_id: AgentId,
        role: AgentKind,
        counterpart: AgentId,
        episode: EpisodeState,
        valuations: &[IssueValuation],
    ) -> Result<Self, AgentError> {
        let mut concessions = BTreeMap::new();
        for issue in episode.issue_sessions.keys() {
            let v = valuations
                .iter()
                .find(|v| v.issue_id == *issue)
                .ok_or_else(|| AgentError::MissingValuation(issue.clone()))?;
            let bounds = v.bounds();
            let u_current = match role {
                AgentKind::Seller => bounds.u_max,
                AgentKind::Buyer => bounds.u_min,
            };
            concessions.insert(
                issue.clone(),
                ConcessionState {
                    issue_id: issue.clone(),
                    u_current,
                    bounds,
                    weight: v.weight,
                },
            );
        }
        Ok(Coordinator {
            self_id,
            role,
            counterpart,
            episode,
            concessions,
            lambda_current: 0.0,
            fully_accepted_at: None,
        })
    }

    pub fn is_running(&self) -> bool {
        !self.episode.is_terminal()
    }

    pub fn fully_accepted(&self) -> bool {
        self.is_running() && self.episode.all_temp_accepted()
    }

    fn open_states(&self) -> Vec<ConcessionState> {
        self.episode
            .open_issues()
            .filter_map(|s| self.concessions.get(&s.issue_id).cloned())
            .collect()
    }

    fn rounds_remaining(&self) -> u32 {
        (self.episode.max_rounds.saturating_sub(self.episode.rounds_used)).max(1)
    }

    /// 1-based index of the round in progress.
    fn round_index(&self) -> u32 {
        self.episode.rounds_used + 1
    }

    /// Recomputes λ over the open issues and moves every open position
    /// one step toward the counterpart.
    fn concede(&mut self) -> Result<(), AgentError> {
        let open = self.open_states();
        if open.is_empty() {
            return Ok(());
        }
        let lambda = derive_lambda(&open, self.rounds_remaining())?;
        self.lambda_current = lambda;
        let t = self.round_index();
        for state in &open {
            let next = match self.role {
                AgentKind::Seller => decay_utility(state, lambda, t),
                AgentKind::Buyer => raise_utility(state, lambda, t),
            };
            self.concessions
                .get_mut(&state.issue_id)
                .expect("open state exists")
                .u_current = next;
        }
        Ok(())
    }

    fn apply_own(&mut self, msg: &NegotiationMessage) -> Result<(), AgentError> {
        self.episode = self.episode.apply(msg)?;
        Ok(())
    }

    /// Ingests a message sent by the counterpart.
    pub fn receive(&mut self, msg: &NegotiationMessage) -> Result<(), AgentError> {
        self.episode = self.episode.apply(msg)?;
        Ok(())
    }

    /// Produces this party's offer for the round in progress: round 1
    /// uses the initial positions, later rounds concede first. Returns
    /// `None` when nothing is open (all sealed or terminal settlement
    /// pending).
    pub fn offer_for_round(&mut self) -> Result<Option<NegotiationMessage>, AgentError> {
        if self.episode.is_terminal() {
            return Err(ProtocolViolation::EpisodeTerminal(self.episode.outcome).into());
        }
        if self.episode.open_issues().next().is_none() {
            return Ok(None);
        }
        if self.round_index() > 1 {
            self.concede()?;
        }
        let prices: BTreeMap<IssueId, f64> = self
            .episode
            .open_issues()
            .map(|s| {
                let c = &self.concessions[&s.issue_id];
                (s.issue_id.clone(), c.u_current)
            })
            .collect();
        let wire_round = self
            .episode
            .open_issues()
            .map(|s| s.round)
            .max()
            .unwrap_or(0)
            + 1;
        let first = self.episode.issue_sessions.values().all(|s| s.round == 0);
        let body = if first {
            MessageBody::Offer { prices }
        } else {
            MessageBody::CounterOffer { prices }
        };
        let msg = NegotiationMessage::new(
            Some(self.episode.episode_id.clone()),
            self.self_id.clone(),
            wire_round,
            body,
        );
        self.apply_own(&msg)?;
        Ok(Some(msg))
    }

    /// Checks each offered price against this party's bounds.
    pub fn evaluate_offer(
        &self,
        prices: &BTreeMap<IssueId, f64>,
    ) -> Result<Vec<(IssueId, Verdict)>, AgentError> {
        if prices.is_empty() {
            return Err(ProtocolViolation::EmptyOffer.into());
        }
        prices
            .iter()
            .map(|(issue, price)| {
                let state = self
                    .concessions
                    .get(issue)
                    .ok_or_else(|| ProtocolViolation::UnknownIssue(issue.clone()))?;
                let ok = match self.role {
                    AgentKind::Seller => seller_accepts(*price, &state.bounds),
                    AgentKind::Buyer => buyer_accepts(*price, &state.bounds),
                };
                Ok((issue.clone(), if ok { Verdict::Accept } else { Verdict::Counter }))
            })
            .collect()
    }

    /// Evaluates an incoming price map and seals every acceptable issue
    /// with an ACCEPT message. Returns the accepts, already applied to
    /// this side's episode.
    pub fn respond_to_offer(
        &mut self,
        prices: &BTreeMap<IssueId, f64>,
    ) -> Result<Vec<NegotiationMessage>, AgentError> {
        let verdicts = self.evaluate_offer(prices)?;
        let mut out = Vec::new();
        for (issue, verdict) in verdicts {
            if verdict == Verdict::Accept {
                let msg = NegotiationMessage::new(
                    Some(self.episode.episode_id.clone()),
                    self.self_id.clone(),
                    0,
                    MessageBody::Accept { issue },
                );
                self.apply_own(&msg)?;
                out.push(msg);
            }
        }
        Ok(out)
    }

    pub fn tick(&mut self) -> Result<(), AgentError> {
        self.episode = self.episode.tick_round()?;
        Ok(())
    }

    pub fn finalize(&mut self) -> Result<NegotiationMessage, AgentError> {
        let msg = NegotiationMessage::new(
            Some(self.episode.episode_id.clone()),
            self.self_id.clone(),
            0,
            MessageBody::Finalize,
        );
        self.apply_own(&msg)?;
        Ok(msg)
    }

    pub fn decline_all(&mut self) -> Result<NegotiationMessage, AgentError> {
        let msg = NegotiationMessage::new(
            Some(self.episode.episode_id.clone()),
            self.self_id.clone(),
            0,
            MessageBody::Decline { issue: None },
        );
        self.apply_own(&msg)?;
        Ok(msg)
    }
}

/// Owns every coordinator of one agent and serializes the single
/// finalize decision across them.
#[derive(Debug)]
pub struct MasterCoordinator {
    pub self_id: AgentId,
    pub role: AgentKind,
    pub coordinators: BTreeMap<AgentId, Coordinator>,
    pub decided: Option<AgentId>,
    accept_clock: u64,
}

impl MasterCoordinator {
    pub fn new(self_id: AgentId, role: AgentKind) -> Self {
        MasterCoordinator {
            self_id,
            role,
            coordinators: BTreeMap::new(),
            decided: None,
            accept_clock: 0,
        }
    }

    pub fn add_coordinator(&mut self, coord: Coordinator) {
        self.coordinators.insert(coord.counterpart.clone(), coord);
    }

    /// Stamps the moment a coordinator reaches full temporary
    /// acceptance; the earliest stamp wins finalize ties.
    pub fn note_progress(&mut self) {
        let clock = &mut self.accept_clock;
        for coord in self.coordinators.values_mut() {
            if coord.fully_accepted() && coord.fully_accepted_at.is_none() {
                coord.fully_accepted_at = Some(*clock);
                *clock += 1;
            }
        }
    }

    /// Picks the most favorable fully-accepted counterpart (lowest
    /// total for a buyer, highest for a seller), finalizes it, and
    /// declines every other coordinator holding temporary acceptances.
    /// Returns the chosen counterpart and the outgoing messages.
    pub fn select_and_finalize(
        &mut self,
    ) -> Result<(AgentId, Vec<NegotiationMessage>), AgentError> {
        if self.decided.is_some() {
            return Err(AgentError::AlreadyDecided);
        }
        self.note_progress();
        let mut candidates: Vec<(AgentId, f64, u64)> = self
            .coordinators
            .values()
            .filter(|c| c.fully_accepted())
            .map(|c| {
                (
                    c.counterpart.clone(),
                    c.episode.accepted_total(),
                    c.fully_accepted_at.unwrap_or(u64::MAX),
                )
            })
            .collect();
        if candidates.is_empty() {
            return Err(AgentError::NothingAccepted);
        }
        let better = |a: f64, b: f64| match self.role {
            AgentKind::Buyer => a < b,
            AgentKind::Seller => a > b,
        };
        candidates.sort_by(|(id_a, tot_a, at_a), (id_b, tot_b, at_b)| {
            if better(*tot_a, *tot_b) {
                std::cmp::Ordering::Less
            } else if better(*tot_b, *tot_a) {
                std::cmp::Ordering::Greater
            } else {
                at_a.cmp(at_b).then_with(|| id_a.cmp(id_b))
            }
        });
        let chosen = candidates[0].0.clone();

        let mut msgs = Vec::new();
        let finalize = self
            .coordinators
            .get_mut(&chosen)
            .expect("chosen coordinator exists")
            .finalize()?;
        msgs.push(finalize);
        for (id, coord) in self.coordinators.iter_mut() {
            if *id == chosen {
                continue;
            }
            let holds_seal = coord
                .episode
                .issue_sessions
                .values()
                .any(|s| s.status == SessionStatus::TempAccepted);
            if coord.is_running() && holds_seal {
                msgs.push(coord.decline_all()?);
            }
        }
        self.decided = Some(chosen.clone());
        Ok((chosen, msgs))
    }
}
