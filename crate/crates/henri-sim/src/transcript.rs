//! Transcript files: one line per committed event, replayable through
//! the protocol state machine.
//!
//! A transcript is a sequence of lines. Message lines use the wire
//! encoding verbatim. Control lines carry the events the wire does not:
//! the run header, round ticks, and the final per-episode summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use henri::ids::{AgentId, EpisodeId, IssueId};
use henri::protocol::{self, EpisodeState, MessageBody, NegotiationMessage, Outcome};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: EpisodeId,
    pub outcome: Outcome,
    pub rounds_used: u32,
    /// Last offered price per issue; absent when no offer landed.
    pub prices: BTreeMap<IssueId, f64>,
    /// Min/max payoff per participant, from the configured valuations.
    pub payoffs: BTreeMap<AgentId, (f64, f64)>,
    /// Sum of sealed prices; the final cost when the episode agreed.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "control", rename_all = "snake_case")]
pub enum ControlLine {
    Header { seed: u64 },
    Tick { episode: EpisodeId },
    Summary(EpisodeSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TranscriptLine {
    Message(NegotiationMessage),
    Control(ControlLine),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub lines: Vec<TranscriptLine>,
}

impl Transcript {
    pub fn push_message(&mut self, msg: NegotiationMessage) {
        self.lines.push(TranscriptLine::Message(msg));
    }

    pub fn push_control(&mut self, ctl: ControlLine) {
        self.lines.push(TranscriptLine::Control(ctl));
    }

    pub fn summaries(&self) -> Vec<&EpisodeSummary> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                TranscriptLine::Control(ControlLine::Summary(s)) => Some(s),
                _ => None,
            })
            .collect()
    }

    pub fn messages(&self) -> impl Iterator<Item = &NegotiationMessage> {
        self.lines.iter().filter_map(|l| match l {
            TranscriptLine::Message(m) => Some(m),
            _ => None,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            match line {
                TranscriptLine::Message(m) => out.push_str(&protocol::encode(m)),
                TranscriptLine::Control(c) => {
                    let _ = writeln!(
                        out,
                        "{}",
                        serde_json::to_string(c).expect("control lines serialize")
                    );
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Transcript, SimError> {
        let mut lines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            lines.push(parse_line(raw, idx + 1)?);
        }
        Ok(Transcript { lines })
    }
}

fn parse_line(raw: &str, number: usize) -> Result<TranscriptLine, SimError> {
    let probe: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| SimError::TranscriptParse {
            line: number,
            reason: e.to_string(),
        })?;
    if probe.get("control").is_some() {
        let ctl = serde_json::from_value(probe).map_err(|e| SimError::TranscriptParse {
            line: number,
            reason: e.to_string(),
        })?;
        Ok(TranscriptLine::Control(ctl))
    } else {
        let msg = protocol::decode(raw).map_err(|e| SimError::TranscriptParse {
            line: number,
            reason: e.to_string(),
        })?;
        Ok(TranscriptLine::Message(msg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// Line number and description of the first divergence, if any.
    pub first_divergence: Option<(usize, String)>,
    pub episodes: BTreeMap<EpisodeId, EpisodeState>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.first_divergence.is_none()
    }
}

/// Re-applies every transcript line through the protocol state machine
/// and verifies each recorded summary against the reconstructed
/// episode. Stops at the first divergence.
pub fn replay(text: &str) -> Result<ReplayReport, SimError> {
    let mut episodes: BTreeMap<EpisodeId, EpisodeState> = BTreeMap::new();
    let mut divergence = None;

    'lines: for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line = parse_line(raw, number)?;
        let mut diverge = |reason: String| {
            divergence.get_or_insert((number, reason));
        };
        match line {
            TranscriptLine::Message(msg) => {
                let Some(episode_id) = msg.episode.clone() else {
                    continue; // pre-episode traffic carries no state
                };
                if let MessageBody::ConnectThread {
                    participants,
                    max_rounds,
                    ..
                } = &msg.body
                {
                    if !episodes.contains_key(&episode_id) {
                        episodes.insert(
                            episode_id.clone(),
                            EpisodeState::new(
                                episode_id.clone(),
                                participants.iter().cloned(),
                                *max_rounds,
                            ),
                        );
                    }
                }
                let Some(ep) = episodes.get_mut(&episode_id) else {
                    diverge(format!("message for unknown episode {episode_id}"));
                    break 'lines;
                };
                match ep.apply(&msg) {
                    Ok(next) => *ep = next,
                    Err(e) => {
                        diverge(format!("illegal message: {e}"));
                        break 'lines;
                    }
                }
            }
            TranscriptLine::Control(ControlLine::Header { .. }) => {}
            TranscriptLine::Control(ControlLine::Tick { episode }) => {
                let Some(ep) = episodes.get_mut(&episode) else {
                    diverge(format!("tick for unknown episode {episode}"));
                    break 'lines;
                };
                match ep.tick_round() {
                    Ok(next) => *ep = next,
                    Err(e) => {
                        diverge(format!("illegal tick: {e}"));
                        break 'lines;
                    }
                }
            }
            TranscriptLine::Control(ControlLine::Summary(summary)) => {
                let Some(ep) = episodes.get(&summary.episode) else {
                    diverge(format!("summary for unknown episode {}", summary.episode));
                    break 'lines;
                };
                if ep.outcome != summary.outcome {
                    diverge(format!(
                        "outcome {:?} does not match replayed {:?}",
                        summary.outcome, ep.outcome
                    ));
                    break 'lines;
                }
                if ep.rounds_used != summary.rounds_used {
                    diverge(format!(
                        "rounds_used {} does not match replayed {}",
                        summary.rounds_used, ep.rounds_used
                    ));
                    break 'lines;
                }
                let replayed: BTreeMap<IssueId, f64> = ep
                    .issue_sessions
                    .iter()
                    .filter_map(|(k, s)| s.last_offer_price.map(|p| (k.clone(), p)))
                    .collect();
                if replayed != summary.prices {
                    diverge("final per-issue prices do not match replay".into());
                    break 'lines;
                }
            }
        }
    }
    Ok(ReplayReport {
        first_divergence: divergence,
        episodes,
    })
}
