//! Deterministic scenario execution: register, advertise, match, drive
//! every episode to quiescence, then settle the finalize decisions.

use std::collections::BTreeMap;

use henri::agent::{AgentConfig, Coordinator, MasterCoordinator};
use henri::valuation::IssueValuation;
use henri::broker::{
    AdvertisementRecord, AgentRecord, AttributeRecord, ProductRecord, Repository,
};
use henri::ids::{AdId, AgentId, AgentKind, EpisodeId, IssueId, ProductId};
use henri::protocol::{
    EpisodeState, MessageBody, NegotiationMessage, Outcome, SessionStatus,
};
use henri::valuation::{max_payoff, min_payoff};

use crate::scenario::{Scenario, Transport};
use crate::transcript::{ControlLine, EpisodeSummary, Transcript};
use crate::SimError;

/// One side of an episode as seen by the driving side. The in-process
/// peer is a plain coordinator; the TCP peer proxies one over a socket.
pub(crate) trait Peer {
    /// Asks the peer to open the round; `None` when it has nothing open.
    fn open_round(&mut self) -> Result<Option<NegotiationMessage>, SimError>;
    /// Delivers one message; returns the messages the peer emits in
    /// response (accepts, and a counter-offer when it has not offered
    /// this round yet).
    fn deliver(&mut self, msg: &NegotiationMessage) -> Result<Vec<NegotiationMessage>, SimError>;
    fn tick(&mut self) -> Result<(), SimError>;
    /// Tears the link down; the in-process peer hands its coordinator
    /// back.
    fn close(self: Box<Self>) -> Result<Option<Coordinator>, SimError>;
}

/// Responder-side round logic, shared by the in-process peer and the
/// remote end of the TCP link.
pub(crate) struct ResponderState {
    pub coord: Coordinator,
    offered_this_round: bool,
}

impl ResponderState {
    pub fn new(coord: Coordinator) -> Self {
        ResponderState {
            coord,
            offered_this_round: false,
        }
    }

    pub fn open_round(&mut self) -> Result<Option<NegotiationMessage>, SimError> {
        let offer = self.coord.offer_for_round()?;
        self.offered_this_round = offer.is_some();
        Ok(offer)
    }

    pub fn deliver(
        &mut self,
        msg: &NegotiationMessage,
    ) -> Result<Vec<NegotiationMessage>, SimError> {
        self.coord.receive(msg)?;
        let mut out = Vec::new();
        if let MessageBody::Offer { prices } | MessageBody::CounterOffer { prices } = &msg.body {
            out.extend(self.coord.respond_to_offer(prices)?);
            if !self.offered_this_round
                && !self.coord.episode.is_terminal()
                && self.coord.episode.open_issues().next().is_some()
            {
                if let Some(counter) = self.coord.offer_for_round()? {
                    self.offered_this_round = true;
                    out.push(counter);
                }
            }
        }
        Ok(out)
    }

    pub fn tick(&mut self) -> Result<(), SimError> {
        self.coord.tick()?;
        self.offered_this_round = false;
        Ok(())
    }
}

struct InprocPeer(ResponderState);

impl Peer for InprocPeer {
    fn open_round(&mut self) -> Result<Option<NegotiationMessage>, SimError> {
        self.0.open_round()
    }

    fn deliver(&mut self, msg: &NegotiationMessage) -> Result<Vec<NegotiationMessage>, SimError> {
        self.0.deliver(msg)
    }

    fn tick(&mut self) -> Result<(), SimError> {
        self.0.tick()
    }

    fn close(self: Box<Self>) -> Result<Option<Coordinator>, SimError> {
        Ok(Some(self.0.coord))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EpisodePlan {
    episode_id: EpisodeId,
    product_id: ProductId,
    buyer: AgentId,
    seller: AgentId,
}

impl EpisodePlan {
    fn agent_of(&self, kind: AgentKind) -> &AgentId {
        match kind {
            AgentKind::Buyer => &self.buyer,
            AgentKind::Seller => &self.seller,
        }
    }

    fn other(&self, id: &AgentId) -> &AgentId {
        if id == &self.buyer {
            &self.seller
        } else {
            &self.buyer
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub transcript: Transcript,
    pub summaries: Vec<EpisodeSummary>,
    /// Finalize decisions: deciding agent -> chosen counterpart.
    pub decisions: BTreeMap<AgentId, AgentId>,
    pub repository: Repository,
}

impl RunReport {
    /// True when at least one episode ended in agreement and no agent
    /// with a sealed settlement was left undecided.
    pub fn agreed(&self) -> bool {
        !self.decisions.is_empty()
            && self
                .summaries
                .iter()
                .any(|s| s.outcome == Outcome::Agreed)
    }

    pub fn render_transcript(&self) -> String {
        self.transcript.render()
    }
}

pub fn run(scenario: &Scenario) -> Result<RunReport, SimError> {
    scenario.validate()?;
    let mut repo = Repository::new();
    let mut transcript = Transcript::default();
    transcript.push_control(ControlLine::Header {
        seed: std::env::var("HENRI_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(scenario.seed),
    });

    for p in &scenario.products {
        repo.register_product(
            ProductRecord {
                product_id: p.product_id.clone(),
                product_name: p.product_name.clone(),
            },
            AttributeRecord {
                product_id: p.product_id.clone(),
                tree: p.tree.clone(),
                advertised_nfa: p.advertised_nfa.clone(),
            },
        )?;
    }
    for a in &scenario.agents {
        let address = if a.address.is_empty() {
            format!("inproc://{}", a.agent_id)
        } else {
            a.address.clone()
        };
        repo.register_agent(AgentRecord {
            agent_id: a.agent_id.clone(),
            name: if a.name.is_empty() {
                a.agent_id.as_str().to_owned()
            } else {
                a.name.clone()
            },
            address: address.clone(),
            kind: a.kind,
        })?;
        transcript.push_message(NegotiationMessage::new(
            None,
            a.agent_id.clone(),
            0,
            MessageBody::SendIdentity { address },
        ));
    }
    for (i, ad) in scenario.advertisements.iter().enumerate() {
        let ad_id = ad
            .ad_id
            .clone()
            .unwrap_or_else(|| AdId::new(format!("ad-{}", i + 1)));
        repo.submit_advertisement(AdvertisementRecord {
            ad_id,
            product_id: ad.product_id.clone(),
            agent_id: ad.agent_id.clone(),
            validity_counter: ad.validity,
        })?;
        transcript.push_message(NegotiationMessage::new(
            None,
            ad.agent_id.clone(),
            0,
            MessageBody::SendAdvertisement {
                product_id: ad.product_id.clone(),
                validity: ad.validity,
            },
        ));
    }
    for _ in 0..scenario.pre_match_ticks {
        repo.tick();
    }

    // resolve every agent's per-issue valuations up front
    let mut valuations: BTreeMap<AgentId, Vec<IssueValuation>> = BTreeMap::new();
    for a in &scenario.agents {
        let product = scenario.product(&a.product_id).expect("validated");
        let cfg = AgentConfig {
            agent_id: a.agent_id.clone(),
            kind: a.kind,
            tree: product.tree.clone(),
            valuations: a.valuations.clone(),
            max_rounds: a.max_rounds,
        };
        let advertised = repo
            .advertised_nfa(&a.product_id)
            .cloned()
            .unwrap_or_default();
        valuations.insert(a.agent_id.clone(), cfg.resolve_valuations(&advertised)?);
    }

    // condition checker: form one episode per matched buyer-seller pair
    let mut plans = Vec::new();
    for proposal in repo.match_advertisements() {
        for buyer in &proposal.buyers {
            for seller in &proposal.sellers {
                let episode_id = repo.open_episode(
                    &proposal.product_id,
                    [buyer.agent.agent_id.clone(), seller.agent.agent_id.clone()],
                )?;
                plans.push(EpisodePlan {
                    episode_id,
                    product_id: proposal.product_id.clone(),
                    buyer: buyer.agent.agent_id.clone(),
                    seller: seller.agent.agent_id.clone(),
                });
            }
        }
    }

    let mut drivers: BTreeMap<EpisodeId, Coordinator> = BTreeMap::new();
    let mut peers: BTreeMap<EpisodeId, Box<dyn Peer>> = BTreeMap::new();

    for plan in &plans {
        let buyer_cfg = scenario.agent(&plan.buyer).expect("validated");
        let seller_cfg = scenario.agent(&plan.seller).expect("validated");
        let product = scenario.product(&plan.product_id).expect("validated");
        let max_rounds = buyer_cfg.max_rounds.min(seller_cfg.max_rounds);

        let base = EpisodeState::new(
            plan.episode_id.clone(),
            [plan.buyer.clone(), plan.seller.clone()],
            max_rounds,
        );
        let opener_agent = plan.agent_of(scenario.opener).clone();
        let connect = NegotiationMessage::new(
            Some(plan.episode_id.clone()),
            opener_agent,
            0,
            MessageBody::ConnectThread {
                issues: product.tree.leaves().iter().map(|n| n.id.clone()).collect(),
                participants: vec![plan.buyer.clone(), plan.seller.clone()],
                max_rounds,
            },
        );
        let connected = base.apply(&connect)?;
        transcript.push_message(connect);

        let mk = |id: &AgentId, kind: AgentKind| -> Result<Coordinator, SimError> {
            Ok(Coordinator::new(
                id.clone(),
                kind,
                plan.other(id).clone(),
                connected.clone(),
                &valuations[id],
            )?)
        };
        // the buyer side drives; the seller side responds
        let driver = mk(&plan.buyer, AgentKind::Buyer)?;
        let responder = mk(&plan.seller, AgentKind::Seller)?;
        let peer: Box<dyn Peer> = match scenario.transport {
            Transport::Inproc => Box::new(InprocPeer(ResponderState::new(responder))),
            Transport::Tcp => Box::new(crate::net::TcpPeer::spawn(responder)?),
        };
        drivers.insert(plan.episode_id.clone(), driver);
        peers.insert(plan.episode_id.clone(), peer);
    }

    // episode loop: drive each pair to quiescence
    for plan in &plans {
        let driver = drivers.get_mut(&plan.episode_id).expect("planned");
        let peer = peers.get_mut(&plan.episode_id).expect("planned");
        let driver_opens = scenario.opener == AgentKind::Buyer;
        drive_episode(driver, peer.as_mut(), driver_opens, &mut transcript, &mut repo)?;
    }

    // settlement: masters decide, declines and finalizes propagate
    let mut decisions = BTreeMap::new();
    match scenario.transport {
        Transport::Inproc => {
            let mut coords: Vec<Coordinator> = Vec::new();
            for plan in &plans {
                coords.push(drivers.remove(&plan.episode_id).expect("planned"));
                let peer = peers.remove(&plan.episode_id).expect("planned");
                coords.push(peer.close()?.expect("inproc peer returns its coordinator"));
            }
            let mut masters: BTreeMap<AgentId, MasterCoordinator> = BTreeMap::new();
            for coord in coords {
                masters
                    .entry(coord.self_id.clone())
                    .or_insert_with(|| MasterCoordinator::new(coord.self_id.clone(), coord.role))
                    .add_coordinator(coord);
            }
            settle_inproc(&mut masters, &plans, &mut transcript, &mut decisions)?;
            // pull the episode end states back out for the summaries
            for plan in &plans {
                let m = &masters[&plan.buyer];
                drivers.insert(plan.episode_id.clone(), m.coordinators[&plan.seller].clone());
            }
        }
        Transport::Tcp => {
            // only the driving buyers decide; responders follow the wire
            let mut masters: BTreeMap<AgentId, MasterCoordinator> = BTreeMap::new();
            for plan in &plans {
                let coord = drivers.remove(&plan.episode_id).expect("planned");
                masters
                    .entry(plan.buyer.clone())
                    .or_insert_with(|| {
                        MasterCoordinator::new(plan.buyer.clone(), AgentKind::Buyer)
                    })
                    .add_coordinator(coord);
            }
            for (buyer, master) in masters.iter_mut() {
                master.note_progress();
                if master.decided.is_some()
                    || !master.coordinators.values().any(|c| c.fully_accepted())
                {
                    continue;
                }
                let (chosen, msgs) = master.select_and_finalize()?;
                decisions.insert(buyer.clone(), chosen);
                for msg in msgs {
                    let episode = msg.episode.clone().expect("settlement is episodic");
                    if msg.kind() == "FINALIZE" {
                        // the remote seller seals on receipt
                        let plan = plans
                            .iter()
                            .find(|p| p.episode_id == episode)
                            .expect("planned");
                        decisions
                            .entry(plan.seller.clone())
                            .or_insert_with(|| plan.buyer.clone());
                    }
                    peers
                        .get_mut(&episode)
                        .expect("planned")
                        .deliver(&msg)?;
                    transcript.push_message(msg);
                }
            }
            for plan in &plans {
                let m = &masters[&plan.buyer];
                drivers.insert(plan.episode_id.clone(), m.coordinators[&plan.seller].clone());
            }
            for (_, peer) in std::mem::take(&mut peers) {
                peer.close()?;
            }
        }
    }

    // summaries and broker bookkeeping
    let mut summaries = Vec::new();
    for plan in &plans {
        let episode = &drivers[&plan.episode_id].episode;
        let payoffs: BTreeMap<AgentId, (f64, f64)> = [&plan.buyer, &plan.seller]
            .into_iter()
            .map(|id| {
                let vs = &valuations[id];
                ((*id).clone(), (min_payoff(vs).unwrap(), max_payoff(vs).unwrap()))
            })
            .collect();
        let summary = EpisodeSummary {
            episode: plan.episode_id.clone(),
            outcome: episode.outcome,
            rounds_used: episode.rounds_used,
            prices: episode
                .issue_sessions
                .iter()
                .filter_map(|(k, s)| s.last_offer_price.map(|p| (k.clone(), p)))
                .collect(),
            payoffs,
            total: episode.accepted_total(),
        };
        repo.close_episode(&plan.episode_id, episode.outcome == Outcome::Agreed)?;
        transcript.push_control(ControlLine::Summary(summary.clone()));
        summaries.push(summary);
    }

    Ok(RunReport {
        transcript,
        summaries,
        decisions,
        repository: repo,
    })
}

fn offer_prices(msg: &NegotiationMessage) -> Option<&BTreeMap<IssueId, f64>> {
    match &msg.body {
        MessageBody::Offer { prices } | MessageBody::CounterOffer { prices } => Some(prices),
        _ => None,
    }
}

/// Runs one episode until it is fully sealed, terminal, or out of
/// rounds. The driving side is the buyer; `driver_opens` selects which
/// side offers first each round.
fn drive_episode(
    driver: &mut Coordinator,
    peer: &mut dyn Peer,
    driver_opens: bool,
    transcript: &mut Transcript,
    repo: &mut Repository,
) -> Result<(), SimError> {
    let episode_id = driver.episode.episode_id.clone();
    loop {
        if driver.episode.is_terminal() || driver.fully_accepted() {
            break;
        }
        if driver_opens {
            let Some(offer) = driver.offer_for_round()? else {
                break;
            };
            repo.record_offer(&episode_id)?;
            let replies = peer.deliver(&offer)?;
            transcript.push_message(offer);
            for reply in replies {
                if offer_prices(&reply).is_some() {
                    repo.record_offer(&episode_id)?;
                    driver.receive(&reply)?;
                    let prices = offer_prices(&reply).expect("checked").clone();
                    transcript.push_message(reply);
                    for accept in driver.respond_to_offer(&prices)? {
                        peer.deliver(&accept)?;
                        transcript.push_message(accept);
                    }
                } else {
                    driver.receive(&reply)?;
                    transcript.push_message(reply);
                }
            }
        } else if let Some(offer) = peer.open_round()? {
            repo.record_offer(&episode_id)?;
            driver.receive(&offer)?;
            let prices = offer_prices(&offer).expect("openers offer").clone();
            transcript.push_message(offer);
            for accept in driver.respond_to_offer(&prices)? {
                peer.deliver(&accept)?;
                transcript.push_message(accept);
            }
            if driver.episode.open_issues().next().is_some() {
                if let Some(counter) = driver.offer_for_round()? {
                    repo.record_offer(&episode_id)?;
                    let replies = peer.deliver(&counter)?;
                    transcript.push_message(counter);
                    for reply in replies {
                        driver.receive(&reply)?;
                        transcript.push_message(reply);
                    }
                }
            }
        } else {
            break;
        }
        if driver.episode.is_terminal() || driver.fully_accepted() {
            break;
        }
        driver.tick()?;
        peer.tick()?;
        transcript.push_control(ControlLine::Tick {
            episode: episode_id.clone(),
        });
    }
    Ok(())
}

/// In-process settlement: agents with the most counterparts decide
/// first (buyers win ties), and a received FINALIZE seals the receiving
/// master too, declining its remaining sealed coordinators.
fn settle_inproc(
    masters: &mut BTreeMap<AgentId, MasterCoordinator>,
    plans: &[EpisodePlan],
    transcript: &mut Transcript,
    decisions: &mut BTreeMap<AgentId, AgentId>,
) -> Result<(), SimError> {
    let pair_other = |episode: &EpisodeId, from: &AgentId| -> AgentId {
        plans
            .iter()
            .find(|p| &p.episode_id == episode)
            .expect("episode planned")
            .other(from)
            .clone()
    };

    let mut order: Vec<AgentId> = masters.keys().cloned().collect();
    order.sort_by_key(|id| {
        let m = &masters[id];
        (
            std::cmp::Reverse(m.coordinators.len()),
            m.role == AgentKind::Seller,
            id.clone(),
        )
    });

    for decider in order {
        {
            let master = masters.get_mut(&decider).expect("ordered from keys");
            master.note_progress();
            if master.decided.is_some()
                || !master.coordinators.values().any(|c| c.fully_accepted())
            {
                continue;
            }
        }
        let (chosen, msgs) = masters
            .get_mut(&decider)
            .expect("ordered from keys")
            .select_and_finalize()?;
        decisions.insert(decider.clone(), chosen);

        let mut queue: Vec<(AgentId, NegotiationMessage)> = Vec::new();
        for msg in msgs {
            let to = pair_other(msg.episode.as_ref().expect("episodic"), &decider);
            transcript.push_message(msg.clone());
            queue.push((to, msg));
        }
        while let Some((to, msg)) = queue.pop() {
            let from = msg.sender.clone();
            let Some(master) = masters.get_mut(&to) else {
                continue;
            };
            if let Some(coord) = master.coordinators.get_mut(&from) {
                coord.receive(&msg)?;
            }
            if msg.kind() == "FINALIZE" && master.decided.is_none() {
                master.decided = Some(from.clone());
                decisions.entry(to.clone()).or_insert(from.clone());
                // the deal is done; withdraw from everyone else
                let others: Vec<AgentId> = master
                    .coordinators
                    .values()
                    .filter(|c| {
                        c.counterpart != from
                            && c.is_running()
                            && c.episode
                                .issue_sessions
                                .values()
                                .any(|s| s.status == SessionStatus::TempAccepted)
                    })
                    .map(|c| c.counterpart.clone())
                    .collect();
                for cp in others {
                    let decline = master
                        .coordinators
                        .get_mut(&cp)
                        .expect("listed above")
                        .decline_all()?;
                    transcript.push_message(decline.clone());
                    queue.push((cp, decline));
                }
            }
        }
    }
    Ok(())
}
