//! Advertisement repository and condition checker.
//!
//! The repository holds five tables: agents, products, attribute trees,
//! advertisements, and ongoing negotiations. Advertisements carry a
//! validity counter measured in broker ticks; an ad that reaches zero
//! without its agent having entered a negotiation for that product is
//! removed. The condition checker pairs buyer and seller ads by product
//! id and reports the agents' addresses so the parties can negotiate
//! directly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AdId, AgentId, AgentKind, EpisodeId, IssueId, ProductId};
use crate::valuation::{IssueNode, NonFunctionalAttributes};

#[derive(Debug, Error, PartialEq)]
pub enum BrokerError {
    #[error("agent {0} already registered")]
    DuplicateAgent(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("product {0} already registered")]
    DuplicateProduct(ProductId),
    #[error("unknown product {0}")]
    UnknownProduct(ProductId),
    #[error("advertisement {0} already submitted")]
    DuplicateAd(AdId),
    #[error("advertisement validity counter must be at least 1")]
    ZeroValidity,
    #[error("unknown episode {0}")]
    UnknownEpisode(EpisodeId),
    #[error("no chain to join for product {0}")]
    NoChainToJoin(ProductId),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent_id: AgentId,
    pub name: String,
    pub address: String,
    pub kind: AgentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: ProductId,
    pub product_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub product_id: ProductId,
    pub tree: IssueNode,
    /// Seller-advertised non-functional attributes per leaf issue, served
    /// to buyers that were not supplied their own.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub advertised_nfa: BTreeMap<IssueId, NonFunctionalAttributes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvertisementRecord {
    pub ad_id: AdId,
    pub product_id: ProductId,
    pub agent_id: AgentId,
    /// Remaining broker ticks before the ad is killed, unless a
    /// negotiation on its product has started for its agent.
    pub validity_counter: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OngoingNegotiationRecord {
    pub episode_id: EpisodeId,
    pub product_id: ProductId,
    pub participant_agent_ids: BTreeSet<AgentId>,
    pub offers_made: u64,
}

/// One matched advertisement together with its agent's directory entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedParty {
    pub ad_id: AdId,
    pub agent: AgentRecord,
}

/// A product for which the condition checker found at least one buyer
/// and one seller advertisement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchProposal {
    pub product_id: ProductId,
    pub buyers: Vec<MatchedParty>,
    pub sellers: Vec<MatchedParty>,
}

/// The advertisement repository. All mutating operations go through
/// `&mut self`, so callers serialize them naturally; share behind a lock
/// when accessed from several threads.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Repository {
    agents: BTreeMap<AgentId, AgentRecord>,
    products: BTreeMap<ProductId, ProductRecord>,
    attributes: BTreeMap<ProductId, AttributeRecord>,
    ads: BTreeMap<AdId, AdvertisementRecord>,
    ongoing: BTreeMap<EpisodeId, OngoingNegotiationRecord>,
    next_episode: u64,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_agent(&mut self, rec: AgentRecord) -> Result<AgentId, BrokerError> {
        if self.agents.contains_key(&rec.agent_id) {
            return Err(BrokerError::DuplicateAgent(rec.agent_id));
        }
        let id = rec.agent_id.clone();
        self.agents.insert(id.clone(), rec);
        Ok(id)
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentRecord> {
        self.agents.get(id)
    }

    pub fn register_product(
        &mut self,
        rec: ProductRecord,
        attributes: AttributeRecord,
    ) -> Result<ProductId, BrokerError> {
        if self.products.contains_key(&rec.product_id) {
            return Err(BrokerError::DuplicateProduct(rec.product_id));
        }
        let id = rec.product_id.clone();
        self.products.insert(id.clone(), rec);
        self.attributes.insert(id.clone(), attributes);
        Ok(id)
    }

    pub fn attributes(&self, product: &ProductId) -> Option<&AttributeRecord> {
        self.attributes.get(product)
    }

    /// The seller-advertised NFA map for a product, for buyers whose
    /// configuration did not supply one.
    pub fn advertised_nfa(
        &self,
        product: &ProductId,
    ) -> Option<&BTreeMap<IssueId, NonFunctionalAttributes>> {
        self.attributes.get(product).map(|a| &a.advertised_nfa)
    }

    pub fn submit_advertisement(&mut self, ad: AdvertisementRecord) -> Result<AdId, BrokerError> {
        if !self.agents.contains_key(&ad.agent_id) {
            return Err(BrokerError::UnknownAgent(ad.agent_id));
        }
        if !self.products.contains_key(&ad.product_id) {
            return Err(BrokerError::UnknownProduct(ad.product_id));
        }
        if ad.validity_counter == 0 {
            return Err(BrokerError::ZeroValidity);
        }
        if self.ads.contains_key(&ad.ad_id) {
            return Err(BrokerError::DuplicateAd(ad.ad_id));
        }
        let id = ad.ad_id.clone();
        self.ads.insert(id.clone(), ad);
        Ok(id)
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.keys()
    }

    pub fn ad_ids(&self) -> impl Iterator<Item = &AdId> {
        self.ads.keys()
    }

    pub fn advertisement(&self, id: &AdId) -> Option<&AdvertisementRecord> {
        self.ads.get(id)
    }

    fn negotiation_started(&self, ad: &AdvertisementRecord) -> bool {
        self.ongoing.values().any(|n| {
            n.product_id == ad.product_id && n.participant_agent_ids.contains(&ad.agent_id)
        })
    }

    /// One broker tick: decrements every live validity counter and kills
    /// ads that reach zero without a started negotiation. Returns the
    /// expired ad ids.
    pub fn tick(&mut self) -> Vec<AdId> {
        for ad in self.ads.values_mut() {
            if ad.validity_counter > 0 {
                ad.validity_counter -= 1;
            }
        }
        let expired: Vec<AdId> = self
            .ads
            .values()
            .filter(|ad| ad.validity_counter == 0 && !self.negotiation_started(ad))
            .map(|ad| ad.ad_id.clone())
            .collect();
        for id in &expired {
            self.ads.remove(id);
        }
        expired
    }

    /// Condition checker: one proposal per product with at least one
    /// buyer ad and at least one seller ad.
    pub fn match_advertisements(&self) -> Vec<MatchProposal> {
        let mut by_product: BTreeMap<&ProductId, (Vec<MatchedParty>, Vec<MatchedParty>)> =
            BTreeMap::new();
        for ad in self.ads.values() {
            let agent = match self.agents.get(&ad.agent_id) {
                Some(a) => a.clone(),
                None => continue,
            };
            let entry = by_product.entry(&ad.product_id).or_default();
            let party = MatchedParty {
                ad_id: ad.ad_id.clone(),
                agent,
            };
            match party.agent.kind {
                AgentKind::Buyer => entry.0.push(party),
                AgentKind::Seller => entry.1.push(party),
            }
        }
        by_product
            .into_iter()
            .filter(|(_, (buyers, sellers))| !buyers.is_empty() && !sellers.is_empty())
            .map(|(product_id, (buyers, sellers))| MatchProposal {
                product_id: product_id.clone(),
                buyers,
                sellers,
            })
            .collect()
    }

    /// Records the start of a negotiation episode so the participants'
    /// ads survive further ticks.
    pub fn open_episode(
        &mut self,
        product_id: &ProductId,
        participants: impl IntoIterator<Item = AgentId>,
    ) -> Result<EpisodeId, BrokerError> {
        if !self.products.contains_key(product_id) {
            return Err(BrokerError::UnknownProduct(product_id.clone()));
        }
        self.next_episode += 1;
        let id = EpisodeId::new(format!("ep-{}", self.next_episode));
        self.ongoing.insert(
            id.clone(),
            OngoingNegotiationRecord {
                episode_id: id.clone(),
                product_id: product_id.clone(),
                participant_agent_ids: participants.into_iter().collect(),
                offers_made: 0,
            },
        );
        Ok(id)
    }

    /// Adds a latecomer to an already running negotiation chain on the
    /// given product. Idempotent for an agent already present.
    pub fn join_ongoing(
        &mut self,
        agent_id: &AgentId,
        product_id: &ProductId,
    ) -> Result<EpisodeId, BrokerError> {
        if !self.agents.contains_key(agent_id) {
            return Err(BrokerError::UnknownAgent(agent_id.clone()));
        }
        let rec = self
            .ongoing
            .values_mut()
            .find(|n| n.product_id == *product_id)
            .ok_or_else(|| BrokerError::NoChainToJoin(product_id.clone()))?;
        rec.participant_agent_ids.insert(agent_id.clone());
        Ok(rec.episode_id.clone())
    }

    pub fn record_offer(&mut self, episode_id: &EpisodeId) -> Result<u64, BrokerError> {
        let rec = self
            .ongoing
            .get_mut(episode_id)
            .ok_or_else(|| BrokerError::UnknownEpisode(episode_id.clone()))?;
        rec.offers_made += 1;
        Ok(rec.offers_made)
    }

    pub fn ongoing(&self, episode_id: &EpisodeId) -> Option<&OngoingNegotiationRecord> {
        self.ongoing.get(episode_id)
    }

    /// Closes an episode. With `retire_ads` (a finalized deal) the
    /// participants' ads for the product are removed: their purpose is
    /// served. An aborted episode keeps its ads in play.
    pub fn close_episode(&mut self, episode_id: &EpisodeId, retire_ads: bool) -> Result<(), BrokerError> {
        let rec = self
            .ongoing
            .remove(episode_id)
            .ok_or_else(|| BrokerError::UnknownEpisode(episode_id.clone()))?;
        if retire_ads {
            self.ads.retain(|_, ad| {
                !(ad.product_id == rec.product_id
                    && rec.participant_agent_ids.contains(&ad.agent_id))
            });
        }
        Ok(())
    }

    /// Writes the whole repository as one JSON record per line.
    pub fn snapshot(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut emit = |rec: SnapshotRecord| -> std::io::Result<()> {
            let line = serde_json::to_string(&rec).expect("snapshot records serialize");
            writeln!(w, "{line}")
        };
        for a in self.agents.values() {
            emit(SnapshotRecord::Agent(a.clone()))?;
        }
        for p in self.products.values() {
            emit(SnapshotRecord::Product(p.clone()))?;
        }
        for a in self.attributes.values() {
            emit(SnapshotRecord::Attributes(a.clone()))?;
        }
        for ad in self.ads.values() {
            emit(SnapshotRecord::Advertisement(ad.clone()))?;
        }
        for n in self.ongoing.values() {
            emit(SnapshotRecord::Ongoing(n.clone()))?;
        }
        Ok(())
    }

    /// Rebuilds a repository from a snapshot stream.
    pub fn from_snapshot(r: impl BufRead) -> Result<Self, BrokerError> {
        let mut repo = Repository::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line.map_err(|e| BrokerError::Snapshot {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SnapshotRecord =
                serde_json::from_str(&line).map_err(|e| BrokerError::Snapshot {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            match rec {
                SnapshotRecord::Agent(a) => {
                    repo.agents.insert(a.agent_id.clone(), a);
                }
                SnapshotRecord::Product(p) => {
                    repo.products.insert(p.product_id.clone(), p);
                }
                SnapshotRecord::Attributes(a) => {
                    repo.attributes.insert(a.product_id.clone(), a);
                }
                SnapshotRecord::Advertisement(ad) => {
                    repo.ads.insert(ad.ad_id.clone(), ad);
                }
                SnapshotRecord::Ongoing(n) => {
                    let n_id: u64 = n
                        .episode_id
                        .as_str()
                        .strip_prefix("ep-")
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(0);
                    repo.next_episode = repo.next_episode.max(n_id);
                    repo.ongoing.insert(n.episode_id.clone(), n);
                }
            }
        }
        Ok(repo)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "table", rename_all = "snake_case")]
enum SnapshotRecord {
    Agent(AgentRecord),
    Product(ProductRecord),
    Attributes(AttributeRecord),
    Advertisement(AdvertisementRecord),
    Ongoing(OngoingNegotiationRecord),
}
