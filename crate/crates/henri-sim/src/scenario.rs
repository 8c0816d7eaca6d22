//! Scenario files: the declarative input of a simulation run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use henri::agent::ValuationSource;
use henri::ids::{AdId, AgentId, AgentKind, IssueId, ProductId};
use henri::valuation::{IssueNode, NonFunctionalAttributes};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProduct {
    pub product_id: ProductId,
    pub product_name: String,
    pub tree: IssueNode,
    /// NFA maps the seller advertises; served to buyers that bring none.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub advertised_nfa: BTreeMap<IssueId, NonFunctionalAttributes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub agent_id: AgentId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub address: String,
    pub kind: AgentKind,
    pub product_id: ProductId,
    pub max_rounds: u32,
    pub valuations: ValuationSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAd {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ad_id: Option<AdId>,
    pub agent_id: AgentId,
    pub product_id: ProductId,
    pub validity: u32,
}

fn default_opener() -> AgentKind {
    AgentKind::Seller
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transport: Transport,
    /// Which side makes the first offer of every round.
    #[serde(default = "default_opener")]
    pub opener: AgentKind,
    pub products: Vec<ScenarioProduct>,
    pub agents: Vec<ScenarioAgent>,
    pub advertisements: Vec<ScenarioAd>,
    /// Broker ticks to run before matching, so short-lived ads can
    /// expire ahead of episode formation.
    #[serde(default)]
    pub pre_match_ticks: u32,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Scenario, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Load {
            field: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Scenario::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Scenario, SimError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| SimError::Load {
            field: "scenario".into(),
            reason: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Checks that every reference resolves; errors name the offending
    /// field path.
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |field: String, reason: &str| {
            Err(SimError::Load {
                field,
                reason: reason.to_owned(),
            })
        };
        let mut product_ids = BTreeSet::new();
        for (i, p) in self.products.iter().enumerate() {
            if !product_ids.insert(&p.product_id) {
                return fail(format!("products[{i}].product_id"), "duplicate product id");
            }
            p.tree.validate().map_err(|e| SimError::Load {
                field: format!("products[{i}].tree"),
                reason: e.to_string(),
            })?;
            let leaves: BTreeSet<_> = p.tree.leaves().iter().map(|n| n.id.clone()).collect();
            for issue in p.advertised_nfa.keys() {
                if !leaves.contains(issue) {
                    return fail(
                        format!("products[{i}].advertised_nfa.{issue}"),
                        "no such leaf issue in the product tree",
                    );
                }
            }
        }
        let mut agent_ids = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if !agent_ids.insert(&a.agent_id) {
                return fail(format!("agents[{i}].agent_id"), "duplicate agent id");
            }
            if !product_ids.contains(&a.product_id) {
                return fail(format!("agents[{i}].product_id"), "unknown product");
            }
            if a.max_rounds == 0 {
                return fail(format!("agents[{i}].max_rounds"), "must be at least 1");
            }
        }
        for (i, ad) in self.advertisements.iter().enumerate() {
            if !agent_ids.contains(&ad.agent_id) {
                return fail(format!("advertisements[{i}].agent_id"), "unknown agent");
            }
            if !product_ids.contains(&ad.product_id) {
                return fail(format!("advertisements[{i}].product_id"), "unknown product");
            }
            if ad.validity == 0 {
                return fail(format!("advertisements[{i}].validity"), "must be at least 1");
            }
        }
        Ok(())
    }

    pub fn product(&self, id: &ProductId) -> Option<&ScenarioProduct> {
        self.products.iter().find(|p| &p.product_id == id)
    }

    pub fn agent(&self, id: &AgentId) -> Option<&ScenarioAgent> {
        self.agents.iter().find(|a| &a.agent_id == id)
    }
}
