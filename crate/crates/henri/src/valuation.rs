//! Utility and payoff arithmetic for multi-issue negotiation.
//!
//! Everything here is pure: utilities and bounds are computed from issue
//! valuations, acceptance is a bound check, and per-round concession is a
//! linear decay (seller) or raise (buyer) of the current utility, clamped
//! to the issue's `[u_min, u_max]` interval. The per-round penalty λ is
//! derived so that one concession step over all open issues moves the
//! aggregate utility by `(Σ gap) / rounds_remaining`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::IssueId;

#[derive(Debug, Error, PartialEq)]
pub enum ValuationError {
    #[error("no issues")]
    NoIssues,
    #[error("degenerate open set: sum of u_current/weight is not positive")]
    DegenerateOpenSet,
    #[error("duplicate issue id {0} in product tree")]
    DuplicateIssueId(IssueId),
    #[error("invalid valuation for issue {issue}: {reason}")]
    InvalidValuation { issue: IssueId, reason: String },
}

/// One node of a product's hierarchical issue tree. A node with no
/// children is a negotiable issue; interior nodes only group sub-issues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueNode {
    pub id: IssueId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<IssueNode>,
}

impl IssueNode {
    pub fn leaf(id: impl Into<IssueId>, name: impl Into<String>) -> Self {
        IssueNode {
            id: id.into(),
            name: name.into(),
            children: Vec::new(),
        }
    }

    pub fn branch(
        id: impl Into<IssueId>,
        name: impl Into<String>,
        children: Vec<IssueNode>,
    ) -> Self {
        IssueNode {
            id: id.into(),
            name: name.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// All negotiable issues of the tree, in depth-first order.
    pub fn leaves(&self) -> Vec<&IssueNode> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a IssueNode>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for child in &self.children {
                child.collect_leaves(out);
            }
        }
    }

    /// Checks that every id in the tree is unique.
    pub fn validate(&self) -> Result<(), ValuationError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if !seen.insert(&node.id) {
                return Err(ValuationError::DuplicateIssueId(node.id.clone()));
            }
            stack.extend(node.children.iter());
        }
        Ok(())
    }
}

/// Named positive multipliers (e.g. updates, scope of protection) that
/// scale an issue's utility. The product of an empty map is 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NonFunctionalAttributes {
    pub entries: BTreeMap<String, f64>,
}

impl NonFunctionalAttributes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, multiplier: f64) -> Self {
        self.entries.insert(name.into(), multiplier);
        self
    }

    pub fn product(&self) -> f64 {
        self.entries.values().product()
    }

    pub fn is_valid(&self) -> bool {
        self.entries.values().all(|m| m.is_finite() && *m > 0.0)
    }
}

/// Per-issue economic data held by the valuing side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueValuation {
    pub issue_id: IssueId,
    pub actual_cost: f64,
    pub cost_with_margin: f64,
    /// Priority of the issue. Participates both as a utility multiplier
    /// and as the denominator of the concession step.
    pub weight: f64,
    #[serde(default, skip_serializing_if = "nfa_is_empty")]
    pub nfa: NonFunctionalAttributes,
}

fn nfa_is_empty(nfa: &NonFunctionalAttributes) -> bool {
    nfa.entries.is_empty()
}

impl IssueValuation {
    pub fn validate(&self) -> Result<(), ValuationError> {
        let fail = |reason: &str| {
            Err(ValuationError::InvalidValuation {
                issue: self.issue_id.clone(),
                reason: reason.to_owned(),
            })
        };
        if !(self.actual_cost.is_finite() && self.actual_cost >= 0.0) {
            return fail("actual_cost must be finite and non-negative");
        }
        if !(self.cost_with_margin.is_finite() && self.cost_with_margin >= 0.0) {
            return fail("cost_with_margin must be finite and non-negative");
        }
        if self.actual_cost > self.cost_with_margin {
            return fail("actual_cost exceeds cost_with_margin");
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return fail("weight must be positive");
        }
        if !self.nfa.is_valid() {
            return fail("non-functional attribute multipliers must be positive");
        }
        Ok(())
    }

    pub fn bounds(&self) -> UtilityBounds {
        UtilityBounds {
            u_min: compute_u_min(self),
            u_max: compute_u_max(self),
        }
    }
}

/// The acceptable price interval for one issue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityBounds {
    pub u_min: f64,
    pub u_max: f64,
}

impl UtilityBounds {
    pub fn new(u_min: f64, u_max: f64) -> Self {
        UtilityBounds { u_min, u_max }
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.max(self.u_min).min(self.u_max)
    }
}

/// Per-issue concession tracking: the current utility position inside
/// the issue's bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcessionState {
    pub issue_id: IssueId,
    pub u_current: f64,
    pub bounds: UtilityBounds,
    pub weight: f64,
}

/// Minimum utility of an issue: weight times the product of the
/// non-functional attributes times the actual cost.
pub fn compute_u_min(v: &IssueValuation) -> f64 {
    v.nfa.product() * v.weight * v.actual_cost
}

/// Maximum utility of an issue: weight times the product of the
/// non-functional attributes times the cost with margin.
pub fn compute_u_max(v: &IssueValuation) -> f64 {
    v.nfa.product() * v.weight * v.cost_with_margin
}

/// Minimum payoff: the sum of minimum utilities over all issues.
pub fn min_payoff(vs: &[IssueValuation]) -> Result<f64, ValuationError> {
    if vs.is_empty() {
        return Err(ValuationError::NoIssues);
    }
    Ok(vs.iter().map(compute_u_min).sum())
}

/// Maximum payoff: the sum of maximum utilities over all issues.
pub fn max_payoff(vs: &[IssueValuation]) -> Result<f64, ValuationError> {
    if vs.is_empty() {
        return Err(ValuationError::NoIssues);
    }
    Ok(vs.iter().map(compute_u_max).sum())
}

/// A seller takes an offered price iff it is at least its minimum utility.
pub fn seller_accepts(offered_price: f64, bounds: &UtilityBounds) -> bool {
    offered_price >= bounds.u_min
}

/// A buyer takes an asked price iff it is at most its maximum utility.
pub fn buyer_accepts(asked_price: f64, bounds: &UtilityBounds) -> bool {
    asked_price <= bounds.u_max
}

/// Seller-side concession step for round `t` (1-based):
/// `u_new = u_old * (1 - λ t / w)`, clamped to the issue bounds so the
/// seller concedes toward, never past, its floor.
pub fn decay_utility(s: &ConcessionState, lambda: f64, t: u32) -> f64 {
    s.bounds
        .clamp(s.u_current * (1.0 - lambda * t as f64 / s.weight))
}

/// Buyer-side mirror of [`decay_utility`]:
/// `u_new = u_old * (1 + λ t / w)`, clamped at the ceiling.
pub fn raise_utility(s: &ConcessionState, lambda: f64, t: u32) -> f64 {
    s.bounds
        .clamp(s.u_current * (1.0 + lambda * t as f64 / s.weight))
}

/// Derives the per-round penalty λ over the issues still open:
///
/// ```text
/// λ = [ Σ (u_max_i − u_min_i) / rounds_remaining ] / Σ (u_current_i / w_i)
/// ```
///
/// With this λ, one concession step at `t = 1` applied to every open
/// issue moves the aggregate utility by `(Σ gap) / rounds_remaining`
/// before clamping.
pub fn derive_lambda(open_issues: &[ConcessionState], rounds_remaining: u32) -> Result<f64, ValuationError> {
    if open_issues.is_empty() {
        return Err(ValuationError::NoIssues);
    }
    assert!(rounds_remaining >= 1, "rounds_remaining must be at least 1");
    let gap: f64 = open_issues
        .iter()
        .map(|s| s.bounds.u_max - s.bounds.u_min)
        .sum();
    let rate: f64 = open_issues.iter().map(|s| s.u_current / s.weight).sum();
    if rate.is_nan() || rate <= 0.0 {
        return Err(ValuationError::DegenerateOpenSet);
    }
    Ok((gap / rounds_remaining as f64) / rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn antivirus_nfa() -> NonFunctionalAttributes {
        NonFunctionalAttributes::new()
            .with("updates", 1.0)
            .with("scope_of_protection", 0.9)
    }

    fn seller_issue() -> IssueValuation {
        IssueValuation {
            issue_id: "compressed_file".into(),
            actual_cost: 15.0,
            cost_with_margin: 17.0,
            weight: 8.0,
            nfa: antivirus_nfa(),
        }
    }

    fn buyer_issue() -> IssueValuation {
        IssueValuation {
            issue_id: "compressed_file".into(),
            actual_cost: 4.0,
            cost_with_margin: 6.0,
            weight: 8.0,
            nfa: antivirus_nfa(),
        }
    }

    #[test]
    fn u_min_includes_weight_and_nfa_product() {
        // 15.0 x 8.0 x 1 x 0.9
        assert!((compute_u_min(&seller_issue()) - 108.0).abs() < 1e-9);
        assert!((compute_u_min(&buyer_issue()) - 28.8).abs() < 1e-9);
    }

    #[test]
    fn u_max_includes_weight_and_nfa_product() {
        assert!((compute_u_max(&seller_issue()) - 122.4).abs() < 1e-4);
        assert!((compute_u_max(&buyer_issue()) - 43.2).abs() < 1e-4);
    }

    #[test]
    fn bare_cost_passes_through_with_unit_weight_and_empty_nfa() {
        let v = IssueValuation {
            issue_id: "x".into(),
            actual_cost: 12.5,
            cost_with_margin: 13.25,
            weight: 1.0,
            nfa: NonFunctionalAttributes::new(),
        };
        assert_eq!(compute_u_min(&v), 12.5);
        assert_eq!(compute_u_max(&v), 13.25);
    }

    #[test]
    fn payoffs_sum_per_issue_utilities() {
        let issues = vec![buyer_issue(); 5];
        assert!((min_payoff(&issues).unwrap() - 144.0).abs() < 1e-4);
        assert!((max_payoff(&issues).unwrap() - 216.0).abs() < 1e-4);

        let one = vec![buyer_issue()];
        assert_eq!(min_payoff(&one).unwrap(), compute_u_min(&buyer_issue()));
    }

    #[test]
    fn payoff_of_empty_list_is_an_error() {
        assert_eq!(min_payoff(&[]), Err(ValuationError::NoIssues));
        assert_eq!(max_payoff(&[]), Err(ValuationError::NoIssues));
    }

    #[test]
    fn seller_acceptance_is_a_floor_check() {
        let b = UtilityBounds::new(108.0, 122.4);
        assert!(seller_accepts(108.0, &b));
        assert!(!seller_accepts(107.99, &b));
        assert!(seller_accepts(150.0, &b));
    }

    #[test]
    fn buyer_acceptance_is_a_ceiling_check() {
        let b = UtilityBounds::new(28.8, 43.2);
        assert!(buyer_accepts(43.2, &b));
        assert!(!buyer_accepts(43.3, &b));
        assert!(buyer_accepts(0.0, &b));
    }

    fn state(u: f64, lo: f64, hi: f64, w: f64) -> ConcessionState {
        ConcessionState {
            issue_id: "x".into(),
            u_current: u,
            bounds: UtilityBounds::new(lo, hi),
            weight: w,
        }
    }

    #[test]
    fn decay_with_zero_lambda_is_identity() {
        assert_eq!(decay_utility(&state(100.0, 0.0, 200.0, 8.0), 0.0, 1), 100.0);
    }

    #[test]
    fn decay_substitutes_directly() {
        // 100 * (1 - 0.4 * 1 / 8) = 95
        let got = decay_utility(&state(100.0, 0.0, 200.0, 8.0), 0.4, 1);
        assert!((got - 95.0).abs() < 1e-9);
    }

    #[test]
    fn decay_clamps_at_floor() {
        assert_eq!(decay_utility(&state(100.0, 90.0, 200.0, 8.0), 10.0, 1), 90.0);
    }

    #[test]
    fn raise_mirrors_decay() {
        assert_eq!(raise_utility(&state(28.8, 28.8, 43.2, 8.0), 0.0, 1), 28.8);
        let got = raise_utility(&state(30.0, 28.8, 43.2, 8.0), 0.8, 1);
        assert!((got - 33.0).abs() < 1e-9);
        assert_eq!(raise_utility(&state(42.0, 28.8, 43.2, 8.0), 1.0, 2), 43.2);
    }

    #[test]
    fn lambda_single_issue_closed_form() {
        // λ = 14.4 / (122.4 / 8) = 0.94118
        let open = [state(122.4, 108.0, 122.4, 8.0)];
        let lambda = derive_lambda(&open, 1).unwrap();
        assert!((lambda - 0.94118).abs() < 1e-5);
    }

    #[test]
    fn lambda_is_zero_when_all_gaps_are_zero() {
        let open = [state(50.0, 50.0, 50.0, 2.0), state(9.0, 9.0, 9.0, 4.0)];
        assert_eq!(derive_lambda(&open, 5).unwrap(), 0.0);
    }

    #[test]
    fn lambda_rejects_degenerate_open_set() {
        let open = [state(0.0, 0.0, 1.0, 2.0)];
        assert_eq!(derive_lambda(&open, 1), Err(ValuationError::DegenerateOpenSet));
    }

    #[test]
    fn tree_leaf_collection_and_id_validation() {
        let tree = IssueNode::branch(
            "root",
            "antivirus",
            vec![
                IssueNode::branch(
                    "compressed",
                    "Compressed File",
                    vec![IssueNode::leaf("iso", ".iso")],
                ),
                IssueNode::leaf("updates", "Updates"),
            ],
        );
        tree.validate().unwrap();
        let leaves: Vec<_> = tree.leaves().iter().map(|n| n.id.as_str().to_owned()).collect();
        assert_eq!(leaves, vec!["iso", "updates"]);

        let dup = IssueNode::branch(
            "root",
            "dup",
            vec![IssueNode::leaf("a", "a"), IssueNode::leaf("a", "a2")],
        );
        assert!(matches!(dup.validate(), Err(ValuationError::DuplicateIssueId(_))));
    }

    prop_compose! {
        fn arb_valuation()(
            actual in 0.0f64..1e4,
            extra in 0.0f64..1e3,
            weight in 0.1f64..50.0,
            m1 in 0.1f64..3.0,
            m2 in 0.1f64..3.0,
        ) -> IssueValuation {
            IssueValuation {
                issue_id: "p".into(),
                actual_cost: actual,
                cost_with_margin: actual + extra,
                weight,
                nfa: NonFunctionalAttributes::new().with("a", m1).with("b", m2),
            }
        }
    }

    prop_compose! {
        fn arb_state()(
            lo in 1.0f64..1e3,
            gap in 0.0f64..1e3,
            frac in 0.0f64..1.0,
            weight in 0.5f64..20.0,
        ) -> ConcessionState {
            let hi = lo + gap;
            state(lo + frac * gap, lo, hi, weight)
        }
    }

    proptest! {
        #[test]
        fn u_min_never_exceeds_u_max(v in arb_valuation()) {
            prop_assert!(compute_u_min(&v) <= compute_u_max(&v) + 1e-12);
        }

        #[test]
        fn min_payoff_never_exceeds_max_payoff(vs in prop::collection::vec(arb_valuation(), 1..8)) {
            prop_assert!(min_payoff(&vs).unwrap() <= max_payoff(&vs).unwrap() + 1e-9);
        }

        #[test]
        fn decay_stays_in_bounds_and_is_monotone(
            s in arb_state(),
            l1 in 0.0f64..5.0,
            l2 in 0.0f64..5.0,
            t in 1u32..10,
        ) {
            let out = decay_utility(&s, l1, t);
            prop_assert!(out >= s.bounds.u_min - 1e-12);
            prop_assert!(out <= s.bounds.u_max + 1e-12);
            // monotone non-increasing in lambda and in t
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(decay_utility(&s, hi, t) <= decay_utility(&s, lo, t) + 1e-12);
            prop_assert!(decay_utility(&s, l1, t + 1) <= out + 1e-12);
        }

        #[test]
        fn lambda_is_nonnegative_and_zero_only_for_zero_gap(
            open in prop::collection::vec(arb_state(), 1..6),
            rounds in 1u32..20,
        ) {
            let lambda = derive_lambda(&open, rounds).unwrap();
            prop_assert!(lambda >= 0.0);
            let gap: f64 = open.iter().map(|s| s.bounds.u_max - s.bounds.u_min).sum();
            prop_assert_eq!(lambda == 0.0, gap == 0.0);
        }

        #[test]
        fn doubling_weights_doubles_lambda(
            open in prop::collection::vec(arb_state(), 1..6),
            rounds in 1u32..20,
        ) {
            let doubled: Vec<_> = open
                .iter()
                .map(|s| ConcessionState { weight: s.weight * 2.0, ..s.clone() })
                .collect();
            let l = derive_lambda(&open, rounds).unwrap();
            let l2 = derive_lambda(&doubled, rounds).unwrap();
            prop_assert!((l2 - 2.0 * l).abs() <= 1e-9 * l.max(1.0));
        }

        #[test]
        fn one_decay_round_drops_aggregate_by_gap_over_rounds(
            open in prop::collection::vec(arb_state(), 1..6),
            rounds in 1u32..20,
        ) {
            // widen bounds so clamping cannot fire, then check the
            // aggregate-drop identity by brute force
            let unclamped: Vec<_> = open
                .iter()
                .map(|s| ConcessionState {
                    bounds: UtilityBounds::new(f64::NEG_INFINITY, f64::INFINITY),
                    ..s.clone()
                })
                .collect();
            let lambda = derive_lambda(&open, rounds).unwrap();
            let before: f64 = open.iter().map(|s| s.u_current).sum();
            let after: f64 = unclamped.iter().map(|s| decay_utility(s, lambda, 1)).sum();
            let gap: f64 = open.iter().map(|s| s.bounds.u_max - s.bounds.u_min).sum();
            let expected_drop = gap / rounds as f64;
            prop_assert!(((before - after) - expected_drop).abs() <= 1e-9 * expected_drop.max(1.0));
        }

        #[test]
        fn acceptance_predicates_are_monotone_in_price(
            lo in 0.0f64..100.0,
            gap in 0.0f64..100.0,
            p1 in 0.0f64..300.0,
            p2 in 0.0f64..300.0,
        ) {
            let b = UtilityBounds::new(lo, lo + gap);
            let (plo, phi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            // seller: accepting a low price implies accepting any higher one
            prop_assert!(!seller_accepts(plo, &b) || seller_accepts(phi, &b));
            // buyer: accepting a high price implies accepting any lower one
            prop_assert!(!buyer_accepts(phi, &b) || buyer_accepts(plo, &b));
        }
    }
}
