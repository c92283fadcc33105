//! Device feasibility: when a microgrid cannot absorb or supply its target
//! market exchange with its own devices, route the imbalance through
//! peer-to-peer trades first and the market last, via a tiered min-cost flow.

mod mcf;
mod plan;

pub use mcf::{solve_min_cost_flow, ArcFlows, ArcTier, FlowArc, FlowGraph};
pub use plan::TradePlan;

use crate::devices::FlexInterval;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Target at or below the lower bound: needs more power.
    Deficit,
    /// Target at or above the upper bound: must shed power.
    Surplus,
    /// Target strictly inside the band.
    Flexible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification<T> {
    pub roles: Vec<Role>,
    /// `Σ_{i∈D} (l_i - X_i)`
    pub total_deficit: T,
    /// `Σ_{i∈S} (X_i - u_i)`
    pub total_surplus: T,
}

impl<T: Scalar> Classification<T> {
    pub fn members(&self, role: Role) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(move |(_, &r)| r == role)
            .map(|(i, _)| i)
    }

    pub fn needs_trading(&self) -> bool {
        self.total_deficit > T::zero() || self.total_surplus > T::zero()
    }
}

pub fn classify<T: Scalar>(targets: &[T], intervals: &[FlexInterval<T>]) -> Classification<T> {
    assert_eq!(targets.len(), intervals.len());
    let mut total_deficit = T::zero();
    let mut total_surplus = T::zero();
    let roles = targets
        .iter()
        .zip(intervals)
        .map(|(&x, b)| {
            if x <= b.lower_kw {
                total_deficit += b.lower_kw - x;
                Role::Deficit
            } else if x >= b.upper_kw {
                total_surplus += x - b.upper_kw;
                Role::Surplus
            } else {
                Role::Flexible
            }
        })
        .collect();
    Classification {
        roles,
        total_deficit,
        total_surplus,
    }
}

/// Arc costs per tier. Defaults keep peer trades cheapest and the market
/// most expensive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTiers<T> {
    pub peer: T,
    pub flexible: T,
    pub market: T,
}

impl<T: Scalar> Default for CostTiers<T> {
    fn default() -> Self {
        Self {
            peer: T::lit(1.0),
            flexible: T::lit(10.0),
            market: T::lit(100.0),
        }
    }
}

impl<T: Scalar> CostTiers<T> {
    pub fn is_ordered(&self) -> bool {
        T::zero() <= self.peer && self.peer < self.flexible && self.flexible < self.market
    }
}

/// Node layout of the trading graph for `n` microgrids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeIds {
    pub microgrids: usize,
}

impl NodeIds {
    #[inline]
    pub fn market(&self) -> usize {
        self.microgrids
    }
    #[inline]
    pub fn source(&self) -> usize {
        self.microgrids + 1
    }
    #[inline]
    pub fn sink(&self) -> usize {
        self.microgrids + 2
    }
    #[inline]
    pub fn count(&self) -> usize {
        self.microgrids + 3
    }
}

/// Builds the trading graph.
///
/// Surplus microgrids are fed from the super-source with their excess and
/// deficit microgrids drain into the super-sink with their shortfall. When
/// surplus exceeds the deficit, flexible microgrids and the market act as
/// sinks; in the opposite case as sources. The market capacity exceeds any
/// possible imbalance.
pub fn build_flow_graph<T: Scalar>(
    c: &Classification<T>,
    intervals: &[FlexInterval<T>],
    targets: &[T],
    tiers: &CostTiers<T>,
) -> FlowGraph<T> {
    let n = targets.len();
    let ids = NodeIds { microgrids: n };
    let mut g = FlowGraph::new(ids.count(), ids.source(), ids.sink());
    let zero = T::zero();

    let spans: T = intervals.iter().map(|b| b.width().abs()).sum();
    let market_cap = c.total_deficit + c.total_surplus + spans;

    for i in c.members(Role::Surplus) {
        g.add_arc(
            ids.source(),
            i,
            targets[i] - intervals[i].upper_kw,
            zero,
            ArcTier::Closure,
        );
    }
    for j in c.members(Role::Deficit) {
        g.add_arc(
            j,
            ids.sink(),
            intervals[j].lower_kw - targets[j],
            zero,
            ArcTier::Closure,
        );
    }
    for i in c.members(Role::Surplus) {
        for j in c.members(Role::Deficit) {
            g.add_arc(i, j, market_cap, tiers.peer, ArcTier::Peer);
        }
    }

    let balance = c.total_surplus - c.total_deficit;
    if balance > zero {
        for f in c.members(Role::Flexible) {
            for i in c.members(Role::Surplus) {
                g.add_arc(i, f, market_cap, tiers.flexible, ArcTier::Flexible);
            }
            g.add_arc(
                f,
                ids.sink(),
                intervals[f].upper_kw - targets[f],
                zero,
                ArcTier::Closure,
            );
        }
        for i in c.members(Role::Surplus) {
            g.add_arc(i, ids.market(), market_cap, tiers.market, ArcTier::Market);
        }
        g.add_arc(ids.market(), ids.sink(), market_cap, zero, ArcTier::Closure);
    } else if balance < zero {
        for f in c.members(Role::Flexible) {
            g.add_arc(
                ids.source(),
                f,
                targets[f] - intervals[f].lower_kw,
                zero,
                ArcTier::Closure,
            );
            for j in c.members(Role::Deficit) {
                g.add_arc(f, j, market_cap, tiers.flexible, ArcTier::Flexible);
            }
        }
        g.add_arc(ids.source(), ids.market(), market_cap, zero, ArcTier::Closure);
        for j in c.members(Role::Deficit) {
            g.add_arc(ids.market(), j, market_cap, tiers.market, ArcTier::Market);
        }
    }
    g
}

/// Turns arc flows into a trade plan starting from the targets.
///
/// A flow `f` on microgrid arc `i -> j` is power sold by `i` to `j`
/// (`x^P2P_ji += f`). Flow out of a microgrid into the market lowers its
/// market exchange, flow from the market raises it.
pub fn trades_from_flow<T: Scalar>(
    g: &FlowGraph<T>,
    flows: &ArcFlows<T>,
    targets: &[T],
) -> TradePlan<T> {
    let n = targets.len();
    let ids = NodeIds { microgrids: n };
    let mut plan = TradePlan::at_targets(targets);
    for (arc, &f) in g.arcs.iter().zip(&flows.flows) {
        if f == T::zero() {
            continue;
        }
        match (arc.from < n, arc.to < n) {
            (true, true) => plan.add_trade(arc.to, arc.from, f),
            (true, false) if arc.to == ids.market() => plan.add_market(arc.from, -f),
            (false, true) if arc.from == ids.market() => plan.add_market(arc.to, f),
            _ => {}
        }
    }
    plan
}

/// Step one of the controller: returns the plan at the targets when every
/// microgrid is device-feasible, otherwise the min-cost trading plan.
pub fn resolve_device_feasibility<T: Scalar>(
    targets: &[T],
    intervals: &[FlexInterval<T>],
    tiers: &CostTiers<T>,
) -> Result<(TradePlan<T>, Option<Classification<T>>)> {
    let infeasible = targets
        .iter()
        .zip(intervals)
        .any(|(&x, b)| x < b.lower_kw || x > b.upper_kw);
    if !infeasible {
        return Ok((TradePlan::at_targets(targets), None));
    }
    let c = classify(targets, intervals);
    let g = build_flow_graph(&c, intervals, targets, tiers);
    let flows = solve_min_cost_flow(&g)?;
    let plan = trades_from_flow(&g, &flows, targets);
    Ok((plan, Some(c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(l: f64, u: f64) -> FlexInterval<f64> {
        FlexInterval::new(l, u)
    }

    #[test]
    fn classification_example() {
        let c = classify(&[10.0, 10.0, 10.0], &[iv(12.0, 20.0), iv(0.0, 8.0), iv(5.0, 15.0)]);
        assert_eq!(c.roles, vec![Role::Deficit, Role::Surplus, Role::Flexible]);
        assert_eq!(c.total_deficit, 2.0);
        assert_eq!(c.total_surplus, 2.0);
    }

    #[test]
    fn all_feasible_classifies_flexible() {
        let c = classify(&[1.0, 2.0], &[iv(0.0, 5.0), iv(-1.0, 3.0)]);
        assert!(c.roles.iter().all(|&r| r == Role::Flexible));
        assert!(!c.needs_trading());
    }

    #[test]
    fn boundary_target_is_surplus_with_zero_excess() {
        let c = classify(&[5.0], &[iv(0.0, 5.0)]);
        assert_eq!(c.roles, vec![Role::Surplus]);
        assert_eq!(c.total_surplus, 0.0);
    }

    /// MG0 surplus 5, MG1 deficit 3, MG2 flexible with room 4 upward.
    fn three_mg() -> (Vec<f64>, Vec<FlexInterval<f64>>) {
        (vec![10.0, 10.0, 10.0], vec![iv(0.0, 5.0), iv(13.0, 20.0), iv(6.0, 14.0)])
    }

    #[test]
    fn surplus_routes_peer_then_flexible() {
        let (x, b) = three_mg();
        let (plan, c) = resolve_device_feasibility(&x, &b, &CostTiers::default()).unwrap();
        let c = c.unwrap();
        assert_eq!(c.total_surplus, 5.0);
        assert_eq!(c.total_deficit, 3.0);
        assert_eq!(plan.p2p(1, 0), 3.0);
        assert_eq!(plan.p2p(2, 0), 2.0);
        assert_eq!(plan.market_kw(), &[10.0, 10.0, 10.0]);
        assert_eq!(plan.device_all(), vec![5.0, 13.0, 12.0]);
    }

    #[test]
    fn balanced_imbalance_stays_between_surplus_and_deficit() {
        let x = [10.0, 10.0, 10.0];
        let b = [iv(0.0, 8.0), iv(12.0, 20.0), iv(0.0, 20.0)];
        let c = classify(&x, &b);
        let g = build_flow_graph(&c, &b, &x, &CostTiers::default());
        assert!(g.arcs.iter().all(|a| a.tier == ArcTier::Closure || a.tier == ArcTier::Peer));
        let flows = solve_min_cost_flow(&g).unwrap();
        let plan = trades_from_flow(&g, &flows, &x);
        assert_eq!(plan.p2p(1, 0), 2.0);
        assert_eq!(plan.p2p(2, 0), 0.0);
    }

    #[test]
    fn market_absorbs_what_flexible_cannot() {
        // surplus 5, no deficit, flexible room 1
        let x = [10.0, 10.0];
        let b = [iv(0.0, 5.0), iv(0.0, 11.0)];
        let (plan, _) = resolve_device_feasibility(&x, &b, &CostTiers::default()).unwrap();
        assert_eq!(plan.p2p(1, 0), 1.0);
        assert_eq!(plan.market_kw()[0], 6.0);
        assert_eq!(plan.device_all(), vec![5.0, 11.0]);
    }

    #[test]
    fn deficit_buys_from_market_last() {
        let x = [0.0, 0.0];
        let b = [iv(3.0, 5.0), iv(-1.0, 1.0)];
        let (plan, _) = resolve_device_feasibility(&x, &b, &CostTiers::default()).unwrap();
        assert_eq!(plan.p2p(0, 1), 1.0);
        assert_eq!(plan.market_kw()[0], 2.0);
        assert_eq!(plan.device_all(), vec![3.0, -1.0]);
    }

    #[test]
    fn no_flow_keeps_targets() {
        let x = [1.0, 2.0];
        let b = [iv(0.0, 5.0), iv(0.0, 5.0)];
        let (plan, c) = resolve_device_feasibility(&x, &b, &CostTiers::default()).unwrap();
        assert!(c.is_none());
        assert_eq!(plan, TradePlan::at_targets(&x));
    }

    #[test]
    fn default_tiers_are_ordered() {
        assert!(CostTiers::<f64>::default().is_ordered());
    }
}
