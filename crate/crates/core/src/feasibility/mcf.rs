//! Successive shortest paths on real-valued capacities.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcTier {
    /// Super-source/sink closure arcs, free.
    Closure,
    /// Surplus microgrid to deficit microgrid.
    Peer,
    /// Arcs incident to a microgrid that is itself device-feasible.
    Flexible,
    /// Arcs incident to the market node.
    Market,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowArc<T> {
    pub from: usize,
    pub to: usize,
    pub capacity: T,
    pub cost: T,
    pub tier: ArcTier,
}

/// Directed graph with a single super-source and super-sink.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph<T> {
    pub num_nodes: usize,
    pub source: usize,
    pub sink: usize,
    pub arcs: Vec<FlowArc<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcFlows<T> {
    /// Flow on each arc of the graph, same order as `FlowGraph::arcs`.
    pub flows: Vec<T>,
    pub total_flow: T,
    pub total_cost: T,
}

impl<T: Scalar> FlowGraph<T> {
    pub fn new(num_nodes: usize, source: usize, sink: usize) -> Self {
        Self {
            num_nodes,
            source,
            sink,
            arcs: Vec::new(),
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: T, cost: T, tier: ArcTier) {
        debug_assert!(capacity >= T::zero());
        self.arcs.push(FlowArc {
            from,
            to,
            capacity,
            cost,
            tier,
        });
    }

    pub fn cost_of(&self, flows: &[T]) -> T {
        self.arcs
            .iter()
            .zip(flows)
            .map(|(a, &f)| a.cost * f)
            .sum()
    }
}

/// Min-cost maximum flow from `g.source` to `g.sink`.
///
/// Each round finds a cheapest augmenting path with Bellman-Ford on the
/// residual graph (costs may go negative on reverse arcs) and saturates its
/// bottleneck. Relaxation scans nodes and arcs in index order and only
/// accepts strict improvements, so ties resolve to the lowest ids. Residual
/// capacities below a scale-relative epsilon count as zero, which bounds the
/// number of rounds by the number of saturations.
pub fn solve_min_cost_flow<T: Scalar>(g: &FlowGraph<T>) -> Result<ArcFlows<T>> {
    let n = g.num_nodes;
    let m = g.arcs.len();
    let cap_scale = g
        .arcs
        .iter()
        .map(|a| a.capacity)
        .fold(T::zero(), |acc, c| acc.max(c));
    let eps = T::tol(cap_scale);

    // residual arc 2k is forward of arc k, 2k+1 its reverse
    let mut residual = Vec::with_capacity(2 * m);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, a) in g.arcs.iter().enumerate() {
        residual.push(a.capacity);
        residual.push(T::zero());
        adj[a.from].push(2 * k);
        adj[a.to].push(2 * k + 1);
    }
    let head = |r: usize| {
        let a = &g.arcs[r / 2];
        if r % 2 == 0 {
            a.to
        } else {
            a.from
        }
    };
    let cost = |r: usize| {
        let c = g.arcs[r / 2].cost;
        if r % 2 == 0 {
            c
        } else {
            -c
        }
    };

    let mut total_flow = T::zero();
    let max_rounds = 4 * m + 16;
    for _ in 0..max_rounds {
        let mut dist: Vec<Option<T>> = vec![None; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        dist[g.source] = Some(T::zero());
        let mut changed = true;
        let mut passes = 0;
        while changed {
            changed = false;
            passes += 1;
            if passes > n + 1 {
                return Err(Error::FlowInfeasible("negative residual cycle".into()));
            }
            for u in 0..n {
                let Some(du) = dist[u] else { continue };
                for &r in &adj[u] {
                    if residual[r] <= eps {
                        continue;
                    }
                    let v = head(r);
                    let nd = du + cost(r);
                    if dist[v].is_none_or(|dv| nd < dv) {
                        dist[v] = Some(nd);
                        pred[v] = Some(r);
                        changed = true;
                    }
                }
            }
        }
        if dist[g.sink].is_none() {
            let flows = (0..m).map(|k| residual[2 * k + 1]).collect::<Vec<_>>();
            let total_cost = g.cost_of(&flows);
            return Ok(ArcFlows {
                flows,
                total_flow,
                total_cost,
            });
        }
        let mut bottleneck = T::infinity();
        let mut v = g.sink;
        while v != g.source {
            let r = pred[v].expect("path back to source");
            bottleneck = bottleneck.min(residual[r]);
            v = head(r ^ 1);
        }
        if !bottleneck.is_finite() {
            return Err(Error::FlowInfeasible("unbounded augmenting path".into()));
        }
        let mut v = g.sink;
        while v != g.source {
            let r = pred[v].expect("path back to source");
            residual[r] -= bottleneck;
            residual[r ^ 1] += bottleneck;
            v = head(r ^ 1);
        }
        total_flow += bottleneck;
    }
    Err(Error::FlowInfeasible(format!(
        "no convergence after {max_rounds} augmentations"
    )))
}
