//! Grid-feasibility repair: extra pairwise trades that pull overloaded lines
//! back within their thermal limits while every microgrid stays inside its
//! flexibility interval.
//!
//! Trades are indexed over the microgrids `0..n` plus the market as node `n`.
//! Only the upper triangle `i < j` is a variable; `Δx_{j,i} = -Δx_{i,j}`.
//! `Δx_{i,j}` is the extra power node `i` imports from node `j`.
//!
//! Line flows and flexibility depend only on each node's net change, and the
//! cheapest trades realising given nets are an electrical flow on the complete
//! trade graph with conductance `1 / w_ij²`. The QP is therefore solved over
//! the microgrid nets `r` with objective `rᵀ L⁻¹ r`, `L` the trade-graph
//! Laplacian grounded at the market, and the pairwise trades are recovered
//! from the node potentials `φ = L⁻¹ r`.

use log::warn;

use crate::devices::FlexInterval;
use crate::error::{Error, Result};
use crate::feasibility::TradePlan;
use crate::grid::{GridCase, PtdfMatrix, LIMIT_TOLERANCE_KW};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::qp::{DenseQp, DiagonalQp};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairWeights<T> {
    pub peer: T,
    pub market: T,
    /// Penalty on squared overload when limits cannot be met.
    pub overload: T,
}

impl<T: Scalar> Default for RepairWeights<T> {
    fn default() -> Self {
        Self {
            peer: T::one(),
            market: T::lit(10.0),
            overload: T::lit(1e6),
        }
    }
}

/// Room left in each interval around the committed device power.
pub fn residual_bounds<T: Scalar>(intervals: &[FlexInterval<T>], plan: &TradePlan<T>) -> Vec<FlexInterval<T>> {
    intervals
        .iter()
        .enumerate()
        .map(|(i, iv)| {
            let x = plan.device_kw(i);
            FlexInterval::new(iv.lower_kw - x, iv.upper_kw - x)
        })
        .collect()
}

/// Bound standing in for the market's unlimited flexibility.
pub fn market_bound<T: Scalar>(intervals: &[FlexInterval<T>]) -> T {
    let up: T = intervals.iter().map(|iv| iv.upper_kw.abs()).sum();
    let lo: T = intervals.iter().map(|iv| iv.lower_kw.abs()).sum();
    T::lit(10.0) * up + lo
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairTrades<T> {
    nodes: usize,
    values: Vec<T>,
}

impl<T: Scalar> RepairTrades<T> {
    pub fn zero(nodes: usize) -> Self {
        Self {
            nodes,
            values: vec![T::zero(); pair_count(nodes)],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    /// Extra import of node `i` from node `j`.
    pub fn get(&self, i: usize, j: usize) -> T {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.values[pair_index(self.nodes, i, j)],
            std::cmp::Ordering::Greater => -self.values[pair_index(self.nodes, j, i)],
            std::cmp::Ordering::Equal => T::zero(),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert_ne!(i, j);
        if i < j {
            self.values[pair_index(self.nodes, i, j)] = v;
        } else {
            self.values[pair_index(self.nodes, j, i)] = -v;
        }
    }

    /// Net extra import of node `i`.
    pub fn net(&self, i: usize) -> T {
        (0..self.nodes).map(|j| self.get(i, j)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }
}

fn pair_count(nodes: usize) -> usize {
    nodes * nodes.saturating_sub(1) / 2
}

#[inline]
fn pair_index(nodes: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < nodes);
    i * nodes - i * (i + 1) / 2 + (j - i - 1)
}

#[derive(Debug, Clone)]
pub struct RepairProblem<T> {
    /// Bus of each node; the market is the last node.
    pub node_bus: Vec<usize>,
    /// Residual room per node, market included.
    pub residual: Vec<FlexInterval<T>>,
    pub base_flows: Vec<T>,
    pub limits: Vec<T>,
    /// `node_coeff[l][i]`: flow change on line `l` per unit of extra import at
    /// node `i`, taken from the market. Zero in the market column.
    pub node_coeff: DenseMatrix<T>,
    pub weights: RepairWeights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairSolution<T> {
    pub trades: RepairTrades<T>,
    pub objective: T,
    /// Set when the limits could not all be met and overload was minimized.
    pub hard_infeasible: bool,
    /// Largest remaining overload predicted after repair.
    pub residual_overload: T,
}

impl<T: Scalar> RepairProblem<T> {
    pub fn new(
        grid: &GridCase<T>,
        ptdf: &PtdfMatrix<T>,
        intervals: &[FlexInterval<T>],
        plan: &TradePlan<T>,
        base_flows: &[T],
        weights: RepairWeights<T>,
    ) -> Self {
        let n = intervals.len();
        assert_eq!(grid.num_microgrids(), n);
        let mut node_bus = grid.microgrid_buses().to_vec();
        node_bus.push(grid.market());
        let mut residual = residual_bounds(intervals, plan);
        let big = market_bound(intervals);
        residual.push(FlexInterval::new(-big, big));

        let lines = grid.lines.len();
        let mut node_coeff = DenseMatrix::zeros(lines, n + 1);
        for l in 0..lines {
            let row = node_coeff.row_mut(l);
            for i in 0..n {
                row[i] = ptdf.factor(l, grid.market(), node_bus[i]);
            }
        }
        Self {
            node_bus,
            residual,
            base_flows: base_flows.to_vec(),
            limits: grid.lines.iter().map(|l| l.limit_kw).collect(),
            node_coeff,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_bus.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        let market = self.num_nodes() - 1;
        if i == market || j == market {
            self.weights.market
        } else {
            self.weights.peer
        }
    }

    /// Line flow change caused by `trades`.
    pub fn flow_delta(&self, trades: &RepairTrades<T>) -> Vec<T> {
        let nets: Vec<T> = (0..self.num_nodes()).map(|i| trades.net(i)).collect();
        self.node_coeff.mul_vec(&nets)
    }

    pub fn objective(&self, trades: &RepairTrades<T>) -> T {
        let nodes = self.num_nodes();
        let mut total = T::zero();
        for i in 0..nodes {
            for j in i + 1..nodes {
                let v = self.weight(i, j) * trades.get(i, j);
                total += v * v;
            }
        }
        total
    }

    /// Largest overload of `base + delta` beyond the limits.
    pub fn overload(&self, trades: &RepairTrades<T>) -> T {
        let delta = self.flow_delta(trades);
        self.base_flows
            .iter()
            .zip(&delta)
            .zip(&self.limits)
            .map(|((&p, &d), &lim)| ((p + d).abs() - lim).max(T::zero()))
            .fold(T::zero(), T::max)
    }

    fn limited_lines(&self) -> Vec<usize> {
        (0..self.limits.len()).filter(|&l| self.limits[l].is_finite()).collect()
    }

    /// Line rows over the first `nv` variables: `-lim ≤ p + Δp ≤ lim`, or with
    /// one free overload variable per limited line placed after them.
    fn push_line_rows(
        &self,
        coeff: impl Fn(usize, &mut [T]),
        nv: usize,
        with_slack: bool,
        rows: &mut DenseMatrix<T>,
        lower: &mut Vec<T>,
        upper: &mut Vec<T>,
    ) {
        let mut r = lower.len();
        for (s, &l) in self.limited_lines().iter().enumerate() {
            let (p, lim) = (self.base_flows[l], self.limits[l]);
            if with_slack {
                // -lim - s ≤ p + Δp  and  p + Δp ≤ lim + s
                let row = rows.row_mut(r);
                coeff(l, &mut row[..nv]);
                row[nv + s] = T::one();
                lower.push(-lim - p);
                upper.push(T::infinity());
                let row = rows.row_mut(r + 1);
                coeff(l, &mut row[..nv]);
                row[nv + s] = -T::one();
                lower.push(T::neg_infinity());
                upper.push(lim - p);
                r += 2;
            } else {
                coeff(l, &mut rows.row_mut(r)[..nv]);
                lower.push(-lim - p);
                upper.push(lim - p);
                r += 1;
            }
        }
    }

    /// The QP over every pairwise trade variable, without overload slacks.
    /// Same optimum as [`RepairProblem::solve`], at a much larger size.
    pub fn pairwise_qp(&self) -> DiagonalQp<T> {
        let nodes = self.num_nodes();
        let nv = pair_count(nodes);
        let hessian = (0..nodes)
            .flat_map(|i| (i + 1..nodes).map(move |j| (i, j)))
            .map(|(i, j)| {
                let a = self.weight(i, j);
                T::lit(2.0) * a * a
            })
            .collect();
        let limited = self.limited_lines().len();
        let mut rows = DenseMatrix::zeros(nodes + limited, nv);
        let mut lower = Vec::with_capacity(nodes + limited);
        let mut upper = Vec::with_capacity(nodes + limited);
        for i in 0..nodes {
            let row = rows.row_mut(i);
            for j in 0..nodes {
                if i < j {
                    row[pair_index(nodes, i, j)] = T::one();
                } else if j < i {
                    row[pair_index(nodes, j, i)] = -T::one();
                }
            }
            lower.push(self.residual[i].lower_kw);
            upper.push(self.residual[i].upper_kw);
        }
        let coeff = |l: usize, row: &mut [T]| {
            let c = self.node_coeff.row(l);
            for i in 0..nodes {
                for j in i + 1..nodes {
                    row[pair_index(nodes, i, j)] = c[i] - c[j];
                }
            }
        };
        self.push_line_rows(coeff, nv, false, &mut rows, &mut lower, &mut upper);
        DiagonalQp {
            hessian,
            linear: vec![T::zero(); nv],
            rows,
            lower,
            upper,
        }
    }

    /// Reduced Laplacian of the trade graph over the microgrids, with
    /// conductance `1 / w²` per pair and the market as ground.
    fn grounded_laplacian(&self) -> DenseMatrix<T> {
        let n = self.num_nodes() - 1;
        let mut lap = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=n {
                if i == j {
                    continue;
                }
                let w = self.weight(i, j);
                let g = T::one() / (w * w);
                lap[(i, i)] += g;
                if j < n {
                    lap[(i, j)] -= g;
                }
            }
        }
        lap
    }

    /// QP over the microgrid nets, optionally followed by one overload
    /// variable per limited line.
    fn net_qp(&self, inv_lap: &DenseMatrix<T>, with_slack: bool) -> DenseQp<T> {
        let n = self.num_nodes() - 1;
        let limited = self.limited_lines().len();
        let ns = if with_slack { limited } else { 0 };
        let total = n + ns;
        let mut hessian = DenseMatrix::zeros(total, total);
        for i in 0..n {
            for j in 0..n {
                hessian[(i, j)] = T::lit(2.0) * inv_lap[(i, j)];
            }
        }
        for s in 0..ns {
            hessian[(n + s, n + s)] = T::lit(2.0) * self.weights.overload;
        }
        let rows_count = n + 1 + if with_slack { 2 * limited } else { limited };
        let mut rows = DenseMatrix::zeros(rows_count, total);
        let mut lower = Vec::with_capacity(rows_count);
        let mut upper = Vec::with_capacity(rows_count);
        for i in 0..n {
            rows[(i, i)] = T::one();
            lower.push(self.residual[i].lower_kw);
            upper.push(self.residual[i].upper_kw);
        }
        // the market takes the opposite of the microgrid nets
        for v in &mut rows.row_mut(n)[..n] {
            *v = -T::one();
        }
        lower.push(self.residual[n].lower_kw);
        upper.push(self.residual[n].upper_kw);
        let coeff = |l: usize, row: &mut [T]| row.copy_from_slice(&self.node_coeff.row(l)[..n]);
        self.push_line_rows(coeff, n, with_slack, &mut rows, &mut lower, &mut upper);
        DenseQp {
            hessian,
            linear: vec![T::zero(); total],
            rows,
            lower,
            upper,
        }
    }

    pub fn solve(&self) -> Result<RepairSolution<T>> {
        let nodes = self.num_nodes();
        let n = nodes - 1;
        let chol = Cholesky::factor(&self.grounded_laplacian()).ok_or(Error::QpNotConvex)?;
        let mut inv_lap = DenseMatrix::zeros(n, n);
        for k in 0..n {
            let mut e = vec![T::zero(); n];
            e[k] = T::one();
            chol.solve_in_place(&mut e);
            for (i, v) in e.into_iter().enumerate() {
                inv_lap[(i, k)] = v;
            }
        }
        let (nets, hard) = match self.net_qp(&inv_lap, false).solve() {
            Ok(sol) => (sol.x, false),
            Err(Error::QpInfeasible) => {
                let sol = self.net_qp(&inv_lap, true).solve()?;
                (sol.x[..n].to_vec(), true)
            }
            Err(e) => return Err(e),
        };

        let mut phi = inv_lap.mul_vec(&nets);
        phi.push(T::zero());
        let mut trades = RepairTrades::zero(nodes);
        for i in 0..n {
            for j in i + 1..nodes {
                let w = self.weight(i, j);
                let v = (phi[i] - phi[j]) / (w * w);
                if v != T::zero() {
                    trades.set(i, j, v);
                }
            }
        }
        let residual_overload = self.overload(&trades);
        if hard {
            warn!("line limits unreachable with available flexibility, overload {residual_overload:?} kW");
        }
        Ok(RepairSolution {
            objective: self.objective(&trades),
            trades,
            hard_infeasible: hard || residual_overload > T::lit(LIMIT_TOLERANCE_KW),
            residual_overload,
        })
    }
}

/// Adds repair trades to a plan. Trades with the market node adjust the
/// market exchange of the microgrid involved.
pub fn apply_repair<T: Scalar>(plan: &TradePlan<T>, trades: &RepairTrades<T>) -> TradePlan<T> {
    let n = plan.len();
    assert_eq!(trades.num_nodes(), n + 1);
    let mut out = plan.clone();
    for i in 0..n {
        for j in i + 1..n {
            let v = trades.get(i, j);
            if v != T::zero() {
                out.add_trade(i, j, v);
            }
        }
        let m = trades.get(i, n);
        if m != T::zero() {
            out.add_market(i, m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{compute_ptdf, parse_case};

    fn chain() -> GridCase<f64> {
        parse_case(
            "baseMVA 100\nbus\n1 3 0\n2 1 1\n3 1 7\nbranch\n1 2 0.1 1000\n2 3 0.1 5\nend\n",
        )
        .unwrap()
    }

    #[test]
    fn pair_indexing_is_dense() {
        let nodes = 5;
        let mut seen = Vec::new();
        for i in 0..nodes {
            for j in i + 1..nodes {
                seen.push(pair_index(nodes, i, j));
            }
        }
        assert_eq!(seen, (0..pair_count(nodes)).collect::<Vec<_>>());
    }

    #[test]
    fn residual_examples() {
        let plan = TradePlan::at_targets(&[5.0, 10.0]);
        let r = residual_bounds(&[FlexInterval::new(0.0, 10.0), FlexInterval::new(2.0, 10.0)], &plan);
        assert_eq!(r[0], FlexInterval::new(-5.0, 5.0));
        assert_eq!(r[1], FlexInterval::new(-8.0, 0.0));
        assert_eq!(market_bound(&[FlexInterval::new(-1.0, 2.0), FlexInterval::new(3.0, 4.0)]), 64.0);
    }

    #[test]
    fn chain_overload_is_split_by_weight() {
        let g = chain();
        let ptdf = compute_ptdf(&g).unwrap();
        // MG0 at bus 2 consumes 1, MG1 at bus 3 consumes 7
        let plan = TradePlan::at_targets(&[1.0, 7.0]);
        let intervals = [FlexInterval::new(0.0, 10.0), FlexInterval::new(0.0, 10.0)];
        let inj = crate::grid::injections_from_consumption(&g, &plan.device_all());
        let base = ptdf.flows(&inj);
        assert!((base[1] - 7.0).abs() < 1e-12);
        let rp = RepairProblem::new(&g, &ptdf, &intervals, &plan, &base, RepairWeights::default());
        let sol = rp.solve().unwrap();
        assert!(!sol.hard_infeasible);
        // MG1 exports to MG0 at weight 1 and cuts its market import at weight
        // 10; the line needs 2 kW of relief in total, split 100 : 1
        assert!((sol.trades.get(0, 1) - 200.0 / 101.0).abs() < 1e-9);
        assert!((sol.trades.get(1, 2) + 2.0 / 101.0).abs() < 1e-9);
        assert!(sol.trades.get(0, 2).abs() < 1e-12);
        let after = apply_repair(&plan, &sol.trades);
        let inj = crate::grid::injections_from_consumption(&g, &after.device_all());
        let flows = crate::grid::solve_dc_power_flow(&g, &inj).unwrap().flows_kw;
        assert!((flows[1] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn chain_without_market_weight_advantage_is_pure_peer() {
        let g = chain();
        let ptdf = compute_ptdf(&g).unwrap();
        let plan = TradePlan::at_targets(&[1.0, 7.0]);
        let intervals = [FlexInterval::new(0.0, 10.0), FlexInterval::new(0.0, 10.0)];
        let base = ptdf.flows(&crate::grid::injections_from_consumption(&g, &plan.device_all()));
        let weights = RepairWeights {
            market: 1e6,
            ..RepairWeights::default()
        };
        let sol = RepairProblem::new(&g, &ptdf, &intervals, &plan, &base, weights).solve().unwrap();
        assert!((sol.trades.get(0, 1) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn no_violation_means_no_trades() {
        let g = chain();
        let ptdf = compute_ptdf(&g).unwrap();
        let plan = TradePlan::at_targets(&[1.0, 3.0]);
        let intervals = [FlexInterval::new(0.0, 10.0), FlexInterval::new(0.0, 10.0)];
        let base = ptdf.flows(&crate::grid::injections_from_consumption(&g, &plan.device_all()));
        let sol = RepairProblem::new(&g, &ptdf, &intervals, &plan, &base, RepairWeights::default())
            .solve()
            .unwrap();
        assert!(sol.trades.is_zero());
        assert_eq!(sol.objective, 0.0);
        assert_eq!(apply_repair(&plan, &sol.trades), plan);
    }

    #[test]
    fn uniform_weight_scaling_keeps_argmin() {
        let g = chain();
        let ptdf = compute_ptdf(&g).unwrap();
        let plan = TradePlan::at_targets(&[1.0, 7.0]);
        let intervals = [FlexInterval::new(0.0, 10.0), FlexInterval::new(0.0, 10.0)];
        let base = ptdf.flows(&crate::grid::injections_from_consumption(&g, &plan.device_all()));
        let w = RepairWeights::default();
        let w2 = RepairWeights {
            peer: 2.0,
            market: 20.0,
            ..w
        };
        let a = RepairProblem::new(&g, &ptdf, &intervals, &plan, &base, w).solve().unwrap();
        let b = RepairProblem::new(&g, &ptdf, &intervals, &plan, &base, w2).solve().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.trades.get(i, j) - b.trades.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn exhausted_flexibility_minimizes_overload() {
        let g = chain();
        let ptdf = compute_ptdf(&g).unwrap();
        // MG1 pinned at 7 kW: nothing can relieve the 5 kW line
        let plan = TradePlan::at_targets(&[1.0, 7.0]);
        let intervals = [FlexInterval::new(0.0, 10.0), FlexInterval::new(7.0, 7.0)];
        let base = ptdf.flows(&crate::grid::injections_from_consumption(&g, &plan.device_all()));
        let sol = RepairProblem::new(&g, &ptdf, &intervals, &plan, &base, RepairWeights::default())
            .solve()
            .unwrap();
        assert!(sol.hard_infeasible);
        assert!((sol.residual_overload - 2.0).abs() < 1e-6);
    }

    #[test]
    fn apply_examples() {
        let plan = TradePlan::at_targets(&[1.0, 2.0, 3.0]);
        let mut t = RepairTrades::zero(4);
        t.set(0, 1, 2.0);
        t.set(2, 3, -1.5);
        let out = apply_repair(&plan, &t);
        assert_eq!(out.p2p(0, 1), 2.0);
        assert_eq!(out.p2p(1, 0), -2.0);
        assert_eq!(out.market_kw()[2], 1.5);
        let dev: f64 = out.device_all().iter().sum();
        let mkt: f64 = out.market_kw().iter().sum();
        assert!((dev - mkt).abs() < 1e-12);
    }

    #[test]
    fn net_formulation_matches_pairwise_qp() {
        use rand::{Rng, SeedableRng};
        let g = crate::grid::builtin_case::<f64>("case14").unwrap().unwrap();
        let ptdf = compute_ptdf(&g).unwrap();
        let n = g.num_microgrids();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..40 {
            let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..60.0)).collect();
            let plan = TradePlan::at_targets(&targets);
            let intervals: Vec<_> = targets
                .iter()
                .map(|&x| FlexInterval::new(x - rng.gen_range(0.0..40.0), x + rng.gen_range(0.0..40.0)))
                .collect();
            let base = ptdf.flows(&crate::grid::injections_from_consumption(&g, &plan.device_all()));
            let mut tight = g.clone();
            for (line, f) in tight.lines.iter_mut().zip(&base) {
                line.limit_kw = f.abs() * rng.gen_range(0.6..1.4) + 1.0;
            }
            let rp = RepairProblem::new(&tight, &ptdf, &intervals, &plan, &base, RepairWeights::default());
            let Ok(pair) = rp.pairwise_qp().solve() else { continue };
            let sol = rp.solve().unwrap();
            assert!(!sol.hard_infeasible);
            assert!((sol.objective - pair.objective).abs() < 1e-7 * (1.0 + pair.objective));
            let qp = rp.pairwise_qp();
            let x: Vec<f64> = (0..n + 1)
                .flat_map(|i| (i + 1..n + 1).map(move |j| (i, j)))
                .map(|(i, j)| sol.trades.get(i, j))
                .collect();
            for r in 0..qp.rows.rows() {
                let ax = crate::linalg::dot(qp.rows.row(r), &x);
                assert!(ax >= qp.lower[r] - 1e-7 && ax <= qp.upper[r] + 1e-7);
            }
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} feasible instances");
    }
}
