//! DC power flow, PTDF factors and thermal-limit checks.
//!
//! Injections are net power *into* the grid at each bus, in kW. Reactances stay
//! per-unit, so angles carry units of kW·pu; only flows and PTDFs leave this
//! module and both are independent of that scaling. The market bus is the
//! angle reference.

use crate::error::{Error, Result};
use crate::grid::case::GridCase;
use crate::linalg::{Cholesky, DenseMatrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution<T> {
    /// Flow on each line in kW, positive from `from` to `to`.
    pub flows_kw: Vec<T>,
    /// Bus angles; the market bus is 0.
    pub angles: Vec<T>,
}

/// Factorized reduced susceptance system of one grid. Topology is fixed for a
/// run, so the factor is built once and reused for every solve.
#[derive(Debug, Clone)]
pub struct DcPowerFlow<T> {
    market: usize,
    /// bus index -> row in the reduced system (market maps to `None`)
    reduced: Vec<Option<usize>>,
    factor: Cholesky<T>,
}

impl<T: Scalar> DcPowerFlow<T> {
    pub fn new(grid: &GridCase<T>) -> Result<Self> {
        let n = grid.buses.len();
        let market = grid.market();
        let mut reduced = vec![None; n];
        let mut k = 0;
        for (i, slot) in reduced.iter_mut().enumerate() {
            if i != market {
                *slot = Some(k);
                k += 1;
            }
        }
        let mut b = DenseMatrix::zeros(n - 1, n - 1);
        for line in &grid.lines {
            let y = T::one() / line.reactance_pu;
            let (f, t) = (reduced[line.from], reduced[line.to]);
            if let Some(f) = f {
                b[(f, f)] += y;
            }
            if let Some(t) = t {
                b[(t, t)] += y;
            }
            if let (Some(f), Some(t)) = (f, t) {
                b[(f, t)] -= y;
                b[(t, f)] -= y;
            }
        }
        let factor = Cholesky::factor(&b).ok_or(Error::SingularSystem)?;
        Ok(Self {
            market,
            reduced,
            factor,
        })
    }

    /// Solves for angles and line flows. `injections` must sum to zero; the
    /// market entry is the balancing residual and is not otherwise used.
    pub fn solve(&self, grid: &GridCase<T>, injections: &[T]) -> Result<FlowSolution<T>> {
        let n = grid.buses.len();
        assert_eq!(injections.len(), n, "one injection per bus");
        let net: T = injections.iter().copied().sum();
        let gross: T = injections.iter().map(|v| v.abs()).sum();
        let tol = T::lit(1e-6).max(T::tol(gross) * T::lit(16.0));
        if net.abs() > tol {
            return Err(Error::Unbalanced {
                net: net.to_f64_lossy(),
            });
        }
        Ok(self.solve_unchecked(grid, injections))
    }

    /// Same as [`solve`](Self::solve) without the balance check; the market
    /// injection is implied.
    pub fn solve_unchecked(&self, grid: &GridCase<T>, injections: &[T]) -> FlowSolution<T> {
        let n = grid.buses.len();
        let mut rhs = vec![T::zero(); n - 1];
        for (i, &p) in injections.iter().enumerate() {
            if let Some(r) = self.reduced[i] {
                rhs[r] = p;
            }
        }
        self.factor.solve_in_place(&mut rhs);
        let angles: Vec<T> = (0..n)
            .map(|i| self.reduced[i].map_or(T::zero(), |r| rhs[r]))
            .collect();
        let flows_kw = grid
            .lines
            .iter()
            .map(|l| (angles[l.from] - angles[l.to]) / l.reactance_pu)
            .collect();
        FlowSolution { flows_kw, angles }
    }

    pub fn market(&self) -> usize {
        self.market
    }
}

/// Solves one DC power flow from scratch.
pub fn solve_dc_power_flow<T: Scalar>(
    grid: &GridCase<T>,
    injections: &[T],
) -> Result<FlowSolution<T>> {
    DcPowerFlow::new(grid)?.solve(grid, injections)
}

/// Power transfer distribution factors.
///
/// Stored as injection shift factors `isf[l][k]`: the flow on line `l` when 1 kW
/// is injected at bus `k` and withdrawn at the market. The factor for a
/// transfer from bus `i` to bus `j` is `isf[l][i] - isf[l][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix<T> {
    isf: DenseMatrix<T>,
}

impl<T: Scalar> PtdfMatrix<T> {
    pub fn num_lines(&self) -> usize {
        self.isf.rows()
    }

    pub fn num_buses(&self) -> usize {
        self.isf.cols()
    }

    /// Change of flow on `line` per kW moved from bus `from` to bus `to`.
    #[inline]
    pub fn factor(&self, line: usize, from: usize, to: usize) -> T {
        let row = self.isf.row(line);
        row[from] - row[to]
    }

    /// Flow on each line caused by a set of bus injections (the market term
    /// drops out because its shift factor is zero).
    pub fn flows(&self, injections: &[T]) -> Vec<T> {
        self.isf.mul_vec(injections)
    }

    /// Flow change on every line for `amount` kW moved from `from` to `to`.
    pub fn transfer_delta(&self, from: usize, to: usize, amount: T) -> Vec<T> {
        (0..self.num_lines())
            .map(|l| self.factor(l, from, to) * amount)
            .collect()
    }

    pub fn shift_factors(&self) -> &DenseMatrix<T> {
        &self.isf
    }
}

/// Builds the PTDF table by solving one unit injection per non-market bus.
pub fn compute_ptdf<T: Scalar>(grid: &GridCase<T>) -> Result<PtdfMatrix<T>> {
    compute_ptdf_with(grid, &DcPowerFlow::new(grid)?)
}

pub fn compute_ptdf_with<T: Scalar>(
    grid: &GridCase<T>,
    dc: &DcPowerFlow<T>,
) -> Result<PtdfMatrix<T>> {
    let n = grid.buses.len();
    let m = grid.lines.len();
    let mut isf = DenseMatrix::zeros(m, n);
    let mut unit = vec![T::zero(); n];
    for k in 0..n {
        if k == grid.market() {
            continue;
        }
        unit[k] = T::one();
        let sol = dc.solve_unchecked(grid, &unit);
        unit[k] = T::zero();
        for (l, f) in sol.flows_kw.into_iter().enumerate() {
            isf[(l, k)] = f;
        }
    }
    Ok(PtdfMatrix { isf })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation<T> {
    pub line: usize,
    /// Signed overload: `flow - limit` for positive flows, `flow + limit` for
    /// negative ones.
    pub excess_kw: T,
}

/// Absolute slack allowed on thermal limits, in kW.
pub const LIMIT_TOLERANCE_KW: f64 = 1e-6;

pub fn check_line_limits<T: Scalar>(grid: &GridCase<T>, flows: &[T]) -> Vec<Violation<T>> {
    assert_eq!(flows.len(), grid.lines.len());
    let tol = T::lit(LIMIT_TOLERANCE_KW);
    grid.lines
        .iter()
        .zip(flows)
        .enumerate()
        .filter_map(|(line, (l, &f))| {
            if f > l.limit_kw + tol {
                Some(Violation {
                    line,
                    excess_kw: f - l.limit_kw,
                })
            } else if f < -l.limit_kw - tol {
                Some(Violation {
                    line,
                    excess_kw: f + l.limit_kw,
                })
            } else {
                None
            }
        })
        .collect()
}
