use std::time::Instant;

use clarabel::algebra::{CscMatrix, FloatT};
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use log::debug;

use super::{micros, ControllerKind, RunReport, SliceRecord, StepTimings};
use crate::error::{Error, Result};
use crate::grid::{check_line_limits, compute_ptdf_with, injections_from_consumption, DcPowerFlow};
use crate::scalar::Scalar;
use crate::scenario::SimInput;

/// Largest `microgrids × slices` the offline model accepts by default.
pub const DEFAULT_OFFLINE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineConfig {
    pub cap: usize,
    pub tolerance: f64,
    pub max_iter: u32,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            cap: DEFAULT_OFFLINE_CAP,
            tolerance: 1e-11,
            max_iter: 500,
        }
    }
}

/// Column layout of the full-horizon model. Per slice: market, net peer
/// import and used PV per microgrid, then external charge, external
/// discharge and end-of-slice energy per storage.
struct Layout {
    mgs: usize,
    storages: usize,
    slices: usize,
}

impl Layout {
    fn block(&self) -> usize {
        3 * self.mgs + 3 * self.storages
    }
    fn len(&self) -> usize {
        self.block() * self.slices
    }
    fn market(&self, t: usize, i: usize) -> usize {
        t * self.block() + i
    }
    fn peer(&self, t: usize, i: usize) -> usize {
        t * self.block() + self.mgs + i
    }
    fn pv(&self, t: usize, i: usize) -> usize {
        t * self.block() + 2 * self.mgs + i
    }
    fn charge(&self, t: usize, k: usize) -> usize {
        t * self.block() + 3 * self.mgs + 3 * k
    }
    fn discharge(&self, t: usize, k: usize) -> usize {
        self.charge(t, k) + 1
    }
    fn energy(&self, t: usize, k: usize) -> usize {
        self.charge(t, k) + 2
    }
}

/// Rows of `A x + s = b`, equalities first.
#[derive(Clone, Default)]
struct Rows<T> {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<T>,
    b: Vec<T>,
}

impl<T: Scalar> Rows<T> {
    fn push(&mut self, terms: &[(usize, T)], rhs: T) {
        let r = self.b.len();
        for &(j, v) in terms {
            if v != T::zero() {
                self.i.push(r);
                self.j.push(j);
                self.v.push(v);
            }
        }
        self.b.push(rhs);
    }
}

/// Solves the whole slot at once with perfect knowledge of every profile.
///
/// Market levels are pulled towards the initial flat level under the same
/// per-slice balance, storage and line constraints the real-time controller
/// faces, plus the storage dynamics across slices and the terminal energy.
/// Peer trades enter as one net import per microgrid; the pairwise split is
/// not needed for balance or flows. Line limits are added only for the
/// (slice, line) pairs a previous solve overloaded, until none is. Solve time
/// is spread evenly over the slice records.
pub fn run_offline<T: Scalar + FloatT>(input: &SimInput<T>, cfg: &OfflineConfig) -> Result<RunReport<T>> {
    let run_start = Instant::now();
    let n = input.microgrids.len();
    let size = n * input.slices;
    if size > cfg.cap {
        return Err(Error::CapExceeded { size, cap: cfg.cap });
    }
    let grid = &input.grid;
    let dc = DcPowerFlow::new(grid)?;
    let ptdf = compute_ptdf_with(grid, &dc)?;
    let model = Model::new(input);
    let mut active: Vec<(usize, usize)> = Vec::new();
    let (x, device, flows) = loop {
        let x = model.solve(input, ptdf.shift_factors(), &active, cfg)?;
        let device: Vec<Vec<T>> = (0..input.slices)
            .map(|t| (0..n).map(|i| x[model.lay.market(t, i)] + x[model.lay.peer(t, i)]).collect())
            .collect();
        let flows = device
            .iter()
            .map(|d| Ok(dc.solve(grid, &injections_from_consumption(grid, d))?.flows_kw))
            .collect::<Result<Vec<_>>>()?;
        let before = active.len();
        for (t, f) in flows.iter().enumerate() {
            for v in check_line_limits(grid, f) {
                if !active.contains(&(t, v.line)) {
                    active.push((t, v.line));
                }
            }
        }
        if active.len() == before {
            break (x, device, flows);
        }
        debug!("offline model: {} line limits active", active.len());
    };

    let lay = &model.lay;
    let x0 = input.flat_targets();
    let per_slice = micros(run_start) / input.slices.max(1) as f64;
    let mut records = Vec::with_capacity(input.slices);
    for ((t, device), flows) in device.into_iter().enumerate().zip(flows) {
        let market: Vec<T> = (0..n).map(|i| x[lay.market(t, i)]).collect();
        let peer: Vec<T> = (0..n).map(|i| x[lay.peer(t, i)]).collect();
        let mut storage_kw = vec![Vec::new(); n];
        let mut soc = vec![Vec::new(); n];
        for (k, &i) in model.owner.iter().enumerate() {
            storage_kw[i].push(x[lay.charge(t, k)] - x[lay.discharge(t, k)]);
            soc[i].push(x[lay.energy(t, k)]);
        }
        records.push(SliceRecord {
            t: t + 1,
            target_kw: x0.clone(),
            market_kw: market,
            device_kw: device,
            p2p_net_kw: peer.clone(),
            pv_curtailed_kw: (0..n)
                .map(|i| (input.microgrids[i].pv_kw[t] - x[lay.pv(t, i)]).max(T::zero()))
                .collect(),
            storage_kw,
            soc_kwh: soc,
            line_flows_kw: flows,
            trades_used: peer.iter().any(|p| p.abs() > T::lit(1e-6)),
            repaired: false,
            repair_infeasible: false,
            timings: StepTimings {
                total_us: per_slice,
                ..StepTimings::default()
            },
        });
    }
    Ok(RunReport::assemble(ControllerKind::Offline, input, records, micros(run_start)))
}

/// Everything except the line limits, which change between solves.
struct Model<T> {
    lay: Layout,
    /// Microgrid of each storage.
    owner: Vec<usize>,
    eq: Rows<T>,
    le: Rows<T>,
    p: CscMatrix<T>,
    q: Vec<T>,
}

impl<T: Scalar + FloatT> Model<T> {
    fn new(input: &SimInput<T>) -> Self {
        let n = input.microgrids.len();
        let storages: Vec<(usize, &crate::devices::Storage<T>)> = input
            .microgrids
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.storages.iter().map(move |s| (i, s)))
            .collect();
        let lay = Layout {
            mgs: n,
            storages: storages.len(),
            slices: input.slices,
        };
        let dt = input.dt_h;
        let one = T::one();
        let mut eq = Rows::default();
        let mut le = Rows::default();

        for t in 0..input.slices {
            for (i, mg) in input.microgrids.iter().enumerate() {
                let mut terms = vec![
                    (lay.market(t, i), one),
                    (lay.peer(t, i), one),
                    (lay.pv(t, i), one),
                ];
                for (k, &(owner, _)) in storages.iter().enumerate() {
                    if owner == i {
                        terms.push((lay.charge(t, k), -one));
                        terms.push((lay.discharge(t, k), one));
                    }
                }
                eq.push(&terms, mg.load_kw[t]);
                le.push(&[(lay.pv(t, i), -one)], T::zero());
                le.push(&[(lay.pv(t, i), one)], mg.pv_kw[t]);
            }
            let peers: Vec<_> = (0..n).map(|i| (lay.peer(t, i), one)).collect();
            eq.push(&peers, T::zero());

            for (k, &(_, s)) in storages.iter().enumerate() {
                let mut terms = vec![
                    (lay.energy(t, k), one),
                    (lay.charge(t, k), -s.efficiency * dt),
                    (lay.discharge(t, k), dt / s.efficiency),
                ];
                let rhs = if t == 0 {
                    s.energy_kwh
                } else {
                    terms.push((lay.energy(t - 1, k), -one));
                    T::zero()
                };
                eq.push(&terms, rhs);
                let (lc, ld) = if s.available {
                    (s.charge_limit_kw, s.discharge_limit_kw)
                } else {
                    (T::zero(), T::zero())
                };
                le.push(&[(lay.charge(t, k), -one)], T::zero());
                le.push(&[(lay.discharge(t, k), -one)], T::zero());
                le.push(&[(lay.charge(t, k), s.efficiency)], lc);
                le.push(&[(lay.discharge(t, k), one / s.efficiency)], ld);
                le.push(&[(lay.energy(t, k), -one)], T::zero());
                le.push(&[(lay.energy(t, k), one)], s.capacity_kwh);
            }
        }
        for (k, &(_, s)) in storages.iter().enumerate() {
            if s.available {
                eq.push(&[(lay.energy(input.slices - 1, k), one)], s.target_kwh);
            }
        }

        let nv = lay.len();
        let size = n * input.slices;
        let mut q = vec![T::zero(); nv];
        let mut pi = Vec::with_capacity(size);
        for t in 0..input.slices {
            for (i, &x) in input.flat_targets().iter().enumerate() {
                q[lay.market(t, i)] = -T::lit(2.0) * x;
                pi.push(lay.market(t, i));
            }
        }
        let p = CscMatrix::new_from_triplets(nv, nv, pi.clone(), pi, vec![T::lit(2.0); size]);
        Self {
            owner: storages.iter().map(|&(i, _)| i).collect(),
            lay,
            eq,
            le,
            p,
            q,
        }
    }

    fn solve(
        &self,
        input: &SimInput<T>,
        isf: &crate::linalg::DenseMatrix<T>,
        lines: &[(usize, usize)],
        cfg: &OfflineConfig,
    ) -> Result<Vec<T>> {
        let lay = &self.lay;
        let mut le = self.le.clone();
        // flow = -Σ_i ISF[l][bus_i] · (market_i + peer_i)
        for &(t, l) in lines {
            let limit = input.grid.lines[l].limit_kw;
            let row = isf.row(l);
            let mut terms = Vec::with_capacity(2 * lay.mgs);
            for (i, &b) in input.grid.microgrid_buses().iter().enumerate() {
                terms.push((lay.market(t, i), -row[b]));
                terms.push((lay.peer(t, i), -row[b]));
            }
            le.push(&terms, limit);
            let neg: Vec<_> = terms.iter().map(|&(j, v)| (j, -v)).collect();
            le.push(&neg, limit);
        }

        let n_eq = self.eq.b.len();
        let n_le = le.b.len();
        let mut ai = self.eq.i.clone();
        let mut aj = self.eq.j.clone();
        let mut av = self.eq.v.clone();
        ai.extend(le.i.iter().map(|r| r + n_eq));
        aj.extend(le.j);
        av.extend(le.v);
        let mut b = self.eq.b.clone();
        b.extend(le.b);
        let a = CscMatrix::new_from_triplets(n_eq + n_le, lay.len(), ai, aj, av);
        let cones = [
            SupportedConeT::ZeroConeT(n_eq),
            SupportedConeT::NonnegativeConeT(n_le),
        ];
        let tol = T::lit(cfg.tolerance);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(cfg.max_iter)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .tol_feas(tol)
            .build()
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&self.p, &self.q, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        solver.solve();
        let status = solver.solution.status;
        debug!("offline model: {status:?} after {} iterations", solver.solution.iterations);
        match status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(solver.solution.x.clone()),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                Err(Error::Solver("offline model is infeasible".into()))
            }
            other => Err(Error::Solver(format!("solver stopped with status {other:?}"))),
        }
    }
}
