use std::time::Instant;

use log::{debug, warn};

use super::{micros, ControllerKind, RunReport, SliceRecord, StepTimings};
use crate::allocation::{distribute_power, update_target};
use crate::devices::{aggregate_flex, apply_dispatch, storage_flex_bounds, FlexInterval, MicrogridSlice};
use crate::error::Result;
use crate::feasibility::{resolve_device_feasibility, CostTiers, TradePlan};
use crate::grid::{check_line_limits, compute_ptdf_with, injections_from_consumption, DcPowerFlow};
use crate::repair::{apply_repair, RepairProblem, RepairWeights};
use crate::scalar::Scalar;
use crate::scenario::SimInput;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealtimeConfig<T> {
    pub tiers: CostTiers<T>,
    pub weights: RepairWeights<T>,
    /// Added to every market target, e.g. to cover line losses.
    pub loss_compensation_kw: T,
}

impl<T: Scalar> Default for RealtimeConfig<T> {
    fn default() -> Self {
        Self {
            tiers: CostTiers::default(),
            weights: RepairWeights::default(),
            loss_compensation_kw: T::zero(),
        }
    }
}

/// Moves a device level that sits a rounding error outside its band back
/// inside, through the market exchange, so the plan stays balanced.
fn snap_to_bands<T: Scalar>(plan: &mut TradePlan<T>, intervals: &[FlexInterval<T>]) {
    for (i, b) in intervals.iter().enumerate() {
        let x = plan.device_kw(i);
        let tol = T::lit(1e-7) * (T::one() + b.lower_kw.abs().max(b.upper_kw.abs()));
        if x < b.lower_kw && x > b.lower_kw - tol {
            plan.add_market(i, b.lower_kw - x);
        } else if x > b.upper_kw && x < b.upper_kw + tol {
            plan.add_market(i, b.upper_kw - x);
        }
    }
}

/// Runs the three-step controller over every slice of the slot.
///
/// Each slice: storage bands, trade resolution on the flow graph, a DC power
/// flow with a repair QP when a line is overloaded, then the split of each
/// microgrid's committed power over PV and storages. The market target for
/// the next slice is re-spread from what has actually been exchanged.
pub fn run_realtime<T: Scalar>(input: &SimInput<T>, cfg: &RealtimeConfig<T>) -> Result<RunReport<T>> {
    let run_start = Instant::now();
    let grid = &input.grid;
    let dc = DcPowerFlow::new(grid)?;
    let ptdf = compute_ptdf_with(grid, &dc)?;
    let n = input.microgrids.len();
    let dt = input.dt_h;

    let mut storages: Vec<Vec<_>> = input.microgrids.iter().map(|m| m.storages.clone()).collect();
    let mut exchanged = vec![T::zero(); n];
    let mut targets: Vec<T> = input
        .flat_targets()
        .into_iter()
        .map(|x| x + cfg.loss_compensation_kw)
        .collect();
    let mut records = Vec::with_capacity(input.slices);

    for t in 1..=input.slices {
        let slice_start = Instant::now();
        let mut timings = StepTimings::default();

        let step = Instant::now();
        let mut slices = Vec::with_capacity(n);
        for (i, mg) in input.microgrids.iter().enumerate() {
            let bounds = storages[i]
                .iter()
                .map(|s| storage_flex_bounds(s, t, input.slices, dt))
                .collect::<Result<Vec<_>>>()?;
            slices.push(MicrogridSlice {
                load_kw: mg.load_kw[t - 1],
                pv_kw: mg.pv_kw[t - 1],
                storage_bounds: bounds,
            });
        }
        let intervals: Vec<_> = slices.iter().map(aggregate_flex).collect();
        timings.bounds_us = micros(step);

        let step = Instant::now();
        let (mut plan, classification) = resolve_device_feasibility(&targets, &intervals, &cfg.tiers)?;
        timings.flow_us = micros(step);

        let step = Instant::now();
        let mut flows = dc
            .solve(grid, &injections_from_consumption(grid, &plan.device_all()))?
            .flows_kw;
        timings.power_flow_us = micros(step);

        let mut repaired = false;
        let mut repair_infeasible = false;
        if !check_line_limits(grid, &flows).is_empty() {
            let step = Instant::now();
            let problem = RepairProblem::new(grid, &ptdf, &intervals, &plan, &flows, cfg.weights);
            let sol = problem.solve()?;
            plan = apply_repair(&plan, &sol.trades);
            snap_to_bands(&mut plan, &intervals);
            repaired = !sol.trades.is_zero();
            repair_infeasible = sol.hard_infeasible;
            timings.repair_us = micros(step);
            let step = Instant::now();
            flows = dc
                .solve(grid, &injections_from_consumption(grid, &plan.device_all()))?
                .flows_kw;
            timings.power_flow_us += micros(step);
            debug!("slice {t}: repair objective {:?}", sol.objective);
        }
        for v in check_line_limits(grid, &flows) {
            warn!("slice {t}: line {} over its limit by {:?} kW", v.line, v.excess_kw);
        }

        let step = Instant::now();
        let mut storage_kw = Vec::with_capacity(n);
        let mut curtailed = Vec::with_capacity(n);
        for (i, mg) in slices.iter().enumerate() {
            let alloc = distribute_power(mg, plan.device_kw(i))?;
            for ((s, &p), b) in storages[i].iter_mut().zip(&alloc.storage_kw).zip(&mg.storage_bounds) {
                *s = apply_dispatch(s, p, b, dt)?;
            }
            curtailed.push(alloc.pv_curtailed_kw);
            storage_kw.push(alloc.storage_kw);
        }
        timings.allocation_us = micros(step);

        let market = plan.market_kw().to_vec();
        for (e, &x) in exchanged.iter_mut().zip(&market) {
            *e += x * dt;
        }
        let slice_targets = targets.clone();
        if t < input.slices {
            for (i, mg) in input.microgrids.iter().enumerate() {
                targets[i] = update_target(mg.planned_market_kwh, exchanged[i], t + 1, input.slices, dt)
                    + cfg.loss_compensation_kw;
            }
        }
        timings.total_us = micros(slice_start);

        records.push(SliceRecord {
            t,
            target_kw: slice_targets,
            market_kw: market,
            device_kw: plan.device_all(),
            p2p_net_kw: (0..n).map(|i| plan.net_p2p(i)).collect(),
            pv_curtailed_kw: curtailed,
            storage_kw,
            soc_kwh: storages
                .iter()
                .map(|ss| ss.iter().map(|s| s.energy_kwh).collect())
                .collect(),
            line_flows_kw: flows,
            trades_used: classification.is_some(),
            repaired,
            repair_infeasible,
            timings,
        });
    }
    Ok(RunReport::assemble(
        ControllerKind::Realtime,
        input,
        records,
        micros(run_start),
    ))
}
