use std::time::Instant;

use log::warn;

use super::{micros, ControllerKind, RunReport, SliceRecord, StepTimings};
use crate::devices::{energy_after, Storage};
use crate::error::Result;
use crate::grid::{check_line_limits, injections_from_consumption, DcPowerFlow};
use crate::scalar::Scalar;
use crate::scenario::SimInput;

/// Constant external power that moves a storage from its initial energy to
/// its target over `slices` slices of `dt_h` hours.
pub fn naive_storage_rate<T: Scalar>(s: &Storage<T>, slices: usize, dt_h: T) -> T {
    if !s.available {
        return T::zero();
    }
    let span = T::from_usize_lossy(slices) * dt_h;
    let delta = s.target_kwh - s.energy_kwh;
    if delta >= T::zero() {
        delta / (s.efficiency * span)
    } else {
        delta * s.efficiency / span
    }
}

/// Every storage runs its constant rate, PV is never curtailed and the market
/// takes whatever is left. Line flows are computed for reporting only.
pub fn run_naive<T: Scalar>(input: &SimInput<T>) -> Result<RunReport<T>> {
    let run_start = Instant::now();
    let grid = &input.grid;
    let dc = DcPowerFlow::new(grid)?;
    let n = input.microgrids.len();
    let dt = input.dt_h;
    let rates: Vec<Vec<T>> = input
        .microgrids
        .iter()
        .map(|m| m.storages.iter().map(|s| naive_storage_rate(s, input.slices, dt)).collect())
        .collect();
    let mut storages: Vec<Vec<Storage<T>>> = input.microgrids.iter().map(|m| m.storages.clone()).collect();
    let flat = input.flat_targets();
    let mut records = Vec::with_capacity(input.slices);

    for t in 1..=input.slices {
        let slice_start = Instant::now();
        let mut timings = StepTimings::default();
        let step = Instant::now();
        let market: Vec<T> = input
            .microgrids
            .iter()
            .zip(&rates)
            .map(|(m, r)| m.load_kw[t - 1] - m.pv_kw[t - 1] + r.iter().copied().sum::<T>())
            .collect();
        for (ss, r) in storages.iter_mut().zip(&rates) {
            for (s, &p) in ss.iter_mut().zip(r) {
                s.energy_kwh = energy_after(s, p, dt).max(T::zero()).min(s.capacity_kwh);
            }
        }
        timings.allocation_us = micros(step);

        let step = Instant::now();
        let flows = dc.solve(grid, &injections_from_consumption(grid, &market))?.flows_kw;
        timings.power_flow_us = micros(step);
        for v in check_line_limits(grid, &flows) {
            warn!("slice {t}: line {} over its limit by {:?} kW", v.line, v.excess_kw);
        }
        timings.total_us = micros(slice_start);

        records.push(SliceRecord {
            t,
            target_kw: flat.clone(),
            device_kw: market.clone(),
            market_kw: market,
            p2p_net_kw: vec![T::zero(); n],
            pv_curtailed_kw: vec![T::zero(); n],
            storage_kw: rates.clone(),
            soc_kwh: storages
                .iter()
                .map(|ss| ss.iter().map(|s| s.energy_kwh).collect())
                .collect(),
            line_flows_kw: flows,
            trades_used: false,
            repaired: false,
            repair_infeasible: false,
            timings,
        });
    }
    Ok(RunReport::assemble(ControllerKind::Naive, input, records, micros(run_start)))
}
