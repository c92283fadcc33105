//! Controllers that run a scenario slot: the three-step real-time controller,
//! the constant-rate naive baseline and the full-information offline model.

mod naive;
mod offline;
mod realtime;

use serde::Serialize;

use crate::allocation::update_target;
use crate::error::{Error, Result};
use crate::grid::{check_line_limits, GridCase};
use crate::scalar::Scalar;
use crate::scenario::SimInput;

pub use naive::{naive_storage_rate, run_naive};
pub use offline::{run_offline, OfflineConfig, DEFAULT_OFFLINE_CAP};
pub use realtime::{run_realtime, RealtimeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Realtime,
    Naive,
    Offline,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Realtime => "rtc",
            ControllerKind::Naive => "naive",
            ControllerKind::Offline => "offline",
        }
    }
}

/// Wall time spent in each step of one slice, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepTimings {
    pub bounds_us: f64,
    pub flow_us: f64,
    pub power_flow_us: f64,
    pub repair_us: f64,
    pub allocation_us: f64,
    pub total_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceRecord<T> {
    /// Slice number, from 1.
    pub t: usize,
    /// Market level each microgrid aimed for in this slice.
    pub target_kw: Vec<T>,
    pub market_kw: Vec<T>,
    pub device_kw: Vec<T>,
    pub p2p_net_kw: Vec<T>,
    pub pv_curtailed_kw: Vec<T>,
    /// External power of each storage, per microgrid.
    pub storage_kw: Vec<Vec<T>>,
    /// Stored energy at the end of the slice, per microgrid.
    pub soc_kwh: Vec<Vec<T>>,
    pub line_flows_kw: Vec<T>,
    pub trades_used: bool,
    pub repaired: bool,
    pub repair_infeasible: bool,
    pub timings: StepTimings,
}

impl<T: Scalar> SliceRecord<T> {
    /// Equality of everything except wall-clock timings.
    pub fn same_outputs(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.timings = other.timings;
        &a == other
    }
}

/// A committed line flow beyond its limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridEvent<T> {
    pub t: usize,
    pub line: usize,
    pub excess_kw: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport<T> {
    pub controller: ControllerKind,
    pub scenario: String,
    pub dt_h: T,
    /// Initial flat market level per microgrid.
    pub flat_targets: Vec<T>,
    pub slices: Vec<SliceRecord<T>>,
    /// `Σ_t Σ_i (x^M_{i,t} - X⁰_i)²`
    pub objective: T,
    /// Same sum against the level re-spread from the remaining plan each slice.
    pub objective_updated: T,
    /// `|E_T - Ẽ|` per storage, per microgrid.
    pub soc_errors_kwh: Vec<Vec<T>>,
    pub events: Vec<GridEvent<T>>,
    pub runtime_us: f64,
}

impl<T: Scalar> RunReport<T> {
    pub(crate) fn assemble(
        controller: ControllerKind,
        input: &SimInput<T>,
        slices: Vec<SliceRecord<T>>,
        runtime_us: f64,
    ) -> Self {
        let flat_targets = input.flat_targets();
        let objective = objective_against(&slices, |_, i| flat_targets[i]);
        let updated = updated_targets(input, &slices);
        let objective_updated = objective_against(&slices, |k, i| updated[k][i]);
        let soc_errors_kwh = match slices.last() {
            Some(last) => input
                .microgrids
                .iter()
                .zip(&last.soc_kwh)
                .map(|(mg, soc)| {
                    mg.storages
                        .iter()
                        .zip(soc)
                        .map(|(s, &e)| (e - s.target_kwh).abs())
                        .collect()
                })
                .collect(),
            None => Vec::new(),
        };
        let events = slices
            .iter()
            .flat_map(|r| {
                check_line_limits(&input.grid, &r.line_flows_kw)
                    .into_iter()
                    .map(move |v| GridEvent {
                        t: r.t,
                        line: v.line,
                        excess_kw: v.excess_kw,
                    })
            })
            .collect();
        Self {
            controller,
            scenario: input.name.clone(),
            dt_h: input.dt_h,
            flat_targets,
            slices,
            objective,
            objective_updated,
            soc_errors_kwh,
            events,
            runtime_us,
        }
    }

    pub fn max_soc_error(&self) -> T {
        self.soc_errors_kwh
            .iter()
            .flatten()
            .fold(T::zero(), |m, &e| m.max(e))
    }

    /// Largest `|flow| / limit` over all slices and lines.
    pub fn max_line_loading(&self, grid: &GridCase<T>) -> T {
        let mut worst = T::zero();
        for r in &self.slices {
            for (f, l) in r.line_flows_kw.iter().zip(&grid.lines) {
                if l.limit_kw.is_finite() {
                    worst = worst.max(f.abs() / l.limit_kw);
                }
            }
        }
        worst
    }

    /// Per-slice controller time in microseconds.
    pub fn slice_times_us(&self) -> Vec<f64> {
        self.slices.iter().map(|r| r.timings.total_us).collect()
    }
}

pub(crate) fn micros(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e6
}

fn objective_against<T: Scalar>(slices: &[SliceRecord<T>], target: impl Fn(usize, usize) -> T) -> T {
    let mut total = T::zero();
    for (k, r) in slices.iter().enumerate() {
        for (i, &x) in r.market_kw.iter().enumerate() {
            let d = x - target(k, i);
            total += d * d;
        }
    }
    total
}

/// The re-spread level of every slice given the market exchanges so far.
pub fn updated_targets<T: Scalar>(input: &SimInput<T>, slices: &[SliceRecord<T>]) -> Vec<Vec<T>> {
    let n = input.microgrids.len();
    let mut exchanged = vec![T::zero(); n];
    let mut out = Vec::with_capacity(slices.len());
    for (k, r) in slices.iter().enumerate() {
        let row = (0..n)
            .map(|i| {
                update_target(
                    input.microgrids[i].planned_market_kwh,
                    exchanged[i],
                    k + 1,
                    input.slices,
                    input.dt_h,
                )
            })
            .collect();
        out.push(row);
        for (e, &x) in exchanged.iter_mut().zip(&r.market_kw) {
            *e += x * input.dt_h;
        }
    }
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary statistics of per-slice run times, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeStats {
    pub mean_us: f64,
    pub min_us: f64,
    pub q25_us: f64,
    pub median_us: f64,
    pub q75_us: f64,
    pub max_us: f64,
}

impl RuntimeStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let mean = if s.is_empty() {
            f64::NAN
        } else {
            // summation rounding can put the mean of equal samples past the max
            (s.iter().sum::<f64>() / s.len() as f64).clamp(s[0], s[s.len() - 1])
        };
        Self {
            mean_us: mean,
            min_us: s.first().copied().unwrap_or(f64::NAN),
            q25_us: quantile(&s, 0.25),
            median_us: quantile(&s, 0.5),
            q75_us: quantile(&s, 0.75),
            max_us: s.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub controller: ControllerKind,
    pub available: bool,
    /// Why the controller has no result, when unavailable.
    pub note: Option<String>,
    pub objective: Option<f64>,
    pub objective_updated: Option<f64>,
    pub max_soc_error_kwh: Option<f64>,
    pub max_line_loading: Option<f64>,
    pub violations: Option<usize>,
    pub runtime: Option<RuntimeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub rows: Vec<ComparisonRow>,
    /// `offline ≤ rtc ≤ naive` on the fixed-level objective, when all three ran.
    pub ordering_holds: Option<bool>,
}

/// Outcome of one controller for [`compare`]: a report or the reason there
/// is none.
pub type ControllerOutcome<'a, T> = (ControllerKind, std::result::Result<&'a RunReport<T>, String>);

pub fn compare<T: Scalar>(grid: &GridCase<T>, outcomes: &[ControllerOutcome<'_, T>]) -> Result<Comparison> {
    let mut scenario: Option<&str> = None;
    for (_, r) in outcomes {
        if let Ok(r) = r {
            match scenario {
                None => scenario = Some(&r.scenario),
                Some(s) if s != r.scenario => {
                    return Err(Error::ScenarioMismatch(s.to_string(), r.scenario.clone()))
                }
                _ => {}
            }
        }
    }
    let rows: Vec<ComparisonRow> = outcomes
        .iter()
        .map(|(kind, r)| match r {
            Ok(r) => ComparisonRow {
                controller: *kind,
                available: true,
                note: None,
                objective: Some(r.objective.to_f64_lossy()),
                objective_updated: Some(r.objective_updated.to_f64_lossy()),
                max_soc_error_kwh: Some(r.max_soc_error().to_f64_lossy()),
                max_line_loading: Some(r.max_line_loading(grid).to_f64_lossy()),
                violations: Some(r.events.len()),
                runtime: Some(RuntimeStats::from_samples(&r.slice_times_us())),
            },
            Err(msg) => ComparisonRow {
                controller: *kind,
                available: false,
                note: Some(msg.clone()),
                objective: None,
                objective_updated: None,
                max_soc_error_kwh: None,
                max_line_loading: None,
                violations: None,
                runtime: None,
            },
        })
        .collect();
    let obj = |k: ControllerKind| rows.iter().find(|r| r.controller == k).and_then(|r| r.objective);
    let ordering_holds = match (
        obj(ControllerKind::Offline),
        obj(ControllerKind::Realtime),
        obj(ControllerKind::Naive),
    ) {
        (Some(o), Some(r), Some(n)) => {
            let slack = 1e-6 * (1.0 + r.abs());
            Some(o <= r + slack && r <= n + slack)
        }
        _ => None,
    };
    Ok(Comparison {
        scenario: scenario.unwrap_or_default().to_string(),
        rows,
        ordering_holds,
    })
}
