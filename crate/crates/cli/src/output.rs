//! CSV and JSON writers. Column orders are fixed; see the README.

use anyhow::Result;
use rtc_core::controllers::{Comparison, RunReport, RuntimeStats};
use rtc_core::grid::{GridCase, PtdfMatrix};
use rtc_core::scenario::SimInput;
use serde_json::{json, Value};

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn bus_label(grid: &GridCase<f64>, bus: usize) -> String {
    grid.buses[bus].label.to_string()
}

/// Flow over limit, 0 on unlimited lines.
fn loading(flow: f64, limit: f64) -> f64 {
    if limit.is_finite() {
        flow.abs() / limit
    } else {
        0.0
    }
}

pub fn slices_csv(input: &SimInput<f64>, report: &RunReport<f64>) -> Result<String> {
    let devices = input.microgrids.iter().map(|m| m.storages.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "t",
        "mg",
        "bus",
        "target_kw",
        "x_market_kw",
        "p2p_net_kw",
        "x_device_kw",
        "pv_curtailed_kw",
    ]
    .map(String::from)
    .to_vec();
    for d in 0..devices {
        header.push(format!("storage{d}_kw"));
        header.push(format!("soc{d}_kwh"));
    }
    w.write_record(&header)?;
    let buses = input.grid.microgrid_buses();
    for r in &report.slices {
        for i in 0..input.microgrids.len() {
            let mut row = vec![
                r.t.to_string(),
                i.to_string(),
                bus_label(&input.grid, buses[i]),
                r.target_kw[i].to_string(),
                r.market_kw[i].to_string(),
                r.p2p_net_kw[i].to_string(),
                r.device_kw[i].to_string(),
                r.pv_curtailed_kw[i].to_string(),
            ];
            for d in 0..devices {
                row.push(opt(r.storage_kw[i].get(d)));
                row.push(opt(r.soc_kwh[i].get(d)));
            }
            w.write_record(&row)?;
        }
    }
    finish(w)
}

pub fn lines_csv(grid: &GridCase<f64>, report: &RunReport<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "line", "from_bus", "to_bus", "flow_kw", "limit_kw", "loading"])?;
    for r in &report.slices {
        for (l, (line, &f)) in grid.lines.iter().zip(&r.line_flows_kw).enumerate() {
            w.write_record([
                r.t.to_string(),
                l.to_string(),
                bus_label(grid, line.from),
                bus_label(grid, line.to),
                f.to_string(),
                line.limit_kw.to_string(),
                loading(f, line.limit_kw).to_string(),
            ])?;
        }
    }
    finish(w)
}

pub fn report_summary(input: &SimInput<f64>, report: &RunReport<f64>) -> Value {
    let n = report.slices.len().max(1) as f64;
    let step = |f: fn(&rtc_core::controllers::StepTimings) -> f64| {
        report.slices.iter().map(|r| f(&r.timings)).sum::<f64>() / n
    };
    json!({
        "controller": report.controller.name(),
        "scenario": report.scenario,
        "grid_buses": input.grid.buses.len(),
        "microgrids": input.microgrids.len(),
        "slices": report.slices.len(),
        "dt_h": report.dt_h,
        "flat_targets_kw": report.flat_targets,
        "objective": report.objective,
        "objective_updated": report.objective_updated,
        "max_soc_error_kwh": report.max_soc_error(),
        "soc_errors_kwh": report.soc_errors_kwh,
        "max_line_loading": report.max_line_loading(&input.grid),
        "violations": report.events.len(),
        "events": report.events,
        "repaired_slices": report.slices.iter().filter(|r| r.repaired).count(),
        "runtime_us": report.runtime_us,
        "slice_time_us": RuntimeStats::from_samples(&report.slice_times_us()),
        "mean_step_us": {
            "bounds": step(|t| t.bounds_us),
            "flow": step(|t| t.flow_us),
            "power_flow": step(|t| t.power_flow_us),
            "repair": step(|t| t.repair_us),
            "allocation": step(|t| t.allocation_us),
        },
    })
}

pub fn comparison_csv(table: &Comparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "controller",
        "available",
        "objective",
        "objective_updated",
        "max_soc_error_kwh",
        "max_line_loading",
        "violations",
        "mean_us",
        "min_us",
        "q25_us",
        "median_us",
        "q75_us",
        "max_us",
        "note",
    ])?;
    for row in &table.rows {
        let rt = row.runtime;
        w.write_record([
            row.controller.name().to_string(),
            row.available.to_string(),
            opt(row.objective),
            opt(row.objective_updated),
            opt(row.max_soc_error_kwh),
            opt(row.max_line_loading),
            opt(row.violations),
            opt(rt.map(|s| s.mean_us)),
            opt(rt.map(|s| s.min_us)),
            opt(rt.map(|s| s.q25_us)),
            opt(rt.map(|s| s.median_us)),
            opt(rt.map(|s| s.q75_us)),
            opt(rt.map(|s| s.max_us)),
            row.note.clone().unwrap_or_default(),
        ])?;
    }
    finish(w)
}

pub fn comparison_text(table: &Comparison) -> String {
    let mut s = format!("scenario {}\n", table.scenario);
    s += &format!(
        "{:<8} {:>16} {:>14} {:>10} {:>12}\n",
        "", "objective", "max SoC err", "violations", "median us"
    );
    for row in &table.rows {
        match (row.objective, row.max_soc_error_kwh, row.violations, row.runtime) {
            (Some(o), Some(e), Some(v), Some(rt)) => {
                s += &format!(
                    "{:<8} {o:>16.6} {e:>14.3e} {v:>10} {:>12.1}\n",
                    row.controller.name(),
                    rt.median_us
                )
            }
            _ => {
                s += &format!(
                    "{:<8} unavailable: {}\n",
                    row.controller.name(),
                    row.note.as_deref().unwrap_or("")
                )
            }
        }
    }
    if let Some(ok) = table.ordering_holds {
        s += &format!("offline <= rtc <= naive: {}\n", if ok { "holds" } else { "violated" });
    }
    s
}

/// Market exchange per slice and microgrid, one column per controller next
/// to the flat plan level.
pub fn market_csv(input: &SimInput<f64>, reports: &[&RunReport<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "mg".into(), "plan_kw".into()];
    header.extend(reports.iter().map(|r| format!("{}_kw", r.controller.name())));
    w.write_record(&header)?;
    let flat = input.flat_targets();
    for t in 0..input.slices {
        for (i, plan) in flat.iter().enumerate() {
            let mut row = vec![(t + 1).to_string(), i.to_string(), plan.to_string()];
            row.extend(reports.iter().map(|r| r.slices[t].market_kw[i].to_string()));
            w.write_record(&row)?;
        }
    }
    finish(w)
}

pub fn runtime_csv(reports: &[&RunReport<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "controller",
        "t",
        "total_us",
        "bounds_us",
        "flow_us",
        "power_flow_us",
        "repair_us",
        "allocation_us",
    ])?;
    for r in reports {
        for s in &r.slices {
            let t = &s.timings;
            w.write_record([
                r.controller.name().to_string(),
                s.t.to_string(),
                t.total_us.to_string(),
                t.bounds_us.to_string(),
                t.flow_us.to_string(),
                t.power_flow_us.to_string(),
                t.repair_us.to_string(),
                t.allocation_us.to_string(),
            ])?;
        }
    }
    finish(w)
}

/// Every unordered bus pair `from < to` (file order); the reverse transfer
/// is the negative.
pub fn ptdf_csv(grid: &GridCase<f64>, ptdf: &PtdfMatrix<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["line", "line_from", "line_to", "from_bus", "to_bus", "ptdf"])?;
    let nb = grid.buses.len();
    for (l, line) in grid.lines.iter().enumerate() {
        let (lf, lt) = (bus_label(grid, line.from), bus_label(grid, line.to));
        for i in 0..nb {
            for j in i + 1..nb {
                w.write_record([
                    l.to_string(),
                    lf.clone(),
                    lt.clone(),
                    bus_label(grid, i),
                    bus_label(grid, j),
                    ptdf.factor(l, i, j).to_string(),
                ])?;
            }
        }
    }
    finish(w)
}

pub fn shift_factor_csv(grid: &GridCase<f64>, ptdf: &PtdfMatrix<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["line".to_string(), "line_from".into(), "line_to".into()];
    header.extend((0..grid.buses.len()).map(|b| format!("bus{}", bus_label(grid, b))));
    w.write_record(&header)?;
    let isf = ptdf.shift_factors();
    for (l, line) in grid.lines.iter().enumerate() {
        let mut row = vec![l.to_string(), bus_label(grid, line.from), bus_label(grid, line.to)];
        row.extend(isf.row(l).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    finish(w)
}

pub fn flows_csv(grid: &GridCase<f64>, flows: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["line", "from_bus", "to_bus", "flow_kw", "limit_kw", "loading"])?;
    for (l, (line, &f)) in grid.lines.iter().zip(flows).enumerate() {
        w.write_record([
            l.to_string(),
            bus_label(grid, line.from),
            bus_label(grid, line.to),
            f.to_string(),
            line.limit_kw.to_string(),
            loading(f, line.limit_kw).to_string(),
        ])?;
    }
    finish(w)
}
