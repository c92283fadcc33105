//! MV grid model: case files, DC power flow, PTDFs and line limits.

mod case;
mod flow;

pub use case::{convert_matpower, parse_case, Bus, BusKind, GridCase, Line};
pub use flow::{
    check_line_limits, compute_ptdf, compute_ptdf_with, solve_dc_power_flow, DcPowerFlow,
    FlowSolution, PtdfMatrix, Violation, LIMIT_TOLERANCE_KW,
};

use crate::scalar::Scalar;

/// Bus injections for a set of microgrid consumptions (consumption positive).
///
/// Microgrid buses inject `-x_device`, pass-through buses nothing, and the
/// market bus supplies the total.
pub fn injections_from_consumption<T: Scalar>(grid: &GridCase<T>, x_device: &[T]) -> Vec<T> {
    assert_eq!(x_device.len(), grid.num_microgrids());
    let mut inj = vec![T::zero(); grid.buses.len()];
    let mut total = T::zero();
    for (&bus, &x) in grid.microgrid_buses().iter().zip(x_device) {
        inj[bus] = -x;
        total += x;
    }
    inj[grid.market()] = total;
    inj
}

/// Grid cases shipped with the crate, by name.
pub const BUILTIN_CASES: [(&str, &str); 4] = [
    ("case9", include_str!("../../data/grids/case9.case")),
    ("case14", include_str!("../../data/grids/case14.case")),
    ("case57", include_str!("../../data/grids/case57.case")),
    ("caseNW", include_str!("../../data/grids/caseNW.case")),
];

pub fn builtin_case_text(name: &str) -> Option<&'static str> {
    BUILTIN_CASES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn builtin_case<T: Scalar>(name: &str) -> Option<crate::error::Result<GridCase<T>>> {
    builtin_case_text(name).map(parse_case)
}
