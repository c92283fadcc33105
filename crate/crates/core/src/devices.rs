//! Storage devices, their single-slice flexibility and microgrid aggregation.
//!
//! Powers are measured at the grid-side connection, consumption positive.
//! Internal (cell-side) power relates to external power through the
//! efficiency: charging stores `η·p`, discharging draws `p/η` from the cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    Battery,
    Ev,
}

/// A battery or an EV.
#[derive(Debug, Clone, PartialEq)]
pub struct Storage<T> {
    pub kind: StorageKind,
    pub capacity_kwh: T,
    /// Internal charging limit.
    pub charge_limit_kw: T,
    /// Internal discharging limit.
    pub discharge_limit_kw: T,
    pub efficiency: T,
    /// Energy at the start of the current slice.
    pub energy_kwh: T,
    /// Energy required at the end of the slot.
    pub target_kwh: T,
    pub available: bool,
}

impl<T: Scalar> Storage<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(format!("storage: {m}")));
        if !(self.capacity_kwh >= T::zero()) {
            return bad("negative capacity");
        }
        if !(self.efficiency > T::zero() && self.efficiency <= T::one()) {
            return bad("efficiency outside (0, 1]");
        }
        if !(self.charge_limit_kw >= T::zero() && self.discharge_limit_kw >= T::zero()) {
            return bad("negative power limit");
        }
        if !(self.energy_kwh >= T::zero() && self.energy_kwh <= self.capacity_kwh) {
            return bad("energy outside [0, capacity]");
        }
        if !(self.target_kwh >= T::zero() && self.target_kwh <= self.capacity_kwh) {
            return bad("target outside [0, capacity]");
        }
        Ok(())
    }

    /// External power that changes the stored energy at `internal_kw`.
    #[inline]
    fn external(&self, internal_kw: T) -> T {
        if internal_kw >= T::zero() {
            internal_kw / self.efficiency
        } else {
            internal_kw * self.efficiency
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexInterval<T> {
    pub lower_kw: T,
    pub upper_kw: T,
}

impl<T: Scalar> FlexInterval<T> {
    pub fn new(lower_kw: T, upper_kw: T) -> Self {
        Self { lower_kw, upper_kw }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn contains(&self, p: T, tol: T) -> bool {
        p >= self.lower_kw - tol && p <= self.upper_kw + tol
    }

    pub fn width(&self) -> T {
        self.upper_kw - self.lower_kw
    }
}

/// Relative tolerance used when screening intervals and dispatch.
const FEAS_TOL: f64 = 1e-9;

/// Feasible external power band of one storage for slice `t` (1-based) of
/// `slices`, with `dt_h` the slice length in hours.
///
/// The band combines the state-of-charge limits, the internal power limits
/// and a backlog term that keeps the slot-end target reachable at full power
/// in the remaining `slices - t` slices. Intervals that exclude zero are
/// returned as-is: the device must charge (or discharge) this slice.
pub fn storage_flex_bounds<T: Scalar>(
    s: &Storage<T>,
    t: usize,
    slices: usize,
    dt_h: T,
) -> Result<FlexInterval<T>> {
    assert!(t >= 1 && t <= slices, "slice index {t} outside 1..={slices}");
    assert!(dt_h > T::zero());
    if !s.available {
        return Ok(FlexInterval::zero());
    }
    let remaining = T::from_usize_lossy(slices - t);
    let backlog = (s.target_kwh - s.energy_kwh) / dt_h;

    // internal power limits, kW into the cells
    let low_int = (-s.energy_kwh / dt_h)
        .max(-s.discharge_limit_kw)
        .max(backlog - remaining * s.charge_limit_kw);
    let high_int = ((s.capacity_kwh - s.energy_kwh) / dt_h)
        .min(s.charge_limit_kw)
        .min(backlog + remaining * s.discharge_limit_kw);

    let mut lower = s.external(low_int);
    let mut upper = s.external(high_int);
    if lower > upper {
        let scale = lower.abs().max(upper.abs()).max(T::one());
        if lower - upper > T::lit(FEAS_TOL) * scale {
            return Err(Error::UnreachableTarget {
                slice: t,
                lower: lower.to_f64_lossy(),
                upper: upper.to_f64_lossy(),
            });
        }
        let mid = (lower + upper) / T::lit(2.0);
        lower = mid;
        upper = mid;
    }
    Ok(FlexInterval::new(lower, upper))
}

/// Household load, PV and storages of one microgrid for a single slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridSlice<T> {
    pub load_kw: T,
    pub pv_kw: T,
    pub storage_bounds: Vec<FlexInterval<T>>,
}

/// Aggregate band: `[P_HL - P_PV + Σ l, P_HL + Σ u]`.
pub fn aggregate_flex<T: Scalar>(mg: &MicrogridSlice<T>) -> FlexInterval<T> {
    let lo: T = mg.storage_bounds.iter().map(|b| b.lower_kw).sum();
    let hi: T = mg.storage_bounds.iter().map(|b| b.upper_kw).sum();
    FlexInterval::new(mg.load_kw - mg.pv_kw + lo, mg.load_kw + hi)
}

/// Commits `power_kw` of external power for one slice.
///
/// `E' = E + (η·p⁺ - p⁻/η)·Δt`. Power outside the current bounds is a
/// dispatch bug and is reported rather than clamped.
pub fn apply_dispatch<T: Scalar>(
    s: &Storage<T>,
    power_kw: T,
    bounds: &FlexInterval<T>,
    dt_h: T,
) -> Result<Storage<T>> {
    let scale = bounds.lower_kw.abs().max(bounds.upper_kw.abs()).max(T::one());
    if !bounds.contains(power_kw, T::lit(FEAS_TOL) * scale) {
        return Err(Error::DispatchOutOfBounds {
            power: power_kw.to_f64_lossy(),
            lower: bounds.lower_kw.to_f64_lossy(),
            upper: bounds.upper_kw.to_f64_lossy(),
        });
    }
    let mut next = s.clone();
    next.energy_kwh = energy_after(s, power_kw, dt_h);
    // rounding only; the bounds keep the state inside [0, C]
    next.energy_kwh = next.energy_kwh.max(T::zero()).min(s.capacity_kwh);
    Ok(next)
}

/// Stored energy after `power_kw` for `dt_h` hours, without any bound check.
#[inline]
pub fn energy_after<T: Scalar>(s: &Storage<T>, power_kw: T, dt_h: T) -> T {
    let charge = power_kw.max(T::zero());
    let discharge = (-power_kw).max(T::zero());
    s.energy_kwh + (s.efficiency * charge - discharge / s.efficiency) * dt_h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn battery(e: f64, target: f64) -> Storage<f64> {
        Storage {
            kind: StorageKind::Battery,
            capacity_kwh: 42.0,
            charge_limit_kw: 15.0,
            discharge_limit_kw: 15.0,
            efficiency: 0.95,
            energy_kwh: e,
            target_kwh: target,
            available: true,
        }
    }

    const DT_15S: f64 = 15.0 / 3600.0;

    #[test]
    fn community_battery_bounds() {
        // E = target = 20 kWh, 10 slices left of 15 s.
        let b = storage_flex_bounds(&battery(20.0, 20.0), 50, 60, DT_15S).unwrap();
        assert!((b.lower_kw - (-14.25)).abs() < 1e-12);
        assert!((b.upper_kw - 15.0 / 0.95).abs() < 1e-12);
        assert!((b.upper_kw - 15.789_473_684).abs() < 1e-8);
    }

    #[test]
    fn last_slice_on_target_is_pinned_to_zero() {
        let b = storage_flex_bounds(&battery(20.0, 20.0), 60, 60, DT_15S).unwrap();
        assert_eq!(b.lower_kw, 0.0);
        assert_eq!(b.upper_kw, 0.0);
    }

    #[test]
    fn unavailable_ev_has_no_flexibility() {
        let mut ev = battery(20.0, 30.0);
        ev.kind = StorageKind::Ev;
        ev.available = false;
        let b = storage_flex_bounds(&ev, 1, 60, DT_15S).unwrap();
        assert_eq!(b, FlexInterval::zero());
    }

    #[test]
    fn forced_charge_uses_charging_efficiency() {
        // 0.05 kWh short with one slice left: must charge 0.05/Δt/η externally.
        let s = battery(20.0, 20.05);
        let b = storage_flex_bounds(&s, 60, 60, DT_15S).unwrap();
        let need = 0.05 / DT_15S / 0.95;
        assert!((b.lower_kw - need).abs() < 1e-9);
        assert!((b.upper_kw - need).abs() < 1e-9);
        let next = apply_dispatch(&s, b.lower_kw, &b, DT_15S).unwrap();
        assert!((next.energy_kwh - 20.05).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_is_reported() {
        // 10 kWh short with one slice of 15 s left.
        let s = battery(10.0, 20.0);
        assert!(matches!(
            storage_flex_bounds(&s, 60, 60, DT_15S),
            Err(Error::UnreachableTarget { slice: 60, .. })
        ));
    }

    #[test]
    fn aggregation_examples() {
        let mg = MicrogridSlice {
            load_kw: 5.0,
            pv_kw: 3.0,
            storage_bounds: vec![],
        };
        assert_eq!(aggregate_flex(&mg), FlexInterval::new(2.0, 5.0));

        let b = storage_flex_bounds(&battery(20.0, 20.0), 50, 60, DT_15S).unwrap();
        let mg = MicrogridSlice {
            load_kw: 10.0,
            pv_kw: 0.0,
            storage_bounds: vec![b],
        };
        let agg = aggregate_flex(&mg);
        assert!((agg.lower_kw - (-4.25)).abs() < 1e-12);
        assert!((agg.upper_kw - 25.789_473_684).abs() < 1e-8);

        let mg = MicrogridSlice {
            load_kw: 7.0,
            pv_kw: 0.0,
            storage_bounds: vec![],
        };
        assert_eq!(aggregate_flex(&mg), FlexInterval::new(7.0, 7.0));
    }

    #[test]
    fn dispatch_examples() {
        let s = battery(20.0, 20.0);
        let b = storage_flex_bounds(&s, 1, 60, 1.0 / 240.0).unwrap();
        assert_eq!(apply_dispatch(&s, 0.0, &b, 1.0 / 240.0).unwrap().energy_kwh, 20.0);
        let next = apply_dispatch(&s, 15.0, &b, 1.0 / 240.0).unwrap();
        assert!((next.energy_kwh - 20.0 - 0.95 * 15.0 / 240.0).abs() < 1e-12);
        assert!((next.energy_kwh - 20.0 - 0.059_375).abs() < 1e-12);
        let there = apply_dispatch(&s, 14.25, &b, 1.0 / 240.0).unwrap();
        let back = apply_dispatch(&there, -14.25, &b, 1.0 / 240.0).unwrap();
        assert!(back.energy_kwh < s.energy_kwh);
        assert!(matches!(
            apply_dispatch(&s, 100.0, &b, 1.0 / 240.0),
            Err(Error::DispatchOutOfBounds { .. })
        ));
    }

    fn arb_storage() -> impl Strategy<Value = Storage<f64>> {
        (1.0..80.0f64, 1.0..20.0f64, 1.0..20.0f64, 0.8..=1.0f64, 0.0..1.0f64, 0.0..1.0f64)
            .prop_map(|(c, lc, ld, eta, e, tgt)| Storage {
                kind: StorageKind::Ev,
                capacity_kwh: c,
                charge_limit_kw: lc,
                discharge_limit_kw: ld,
                efficiency: eta,
                energy_kwh: e * c,
                target_kwh: tgt * c,
                available: true,
            })
    }

    proptest! {
        /// Always dispatching the lower (or upper) bound lands exactly on target
        /// and keeps the state of charge inside [0, C].
        #[test]
        fn extreme_dispatch_reaches_target(
            mut s in arb_storage(),
            use_upper in any::<bool>(),
            slices in 2usize..80,
            shift in -0.999..0.999f64,
        ) {
            let dt = 15.0 / 3600.0;
            // keep the target reachable at full internal power
            let span = slices as f64 * dt;
            let reach = if shift >= 0.0 { s.charge_limit_kw } else { s.discharge_limit_kw };
            s.target_kwh = (s.energy_kwh + shift * reach * span).clamp(0.0, s.capacity_kwh);
            for t in 1..=slices {
                let b = storage_flex_bounds(&s, t, slices, dt).unwrap();
                let p = if use_upper { b.upper_kw } else { b.lower_kw };
                s = apply_dispatch(&s, p, &b, dt).unwrap();
                prop_assert!(s.energy_kwh >= 0.0 && s.energy_kwh <= s.capacity_kwh);
            }
            prop_assert!((s.energy_kwh - s.target_kwh).abs() < 1e-9);
        }

        /// With the state held fixed, later slices give nested intervals.
        #[test]
        fn intervals_tighten_toward_the_end(s in arb_storage()) {
            let dt = 15.0 / 3600.0;
            let slices = 60;
            let mut prev: Option<FlexInterval<f64>> = None;
            for t in 1..=slices {
                let Ok(b) = storage_flex_bounds(&s, t, slices, dt) else { break };
                if let Some(p) = prev {
                    prop_assert!(b.lower_kw >= p.lower_kw - 1e-12);
                    prop_assert!(b.upper_kw <= p.upper_kw + 1e-12);
                }
                prev = Some(b);
            }
        }
    }
}
