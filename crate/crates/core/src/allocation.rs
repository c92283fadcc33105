//! Splitting a microgrid's committed power among PV and storages, and the
//! per-slice update of the desired market level.

use crate::devices::{FlexInterval, MicrogridSlice};
use crate::error::{Error, Result};
use crate::scalar::{clip, Scalar};

const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    /// External power per storage, consumption positive.
    pub storage_kw: Vec<T>,
    pub pv_used_kw: T,
    pub pv_curtailed_kw: T,
    /// Common level the storages were filled to.
    pub level: T,
}

/// Serves the household load, uses as much PV as the storages can absorb and
/// spreads the rest over the storages at a common clipped level.
pub fn distribute_power<T: Scalar>(mg: &MicrogridSlice<T>, committed_kw: T) -> Result<Allocation<T>> {
    let bounds = &mg.storage_bounds;
    let sum_lo: T = bounds.iter().map(|b| b.lower_kw).sum();
    let sum_hi: T = bounds.iter().map(|b| b.upper_kw).sum();
    let lower = mg.load_kw - mg.pv_kw + sum_lo;
    let upper = mg.load_kw + sum_hi;
    let tol = T::lit(1e-9) * (T::one() + lower.abs().max(upper.abs()));
    if committed_kw < lower - tol || committed_kw > upper + tol {
        return Err(Error::AllocationOutOfBounds {
            power: committed_kw.to_f64_lossy(),
            lower: lower.to_f64_lossy(),
            upper: upper.to_f64_lossy(),
        });
    }

    let remaining = committed_kw - mg.load_kw;
    let pv_used = clip(sum_hi - remaining, T::zero(), mg.pv_kw);
    let storage_total = clip(remaining + pv_used, sum_lo, sum_hi);
    let (storage_kw, level) = cave_fill(bounds, storage_total);
    Ok(Allocation {
        storage_kw,
        pv_used_kw: pv_used,
        pv_curtailed_kw: mg.pv_kw - pv_used,
        level,
    })
}

/// Powers `clip(λ, l_d, u_d)` summing to `total`, which must lie within the
/// summed bounds. Bisection on λ, then the rounding residual goes to the
/// lowest-id device that still has room.
pub fn cave_fill<T: Scalar>(bounds: &[FlexInterval<T>], total: T) -> (Vec<T>, T) {
    if bounds.is_empty() {
        return (Vec::new(), T::zero());
    }
    let filled = |lambda: T| -> T { bounds.iter().map(|b| clip(lambda, b.lower_kw, b.upper_kw)).sum() };
    let mut lo = bounds.iter().map(|b| b.lower_kw).fold(T::infinity(), T::min);
    let mut hi = bounds.iter().map(|b| b.upper_kw).fold(T::neg_infinity(), T::max);
    for _ in 0..BISECTION_STEPS {
        let mid = T::lit(0.5) * (lo + hi);
        if filled(mid) < total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let level = T::lit(0.5) * (lo + hi);
    let mut powers: Vec<T> = bounds
        .iter()
        .map(|b| clip(level, b.lower_kw, b.upper_kw))
        .collect();
    let mut residual = total - powers.iter().copied().sum::<T>();
    for (p, b) in powers.iter_mut().zip(bounds) {
        if residual == T::zero() {
            break;
        }
        let moved = clip(*p + residual, b.lower_kw, b.upper_kw);
        residual -= moved - *p;
        *p = moved;
    }
    (powers, level)
}

/// Power level that spreads the remaining planned energy evenly over the
/// remaining slices. `t` counts from 1.
pub fn update_target<T: Scalar>(planned_kwh: T, exchanged_kwh: T, t: usize, slices: usize, dt_h: T) -> T {
    assert!(t >= 1 && t <= slices, "slice {t} outside 1..={slices}");
    let left = T::from_usize_lossy(slices - t + 1);
    (planned_kwh - exchanged_kwh) / (left * dt_h)
}
