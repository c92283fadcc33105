//! Scenario files: grid reference, microgrid fleets, day-ahead plan and
//! profile sources, plus their resolution into per-slice simulation input.
//!
//! Scenarios are TOML documents:
//!
//! ```toml
//! schema_version = 1
//! name = "case9-demo"
//! grid = "builtin:case9"          # or a case file path relative to this file
//! slice_seconds = 15
//! slot_seconds = 900
//! pv_realization_factor = 1.0
//! seed = 7
//!
//! [[microgrids]]
//! bus = 5
//! households = 100
//! load_kwh = 20.0
//! pv_kwh = 35.0
//! # planned_market_kwh = -15.0   # defaults to the expected net energy
//!
//! [microgrids.load_profile]
//! source = "synthetic"
//! seed = 11
//! shape = "late"
//!
//! [microgrids.pv_profile]
//! source = "csv"
//! path = "profiles/pv5.csv"
//!
//! [[microgrids.storages]]
//! kind = "battery"
//! capacity_kwh = 42.0
//! charge_limit_kw = 15.0
//! discharge_limit_kw = 15.0
//! efficiency = 0.95
//! initial_kwh = 21.0
//! target_kwh = 21.0
//! available = true
//! ```

pub mod profile;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::devices::{Storage, StorageKind};
use crate::error::{Error, Result};
use crate::grid::{builtin_case_text, parse_case, BusKind, GridCase};
use crate::scalar::Scalar;

pub use profile::{
    apply_realization_factor, energy_kwh, normalize_and_scale, read_profile_csv, resample,
    synthesize_profile, write_profile_csv, ProfileKind, ProfileShape, SECONDS_PER_HOUR,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Peak-average consumption per household used to size microgrids from bus
/// loads.
pub const HOUSEHOLD_PEAK_KW: f64 = 0.9;

pub fn households_for_load(load_kw: f64) -> u32 {
    (load_kw / HOUSEHOLD_PEAK_KW + 1e-9).floor().max(0.0) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    /// Case file path relative to the scenario file, or `builtin:<name>`.
    pub grid: String,
    pub slice_seconds: u32,
    pub slot_seconds: u32,
    pub pv_realization_factor: f64,
    pub seed: u64,
    pub microgrids: Vec<MicrogridSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridSpec {
    /// Bus id as written in the case file.
    pub bus: i64,
    pub households: u32,
    /// Day-ahead market energy for the slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planned_market_kwh: Option<f64>,
    pub load_kwh: f64,
    /// Forecast PV energy; the realized profile is scaled by the realization
    /// factor.
    pub pv_kwh: f64,
    pub load_profile: ProfileSource,
    pub pv_profile: ProfileSource,
    #[serde(default)]
    pub storages: Vec<StorageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ProfileSource {
    Synthetic {
        seed: u64,
        #[serde(default)]
        shape: ProfileShape,
    },
    Csv {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub kind: StorageKind,
    pub capacity_kwh: f64,
    pub charge_limit_kw: f64,
    pub discharge_limit_kw: f64,
    pub efficiency: f64,
    pub initial_kwh: f64,
    pub target_kwh: f64,
    #[serde(default = "available_default")]
    pub available: bool,
}

fn available_default() -> bool {
    true
}

impl StorageSpec {
    fn to_storage<T: Scalar>(&self) -> Storage<T> {
        Storage {
            kind: self.kind,
            capacity_kwh: T::lit(self.capacity_kwh),
            charge_limit_kw: T::lit(self.charge_limit_kw),
            discharge_limit_kw: T::lit(self.discharge_limit_kw),
            efficiency: T::lit(self.efficiency),
            energy_kwh: T::lit(self.initial_kwh),
            target_kwh: T::lit(self.target_kwh),
            available: self.available,
        }
    }

    /// Grid-side energy of moving from the initial to the target state.
    pub fn planned_external_kwh(&self) -> f64 {
        let delta = self.target_kwh - self.initial_kwh;
        if delta >= 0.0 {
            delta / self.efficiency
        } else {
            delta * self.efficiency
        }
    }
}

impl MicrogridSpec {
    /// Planned market energy, defaulting to load minus forecast PV plus the
    /// grid-side storage movement.
    pub fn planned_market_kwh(&self) -> f64 {
        self.planned_market_kwh.unwrap_or_else(|| {
            self.load_kwh - self.pv_kwh
                + self
                    .storages
                    .iter()
                    .map(StorageSpec::planned_external_kwh)
                    .sum::<f64>()
        })
    }
}

/// A scenario resolved into per-slice arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SimInput<T> {
    pub name: String,
    pub grid: GridCase<T>,
    pub slice_seconds: usize,
    pub slices: usize,
    pub dt_h: T,
    /// Indexed by microgrid id of the grid.
    pub microgrids: Vec<MicrogridInput<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridInput<T> {
    pub households: u32,
    pub planned_market_kwh: T,
    pub load_kw: Vec<T>,
    /// Realized PV, one value per slice.
    pub pv_kw: Vec<T>,
    pub storages: Vec<Storage<T>>,
}

impl<T: Scalar> SimInput<T> {
    /// Flat market level of every microgrid: planned energy over slot length.
    pub fn flat_targets(&self) -> Vec<T> {
        let slot_h = T::from_usize_lossy(self.slices) * self.dt_h;
        self.microgrids
            .iter()
            .map(|m| m.planned_market_kwh / slot_h)
            .collect()
    }

    pub fn num_storages(&self) -> usize {
        self.microgrids.iter().map(|m| m.storages.len()).sum()
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn slices(&self) -> usize {
        (self.slot_seconds / self.slice_seconds) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.slice_seconds == 0 || self.slot_seconds == 0 {
            return bad("slice and slot lengths must be positive".into());
        }
        if self.slot_seconds % self.slice_seconds != 0 {
            return bad(format!(
                "slot of {} s is not a multiple of the {} s slice",
                self.slot_seconds, self.slice_seconds
            ));
        }
        if !(self.pv_realization_factor > 0.0) {
            return bad("pv_realization_factor must be positive".into());
        }
        for mg in &self.microgrids {
            if !(mg.load_kwh >= 0.0 && mg.pv_kwh >= 0.0) {
                return bad(format!("bus {}: negative slot energy", mg.bus));
            }
            for s in &mg.storages {
                s.to_storage::<f64>()
                    .validate()
                    .map_err(|e| Error::Scenario(format!("bus {}: {e}", mg.bus)))?;
                if !s.available && s.initial_kwh != s.target_kwh {
                    return bad(format!("bus {}: unavailable EV with a target change", mg.bus));
                }
            }
        }
        Ok(())
    }

    /// Loads the grid case referenced by the scenario.
    pub fn load_grid<T: Scalar>(&self, base_dir: &Path) -> Result<GridCase<T>> {
        if let Some(name) = self.grid.strip_prefix("builtin:") {
            let text = builtin_case_text(name)
                .ok_or_else(|| Error::Scenario(format!("unknown builtin grid `{name}`")))?;
            return parse_case(text);
        }
        let path = resolve_path(base_dir, &self.grid);
        parse_case(&std::fs::read_to_string(path)?)
    }

    /// Resolves grid, profiles and devices. Relative paths are taken from
    /// `base_dir`, normally the directory holding the scenario file.
    pub fn resolve<T: Scalar>(&self, base_dir: &Path) -> Result<SimInput<T>> {
        self.validate()?;
        let grid = self.load_grid::<T>(base_dir)?;
        let slot_s = self.slot_seconds as usize;
        let slice_s = self.slice_seconds as usize;

        let mut slots: Vec<Option<MicrogridInput<T>>> = vec![None; grid.num_microgrids()];
        for mg in &self.microgrids {
            let bus = grid
                .bus_by_label(mg.bus)
                .ok_or_else(|| Error::Scenario(format!("bus {} not in grid", mg.bus)))?;
            let b = &grid.buses[bus];
            let id = match (b.kind, b.microgrid) {
                (BusKind::Microgrid, Some(id)) => id,
                _ => return Err(Error::Scenario(format!("bus {} is not a microgrid bus", mg.bus))),
            };
            if slots[id].is_some() {
                return Err(Error::Scenario(format!("bus {} listed twice", mg.bus)));
            }
            let load = self.profile(&mg.load_profile, ProfileKind::Load, base_dir)?;
            let load = normalize_and_scale(&load, slot_s, mg.load_kwh)?;
            let pv = self.profile(&mg.pv_profile, ProfileKind::Pv, base_dir)?;
            if pv.iter().any(|&p| p < 0.0) {
                return Err(Error::Profile(format!("bus {}: negative PV sample", mg.bus)));
            }
            let pv = normalize_and_scale(&pv, slot_s, mg.pv_kwh)?;
            let pv = apply_realization_factor(&pv, self.pv_realization_factor);
            let lit = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
            slots[id] = Some(MicrogridInput {
                households: mg.households,
                planned_market_kwh: T::lit(mg.planned_market_kwh()),
                load_kw: lit(resample(&load, slice_s)),
                pv_kw: lit(resample(&pv, slice_s)),
                storages: mg.storages.iter().map(StorageSpec::to_storage).collect(),
            });
        }
        let microgrids = slots
            .into_iter()
            .enumerate()
            .map(|(id, m)| {
                m.ok_or_else(|| {
                    let label = grid.buses[grid.microgrid_buses()[id]].label;
                    Error::Scenario(format!("microgrid bus {label} has no entry"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimInput {
            name: self.name.clone(),
            grid,
            slice_seconds: slice_s,
            slices: slot_s / slice_s,
            dt_h: T::from_usize_lossy(slice_s) / T::lit(SECONDS_PER_HOUR),
            microgrids,
        })
    }

    fn profile(&self, src: &ProfileSource, kind: ProfileKind, base_dir: &Path) -> Result<Vec<f64>> {
        match src {
            ProfileSource::Synthetic { seed, shape } => {
                Ok(synthesize_profile(*seed, kind, *shape, self.slot_seconds as usize))
            }
            ProfileSource::Csv { path } => {
                let file = std::fs::File::open(resolve_path(base_dir, path))?;
                read_profile_csv(file)
            }
        }
    }
}

fn resolve_path(base_dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageTemplate {
    pub capacity_kwh: f64,
    pub limit_kw: f64,
    pub efficiency: f64,
}

/// Which way PV and household load lean within the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Archetype {
    /// PV peaks early, load late.
    PvEarly,
    /// PV peaks late, load early.
    PvLate,
    #[default]
    Flat,
}

impl Archetype {
    fn shapes(self) -> (ProfileShape, ProfileShape) {
        match self {
            Archetype::PvEarly => (ProfileShape::Early, ProfileShape::Late),
            Archetype::PvLate => (ProfileShape::Late, ProfileShape::Early),
            Archetype::Flat => (ProfileShape::Flat, ProfileShape::Flat),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub name: String,
    pub slice_seconds: u32,
    pub slot_seconds: u32,
    pub seed: u64,
    pub pv_realization_factor: f64,
    /// Mean household consumption during the slot.
    pub load_kw_per_household: f64,
    /// Mean forecast PV output per household during the slot.
    pub pv_kw_per_household: f64,
    pub households_per_ev: u32,
    pub battery: StorageTemplate,
    pub ev: StorageTemplate,
    /// Initial state of charge, as a fraction of capacity, drawn uniformly.
    pub initial_soc: (f64, f64),
    /// Largest target change as a fraction of the energy a storage can move
    /// at full power during the slot.
    pub target_shift: f64,
    pub archetype: Archetype,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            name: "generated".into(),
            slice_seconds: 15,
            slot_seconds: 900,
            seed: 1,
            pv_realization_factor: 1.0,
            load_kw_per_household: 0.8,
            pv_kw_per_household: 1.4,
            households_per_ev: 10,
            battery: StorageTemplate {
                capacity_kwh: 42.0,
                limit_kw: 15.0,
                efficiency: 0.95,
            },
            ev: StorageTemplate {
                capacity_kwh: 58.0,
                limit_kw: 11.0,
                efficiency: 0.95,
            },
            initial_soc: (0.5, 0.5),
            target_shift: 0.0,
            archetype: Archetype::Flat,
        }
    }
}

/// Builds a scenario for every microgrid bus of `grid`, sizing households
/// from bus loads and fitting one battery plus `⌈households / households_per_ev⌉`
/// EVs to each microgrid.
pub fn generate(grid_ref: &str, grid: &GridCase<f64>, opts: &GenerateOptions) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let slot_h = f64::from(opts.slot_seconds) / SECONDS_PER_HOUR;
    let (pv_shape, load_shape) = opts.archetype.shapes();
    let mut draw = |t: &StorageTemplate, kind: StorageKind| -> StorageSpec {
        let (lo, hi) = opts.initial_soc;
        let soc = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let initial = soc * t.capacity_kwh;
        let reach = t.limit_kw * slot_h * opts.target_shift;
        let shift = if reach > 0.0 { rng.gen_range(-reach..reach) } else { 0.0 };
        StorageSpec {
            kind,
            capacity_kwh: t.capacity_kwh,
            charge_limit_kw: t.limit_kw,
            discharge_limit_kw: t.limit_kw,
            efficiency: t.efficiency,
            initial_kwh: initial,
            target_kwh: (initial + shift).clamp(0.0, t.capacity_kwh),
            available: true,
        }
    };
    let mut microgrids = Vec::with_capacity(grid.num_microgrids());
    for (id, &bus) in grid.microgrid_buses().iter().enumerate() {
        let b = &grid.buses[bus];
        let households = households_for_load(b.load_kw);
        let evs = households.div_ceil(opts.households_per_ev.max(1));
        let mut storages = vec![draw(&opts.battery, StorageKind::Battery)];
        storages.extend((0..evs).map(|_| draw(&opts.ev, StorageKind::Ev)));
        let h = f64::from(households);
        let profile_seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(2 * id as u64);
        microgrids.push(MicrogridSpec {
            bus: b.label,
            households,
            planned_market_kwh: None,
            load_kwh: h * opts.load_kw_per_household * slot_h,
            pv_kwh: h * opts.pv_kw_per_household * slot_h,
            load_profile: ProfileSource::Synthetic {
                seed: profile_seed,
                shape: load_shape,
            },
            pv_profile: ProfileSource::Synthetic {
                seed: profile_seed + 1,
                shape: pv_shape,
            },
            storages,
        });
    }
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: opts.name.clone(),
        grid: grid_ref.to_string(),
        slice_seconds: opts.slice_seconds,
        slot_seconds: opts.slot_seconds,
        pv_realization_factor: opts.pv_realization_factor,
        seed: opts.seed,
        microgrids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::builtin_case;

    fn case9_scenario() -> Scenario {
        let grid = builtin_case::<f64>("case9").unwrap().unwrap();
        generate("builtin:case9", &grid, &GenerateOptions::default())
    }

    #[test]
    fn household_counts_follow_bus_loads() {
        let s = case9_scenario();
        assert_eq!(s.microgrids.iter().map(|m| m.households).sum::<u32>(), 349);
        assert_eq!(households_for_load(90.0), 100);
        assert_eq!(households_for_load(0.89), 0);
        // 100 households get 10 EVs plus the battery
        assert_eq!(s.microgrids[0].storages.len(), 11);
    }

    #[test]
    fn toml_roundtrip_is_byte_identical() {
        let mut s = case9_scenario();
        s.microgrids[1].planned_market_kwh = Some(-12.5);
        s.microgrids[2].pv_profile = ProfileSource::Csv {
            path: "profiles/pv.csv".into(),
        };
        let a = s.to_toml_string().unwrap();
        let parsed = Scenario::from_toml_str(&a).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(parsed.to_toml_string().unwrap(), a);
    }

    #[test]
    fn resolve_builds_slices() {
        let s = case9_scenario();
        let input: SimInput<f64> = s.resolve(Path::new(".")).unwrap();
        assert_eq!(input.slices, 60);
        assert_eq!(input.microgrids.len(), 3);
        let mg = &input.microgrids[0];
        assert_eq!(mg.load_kw.len(), 60);
        let energy: f64 = mg.load_kw.iter().sum::<f64>() * input.dt_h;
        assert!((energy - s.microgrids[0].load_kwh).abs() < 1e-9);
        // flat level = planned energy over the slot
        let x = input.flat_targets();
        assert!((x[0] - (0.8 - 1.4) * 100.0).abs() < 1e-9);
    }

    #[test]
    fn realization_factor_scales_only_realized_pv() {
        let mut s = case9_scenario();
        let base: SimInput<f64> = s.resolve(Path::new(".")).unwrap();
        s.pv_realization_factor = 1.4;
        let high: SimInput<f64> = s.resolve(Path::new(".")).unwrap();
        let e = |m: &MicrogridInput<f64>| m.pv_kw.iter().sum::<f64>();
        assert!((e(&high.microgrids[0]) - 1.4 * e(&base.microgrids[0])).abs() < 1e-9);
        assert_eq!(high.flat_targets(), base.flat_targets());
    }

    #[test]
    fn validation_errors() {
        let mut s = case9_scenario();
        s.slice_seconds = 7;
        assert!(s.validate().is_err());
        let mut s = case9_scenario();
        s.microgrids.pop();
        assert!(s.resolve::<f64>(Path::new(".")).is_err());
        let mut s = case9_scenario();
        s.microgrids[0].bus = 4;
        assert!(s.resolve::<f64>(Path::new(".")).is_err());
        let mut s = case9_scenario();
        s.schema_version = 99;
        assert!(Scenario::from_toml_str(&s.to_toml_string().unwrap()).is_err());
    }

    #[test]
    fn planned_energy_accounts_for_storage_movement() {
        let spec = StorageSpec {
            kind: StorageKind::Battery,
            capacity_kwh: 42.0,
            charge_limit_kw: 15.0,
            discharge_limit_kw: 15.0,
            efficiency: 0.95,
            initial_kwh: 20.0,
            target_kwh: 21.0,
            available: true,
        };
        assert!((spec.planned_external_kwh() - 1.0 / 0.95).abs() < 1e-12);
        let down = StorageSpec {
            target_kwh: 19.0,
            ..spec
        };
        assert!((down.planned_external_kwh() + 0.95).abs() < 1e-12);
    }
}
