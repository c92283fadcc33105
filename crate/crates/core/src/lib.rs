//! Real-time balancing of networked microgrids around a day-ahead market
//! schedule.
//!
//! Each time slice runs three steps: a min-cost flow that makes every
//! microgrid device-feasible through peer-to-peer and market trades, a
//! PTDF-based quadratic repair when the DC power flow overloads a line, and
//! cave-filling allocation of the committed power to PV and storages.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod allocation;
pub mod controllers;
pub mod devices;
pub mod error;
pub mod feasibility;
pub mod grid;
pub mod linalg;
pub mod qp;
pub mod repair;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GridCase = grid::GridCase<f64>;
pub type PtdfMatrix = grid::PtdfMatrix<f64>;
pub type DcPowerFlow = grid::DcPowerFlow<f64>;
pub type Storage = devices::Storage<f64>;
pub type FlexInterval = devices::FlexInterval<f64>;
pub type MicrogridSlice = devices::MicrogridSlice<f64>;
pub type TradePlan = feasibility::TradePlan<f64>;
pub type RepairProblem = repair::RepairProblem<f64>;
