//! Mumford-Shah image segmentation by greedy insertion of small balls into the
//! edge set, guided by the topological gradient of the relaxed energy.
//!
//! An image on the unit-scaled pixel grid is approximated by a smooth `u`
//! whose gradient is penalized everywhere except on a union of balls of
//! radius ε, where the penalty drops to κ. Balls are added wherever the
//! leading-order energy change predicts a decrease; see [`topo::run`].
//! An Ambrosio-Tortorelli solver ([`at::run_at`]) serves as a reference.

pub mod at;
pub mod cover;
pub mod energy;
pub mod error;
pub mod fem;
pub mod grid;
pub mod oracle;
pub mod pgm;
pub mod synthetic;
pub mod topo;

pub use at::{run_at, AtConfig, AtResult};
pub use cover::BallCover;
pub use energy::EnergyBreakdown;
pub use error::{Error, Result};
pub use grid::{CellField, ImageGrid, NodalField, Point};
pub use topo::{run, RunTrace, SegmentationResult, StopReason, TopoConfig};
