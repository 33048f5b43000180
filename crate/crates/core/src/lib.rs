//! Phasor-domain dynamic simulation and small-signal analysis for grids of
//! grids: multiple AC and DC subgrids coupled by interconnecting power
//! converters (IPCs) built from modular multilevel converters.
//!
//! The crate models each MMC macroscopically through its total internal
//! energy `W_t` with `dW_t/dt = P_dc - P_ac`, and provides four terminal
//! controllers: the single-port AC-forming and DC-forming schemes, and the
//! dual-port hybrid power/energy droop and energy-balancing schemes that
//! form both terminal voltages at once.
//!
//! Modules:
//! - [`per_unit`]: base quantities and unit conversion.
//! - [`network`]: AC/DC topology, admittance assembly, quasi-static solvers.
//! - [`device`]: droop sources, PLL-based grid-following sources, loads.
//! - [`ipc`]: the macroscopic MMC and its four controllers.
//! - [`sim`]: scenario description, fixed-step integration, event handling.
//! - [`analysis`]: closed-loop models, eigenvalue certification, gain audits.
//! - [`dispatch`]: steady-state setpoint solver.

pub mod analysis;
pub mod device;
pub mod dispatch;
pub mod error;
pub mod ipc;
pub mod network;
pub mod per_unit;
pub mod sim;

pub use error::{Error, Result};
