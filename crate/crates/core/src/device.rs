//! Non-converter grid devices: droop-controlled AC and DC sources, a
//! PLL-based grid-following power source, and constant-power loads.
//!
//! Droop laws use the dispatchable form, e.g. `w = w_set + k (P_set - P)`
//! for the AC source, which reduces to the linearized source law at
//! `P_set = 0` and supports redispatch events.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a device terminal attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcBusRef {
    pub subgrid: usize,
    pub bus: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcNodeRef {
    pub subgrid: usize,
    pub node: usize,
}

/// Grid-forming AC voltage source with P-f droop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcGfmSource {
    pub id: String,
    pub bus: AcBusRef,
    /// Internal voltage magnitude (pu).
    pub voltage_pu: f64,
    pub omega_set_pu: f64,
    pub p_set_pu: f64,
    /// P-f droop gain (pu frequency per pu power), non-negative.
    pub droop_pu: f64,
    pub connected: bool,
}

/// Grid-forming DC voltage source with P-V droop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcGfmSource {
    pub id: String,
    pub node: DcNodeRef,
    pub v_set_pu: f64,
    pub p_set_pu: f64,
    /// P-V droop gain, non-negative. Delivering more than the setpoint
    /// lowers the source voltage.
    pub droop_pu: f64,
    pub connected: bool,
}

/// Grid-following power source synchronized through a PLL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PllGflSource {
    pub id: String,
    pub bus: AcBusRef,
    pub p_cmd_pu: f64,
    pub q_cmd_pu: f64,
    pub pll: PllParams,
    pub connected: bool,
}

/// Constant-power load on an AC bus or DC node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLoad {
    pub id: String,
    pub terminal: LoadTerminal,
    /// Consumed power, positive = consumption.
    pub p_load_pu: f64,
    /// Reactive consumption, AC loads only.
    pub q_load_pu: f64,
    /// Optional linear frequency sensitivity `k_f * (w - 1)`, default off.
    pub k_freq: f64,
    pub connected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadTerminal {
    Ac(AcBusRef),
    Dc(DcNodeRef),
}

impl PowerLoad {
    /// Effective active power draw at the given local frequency.
    pub fn effective_p(&self, omega_pu: f64) -> f64 {
        if !self.connected {
            return 0.0;
        }
        self.p_load_pu * (1.0 + self.k_freq * (omega_pu - 1.0))
    }
}

impl AcGfmSource {
    pub fn validate(&self) -> Result<()> {
        if self.droop_pu < 0.0 {
            return Err(Error::Validation(format!(
                "{}: droop must be non-negative",
                self.id
            )));
        }
        if self.connected && self.voltage_pu <= 0.0 {
            return Err(Error::Validation(format!(
                "{}: connected source needs positive voltage",
                self.id
            )));
        }
        Ok(())
    }

    /// Instantaneous frequency for a measured injection.
    pub fn omega(&self, p_measured: f64) -> f64 {
        self.omega_set_pu + self.droop_pu * (self.p_set_pu - p_measured)
    }
}

impl DcGfmSource {
    pub fn validate(&self) -> Result<()> {
        if self.droop_pu < 0.0 {
            return Err(Error::Validation(format!(
                "{}: droop must be non-negative",
                self.id
            )));
        }
        Ok(())
    }

    /// Terminal voltage for a measured injection.
    pub fn voltage(&self, p_measured: f64) -> f64 {
        self.v_set_pu + self.droop_pu * (self.p_set_pu - p_measured)
    }
}

/// Advance a droop source angle by one step; returns (theta', omega).
///
/// Angles are kept relative to the nominal synchronous frame, so
/// `dtheta/dt = w_base (w - 1)`.
pub fn step_ac_gfm_source(
    src: &AcGfmSource,
    theta: f64,
    p_measured: f64,
    omega_base_rad: f64,
    dt: f64,
) -> (f64, f64) {
    debug_assert!(dt > 0.0);
    let omega = src.omega(p_measured);
    (theta + omega_base_rad * (omega - 1.0) * dt, omega)
}

// ---------------------------------------------------------------------------
// PLL
// ---------------------------------------------------------------------------

/// Second-order synchronous-reference-frame PLL parameters.
///
/// Default gains place the closed loop at about 20 Hz bandwidth with 0.707
/// damping on a 50 Hz base.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PllParams {
    pub k_p: f64,
    pub k_i: f64,
    /// Voltage magnitude below which tracking is meaningless.
    pub dead_bus_pu: f64,
    /// Dead bus persisting longer than this is loss of synchronization.
    pub dead_bus_window_s: f64,
}

impl PllParams {
    pub fn with_bandwidth(omega_base_rad: f64, bw_hz: f64, zeta: f64) -> Self {
        let wn = 2.0 * std::f64::consts::PI * bw_hz;
        Self {
            k_p: 2.0 * zeta * wn / omega_base_rad,
            k_i: wn * wn / omega_base_rad,
            dead_bus_pu: 0.1,
            dead_bus_window_s: 0.02,
        }
    }
}

impl Default for PllParams {
    fn default() -> Self {
        Self::with_bandwidth(100.0 * std::f64::consts::PI, 20.0, 0.707)
    }
}

/// PLL dynamic state: tracked angle and the frequency-deviation integrator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PllState {
    pub theta: f64,
    pub integrator: f64,
}

/// Continuous-time PLL equations: returns (dtheta/dt, dintegrator/dt,
/// omega_estimate in pu). Errors on a dead bus.
///
/// The loop is `w = 1 + k_p e + x`, `dx/dt = k_i e` with `e` the normalized
/// q-axis component of the terminal voltage in the PLL frame.
pub fn pll_derivatives(
    params: &PllParams,
    state: &PllState,
    v_terminal: Complex64,
    omega_base_rad: f64,
    id: &str,
) -> Result<(f64, f64, f64)> {
    let mag = v_terminal.norm();
    if mag <= params.dead_bus_pu {
        return Err(Error::DeadBus(id.to_string()));
    }
    let err = (v_terminal * Complex64::from_polar(1.0, -state.theta)).im / mag;
    let omega = 1.0 + params.k_p * err + state.integrator;
    Ok((omega_base_rad * (omega - 1.0), params.k_i * err, omega))
}

/// One explicit RK4 step of the PLL against a frozen terminal phasor.
pub fn step_pll(
    params: &PllParams,
    state: &PllState,
    v_terminal: Complex64,
    omega_base_rad: f64,
    dt: f64,
    id: &str,
) -> Result<(PllState, f64)> {
    debug_assert!(dt > 0.0);
    let f = |s: &PllState| pll_derivatives(params, s, v_terminal, omega_base_rad, id);
    let k1 = f(state)?;
    let k2 = f(&PllState {
        theta: state.theta + 0.5 * dt * k1.0,
        integrator: state.integrator + 0.5 * dt * k1.1,
    })?;
    let k3 = f(&PllState {
        theta: state.theta + 0.5 * dt * k2.0,
        integrator: state.integrator + 0.5 * dt * k2.1,
    })?;
    let k4 = f(&PllState {
        theta: state.theta + dt * k3.0,
        integrator: state.integrator + dt * k3.1,
    })?;
    let next = PllState {
        theta: state.theta + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        integrator: state.integrator + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    };
    let omega = f(&next)?.2;
    Ok((next, omega))
}

/// Complex power a grid-following source actually injects given its PLL
/// angle: the commanded current is oriented in the PLL frame, so an angle
/// error rotates the delivered power.
pub fn gfl_injection(p_cmd: f64, q_cmd: f64, v_terminal: Complex64, pll_theta: f64) -> Complex64 {
    let delta = v_terminal.arg() - pll_theta;
    Complex64::new(p_cmd, q_cmd) * Complex64::from_polar(1.0, delta)
}
