//! The macroscopic MMC model and its terminal controllers.
//!
//! The converter is reduced to its total internal energy `W_t` with
//! `dW_t/dt = P_dc - P_ac` (lossless, P_ac positive into the AC grid, P_dc
//! positive into the converter from the DC grid), plus whatever filter and
//! integrator states the selected controller carries. Inner balancing and
//! current loops are assumed to track their references perfectly.
//!
//! Four controllers are provided:
//! - `AcGfm`: forms the AC voltage through P-f droop, regulates `W_t`
//!   through the DC current (grid-following DC terminal).
//! - `DcGfm`: forms the DC voltage through P-V droop, regulates `W_t`
//!   through the AC current oriented by a PLL (grid-following AC terminal).
//! - `HybridDroop`: dual-port law combining P-f and P-V droop with
//!   proportional energy feedback on both terminals.
//! - `EnergyBalancing`: dual-port law driving frequency and DC voltage from
//!   filtered proportional-derivative action on the energy alone.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::device::{pll_derivatives, PllParams, PllState};
use crate::error::{Error, Result};
use crate::per_unit::PerUnitBase;

// ---------------------------------------------------------------------------
// Physical parameters
// ---------------------------------------------------------------------------

/// Macroscopic MMC parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmcParams {
    pub s_rated_mw: f64,
    /// Submodules per arm.
    pub n_arm: u32,
    /// Submodule capacitance in farads.
    pub c_sm_f: f64,
    /// Average submodule voltage in kV.
    pub v_sm_kv: f64,
    /// Coupling resistance (transformer leakage plus phase reactor), pu.
    pub coupling_r_pu: f64,
    /// Coupling reactance, pu.
    pub coupling_l_pu: f64,
}

impl MmcParams {
    pub fn validate(&self) -> Result<()> {
        if self.s_rated_mw <= 0.0
            || self.n_arm == 0
            || self.c_sm_f <= 0.0
            || self.v_sm_kv <= 0.0
            || self.coupling_l_pu <= 0.0
            || self.coupling_r_pu < 0.0
        {
            return Err(Error::Validation(
                "MMC physical parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Equivalent arm capacitance C_sm / N_arm in farads.
    pub fn c_eq_f(&self) -> f64 {
        self.c_sm_f / self.n_arm as f64
    }

    /// Nominal stored energy over all six arms in MJ:
    /// `6 * 1/2 * C_eq * (N_arm * V_sm)^2`.
    pub fn w_nom_mj(&self) -> f64 {
        let v_arm = self.n_arm as f64 * self.v_sm_kv * 1e3;
        6.0 * 0.5 * self.c_eq_f() * v_arm * v_arm / 1e6
    }

    /// Stored energy expressed as seconds at rated power.
    pub fn storage_time_at_rated_s(&self) -> f64 {
        self.w_nom_mj() / self.s_rated_mw
    }

    /// Nominal stored energy in pu·s on the system base.
    pub fn w_nom_pu_s(&self, base: &PerUnitBase) -> f64 {
        base.energy_to_pu_s(self.w_nom_mj())
    }

    /// Coupling admittance in pu.
    pub fn coupling_admittance(&self) -> Complex64 {
        Complex64::new(self.coupling_r_pu, self.coupling_l_pu).inv()
    }
}

/// Advance the total internal energy for one interval of constant powers.
pub fn energy_step(w_t: f64, p_ac: f64, p_dc: f64, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    w_t + (p_dc - p_ac) * dt
}

/// Snapshot view of one converter's terminal state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MmcState {
    pub w_t: f64,
    pub theta: f64,
    pub v_ref: f64,
    pub v_dc: f64,
}

// ---------------------------------------------------------------------------
// Controller configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PiGains {
    pub k_p: f64,
    pub k_i: f64,
}

/// AC-forming, DC-following controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcGfmCfg {
    pub omega_set: f64,
    pub p_ac_set: f64,
    pub q_set: f64,
    pub v_ac_set: f64,
    pub w_set: f64,
    /// P-f droop gain.
    pub k_p_ac: f64,
    /// Volt-var droop gain.
    pub k_q_ac: f64,
    /// Low-pass time constant on the active power measurement.
    pub tau_ac_s: f64,
    /// Energy regulator acting through the DC current.
    pub energy_pi: PiGains,
}

/// DC-forming, AC-following controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcGfmCfg {
    pub v_dc_set: f64,
    pub p_dc_set: f64,
    pub q_set: f64,
    pub w_set: f64,
    /// P-V droop gain.
    pub k_p_dc: f64,
    /// Low-pass time constant on the DC power measurement of the droop.
    pub tau_dc_s: f64,
    /// Reactive-support measurement filter; the AC terminal runs at
    /// constant reactive power in the phasor model, so this constant is
    /// carried but inactive.
    pub tau_ac_s: f64,
    /// Energy regulator acting through the AC current.
    pub energy_pi: PiGains,
    pub pll: PllParams,
}

/// Dual-port hybrid power/energy droop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridDroopCfg {
    pub omega_set: f64,
    pub v_dc_set: f64,
    pub p_ac_set: f64,
    pub p_dc_set: f64,
    pub q_set: f64,
    pub v_ac_set: f64,
    pub w_set: f64,
    pub k_p_ac: f64,
    pub k_q_ac: f64,
    pub k_p_dc: f64,
    pub k_w_ac: f64,
    pub k_w_dc: f64,
    /// Low-pass on the DC-side law; the AC-side law is unfiltered.
    pub tau_dc_s: f64,
}

/// Dual-port energy-balancing control.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyBalancingCfg {
    pub omega_set: f64,
    pub v_dc_set: f64,
    pub q_set: f64,
    pub v_ac_set: f64,
    pub w_set: f64,
    /// Derivative gain of the AC-side PD action.
    pub k_p_ac: f64,
    pub k_q_ac: f64,
    /// Derivative gain of the DC-side PD action.
    pub k_p_dc: f64,
    /// Proportional energy gain to frequency.
    pub k_w_ac: f64,
    /// Proportional energy gain to DC voltage.
    pub k_w_dc: f64,
    pub tau_ac_s: f64,
    pub tau_dc_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerConfig {
    AcGfm(AcGfmCfg),
    DcGfm(DcGfmCfg),
    HybridDroop(HybridDroopCfg),
    EnergyBalancing(EnergyBalancingCfg),
}

impl ControllerConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ControllerConfig::AcGfm(_) => "ac_gfm",
            ControllerConfig::DcGfm(_) => "dc_gfm",
            ControllerConfig::HybridDroop(_) => "hybrid_droop",
            ControllerConfig::EnergyBalancing(_) => "energy_balancing",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| -> Result<()> {
            if v < 0.0 || !v.is_finite() {
                Err(Error::Validation(format!("gain {name} must be >= 0, got {v}")))
            } else {
                Ok(())
            }
        };
        match self {
            ControllerConfig::AcGfm(c) => {
                nonneg("k_p_ac", c.k_p_ac)?;
                nonneg("k_q_ac", c.k_q_ac)?;
                nonneg("tau_ac_s", c.tau_ac_s)?;
                nonneg("energy_pi.k_p", c.energy_pi.k_p)?;
                nonneg("energy_pi.k_i", c.energy_pi.k_i)?;
            }
            ControllerConfig::DcGfm(c) => {
                nonneg("k_p_dc", c.k_p_dc)?;
                nonneg("tau_dc_s", c.tau_dc_s)?;
                nonneg("tau_ac_s", c.tau_ac_s)?;
                nonneg("energy_pi.k_p", c.energy_pi.k_p)?;
                nonneg("energy_pi.k_i", c.energy_pi.k_i)?;
            }
            ControllerConfig::HybridDroop(c) => {
                nonneg("k_p_ac", c.k_p_ac)?;
                nonneg("k_q_ac", c.k_q_ac)?;
                nonneg("k_p_dc", c.k_p_dc)?;
                nonneg("k_w_ac", c.k_w_ac)?;
                nonneg("k_w_dc", c.k_w_dc)?;
                nonneg("tau_dc_s", c.tau_dc_s)?;
            }
            ControllerConfig::EnergyBalancing(c) => {
                nonneg("k_p_ac", c.k_p_ac)?;
                nonneg("k_q_ac", c.k_q_ac)?;
                nonneg("k_p_dc", c.k_p_dc)?;
                nonneg("k_w_ac", c.k_w_ac)?;
                nonneg("k_w_dc", c.k_w_dc)?;
                nonneg("tau_ac_s", c.tau_ac_s)?;
                nonneg("tau_dc_s", c.tau_dc_s)?;
                if c.k_w_ac <= c.k_p_ac {
                    return Err(Error::HypothesisViolated(format!(
                        "energy balancing requires k_w_ac > k_p_ac (got {} <= {})",
                        c.k_w_ac, c.k_p_ac
                    )));
                }
            }
        }
        Ok(())
    }

    /// Does this controller form the AC terminal voltage?
    pub fn forms_ac(&self) -> bool {
        !matches!(self, ControllerConfig::DcGfm(_))
    }

    /// Does this controller form the DC terminal voltage?
    pub fn forms_dc(&self) -> bool {
        !matches!(self, ControllerConfig::AcGfm(_))
    }

    pub fn w_set(&self) -> f64 {
        match self {
            ControllerConfig::AcGfm(c) => c.w_set,
            ControllerConfig::DcGfm(c) => c.w_set,
            ControllerConfig::HybridDroop(c) => c.w_set,
            ControllerConfig::EnergyBalancing(c) => c.w_set,
        }
    }

    /// Ratio k_w_ac / k_w_dc used by the steady-state consistency audit.
    pub fn alpha(&self) -> Option<f64> {
        match self {
            ControllerConfig::EnergyBalancing(c) if c.k_w_dc > 0.0 => Some(c.k_w_ac / c.k_w_dc),
            ControllerConfig::HybridDroop(c) if c.k_w_dc > 0.0 => Some(c.k_w_ac / c.k_w_dc),
            _ => None,
        }
    }

    pub fn omega_set(&self) -> Option<f64> {
        match self {
            ControllerConfig::AcGfm(c) => Some(c.omega_set),
            ControllerConfig::DcGfm(_) => None,
            ControllerConfig::HybridDroop(c) => Some(c.omega_set),
            ControllerConfig::EnergyBalancing(c) => Some(c.omega_set),
        }
    }

    /// Number of internal filter/integrator states beyond `W_t` and the
    /// terminal angle.
    pub fn n_states(&self) -> usize {
        match self {
            ControllerConfig::AcGfm(_) => 2,
            ControllerConfig::DcGfm(_) => 4,
            ControllerConfig::HybridDroop(_) => 1,
            ControllerConfig::EnergyBalancing(_) => 2,
        }
    }

    pub fn state_labels(&self) -> &'static [&'static str] {
        match self {
            ControllerConfig::AcGfm(_) => &["p_ac_filt", "w_pi_int"],
            ControllerConfig::DcGfm(_) => &["p_dc_filt", "w_pi_int", "pll_theta", "pll_int"],
            ControllerConfig::HybridDroop(_) => &["v_dc_filt"],
            ControllerConfig::EnergyBalancing(_) => &["pd_ac_filt", "pd_dc_filt"],
        }
    }

    /// Filter/integrator states at an equilibrium with the given
    /// measurements, island frequency and terminal phasor.
    pub fn init_states(&self, m: &Measurements, island_omega: f64) -> Vec<f64> {
        let dw = m.w_t - self.w_set();
        match self {
            ControllerConfig::AcGfm(_) => vec![m.p_ac, m.p_dc],
            ControllerConfig::DcGfm(_) => {
                vec![m.p_dc, -m.p_ac, m.v_bus.arg(), island_omega - 1.0]
            }
            ControllerConfig::HybridDroop(c) => {
                vec![c.k_p_dc * (m.p_dc - c.p_dc_set) + c.k_w_dc * dw]
            }
            ControllerConfig::EnergyBalancing(c) => {
                let x_dc = if c.tau_dc_s > 0.0 {
                    (c.k_w_dc - c.k_p_dc / c.tau_dc_s) * dw
                } else {
                    0.0
                };
                vec![dw, x_dc]
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Controller evaluation
// ---------------------------------------------------------------------------

/// Terminal measurements fed to a controller at one integrator stage.
#[derive(Debug, Clone, Copy)]
pub struct Measurements {
    /// Active power into the AC grid, at the converter EMF.
    pub p_ac: f64,
    /// Power into the converter from the DC grid.
    pub p_dc: f64,
    /// Reactive power into the AC grid.
    pub q_ac: f64,
    /// Total internal energy, pu·s.
    pub w_t: f64,
    /// AC terminal bus phasor (for the PLL of a DC-forming controller).
    pub v_bus: Complex64,
}

/// Controller outputs for one stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct CtrlOutputs {
    /// Frequency formed on the AC terminal (AC-forming controllers).
    pub omega: Option<f64>,
    /// Voltage formed on the DC terminal (DC-forming controllers).
    pub v_dc: Option<f64>,
    /// Power drawn from the DC grid (AC-forming controller's GFL side).
    pub p_dc_cmd: Option<f64>,
    /// Power injected into the AC grid (DC-forming controller's GFL side).
    pub p_ac_cmd: Option<f64>,
    /// PLL frequency estimate, where a PLL exists.
    pub pll_omega: Option<f64>,
    /// True when the PLL sees a dead bus this stage (states frozen).
    pub pll_dead: bool,
}

/// Evaluate a controller: outputs plus state derivatives written to `dx`.
///
/// Pure in all arguments; the caller owns state storage and integration.
pub fn ctrl_eval(
    cfg: &ControllerConfig,
    x: &[f64],
    m: &Measurements,
    omega_base_rad: f64,
    dx: &mut [f64],
) -> CtrlOutputs {
    debug_assert_eq!(x.len(), cfg.n_states());
    debug_assert_eq!(dx.len(), cfg.n_states());
    let mut out = CtrlOutputs::default();
    match cfg {
        ControllerConfig::AcGfm(c) => {
            let p_filt = if c.tau_ac_s > 0.0 {
                dx[0] = (m.p_ac - x[0]) / c.tau_ac_s;
                x[0]
            } else {
                dx[0] = 0.0;
                m.p_ac
            };
            out.omega = Some(c.omega_set + c.k_p_ac * (c.p_ac_set - p_filt));
            let e = c.w_set - m.w_t;
            dx[1] = c.energy_pi.k_i * e;
            out.p_dc_cmd = Some(c.energy_pi.k_p * e + x[1]);
        }
        ControllerConfig::DcGfm(c) => {
            let p_filt = if c.tau_dc_s > 0.0 {
                dx[0] = (m.p_dc - x[0]) / c.tau_dc_s;
                x[0]
            } else {
                dx[0] = 0.0;
                m.p_dc
            };
            out.v_dc = Some(c.v_dc_set + c.k_p_dc * (p_filt - c.p_dc_set));
            let e = c.w_set - m.w_t;
            dx[1] = c.energy_pi.k_i * e;
            out.p_ac_cmd = Some(-(c.energy_pi.k_p * e + x[1]));
            let pll = PllState {
                theta: x[2],
                integrator: x[3],
            };
            match pll_derivatives(&c.pll, &pll, m.v_bus, omega_base_rad, "pll") {
                Ok((dtheta, dint, omega)) => {
                    dx[2] = dtheta;
                    dx[3] = dint;
                    out.pll_omega = Some(omega);
                }
                Err(_) => {
                    dx[2] = 0.0;
                    dx[3] = 0.0;
                    out.pll_omega = Some(1.0 + x[3]);
                    out.pll_dead = true;
                }
            }
        }
        ControllerConfig::HybridDroop(c) => {
            let dw = m.w_t - c.w_set;
            out.omega = Some(c.omega_set + c.k_p_ac * (c.p_ac_set - m.p_ac) + c.k_w_ac * dw);
            let u = c.k_p_dc * (m.p_dc - c.p_dc_set) + c.k_w_dc * dw;
            if c.tau_dc_s > 0.0 {
                dx[0] = (u - x[0]) / c.tau_dc_s;
                out.v_dc = Some(c.v_dc_set + x[0]);
            } else {
                dx[0] = 0.0;
                out.v_dc = Some(c.v_dc_set + u);
            }
        }
        ControllerConfig::EnergyBalancing(c) => {
            let dw = m.w_t - c.w_set;
            let y_ac = if c.tau_ac_s > 0.0 {
                dx[0] = (dw - x[0]) / c.tau_ac_s;
                c.k_w_ac * dw + (c.k_p_ac / c.tau_ac_s) * (dw - x[0])
            } else {
                dx[0] = 0.0;
                // Ideal PD: dW/dt = P_dc - P_ac substituted exactly.
                c.k_w_ac * dw + c.k_p_ac * (m.p_dc - m.p_ac)
            };
            let y_dc = if c.tau_dc_s > 0.0 {
                let slope = c.k_p_dc / c.tau_dc_s;
                dx[1] = ((c.k_w_dc - slope) * dw - x[1]) / c.tau_dc_s;
                slope * dw + x[1]
            } else {
                dx[1] = 0.0;
                c.k_w_dc * dw + c.k_p_dc * (m.p_dc - m.p_ac)
            };
            out.omega = Some(c.omega_set + y_ac);
            out.v_dc = Some(c.v_dc_set + y_dc);
        }
    }
    out
}

/// Advance controller filter states by one step with exact zero-order-hold
/// discretization of the first-order lags, returning the outputs evaluated
/// at the pre-step state. PI integrators use the trapezoidal rule.
pub fn ctrl_step(
    cfg: &ControllerConfig,
    x: &mut [f64],
    m: &Measurements,
    omega_base_rad: f64,
    dt: f64,
) -> CtrlOutputs {
    debug_assert!(dt > 0.0);
    let mut dx = vec![0.0; cfg.n_states()];
    let out = ctrl_eval(cfg, x, m, omega_base_rad, &mut dx);
    let zoh = |state: f64, input: f64, tau: f64| -> f64 {
        if tau > 0.0 {
            let a = (-dt / tau).exp();
            a * state + (1.0 - a) * input
        } else {
            input
        }
    };
    match cfg {
        ControllerConfig::AcGfm(c) => {
            x[0] = zoh(x[0], m.p_ac, c.tau_ac_s);
            x[1] += dt * c.energy_pi.k_i * (c.w_set - m.w_t);
        }
        ControllerConfig::DcGfm(c) => {
            x[0] = zoh(x[0], m.p_dc, c.tau_dc_s);
            x[1] += dt * c.energy_pi.k_i * (c.w_set - m.w_t);
            x[2] += dt * dx[2];
            x[3] += dt * dx[3];
        }
        ControllerConfig::HybridDroop(c) => {
            let dw = m.w_t - c.w_set;
            let u = c.k_p_dc * (m.p_dc - c.p_dc_set) + c.k_w_dc * dw;
            x[0] = zoh(x[0], u, c.tau_dc_s);
        }
        ControllerConfig::EnergyBalancing(c) => {
            let dw = m.w_t - c.w_set;
            x[0] = zoh(x[0], dw, c.tau_ac_s);
            if c.tau_dc_s > 0.0 {
                let slope = c.k_p_dc / c.tau_dc_s;
                x[1] = zoh(x[1], (c.k_w_dc - slope) * dw, c.tau_dc_s);
            }
        }
    }
    out
}

/// Volt-var droop: AC voltage magnitude reference from measured reactive
/// power.
pub fn volt_var(q_measured: f64, v_set: f64, k_q: f64, q_set: f64) -> f64 {
    v_set + k_q * (q_set - q_measured)
}

/// Rewrite the hybrid droop law as plain droop with energy-shifted power
/// references. Feeding these to `w = w_set + k_p_ac (p_ref_ac - P_ac)` and
/// `V = v_set + k_p_dc (P_dc - p_ref_dc)` reproduces the hybrid outputs
/// exactly (no DC filter).
pub fn droop_equivalent_setpoints(cfg: &HybridDroopCfg, w_t: f64) -> Result<(f64, f64)> {
    if cfg.k_p_ac <= 0.0 || cfg.k_p_dc <= 0.0 {
        return Err(Error::Validation(
            "droop-equivalent form needs strictly positive k_p gains".into(),
        ));
    }
    let dw = w_t - cfg.w_set;
    let p_ref_ac = cfg.p_ac_set + cfg.k_w_ac / cfg.k_p_ac * dw;
    let p_ref_dc = cfg.p_dc_set - cfg.k_w_dc / cfg.k_p_dc * dw;
    Ok((p_ref_ac, p_ref_dc))
}

/// One converter: the MMC, its controller, and its attachment points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IpcUnit {
    pub id: String,
    pub ac_subgrid: usize,
    pub ac_bus: usize,
    pub dc_subgrid: usize,
    pub dc_node: usize,
    pub mmc: MmcParams,
    pub controller: ControllerConfig,
    /// Terminal breakers; an open terminal exchanges no power while the
    /// controller keeps running.
    pub ac_connected: bool,
    pub dc_connected: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const W_BASE: f64 = 100.0 * std::f64::consts::PI;

    fn table_mmc() -> MmcParams {
        MmcParams {
            s_rated_mw: 500.0,
            n_arm: 400,
            c_sm_f: 8e-3,
            v_sm_kv: 1.6,
            coupling_r_pu: 0.009,
            coupling_l_pu: 0.25,
        }
    }

    fn meas(p_ac: f64, p_dc: f64, w_t: f64) -> Measurements {
        Measurements {
            p_ac,
            p_dc,
            q_ac: 0.0,
            w_t,
            v_bus: Complex64::new(1.0, 0.0),
        }
    }

    fn hybrid() -> HybridDroopCfg {
        HybridDroopCfg {
            omega_set: 1.0,
            v_dc_set: 1.0,
            p_ac_set: 0.0,
            p_dc_set: 0.0,
            q_set: 0.0,
            v_ac_set: 1.0,
            w_set: 0.049152,
            k_p_ac: 0.05,
            k_q_ac: 0.05,
            k_p_dc: 0.05,
            k_w_ac: 0.5,
            k_w_dc: 0.5,
            tau_dc_s: 0.01,
        }
    }

    fn energy_balancing() -> EnergyBalancingCfg {
        EnergyBalancingCfg {
            omega_set: 1.0,
            v_dc_set: 1.0,
            q_set: 0.0,
            v_ac_set: 1.0,
            w_set: 0.049152,
            k_p_ac: 0.0125,
            k_q_ac: 0.05,
            k_p_dc: 0.025,
            k_w_ac: 0.5,
            k_w_dc: 0.5,
            tau_ac_s: 0.001,
            tau_dc_s: 0.01,
        }
    }

    #[test]
    fn stored_energy_constants() {
        // 400 modules of 8 mF at 1.6 kV per arm, six arms: 24.576 MJ,
        // which is 49.152 ms at 500 MW and 24.576 ms at 1000 MW.
        let m = table_mmc();
        assert_relative_eq!(m.w_nom_mj(), 24.576, max_relative = 1e-12);
        assert_relative_eq!(m.storage_time_at_rated_s(), 0.049152, max_relative = 1e-12);
        let mut big = table_mmc();
        big.s_rated_mw = 1000.0;
        assert_relative_eq!(big.storage_time_at_rated_s(), 0.024576, max_relative = 1e-12);
    }

    #[test]
    fn energy_integration_is_exact_for_constant_powers() {
        let w0 = 0.049152;
        assert_eq!(energy_step(w0, 0.3, 0.3, 0.1), w0);
        let w1 = energy_step(w0, 0.2, 0.3, 0.2);
        assert_relative_eq!(w1 - w0, 0.02, max_relative = 1e-12);
    }

    #[test]
    fn hybrid_droop_equilibrium_and_direct_values() {
        let c = hybrid();
        let cfg = ControllerConfig::HybridDroop(c.clone());
        let m0 = meas(0.0, 0.0, c.w_set);
        let mut x = cfg.init_states(&m0, 1.0);
        let mut dx = vec![0.0; 1];
        let out = ctrl_eval(&cfg, &x, &m0, W_BASE, &mut dx);
        assert_eq!(out.omega.unwrap(), 1.0);
        assert_eq!(out.v_dc.unwrap(), 1.0);

        // P_set - P_ac = 0.1 at zero energy error: 0.05 * 0.1 = 0.005.
        let m1 = meas(-0.1, 0.0, c.w_set);
        let out = ctrl_eval(&cfg, &x, &m1, W_BASE, &mut dx);
        assert_relative_eq!(out.omega.unwrap(), 1.005, max_relative = 1e-12);

        // dW = -0.04 at setpoint powers: 0.5 * -0.04 = -0.02.
        let m2 = meas(0.0, 0.0, c.w_set - 0.04);
        let out = ctrl_eval(&cfg, &x, &m2, W_BASE, &mut dx);
        assert_relative_eq!(out.omega.unwrap(), 0.98, max_relative = 1e-12);
        // The DC filter settles to the same -0.02 shift.
        for _ in 0..10_000 {
            ctrl_step(&cfg, &mut x, &m2, W_BASE, 1e-4);
        }
        let out = ctrl_eval(&cfg, &x, &m2, W_BASE, &mut dx);
        assert_relative_eq!(out.v_dc.unwrap(), 0.98, max_relative = 1e-9);
    }

    #[test]
    fn energy_balancing_equilibrium_and_settled_deviation() {
        let c = energy_balancing();
        let cfg = ControllerConfig::EnergyBalancing(c.clone());
        let m0 = meas(0.0, 0.0, c.w_set);
        let x = cfg.init_states(&m0, 1.0);
        let mut dx = vec![0.0; 2];
        let out = ctrl_eval(&cfg, &x, &m0, W_BASE, &mut dx);
        assert_eq!(out.omega.unwrap(), 1.0);
        assert_eq!(out.v_dc.unwrap(), 1.0);
        assert!(dx.iter().all(|d| d.abs() < 1e-15));

        // Settled at dW = -0.04 with k_w = 0.5 on both sides.
        let m1 = meas(0.0, 0.0, c.w_set - 0.04);
        let x1 = cfg.init_states(&m1, 1.0);
        let out = ctrl_eval(&cfg, &x1, &m1, W_BASE, &mut dx);
        assert_relative_eq!(out.omega.unwrap(), 0.98, max_relative = 1e-12);
        assert_relative_eq!(out.v_dc.unwrap(), 0.98, max_relative = 1e-12);
    }

    #[test]
    fn energy_balancing_derivative_kick_decays_with_tau() {
        // Oracle: after a step dW: 0 -> D at t=0 from a settled filter, the
        // AC-side output is k_w D + (k_p/tau) D exp(-t/tau). The ZOH
        // discretization must match the exponential at every sample.
        let mut c = energy_balancing();
        c.tau_ac_s = 0.001;
        c.k_p_ac = 0.0125;
        let cfg = ControllerConfig::EnergyBalancing(c.clone());
        let m0 = meas(0.0, 0.0, c.w_set);
        let mut x = cfg.init_states(&m0, 1.0);
        let d = -0.02;
        let m1 = meas(0.0, 0.0, c.w_set + d);
        let dt = 1e-4;
        let mut t = 0.0;
        for _ in 0..50 {
            let out = ctrl_step(&cfg, &mut x, &m1, W_BASE, dt);
            let expected =
                1.0 + c.k_w_ac * d + (c.k_p_ac / c.tau_ac_s) * d * (-t / c.tau_ac_s).exp();
            assert_relative_eq!(out.omega.unwrap(), expected, max_relative = 1e-9);
            t += dt;
        }
    }

    #[test]
    fn ac_gfm_balances_and_commands_dc_power() {
        let cfg = ControllerConfig::AcGfm(AcGfmCfg {
            omega_set: 1.0,
            p_ac_set: 0.33,
            q_set: 0.0,
            v_ac_set: 1.0,
            w_set: 0.049152,
            k_p_ac: 0.05,
            k_q_ac: 0.05,
            tau_ac_s: 0.04,
            energy_pi: PiGains { k_p: 17.6, k_i: 158.0 },
        });
        let m = meas(0.33, 0.33, 0.049152);
        let x = cfg.init_states(&m, 1.0);
        let mut dx = vec![0.0; 2];
        let out = ctrl_eval(&cfg, &x, &m, W_BASE, &mut dx);
        assert_eq!(out.omega.unwrap(), 1.0);
        assert_relative_eq!(out.p_dc_cmd.unwrap(), 0.33, max_relative = 1e-12);
        // Energy deficit raises the DC power demand.
        let m_low = meas(0.33, 0.33, 0.03);
        let out = ctrl_eval(&cfg, &x, &m_low, W_BASE, &mut dx);
        assert!(out.p_dc_cmd.unwrap() > 0.33);
        assert!(dx[1] > 0.0);
    }

    #[test]
    fn dc_gfm_balances_and_commands_ac_power() {
        let cfg = ControllerConfig::DcGfm(DcGfmCfg {
            v_dc_set: 1.0,
            p_dc_set: 0.33,
            q_set: 0.0,
            w_set: 0.049152,
            k_p_dc: 0.05,
            tau_dc_s: 0.01,
            tau_ac_s: 1.0,
            energy_pi: PiGains { k_p: 17.6, k_i: 158.0 },
            pll: PllParams::default(),
        });
        let m = meas(0.33, 0.33, 0.049152);
        let x = cfg.init_states(&m, 1.0);
        let mut dx = vec![0.0; 4];
        let out = ctrl_eval(&cfg, &x, &m, W_BASE, &mut dx);
        assert_eq!(out.v_dc.unwrap(), 1.0);
        assert_relative_eq!(out.p_ac_cmd.unwrap(), 0.33, max_relative = 1e-12);
        assert!(dx.iter().all(|d| d.abs() < 1e-12));
        // Importing more than the setpoint raises the formed voltage.
        let m_hi = meas(0.33, 0.5, 0.049152);
        let x_hi = cfg.init_states(&m_hi, 1.0);
        let out = ctrl_eval(&cfg, &x_hi, &m_hi, W_BASE, &mut dx);
        assert_relative_eq!(
            out.v_dc.unwrap(),
            1.0 + 0.05 * (0.5 - 0.33),
            max_relative = 1e-12
        );
    }

    #[test]
    fn dc_gfm_freezes_pll_on_dead_bus() {
        let cfg = ControllerConfig::DcGfm(DcGfmCfg {
            v_dc_set: 1.0,
            p_dc_set: 0.0,
            q_set: 0.0,
            w_set: 0.049152,
            k_p_dc: 0.05,
            tau_dc_s: 0.01,
            tau_ac_s: 1.0,
            energy_pi: PiGains { k_p: 17.6, k_i: 158.0 },
            pll: PllParams::default(),
        });
        let mut m = meas(0.0, 0.0, 0.049152);
        m.v_bus = Complex64::new(0.02, 0.0);
        let x = cfg.init_states(&m, 1.0);
        let mut dx = vec![0.0; 4];
        let out = ctrl_eval(&cfg, &x, &m, W_BASE, &mut dx);
        assert!(out.pll_dead);
        assert_eq!(dx[2], 0.0);
        assert_eq!(dx[3], 0.0);
    }

    #[test]
    fn volt_var_examples() {
        assert_eq!(volt_var(0.2, 1.0, 0.05, 0.2), 1.0);
        assert_relative_eq!(volt_var(-0.2, 1.0, 0.05, 0.0), 1.01, max_relative = 1e-12);
        // Sign flip is symmetric about the setpoint.
        let up = volt_var(-0.3, 1.0, 0.05, 0.0) - 1.0;
        let down = volt_var(0.3, 1.0, 0.05, 0.0) - 1.0;
        assert_relative_eq!(up, -down, max_relative = 1e-12);
    }

    #[test]
    fn droop_equivalent_setpoints_examples() {
        let mut c = hybrid();
        c.tau_dc_s = 0.0;
        c.p_ac_set = 0.1;
        c.p_dc_set = 0.1;
        // dW = 0: references equal setpoints.
        let (pa, pd) = droop_equivalent_setpoints(&c, c.w_set).unwrap();
        assert_eq!(pa, 0.1);
        assert_eq!(pd, 0.1);
        // k_w/k_p = 10, dW = 0.01: AC reference shifts by +0.1.
        let (pa, _) = droop_equivalent_setpoints(&c, c.w_set + 0.01).unwrap();
        assert_relative_eq!(pa, 0.2, max_relative = 1e-12);

        let mut zero = c.clone();
        zero.k_p_ac = 0.0;
        assert!(droop_equivalent_setpoints(&zero, c.w_set).is_err());
    }

    #[test]
    fn energy_balancing_requires_gain_ordering() {
        let mut c = energy_balancing();
        c.k_p_ac = 0.6;
        assert!(ControllerConfig::EnergyBalancing(c).validate().is_err());
    }
}
