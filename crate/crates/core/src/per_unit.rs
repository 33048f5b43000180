//! Per-unit base quantities.
//!
//! Energy is normalized as `w_base = s_base * 1 s`, so an energy of
//! 1 pu·s equals the system base power flowing for one second. With this
//! choice the energy-droop gains quoted in pu apply verbatim to `W_t`
//! expressed in pu·s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System base quantities for one study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    /// Base power in MW.
    pub s_mw: f64,
    /// AC base voltage, line-to-line RMS, in kV.
    pub v_ac_kv: f64,
    /// DC base voltage, pole-to-pole, in kV.
    pub v_dc_kv: f64,
    /// Nominal frequency in Hz.
    pub f_hz: f64,
}

impl PerUnitBase {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("s_mw", self.s_mw),
            ("v_ac_kv", self.v_ac_kv),
            ("v_dc_kv", self.v_dc_kv),
            ("f_hz", self.f_hz),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "per-unit base {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Energy base in MJ; numerically equal to `s_mw` by construction.
    pub fn w_base_mj(&self) -> f64 {
        self.s_mw
    }

    /// AC impedance base in ohms.
    pub fn z_ac_ohm(&self) -> f64 {
        self.v_ac_kv * self.v_ac_kv / self.s_mw
    }

    /// DC resistance base in ohms.
    pub fn z_dc_ohm(&self) -> f64 {
        self.v_dc_kv * self.v_dc_kv / self.s_mw
    }

    /// Nominal angular frequency in rad/s.
    pub fn omega_rad(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_hz
    }

    /// Convert an energy in MJ to pu·s.
    pub fn energy_to_pu_s(&self, mj: f64) -> f64 {
        mj / self.w_base_mj()
    }
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            s_mw: 500.0,
            v_ac_kv: 320.0,
            v_dc_kv: 640.0,
            f_hz: 50.0,
        }
    }
}
