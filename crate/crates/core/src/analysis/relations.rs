//! Steady-state relation residuals for the dual-port controllers.
//!
//! For energy balancing, at any settled point
//! `w - w_set = k_w_ac dW = (k_w_ac / k_w_dc) (V_dc - V_set)`.
//! For hybrid droop with equal AC and DC power setpoints, the energy can be
//! eliminated to give
//! `w - w_set = (k_w_ac/k_w_dc) dV - (k_p_ac + k_p_dc k_w_ac/k_w_dc) (P_ac - P_set)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipc::ControllerConfig;

/// Measurements of one converter at a settled operating point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SettledPoint {
    pub omega: f64,
    pub v_dc: f64,
    pub w_t: f64,
    pub p_ac: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationResidual {
    pub name: String,
    pub residual: f64,
}

/// Evaluate the steady-state map residuals of a dual-port controller at a
/// settled point. Single-port controllers have no such map and are
/// rejected; the hybrid check requires equal AC and DC power setpoints.
pub fn steady_state_relations(
    cfg: &ControllerConfig,
    point: &SettledPoint,
) -> Result<Vec<RelationResidual>> {
    match cfg {
        ControllerConfig::EnergyBalancing(c) => {
            if !(c.k_w_dc > 0.0) {
                return Err(Error::Validation(
                    "steady-state relations need k_w_dc > 0".into(),
                ));
            }
            let d_omega = point.omega - c.omega_set;
            let dw = point.w_t - c.w_set;
            let dv = point.v_dc - c.v_dc_set;
            Ok(vec![
                RelationResidual {
                    name: "freq_vs_energy".into(),
                    residual: d_omega - c.k_w_ac * dw,
                },
                RelationResidual {
                    name: "freq_vs_dc_voltage".into(),
                    residual: d_omega - c.k_w_ac / c.k_w_dc * dv,
                },
            ])
        }
        ControllerConfig::HybridDroop(c) => {
            if (c.p_ac_set - c.p_dc_set).abs() > 1e-12 {
                return Err(Error::HypothesisViolated(format!(
                    "hybrid steady-state map assumes p_dc_set = p_ac_set (got {} vs {})",
                    c.p_dc_set, c.p_ac_set
                )));
            }
            if !(c.k_w_dc > 0.0) {
                return Err(Error::Validation(
                    "steady-state relations need k_w_dc > 0".into(),
                ));
            }
            let alpha = c.k_w_ac / c.k_w_dc;
            let d_omega = point.omega - c.omega_set;
            let dv = point.v_dc - c.v_dc_set;
            let dp = point.p_ac - c.p_ac_set;
            Ok(vec![RelationResidual {
                name: "freq_vs_voltage_and_power".into(),
                residual: d_omega - (alpha * dv - (c.k_p_ac + c.k_p_dc * alpha) * dp),
            }])
        }
        other => Err(Error::WrongController {
            expected: "hybrid_droop or energy_balancing".into(),
            got: other.kind_name().into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipc::{EnergyBalancingCfg, HybridDroopCfg, PiGains};

    fn eb_cfg() -> ControllerConfig {
        ControllerConfig::EnergyBalancing(EnergyBalancingCfg {
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
        })
    }

    fn hybrid_cfg(p_ac_set: f64, p_dc_set: f64) -> ControllerConfig {
        ControllerConfig::HybridDroop(HybridDroopCfg {
            omega_set: 1.0,
            v_dc_set: 1.0,
            p_ac_set,
            p_dc_set,
            q_set: 0.0,
            v_ac_set: 1.0,
            w_set: 0.049152,
            k_p_ac: 0.05,
            k_q_ac: 0.05,
            k_p_dc: 0.05,
            k_w_ac: 0.5,
            k_w_dc: 0.5,
            tau_dc_s: 0.01,
        })
    }

    #[test]
    fn nominal_equilibrium_has_zero_residuals() {
        let point = SettledPoint {
            omega: 1.0,
            v_dc: 1.0,
            w_t: 0.049152,
            p_ac: 0.0,
        };
        for r in steady_state_relations(&eb_cfg(), &point).unwrap() {
            assert_eq!(r.residual, 0.0, "{}", r.name);
        }
        for r in steady_state_relations(&hybrid_cfg(0.0, 0.0), &point).unwrap() {
            assert_eq!(r.residual, 0.0, "{}", r.name);
        }
    }

    #[test]
    fn consistent_deviation_satisfies_map() {
        // dW = -0.04 with k_w = 0.5 both sides: freq and voltage drop 0.02.
        let point = SettledPoint {
            omega: 0.98,
            v_dc: 0.98,
            w_t: 0.049152 - 0.04,
            p_ac: 0.0,
        };
        for r in steady_state_relations(&eb_cfg(), &point).unwrap() {
            assert!(r.residual.abs() < 1e-12, "{}: {}", r.name, r.residual);
        }
    }

    #[test]
    fn hybrid_with_unequal_setpoints_refused() {
        let point = SettledPoint {
            omega: 1.0,
            v_dc: 1.0,
            w_t: 0.049152,
            p_ac: 0.0,
        };
        match steady_state_relations(&hybrid_cfg(0.2, 0.3), &point) {
            Err(Error::HypothesisViolated(_)) => {}
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn single_port_controller_refused() {
        let cfg = ControllerConfig::AcGfm(crate::ipc::AcGfmCfg {
            omega_set: 1.0,
            p_ac_set: 0.0,
            q_set: 0.0,
            v_ac_set: 1.0,
            w_set: 0.049152,
            k_p_ac: 0.05,
            k_q_ac: 0.05,
            tau_ac_s: 0.04,
            energy_pi: PiGains {
                k_p: 17.6,
                k_i: 158.0,
            },
        });
        let point = SettledPoint {
            omega: 1.0,
            v_dc: 1.0,
            w_t: 0.049152,
            p_ac: 0.0,
        };
        assert!(matches!(
            steady_state_relations(&cfg, &point),
            Err(Error::WrongController { .. })
        ));
    }
}
