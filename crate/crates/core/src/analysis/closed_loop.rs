//! Closed-loop models of one converter coupled to equivalent AC and DC
//! networks, under the reduced-model hypotheses: no measurement filters,
//! zero power setpoints, linearization at the zero power flow solution, and
//! per-unit time.
//!
//! The AC side is a droop source behind the interface susceptance `b_ac`,
//! the DC side a droop source behind the conductance `g_dc`. Eliminating the
//! DC network gives `P_dc = -kappa_dc dW` for the hybrid law and a filtered
//! PD term with `gamma_dc` for the energy-balancing law. Each closed loop is
//! available both as the hand-assembled state matrix and as a nonlinear
//! right-hand side (power-angle sine kept) so the two constructions can be
//! cross-validated by finite differences.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{certify, LinearModel, Provenance, Verdict};

/// Which networks the converter is connected to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connection {
    AcOnly,
    DcOnly,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremController {
    HybridDroop,
    EnergyBalancing,
}

/// Parameters of the reduced single-converter system.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TheoremParams {
    /// AC interface susceptance, pu.
    pub b_ac: f64,
    /// AC source droop coefficient.
    pub k_ac: f64,
    /// DC network conductance, pu.
    pub g_dc: f64,
    /// DC source droop coefficient.
    pub k_dc: f64,
    pub k_p_ac: f64,
    pub k_p_dc: f64,
    pub k_w_ac: f64,
    pub k_w_dc: f64,
}

impl TheoremParams {
    /// Effective DC-side proportional energy coefficient of the hybrid
    /// closed loop.
    pub fn kappa_dc(&self) -> f64 {
        self.k_w_dc / (1.0 + self.g_dc * self.k_dc + self.g_dc * self.k_p_dc)
    }

    /// Effective DC network conductance seen by the energy-balancing loop.
    pub fn gamma_dc(&self) -> f64 {
        self.g_dc * (1.0 - self.k_dc * self.g_dc / (self.k_dc * self.g_dc + 1.0))
    }

    fn check_connection(&self, connection: Connection) -> Result<()> {
        let need_ac = !matches!(connection, Connection::DcOnly);
        let need_dc = !matches!(connection, Connection::AcOnly);
        if need_ac && !(self.b_ac > 0.0) {
            return Err(Error::Validation(format!(
                "AC connection requested with non-positive b_ac = {}",
                self.b_ac
            )));
        }
        if need_dc && !(self.g_dc > 0.0) {
            return Err(Error::Validation(format!(
                "DC connection requested with non-positive g_dc = {}",
                self.g_dc
            )));
        }
        Ok(())
    }
}

/// Closed loop of the hybrid power/energy droop law.
///
/// States (delta, dW): delta the converter-to-source angle, dW the energy
/// deviation. Connected to both networks,
/// `A = [[-(k_p_ac + k_ac) b_ac, k_w_ac], [-b_ac, -kappa_dc]]`;
/// AC only sets `kappa_dc = 0`; DC only reduces to the scalar `-kappa_dc`.
pub fn closed_loop_hybrid(params: &TheoremParams, connection: Connection) -> Result<LinearModel> {
    params.check_connection(connection)?;
    let model = match connection {
        Connection::DcOnly => LinearModel::new(
            DMatrix::from_element(1, 1, -params.kappa_dc()),
            vec!["dw_t".into()],
            Provenance::AnalyticClosedForm,
        ),
        Connection::AcOnly | Connection::Both => {
            let kappa = match connection {
                Connection::AcOnly => 0.0,
                _ => params.kappa_dc(),
            };
            LinearModel::new(
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        -(params.k_p_ac + params.k_ac) * params.b_ac,
                        params.k_w_ac,
                        -params.b_ac,
                        -kappa,
                    ],
                ),
                vec!["delta".into(), "dw_t".into()],
                Provenance::AnalyticClosedForm,
            )
        }
    };
    Ok(model)
}

/// Closed loop of the energy-balancing law.
///
/// States (vartheta, dW) with `vartheta = theta - k_p_ac dW - theta_ac`.
/// Connected to both networks,
/// `A = [[-k_ac b_ac, k_p_ac - k_w_ac],
///       [b_ac / (1 + gamma k_p_dc), -(gamma k_w_dc + b_ac k_w_ac) / (1 + gamma k_p_dc)]]`;
/// AC only sets `gamma = 0`; DC only reduces to the scalar
/// `-gamma k_w_dc / (1 + gamma k_p_dc)`.
pub fn closed_loop_energy_balancing(
    params: &TheoremParams,
    connection: Connection,
) -> Result<LinearModel> {
    params.check_connection(connection)?;
    let model = match connection {
        Connection::DcOnly => {
            let gamma = params.gamma_dc();
            LinearModel::new(
                DMatrix::from_element(
                    1,
                    1,
                    -gamma * params.k_w_dc / (1.0 + gamma * params.k_p_dc),
                ),
                vec!["dw_t".into()],
                Provenance::AnalyticClosedForm,
            )
        }
        Connection::AcOnly | Connection::Both => {
            let gamma = match connection {
                Connection::AcOnly => 0.0,
                _ => params.gamma_dc(),
            };
            let den = 1.0 + gamma * params.k_p_dc;
            LinearModel::new(
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        -params.k_ac * params.b_ac,
                        params.k_p_ac - params.k_w_ac,
                        params.b_ac / den,
                        -(gamma * params.k_w_dc + params.b_ac * params.k_w_ac) / den,
                    ],
                ),
                vec!["vartheta".into(), "dw_t".into()],
                Provenance::AnalyticClosedForm,
            )
        }
    };
    Ok(model)
}

/// The reduced single-converter system as a nonlinear right-hand side, with
/// the power-angle sine kept. Finite differences of this at the origin must
/// reproduce the closed-form matrices, which is the cross-validation used by
/// the acceptance suite.
#[derive(Debug, Clone, Copy)]
pub struct TheoremSystem {
    pub controller: TheoremController,
    pub params: TheoremParams,
    pub connection: Connection,
}

impl TheoremSystem {
    pub fn dim(&self) -> usize {
        match self.connection {
            Connection::DcOnly => 1,
            _ => 2,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match (self.connection, self.controller) {
            (Connection::DcOnly, _) => vec!["dw_t".into()],
            (_, TheoremController::HybridDroop) => vec!["delta".into(), "dw_t".into()],
            (_, TheoremController::EnergyBalancing) => vec!["vartheta".into(), "dw_t".into()],
        }
    }

    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        match self.controller {
            TheoremController::HybridDroop => match self.connection {
                Connection::DcOnly => DVector::from_element(1, -p.kappa_dc() * x[0]),
                conn => {
                    let kappa = if conn == Connection::AcOnly {
                        0.0
                    } else {
                        p.kappa_dc()
                    };
                    let p_ac = p.b_ac * x[0].sin();
                    DVector::from_vec(vec![
                        -(p.k_p_ac + p.k_ac) * p_ac + p.k_w_ac * x[1],
                        -kappa * x[1] - p_ac,
                    ])
                }
            },
            TheoremController::EnergyBalancing => match self.connection {
                Connection::DcOnly => {
                    let gamma = p.gamma_dc();
                    DVector::from_element(
                        1,
                        -gamma * p.k_w_dc / (1.0 + gamma * p.k_p_dc) * x[0],
                    )
                }
                conn => {
                    let gamma = if conn == Connection::AcOnly {
                        0.0
                    } else {
                        p.gamma_dc()
                    };
                    let den = 1.0 + gamma * p.k_p_dc;
                    let p_ac = p.b_ac * x[0].sin();
                    DVector::from_vec(vec![
                        -p.k_ac * p_ac + (p.k_p_ac - p.k_w_ac) * x[1],
                        (p_ac - (gamma * p.k_w_dc + p.b_ac * p.k_w_ac) * x[1]) / den,
                    ])
                }
            },
        }
    }

    pub fn closed_form(&self) -> Result<LinearModel> {
        match self.controller {
            TheoremController::HybridDroop => closed_loop_hybrid(&self.params, self.connection),
            TheoremController::EnergyBalancing => {
                closed_loop_energy_balancing(&self.params, self.connection)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Randomized stability sweep
// ---------------------------------------------------------------------------

/// Parameter ranges for the randomized sweep; defaults span the case-study
/// gain tables.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRanges {
    pub b_ac: (f64, f64),
    pub g_dc: (f64, f64),
    /// Droop gains: k_ac, k_dc, k_p_ac, k_p_dc.
    pub droop: (f64, f64),
    /// Energy gains: k_w_ac, k_w_dc.
    pub k_w: (f64, f64),
}

impl Default for SweepRanges {
    fn default() -> Self {
        Self {
            b_ac: (1.0, 50.0),
            g_dc: (5.0, 200.0),
            droop: (0.01, 0.2),
            k_w: (0.1, 1.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterExample {
    pub draw: usize,
    pub controller: TheoremController,
    pub connection: Connection,
    pub params: TheoremParams,
    pub max_real_part: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_draws: usize,
    pub seed: u64,
    pub cases_checked: usize,
    pub counterexamples: Vec<CounterExample>,
    /// Draws redrawn to satisfy the k_w_ac > k_p_ac hypothesis.
    pub hypothesis_redraws: usize,
    pub elapsed_s: f64,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Randomized verification of the stability result: every positive-gain
/// draw, for both dual-port controllers and all three connection cases, must
/// certify stable. Energy-balancing draws enforce `k_w_ac > k_p_ac`.
pub fn theorem1_sweep(n_draws: usize, seed: u64, ranges: &SweepRanges) -> SweepReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counterexamples = Vec::new();
    let mut hypothesis_redraws = 0usize;
    let mut cases_checked = 0usize;
    let connections = [Connection::AcOnly, Connection::DcOnly, Connection::Both];
    for draw in 0..n_draws {
        let mut params = TheoremParams {
            b_ac: rng.gen_range(ranges.b_ac.0..=ranges.b_ac.1),
            g_dc: rng.gen_range(ranges.g_dc.0..=ranges.g_dc.1),
            k_ac: rng.gen_range(ranges.droop.0..=ranges.droop.1),
            k_dc: rng.gen_range(ranges.droop.0..=ranges.droop.1),
            k_p_ac: rng.gen_range(ranges.droop.0..=ranges.droop.1),
            k_p_dc: rng.gen_range(ranges.droop.0..=ranges.droop.1),
            k_w_ac: rng.gen_range(ranges.k_w.0..=ranges.k_w.1),
            k_w_dc: rng.gen_range(ranges.k_w.0..=ranges.k_w.1),
        };
        // The energy-balancing hypothesis; draws violating it are outside
        // the theorem and are replaced.
        while params.k_w_ac <= params.k_p_ac {
            hypothesis_redraws += 1;
            params.k_w_ac = rng.gen_range(ranges.k_w.0..=ranges.k_w.1);
        }
        for controller in [
            TheoremController::HybridDroop,
            TheoremController::EnergyBalancing,
        ] {
            for connection in connections {
                let sys = TheoremSystem {
                    controller,
                    params,
                    connection,
                };
                let model = sys.closed_form().expect("positive draw");
                let report = certify(&model);
                cases_checked += 1;
                if report.verdict != Verdict::Stable {
                    counterexamples.push(CounterExample {
                        draw,
                        controller,
                        connection,
                        params,
                        max_real_part: report.max_real_part,
                    });
                }
            }
        }
    }
    SweepReport {
        n_draws,
        seed,
        cases_checked,
        counterexamples,
        hypothesis_redraws,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}
