//! Small-signal analysis: closed-loop models of one converter against
//! equivalent AC and DC networks, eigenvalue certification, a randomized
//! stability sweep, finite-difference linearization, steady-state relation
//! checks, and the gain-consistency audit for grids of grids.

mod closed_loop;
mod gains;
mod jacobian;
mod relations;

pub use closed_loop::{
    closed_loop_energy_balancing, closed_loop_hybrid, theorem1_sweep, Connection, SweepRanges,
    SweepReport, TheoremController, TheoremParams, TheoremSystem,
};
pub use gains::{check_gain_consistency, GainConsistencyReport, GainViolation, IpcGainInfo};
pub use jacobian::central_jacobian;
pub use relations::{steady_state_relations, RelationResidual, SettledPoint};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Classification band: eigenvalue real parts within this of zero are
/// marginal rather than stable.
pub const MARGINAL_BAND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AnalyticClosedForm,
    NumericJacobian,
}

/// A linearized model: state matrix in per-second units on pu states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub labels: Vec<String>,
    /// State values at the expansion point.
    pub equilibrium: Vec<f64>,
    pub provenance: Provenance,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, labels: Vec<String>, provenance: Provenance) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "state matrix must be square");
        assert_eq!(a.nrows(), labels.len(), "one label per state");
        let n = a.nrows();
        Self {
            a,
            labels,
            equilibrium: vec![0.0; n],
            provenance,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Marginal,
    Unstable,
}

/// Routh-Hurwitz record for second-order systems: stable iff trace < 0 and
/// determinant > 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Routh2x2 {
    pub trace: f64,
    pub det: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Complex64>,
    pub max_real_part: f64,
    pub verdict: Verdict,
    pub routh: Option<Routh2x2>,
}

/// Eigenvalue certification of a linear model.
pub fn certify(model: &LinearModel) -> StabilityReport {
    let n = model.dim();
    let eigenvalues: Vec<Complex64> = match n {
        0 => vec![],
        1 => vec![Complex64::new(model.a[(0, 0)], 0.0)],
        2 => {
            let tr = model.a.trace();
            let det = model.a[(0, 0)] * model.a[(1, 1)] - model.a[(0, 1)] * model.a[(1, 0)];
            let disc = tr * tr / 4.0 - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                vec![
                    Complex64::new(tr / 2.0 + s, 0.0),
                    Complex64::new(tr / 2.0 - s, 0.0),
                ]
            } else {
                let s = (-disc).sqrt();
                vec![Complex64::new(tr / 2.0, s), Complex64::new(tr / 2.0, -s)]
            }
        }
        _ => model.a.clone().complex_eigenvalues().iter().copied().collect(),
    };
    let max_real_part = eigenvalues
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let verdict = if eigenvalues.is_empty() {
        Verdict::Marginal
    } else if max_real_part > MARGINAL_BAND {
        Verdict::Unstable
    } else if max_real_part >= -MARGINAL_BAND {
        Verdict::Marginal
    } else {
        Verdict::Stable
    };
    let routh = (n == 2).then(|| {
        let trace = model.a.trace();
        let det = model.a[(0, 0)] * model.a[(1, 1)] - model.a[(0, 1)] * model.a[(1, 0)];
        Routh2x2 {
            trace,
            det,
            satisfied: trace < 0.0 && det > 0.0,
        }
    });
    StabilityReport {
        eigenvalues,
        max_real_part,
        verdict,
        routh,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn certify_complex_pair() {
        // Characteristic polynomial s^2 + 1.0833 s + 5.0833.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -10.0, -0.5 / 6.0]);
        let model = LinearModel::new(
            a,
            vec!["delta".into(), "dw_t".into()],
            Provenance::AnalyticClosedForm,
        );
        let rep = certify(&model);
        assert_eq!(rep.verdict, Verdict::Stable);
        let lam = rep.eigenvalues[0];
        assert_relative_eq!(lam.re, -0.5417, max_relative = 1e-3);
        assert_relative_eq!(lam.im.abs(), 2.1886, max_relative = 1e-3);
        let routh = rep.routh.unwrap();
        assert!(routh.satisfied);
        assert_relative_eq!(routh.det, 5.0 + 0.5 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn certify_zero_matrix_is_marginal() {
        let model = LinearModel::new(
            DMatrix::zeros(2, 2),
            vec!["a".into(), "b".into()],
            Provenance::AnalyticClosedForm,
        );
        assert_eq!(certify(&model).verdict, Verdict::Marginal);
    }

    #[test]
    fn certify_saddle_is_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let model = LinearModel::new(
            a,
            vec!["a".into(), "b".into()],
            Provenance::AnalyticClosedForm,
        );
        let rep = certify(&model);
        assert_eq!(rep.verdict, Verdict::Unstable);
        assert!(!rep.routh.unwrap().satisfied);
    }

    #[test]
    fn certify_larger_matrix_through_schur() {
        // Block diagonal: rotation block (-0.1 +- 2i) and -3.
        let a = DMatrix::from_row_slice(3, 3, &[-0.1, 2.0, 0.0, -2.0, -0.1, 0.0, 0.0, 0.0, -3.0]);
        let model = LinearModel::new(
            a,
            vec!["x".into(), "y".into(), "z".into()],
            Provenance::NumericJacobian,
        );
        let rep = certify(&model);
        assert_eq!(rep.verdict, Verdict::Stable);
        assert_relative_eq!(rep.max_real_part, -0.1, max_relative = 1e-9);
    }
}
