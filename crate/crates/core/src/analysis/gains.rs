//! Gain-consistency audit for energy-balancing converters in a grid of
//! grids.
//!
//! Each converter carries the ratio `alpha = k_w_ac / k_w_dc`. At steady
//! state every converter on one DC network shares (up to conductor drops)
//! the same DC voltage deviation, so the frequency deviations of the AC
//! subgrids it touches are locked in the ratio of the alphas. Across
//! parallel AC-DC-AC routes those ratio products must agree, and every
//! converter on one AC subgrid must use the same frequency setpoint,
//! otherwise no consistent synchronized steady state exists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IpcGainInfo {
    pub id: String,
    pub ac_subgrid: usize,
    pub dc_subgrid: usize,
    pub alpha: f64,
    pub omega_set: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainViolation {
    pub ipc_a: String,
    pub ipc_b: String,
    /// Frequency-scale ratio implied by the already-assigned potentials.
    pub expected_ratio: f64,
    /// Ratio implied by the pair's alphas.
    pub actual_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainConsistencyReport {
    pub consistent: bool,
    pub alphas: Vec<(String, f64)>,
    pub violations: Vec<GainViolation>,
    /// Pairs on one AC subgrid with differing frequency setpoints.
    pub omega_set_violations: Vec<(String, String)>,
    /// Relative frequency-deviation scale assigned to each AC subgrid,
    /// normalized to the first.
    pub subgrid_scales: Vec<(usize, f64)>,
}

/// Audit the alpha-ratio products across every AC-DC-AC conversion path.
///
/// Consistency is equivalent to the existence of one frequency-deviation
/// scale per AC subgrid such that, for converters i and j sharing a DC
/// network, `scale(ac_i) / alpha_i = scale(ac_j) / alpha_j`. The scales are
/// propagated over a spanning structure and every remaining constraint is
/// checked; mismatches are reported with the offending converter pair.
pub fn check_gain_consistency(ipcs: &[IpcGainInfo]) -> Result<GainConsistencyReport> {
    if ipcs.is_empty() {
        return Err(Error::Validation(
            "gain consistency audit needs at least one converter".into(),
        ));
    }
    for ipc in ipcs {
        if !(ipc.alpha > 0.0) || !ipc.alpha.is_finite() {
            return Err(Error::Validation(format!(
                "{}: alpha must be positive and finite",
                ipc.id
            )));
        }
    }

    let n_ac = ipcs.iter().map(|i| i.ac_subgrid).max().unwrap() + 1;
    let n_dc = ipcs.iter().map(|i| i.dc_subgrid).max().unwrap() + 1;

    // scale[g] is the frequency-deviation scale of AC subgrid g; converters
    // on one DC net constrain scale(ac) / alpha to be equal.
    let mut scale: Vec<Option<f64>> = vec![None; n_ac];
    let mut violations = Vec::new();

    let mut per_dc: Vec<Vec<&IpcGainInfo>> = vec![Vec::new(); n_dc];
    for ipc in ipcs {
        per_dc[ipc.dc_subgrid].push(ipc);
    }

    // Propagate scales until settled, then verify every pair.
    scale[ipcs[0].ac_subgrid] = Some(1.0);
    let mut changed = true;
    while changed {
        changed = false;
        for members in &per_dc {
            if members.len() < 2 {
                continue;
            }
            if let Some(anchor) = members.iter().find(|m| scale[m.ac_subgrid].is_some()) {
                let dc_level = scale[anchor.ac_subgrid].unwrap() / anchor.alpha;
                for m in members {
                    if scale[m.ac_subgrid].is_none() {
                        scale[m.ac_subgrid] = Some(dc_level * m.alpha);
                        changed = true;
                    }
                }
            }
        }
    }

    for members in &per_dc {
        if members.len() < 2 {
            continue;
        }
        let anchor = members[0];
        if let (Some(sa), _) = (scale[anchor.ac_subgrid], anchor) {
            let dc_level = sa / anchor.alpha;
            for m in &members[1..] {
                if let Some(sm) = scale[m.ac_subgrid] {
                    let implied = dc_level * m.alpha;
                    if ((implied - sm) / sm.abs().max(1e-300)).abs() > 1e-9 {
                        violations.push(GainViolation {
                            ipc_a: anchor.id.clone(),
                            ipc_b: m.id.clone(),
                            expected_ratio: sm / sa,
                            actual_ratio: m.alpha / anchor.alpha,
                        });
                    }
                }
            }
        }
    }

    // Frequency setpoints must agree within each AC subgrid.
    let mut omega_set_violations = Vec::new();
    for g in 0..n_ac {
        let members: Vec<&IpcGainInfo> = ipcs.iter().filter(|i| i.ac_subgrid == g).collect();
        for pair in members.windows(2) {
            if (pair[0].omega_set - pair[1].omega_set).abs() > 1e-12 {
                omega_set_violations.push((pair[0].id.clone(), pair[1].id.clone()));
            }
        }
    }

    let consistent = violations.is_empty() && omega_set_violations.is_empty();
    Ok(GainConsistencyReport {
        consistent,
        alphas: ipcs.iter().map(|i| (i.id.clone(), i.alpha)).collect(),
        violations,
        omega_set_violations,
        subgrid_scales: scale
            .iter()
            .enumerate()
            .filter_map(|(g, s)| s.map(|v| (g, v)))
            .collect(),
    })
}
