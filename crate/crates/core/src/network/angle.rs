//! Lossless power-angle solution of one AC subgrid (analytic fidelity).
//!
//! All voltage magnitudes are pinned at 1 pu and every branch is reduced to
//! its series susceptance, so active power flows are `b sin(theta_i -
//! theta_j)`. This is the network model under which the closed-form
//! small-signal matrices are exact.

use nalgebra::DVector;

use crate::error::{Error, Result};

use super::newton::newton_solve;

/// A voltage-forming terminal in the angle network.
#[derive(Debug, Clone, Copy)]
pub struct AngleSource {
    pub bus: usize,
    pub theta: f64,
    /// Series susceptance between the internal EMF and the bus. `None`
    /// forms the bus angle directly (ideal source).
    pub b_coupling: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AngleInput<'a> {
    pub n_buses: usize,
    /// (from, to, susceptance pu) per line.
    pub b_lines: Vec<(usize, usize, f64)>,
    pub sources: Vec<AngleSource>,
    /// Fixed active power injection per bus (loads negative).
    pub p_inj: Vec<f64>,
    /// PLL-oriented injections: (bus, commanded P, pll angle). Delivered
    /// power is scaled by the cosine of the tracking error.
    pub rot_inj: Vec<(usize, f64, f64)>,
    pub subgrid_id: &'a str,
}

#[derive(Debug, Clone)]
pub struct AngleSolution {
    pub theta: Vec<f64>,
    /// Active power delivered into the network by each source, measured at
    /// its internal node.
    pub source_p: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn solve_angle_network(input: &AngleInput, warm: Option<&AngleSolution>) -> Result<AngleSolution> {
    let n = input.n_buses;
    assert_eq!(input.p_inj.len(), n);
    if input.sources.is_empty() {
        return Err(Error::NoFormingDevice(input.subgrid_id.to_string()));
    }
    let mut formed = vec![None; n];
    for (k, s) in input.sources.iter().enumerate() {
        if s.b_coupling.is_none() {
            if formed[s.bus].is_some() {
                return Err(Error::Validation(format!(
                    "{}: bus {} formed by more than one ideal source",
                    input.subgrid_id, s.bus
                )));
            }
            formed[s.bus] = Some(k);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&b| formed[b].is_none()).collect();

    // Cold starts begin at the mean source angle, which stays valid when
    // the whole island has drifted far from zero.
    let ref_angle =
        input.sources.iter().map(|s| s.theta).sum::<f64>() / input.sources.len() as f64;
    let mut x0 = DVector::<f64>::zeros(free.len());
    for (i, &b) in free.iter().enumerate() {
        x0[i] = warm.map(|w| w.theta[b]).unwrap_or(ref_angle);
    }

    let assemble = |x: &DVector<f64>| -> Vec<f64> {
        let mut theta = vec![0.0; n];
        for b in 0..n {
            if let Some(k) = formed[b] {
                theta[b] = input.sources[k].theta;
            }
        }
        for (i, &b) in free.iter().enumerate() {
            theta[b] = x[i];
        }
        theta
    };
    let bus_mismatch = |theta: &[f64], b: usize| -> f64 {
        let mut p = input.p_inj[b];
        for &(rb, cmd, pll_theta) in &input.rot_inj {
            if rb == b {
                p += cmd * (theta[b] - pll_theta).cos();
            }
        }
        for &(f, t, susc) in &input.b_lines {
            if f == b {
                p -= susc * (theta[b] - theta[t]).sin();
            } else if t == b {
                p -= susc * (theta[b] - theta[f]).sin();
            }
        }
        for s in &input.sources {
            if s.bus == b {
                if let Some(bc) = s.b_coupling {
                    p += bc * (s.theta - theta[b]).sin();
                }
            }
        }
        p
    };

    let (x, iterations, residual) = newton_solve(
        x0,
        |x| {
            let theta = assemble(x);
            DVector::from_iterator(free.len(), free.iter().map(|&b| bus_mismatch(&theta, b)))
        },
        1e-10,
        60,
        &format!("ac angle network {}", input.subgrid_id),
    )?;
    let theta = assemble(&x);

    let source_p: Vec<f64> = input
        .sources
        .iter()
        .map(|s| match s.b_coupling {
            Some(bc) => bc * (s.theta - theta[s.bus]).sin(),
            // Ideal source covers the bus mismatch (its own contribution
            // excluded, which bus_mismatch already does).
            None => -bus_mismatch(&theta, s.bus),
        })
        .collect();

    Ok(AngleSolution {
        theta,
        source_p,
        iterations,
        residual,
    })
}
