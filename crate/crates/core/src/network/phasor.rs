//! Quasi-static phasor solution of one AC subgrid (dynamic fidelity).
//!
//! Voltage-forming sources fix their bus phasor. Converter terminals in
//! AC-forming mode appear as an internal EMF behind the coupling admittance
//! (transformer leakage plus phase reactor); the EMF magnitude may follow a
//! volt-var droop, which is folded into the Newton unknowns so no extra
//! measurement lag is introduced. Grid-following injections and loads enter
//! as complex power injections at their bus.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

use super::newton::newton_solve;

/// How a converter EMF magnitude is determined.
#[derive(Debug, Clone, Copy)]
pub enum VoltageRef {
    Fixed(f64),
    /// v_ref = v_set + k_q (q_set - Q), with Q measured at the EMF.
    VoltVar { v_set: f64, k_q: f64, q_set: f64 },
}

/// A converter AC terminal modeled as EMF behind a coupling admittance.
#[derive(Debug, Clone, Copy)]
pub struct EmfTerminal {
    pub bus: usize,
    pub y_coupling: Complex64,
    pub theta: f64,
    pub v_ref: VoltageRef,
}

#[derive(Debug, Clone)]
pub struct PhasorInput<'a> {
    pub y: &'a DMatrix<Complex64>,
    /// Buses whose voltage is formed directly by a source.
    pub formed: Vec<(usize, Complex64)>,
    pub emf: Vec<EmfTerminal>,
    /// Net fixed complex power injection per bus (loads negative).
    pub s_inj: Vec<Complex64>,
    /// Current-source injections oriented by a PLL frame: (bus, commanded
    /// S, pll angle). The delivered power rotates with the angle error
    /// between the bus voltage and the PLL.
    pub rot_inj: Vec<(usize, Complex64, f64)>,
    pub subgrid_id: &'a str,
}

#[derive(Debug, Clone)]
pub struct PhasorSolution {
    pub v_bus: Vec<Complex64>,
    /// Internal EMF phasor per converter terminal.
    pub emf_e: Vec<Complex64>,
    /// Complex power injected by each converter, measured at its EMF.
    pub emf_s: Vec<Complex64>,
    /// Complex power injected by each forming source at its bus.
    pub formed_s: Vec<Complex64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn solve_phasor_network(
    input: &PhasorInput,
    warm: Option<&PhasorSolution>,
) -> Result<PhasorSolution> {
    let n = input.y.nrows();
    assert_eq!(input.s_inj.len(), n);
    if input.formed.is_empty() && input.emf.is_empty() {
        return Err(Error::NoFormingDevice(input.subgrid_id.to_string()));
    }

    let mut is_formed = vec![false; n];
    for &(b, _) in &input.formed {
        if is_formed[b] {
            return Err(Error::Validation(format!(
                "{}: bus {b} formed by more than one source",
                input.subgrid_id
            )));
        }
        is_formed[b] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&b| !is_formed[b]).collect();
    let volt_var: Vec<usize> = input
        .emf
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.v_ref, VoltageRef::VoltVar { .. }))
        .map(|(k, _)| k)
        .collect();
    let nx = 2 * free.len() + volt_var.len();

    // Initial guess: warm-start from the previous stage when available,
    // otherwise a flat profile rotated to the mean forming angle so large
    // absolute angles cannot push Newton onto a spurious root.
    let ref_angle = {
        let mut sum = 0.0;
        let mut n_ref = 0usize;
        for &(_, vf) in &input.formed {
            sum += vf.arg();
            n_ref += 1;
        }
        for t in &input.emf {
            sum += t.theta;
            n_ref += 1;
        }
        if n_ref > 0 {
            sum / n_ref as f64
        } else {
            0.0
        }
    };
    let mut x0 = DVector::<f64>::zeros(nx);
    for (i, &b) in free.iter().enumerate() {
        let v = warm
            .map(|w| w.v_bus[b])
            .unwrap_or(Complex64::from_polar(1.0, ref_angle));
        x0[2 * i] = v.re;
        x0[2 * i + 1] = v.im;
    }
    for (i, &k) in volt_var.iter().enumerate() {
        let guess = match (warm, input.emf[k].v_ref) {
            (Some(w), _) if w.emf_e.len() == input.emf.len() => w.emf_e[k].norm(),
            (_, VoltageRef::VoltVar { v_set, .. }) => v_set,
            (_, VoltageRef::Fixed(v)) => v,
        };
        x0[2 * free.len() + i] = guess;
    }

    let eval = |x: &DVector<f64>| -> (Vec<Complex64>, Vec<Complex64>, DVector<f64>) {
        let mut v = vec![Complex64::new(1.0, 0.0); n];
        for &(b, vf) in &input.formed {
            v[b] = vf;
        }
        for (i, &b) in free.iter().enumerate() {
            v[b] = Complex64::new(x[2 * i], x[2 * i + 1]);
        }
        let mut e = Vec::with_capacity(input.emf.len());
        for (k, t) in input.emf.iter().enumerate() {
            let mag = match t.v_ref {
                VoltageRef::Fixed(m) => m,
                VoltageRef::VoltVar { .. } => {
                    let pos = volt_var.iter().position(|&j| j == k).unwrap();
                    x[2 * free.len() + pos]
                }
            };
            e.push(Complex64::from_polar(mag, t.theta));
        }

        let mut r = DVector::<f64>::zeros(nx);
        for (i, &b) in free.iter().enumerate() {
            let mut i_net = Complex64::new(0.0, 0.0);
            for j in 0..n {
                i_net += input.y[(b, j)] * v[j];
            }
            let mut mismatch = input.s_inj[b] - v[b] * i_net.conj();
            for &(rb, cmd, pll_theta) in &input.rot_inj {
                if rb == b {
                    mismatch += cmd * Complex64::from_polar(1.0, v[b].arg() - pll_theta);
                }
            }
            for (k, t) in input.emf.iter().enumerate() {
                if t.bus == b {
                    let i_c = t.y_coupling * (e[k] - v[b]);
                    mismatch += v[b] * i_c.conj();
                }
            }
            r[2 * i] = mismatch.re;
            r[2 * i + 1] = mismatch.im;
        }
        for (i, &k) in volt_var.iter().enumerate() {
            let t = &input.emf[k];
            let (v_set, k_q, q_set) = match t.v_ref {
                VoltageRef::VoltVar { v_set, k_q, q_set } => (v_set, k_q, q_set),
                VoltageRef::Fixed(_) => unreachable!(),
            };
            let i_c = t.y_coupling * (e[k] - v[t.bus]);
            let q = (e[k] * i_c.conj()).im;
            r[2 * free.len() + i] = e[k].norm() - v_set - k_q * (q_set - q);
        }
        (v, e, r)
    };

    let (x, iterations, residual) = newton_solve(
        x0,
        |x| eval(x).2,
        1e-10,
        60,
        &format!("ac phasor network {}", input.subgrid_id),
    )?;
    let (v, e, _) = eval(&x);

    let emf_s: Vec<Complex64> = input
        .emf
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let i_c = t.y_coupling * (e[k] - v[t.bus]);
            e[k] * i_c.conj()
        })
        .collect();
    let formed_s: Vec<Complex64> = input
        .formed
        .iter()
        .map(|&(b, _)| {
            let mut i_net = Complex64::new(0.0, 0.0);
            for j in 0..n {
                i_net += input.y[(b, j)] * v[j];
            }
            let mut i_src = i_net;
            for (k, t) in input.emf.iter().enumerate() {
                if t.bus == b {
                    i_src -= t.y_coupling * (e[k] - v[b]);
                }
            }
            // PQ and PLL-oriented devices on the formed bus supply part of
            // the current.
            let mut s = v[b] * i_src.conj() - input.s_inj[b];
            for &(rb, cmd, pll_theta) in &input.rot_inj {
                if rb == b {
                    s -= cmd * Complex64::from_polar(1.0, v[b].arg() - pll_theta);
                }
            }
            s
        })
        .collect();

    Ok(PhasorSolution {
        v_bus: v,
        emf_e: e,
        emf_s,
        formed_s,
        iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_admittance, AcBus, AcLine, AcSubgrid};
    use crate::per_unit::PerUnitBase;
    use approx::assert_relative_eq;

    fn lossless_two_bus(b_pu: f64) -> DMatrix<Complex64> {
        let y = Complex64::new(0.0, -b_pu);
        DMatrix::from_row_slice(2, 2, &[y, -y, -y, y])
    }

    #[test]
    fn power_angle_oracle() {
        // Lossless two-bus with b = 10 pu and a 0.01 rad angle difference:
        // P = b sin(delta) = 0.0999998...
        let y = lossless_two_bus(10.0);
        let input = PhasorInput {
            y: &y,
            formed: vec![
                (0, Complex64::from_polar(1.0, 0.01)),
                (1, Complex64::from_polar(1.0, 0.0)),
            ],
            emf: vec![],
            s_inj: vec![Complex64::new(0.0, 0.0); 2],
            rot_inj: vec![],
            subgrid_id: "t",
        };
        let sol = solve_phasor_network(&input, None).unwrap();
        assert_relative_eq!(
            sol.formed_s[0].re,
            10.0 * (0.01f64).sin(),
            max_relative = 1e-12
        );
        assert_relative_eq!(sol.formed_s[0].re, 0.1, max_relative = 1e-4);
    }

    #[test]
    fn flat_profile_zero_flows() {
        let base = PerUnitBase::default();
        let g = AcSubgrid {
            id: "ac".into(),
            buses: vec![AcBus { id: "1".into() }, AcBus { id: "2".into() }],
            lines: vec![AcLine {
                from: 0,
                to: 1,
                length_km: 50.0,
                r_ohm_per_km: 0.08,
                l_mh_per_km: 0.8,
                c_uf_per_km: 0.0,
            }],
        };
        let y = build_admittance(&g, &base, 1.0).unwrap();
        let input = PhasorInput {
            y: &y,
            formed: vec![(0, Complex64::new(1.0, 0.0))],
            emf: vec![],
            s_inj: vec![Complex64::new(0.0, 0.0); 2],
            rot_inj: vec![],
            subgrid_id: "ac",
        };
        let sol = solve_phasor_network(&input, None).unwrap();
        assert!(sol.formed_s[0].norm() < 1e-12);
        assert_relative_eq!(sol.v_bus[1].re, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn island_without_former_is_rejected() {
        let y = lossless_two_bus(10.0);
        let input = PhasorInput {
            y: &y,
            formed: vec![],
            emf: vec![],
            s_inj: vec![Complex64::new(0.35, 0.0), Complex64::new(-0.35, 0.0)],
            rot_inj: vec![],
            subgrid_id: "gfl-only",
        };
        match solve_phasor_network(&input, None) {
            Err(Error::NoFormingDevice(id)) => assert_eq!(id, "gfl-only"),
            other => panic!("expected no-forming-device, got {other:?}"),
        }
    }

    #[test]
    fn volt_var_raises_reference_under_reactive_load() {
        let y = lossless_two_bus(5.0);
        let input = PhasorInput {
            y: &y,
            formed: vec![(1, Complex64::new(1.0, 0.0))],
            emf: vec![EmfTerminal {
                bus: 0,
                y_coupling: Complex64::new(0.0, -4.0),
                theta: 0.0,
                v_ref: VoltageRef::VoltVar {
                    v_set: 1.0,
                    k_q: 0.05,
                    q_set: 0.0,
                },
            }],
            s_inj: vec![Complex64::new(0.0, -0.2), Complex64::new(0.0, 0.0)],
            rot_inj: vec![],
            subgrid_id: "t",
        };
        let sol = solve_phasor_network(&input, None).unwrap();
        let q = sol.emf_s[0].im;
        assert_relative_eq!(
            sol.emf_e[0].norm(),
            1.0 + 0.05 * (0.0 - q),
            max_relative = 1e-9
        );
        assert!(q > 0.0, "EMF should supply the reactive load");
    }

    #[test]
    fn power_balances_with_losses() {
        let base = PerUnitBase::default();
        let g = AcSubgrid {
            id: "ac".into(),
            buses: vec![
                AcBus { id: "1".into() },
                AcBus { id: "2".into() },
                AcBus { id: "3".into() },
            ],
            lines: vec![
                AcLine {
                    from: 0,
                    to: 1,
                    length_km: 60.0,
                    r_ohm_per_km: 0.08,
                    l_mh_per_km: 0.8,
                    c_uf_per_km: 0.012,
                },
                AcLine {
                    from: 1,
                    to: 2,
                    length_km: 40.0,
                    r_ohm_per_km: 0.08,
                    l_mh_per_km: 0.8,
                    c_uf_per_km: 0.012,
                },
            ],
        };
        let y = build_admittance(&g, &base, 1.0).unwrap();
        let input = PhasorInput {
            y: &y,
            formed: vec![(0, Complex64::new(1.0, 0.0))],
            emf: vec![EmfTerminal {
                bus: 2,
                y_coupling: Complex64::new(0.009, 0.25).inv(),
                theta: 0.05,
                v_ref: VoltageRef::Fixed(1.0),
            }],
            s_inj: vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(-0.6, -0.1),
                Complex64::new(0.0, 0.0),
            ],
            rot_inj: vec![],
            subgrid_id: "ac",
        };
        let sol = solve_phasor_network(&input, None).unwrap();
        // Active power: source + converter - load - losses = 0. Losses are
        // recomputed from branch flows as an independent check.
        let mut loss = 0.0;
        for line in &g.lines {
            let z = crate::network::line_impedance_ohm(line, &base, 1.0) / base.z_ac_ohm();
            let i = (sol.v_bus[line.from] - sol.v_bus[line.to]) / z;
            loss += z.re * i.norm_sqr();
        }
        // Coupling impedance loss of the converter terminal.
        let zc = Complex64::new(0.009, 0.25);
        let ic = (sol.emf_e[0] - sol.v_bus[2]) / zc;
        loss += zc.re * ic.norm_sqr();
        let total = sol.formed_s[0].re + sol.emf_s[0].re - 0.6 - loss;
        assert!(total.abs() < 1e-9, "active power imbalance {total:.3e}");
    }
}
