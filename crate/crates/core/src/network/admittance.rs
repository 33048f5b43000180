//! Admittance assembly for AC subgrids and zero-frequency Thevenin
//! conductance for DC subgrids.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::per_unit::PerUnitBase;

use super::{AcLine, AcSubgrid, DcSubgrid};

/// Physical series impedance of one line in ohms at the given frequency (pu).
pub fn line_impedance_ohm(line: &AcLine, base: &PerUnitBase, f_pu: f64) -> Complex64 {
    let w = base.omega_rad() * f_pu;
    Complex64::new(
        line.r_ohm_per_km * line.length_km,
        w * line.l_mh_per_km * 1e-3 * line.length_km,
    )
}

/// Assemble the complex nodal admittance matrix of an AC subgrid in pu.
///
/// Standard π-model: series admittance between endpoints, half the charging
/// susceptance as a shunt at each end. Row sums therefore equal the shunt
/// terms. Fails on degenerate (zero-length) branches and on a bus graph that
/// is not connected.
pub fn build_admittance(
    subgrid: &AcSubgrid,
    base: &PerUnitBase,
    f_pu: f64,
) -> Result<DMatrix<Complex64>> {
    if !(f_pu > 0.0) {
        return Err(Error::Validation(format!(
            "admittance requested at non-positive frequency {f_pu}"
        )));
    }
    subgrid.validate()?;
    if !subgrid.is_connected() {
        return Err(Error::DisconnectedIsland(subgrid.id.clone()));
    }
    let n = subgrid.buses.len();
    let z_base = base.z_ac_ohm();
    let w = base.omega_rad() * f_pu;
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for line in &subgrid.lines {
        let z_pu = line_impedance_ohm(line, base, f_pu) / z_base;
        let ys = z_pu.inv();
        // Shunt susceptance in pu: physical siemens times the impedance base.
        let b_half = 0.5 * w * line.c_uf_per_km * 1e-6 * line.length_km * z_base;
        let ysh = Complex64::new(0.0, b_half);
        y[(line.from, line.from)] += ys + ysh;
        y[(line.to, line.to)] += ys + ysh;
        y[(line.from, line.to)] -= ys;
        y[(line.to, line.from)] -= ys;
    }
    Ok(y)
}

/// Thevenin series susceptance (pu) between two buses of an AC subgrid in
/// the lossless power-angle reduction: line reactances only, series-parallel
/// combined through the network graph.
pub fn ac_interface_susceptance(
    subgrid: &AcSubgrid,
    base: &PerUnitBase,
    from: usize,
    to: usize,
) -> Result<f64> {
    subgrid.validate()?;
    let n = subgrid.buses.len();
    if from >= n || to >= n || from == to {
        return Err(Error::Validation(format!(
            "ac_interface_susceptance: invalid bus pair ({from}, {to})"
        )));
    }
    if !subgrid.is_connected() {
        return Err(Error::DisconnectedIsland(subgrid.id.clone()));
    }
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for line in &subgrid.lines {
        let x_pu =
            base.omega_rad() * line.l_mh_per_km * 1e-3 * line.length_km / base.z_ac_ohm();
        let b = 1.0 / x_pu;
        lap[(line.from, line.from)] += b;
        lap[(line.to, line.to)] += b;
        lap[(line.from, line.to)] -= b;
        lap[(line.to, line.from)] -= b;
    }
    // Ground `to`, drive unit flow at `from`.
    let keep: Vec<usize> = (0..n).filter(|&k| k != to).collect();
    let mut red = DMatrix::<f64>::zeros(n - 1, n - 1);
    for (i, &bi) in keep.iter().enumerate() {
        for (j, &bj) in keep.iter().enumerate() {
            red[(i, j)] = lap[(bi, bj)];
        }
    }
    let mut rhs = DVector::<f64>::zeros(n - 1);
    if let Some(pos) = keep.iter().position(|&k| k == from) {
        rhs[pos] = 1.0;
    }
    let sol = red
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularJacobian("ac interface susceptance".into()))?;
    let x_th = sol[keep.iter().position(|&k| k == from).unwrap()];
    if !(x_th > 0.0) {
        return Err(Error::Validation("non-positive Thevenin reactance".into()));
    }
    Ok(1.0 / x_th)
}

/// Zero-frequency Thevenin conductance (pu) between two nodes of a DC
/// subgrid: per segment the three RL branches reduce to their parallel
/// resistance, and cable leakage enters as shunt conductance to ground.
pub fn dc_equivalent_conductance(
    subgrid: &DcSubgrid,
    base: &PerUnitBase,
    from: usize,
    to: usize,
) -> Result<f64> {
    subgrid.validate()?;
    let n = subgrid.nodes.len();
    if from >= n || to >= n || from == to {
        return Err(Error::Validation(format!(
            "dc_equivalent_conductance: invalid node pair ({from}, {to})"
        )));
    }
    let reach = subgrid.reachable_from(from);
    if !reach[to] {
        return Err(Error::NoPath(
            subgrid.nodes[from].id.clone(),
            subgrid.nodes[to].id.clone(),
        ));
    }

    let z_base = base.z_dc_ohm();
    // Conductance Laplacian plus shunt leakage on the diagonal, all in pu.
    let mut lap = DMatrix::<f64>::zeros(n, n);
    let mut has_shunt = false;
    for cab in &subgrid.cables {
        let g_series = z_base / cab.series_resistance_ohm();
        lap[(cab.from, cab.from)] += g_series;
        lap[(cab.to, cab.to)] += g_series;
        lap[(cab.from, cab.to)] -= g_series;
        lap[(cab.to, cab.from)] -= g_series;
        let g_half = 0.5 * cab.g_us_per_km * 1e-6 * cab.length_km * z_base;
        if g_half > 0.0 {
            has_shunt = true;
            lap[(cab.from, cab.from)] += g_half;
            lap[(cab.to, cab.to)] += g_half;
        }
    }

    // Drive 1 pu of current from `from` to `to` and read the voltage drop.
    // Without leakage the Laplacian is singular, so ground `to` first.
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[from] = 1.0;
    rhs[to] = -1.0;
    let v = if has_shunt {
        lap.clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularJacobian("dc conductance".into()))?
    } else {
        let keep: Vec<usize> = (0..n).filter(|&k| k != to).collect();
        let mut red = DMatrix::<f64>::zeros(n - 1, n - 1);
        for (i, &bi) in keep.iter().enumerate() {
            for (j, &bj) in keep.iter().enumerate() {
                red[(i, j)] = lap[(bi, bj)];
            }
        }
        let rhs_red = DVector::from_iterator(n - 1, keep.iter().map(|&k| rhs[k]));
        let sol = red
            .lu()
            .solve(&rhs_red)
            .ok_or_else(|| Error::SingularJacobian("dc conductance".into()))?;
        let mut full = DVector::<f64>::zeros(n);
        for (i, &bi) in keep.iter().enumerate() {
            full[bi] = sol[i];
        }
        full
    };
    let r_th = v[from] - v[to];
    if !(r_th > 0.0) {
        return Err(Error::Validation(
            "non-positive Thevenin resistance".into(),
        ));
    }
    Ok(1.0 / r_th)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{AcBus, CableBranch, DcCable, DcNode};
    use approx::assert_relative_eq;

    fn base() -> PerUnitBase {
        PerUnitBase::default()
    }

    fn two_bus_line(c_uf_per_km: f64, length_km: f64) -> AcSubgrid {
        AcSubgrid {
            id: "ac".into(),
            buses: vec![AcBus { id: "b1".into() }, AcBus { id: "b2".into() }],
            lines: vec![AcLine {
                from: 0,
                to: 1,
                length_km,
                r_ohm_per_km: 0.08,
                l_mh_per_km: 0.8,
                c_uf_per_km,
            }],
        }
    }

    #[test]
    fn hundred_km_series_impedance() {
        // 100 km at 50 Hz: 8 ohm resistive, 2*pi*50*0.8e-3*100 = 25.13 ohm reactive.
        let g = two_bus_line(0.012, 100.0);
        let z = line_impedance_ohm(&g.lines[0], &base(), 1.0);
        assert_relative_eq!(z.re, 8.0, max_relative = 1e-12);
        assert_relative_eq!(z.im, 25.132741228718345, max_relative = 1e-12);
    }

    #[test]
    fn zero_length_branch_rejected() {
        let g = two_bus_line(0.012, 0.0);
        match build_admittance(&g, &base(), 1.0) {
            Err(Error::DegenerateBranch(_)) => {}
            other => panic!("expected degenerate branch error, got {other:?}"),
        }
    }

    #[test]
    fn two_bus_no_shunt_is_textbook() {
        let g = two_bus_line(0.0, 100.0);
        let y = build_admittance(&g, &base(), 1.0).unwrap();
        let ys = (line_impedance_ohm(&g.lines[0], &base(), 1.0) / base().z_ac_ohm()).inv();
        assert_relative_eq!(y[(0, 0)].re, ys.re, max_relative = 1e-14);
        assert_relative_eq!(y[(0, 0)].im, ys.im, max_relative = 1e-14);
        assert_relative_eq!(y[(0, 1)].re, -ys.re, max_relative = 1e-14);
        assert_relative_eq!(y[(1, 0)].im, -ys.im, max_relative = 1e-14);
        assert_eq!(y[(0, 1)], y[(1, 0)]);
    }

    #[test]
    fn row_sums_equal_shunt_terms() {
        let g = two_bus_line(0.012, 100.0);
        let y = build_admittance(&g, &base(), 1.0).unwrap();
        let row0: Complex64 = y[(0, 0)] + y[(0, 1)];
        let b_half =
            0.5 * base().omega_rad() * 0.012e-6 * 100.0 * base().z_ac_ohm();
        assert_relative_eq!(row0.im, b_half, max_relative = 1e-12);
        assert_relative_eq!(row0.re, 0.0, epsilon = 1e-15);
    }

    fn cable(length_km: f64) -> DcCable {
        DcCable {
            from: 0,
            to: 1,
            length_km,
            branches: [
                CableBranch {
                    r_ohm_per_km: 0.1265,
                    l_mh_per_km: 0.2644,
                },
                CableBranch {
                    r_ohm_per_km: 0.1504,
                    l_mh_per_km: 7.2865,
                },
                CableBranch {
                    r_ohm_per_km: 0.0178,
                    l_mh_per_km: 3.6198,
                },
            ],
            c_uf_per_km: 0.1616,
            g_us_per_km: 0.0,
        }
    }

    fn dc_two_nodes(length_km: f64) -> DcSubgrid {
        DcSubgrid {
            id: "dc".into(),
            nodes: vec![DcNode { id: "n1".into() }, DcNode { id: "n2".into() }],
            cables: vec![cable(length_km)],
        }
    }

    #[test]
    fn single_segment_parallel_resistance() {
        // Oracle: parallel resistance per km of the three branches.
        let r_par_per_km = 1.0 / (1.0 / 0.1265 + 1.0 / 0.1504 + 1.0 / 0.0178);
        let expected_ohm = 100.0 * r_par_per_km;
        let g = dc_two_nodes(100.0);
        assert_relative_eq!(
            g.cables[0].series_resistance_ohm(),
            expected_ohm,
            max_relative = 1e-12
        );
        let g_pu = dc_equivalent_conductance(&g, &base(), 0, 1).unwrap();
        assert_relative_eq!(g_pu, base().z_dc_ohm() / expected_ohm, max_relative = 1e-9);
    }

    #[test]
    fn two_segments_in_series_halve_conductance() {
        let mut g = dc_two_nodes(100.0);
        g.nodes.push(DcNode { id: "n3".into() });
        let mut second = cable(100.0);
        second.from = 1;
        second.to = 2;
        g.cables.push(second);
        let one = dc_equivalent_conductance(&dc_two_nodes(100.0), &base(), 0, 1).unwrap();
        let two = dc_equivalent_conductance(&g, &base(), 0, 2).unwrap();
        assert_relative_eq!(two, 0.5 * one, max_relative = 1e-9);
    }

    #[test]
    fn disconnected_nodes_error() {
        let mut g = dc_two_nodes(100.0);
        g.nodes.push(DcNode { id: "n3".into() });
        match dc_equivalent_conductance(&g, &base(), 0, 2) {
            Err(Error::NoPath(_, _)) => {}
            other => panic!("expected no-path error, got {other:?}"),
        }
    }

    #[test]
    fn interface_susceptance_matches_power_angle_slope() {
        // The analytic network's flow slope at zero angle difference must
        // equal the interface susceptance: dP/d(delta) = b at delta = 0.
        use crate::network::{solve_angle_network, AngleInput, AngleSource};
        let g = AcSubgrid {
            id: "ac".into(),
            buses: vec![
                AcBus { id: "b1".into() },
                AcBus { id: "b2".into() },
                AcBus { id: "b3".into() },
            ],
            lines: vec![
                AcLine {
                    from: 0,
                    to: 1,
                    length_km: 50.0,
                    r_ohm_per_km: 0.08,
                    l_mh_per_km: 0.8,
                    c_uf_per_km: 0.012,
                },
                AcLine {
                    from: 1,
                    to: 2,
                    length_km: 50.0,
                    r_ohm_per_km: 0.08,
                    l_mh_per_km: 0.8,
                    c_uf_per_km: 0.012,
                },
            ],
        };
        let base = PerUnitBase::default();
        let b = ac_interface_susceptance(&g, &base, 0, 2).unwrap();
        let flow = |delta: f64| -> f64 {
            let input = AngleInput {
                n_buses: 3,
                b_lines: g
                    .lines
                    .iter()
                    .map(|l| {
                        let x = base.omega_rad() * l.l_mh_per_km * 1e-3 * l.length_km
                            / base.z_ac_ohm();
                        (l.from, l.to, 1.0 / x)
                    })
                    .collect(),
                sources: vec![
                    AngleSource {
                        bus: 0,
                        theta: delta,
                        b_coupling: None,
                    },
                    AngleSource {
                        bus: 2,
                        theta: 0.0,
                        b_coupling: None,
                    },
                ],
                p_inj: vec![0.0; 3],
                rot_inj: vec![],
                subgrid_id: "ac",
            };
            solve_angle_network(&input, None).unwrap().source_p[0]
        };
        let h = 1e-6;
        let slope = (flow(h) - flow(-h)) / (2.0 * h);
        assert_relative_eq!(slope, b, max_relative = 1e-9);
    }

    #[test]
    fn leakage_included_when_present() {
        let mut g = dc_two_nodes(100.0);
        g.cables[0].g_us_per_km = 0.1015;
        let with = dc_equivalent_conductance(&g, &base(), 0, 1).unwrap();
        let without = dc_equivalent_conductance(&dc_two_nodes(100.0), &base(), 0, 1).unwrap();
        // Leakage adds a parallel path to ground; the through conductance
        // seen between the terminals changes only slightly.
        assert!((with - without).abs() / without < 1e-3);
    }
}
