//! Steady-state solving: scenario initialization at a consistent
//! equilibrium, and dispatch of setpoints realizing requested converter
//! transfers.
//!
//! Both tasks share the same structure: per AC island the voltage-forming
//! terminals must agree on one frequency, per converter the AC and DC powers
//! must balance (lossless converter), and the DC networks tie terminal
//! voltages to flows. Initialization solves for angles and energy deviations
//! with all setpoints fixed; dispatch pins the frequency to the schedule,
//! lets designated slack devices absorb residuals, and emits the setpoint
//! assignments that make the requested flows a true equilibrium.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::device::LoadTerminal;
use crate::error::{Error, Result};
use crate::ipc::{ControllerConfig, Measurements};
use crate::network::{
    newton_solve, solve_angle_network, solve_dc_network, solve_phasor_network, AngleInput,
    AngleSolution, AngleSource, DcDevice, DcInput, EmfTerminal, Fidelity, PhasorInput,
    PhasorSolution, VoltageRef,
};
use crate::sim::{SetpointField, System};

// ---------------------------------------------------------------------------
// Scenario initialization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum FormerRef {
    Source(usize),
    Ipc(usize),
}

/// Per-evaluation record of one composite residual pass.
struct EvalOut {
    /// Power injected by each AC source (index aligned with scenario).
    source_p: Vec<f64>,
    /// Per converter: (p_ac, q_ac, p_dc).
    ipc_p: Vec<(f64, f64, f64)>,
    /// Bus angles per AC subgrid.
    bus_angle: Vec<Vec<f64>>,
    /// Bus voltage magnitudes per AC subgrid (dynamic fidelity).
    bus_vmag: Vec<Vec<f64>>,
    /// DC node voltages per DC subgrid.
    dc_v: Vec<Vec<f64>>,
}

/// Solve the scenario's steady state with the given setpoints and return
/// the full initial state vector.
pub fn init_equilibrium(sys: &System) -> Result<DVector<f64>> {
    let scn = &sys.scn;
    let n_ac = scn.network.ac.len();

    // Island former rosters; the first former of each island is the angle
    // reference.
    let mut formers: Vec<Vec<FormerRef>> = vec![Vec::new(); n_ac];
    for (k, s) in scn.ac_sources.iter().enumerate() {
        if s.connected {
            formers[s.bus.subgrid].push(FormerRef::Source(k));
        }
    }
    for (k, u) in scn.ipcs.iter().enumerate() {
        if u.ac_connected && u.controller.forms_ac() {
            formers[u.ac_subgrid].push(FormerRef::Ipc(k));
        }
    }

    // Unknown layout: non-reference former angles, then one scalar per
    // converter (energy deviation for dual-port, AC injection for the
    // DC-forming single-port).
    #[derive(Debug, Clone, Copy)]
    enum Unknown {
        FormerTheta(FormerRef),
        IpcEnergy(usize),
        IpcAcInjection(usize),
    }
    let mut unknowns = Vec::new();
    for island in &formers {
        for f in island.iter().skip(1) {
            unknowns.push(Unknown::FormerTheta(*f));
        }
    }
    for (k, u) in scn.ipcs.iter().enumerate() {
        if !u.ac_connected && !u.dc_connected {
            continue;
        }
        match &u.controller {
            ControllerConfig::HybridDroop(_) | ControllerConfig::EnergyBalancing(_) => {
                unknowns.push(Unknown::IpcEnergy(k))
            }
            ControllerConfig::DcGfm(_) => unknowns.push(Unknown::IpcAcInjection(k)),
            ControllerConfig::AcGfm(_) => {}
        }
    }

    let eval = |z: &DVector<f64>| -> Result<(DVector<f64>, EvalOut)> {
        // Decode unknowns.
        let mut src_theta = vec![0.0; scn.ac_sources.len()];
        let mut ipc_theta = vec![0.0; scn.ipcs.len()];
        let mut ipc_dw = vec![0.0; scn.ipcs.len()];
        let mut ipc_ac_inj = vec![0.0; scn.ipcs.len()];
        for (z_i, u) in unknowns.iter().enumerate() {
            match *u {
                Unknown::FormerTheta(FormerRef::Source(k)) => src_theta[k] = z[z_i],
                Unknown::FormerTheta(FormerRef::Ipc(k)) => ipc_theta[k] = z[z_i],
                Unknown::IpcEnergy(k) => ipc_dw[k] = z[z_i],
                Unknown::IpcAcInjection(k) => ipc_ac_inj[k] = z[z_i],
            }
        }

        let mut out = EvalOut {
            source_p: vec![0.0; scn.ac_sources.len()],
            ipc_p: vec![(0.0, 0.0, 0.0); scn.ipcs.len()],
            bus_angle: scn
                .network
                .ac
                .iter()
                .map(|s| vec![0.0; s.buses.len()])
                .collect(),
            bus_vmag: scn
                .network
                .ac
                .iter()
                .map(|s| vec![1.0; s.buses.len()])
                .collect(),
            dc_v: scn
                .network
                .dc
                .iter()
                .map(|s| vec![1.0; s.nodes.len()])
                .collect(),
        };

        // AC solves.
        for (g, sub) in scn.network.ac.iter().enumerate() {
            let mut loads = vec![Complex64::new(0.0, 0.0); sub.buses.len()];
            for load in &scn.loads {
                if let LoadTerminal::Ac(r) = load.terminal {
                    if load.connected && r.subgrid == g {
                        loads[r.bus] -= Complex64::new(load.p_load_pu, load.q_load_pu);
                    }
                }
            }
            for (k, s) in scn.gfl_sources.iter().enumerate() {
                if s.connected && s.bus.subgrid == g {
                    loads[s.bus.bus] += Complex64::new(s.p_cmd_pu, s.q_cmd_pu);
                }
                let _ = k;
            }
            for (k, u) in scn.ipcs.iter().enumerate() {
                if u.ac_connected && u.ac_subgrid == g && !u.controller.forms_ac() {
                    let q = match &u.controller {
                        ControllerConfig::DcGfm(c) => c.q_set,
                        _ => 0.0,
                    };
                    loads[u.ac_bus] += Complex64::new(ipc_ac_inj[k], q);
                }
            }
            let energized = !formers[g].is_empty() || loads.iter().any(|s| s.norm() > 0.0);
            if !energized {
                continue;
            }

            match sys.fidelity {
                Fidelity::Analytic => {
                    let mut sources = Vec::new();
                    let mut tags = Vec::new();
                    for f in &formers[g] {
                        match *f {
                            FormerRef::Source(k) => {
                                sources.push(AngleSource {
                                    bus: scn.ac_sources[k].bus.bus,
                                    theta: src_theta[k],
                                    b_coupling: None,
                                });
                                tags.push(*f);
                            }
                            FormerRef::Ipc(k) => {
                                sources.push(AngleSource {
                                    bus: scn.ipcs[k].ac_bus,
                                    theta: ipc_theta[k],
                                    b_coupling: Some(1.0 / scn.ipcs[k].mmc.coupling_l_pu),
                                });
                                tags.push(*f);
                            }
                        }
                    }
                    let input = AngleInput {
                        n_buses: sub.buses.len(),
                        b_lines: sys.ac_blines(g).to_vec(),
                        sources,
                        p_inj: loads.iter().map(|s| s.re).collect(),
                        rot_inj: vec![],
                        subgrid_id: &sub.id,
                    };
                    let sol = solve_angle_network(&input, None)?;
                    for (tag, p) in tags.iter().zip(sol.source_p.iter()) {
                        match *tag {
                            FormerRef::Source(k) => out.source_p[k] = *p,
                            FormerRef::Ipc(k) => out.ipc_p[k].0 = *p,
                        }
                    }
                    out.bus_angle[g].copy_from_slice(&sol.theta);
                }
                Fidelity::Dynamic => {
                    let mut formed = Vec::new();
                    let mut emf = Vec::new();
                    let mut formed_tags = Vec::new();
                    let mut emf_tags = Vec::new();
                    for f in &formers[g] {
                        match *f {
                            FormerRef::Source(k) => {
                                let s = &scn.ac_sources[k];
                                formed.push((
                                    s.bus.bus,
                                    Complex64::from_polar(s.voltage_pu, src_theta[k]),
                                ));
                                formed_tags.push(k);
                            }
                            FormerRef::Ipc(k) => {
                                let u = &scn.ipcs[k];
                                let (v_set, k_q, q_set) = match &u.controller {
                                    ControllerConfig::AcGfm(c) => (c.v_ac_set, c.k_q_ac, c.q_set),
                                    ControllerConfig::HybridDroop(c) => {
                                        (c.v_ac_set, c.k_q_ac, c.q_set)
                                    }
                                    ControllerConfig::EnergyBalancing(c) => {
                                        (c.v_ac_set, c.k_q_ac, c.q_set)
                                    }
                                    ControllerConfig::DcGfm(_) => unreachable!(),
                                };
                                emf.push(EmfTerminal {
                                    bus: u.ac_bus,
                                    y_coupling: u.mmc.coupling_admittance(),
                                    theta: ipc_theta[k],
                                    v_ref: VoltageRef::VoltVar { v_set, k_q, q_set },
                                });
                                emf_tags.push(k);
                            }
                        }
                    }
                    let input = PhasorInput {
                        y: sys.ac_y(g),
                        formed,
                        emf,
                        s_inj: loads,
                        rot_inj: vec![],
                        subgrid_id: &sub.id,
                    };
                    let sol: PhasorSolution = solve_phasor_network(&input, None)?;
                    for (idx, k) in formed_tags.iter().enumerate() {
                        out.source_p[*k] = sol.formed_s[idx].re;
                    }
                    for (idx, k) in emf_tags.iter().enumerate() {
                        out.ipc_p[*k].0 = sol.emf_s[idx].re;
                        out.ipc_p[*k].1 = sol.emf_s[idx].im;
                    }
                    for b in 0..sub.buses.len() {
                        out.bus_angle[g][b] = sol.v_bus[b].arg();
                        out.bus_vmag[g][b] = sol.v_bus[b].norm();
                    }
                }
            }
        }
        // Grid-following converter AC terminals deliver their commanded
        // injection exactly at an equilibrium (PLL locked).
        for (k, u) in scn.ipcs.iter().enumerate() {
            if u.ac_connected && !u.controller.forms_ac() {
                out.ipc_p[k].0 = ipc_ac_inj[k];
            }
        }

        // DC solves with the settled converter laws folded in.
        for (g, sub) in scn.network.dc.iter().enumerate() {
            let mut devices = Vec::new();
            let mut tags: Vec<Option<usize>> = Vec::new();
            for s in &scn.dc_sources {
                if s.connected && s.node.subgrid == g {
                    devices.push(DcDevice::SourceDroop {
                        node: s.node.node,
                        v_set: s.v_set_pu,
                        p_set: s.p_set_pu,
                        k: s.droop_pu,
                    });
                    tags.push(None);
                }
            }
            for (k, u) in scn.ipcs.iter().enumerate() {
                if !u.dc_connected || u.dc_subgrid != g {
                    continue;
                }
                let dev = match &u.controller {
                    ControllerConfig::AcGfm(_) => DcDevice::PowerDraw {
                        node: u.dc_node,
                        p: out.ipc_p[k].0,
                    },
                    ControllerConfig::DcGfm(c) => DcDevice::MmcDroopLaw {
                        node: u.dc_node,
                        v_set: c.v_dc_set,
                        p_set: c.p_dc_set,
                        k_p: c.k_p_dc,
                        energy_term: 0.0,
                    },
                    ControllerConfig::HybridDroop(c) => DcDevice::MmcDroopLaw {
                        node: u.dc_node,
                        v_set: c.v_dc_set,
                        p_set: c.p_dc_set,
                        k_p: c.k_p_dc,
                        energy_term: c.k_w_dc * ipc_dw[k],
                    },
                    ControllerConfig::EnergyBalancing(c) => DcDevice::FormedVoltage {
                        node: u.dc_node,
                        v: c.v_dc_set + c.k_w_dc * ipc_dw[k],
                    },
                };
                devices.push(dev);
                tags.push(Some(k));
            }
            for (n, _) in sub.nodes.iter().enumerate() {
                let mut p = 0.0;
                for load in &scn.loads {
                    if let LoadTerminal::Dc(r) = load.terminal {
                        if load.connected && r.subgrid == g && r.node == n {
                            p += load.p_load_pu;
                        }
                    }
                }
                if p != 0.0 {
                    devices.push(DcDevice::PowerDraw { node: n, p });
                    tags.push(None);
                }
            }
            if devices.is_empty() {
                continue;
            }
            let input = DcInput {
                n_nodes: sub.nodes.len(),
                g_series: sys.dc_g_series(g).to_vec(),
                g_shunt: sys.dc_g_shunt(g).to_vec(),
                devices,
                subgrid_id: &sub.id,
            };
            let sol = solve_dc_network(&input, None)?;
            for (tag, p) in tags.iter().zip(sol.device_p.iter()) {
                if let Some(k) = tag {
                    out.ipc_p[*k].2 = -p;
                }
            }
            out.dc_v[g].copy_from_slice(&sol.v);
        }

        // Residuals.
        let island_omega = |g: usize| -> f64 {
            match formers[g].first() {
                Some(FormerRef::Source(k)) => {
                    scn.ac_sources[*k].omega(out.source_p[*k])
                }
                Some(FormerRef::Ipc(k)) => ipc_omega_settled(
                    &scn.ipcs[*k].controller,
                    out.ipc_p[*k].0,
                    ipc_dw[*k],
                ),
                None => 1.0,
            }
        };
        let mut r = Vec::with_capacity(unknowns.len());
        for u in &unknowns {
            match *u {
                Unknown::FormerTheta(f) => {
                    let (g, omega_f) = match f {
                        FormerRef::Source(k) => (
                            scn.ac_sources[k].bus.subgrid,
                            scn.ac_sources[k].omega(out.source_p[k]),
                        ),
                        FormerRef::Ipc(k) => (
                            scn.ipcs[k].ac_subgrid,
                            ipc_omega_settled(
                                &scn.ipcs[k].controller,
                                out.ipc_p[k].0,
                                ipc_dw[k],
                            ),
                        ),
                    };
                    r.push(omega_f - island_omega(g));
                }
                Unknown::IpcEnergy(k) => {
                    let (p_ac, _, p_dc) = out.ipc_p[k];
                    let p_ac = if scn.ipcs[k].ac_connected { p_ac } else { 0.0 };
                    let p_dc = if scn.ipcs[k].dc_connected { p_dc } else { 0.0 };
                    r.push(p_dc - p_ac);
                }
                Unknown::IpcAcInjection(k) => {
                    let p_dc = if scn.ipcs[k].dc_connected {
                        out.ipc_p[k].2
                    } else {
                        0.0
                    };
                    r.push(p_dc - ipc_ac_inj[k]);
                }
            }
        }
        Ok((DVector::from_vec(r), out))
    };

    let z0 = DVector::<f64>::zeros(unknowns.len());
    let (z, _, _) = newton_solve(
        z0,
        |z| match eval(z) {
            Ok((r, _)) => r,
            Err(_) => DVector::from_element(unknowns.len(), f64::NAN),
        },
        1e-11,
        80,
        "steady-state initialization",
    )
    .map_err(|e| match e {
        Error::NonConvergence { .. } => Error::Validation(
            "no consistent steady state for the scenario's initial dispatch".into(),
        ),
        other => other,
    })?;
    let (_, out) = eval(&z)?;

    // Decode once more for state assembly.
    let mut src_theta = vec![0.0; scn.ac_sources.len()];
    let mut ipc_theta = vec![0.0; scn.ipcs.len()];
    let mut ipc_dw = vec![0.0; scn.ipcs.len()];
    for (z_i, u) in unknowns.iter().enumerate() {
        match *u {
            Unknown::FormerTheta(FormerRef::Source(k)) => src_theta[k] = z[z_i],
            Unknown::FormerTheta(FormerRef::Ipc(k)) => ipc_theta[k] = z[z_i],
            Unknown::IpcEnergy(k) => ipc_dw[k] = z[z_i],
            Unknown::IpcAcInjection(_) => {}
        }
    }
    let island_omega: Vec<f64> = (0..n_ac)
        .map(|g| match formers[g].first() {
            Some(FormerRef::Source(k)) => scn.ac_sources[*k].omega(out.source_p[*k]),
            Some(FormerRef::Ipc(k)) => {
                ipc_omega_settled(&scn.ipcs[*k].controller, out.ipc_p[*k].0, ipc_dw[*k])
            }
            None => 1.0,
        })
        .collect();

    // Assemble the state vector.
    use crate::sim::StateKind;
    let mut x = DVector::<f64>::zeros(sys.n_states());
    for (i, entry) in sys.registry().iter().enumerate() {
        x[i] = match entry.kind {
            StateKind::SourceTheta { src } => src_theta[src],
            StateKind::PllTheta { gfl } => {
                let b = scn.gfl_sources[gfl].bus;
                out.bus_angle[b.subgrid][b.bus]
            }
            StateKind::PllInt { gfl } => {
                let b = scn.gfl_sources[gfl].bus;
                island_omega[b.subgrid] - 1.0
            }
            StateKind::IpcTheta { ipc } => ipc_theta[ipc],
            StateKind::IpcEnergy { ipc } => scn.ipcs[ipc].controller.w_set() + ipc_dw[ipc],
            StateKind::IpcQuadrature { .. } => 0.0,
            StateKind::IpcCtrl { .. } => 0.0, // filled below
            StateKind::DcNodeV { net, node } => out.dc_v[net][node],
            StateKind::DcBranchI { net, cable, branch } => {
                let comp = sys.dc_branch(net, cable, branch);
                (out.dc_v[net][comp.0] - out.dc_v[net][comp.1]) / comp.2
            }
        };
    }
    for (k, u) in scn.ipcs.iter().enumerate() {
        let b_angle = out.bus_angle[u.ac_subgrid][u.ac_bus];
        let b_vmag = match sys.fidelity {
            Fidelity::Analytic => 1.0,
            Fidelity::Dynamic => out.bus_vmag[u.ac_subgrid][u.ac_bus],
        };
        let m = Measurements {
            p_ac: if u.ac_connected { out.ipc_p[k].0 } else { 0.0 },
            p_dc: if u.dc_connected { out.ipc_p[k].2 } else { 0.0 },
            q_ac: out.ipc_p[k].1,
            w_t: u.controller.w_set() + ipc_dw[k],
            v_bus: Complex64::from_polar(b_vmag, b_angle),
        };
        let states = u.controller.init_states(&m, island_omega[u.ac_subgrid]);
        for (slot, v) in states.iter().enumerate() {
            let i = sys
                .state_index(StateKind::IpcCtrl { ipc: k, slot })
                .unwrap();
            x[i] = *v;
        }
    }
    Ok(x)
}

/// Settled frequency law of an AC-forming converter.
fn ipc_omega_settled(cfg: &ControllerConfig, p_ac: f64, dw: f64) -> f64 {
    match cfg {
        ControllerConfig::AcGfm(c) => c.omega_set + c.k_p_ac * (c.p_ac_set - p_ac),
        ControllerConfig::HybridDroop(c) => {
            c.omega_set + c.k_p_ac * (c.p_ac_set - p_ac) + c.k_w_ac * dw
        }
        ControllerConfig::EnergyBalancing(c) => c.omega_set + c.k_w_ac * dw,
        ControllerConfig::DcGfm(_) => 1.0,
    }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Dispatch request: converter transfer targets plus slack designations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispatchProblem {
    /// Requested AC = DC transfers per converter id (positive into the AC
    /// grid). Converters not listed keep their configured power setpoints;
    /// energy-balancing converters must either be listed or act as slack.
    pub transfers: Vec<(String, f64)>,
    /// Slack device per AC subgrid id; defaults to the first connected
    /// droop source, else the first forming converter.
    pub ac_slack: Vec<(String, String)>,
    /// Slack device per DC subgrid id; defaults to the first connected DC
    /// source, else the first DC-forming converter.
    pub dc_slack: Vec<(String, String)>,
    pub omega_schedule: f64,
    pub v_dc_schedule: f64,
    /// Dispatch is infeasible if any solved voltage deviates more than this.
    pub v_bound_pu: f64,
}

impl Default for DispatchProblem {
    fn default() -> Self {
        Self {
            transfers: Vec::new(),
            ac_slack: Vec::new(),
            dc_slack: Vec::new(),
            omega_schedule: 1.0,
            v_dc_schedule: 1.0,
            v_bound_pu: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assignment {
    pub target: String,
    pub field: SetpointField,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub assignments: Vec<Assignment>,
    /// Realized transfer per converter.
    pub transfers: Vec<(String, f64)>,
    /// Slack injections: (id, power).
    pub slack_powers: Vec<(String, f64)>,
    /// Solved DC node voltages per subgrid.
    pub dc_node_v: Vec<Vec<f64>>,
    /// Residual of the verification equilibrium after applying the
    /// assignments.
    pub verification_residual: f64,
}

use crate::sim::Scenario;

/// Solve a dispatch problem on the analytic network model and return the
/// setpoint assignments together with the updated scenario.
pub fn solve_dispatch(
    scenario: &Scenario,
    problem: &DispatchProblem,
) -> Result<(DispatchSolution, Scenario)> {
    scenario.validate()?;
    let scn = scenario;
    let n_ac = scn.network.ac.len();
    let n_dc = scn.network.dc.len();

    // Resolve slack designations.
    let mut ac_slack: Vec<Option<String>> = vec![None; n_ac];
    for (sub_id, dev) in &problem.ac_slack {
        let g = scn
            .network
            .ac
            .iter()
            .position(|s| s.id == *sub_id)
            .ok_or_else(|| Error::UnknownId(sub_id.clone()))?;
        ac_slack[g] = Some(dev.clone());
    }
    let mut dc_slack: Vec<Option<String>> = vec![None; n_dc];
    for (sub_id, dev) in &problem.dc_slack {
        let g = scn
            .network
            .dc
            .iter()
            .position(|s| s.id == *sub_id)
            .ok_or_else(|| Error::UnknownId(sub_id.clone()))?;
        dc_slack[g] = Some(dev.clone());
    }
    for g in 0..n_ac {
        if ac_slack[g].is_none() {
            ac_slack[g] = scn
                .ac_sources
                .iter()
                .find(|s| s.connected && s.bus.subgrid == g)
                .map(|s| s.id.clone())
                .or_else(|| {
                    scn.ipcs
                        .iter()
                        .find(|u| u.ac_connected && u.ac_subgrid == g && u.controller.forms_ac())
                        .map(|u| u.id.clone())
                });
        }
    }
    for g in 0..n_dc {
        if dc_slack[g].is_none() {
            dc_slack[g] = scn
                .dc_sources
                .iter()
                .find(|s| s.connected && s.node.subgrid == g)
                .map(|s| s.id.clone())
                .or_else(|| {
                    scn.ipcs
                        .iter()
                        .find(|u| u.dc_connected && u.dc_subgrid == g && u.controller.forms_dc())
                        .map(|u| u.id.clone())
                });
        }
    }
    for (g, s) in ac_slack.iter().enumerate() {
        if s.is_none() {
            let has_activity = scn.ipcs.iter().any(|u| u.ac_subgrid == g && u.ac_connected)
                || scn.loads.iter().any(|l| matches!(l.terminal, LoadTerminal::Ac(r) if r.subgrid == g && l.connected));
            if has_activity {
                return Err(Error::InfeasibleDispatch(format!(
                    "AC subgrid {} has no forming device to act as slack",
                    scn.network.ac[g].id
                )));
            }
        }
    }

    let ipc_idx = |id: &str| scn.ipcs.iter().position(|u| u.id == id);
    // No converter may be slack on both of its terminals.
    for g in 0..n_dc {
        if let Some(id) = &dc_slack[g] {
            if let Some(k) = ipc_idx(id) {
                let ac_g = scn.ipcs[k].ac_subgrid;
                if ac_slack[ac_g].as_deref() == Some(id.as_str()) {
                    return Err(Error::InfeasibleDispatch(format!(
                        "{id} cannot be slack on both its AC and DC terminals"
                    )));
                }
            }
        }
    }

    // Transfer targets: requested, else configured setpoints.
    let mut target: Vec<Option<f64>> = scn
        .ipcs
        .iter()
        .map(|u| match &u.controller {
            ControllerConfig::AcGfm(c) => Some(c.p_ac_set),
            ControllerConfig::DcGfm(c) => Some(c.p_dc_set),
            ControllerConfig::HybridDroop(c) => Some(c.p_ac_set),
            ControllerConfig::EnergyBalancing(_) => None,
        })
        .collect();
    for (id, t) in &problem.transfers {
        let k = ipc_idx(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        target[k] = Some(*t);
    }
    let is_ac_slack =
        |k: usize| ac_slack[scn.ipcs[k].ac_subgrid].as_deref() == Some(scn.ipcs[k].id.as_str());
    let is_dc_slack =
        |k: usize| dc_slack[scn.ipcs[k].dc_subgrid].as_deref() == Some(scn.ipcs[k].id.as_str());
    for (k, u) in scn.ipcs.iter().enumerate() {
        if target[k].is_none() && !is_ac_slack(k) && !is_dc_slack(k) {
            return Err(Error::InfeasibleDispatch(format!(
                "{}: energy-balancing converter needs a requested transfer or a slack role",
                u.id
            )));
        }
    }

    // Stage 1: AC island balances give the AC-slack transfers (lossless
    // power-angle model).
    let mut resolved: Vec<f64> = target.iter().map(|t| t.unwrap_or(0.0)).collect();
    for g in 0..n_ac {
        let Some(slack_id) = &ac_slack[g] else { continue };
        let mut balance = 0.0;
        for load in &scn.loads {
            if let LoadTerminal::Ac(r) = load.terminal {
                if load.connected && r.subgrid == g {
                    balance -= load.p_load_pu;
                }
            }
        }
        for s in &scn.gfl_sources {
            if s.connected && s.bus.subgrid == g {
                balance += s.p_cmd_pu;
            }
        }
        for s in &scn.ac_sources {
            if s.connected && s.bus.subgrid == g && s.id != *slack_id {
                balance += s.p_set_pu;
            }
        }
        for (k, u) in scn.ipcs.iter().enumerate() {
            if u.ac_connected && u.ac_subgrid == g && u.id != *slack_id {
                balance += resolved[k];
            }
        }
        if let Some(k) = ipc_idx(slack_id) {
            resolved[k] = -balance;
        }
        // Source slack absorbs implicitly in stage 3.
    }

    // Stage 2: DC networks with losses; slacks absorb.
    let comp = System::compile(scenario)?;
    let mut dc_node_v: Vec<Vec<f64>> = Vec::with_capacity(n_dc);
    let mut slack_powers: Vec<(String, f64)> = Vec::new();
    for (g, sub) in scn.network.dc.iter().enumerate() {
        let mut devices = Vec::new();
        let mut tags: Vec<Option<String>> = Vec::new();
        let slack_id = dc_slack[g].clone();
        let mut any = false;
        for s in &scn.dc_sources {
            if s.connected && s.node.subgrid == g {
                any = true;
                if Some(&s.id) == slack_id.as_ref() {
                    devices.push(DcDevice::FormedVoltage {
                        node: s.node.node,
                        v: problem.v_dc_schedule,
                    });
                    tags.push(Some(s.id.clone()));
                } else {
                    devices.push(DcDevice::PowerDraw {
                        node: s.node.node,
                        p: -s.p_set_pu,
                    });
                    tags.push(None);
                }
            }
        }
        for (k, u) in scn.ipcs.iter().enumerate() {
            if !u.dc_connected || u.dc_subgrid != g {
                continue;
            }
            any = true;
            if Some(&u.id) == slack_id.as_ref() {
                devices.push(DcDevice::FormedVoltage {
                    node: u.dc_node,
                    v: problem.v_dc_schedule,
                });
                tags.push(Some(u.id.clone()));
            } else {
                devices.push(DcDevice::PowerDraw {
                    node: u.dc_node,
                    p: resolved[k],
                });
                tags.push(None);
            }
        }
        for (n, _) in sub.nodes.iter().enumerate() {
            let mut p = 0.0;
            for load in &scn.loads {
                if let LoadTerminal::Dc(r) = load.terminal {
                    if load.connected && r.subgrid == g && r.node == n {
                        p += load.p_load_pu;
                    }
                }
            }
            if p != 0.0 {
                devices.push(DcDevice::PowerDraw { node: n, p });
                tags.push(None);
            }
        }
        if !any {
            dc_node_v.push(vec![1.0; sub.nodes.len()]);
            continue;
        }
        let input = DcInput {
            n_nodes: sub.nodes.len(),
            g_series: comp.dc_g_series(g).to_vec(),
            g_shunt: comp.dc_g_shunt(g).to_vec(),
            devices,
            subgrid_id: &sub.id,
        };
        let sol = solve_dc_network(&input, None)
            .map_err(|e| Error::InfeasibleDispatch(format!("{}: {e}", sub.id)))?;
        for (tag, p) in tags.iter().zip(sol.device_p.iter()) {
            if let Some(id) = tag {
                slack_powers.push((id.clone(), *p));
                if let Some(k) = ipc_idx(id) {
                    // DC slack converter: its transfer is what the network
                    // asks of it (power into the converter flows to AC).
                    resolved[k] = -*p;
                }
            }
        }
        for v in &sol.v {
            if (v - problem.v_dc_schedule).abs() > problem.v_bound_pu {
                return Err(Error::InfeasibleDispatch(format!(
                    "{}: node voltage {v:.4} violates the {:.2} pu bound",
                    sub.id, problem.v_bound_pu
                )));
            }
        }
        dc_node_v.push(sol.v);
    }

    // Stage 3: AC angle solves for feasibility and slack powers.
    for (g, sub) in scn.network.ac.iter().enumerate() {
        let Some(slack_id) = &ac_slack[g] else { continue };
        // Non-slack formers: angles are unknowns, targets are residuals.
        let mut movers: Vec<(FormerRef, f64)> = Vec::new();
        for (k, s) in scn.ac_sources.iter().enumerate() {
            if s.connected && s.bus.subgrid == g && s.id != *slack_id {
                movers.push((FormerRef::Source(k), s.p_set_pu));
            }
        }
        for (k, u) in scn.ipcs.iter().enumerate() {
            if u.ac_connected
                && u.ac_subgrid == g
                && u.controller.forms_ac()
                && u.id != *slack_id
            {
                movers.push((FormerRef::Ipc(k), resolved[k]));
            }
        }
        let mut p_inj = vec![0.0; sub.buses.len()];
        for load in &scn.loads {
            if let LoadTerminal::Ac(r) = load.terminal {
                if load.connected && r.subgrid == g {
                    p_inj[r.bus] -= load.p_load_pu;
                }
            }
        }
        for s in &scn.gfl_sources {
            if s.connected && s.bus.subgrid == g {
                p_inj[s.bus.bus] += s.p_cmd_pu;
            }
        }
        for (k, u) in scn.ipcs.iter().enumerate() {
            if u.ac_connected && u.ac_subgrid == g && !u.controller.forms_ac() {
                p_inj[u.ac_bus] += resolved[k];
            }
        }
        let b_lines = comp.ac_blines(g).to_vec();
        let slack_source = scn
            .ac_sources
            .iter()
            .enumerate()
            .find(|(_, s)| s.id == *slack_id)
            .map(|(k, _)| FormerRef::Source(k))
            .or_else(|| ipc_idx(slack_id).map(FormerRef::Ipc));
        let Some(slack_former) = slack_source else {
            return Err(Error::UnknownId(slack_id.clone()));
        };

        let eval = |z: &DVector<f64>| -> Result<(DVector<f64>, AngleSolution)> {
            let mut sources = Vec::new();
            // Slack first, at the island reference angle.
            match slack_former {
                FormerRef::Source(k) => sources.push(AngleSource {
                    bus: scn.ac_sources[k].bus.bus,
                    theta: 0.0,
                    b_coupling: None,
                }),
                FormerRef::Ipc(k) => sources.push(AngleSource {
                    bus: scn.ipcs[k].ac_bus,
                    theta: 0.0,
                    b_coupling: Some(1.0 / scn.ipcs[k].mmc.coupling_l_pu),
                }),
            }
            for (i, (f, _)) in movers.iter().enumerate() {
                match f {
                    FormerRef::Source(k) => sources.push(AngleSource {
                        bus: scn.ac_sources[*k].bus.bus,
                        theta: z[i],
                        b_coupling: None,
                    }),
                    FormerRef::Ipc(k) => sources.push(AngleSource {
                        bus: scn.ipcs[*k].ac_bus,
                        theta: z[i],
                        b_coupling: Some(1.0 / scn.ipcs[*k].mmc.coupling_l_pu),
                    }),
                }
            }
            let input = AngleInput {
                n_buses: sub.buses.len(),
                b_lines: b_lines.clone(),
                sources,
                p_inj: p_inj.clone(),
                rot_inj: vec![],
                subgrid_id: &sub.id,
            };
            let sol = solve_angle_network(&input, None)?;
            let r = DVector::from_iterator(
                movers.len(),
                movers
                    .iter()
                    .enumerate()
                    .map(|(i, (_, t))| sol.source_p[i + 1] - t),
            );
            Ok((r, sol))
        };
        let (z, _, _) = newton_solve(
            DVector::zeros(movers.len()),
            |z| match eval(z) {
                Ok((r, _)) => r,
                Err(_) => DVector::from_element(movers.len(), f64::NAN),
            },
            1e-10,
            60,
            &format!("dispatch {}", sub.id),
        )
        .map_err(|e| Error::InfeasibleDispatch(format!("{}: {e}", sub.id)))?;
        let (_, sol) = eval(&z)?;
        match slack_former {
            FormerRef::Source(k) => {
                slack_powers.push((scn.ac_sources[k].id.clone(), sol.source_p[0]))
            }
            FormerRef::Ipc(k) => {
                slack_powers.push((scn.ipcs[k].id.clone(), sol.source_p[0]));
                resolved[k] = sol.source_p[0];
            }
        }
    }

    // Assignments.
    let mut assignments = Vec::new();
    for g in 0..n_ac {
        if let Some(id) = &ac_slack[g] {
            if let Some(p) = slack_powers.iter().find(|(i, _)| i == id).map(|(_, p)| *p) {
                if scn.ac_sources.iter().any(|s| s.id == *id) {
                    assignments.push(Assignment {
                        target: id.clone(),
                        field: SetpointField::PSet,
                        value: p,
                    });
                }
            }
        }
    }
    for (g, sub) in scn.network.dc.iter().enumerate() {
        let _ = sub;
        for s in &scn.dc_sources {
            if s.connected && s.node.subgrid == g {
                let v = dc_node_v[g][s.node.node];
                assignments.push(Assignment {
                    target: s.id.clone(),
                    field: SetpointField::VDcSet,
                    value: v,
                });
                if dc_slack[g].as_ref() == Some(&s.id) {
                    if let Some(p) = slack_powers.iter().find(|(i, _)| i == &s.id) {
                        assignments.push(Assignment {
                            target: s.id.clone(),
                            field: SetpointField::PSet,
                            value: p.1,
                        });
                    }
                }
            }
        }
    }
    for (k, u) in scn.ipcs.iter().enumerate() {
        if u.dc_connected {
            assignments.push(Assignment {
                target: u.id.clone(),
                field: SetpointField::VDcSet,
                value: dc_node_v[u.dc_subgrid][u.dc_node],
            });
        }
        match &u.controller {
            ControllerConfig::EnergyBalancing(_) => {}
            ControllerConfig::DcGfm(_) => assignments.push(Assignment {
                target: u.id.clone(),
                field: SetpointField::PDcSet,
                value: resolved[k],
            }),
            _ => {
                assignments.push(Assignment {
                    target: u.id.clone(),
                    field: SetpointField::PSet,
                    value: resolved[k],
                });
            }
        }
        if u.controller.omega_set().is_some() {
            assignments.push(Assignment {
                target: u.id.clone(),
                field: SetpointField::OmegaSet,
                value: problem.omega_schedule,
            });
        }
    }

    // Verify: the assigned scenario must hold its equilibrium.
    let mut updated = scenario.clone();
    apply_assignments(&mut updated, &assignments);
    let sys = System::compile(&updated)?;
    let x = init_equilibrium(&sys)?;
    let residual = crate::sim::residual_norm(&sys, &x)?;

    let solution = DispatchSolution {
        assignments,
        transfers: scn
            .ipcs
            .iter()
            .enumerate()
            .map(|(k, u)| (u.id.clone(), resolved[k]))
            .collect(),
        slack_powers,
        dc_node_v,
        verification_residual: residual,
    };
    Ok((solution, updated))
}

/// Apply dispatch assignments to a scenario in place.
pub fn apply_assignments(scn: &mut Scenario, assignments: &[Assignment]) {
    for a in assignments {
        crate::sim::apply_setpoint_public(scn, &a.target, a.field, a.value);
    }
}
