//! Compiled simulation system: state registry and the differential-algebraic
//! right-hand side.
//!
//! The differential states are device angles, PLL states, converter energies
//! and controller filters, plus (dynamic fidelity) DC cable branch currents
//! and node voltages. The AC network is algebraic and re-solved at every
//! integrator stage; formed DC node voltages follow their command through a
//! short tracking lag so no algebraic loop arises.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::device::{gfl_injection, pll_derivatives, PllState};
use crate::error::Result;
use crate::ipc::{ctrl_eval, ControllerConfig, Measurements};
use crate::network::{
    build_admittance, solve_angle_network, solve_dc_network, solve_phasor_network, AngleInput,
    AngleSolution, AngleSource, DcDevice, DcInput, DcSolution, EmfTerminal, Fidelity, PhasorInput,
    PhasorSolution, VoltageRef,
};
use crate::per_unit::PerUnitBase;

use super::Scenario;

/// One state-vector slot.
#[derive(Debug, Clone)]
pub struct StateEntry {
    pub label: String,
    pub kind: StateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    SourceTheta { src: usize },
    PllTheta { gfl: usize },
    PllInt { gfl: usize },
    IpcTheta { ipc: usize },
    IpcEnergy { ipc: usize },
    /// Running integral of (P_dc - P_ac): the integrator's own quadrature,
    /// kept for the energy bookkeeping check.
    IpcQuadrature { ipc: usize },
    IpcCtrl { ipc: usize, slot: usize },
    DcNodeV { net: usize, node: usize },
    DcBranchI { net: usize, cable: usize, branch: usize },
}

/// Per-IPC signal frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct IpcFrame {
    pub omega: f64,
    pub p_ac: f64,
    pub q_ac: f64,
    pub p_dc: f64,
    pub w_t: f64,
    pub v_dc_terminal: f64,
    pub v_ref: f64,
    pub pll_dead: bool,
}

/// Measured signals at one evaluation of the right-hand side.
#[derive(Debug, Clone, Default)]
pub struct OutputFrame {
    /// Reference-former frequency per AC subgrid.
    pub subgrid_omega: Vec<f64>,
    pub source_omega: Vec<f64>,
    pub source_p: Vec<f64>,
    pub gfl_omega: Vec<f64>,
    pub gfl_dead: Vec<bool>,
    pub ipc: Vec<IpcFrame>,
    pub dc_node_v: Vec<Vec<f64>>,
    pub ac_bus_vmag: Vec<Vec<f64>>,
    pub ac_bus_angle: Vec<Vec<f64>>,
}

/// Warm-start storage for the per-stage network solves.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    phasor: Vec<Option<PhasorSolution>>,
    angle: Vec<Option<AngleSolution>>,
    dc: Vec<Option<DcSolution>>,
}

#[derive(Debug, Clone)]
struct DcBranchComp {
    cable: usize,
    branch: usize,
    from: usize,
    to: usize,
    r_pu: f64,
    /// L over the impedance base; carries units of seconds.
    l_pu_s: f64,
}

#[derive(Debug, Clone)]
struct DcNetComp {
    /// (from, to, conductance) per cable for the resistive model.
    g_series: Vec<(usize, usize, f64)>,
    g_shunt: Vec<f64>,
    /// Node capacitance times impedance base: seconds.
    c_pu_s: Vec<f64>,
    branches: Vec<DcBranchComp>,
}

/// A scenario compiled for integration.
#[derive(Debug, Clone)]
pub struct System {
    pub base: PerUnitBase,
    pub fidelity: Fidelity,
    pub omega_base: f64,
    pub scn: Scenario,
    ac_y: Vec<DMatrix<Complex64>>,
    ac_blines: Vec<Vec<(usize, usize, f64)>>,
    dc: Vec<DcNetComp>,
    registry: Vec<StateEntry>,
    pub tracking_lag_s: f64,
}

impl System {
    pub fn compile(scenario: &Scenario) -> Result<System> {
        scenario.validate()?;
        let base = scenario.network.base;
        let fidelity = scenario.fidelity;
        let mut ac_y = Vec::new();
        let mut ac_blines = Vec::new();
        for sub in &scenario.network.ac {
            ac_y.push(build_admittance(sub, &base, 1.0)?);
            let mut lines = Vec::new();
            for line in &sub.lines {
                let x_pu = base.omega_rad() * line.l_mh_per_km * 1e-3 * line.length_km
                    / base.z_ac_ohm();
                lines.push((line.from, line.to, 1.0 / x_pu));
            }
            ac_blines.push(lines);
        }
        let z_dc = base.z_dc_ohm();
        let mut dc = Vec::new();
        for sub in &scenario.network.dc {
            let mut g_series = Vec::new();
            let mut g_shunt = vec![0.0; sub.nodes.len()];
            let mut c_pu_s = vec![0.0; sub.nodes.len()];
            let mut branches = Vec::new();
            for (ci, cab) in sub.cables.iter().enumerate() {
                g_series.push((cab.from, cab.to, z_dc / cab.series_resistance_ohm()));
                let g_half = 0.5 * cab.g_us_per_km * 1e-6 * cab.length_km * z_dc;
                g_shunt[cab.from] += g_half;
                g_shunt[cab.to] += g_half;
                let c_half = 0.5 * cab.c_uf_per_km * 1e-6 * cab.length_km * z_dc;
                c_pu_s[cab.from] += c_half;
                c_pu_s[cab.to] += c_half;
                for (bi, br) in cab.branches.iter().enumerate() {
                    branches.push(DcBranchComp {
                        cable: ci,
                        branch: bi,
                        from: cab.from,
                        to: cab.to,
                        r_pu: br.r_ohm_per_km * cab.length_km / z_dc,
                        l_pu_s: br.l_mh_per_km * 1e-3 * cab.length_km / z_dc,
                    });
                }
            }
            dc.push(DcNetComp {
                g_series,
                g_shunt,
                c_pu_s,
                branches,
            });
        }

        let mut sys = System {
            base,
            fidelity,
            omega_base: base.omega_rad(),
            scn: scenario.clone(),
            ac_y,
            ac_blines,
            dc,
            registry: Vec::new(),
            tracking_lag_s: scenario.options.tracking_lag_s,
        };
        sys.build_registry();
        Ok(sys)
    }

    fn build_registry(&mut self) {
        let mut reg = Vec::new();
        for (k, s) in self.scn.ac_sources.iter().enumerate() {
            reg.push(StateEntry {
                label: format!("{}.theta", s.id),
                kind: StateKind::SourceTheta { src: k },
            });
        }
        for (k, s) in self.scn.gfl_sources.iter().enumerate() {
            reg.push(StateEntry {
                label: format!("{}.pll_theta", s.id),
                kind: StateKind::PllTheta { gfl: k },
            });
            reg.push(StateEntry {
                label: format!("{}.pll_int", s.id),
                kind: StateKind::PllInt { gfl: k },
            });
        }
        for (k, ipc) in self.scn.ipcs.iter().enumerate() {
            if ipc.controller.forms_ac() {
                reg.push(StateEntry {
                    label: format!("{}.theta", ipc.id),
                    kind: StateKind::IpcTheta { ipc: k },
                });
            }
            reg.push(StateEntry {
                label: format!("{}.w_t", ipc.id),
                kind: StateKind::IpcEnergy { ipc: k },
            });
            reg.push(StateEntry {
                label: format!("{}.w_quad", ipc.id),
                kind: StateKind::IpcQuadrature { ipc: k },
            });
            for (slot, name) in ipc.controller.state_labels().iter().enumerate() {
                reg.push(StateEntry {
                    label: format!("{}.{}", ipc.id, name),
                    kind: StateKind::IpcCtrl { ipc: k, slot },
                });
            }
        }
        if self.fidelity == Fidelity::Dynamic {
            for (g, sub) in self.scn.network.dc.iter().enumerate() {
                for (n, node) in sub.nodes.iter().enumerate() {
                    reg.push(StateEntry {
                        label: format!("{}.{}.v", sub.id, node.id),
                        kind: StateKind::DcNodeV { net: g, node: n },
                    });
                }
                for br in &self.dc[g].branches {
                    reg.push(StateEntry {
                        label: format!("{}.cable{}.i{}", sub.id, br.cable, br.branch + 1),
                        kind: StateKind::DcBranchI {
                            net: g,
                            cable: br.cable,
                            branch: br.branch,
                        },
                    });
                }
            }
        }
        self.registry = reg;
    }

    pub fn n_states(&self) -> usize {
        self.registry.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.registry.iter().map(|e| e.label.clone()).collect()
    }

    pub fn registry(&self) -> &[StateEntry] {
        &self.registry
    }

    pub fn state_index(&self, kind: StateKind) -> Option<usize> {
        self.registry.iter().position(|e| e.kind == kind)
    }

    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        self.registry.iter().position(|e| e.label == label)
    }

    pub fn new_scratch(&self) -> Scratch {
        Scratch {
            phasor: vec![None; self.scn.network.ac.len()],
            angle: vec![None; self.scn.network.ac.len()],
            dc: vec![None; self.scn.network.dc.len()],
        }
    }

    pub fn ac_y(&self, g: usize) -> &DMatrix<Complex64> {
        &self.ac_y[g]
    }

    pub fn ac_blines(&self, g: usize) -> &[(usize, usize, f64)] {
        &self.ac_blines[g]
    }

    pub fn dc_g_series(&self, g: usize) -> &[(usize, usize, f64)] {
        &self.dc[g].g_series
    }

    pub fn dc_g_shunt(&self, g: usize) -> &[f64] {
        &self.dc[g].g_shunt
    }

    /// (from, to, r_pu) of one cable branch.
    pub fn dc_branch(&self, net: usize, cable: usize, branch: usize) -> (usize, usize, f64) {
        let br = self.dc[net]
            .branches
            .iter()
            .find(|b| b.cable == cable && b.branch == branch)
            .expect("branch exists");
        (br.from, br.to, br.r_pu)
    }

    fn ctrl_state_range(&self, ipc: usize) -> (usize, usize) {
        let start = self
            .state_index(StateKind::IpcCtrl { ipc, slot: 0 })
            .expect("controller states exist");
        (start, start + self.scn.ipcs[ipc].controller.n_states())
    }

    /// Commanded DC terminal voltage from controller states alone, for
    /// controllers whose voltage path is filtered. Returns None when the
    /// command needs an instantaneous power measurement (tau = 0) or the
    /// controller does not form the DC terminal.
    fn vdc_from_states(&self, ipc: usize, x: &DVector<f64>) -> Option<f64> {
        let unit = &self.scn.ipcs[ipc];
        let (c0, _) = self.ctrl_state_range(ipc);
        let w = x[self.state_index(StateKind::IpcEnergy { ipc }).unwrap()];
        match &unit.controller {
            ControllerConfig::AcGfm(_) => None,
            ControllerConfig::DcGfm(c) => {
                if c.tau_dc_s > 0.0 {
                    Some(c.v_dc_set + c.k_p_dc * (x[c0] - c.p_dc_set))
                } else {
                    None
                }
            }
            ControllerConfig::HybridDroop(c) => {
                (c.tau_dc_s > 0.0).then(|| c.v_dc_set + x[c0])
            }
            ControllerConfig::EnergyBalancing(c) => (c.tau_dc_s > 0.0).then(|| {
                let dw = w - c.w_set;
                c.v_dc_set + c.k_p_dc / c.tau_dc_s * dw + x[c0 + 1]
            }),
        }
    }

    /// Commanded DC power draw of a grid-following DC terminal, from states.
    fn pdc_cmd_from_states(&self, ipc: usize, x: &DVector<f64>) -> Option<f64> {
        let unit = &self.scn.ipcs[ipc];
        let (c0, _) = self.ctrl_state_range(ipc);
        let w = x[self.state_index(StateKind::IpcEnergy { ipc }).unwrap()];
        match &unit.controller {
            ControllerConfig::AcGfm(c) => {
                Some(c.energy_pi.k_p * (c.w_set - w) + x[c0 + 1])
            }
            _ => None,
        }
    }

    /// Evaluate the right-hand side at state `x`. Returns the derivative
    /// vector and the measured outputs. Network failures surface as errors
    /// and are mapped to instability by the engine.
    pub fn derivatives(
        &self,
        x: &DVector<f64>,
        scratch: &mut Scratch,
    ) -> Result<(DVector<f64>, OutputFrame)> {
        match self.fidelity {
            Fidelity::Analytic => self.derivatives_analytic(x, scratch),
            Fidelity::Dynamic => self.derivatives_dynamic(x, scratch),
        }
    }

    /// Cold-start aid for the phasor solve: a lossless angle pre-solve
    /// estimates the bus angles so the complex Newton starts on the
    /// operating branch. A flat profile far from the instantaneous island
    /// angle can otherwise descend onto a collapsed-voltage root.
    fn seed_phasor_scratch(&self, g: usize, x: &DVector<f64>, scratch: &mut Scratch) {
        let scn = &self.scn;
        let sub = &scn.network.ac[g];
        let mut sources = Vec::new();
        for (k, s) in scn.ac_sources.iter().enumerate() {
            if s.connected && s.bus.subgrid == g {
                sources.push(AngleSource {
                    bus: s.bus.bus,
                    theta: x[self.state_index(StateKind::SourceTheta { src: k }).unwrap()],
                    b_coupling: None,
                });
            }
        }
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            if ipc.ac_connected && ipc.ac_subgrid == g && ipc.controller.forms_ac() {
                sources.push(AngleSource {
                    bus: ipc.ac_bus,
                    theta: self.ipc_theta(k, x),
                    b_coupling: Some(1.0 / ipc.mmc.coupling_l_pu),
                });
            }
        }
        if sources.is_empty() {
            return;
        }
        let mut p_inj = vec![0.0; sub.buses.len()];
        for b in 0..sub.buses.len() {
            p_inj[b] -= self.ac_bus_load(g, b).re;
        }
        let mut rot_inj = Vec::new();
        for (k, s) in scn.gfl_sources.iter().enumerate() {
            if s.connected && s.bus.subgrid == g {
                rot_inj.push((s.bus.bus, s.p_cmd_pu, self.gfl_pll(k, x).theta));
            }
        }
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            if ipc.ac_connected && ipc.ac_subgrid == g && !ipc.controller.forms_ac() {
                if let (Some((p_cmd, _)), Some(pll)) =
                    (self.pac_cmd_from_states(k, x), self.dcgfm_pll(k, x))
                {
                    rot_inj.push((ipc.ac_bus, p_cmd, pll.theta));
                }
            }
        }
        let input = AngleInput {
            n_buses: sub.buses.len(),
            b_lines: self.ac_blines[g].clone(),
            sources,
            p_inj,
            rot_inj,
            subgrid_id: &sub.id,
        };
        if let Ok(sol) = solve_angle_network(&input, None) {
            let v_bus: Vec<Complex64> = sol
                .theta
                .iter()
                .map(|t| Complex64::from_polar(1.0, *t))
                .collect();
            scratch.phasor[g] = Some(PhasorSolution {
                v_bus,
                emf_e: Vec::new(),
                emf_s: Vec::new(),
                formed_s: Vec::new(),
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
    }

    // -- common helpers ----------------------------------------------------

    fn ipc_theta(&self, ipc: usize, x: &DVector<f64>) -> f64 {
        self.state_index(StateKind::IpcTheta { ipc })
            .map(|i| x[i])
            .unwrap_or(0.0)
    }

    fn gfl_pll(&self, gfl: usize, x: &DVector<f64>) -> PllState {
        PllState {
            theta: x[self.state_index(StateKind::PllTheta { gfl }).unwrap()],
            integrator: x[self.state_index(StateKind::PllInt { gfl }).unwrap()],
        }
    }

    fn dcgfm_pll(&self, ipc: usize, x: &DVector<f64>) -> Option<PllState> {
        match &self.scn.ipcs[ipc].controller {
            ControllerConfig::DcGfm(_) => {
                let (c0, _) = self.ctrl_state_range(ipc);
                Some(PllState {
                    theta: x[c0 + 2],
                    integrator: x[c0 + 3],
                })
            }
            _ => None,
        }
    }

    /// Commanded AC-side injection of a grid-following AC terminal.
    fn pac_cmd_from_states(&self, ipc: usize, x: &DVector<f64>) -> Option<(f64, f64)> {
        match &self.scn.ipcs[ipc].controller {
            ControllerConfig::DcGfm(c) => {
                let (c0, _) = self.ctrl_state_range(ipc);
                let w = x[self.state_index(StateKind::IpcEnergy { ipc }).unwrap()];
                let raw = -(c.energy_pi.k_p * (c.w_set - w) + x[c0 + 1]);
                Some((raw, c.q_set))
            }
            _ => None,
        }
    }

    /// Loads attached to an AC bus as a complex draw.
    fn ac_bus_load(&self, g: usize, b: usize) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for load in &self.scn.loads {
            if let crate::device::LoadTerminal::Ac(r) = load.terminal {
                if load.connected && r.subgrid == g && r.bus == b {
                    s += Complex64::new(load.p_load_pu, load.q_load_pu);
                }
            }
        }
        s
    }

    fn dc_node_load(&self, g: usize, n: usize) -> f64 {
        let mut p = 0.0;
        for load in &self.scn.loads {
            if let crate::device::LoadTerminal::Dc(r) = load.terminal {
                if load.connected && r.subgrid == g && r.node == n {
                    p += load.p_load_pu;
                }
            }
        }
        p
    }

    // -- analytic fidelity -------------------------------------------------

    fn derivatives_analytic(
        &self,
        x: &DVector<f64>,
        scratch: &mut Scratch,
    ) -> Result<(DVector<f64>, OutputFrame)> {
        let scn = &self.scn;
        let mut out = OutputFrame {
            subgrid_omega: vec![1.0; scn.network.ac.len()],
            source_omega: vec![1.0; scn.ac_sources.len()],
            source_p: vec![0.0; scn.ac_sources.len()],
            gfl_omega: vec![1.0; scn.gfl_sources.len()],
            gfl_dead: vec![false; scn.gfl_sources.len()],
            ipc: vec![IpcFrame::default(); scn.ipcs.len()],
            dc_node_v: scn
                .network
                .dc
                .iter()
                .map(|s| vec![1.0; s.nodes.len()])
                .collect(),
            ac_bus_vmag: scn
                .network
                .ac
                .iter()
                .map(|s| vec![1.0; s.buses.len()])
                .collect(),
            ac_bus_angle: scn
                .network
                .ac
                .iter()
                .map(|s| vec![0.0; s.buses.len()])
                .collect(),
        };

        // AC subgrids: power-angle solves.
        let mut ac_solutions: Vec<Option<AngleSolution>> = vec![None; scn.network.ac.len()];
        for (g, sub) in scn.network.ac.iter().enumerate() {
            let mut sources = Vec::new();
            let mut source_tags = Vec::new();
            for (k, s) in scn.ac_sources.iter().enumerate() {
                if s.connected && s.bus.subgrid == g {
                    sources.push(AngleSource {
                        bus: s.bus.bus,
                        theta: x[self.state_index(StateKind::SourceTheta { src: k }).unwrap()],
                        b_coupling: None,
                    });
                    source_tags.push(SourceTag::Device(k));
                }
            }
            for (k, ipc) in scn.ipcs.iter().enumerate() {
                if ipc.ac_connected && ipc.ac_subgrid == g && ipc.controller.forms_ac() {
                    let b_c = 1.0 / ipc.mmc.coupling_l_pu;
                    sources.push(AngleSource {
                        bus: ipc.ac_bus,
                        theta: self.ipc_theta(k, x),
                        b_coupling: Some(b_c),
                    });
                    source_tags.push(SourceTag::Ipc(k));
                }
            }
            let mut p_inj = vec![0.0; sub.buses.len()];
            for b in 0..sub.buses.len() {
                p_inj[b] -= self.ac_bus_load(g, b).re;
            }
            let mut rot_inj = Vec::new();
            for (k, s) in scn.gfl_sources.iter().enumerate() {
                if s.connected && s.bus.subgrid == g {
                    rot_inj.push((s.bus.bus, s.p_cmd_pu, self.gfl_pll(k, x).theta));
                }
            }
            for (k, ipc) in scn.ipcs.iter().enumerate() {
                if ipc.ac_connected && ipc.ac_subgrid == g && !ipc.controller.forms_ac() {
                    if let (Some((p_cmd, _)), Some(pll)) =
                        (self.pac_cmd_from_states(k, x), self.dcgfm_pll(k, x))
                    {
                        rot_inj.push((ipc.ac_bus, p_cmd, pll.theta));
                    }
                }
            }
            let has_rot = !rot_inj.is_empty() || p_inj.iter().any(|p| *p != 0.0);
            if sources.is_empty() && !has_rot {
                // Fully de-energized subgrid; nothing to solve.
                continue;
            }
            let input = AngleInput {
                n_buses: sub.buses.len(),
                b_lines: self.ac_blines[g].clone(),
                sources,
                p_inj,
                rot_inj,
                subgrid_id: &sub.id,
            };
            let sol = solve_angle_network(&input, scratch.angle[g].as_ref())?;
            for (tag, p) in source_tags.iter().zip(sol.source_p.iter()) {
                match tag {
                    SourceTag::Device(k) => out.source_p[*k] = *p,
                    SourceTag::Ipc(k) => {
                        out.ipc[*k].p_ac = *p;
                        out.ipc[*k].q_ac = 0.0;
                    }
                }
            }
            for b in 0..sub.buses.len() {
                out.ac_bus_angle[g][b] = sol.theta[b];
            }
            scratch.angle[g] = Some(sol);
            ac_solutions[g] = scratch.angle[g].clone();
        }

        // Grid-following AC terminal power actually delivered.
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            if ipc.ac_connected && !ipc.controller.forms_ac() {
                if let (Some((p_cmd, _)), Some(pll)) =
                    (self.pac_cmd_from_states(k, x), self.dcgfm_pll(k, x))
                {
                    let theta_bus = out.ac_bus_angle[ipc.ac_subgrid][ipc.ac_bus];
                    out.ipc[k].p_ac = p_cmd * (theta_bus - pll.theta).cos();
                }
            }
        }

        // DC subgrids: resistive solves with converter laws folded in.
        for (g, sub) in scn.network.dc.iter().enumerate() {
            let mut devices = Vec::new();
            let mut tags = Vec::new();
            for s in scn.dc_sources.iter() {
                if s.connected && s.node.subgrid == g {
                    devices.push(DcDevice::SourceDroop {
                        node: s.node.node,
                        v_set: s.v_set_pu,
                        p_set: s.p_set_pu,
                        k: s.droop_pu,
                    });
                    tags.push(DcTag::Source);
                }
            }
            for (k, ipc) in scn.ipcs.iter().enumerate() {
                if !ipc.dc_connected || ipc.dc_subgrid != g {
                    continue;
                }
                let w = x[self.state_index(StateKind::IpcEnergy { ipc: k }).unwrap()];
                let dev = match &ipc.controller {
                    ControllerConfig::AcGfm(_) => DcDevice::PowerDraw {
                        node: ipc.dc_node,
                        p: self.pdc_cmd_from_states(k, x).unwrap(),
                    },
                    ControllerConfig::DcGfm(c) => {
                        if let Some(v) = self.vdc_from_states(k, x) {
                            DcDevice::FormedVoltage {
                                node: ipc.dc_node,
                                v,
                            }
                        } else {
                            DcDevice::MmcDroopLaw {
                                node: ipc.dc_node,
                                v_set: c.v_dc_set,
                                p_set: c.p_dc_set,
                                k_p: c.k_p_dc,
                                energy_term: 0.0,
                            }
                        }
                    }
                    ControllerConfig::HybridDroop(c) => {
                        if let Some(v) = self.vdc_from_states(k, x) {
                            DcDevice::FormedVoltage {
                                node: ipc.dc_node,
                                v,
                            }
                        } else {
                            DcDevice::MmcDroopLaw {
                                node: ipc.dc_node,
                                v_set: c.v_dc_set,
                                p_set: c.p_dc_set,
                                k_p: c.k_p_dc,
                                energy_term: c.k_w_dc * (w - c.w_set),
                            }
                        }
                    }
                    ControllerConfig::EnergyBalancing(c) => {
                        if let Some(v) = self.vdc_from_states(k, x) {
                            DcDevice::FormedVoltage {
                                node: ipc.dc_node,
                                v,
                            }
                        } else {
                            // tau = 0: V = v_set + k_p_dc (P_dc - P_ac) + k_w_dc dW.
                            DcDevice::MmcDroopLaw {
                                node: ipc.dc_node,
                                v_set: c.v_dc_set,
                                p_set: out.ipc[k].p_ac,
                                k_p: c.k_p_dc,
                                energy_term: c.k_w_dc * (w - c.w_set),
                            }
                        }
                    }
                };
                devices.push(dev);
                tags.push(DcTag::Ipc(k));
            }
            for n in 0..sub.nodes.len() {
                let p = self.dc_node_load(g, n);
                if p != 0.0 {
                    devices.push(DcDevice::PowerDraw { node: n, p });
                    tags.push(DcTag::Load);
                }
            }
            if devices.is_empty() {
                continue;
            }
            let input = DcInput {
                n_nodes: sub.nodes.len(),
                g_series: self.dc[g].g_series.clone(),
                g_shunt: self.dc[g].g_shunt.clone(),
                devices,
                subgrid_id: &sub.id,
            };
            let sol = solve_dc_network(&input, scratch.dc[g].as_ref())?;
            for (tag, p) in tags.iter().zip(sol.device_p.iter()) {
                match tag {
                    DcTag::Ipc(k) => out.ipc[*k].p_dc = -p,
                    DcTag::Source | DcTag::Load => {}
                }
            }
            out.dc_node_v[g].copy_from_slice(&sol.v);
            for (k, ipc) in scn.ipcs.iter().enumerate() {
                if ipc.dc_subgrid == g && ipc.dc_connected {
                    out.ipc[k].v_dc_terminal = sol.v[ipc.dc_node];
                }
            }
            scratch.dc[g] = Some(sol);
        }

        self.finish_derivatives(x, &mut out, None)
    }

    // -- dynamic fidelity --------------------------------------------------

    fn derivatives_dynamic(
        &self,
        x: &DVector<f64>,
        scratch: &mut Scratch,
    ) -> Result<(DVector<f64>, OutputFrame)> {
        let scn = &self.scn;
        let mut out = OutputFrame {
            subgrid_omega: vec![1.0; scn.network.ac.len()],
            source_omega: vec![1.0; scn.ac_sources.len()],
            source_p: vec![0.0; scn.ac_sources.len()],
            gfl_omega: vec![1.0; scn.gfl_sources.len()],
            gfl_dead: vec![false; scn.gfl_sources.len()],
            ipc: vec![IpcFrame::default(); scn.ipcs.len()],
            dc_node_v: scn
                .network
                .dc
                .iter()
                .map(|s| vec![1.0; s.nodes.len()])
                .collect(),
            ac_bus_vmag: scn
                .network
                .ac
                .iter()
                .map(|s| vec![1.0; s.buses.len()])
                .collect(),
            ac_bus_angle: scn
                .network
                .ac
                .iter()
                .map(|s| vec![0.0; s.buses.len()])
                .collect(),
        };

        // DC measurements come straight from the cable and node states.
        let mut dc_i_in: Vec<Vec<f64>> = Vec::with_capacity(scn.network.dc.len());
        for (g, sub) in scn.network.dc.iter().enumerate() {
            let mut i_in = vec![0.0; sub.nodes.len()];
            for br in &self.dc[g].branches {
                let i = x[self
                    .state_index(StateKind::DcBranchI {
                        net: g,
                        cable: br.cable,
                        branch: br.branch,
                    })
                    .unwrap()];
                i_in[br.to] += i;
                i_in[br.from] -= i;
            }
            for n in 0..sub.nodes.len() {
                out.dc_node_v[g][n] =
                    x[self.state_index(StateKind::DcNodeV { net: g, node: n }).unwrap()];
            }
            dc_i_in.push(i_in);
        }
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            if !ipc.dc_connected {
                continue;
            }
            let g = ipc.dc_subgrid;
            let n = ipc.dc_node;
            let v = out.dc_node_v[g][n];
            out.ipc[k].v_dc_terminal = v;
            if ipc.controller.forms_dc() {
                // The converter supplies the node: everything arriving on
                // the branches minus shunt and co-located loads flows in.
                out.ipc[k].p_dc =
                    v * dc_i_in[g][n] - self.dc[g].g_shunt[n] * v * v - self.dc_node_load(g, n);
            } else {
                out.ipc[k].p_dc = self.pdc_cmd_from_states(k, x).unwrap_or(0.0);
            }
        }

        // AC subgrids: quasi-static phasor solves.
        for (g, sub) in scn.network.ac.iter().enumerate() {
            if scratch.phasor[g].is_none() {
                self.seed_phasor_scratch(g, x, scratch);
            }
            let mut formed = Vec::new();
            let mut formed_tags = Vec::new();
            for (k, s) in scn.ac_sources.iter().enumerate() {
                if s.connected && s.bus.subgrid == g {
                    let theta =
                        x[self.state_index(StateKind::SourceTheta { src: k }).unwrap()];
                    formed.push((s.bus.bus, Complex64::from_polar(s.voltage_pu, theta)));
                    formed_tags.push(k);
                }
            }
            let mut emf = Vec::new();
            let mut emf_tags = Vec::new();
            for (k, ipc) in scn.ipcs.iter().enumerate() {
                if ipc.ac_connected && ipc.ac_subgrid == g && ipc.controller.forms_ac() {
                    let (v_set, k_q, q_set) = match &ipc.controller {
                        ControllerConfig::AcGfm(c) => (c.v_ac_set, c.k_q_ac, c.q_set),
                        ControllerConfig::HybridDroop(c) => (c.v_ac_set, c.k_q_ac, c.q_set),
                        ControllerConfig::EnergyBalancing(c) => (c.v_ac_set, c.k_q_ac, c.q_set),
                        ControllerConfig::DcGfm(_) => unreachable!(),
                    };
                    emf.push(EmfTerminal {
                        bus: ipc.ac_bus,
                        y_coupling: ipc.mmc.coupling_admittance(),
                        theta: self.ipc_theta(k, x),
                        v_ref: VoltageRef::VoltVar { v_set, k_q, q_set },
                    });
                    emf_tags.push(k);
                }
            }
            let mut s_inj = vec![Complex64::new(0.0, 0.0); sub.buses.len()];
            for b in 0..sub.buses.len() {
                s_inj[b] -= self.ac_bus_load(g, b);
            }
            let mut rot_inj = Vec::new();
            for (k, s) in scn.gfl_sources.iter().enumerate() {
                if s.connected && s.bus.subgrid == g {
                    rot_inj.push((
                        s.bus.bus,
                        Complex64::new(s.p_cmd_pu, s.q_cmd_pu),
                        self.gfl_pll(k, x).theta,
                    ));
                }
            }
            for (k, ipc) in scn.ipcs.iter().enumerate() {
                if ipc.ac_connected && ipc.ac_subgrid == g && !ipc.controller.forms_ac() {
                    if let (Some((p_cmd, q_cmd)), Some(pll)) =
                        (self.pac_cmd_from_states(k, x), self.dcgfm_pll(k, x))
                    {
                        rot_inj.push((ipc.ac_bus, Complex64::new(p_cmd, q_cmd), pll.theta));
                    }
                }
            }
            let energized = !formed.is_empty()
                || !emf.is_empty()
                || !rot_inj.is_empty()
                || s_inj.iter().any(|s| s.norm() > 0.0);
            if !energized {
                for b in 0..sub.buses.len() {
                    out.ac_bus_vmag[g][b] = 0.0;
                }
                continue;
            }
            let input = PhasorInput {
                y: &self.ac_y[g],
                formed,
                emf,
                s_inj,
                rot_inj,
                subgrid_id: &sub.id,
            };
            let sol = solve_phasor_network(&input, scratch.phasor[g].as_ref())?;
            for (idx, k) in formed_tags.iter().enumerate() {
                out.source_p[*k] = sol.formed_s[idx].re;
            }
            for (idx, k) in emf_tags.iter().enumerate() {
                out.ipc[*k].p_ac = sol.emf_s[idx].re;
                out.ipc[*k].q_ac = sol.emf_s[idx].im;
                out.ipc[*k].v_ref = sol.emf_e[idx].norm();
            }
            for b in 0..sub.buses.len() {
                out.ac_bus_vmag[g][b] = sol.v_bus[b].norm();
                out.ac_bus_angle[g][b] = sol.v_bus[b].arg();
            }
            scratch.phasor[g] = Some(sol);
        }

        // Delivered power of grid-following AC terminals.
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            if ipc.ac_connected && !ipc.controller.forms_ac() {
                if let (Some((p_cmd, q_cmd)), Some(pll)) =
                    (self.pac_cmd_from_states(k, x), self.dcgfm_pll(k, x))
                {
                    let v = scratch.phasor[ipc.ac_subgrid]
                        .as_ref()
                        .map(|s| s.v_bus[ipc.ac_bus])
                        .unwrap_or_default();
                    let s = gfl_injection(p_cmd, q_cmd, v, pll.theta);
                    out.ipc[k].p_ac = s.re;
                    out.ipc[k].q_ac = s.im;
                }
            }
        }

        self.finish_derivatives(x, &mut out, Some(&dc_i_in))
    }

    /// Shared tail: controller evaluations and assembly of the derivative
    /// vector from the measured outputs.
    fn finish_derivatives(
        &self,
        x: &DVector<f64>,
        out: &mut OutputFrame,
        dc_i_in: Option<&Vec<Vec<f64>>>,
    ) -> Result<(DVector<f64>, OutputFrame)> {
        let scn = &self.scn;
        let mut dx = DVector::<f64>::zeros(self.n_states());

        // Controllers.
        let mut ctrl_dx: Vec<Vec<f64>> = Vec::with_capacity(scn.ipcs.len());
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            let w = x[self.state_index(StateKind::IpcEnergy { ipc: k }).unwrap()];
            out.ipc[k].w_t = w;
            let v_bus = if ipc.ac_connected {
                match self.fidelity {
                    Fidelity::Dynamic => Complex64::from_polar(
                        out.ac_bus_vmag[ipc.ac_subgrid][ipc.ac_bus],
                        out.ac_bus_angle[ipc.ac_subgrid][ipc.ac_bus],
                    ),
                    Fidelity::Analytic => Complex64::from_polar(
                        1.0,
                        out.ac_bus_angle[ipc.ac_subgrid][ipc.ac_bus],
                    ),
                }
            } else {
                Complex64::new(0.0, 0.0)
            };
            let m = Measurements {
                p_ac: out.ipc[k].p_ac,
                p_dc: out.ipc[k].p_dc,
                q_ac: out.ipc[k].q_ac,
                w_t: w,
                v_bus,
            };
            let (c0, c1) = self.ctrl_state_range(k);
            let mut cdx = vec![0.0; c1 - c0];
            let o = ctrl_eval(
                &ipc.controller,
                x.as_slice().get(c0..c1).unwrap(),
                &m,
                self.omega_base,
                &mut cdx,
            );
            out.ipc[k].pll_dead = o.pll_dead;
            out.ipc[k].omega = o
                .omega
                .or(o.pll_omega)
                .unwrap_or(1.0);
            // Energy and its bookkeeping quadrature.
            dx[self.state_index(StateKind::IpcEnergy { ipc: k }).unwrap()] =
                m.p_dc - m.p_ac;
            dx[self
                .state_index(StateKind::IpcQuadrature { ipc: k })
                .unwrap()] = m.p_dc - m.p_ac;
            if let Some(i) = self.state_index(StateKind::IpcTheta { ipc: k }) {
                dx[i] = self.omega_base * (o.omega.unwrap_or(1.0) - 1.0);
            }
            ctrl_dx.push(cdx);
        }
        for (k, cdx) in ctrl_dx.iter().enumerate() {
            let (c0, _) = self.ctrl_state_range(k);
            for (s, d) in cdx.iter().enumerate() {
                dx[c0 + s] = *d;
            }
        }

        // Droop sources.
        for (k, s) in scn.ac_sources.iter().enumerate() {
            let i = self.state_index(StateKind::SourceTheta { src: k }).unwrap();
            if s.connected {
                let omega = s.omega(out.source_p[k]);
                out.source_omega[k] = omega;
                dx[i] = self.omega_base * (omega - 1.0);
            } else {
                out.source_omega[k] = 1.0;
                dx[i] = 0.0;
            }
        }

        // Grid-following sources.
        for (k, s) in scn.gfl_sources.iter().enumerate() {
            let it = self.state_index(StateKind::PllTheta { gfl: k }).unwrap();
            let ii = self.state_index(StateKind::PllInt { gfl: k }).unwrap();
            if !s.connected {
                continue;
            }
            let v = match self.fidelity {
                Fidelity::Dynamic => Complex64::from_polar(
                    out.ac_bus_vmag[s.bus.subgrid][s.bus.bus],
                    out.ac_bus_angle[s.bus.subgrid][s.bus.bus],
                ),
                Fidelity::Analytic => {
                    Complex64::from_polar(1.0, out.ac_bus_angle[s.bus.subgrid][s.bus.bus])
                }
            };
            match pll_derivatives(&s.pll, &self.gfl_pll(k, x), v, self.omega_base, &s.id) {
                Ok((dtheta, dint, omega)) => {
                    dx[it] = dtheta;
                    dx[ii] = dint;
                    out.gfl_omega[k] = omega;
                }
                Err(_) => {
                    out.gfl_dead[k] = true;
                    out.gfl_omega[k] = 1.0 + x[ii];
                }
            }
        }

        // Subgrid reference frequency: first connected former.
        for g in 0..scn.network.ac.len() {
            let mut omega = None;
            for (k, s) in scn.ac_sources.iter().enumerate() {
                if s.connected && s.bus.subgrid == g {
                    omega = Some(out.source_omega[k]);
                    break;
                }
            }
            if omega.is_none() {
                for (k, ipc) in scn.ipcs.iter().enumerate() {
                    if ipc.ac_connected && ipc.ac_subgrid == g && ipc.controller.forms_ac() {
                        omega = Some(out.ipc[k].omega);
                        break;
                    }
                }
            }
            out.subgrid_omega[g] = omega.unwrap_or(1.0);
        }

        // Dynamic-fidelity DC states.
        if let Some(i_in) = dc_i_in {
            for (g, sub) in scn.network.dc.iter().enumerate() {
                // Active former per node, if any.
                for n in 0..sub.nodes.len() {
                    let iv = self.state_index(StateKind::DcNodeV { net: g, node: n }).unwrap();
                    let v = x[iv];
                    let mut v_cmd: Option<f64> = None;
                    for s in scn.dc_sources.iter() {
                        if s.connected && s.node.subgrid == g && s.node.node == n {
                            let p_inj = self.dc[g].g_shunt[n] * v * v + self.dc_node_load(g, n)
                                - v * i_in[g][n];
                            v_cmd = Some(s.voltage(p_inj));
                        }
                    }
                    for (k, ipc) in scn.ipcs.iter().enumerate() {
                        if ipc.dc_connected
                            && ipc.dc_subgrid == g
                            && ipc.dc_node == n
                            && ipc.controller.forms_dc()
                        {
                            v_cmd = Some(match self.vdc_from_states(k, x) {
                                Some(vc) => vc,
                                None => {
                                    // tau = 0 paths read the instantaneous
                                    // measurements, all state-derived here.
                                    let w = x[self
                                        .state_index(StateKind::IpcEnergy { ipc: k })
                                        .unwrap()];
                                    match &ipc.controller {
                                        ControllerConfig::DcGfm(c) => {
                                            c.v_dc_set
                                                + c.k_p_dc * (out.ipc[k].p_dc - c.p_dc_set)
                                        }
                                        ControllerConfig::HybridDroop(c) => {
                                            c.v_dc_set
                                                + c.k_p_dc * (out.ipc[k].p_dc - c.p_dc_set)
                                                + c.k_w_dc * (w - c.w_set)
                                        }
                                        ControllerConfig::EnergyBalancing(c) => {
                                            c.v_dc_set
                                                + c.k_p_dc
                                                    * (out.ipc[k].p_dc - out.ipc[k].p_ac)
                                                + c.k_w_dc * (w - c.w_set)
                                        }
                                        ControllerConfig::AcGfm(_) => unreachable!(),
                                    }
                                }
                            });
                        }
                    }
                    match v_cmd {
                        Some(vc) => {
                            dx[iv] = (vc - v) / self.tracking_lag_s;
                        }
                        None => {
                            // Free node: capacitor balance. Constant-power
                            // draws include loads and grid-following
                            // converter terminals.
                            let mut p_draw = self.dc_node_load(g, n);
                            for (k, ipc) in scn.ipcs.iter().enumerate() {
                                if ipc.dc_connected
                                    && ipc.dc_subgrid == g
                                    && ipc.dc_node == n
                                    && !ipc.controller.forms_dc()
                                {
                                    p_draw += out.ipc[k].p_dc;
                                    let _ = k;
                                }
                            }
                            let c = self.dc[g].c_pu_s[n].max(1e-9);
                            dx[iv] =
                                (i_in[g][n] - self.dc[g].g_shunt[n] * v - p_draw / v) / c;
                        }
                    }
                }
                for br in &self.dc[g].branches {
                    let ib = self
                        .state_index(StateKind::DcBranchI {
                            net: g,
                            cable: br.cable,
                            branch: br.branch,
                        })
                        .unwrap();
                    let vf = x[self
                        .state_index(StateKind::DcNodeV {
                            net: g,
                            node: br.from,
                        })
                        .unwrap()];
                    let vt = x[self
                        .state_index(StateKind::DcNodeV {
                            net: g,
                            node: br.to,
                        })
                        .unwrap()];
                    dx[ib] = (vf - vt - br.r_pu * x[ib]) / br.l_pu_s;
                }
            }
        }

        Ok((dx, std::mem::take(out)))
    }
}

enum SourceTag {
    Device(usize),
    Ipc(usize),
}

enum DcTag {
    Source,
    Ipc(usize),
    Load,
}
