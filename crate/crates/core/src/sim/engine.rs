//! Fixed-step RK4 integration with an event schedule, divergence detection,
//! and time-series recording.

use nalgebra::DVector;

use crate::analysis::{central_jacobian, LinearModel, Provenance};
use crate::error::{Error, Result};
use crate::ipc::ControllerConfig;

use super::system::{Scratch, StateKind, System};
use super::{
    AppliedEvent, Event, EventAction, InstabilityReason, Scenario, SetpointField, Signal,
    SignalGroup, SimResult, SimStatus, TerminalSide,
};

/// A state snapshot with its settledness residual.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t_s: f64,
    pub state: DVector<f64>,
    /// Reference-corrected derivative norm; see `residual_norm`.
    pub residual_norm: f64,
}

/// Run a scenario to completion or instability.
pub fn simulate(scenario: &Scenario) -> Result<SimResult> {
    let mut sys = System::compile(scenario)?;
    let mut engine = Engine::new(&mut sys)?;
    engine.run(None)?;
    Ok(engine.into_result())
}

/// Run a scenario until every state derivative (angle references removed)
/// drops below the settle tolerance; the horizon is the scenario's t_end.
pub fn settle(scenario: &Scenario) -> Result<(System, Snapshot)> {
    let mut sys = System::compile(scenario)?;
    let snapshot = {
        let mut engine = Engine::new(&mut sys)?;
        let last_event = engine
            .pending
            .last()
            .map(|e| e.t_s)
            .unwrap_or(0.0);
        engine.run(Some(last_event))?;
        match engine.settled.take() {
            Some(s) => s,
            None => {
                let status = engine.status.clone();
                return Err(match status {
                    Some(SimStatus::Unstable { t_s, reason }) => Error::Validation(format!(
                        "scenario went unstable at t = {t_s}: {reason:?}"
                    )),
                    _ => Error::SettleTimeout(scenario.options.t_end_s),
                });
            }
        }
    };
    Ok((sys, snapshot))
}

/// Central-difference linearization of the full nonlinear right-hand side at
/// an equilibrium snapshot. Rejects snapshots that are not settled.
pub fn linearize(system: &System, snapshot: &Snapshot) -> Result<LinearModel> {
    let tol = system.scn.options.settle_tol;
    let res = residual_norm(system, &snapshot.state)?;
    if res > tol {
        return Err(Error::NotEquilibrium(res));
    }
    let scratch = system.new_scratch();
    let f = |x: &DVector<f64>| -> DVector<f64> {
        system
            .derivatives(x, &mut scratch.clone())
            .map(|(dx, _)| dx)
            .unwrap_or_else(|_| DVector::from_element(x.len(), f64::NAN))
    };
    let a = central_jacobian(f, &snapshot.state, 1e-6);
    let mut model = LinearModel::new(a, system.labels(), Provenance::NumericJacobian);
    model.equilibrium = snapshot.state.iter().copied().collect();
    Ok(model)
}

/// Derivative norm with the common angle drift of each synchronous island
/// removed: at an off-nominal settled point every angle in an island slews
/// together, so angle derivatives are compared against their island
/// reference rather than zero.
pub fn residual_norm(system: &System, x: &DVector<f64>) -> Result<f64> {
    let mut scratch = system.new_scratch();
    let (dx, _) = system.derivatives(x, &mut scratch)?;
    let mut island_ref: Vec<Option<f64>> = vec![None; system.scn.network.ac.len()];
    for (i, entry) in system.registry().iter().enumerate() {
        let island = match entry.kind {
            StateKind::SourceTheta { src } => {
                let s = &system.scn.ac_sources[src];
                s.connected.then_some(s.bus.subgrid)
            }
            StateKind::IpcTheta { ipc } => {
                let u = &system.scn.ipcs[ipc];
                u.ac_connected.then_some(u.ac_subgrid)
            }
            _ => None,
        };
        if let Some(g) = island {
            if island_ref[g].is_none() {
                island_ref[g] = Some(dx[i]);
            }
        }
    }
    let mut norm: f64 = 0.0;
    for (i, entry) in system.registry().iter().enumerate() {
        let v = match entry.kind {
            StateKind::SourceTheta { src } => {
                let s = &system.scn.ac_sources[src];
                if !s.connected {
                    0.0
                } else {
                    dx[i] - island_ref[s.bus.subgrid].unwrap_or(0.0)
                }
            }
            StateKind::IpcTheta { ipc } => {
                let u = &system.scn.ipcs[ipc];
                if !u.ac_connected {
                    0.0
                } else {
                    dx[i] - island_ref[u.ac_subgrid].unwrap_or(0.0)
                }
            }
            StateKind::PllTheta { gfl } => {
                let s = &system.scn.gfl_sources[gfl];
                if !s.connected {
                    0.0
                } else {
                    dx[i] - island_ref[s.bus.subgrid].unwrap_or(0.0)
                }
            }
            // A DC-forming converter's PLL angle (controller slot 2) is an
            // angle state of its AC island too.
            StateKind::IpcCtrl { ipc, slot } => {
                let u = &system.scn.ipcs[ipc];
                if slot == 2 && matches!(u.controller, ControllerConfig::DcGfm(_)) {
                    if u.ac_connected {
                        dx[i] - island_ref[u.ac_subgrid].unwrap_or(0.0)
                    } else {
                        0.0
                    }
                } else {
                    dx[i]
                }
            }
            // The quadrature accumulator mirrors the energy state.
            StateKind::IpcQuadrature { .. } => 0.0,
            _ => dx[i],
        };
        norm = norm.max(v.abs());
    }
    Ok(norm)
}

pub(super) struct Engine<'a> {
    sys: &'a mut System,
    x: DVector<f64>,
    scratch: Scratch,
    t: f64,
    step: usize,
    pub pending: Vec<Event>,
    next_event: usize,
    // Recording.
    time: Vec<f64>,
    signal_names: Vec<(String, SignalGroup)>,
    signal_values: Vec<Vec<f64>>,
    event_log: Vec<AppliedEvent>,
    warnings: Vec<String>,
    pub status: Option<SimStatus>,
    pub settled: Option<Snapshot>,
    // PLL dead-bus persistence per grid-following source and per converter.
    gfl_dead_since: Vec<Option<f64>>,
    ipc_dead_since: Vec<Option<f64>>,
}

impl<'a> Engine<'a> {
    pub fn new(sys: &'a mut System) -> Result<Self> {
        let x = crate::dispatch::init_equilibrium(sys)?;
        let mut signal_names = Vec::new();
        for sub in &sys.scn.network.ac {
            signal_names.push((format!("{}.omega", sub.id), SignalGroup::Frequency));
        }
        for ipc in &sys.scn.ipcs {
            signal_names.push((format!("{}.omega", ipc.id), SignalGroup::Frequency));
        }
        for (g, sub) in sys.scn.network.dc.iter().enumerate() {
            for node in &sys.scn.network.dc[g].nodes {
                signal_names.push((format!("{}.{}.v_dc", sub.id, node.id), SignalGroup::DcVoltage));
            }
        }
        for ipc in &sys.scn.ipcs {
            signal_names.push((format!("{}.p_ac", ipc.id), SignalGroup::Ipc));
            signal_names.push((format!("{}.p_dc", ipc.id), SignalGroup::Ipc));
            signal_names.push((format!("{}.w_t", ipc.id), SignalGroup::Ipc));
        }
        for (g, sub) in sys.scn.network.ac.iter().enumerate() {
            for bus in &sys.scn.network.ac[g].buses {
                signal_names.push((
                    format!("{}.{}.v_mag", sub.id, bus.id),
                    SignalGroup::BusVoltage,
                ));
            }
        }
        let n_signals = signal_names.len();
        let pending = sys.scn.events.clone();
        let n_gfl = sys.scn.gfl_sources.len();
        let n_ipc = sys.scn.ipcs.len();
        Ok(Self {
            scratch: sys.new_scratch(),
            sys,
            x,
            t: 0.0,
            step: 0,
            pending,
            next_event: 0,
            time: Vec::new(),
            signal_names,
            signal_values: vec![Vec::new(); n_signals],
            event_log: Vec::new(),
            warnings: Vec::new(),
            status: None,
            settled: None,
            gfl_dead_since: vec![None; n_gfl],
            ipc_dead_since: vec![None; n_ipc],
        })
    }

    /// March to t_end, or stop early on instability. If `settle_after` is
    /// given, also watch for an equilibrium after that time and stop there.
    pub fn run(&mut self, settle_after: Option<f64>) -> Result<()> {
        let dt = self.sys.scn.options.dt_s;
        let n_steps = (self.sys.scn.options.t_end_s / dt).round() as usize;
        let record_every = self.sys.scn.options.record_every;
        // Settledness is checked on a coarse grid; the residual evaluation
        // costs a full right-hand side.
        let settle_check_every = (0.05 / dt).max(1.0) as usize;

        for step in 0..=n_steps {
            self.step = step;
            self.t = step as f64 * dt;
            self.apply_due_events(dt);

            let frame = match self.eval_frame() {
                Ok(f) => f,
                Err(e) => {
                    self.status = Some(SimStatus::Unstable {
                        t_s: self.t,
                        reason: InstabilityReason::NetworkFailure {
                            detail: e.to_string(),
                        },
                    });
                    return Ok(());
                }
            };
            if step % record_every == 0 || step == n_steps {
                self.record(&frame);
            }
            if let Some(reason) = self.detect(&frame) {
                self.status = Some(SimStatus::Unstable {
                    t_s: self.t,
                    reason,
                });
                return Ok(());
            }
            if let Some(after) = settle_after {
                if self.t >= after && step % settle_check_every == 0 {
                    let res = residual_norm(self.sys, &self.x)?;
                    if res < self.sys.scn.options.settle_tol {
                        self.settled = Some(Snapshot {
                            t_s: self.t,
                            state: self.x.clone(),
                            residual_norm: res,
                        });
                        self.status = Some(SimStatus::Completed);
                        return Ok(());
                    }
                }
            }
            if step == n_steps {
                break;
            }

            if let Err(e) = self.rk4_step(dt) {
                self.status = Some(SimStatus::Unstable {
                    t_s: self.t,
                    reason: InstabilityReason::NetworkFailure {
                        detail: e.to_string(),
                    },
                });
                return Ok(());
            }
        }
        self.status = Some(SimStatus::Completed);
        Ok(())
    }

    fn rk4_step(&mut self, dt: f64) -> Result<()> {
        let sys = &*self.sys;
        let x = &self.x;
        let (k1, _) = sys.derivatives(x, &mut self.scratch)?;
        let (k2, _) = sys.derivatives(&(x + &k1 * (dt / 2.0)), &mut self.scratch)?;
        let (k3, _) = sys.derivatives(&(x + &k2 * (dt / 2.0)), &mut self.scratch)?;
        let (k4, _) = sys.derivatives(&(x + &k3 * dt), &mut self.scratch)?;
        self.x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        Ok(())
    }

    fn eval_frame(&mut self) -> Result<super::system::OutputFrame> {
        let (_, frame) = self.sys.derivatives(&self.x, &mut self.scratch)?;
        Ok(frame)
    }

    fn record(&mut self, frame: &super::system::OutputFrame) {
        self.time.push(self.t);
        let mut col = 0usize;
        for g in 0..frame.subgrid_omega.len() {
            self.signal_values[col].push(frame.subgrid_omega[g]);
            col += 1;
        }
        for f in &frame.ipc {
            self.signal_values[col].push(f.omega);
            col += 1;
        }
        for net in &frame.dc_node_v {
            for v in net {
                self.signal_values[col].push(*v);
                col += 1;
            }
        }
        for f in &frame.ipc {
            self.signal_values[col].push(f.p_ac);
            col += 1;
            self.signal_values[col].push(f.p_dc);
            col += 1;
            self.signal_values[col].push(f.w_t);
            col += 1;
        }
        for sub in &frame.ac_bus_vmag {
            for v in sub {
                self.signal_values[col].push(*v);
                col += 1;
            }
        }
        debug_assert_eq!(col, self.signal_names.len());
    }

    fn detect(&mut self, frame: &super::system::OutputFrame) -> Option<InstabilityReason> {
        let scn = &self.sys.scn;
        let f_lim = scn.options.freq_excursion_pu;
        let v_lim = scn.options.dc_excursion_pu;
        for (k, s) in scn.ac_sources.iter().enumerate() {
            if s.connected && (frame.source_omega[k] - 1.0).abs() > f_lim {
                return Some(InstabilityReason::FrequencyExcursion {
                    entity: s.id.clone(),
                    omega_pu: frame.source_omega[k],
                });
            }
        }
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            if ipc.controller.forms_ac()
                && ipc.ac_connected
                && (frame.ipc[k].omega - 1.0).abs() > f_lim
            {
                return Some(InstabilityReason::FrequencyExcursion {
                    entity: ipc.id.clone(),
                    omega_pu: frame.ipc[k].omega,
                });
            }
            if frame.ipc[k].w_t <= 0.0 {
                return Some(InstabilityReason::EnergyDepleted {
                    ipc: ipc.id.clone(),
                });
            }
        }
        for (g, net) in frame.dc_node_v.iter().enumerate() {
            for (n, v) in net.iter().enumerate() {
                // Only energized nodes count; a fully disconnected DC net
                // reads nominal from its formers anyway.
                if (v - 1.0).abs() > v_lim {
                    return Some(InstabilityReason::DcVoltageExcursion {
                        node: format!(
                            "{}.{}",
                            scn.network.dc[g].id, scn.network.dc[g].nodes[n].id
                        ),
                        v_pu: *v,
                    });
                }
            }
        }
        // PLL dead-bus persistence.
        for (k, s) in scn.gfl_sources.iter().enumerate() {
            if !s.connected {
                self.gfl_dead_since[k] = None;
                continue;
            }
            if frame.gfl_dead[k] {
                let since = *self.gfl_dead_since[k].get_or_insert(self.t);
                if self.t - since >= s.pll.dead_bus_window_s {
                    return Some(InstabilityReason::PllLossOfSync {
                        entity: s.id.clone(),
                    });
                }
            } else {
                self.gfl_dead_since[k] = None;
            }
        }
        for (k, ipc) in scn.ipcs.iter().enumerate() {
            if frame.ipc[k].pll_dead && ipc.ac_connected {
                let since = *self.ipc_dead_since[k].get_or_insert(self.t);
                let window = match &ipc.controller {
                    ControllerConfig::DcGfm(c) => c.pll.dead_bus_window_s,
                    _ => 0.02,
                };
                if self.t - since >= window {
                    return Some(InstabilityReason::PllLossOfSync {
                        entity: ipc.id.clone(),
                    });
                }
            } else {
                self.ipc_dead_since[k] = None;
            }
        }
        None
    }

    fn apply_due_events(&mut self, dt: f64) {
        while self.next_event < self.pending.len() {
            let ev = self.pending[self.next_event].clone();
            let snapped = (ev.t_s / dt).round() * dt;
            if snapped > self.t + dt * 0.5 {
                break;
            }
            self.next_event += 1;
            let description = self.apply_event(&ev.action);
            self.event_log.push(AppliedEvent {
                requested_t_s: ev.t_s,
                applied_t_s: self.t,
                snap_distance_s: (ev.t_s - self.t).abs(),
                description,
            });
        }
    }

    fn apply_event(&mut self, action: &EventAction) -> String {
        let scn = &mut self.sys.scn;
        match action {
            EventAction::SetLoad { target, p_pu } => {
                if let Some(i) = scn.loads.iter().position(|l| l.id == *target) {
                    scn.loads[i].p_load_pu = *p_pu;
                }
                format!("set_load {target} = {p_pu}")
            }
            EventAction::SetSetpoint {
                target,
                field,
                value,
            } => {
                apply_setpoint(scn, target, *field, *value);
                format!("set_setpoint {target}.{field:?} = {value}")
            }
            EventAction::DisconnectDevice { target } => {
                set_connected(scn, target, false);
                format!("disconnect {target}")
            }
            EventAction::ReconnectDevice { target } => {
                set_connected(scn, target, true);
                // Re-align stateful devices with the grid they rejoin.
                self.relock_device(target);
                format!("reconnect {target}")
            }
            EventAction::DisconnectIpcTerminal { target, terminal } => {
                if let Some(i) = scn.ipcs.iter().position(|u| u.id == *target) {
                    match terminal {
                        TerminalSide::Ac => scn.ipcs[i].ac_connected = false,
                        TerminalSide::Dc => scn.ipcs[i].dc_connected = false,
                    }
                }
                format!("disconnect {target} {terminal:?} terminal")
            }
            EventAction::ReconnectIpcTerminal { target, terminal } => {
                if let Some(i) = scn.ipcs.iter().position(|u| u.id == *target) {
                    match terminal {
                        TerminalSide::Ac => scn.ipcs[i].ac_connected = true,
                        TerminalSide::Dc => scn.ipcs[i].dc_connected = true,
                    }
                }
                format!("reconnect {target} {terminal:?} terminal")
            }
        }
    }

    /// On reconnection, snap a device's angle-like states onto the current
    /// network solution so it rejoins smoothly.
    fn relock_device(&mut self, target: &str) {
        let frame = match self.eval_frame() {
            Ok(f) => f,
            Err(_) => return,
        };
        let sys = &self.sys;
        if let Some(k) = sys.scn.ac_sources.iter().position(|s| s.id == *target) {
            let s = &sys.scn.ac_sources[k];
            let i = sys.state_index(StateKind::SourceTheta { src: k }).unwrap();
            self.x[i] = frame.ac_bus_angle[s.bus.subgrid][s.bus.bus];
        }
        if let Some(k) = sys.scn.gfl_sources.iter().position(|s| s.id == *target) {
            let s = &sys.scn.gfl_sources[k];
            let it = sys.state_index(StateKind::PllTheta { gfl: k }).unwrap();
            let ii = sys.state_index(StateKind::PllInt { gfl: k }).unwrap();
            self.x[it] = frame.ac_bus_angle[s.bus.subgrid][s.bus.bus];
            self.x[ii] = frame.subgrid_omega[s.bus.subgrid] - 1.0;
        }
    }

    pub fn into_result(self) -> SimResult {
        let signals = self
            .signal_names
            .into_iter()
            .zip(self.signal_values)
            .map(|((name, group), values)| Signal {
                name,
                group,
                values,
            })
            .collect();
        SimResult {
            status: self.status.unwrap_or(SimStatus::Completed),
            time_s: self.time,
            signals,
            event_log: self.event_log,
            warnings: self.warnings,
            final_state: self.x.iter().copied().collect(),
            state_labels: self.sys.labels(),
        }
    }
}

pub(super) fn apply_setpoint(scn: &mut Scenario, target: &str, field: SetpointField, value: f64) {
    if let Some(s) = scn.ac_sources.iter_mut().find(|s| s.id == *target) {
        match field {
            SetpointField::PSet => s.p_set_pu = value,
            SetpointField::OmegaSet => s.omega_set_pu = value,
            SetpointField::VAcSet => s.voltage_pu = value,
            _ => {}
        }
        return;
    }
    if let Some(s) = scn.dc_sources.iter_mut().find(|s| s.id == *target) {
        match field {
            SetpointField::PSet => s.p_set_pu = value,
            SetpointField::VDcSet => s.v_set_pu = value,
            _ => {}
        }
        return;
    }
    if let Some(s) = scn.gfl_sources.iter_mut().find(|s| s.id == *target) {
        match field {
            SetpointField::PSet => s.p_cmd_pu = value,
            SetpointField::QSet => s.q_cmd_pu = value,
            _ => {}
        }
        return;
    }
    if let Some(u) = scn.ipcs.iter_mut().find(|u| u.id == *target) {
        match &mut u.controller {
            ControllerConfig::AcGfm(c) => match field {
                SetpointField::PSet => c.p_ac_set = value,
                SetpointField::OmegaSet => c.omega_set = value,
                SetpointField::VAcSet => c.v_ac_set = value,
                SetpointField::WSet => c.w_set = value,
                SetpointField::QSet => c.q_set = value,
                _ => {}
            },
            ControllerConfig::DcGfm(c) => match field {
                SetpointField::PSet | SetpointField::PDcSet => c.p_dc_set = value,
                SetpointField::VDcSet => c.v_dc_set = value,
                SetpointField::WSet => c.w_set = value,
                SetpointField::QSet => c.q_set = value,
                _ => {}
            },
            ControllerConfig::HybridDroop(c) => match field {
                SetpointField::PSet => {
                    c.p_ac_set = value;
                    c.p_dc_set = value;
                }
                SetpointField::PDcSet => c.p_dc_set = value,
                SetpointField::OmegaSet => c.omega_set = value,
                SetpointField::VDcSet => c.v_dc_set = value,
                SetpointField::VAcSet => c.v_ac_set = value,
                SetpointField::WSet => c.w_set = value,
                SetpointField::QSet => c.q_set = value,
            },
            ControllerConfig::EnergyBalancing(c) => match field {
                SetpointField::OmegaSet => c.omega_set = value,
                SetpointField::VDcSet => c.v_dc_set = value,
                SetpointField::VAcSet => c.v_ac_set = value,
                SetpointField::WSet => c.w_set = value,
                SetpointField::QSet => c.q_set = value,
                _ => {}
            },
        }
    }
}

fn set_connected(scn: &mut Scenario, target: &str, value: bool) {
    if let Some(s) = scn.ac_sources.iter_mut().find(|s| s.id == *target) {
        s.connected = value;
    } else if let Some(s) = scn.dc_sources.iter_mut().find(|s| s.id == *target) {
        s.connected = value;
    } else if let Some(s) = scn.gfl_sources.iter_mut().find(|s| s.id == *target) {
        s.connected = value;
    } else if let Some(l) = scn.loads.iter_mut().find(|l| l.id == *target) {
        l.connected = value;
    } else if let Some(u) = scn.ipcs.iter_mut().find(|u| u.id == *target) {
        u.ac_connected = value;
        u.dc_connected = value;
    }
}
