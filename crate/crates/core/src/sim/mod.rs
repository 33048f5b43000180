//! Scenario description, compiled simulation system, and the fixed-step
//! integration engine.

mod engine;
mod system;

pub use engine::{linearize, residual_norm, settle, simulate, Snapshot};
pub use system::{IpcFrame, OutputFrame, StateEntry, StateKind, System};

/// Setpoint mutation shared by the event machinery and dispatch.
pub fn apply_setpoint_public(scn: &mut Scenario, target: &str, field: SetpointField, value: f64) {
    engine::apply_setpoint(scn, target, field, value);
}

use serde::{Deserialize, Serialize};

use crate::device::{AcGfmSource, DcGfmSource, PllGflSource, PowerLoad};
use crate::error::{Error, Result};
use crate::ipc::IpcUnit;
use crate::network::{Fidelity, NetworkModel};

/// Simulation options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt_s: f64,
    pub t_end_s: f64,
    /// Record every n-th step.
    pub record_every: usize,
    /// Instability threshold on any frequency deviation from nominal.
    pub freq_excursion_pu: f64,
    /// Instability threshold on any DC node voltage deviation from nominal.
    pub dc_excursion_pu: f64,
    /// First-order tracking lag of formed DC node voltages (dynamic mode).
    pub tracking_lag_s: f64,
    /// Residual norm below which `settle` accepts an equilibrium.
    pub settle_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt_s: 1e-4,
            t_end_s: 6.0,
            record_every: 10,
            freq_excursion_pu: 0.1,
            dc_excursion_pu: 0.5,
            tracking_lag_s: 1e-3,
            settle_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSide {
    Ac,
    Dc,
}

/// Setpoint fields addressable by events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetpointField {
    /// AC power setpoint (sources, hybrid/single-port converters) or the
    /// commanded power of a grid-following source.
    PSet,
    /// DC power setpoint of a converter.
    PDcSet,
    OmegaSet,
    VDcSet,
    /// Source or converter AC voltage magnitude.
    VAcSet,
    WSet,
    QSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum EventAction {
    /// Replace the consumed power of a load (positive = consumption).
    SetLoad { target: String, p_pu: f64 },
    SetSetpoint {
        target: String,
        field: SetpointField,
        value: f64,
    },
    DisconnectDevice { target: String },
    ReconnectDevice { target: String },
    DisconnectIpcTerminal {
        target: String,
        terminal: TerminalSide,
    },
    ReconnectIpcTerminal {
        target: String,
        terminal: TerminalSide,
    },
}

impl EventAction {
    pub fn target(&self) -> &str {
        match self {
            EventAction::SetLoad { target, .. }
            | EventAction::SetSetpoint { target, .. }
            | EventAction::DisconnectDevice { target }
            | EventAction::ReconnectDevice { target }
            | EventAction::DisconnectIpcTerminal { target, .. }
            | EventAction::ReconnectIpcTerminal { target, .. } => target,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Event {
    pub t_s: f64,
    #[serde(flatten)]
    pub action: EventAction,
}

/// A complete study: network, devices, converters, events, options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub network: NetworkModel,
    pub fidelity: Fidelity,
    pub ac_sources: Vec<AcGfmSource>,
    pub dc_sources: Vec<DcGfmSource>,
    pub gfl_sources: Vec<PllGflSource>,
    pub loads: Vec<PowerLoad>,
    pub ipcs: Vec<IpcUnit>,
    pub events: Vec<Event>,
    pub options: SimOptions,
}

/// Why a run was classified unstable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstabilityReason {
    FrequencyExcursion { entity: String, omega_pu: f64 },
    DcVoltageExcursion { node: String, v_pu: f64 },
    EnergyDepleted { ipc: String },
    NetworkFailure { detail: String },
    PllLossOfSync { entity: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SimStatus {
    Completed,
    Unstable {
        t_s: f64,
        reason: InstabilityReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalGroup {
    Frequency,
    DcVoltage,
    Ipc,
    BusVoltage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Signal {
    pub name: String,
    pub group: SignalGroup,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppliedEvent {
    pub requested_t_s: f64,
    pub applied_t_s: f64,
    pub snap_distance_s: f64,
    pub description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub status: SimStatus,
    pub time_s: Vec<f64>,
    pub signals: Vec<Signal>,
    pub event_log: Vec<AppliedEvent>,
    pub warnings: Vec<String>,
    pub final_state: Vec<f64>,
    pub state_labels: Vec<String>,
}

impl SimResult {
    pub fn signal(&self, name: &str) -> Option<&Signal> {
        self.signals.iter().find(|s| s.name == name)
    }

    pub fn last_value(&self, name: &str) -> Option<f64> {
        self.signal(name).and_then(|s| s.values.last().copied())
    }
}

impl Scenario {
    /// Structural validation: ids, references, event targets, gain
    /// conditions, integrator stability margin.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let opt = &self.options;
        if !(opt.dt_s > 0.0) || !(opt.t_end_s > 0.0) {
            return Err(Error::Validation("dt and t_end must be positive".into()));
        }
        if opt.record_every == 0 {
            return Err(Error::Validation("record_every must be at least 1".into()));
        }

        // Unique ids across everything an event could target.
        let mut ids: Vec<&str> = Vec::new();
        for id in self
            .ac_sources
            .iter()
            .map(|d| d.id.as_str())
            .chain(self.dc_sources.iter().map(|d| d.id.as_str()))
            .chain(self.gfl_sources.iter().map(|d| d.id.as_str()))
            .chain(self.loads.iter().map(|d| d.id.as_str()))
            .chain(self.ipcs.iter().map(|d| d.id.as_str()))
        {
            if ids.contains(&id) {
                return Err(Error::Validation(format!("duplicate id {id}")));
            }
            ids.push(id);
        }

        let ac_bus_ok = |sg: usize, bus: usize| -> bool {
            sg < self.network.ac.len() && bus < self.network.ac[sg].buses.len()
        };
        let dc_node_ok = |sg: usize, node: usize| -> bool {
            sg < self.network.dc.len() && node < self.network.dc[sg].nodes.len()
        };
        for d in &self.ac_sources {
            d.validate()?;
            if !ac_bus_ok(d.bus.subgrid, d.bus.bus) {
                return Err(Error::Validation(format!("{}: bus out of range", d.id)));
            }
        }
        for d in &self.dc_sources {
            d.validate()?;
            if !dc_node_ok(d.node.subgrid, d.node.node) {
                return Err(Error::Validation(format!("{}: node out of range", d.id)));
            }
        }
        for d in &self.gfl_sources {
            if !ac_bus_ok(d.bus.subgrid, d.bus.bus) {
                return Err(Error::Validation(format!("{}: bus out of range", d.id)));
            }
        }
        for d in &self.loads {
            let ok = match d.terminal {
                crate::device::LoadTerminal::Ac(r) => ac_bus_ok(r.subgrid, r.bus),
                crate::device::LoadTerminal::Dc(r) => dc_node_ok(r.subgrid, r.node),
            };
            if !ok {
                return Err(Error::Validation(format!("{}: terminal out of range", d.id)));
            }
            if !d.p_load_pu.is_finite() {
                return Err(Error::Validation(format!("{}: non-finite load", d.id)));
            }
        }
        for ipc in &self.ipcs {
            ipc.mmc.validate()?;
            ipc.controller.validate()?;
            if !ac_bus_ok(ipc.ac_subgrid, ipc.ac_bus) || !dc_node_ok(ipc.dc_subgrid, ipc.dc_node) {
                return Err(Error::Validation(format!(
                    "{}: attachment out of range",
                    ipc.id
                )));
            }
            if ipc.controller.w_set() <= 0.0 {
                return Err(Error::Validation(format!(
                    "{}: energy setpoint must be positive",
                    ipc.id
                )));
            }
        }

        // At most one voltage former per AC bus and per DC node.
        for (g, sub) in self.network.ac.iter().enumerate() {
            for b in 0..sub.buses.len() {
                let n = self
                    .ac_sources
                    .iter()
                    .filter(|s| s.connected && s.bus.subgrid == g && s.bus.bus == b)
                    .count();
                if n > 1 {
                    return Err(Error::Validation(format!(
                        "bus {}.{} formed by {n} sources",
                        sub.id, sub.buses[b].id
                    )));
                }
            }
        }
        for (g, sub) in self.network.dc.iter().enumerate() {
            for node in 0..sub.nodes.len() {
                let n = self
                    .dc_sources
                    .iter()
                    .filter(|s| s.connected && s.node.subgrid == g && s.node.node == node)
                    .count()
                    + self
                        .ipcs
                        .iter()
                        .filter(|i| {
                            i.dc_connected
                                && i.controller.forms_dc()
                                && i.dc_subgrid == g
                                && i.dc_node == node
                        })
                        .count();
                if n > 1 {
                    return Err(Error::Validation(format!(
                        "node {}.{} formed by {n} devices",
                        sub.id, sub.nodes[node].id
                    )));
                }
            }
        }

        // Events: non-decreasing times, known targets, matching fields.
        let mut last_t = f64::NEG_INFINITY;
        for (k, ev) in self.events.iter().enumerate() {
            if ev.t_s < last_t {
                return Err(Error::Validation(format!(
                    "event {k}: times must be non-decreasing"
                )));
            }
            last_t = ev.t_s;
            if ev.t_s < 0.0 || ev.t_s > opt.t_end_s {
                return Err(Error::Validation(format!(
                    "event {k}: time {} outside [0, t_end]",
                    ev.t_s
                )));
            }
            let target = ev.action.target();
            if !ids.contains(&target) {
                return Err(Error::Validation(format!(
                    "event {k}: unknown target {target}"
                )));
            }
            match &ev.action {
                EventAction::SetLoad { target, .. } => {
                    if !self.loads.iter().any(|l| l.id == *target) {
                        return Err(Error::Validation(format!(
                            "event {k}: set_load target {target} is not a load"
                        )));
                    }
                }
                EventAction::DisconnectIpcTerminal { target, .. }
                | EventAction::ReconnectIpcTerminal { target, .. } => {
                    if !self.ipcs.iter().any(|i| i.id == *target) {
                        return Err(Error::Validation(format!(
                            "event {k}: terminal event target {target} is not a converter"
                        )));
                    }
                }
                _ => {}
            }
        }

        // Dynamic fidelity: the fastest cable mode must sit inside the
        // integrator's stability region with margin.
        if self.fidelity == Fidelity::Dynamic {
            let mut lambda_max: f64 = 0.0;
            for sub in &self.network.dc {
                for cab in &sub.cables {
                    for br in &cab.branches {
                        lambda_max = lambda_max.max(br.r_ohm_per_km / (br.l_mh_per_km * 1e-3));
                    }
                    // Oscillatory branch-capacitance mode estimate.
                    let z_base = self.network.base.z_dc_ohm();
                    let c_node =
                        0.5 * cab.c_uf_per_km * 1e-6 * cab.length_km * z_base;
                    for br in &cab.branches {
                        let l = br.l_mh_per_km * 1e-3 * cab.length_km / z_base;
                        if l > 0.0 && c_node > 0.0 {
                            lambda_max = lambda_max.max(1.0 / (l * c_node).sqrt());
                        }
                    }
                }
            }
            if lambda_max * opt.dt_s > 2.5 {
                return Err(Error::Validation(format!(
                    "dt = {} too large for the fastest cable mode ({:.1} 1/s); reduce dt below {:.2e}",
                    opt.dt_s,
                    lambda_max,
                    2.5 / lambda_max
                )));
            }
        }
        Ok(())
    }

    pub fn find_load(&self, id: &str) -> Option<usize> {
        self.loads.iter().position(|l| l.id == id)
    }
}
