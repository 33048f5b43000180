//! Declarative scenario file format.
//!
//! One TOML document describes bases, subgrids, devices, converters, events
//! and options. The schema is fail-closed: unknown keys are rejected
//! everywhere. Terminals are referenced as `subgrid.bus` strings and
//! resolved during conversion.

use serde::{Deserialize, Serialize};

use gogsim_core::device::{
    AcBusRef, AcGfmSource, DcGfmSource, DcNodeRef, LoadTerminal, PllGflSource, PllParams,
    PowerLoad,
};
use gogsim_core::ipc::{
    AcGfmCfg, ControllerConfig, DcGfmCfg, EnergyBalancingCfg, HybridDroopCfg, IpcUnit, MmcParams,
    PiGains,
};
use gogsim_core::network::{
    AcBus, AcLine, AcSubgrid, CableBranch, DcCable, DcNode, DcSubgrid, Fidelity, NetworkModel,
};
use gogsim_core::per_unit::PerUnitBase;
use gogsim_core::sim::{Event, EventAction, Scenario, SetpointField, SimOptions, TerminalSide};

pub const SCHEMA_ID: &str = "gog-scenario/1";

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Versioned schema identifier; must equal `gog-scenario/1`.
    pub schema: String,
    pub base: BaseSection,
    #[serde(default)]
    pub options: OptionsSection,
    #[serde(default, rename = "ac_subgrid")]
    pub ac_subgrids: Vec<AcSubgridSection>,
    #[serde(default, rename = "dc_subgrid")]
    pub dc_subgrids: Vec<DcSubgridSection>,
    #[serde(default, rename = "ac_source")]
    pub ac_sources: Vec<AcSourceSection>,
    #[serde(default, rename = "dc_source")]
    pub dc_sources: Vec<DcSourceSection>,
    #[serde(default, rename = "gfl_source")]
    pub gfl_sources: Vec<GflSourceSection>,
    #[serde(default, rename = "load")]
    pub loads: Vec<LoadSection>,
    #[serde(default, rename = "ipc")]
    pub ipcs: Vec<IpcSection>,
    #[serde(default, rename = "event")]
    pub events: Vec<EventSection>,
    #[serde(default)]
    pub dispatch: Option<DispatchSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    pub s_mw: f64,
    pub v_ac_kv: f64,
    pub v_dc_kv: f64,
    pub f_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSection {
    #[serde(default = "OptionsSection::default_dt")]
    pub dt_s: f64,
    #[serde(default = "OptionsSection::default_t_end")]
    pub t_end_s: f64,
    #[serde(default = "OptionsSection::default_fidelity")]
    pub fidelity: String,
    #[serde(default = "OptionsSection::default_record_every")]
    pub record_every: usize,
}

impl OptionsSection {
    fn default_dt() -> f64 {
        1e-4
    }
    fn default_t_end() -> f64 {
        6.0
    }
    fn default_fidelity() -> String {
        "dynamic".into()
    }
    fn default_record_every() -> usize {
        10
    }
}

impl Default for OptionsSection {
    fn default() -> Self {
        Self {
            dt_s: Self::default_dt(),
            t_end_s: Self::default_t_end(),
            fidelity: Self::default_fidelity(),
            record_every: Self::default_record_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcSubgridSection {
    pub id: String,
    pub buses: Vec<String>,
    #[serde(default, rename = "line")]
    pub lines: Vec<LineSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub from: String,
    pub to: String,
    pub length_km: f64,
    pub r_ohm_per_km: f64,
    pub l_mh_per_km: f64,
    pub c_uf_per_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcSubgridSection {
    pub id: String,
    pub nodes: Vec<String>,
    #[serde(default, rename = "cable")]
    pub cables: Vec<CableSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CableSection {
    pub from: String,
    pub to: String,
    pub length_km: f64,
    pub r1_ohm_per_km: f64,
    pub l1_mh_per_km: f64,
    pub r2_ohm_per_km: f64,
    pub l2_mh_per_km: f64,
    pub r3_ohm_per_km: f64,
    pub l3_mh_per_km: f64,
    pub c_uf_per_km: f64,
    pub g_us_per_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcSourceSection {
    pub id: String,
    pub bus: String,
    #[serde(default = "default_one")]
    pub voltage_pu: f64,
    #[serde(default = "default_one")]
    pub omega_set_pu: f64,
    pub p_set_pu: f64,
    pub droop_pu: f64,
    #[serde(default = "default_true")]
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcSourceSection {
    pub id: String,
    pub node: String,
    #[serde(default = "default_one")]
    pub v_set_pu: f64,
    pub p_set_pu: f64,
    pub droop_pu: f64,
    #[serde(default = "default_true")]
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GflSourceSection {
    pub id: String,
    pub bus: String,
    pub p_pu: f64,
    #[serde(default)]
    pub q_pu: f64,
    #[serde(default = "GflSourceSection::default_bw")]
    pub pll_bandwidth_hz: f64,
    #[serde(default = "GflSourceSection::default_damping")]
    pub pll_damping: f64,
    #[serde(default = "default_true")]
    pub connected: bool,
}

impl GflSourceSection {
    fn default_bw() -> f64 {
        20.0
    }
    fn default_damping() -> f64 {
        0.707
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    pub id: String,
    pub terminal: String,
    pub p_pu: f64,
    #[serde(default)]
    pub q_pu: f64,
    #[serde(default)]
    pub k_freq: f64,
    #[serde(default = "default_true")]
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcSection {
    pub id: String,
    pub ac_bus: String,
    pub dc_node: String,
    pub s_rated_mw: f64,
    pub modules_per_arm: u32,
    pub module_v_kv: f64,
    pub module_c_mf: f64,
    pub coupling_r_pu: f64,
    pub coupling_l_pu: f64,
    pub controller: ControllerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: String,
    #[serde(default = "default_one")]
    pub omega_set: f64,
    #[serde(default = "default_one")]
    pub v_dc_set: f64,
    #[serde(default)]
    pub p_ac_set: f64,
    #[serde(default)]
    pub p_dc_set: f64,
    #[serde(default)]
    pub q_set: f64,
    #[serde(default = "default_one")]
    pub v_ac_set: f64,
    /// Energy setpoint in pu·s; defaults to the nominal stored energy of
    /// the converter on the system base.
    #[serde(default)]
    pub w_set_pu_s: Option<f64>,
    #[serde(default)]
    pub k_p_ac: f64,
    #[serde(default)]
    pub k_q_ac: f64,
    #[serde(default)]
    pub k_p_dc: f64,
    #[serde(default)]
    pub k_w_ac: f64,
    #[serde(default)]
    pub k_w_dc: f64,
    #[serde(default)]
    pub tau_ac_s: f64,
    #[serde(default)]
    pub tau_dc_s: f64,
    #[serde(default = "ControllerSection::default_pi_kp")]
    pub energy_pi_kp: f64,
    #[serde(default = "ControllerSection::default_pi_ki")]
    pub energy_pi_ki: f64,
}

impl ControllerSection {
    // Roughly 2 Hz closed-loop bandwidth on the stored-energy regulation
    // of the single-port controls.
    fn default_pi_kp() -> f64 {
        17.6
    }
    fn default_pi_ki() -> f64 {
        158.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    pub t_s: f64,
    pub action: String,
    pub target: String,
    #[serde(default)]
    pub field: Option<String>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub terminal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchSection {
    #[serde(default = "default_one")]
    pub omega_schedule: f64,
    #[serde(default = "default_one")]
    pub v_dc_schedule: f64,
    #[serde(default = "DispatchSection::default_v_bound")]
    pub v_bound_pu: f64,
    #[serde(default, rename = "transfer")]
    pub transfers: Vec<TransferSection>,
    #[serde(default, rename = "slack")]
    pub slacks: Vec<SlackSection>,
}

impl DispatchSection {
    fn default_v_bound() -> f64 {
        0.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub ipc: String,
    pub p_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackSection {
    pub subgrid: String,
    pub device: String,
}

// ---------------------------------------------------------------------------
// Conversion to the core scenario
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ParsedScenario {
    pub scenario: Scenario,
    pub dispatch: Option<gogsim_core::dispatch::DispatchProblem>,
}

pub fn parse_str(text: &str) -> anyhow::Result<ScenarioFile> {
    let file: ScenarioFile = toml::from_str(text)?;
    if file.schema != SCHEMA_ID {
        anyhow::bail!(
            "unsupported schema id {:?}; this build reads {SCHEMA_ID:?}",
            file.schema
        );
    }
    Ok(file)
}

pub fn to_scenario(file: &ScenarioFile) -> anyhow::Result<ParsedScenario> {
    let base = PerUnitBase {
        s_mw: file.base.s_mw,
        v_ac_kv: file.base.v_ac_kv,
        v_dc_kv: file.base.v_dc_kv,
        f_hz: file.base.f_hz,
    };

    let find_bus = |spec: &str| -> anyhow::Result<AcBusRef> {
        let (sg, bus) = spec
            .split_once('.')
            .ok_or_else(|| anyhow::anyhow!("bus reference {spec:?} must be subgrid.bus"))?;
        let subgrid = file
            .ac_subgrids
            .iter()
            .position(|s| s.id == sg)
            .ok_or_else(|| anyhow::anyhow!("unknown AC subgrid {sg:?} in {spec:?}"))?;
        let bus_idx = file.ac_subgrids[subgrid]
            .buses
            .iter()
            .position(|b| b == bus)
            .ok_or_else(|| anyhow::anyhow!("unknown bus {bus:?} in subgrid {sg:?}"))?;
        Ok(AcBusRef {
            subgrid,
            bus: bus_idx,
        })
    };
    let find_node = |spec: &str| -> anyhow::Result<DcNodeRef> {
        let (sg, node) = spec
            .split_once('.')
            .ok_or_else(|| anyhow::anyhow!("node reference {spec:?} must be subgrid.node"))?;
        let subgrid = file
            .dc_subgrids
            .iter()
            .position(|s| s.id == sg)
            .ok_or_else(|| anyhow::anyhow!("unknown DC subgrid {sg:?} in {spec:?}"))?;
        let node_idx = file.dc_subgrids[subgrid]
            .nodes
            .iter()
            .position(|n| n == node)
            .ok_or_else(|| anyhow::anyhow!("unknown node {node:?} in subgrid {sg:?}"))?;
        Ok(DcNodeRef {
            subgrid,
            node: node_idx,
        })
    };

    let mut ac = Vec::new();
    for s in &file.ac_subgrids {
        let mut lines = Vec::new();
        for l in &s.lines {
            let from = s
                .buses
                .iter()
                .position(|b| *b == l.from)
                .ok_or_else(|| anyhow::anyhow!("{}: unknown line endpoint {:?}", s.id, l.from))?;
            let to = s
                .buses
                .iter()
                .position(|b| *b == l.to)
                .ok_or_else(|| anyhow::anyhow!("{}: unknown line endpoint {:?}", s.id, l.to))?;
            lines.push(AcLine {
                from,
                to,
                length_km: l.length_km,
                r_ohm_per_km: l.r_ohm_per_km,
                l_mh_per_km: l.l_mh_per_km,
                c_uf_per_km: l.c_uf_per_km,
            });
        }
        ac.push(AcSubgrid {
            id: s.id.clone(),
            buses: s.buses.iter().map(|b| AcBus { id: b.clone() }).collect(),
            lines,
        });
    }
    let mut dc = Vec::new();
    for s in &file.dc_subgrids {
        let mut cables = Vec::new();
        for c in &s.cables {
            let from = s
                .nodes
                .iter()
                .position(|b| *b == c.from)
                .ok_or_else(|| anyhow::anyhow!("{}: unknown cable endpoint {:?}", s.id, c.from))?;
            let to = s
                .nodes
                .iter()
                .position(|b| *b == c.to)
                .ok_or_else(|| anyhow::anyhow!("{}: unknown cable endpoint {:?}", s.id, c.to))?;
            cables.push(DcCable {
                from,
                to,
                length_km: c.length_km,
                branches: [
                    CableBranch {
                        r_ohm_per_km: c.r1_ohm_per_km,
                        l_mh_per_km: c.l1_mh_per_km,
                    },
                    CableBranch {
                        r_ohm_per_km: c.r2_ohm_per_km,
                        l_mh_per_km: c.l2_mh_per_km,
                    },
                    CableBranch {
                        r_ohm_per_km: c.r3_ohm_per_km,
                        l_mh_per_km: c.l3_mh_per_km,
                    },
                ],
                c_uf_per_km: c.c_uf_per_km,
                g_us_per_km: c.g_us_per_km,
            });
        }
        dc.push(DcSubgrid {
            id: s.id.clone(),
            nodes: s.nodes.iter().map(|n| DcNode { id: n.clone() }).collect(),
            cables,
        });
    }

    let fidelity = match file.options.fidelity.as_str() {
        "analytic" => Fidelity::Analytic,
        "dynamic" => Fidelity::Dynamic,
        other => anyhow::bail!("unknown fidelity {other:?}; use analytic or dynamic"),
    };

    let mut scenario = Scenario {
        network: NetworkModel { base, ac, dc },
        fidelity,
        ac_sources: Vec::new(),
        dc_sources: Vec::new(),
        gfl_sources: Vec::new(),
        loads: Vec::new(),
        ipcs: Vec::new(),
        events: Vec::new(),
        options: SimOptions {
            dt_s: file.options.dt_s,
            t_end_s: file.options.t_end_s,
            record_every: file.options.record_every,
            ..SimOptions::default()
        },
    };

    for s in &file.ac_sources {
        scenario.ac_sources.push(AcGfmSource {
            id: s.id.clone(),
            bus: find_bus(&s.bus)?,
            voltage_pu: s.voltage_pu,
            omega_set_pu: s.omega_set_pu,
            p_set_pu: s.p_set_pu,
            droop_pu: s.droop_pu,
            connected: s.connected,
        });
    }
    for s in &file.dc_sources {
        scenario.dc_sources.push(DcGfmSource {
            id: s.id.clone(),
            node: find_node(&s.node)?,
            v_set_pu: s.v_set_pu,
            p_set_pu: s.p_set_pu,
            droop_pu: s.droop_pu,
            connected: s.connected,
        });
    }
    for s in &file.gfl_sources {
        scenario.gfl_sources.push(PllGflSource {
            id: s.id.clone(),
            bus: find_bus(&s.bus)?,
            p_cmd_pu: s.p_pu,
            q_cmd_pu: s.q_pu,
            pll: PllParams::with_bandwidth(base.omega_rad(), s.pll_bandwidth_hz, s.pll_damping),
            connected: s.connected,
        });
    }
    for l in &file.loads {
        let terminal = if let Ok(bus) = find_bus(&l.terminal) {
            LoadTerminal::Ac(bus)
        } else if let Ok(node) = find_node(&l.terminal) {
            LoadTerminal::Dc(node)
        } else {
            anyhow::bail!("{}: terminal {:?} matches no AC bus or DC node", l.id, l.terminal);
        };
        scenario.loads.push(PowerLoad {
            id: l.id.clone(),
            terminal,
            p_load_pu: l.p_pu,
            q_load_pu: l.q_pu,
            k_freq: l.k_freq,
            connected: l.connected,
        });
    }
    for u in &file.ipcs {
        let mmc = MmcParams {
            s_rated_mw: u.s_rated_mw,
            n_arm: u.modules_per_arm,
            c_sm_f: u.module_c_mf * 1e-3,
            v_sm_kv: u.module_v_kv,
            coupling_r_pu: u.coupling_r_pu,
            coupling_l_pu: u.coupling_l_pu,
        };
        let w_default = mmc.w_nom_pu_s(&base);
        let c = &u.controller;
        let w_set = c.w_set_pu_s.unwrap_or(w_default);
        let controller = match c.kind.as_str() {
            "ac_gfm" => ControllerConfig::AcGfm(AcGfmCfg {
                omega_set: c.omega_set,
                p_ac_set: c.p_ac_set,
                q_set: c.q_set,
                v_ac_set: c.v_ac_set,
                w_set,
                k_p_ac: c.k_p_ac,
                k_q_ac: c.k_q_ac,
                tau_ac_s: c.tau_ac_s,
                energy_pi: PiGains {
                    k_p: c.energy_pi_kp,
                    k_i: c.energy_pi_ki,
                },
            }),
            "dc_gfm" => ControllerConfig::DcGfm(DcGfmCfg {
                v_dc_set: c.v_dc_set,
                p_dc_set: c.p_dc_set,
                q_set: c.q_set,
                w_set,
                k_p_dc: c.k_p_dc,
                tau_dc_s: c.tau_dc_s,
                tau_ac_s: c.tau_ac_s,
                energy_pi: PiGains {
                    k_p: c.energy_pi_kp,
                    k_i: c.energy_pi_ki,
                },
                pll: PllParams::with_bandwidth(base.omega_rad(), 20.0, 0.707),
            }),
            "hybrid_droop" => ControllerConfig::HybridDroop(HybridDroopCfg {
                omega_set: c.omega_set,
                v_dc_set: c.v_dc_set,
                p_ac_set: c.p_ac_set,
                p_dc_set: c.p_dc_set,
                q_set: c.q_set,
                v_ac_set: c.v_ac_set,
                w_set,
                k_p_ac: c.k_p_ac,
                k_q_ac: c.k_q_ac,
                k_p_dc: c.k_p_dc,
                k_w_ac: c.k_w_ac,
                k_w_dc: c.k_w_dc,
                tau_dc_s: c.tau_dc_s,
            }),
            "energy_balancing" => ControllerConfig::EnergyBalancing(EnergyBalancingCfg {
                omega_set: c.omega_set,
                v_dc_set: c.v_dc_set,
                q_set: c.q_set,
                v_ac_set: c.v_ac_set,
                w_set,
                k_p_ac: c.k_p_ac,
                k_q_ac: c.k_q_ac,
                k_p_dc: c.k_p_dc,
                k_w_ac: c.k_w_ac,
                k_w_dc: c.k_w_dc,
                tau_ac_s: c.tau_ac_s,
                tau_dc_s: c.tau_dc_s,
            }),
            other => anyhow::bail!("{}: unknown controller kind {other:?}", u.id),
        };
        let ac_ref = find_bus(&u.ac_bus)?;
        let dc_ref = find_node(&u.dc_node)?;
        scenario.ipcs.push(IpcUnit {
            id: u.id.clone(),
            ac_subgrid: ac_ref.subgrid,
            ac_bus: ac_ref.bus,
            dc_subgrid: dc_ref.subgrid,
            dc_node: dc_ref.node,
            mmc,
            controller,
            ac_connected: true,
            dc_connected: true,
        });
    }
    for (k, e) in file.events.iter().enumerate() {
        let action = match e.action.as_str() {
            "set_load" => EventAction::SetLoad {
                target: e.target.clone(),
                p_pu: e
                    .value
                    .ok_or_else(|| anyhow::anyhow!("event {k}: set_load needs value"))?,
            },
            "set_setpoint" => {
                let field = match e.field.as_deref() {
                    Some("p_set") => SetpointField::PSet,
                    Some("p_dc_set") => SetpointField::PDcSet,
                    Some("omega_set") => SetpointField::OmegaSet,
                    Some("v_dc_set") => SetpointField::VDcSet,
                    Some("v_ac_set") => SetpointField::VAcSet,
                    Some("w_set") => SetpointField::WSet,
                    Some("q_set") => SetpointField::QSet,
                    Some(other) => anyhow::bail!("event {k}: unknown field {other:?}"),
                    None => anyhow::bail!("event {k}: set_setpoint needs field"),
                };
                EventAction::SetSetpoint {
                    target: e.target.clone(),
                    field,
                    value: e
                        .value
                        .ok_or_else(|| anyhow::anyhow!("event {k}: set_setpoint needs value"))?,
                }
            }
            "disconnect_device" => EventAction::DisconnectDevice {
                target: e.target.clone(),
            },
            "reconnect_device" => EventAction::ReconnectDevice {
                target: e.target.clone(),
            },
            "disconnect_ipc_terminal" | "reconnect_ipc_terminal" => {
                let terminal = match e.terminal.as_deref() {
                    Some("ac") => TerminalSide::Ac,
                    Some("dc") => TerminalSide::Dc,
                    _ => anyhow::bail!("event {k}: terminal must be \"ac\" or \"dc\""),
                };
                if e.action == "disconnect_ipc_terminal" {
                    EventAction::DisconnectIpcTerminal {
                        target: e.target.clone(),
                        terminal,
                    }
                } else {
                    EventAction::ReconnectIpcTerminal {
                        target: e.target.clone(),
                        terminal,
                    }
                }
            }
            other => anyhow::bail!("event {k}: unknown action {other:?}"),
        };
        scenario.events.push(Event { t_s: e.t_s, action });
    }

    let dispatch = file.dispatch.as_ref().map(|d| {
        let mut problem = gogsim_core::dispatch::DispatchProblem {
            omega_schedule: d.omega_schedule,
            v_dc_schedule: d.v_dc_schedule,
            v_bound_pu: d.v_bound_pu,
            ..Default::default()
        };
        for t in &d.transfers {
            problem.transfers.push((t.ipc.clone(), t.p_pu));
        }
        for s in &d.slacks {
            if file.ac_subgrids.iter().any(|g| g.id == s.subgrid) {
                problem.ac_slack.push((s.subgrid.clone(), s.device.clone()));
            } else {
                problem.dc_slack.push((s.subgrid.clone(), s.device.clone()));
            }
        }
        problem
    });

    Ok(ParsedScenario { scenario, dispatch })
}

pub fn load(path: &std::path::Path) -> anyhow::Result<ParsedScenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let file = parse_str(&text)?;
    to_scenario(&file)
}
