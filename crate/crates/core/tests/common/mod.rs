#![allow(dead_code)]

//! Shared scenario builders for integration tests: a single 500 MW
//! converter linking a 320 kV / 50 Hz AC network and a 640 kV DC link.

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
use gogsim_core::sim::{Scenario, SimOptions};

pub const W_SET: f64 = 0.049152;

pub fn ac_line(from: usize, to: usize, length_km: f64) -> AcLine {
    AcLine {
        from,
        to,
        length_km,
        r_ohm_per_km: 0.08,
        l_mh_per_km: 0.8,
        c_uf_per_km: 0.012,
    }
}

pub fn dc_cable(from: usize, to: usize, length_km: f64) -> DcCable {
    DcCable {
        from,
        to,
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
        g_us_per_km: 0.1015,
    }
}

pub fn mmc_500() -> MmcParams {
    MmcParams {
        s_rated_mw: 500.0,
        n_arm: 400,
        c_sm_f: 8e-3,
        v_sm_kv: 1.6,
        coupling_r_pu: 0.009,
        coupling_l_pu: 0.25,
    }
}

pub fn hybrid_cfg() -> ControllerConfig {
    ControllerConfig::HybridDroop(HybridDroopCfg {
        omega_set: 1.0,
        v_dc_set: 1.0,
        p_ac_set: 0.33,
        p_dc_set: 0.33,
        q_set: 0.0,
        v_ac_set: 1.0,
        w_set: W_SET,
        k_p_ac: 0.05,
        k_q_ac: 0.05,
        k_p_dc: 0.05,
        k_w_ac: 0.5,
        k_w_dc: 0.5,
        tau_dc_s: 0.01,
    })
}

pub fn energy_balancing_cfg() -> ControllerConfig {
    ControllerConfig::EnergyBalancing(EnergyBalancingCfg {
        omega_set: 1.0,
        v_dc_set: 1.0,
        q_set: 0.0,
        v_ac_set: 1.0,
        w_set: W_SET,
        k_p_ac: 0.0125,
        k_q_ac: 0.05,
        k_p_dc: 0.025,
        k_w_ac: 0.5,
        k_w_dc: 0.5,
        tau_ac_s: 0.001,
        tau_dc_s: 0.01,
    })
}

pub fn ac_gfm_cfg() -> ControllerConfig {
    ControllerConfig::AcGfm(AcGfmCfg {
        omega_set: 1.0,
        p_ac_set: 0.33,
        q_set: 0.0,
        v_ac_set: 1.0,
        w_set: W_SET,
        k_p_ac: 0.05,
        k_q_ac: 0.05,
        tau_ac_s: 0.04,
        energy_pi: PiGains {
            k_p: 17.6,
            k_i: 158.0,
        },
    })
}

pub fn dc_gfm_cfg() -> ControllerConfig {
    ControllerConfig::DcGfm(DcGfmCfg {
        v_dc_set: 1.0,
        p_dc_set: 0.33,
        q_set: 0.0,
        w_set: W_SET,
        k_p_dc: 0.05,
        tau_dc_s: 0.01,
        tau_ac_s: 1.0,
        energy_pi: PiGains {
            k_p: 17.6,
            k_i: 158.0,
        },
        pll: PllParams::default(),
    })
}

/// Single-converter test system. Buses: b1 (droop source + grid-following
/// source), b2 (load), b3 (converter). DC nodes: n1 (droop source), n2
/// (load), n3 (converter).
pub fn single_ipc_scenario(controller: ControllerConfig, fidelity: Fidelity) -> Scenario {
    let network = NetworkModel {
        base: PerUnitBase {
            s_mw: 500.0,
            v_ac_kv: 320.0,
            v_dc_kv: 640.0,
            f_hz: 50.0,
        },
        ac: vec![AcSubgrid {
            id: "ac1".into(),
            buses: vec![
                AcBus { id: "b1".into() },
                AcBus { id: "b2".into() },
                AcBus { id: "b3".into() },
            ],
            lines: vec![ac_line(0, 1, 50.0), ac_line(1, 2, 50.0)],
        }],
        dc: vec![DcSubgrid {
            id: "dc1".into(),
            nodes: vec![
                DcNode { id: "n1".into() },
                DcNode { id: "n2".into() },
                DcNode { id: "n3".into() },
            ],
            cables: vec![dc_cable(0, 1, 100.0), dc_cable(1, 2, 100.0)],
        }],
    };
    Scenario {
        network,
        fidelity,
        // The droop source stands for a large AC network; a stiff droop
        // keeps post-contingency frequency sags small.
        ac_sources: vec![AcGfmSource {
            id: "u1".into(),
            bus: AcBusRef { subgrid: 0, bus: 0 },
            voltage_pu: 1.0,
            omega_set_pu: 1.0,
            p_set_pu: 0.15,
            droop_pu: 0.004,
            connected: true,
        }],
        dc_sources: vec![DcGfmSource {
            id: "v4".into(),
            node: DcNodeRef {
                subgrid: 0,
                node: 0,
            },
            v_set_pu: 1.0,
            p_set_pu: 0.43,
            droop_pu: 0.05,
            connected: true,
        }],
        gfl_sources: vec![PllGflSource {
            id: "p2".into(),
            bus: AcBusRef { subgrid: 0, bus: 0 },
            p_cmd_pu: 0.35,
            q_cmd_pu: 0.0,
            pll: PllParams::default(),
            connected: true,
        }],
        loads: vec![
            PowerLoad {
                id: "p3".into(),
                terminal: LoadTerminal::Ac(AcBusRef { subgrid: 0, bus: 1 }),
                p_load_pu: 0.83,
                q_load_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            PowerLoad {
                id: "p5".into(),
                terminal: LoadTerminal::Dc(DcNodeRef {
                    subgrid: 0,
                    node: 1,
                }),
                p_load_pu: 0.1,
                q_load_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
        ],
        ipcs: vec![IpcUnit {
            id: "mmc".into(),
            ac_subgrid: 0,
            ac_bus: 2,
            dc_subgrid: 0,
            dc_node: 2,
            mmc: mmc_500(),
            controller,
            ac_connected: true,
            dc_connected: true,
        }],
        events: vec![],
        options: SimOptions {
            t_end_s: 1.0,
            ..SimOptions::default()
        },
    }
}

// ---------------------------------------------------------------------------
// Multi-grid builders
// ---------------------------------------------------------------------------

use gogsim_core::sim::{Event, EventAction};

pub fn mmc_1000() -> MmcParams {
    MmcParams {
        s_rated_mw: 1000.0,
        n_arm: 400,
        c_sm_f: 8e-3,
        v_sm_kv: 1.6,
        coupling_r_pu: 0.009,
        coupling_l_pu: 0.25,
    }
}

/// Nominal stored energy of the 1000 MW converter on the 1000 MW base.
pub const W_SET_GG: f64 = 0.024576;

pub fn eb_gg_cfg(k_w_ac: f64, k_w_dc: f64) -> ControllerConfig {
    ControllerConfig::EnergyBalancing(EnergyBalancingCfg {
        omega_set: 1.0,
        v_dc_set: 1.0,
        q_set: 0.0,
        v_ac_set: 1.0,
        w_set: W_SET_GG,
        k_p_ac: 0.01228,
        k_q_ac: 0.05,
        k_p_dc: 0.004,
        k_w_ac,
        k_w_dc,
        tau_ac_s: 0.001,
        tau_dc_s: 0.001,
    })
}

pub fn hybrid_gg_cfg() -> ControllerConfig {
    ControllerConfig::HybridDroop(HybridDroopCfg {
        omega_set: 1.0,
        v_dc_set: 1.0,
        p_ac_set: 0.0,
        p_dc_set: 0.0,
        q_set: 0.0,
        v_ac_set: 1.0,
        w_set: W_SET_GG,
        k_p_ac: 0.05,
        k_q_ac: 0.05,
        k_p_dc: 0.08125,
        k_w_ac: 0.4,
        k_w_dc: 0.4,
        tau_dc_s: 0.001,
    })
}

/// Two AC networks joined by two parallel two-terminal HVDC links, four
/// energy-balancing converters. `alphas` scales k_w_ac per converter with
/// k_w_dc fixed at 0.4, so alpha = k_w_ac / k_w_dc.
pub fn two_link_scenario(alphas: [f64; 4]) -> Scenario {
    let base = PerUnitBase {
        s_mw: 1000.0,
        v_ac_kv: 320.0,
        v_dc_kv: 640.0,
        f_hz: 50.0,
    };
    let ac = |tag: &str| AcSubgrid {
        id: tag.into(),
        buses: vec![
            AcBus { id: "b1".into() },
            AcBus { id: "b2".into() },
        ],
        lines: vec![ac_line(0, 1, 30.0)],
    };
    let dc = |tag: &str| DcSubgrid {
        id: tag.into(),
        nodes: vec![DcNode { id: "n1".into() }, DcNode { id: "n2".into() }],
        cables: vec![dc_cable(0, 1, 50.0)],
    };
    let ipc = |id: &str, ac_sg: usize, dc_sg: usize, dc_node: usize, alpha: f64| IpcUnit {
        id: id.into(),
        ac_subgrid: ac_sg,
        ac_bus: 1,
        dc_subgrid: dc_sg,
        dc_node,
        mmc: mmc_1000(),
        controller: eb_gg_cfg(0.4 * alpha, 0.4),
        ac_connected: true,
        dc_connected: true,
    };
    Scenario {
        network: NetworkModel {
            base,
            ac: vec![ac("ac1"), ac("ac2")],
            dc: vec![dc("dc1"), dc("dc2")],
        },
        fidelity: Fidelity::Dynamic,
        ac_sources: vec![
            AcGfmSource {
                id: "u1".into(),
                bus: AcBusRef { subgrid: 0, bus: 0 },
                voltage_pu: 1.0,
                omega_set_pu: 1.0,
                p_set_pu: 0.4,
                droop_pu: 0.05,
                connected: true,
            },
            AcGfmSource {
                id: "u2".into(),
                bus: AcBusRef { subgrid: 1, bus: 0 },
                voltage_pu: 1.0,
                omega_set_pu: 1.0,
                p_set_pu: 0.4,
                droop_pu: 0.05,
                connected: true,
            },
        ],
        dc_sources: vec![],
        gfl_sources: vec![],
        loads: vec![
            PowerLoad {
                id: "l1".into(),
                terminal: LoadTerminal::Ac(AcBusRef { subgrid: 0, bus: 1 }),
                p_load_pu: 0.4,
                q_load_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            PowerLoad {
                id: "l2".into(),
                terminal: LoadTerminal::Ac(AcBusRef { subgrid: 1, bus: 1 }),
                p_load_pu: 0.4,
                q_load_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
        ],
        ipcs: vec![
            ipc("ipc1", 0, 0, 0, alphas[0]),
            ipc("ipc2", 1, 0, 1, alphas[1]),
            ipc("ipc3", 0, 1, 0, alphas[2]),
            ipc("ipc4", 1, 1, 1, alphas[3]),
        ],
        events: vec![Event {
            t_s: 0.5,
            action: EventAction::SetLoad {
                target: "l2".into(),
                p_pu: 0.55,
            },
        }],
        options: SimOptions {
            t_end_s: 8.0,
            ..SimOptions::default()
        },
    }
}

/// Grid of grids: three AC subgrids, two three-terminal DC networks, six
/// converters running one shared dual-port control.
///
/// DC 1 joins AC1 (A), AC2 (B), AC3 (F); DC 2 joins AC1 (C), AC2 (D),
/// AC3 (E). AC3 has only grid-following generation and is formed by its
/// converters.
pub fn grid_of_grids(hybrid: bool) -> Scenario {
    let base = PerUnitBase {
        s_mw: 1000.0,
        v_ac_kv: 320.0,
        v_dc_kv: 640.0,
        f_hz: 50.0,
    };
    let ctrl = || -> ControllerConfig {
        if hybrid {
            hybrid_gg_cfg()
        } else {
            eb_gg_cfg(0.4, 0.4)
        }
    };
    let ipc = |id: &str, ac_sg: usize, ac_bus: usize, dc_sg: usize, dc_node: usize| IpcUnit {
        id: id.into(),
        ac_subgrid: ac_sg,
        ac_bus,
        dc_subgrid: dc_sg,
        dc_node,
        mmc: mmc_1000(),
        controller: ctrl(),
        ac_connected: true,
        dc_connected: true,
    };
    Scenario {
        network: NetworkModel {
            base,
            ac: vec![
                AcSubgrid {
                    id: "ac1".into(),
                    buses: vec![AcBus { id: "b1".into() }, AcBus { id: "b2".into() }],
                    lines: vec![ac_line(0, 1, 40.0)],
                },
                AcSubgrid {
                    id: "ac2".into(),
                    buses: vec![AcBus { id: "b1".into() }, AcBus { id: "b2".into() }],
                    lines: vec![ac_line(0, 1, 40.0)],
                },
                AcSubgrid {
                    id: "ac3".into(),
                    buses: vec![AcBus { id: "b1".into() }, AcBus { id: "b2".into() }],
                    lines: vec![ac_line(0, 1, 40.0)],
                },
            ],
            dc: vec![
                // Long links: the cable inductance sets the loop impedance
                // the droop stations see at control frequencies.
                DcSubgrid {
                    id: "dc1".into(),
                    nodes: vec![
                        DcNode { id: "n1".into() },
                        DcNode { id: "n2".into() },
                        DcNode { id: "n3".into() },
                    ],
                    cables: vec![dc_cable(0, 1, 200.0), dc_cable(0, 2, 200.0)],
                },
                DcSubgrid {
                    id: "dc2".into(),
                    nodes: vec![
                        DcNode { id: "n1".into() },
                        DcNode { id: "n2".into() },
                        DcNode { id: "n3".into() },
                    ],
                    cables: vec![dc_cable(0, 1, 200.0), dc_cable(0, 2, 200.0)],
                },
            ],
        },
        fidelity: Fidelity::Dynamic,
        // Stiff network-equivalent sources keep post-contingency frequency
        // sags inside the converters' stored-energy budget.
        ac_sources: vec![
            AcGfmSource {
                id: "u1".into(),
                bus: AcBusRef { subgrid: 0, bus: 0 },
                voltage_pu: 1.0,
                omega_set_pu: 1.0,
                p_set_pu: 0.02,
                droop_pu: 0.02,
                connected: true,
            },
            AcGfmSource {
                id: "u2".into(),
                bus: AcBusRef { subgrid: 1, bus: 0 },
                voltage_pu: 1.0,
                omega_set_pu: 1.0,
                p_set_pu: 0.0,
                droop_pu: 0.02,
                connected: true,
            },
        ],
        dc_sources: vec![],
        gfl_sources: vec![
            PllGflSource {
                id: "gfl1".into(),
                bus: AcBusRef { subgrid: 0, bus: 0 },
                p_cmd_pu: 0.2,
                q_cmd_pu: 0.0,
                pll: PllParams::default(),
                connected: true,
            },
            PllGflSource {
                id: "wind".into(),
                bus: AcBusRef { subgrid: 1, bus: 0 },
                p_cmd_pu: 0.285,
                q_cmd_pu: 0.0,
                pll: PllParams::default(),
                connected: true,
            },
            PllGflSource {
                id: "gfl3".into(),
                bus: AcBusRef { subgrid: 2, bus: 0 },
                p_cmd_pu: 0.2,
                q_cmd_pu: 0.0,
                pll: PllParams::default(),
                connected: true,
            },
        ],
        loads: vec![
            PowerLoad {
                id: "l1".into(),
                terminal: LoadTerminal::Ac(AcBusRef { subgrid: 0, bus: 1 }),
                p_load_pu: 0.27,
                q_load_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            PowerLoad {
                id: "l2".into(),
                terminal: LoadTerminal::Ac(AcBusRef { subgrid: 1, bus: 1 }),
                p_load_pu: 0.385,
                q_load_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            PowerLoad {
                id: "l3".into(),
                terminal: LoadTerminal::Ac(AcBusRef { subgrid: 2, bus: 1 }),
                p_load_pu: 0.05,
                q_load_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
        ],
        ipcs: vec![
            ipc("ipc_a", 0, 1, 0, 0),
            ipc("ipc_b", 1, 1, 0, 1),
            ipc("ipc_f", 2, 1, 0, 2),
            ipc("ipc_c", 0, 1, 1, 0),
            ipc("ipc_d", 1, 1, 1, 1),
            ipc("ipc_e", 2, 1, 1, 2),
        ],
        events: vec![],
        options: SimOptions {
            t_end_s: 6.5,
            ..SimOptions::default()
        },
    }
}
