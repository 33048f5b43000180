//! Regenerates the bundled scenario files under scenarios/.
//!
//! Every file is produced by building the raw topology, solving its
//! dispatch so the initial point is a true equilibrium, folding the solved
//! setpoints back in, and serializing. Run from the workspace root:
//!
//!     cargo run -p gogsim-cli --example generate_scenarios

#[path = "../src/schema.rs"]
mod schema;

use gogsim_core::dispatch::{solve_dispatch, Assignment, DispatchProblem};
use gogsim_core::sim::SetpointField;
use schema::*;

fn ac_line(from: &str, to: &str, length_km: f64) -> LineSection {
    LineSection {
        from: from.into(),
        to: to.into(),
        length_km,
        r_ohm_per_km: 0.08,
        l_mh_per_km: 0.8,
        c_uf_per_km: 0.012,
    }
}

fn dc_cable(from: &str, to: &str, length_km: f64) -> CableSection {
    CableSection {
        from: from.into(),
        to: to.into(),
        length_km,
        r1_ohm_per_km: 0.1265,
        l1_mh_per_km: 0.2644,
        r2_ohm_per_km: 0.1504,
        l2_mh_per_km: 7.2865,
        r3_ohm_per_km: 0.0178,
        l3_mh_per_km: 3.6198,
        c_uf_per_km: 0.1616,
        g_us_per_km: 0.1015,
    }
}

fn controller(kind: &str) -> ControllerSection {
    let mut c = ControllerSection {
        kind: kind.into(),
        omega_set: 1.0,
        v_dc_set: 1.0,
        p_ac_set: 0.0,
        p_dc_set: 0.0,
        q_set: 0.0,
        v_ac_set: 1.0,
        w_set_pu_s: None,
        k_p_ac: 0.0,
        k_q_ac: 0.05,
        k_p_dc: 0.0,
        k_w_ac: 0.0,
        k_w_dc: 0.0,
        tau_ac_s: 0.0,
        tau_dc_s: 0.0,
        energy_pi_kp: 17.6,
        energy_pi_ki: 158.0,
    };
    match kind {
        "ac_gfm" => {
            c.k_p_ac = 0.05;
            c.tau_ac_s = 0.04;
        }
        "dc_gfm" => {
            c.k_p_dc = 0.05;
            c.tau_dc_s = 0.01;
            c.tau_ac_s = 1.0;
        }
        "hybrid_droop" => {
            c.k_p_ac = 0.05;
            c.k_p_dc = 0.05;
            c.k_w_ac = 0.5;
            c.k_w_dc = 0.5;
            c.tau_dc_s = 0.01;
        }
        "energy_balancing" => {
            c.k_p_ac = 0.0125;
            c.k_p_dc = 0.025;
            c.k_w_ac = 0.5;
            c.k_w_dc = 0.5;
            c.tau_ac_s = 0.001;
            c.tau_dc_s = 0.01;
        }
        other => panic!("unknown controller {other}"),
    }
    c
}

/// Table-style gains for the three-subgrid system.
fn gg_controller(kind: &str) -> ControllerSection {
    let mut c = controller(kind);
    match kind {
        "hybrid_droop" => {
            c.k_p_ac = 0.05;
            c.k_p_dc = 0.08125;
            c.k_w_ac = 0.4;
            c.k_w_dc = 0.4;
            c.tau_dc_s = 0.001;
        }
        "energy_balancing" => {
            c.k_p_ac = 0.01228;
            c.k_p_dc = 0.004;
            c.k_w_ac = 0.4;
            c.k_w_dc = 0.4;
            c.tau_ac_s = 0.001;
            c.tau_dc_s = 0.001;
        }
        other => panic!("grid-of-grids uses the dual-port controllers, got {other}"),
    }
    c
}

fn event(t_s: f64, action: &str, target: &str) -> EventSection {
    EventSection {
        t_s,
        action: action.into(),
        target: target.into(),
        field: None,
        value: None,
        terminal: None,
    }
}

fn set_load(t_s: f64, target: &str, value: f64) -> EventSection {
    EventSection {
        value: Some(value),
        ..event(t_s, "set_load", target)
    }
}

fn set_point(t_s: f64, target: &str, field: &str, value: f64) -> EventSection {
    EventSection {
        field: Some(field.into()),
        value: Some(value),
        ..event(t_s, "set_setpoint", target)
    }
}

/// Single-converter test system: a 500 MW converter linking a 320 kV /
/// 50 Hz AC network (droop source, grid-following source, load) and a
/// 640 kV DC link (droop source, load).
fn single_ipc(kind: &str, ac_load: f64, transfer: f64) -> (ScenarioFile, f64) {
    let file = ScenarioFile {
        schema: SCHEMA_ID.into(),
        base: BaseSection {
            s_mw: 500.0,
            v_ac_kv: 320.0,
            v_dc_kv: 640.0,
            f_hz: 50.0,
        },
        options: OptionsSection {
            t_end_s: 6.0,
            ..Default::default()
        },
        ac_subgrids: vec![AcSubgridSection {
            id: "ac1".into(),
            buses: vec!["b1".into(), "b2".into(), "b3".into()],
            lines: vec![ac_line("b1", "b2", 50.0), ac_line("b2", "b3", 50.0)],
        }],
        dc_subgrids: vec![DcSubgridSection {
            id: "dc1".into(),
            nodes: vec!["n1".into(), "n2".into(), "n3".into()],
            cables: vec![dc_cable("n1", "n2", 100.0), dc_cable("n2", "n3", 100.0)],
        }],
        ac_sources: vec![AcSourceSection {
            id: "u1".into(),
            bus: "ac1.b1".into(),
            voltage_pu: 1.0,
            omega_set_pu: 1.0,
            p_set_pu: 0.15,
            // Stiff droop: the source stands for a large AC network.
            droop_pu: 0.004,
            connected: true,
        }],
        dc_sources: vec![DcSourceSection {
            id: "v4".into(),
            node: "dc1.n1".into(),
            v_set_pu: 1.0,
            p_set_pu: 0.43,
            droop_pu: 0.05,
            connected: true,
        }],
        gfl_sources: vec![GflSourceSection {
            id: "p2".into(),
            bus: "ac1.b1".into(),
            p_pu: 0.35,
            q_pu: 0.0,
            pll_bandwidth_hz: 20.0,
            pll_damping: 0.707,
            connected: true,
        }],
        loads: vec![
            LoadSection {
                id: "p3".into(),
                terminal: "ac1.b2".into(),
                p_pu: ac_load,
                q_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            LoadSection {
                id: "p5".into(),
                terminal: "dc1.n2".into(),
                p_pu: 0.1,
                q_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
        ],
        ipcs: vec![IpcSection {
            id: "mmc".into(),
            ac_bus: "ac1.b3".into(),
            dc_node: "dc1.n3".into(),
            s_rated_mw: 500.0,
            modules_per_arm: 400,
            module_v_kv: 1.6,
            module_c_mf: 8.0,
            coupling_r_pu: 0.009,
            coupling_l_pu: 0.25,
            controller: controller(kind),
        }],
        events: vec![],
        dispatch: None,
    };
    (file, transfer)
}

/// Solve the dispatch and fold the assignments back into the file.
fn dispatched(mut file: ScenarioFile, problem: &DispatchProblem) -> ScenarioFile {
    let parsed = schema::to_scenario(&file).expect("generator scenario parses");
    let (solution, _) = solve_dispatch(&parsed.scenario, problem).expect("dispatch solves");
    apply_to_file(&mut file, &solution.assignments);
    file
}

fn apply_to_file(file: &mut ScenarioFile, assignments: &[Assignment]) {
    for a in assignments {
        if let Some(s) = file.ac_sources.iter_mut().find(|s| s.id == a.target) {
            match a.field {
                SetpointField::PSet => s.p_set_pu = a.value,
                SetpointField::OmegaSet => s.omega_set_pu = a.value,
                SetpointField::VAcSet => s.voltage_pu = a.value,
                _ => {}
            }
            continue;
        }
        if let Some(s) = file.dc_sources.iter_mut().find(|s| s.id == a.target) {
            match a.field {
                SetpointField::PSet => s.p_set_pu = a.value,
                SetpointField::VDcSet => s.v_set_pu = a.value,
                _ => {}
            }
            continue;
        }
        if let Some(u) = file.ipcs.iter_mut().find(|u| u.id == a.target) {
            let c = &mut u.controller;
            match a.field {
                SetpointField::PSet => {
                    c.p_ac_set = a.value;
                    if c.kind == "hybrid_droop" {
                        c.p_dc_set = a.value;
                    }
                }
                SetpointField::PDcSet => c.p_dc_set = a.value,
                SetpointField::OmegaSet => c.omega_set = a.value,
                SetpointField::VDcSet => c.v_dc_set = a.value,
                SetpointField::VAcSet => c.v_ac_set = a.value,
                SetpointField::WSet => c.w_set_pu_s = Some(a.value),
                SetpointField::QSet => c.q_set = a.value,
            }
        }
    }
}

fn write(name: &str, header: &str, file: &ScenarioFile) {
    let body = toml::to_string_pretty(file).expect("serializes");
    let mut text = String::new();
    for line in header.lines() {
        text.push_str("# ");
        text.push_str(line);
        text.push('\n');
    }
    text.push('\n');
    text.push_str(&body);
    let path = std::path::Path::new("scenarios").join(name);
    std::fs::create_dir_all("scenarios").unwrap();
    std::fs::write(&path, text).unwrap();
    println!("wrote {}", path.display());
}

fn single_ipc_family() {
    let controllers = [
        ("hybrid_droop", "hybrid"),
        ("energy_balancing", "energy_balancing"),
        ("ac_gfm", "ac_gfm"),
        ("dc_gfm", "dc_gfm"),
    ];

    // Full setpoint/load/topology sequence at the reference dispatch.
    for (kind, tag) in controllers {
        let (file, transfer) = single_ipc(kind, 0.83, 0.33);
        let mut file = dispatched(
            file,
            &DispatchProblem {
                transfers: vec![("mmc".into(), transfer)],
                ..Default::default()
            },
        );
        let setpoint_capable = matches!(kind, "hybrid_droop" | "ac_gfm" | "dc_gfm");
        let mut events = vec![
            set_load(0.0, "p5", 0.5),
            set_load(0.3, "p3", 1.21),
            set_load(0.6, "p3", 0.95),
            set_load(0.6, "p5", 0.2),
            set_point(1.0, "u1", "p_set", file.ac_sources[0].p_set_pu + 0.2),
            set_point(1.0, "v4", "p_set", file.dc_sources[0].p_set_pu + 0.02),
        ];
        if setpoint_capable {
            events.push(set_point(1.0, "mmc", "p_set", 0.25));
        }
        events.extend([
            set_point(1.5, "u1", "v_ac_set", 0.9),
            set_point(2.0, "v4", "v_dc_set", file.dc_sources[0].v_set_pu - 0.02),
            set_point(2.5, "u1", "v_ac_set", 1.0),
            set_point(2.5, "v4", "v_dc_set", file.dc_sources[0].v_set_pu),
        ]);
        if setpoint_capable {
            events.push(set_point(3.0, "mmc", "p_set", -0.2));
            events.push(set_point(3.5, "mmc", "omega_set", 0.98));
            events.push(set_point(3.5, "mmc", "v_dc_set", 1.03));
            events.push(set_point(4.0, "mmc", "omega_set", 1.0));
            events.push(set_point(4.0, "mmc", "v_dc_set", file.ipcs[0].controller.v_dc_set));
            events.push(set_point(4.0, "mmc", "p_set", 0.25));
        }
        events.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
        file.events = events;
        file.options.t_end_s = 4.5;
        write(
            &format!("single_ipc_{tag}.toml"),
            &format!(
                "Single-converter test system, {tag} control.\n\
                 500 MW converter between a 320 kV / 50 Hz AC network and a 640 kV DC\n\
                 link, driven through a sequence of load steps, redispatches, voltage\n\
                 setpoint changes and power reversals.\n\
                 Source setpoints solved so the initial point is an exact equilibrium."
            ),
            &file,
        );
    }

    // Source-outage runs from a moderate-transfer operating point.
    for (kind, tag) in controllers {
        for (drop, suffix) in [("v4", "dc_loss"), ("u1", "ac_loss")] {
            let (mut file, _) = single_ipc(kind, 0.7, 0.2);
            file = dispatched(
                file,
                &DispatchProblem {
                    transfers: vec![("mmc".into(), 0.2)],
                    ..Default::default()
                },
            );
            file.events = vec![event(4.5, "disconnect_device", drop)];
            file.options.t_end_s = 6.0;
            write(
                &format!("single_ipc_{tag}_{suffix}.toml"),
                &format!(
                    "Single-converter test system, {tag} control: {} source outage at\n\
                     t = 4.5 s. Single-port controls survive only the outage on their\n\
                     grid-forming side; the dual-port controls survive both.",
                    if drop == "v4" { "DC" } else { "AC" }
                ),
                &file,
            );
        }
    }

    // DC load step runs for the settled steady-state map checks.
    for (kind, tag) in [
        ("hybrid_droop", "hybrid"),
        ("energy_balancing", "energy_balancing"),
    ] {
        let (file, _) = single_ipc(kind, 0.83, 0.33);
        let mut file = dispatched(
            file,
            &DispatchProblem {
                transfers: vec![("mmc".into(), 0.33)],
                ..Default::default()
            },
        );
        file.events = vec![set_load(0.0, "p5", 0.5)];
        file.options.t_end_s = 6.0;
        write(
            &format!("single_ipc_{tag}_dc_step.toml"),
            &format!(
                "Single-converter test system, {tag} control: +0.4 pu DC load step at\n\
                 t = 0. The settled point exhibits the controller's steady-state map\n\
                 between frequency, DC voltage and stored energy."
            ),
            &file,
        );
    }

    // Dispatch problem file: reference operating point with the converter
    // transfer requested through the dispatch section.
    let (mut file, _) = single_ipc("hybrid_droop", 0.83, 0.33);
    file.dispatch = Some(DispatchSection {
        omega_schedule: 1.0,
        v_dc_schedule: 1.0,
        v_bound_pu: 0.1,
        transfers: vec![TransferSection {
            ipc: "mmc".into(),
            p_pu: 0.33,
        }],
        slacks: vec![],
    });
    file.options.t_end_s = 1.0;
    write(
        "single_ipc_dispatch.toml",
        "Single-converter test system with a dispatch request: solve source\n\
         setpoints realizing a 0.33 pu transfer through the converter at\n\
         nominal frequency and DC voltage.",
        &file,
    );
}

/// Two AC networks joined by two parallel HVDC links, four
/// energy-balancing converters.
fn two_links(alphas: [f64; 4]) -> ScenarioFile {
    let ipc = |id: &str, ac: &str, dc: &str, node: &str, alpha: f64| -> IpcSection {
        let mut c = gg_controller("energy_balancing");
        c.k_w_ac = 0.4 * alpha;
        c.k_w_dc = 0.4;
        IpcSection {
            id: id.into(),
            ac_bus: format!("{ac}.b2"),
            dc_node: format!("{dc}.{node}"),
            s_rated_mw: 1000.0,
            modules_per_arm: 400,
            module_v_kv: 1.6,
            module_c_mf: 8.0,
            coupling_r_pu: 0.009,
            coupling_l_pu: 0.25,
            controller: c,
        }
    };
    ScenarioFile {
        schema: SCHEMA_ID.into(),
        base: BaseSection {
            s_mw: 1000.0,
            v_ac_kv: 320.0,
            v_dc_kv: 640.0,
            f_hz: 50.0,
        },
        options: OptionsSection {
            t_end_s: 8.0,
            ..Default::default()
        },
        ac_subgrids: vec![
            AcSubgridSection {
                id: "ac1".into(),
                buses: vec!["b1".into(), "b2".into()],
                lines: vec![ac_line("b1", "b2", 30.0)],
            },
            AcSubgridSection {
                id: "ac2".into(),
                buses: vec!["b1".into(), "b2".into()],
                lines: vec![ac_line("b1", "b2", 30.0)],
            },
        ],
        dc_subgrids: vec![
            DcSubgridSection {
                id: "dc1".into(),
                nodes: vec!["n1".into(), "n2".into()],
                cables: vec![dc_cable("n1", "n2", 50.0)],
            },
            DcSubgridSection {
                id: "dc2".into(),
                nodes: vec!["n1".into(), "n2".into()],
                cables: vec![dc_cable("n1", "n2", 50.0)],
            },
        ],
        ac_sources: vec![
            AcSourceSection {
                id: "u1".into(),
                bus: "ac1.b1".into(),
                voltage_pu: 1.0,
                omega_set_pu: 1.0,
                p_set_pu: 0.4,
                droop_pu: 0.05,
                connected: true,
            },
            AcSourceSection {
                id: "u2".into(),
                bus: "ac2.b1".into(),
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
            LoadSection {
                id: "l1".into(),
                terminal: "ac1.b2".into(),
                p_pu: 0.4,
                q_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            LoadSection {
                id: "l2".into(),
                terminal: "ac2.b2".into(),
                p_pu: 0.4,
                q_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
        ],
        ipcs: vec![
            ipc("ipc1", "ac1", "dc1", "n1", alphas[0]),
            ipc("ipc2", "ac2", "dc1", "n2", alphas[1]),
            ipc("ipc3", "ac1", "dc2", "n1", alphas[2]),
            ipc("ipc4", "ac2", "dc2", "n2", alphas[3]),
        ],
        events: vec![set_load(0.5, "l2", 0.55)],
        dispatch: None,
    }
}

fn two_link_family() {
    write(
        "two_links_consistent.toml",
        "Two AC networks joined by two parallel HVDC links, four\n\
         energy-balancing converters with matched alpha ratios. After the\n\
         load step the two networks settle at a common frequency.",
        &two_links([1.0, 1.0, 1.0, 1.0]),
    );
    write(
        "two_links_inconsistent.toml",
        "Same system with a deliberately mismatched alpha ratio on the\n\
         second link: the parallel AC-DC-AC path products disagree, a\n\
         circulating flow builds and the two networks split in frequency.",
        &two_links([1.0, 1.0, 3.0, 1.0]),
    );
}

/// Grid of grids: three AC subgrids, two three-terminal DC networks, six
/// converters under one shared dual-port control.
fn grid_of_grids(kind: &str) -> ScenarioFile {
    let ipc = |id: &str, ac: &str, dc: &str, node: &str| IpcSection {
        id: id.into(),
        ac_bus: format!("{ac}.b2"),
        dc_node: format!("{dc}.{node}"),
        s_rated_mw: 1000.0,
        modules_per_arm: 400,
        module_v_kv: 1.6,
        module_c_mf: 8.0,
        coupling_r_pu: 0.009,
        coupling_l_pu: 0.25,
        controller: gg_controller(kind),
    };
    let ac = |id: &str| AcSubgridSection {
        id: id.into(),
        buses: vec!["b1".into(), "b2".into()],
        lines: vec![ac_line("b1", "b2", 40.0)],
    };
    let dc = |id: &str| DcSubgridSection {
        id: id.into(),
        nodes: vec!["n1".into(), "n2".into(), "n3".into()],
        cables: vec![dc_cable("n1", "n2", 200.0), dc_cable("n1", "n3", 200.0)],
    };
    ScenarioFile {
        schema: SCHEMA_ID.into(),
        base: BaseSection {
            s_mw: 1000.0,
            v_ac_kv: 320.0,
            v_dc_kv: 640.0,
            f_hz: 50.0,
        },
        options: OptionsSection {
            t_end_s: 12.0,
            ..Default::default()
        },
        ac_subgrids: vec![ac("ac1"), ac("ac2"), ac("ac3")],
        dc_subgrids: vec![dc("dc1"), dc("dc2")],
        ac_sources: vec![
            AcSourceSection {
                id: "u1".into(),
                bus: "ac1.b1".into(),
                voltage_pu: 1.0,
                omega_set_pu: 1.0,
                p_set_pu: 0.02,
                droop_pu: 0.02,
                connected: true,
            },
            AcSourceSection {
                id: "u2".into(),
                bus: "ac2.b1".into(),
                voltage_pu: 1.0,
                omega_set_pu: 1.0,
                p_set_pu: 0.0,
                droop_pu: 0.02,
                connected: true,
            },
        ],
        dc_sources: vec![],
        gfl_sources: vec![
            GflSourceSection {
                id: "gfl1".into(),
                bus: "ac1.b1".into(),
                p_pu: 0.2,
                q_pu: 0.0,
                pll_bandwidth_hz: 20.0,
                pll_damping: 0.707,
                connected: true,
            },
            GflSourceSection {
                id: "wind".into(),
                bus: "ac2.b1".into(),
                p_pu: 0.285,
                q_pu: 0.0,
                pll_bandwidth_hz: 20.0,
                pll_damping: 0.707,
                connected: true,
            },
            GflSourceSection {
                id: "gfl3".into(),
                bus: "ac3.b1".into(),
                p_pu: 0.2,
                q_pu: 0.0,
                pll_bandwidth_hz: 20.0,
                pll_damping: 0.707,
                connected: true,
            },
        ],
        loads: vec![
            LoadSection {
                id: "l1".into(),
                terminal: "ac1.b2".into(),
                p_pu: 0.27,
                q_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            LoadSection {
                id: "l2".into(),
                terminal: "ac2.b2".into(),
                p_pu: 0.385,
                q_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
            LoadSection {
                id: "l3".into(),
                terminal: "ac3.b2".into(),
                p_pu: 0.05,
                q_pu: 0.0,
                k_freq: 0.0,
                connected: true,
            },
        ],
        ipcs: vec![
            ipc("ipc_a", "ac1", "dc1", "n1"),
            ipc("ipc_b", "ac2", "dc1", "n2"),
            ipc("ipc_f", "ac3", "dc1", "n3"),
            ipc("ipc_c", "ac1", "dc2", "n1"),
            ipc("ipc_d", "ac2", "dc2", "n2"),
            ipc("ipc_e", "ac3", "dc2", "n3"),
        ],
        events: vec![],
        dispatch: None,
    }
}

fn gg_problem() -> DispatchProblem {
    DispatchProblem {
        transfers: vec![
            ("ipc_b".into(), 0.0),
            ("ipc_c".into(), 0.05),
            ("ipc_e".into(), -0.15),
        ],
        ac_slack: vec![
            ("ac1".into(), "u1".into()),
            ("ac2".into(), "u2".into()),
            ("ac3".into(), "ipc_f".into()),
        ],
        dc_slack: vec![
            ("dc1".into(), "ipc_a".into()),
            ("dc2".into(), "ipc_d".into()),
        ],
        ..Default::default()
    }
}

fn grid_of_grids_family() {
    for (kind, tag) in [
        ("energy_balancing", "energy_balancing"),
        ("hybrid_droop", "hybrid"),
    ] {
        let mut file = dispatched(grid_of_grids(kind), &gg_problem());

        // Flow redispatch at t = 2.2: solved on the post-redispatch system
        // so no power flows through the first DC network.
        let mut post = file.clone();
        post.gfl_sources[1].p_pu = 0.01;
        post.ac_sources[1].p_set_pu = 0.275;
        let parsed = schema::to_scenario(&post).expect("parses");
        let mut problem = gg_problem();
        problem.transfers = vec![
            ("ipc_b".into(), 0.0),
            ("ipc_f".into(), 0.0),
            ("ipc_c".into(), 0.05),
            ("ipc_e".into(), -0.15),
        ];
        problem.ac_slack = vec![
            ("ac1".into(), "u1".into()),
            ("ac2".into(), "u2".into()),
            ("ac3".into(), "ipc_e".into()),
        ];
        let (solution, _) =
            solve_dispatch(&parsed.scenario, &problem).expect("flow redispatch solves");

        let mut events = vec![
            set_point(0.2, "wind", "p_set", 0.01),
            set_point(1.2, "u2", "p_set", 0.275),
        ];
        for a in &solution.assignments {
            if !a.target.starts_with("ipc_") {
                continue;
            }
            let field = match a.field {
                SetpointField::PSet => "p_set",
                SetpointField::PDcSet => "p_dc_set",
                SetpointField::VDcSet => "v_dc_set",
                SetpointField::OmegaSet => "omega_set",
                _ => continue,
            };
            events.push(set_point(2.2, &a.target, field, a.value));
        }
        events.push(event(4.2, "disconnect_device", "u1"));
        let mut term = event(5.2, "disconnect_ipc_terminal", "ipc_d");
        term.terminal = Some("ac".into());
        events.push(term);
        file.events = events;

        write(
            &format!("grid_of_grids_{tag}.toml"),
            &format!(
                "Grid of grids, {tag} control on all six converters: three AC\n\
                 subgrids (the third formed only by converters) tied by two\n\
                 three-terminal DC networks. Sequence: wind drop, source\n\
                 redispatch, flow redispatch through DC voltage setpoints,\n\
                 loss of the first AC network's droop source, loss of one\n\
                 converter's AC terminal."
            ),
            &file,
        );
    }
}

fn main() {
    single_ipc_family();
    two_link_family();
    grid_of_grids_family();
}
