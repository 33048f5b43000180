//! Source-outage behavior: single-port controls fail when the grid on
//! their grid-following terminal loses its forming source, dual-port
//! controls ride through either outage.

mod common;

use gogsim_core::dispatch::{solve_dispatch, DispatchProblem};
use gogsim_core::ipc::ControllerConfig;
use gogsim_core::network::Fidelity;
use gogsim_core::sim::{simulate, Event, EventAction, Scenario, SimStatus};

fn outage_scenario(controller: ControllerConfig, drop: &str) -> Scenario {
    let mut scn = common::single_ipc_scenario(controller, Fidelity::Dynamic);
    // Operating point with moderate post-outage power swings on both
    // terminals: the stored energy of the converter bounds how large a
    // reversal the hybrid law can absorb through its proportional energy
    // feedback.
    scn.loads[0].p_load_pu = 0.7;
    let problem = DispatchProblem {
        transfers: vec![("mmc".into(), 0.2)],
        ..DispatchProblem::default()
    };
    let (_, mut updated) = solve_dispatch(&scn, &problem).expect("dispatch");
    updated.events.push(Event {
        t_s: 0.5,
        action: EventAction::DisconnectDevice {
            target: drop.into(),
        },
    });
    updated.options.t_end_s = 2.0;
    updated
}

#[test]
fn dc_source_loss_breaks_only_ac_gfm() {
    let cases = [
        ("ac_gfm", common::ac_gfm_cfg(), false),
        ("dc_gfm", common::dc_gfm_cfg(), true),
        ("hybrid", common::hybrid_cfg(), true),
        ("energy_balancing", common::energy_balancing_cfg(), true),
    ];
    for (name, cfg, survives) in cases {
        let scn = outage_scenario(cfg, "v4");
        let result = simulate(&scn).unwrap();
        match (&result.status, survives) {
            (SimStatus::Completed, true) => {}
            (SimStatus::Unstable { t_s, .. }, false) => {
                assert!(*t_s >= 0.5, "{name}: tripped before the outage at {t_s}");
            }
            (status, _) => panic!("{name}: unexpected outcome {status:?}"),
        }
    }
}

#[test]
fn ac_source_loss_breaks_only_dc_gfm() {
    let cases = [
        ("ac_gfm", common::ac_gfm_cfg(), true),
        ("dc_gfm", common::dc_gfm_cfg(), false),
        ("hybrid", common::hybrid_cfg(), true),
        ("energy_balancing", common::energy_balancing_cfg(), true),
    ];
    for (name, cfg, survives) in cases {
        let scn = outage_scenario(cfg, "u1");
        let result = simulate(&scn).unwrap();
        match (&result.status, survives) {
            (SimStatus::Completed, true) => {}
            (SimStatus::Unstable { t_s, .. }, false) => {
                assert!(*t_s >= 0.5, "{name}: tripped before the outage at {t_s}");
            }
            (status, _) => panic!("{name}: unexpected outcome {status:?}"),
        }
    }
}

#[test]
fn dual_port_settles_at_shifted_point_after_dc_loss() {
    let scn = outage_scenario(common::energy_balancing_cfg(), "v4");
    let mut scn = scn;
    scn.options.t_end_s = 4.0;
    let (_, snapshot) = gogsim_core::sim::settle(&scn).expect("settles after outage");
    assert!(snapshot.residual_norm < 1e-8);
    let result = simulate(&scn).unwrap();
    // The converter alone now feeds the DC load from the AC side: energy,
    // frequency and DC voltage settle below nominal.
    let w = result.last_value("mmc.w_t").unwrap();
    let omega = result.last_value("ac1.omega").unwrap();
    assert!(w < common::W_SET, "energy should settle low, got {w}");
    assert!(omega < 1.0, "frequency should settle low, got {omega}");
}

#[test]
fn ipc_terminal_disconnect_zeroes_exchange_and_keeps_running() {
    let mut scn = outage_scenario(common::energy_balancing_cfg(), "v4");
    // Replace the source outage with an AC terminal breaker opening.
    scn.events.clear();
    scn.events.push(Event {
        t_s: 0.5,
        action: EventAction::DisconnectIpcTerminal {
            target: "mmc".into(),
            terminal: gogsim_core::sim::TerminalSide::Ac,
        },
    });
    scn.options.t_end_s = 2.0;
    let result = simulate(&scn).unwrap();
    assert_eq!(result.status, SimStatus::Completed);
    let p_ac = result.last_value("mmc.p_ac").unwrap();
    assert_eq!(p_ac, 0.0, "open terminal must exchange no power");
    // The DC terminal keeps forming: the DC-side load is still served.
    let v_dc = result.last_value("dc1.n3.v_dc").unwrap();
    assert!(v_dc > 0.9, "DC side should stay formed, got {v_dc}");
}
