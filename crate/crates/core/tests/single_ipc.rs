//! End-to-end behavior of the single-converter test system: consistent
//! dispatch, equilibrium hold, energy bookkeeping, step response signs, and
//! determinism.

mod common;

use gogsim_core::dispatch::{solve_dispatch, DispatchProblem};
use gogsim_core::ipc::ControllerConfig;
use gogsim_core::network::Fidelity;
use gogsim_core::sim::{residual_norm, settle, simulate, SimStatus, System};

fn dispatched(controller: ControllerConfig, fidelity: Fidelity) -> gogsim_core::sim::Scenario {
    let scn = common::single_ipc_scenario(controller, fidelity);
    let problem = DispatchProblem {
        transfers: vec![("mmc".into(), 0.33)],
        ..DispatchProblem::default()
    };
    let (_, updated) = solve_dispatch(&scn, &problem).expect("dispatch solves");
    updated
}

#[test]
fn dispatch_reproduces_expected_transfer() {
    let scn = common::single_ipc_scenario(common::hybrid_cfg(), Fidelity::Analytic);
    let problem = DispatchProblem {
        transfers: vec![("mmc".into(), 0.33)],
        ..DispatchProblem::default()
    };
    let (sol, _) = solve_dispatch(&scn, &problem).unwrap();
    let t = sol
        .transfers
        .iter()
        .find(|(id, _)| id == "mmc")
        .map(|(_, t)| *t)
        .unwrap();
    assert!((t - 0.33).abs() < 1e-9, "transfer {t}");
    // The slack source covers the remainder of the AC balance.
    let u1 = sol
        .slack_powers
        .iter()
        .find(|(id, _)| id == "u1")
        .map(|(_, p)| *p)
        .unwrap();
    assert!((u1 - 0.15).abs() < 0.01, "u1 slack {u1}");
    assert!(sol.verification_residual < 1e-8);
}

#[test]
fn balanced_dispatch_holds_equilibrium_analytic() {
    for (name, cfg) in [
        ("hybrid", common::hybrid_cfg()),
        ("energy_balancing", common::energy_balancing_cfg()),
        ("ac_gfm", common::ac_gfm_cfg()),
        ("dc_gfm", common::dc_gfm_cfg()),
    ] {
        let scn = dispatched(cfg, Fidelity::Analytic);
        let result = simulate(&scn).unwrap();
        assert_eq!(result.status, SimStatus::Completed, "{name}");
        for sig in result.signals.iter().filter(|s| s.name.contains("omega")) {
            for v in &sig.values {
                assert!(
                    (v - 1.0).abs() < 1e-6,
                    "{name}: {} deviated to {v}",
                    sig.name
                );
            }
        }
        let w = result.signal("mmc.w_t").unwrap();
        for v in &w.values {
            assert!((v - common::W_SET).abs() < 1e-6, "{name}: w_t drifted to {v}");
        }
    }
}

#[test]
fn balanced_dispatch_holds_equilibrium_dynamic() {
    for (name, cfg) in [
        ("hybrid", common::hybrid_cfg()),
        ("energy_balancing", common::energy_balancing_cfg()),
        ("ac_gfm", common::ac_gfm_cfg()),
        ("dc_gfm", common::dc_gfm_cfg()),
    ] {
        let scn = dispatched(cfg, Fidelity::Dynamic);
        let sys = System::compile(&scn).unwrap();
        let x0 = gogsim_core::dispatch::init_equilibrium(&sys).unwrap();
        let res = residual_norm(&sys, &x0).unwrap();
        assert!(res < 1e-7, "{name}: init residual {res:.3e}");
        let result = simulate(&scn).unwrap();
        assert_eq!(result.status, SimStatus::Completed, "{name}");
        // Setpoints come from the lossless dispatch, so the dynamic system
        // settles a loss-order offset away from nominal; the invariant is
        // that the initialized equilibrium holds exactly.
        for sig in &result.signals {
            let first = sig.values[0];
            for v in &sig.values {
                assert!(
                    (v - first).abs() < 1e-6,
                    "{name}: {} drifted from {first} to {v}",
                    sig.name
                );
            }
            if sig.name.contains("omega") {
                assert!(
                    (first - 1.0).abs() < 1e-3,
                    "{name}: {} far from nominal: {first}",
                    sig.name
                );
            }
        }
    }
}

#[test]
fn energy_bookkeeping_exact_against_quadrature() {
    let mut scn = dispatched(common::energy_balancing_cfg(), Fidelity::Dynamic);
    scn.events.push(gogsim_core::sim::Event {
        t_s: 0.1,
        action: gogsim_core::sim::EventAction::SetLoad {
            target: "p5".into(),
            p_pu: 0.5,
        },
    });
    scn.options.t_end_s = 2.0;
    let result = simulate(&scn).unwrap();
    assert_eq!(result.status, SimStatus::Completed);
    let labels = &result.state_labels;
    let w_i = labels.iter().position(|l| l == "mmc.w_t").unwrap();
    let q_i = labels.iter().position(|l| l == "mmc.w_quad").unwrap();
    let w_initial = result.signal("mmc.w_t").unwrap().values[0];
    let dw = result.final_state[w_i] - w_initial;
    let quad = result.final_state[q_i];
    assert!(
        (dw - quad).abs() < 1e-9,
        "energy drift vs quadrature: {dw} vs {quad}"
    );
    // The step left a real deficit.
    assert!(dw < -1e-4, "load step should deplete stored energy: {dw}");
}

#[test]
fn dc_load_step_sags_frequency_through_dual_port() {
    // A +0.4 pu DC load step must propagate to the AC side as a frequency
    // sag for the dual-port controls.
    for (name, cfg) in [
        ("hybrid", common::hybrid_cfg()),
        ("energy_balancing", common::energy_balancing_cfg()),
    ] {
        let mut scn = dispatched(cfg, Fidelity::Analytic);
        scn.events.push(gogsim_core::sim::Event {
            t_s: 0.0,
            action: gogsim_core::sim::EventAction::SetLoad {
                target: "p5".into(),
                p_pu: 0.5,
            },
        });
        scn.options.t_end_s = 4.0;
        let (_, snapshot) = settle(&scn).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(snapshot.residual_norm < 1e-8);
        let result = simulate(&scn).unwrap();
        let omega_end = result.last_value("ac1.omega").unwrap();
        assert!(
            omega_end < 1.0 - 1e-4,
            "{name}: frequency should sag, got {omega_end}"
        );
    }
}

#[test]
fn ac_gfm_holds_frequency_on_dc_step_and_passes_imbalance() {
    let mut scn = dispatched(common::ac_gfm_cfg(), Fidelity::Analytic);
    scn.events.push(gogsim_core::sim::Event {
        t_s: 0.0,
        action: gogsim_core::sim::EventAction::SetLoad {
            target: "p5".into(),
            p_pu: 0.5,
        },
    });
    scn.options.t_end_s = 4.0;
    let result = simulate(&scn).unwrap();
    assert_eq!(result.status, SimStatus::Completed);
    // Single-port AC-forming control keeps its energy at the setpoint and
    // the DC side absorbs the step: DC voltage sags, frequency holds.
    let w_end = result.last_value("mmc.w_t").unwrap();
    assert!((w_end - common::W_SET).abs() < 1e-5, "w_t {w_end}");
    let v_end = result.last_value("dc1.n2.v_dc").unwrap();
    assert!(v_end < 1.0 - 1e-3, "dc voltage should sag, got {v_end}");
    let omega_end = result.last_value("ac1.omega").unwrap();
    assert!(
        (omega_end - 1.0).abs() < 1e-3,
        "frequency should hold, got {omega_end}"
    );
}

#[test]
fn determinism_bit_identical() {
    let mut scn = dispatched(common::energy_balancing_cfg(), Fidelity::Dynamic);
    scn.events.push(gogsim_core::sim::Event {
        t_s: 0.2,
        action: gogsim_core::sim::EventAction::SetLoad {
            target: "p3".into(),
            p_pu: 1.2,
        },
    });
    let a = simulate(&scn).unwrap();
    let b = simulate(&scn).unwrap();
    assert_eq!(a.time_s.len(), b.time_s.len());
    for (sa, sb) in a.signals.iter().zip(b.signals.iter()) {
        assert_eq!(sa.values.len(), sb.values.len());
        for (va, vb) in sa.values.iter().zip(sb.values.iter()) {
            assert_eq!(va.to_bits(), vb.to_bits(), "{}", sa.name);
        }
    }
}

#[test]
fn halving_dt_does_not_move_settled_values() {
    let mut scn = dispatched(common::hybrid_cfg(), Fidelity::Analytic);
    scn.events.push(gogsim_core::sim::Event {
        t_s: 0.0,
        action: gogsim_core::sim::EventAction::SetLoad {
            target: "p5".into(),
            p_pu: 0.5,
        },
    });
    scn.options.t_end_s = 4.0;
    let coarse = simulate(&scn).unwrap();
    scn.options.dt_s /= 2.0;
    let fine = simulate(&scn).unwrap();
    for name in ["ac1.omega", "mmc.w_t", "dc1.n3.v_dc"] {
        let a = coarse.last_value(name).unwrap();
        let b = fine.last_value(name).unwrap();
        assert!(
            (a - b).abs() < 1e-8,
            "{name}: settled value moved {a} -> {b}"
        );
    }
}
