//! Scenario-driven command line front end: time-domain simulation,
//! small-signal certification, randomized stability sweeps, gain audits,
//! and steady-state dispatch.

mod schema;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gogsim_core::analysis::{
    certify, check_gain_consistency, steady_state_relations, theorem1_sweep, Connection,
    IpcGainInfo, SettledPoint, SweepRanges, TheoremController, TheoremParams, TheoremSystem,
};
use gogsim_core::dispatch::{solve_dispatch, DispatchProblem};
use gogsim_core::ipc::ControllerConfig;
use gogsim_core::network::{ac_interface_susceptance, dc_equivalent_conductance, Fidelity};
use gogsim_core::sim::{linearize, settle, simulate, SimStatus};
use gogsim_core::Error as CoreError;

const EXIT_VALIDATION: u8 = 2;
const EXIT_UNSTABLE: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gogsim",
    about = "Phasor-domain simulation and small-signal analysis of AC/DC grids \
             coupled by dual-port grid-forming converters",
    version
)]
struct Cli {
    /// Output directory; defaults to $GOGSIM_OUT or ./out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FidelityArg {
    Analytic,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinearizeMode {
    /// Reduced single-converter model under the closed-form hypotheses.
    Theorem,
    /// Finite-difference Jacobian of the full model at a settled point.
    AtEquilibrium,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write time-series CSVs plus a run summary.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        fidelity: Option<FidelityArg>,
    },
    /// Small-signal certification of a single-converter scenario.
    Linearize {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "theorem")]
        mode: LinearizeMode,
        #[arg(long)]
        fidelity: Option<FidelityArg>,
    },
    /// Randomized stability sweep over positive gains, both dual-port
    /// controllers, all three connection cases.
    CheckTheorem1 {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Audit the alpha-ratio consistency of a multi-converter scenario.
    CheckGains { scenario: PathBuf },
    /// Solve setpoints realizing requested converter transfers.
    Dispatch {
        scenario: PathBuf,
        /// Override or add a transfer request, e.g. --transfer mmc=0.33.
        #[arg(long = "transfer")]
        transfers: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os("GOGSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match run(cli.command, &out_dir) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = classify_error(&e);
            ExitCode::from(code)
        }
    }
}

fn classify_error(e: &anyhow::Error) -> u8 {
    if let Some(core) = e.downcast_ref::<CoreError>() {
        match core {
            CoreError::Validation(_)
            | CoreError::UnknownId(_)
            | CoreError::DegenerateBranch(_)
            | CoreError::WrongController { .. }
            | CoreError::HypothesisViolated(_) => EXIT_VALIDATION,
            _ => EXIT_SOLVER,
        }
    } else if e.downcast_ref::<toml::de::Error>().is_some() {
        EXIT_VALIDATION
    } else {
        // Parse and reference errors from scenario loading.
        EXIT_VALIDATION
    }
}

fn run(command: Command, out_dir: &PathBuf) -> anyhow::Result<ExitCode> {
    match command {
        Command::Simulate {
            scenario,
            dt,
            t_end,
            fidelity,
        } => {
            let mut parsed = schema::load(&scenario)?;
            if let Some(dt) = dt {
                parsed.scenario.options.dt_s = dt;
            }
            if let Some(t_end) = t_end {
                parsed.scenario.options.t_end_s = t_end;
            }
            if let Some(f) = fidelity {
                parsed.scenario.fidelity = match f {
                    FidelityArg::Analytic => Fidelity::Analytic,
                    FidelityArg::Dynamic => Fidelity::Dynamic,
                };
            }
            let result = simulate(&parsed.scenario)?;
            let files = output::write_csvs(&result, out_dir)?;
            output::write_summary(&result, out_dir)?;
            match &result.status {
                SimStatus::Completed => {
                    println!(
                        "completed: {:.3} s simulated, wrote {} and summary.json in {}",
                        result.time_s.last().copied().unwrap_or(0.0),
                        files.join(", "),
                        out_dir.display()
                    );
                    Ok(ExitCode::SUCCESS)
                }
                SimStatus::Unstable { t_s, reason } => {
                    println!("unstable at t = {t_s} s: {reason:?}");
                    Ok(ExitCode::from(EXIT_UNSTABLE))
                }
            }
        }
        Command::Linearize {
            scenario,
            mode,
            fidelity,
        } => {
            let mut parsed = schema::load(&scenario)?;
            if let Some(f) = fidelity {
                parsed.scenario.fidelity = match f {
                    FidelityArg::Analytic => Fidelity::Analytic,
                    FidelityArg::Dynamic => Fidelity::Dynamic,
                };
            }
            let report = match mode {
                LinearizeMode::Theorem => theorem_report(&parsed.scenario)?,
                LinearizeMode::AtEquilibrium => equilibrium_report(&parsed.scenario)?,
            };
            std::fs::create_dir_all(out_dir)?;
            std::fs::write(
                out_dir.join("linearize.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckTheorem1 { n, seed } => {
            let report = theorem1_sweep(n, seed, &SweepRanges::default());
            std::fs::create_dir_all(out_dir)?;
            std::fs::write(
                out_dir.join("theorem1.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            println!(
                "{} draws, {} cases, {} counterexamples ({:.3} s)",
                report.n_draws,
                report.cases_checked,
                report.counterexamples.len(),
                report.elapsed_s
            );
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_SOLVER))
            }
        }
        Command::CheckGains { scenario } => {
            let parsed = schema::load(&scenario)?;
            let infos: Vec<IpcGainInfo> = parsed
                .scenario
                .ipcs
                .iter()
                .filter_map(|u| {
                    Some(IpcGainInfo {
                        id: u.id.clone(),
                        ac_subgrid: u.ac_subgrid,
                        dc_subgrid: u.dc_subgrid,
                        alpha: u.controller.alpha()?,
                        omega_set: u.controller.omega_set()?,
                    })
                })
                .collect();
            let report = check_gain_consistency(&infos)?;
            std::fs::create_dir_all(out_dir)?;
            std::fs::write(
                out_dir.join("gain_consistency.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            if report.consistent {
                println!("consistent: all alpha-ratio path products agree");
            } else {
                for v in &report.violations {
                    println!(
                        "inconsistent pair ({}, {}): ratio {:.6} vs required {:.6}",
                        v.ipc_a, v.ipc_b, v.actual_ratio, v.expected_ratio
                    );
                }
                for (a, b) in &report.omega_set_violations {
                    println!("frequency setpoints differ within one subgrid: {a}, {b}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Dispatch {
            scenario,
            transfers,
        } => {
            let parsed = schema::load(&scenario)?;
            let mut problem = parsed.dispatch.unwrap_or_else(DispatchProblem::default);
            for spec in &transfers {
                let (id, value) = spec
                    .split_once('=')
                    .ok_or_else(|| anyhow::anyhow!("--transfer expects ipc=value, got {spec:?}"))?;
                let value: f64 = value.parse()?;
                problem.transfers.retain(|(i, _)| i != id);
                problem.transfers.push((id.to_string(), value));
            }
            let (solution, _) = solve_dispatch(&parsed.scenario, &problem)?;
            std::fs::create_dir_all(out_dir)?;
            std::fs::write(
                out_dir.join("dispatch.json"),
                serde_json::to_string_pretty(&solution)?,
            )?;
            println!("{}", serde_json::to_string_pretty(&solution)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Reduced-model stability report under the closed-form hypotheses: the
/// scenario must contain exactly one converter, one AC droop source and one
/// DC droop source; network interfaces reduce to b_ac and g_dc.
fn theorem_report(scn: &gogsim_core::sim::Scenario) -> anyhow::Result<serde_json::Value> {
    scn.validate()?;
    if scn.ipcs.len() != 1 || scn.ac_sources.len() != 1 || scn.dc_sources.len() != 1 {
        anyhow::bail!(
            "theorem mode needs exactly one converter, one AC source and one DC source"
        );
    }
    let u = &scn.ipcs[0];
    let base = &scn.network.base;
    let b_bus = ac_interface_susceptance(
        &scn.network.ac[u.ac_subgrid],
        base,
        scn.ac_sources[0].bus.bus,
        u.ac_bus,
    )?;
    // Coupling reactance in series with the network path.
    let b_ac = 1.0 / (1.0 / b_bus + u.mmc.coupling_l_pu);
    let g_dc = dc_equivalent_conductance(
        &scn.network.dc[u.dc_subgrid],
        base,
        scn.dc_sources[0].node.node,
        u.dc_node,
    )?;
    let (controller, k_p_ac, k_p_dc, k_w_ac, k_w_dc) = match &u.controller {
        ControllerConfig::HybridDroop(c) => (
            TheoremController::HybridDroop,
            c.k_p_ac,
            c.k_p_dc,
            c.k_w_ac,
            c.k_w_dc,
        ),
        ControllerConfig::EnergyBalancing(c) => (
            TheoremController::EnergyBalancing,
            c.k_p_ac,
            c.k_p_dc,
            c.k_w_ac,
            c.k_w_dc,
        ),
        other => anyhow::bail!(
            "theorem mode covers the dual-port controllers, got {}",
            other.kind_name()
        ),
    };
    let params = TheoremParams {
        b_ac,
        k_ac: scn.ac_sources[0].droop_pu,
        g_dc,
        k_dc: scn.dc_sources[0].droop_pu,
        k_p_ac,
        k_p_dc,
        k_w_ac,
        k_w_dc,
    };
    let mut cases = Vec::new();
    for connection in [Connection::AcOnly, Connection::DcOnly, Connection::Both] {
        let sys = TheoremSystem {
            controller,
            params,
            connection,
        };
        let model = sys.closed_form()?;
        let report = certify(&model);
        cases.push(serde_json::json!({
            "connection": connection,
            "state_matrix": matrix_rows(&model.a),
            "labels": model.labels,
            "eigenvalues": report.eigenvalues.iter().map(|e| vec![e.re, e.im]).collect::<Vec<_>>(),
            "max_real_part": report.max_real_part,
            "verdict": report.verdict,
            "routh": report.routh,
        }));
    }
    Ok(serde_json::json!({
        "mode": "theorem",
        "controller": controller,
        "params": params,
        "cases": cases,
    }))
}

fn equilibrium_report(scn: &gogsim_core::sim::Scenario) -> anyhow::Result<serde_json::Value> {
    let (sys, snapshot) = settle(scn)?;
    let model = linearize(&sys, &snapshot)?;
    let report = certify(&model);
    // Steady-state relation residuals for dual-port converters.
    let mut scratch = sys.new_scratch();
    let (_, frame) = sys.derivatives(&snapshot.state, &mut scratch)?;
    let mut relations = Vec::new();
    for (k, u) in sys.scn.ipcs.iter().enumerate() {
        if matches!(
            u.controller,
            ControllerConfig::HybridDroop(_) | ControllerConfig::EnergyBalancing(_)
        ) {
            let point = SettledPoint {
                omega: frame.ipc[k].omega,
                v_dc: frame.ipc[k].v_dc_terminal,
                w_t: frame.ipc[k].w_t,
                p_ac: frame.ipc[k].p_ac,
            };
            if let Ok(res) = steady_state_relations(&u.controller, &point) {
                relations.push(serde_json::json!({ "ipc": u.id, "residuals": res }));
            }
        }
    }
    Ok(serde_json::json!({
        "mode": "at_equilibrium",
        "settled_at_s": snapshot.t_s,
        "residual_norm": snapshot.residual_norm,
        "labels": model.labels,
        "eigenvalues": report.eigenvalues.iter().map(|e| vec![e.re, e.im]).collect::<Vec<_>>(),
        "max_real_part": report.max_real_part,
        "verdict": report.verdict,
        "steady_state_relations": relations,
    }))
}

fn matrix_rows(a: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}
