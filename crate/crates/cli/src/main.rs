//! Scenario runner for the on-off load frequency-response toolkit.
//!
//! Exit codes: 0 when every verdict in the produced report passes, 1 when a
//! verdict fails, 2 on errors (bad scenario, solver failure).

use anyhow::{Context, Result, anyhow};
use clap::{Args, Parser, Subcommand};
use gridfreq_core::consensus::{ConsensusState, check_threshold_clearance, psi_steady_state,
    DEFAULT_GUARD_BAND};
use gridfreq_core::control::{ControllerSet, validate_design};
use gridfreq_core::dispatch::{
    DispatchProblem, GeneticParams, epsilon_bound, kkt_residual, solve_exact, solve_genetic,
    solve_relaxed,
};
use gridfreq_core::equilibrium::equilibria_adapted;
use gridfreq_core::sim::{HybridState, SimProblem, simulate, simulate_consensus};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use gridfreq_cli::{output, report, scenario};

#[derive(Parser)]
#[command(
    name = "gridfreq",
    about = "Primary frequency response with on-off controllable loads: \
             simulation, equilibrium analysis, threshold design, allocation \
             optimization and distributed demand averaging",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Random seed for the genetic solver (overrides the scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory format.
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the hybrid system and write the trajectory plus a summary.
    Simulate(CommonArgs),
    /// Compute the equilibria of the post-disturbance system.
    Equilibrium(CommonArgs),
    /// Run threshold synthesis and validate the design conditions.
    Design(CommonArgs),
    /// Solve the allocation problem (exhaustive, relaxed, genetic) and
    /// certify the design-rule equilibria.
    Optimize(CommonArgs),
    /// Integrate the distributed demand-averaging estimator alone.
    Consensus(CommonArgs),
    /// Parse the scenario and check schema plus design conditions.
    Validate(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Equilibrium(a) => run_equilibrium(a),
        Command::Design(a) => run_design(a),
        Command::Optimize(a) => run_optimize(a),
        Command::Consensus(a) => run_consensus(a),
        Command::Validate(a) => run_validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(
    args: &CommonArgs,
) -> Result<(scenario::ScenarioDocument, scenario::ResolvedScenario)> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let doc = scenario::parse_scenario(&text)?;
    let resolved = scenario::resolve(&doc)?;
    Ok((doc, resolved))
}

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), content)
        .with_context(|| format!("writing {}", dir.join(name).display()))?;
    Ok(())
}

fn run_simulate(args: &CommonArgs) -> Result<bool> {
    let (_, resolved) = load_scenario(args)?;
    let problem = SimProblem {
        model: &resolved.model,
        controller: &resolved.controller,
        disturbances: &resolved.disturbances,
        comm: resolved.comm.as_ref(),
    };
    let initial =
        HybridState::at_rest(&resolved.model, &resolved.controller, resolved.comm.as_ref());
    let trajectory = simulate(&problem, &initial, &resolved.sim)?;
    let summary = report::summarize(&resolved, &trajectory);
    match args.format.as_str() {
        "csv" => {
            let csv = output::trajectory_csv(
                &trajectory,
                resolved.model.n_buses(),
                resolved.simulation.output_period,
            );
            write_artifact(&args.out, "trajectory.csv", &csv)?;
        }
        _ => {
            write_artifact(
                &args.out,
                "trajectory.json",
                &output::to_json_file(&trajectory)?,
            )?;
        }
    }
    write_artifact(&args.out, "summary.json", &output::to_json_file(&summary)?)?;
    println!(
        "simulate: {} jumps, terminal residual {:.2e}, equilibrium {:?}, overall {}",
        summary.jumps,
        summary.terminal_residual,
        summary.equilibrium_match,
        if summary.overall_pass { "pass" } else { "fail" }
    );
    Ok(summary.overall_pass)
}

#[derive(Serialize)]
struct EquilibriumArtifact {
    equilibrium_status: report::EquilibriumMatch,
    points: Vec<gridfreq_core::equilibrium::EquilibriumPoint>,
    flow_residuals: Vec<f64>,
}

fn run_equilibrium(args: &CommonArgs) -> Result<bool> {
    let (_, resolved) = load_scenario(args)?;
    let model = resolved.model.with_loads(&report::final_loads(&resolved))?;
    let (status, points) = report::terminal_equilibria(&resolved);
    let flow_residuals: Vec<f64> = points
        .iter()
        .map(|p| p.residual(&model).unwrap_or(f64::NAN))
        .collect();
    let pass = !matches!(status, report::EquilibriumMatch::NotApplicable)
        && flow_residuals.iter().all(|r| *r < 1e-9);
    let artifact = EquilibriumArtifact {
        equilibrium_status: status,
        points,
        flow_residuals,
    };
    write_artifact(
        &args.out,
        "equilibrium.json",
        &output::to_json_file(&artifact)?,
    )?;
    println!(
        "equilibrium: {:?}, {} point(s)",
        artifact.equilibrium_status,
        artifact.points.len()
    );
    Ok(pass)
}

#[derive(Serialize)]
struct DesignArtifact {
    controller: ControllerSet,
    report: gridfreq_core::control::DesignReport,
}

fn run_design(args: &CommonArgs) -> Result<bool> {
    let (_, resolved) = load_scenario(args)?;
    let report = validate_design(&resolved.controller, resolved.model.aggregate_response());
    let pass = report.all_pass;
    let artifact = DesignArtifact {
        controller: resolved.controller.clone(),
        report,
    };
    write_artifact(&args.out, "design.json", &output::to_json_file(&artifact)?)?;
    for check in &artifact.report.checks {
        println!(
            "design: bus {} {} {} (lhs {}, rhs {})",
            check.bus,
            check.condition,
            if check.pass { "pass" } else { "FAIL" },
            check.lhs,
            check.rhs
        );
    }
    println!("design: overall {}", if pass { "pass" } else { "fail" });
    Ok(pass)
}

#[derive(Serialize)]
struct OptimizeArtifact {
    exact: gridfreq_core::dispatch::DispatchSolution,
    relaxed: gridfreq_core::dispatch::RelaxedSolution,
    kkt_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    genetic: Option<gridfreq_core::dispatch::DispatchSolution>,
    epsilon: f64,
    equilibria: Vec<Vec<bool>>,
    certificates: Vec<gridfreq_core::dispatch::OptimalityCertificate>,
    all_pass: bool,
}

fn run_optimize(args: &CommonArgs) -> Result<bool> {
    let (_, resolved) = load_scenario(args)?;
    let loads = match &resolved.controller {
        ControllerSet::Optimal(loads) => loads.clone(),
        _ => {
            return Err(anyhow!(
                "optimize needs an optimal-mode controller (load costs are required)"
            ));
        }
    };
    let final_p = report::final_loads(&resolved);
    let model = resolved.model.with_loads(&final_p)?;
    let mut problem = DispatchProblem::from_network(&model, &loads);
    problem.p_load = final_p;

    let exact = solve_exact(&problem)?;
    let relaxed = solve_relaxed(&problem)?;
    let residual = kkt_residual(&problem, &relaxed);
    let opt = resolved.optimization.unwrap_or_default();
    let genetic = if opt.run_genetic {
        let params = GeneticParams {
            population: opt.population,
            generations: opt.generations,
            ..GeneticParams::default()
        };
        Some(solve_genetic(
            &problem,
            args.seed.unwrap_or(opt.seed),
            &params,
        )?)
    } else {
        None
    };
    let points = equilibria_adapted(&model, &ControllerSet::Optimal(loads))?;
    let mut certificates = Vec::new();
    for p in &points {
        certificates.push(gridfreq_core::dispatch::certify_equilibrium(
            &problem, &p.sigma,
        )?);
    }
    if certificates.iter().any(|c| !c.droop_matches_inverse_cost) {
        eprintln!(
            "warning: droop gains do not equal inverse generation costs; \
             the epsilon guarantee is only stated under that coupling"
        );
    }
    let all_pass = certificates.iter().all(|c| c.pass) && residual < 1e-9;
    let artifact = OptimizeArtifact {
        exact,
        relaxed,
        kkt_residual: residual,
        genetic,
        epsilon: epsilon_bound(&problem),
        equilibria: points.iter().map(|p| p.sigma.clone()).collect(),
        certificates,
        all_pass,
    };
    write_artifact(&args.out, "optimize.json", &output::to_json_file(&artifact)?)?;
    for c in &artifact.certificates {
        println!(
            "optimize: equilibrium gap {:.6e} <= epsilon {:.6e}: {}",
            c.gap,
            c.epsilon,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(all_pass)
}

#[derive(Serialize)]
struct ConsensusArtifact {
    steady_command: f64,
    terminal_error: f64,
    terminal_residual: f64,
    energy_nonincreasing: bool,
    load_clearance: gridfreq_core::consensus::ClearanceReport,
    all_pass: bool,
}

fn run_consensus(args: &CommonArgs) -> Result<bool> {
    let (_, resolved) = load_scenario(args)?;
    let graph = resolved
        .comm
        .clone()
        .ok_or_else(|| anyhow!("consensus needs a communication section in the scenario"))?;
    let p_load = resolved.model.p_loads();
    let trajectory = simulate_consensus(
        &graph,
        &p_load,
        &resolved.disturbances,
        &ConsensusState::zeros(&graph),
        &resolved.sim,
    )?;
    let final_p = report::final_loads(&resolved);
    let ell: f64 = final_p.iter().sum();
    let reference = ConsensusState {
        power_cmd: vec![-ell; graph.n_buses()],
        psi: psi_steady_state(&graph, &final_p)?,
    };
    let csv = output::consensus_csv(&trajectory, &graph, &reference);
    write_artifact(&args.out, "consensus.csv", &csv)?;

    let terminal = trajectory.states.last().unwrap();
    let terminal_error = terminal
        .power_cmd
        .iter()
        .fold(0.0f64, |m, c| m.max((c + ell).abs()));
    let energies: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| gridfreq_core::consensus::consensus_energy(&graph, s, &reference))
        .collect();
    let peak = energies.iter().fold(0.0f64, |m, &v| m.max(v));
    let energy_nonincreasing = energies.windows(2).all(|w| w[1] <= w[0] + 1e-9 * peak);
    let thresholds: Vec<(f64, f64)> = match &resolved.controller {
        ControllerSet::Adapted(loads) => loads
            .iter()
            .map(|(_, c)| (c.pc_lower, c.pc_lower))
            .collect(),
        ControllerSet::Optimal(loads) => loads
            .iter()
            .map(|(_, c)| (c.pc_lower, c.pc_upper))
            .collect(),
        _ => vec![],
    };
    let load_clearance = check_threshold_clearance(ell, &thresholds, DEFAULT_GUARD_BAND);
    let all_pass = energy_nonincreasing && load_clearance.pass;
    let artifact = ConsensusArtifact {
        steady_command: -ell,
        terminal_error,
        terminal_residual: trajectory.terminal_residual,
        energy_nonincreasing,
        load_clearance,
        all_pass,
    };
    write_artifact(
        &args.out,
        "consensus.json",
        &output::to_json_file(&artifact)?,
    )?;
    println!(
        "consensus: terminal error {:.2e}, energy nonincreasing {}, clearance {}",
        artifact.terminal_error, artifact.energy_nonincreasing, artifact.load_clearance.pass
    );
    Ok(all_pass)
}

#[derive(Serialize)]
struct ValidateArtifact {
    schema_ok: bool,
    design: gridfreq_core::control::DesignReport,
    all_pass: bool,
}

fn run_validate(args: &CommonArgs) -> Result<bool> {
    let (_, resolved) = load_scenario(args)?;
    let design = validate_design(&resolved.controller, resolved.model.aggregate_response());
    let all_pass = design.all_pass;
    for check in design.checks.iter().filter(|c| !c.pass) {
        println!(
            "validate: bus {} fails {} (lhs {}, rhs {})",
            check.bus, check.condition, check.lhs, check.rhs
        );
    }
    let artifact = ValidateArtifact {
        schema_ok: true,
        design,
        all_pass,
    };
    write_artifact(
        &args.out,
        "validate.json",
        &output::to_json_file(&artifact)?,
    )?;
    println!("validate: {}", if all_pass { "pass" } else { "fail" });
    Ok(all_pass)
}
