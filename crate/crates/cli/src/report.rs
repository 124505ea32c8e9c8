//! Summary reports assembled after a run.

use gridfreq_core::consensus::ConsensusState;
use gridfreq_core::control::{ControllerSet, DesignReport, validate_design};
use gridfreq_core::diagnostics::{
    CHATTERING_MIN_CONSECUTIVE, CONVERGENCE_RESIDUAL_TOL, ChatteringReport, DwellReport,
    LIMIT_CYCLE_FREQ_RANGE_TOL, LIMIT_CYCLE_MIN_SWITCHES, LimitCycleReport, LyapunovReport,
    detect_chattering, detect_limit_cycle, lyapunov_series, min_dwell,
};
use gridfreq_core::dispatch::{DispatchProblem, OptimalityCertificate, certify_equilibrium};
use gridfreq_core::equilibrium::{
    EquilibriumPoint, HysteresisOutcome, equilibria_adapted, full_equilibrium,
    solve_hysteresis_equilibrium, solve_static_equilibrium,
};
use gridfreq_core::control::StaticSubMode;
use gridfreq_core::sim::Trajectory;
use serde::{Deserialize, Serialize};

use crate::scenario::ResolvedScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMatch {
    /// Terminal state sits on a computed equilibrium.
    Matched,
    /// Equilibria exist but the terminal state is not on one.
    NotMatched,
    /// No equilibrium exists for this configuration and load.
    NoEquilibrium,
    /// No comparison applicable (equilibrium solver unavailable for mode).
    NotApplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovVerdict {
    pub monotone_after_settling: bool,
    pub settling_time: f64,
    pub max_flow_rate: f64,
    pub max_jump_delta: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    /// Echo of the effective inputs every verdict can be recomputed from.
    pub inputs: InputsEcho,
    pub terminal_omega: Vec<f64>,
    pub terminal_levels: Vec<i8>,
    pub terminal_residual: f64,
    pub jumps: u64,
    pub equilibrium_match: EquilibriumMatch,
    pub equilibria: Vec<EquilibriumSummary>,
    pub chattering: ChatteringReport,
    pub limit_cycle: LimitCycleReport,
    pub dwell: DwellReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovVerdict>,
    pub design: DesignReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_certificate: Option<OptimalityCertificate>,
    pub overall_pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputsEcho {
    pub aggregate_response: f64,
    pub aggregate_load_initial: f64,
    pub aggregate_load_final: f64,
    pub n_buses: usize,
    pub n_loads: usize,
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub omega: f64,
    pub sigma: Vec<bool>,
    pub d_ctrl: Vec<f64>,
}

/// Per-bus load profile after all disturbances have been applied.
pub fn final_loads(scenario: &ResolvedScenario) -> Vec<f64> {
    let mut p = scenario.model.p_loads();
    for d in &scenario.disturbances {
        p[d.bus] += d.delta_load;
    }
    p
}

/// Equilibria of the post-disturbance system, when a solver applies.
pub fn terminal_equilibria(
    scenario: &ResolvedScenario,
) -> (EquilibriumMatch, Vec<EquilibriumPoint>) {
    let model = scenario
        .model
        .with_loads(&final_loads(scenario))
        .expect("load override keeps the model valid");
    match &scenario.controller {
        ControllerSet::Uncontrolled => {
            let omega = -model.aggregate_load() / model.aggregate_response();
            match full_equilibrium(&model, omega, vec![], vec![0.0; model.n_buses()]) {
                Ok(p) => (EquilibriumMatch::Matched, vec![p]),
                Err(_) => (EquilibriumMatch::NotApplicable, vec![]),
            }
        }
        ControllerSet::Static { loads, .. } => match solve_static_equilibrium(&model, loads) {
            Ok(p) => (EquilibriumMatch::Matched, vec![p]),
            Err(_) => (EquilibriumMatch::NotApplicable, vec![]),
        },
        ControllerSet::Hysteresis(loads) => {
            match solve_hysteresis_equilibrium(&model, loads, false) {
                Ok(sol) => match sol.outcome {
                    HysteresisOutcome::Found(p) => (EquilibriumMatch::Matched, vec![p]),
                    HysteresisOutcome::NoEquilibrium { .. } => {
                        (EquilibriumMatch::NoEquilibrium, vec![])
                    }
                },
                Err(_) => (EquilibriumMatch::NotApplicable, vec![]),
            }
        }
        set => match equilibria_adapted(&model, set) {
            Ok(points) => (EquilibriumMatch::Matched, points),
            Err(_) => (EquilibriumMatch::NotApplicable, vec![]),
        },
    }
}

/// Assembles the summary of a simulation run.
pub fn summarize(scenario: &ResolvedScenario, trajectory: &Trajectory) -> SummaryReport {
    let model = &scenario.model;
    let sim = &scenario.simulation;
    let terminal = trajectory.final_state();
    let final_p = final_loads(scenario);
    let post_model = model.with_loads(&final_p).expect("valid loads");

    let chattering_period = sim.chattering_period.unwrap_or(match &scenario.controller {
        ControllerSet::Static {
            sub_mode: StaticSubMode::Sampled { period },
            ..
        } => *period,
        _ => 0.01,
    });
    let chattering =
        detect_chattering(trajectory, chattering_period, CHATTERING_MIN_CONSECUTIVE);
    let window = sim.limit_cycle_window.unwrap_or(0.2 * sim.horizon);
    let limit_cycle = detect_limit_cycle(
        trajectory,
        window,
        LIMIT_CYCLE_MIN_SWITCHES,
        LIMIT_CYCLE_FREQ_RANGE_TOL,
        CONVERGENCE_RESIDUAL_TOL,
    );
    let dwell = min_dwell(trajectory);
    let design = validate_design(&scenario.controller, model.aggregate_response());

    let (eq_status, points) = terminal_equilibria(scenario);
    let mut equilibrium_match = eq_status;
    let mut matched_point: Option<&EquilibriumPoint> = None;
    if !points.is_empty() {
        let sigma: Vec<bool> = terminal.levels.iter().map(|&v| v == 1).collect();
        matched_point = points.iter().find(|p| {
            let omega_close = terminal
                .grid
                .omega
                .iter()
                .all(|w| (w - p.omega).abs() < 1e-6);
            let sigma_matches = match &scenario.controller {
                ControllerSet::Static { .. } | ControllerSet::Uncontrolled => true,
                _ => p.sigma == sigma,
            };
            omega_close && sigma_matches
        });
        equilibrium_match = if matched_point.is_some() {
            EquilibriumMatch::Matched
        } else {
            EquilibriumMatch::NotMatched
        };
    }

    // Lyapunov monitoring against the equilibrium the run settled on.
    let lyapunov = matched_point.map(|point| {
        let settling = sim.settling_time.unwrap_or(0.5 * sim.horizon);
        let consensus_ref: Option<ConsensusState> = terminal.consensus.as_ref().map(|c| {
            ConsensusState {
                power_cmd: vec![-post_model.aggregate_load(); post_model.n_buses()],
                // Link reference: the settled integrators themselves (the
                // steady assignment is not unique on cyclic graphs).
                psi: c.psi.clone(),
            }
        });
        let rep: LyapunovReport = lyapunov_series(
            &post_model,
            trajectory,
            point,
            scenario.comm.as_ref().zip(consensus_ref.as_ref()),
            settling,
        );
        LyapunovVerdict {
            monotone_after_settling: rep.monotone_after_settling,
            settling_time: rep.settling_time,
            max_flow_rate: rep.max_flow_rate,
            max_jump_delta: rep.max_jump_delta,
            tolerance: rep.tolerance,
        }
    });

    // Certify the settled switch vector when the mode carries costs and the
    // scenario asks for optimization analysis.
    let epsilon_certificate = match (&scenario.controller, &scenario.optimization) {
        (ControllerSet::Optimal(loads), Some(_)) => {
            let mut problem = DispatchProblem::from_network(&post_model, loads);
            problem.p_load = final_p.clone();
            let sigma: Vec<bool> = terminal.levels.iter().map(|&v| v == 1).collect();
            certify_equilibrium(&problem, &sigma).ok()
        }
        _ => None,
    };

    let overall_pass = design.all_pass
        && equilibrium_match != EquilibriumMatch::NotMatched
        && lyapunov
            .as_ref()
            .map(|l| l.monotone_after_settling && l.max_jump_delta < 1e-12)
            .unwrap_or(true)
        && epsilon_certificate
            .as_ref()
            .map(|c| c.pass)
            .unwrap_or(true);

    SummaryReport {
        inputs: InputsEcho {
            aggregate_response: model.aggregate_response(),
            aggregate_load_initial: model.aggregate_load(),
            aggregate_load_final: final_p.iter().sum(),
            n_buses: model.n_buses(),
            n_loads: scenario.controller.n_loads(),
            horizon: sim.horizon,
            dt: sim.dt,
        },
        terminal_omega: terminal.grid.omega.clone(),
        terminal_levels: terminal.levels.clone(),
        terminal_residual: trajectory.terminal_residual,
        jumps: trajectory.n_jumps(),
        equilibrium_match,
        equilibria: points
            .iter()
            .map(|p| EquilibriumSummary {
                omega: p.omega,
                sigma: p.sigma.clone(),
                d_ctrl: p.d_ctrl.clone(),
            })
            .collect(),
        chattering,
        limit_cycle,
        dwell,
        lyapunov,
        design,
        epsilon_certificate,
        overall_pass,
    }
}
