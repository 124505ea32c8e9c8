//! Trajectory diagnostics: chattering, limit cycles, dwell times and
//! Lyapunov monitoring.

use crate::consensus::{CommGraph, ConsensusState, consensus_energy};
use crate::equilibrium::EquilibriumPoint;
use crate::grid::NetworkModel;
use crate::sim::Trajectory;
use serde::{Deserialize, Serialize};

/// Per-load chattering diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatteringLoad {
    pub load: usize,
    pub bus: usize,
    pub switch_count: usize,
    /// Minimum interval between consecutive switches, absent without at
    /// least two switches.
    pub min_interval: Option<f64>,
    /// Number of inter-switch intervals at or below twice the sampling
    /// period.
    pub short_intervals: usize,
    /// Longest run of consecutive short intervals.
    pub longest_short_run: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatteringReport {
    pub per_load: Vec<ChatteringLoad>,
    pub sampling_period: f64,
    /// Intervals at or below this count as sampling-rate-limited.
    pub short_threshold: f64,
    /// Consecutive short intervals required to flag a load.
    pub min_consecutive_short: usize,
    pub any_flagged: bool,
}

/// Default number of consecutive short intervals required to flag
/// chattering.
pub const CHATTERING_MIN_CONSECUTIVE: usize = 5;

/// Flags loads whose switching is limited only by the controller sampling
/// rate: at least `min_consecutive_short` consecutive inter-switch intervals
/// no longer than twice the sampling period.
pub fn detect_chattering(
    trajectory: &Trajectory,
    sampling_period: f64,
    min_consecutive_short: usize,
) -> ChatteringReport {
    let threshold = 2.0 * sampling_period;
    let per_load: Vec<ChatteringLoad> = trajectory
        .load_buses
        .iter()
        .enumerate()
        .map(|(load, &bus)| {
            let times = trajectory.event_times(load);
            let intervals: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
            let min_interval = intervals
                .iter()
                .copied()
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
            let short_intervals = intervals.iter().filter(|&&v| v <= threshold).count();
            let mut run = 0usize;
            let mut longest_short_run = 0usize;
            for &v in &intervals {
                if v <= threshold {
                    run += 1;
                    longest_short_run = longest_short_run.max(run);
                } else {
                    run = 0;
                }
            }
            ChatteringLoad {
                load,
                bus,
                switch_count: times.len(),
                min_interval,
                short_intervals,
                longest_short_run,
                flagged: longest_short_run >= min_consecutive_short,
            }
        })
        .collect();
    let any_flagged = per_load.iter().any(|l| l.flagged);
    ChatteringReport {
        per_load,
        sampling_period,
        short_threshold: threshold,
        min_consecutive_short,
        any_flagged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleVerdict {
    LimitCycle,
    Converged,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub window: f64,
    /// Switches of each load inside the final window.
    pub window_switches: Vec<usize>,
    /// Frequency range at each load's bus inside the final window.
    pub window_freq_range: Vec<f64>,
    pub min_switches_to_flag: usize,
    pub freq_range_tol: f64,
    pub convergence_tol: f64,
    pub terminal_residual: f64,
    pub verdict: CycleVerdict,
}

/// Default switch count within the window that indicates a sustained cycle.
pub const LIMIT_CYCLE_MIN_SWITCHES: usize = 4;
/// Default frequency-range floor distinguishing a cycle from numerical noise
/// (rad/s).
pub const LIMIT_CYCLE_FREQ_RANGE_TOL: f64 = 1e-6;
/// Default terminal-derivative bound for declaring convergence.
pub const CONVERGENCE_RESIDUAL_TOL: f64 = 1e-8;

/// Flags a steady-state limit cycle: within the final `window` seconds some
/// load keeps switching while the frequency at its bus keeps oscillating.
/// Otherwise reports convergence based on the terminal state derivative.
pub fn detect_limit_cycle(
    trajectory: &Trajectory,
    window: f64,
    min_switches: usize,
    freq_range_tol: f64,
    convergence_tol: f64,
) -> LimitCycleReport {
    let t_start = trajectory.horizon - window;
    let n_loads = trajectory.load_buses.len();
    let mut window_switches = vec![0usize; n_loads];
    for e in &trajectory.events {
        if e.t >= t_start {
            window_switches[e.load] += 1;
        }
    }
    let mut window_freq_range = vec![0.0f64; n_loads];
    for (load, &bus) in trajectory.load_buses.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in trajectory.samples.iter().filter(|s| s.t >= t_start) {
            let w = s.state.grid.omega[bus];
            lo = lo.min(w);
            hi = hi.max(w);
        }
        window_freq_range[load] = if hi >= lo { hi - lo } else { 0.0 };
    }
    let cycling = (0..n_loads)
        .any(|l| window_switches[l] >= min_switches && window_freq_range[l] > freq_range_tol);
    let verdict = if cycling {
        CycleVerdict::LimitCycle
    } else if trajectory.terminal_residual < convergence_tol {
        CycleVerdict::Converged
    } else {
        CycleVerdict::Undetermined
    };
    LimitCycleReport {
        window,
        window_switches,
        window_freq_range,
        min_switches_to_flag: min_switches,
        freq_range_tol,
        convergence_tol,
        terminal_residual: trajectory.terminal_residual,
        verdict,
    }
}

/// Per-load dwell-time summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadDwell {
    pub load: usize,
    pub bus: usize,
    pub switch_count: usize,
    /// Minimum gap between consecutive switches.
    pub consecutive: Option<f64>,
    /// Minimum gap between switches two apart, the bound that holds in
    /// distributed runs where a frequency switch and a command switch can
    /// come close together.
    pub two_apart: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellReport {
    pub per_load: Vec<LoadDwell>,
}

/// Minimum inter-switch intervals per load (one- and two-apart).
pub fn min_dwell(trajectory: &Trajectory) -> DwellReport {
    let per_load = trajectory
        .load_buses
        .iter()
        .enumerate()
        .map(|(load, &bus)| {
            let times = trajectory.event_times(load);
            let gap_min = |stride: usize| {
                times
                    .windows(stride + 1)
                    .map(|w| w[stride] - w[0])
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
            };
            LoadDwell {
                load,
                bus,
                switch_count: times.len(),
                consecutive: gap_min(1),
                two_apart: gap_min(2),
            }
        })
        .collect();
    DwellReport { per_load }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub t: f64,
    pub jumps: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub series: Vec<LyapunovSample>,
    pub settling_time: f64,
    /// Largest increase of the function over one flow interval after
    /// settling.
    pub max_flow_increment: f64,
    /// Largest discrete-difference slope over flow intervals after settling.
    pub max_flow_rate: f64,
    /// Largest change across any jump (the continuous state is frozen there,
    /// so this is zero up to representation).
    pub max_jump_delta: f64,
    /// Estimated Lipschitz scale of the function's slope after settling.
    pub lipschitz_estimate: f64,
    /// Admissible slope for the discretized monotonicity check:
    /// 10 · dt · Lipschitz estimate, plus a rounding floor.
    pub tolerance: f64,
    pub monotone_after_settling: bool,
}

/// Quadratic storage function centred at an equilibrium:
/// half the inertia-weighted frequency error, susceptance-weighted phase
/// error and governor-weighted mechanical-power error. The phase term uses
/// the half factor so its derivative telescopes against the line flows.
pub fn lyapunov_value(
    model: &NetworkModel,
    state: &crate::grid::ContinuousState,
    eq: &EquilibriumPoint,
) -> f64 {
    let mut total = 0.0;
    for (j, b) in model.buses().iter().enumerate() {
        let dw = state.omega[j] - eq.omega;
        let dpm = state.p_mech[j] - eq.p_mech[j];
        total += 0.5 * b.inertia * dw * dw + 0.5 * b.governor_tc * dpm * dpm;
    }
    for (l, (e, e_star)) in model.lines().iter().zip(state.eta.iter().zip(&eq.eta)) {
        let de = e - e_star;
        total += 0.5 * l.susceptance * de * de;
    }
    total
}

/// Evaluates the storage function along a trajectory and checks numerical
/// monotonicity after `settling_time`.
///
/// In distributed runs the estimator's quadratic distance is added, centred
/// at the uniform steady command and a link reference; when the steady link
/// assignment is ambiguous the caller passes the final simulated one.
pub fn lyapunov_series(
    model: &NetworkModel,
    trajectory: &Trajectory,
    eq: &EquilibriumPoint,
    consensus_ref: Option<(&CommGraph, &ConsensusState)>,
    settling_time: f64,
) -> LyapunovReport {
    let series: Vec<LyapunovSample> = trajectory
        .samples
        .iter()
        .map(|s| {
            let mut value = lyapunov_value(model, &s.state.grid, eq);
            if let (Some((graph, reference)), Some(cons)) = (consensus_ref, &s.state.consensus) {
                value += consensus_energy(graph, cons, reference);
            }
            LyapunovSample {
                t: s.t,
                jumps: s.jumps,
                value,
            }
        })
        .collect();

    let mut max_jump_delta = 0.0f64;
    let mut max_flow_increment = 0.0f64;
    let mut max_flow_rate = 0.0f64;
    let mut slopes: Vec<(f64, f64)> = Vec::new(); // (interval midpoint, dV/dt)
    for w in series.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.jumps != a.jumps {
            max_jump_delta = max_jump_delta.max((b.value - a.value).abs());
            continue;
        }
        let dt = b.t - a.t;
        if dt <= 0.0 {
            continue;
        }
        if a.t >= settling_time {
            max_flow_increment = max_flow_increment.max(b.value - a.value);
            max_flow_rate = max_flow_rate.max((b.value - a.value) / dt);
            slopes.push((0.5 * (a.t + b.t), (b.value - a.value) / dt));
        }
    }
    let mut lipschitz = 0.0f64;
    for w in slopes.windows(2) {
        let dt = w[1].0 - w[0].0;
        if dt > 0.0 {
            lipschitz = lipschitz.max((w[1].1 - w[0].1).abs() / dt);
        }
    }
    let peak = series.iter().fold(0.0f64, |m, s| m.max(s.value));
    // Floor absorbs floating-point rounding of the quadratic form: a handful
    // of ulps of the peak value per step interval.
    let floor = 1e3 * f64::EPSILON * peak / trajectory.dt.max(f64::EPSILON);
    let tolerance = 10.0 * trajectory.dt * lipschitz + floor;
    let monotone = max_flow_rate <= tolerance;
    LyapunovReport {
        series,
        settling_time,
        max_flow_increment,
        max_flow_rate,
        max_jump_delta,
        lipschitz_estimate: lipschitz,
        tolerance,
        monotone_after_settling: monotone,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{
        AdaptedConfig, ControllerSet, HysteresisThresholds, StaticSubMode, StaticSwitchConfig,
        design1_pc_lower,
    };
    use crate::grid::BusParams;
    use crate::sim::{HybridState, SimConfig, SimProblem, Trajectory, simulate};
    use approx::assert_abs_diff_eq;

    fn single_bus(p_load: f64) -> NetworkModel {
        NetworkModel::new(vec![BusParams::unit(p_load)], vec![]).unwrap()
    }

    fn run(
        model: &NetworkModel,
        controller: &ControllerSet,
        horizon: f64,
    ) -> Trajectory {
        let problem = SimProblem {
            model,
            controller,
            disturbances: &[],
            comm: None,
        };
        let initial = HybridState::at_rest(model, controller, None);
        let cfg = SimConfig {
            horizon,
            ..SimConfig::default()
        };
        simulate(&problem, &initial, &cfg).unwrap()
    }

    fn sampled_fixture() -> ControllerSet {
        ControllerSet::Static {
            sub_mode: StaticSubMode::Sampled { period: 0.01 },
            loads: vec![(
                0,
                StaticSwitchConfig {
                    omega_upper: 0.05,
                    omega_lower: -0.05,
                    d_up: 0.2,
                    d_down: 0.0,
                },
            )],
        }
    }

    fn hysteresis_fixture() -> ControllerSet {
        ControllerSet::Hysteresis(vec![(
            0,
            HysteresisThresholds {
                omega_off: 0.04,
                omega_on: 0.06,
                magnitude: 0.1,
            },
        )])
    }

    fn adapted_fixture() -> ControllerSet {
        let pc_lower = design1_pc_lower(&[0.04], 2.0).unwrap()[0];
        ControllerSet::Adapted(vec![(
            0,
            AdaptedConfig {
                thresholds: HysteresisThresholds {
                    omega_off: 0.04,
                    omega_on: 0.06,
                    magnitude: 0.1,
                },
                pc_lower,
            },
        )])
    }

    #[test]
    fn chattering_flagged_on_sampled_fixture() {
        let model = single_bus(-0.15);
        let controller = sampled_fixture();
        let traj = run(&model, &controller, 5.0);
        let report = detect_chattering(&traj, 0.01, CHATTERING_MIN_CONSECUTIVE);
        assert!(report.any_flagged);
        assert_abs_diff_eq!(report.per_load[0].min_interval.unwrap(), 0.01, epsilon = 1e-9);
    }

    #[test]
    fn chattering_absent_under_hysteresis() {
        let model = single_bus(-0.13);
        let traj = run(&model, &hysteresis_fixture(), 20.0);
        let report = detect_chattering(&traj, 0.01, CHATTERING_MIN_CONSECUTIVE);
        assert!(!report.any_flagged);
        assert!(report.per_load[0].min_interval.unwrap() > 0.02);
    }

    #[test]
    fn chattering_vacuous_without_events() {
        let model = single_bus(-0.01);
        let traj = run(&model, &hysteresis_fixture(), 2.0);
        let report = detect_chattering(&traj, 0.01, CHATTERING_MIN_CONSECUTIVE);
        assert!(!report.any_flagged);
        assert_eq!(report.per_load[0].min_interval, None);
    }

    #[test]
    fn limit_cycle_flagged_on_hysteresis_fixture() {
        let model = single_bus(-0.13);
        let traj = run(&model, &hysteresis_fixture(), 50.0);
        let report = detect_limit_cycle(
            &traj,
            10.0,
            LIMIT_CYCLE_MIN_SWITCHES,
            LIMIT_CYCLE_FREQ_RANGE_TOL,
            CONVERGENCE_RESIDUAL_TOL,
        );
        assert_eq!(report.verdict, CycleVerdict::LimitCycle);
    }

    #[test]
    fn limit_cycle_absent_under_adapted() {
        let model = single_bus(-0.13);
        let traj = run(&model, &adapted_fixture(), 50.0);
        let report = detect_limit_cycle(
            &traj,
            10.0,
            LIMIT_CYCLE_MIN_SWITCHES,
            LIMIT_CYCLE_FREQ_RANGE_TOL,
            CONVERGENCE_RESIDUAL_TOL,
        );
        assert_eq!(report.verdict, CycleVerdict::Converged);
    }

    #[test]
    fn limit_cycle_absent_on_constant_trajectory() {
        let model = single_bus(0.0);
        let traj = run(&model, &hysteresis_fixture(), 4.0);
        let report = detect_limit_cycle(
            &traj,
            1.0,
            LIMIT_CYCLE_MIN_SWITCHES,
            LIMIT_CYCLE_FREQ_RANGE_TOL,
            CONVERGENCE_RESIDUAL_TOL,
        );
        assert_eq!(report.verdict, CycleVerdict::Converged);
        assert_eq!(report.window_switches, vec![0]);
    }

    #[test]
    fn dwell_arithmetic() {
        let model = single_bus(-0.13);
        let mut traj = run(&model, &hysteresis_fixture(), 5.0);
        // Overwrite with a synthetic event log to pin the arithmetic.
        traj.events = [1.0, 1.2, 1.5]
            .iter()
            .enumerate()
            .map(|(i, &t)| crate::sim::SwitchEvent {
                t,
                jumps: i as u64 + 1,
                load: 0,
                bus: 0,
                old_level: (i % 2) as i8,
                new_level: ((i + 1) % 2) as i8,
                trigger: crate::sim::Trigger::Frequency,
            })
            .collect();
        let report = min_dwell(&traj);
        assert_abs_diff_eq!(report.per_load[0].consecutive.unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(report.per_load[0].two_apart.unwrap(), 0.5, epsilon = 1e-12);

        traj.events.clear();
        let report = min_dwell(&traj);
        assert_eq!(report.per_load[0].consecutive, None);
        assert_eq!(report.per_load[0].two_apart, None);
    }

    #[test]
    fn dwell_positive_on_bounded_hysteresis_run() {
        let model = single_bus(-0.13);
        let traj = run(&model, &hysteresis_fixture(), 30.0);
        let report = min_dwell(&traj);
        assert!(report.per_load[0].consecutive.unwrap() > 0.0);
    }

    #[test]
    fn lyapunov_zero_on_equilibrium_trajectory() {
        let model = single_bus(-0.13);
        let controller = adapted_fixture();
        let eqs = crate::equilibrium::equilibria_adapted(&model, &controller).unwrap();
        let point = &eqs[0];
        let initial = HybridState {
            grid: point.state(&model),
            levels: point.sigma.iter().map(|&b| b as i8).collect(),
            consensus: None,
        };
        let problem = SimProblem {
            model: &model,
            controller: &controller,
            disturbances: &[],
            comm: None,
        };
        let cfg = SimConfig {
            horizon: 2.0,
            ..SimConfig::default()
        };
        let traj = simulate(&problem, &initial, &cfg).unwrap();
        let report = lyapunov_series(&model, &traj, point, None, 0.0);
        for s in &report.series {
            assert_abs_diff_eq!(s.value, 0.0, epsilon = 1e-20);
        }
        assert!(report.monotone_after_settling);
    }

    #[test]
    fn lyapunov_monotone_on_adapted_run_and_frozen_across_jumps() {
        let model = single_bus(-0.13);
        let controller = adapted_fixture();
        let eqs = crate::equilibrium::equilibria_adapted(&model, &controller).unwrap();
        let traj = run(&model, &controller, 40.0);
        let report = lyapunov_series(&model, &traj, &eqs[0], None, 2.0);
        assert!(report.max_jump_delta < 1e-12);
        assert!(
            report.monotone_after_settling,
            "max rate {:e} vs tol {:e}",
            report.max_flow_rate,
            report.tolerance
        );
    }
}
