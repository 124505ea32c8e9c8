//! Hybrid-system simulation on a hybrid time domain.
//!
//! Trajectories flow under fixed-step RK4 between discrete events. For the
//! hysteretic policies, threshold crossings are localized by bisection to
//! the event tolerance and the jump map is applied with the continuous state
//! held fixed; the jump counter indexes the hybrid time domain. Simultaneous
//! jumps are serialized in ascending bus order, one per counter increment.
//!
//! The static policy comes in two flavours. `Sampled` evaluates the demand
//! map only at controller sampling instants, which reproduces the
//! sampling-rate-limited chattering of a threshold controller. The
//! `IdealFilippov` flavour follows the convexified dynamics: when a
//! trajectory reaches a threshold surface with the vector field pointing
//! toward it from both sides, the demand takes the interval value that keeps
//! the frequency pinned to the surface (single-surface sliding; intersecting
//! surfaces are not modelled and eventually trip the jump cap instead).

use crate::consensus::{CommGraph, ConsensusState, consensus_field_raw};
use crate::control::{
    AdaptedConfig, ControllerSet, LoadControl, OptimalConfig, StaticSubMode, StaticSwitchConfig,
};
use crate::grid::{ContinuousState, GridError, NetworkModel, bus_imbalance, line_kinematics};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state became nonfinite at t = {t}")]
    NonfiniteState { t: f64 },
    #[error("jump count exceeded the cap of {max} at t = {t}")]
    MaxJumpsExceeded { max: usize, t: f64 },
    #[error("invalid simulation setup: {0}")]
    InvalidSetup(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Horizon T (s), > 0.
    pub horizon: f64,
    /// Flow step (s), > 0.
    pub dt: f64,
    /// Event localization tolerance (s), in (0, dt].
    pub event_tol: f64,
    /// Cap on discrete events; exceeding it is an error, which converts
    /// unbounded event storms into a diagnosable failure.
    pub max_jumps: usize,
    /// Record every k-th flow sample (jump boundaries are always recorded).
    pub record_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 30.0,
            dt: 1e-3,
            event_tol: 1e-6,
            max_jumps: 1_000_000,
            record_stride: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon > 0.0) {
            return Err(SimError::InvalidSetup("horizon must be > 0".into()));
        }
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidSetup("dt must be > 0".into()));
        }
        if !(self.event_tol > 0.0 && self.event_tol <= self.dt) {
            return Err(SimError::InvalidSetup("event_tol must be in (0, dt]".into()));
        }
        if self.record_stride == 0 {
            return Err(SimError::InvalidSetup("record_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// A step change of the uncontrollable load at one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub time: f64,
    pub bus: usize,
    pub delta_load: f64,
}

/// Full hybrid state: grid continuous state, per-load discrete level, and
/// the optional distributed-estimator extension.
///
/// Levels are 0 (off) and 1 (on) for the hysteretic policies; the static
/// policy additionally uses -1 (down-demand on) and ±2 while sliding on the
/// upper/lower threshold surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub grid: ContinuousState,
    pub levels: Vec<i8>,
    pub consensus: Option<ConsensusState>,
}

impl HybridState {
    /// All-zero state with every load off.
    pub fn at_rest(model: &NetworkModel, controller: &ControllerSet, comm: Option<&CommGraph>) -> Self {
        HybridState {
            grid: ContinuousState::zeros_for(model),
            levels: vec![0; controller.n_loads()],
            consensus: comm.map(ConsensusState::zeros),
        }
    }
}

/// What made a load switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    Frequency,
    PowerCommand,
}

/// One discrete event: exactly one load's level changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    /// Jump counter after this event.
    pub jumps: u64,
    /// Load index in controller order.
    pub load: usize,
    pub bus: usize,
    pub old_level: i8,
    pub new_level: i8,
    pub trigger: Trigger,
}

/// One recorded point of the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub jumps: u64,
    pub state: HybridState,
    /// Centralized power command -l(t) at this instant (reference value in
    /// distributed runs).
    pub power_cmd: f64,
}

/// A simulated trajectory over the hybrid time domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<SwitchEvent>,
    /// Bus of each load, in controller order.
    pub load_buses: Vec<usize>,
    pub dt: f64,
    pub horizon: f64,
    /// Max-norm of the full state derivative at the final sample.
    pub terminal_residual: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &HybridState {
        &self.samples.last().expect("trajectory has samples").state
    }

    pub fn n_jumps(&self) -> u64 {
        self.samples.last().map(|s| s.jumps).unwrap_or(0)
    }

    /// Event times of one load, in order.
    pub fn event_times(&self, load: usize) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.load == load)
            .map(|e| e.t)
            .collect()
    }
}

/// Everything the integrator needs besides the initial state.
#[derive(Debug, Clone, Copy)]
pub struct SimProblem<'a> {
    pub model: &'a NetworkModel,
    pub controller: &'a ControllerSet,
    pub disturbances: &'a [Disturbance],
    /// Distributed power-command estimation; when present with an adapted or
    /// optimality-tuned controller, guards read the local estimate.
    pub comm: Option<&'a CommGraph>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy)]
struct Sliding {
    load: usize,
    bus: usize,
    surface: Surface,
}

struct Layout {
    n_lines: usize,
    n_buses: usize,
    n_cmd: usize,
    n_links: usize,
}

impl Layout {
    fn total(&self) -> usize {
        self.n_lines + 2 * self.n_buses + self.n_cmd + self.n_links
    }
    fn eta(&self) -> std::ops::Range<usize> {
        0..self.n_lines
    }
    fn omega(&self) -> std::ops::Range<usize> {
        self.n_lines..self.n_lines + self.n_buses
    }
    fn p_mech(&self) -> std::ops::Range<usize> {
        self.n_lines + self.n_buses..self.n_lines + 2 * self.n_buses
    }
    fn cmd(&self) -> std::ops::Range<usize> {
        let s = self.n_lines + 2 * self.n_buses;
        s..s + self.n_cmd
    }
    fn psi(&self) -> std::ops::Range<usize> {
        let s = self.n_lines + 2 * self.n_buses + self.n_cmd;
        s..s + self.n_links
    }
}

enum Policy {
    None,
    Static {
        sub: StaticSubMode,
        cfgs: Vec<StaticSwitchConfig>,
    },
    Switched(Vec<LoadControl>),
}

struct Engine<'a> {
    model: &'a NetworkModel,
    comm: Option<&'a CommGraph>,
    layout: Layout,
    policy: Policy,
    load_buses: Vec<usize>,
    /// Load indices in (bus, input-index) order; jump sweeps scan this.
    scan_order: Vec<usize>,
    p_load: Vec<f64>,
    /// Per-bus demand of all loads except a sliding one.
    d_base: Vec<f64>,
    sliding: Option<Sliding>,
    distributed_guards: bool,
    net_scratch: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn power_cmd_central(&self) -> f64 {
        // `+ 0.0` normalizes the negative zero a zero load sum produces.
        -self.p_load.iter().sum::<f64>() + 0.0
    }

    /// Power command seen by a load's guard.
    fn cmd_for_bus(&self, y: &[f64], bus: usize) -> f64 {
        if self.distributed_guards {
            y[self.layout.cmd()][bus]
        } else {
            self.power_cmd_central()
        }
    }

    fn rebuild_base_demand(&mut self, levels: &[i8]) {
        for v in self.d_base.iter_mut() {
            *v = 0.0;
        }
        match &self.policy {
            Policy::None => {}
            Policy::Static { cfgs, .. } => {
                for ((&bus, cfg), &level) in self.load_buses.iter().zip(cfgs).zip(levels) {
                    self.d_base[bus] += match level {
                        1 => cfg.d_up,
                        -1 => cfg.d_down,
                        _ => 0.0, // off or sliding (sliding handled implicitly)
                    };
                }
            }
            Policy::Switched(controls) => {
                for ((&bus, ctrl), &level) in self.load_buses.iter().zip(controls).zip(levels) {
                    if level == 1 {
                        self.d_base[bus] += ctrl.magnitude();
                    }
                }
            }
        }
    }

    fn deriv(&mut self, y: &[f64], dy: &mut [f64]) {
        let lay = &self.layout;
        let (eta, rest) = y.split_at(lay.n_lines);
        let (omega, rest) = rest.split_at(lay.n_buses);
        let (p_mech, cmd_psi) = rest.split_at(lay.n_buses);
        {
            let (d_eta, d_rest) = dy.split_at_mut(lay.n_lines);
            let (d_omega, d_rest2) = d_rest.split_at_mut(lay.n_buses);
            let d_p_mech = &mut d_rest2[..lay.n_buses];
            line_kinematics(self.model, eta, omega, d_eta, &mut self.net_scratch);
            for (j, b) in self.model.buses().iter().enumerate() {
                let sliding_here = self
                    .sliding
                    .map(|s| s.bus == j)
                    .unwrap_or(false);
                let d_ctrl = if sliding_here {
                    // Equivalent control: total demand that zeroes the local
                    // imbalance, pinning the frequency to the surface.
                    -self.p_load[j] + p_mech[j] - b.damping * omega[j] + self.net_scratch[j]
                } else {
                    self.d_base[j]
                };
                let imbalance =
                    bus_imbalance(b, self.p_load[j], omega[j], p_mech[j], d_ctrl, self.net_scratch[j]);
                d_omega[j] = imbalance / b.inertia;
                d_p_mech[j] = -(p_mech[j] + b.droop * omega[j]) / b.governor_tc;
            }
        }
        if let Some(graph) = self.comm {
            let (cmd, psi) = cmd_psi.split_at(lay.n_cmd);
            let d_tail = &mut dy[lay.n_lines + 2 * lay.n_buses..];
            let (d_cmd, d_psi) = d_tail.split_at_mut(lay.n_cmd);
            consensus_field_raw(graph, cmd, psi, &self.p_load, d_cmd, d_psi);
        }
    }

    /// Frequency derivative at one bus under a hypothetical total demand.
    fn omega_dot_with_demand(&mut self, y: &[f64], bus: usize, d_total: f64) -> f64 {
        let lay = &self.layout;
        let eta = &y[lay.eta()];
        let omega = &y[lay.omega()];
        let p_mech = &y[lay.p_mech()];
        let mut net = 0.0;
        for (l, e) in self.model.lines().iter().zip(eta) {
            let p = l.susceptance * e;
            if l.from == bus {
                net -= p;
            }
            if l.to == bus {
                net += p;
            }
        }
        let b = &self.model.buses()[bus];
        bus_imbalance(b, self.p_load[bus], omega[bus], p_mech[bus], d_total, net) / b.inertia
    }

    /// Demand absorbed by the sliding load right now.
    fn sliding_share(&mut self, y: &[f64]) -> Option<f64> {
        let s = self.sliding?;
        let lay = &self.layout;
        let eta = &y[lay.eta()];
        let omega = &y[lay.omega()];
        let p_mech = &y[lay.p_mech()];
        let mut net = 0.0;
        for (l, e) in self.model.lines().iter().zip(eta) {
            let p = l.susceptance * e;
            if l.from == s.bus {
                net -= p;
            }
            if l.to == s.bus {
                net += p;
            }
        }
        let b = &self.model.buses()[s.bus];
        let total = -self.p_load[s.bus] + p_mech[s.bus] - b.damping * omega[s.bus] + net;
        Some(total - self.d_base[s.bus])
    }
}

fn rk4_step(
    engine: &mut Engine,
    y: &[f64],
    h: f64,
    k: &mut [Vec<f64>; 4],
    tmp: &mut [f64],
    out: &mut [f64],
) {
    let n = y.len();
    engine.deriv(y, &mut k[0]);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k[0][i];
    }
    let (k0, krest) = k.split_at_mut(1);
    engine.deriv(tmp, &mut krest[0]);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * krest[0][i];
    }
    engine.deriv(tmp, &mut krest[1]);
    for i in 0..n {
        tmp[i] = y[i] + h * krest[1][i];
    }
    engine.deriv(tmp, &mut krest[2]);
    for i in 0..n {
        out[i] = y[i]
            + h / 6.0 * (k0[0][i] + 2.0 * krest[0][i] + 2.0 * krest[1][i] + krest[2][i]);
    }
}

/// Simulates the hybrid system from `initial` over `cfg.horizon`.
pub fn simulate(
    problem: &SimProblem,
    initial: &HybridState,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    problem
        .controller
        .validate()
        .map_err(|e| SimError::InvalidSetup(e.to_string()))?;
    let model = problem.model;
    let n_buses = model.n_buses();

    let (policy, load_buses): (Policy, Vec<usize>) = match problem.controller {
        ControllerSet::Uncontrolled => (Policy::None, vec![]),
        ControllerSet::Static { sub_mode, loads } => (
            Policy::Static {
                sub: *sub_mode,
                cfgs: loads.iter().map(|(_, c)| *c).collect(),
            },
            loads.iter().map(|(b, _)| *b).collect(),
        ),
        other => {
            let controls = other.switched_loads().expect("hysteretic mode");
            (
                Policy::Switched(controls.iter().map(|(_, c)| *c).collect()),
                controls.iter().map(|(b, _)| *b).collect(),
            )
        }
    };
    for &b in &load_buses {
        if b >= n_buses {
            return Err(SimError::InvalidSetup(format!(
                "load bus {b} outside the {n_buses}-bus network"
            )));
        }
    }
    if initial.levels.len() != load_buses.len() {
        return Err(SimError::InvalidSetup(format!(
            "initial state has {} levels for {} loads",
            initial.levels.len(),
            load_buses.len()
        )));
    }
    if let Some(graph) = problem.comm {
        if graph.n_buses() != n_buses {
            return Err(SimError::InvalidSetup(format!(
                "communication graph covers {} buses, network has {n_buses}",
                graph.n_buses()
            )));
        }
    }
    for d in problem.disturbances {
        if d.bus >= n_buses {
            return Err(SimError::InvalidSetup(format!(
                "disturbance references bus {} outside the network",
                d.bus
            )));
        }
    }
    let distributed_guards = problem.comm.is_some()
        && matches!(
            problem.controller,
            ControllerSet::Adapted(_) | ControllerSet::Optimal(_)
        );
    if distributed_guards && initial.consensus.is_none() {
        return Err(SimError::InvalidSetup(
            "distributed run needs an initial consensus state".into(),
        ));
    }

    let layout = Layout {
        n_lines: model.n_lines(),
        n_buses,
        n_cmd: if problem.comm.is_some() { n_buses } else { 0 },
        n_links: problem.comm.map(|g| g.links().len()).unwrap_or(0),
    };
    let mut scan_order: Vec<usize> = (0..load_buses.len()).collect();
    scan_order.sort_by_key(|&k| (load_buses[k], k));

    let mut engine = Engine {
        model,
        comm: problem.comm,
        layout,
        policy,
        load_buses: load_buses.clone(),
        scan_order,
        p_load: model.p_loads(),
        d_base: vec![0.0; n_buses],
        sliding: None,
        distributed_guards,
        net_scratch: vec![0.0; n_buses],
    };

    // Flatten the initial state.
    let total = engine.layout.total();
    let mut y = vec![0.0; total];
    y[engine.layout.eta()].copy_from_slice(&initial.grid.eta);
    y[engine.layout.omega()].copy_from_slice(&initial.grid.omega);
    y[engine.layout.p_mech()].copy_from_slice(&initial.grid.p_mech);
    if let Some(graph) = problem.comm {
        let cons = initial.consensus.as_ref().ok_or_else(|| {
            SimError::InvalidSetup("communication graph given without consensus state".into())
        })?;
        if cons.power_cmd.len() != graph.n_buses() || cons.psi.len() != graph.links().len() {
            return Err(SimError::InvalidSetup(
                "consensus state dimensions do not match the communication graph".into(),
            ));
        }
        y[engine.layout.cmd()].copy_from_slice(&cons.power_cmd);
        y[engine.layout.psi()].copy_from_slice(&cons.psi);
    }
    let mut levels = initial.levels.clone();
    for (&lv, _) in levels.iter().zip(&load_buses) {
        let ok = match engine.policy {
            Policy::Switched(_) => lv == 0 || lv == 1,
            Policy::Static { .. } => (-1..=1).contains(&lv),
            Policy::None => true,
        };
        if !ok {
            return Err(SimError::InvalidSetup(format!(
                "initial level {lv} is not admissible"
            )));
        }
    }
    engine.rebuild_base_demand(&levels);

    let mut disturbances: Vec<Disturbance> = problem.disturbances.to_vec();
    disturbances.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    let mut next_disturbance = 0usize;

    let mut recorder = Recorder::new(cfg.record_stride, &engine);
    let mut t = 0.0;
    let mut jumps: u64 = 0;
    let mut events: Vec<SwitchEvent> = Vec::new();

    // Sampled static control: evaluate at t = 0 and then every period.
    let sample_period = match engine.policy {
        Policy::Static {
            sub: StaticSubMode::Sampled { period },
            ..
        } => Some(period),
        _ => None,
    };
    let mut sample_index: u64 = 0;

    recorder.push(t, jumps, &y, &levels, &engine);

    // Normalize the static policy at t = 0 (and fire any pending jumps).
    if sample_period.is_some() || matches!(engine.policy, Policy::Static { sub: StaticSubMode::IdealFilippov, .. }) {
        apply_static_policy(
            &mut engine, &mut y, &mut levels, t, &mut jumps, &mut events, &mut recorder, cfg,
        )?;
        sample_index = 1;
    }
    jump_sweep(
        &mut engine, &y, &mut levels, t, &mut jumps, &mut events, &mut recorder, cfg,
    )?;

    let mut k = [
        vec![0.0; total],
        vec![0.0; total],
        vec![0.0; total],
        vec![0.0; total],
    ];
    let mut tmp = vec![0.0; total];
    let mut y_trial = vec![0.0; total];

    while t < cfg.horizon {
        let mut t_next = (t + cfg.dt).min(cfg.horizon);
        if let Some(d) = disturbances.get(next_disturbance) {
            if d.time > t {
                t_next = t_next.min(d.time);
            }
        }
        if let Some(period) = sample_period {
            let ts = sample_index as f64 * period;
            if ts > t {
                t_next = t_next.min(ts);
            }
        }
        let h = t_next - t;
        if h <= 0.0 {
            // Disturbance or sample time exactly at t; handled below.
            t_next = t;
        } else {
            rk4_step(&mut engine, &y, h, &mut k, &mut tmp, &mut y_trial);
            if y_trial.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonfiniteState { t: t_next });
            }
            // Event localization between t and t_next.
            if let Some((tau, load, y_event)) =
                earliest_crossing(&mut engine, &levels, &y, &y_trial, h, cfg, &mut k, &mut tmp)?
            {
                t += tau;
                y.copy_from_slice(&y_event);
                recorder.push(t, jumps, &y, &levels, &engine);
                resolve_crossing(
                    &mut engine, &y, &mut levels, load, t, &mut jumps, &mut events,
                    &mut recorder, cfg,
                )?;
                jump_sweep(
                    &mut engine, &y, &mut levels, t, &mut jumps, &mut events, &mut recorder, cfg,
                )?;
                continue;
            }
            y.copy_from_slice(&y_trial);
            t = t_next;
        }

        // Sliding exit: the equivalent control left its admissible interval.
        if let Some(s) = engine.sliding {
            let share = engine.sliding_share(&y).unwrap();
            let cfg_s = match &engine.policy {
                Policy::Static { cfgs, .. } => cfgs[s.load],
                _ => unreachable!(),
            };
            let exit_level = match s.surface {
                Surface::Upper => {
                    if share > cfg_s.d_up {
                        Some(1)
                    } else if share < 0.0 {
                        Some(0)
                    } else {
                        None
                    }
                }
                Surface::Lower => {
                    if share < cfg_s.d_down {
                        Some(-1)
                    } else if share > 0.0 {
                        Some(0)
                    } else {
                        None
                    }
                }
            };
            if let Some(new_level) = exit_level {
                recorder.push(t, jumps, &y, &levels, &engine);
                engine.sliding = None;
                transition(
                    &mut engine, &mut levels, s.load, new_level, t, &mut jumps, &mut events,
                    Trigger::Frequency, cfg,
                )?;
                recorder.push(t, jumps, &y, &levels, &engine);
            }
        }

        // Disturbances scheduled exactly at this instant.
        let mut disturbed = false;
        while let Some(d) = disturbances.get(next_disturbance) {
            if d.time <= t {
                engine.p_load[d.bus] += d.delta_load;
                next_disturbance += 1;
                disturbed = true;
            } else {
                break;
            }
        }
        if disturbed {
            recorder.push(t, jumps, &y, &levels, &engine);
            jump_sweep(
                &mut engine, &y, &mut levels, t, &mut jumps, &mut events, &mut recorder, cfg,
            )?;
        }

        // Sampled static control instants.
        if let Some(period) = sample_period {
            let ts = sample_index as f64 * period;
            if t >= ts {
                apply_static_policy(
                    &mut engine, &mut y, &mut levels, t, &mut jumps, &mut events, &mut recorder,
                    cfg,
                )?;
                sample_index += 1;
            }
        }

        recorder.maybe_push(t, jumps, &y, &levels, &engine);
    }
    recorder.push(t, jumps, &y, &levels, &engine);

    let mut dy = vec![0.0; total];
    engine.deriv(&y, &mut dy);
    let terminal_residual = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    Ok(Trajectory {
        samples: recorder.samples,
        events,
        load_buses,
        dt: cfg.dt,
        horizon: cfg.horizon,
        terminal_residual,
    })
}

struct Recorder {
    samples: Vec<Sample>,
    stride: usize,
    since_last: usize,
    layout_lines: usize,
    layout_buses: usize,
    has_consensus: bool,
    n_links: usize,
}

impl Recorder {
    fn new(stride: usize, engine: &Engine) -> Self {
        Recorder {
            samples: Vec::new(),
            stride,
            since_last: 0,
            layout_lines: engine.layout.n_lines,
            layout_buses: engine.layout.n_buses,
            has_consensus: engine.comm.is_some(),
            n_links: engine.layout.n_links,
        }
    }

    fn snapshot(&self, t: f64, jumps: u64, y: &[f64], levels: &[i8], engine: &Engine) -> Sample {
        let nl = self.layout_lines;
        let nb = self.layout_buses;
        let consensus = self.has_consensus.then(|| ConsensusState {
            power_cmd: y[nl + 2 * nb..nl + 2 * nb + nb].to_vec(),
            psi: y[nl + 3 * nb..nl + 3 * nb + self.n_links].to_vec(),
        });
        Sample {
            t,
            jumps,
            state: HybridState {
                grid: ContinuousState {
                    eta: y[..nl].to_vec(),
                    omega: y[nl..nl + nb].to_vec(),
                    p_mech: y[nl + nb..nl + 2 * nb].to_vec(),
                },
                levels: levels.to_vec(),
                consensus,
            },
            power_cmd: engine.power_cmd_central(),
        }
    }

    fn push(&mut self, t: f64, jumps: u64, y: &[f64], levels: &[i8], engine: &Engine) {
        // Skip exact duplicates (same hybrid time, same data pointer source).
        if let Some(last) = self.samples.last() {
            if last.t == t && last.jumps == jumps {
                self.since_last = 0;
                return;
            }
        }
        self.samples.push(self.snapshot(t, jumps, y, levels, engine));
        self.since_last = 0;
    }

    fn maybe_push(&mut self, t: f64, jumps: u64, y: &[f64], levels: &[i8], engine: &Engine) {
        self.since_last += 1;
        if self.since_last >= self.stride {
            self.push(t, jumps, y, levels, engine);
        }
    }
}

/// Applies one level change, bumping the jump counter.
#[allow(clippy::too_many_arguments)]
fn transition(
    engine: &mut Engine,
    levels: &mut [i8],
    load: usize,
    new_level: i8,
    t: f64,
    jumps: &mut u64,
    events: &mut Vec<SwitchEvent>,
    trigger: Trigger,
    cfg: &SimConfig,
) -> Result<(), SimError> {
    if events.len() >= cfg.max_jumps {
        return Err(SimError::MaxJumpsExceeded {
            max: cfg.max_jumps,
            t,
        });
    }
    let old_level = levels[load];
    levels[load] = new_level;
    *jumps += 1;
    events.push(SwitchEvent {
        t,
        jumps: *jumps,
        load,
        bus: engine.load_buses[load],
        old_level,
        new_level,
        trigger,
    });
    engine.rebuild_base_demand(levels);
    Ok(())
}

/// Applies pending hysteretic jumps, one per counter increment, in ascending
/// bus order, until the state re-enters the flow set.
#[allow(clippy::too_many_arguments)]
fn jump_sweep(
    engine: &mut Engine,
    y: &[f64],
    levels: &mut [i8],
    t: f64,
    jumps: &mut u64,
    events: &mut Vec<SwitchEvent>,
    recorder: &mut Recorder,
    cfg: &SimConfig,
) -> Result<(), SimError> {
    let controls = match &engine.policy {
        Policy::Switched(c) => c.clone(),
        _ => return Ok(()),
    };
    loop {
        let mut fired = false;
        for idx in 0..engine.scan_order.len() {
            let load = engine.scan_order[idx];
            let bus = engine.load_buses[load];
            let omega = y[engine.layout.omega()][bus];
            let cmd = engine.cmd_for_bus(y, bus);
            let on = levels[load] == 1;
            let ctrl = &controls[load];
            if ctrl.in_jump_set(omega, cmd, on) {
                let new_on = ctrl.jump_update(omega, cmd, on);
                let trigger = jump_trigger(ctrl, omega, cmd, on);
                transition(
                    engine,
                    levels,
                    load,
                    new_on as i8,
                    t,
                    jumps,
                    events,
                    trigger,
                    cfg,
                )?;
                recorder.push(t, *jumps, y, levels, engine);
                fired = true;
                break;
            }
        }
        if !fired {
            return Ok(());
        }
    }
}

/// Which guard completed the jump condition, judged by the tighter slack at
/// the event state.
fn jump_trigger(ctrl: &LoadControl, omega: f64, cmd: f64, on: bool) -> Trigger {
    let t = ctrl.thresholds();
    if on {
        // Switching off: both conditions must hold in the gated modes; the
        // one with the smaller slack is the one that just crossed.
        match ctrl {
            LoadControl::Hysteresis(_) => Trigger::Frequency,
            LoadControl::Adapted(AdaptedConfig { pc_lower, .. })
            | LoadControl::Optimal(OptimalConfig { pc_lower, .. }) => {
                if t.omega_off - omega <= pc_lower - cmd {
                    Trigger::Frequency
                } else {
                    Trigger::PowerCommand
                }
            }
        }
    } else {
        match ctrl {
            LoadControl::Optimal(c) if cmd - c.pc_upper > omega - t.omega_on => {
                Trigger::PowerCommand
            }
            _ => Trigger::Frequency,
        }
    }
}

/// Evaluates the static demand map at a sampling instant and applies any
/// level changes (ascending bus order, one jump each).
#[allow(clippy::too_many_arguments)]
fn apply_static_policy(
    engine: &mut Engine,
    y: &mut [f64],
    levels: &mut [i8],
    t: f64,
    jumps: &mut u64,
    events: &mut Vec<SwitchEvent>,
    recorder: &mut Recorder,
    cfg: &SimConfig,
) -> Result<(), SimError> {
    let cfgs = match &engine.policy {
        Policy::Static { cfgs, .. } => cfgs.clone(),
        _ => return Ok(()),
    };
    for idx in 0..engine.scan_order.len() {
        let load = engine.scan_order[idx];
        if engine.sliding.map(|s| s.load == load).unwrap_or(false) {
            continue;
        }
        let bus = engine.load_buses[load];
        let omega = y[engine.layout.omega()][bus];
        let c = &cfgs[load];
        let target: i8 = if omega > c.omega_upper {
            1
        } else if omega > c.omega_lower {
            0
        } else {
            -1
        };
        if target != levels[load] {
            transition(
                engine,
                levels,
                load,
                target,
                t,
                jumps,
                events,
                Trigger::Frequency,
                cfg,
            )?;
            recorder.push(t, *jumps, y, levels, engine);
        }
    }
    Ok(())
}

/// Finds the earliest guard crossing inside the step, if any, returning the
/// offset, the crossing load and the state there.
#[allow(clippy::too_many_arguments)]
fn earliest_crossing(
    engine: &mut Engine,
    levels: &[i8],
    y0: &[f64],
    y1: &[f64],
    h: f64,
    cfg: &SimConfig,
    k: &mut [Vec<f64>; 4],
    tmp: &mut [f64],
) -> Result<Option<(f64, usize, Vec<f64>)>, SimError> {
    let guards = active_guards(engine, levels);
    if guards.is_empty() {
        return Ok(None);
    }
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut y_mid = vec![0.0; y0.len()];
    for (load, guard) in &guards {
        let g0 = guard.eval(engine, y0);
        let g1 = guard.eval(engine, y1);
        if g0 >= 0.0 {
            // Boundary state that the jump sweep chose not to fire (grazing
            // or a static-mode surface touch); only a fresh crossing counts.
            continue;
        }
        if g1 < 0.0 {
            continue;
        }
        // Bisection on the step offset.
        let mut lo = 0.0f64;
        let mut hi = h;
        while hi - lo > cfg.event_tol {
            let mid = 0.5 * (lo + hi);
            rk4_step(engine, y0, mid, k, tmp, &mut y_mid);
            if guard.eval(engine, &y_mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        rk4_step(engine, y0, hi, k, tmp, &mut y_mid);
        let better = match &best {
            None => true,
            Some((tau, bload, _)) => {
                hi < *tau - 1e-15
                    || ((hi - *tau).abs() <= 1e-15
                        && engine.load_buses[*load] < engine.load_buses[*bload])
            }
        };
        if better {
            best = Some((hi, *load, y_mid.clone()));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy)]
enum GuardKind {
    /// Fires when omega at `bus` rises to `threshold`.
    OmegaUp { bus: usize, threshold: f64 },
    /// Fires when omega at `bus` falls to `threshold`.
    OmegaDown { bus: usize, threshold: f64 },
    /// Optimal switch-on: omega above on-threshold or command above upper.
    SwitchOnOptimal {
        bus: usize,
        omega_on: f64,
        pc_upper: f64,
    },
    /// Adapted/optimal switch-off: omega below off-threshold and command
    /// below lower.
    SwitchOffGated {
        bus: usize,
        omega_off: f64,
        pc_lower: f64,
    },
}

impl GuardKind {
    fn eval(&self, engine: &Engine, y: &[f64]) -> f64 {
        let omega = &y[engine.layout.omega()];
        match *self {
            GuardKind::OmegaUp { bus, threshold } => omega[bus] - threshold,
            GuardKind::OmegaDown { bus, threshold } => threshold - omega[bus],
            GuardKind::SwitchOnOptimal {
                bus,
                omega_on,
                pc_upper,
            } => {
                let cmd = engine.cmd_for_bus(y, bus);
                (omega[bus] - omega_on).max(cmd - pc_upper)
            }
            GuardKind::SwitchOffGated {
                bus,
                omega_off,
                pc_lower,
            } => {
                let cmd = engine.cmd_for_bus(y, bus);
                (omega_off - omega[bus]).min(pc_lower - cmd)
            }
        }
    }
}

/// Guard functions active for the current levels.
fn active_guards(engine: &Engine, levels: &[i8]) -> Vec<(usize, GuardKind)> {
    let mut guards = Vec::new();
    match &engine.policy {
        Policy::None => {}
        Policy::Static { sub, cfgs } => {
            if matches!(sub, StaticSubMode::IdealFilippov) {
                for (load, (&bus, c)) in engine.load_buses.iter().zip(cfgs).enumerate() {
                    if engine.sliding.map(|s| s.load == load).unwrap_or(false) {
                        continue;
                    }
                    match levels[load] {
                        0 => {
                            guards.push((
                                load,
                                GuardKind::OmegaUp {
                                    bus,
                                    threshold: c.omega_upper,
                                },
                            ));
                            guards.push((
                                load,
                                GuardKind::OmegaDown {
                                    bus,
                                    threshold: c.omega_lower,
                                },
                            ));
                        }
                        1 => guards.push((
                            load,
                            GuardKind::OmegaDown {
                                bus,
                                threshold: c.omega_upper,
                            },
                        )),
                        -1 => guards.push((
                            load,
                            GuardKind::OmegaUp {
                                bus,
                                threshold: c.omega_lower,
                            },
                        )),
                        _ => {}
                    }
                }
            }
        }
        Policy::Switched(controls) => {
            for (load, (&bus, ctrl)) in engine.load_buses.iter().zip(controls).enumerate() {
                let t = ctrl.thresholds();
                let on = levels[load] == 1;
                match (ctrl, on) {
                    (LoadControl::Hysteresis(_), false) => guards.push((
                        load,
                        GuardKind::OmegaUp {
                            bus,
                            threshold: t.omega_on,
                        },
                    )),
                    (LoadControl::Hysteresis(_), true) => guards.push((
                        load,
                        GuardKind::OmegaDown {
                            bus,
                            threshold: t.omega_off,
                        },
                    )),
                    (LoadControl::Adapted(_), false) => guards.push((
                        load,
                        GuardKind::OmegaUp {
                            bus,
                            threshold: t.omega_on,
                        },
                    )),
                    (LoadControl::Adapted(c), true) => guards.push((
                        load,
                        GuardKind::SwitchOffGated {
                            bus,
                            omega_off: t.omega_off,
                            pc_lower: c.pc_lower,
                        },
                    )),
                    (LoadControl::Optimal(c), false) => guards.push((
                        load,
                        GuardKind::SwitchOnOptimal {
                            bus,
                            omega_on: t.omega_on,
                            pc_upper: c.pc_upper,
                        },
                    )),
                    (LoadControl::Optimal(c), true) => guards.push((
                        load,
                        GuardKind::SwitchOffGated {
                            bus,
                            omega_off: t.omega_off,
                            pc_lower: c.pc_lower,
                        },
                    )),
                }
            }
        }
    }
    guards
}

/// Resolves a localized guard crossing: a hysteretic jump, a static
/// transversal pass-through, or entry into a sliding segment.
#[allow(clippy::too_many_arguments)]
fn resolve_crossing(
    engine: &mut Engine,
    y: &[f64],
    levels: &mut [i8],
    load: usize,
    t: f64,
    jumps: &mut u64,
    events: &mut Vec<SwitchEvent>,
    recorder: &mut Recorder,
    cfg: &SimConfig,
) -> Result<(), SimError> {
    match &engine.policy {
        Policy::Switched(controls) => {
            let controls = controls.clone();
            let bus = engine.load_buses[load];
            let omega = y[engine.layout.omega()][bus];
            let cmd = engine.cmd_for_bus(y, bus);
            let on = levels[load] == 1;
            let ctrl = &controls[load];
            if ctrl.in_jump_set(omega, cmd, on) {
                let new_on = ctrl.jump_update(omega, cmd, on);
                let trigger = jump_trigger(ctrl, omega, cmd, on);
                transition(engine, levels, load, new_on as i8, t, jumps, events, trigger, cfg)?;
                recorder.push(t, *jumps, y, levels, engine);
            }
            Ok(())
        }
        Policy::Static { cfgs, .. } => {
            let c = cfgs[load];
            let bus = engine.load_buses[load];
            let level = levels[load];
            let d_other = engine.d_base[bus]
                - match level {
                    1 => c.d_up,
                    -1 => c.d_down,
                    _ => 0.0,
                };
            // Demand rates on both sides of the crossed surface.
            let (surface, off_level, on_level, on_demand) = match level {
                0 => {
                    let omega = y[engine.layout.omega()][bus];
                    let near_upper =
                        (omega - c.omega_upper).abs() <= (omega - c.omega_lower).abs();
                    if near_upper {
                        (Surface::Upper, 0i8, 1i8, c.d_up)
                    } else {
                        (Surface::Lower, 0i8, -1i8, c.d_down)
                    }
                }
                1 => (Surface::Upper, 0i8, 1i8, c.d_up),
                -1 => (Surface::Lower, 0i8, -1i8, c.d_down),
                _ => return Ok(()),
            };
            let a_off = engine.omega_dot_with_demand(y, bus, d_other);
            let a_on = engine.omega_dot_with_demand(y, bus, d_other + on_demand);
            let toward_surface = match surface {
                Surface::Upper => a_off > 0.0 && a_on < 0.0,
                Surface::Lower => a_off < 0.0 && a_on > 0.0,
            };
            if toward_surface && engine.sliding.is_none() {
                let slide_level = match surface {
                    Surface::Upper => 2,
                    Surface::Lower => -2,
                };
                transition(
                    engine, levels, load, slide_level, t, jumps, events, Trigger::Frequency, cfg,
                )?;
                engine.sliding = Some(Sliding {
                    load,
                    bus,
                    surface,
                });
                engine.rebuild_base_demand(levels);
                recorder.push(t, *jumps, y, levels, engine);
                return Ok(());
            }
            // Transversal crossing: adopt the level on the far side.
            let new_level = match (level, surface) {
                (0, Surface::Upper) => on_level,
                (0, Surface::Lower) => on_level,
                (1, Surface::Upper) => off_level,
                (-1, Surface::Lower) => off_level,
                _ => level,
            };
            if new_level != level {
                transition(
                    engine, levels, load, new_level, t, jumps, events, Trigger::Frequency, cfg,
                )?;
                recorder.push(t, *jumps, y, levels, engine);
            }
            Ok(())
        }
        Policy::None => Ok(()),
    }
}

/// Standalone trajectory of the distributed estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ConsensusState>,
    pub terminal_residual: f64,
}

/// Integrates the estimator alone, with the same stepper the hybrid
/// simulator uses; the estimator depends only on the load profile, so its
/// trajectory matches the embedded one.
pub fn simulate_consensus(
    graph: &CommGraph,
    p_load: &[f64],
    disturbances: &[Disturbance],
    initial: &ConsensusState,
    cfg: &SimConfig,
) -> Result<ConsensusTrajectory, SimError> {
    cfg.validate()?;
    let n = graph.n_buses();
    if p_load.len() != n {
        return Err(SimError::InvalidSetup(format!(
            "{} loads for a {n}-bus communication graph",
            p_load.len()
        )));
    }
    if initial.power_cmd.len() != n || initial.psi.len() != graph.links().len() {
        return Err(SimError::InvalidSetup(
            "initial consensus state dimensions do not match the graph".into(),
        ));
    }
    let total = n + graph.links().len();
    let mut p_load = p_load.to_vec();
    let mut disturbances: Vec<Disturbance> = disturbances.to_vec();
    disturbances.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    let mut next_disturbance = 0usize;

    let mut y = vec![0.0; total];
    y[..n].copy_from_slice(&initial.power_cmd);
    y[n..].copy_from_slice(&initial.psi);

    let deriv = |p_load: &[f64], y: &[f64], dy: &mut [f64]| {
        let (cmd, psi) = y.split_at(n);
        let (d_cmd, d_psi) = dy.split_at_mut(n);
        consensus_field_raw(graph, cmd, psi, p_load, d_cmd, d_psi);
    };

    let mut k = [
        vec![0.0; total],
        vec![0.0; total],
        vec![0.0; total],
        vec![0.0; total],
    ];
    let mut tmp = vec![0.0; total];
    let mut y_next = vec![0.0; total];
    let mut times = vec![0.0];
    let mut states = vec![initial.clone()];
    let mut t = 0.0;
    let mut stride_count = 0usize;
    while t < cfg.horizon {
        let mut t_next = (t + cfg.dt).min(cfg.horizon);
        if let Some(d) = disturbances.get(next_disturbance) {
            if d.time > t {
                t_next = t_next.min(d.time);
            }
        }
        let h = t_next - t;
        if h > 0.0 {
            // Classic RK4, inlined for the closure-based derivative.
            deriv(&p_load, &y, &mut k[0]);
            for i in 0..total {
                tmp[i] = y[i] + 0.5 * h * k[0][i];
            }
            deriv(&p_load, &tmp, &mut k[1]);
            for i in 0..total {
                tmp[i] = y[i] + 0.5 * h * k[1][i];
            }
            deriv(&p_load, &tmp, &mut k[2]);
            for i in 0..total {
                tmp[i] = y[i] + h * k[2][i];
            }
            deriv(&p_load, &tmp, &mut k[3]);
            for i in 0..total {
                y_next[i] = y[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            if y_next.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonfiniteState { t: t_next });
            }
            y.copy_from_slice(&y_next);
            t = t_next;
        }
        while let Some(d) = disturbances.get(next_disturbance) {
            if d.time <= t {
                if d.bus >= n {
                    return Err(SimError::InvalidSetup(format!(
                        "disturbance references bus {}",
                        d.bus
                    )));
                }
                p_load[d.bus] += d.delta_load;
                next_disturbance += 1;
            } else {
                break;
            }
        }
        stride_count += 1;
        if stride_count >= cfg.record_stride || t >= cfg.horizon {
            times.push(t);
            states.push(ConsensusState {
                power_cmd: y[..n].to_vec(),
                psi: y[n..].to_vec(),
            });
            stride_count = 0;
        }
    }
    let mut dy = vec![0.0; total];
    deriv(&p_load, &y, &mut dy);
    let terminal_residual = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ConsensusTrajectory {
        times,
        states,
        terminal_residual,
    })
}



#[cfg(test)]
mod robustness_tests {
    use super::*;
    use crate::control::HysteresisThresholds;
    use crate::grid::{BusParams, LineParams};
    use approx::assert_abs_diff_eq;

    fn two_bus_cycle_problem() -> (NetworkModel, ControllerSet) {
        let model = NetworkModel::new(
            vec![BusParams::unit(-0.2), BusParams::unit(-0.2)],
            vec![LineParams {
                from: 0,
                to: 1,
                susceptance: 2.0,
            }],
        )
        .unwrap();
        let controller = ControllerSet::Hysteresis(vec![
            (
                0,
                HysteresisThresholds {
                    omega_off: 0.03,
                    omega_on: 0.05,
                    magnitude: 0.15,
                },
            ),
            (
                1,
                HysteresisThresholds {
                    omega_off: 0.03,
                    omega_on: 0.05,
                    magnitude: 0.15,
                },
            ),
        ]);
        (model, controller)
    }

    #[test]
    fn record_stride_does_not_change_dynamics() {
        let (model, controller) = two_bus_cycle_problem();
        let problem = SimProblem {
            model: &model,
            controller: &controller,
            disturbances: &[],
            comm: None,
        };
        let initial = HybridState::at_rest(&model, &controller, None);
        let dense = simulate(
            &problem,
            &initial,
            &SimConfig {
                horizon: 10.0,
                ..SimConfig::default()
            },
        )
        .unwrap();
        let sparse = simulate(
            &problem,
            &initial,
            &SimConfig {
                horizon: 10.0,
                record_stride: 25,
                ..SimConfig::default()
            },
        )
        .unwrap();
        assert_eq!(dense.events, sparse.events);
        assert_eq!(dense.final_state(), sparse.final_state());
        assert_eq!(dense.terminal_residual, sparse.terminal_residual);
    }

    #[test]
    fn simultaneous_switches_serialize_in_bus_order() {
        // Symmetric buses with identical thresholds cross together; the
        // sweep must apply one jump per counter increment, lower bus first.
        let (model, controller) = two_bus_cycle_problem();
        let problem = SimProblem {
            model: &model,
            controller: &controller,
            disturbances: &[],
            comm: None,
        };
        let initial = HybridState::at_rest(&model, &controller, None);
        let traj = simulate(
            &problem,
            &initial,
            &SimConfig {
                horizon: 5.0,
                ..SimConfig::default()
            },
        )
        .unwrap();
        assert!(traj.events.len() >= 2);
        let first_two = &traj.events[..2];
        assert_eq!(first_two[0].t, first_two[1].t);
        assert_eq!(first_two[0].jumps + 1, first_two[1].jumps);
        assert!(first_two[0].bus < first_two[1].bus);
    }

    #[test]
    fn step_refinement_agrees_on_the_terminal_state() {
        let model = NetworkModel::new(vec![BusParams::unit(-0.13)], vec![]).unwrap();
        let pc_lower = crate::control::design1_pc_lower(&[0.04], 2.0).unwrap()[0];
        let controller = ControllerSet::Adapted(vec![(
            0,
            crate::control::AdaptedConfig {
                thresholds: HysteresisThresholds {
                    omega_off: 0.04,
                    omega_on: 0.06,
                    magnitude: 0.1,
                },
                pc_lower,
            },
        )]);
        let problem = SimProblem {
            model: &model,
            controller: &controller,
            disturbances: &[],
            comm: None,
        };
        let initial = HybridState::at_rest(&model, &controller, None);
        let run = |dt: f64| {
            simulate(
                &problem,
                &initial,
                &SimConfig {
                    horizon: 20.0,
                    dt,
                    event_tol: 1e-6_f64.min(dt),
                    ..SimConfig::default()
                },
            )
            .unwrap()
        };
        let coarse = run(1e-3);
        let fine = run(5e-4);
        assert_eq!(coarse.events.len(), fine.events.len());
        assert_abs_diff_eq!(
            coarse.final_state().grid.omega[0],
            fine.final_state().grid.omega[0],
            epsilon = 1e-9
        );
        // Event times agree to the localization tolerance scale.
        for (a, b) in coarse.events.iter().zip(&fine.events) {
            assert_abs_diff_eq!(a.t, b.t, epsilon = 1e-5);
        }
    }
}
