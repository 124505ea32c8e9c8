//! Power network model and continuous (flow) dynamics.
//!
//! A network is a connected set of buses joined by lossless lines. Each bus
//! carries generator inertia, frequency damping, governor droop and an
//! uncontrollable load. The continuous dynamics are the linearized swing
//! equations: phase differences integrate frequency differences, bus
//! frequencies respond to the local power imbalance, and mechanical power
//! tracks droop through a first-order governor lag.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-bus physical parameters, all in per-unit except time constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusParams {
    /// Generator inertia M (p.u.·s²), > 0.
    pub inertia: f64,
    /// Frequency damping A (p.u. per rad/s), > 0.
    pub damping: f64,
    /// Governor droop gain α (p.u. per rad/s), > 0.
    pub droop: f64,
    /// Governor time constant τ (s), > 0.
    pub governor_tc: f64,
    /// Frequency-independent load p^L (p.u.), any sign.
    pub p_load: f64,
    /// Generation cost coefficient c (cost per p.u.²), > 0.
    pub gen_cost: f64,
}

impl BusParams {
    /// Uniform unit-parameter bus with the given load, handy in tests.
    pub fn unit(p_load: f64) -> Self {
        BusParams {
            inertia: 1.0,
            damping: 1.0,
            droop: 1.0,
            governor_tc: 1.0,
            p_load,
            gen_cost: 1.0,
        }
    }
}

/// A lossless transmission line between two buses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub from: usize,
    pub to: usize,
    /// Line susceptance B (p.u. per rad), > 0.
    pub susceptance: f64,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("network graph is disconnected")]
    Disconnected,
    #[error("invalid parameter `{field}` on {entity}: {value} (must be {requirement})")]
    InvalidParameter {
        field: &'static str,
        entity: String,
        value: f64,
        requirement: &'static str,
    },
    #[error("line {index} endpoint {bus} does not reference an existing bus")]
    BadLineEndpoint { index: usize, bus: usize },
    #[error("line {index} connects bus {bus} to itself")]
    SelfLoop { index: usize, bus: usize },
    #[error("duplicate or antiparallel line between buses {i} and {j}")]
    DuplicateLine { i: usize, j: usize },
    #[error("network has no buses")]
    Empty,
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("injections do not balance: |sum| = {imbalance:e} exceeds {tolerance:e}")]
    UnbalancedInjections { imbalance: f64, tolerance: f64 },
}

/// Absolute tolerance on the injection sum accepted by [`NetworkModel::dc_power_flow`].
pub const INJECTION_BALANCE_TOL: f64 = 1e-9;

/// Validated power network with precomputed aggregates.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    buses: Vec<BusParams>,
    lines: Vec<LineParams>,
    aggregate_response: f64,
    aggregate_load: f64,
}

impl NetworkModel {
    /// Builds and validates a network.
    ///
    /// Rejects nonpositive physical parameters, dangling or duplicate
    /// (including antiparallel) lines, and disconnected graphs.
    pub fn new(buses: Vec<BusParams>, lines: Vec<LineParams>) -> Result<Self, GridError> {
        if buses.is_empty() {
            return Err(GridError::Empty);
        }
        for (j, b) in buses.iter().enumerate() {
            let entity = format!("bus {j}");
            let positive: [(&'static str, f64); 5] = [
                ("inertia", b.inertia),
                ("damping", b.damping),
                ("droop", b.droop),
                ("governor_tc", b.governor_tc),
                ("gen_cost", b.gen_cost),
            ];
            for (field, value) in positive {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(GridError::InvalidParameter {
                        field,
                        entity,
                        value,
                        requirement: "> 0",
                    });
                }
            }
            if !b.p_load.is_finite() {
                return Err(GridError::InvalidParameter {
                    field: "p_load",
                    entity,
                    value: b.p_load,
                    requirement: "finite",
                });
            }
        }
        let n = buses.len();
        for (index, l) in lines.iter().enumerate() {
            if l.from >= n {
                return Err(GridError::BadLineEndpoint {
                    index,
                    bus: l.from,
                });
            }
            if l.to >= n {
                return Err(GridError::BadLineEndpoint { index, bus: l.to });
            }
            if l.from == l.to {
                return Err(GridError::SelfLoop {
                    index,
                    bus: l.from,
                });
            }
            if !(l.susceptance > 0.0) || !l.susceptance.is_finite() {
                return Err(GridError::InvalidParameter {
                    field: "susceptance",
                    entity: format!("line {index}"),
                    value: l.susceptance,
                    requirement: "> 0",
                });
            }
        }
        // At most one of (i,j), (j,i) may be present.
        let mut seen: Vec<(usize, usize)> = Vec::with_capacity(lines.len());
        for l in &lines {
            let key = (l.from.min(l.to), l.from.max(l.to));
            if seen.contains(&key) {
                return Err(GridError::DuplicateLine { i: key.0, j: key.1 });
            }
            seen.push(key);
        }
        if !is_connected(n, &lines) {
            return Err(GridError::Disconnected);
        }
        let aggregate_response = buses.iter().map(|b| b.droop + b.damping).sum();
        let aggregate_load = buses.iter().map(|b| b.p_load).sum();
        Ok(NetworkModel {
            buses,
            lines,
            aggregate_response,
            aggregate_load,
        })
    }

    /// Same network with the uncontrollable load profile replaced.
    pub fn with_loads(&self, p_load: &[f64]) -> Result<Self, GridError> {
        if p_load.len() != self.buses.len() {
            return Err(GridError::DimensionMismatch {
                what: "bus loads",
                expected: self.buses.len(),
                got: p_load.len(),
            });
        }
        let mut buses = self.buses.clone();
        for (b, &p) in buses.iter_mut().zip(p_load) {
            b.p_load = p;
        }
        NetworkModel::new(buses, self.lines.clone())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[BusParams] {
        &self.buses
    }

    pub fn lines(&self) -> &[LineParams] {
        &self.lines
    }

    /// Aggregate droop-plus-damping Σ_j (α_j + A_j), the network's static
    /// frequency sensitivity.
    pub fn aggregate_response(&self) -> f64 {
        self.aggregate_response
    }

    /// Aggregate uncontrollable load Σ_j p^L_j.
    pub fn aggregate_load(&self) -> f64 {
        self.aggregate_load
    }

    pub fn p_loads(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.p_load).collect()
    }

    /// Evaluates the flow field at `state` with controllable demand `d_ctrl`
    /// (one entry per bus).
    pub fn flow_field(
        &self,
        state: &ContinuousState,
        d_ctrl: &[f64],
    ) -> Result<ContinuousState, GridError> {
        self.check_state_dims(state)?;
        if d_ctrl.len() != self.n_buses() {
            return Err(GridError::DimensionMismatch {
                what: "controllable demands",
                expected: self.n_buses(),
                got: d_ctrl.len(),
            });
        }
        let p_load = self.p_loads();
        let mut out = ContinuousState::zeros(self.n_lines(), self.n_buses());
        flow_field_raw(
            self,
            &p_load,
            &state.eta,
            &state.omega,
            &state.p_mech,
            d_ctrl,
            &mut out.eta,
            &mut out.omega,
            &mut out.p_mech,
        );
        Ok(out)
    }

    fn check_state_dims(&self, state: &ContinuousState) -> Result<(), GridError> {
        if state.eta.len() != self.n_lines() {
            return Err(GridError::DimensionMismatch {
                what: "phase differences",
                expected: self.n_lines(),
                got: state.eta.len(),
            });
        }
        if state.omega.len() != self.n_buses() {
            return Err(GridError::DimensionMismatch {
                what: "frequencies",
                expected: self.n_buses(),
                got: state.omega.len(),
            });
        }
        if state.p_mech.len() != self.n_buses() {
            return Err(GridError::DimensionMismatch {
                what: "mechanical powers",
                expected: self.n_buses(),
                got: state.p_mech.len(),
            });
        }
        Ok(())
    }

    /// Solves the linearized power flow for the given per-bus net injections.
    ///
    /// Injections must sum to zero (within [`INJECTION_BALANCE_TOL`]). The
    /// phase of the lowest-index bus is grounded at zero; flows are unique.
    pub fn dc_power_flow(&self, injections: &[f64]) -> Result<DcFlow, GridError> {
        let n = self.n_buses();
        if injections.len() != n {
            return Err(GridError::DimensionMismatch {
                what: "injections",
                expected: n,
                got: injections.len(),
            });
        }
        let sum: f64 = injections.iter().sum();
        if sum.abs() > INJECTION_BALANCE_TOL {
            return Err(GridError::UnbalancedInjections {
                imbalance: sum.abs(),
                tolerance: INJECTION_BALANCE_TOL,
            });
        }
        if self.lines.is_empty() {
            // Single bus (connectivity already guaranteed).
            return Ok(DcFlow {
                eta: vec![],
                flows: vec![],
            });
        }
        // Weighted Laplacian with the reference bus row/column removed.
        let m = n - 1;
        let mut lap = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for l in &self.lines {
            let b = l.susceptance;
            // Reduced index: bus 0 is the reference.
            let (i, j) = (l.from, l.to);
            if i > 0 {
                lap[(i - 1, i - 1)] += b;
            }
            if j > 0 {
                lap[(j - 1, j - 1)] += b;
            }
            if i > 0 && j > 0 {
                lap[(i - 1, j - 1)] -= b;
                lap[(j - 1, i - 1)] -= b;
            }
        }
        for j in 1..n {
            rhs[j - 1] = injections[j];
        }
        let theta_red = lap
            .lu()
            .solve(&rhs)
            .ok_or(GridError::Disconnected)?;
        let theta = |j: usize| if j == 0 { 0.0 } else { theta_red[j - 1] };
        let eta: Vec<f64> = self
            .lines
            .iter()
            .map(|l| theta(l.from) - theta(l.to))
            .collect();
        let flows: Vec<f64> = self
            .lines
            .iter()
            .zip(&eta)
            .map(|(l, e)| l.susceptance * e)
            .collect();
        Ok(DcFlow { eta, flows })
    }

    /// Line flows p_ij = B_ij η_ij for the given phase differences.
    pub fn line_flows(&self, eta: &[f64]) -> Vec<f64> {
        self.lines
            .iter()
            .zip(eta)
            .map(|(l, e)| l.susceptance * e)
            .collect()
    }
}

/// Continuous state of the network: phase differences per line, frequency
/// deviation and mechanical power per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousState {
    pub eta: Vec<f64>,
    pub omega: Vec<f64>,
    pub p_mech: Vec<f64>,
}

impl ContinuousState {
    pub fn zeros(n_lines: usize, n_buses: usize) -> Self {
        ContinuousState {
            eta: vec![0.0; n_lines],
            omega: vec![0.0; n_buses],
            p_mech: vec![0.0; n_buses],
        }
    }

    pub fn zeros_for(model: &NetworkModel) -> Self {
        Self::zeros(model.n_lines(), model.n_buses())
    }

    pub fn norm_inf(&self) -> f64 {
        self.eta
            .iter()
            .chain(&self.omega)
            .chain(&self.p_mech)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.eta
            .iter()
            .chain(&self.omega)
            .chain(&self.p_mech)
            .all(|v| v.is_finite())
    }
}

/// Result of a linearized power-flow solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcFlow {
    /// Phase difference per line (reference bus grounded at zero).
    pub eta: Vec<f64>,
    /// Power flow per line.
    pub flows: Vec<f64>,
}

/// Phase-difference derivatives and net line inflow per bus, accumulated in
/// line order so that flipping a line's orientation (and its η sign)
/// reproduces identical arithmetic.
pub(crate) fn line_kinematics(
    model: &NetworkModel,
    eta: &[f64],
    omega: &[f64],
    d_eta: &mut [f64],
    net_inflow: &mut [f64],
) {
    for v in net_inflow.iter_mut() {
        *v = 0.0;
    }
    for (l, (e, de)) in model.lines.iter().zip(eta.iter().zip(d_eta.iter_mut())) {
        *de = omega[l.from] - omega[l.to];
        let p = l.susceptance * e;
        net_inflow[l.from] -= p;
        net_inflow[l.to] += p;
    }
}

/// Local power imbalance at one bus given its net line inflow; `M ω̇`.
pub(crate) fn bus_imbalance(
    bus: &BusParams,
    p_load: f64,
    omega: f64,
    p_mech: f64,
    d_ctrl: f64,
    net_inflow: f64,
) -> f64 {
    -p_load + p_mech - d_ctrl - bus.damping * omega + net_inflow
}

/// Core flow-field arithmetic over raw slices, shared by the public
/// evaluator and the integrator.
///
/// Writes η̇, ω̇ and ṗ^M; all slices must already have matching lengths.
/// `d_omega` doubles as the net-inflow accumulator.
#[allow(clippy::too_many_arguments)]
pub(crate) fn flow_field_raw(
    model: &NetworkModel,
    p_load: &[f64],
    eta: &[f64],
    omega: &[f64],
    p_mech: &[f64],
    d_ctrl: &[f64],
    d_eta: &mut [f64],
    d_omega: &mut [f64],
    d_p_mech: &mut [f64],
) {
    line_kinematics(model, eta, omega, d_eta, d_omega);
    for (j, b) in model.buses.iter().enumerate() {
        let imbalance = bus_imbalance(b, p_load[j], omega[j], p_mech[j], d_ctrl[j], d_omega[j]);
        d_omega[j] = imbalance / b.inertia;
        d_p_mech[j] = -(p_mech[j] + b.droop * omega[j]) / b.governor_tc;
    }
}

fn is_connected(n: usize, lines: &[LineParams]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for l in lines {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(j) = stack.pop() {
        for &k in &adj[j] {
            if !seen[k] {
                seen[k] = true;
                count += 1;
                stack.push(k);
            }
        }
    }
    count == n
}
