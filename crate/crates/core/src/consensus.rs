//! Distributed power-command estimation.
//!
//! Instead of broadcasting the negated aggregate load, each bus runs a local
//! estimator coupled to its neighbours over a connected communication graph:
//! link integrators accumulate command differences and each bus discounts
//! its own estimate by `1/|N|`. At steady state every estimate equals the
//! negated aggregate load, so the hysteretic guards can use the local value
//! in place of the centralized one.
//!
//! The per-bus and per-link gains here are estimator tuning knobs; they are
//! unrelated to the cost-per-unit ranking used by the dispatch module.

use crate::grid::GridError;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Communication graph with estimator gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    n_buses: usize,
    links: Vec<(usize, usize)>,
    /// Per-bus estimator gain, > 0 (default 1).
    bus_gain: Vec<f64>,
    /// Per-link integrator gain, > 0 (default 1).
    link_gain: Vec<f64>,
}

impl CommGraph {
    pub fn new(
        n_buses: usize,
        links: Vec<(usize, usize)>,
        bus_gain: Vec<f64>,
        link_gain: Vec<f64>,
    ) -> Result<Self, GridError> {
        if n_buses == 0 {
            return Err(GridError::Empty);
        }
        if bus_gain.len() != n_buses {
            return Err(GridError::DimensionMismatch {
                what: "bus gains",
                expected: n_buses,
                got: bus_gain.len(),
            });
        }
        if link_gain.len() != links.len() {
            return Err(GridError::DimensionMismatch {
                what: "link gains",
                expected: links.len(),
                got: link_gain.len(),
            });
        }
        for (index, &(i, j)) in links.iter().enumerate() {
            if i >= n_buses {
                return Err(GridError::BadLineEndpoint { index, bus: i });
            }
            if j >= n_buses {
                return Err(GridError::BadLineEndpoint { index, bus: j });
            }
            if i == j {
                return Err(GridError::SelfLoop { index, bus: i });
            }
        }
        for (index, &g) in bus_gain.iter().chain(&link_gain).enumerate() {
            if !(g > 0.0) || !g.is_finite() {
                return Err(GridError::InvalidParameter {
                    field: "gain",
                    entity: format!("comm entry {index}"),
                    value: g,
                    requirement: "> 0",
                });
            }
        }
        let graph = CommGraph {
            n_buses,
            links,
            bus_gain,
            link_gain,
        };
        if !graph.is_connected() {
            return Err(GridError::Disconnected);
        }
        Ok(graph)
    }

    /// Unit gains everywhere.
    pub fn with_unit_gains(n_buses: usize, links: Vec<(usize, usize)>) -> Result<Self, GridError> {
        let n_links = links.len();
        CommGraph::new(n_buses, links, vec![1.0; n_buses], vec![1.0; n_links])
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn bus_gain(&self) -> &[f64] {
        &self.bus_gain
    }

    pub fn link_gain(&self) -> &[f64] {
        &self.link_gain
    }

    fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_buses];
        for &(i, j) in &self.links {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.n_buses];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n_buses
    }

    /// Second-smallest eigenvalue of the unweighted graph Laplacian; sets the
    /// time scale of consensus convergence.
    pub fn algebraic_connectivity(&self) -> f64 {
        let n = self.n_buses;
        if n == 1 {
            return f64::INFINITY;
        }
        let mut lap = DMatrix::<f64>::zeros(n, n);
        for &(i, j) in &self.links {
            lap[(i, i)] += 1.0;
            lap[(j, j)] += 1.0;
            lap[(i, j)] -= 1.0;
            lap[(j, i)] -= 1.0;
        }
        let mut eigs: Vec<f64> = lap.symmetric_eigenvalues().iter().copied().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eigs[1].max(0.0)
    }
}

/// Estimator state: per-bus power command and per-link integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub power_cmd: Vec<f64>,
    pub psi: Vec<f64>,
}

impl ConsensusState {
    pub fn zeros(graph: &CommGraph) -> Self {
        ConsensusState {
            power_cmd: vec![0.0; graph.n_buses()],
            psi: vec![0.0; graph.links().len()],
        }
    }
}

/// Time derivative of the estimator state for the given load profile.
pub fn consensus_field(
    graph: &CommGraph,
    state: &ConsensusState,
    p_load: &[f64],
) -> Result<ConsensusState, GridError> {
    let n = graph.n_buses();
    if state.power_cmd.len() != n {
        return Err(GridError::DimensionMismatch {
            what: "power commands",
            expected: n,
            got: state.power_cmd.len(),
        });
    }
    if state.psi.len() != graph.links().len() {
        return Err(GridError::DimensionMismatch {
            what: "link integrators",
            expected: graph.links().len(),
            got: state.psi.len(),
        });
    }
    if p_load.len() != n {
        return Err(GridError::DimensionMismatch {
            what: "bus loads",
            expected: n,
            got: p_load.len(),
        });
    }
    let mut d_cmd = vec![0.0; n];
    let mut d_psi = vec![0.0; graph.links().len()];
    consensus_field_raw(graph, &state.power_cmd, &state.psi, p_load, &mut d_cmd, &mut d_psi);
    Ok(ConsensusState {
        power_cmd: d_cmd,
        psi: d_psi,
    })
}

/// Slice-level estimator derivative shared with the hybrid integrator.
pub(crate) fn consensus_field_raw(
    graph: &CommGraph,
    power_cmd: &[f64],
    psi: &[f64],
    p_load: &[f64],
    d_cmd: &mut [f64],
    d_psi: &mut [f64],
) {
    let n = graph.n_buses() as f64;
    for v in d_cmd.iter_mut() {
        *v = 0.0;
    }
    for (e, &(i, j)) in graph.links().iter().enumerate() {
        d_psi[e] = (power_cmd[i] - power_cmd[j]) / graph.link_gain()[e];
        // Net integrator outflow enters each bus equation with a minus sign.
        d_cmd[i] -= psi[e];
        d_cmd[j] += psi[e];
    }
    for (j, v) in d_cmd.iter_mut().enumerate() {
        *v = (*v - p_load[j] - power_cmd[j] / n) / graph.bus_gain()[j];
    }
}

/// Steady-state power command: every bus agrees on the negated aggregate
/// load.
pub fn consensus_steady_state(n_buses: usize, p_load: &[f64]) -> Vec<f64> {
    let ell: f64 = p_load.iter().sum();
    vec![-ell; n_buses]
}

/// A steady-state link-integrator assignment, solved in the least-squares
/// sense (on graphs with cycles the assignment is not unique; any minimizer
/// balances every bus).
pub fn psi_steady_state(graph: &CommGraph, p_load: &[f64]) -> Result<Vec<f64>, GridError> {
    let n = graph.n_buses();
    if p_load.len() != n {
        return Err(GridError::DimensionMismatch {
            what: "bus loads",
            expected: n,
            got: p_load.len(),
        });
    }
    let ell: f64 = p_load.iter().sum();
    let m = graph.links().len();
    if m == 0 {
        return Ok(vec![]);
    }
    // Incidence * psi = rhs with rhs_j = -p_load_j + ell/|N|.
    let mut incidence = DMatrix::<f64>::zeros(n, m);
    for (e, &(i, j)) in graph.links().iter().enumerate() {
        incidence[(i, e)] = 1.0;
        incidence[(j, e)] = -1.0;
    }
    let rhs = nalgebra::DVector::from_iterator(
        n,
        p_load.iter().map(|p| -p + ell / n as f64),
    );
    let svd = incidence.svd(true, true);
    let psi = svd
        .solve(&rhs, 1e-12)
        .map_err(|_| GridError::Disconnected)?;
    Ok(psi.iter().copied().collect())
}

/// Quadratic distance of an estimator state from a reference, weighted by
/// the gains; nonincreasing along estimator trajectories.
pub fn consensus_energy(graph: &CommGraph, state: &ConsensusState, reference: &ConsensusState) -> f64 {
    let cmd: f64 = graph
        .bus_gain()
        .iter()
        .zip(state.power_cmd.iter().zip(&reference.power_cmd))
        .map(|(g, (a, b))| 0.5 * g * (a - b) * (a - b))
        .sum();
    let psi: f64 = graph
        .link_gain()
        .iter()
        .zip(state.psi.iter().zip(&reference.psi))
        .map(|(g, (a, b))| 0.5 * g * (a - b) * (a - b))
        .sum();
    cmd + psi
}

/// Verdict of the aggregate-load clearance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearanceReport {
    pub aggregate_load: f64,
    /// Smallest distance from the aggregate load to any negated command
    /// threshold; `None` without loads.
    pub min_distance: Option<f64>,
    pub guard_band: f64,
    pub pass: bool,
}

/// Checks that the aggregate load stays clear of every negated command
/// threshold, so the distributed estimates settle strictly on one side of
/// each guard.
pub fn check_threshold_clearance(
    aggregate_load: f64,
    thresholds: &[(f64, f64)],
    guard_band: f64,
) -> ClearanceReport {
    let min_distance = thresholds
        .iter()
        .flat_map(|&(lo, hi)| [(aggregate_load + lo).abs(), (aggregate_load + hi).abs()])
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.min(d)))
        });
    let pass = min_distance.is_none_or(|d| d > guard_band);
    ClearanceReport {
        aggregate_load,
        min_distance,
        guard_band,
        pass,
    }
}

/// Default guard band for [`check_threshold_clearance`].
pub const DEFAULT_GUARD_BAND: f64 = 1e-9;
