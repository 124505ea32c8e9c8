//! Shared generators for randomized suites.

// Each test target compiles this module separately and uses a subset.
#![allow(dead_code)]

use gridfreq_core::control::{Design2Load, HysteresisThresholds};
use gridfreq_core::dispatch::{DispatchProblem, OnOffLoad};
use gridfreq_core::grid::{BusParams, LineParams, NetworkModel};
use rand::Rng;

/// Random connected network: a random spanning tree plus a few extra lines.
/// Loads start at zero; set them with `with_loads`.
pub fn random_network(rng: &mut impl Rng, n_buses: usize) -> NetworkModel {
    let buses: Vec<BusParams> = (0..n_buses)
        .map(|_| BusParams {
            inertia: rng.random_range(0.5..3.0),
            damping: rng.random_range(0.3..1.5),
            droop: rng.random_range(0.3..2.0),
            governor_tc: rng.random_range(0.3..2.0),
            p_load: 0.0,
            gen_cost: rng.random_range(0.5..2.0),
        })
        .collect();
    let mut lines: Vec<LineParams> = Vec::new();
    for j in 1..n_buses {
        let parent = rng.random_range(0..j);
        lines.push(LineParams {
            from: parent,
            to: j,
            susceptance: rng.random_range(0.5..3.0),
        });
    }
    if n_buses >= 3 {
        let extra = rng.random_range(0..n_buses);
        for _ in 0..extra {
            let i = rng.random_range(0..n_buses);
            let j = rng.random_range(0..n_buses);
            if i == j {
                continue;
            }
            let dup = lines
                .iter()
                .any(|l| (l.from == i && l.to == j) || (l.from == j && l.to == i));
            if !dup {
                lines.push(LineParams {
                    from: i,
                    to: j,
                    susceptance: rng.random_range(0.5..3.0),
                });
            }
        }
    }
    NetworkModel::new(buses, lines).expect("generated network is valid")
}

/// Balanced random injection vector.
pub fn random_balanced_injections(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = q.iter().sum::<f64>() / n as f64;
    for v in q.iter_mut() {
        *v -= mean;
    }
    q
}

/// Random hysteresis thresholds satisfying the equilibrium-existence width
/// condition for the given aggregate response.
pub fn random_wide_hysteresis(
    rng: &mut impl Rng,
    aggregate_response: f64,
) -> HysteresisThresholds {
    let omega_off = rng.random_range(0.01..0.08);
    let magnitude = rng.random_range(0.02..0.3);
    let slack = rng.random_range(0.0..0.05);
    HysteresisThresholds {
        omega_off,
        omega_on: omega_off + magnitude / aggregate_response + slack,
        magnitude,
    }
}

/// Random dispatch problem with droop gains tied to inverse generation
/// costs, so the optimality guarantee applies.
pub fn random_coupled_problem(
    rng: &mut impl Rng,
    n_buses: usize,
    n_loads: usize,
) -> DispatchProblem {
    let gen_cost: Vec<f64> = (0..n_buses).map(|_| rng.random_range(0.5..2.0)).collect();
    let damping: Vec<f64> = (0..n_buses).map(|_| rng.random_range(0.3..1.5)).collect();
    let droop: Vec<f64> = gen_cost.iter().map(|c| 1.0 / c).collect();
    let loads: Vec<OnOffLoad> = (0..n_loads)
        .map(|k| OnOffLoad {
            bus: k % n_buses,
            cost: rng.random_range(1e-4..2e-3),
            magnitude: rng.random_range(0.05..0.3),
        })
        .collect();
    DispatchProblem {
        gen_cost,
        damping,
        droop,
        p_load: vec![0.0; n_buses],
        loads,
    }
}

/// Design-rule inputs matching a dispatch problem's loads.
pub fn design2_inputs(problem: &DispatchProblem) -> Vec<Design2Load> {
    problem
        .loads
        .iter()
        .map(|l| Design2Load {
            bus: l.bus,
            cost: l.cost,
            magnitude: l.magnitude,
            omega_on: None,
        })
        .collect()
}

/// Random aggregate load kept away from the breakpoints of the ranked
/// command ladder so certificates are unambiguous.
pub fn nudge_off_breakpoints(ell: f64, breakpoints: &[f64], margin: f64) -> f64 {
    let mut out = ell;
    for &b in breakpoints {
        if (out + b).abs() < margin {
            out += 2.0 * margin;
        }
    }
    out
}

/// Chain network whose bus parameters mirror a dispatch problem (unit
/// inertia and governor lag), with the aggregate load placed on bus 0.
pub fn model_from_problem(problem: &DispatchProblem, ell: f64) -> NetworkModel {
    let n = problem.gen_cost.len();
    let buses: Vec<BusParams> = (0..n)
        .map(|j| BusParams {
            inertia: 1.0,
            damping: problem.damping[j],
            droop: problem.droop[j],
            governor_tc: 1.0,
            p_load: if j == 0 { ell } else { 0.0 },
            gen_cost: problem.gen_cost[j],
        })
        .collect();
    let lines: Vec<LineParams> = (1..n)
        .map(|j| LineParams {
            from: j - 1,
            to: j,
            susceptance: 1.0,
        })
        .collect();
    NetworkModel::new(buses, lines).expect("chain network is valid")
}

/// Random connected communication graph over `n` buses with unit gains.
pub fn random_comm_graph(
    rng: &mut impl Rng,
    n: usize,
) -> gridfreq_core::consensus::CommGraph {
    let mut links: Vec<(usize, usize)> = Vec::new();
    for j in 1..n {
        let parent = rng.random_range(0..j);
        links.push((parent, j));
    }
    let extra = rng.random_range(0..n);
    for _ in 0..extra {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && !links.contains(&(i, j)) && !links.contains(&(j, i)) {
            links.push((i, j));
        }
    }
    gridfreq_core::consensus::CommGraph::with_unit_gains(n, links).expect("connected")
}
