//! Deterministic artifact writers.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! formatting, which is byte-stable for a given input.

use anyhow::Result;
use gridfreq_core::consensus::{CommGraph, ConsensusState, consensus_energy};
use gridfreq_core::sim::{ConsensusTrajectory, Sample, Trajectory};
use std::fmt::Write as _;

/// Trajectory CSV with columns `t,l,omega_*,sigma_*,pM_*,pc`, down-sampled
/// to `output_period` but always keeping both sides of every jump.
pub fn trajectory_csv(trajectory: &Trajectory, n_buses: usize, output_period: f64) -> String {
    let mut out = String::new();
    out.push_str("t,l");
    for j in 1..=n_buses {
        write!(out, ",omega_{j}").unwrap();
    }
    for j in 1..=trajectory.load_buses.len() {
        write!(out, ",sigma_{j}").unwrap();
    }
    for j in 1..=n_buses {
        write!(out, ",pM_{j}").unwrap();
    }
    out.push_str(",pc\n");

    let keep: Vec<bool> = select_samples(&trajectory.samples, output_period);
    for (s, keep) in trajectory.samples.iter().zip(keep) {
        if !keep {
            continue;
        }
        write!(out, "{},{}", s.t, s.jumps).unwrap();
        for w in &s.state.grid.omega {
            write!(out, ",{w}").unwrap();
        }
        for lv in &s.state.levels {
            write!(out, ",{lv}").unwrap();
        }
        for p in &s.state.grid.p_mech {
            write!(out, ",{p}").unwrap();
        }
        writeln!(out, ",{}", s.power_cmd).unwrap();
    }
    out
}

fn select_samples(samples: &[Sample], output_period: f64) -> Vec<bool> {
    let mut keep = vec![false; samples.len()];
    if samples.is_empty() {
        return keep;
    }
    // Jump boundaries: both sides of every counter increment.
    for i in 1..samples.len() {
        if samples[i].jumps != samples[i - 1].jumps {
            keep[i - 1] = true;
            keep[i] = true;
        }
    }
    keep[0] = true;
    *keep.last_mut().unwrap() = true;
    let mut next_tick = 0.0f64;
    for (i, s) in samples.iter().enumerate() {
        if s.t + 1e-12 >= next_tick {
            keep[i] = true;
            while next_tick <= s.t + 1e-12 {
                next_tick += output_period;
            }
        }
    }
    keep
}

/// Consensus CSV with columns `t,pc_*,psi_*,vc` where `vc` is the quadratic
/// distance from the supplied reference.
pub fn consensus_csv(
    trajectory: &ConsensusTrajectory,
    graph: &CommGraph,
    reference: &ConsensusState,
) -> String {
    let mut out = String::new();
    out.push('t');
    for j in 1..=graph.n_buses() {
        write!(out, ",pc_{j}").unwrap();
    }
    for e in 1..=graph.links().len() {
        write!(out, ",psi_{e}").unwrap();
    }
    out.push_str(",vc\n");
    for (t, s) in trajectory.times.iter().zip(&trajectory.states) {
        write!(out, "{t}").unwrap();
        for c in &s.power_cmd {
            write!(out, ",{c}").unwrap();
        }
        for p in &s.psi {
            write!(out, ",{p}").unwrap();
        }
        writeln!(out, ",{}", consensus_energy(graph, s, reference)).unwrap();
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn to_json_file<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
