//! Equilibrium computation for every control mode.
//!
//! At an equilibrium all buses share one frequency deviation, mechanical
//! power and frequency-dependent demand follow from it through droop and
//! damping, and phase differences solve the linearized power flow. The
//! common frequency is fixed by the aggregate balance
//! `omega* = (-l - sum of switched-on magnitudes) / D`.

use crate::control::{ControllerSet, StaticSwitchConfig, validate_design};
use crate::grid::{ContinuousState, GridError, NetworkModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest load count for which exhaustive switch-vector enumeration is
/// attempted when certifying that no equilibrium exists.
pub const EXHAUSTIVE_CERTIFICATE_MAX_LOADS: usize = 20;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("exhaustive certificate requested for {n} loads (max {max})")]
    TooManyLoads { n: usize, max: usize },
    #[error("design condition violated: {detail}")]
    DesignConditionViolated { detail: String },
    #[error("controller mode {0} is not handled by this solver")]
    UnsupportedMode(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A full equilibrium of the interconnected system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    /// Common frequency deviation (rad/s).
    pub omega: f64,
    /// Switch state per controlled load (empty for the static policy).
    pub sigma: Vec<bool>,
    /// Controllable demand per bus (fractional at sliding equilibria).
    pub d_ctrl: Vec<f64>,
    /// Mechanical power per bus, -droop * omega.
    pub p_mech: Vec<f64>,
    /// Frequency-dependent uncontrollable demand per bus, damping * omega.
    pub d_unc: Vec<f64>,
    /// Phase difference per line.
    pub eta: Vec<f64>,
    /// Power flow per line.
    pub flows: Vec<f64>,
}

impl EquilibriumPoint {
    /// Continuous state (eta, omega, p_mech) of this equilibrium.
    pub fn state(&self, model: &NetworkModel) -> ContinuousState {
        ContinuousState {
            eta: self.eta.clone(),
            omega: vec![self.omega; model.n_buses()],
            p_mech: self.p_mech.clone(),
        }
    }

    /// Max-norm of the flow field at this point; near zero for a valid
    /// equilibrium.
    pub fn residual(&self, model: &NetworkModel) -> Result<f64, GridError> {
        let dx = model.flow_field(&self.state(model), &self.d_ctrl)?;
        Ok(dx.norm_inf())
    }
}

/// Common equilibrium frequency for a fixed switch vector:
/// `(-aggregate_load - sigma . magnitudes) / aggregate_response`.
pub fn equilibrium_frequency(
    aggregate_load: f64,
    sigma: &[bool],
    magnitudes: &[f64],
    aggregate_response: f64,
) -> f64 {
    let switched: f64 = sigma
        .iter()
        .zip(magnitudes)
        .filter(|(on, _)| **on)
        .map(|(_, m)| m)
        .sum();
    (-aggregate_load - switched) / aggregate_response
}

/// Assembles the full equilibrium state from the common frequency and the
/// per-bus controllable demand.
pub fn full_equilibrium(
    model: &NetworkModel,
    omega: f64,
    sigma: Vec<bool>,
    d_ctrl: Vec<f64>,
) -> Result<EquilibriumPoint, EquilibriumError> {
    let p_mech: Vec<f64> = model.buses().iter().map(|b| -b.droop * omega).collect();
    let d_unc: Vec<f64> = model.buses().iter().map(|b| b.damping * omega).collect();
    let injections: Vec<f64> = model
        .buses()
        .iter()
        .enumerate()
        .map(|(j, b)| -b.p_load + p_mech[j] - d_ctrl[j] - d_unc[j])
        .collect();
    let dc = model.dc_power_flow(&injections)?;
    Ok(EquilibriumPoint {
        omega,
        sigma,
        d_ctrl,
        p_mech,
        d_unc,
        eta: dc.eta,
        flows: dc.flows,
    })
}

fn d_ctrl_per_bus(model: &NetworkModel, buses: &[usize], values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.n_buses()];
    for (&b, &v) in buses.iter().zip(values) {
        out[b] += v;
    }
    out
}

/// One step of the constructive existence algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Tentative common frequency before this step's switch.
    pub omega_tilde: f64,
    /// Loads violating their hysteresis band at this frequency.
    pub violating: Vec<usize>,
    /// Load switched on to resolve the violation, if any.
    pub switched_on: Option<usize>,
}

/// Iteration trace of the constructive equilibrium search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceTrace {
    pub steps: Vec<TraceStep>,
    /// Size of the initial violation set; the algorithm performs at most
    /// this many switches.
    pub initial_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HysteresisOutcome {
    Found(EquilibriumPoint),
    /// No switch vector is simultaneously consistent with the hysteresis
    /// bands and the aggregate balance. `exhaustive` marks whether all
    /// vectors were enumerated (a proof) or only the constructive search
    /// failed (evidence).
    NoEquilibrium { exhaustive: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HysteresisEquilibrium {
    pub outcome: HysteresisOutcome,
    pub trace: ExistenceTrace,
}

/// Searches for an equilibrium of the plain hysteresis scheme.
///
/// Starts from all loads off and repeatedly switches on the violating load
/// with the smallest off threshold; terminates within the initial violation
/// count when every load's hysteresis band is at least as wide as the
/// frequency drop its switch causes. On failure, falls back to exhaustive
/// enumeration when the load count permits (or when `require_exhaustive`).
pub fn solve_hysteresis_equilibrium(
    model: &NetworkModel,
    loads: &[(usize, crate::control::HysteresisThresholds)],
    require_exhaustive: bool,
) -> Result<HysteresisEquilibrium, EquilibriumError> {
    let n = loads.len();
    if require_exhaustive && n > EXHAUSTIVE_CERTIFICATE_MAX_LOADS {
        return Err(EquilibriumError::TooManyLoads {
            n,
            max: EXHAUSTIVE_CERTIFICATE_MAX_LOADS,
        });
    }
    let ell = model.aggregate_load();
    let d_total = model.aggregate_response();
    let buses: Vec<usize> = loads.iter().map(|(b, _)| *b).collect();
    let mags: Vec<f64> = loads.iter().map(|(_, t)| t.magnitude).collect();

    let violators = |omega: f64, sigma: &[bool]| -> Vec<usize> {
        loads
            .iter()
            .enumerate()
            .filter(|(k, (_, t))| {
                (!sigma[*k] && omega > t.omega_on) || (sigma[*k] && omega < t.omega_off)
            })
            .map(|(k, _)| k)
            .collect()
    };

    let mut sigma = vec![false; n];
    let mut omega_tilde = -ell / d_total;
    let mut steps = Vec::new();
    let mut consistent = true;
    loop {
        let v = violators(omega_tilde, &sigma);
        if v.is_empty() {
            steps.push(TraceStep {
                omega_tilde,
                violating: vec![],
                switched_on: None,
            });
            break;
        }
        // A switched-on violator means the tentative frequency fell below
        // some off threshold: the constructive search cannot proceed.
        if v.iter().any(|&k| sigma[k]) {
            steps.push(TraceStep {
                omega_tilde,
                violating: v,
                switched_on: None,
            });
            consistent = false;
            break;
        }
        let &pick = v
            .iter()
            .min_by(|&&a, &&b| {
                let wa = loads[a].1.omega_off;
                let wb = loads[b].1.omega_off;
                wa.partial_cmp(&wb).unwrap().then(buses[a].cmp(&buses[b]))
            })
            .unwrap();
        steps.push(TraceStep {
            omega_tilde,
            violating: v,
            switched_on: Some(pick),
        });
        sigma[pick] = true;
        omega_tilde -= mags[pick] / d_total;
    }
    let initial_violations = steps.first().map(|s| s.violating.len()).unwrap_or(0);
    let trace = ExistenceTrace {
        steps,
        initial_violations,
    };

    if consistent {
        let point = full_equilibrium(
            model,
            omega_tilde,
            sigma.clone(),
            d_ctrl_per_bus(
                model,
                &buses,
                &sigma
                    .iter()
                    .zip(&mags)
                    .map(|(on, m)| if *on { *m } else { 0.0 })
                    .collect::<Vec<_>>(),
            ),
        )?;
        return Ok(HysteresisEquilibrium {
            outcome: HysteresisOutcome::Found(point),
            trace,
        });
    }

    if n > EXHAUSTIVE_CERTIFICATE_MAX_LOADS {
        return Ok(HysteresisEquilibrium {
            outcome: HysteresisOutcome::NoEquilibrium { exhaustive: false },
            trace,
        });
    }

    // Exhaustive sweep: accept the lexicographically smallest consistent
    // switch vector, if any exists.
    let found = exhaustive_consistent_sigma(ell, d_total, loads);
    match found {
        Some(sigma) => {
            let omega = equilibrium_frequency(ell, &sigma, &mags, d_total);
            let values: Vec<f64> = sigma
                .iter()
                .zip(&mags)
                .map(|(on, m)| if *on { *m } else { 0.0 })
                .collect();
            let point =
                full_equilibrium(model, omega, sigma, d_ctrl_per_bus(model, &buses, &values))?;
            Ok(HysteresisEquilibrium {
                outcome: HysteresisOutcome::Found(point),
                trace,
            })
        }
        None => Ok(HysteresisEquilibrium {
            outcome: HysteresisOutcome::NoEquilibrium { exhaustive: true },
            trace,
        }),
    }
}

fn sigma_from_bits(bits: u32, n: usize) -> Vec<bool> {
    // Load 0 occupies the most significant position so integer order equals
    // lexicographic order on the vector.
    (0..n).map(|k| bits >> (n - 1 - k) & 1 == 1).collect()
}

fn sigma_consistent(
    omega: f64,
    sigma: &[bool],
    loads: &[(usize, crate::control::HysteresisThresholds)],
) -> bool {
    loads.iter().enumerate().all(|(k, (_, t))| {
        if sigma[k] {
            omega >= t.omega_off
        } else {
            omega <= t.omega_on
        }
    })
}

#[cfg(feature = "parallel")]
fn exhaustive_consistent_sigma(
    ell: f64,
    d_total: f64,
    loads: &[(usize, crate::control::HysteresisThresholds)],
) -> Option<Vec<bool>> {
    use rayon::prelude::*;
    let n = loads.len();
    let mags: Vec<f64> = loads.iter().map(|(_, t)| t.magnitude).collect();
    (0u32..1 << n)
        .into_par_iter()
        .filter_map(|bits| {
            let sigma = sigma_from_bits(bits, n);
            let omega = equilibrium_frequency(ell, &sigma, &mags, d_total);
            sigma_consistent(omega, &sigma, loads).then_some(bits)
        })
        .min()
        .map(|bits| sigma_from_bits(bits, n))
}

#[cfg(not(feature = "parallel"))]
fn exhaustive_consistent_sigma(
    ell: f64,
    d_total: f64,
    loads: &[(usize, crate::control::HysteresisThresholds)],
) -> Option<Vec<bool>> {
    let n = loads.len();
    let mags: Vec<f64> = loads.iter().map(|(_, t)| t.magnitude).collect();
    (0u32..1 << n).find_map(|bits| {
        let sigma = sigma_from_bits(bits, n);
        let omega = equilibrium_frequency(ell, &sigma, &mags, d_total);
        sigma_consistent(omega, &sigma, loads).then(|| sigma)
    })
}

/// Equilibria of the adapted and optimality-tuned schemes.
///
/// The adapted scheme has a single equilibrium: loads whose lower command
/// threshold is at or above the power command are off, the rest are on. The
/// optimality-tuned scheme has one equilibrium when the power command falls
/// outside every `[pc_lower, pc_upper]` interval and up to two when it falls
/// inside one (the boundary-ranked load may be on or off); candidates are
/// kept only if the whole switch vector is admissible for flowing at the
/// resulting frequency. Points are ordered by descending frequency.
pub fn equilibria_adapted(
    model: &NetworkModel,
    set: &ControllerSet,
) -> Result<Vec<EquilibriumPoint>, EquilibriumError> {
    let report = validate_design(set, model.aggregate_response());
    if !report.all_pass {
        let failing: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("bus {}: {}", c.bus, c.condition))
            .collect();
        return Err(EquilibriumError::DesignConditionViolated {
            detail: failing.join("; "),
        });
    }
    let ell = model.aggregate_load();
    let d_total = model.aggregate_response();
    let power_cmd = -ell;
    let controls = match set.switched_loads() {
        Some(c) => c,
        None => return Err(EquilibriumError::UnsupportedMode("static/uncontrolled")),
    };
    let buses: Vec<usize> = controls.iter().map(|(b, _)| *b).collect();
    let mags: Vec<f64> = controls.iter().map(|(_, c)| c.magnitude()).collect();

    let candidates: Vec<Vec<bool>> = match set {
        ControllerSet::Adapted(loads) => {
            vec![loads.iter().map(|(_, c)| power_cmd > c.pc_lower).collect()]
        }
        ControllerSet::Optimal(loads) => {
            let boundary = loads
                .iter()
                .position(|(_, c)| power_cmd >= c.pc_lower && power_cmd <= c.pc_upper);
            match boundary {
                Some(j) => {
                    let base: Vec<bool> = loads
                        .iter()
                        .enumerate()
                        .map(|(k, (_, c))| k != j && power_cmd > c.pc_upper)
                        .collect();
                    let mut with_on = base.clone();
                    with_on[j] = true;
                    vec![base, with_on]
                }
                None => vec![loads.iter().map(|(_, c)| power_cmd > c.pc_upper).collect()],
            }
        }
        _ => unreachable!(),
    };

    let mut points = Vec::new();
    for sigma in candidates {
        let omega = equilibrium_frequency(ell, &sigma, &mags, d_total);
        let admissible = controls
            .iter()
            .zip(&sigma)
            .all(|((_, c), &on)| c.in_flow_set(omega, power_cmd, on));
        if !admissible {
            continue;
        }
        let values: Vec<f64> = sigma
            .iter()
            .zip(&mags)
            .map(|(on, m)| if *on { *m } else { 0.0 })
            .collect();
        points.push(full_equilibrium(
            model,
            omega,
            sigma,
            d_ctrl_per_bus(model, &buses, &values),
        )?);
    }
    points.sort_by(|a, b| b.omega.partial_cmp(&a.omega).unwrap());
    Ok(points)
}

/// Equilibrium of the static policy, found by scanning the piecewise-constant
/// aggregate demand across threshold breakpoints.
///
/// When the balance lands exactly on some bus's threshold, the equilibrium is
/// a sliding one: the demand of the threshold loads is the interval member
/// that balances the bus equations, filled in ascending bus order.
pub fn solve_static_equilibrium(
    model: &NetworkModel,
    loads: &[(usize, StaticSwitchConfig)],
) -> Result<EquilibriumPoint, EquilibriumError> {
    let ell = model.aggregate_load();
    let d_total = model.aggregate_response();
    let buses: Vec<usize> = loads.iter().map(|(b, _)| *b).collect();

    let mut breakpoints: Vec<f64> = loads
        .iter()
        .flat_map(|(_, c)| [c.omega_lower, c.omega_upper])
        .collect();
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup();

    let demand_at = |omega: f64| -> Vec<f64> { loads.iter().map(|(_, c)| c.demand(omega)).collect() };
    let total = |d: &[f64]| -> f64 { d.iter().sum() };

    // Candidate open intervals between breakpoints (and the two rays).
    let mut probes: Vec<(f64, f64, f64)> = Vec::new(); // (lo, hi, representative)
    let big = 1e12;
    if breakpoints.is_empty() {
        probes.push((-big, big, 0.0));
    } else {
        probes.push((-big, breakpoints[0], breakpoints[0] - 1.0));
        for w in breakpoints.windows(2) {
            probes.push((w[0], w[1], 0.5 * (w[0] + w[1])));
        }
        let last = *breakpoints.last().unwrap();
        probes.push((last, big, last + 1.0));
    }
    for (lo, hi, rep) in probes {
        let d = demand_at(rep);
        let omega = (-ell - total(&d)) / d_total;
        if omega > lo && omega < hi {
            let values = demand_at(omega);
            return full_equilibrium(model, omega, vec![], d_ctrl_per_bus(model, &buses, &values));
        }
    }
    // The balance sits on a breakpoint: allocate the interval demands there.
    for &w in &breakpoints {
        let mut values: Vec<f64> = Vec::with_capacity(loads.len());
        let mut fixed = 0.0;
        let mut slack: Vec<(usize, f64, f64)> = Vec::new(); // (load idx, lo, hi)
        for (k, (_, c)) in loads.iter().enumerate() {
            let (lo, hi) = c.demand_interval(w);
            if lo == hi {
                values.push(lo);
                fixed += lo;
            } else {
                values.push(lo);
                slack.push((k, lo, hi));
            }
        }
        let mut residual = -ell - d_total * w - fixed - slack.iter().map(|s| s.1).sum::<f64>();
        if residual < -1e-12 {
            continue;
        }
        let capacity: f64 = slack.iter().map(|(_, lo, hi)| hi - lo).sum();
        if residual > capacity + 1e-12 {
            continue;
        }
        // Fill interval loads in ascending bus order.
        let mut order = slack.clone();
        order.sort_by_key(|(k, _, _)| buses[*k]);
        for (k, lo, hi) in order {
            let take = residual.min(hi - lo).max(0.0);
            values[k] = lo + take;
            residual -= take;
        }
        return full_equilibrium(model, w, vec![], d_ctrl_per_bus(model, &buses, &values));
    }
    // Unreachable for positive aggregate response: the balance map is
    // strictly increasing and spans the reals.
    unreachable!("static balance must cross the load level")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{Design2Load, HysteresisThresholds, make_design2};
    use crate::grid::{BusParams, LineParams};
    use approx::assert_abs_diff_eq;

    fn single_bus(p_load: f64) -> NetworkModel {
        NetworkModel::new(vec![BusParams::unit(p_load)], vec![]).unwrap()
    }

    fn two_bus(p0: f64, p1: f64) -> NetworkModel {
        NetworkModel::new(
            vec![BusParams::unit(p0), BusParams::unit(p1)],
            vec![LineParams {
                from: 0,
                to: 1,
                susceptance: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn frequency_formula() {
        assert_abs_diff_eq!(
            equilibrium_frequency(-0.4, &[false, false], &[0.2, 0.2], 4.0),
            0.1
        );
        assert_abs_diff_eq!(
            equilibrium_frequency(-0.4, &[true, true], &[0.2, 0.2], 4.0),
            0.0
        );
        assert_eq!(equilibrium_frequency(0.0, &[], &[], 4.0), 0.0);
    }

    #[test]
    fn hysteresis_constructive_switch_on() {
        let model = single_bus(-0.21);
        let sol = solve_hysteresis_equilibrium(
            &model,
            &[(
                0,
                HysteresisThresholds {
                    omega_off: 0.04,
                    omega_on: 0.1,
                    magnitude: 0.1,
                },
            )],
            false,
        )
        .unwrap();
        match sol.outcome {
            HysteresisOutcome::Found(p) => {
                assert_abs_diff_eq!(p.omega, 0.055, epsilon = 1e-12);
                assert_eq!(p.sigma, vec![true]);
                assert!(p.residual(&model).unwrap() < 1e-12);
            }
            other => panic!("expected equilibrium, got {other:?}"),
        }
        assert!(sol.trace.steps.len() <= sol.trace.initial_violations + 1);
    }

    #[test]
    fn hysteresis_no_equilibrium_certified() {
        let model = single_bus(-0.13);
        let sol = solve_hysteresis_equilibrium(
            &model,
            &[(
                0,
                HysteresisThresholds {
                    omega_off: 0.04,
                    omega_on: 0.06,
                    magnitude: 0.1,
                },
            )],
            true,
        )
        .unwrap();
        assert_eq!(
            sol.outcome,
            HysteresisOutcome::NoEquilibrium { exhaustive: true }
        );
    }

    #[test]
    fn hysteresis_zero_load_trivial() {
        let model = single_bus(0.0);
        let sol = solve_hysteresis_equilibrium(
            &model,
            &[(
                0,
                HysteresisThresholds {
                    omega_off: 0.04,
                    omega_on: 0.1,
                    magnitude: 0.1,
                },
            )],
            false,
        )
        .unwrap();
        match sol.outcome {
            HysteresisOutcome::Found(p) => {
                assert_eq!(p.omega, 0.0);
                assert_eq!(p.sigma, vec![false]);
            }
            other => panic!("unexpected {other:?}"),
        }
        // No switches performed.
        assert_eq!(sol.trace.initial_violations, 0);
    }

    #[test]
    fn too_many_loads_for_required_certificate() {
        let model = single_bus(0.0);
        let loads: Vec<_> = (0..21)
            .map(|_| {
                (
                    0usize,
                    HysteresisThresholds {
                        omega_off: 0.04,
                        omega_on: 0.1,
                        magnitude: 0.1,
                    },
                )
            })
            .collect();
        assert!(matches!(
            solve_hysteresis_equilibrium(&model, &loads, true),
            Err(EquilibriumError::TooManyLoads { .. })
        ));
    }

    fn design2_fixture(omega_on: Option<[f64; 2]>) -> ControllerSet {
        let mut cfgs = make_design2(
            &[
                Design2Load {
                    bus: 0,
                    cost: 0.001,
                    magnitude: 0.2,
                    omega_on: None,
                },
                Design2Load {
                    bus: 1,
                    cost: 0.004,
                    magnitude: 0.2,
                    omega_on: None,
                },
            ],
            4.0,
        )
        .unwrap();
        if let Some(ov) = omega_on {
            cfgs[0].1.thresholds.omega_on = ov[0];
            cfgs[1].1.thresholds.omega_on = ov[1];
        }
        ControllerSet::Optimal(cfgs)
    }

    #[test]
    fn optimal_unique_equilibrium_high_command() {
        let model = two_bus(-0.25, -0.15); // aggregate -0.4, command 0.4
        let set = design2_fixture(None);
        let points = equilibria_adapted(&model, &set).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].sigma, vec![true, true]);
        assert_abs_diff_eq!(points[0].omega, 0.0, epsilon = 1e-15);
        assert!(points[0].residual(&model).unwrap() < 1e-12);
    }

    #[test]
    fn optimal_two_equilibria_inside_interval() {
        // Command 0.1 lies in the first load's [0.02, 0.12] window. With the
        // default on thresholds only the switched-on candidate survives the
        // flow-set check (0.025 exceeds the first load's on threshold), so
        // widen them to admit both.
        let model = two_bus(-0.06, -0.04);
        let set = design2_fixture(Some([0.03, 0.05]));
        let points = equilibria_adapted(&model, &set).unwrap();
        assert_eq!(points.len(), 2);
        assert_abs_diff_eq!(points[0].omega, 0.025, epsilon = 1e-15);
        assert_eq!(points[0].sigma, vec![false, false]);
        assert_abs_diff_eq!(points[1].omega, -0.025, epsilon = 1e-15);
        assert_eq!(points[1].sigma, vec![true, false]);
        for p in &points {
            assert!(p.residual(&model).unwrap() < 1e-12);
        }
    }

    #[test]
    fn optimal_interval_with_default_thresholds_keeps_consistent_candidate() {
        let model = two_bus(-0.06, -0.04);
        let set = design2_fixture(None);
        let points = equilibria_adapted(&model, &set).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].sigma, vec![true, false]);
        assert_abs_diff_eq!(points[0].omega, -0.025, epsilon = 1e-15);
    }

    #[test]
    fn adapted_all_off() {
        let model = two_bus(-0.01, -0.01); // command 0.02 <= both pc_lower
        let set = ControllerSet::Adapted(vec![
            (
                0,
                crate::control::AdaptedConfig {
                    thresholds: HysteresisThresholds {
                        omega_off: 0.04,
                        omega_on: 0.06,
                        magnitude: 0.1,
                    },
                    pc_lower: 0.08,
                },
            ),
            (
                1,
                crate::control::AdaptedConfig {
                    thresholds: HysteresisThresholds {
                        omega_off: 0.05,
                        omega_on: 0.07,
                        magnitude: 0.1,
                    },
                    pc_lower: 0.1,
                },
            ),
        ]);
        let points = equilibria_adapted(&model, &set).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].sigma, vec![false, false]);
        assert_abs_diff_eq!(points[0].omega, 0.02 / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn full_equilibrium_two_bus_transfer() {
        let model = two_bus(-0.3, -0.1);
        let p = full_equilibrium(&model, 0.0, vec![true, true], vec![0.2, 0.2]).unwrap();
        assert_eq!(p.p_mech, vec![0.0, 0.0]);
        assert_eq!(p.d_unc, vec![0.0, 0.0]);
        assert_abs_diff_eq!(p.flows[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eta[0], 0.1, epsilon = 1e-12);
        assert!(p.residual(&model).unwrap() < 1e-12);
    }

    #[test]
    fn full_equilibrium_single_bus_droop_share() {
        let model = single_bus(-0.2);
        let p = full_equilibrium(&model, 0.1, vec![false], vec![0.0]).unwrap();
        assert_abs_diff_eq!(p.p_mech[0], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.d_unc[0], 0.1, epsilon = 1e-15);
        assert!(p.residual(&model).unwrap() < 1e-12);
    }

    #[test]
    fn static_sliding_equilibrium() {
        let model = single_bus(-0.15);
        let loads = [(
            0usize,
            StaticSwitchConfig {
                omega_upper: 0.05,
                omega_lower: -0.05,
                d_up: 0.2,
                d_down: 0.0,
            },
        )];
        let p = solve_static_equilibrium(&model, &loads).unwrap();
        assert_abs_diff_eq!(p.omega, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(p.d_ctrl[0], 0.05, epsilon = 1e-12);
        assert!(p.residual(&model).unwrap() < 1e-12);
    }

    #[test]
    fn static_interior_equilibrium() {
        let model = single_bus(-0.06);
        let loads = [(
            0usize,
            StaticSwitchConfig {
                omega_upper: 0.05,
                omega_lower: -0.05,
                d_up: 0.2,
                d_down: 0.0,
            },
        )];
        let p = solve_static_equilibrium(&model, &loads).unwrap();
        assert_abs_diff_eq!(p.omega, 0.03, epsilon = 1e-12);
        assert_eq!(p.d_ctrl[0], 0.0);
    }
}
