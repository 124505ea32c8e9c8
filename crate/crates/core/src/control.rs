//! On-off load control policies and threshold synthesis.
//!
//! Four policies are supported:
//! - **Static**: demand is a memoryless three-level function of local
//!   frequency, with a set-valued relaxation at the thresholds.
//! - **Hysteresis**: a binary switch with distinct on/off frequency
//!   thresholds (on above `omega_on`, off below `omega_off`).
//! - **Adapted**: hysteresis gated by the power command; switching off is
//!   prohibited while the power command exceeds the load's lower command
//!   threshold.
//! - **Optimal**: adapted plus an upper command threshold that forces the
//!   load on when the power command is large, placing the steady-state
//!   allocation near the optimum of the mixed-integer dispatch problem.
//!
//! Threshold resolution at exact equality is jump-on-reaching: a jump fires
//! when a threshold is reached or crossed, and only if it changes the switch
//! state, so grazing contact never re-fires.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid parameter `{field}` for load at bus {bus}: {value} (must be {requirement})")]
    InvalidParameter {
        field: &'static str,
        bus: usize,
        value: f64,
        requirement: &'static str,
    },
    #[error("aggregate response must be positive, got {0}")]
    NonpositiveAggregate(f64),
}

/// Static (memoryless) switch configuration for one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticSwitchConfig {
    /// Upper frequency threshold ω̄ (rad/s), > 0.
    pub omega_upper: f64,
    /// Lower frequency threshold ω̲ (rad/s), < 0.
    pub omega_lower: f64,
    /// Demand when above the upper threshold (p.u.), ≥ 0.
    pub d_up: f64,
    /// Demand when below the lower threshold (p.u.), ≤ 0.
    pub d_down: f64,
}

impl StaticSwitchConfig {
    pub fn validate(&self, bus: usize) -> Result<(), DesignError> {
        if !(self.omega_upper > 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "omega_upper",
                bus,
                value: self.omega_upper,
                requirement: "> 0",
            });
        }
        if !(self.omega_lower < 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "omega_lower",
                bus,
                value: self.omega_lower,
                requirement: "< 0",
            });
        }
        if !(self.d_up >= 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "d_up",
                bus,
                value: self.d_up,
                requirement: ">= 0",
            });
        }
        if !(self.d_down <= 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "d_down",
                bus,
                value: self.d_down,
                requirement: "<= 0",
            });
        }
        Ok(())
    }

    /// Single-valued demand: `d_up` above the upper threshold, `d_down` at or
    /// below the lower one, zero in between (upper threshold inclusive).
    pub fn demand(&self, omega: f64) -> f64 {
        if omega > self.omega_upper {
            self.d_up
        } else if omega > self.omega_lower {
            0.0
        } else {
            self.d_down
        }
    }

    /// Set-valued (convexified) demand: the closed interval `[0, d_up]` at the
    /// upper threshold, `[d_down, 0]` at the lower one, a singleton elsewhere.
    pub fn demand_interval(&self, omega: f64) -> (f64, f64) {
        if omega == self.omega_upper {
            (0.0, self.d_up)
        } else if omega == self.omega_lower {
            (self.d_down, 0.0)
        } else {
            let d = self.demand(omega);
            (d, d)
        }
    }
}

/// Frequency thresholds shared by all hysteretic policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HysteresisThresholds {
    /// Switch-off threshold ω⁰ (rad/s); `omega_on > omega_off > 0`.
    pub omega_off: f64,
    /// Switch-on threshold ω¹ (rad/s).
    pub omega_on: f64,
    /// On-state demand magnitude d̄ (p.u.), > 0.
    pub magnitude: f64,
}

impl HysteresisThresholds {
    pub fn validate(&self, bus: usize) -> Result<(), DesignError> {
        if !(self.omega_off > 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "omega_off",
                bus,
                value: self.omega_off,
                requirement: "> 0",
            });
        }
        if !(self.omega_on > self.omega_off) {
            return Err(DesignError::InvalidParameter {
                field: "omega_on",
                bus,
                value: self.omega_on,
                requirement: "> omega_off",
            });
        }
        if !(self.magnitude > 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "magnitude",
                bus,
                value: self.magnitude,
                requirement: "> 0",
            });
        }
        Ok(())
    }
}

/// Adapted-scheme configuration: hysteresis plus a lower power-command
/// threshold below which switching off becomes permitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptedConfig {
    pub thresholds: HysteresisThresholds,
    /// Lower power-command threshold p̲ᶜ (p.u.).
    pub pc_lower: f64,
}

/// Optimality-tuned configuration: adds an upper power-command threshold and
/// the load's switching disutility cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalConfig {
    pub thresholds: HysteresisThresholds,
    /// Lower power-command threshold p̲ᶜ (p.u.).
    pub pc_lower: f64,
    /// Upper power-command threshold p̄ᶜ (p.u.), > `pc_lower`.
    pub pc_upper: f64,
    /// Cost incurred when the load is on, > 0.
    pub cost: f64,
}

impl OptimalConfig {
    pub fn validate(&self, bus: usize) -> Result<(), DesignError> {
        self.thresholds.validate(bus)?;
        if !(self.pc_upper > self.pc_lower) {
            return Err(DesignError::InvalidParameter {
                field: "pc_upper",
                bus,
                value: self.pc_upper,
                requirement: "> pc_lower",
            });
        }
        if !(self.cost > 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "cost",
                bus,
                value: self.cost,
                requirement: "> 0",
            });
        }
        Ok(())
    }
}

/// One load under a hysteretic policy; the variant picks the guard logic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LoadControl {
    Hysteresis(HysteresisThresholds),
    Adapted(AdaptedConfig),
    Optimal(OptimalConfig),
}

impl LoadControl {
    pub fn thresholds(&self) -> &HysteresisThresholds {
        match self {
            LoadControl::Hysteresis(t) => t,
            LoadControl::Adapted(c) => &c.thresholds,
            LoadControl::Optimal(c) => &c.thresholds,
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.thresholds().magnitude
    }

    /// Post-jump switch state for the current `(omega, power_cmd, on)`.
    ///
    /// Applying this twice with unchanged inputs never changes the state
    /// again; the discrete update maps into the flow set.
    pub fn jump_update(&self, omega: f64, power_cmd: f64, on: bool) -> bool {
        let t = self.thresholds();
        match self {
            LoadControl::Hysteresis(_) => {
                if omega >= t.omega_on {
                    true
                } else if omega <= t.omega_off {
                    false
                } else {
                    on
                }
            }
            LoadControl::Adapted(c) => {
                if omega >= t.omega_on {
                    true
                } else if omega <= t.omega_off && power_cmd <= c.pc_lower {
                    false
                } else {
                    on
                }
            }
            LoadControl::Optimal(c) => {
                if omega >= t.omega_on || power_cmd >= c.pc_upper {
                    true
                } else if omega <= t.omega_off && power_cmd <= c.pc_lower {
                    false
                } else {
                    on
                }
            }
        }
    }

    /// Whether `(omega, power_cmd, on)` lies in the discrete-update set,
    /// i.e. the jump update would change the switch state.
    pub fn in_jump_set(&self, omega: f64, power_cmd: f64, on: bool) -> bool {
        self.jump_update(omega, power_cmd, on) != on
    }

    /// Whether the switch state is admissible for flowing at
    /// `(omega, power_cmd)`.
    pub fn in_flow_set(&self, omega: f64, power_cmd: f64, on: bool) -> bool {
        let t = self.thresholds();
        match self {
            LoadControl::Hysteresis(_) => {
                if on {
                    omega >= t.omega_off
                } else {
                    omega <= t.omega_on
                }
            }
            LoadControl::Adapted(c) => {
                if on {
                    omega >= t.omega_off || power_cmd >= c.pc_lower
                } else {
                    omega <= t.omega_on
                }
            }
            LoadControl::Optimal(c) => {
                if on {
                    omega >= t.omega_off || power_cmd >= c.pc_lower
                } else {
                    omega <= t.omega_on && power_cmd <= c.pc_upper
                }
            }
        }
    }
}

/// Sub-mode of the static policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StaticSubMode {
    /// Convexified dynamics with sliding on a single threshold surface.
    IdealFilippov,
    /// Policy evaluated every `period` seconds; demand held in between.
    Sampled { period: f64 },
}

impl StaticSubMode {
    pub fn validate(&self) -> Result<(), DesignError> {
        if let StaticSubMode::Sampled { period } = self {
            if !(*period > 0.0) {
                return Err(DesignError::InvalidParameter {
                    field: "period",
                    bus: usize::MAX,
                    value: *period,
                    requirement: "> 0",
                });
            }
        }
        Ok(())
    }
}

/// The full controller assignment for a scenario: a mode plus per-bus
/// configurations (buses without an entry are uncontrolled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControllerSet {
    /// No controllable demand anywhere.
    Uncontrolled,
    Static {
        sub_mode: StaticSubMode,
        loads: Vec<(usize, StaticSwitchConfig)>,
    },
    Hysteresis(Vec<(usize, HysteresisThresholds)>),
    Adapted(Vec<(usize, AdaptedConfig)>),
    Optimal(Vec<(usize, OptimalConfig)>),
}

impl ControllerSet {
    pub fn n_loads(&self) -> usize {
        match self {
            ControllerSet::Uncontrolled => 0,
            ControllerSet::Static { loads, .. } => loads.len(),
            ControllerSet::Hysteresis(l) => l.len(),
            ControllerSet::Adapted(l) => l.len(),
            ControllerSet::Optimal(l) => l.len(),
        }
    }

    pub fn load_buses(&self) -> Vec<usize> {
        match self {
            ControllerSet::Uncontrolled => vec![],
            ControllerSet::Static { loads, .. } => loads.iter().map(|(b, _)| *b).collect(),
            ControllerSet::Hysteresis(l) => l.iter().map(|(b, _)| *b).collect(),
            ControllerSet::Adapted(l) => l.iter().map(|(b, _)| *b).collect(),
            ControllerSet::Optimal(l) => l.iter().map(|(b, _)| *b).collect(),
        }
    }

    /// Hysteretic per-load controls in load order, if this is a hysteretic
    /// mode.
    pub fn switched_loads(&self) -> Option<Vec<(usize, LoadControl)>> {
        match self {
            ControllerSet::Hysteresis(l) => Some(
                l.iter()
                    .map(|(b, c)| (*b, LoadControl::Hysteresis(*c)))
                    .collect(),
            ),
            ControllerSet::Adapted(l) => Some(
                l.iter()
                    .map(|(b, c)| (*b, LoadControl::Adapted(*c)))
                    .collect(),
            ),
            ControllerSet::Optimal(l) => Some(
                l.iter()
                    .map(|(b, c)| (*b, LoadControl::Optimal(*c)))
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        match self {
            ControllerSet::Uncontrolled => Ok(()),
            ControllerSet::Static { sub_mode, loads } => {
                sub_mode.validate()?;
                for (bus, cfg) in loads {
                    cfg.validate(*bus)?;
                }
                Ok(())
            }
            ControllerSet::Hysteresis(loads) => {
                for (bus, cfg) in loads {
                    cfg.validate(*bus)?;
                }
                Ok(())
            }
            ControllerSet::Adapted(loads) => {
                for (bus, cfg) in loads {
                    cfg.thresholds.validate(*bus)?;
                }
                Ok(())
            }
            ControllerSet::Optimal(loads) => {
                for (bus, cfg) in loads {
                    cfg.validate(*bus)?;
                }
                Ok(())
            }
        }
    }
}

/// Boundary choice for the first design rule: p̲ᶜ = 𝒟·ω⁰ per load.
pub fn design1_pc_lower(omega_off: &[f64], aggregate_response: f64) -> Result<Vec<f64>, DesignError> {
    if !(aggregate_response > 0.0) {
        return Err(DesignError::NonpositiveAggregate(aggregate_response));
    }
    for (bus, &w) in omega_off.iter().enumerate() {
        if !(w > 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "omega_off",
                bus,
                value: w,
                requirement: "> 0",
            });
        }
    }
    Ok(omega_off.iter().map(|w| aggregate_response * w).collect())
}

/// Whether a lower command threshold satisfies the first design rule.
pub fn design1_accepts(pc_lower: f64, omega_off: f64, aggregate_response: f64) -> bool {
    pc_lower <= aggregate_response * omega_off
}

/// Input to the second design rule: one on-off load with its disutility cost
/// and magnitude, plus an optional override of the on threshold (default is
/// twice the computed off threshold).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Design2Load {
    pub bus: usize,
    pub cost: f64,
    pub magnitude: f64,
    pub omega_on: Option<f64>,
}

/// Synthesizes optimality-tuned thresholds from load costs and magnitudes.
///
/// Loads are ranked by ascending cost per unit demand (ties by ascending bus
/// index). The off threshold of each load equals its cost per unit; lower
/// command thresholds stack the magnitudes of all cheaper loads on top of the
/// base 𝒟·ω⁰; the upper command threshold sits at the midpoint of its
/// admissible open interval. Results are returned in the input order.
pub fn make_design2(
    loads: &[Design2Load],
    aggregate_response: f64,
) -> Result<Vec<(usize, OptimalConfig)>, DesignError> {
    if !(aggregate_response > 0.0) {
        return Err(DesignError::NonpositiveAggregate(aggregate_response));
    }
    for l in loads {
        if !(l.cost > 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "cost",
                bus: l.bus,
                value: l.cost,
                requirement: "> 0",
            });
        }
        if !(l.magnitude > 0.0) {
            return Err(DesignError::InvalidParameter {
                field: "magnitude",
                bus: l.bus,
                value: l.magnitude,
                requirement: "> 0",
            });
        }
    }
    if loads.is_empty() {
        return Ok(vec![]);
    }
    let mut order: Vec<usize> = (0..loads.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = loads[a].cost / loads[a].magnitude;
        let rb = loads[b].cost / loads[b].magnitude;
        ra.partial_cmp(&rb)
            .unwrap()
            .then(loads[a].bus.cmp(&loads[b].bus))
    });
    let half_gap = loads
        .iter()
        .map(|l| l.magnitude)
        .fold(f64::INFINITY, f64::min)
        / 2.0;
    let mut out = vec![None; loads.len()];
    let mut stacked = 0.0;
    for &idx in &order {
        let l = &loads[idx];
        let omega_off = l.cost / l.magnitude;
        let omega_on = l.omega_on.unwrap_or(2.0 * omega_off);
        let pc_lower = aggregate_response * omega_off + stacked;
        let cfg = OptimalConfig {
            thresholds: HysteresisThresholds {
                omega_off,
                omega_on,
                magnitude: l.magnitude,
            },
            pc_lower,
            pc_upper: pc_lower + half_gap,
            cost: l.cost,
        };
        cfg.validate(l.bus)?;
        out[idx] = Some((l.bus, cfg));
        stacked += l.magnitude;
    }
    Ok(out.into_iter().map(|c| c.unwrap()).collect())
}

/// One design-condition check for one load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub bus: usize,
    pub condition: String,
    pub pass: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Report from [`validate_design`]: one row per applicable condition per load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub checks: Vec<ConditionCheck>,
    pub all_pass: bool,
}

impl DesignReport {
    fn from_checks(checks: Vec<ConditionCheck>) -> Self {
        // The hysteresis-width check on plain hysteresis loads is
        // informational: equilibria may fail to exist without it, but it is
        // not a design rule the configuration promises.
        let all_pass = checks
            .iter()
            .filter(|c| c.condition != "hysteresis-width (informational)")
            .all(|c| c.pass);
        DesignReport { checks, all_pass }
    }
}

/// Checks the applicable design conditions for a controller set.
///
/// - Adapted mode: p̲ᶜ ≤ 𝒟·ω⁰ per load.
/// - Optimal mode: the ranked threshold ladder (off threshold equals cost
///   per unit, command thresholds stack cheaper magnitudes, upper threshold
///   strictly inside its admissible interval).
/// - Hysteresis mode: the equilibrium-existence width
///   ω¹ − ω⁰ ≥ d̄/𝒟, reported as informational.
pub fn validate_design(set: &ControllerSet, aggregate_response: f64) -> DesignReport {
    let d_total = aggregate_response;
    let mut checks = Vec::new();
    match set {
        ControllerSet::Hysteresis(loads) => {
            for (bus, t) in loads {
                let lhs = t.omega_on - t.omega_off;
                let rhs = t.magnitude / d_total;
                checks.push(ConditionCheck {
                    bus: *bus,
                    condition: "hysteresis-width (informational)".into(),
                    pass: lhs >= rhs,
                    lhs,
                    rhs,
                });
            }
        }
        ControllerSet::Adapted(loads) => {
            for (bus, c) in loads {
                let rhs = d_total * c.thresholds.omega_off;
                checks.push(ConditionCheck {
                    bus: *bus,
                    condition: "pc_lower <= D*omega_off".into(),
                    pass: c.pc_lower <= rhs,
                    lhs: c.pc_lower,
                    rhs,
                });
            }
        }
        ControllerSet::Optimal(loads) => {
            let specs: Vec<Design2Load> = loads
                .iter()
                .map(|(bus, c)| Design2Load {
                    bus: *bus,
                    cost: c.cost,
                    magnitude: c.thresholds.magnitude,
                    omega_on: Some(c.thresholds.omega_on),
                })
                .collect();
            let min_magnitude = loads
                .iter()
                .map(|(_, c)| c.thresholds.magnitude)
                .fold(f64::INFINITY, f64::min);
            match make_design2(&specs, d_total) {
                Ok(reference) => {
                    for ((bus, c), (_, r)) in loads.iter().zip(&reference) {
                        checks.push(ConditionCheck {
                            bus: *bus,
                            condition: "omega_off == cost/magnitude".into(),
                            pass: c.thresholds.omega_off == r.thresholds.omega_off,
                            lhs: c.thresholds.omega_off,
                            rhs: r.thresholds.omega_off,
                        });
                        checks.push(ConditionCheck {
                            bus: *bus,
                            condition: "pc_lower matches ranked ladder".into(),
                            pass: c.pc_lower == r.pc_lower,
                            lhs: c.pc_lower,
                            rhs: r.pc_lower,
                        });
                        // pc_upper must lie strictly inside (pc_lower, pc_lower + min magnitude).
                        let upper_bound = c.pc_lower + min_magnitude;
                        checks.push(ConditionCheck {
                            bus: *bus,
                            condition: "pc_upper in (pc_lower, pc_lower + min magnitude)".into(),
                            pass: c.pc_upper > c.pc_lower && c.pc_upper < upper_bound,
                            lhs: c.pc_upper,
                            rhs: upper_bound,
                        });
                    }
                }
                Err(e) => {
                    checks.push(ConditionCheck {
                        bus: usize::MAX,
                        condition: format!("design rule inputs invalid: {e}"),
                        pass: false,
                        lhs: f64::NAN,
                        rhs: f64::NAN,
                    });
                }
            }
        }
        _ => {}
    }
    DesignReport::from_checks(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyst(omega_off: f64, omega_on: f64, magnitude: f64) -> LoadControl {
        LoadControl::Hysteresis(HysteresisThresholds {
            omega_off,
            omega_on,
            magnitude,
        })
    }

    #[test]
    fn static_demand_branches() {
        let cfg = StaticSwitchConfig {
            omega_upper: 0.05,
            omega_lower: -0.05,
            d_up: 0.2,
            d_down: -0.1,
        };
        assert_eq!(cfg.demand(0.0), 0.0);
        assert_eq!(cfg.demand(0.05), 0.0); // upper threshold inclusive in middle branch
        assert_eq!(cfg.demand(0.0501), 0.2);
        assert_eq!(cfg.demand(-0.06), -0.1);
        assert_eq!(cfg.demand(-0.05), -0.1); // lower threshold belongs to the down branch
        assert_eq!(cfg.demand_interval(0.05), (0.0, 0.2));
        assert_eq!(cfg.demand_interval(-0.05), (-0.1, 0.0));
        assert_eq!(cfg.demand_interval(0.01), (0.0, 0.0));
    }

    #[test]
    fn interval_contains_demand() {
        let cfg = StaticSwitchConfig {
            omega_upper: 0.05,
            omega_lower: -0.03,
            d_up: 0.2,
            d_down: -0.1,
        };
        for i in -200..200 {
            let w = i as f64 * 1e-3;
            let d = cfg.demand(w);
            let (lo, hi) = cfg.demand_interval(w);
            assert!(lo <= d && d <= hi, "omega={w}");
        }
        for w in [cfg.omega_upper, cfg.omega_lower] {
            let d = cfg.demand(w);
            let (lo, hi) = cfg.demand_interval(w);
            assert!(lo <= d && d <= hi);
        }
    }

    #[test]
    fn hysteresis_jump_rules() {
        let c = hyst(0.04, 0.06, 0.1);
        assert!(c.in_jump_set(0.061, 0.0, false));
        assert!(c.jump_update(0.061, 0.0, false));
        assert!(!c.in_jump_set(0.05, 0.0, false)); // inside the band, keeps state
        assert!(!c.in_jump_set(0.05, 0.0, true));
        assert!(c.in_jump_set(0.04, 0.0, true)); // off at the threshold
        assert!(!c.jump_update(0.04, 0.0, true));
        // Reaching the on threshold exactly fires.
        assert!(c.in_jump_set(0.06, 0.0, false));
    }

    #[test]
    fn adapted_switch_off_gated_by_command() {
        let c = LoadControl::Adapted(AdaptedConfig {
            thresholds: HysteresisThresholds {
                omega_off: 0.04,
                omega_on: 0.06,
                magnitude: 0.1,
            },
            pc_lower: 0.08,
        });
        // Below the frequency threshold but the command is high: no jump.
        assert!(!c.in_jump_set(0.02, 0.13, true));
        assert!(c.in_flow_set(0.02, 0.13, true));
        // Command released: switching off fires.
        assert!(c.in_jump_set(0.02, 0.05, true));
        assert!(!c.jump_update(0.02, 0.05, true));
    }

    #[test]
    fn optimal_command_forces_on() {
        let c = LoadControl::Optimal(OptimalConfig {
            thresholds: HysteresisThresholds {
                omega_off: 0.005,
                omega_on: 0.01,
                magnitude: 0.2,
            },
            pc_lower: 0.02,
            pc_upper: 0.12,
            cost: 0.001,
        });
        assert!(c.in_jump_set(0.0, 0.13, false));
        assert!(c.jump_update(0.0, 0.13, false));
        assert!(!c.in_flow_set(0.0, 0.13, false));
        // At the upper threshold exactly, still fires.
        assert!(c.in_jump_set(0.0, 0.12, false));
    }

    #[test]
    fn jump_update_idempotent_and_sets_cover() {
        let controls = [
            hyst(0.04, 0.06, 0.1),
            LoadControl::Adapted(AdaptedConfig {
                thresholds: HysteresisThresholds {
                    omega_off: 0.04,
                    omega_on: 0.06,
                    magnitude: 0.1,
                },
                pc_lower: 0.08,
            }),
            LoadControl::Optimal(OptimalConfig {
                thresholds: HysteresisThresholds {
                    omega_off: 0.04,
                    omega_on: 0.06,
                    magnitude: 0.1,
                },
                pc_lower: 0.08,
                pc_upper: 0.13,
                cost: 0.004,
            }),
        ];
        let omegas = [-0.1, 0.0, 0.04, 0.05, 0.06, 0.07];
        let cmds = [-1.0, 0.0, 0.08, 0.1, 0.13, 0.2];
        for c in &controls {
            for &w in &omegas {
                for &pc in &cmds {
                    for on in [false, true] {
                        // Flow set and jump set cover the whole state space.
                        assert!(
                            c.in_flow_set(w, pc, on) || c.in_jump_set(w, pc, on),
                            "gap at omega={w}, pc={pc}, on={on} for {c:?}"
                        );
                        // One jump suffices; a second never changes the state.
                        let next = c.jump_update(w, pc, on);
                        assert_eq!(next, c.jump_update(w, pc, next));
                        // Jumps land in the flow set.
                        if c.in_jump_set(w, pc, on) {
                            assert!(c.in_flow_set(w, pc, next));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn design1_boundary_and_validator() {
        let pc = design1_pc_lower(&[0.02], 4.0).unwrap();
        assert_eq!(pc, vec![0.08]);
        assert!(!design1_accepts(0.09, 0.02, 4.0));
        assert!(design1_accepts(0.0, 0.02, 4.0));
    }

    #[test]
    fn design2_two_load_example() {
        let cfgs = make_design2(
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
        assert_eq!(cfgs[0].1.thresholds.omega_off, 0.005);
        assert_eq!(cfgs[1].1.thresholds.omega_off, 0.02);
        assert_eq!(cfgs[0].1.pc_lower, 0.02);
        assert!((cfgs[1].1.pc_lower - 0.28).abs() < 1e-15);
        assert!((cfgs[0].1.pc_upper - 0.12).abs() < 1e-15);
        assert!((cfgs[1].1.pc_upper - 0.38).abs() < 1e-15);
    }

    #[test]
    fn design2_single_load() {
        let cfgs = make_design2(
            &[Design2Load {
                bus: 0,
                cost: 0.002,
                magnitude: 0.1,
                omega_on: None,
            }],
            2.0,
        )
        .unwrap();
        assert_eq!(cfgs[0].1.thresholds.omega_off, 0.02);
        assert_eq!(cfgs[0].1.pc_lower, 0.04);
    }

    #[test]
    fn design2_tie_break_by_bus_index() {
        let cfgs = make_design2(
            &[
                Design2Load {
                    bus: 5,
                    cost: 0.002,
                    magnitude: 0.1,
                    omega_on: None,
                },
                Design2Load {
                    bus: 3,
                    cost: 0.002,
                    magnitude: 0.1,
                    omega_on: None,
                },
            ],
            2.0,
        )
        .unwrap();
        // Bus 3 ranks first: its ladder has no stacked magnitude.
        let cfg3 = cfgs.iter().find(|(b, _)| *b == 3).unwrap().1;
        let cfg5 = cfgs.iter().find(|(b, _)| *b == 5).unwrap().1;
        assert!(cfg3.pc_lower < cfg5.pc_lower);
        assert_eq!(cfg5.pc_lower - cfg3.pc_lower, 0.1);
    }

    #[test]
    fn design2_intervals_disjoint() {
        let cfgs = make_design2(
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
                Design2Load {
                    bus: 2,
                    cost: 0.0005,
                    magnitude: 0.05,
                    omega_on: None,
                },
            ],
            4.0,
        )
        .unwrap();
        let mut intervals: Vec<(f64, f64)> =
            cfgs.iter().map(|(_, c)| (c.pc_lower, c.pc_upper)).collect();
        intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in intervals.windows(2) {
            assert!(w[0].1 < w[1].0, "intervals overlap: {w:?}");
        }
    }

    #[test]
    fn validate_design_accepts_own_synthesis() {
        let cfgs = make_design2(
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
        let report = validate_design(&ControllerSet::Optimal(cfgs), 4.0);
        assert!(report.all_pass, "{:?}", report.checks);
    }

    #[test]
    fn validate_design_rejects_degenerate_upper() {
        let mut cfgs = make_design2(
            &[Design2Load {
                bus: 0,
                cost: 0.001,
                magnitude: 0.2,
                omega_on: None,
            }],
            4.0,
        )
        .unwrap();
        cfgs[0].1.pc_upper = cfgs[0].1.pc_lower;
        let report = validate_design(&ControllerSet::Optimal(cfgs), 4.0);
        assert!(!report.all_pass);
    }

    #[test]
    fn hysteresis_width_check_informational() {
        let set = ControllerSet::Hysteresis(vec![(
            0,
            HysteresisThresholds {
                omega_off: 0.04,
                omega_on: 0.06,
                magnitude: 0.25,
            },
        )]);
        // Width 0.02 < 0.25/5 = 0.05: the informational check fails but the
        // report still passes overall.
        let report = validate_design(&set, 5.0);
        assert!(!report.checks[0].pass);
        assert!(report.all_pass);
    }
}
