//! Scenario document: a single JSON file describing the network, the
//! controller (explicit thresholds or a synthesis directive), disturbances,
//! simulation settings, and optional communication / optimization blocks.
//!
//! Parsing is strict: unknown keys are rejected. Frequency thresholds are
//! radians per second; each has an `_hz` convenience twin converted by 2π
//! (exactly one of the pair may be given).

use anyhow::{Context, Result, anyhow, bail};
use gridfreq_core::consensus::CommGraph;
use gridfreq_core::control::{
    AdaptedConfig, ControllerSet, Design2Load, HysteresisThresholds, OptimalConfig,
    StaticSubMode, StaticSwitchConfig, design1_pc_lower, make_design2,
};
use gridfreq_core::grid::{BusParams, LineParams, NetworkModel};
use gridfreq_core::sim::{Disturbance, SimConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    pub network: NetworkSection,
    pub controller: ControllerSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<DisturbanceEntry>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub communication: Option<CommunicationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub buses: Vec<BusEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<LineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub inertia: f64,
    pub damping: f64,
    pub droop: f64,
    pub governor_tc: f64,
    #[serde(default)]
    pub load: f64,
    #[serde(default = "one")]
    pub gen_cost: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub mode: ControllerMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_sub_mode: Option<StaticSubModeEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loads: Vec<LoadEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisDirective>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    None,
    Static,
    Hysteresis,
    Adapted,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticSubModeEntry {
    IdealFilippov,
    Sampled { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct SynthesisDirective {
    pub rule: SynthesisRule,
    /// On-threshold as a multiple of the synthesized off-threshold
    /// (second rule only; default 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_on_factor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisRule {
    Design1,
    Design2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub bus: usize,
    // Hysteretic thresholds (rad/s, or Hz twins).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_off: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_off_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_on: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_on_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc_upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    // Static thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_upper_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_lower_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_down: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEntry {
    pub time: f64,
    pub bus: usize,
    pub delta_load: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub horizon: f64,
    pub dt: f64,
    pub event_tol: f64,
    pub max_jumps: usize,
    pub record_stride: usize,
    /// Trajectory CSV output period (both sides of every jump are always
    /// included).
    pub output_period: f64,
    /// Limit-cycle detection window; defaults to 20% of the horizon.
    pub limit_cycle_window: Option<f64>,
    /// Settling time for the Lyapunov monitor; defaults to half the horizon.
    pub settling_time: Option<f64>,
    /// Sampling period assumed by the chattering detector; defaults to the
    /// static controller's period or 10 ms.
    pub chattering_period: Option<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let base = SimConfig::default();
        SimulationSection {
            horizon: base.horizon,
            dt: base.dt,
            event_tol: base.event_tol,
            max_jumps: base.max_jumps,
            record_stride: base.record_stride,
            output_period: 0.01,
            limit_cycle_window: None,
            settling_time: None,
            chattering_period: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunicationSection {
    pub links: Vec<LineRef>,
    #[serde(default = "one")]
    pub bus_gain: f64,
    #[serde(default = "one")]
    pub link_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRef {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizationSection {
    pub seed: u64,
    pub generations: usize,
    pub population: usize,
    pub run_genetic: bool,
}

impl Default for OptimizationSection {
    fn default() -> Self {
        OptimizationSection {
            seed: 0,
            generations: 200,
            population: 64,
            run_genetic: true,
        }
    }
}

/// Everything a command needs, resolved from the document.
#[derive(Debug)]
pub struct ResolvedScenario {
    pub model: NetworkModel,
    pub controller: ControllerSet,
    pub disturbances: Vec<Disturbance>,
    pub sim: SimConfig,
    pub simulation: SimulationSection,
    pub comm: Option<CommGraph>,
    pub optimization: Option<OptimizationSection>,
}

/// Strict parse of a scenario document (no resolution).
pub fn parse_scenario(text: &str) -> Result<ScenarioDocument> {
    let doc: ScenarioDocument = serde_json::from_str(text).map_err(|e| {
        anyhow!(
            "parse error at line {}, column {}: {}",
            e.line(),
            e.column(),
            e
        )
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        bail!(
            "unsupported schema_version {} (this tool reads {})",
            doc.schema_version,
            SCHEMA_VERSION
        );
    }
    Ok(doc)
}

fn resolve_freq(
    rad: Option<f64>,
    hz: Option<f64>,
    field: &str,
    bus: usize,
) -> Result<Option<f64>> {
    match (rad, hz) {
        (Some(_), Some(_)) => bail!(
            "validation error: load at bus {bus} gives both `{field}` and `{field}_hz`"
        ),
        (Some(v), None) => Ok(Some(v)),
        (None, Some(v)) => Ok(Some(v * TAU)),
        (None, None) => Ok(None),
    }
}

fn require(value: Option<f64>, field: &str, bus: usize) -> Result<f64> {
    value.ok_or_else(|| anyhow!("validation error: load at bus {bus} is missing `{field}`"))
}

/// Validates and resolves the document into model objects, running any
/// synthesis directive.
pub fn resolve(doc: &ScenarioDocument) -> Result<ResolvedScenario> {
    let buses: Vec<BusParams> = doc
        .network
        .buses
        .iter()
        .map(|b| BusParams {
            inertia: b.inertia,
            damping: b.damping,
            droop: b.droop,
            governor_tc: b.governor_tc,
            p_load: b.load,
            gen_cost: b.gen_cost,
        })
        .collect();
    let lines: Vec<LineParams> = doc
        .network
        .lines
        .iter()
        .map(|l| LineParams {
            from: l.from,
            to: l.to,
            susceptance: l.susceptance,
        })
        .collect();
    let model = NetworkModel::new(buses, lines)
        .map_err(|e| anyhow!("validation error in network: {e}"))?;
    let n_buses = model.n_buses();
    for entry in &doc.controller.loads {
        if entry.bus >= n_buses {
            bail!(
                "validation error: controller load references bus {} but the network has {} buses",
                entry.bus,
                n_buses
            );
        }
    }
    for d in &doc.disturbances {
        if d.bus >= n_buses {
            bail!(
                "validation error: disturbance references bus {} but the network has {} buses",
                d.bus,
                n_buses
            );
        }
        if d.time < 0.0 {
            bail!("validation error: disturbance time {} is negative", d.time);
        }
    }

    let controller = build_controller(doc, &model)?;
    controller
        .validate()
        .map_err(|e| anyhow!("validation error: {e}"))?;

    let s = &doc.simulation;
    let sim = SimConfig {
        horizon: s.horizon,
        dt: s.dt,
        event_tol: s.event_tol,
        max_jumps: s.max_jumps,
        record_stride: s.record_stride,
    };
    sim.validate().map_err(|e| anyhow!("validation error: {e}"))?;
    if !(s.output_period > 0.0) {
        bail!("validation error: output_period must be > 0");
    }

    let comm = match &doc.communication {
        None => None,
        Some(c) => {
            for l in &c.links {
                if l.from >= n_buses || l.to >= n_buses {
                    bail!(
                        "validation error: communication link ({}, {}) leaves the network",
                        l.from,
                        l.to
                    );
                }
            }
            let links: Vec<(usize, usize)> = c.links.iter().map(|l| (l.from, l.to)).collect();
            let n_links = links.len();
            Some(
                CommGraph::new(
                    n_buses,
                    links,
                    vec![c.bus_gain; n_buses],
                    vec![c.link_gain; n_links],
                )
                .map_err(|e| anyhow!("validation error in communication graph: {e}"))?,
            )
        }
    };

    Ok(ResolvedScenario {
        model,
        controller,
        disturbances: doc
            .disturbances
            .iter()
            .map(|d| Disturbance {
                time: d.time,
                bus: d.bus,
                delta_load: d.delta_load,
            })
            .collect(),
        sim,
        simulation: *s,
        comm,
        optimization: doc.optimization,
    })
}

fn build_controller(doc: &ScenarioDocument, model: &NetworkModel) -> Result<ControllerSet> {
    let section = &doc.controller;
    let total = model.aggregate_response();
    match section.mode {
        ControllerMode::None => {
            if !section.loads.is_empty() {
                bail!("validation error: mode `none` must not list loads");
            }
            Ok(ControllerSet::Uncontrolled)
        }
        ControllerMode::Static => {
            let sub = match section.static_sub_mode {
                Some(StaticSubModeEntry::IdealFilippov) => StaticSubMode::IdealFilippov,
                Some(StaticSubModeEntry::Sampled { period }) => StaticSubMode::Sampled { period },
                None => StaticSubMode::Sampled { period: 0.01 },
            };
            let mut loads = Vec::new();
            for e in &section.loads {
                let upper = require(
                    resolve_freq(e.omega_upper, e.omega_upper_hz, "omega_upper", e.bus)?,
                    "omega_upper",
                    e.bus,
                )?;
                let lower = require(
                    resolve_freq(e.omega_lower, e.omega_lower_hz, "omega_lower", e.bus)?,
                    "omega_lower",
                    e.bus,
                )?;
                loads.push((
                    e.bus,
                    StaticSwitchConfig {
                        omega_upper: upper,
                        omega_lower: lower,
                        d_up: e.d_up.unwrap_or(0.0),
                        d_down: e.d_down.unwrap_or(0.0),
                    },
                ));
            }
            Ok(ControllerSet::Static { sub_mode: sub, loads })
        }
        ControllerMode::Hysteresis => {
            let mut loads = Vec::new();
            for e in &section.loads {
                loads.push((e.bus, hysteresis_thresholds(e)?));
            }
            Ok(ControllerSet::Hysteresis(loads))
        }
        ControllerMode::Adapted => {
            let synth1 = matches!(
                section.synthesis,
                Some(SynthesisDirective {
                    rule: SynthesisRule::Design1,
                    ..
                })
            );
            let mut loads = Vec::new();
            for e in &section.loads {
                let thresholds = hysteresis_thresholds(e)?;
                let pc_lower = if synth1 {
                    if e.pc_lower.is_some() {
                        bail!(
                            "validation error: load at bus {} gives pc_lower but synthesis rule 1 computes it",
                            e.bus
                        );
                    }
                    design1_pc_lower(&[thresholds.omega_off], total)
                        .map_err(|err| anyhow!("validation error: {err}"))?[0]
                } else {
                    require(e.pc_lower, "pc_lower", e.bus)?
                };
                loads.push((
                    e.bus,
                    AdaptedConfig {
                        thresholds,
                        pc_lower,
                    },
                ));
            }
            Ok(ControllerSet::Adapted(loads))
        }
        ControllerMode::Optimal => {
            let synth2 = match section.synthesis {
                Some(SynthesisDirective {
                    rule: SynthesisRule::Design2,
                    omega_on_factor,
                }) => Some(omega_on_factor.unwrap_or(2.0)),
                Some(SynthesisDirective {
                    rule: SynthesisRule::Design1,
                    ..
                }) => bail!("validation error: synthesis rule 1 does not apply to optimal mode"),
                None => None,
            };
            if let Some(factor) = synth2 {
                if !(factor > 1.0) {
                    bail!("validation error: omega_on_factor must exceed 1");
                }
                let mut specs = Vec::new();
                for e in &section.loads {
                    if e.pc_lower.is_some() || e.pc_upper.is_some() || e.omega_off.is_some() {
                        bail!(
                            "validation error: load at bus {} gives thresholds but synthesis rule 2 computes them",
                            e.bus
                        );
                    }
                    let cost = require(e.cost, "cost", e.bus)?;
                    let magnitude = require(e.magnitude, "magnitude", e.bus)?;
                    let omega_on = resolve_freq(e.omega_on, e.omega_on_hz, "omega_on", e.bus)?;
                    let omega_on = match omega_on {
                        Some(v) => Some(v),
                        None if factor != 2.0 => Some(factor * cost / magnitude),
                        None => None,
                    };
                    specs.push(Design2Load {
                        bus: e.bus,
                        cost,
                        magnitude,
                        omega_on,
                    });
                }
                let cfgs = make_design2(&specs, total)
                    .map_err(|e| anyhow!("validation error: {e}"))?;
                Ok(ControllerSet::Optimal(cfgs))
            } else {
                let mut loads = Vec::new();
                for e in &section.loads {
                    let thresholds = hysteresis_thresholds(e)?;
                    loads.push((
                        e.bus,
                        OptimalConfig {
                            thresholds,
                            pc_lower: require(e.pc_lower, "pc_lower", e.bus)?,
                            pc_upper: require(e.pc_upper, "pc_upper", e.bus)?,
                            cost: require(e.cost, "cost", e.bus)?,
                        },
                    ));
                }
                Ok(ControllerSet::Optimal(loads))
            }
        }
    }
}

fn hysteresis_thresholds(e: &LoadEntry) -> Result<HysteresisThresholds> {
    let omega_off = require(
        resolve_freq(e.omega_off, e.omega_off_hz, "omega_off", e.bus)?,
        "omega_off",
        e.bus,
    )?;
    let omega_on = require(
        resolve_freq(e.omega_on, e.omega_on_hz, "omega_on", e.bus)?,
        "omega_on",
        e.bus,
    )?;
    let t = HysteresisThresholds {
        omega_off,
        omega_on,
        magnitude: require(e.magnitude, "magnitude", e.bus)?,
    };
    t.validate(e.bus)
        .with_context(|| "hysteretic thresholds must satisfy omega_on > omega_off > 0")?;
    Ok(t)
}
