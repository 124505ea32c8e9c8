//! Simulation and power-allocation toolkit for primary frequency response
//! with on-off controllable loads.
//!
//! The crate models a lossless power network under droop-based primary
//! control and adds switched loads in four flavours: a memoryless static
//! threshold policy (with its convexified sliding behaviour and a sampled
//! variant), plain hysteresis, an adapted hysteresis scheme gated by the
//! aggregate power command, and an optimality-tuned scheme whose thresholds
//! place the steady-state allocation within a provable distance of the
//! mixed-integer dispatch optimum.
//!
//! Modules:
//! - [`grid`]: network model, swing dynamics, linearized power flow.
//! - [`control`]: switching policies, guard/jump logic, threshold synthesis.
//! - [`sim`]: hybrid-time integration with event localization and sliding.
//! - [`diagnostics`]: chattering, limit-cycle, dwell-time and Lyapunov
//!   monitors.
//! - [`equilibrium`]: closed-form and constructive equilibrium solvers.
//! - [`dispatch`]: the mixed-integer allocation problem, its continuous
//!   relaxation, and optimality certificates.
//! - [`consensus`]: distributed power-command estimation.
//!
//! The `parallel` feature (on by default) backs the exhaustive searches with
//! a data-parallel sweep; disable it for a fully sequential build.

// Validation guards use `!(v > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod control;
pub mod diagnostics;
pub mod dispatch;
pub mod equilibrium;
pub mod grid;
pub mod sim;
