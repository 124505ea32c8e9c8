//! Library surface of the scenario runner: document schema, resolution,
//! report assembly and artifact writers. The binary is a thin wrapper.

// Validation guards use `!(v > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod output;
pub mod report;
pub mod scenario;
