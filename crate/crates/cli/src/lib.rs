//! Experiment harness around the `scalegp` library: configuration, the
//! rolling-window pipeline, the scaling benchmark and the self-check suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod pipeline;
pub mod validate;
