//! Optimal modulo scheduling for VLIW processors.

pub mod baseline;
pub mod bounds;
pub mod cli;
pub mod encoder;
pub mod explain;
pub mod fixtures;
pub mod loop_ir;
pub mod machine;
pub mod schedule;
pub mod search;
pub mod solver;
pub mod testgen;
