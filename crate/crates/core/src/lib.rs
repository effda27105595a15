//! Density-based topology optimization of linearly elastic 2-D structures:
//! minimum-compliance design and compliant-mechanism synthesis on regular
//! quad grids, solved by forward-backward splitting with optional two-metric
//! projection, plus optimality-criteria and gradient-projection baselines.

pub mod assemble;
pub mod boxqp;
pub mod cli;
pub mod error;
pub mod grid;
pub mod model;
pub mod optim;
pub mod solve;
