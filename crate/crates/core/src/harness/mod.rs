//! Simulation designs, the Monte Carlo driver, panel ingestion and the
//! command-line front end.

pub mod cli;
pub mod dgp;
pub mod mc;
pub mod panel;
pub mod pipeline;
