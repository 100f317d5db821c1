//! Scenario-driven front end for `weakinv-core`: load a declarative scenario,
//! classify its field, run the property battery, or split it into a cascade.

pub mod pipeline;
pub mod report;
pub mod scenario;

pub use report::{CheckRow, RunReport, Status};
pub use scenario::Scenario;
