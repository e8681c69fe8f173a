//! Centralized multi-robot task planning, allocation and execution.

pub mod allocation;
pub mod ctl;
pub mod experiments;
pub mod fleetd;
pub mod llm;
pub mod model;
pub mod planning;
pub mod protocol;
pub mod rules;
pub mod scheduling;
pub mod worker;
