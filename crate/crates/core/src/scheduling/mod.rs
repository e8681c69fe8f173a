//! Dependency-respecting dispatch with retries and replanning, execution
//! traces, and idle-time analytics.

mod mission;
mod sim;
mod trace;

#[cfg(test)]
mod tests;

pub use mission::{
    apply_event, pump, AllocatorChoice, Command, Effect, MissionContext, MissionError, MissionEvent, MissionState,
    Phase, ResultError, TaskOutcome, MAX_FRUITLESS_REPLANS,
};
pub use sim::{run_mission, Dispatcher, SimDispatcher};
pub use trace::{check_trace, format_percent, idle_percentage, EventKind, ExecutionTrace, IdleError, SimTime, TraceEvent};
