//! Simulated robot worker.

mod net;
mod profile;

pub use net::{probe, serve, RunningWorker, MAX_BACKOFF};

pub use profile::{FailureCount, Outcome, ProfileError, WorkerProfile, WorkerScript};
