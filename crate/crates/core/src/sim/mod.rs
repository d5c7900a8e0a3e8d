//! Deterministic discrete-event simulation of the whole coupon economy.
//!
//! Accessories, apps, phones with their managers, users and one cashing
//! server share a single virtual clock. The run is a pure function of the
//! [`Scenario`]: every random draw comes from a generator seeded by the
//! scenario seed and the drawing actor's id.

mod engine;
pub mod metrics;
pub mod presets;
mod scenario;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use engine::{run_with, Event, EventKind, RunOptions, SimResult};
pub use metrics::{conservation_verdict, parse_table, verify_output, Metrics, VerifyError};
pub use scenario::{AccessorySpec, AppBehavior, AppSpec, Scenario, UserSpec};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const METRICS_FILE: &str = "metrics.tsv";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("simulation failed: {0}")]
    Runtime(String),
}

/// Independent generator for one actor. Adding an actor leaves every other
/// actor's draws unchanged.
pub fn actor_rng(seed: u64, actor: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(actor.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn run(s: &Scenario) -> Result<SimResult, SimError> {
    run_with(s, &RunOptions::default())
}

/// Runs twice and compares every output byte.
pub fn replay_check(s: &Scenario) -> Result<bool, SimError> {
    let a = run(s)?;
    let b = run(s)?;
    Ok(a.events_jsonl() == b.events_jsonl() && a.ledger == b.ledger && a.metrics.to_table() == b.metrics.to_table())
}

/// Verifies a directory written by [`SimResult::write_to_dir`].
pub fn verify_dir(dir: &std::path::Path) -> Result<(), VerifyError> {
    let metrics = std::fs::read_to_string(dir.join(METRICS_FILE)).map_err(|e| VerifyError::Metrics(e.to_string()))?;
    let ledger = std::fs::read(dir.join(LEDGER_FILE)).map_err(|e| VerifyError::Ledger(e.to_string()))?;
    verify_output(&metrics, &ledger)
}

#[cfg(test)]
mod tests;
