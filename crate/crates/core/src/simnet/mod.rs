//! Deterministic discrete-event network simulator.
//!
//! The engine is a cloneable state machine: [`Engine::advance`] runs until
//! the adversary has to decide something, [`Engine::resolve`] applies the
//! decision. Within one tick, scripted adversary actions come first, then
//! software and injection decisions, then message deliveries in FIFO order,
//! then timers.

mod engine;
mod scheduler;

pub use engine::{
    versioned_key, Benign, Choice, Chooser, Ctx, DecisionKind, DecisionPoint, DeviceState, Engine, EngineConfig,
    NetPolicy, RandomChooser, Replay, ScriptAction, SimError, World,
};
pub use scheduler::{Class, Scheduler};

use crate::model::{TimePoint, Trace};
use crate::scenario::{Scenario, ScenarioError};

/// Runs `scenario` up to `horizon` with benign choices for every free
/// decision (scripted adversary actions still happen).
pub fn run(scenario: &Scenario, horizon: TimePoint) -> Result<Trace, ScenarioError> {
    let engine = scenario.engine_with_horizon(horizon)?;
    Ok(engine.run_with(&mut Benign))
}
