//! Critique-guided improvement for language agents: an actor proposes
//! candidate actions, a critic grades each one, the actor refines, and
//! successful episodes become training data for the next round.

pub mod bridge;
pub mod craft;
pub mod critic;
pub mod dataset;
pub mod env;
pub mod metrics;
pub mod orchestrator;
pub mod policy;
pub mod prompts;
pub mod trajectory;
