//! Environment abstraction shared by the in-process simulator and bridged
//! external environments.

use thiserror::Error;

use crate::bridge::BridgeError;
use crate::craft::{CraftEnv, CraftError, CraftState};
use crate::trajectory::Observation;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step before reset")]
    EpisodeNotReset,
    #[error(transparent)]
    Craft(#[from] CraftError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

/// An observation plus the optional action list some environments supply.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvResponse {
    pub observation: Observation,
    pub available_actions: Option<Vec<String>>,
}

impl From<Observation> for EnvResponse {
    fn from(observation: Observation) -> Self {
        Self {
            observation,
            available_actions: None,
        }
    }
}

pub trait Environment: Send {
    fn reset(&mut self, task_id: &str, seed: u64) -> Result<EnvResponse, EnvError>;
    fn step(&mut self, action: &str) -> Result<EnvResponse, EnvError>;
}

/// The crafting simulator driven through the [`Environment`] interface.
#[derive(Debug, Clone)]
pub struct CraftEnvironment {
    env: CraftEnv,
    state: Option<CraftState>,
}

impl CraftEnvironment {
    pub fn new(env: CraftEnv) -> Self {
        Self { env, state: None }
    }

    pub fn state(&self) -> Option<&CraftState> {
        self.state.as_ref()
    }
}

impl Environment for CraftEnvironment {
    fn reset(&mut self, _task_id: &str, seed: u64) -> Result<EnvResponse, EnvError> {
        let (state, obs) = self.env.reset(seed);
        self.state = Some(state);
        Ok(obs.into())
    }

    fn step(&mut self, action: &str) -> Result<EnvResponse, EnvError> {
        let state = self.state.as_ref().ok_or(EnvError::EpisodeNotReset)?;
        let (next, obs) = self.env.step(state, action)?;
        self.state = Some(next);
        Ok(obs.into())
    }
}
