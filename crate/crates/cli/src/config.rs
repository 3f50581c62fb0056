use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use cgi_core::bridge::{BridgeConfig, BridgeEndpoint};
use cgi_core::orchestrator::{ActorSpec, CriticSpec, EnvSpec, RunSpec};
use cgi_core::policy::ChatClient;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub workers: usize,
    pub rounds: u32,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            rounds: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Craft,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// `tcp://host:port` or `spawn:<command>`.
    pub endpoint: Option<String>,
    pub connect_timeout_secs: u64,
    pub response_timeout_secs: u64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let b = BridgeConfig::default();
        Self {
            kind: EnvKind::Craft,
            endpoint: None,
            connect_timeout_secs: b.connect_timeout.as_secs(),
            response_timeout_secs: b.response_timeout.as_secs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorSection {
    pub kind: ActorKind,
    pub fidelity: f64,
    pub candidates: usize,
    pub temperature: f64,
    pub dedup: bool,
    pub max_steps: Option<usize>,
    pub model: String,
}

impl Default for ActorSection {
    fn default() -> Self {
        Self {
            kind: ActorKind::Scripted,
            fidelity: 0.3,
            candidates: cgi_core::policy::DEFAULT_CANDIDATES,
            temperature: 1.0,
            dedup: false,
            max_steps: None,
            model: "actor".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CriticMode {
    Off,
    Oracle,
    Degraded,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSection {
    pub mode: CriticMode,
    /// Grade perturbation probability for the degraded critic.
    pub q: f64,
    pub model: String,
    /// Give the remote critic the gold path (expert prompt).
    pub with_gold: bool,
}

impl Default for CriticSection {
    fn default() -> Self {
        Self {
            mode: CriticMode::Oracle,
            q: 0.2,
            model: "critic".into(),
            with_gold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub beta: f64,
    pub general: Option<PathBuf>,
    pub total: Option<usize>,
    pub mix_seed: u64,
    pub revised_only: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            beta: 0.8,
            general: None,
            total: None,
            mix_seed: 0,
            revised_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub hook: String,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self { hook: "noop".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub env: EnvSection,
    pub actor: ActorSection,
    pub critic: CriticSection,
    pub dataset: DatasetSection,
    pub trainer: TrainerSection,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.rounds == 0 {
            bail!(usage("rounds must be at least 1"));
        }
        if self.actor.candidates == 0 {
            bail!(usage("candidates must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.actor.fidelity) {
            bail!(usage("fidelity must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.critic.q) {
            bail!(usage("q must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.dataset.beta) {
            bail!(usage("beta must be in [0, 1]"));
        }
        if self.actor.max_steps == Some(0) {
            bail!(usage("max_steps must be at least 1"));
        }
        if let Some(g) = &self.dataset.general {
            if !g.is_file() {
                bail!(usage(format!("general corpus {} does not exist", g.display())));
            }
        }
        if self.env.kind == EnvKind::Bridge && self.env.endpoint.is_none() {
            bail!(usage("bridge environment needs an endpoint"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        self.validate()?;
        let env = match self.env.kind {
            EnvKind::Craft => EnvSpec::InProcess,
            EnvKind::Bridge => {
                let raw = self.env.endpoint.as_deref().unwrap_or_default();
                let endpoint: BridgeEndpoint = raw.parse().map_err(usage)?;
                EnvSpec::Bridge {
                    endpoint,
                    config: BridgeConfig {
                        connect_timeout: Duration::from_secs(self.env.connect_timeout_secs),
                        response_timeout: Duration::from_secs(self.env.response_timeout_secs),
                    },
                }
            }
        };
        let actor = match self.actor.kind {
            ActorKind::Scripted => ActorSpec::Scripted {
                fidelity: self.actor.fidelity,
            },
            ActorKind::Remote => remote_actor(&self.actor.model)?,
        };
        let critic = match self.critic.mode {
            CriticMode::Off => CriticSpec::None,
            CriticMode::Oracle => CriticSpec::Oracle,
            CriticMode::Degraded => CriticSpec::Degraded { q: self.critic.q },
            CriticMode::Remote => remote_critic(&self.critic)?,
        };
        Ok(RunSpec {
            env,
            actor,
            critic,
            candidates: self.actor.candidates,
            temperature: self.actor.temperature,
            dedup: self.actor.dedup,
            max_steps: self.actor.max_steps,
            master_seed: self.run.seed,
            workers: self.run.workers.max(1),
        })
    }
}

fn client_from_env(endpoint_var: &str, key_var: &str, model: &str) -> Result<ChatClient> {
    let endpoint = std::env::var(endpoint_var).map_err(|_| usage(format!("{endpoint_var} is not set")))?;
    Ok(ChatClient::new(endpoint, model, std::env::var(key_var).ok()))
}

fn remote_actor(model: &str) -> Result<ActorSpec> {
    Ok(ActorSpec::Remote {
        client: client_from_env("ACTOR_ENDPOINT", "ACTOR_KEY", model)?,
    })
}

fn remote_critic(c: &CriticSection) -> Result<CriticSpec> {
    Ok(CriticSpec::Remote {
        client: client_from_env("CRITIC_ENDPOINT", "CRITIC_KEY", &c.model)?,
        with_gold: c.with_gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        assert_eq!(toml::from_str::<Config>(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c: Config = toml::from_str("[actor]\nfidelity = 0.9\n[critic]\nmode = \"off\"\n").unwrap();
        assert_eq!(c.actor.fidelity, 0.9);
        assert_eq!(c.actor.candidates, 5);
        assert_eq!(c.critic.mode, CriticMode::Off);
        assert_eq!(c.run.rounds, 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Config>("[run]\nseeds = 1\n").is_err());
    }

    #[test]
    fn validation() {
        let mut c = Config::default();
        c.run.rounds = 0;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.env.kind = EnvKind::Bridge;
        assert!(c.validate().is_err());
        c.env.endpoint = Some("tcp://127.0.0.1:1".into());
        assert!(c.run_spec().is_ok());
    }
}
