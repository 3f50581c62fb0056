//! Critique-guided episodes, exploration rounds and the iterative
//! exploration/learning loop.

mod episode;
mod exploration;
mod iterate;

pub use episode::{episode_seed, run_episode, CritiqueMode, Episode, EpisodeConfig, EpisodeError};
pub use exploration::{
    expert_trajectory, is_success, log_file_name, run_exploration, run_task, AbortedEpisode, ActorSpec, CriticSpec,
    EnvSpec, HarvestStats, RefinePair, RoundHarvest, RunSpec, Task, FALLBACK_MAX_STEPS,
};
pub use iterate::{
    collect_critiques, expert_records, round_dir, run_id_of, run_iterations, run_single, write_run_report,
    IterateConfig, IterateError, IterationOutcome, TrainerHook,
};
