mod config;

use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use cgi_core::bridge::{serve, serve_tcp, BridgeHandler, CraftHandler, EchoHandler};
use cgi_core::craft::{generate_tasks, parse_task_set, task_set_json, CraftTask, GenerateError};
use cgi_core::dataset::{read_records, DatasetError, DatasetRecord, Manifest, MixCounts, MixSpec};
use cgi_core::metrics::{evaluate_runs, write_figures};
use cgi_core::orchestrator::{
    collect_critiques, run_iterations, run_single, HarvestStats, IterateConfig, RoundHarvest, Task, TrainerHook,
};
use cgi_core::trajectory::Instruction;

use config::{ActorKind, Config, CriticMode, EnvKind};

/// Invalid invocation: bad flags, missing inputs, or an output that exists.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

static CANCEL: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(
    name = "cgi",
    version,
    about = "Critique-guided improvement runs over crafting tasks and bridged environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic crafting task set.
    GenTasks(GenTasksArgs),
    /// Run one round of episodes and write logs plus report.json.
    Run(RunArgs),
    /// Run K exploration rounds with dataset emission and the trainer hook.
    Iterate(IterateArgs),
    /// Harvest critiques from a gold-path critic into a critique pool.
    CollectCritiques(RunArgs),
    /// Mix agentic and general records with weight beta.
    Mix(MixArgs),
    /// Aggregate metrics over run directories.
    Eval(EvalArgs),
    /// Serve an environment over the newline-delimited JSON protocol.
    BridgeServe(ServeArgs),
}

#[derive(Args)]
struct GenTasksArgs {
    #[arg(long)]
    depth: usize,
    /// Maximum ingredients per recipe.
    #[arg(long, default_value_t = 1)]
    branching: usize,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config with [run], [env], [actor], [critic], [dataset], [trainer].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task set file.
    #[arg(long)]
    tasks: PathBuf,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum)]
    critic: Option<CriticMode>,
    /// Grade perturbation probability for the degraded critic.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, value_enum)]
    actor: Option<ActorKind>,
    /// Probability that a scripted candidate is the gold next action.
    #[arg(long)]
    fidelity: Option<f64>,
    /// Candidates per step.
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    env: Option<EnvKind>,
    /// Bridge endpoint: tcp://host:port or spawn:<command>.
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Args)]
struct IterateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    beta: Option<f64>,
    /// General instruction corpus (dataset JSON).
    #[arg(long)]
    general: Option<PathBuf>,
    /// Trainer hook command template, or "noop".
    #[arg(long)]
    hook: Option<String>,
    /// Emit refine records only for revised steps.
    #[arg(long)]
    revised_only: bool,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    beta: f64,
    /// Agentic dataset files.
    #[arg(long = "agentic", required = true)]
    agentic: Vec<PathBuf>,
    #[arg(long)]
    general: Option<PathBuf>,
    /// Total records; the largest feasible size when omitted.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for mixed.json and manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directories, or directories of trajectory logs.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Echo,
}

#[derive(Args)]
struct ServeArgs {
    /// Crafting task set to serve.
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    tasks: Option<PathBuf>,
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// Listen on host:port instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = ctrlc::set_handler(|| {
        if CANCEL.swap(true, Ordering::SeqCst) {
            std::process::exit(1);
        }
        eprintln!("interrupt: finishing in-flight steps and flushing logs");
    }) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    let result = match cli.command {
        Command::GenTasks(a) => cmd_gen_tasks(a),
        Command::Run(a) => cmd_run(a),
        Command::Iterate(a) => cmd_iterate(a),
        Command::CollectCritiques(a) => cmd_collect_critiques(a),
        Command::Mix(a) => cmd_mix(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BridgeServe(a) => cmd_bridge_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Prepares a fresh output directory, replacing an existing one only with
/// `--force`.
fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            bail!(usage(format!(
                "{} already exists (use --force to replace it)",
                dir.display()
            )));
        }
        if dir.is_dir() {
            fs::remove_dir_all(dir)?;
        } else {
            fs::remove_file(dir)?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn cmd_gen_tasks(a: GenTasksArgs) -> Result<()> {
    if a.out.exists() && !a.force {
        bail!(usage(format!(
            "{} already exists (use --force to replace it)",
            a.out.display()
        )));
    }
    let tasks = generate_tasks(a.depth, a.branching, a.count, a.seed).map_err(|e| match e {
        GenerateError::InvalidParameters => usage(e.to_string()),
        other => other.into(),
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, task_set_json(&tasks))?;
    println!("wrote {} tasks to {}", tasks.len(), a.out.display());
    Ok(())
}

#[derive(Deserialize)]
struct InstructionSet {
    instructions: Vec<Instruction>,
}

/// Crafting task sets, or `{"instructions": [...]}` for tasks served by an
/// external environment.
fn load_tasks(path: &Path) -> Result<Vec<Task>> {
    require_file(path, "task file")?;
    let text = fs::read_to_string(path)?;
    match parse_task_set(&text) {
        Ok(tasks) => Ok(tasks.into_iter().map(Task::Craft).collect()),
        Err(craft_err) => match serde_json::from_str::<InstructionSet>(&text) {
            Ok(set) => {
                for i in &set.instructions {
                    i.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
                }
                Ok(set.instructions.into_iter().map(Task::External).collect())
            }
            Err(_) => bail!(usage(format!("invalid task file {}: {craft_err}", path.display()))),
        },
    }
}

fn effective_config(a: &RunArgs) -> Result<Config> {
    let mut c = Config::load(a.config.as_deref())?;
    if let Some(v) = a.critic {
        c.critic.mode = v;
    }
    if let Some(v) = a.q {
        c.critic.q = v;
    }
    if let Some(v) = a.actor {
        c.actor.kind = v;
    }
    if let Some(v) = a.fidelity {
        c.actor.fidelity = v;
    }
    if let Some(v) = a.candidates {
        c.actor.candidates = v;
    }
    if let Some(v) = a.max_steps {
        c.actor.max_steps = Some(v);
    }
    if let Some(v) = a.seed {
        c.run.seed = v;
    }
    if let Some(v) = a.workers {
        c.run.workers = v;
    }
    if let Some(v) = a.env {
        c.env.kind = v;
    }
    if let Some(v) = &a.endpoint {
        c.env.kind = EnvKind::Bridge;
        c.env.endpoint = Some(v.clone());
    }
    Ok(c)
}

fn cancel_flag() -> Option<&'static AtomicBool> {
    Some(&CANCEL)
}

/// Loads inputs and creates the run directory with a config snapshot.
fn start_run(a: &RunArgs, config: &Config) -> Result<(Vec<Task>, cgi_core::orchestrator::RunSpec)> {
    let spec = config.run_spec()?;
    let tasks = load_tasks(&a.tasks)?;
    fresh_dir(&a.out, a.force)?;
    fs::write(a.out.join("config.toml"), config.to_toml())?;
    Ok((tasks, spec))
}

fn print_stats_header() {
    println!(
        "{:>5} {:>9} {:>9} {:>7} {:>7} {:>12}",
        "round", "episodes", "completed", "aborted", "correct", "success_rate"
    );
}

fn print_stats(s: &HarvestStats) {
    let rate = s.success_rate.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "{:>5} {:>9} {:>9} {:>7} {:>7} {:>12}",
        s.round, s.episodes, s.completed, s.aborted, s.correct, rate
    );
}

fn check_interrupted() -> Result<()> {
    if CANCEL.load(Ordering::SeqCst) {
        bail!("interrupted; partial logs were flushed");
    }
    Ok(())
}

fn check_backends(h: &RoundHarvest) -> Result<()> {
    if let Some(a) = h.aborted.iter().find(|a| a.backend_unavailable) {
        bail!(
            "backend unavailable ({} of {} episodes aborted): {}",
            h.aborted.len(),
            h.stats.episodes,
            a.reason
        );
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let config = effective_config(&a)?;
    let (tasks, spec) = start_run(&a, &config)?;
    let (harvest, _) = run_single(&a.out, &tasks, &spec, cancel_flag())?;
    print_stats_header();
    print_stats(&harvest.stats);
    for ab in &harvest.aborted {
        eprintln!("aborted {}: {}", ab.task_id, ab.reason);
    }
    check_interrupted()?;
    check_backends(&harvest)
}

fn cmd_collect_critiques(a: RunArgs) -> Result<()> {
    let config = effective_config(&a)?;
    let spec = config.run_spec()?;
    if !spec.critic.is_expert() {
        bail!(usage(
            "collect-critiques needs --critic oracle, degraded, or a remote critic with with_gold = true"
        ));
    }
    let (tasks, spec) = start_run(&a, &config)?;
    let (harvest, manifest) = collect_critiques(&a.out, &tasks, &spec, cancel_flag())?;
    print_stats_header();
    print_stats(&harvest.stats);
    let n = manifest.files.get("critique.json").map(|f| f.records).unwrap_or(0);
    println!("{n} critique records");
    check_interrupted()?;
    check_backends(&harvest)
}

fn cmd_iterate(a: IterateArgs) -> Result<()> {
    let mut config = effective_config(&a.run)?;
    if let Some(v) = a.rounds {
        config.run.rounds = v;
    }
    if let Some(v) = a.beta {
        config.dataset.beta = v;
    }
    if let Some(v) = &a.general {
        config.dataset.general = Some(v.clone());
    }
    if let Some(v) = &a.hook {
        config.trainer.hook = v.clone();
    }
    if a.revised_only {
        config.dataset.revised_only = true;
    }
    config.validate()?;
    let general = match &config.dataset.general {
        Some(p) => read_records(p).map_err(|e| usage(e.to_string()))?,
        None => Vec::new(),
    };
    let (tasks, spec) = start_run(&a.run, &config)?;
    let cfg = IterateConfig {
        rounds: config.run.rounds,
        beta: config.dataset.beta,
        general,
        mix_total: config.dataset.total,
        mix_seed: config.dataset.mix_seed,
        revised_only: config.dataset.revised_only,
        hook: TrainerHook::parse(&config.trainer.hook),
    };
    let outcome = run_iterations(&a.run.out, &tasks, &spec, &cfg, cancel_flag())?;
    print_stats_header();
    for h in &outcome.harvests {
        print_stats(&h.stats);
    }
    if let Some(e) = outcome.failure {
        let kept = outcome.harvests.len();
        return Err(anyhow::Error::new(e).context(format!("stopped after {kept} round(s); completed rounds kept")));
    }
    check_interrupted()?;
    match outcome.harvests.last() {
        Some(h) => check_backends(h),
        None => Ok(()),
    }
}

fn read_input(path: &Path, what: &str) -> Result<Vec<DatasetRecord>> {
    require_file(path, what)?;
    read_records(path).map_err(|e| usage(e.to_string()))
}

fn cmd_mix(a: MixArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.beta) {
        bail!(usage("beta must be in [0, 1]"));
    }
    let mut agentic = Vec::new();
    for p in &a.agentic {
        agentic.extend(read_input(p, "agentic file")?);
    }
    let general = match &a.general {
        Some(p) => read_input(p, "general file")?,
        None => Vec::new(),
    };
    let spec = MixSpec {
        beta: a.beta,
        agentic,
        general,
        total: a.n,
        seed: a.seed,
    };
    let outcome = cgi_core::dataset::mix_datasets(&spec).map_err(|e| match e {
        DatasetError::InvalidBeta(_) => usage(e.to_string()),
        other => anyhow::Error::new(other),
    })?;
    fresh_dir(&a.out, a.force)?;
    let mut manifest = Manifest::new(None, None);
    manifest.emit(&a.out, "mixed.json", &outcome.records, true)?;
    manifest.mix = Some(MixCounts::new(a.beta, a.seed, &outcome));
    manifest.write(&a.out.join("manifest.json"))?;
    println!(
        "mixed {} records: {} agentic, {} general{}",
        outcome.n,
        outcome.agentic,
        outcome.general,
        if outcome.capped { " (capped by pool size)" } else { "" }
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    for r in &a.runs {
        if !r.is_dir() {
            bail!(usage(format!("run directory {} does not exist", r.display())));
        }
    }
    let report = evaluate_runs(&a.runs)?;
    fresh_dir(&a.out, a.force)?;
    fs::write(a.out.join("report.json"), report.to_json())?;
    write_figures(&report.aggregate, &a.out.join("figures"))?;
    let agg = &report.aggregate;
    println!(
        "{} episodes, {} aborted, {} corrupt logs",
        agg.n_episodes, agg.abort_count, agg.corrupt
    );
    for (env, m) in &agg.envs {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{env}: avg_final_score {} success_rate {}",
            fmt(m.avg_final_score),
            fmt(m.success_rate)
        );
    }
    Ok(())
}

fn load_craft_tasks(path: &Path) -> Result<Vec<CraftTask>> {
    require_file(path, "task file")?;
    parse_task_set(&fs::read_to_string(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn serve_with<H, F>(listen: Option<&str>, make: F) -> Result<()>
where
    H: BridgeHandler + Send + 'static,
    F: Fn() -> H + Send + Sync + 'static,
{
    match listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve_tcp(listener, make)?;
        }
        None => {
            let stdin = io::stdin();
            let mut handler = make();
            serve(BufReader::new(stdin.lock()), io::stdout().lock(), &mut handler)?;
        }
    }
    Ok(())
}

fn cmd_bridge_serve(a: ServeArgs) -> Result<()> {
    match (a.fixture, &a.tasks) {
        (Some(Fixture::Echo), _) => serve_with(a.listen.as_deref(), EchoHandler::default),
        (None, Some(path)) => {
            let tasks = load_craft_tasks(path)?;
            serve_with(a.listen.as_deref(), move || CraftHandler::new(tasks.clone()))
        }
        (None, None) => bail!(usage("either --tasks or --fixture is required")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_are_recognised() {
        let e = usage("bad");
        assert!(e.downcast_ref::<UsageError>().is_some());
        let wrapped = e.context("outer");
        assert!(wrapped.downcast_ref::<UsageError>().is_some());
    }
}
