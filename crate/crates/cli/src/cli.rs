//! Command-line parsing and the offline subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use alchemy_core::analysis::{
    action_type_histogram, build_activation_table, io_comparison_by_trial, pair_selectivity, score_by_missing_edges,
    score_by_missing_edges_tsv, Grouping, RecordedEpisode, ViolationOptions, ViolationReport,
};
use alchemy_core::baselines::{IdealConfig, IdealObserver, RandomHeuristic};
use alchemy_core::chemistry::GenConfig;
use alchemy_core::environment::runner::{run_episodes, EpisodeRun, NoOpPolicy, RunOptions, UniformRandomPolicy};
use alchemy_core::interface::{generate_eval_set, load_dir, save_run, EvalManifest, TraceBundle};
use alchemy_core::neural::checkpoint;
use alchemy_core::par::ExecMode;
use alchemy_core::training::{eval_seeds, train, EpnPolicy, EvalConfig, EvalReport, TrainFile};
use alchemy_core::{EnvConfig, EpisodeTrace};

use crate::server;

#[derive(Debug, Parser)]
#[command(name = "alchemy", version, about = "Symbolic Alchemy workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded evaluation-set manifest.
    Gen(GenArgs),
    /// Play episodes with a policy and write their traces.
    Run(RunArgs),
    /// Train the EPN agent with A2C.
    Train(TrainArgs),
    /// Summarise a directory of traces.
    Analyze(AnalyzeArgs),
    /// Serve traces and interactive sessions over HTTP.
    Serve(ServeArgs),
}

/// Environment options shared by the subcommands that create episodes.
#[derive(Debug, Args, Clone)]
pub struct EnvArgs {
    /// TOML file with an `[env]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the number of trials per episode.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Draw every chemistry with exactly this many missing edges.
    #[arg(long)]
    pub missing_edges: Option<usize>,
}

impl EnvArgs {
    pub fn env(&self) -> Result<EnvConfig> {
        let mut env = match &self.config {
            Some(p) => TrainFile::load(p).with_context(|| format!("loading {}", p.display()))?.env,
            None => EnvConfig::default(),
        };
        if let Some(t) = self.trials {
            env.trials_per_episode = t;
        }
        if let Some(m) = self.missing_edges {
            env.gen = GenConfig::fixed_missing(m);
        }
        env.validate()?;
        Ok(env)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1_000_003)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    /// Manifest path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Ideal,
    Random,
    Epn,
    Noop,
    Uniform,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub policy: PolicyKind,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Seed of the evaluation set the episodes are drawn from.
    #[arg(long, default_value_t = 1_000_003)]
    pub seed: u64,
    /// Take episode seeds from a manifest instead of `--seed`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Network checkpoint for `--policy epn`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Do not write to the episodic memory.
    #[arg(long)]
    pub no_memory: bool,
    /// Score without the null, invalid and repeat penalties.
    #[arg(long)]
    pub no_shaping: bool,
    /// Write unit activations next to each trace.
    #[arg(long)]
    pub record_activations: bool,
    /// Write belief marginals next to each trace (ideal observer only).
    #[arg(long)]
    pub record_belief: bool,
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with `[train]` and `[env]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    /// Violation counts of the four behavioral tests.
    Behavior,
    /// Action types per trial.
    Actions,
    /// Score by number of missing edges.
    Edges,
    /// Single-unit activation table, plus pair selectivity when grouped by hue.
    Units,
    /// Trial-wise comparison against reference traces.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    StoneLatent,
    Percept,
    Hue,
    RewardSign,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::StoneLatent => Grouping::StoneLatent,
            GroupingArg::Percept => Grouping::Percept,
            GroupingArg::Hue => Grouping::Hue,
            GroupingArg::RewardSign => Grouping::RewardSign,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub kind: AnalysisKind,
    /// Directory of traces.
    #[arg(long)]
    pub traces: PathBuf,
    /// Reference traces for `compare`, paired by seed.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Print the machine-readable summary instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Count every parallelism offence, not only the first per percept.
    #[arg(long)]
    pub permissive: bool,
    /// Zero-based trial indices kept by `actions`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub trial: Vec<u32>,
    #[arg(long, value_enum, default_value = "hue")]
    pub grouping: GroupingArg,
    #[arg(long, default_value_t = alchemy_core::analysis::DEFAULT_THETA)]
    pub theta: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ALCHEMY_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Directory of traces to serve.
    #[arg(long, env = "ALCHEMY_DATA_DIR", default_value = "traces")]
    pub data_dir: PathBuf,
    /// Network checkpoint for `epn` sessions.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Train(a) => train_cmd(a),
        Command::Analyze(a) => analyze(a),
        Command::Serve(a) => serve(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let env = a.env.env()?;
    let m = generate_eval_set(a.seed, a.episodes, &env.gen)?;
    let json = serde_json::to_string_pretty(&m)?;
    match a.out {
        Some(p) => fs::write(&p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn episode_seeds(a: &RunArgs) -> Result<Vec<u64>> {
    match &a.manifest {
        Some(p) => {
            let m: EvalManifest = serde_json::from_str(&fs::read_to_string(p)?)
                .with_context(|| format!("parsing manifest {}", p.display()))?;
            Ok(m.seeds().into_iter().take(a.episodes).collect())
        }
        None => Ok(eval_seeds(a.seed, a.episodes)),
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut env = a.env.env()?;
    env.shaping = !a.no_shaping;
    let exec = if a.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let seeds = episode_seeds(&a)?;
    if a.no_memory && a.policy != PolicyKind::Epn {
        bail!("--no-memory only applies to --policy epn");
    }
    if a.record_activations && a.policy != PolicyKind::Epn {
        bail!("--record-activations only applies to --policy epn");
    }
    let opts = RunOptions { record_belief: a.record_belief, record_activations: a.record_activations };
    let out_mode = env.encoding.output;
    let runs: Vec<EpisodeRun> = match a.policy {
        PolicyKind::Ideal => {
            let cfg = IdealConfig { exec: ExecMode::Sequential, ..IdealConfig::default() };
            run_episodes(|_, _| IdealObserver::new(cfg), &env, &seeds, opts, exec)?
        }
        PolicyKind::Random => run_episodes(|i, _| RandomHeuristic::new(i as u64), &env, &seeds, opts, exec)?,
        PolicyKind::Noop => run_episodes(|_, _| NoOpPolicy, &env, &seeds, opts, exec)?,
        PolicyKind::Uniform => {
            run_episodes(|i, _| UniformRandomPolicy::new(i as u64, out_mode), &env, &seeds, opts, exec)?
        }
        PolicyKind::Epn => {
            let path = a.checkpoint.as_ref().context("--policy epn needs --checkpoint")?;
            let net = Arc::new(checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?);
            let ec = EvalConfig {
                n_episodes: seeds.len(),
                memory_enabled: !a.no_memory,
                shaping: env.shaping,
                record_activations: a.record_activations,
                seed: a.seed,
                exec,
                ..EvalConfig::default()
            };
            let want = alchemy_core::neural::EpnDims::for_encoding(&env.encoding);
            if (net.dims.obs_dim, net.dims.n_actions) != (want.obs_dim, want.n_actions) {
                bail!("checkpoint expects {} inputs and {} actions, the environment has {} and {}",
                    net.dims.obs_dim, net.dims.n_actions, want.obs_dim, want.n_actions);
            }
            run_episodes(|_, _| EpnPolicy::new(Arc::clone(&net), env.encoding, &ec), &env, &seeds, opts, exec)?
        }
    };
    for (i, r) in runs.iter().enumerate() {
        save_run(&a.out, &format!("episode-{i:05}"), r)?;
    }
    let rep = EvalReport::from_runs(&runs);
    println!(
        "{} episodes, mean score {:.2} +- {:.2}, traces in {}",
        runs.len(),
        rep.overall.mean,
        rep.overall.sem,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut file = match &a.config {
        Some(p) => TrainFile::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => TrainFile::default(),
    };
    if let Some(s) = a.steps {
        file.train.total_steps = s;
    }
    if let Some(s) = a.seed {
        file.train.seed = s;
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.toml"), file.to_toml()?)?;
    let out = train(&file.train, &file.env, Some(&a.out))?;
    let last = out.metrics.last();
    println!(
        "{} updates, {} episodes, final checkpoint {}",
        last.map_or(0, |m| m.update + 1),
        out.episodes,
        out.checkpoints.last().map_or_else(|| "-".to_string(), |p| p.display().to_string())
    );
    Ok(())
}

fn load_traces(dir: &Path) -> Result<Vec<TraceBundle>> {
    let b = load_dir(dir).with_context(|| format!("reading traces in {}", dir.display()))?;
    if b.is_empty() {
        bail!("no traces in {}", dir.display());
    }
    Ok(b)
}

/// The report text for `analyze`.
pub fn analysis_output(a: &AnalyzeArgs) -> Result<String> {
    let bundles = load_traces(&a.traces)?;
    let traces: Vec<EpisodeTrace> = bundles.iter().map(|b| b.trace.clone()).collect();
    let text = match a.kind {
        AnalysisKind::Behavior => {
            let r = ViolationReport::build(&traces, ViolationOptions { permissive_parallelism: a.permissive });
            if a.json { serde_json::to_string_pretty(&r)? } else { r.to_tsv() }
        }
        AnalysisKind::Actions => {
            let filter = (!a.trial.is_empty()).then_some(a.trial.as_slice());
            let h = action_type_histogram(&traces, filter);
            if a.json { serde_json::to_string_pretty(&h)? } else { h.to_tsv() }
        }
        AnalysisKind::Edges => {
            let t = score_by_missing_edges(&traces);
            if a.json { serde_json::to_string_pretty(&t)? } else { score_by_missing_edges_tsv(&t) }
        }
        AnalysisKind::Units => {
            let eps: Vec<RecordedEpisode> = bundles
                .iter()
                .filter_map(|b| b.activations.as_deref().map(|act| RecordedEpisode { trace: &b.trace, activations: act }))
                .collect();
            if eps.is_empty() {
                bail!("no activation sidecars in {}", a.traces.display());
            }
            let table = build_activation_table(&eps, a.grouping.into())?;
            let sel = (table.grouping == Grouping::Hue).then(|| pair_selectivity(&table, a.theta)).transpose()?;
            if a.json {
                serde_json::to_string_pretty(&serde_json::json!({ "table": table, "selectivity": sel }))?
            } else {
                let mut s = table.to_tsv();
                if let Some(sel) = sel {
                    s.push_str(&format!("# pair-selective transformer units: {:.4}\n", sel.fraction));
                }
                s
            }
        }
        AnalysisKind::Compare => {
            let dir = a.reference.as_ref().context("compare needs --reference")?;
            let reference: Vec<EpisodeTrace> = load_traces(dir)?.into_iter().map(|b| b.trace).collect();
            let c = io_comparison_by_trial(&traces, &reference)?;
            if a.json { serde_json::to_string_pretty(&c)? } else { c.to_tsv() }
        }
    };
    Ok(text)
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    print!("{}", analysis_output(&a)?);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let net = match &a.checkpoint {
        Some(p) => Some(Arc::new(checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?)),
        None => None,
    };
    let state = server::AppState::new(a.data_dir.clone(), EnvConfig::default(), net);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", a.port)).await?;
        eprintln!("serving {} on port {}", a.data_dir.display(), a.port);
        axum::serve(listener, server::router(state)).await?;
        Ok(())
    })
}
