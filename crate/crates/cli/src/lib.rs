//! The `dsbm` command line: training, evaluation, ablation sweeps, export of
//! trajectories, tables and plots, standalone formation planning and the
//! control-plane protocol trace.
//!
//! Every command writes only inside its output directory and is
//! deterministic for a given configuration. Wall-clock timings go to a
//! separate `timing.json` so the logs stay byte-identical across runs.

pub mod plot;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsbm_core::asma::{assign, read_profiles, score_matrix};
use dsbm_core::config::RunConfig;
use dsbm_core::control::run_protocol;
use dsbm_core::env::TrackingEnv;
use dsbm_core::learner::{checkpoint, train, Ablations, AsmaPlanner, EpisodeLog, Learner, PlanProvider};
use dsbm_core::metrics::{evaluate, EntityRecord, GreedyPolicy, MetricsReport, Policy, RandomPolicy, StayPolicy};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dsbm_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("{0}")]
    Check(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "dsbm", version, about = "Multi-AUV target tracking: training, evaluation and export")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Configuration layering shared by every command. Later layers win:
/// preset, `--config` file, `DSBM_<SECTION>_<KEY>` environment variables,
/// `--set` pairs, then the dedicated flags.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Starting point: `full` (the full-scale defaults) or `desk`.
    #[arg(long, default_value = "full")]
    pub preset: String,
    /// TOML file layered over the preset; absent keys keep the preset value.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (run.output_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Learner seed (learner.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of training episodes (learner.episodes).
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub no_reshaping: bool,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_resampling: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        self.resolve_with_env(std::env::vars())
    }

    pub fn resolve_with_env<I: IntoIterator<Item = (String, String)>>(&self, vars: I) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            cfg = RunConfig::load_over(&cfg, path)?;
        }
        let env = RunConfig::env_overrides(vars);
        cfg = cfg.with_overrides(env.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let mut pairs = Vec::with_capacity(self.set.len());
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects SECTION.KEY=VALUE, got {s:?}")))?;
            pairs.push((k.trim(), v.trim()));
        }
        cfg = cfg.with_overrides(pairs)?;
        if let Some(o) = &self.out {
            cfg.run.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.learner.seed = s;
        }
        if let Some(e) = self.episodes {
            cfg.learner.episodes = e;
        }
        cfg.ablations.no_reshaping |= self.no_reshaping;
        cfg.ablations.no_attention |= self.no_attention;
        cfg.ablations.no_resampling |= self.no_resampling;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    /// Argmax of the trained actors.
    Greedy,
    /// Uniform over the seven actions.
    Random,
    /// Every vehicle holds station.
    Stay,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the learner; writes the resolved config, the episode log and a checkpoint.
    Train(ConfigArgs),
    /// Roll out a policy on the evaluation seeds and write the metrics report.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory holding config.toml and checkpoint.bin. Its config
        /// replaces the preset; --set and the other flags still apply.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Checkpoint path; defaults to checkpoint.bin in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolicyKind::Greedy)]
        policy: PolicyKind,
        /// Evaluation episodes (run.eval_episodes).
        #[arg(long = "eval-episodes")]
        eval_episodes: Option<usize>,
    },
    /// Train and evaluate the full method and each ablation on the ablation seeds.
    Ablate(ConfigArgs),
    /// Turn a run directory into trajectory files, CSV tables and SVG plots.
    Export {
        /// Run directory produced by train and evaluate.
        #[arg(long)]
        run: PathBuf,
        /// Destination; defaults to `<run>/export`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Formation plan for a vehicle profile table on a seeded world.
    Asma {
        #[command(flatten)]
        config: ConfigArgs,
        /// CSV of vehicle profiles, one row per vehicle.
        #[arg(long)]
        profiles: PathBuf,
        /// Seed of the world the plan is made for.
        #[arg(long = "world-seed", default_value_t = 0)]
        world_seed: u64,
    },
    /// Run the two-phase control protocol and write its JSON-lines trace.
    ProtocolTrace(ConfigArgs),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.resolve()?;
            cmd_train(&cfg, &mut progress).map(|_| ())
        }
        Command::Evaluate {
            config,
            run,
            checkpoint,
            policy,
            eval_episodes,
        } => {
            let mut cfg = match &run {
                Some(dir) => {
                    let mut args = config.clone();
                    args.config = Some(dir.join(CONFIG_FILE));
                    args.out = Some(config.out.clone().unwrap_or_else(|| dir.clone()));
                    args.resolve()?
                }
                None => config.resolve()?,
            };
            if let Some(n) = eval_episodes {
                cfg.run.eval_episodes = n;
                cfg.validate()?;
            }
            let ckpt = checkpoint.or_else(|| run.as_ref().map(|d| d.join(CHECKPOINT_FILE)));
            let report = cmd_evaluate(&cfg, ckpt.as_deref(), policy, run.as_deref())?;
            println!(
                "accuracy {:.4}  mean reward {:.4}  episodes {}  steps {}",
                report.accuracy, report.mean_reward, report.episodes, report.steps
            );
            Ok(())
        }
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            let rows = cmd_ablate(&cfg, &mut progress)?;
            for r in summarize(&rows) {
                println!(
                    "{:<14} reward {:.4} ± {:.4}  accuracy {:.4} ± {:.4}  (n={})",
                    r.variant, r.reward_mean, r.reward_se, r.accuracy_mean, r.accuracy_se, r.n
                );
            }
            Ok(())
        }
        Command::Export { run, out } => {
            let out = out.unwrap_or_else(|| run.join("export"));
            let files = cmd_export(&run, &out)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Asma {
            config,
            profiles,
            world_seed,
        } => {
            let cfg = config.resolve()?;
            let plan = cmd_asma(&cfg, &profiles, world_seed)?;
            println!("{}", serde_json::to_string_pretty(&plan)?);
            Ok(())
        }
        Command::ProtocolTrace(c) => {
            let cfg = c.resolve()?;
            let s = cmd_protocol_trace(&cfg)?;
            println!(
                "{} rounds, {} messages, {} lost; invariants hold",
                s.rounds, s.messages, s.lost
            );
            Ok(())
        }
    }
}

fn progress(line: &str) {
    eprintln!("{line}");
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn write_jsonl<'a, T: Serialize + 'a, I: IntoIterator<Item = &'a T>>(path: &Path, items: I) -> CliResult<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn planner(cfg: &RunConfig) -> CliResult<AsmaPlanner> {
    Ok(AsmaPlanner {
        profiles: cfg.profiles()?,
        config: cfg.asma.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    command: &'static str,
    wall_seconds: f64,
}

/// Trains under `cfg` and writes config, log, checkpoint and timing into
/// the output directory.
pub fn cmd_train(cfg: &RunConfig, report: &mut dyn FnMut(&str)) -> CliResult<Vec<EpisodeLog>> {
    let t0 = Instant::now();
    let dir = &cfg.run.output_dir;
    create_dir(dir)?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml_string()?).map_err(io_err(&cfg_path))?;
    let env = TrackingEnv::new(cfg.env_config())?;
    let mut l = Learner::new(cfg.learner.clone(), cfg.ablations, cfg.scenario.n_auvs, env.feature_dim())?;
    let mut plan = planner(cfg)?;
    let log_path = dir.join(LOG_FILE);
    let mut log = create(&log_path)?;
    let every = (cfg.learner.episodes / 20).max(1);
    let logs = train(&env, &mut l, &mut plan, |e| {
        serde_json::to_writer(&mut log, e).map_err(|x| dsbm_core::Error::Parse(x.to_string()))?;
        writeln!(log)?;
        if e.episode % every == 0 || e.episode == cfg.learner.episodes {
            report(&format!(
                "episode {:>6}  reward {:>9.4}  accuracy {:.3}  eps {:.3}  updates {}",
                e.episode, e.mean_reward, e.accuracy, e.epsilon, e.updates
            ));
        }
        Ok(())
    })?;
    log.flush().map_err(io_err(&log_path))?;
    checkpoint::save(&l.bundles, &dir.join(CHECKPOINT_FILE))?;
    write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            command: "train",
            wall_seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    Ok(logs)
}

/// Evaluates on `cfg.eval_seeds()` and writes metrics and trajectory. The
/// convergence curve is taken from a training log in `run_dir` when present.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint_path: Option<&Path>,
    kind: PolicyKind,
    run_dir: Option<&Path>,
) -> CliResult<MetricsReport> {
    let env = TrackingEnv::new(cfg.env_config())?;
    let mut policy: Box<dyn Policy> = match kind {
        PolicyKind::Greedy => {
            let path = checkpoint_path
                .ok_or_else(|| CliError::Usage("greedy evaluation needs --checkpoint or --run".into()))?;
            if !path.exists() {
                return Err(CliError::Usage(format!("checkpoint {} not found", path.display())));
            }
            let bundles = checkpoint::load(path, cfg.learner.learning_rate)?;
            if bundles.len() != env.n_auvs() || bundles[0].actor.input_dim() != env.feature_dim() {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained for a different fleet or observation layout",
                    path.display()
                )));
            }
            Box::new(GreedyPolicy {
                actors: bundles.into_iter().map(|b| b.actor).collect(),
            })
        }
        PolicyKind::Random => Box::new(RandomPolicy::new(cfg.run.eval_seed)),
        PolicyKind::Stay => Box::new(StayPolicy),
    };
    let mut plan = planner(cfg)?;
    let mut ev = evaluate(&env, policy.as_mut(), &mut plan, &cfg.eval_seeds(), true)?;
    if let Some(log) = run_dir.map(|d| d.join(LOG_FILE)).filter(|p| p.exists()) {
        let logs: Vec<EpisodeLog> = read_jsonl(&log)?;
        ev.report.convergence = logs.iter().map(|e| e.mean_reward).collect();
    }
    let dir = &cfg.run.output_dir;
    create_dir(dir)?;
    write_json(&dir.join(METRICS_FILE), &ev.report)?;
    write_jsonl(&dir.join(TRAJECTORY_FILE), &ev.trajectory)?;
    Ok(ev.report)
}

/// One ablation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    /// Mean unshaped reward over the last (up to) 20 training episodes.
    pub final_reward: f64,
    pub accuracy: f64,
    pub eval_reward: f64,
}

/// Mean and standard error over seeds of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variant: String,
    pub n: usize,
    pub reward_mean: f64,
    pub reward_se: f64,
    pub accuracy_mean: f64,
    pub accuracy_se: f64,
}

pub const VARIANTS: [(&str, Ablations); 4] = [
    (
        "full",
        Ablations {
            no_reshaping: false,
            no_attention: false,
            no_resampling: false,
        },
    ),
    (
        "no-reshaping",
        Ablations {
            no_reshaping: true,
            no_attention: false,
            no_resampling: false,
        },
    ),
    (
        "no-attention",
        Ablations {
            no_reshaping: false,
            no_attention: true,
            no_resampling: false,
        },
    ),
    (
        "no-resampling",
        Ablations {
            no_reshaping: false,
            no_attention: false,
            no_resampling: true,
        },
    ),
];

/// The full method and every ablation on the shared seeds. Evaluation
/// always reports the unshaped reward, so variants are compared on the same
/// objective.
pub fn cmd_ablate(cfg: &RunConfig, report: &mut dyn FnMut(&str)) -> CliResult<Vec<AblationRow>> {
    let t0 = Instant::now();
    let root = cfg.run.output_dir.clone();
    create_dir(&root)?;
    let mut rows = Vec::new();
    for (name, abl) in VARIANTS {
        for &seed in &cfg.run.ablation_seeds {
            let mut c = cfg.clone();
            c.ablations = abl;
            c.learner.seed = seed;
            c.run.output_dir = root.join(format!("{name}-seed{seed}"));
            report(&format!("{name} seed {seed}"));
            let logs = cmd_train(&c, &mut |_| {})?;
            let m = cmd_evaluate(
                &c,
                Some(&c.run.output_dir.join(CHECKPOINT_FILE)),
                PolicyKind::Greedy,
                Some(&c.run.output_dir),
            )?;
            let tail = &logs[logs.len().saturating_sub(20)..];
            rows.push(AblationRow {
                variant: name.into(),
                seed,
                final_reward: tail.iter().map(|e| e.mean_reward).sum::<f64>() / tail.len().max(1) as f64,
                accuracy: m.accuracy,
                eval_reward: m.mean_reward,
            });
        }
    }
    write_csv(&root.join("ablation.csv"), &rows)?;
    write_csv(&root.join("ablation_summary.csv"), &summarize(&rows))?;
    write_json(
        &root.join(TIMING_FILE),
        &Timing {
            command: "ablate",
            wall_seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    Ok(rows)
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|v| {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            let (reward_mean, reward_se) = mean_se(&sel.iter().map(|r| r.final_reward).collect::<Vec<_>>());
            let (accuracy_mean, accuracy_se) = mean_se(&sel.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            AblationSummary {
                variant: v.into(),
                n: sel.len(),
                reward_mean,
                reward_se,
                accuracy_mean,
                accuracy_se,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Check(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Check(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct CurveRow {
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct BinRow {
    bin_centre: f64,
    count: u64,
}

#[derive(Serialize)]
struct EnergyRow {
    step: usize,
    energy_spent: f64,
    battery: f64,
}

#[derive(Serialize)]
struct ConsistencyRow {
    class: &'static str,
    count: u64,
    fraction: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    accuracy: f64,
    mean_reward: f64,
    episodes: usize,
    steps: usize,
}

/// Writes trajectory, CSV tables and one SVG per report field. A field with
/// no data is an error rather than an empty file.
pub fn cmd_export(run: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let metrics_path = run.join(METRICS_FILE);
    if !metrics_path.exists() {
        return Err(CliError::NoData(format!(
            "{} is missing; run evaluate first",
            metrics_path.display()
        )));
    }
    let text = fs::read_to_string(&metrics_path).map_err(io_err(&metrics_path))?;
    let report: MetricsReport = serde_json::from_str(&text)?;
    let traj_path = run.join(TRAJECTORY_FILE);
    let trajectory: Vec<EntityRecord> = if traj_path.exists() { read_jsonl(&traj_path)? } else { Vec::new() };
    if trajectory.is_empty() {
        return Err(CliError::NoData(format!("{} holds no trajectory records", traj_path.display())));
    }
    create_dir(out)?;
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };

    write_jsonl(&emit("trajectory.jsonl"), &trajectory)?;

    let conv: Vec<CurveRow> = report
        .convergence
        .iter()
        .enumerate()
        .map(|(i, &v)| CurveRow { index: i + 1, value: v })
        .collect();
    let energy: Vec<EnergyRow> = report
        .energy_curve
        .iter()
        .zip(&report.battery_curve)
        .enumerate()
        .map(|(i, (&e, &b))| EnergyRow {
            step: i + 1,
            energy_spent: e,
            battery: b,
        })
        .collect();
    let c = report.consistency_counts;
    let total = c.total().max(1) as f64;
    let consistency = [
        ("all_different", c.all_different),
        ("two_alike", c.two_alike),
        ("all_alike", c.all_alike),
    ]
    .map(|(class, count)| ConsistencyRow {
        class,
        count,
        fraction: count as f64 / total,
    });
    let bins = |h: &Option<dsbm_core::metrics::Histogram>| -> Vec<BinRow> {
        h.as_ref()
            .map(|h| {
                h.bin_centres()
                    .into_iter()
                    .zip(&h.counts)
                    .map(|(b, &count)| BinRow { bin_centre: b, count })
                    .collect()
            })
            .unwrap_or_default()
    };
    let dist = bins(&report.distance_histogram);
    let vdiff = bins(&report.velocity_difference_histogram);

    write_csv(&emit("convergence.csv"), &conv)?;
    write_csv(&emit("distance_histogram.csv"), &dist)?;
    write_csv(&emit("velocity_difference_histogram.csv"), &vdiff)?;
    write_csv(&emit("consistency.csv"), &consistency)?;
    write_csv(&emit("energy.csv"), &energy)?;
    write_csv(
        &emit("summary.csv"),
        &[SummaryRow {
            accuracy: report.accuracy,
            mean_reward: report.mean_reward,
            episodes: report.episodes,
            steps: report.steps,
        }],
    )?;

    let xy = |v: &[f64]| -> Vec<(f64, f64)> { v.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect() };
    plot::line(&emit("convergence.svg"), "Mean reward per episode", "episode", "reward", &xy(&report.convergence))?;
    plot::bars(
        &emit("distance_histogram.svg"),
        "Vehicle-target distance",
        "distance / world scale",
        &dist.iter().map(|b| (b.bin_centre, b.count as f64)).collect::<Vec<_>>(),
    )?;
    plot::bars(
        &emit("velocity_difference_histogram.svg"),
        "Vehicle-target velocity difference",
        "|v_auv - v_target| / target speed cap",
        &vdiff.iter().map(|b| (b.bin_centre, b.count as f64)).collect::<Vec<_>>(),
    )?;
    if c.total() == 0 {
        return Err(CliError::NoData("no formation produced a consistency sample".into()));
    }
    plot::bars(
        &emit("consistency.svg"),
        "Strategy consistency (all different, two alike, all alike)",
        "class",
        &consistency.iter().enumerate().map(|(k, r)| (k as f64, r.fraction)).collect::<Vec<_>>(),
    )?;
    plot::line(&emit("energy.svg"), "Mean energy spent per vehicle", "step", "energy", &xy(&report.energy_curve))?;
    plot::line(&emit("battery.svg"), "Mean remaining battery per vehicle", "step", "battery", &xy(&report.battery_curve))?;
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub world_seed: u64,
    pub assignment: Vec<usize>,
    pub formations: Vec<Vec<usize>>,
    pub score: f64,
    pub method: dsbm_core::asma::SolveMethod,
    pub tied: bool,
}

/// Assignment for the vehicles in `profiles` on the world drawn from `world_seed`.
pub fn cmd_asma(cfg: &RunConfig, profiles: &Path, world_seed: u64) -> CliResult<PlanReport> {
    let f = File::open(profiles).map_err(io_err(profiles))?;
    let p = read_profiles(f)?;
    let mut c = cfg.clone();
    c.scenario.n_auvs = p.len();
    let env = TrackingEnv::new(c.env_config())?;
    let world = env.reset_seeded(world_seed);
    let a = assign(&score_matrix(&p, &world)?, &cfg.asma)?;
    Ok(PlanReport {
        world_seed,
        assignment: a.plan.assignment,
        formations: a.plan.formations,
        score: a.score,
        method: a.method,
        tied: a.tied,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolSummary {
    pub rounds: usize,
    pub messages: usize,
    pub lost: usize,
}

/// Runs the protocol under `cfg.protocol`; writes the message trace and the
/// per-round report. Fails if a round breaks an invariant.
pub fn cmd_protocol_trace(cfg: &RunConfig) -> CliResult<ProtocolSummary> {
    let p = &cfg.protocol;
    let mut plan = AsmaPlanner {
        profiles: dsbm_core::asma::default_profiles(p.executors),
        config: cfg.asma.clone(),
    };
    let run = run_protocol(p, &cfg.env_config(), |w| plan.plan(w))?;
    let dir = &cfg.run.output_dir;
    create_dir(dir)?;
    let trace_path = dir.join("protocol_trace.jsonl");
    fs::write(&trace_path, run.trace_jsonl()?).map_err(io_err(&trace_path))?;
    write_jsonl(&dir.join("protocol_rounds.jsonl"), &run.rounds)?;
    if let Some(r) = run.rounds.iter().find(|r| !(r.coverage && r.freshness && r.causality)) {
        return Err(CliError::Check(format!("protocol invariant broken in round {}", r.round)));
    }
    Ok(ProtocolSummary {
        rounds: run.rounds.len(),
        messages: run.trace.len(),
        lost: run.trace.iter().filter(|r| !r.delivered).count(),
    })
}
