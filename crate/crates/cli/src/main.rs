use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use subgoal_mpc::datastore::{collect_dataset, Dataset};
use subgoal_mpc::diffusion::train_diffusion;
use subgoal_mpc::harness::{
    emit_report, evaluate_suite, format_table, make_cases, mean_std, run_episode, scene_feature, Models, RunConfig,
    SummaryRow,
};
use subgoal_mpc::reachability::train_distance_model;
use subgoal_mpc::world2d::EnvConfig;
use subgoal_mpc::Error;

/// Diffusion subgoals guiding sampling-based MPC on planar tasks.
#[derive(Parser)]
#[command(name = "subgoal-mpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: dataset file, checkpoint stem or report directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Collect the random-policy dataset.
    Collect,
    /// Train the subgoal diffusion model on the dataset.
    TrainDiffusion,
    /// Train the travel-time classifier on the dataset.
    TrainDistance,
    /// Evaluate every configured method on the seeded cases.
    Eval,
    /// Run the first configured method on the first case.
    Demo,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| config_error("--config is required"))?;
    let mut cfg = RunConfig::from_json_file(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Resolves an output path and creates its parent directory.
fn output(cli: &Cli, configured: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let out = cli
        .out
        .clone()
        .or_else(|| configured.cloned())
        .ok_or_else(|| config_error(format!("no {what} path: pass --out or set it in the config")))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(out)
}

fn input<'a>(configured: Option<&'a PathBuf>, what: &str) -> Result<&'a Path> {
    configured
        .map(PathBuf::as_path)
        .ok_or_else(|| config_error(format!("config does not name a {what} path")))
}

fn load_dataset(cfg: &RunConfig, env: &EnvConfig) -> Result<Dataset> {
    let path = input(cfg.paths.dataset.as_ref(), "dataset")?;
    let ds = Dataset::read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    ds.verify(env)?;
    Ok(ds)
}

fn load_models(cfg: &RunConfig, env: &EnvConfig) -> Result<Option<Models>> {
    if !cfg.methods.iter().any(|m| m.needs_models()) {
        return Ok(None);
    }
    let diffusion = input(cfg.paths.diffusion.as_ref(), "diffusion checkpoint")?;
    let distance = input(cfg.paths.distance.as_ref(), "distance checkpoint")?;
    let models = Models::load(diffusion, distance, env).context("loading checkpoints")?;
    Ok(Some(models))
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let env = cfg.env.build()?;
    let clock = Instant::now();
    match cli.command {
        Command::Collect => {
            let out = output(cli, cfg.paths.dataset.as_ref(), "dataset")?;
            let ds = collect_dataset(&env, &cfg.collect, cfg.seed)?;
            ds.write_jsonl(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{} trajectories -> {}", ds.trajectories.len(), out.display());
        }
        Command::TrainDiffusion => {
            let out = output(cli, cfg.paths.diffusion.as_ref(), "diffusion checkpoint")?;
            let ds = load_dataset(cfg, &env)?;
            let (model, losses) = train_diffusion(
                &ds,
                cfg.hierarchy.levels(),
                &scene_feature(&env),
                &cfg.diffusion,
                cfg.seed,
            )?;
            model.save(&out)?;
            report_losses(&losses, &out);
        }
        Command::TrainDistance => {
            let out = output(cli, cfg.paths.distance.as_ref(), "distance checkpoint")?;
            let ds = load_dataset(cfg, &env)?;
            let (model, losses) = train_distance_model(&ds, &cfg.distance, cfg.seed)?;
            model.save(&out)?;
            report_losses(&losses, &out);
        }
        Command::Eval => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("eval_out"));
            let models = load_models(cfg, &env)?;
            let suite = evaluate_suite(&env, cfg, models.as_ref(), cfg.seed)?;
            emit_report(&out, &cfg.env.obstacles, &suite.reports, &suite.summary)?;
            print!("{}", format_table(&suite.summary));
            println!("reports -> {}", out.display());
        }
        Command::Demo => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("demo_out"));
            let method = cfg.methods[0];
            let demo_cfg = RunConfig {
                methods: vec![method],
                n_cases: 1,
                ..cfg.clone()
            };
            let models = load_models(&demo_cfg, &env)?;
            let case = make_cases(&env, &demo_cfg, subgoal_mpc::seeds::derive(cfg.seed, &[0]))?.remove(0);
            let report = run_episode(&env, &demo_cfg, models.as_ref(), method, 0, &case, cfg.seed)?;
            let (mean, std) = mean_std(&[report.min_distance]);
            println!(
                "{}: min distance {:.4} after {} steps, success {}",
                method.name(),
                report.min_distance,
                report.distances.len() - 1,
                report.success
            );
            emit_report(&out, &cfg.env.obstacles, &[report], &[SummaryRow { method, mean, std }])?;
            println!("reports -> {}", out.display());
        }
    }
    eprintln!("done in {:.1}s", clock.elapsed().as_secs_f64());
    Ok(())
}

fn report_losses(losses: &[f64], out: &Path) {
    let tail = &losses[losses.len().saturating_sub(100)..];
    let last = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    println!("{} steps, final loss {last:.4} -> {}", losses.len(), out.display());
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_config))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_config_error(&e) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
