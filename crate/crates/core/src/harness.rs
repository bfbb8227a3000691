//! Closed-loop evaluation: run configuration, start/goal cases, the
//! generate-prune-plan-step episode loop, method comparison and report
//! files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{collect_dataset, CollectConfig, Dataset};
use crate::diffusion::{train_diffusion, DiffusionConfig, SubgoalDiffusion};
use crate::mppi::{plan, MppiConfig, NominalPlan, Tracking};
use crate::reachability::{train_distance_model, DistanceConfig, DistanceModel};
use crate::seeds;
use crate::subgoal_planner::{
    generate_subgoals, prune_reached, should_regenerate, DiffusionSampler, GenerateOptions, Hierarchy,
};
use crate::world2d::{ChainState, Control, EnvConfig, EnvKind, EnvSpec, ObjectState, Shape, Vec2};
use crate::{Error, Result};

pub const CHAIN_BUDGET: usize = 200;
pub const MAZE_BUDGET: usize = 350;
/// Side of the mean-pooled SDF grid fed to the denoiser.
pub const SCENE_FEATURE_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    MppiOnly,
    FixedFinestResolution,
    NoCoarseToFine,
    NoRedistribution,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ours,
        Method::MppiOnly,
        Method::FixedFinestResolution,
        Method::NoCoarseToFine,
        Method::NoRedistribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::MppiOnly => "mppi_only",
            Method::FixedFinestResolution => "fixed_finest_resolution",
            Method::NoCoarseToFine => "no_coarse_to_fine",
            Method::NoRedistribution => "no_redistribution",
        }
    }

    /// Generation switches, or `None` when the method tracks the goal alone.
    pub fn generate_options(self) -> Option<GenerateOptions> {
        let full = GenerateOptions::default();
        match self {
            Method::Ours => Some(full),
            Method::MppiOnly => None,
            Method::FixedFinestResolution => Some(GenerateOptions {
                adaptive: false,
                ..full
            }),
            Method::NoCoarseToFine => Some(GenerateOptions {
                coarse_to_fine: false,
                ..full
            }),
            Method::NoRedistribution => Some(GenerateOptions {
                redistribute: false,
                ..full
            }),
        }
    }

    pub fn needs_models(self) -> bool {
        self.generate_options().is_some()
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// How evaluation start/goal pairs are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaseSpec {
    /// Point mass: start and goal uniform over free points of two boxes.
    Regions {
        start_min: Vec2,
        start_max: Vec2,
        goal_min: Vec2,
        goal_max: Vec2,
    },
    /// Start and goal are the final states of two independent
    /// data-collection rollouts of `steps` steps.
    Rollouts { steps: usize },
}

impl CaseSpec {
    /// In front of the mouth of [`EnvSpec::u_trap`] with the goal behind
    /// its closed end.
    pub fn u_trap() -> Self {
        CaseSpec::Regions {
            start_min: Vec2::new(-0.5, -0.15),
            start_max: Vec2::new(-0.35, 0.15),
            goal_min: Vec2::new(0.33, -0.15),
            goal_max: Vec2::new(0.48, 0.15),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactPaths {
    pub dataset: Option<PathBuf>,
    pub diffusion: Option<PathBuf>,
    pub distance: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub hierarchy: Hierarchy,
    #[serde(default)]
    pub mppi: MppiConfig,
    #[serde(default)]
    pub collect: CollectConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub distance: DistanceConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    /// Step budget per episode; defaults by environment kind.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_eps")]
    pub eps_success: f64,
    #[serde(default = "default_eps")]
    pub eps_reach: f64,
    #[serde(default = "default_cases")]
    pub n_cases: usize,
    #[serde(default)]
    pub cases: Option<CaseSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: ArtifactPaths,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_eps() -> f64 {
    0.05
}
fn default_cases() -> usize {
    10
}

impl RunConfig {
    pub fn new(env: EnvSpec) -> Self {
        Self {
            env,
            hierarchy: Hierarchy::default(),
            mppi: MppiConfig::default(),
            collect: CollectConfig::default(),
            diffusion: DiffusionConfig::default(),
            distance: DistanceConfig::default(),
            methods: all_methods(),
            budget: None,
            eps_success: default_eps(),
            eps_reach: default_eps(),
            n_cases: default_cases(),
            cases: None,
            seed: 0,
            paths: ArtifactPaths::default(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mppi.validate().map_err(Error::Config)?;
        if self.distance.horizon != self.mppi.horizon as f64 {
            return Err(Error::Config(format!(
                "reachability threshold {} must equal the MPPI horizon {}",
                self.distance.horizon, self.mppi.horizon
            )));
        }
        if !(self.eps_success >= 0.0 && self.eps_reach >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if matches!(self.case_spec(), CaseSpec::Regions { .. }) && self.env.kind != EnvKind::PointMass {
            return Err(Error::Config("region cases need a point-mass environment".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.budget.unwrap_or(match self.env.kind {
            EnvKind::Chain => CHAIN_BUDGET,
            EnvKind::PointMass => MAZE_BUDGET,
        })
    }

    pub fn case_spec(&self) -> CaseSpec {
        self.cases.clone().unwrap_or(match self.env.kind {
            EnvKind::PointMass => CaseSpec::u_trap(),
            EnvKind::Chain => CaseSpec::Rollouts { steps: 100 },
        })
    }
}

/// Trained models plus the scene feature the denoiser was trained with.
pub struct Models {
    pub diffusion: SubgoalDiffusion,
    pub distance: DistanceModel,
    pub scene_feature: Vec<f64>,
}

pub fn scene_feature(env: &EnvConfig) -> Vec<f64> {
    env.sdf.pooled_feature(SCENE_FEATURE_SIDE)
}

impl Models {
    pub fn load(diffusion: &Path, distance: &Path, env: &EnvConfig) -> Result<Self> {
        Ok(Self {
            diffusion: SubgoalDiffusion::load(diffusion)?,
            distance: DistanceModel::load(distance)?,
            scene_feature: scene_feature(env),
        })
    }
}

/// Trains both models on `dataset`.
pub fn train_models(env: &EnvConfig, dataset: &Dataset, cfg: &RunConfig, seed: u64) -> Result<Models> {
    let feature = scene_feature(env);
    let (diffusion, _) = train_diffusion(
        dataset,
        cfg.hierarchy.levels(),
        &feature,
        &cfg.diffusion,
        seeds::derive(seed, &[0]),
    )?;
    let (distance, _) = train_distance_model(dataset, &cfg.distance, seeds::derive(seed, &[1]))?;
    Ok(Models {
        diffusion,
        distance,
        scene_feature: feature,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub start: ChainState,
    pub goal: ObjectState,
}

pub fn make_cases(env: &EnvConfig, cfg: &RunConfig, seed: u64) -> Result<Vec<Case>> {
    (0..cfg.n_cases as u64)
        .map(|i| match cfg.case_spec() {
            CaseSpec::Regions {
                start_min,
                start_max,
                goal_min,
                goal_max,
            } => {
                let mut rng = seeds::rng(seed, &[i]);
                let start = free_point_in(env, start_min, start_max, &mut rng)?;
                let goal = free_point_in(env, goal_min, goal_max, &mut rng)?;
                Ok(Case {
                    start: env.point_state(start),
                    goal: ObjectState::new(vec![goal]),
                })
            }
            CaseSpec::Rollouts { steps } => {
                let rollout = |k: u64| -> Result<ObjectState> {
                    let c = CollectConfig {
                        n_traj: 1,
                        traj_len: steps + 1,
                        ..cfg.collect.clone()
                    };
                    let d = collect_dataset(env, &c, seeds::derive(seed, &[i, k]))?;
                    Ok(d.trajectories[0].states.last().expect("nonempty").clone())
                };
                let start = rollout(0)?;
                Ok(Case {
                    start: ChainState {
                        joints: start.points,
                        link_length: env.link_length,
                    },
                    goal: rollout(1)?,
                })
            }
        })
        .collect()
}

fn free_point_in<R: Rng>(env: &EnvConfig, lo: Vec2, hi: Vec2, rng: &mut R) -> Result<Vec2> {
    const TRIES: usize = 10_000;
    for _ in 0..TRIES {
        let p = Vec2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        if env.sdf_query(p) >= env.clearance {
            return Ok(p);
        }
    }
    Err(Error::NoFreeSpace(TRIES))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub goals: Vec<ObjectState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub method: Method,
    pub case: usize,
    /// Distance to the goal before each step and after the last one.
    pub distances: Vec<f64>,
    pub min_distance: f64,
    pub success: bool,
    /// Size of the generated chain in effect at each executed step.
    pub subgoal_counts: Vec<usize>,
    pub snapshots: Vec<Snapshot>,
    pub path: Vec<ObjectState>,
    pub goal: ObjectState,
    pub wall_clock_s: f64,
}

/// Runs one closed-loop episode until the goal is within `eps_success` or
/// the budget is spent.
pub fn run_episode(
    env: &EnvConfig,
    cfg: &RunConfig,
    models: Option<&Models>,
    method: Method,
    case_index: usize,
    case: &Case,
    seed: u64,
) -> Result<EpisodeReport> {
    let clock = Instant::now();
    let opts = method.generate_options();
    let models = match (opts, models) {
        (Some(_), None) => return Err(Error::Config(format!("method {} needs trained models", method.name()))),
        (_, m) => m,
    };
    if case.goal.len() != env.keypoints || !env.state_is_valid(&case.start) {
        return Err(Error::Config(format!(
            "case {case_index} does not fit environment {}",
            env.id
        )));
    }
    let mut state = case.start.clone();
    let mut object = env.keypoints(&state);
    let mut distances = vec![object.distance(&case.goal)];
    let mut path = vec![object.clone()];
    let mut counts = Vec::new();
    let mut snapshots = Vec::new();
    let mut chain: Vec<ObjectState> = Vec::new();
    let mut generated = 0;
    let mut nominal = NominalPlan::zeros(cfg.mppi.horizon);
    let mut prev = Control::ZERO;
    for step in 0..cfg.budget() {
        if *distances.last().expect("nonempty") <= cfg.eps_success {
            break;
        }
        if should_regenerate(step) {
            chain = match (opts, models) {
                (Some(opts), Some(m)) => {
                    let sampler = DiffusionSampler {
                        model: &m.diffusion,
                        sdf_feature: &m.scene_feature,
                    };
                    let out = generate_subgoals(
                        &object,
                        &case.goal,
                        &sampler,
                        &m.distance,
                        &cfg.hierarchy,
                        opts,
                        seeds::derive(seed, &[2, step as u64]),
                    )?;
                    out.goals
                }
                _ => vec![case.goal.clone()],
            };
            generated = chain.len();
            snapshots.push(Snapshot {
                step,
                goals: chain.clone(),
            });
        }
        chain = prune_reached(&chain, &object, cfg.eps_reach);
        counts.push(generated);
        let iterations = if step == 0 {
            cfg.mppi.iters_first
        } else {
            cfg.mppi.iters_later
        };
        let out = plan(
            env,
            &state,
            &chain,
            Tracking::Object,
            &cfg.mppi,
            &nominal,
            prev,
            iterations,
            seeds::derive(seed, &[1, step as u64]),
        );
        state = env.step(&state, out.control);
        object = env.keypoints(&state);
        prev = out.control;
        nominal = out.next_nominal;
        distances.push(object.distance(&case.goal));
        path.push(object.clone());
    }
    let min_distance = distances.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EpisodeReport {
        method,
        case: case_index,
        success: min_distance <= cfg.eps_success,
        distances,
        min_distance,
        subgoal_counts: counts,
        snapshots,
        path,
        goal: case.goal.clone(),
        wall_clock_s: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub mean: f64,
    pub std: f64,
}

pub struct SuiteResult {
    pub reports: Vec<EpisodeReport>,
    pub summary: Vec<SummaryRow>,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every configured method on the same seeded cases. Case `i` uses
/// episode seed `derive(seed, [1, i])` for every method.
pub fn evaluate_suite(env: &EnvConfig, cfg: &RunConfig, models: Option<&Models>, seed: u64) -> Result<SuiteResult> {
    let cases = make_cases(env, cfg, seeds::derive(seed, &[0]))?;
    evaluate_cases(env, cfg, models, &cases, seed)
}

pub fn evaluate_cases(
    env: &EnvConfig,
    cfg: &RunConfig,
    models: Option<&Models>,
    cases: &[Case],
    seed: u64,
) -> Result<SuiteResult> {
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for &method in &cfg.methods {
        let mut mins = Vec::with_capacity(cases.len());
        for (i, case) in cases.iter().enumerate() {
            let r = run_episode(env, cfg, models, method, i, case, seeds::derive(seed, &[1, i as u64]))?;
            mins.push(r.min_distance);
            reports.push(r);
        }
        let (mean, std) = mean_std(&mins);
        summary.push(SummaryRow { method, mean, std });
    }
    Ok(SuiteResult { reports, summary })
}

pub fn format_table(summary: &[SummaryRow]) -> String {
    let mut s = format!("{:<24} {:>10} {:>10}\n", "method", "mean", "std");
    for r in summary {
        let _ = writeln!(s, "{:<24} {:>10.4} {:>10.4}", r.method.name(), r.mean, r.std);
    }
    s
}

/// `results.csv`: `method,case,step,distance`, one row per recorded step.
pub fn results_csv(reports: &[EpisodeReport]) -> String {
    let mut s = String::from("method,case,step,distance\n");
    for r in reports {
        for (t, d) in r.distances.iter().enumerate() {
            let _ = writeln!(s, "{},{},{t},{d}", r.method.name(), r.case);
        }
    }
    s
}

/// `summary.csv`: `row,method,case,value,std`. `case` rows hold each
/// episode's minimum distance; `summary` rows hold the per-method mean and
/// standard deviation.
pub fn summary_csv(reports: &[EpisodeReport], summary: &[SummaryRow]) -> String {
    let mut s = String::from("row,method,case,value,std\n");
    for r in reports {
        let _ = writeln!(s, "case,{},{},{},", r.method.name(), r.case, r.min_distance);
    }
    for row in summary {
        let _ = writeln!(s, "summary,{},,{},{}", row.method.name(), row.mean, row.std);
    }
    s
}

fn points_attr<'a>(pts: impl Iterator<Item = &'a Vec2>) -> String {
    pts.map(|p| format!("{:.4},{:.4}", p.x, -p.y))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Workspace, obstacles, gripper path, goal and one `subgoals` polyline
/// (through each subgoal's last keypoint) per generated chain.
pub fn episode_svg(obstacles: &[Shape], report: &EpisodeReport) -> String {
    let mut s = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"-1.05 -1.05 2.1 2.1\" width=\"600\" height=\"600\">\n\
         <rect x=\"-1\" y=\"-1\" width=\"2\" height=\"2\" fill=\"white\" stroke=\"black\" stroke-width=\"0.01\"/>\n",
    );
    for o in obstacles {
        match o {
            Shape::Box { min, max } => {
                let _ = writeln!(
                    s,
                    "<rect class=\"obstacle\" x=\"{:.4}\" y=\"{:.4}\" width=\"{:.4}\" height=\"{:.4}\" fill=\"gray\"/>",
                    min.x,
                    -max.y,
                    max.x - min.x,
                    max.y - min.y
                );
            }
            Shape::Disk { center, radius } => {
                let _ = writeln!(
                    s,
                    "<circle class=\"obstacle\" cx=\"{:.4}\" cy=\"{:.4}\" r=\"{:.4}\" fill=\"gray\"/>",
                    center.x, -center.y, radius
                );
            }
        }
    }
    for snap in &report.snapshots {
        let pts: Vec<Vec2> = snap.goals.iter().filter_map(|g| g.points.last().copied()).collect();
        let _ = writeln!(
            s,
            "<polyline class=\"subgoals\" data-step=\"{}\" points=\"{}\" fill=\"none\" stroke=\"orange\" stroke-width=\"0.006\" stroke-opacity=\"0.6\"/>",
            snap.step,
            points_attr(pts.iter())
        );
    }
    let grip: Vec<Vec2> = report.path.iter().filter_map(|o| o.points.last().copied()).collect();
    let _ = writeln!(
        s,
        "<polyline class=\"trajectory\" points=\"{}\" fill=\"none\" stroke=\"blue\" stroke-width=\"0.008\"/>",
        points_attr(grip.iter())
    );
    if let Some(last) = report.path.last() {
        let _ = writeln!(
            s,
            "<polyline class=\"final\" points=\"{}\" fill=\"none\" stroke=\"blue\" stroke-width=\"0.012\"/>",
            points_attr(last.points.iter())
        );
    }
    let _ = writeln!(
        s,
        "<polyline class=\"goal\" points=\"{}\" fill=\"none\" stroke=\"green\" stroke-width=\"0.012\"/>",
        points_attr(report.goal.points.iter())
    );
    for p in &report.goal.points {
        let _ = writeln!(
            s,
            "<circle class=\"goal\" cx=\"{:.4}\" cy=\"{:.4}\" r=\"0.015\" fill=\"green\"/>",
            p.x, -p.y
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `results.csv`, `summary.csv` and `episode_<method>_<case>.svg`
/// per report into `out_dir`. Returns the written paths.
pub fn emit_report(
    out_dir: &Path,
    obstacles: &[Shape],
    reports: &[EpisodeReport],
    summary: &[SummaryRow],
) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Config("no episode reports to write".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("results.csv".into(), results_csv(reports))?;
    put("summary.csv".into(), summary_csv(reports, summary))?;
    for r in reports {
        put(
            format!("episode_{}_{}.svg", r.method.name(), r.case),
            episode_svg(obstacles, r),
        )?;
    }
    Ok(written)
}
