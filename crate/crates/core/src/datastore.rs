//! Offline random-policy dataset: collection, JSONL persistence and batch
//! sampling for the diffusion and distance models.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mppi::{plan, MppiConfig, NominalPlan, Tracking};
use crate::seeds;
use crate::world2d::{ChainState, Control, EnvConfig, EnvKind, ObjectState, Vec2};
use crate::{Error, Result};

pub const FORMAT: &str = "subgoal-mpc/v1";
/// Number of travel-time bins; longer gaps land in the last bin.
pub const DISTANCE_BINS: usize = 40;
/// Gaps are drawn up to this many steps so the last bin sees real mass.
pub const MAX_GAP: usize = 80;
/// Longest truncation used for subgoal targets.
pub const MAX_TRUNCATION: usize = 100;
pub const REPLAY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_id: String,
    pub states: Vec<ObjectState>,
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Re-steps every stored control and compares against the stored
    /// successor state.
    pub fn replay_check(&self, env: &EnvConfig, index: usize) -> Result<()> {
        if self.controls.len() + 1 != self.states.len() {
            return Err(Error::Dataset(format!(
                "trajectory {index}: {} states but {} controls",
                self.states.len(),
                self.controls.len()
            )));
        }
        for (t, u) in self.controls.iter().enumerate() {
            let s = ChainState {
                joints: self.states[t].points.clone(),
                link_length: env.link_length,
            };
            let next = env.step(&s, *u);
            let deviation = next
                .joints
                .iter()
                .zip(&self.states[t + 1].points)
                .map(|(a, b)| a.distance(*b))
                .fold(0.0, f64::max);
            if !(deviation <= REPLAY_TOL) {
                return Err(Error::Replay {
                    index,
                    step: t,
                    deviation,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            lo: [-1.0, -1.0],
            hi: [1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    #[serde(rename = "K")]
    pub keypoints: usize,
    pub traj_len: usize,
    pub normalization: Normalization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header: DatasetHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Dataset("empty dataset file".into())),
        };
        if header.format != FORMAT {
            return Err(Error::Dataset(format!("unknown dataset format {:?}", header.format)));
        }
        let mut trajectories = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line)?;
            if t.states.iter().any(|s| s.len() != header.keypoints) {
                return Err(Error::Dataset("state with the wrong number of keypoints".into()));
            }
            trajectories.push(t);
        }
        Ok(Self { header, trajectories })
    }

    /// Replay-checks every trajectory against `env`.
    pub fn verify(&self, env: &EnvConfig) -> Result<()> {
        self.trajectories
            .iter()
            .enumerate()
            .try_for_each(|(i, t)| t.replay_check(env, i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub n_traj: usize,
    pub traj_len: usize,
    /// Steps spent on one target before a new one is drawn.
    pub retarget_steps: usize,
    /// Gripper distance at which a target counts as reached.
    pub target_tol: f64,
    pub mppi: MppiConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_traj: 2000,
            traj_len: 100,
            retarget_steps: 30,
            target_tol: 0.05,
            mppi: MppiConfig {
                n_samples: 30,
                iters_first: 3,
                iters_later: 1,
                ..MppiConfig::default()
            },
        }
    }
}

/// Runs the random target-reaching policy and records `n_traj`
/// trajectories of `traj_len` states each.
pub fn collect_dataset(env: &EnvConfig, cfg: &CollectConfig, seed: u64) -> Result<Dataset> {
    if cfg.traj_len < 2 || cfg.retarget_steps == 0 {
        return Err(Error::Config(
            "traj_len must be at least 2 and retarget_steps positive".into(),
        ));
    }
    cfg.mppi.validate().map_err(Error::Config)?;
    let mut trajectories = Vec::with_capacity(cfg.n_traj);
    for i in 0..cfg.n_traj {
        let t = collect_trajectory(env, cfg, seeds::derive(seed, &[i as u64]))?;
        t.replay_check(env, i)?;
        trajectories.push(t);
    }
    Ok(Dataset {
        header: DatasetHeader {
            format: FORMAT.into(),
            keypoints: env.keypoints,
            traj_len: cfg.traj_len,
            normalization: Normalization::default(),
        },
        trajectories,
    })
}

fn collect_trajectory(env: &EnvConfig, cfg: &CollectConfig, seed: u64) -> Result<Trajectory> {
    let mut rng = seeds::rng(seed, &[0]);
    let mut s = match env.kind {
        EnvKind::Chain => env.rest_state(),
        EnvKind::PointMass => env.point_state(env.sample_free_target_with(&mut rng)?),
    };
    let mut states = vec![env.keypoints(&s)];
    let mut controls = Vec::with_capacity(cfg.traj_len - 1);
    let mut prev = Control::ZERO;
    while states.len() < cfg.traj_len {
        let target = ObjectState::new(vec![env.sample_free_target_with(&mut rng)?]);
        let mut nominal = NominalPlan::zeros(cfg.mppi.horizon);
        for k in 0..cfg.retarget_steps {
            if states.len() >= cfg.traj_len {
                break;
            }
            let iters = if k == 0 {
                cfg.mppi.iters_first
            } else {
                cfg.mppi.iters_later
            };
            let out = plan(
                env,
                &s,
                std::slice::from_ref(&target),
                Tracking::Gripper,
                &cfg.mppi,
                &nominal,
                prev,
                iters,
                seeds::derive(seed, &[1, states.len() as u64]),
            );
            s = env.step(&s, out.control);
            states.push(env.keypoints(&s));
            controls.push(out.control);
            prev = out.control;
            nominal = out.next_nominal;
            if s.gripper().distance(target.points[0]) <= cfg.target_tol {
                break;
            }
        }
    }
    Ok(Trajectory {
        env_id: env.id.clone(),
        states,
        controls,
    })
}

/// One training example for a hierarchy level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgoalBatch {
    pub current: ObjectState,
    pub goal: ObjectState,
    /// `M_l` equally spaced states; first is `current`, last is `goal`.
    pub targets: Vec<ObjectState>,
    /// `M_{l-1}` equally spaced states with Gaussian noise added.
    pub conditioning: Vec<ObjectState>,
    pub level: usize,
    pub sdf_feature: Vec<f64>,
}

/// `m` indices spread evenly over `t0..=t0+span`, rounded to nearest.
pub fn equal_spacing(t0: usize, span: usize, m: usize) -> Vec<usize> {
    if m == 1 {
        return vec![t0];
    }
    (0..m)
        .map(|j| t0 + (j as f64 * span as f64 / (m - 1) as f64).round() as usize)
        .collect()
}

fn check_hierarchy(hierarchy: &[usize]) -> Result<()> {
    if hierarchy.len() < 2 || hierarchy[0] != 2 || hierarchy.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config(format!(
            "hierarchy must be nondecreasing, start at 2 and have at least two levels, got {hierarchy:?}"
        )));
    }
    Ok(())
}

/// Draws training examples: a level uniform over `1..L`, a truncation of a
/// trajectory and equally spaced targets and conditioning within it.
pub fn sample_subgoal_batch(
    dataset: &Dataset,
    hierarchy: &[usize],
    batch_size: usize,
    sigma_cond: f64,
    sdf_feature: &[f64],
    seed: u64,
) -> Result<Vec<SubgoalBatch>> {
    check_hierarchy(hierarchy)?;
    let longest = dataset.trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
    let finest = *hierarchy.last().expect("checked");
    if longest < finest + 1 {
        return Err(Error::Dataset(format!(
            "trajectories need more than {finest} states, longest has {longest}"
        )));
    }
    let mut rng = seeds::rng(seed, &[]);
    let mut out = Vec::with_capacity(batch_size);
    while out.len() < batch_size {
        let level = rng.random_range(1..hierarchy.len());
        let (m, m_prev) = (hierarchy[level], hierarchy[level - 1]);
        let traj = &dataset.trajectories[rng.random_range(0..dataset.trajectories.len())];
        if traj.len() < m + 1 {
            continue;
        }
        let span = rng.random_range(m..=MAX_TRUNCATION.min(traj.len() - 1).max(m));
        let t0 = rng.random_range(0..=traj.len() - 1 - span);
        let targets: Vec<ObjectState> = equal_spacing(t0, span, m)
            .into_iter()
            .map(|i| traj.states[i].clone())
            .collect();
        let conditioning = equal_spacing(t0, span, m_prev)
            .into_iter()
            .map(|i| {
                let points = traj.states[i]
                    .points
                    .iter()
                    .map(|p| {
                        let nx: f64 = StandardNormal.sample(&mut rng);
                        let ny: f64 = StandardNormal.sample(&mut rng);
                        *p + Vec2::new(nx, ny) * sigma_cond
                    })
                    .collect();
                ObjectState::new(points)
            })
            .collect();
        out.push(SubgoalBatch {
            current: traj.states[t0].clone(),
            goal: traj.states[t0 + span].clone(),
            targets,
            conditioning,
            level,
            sdf_feature: sdf_feature.to_vec(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistancePair {
    pub a: ObjectState,
    pub b: ObjectState,
    /// Step gap clipped to `1..=DISTANCE_BINS`.
    pub k: usize,
    /// Unclipped step gap.
    pub gap: usize,
}

/// Label for a step gap: the gap itself, with everything past the last bin
/// folded into it.
pub fn distance_label(gap: usize) -> usize {
    gap.clamp(1, DISTANCE_BINS)
}

pub fn sample_distance_pairs(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<DistancePair>> {
    let usable: Vec<&Trajectory> = dataset.trajectories.iter().filter(|t| t.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Dataset("no trajectory with at least two states".into()));
    }
    let mut rng = seeds::rng(seed, &[]);
    Ok((0..batch_size)
        .map(|_| {
            let t = usable[rng.random_range(0..usable.len())];
            let i = rng.random_range(0..t.len() - 1);
            let gap = rng.random_range(1..=(t.len() - 1 - i).min(MAX_GAP));
            DistancePair {
                a: t.states[i].clone(),
                b: t.states[i + gap].clone(),
                k: distance_label(gap),
                gap,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_examples() {
        assert_eq!(equal_spacing(0, 8, 3), vec![0, 4, 8]);
        assert_eq!(equal_spacing(5, 20, 2), vec![5, 25]);
        assert_eq!(equal_spacing(0, 10, 4), vec![0, 3, 7, 10]);
    }

    #[test]
    fn labels_clip() {
        assert_eq!(distance_label(5), 5);
        assert_eq!(distance_label(60), 40);
        assert_eq!(distance_label(40), 40);
    }

    #[test]
    fn hierarchy_validation() {
        assert!(check_hierarchy(&[2, 3, 5]).is_ok());
        assert!(check_hierarchy(&[3, 5]).is_err());
        assert!(check_hierarchy(&[2]).is_err());
        assert!(check_hierarchy(&[2, 5, 3]).is_err());
    }
}
