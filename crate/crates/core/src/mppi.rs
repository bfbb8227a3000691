//! Sampling-based MPC (MPPI) with a goal-set cost and warm starting.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seeds;
use crate::world2d::{ChainState, Control, EnvConfig, ObjectState, SdfGrid, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    pub n_samples: usize,
    pub horizon: usize,
    /// Standard deviation of the Gaussian action perturbation, per
    /// coordinate, in workspace units.
    pub noise_scale: f64,
    /// Temperature used when weighting sampled rollouts.
    pub temperature: f64,
    pub lambda_remote: f64,
    pub gamma: f64,
    pub lambda_col: f64,
    pub lambda_smooth: f64,
    pub iters_first: usize,
    pub iters_later: usize,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            n_samples: 80,
            horizon: 10,
            noise_scale: 0.004,
            temperature: 0.02,
            lambda_remote: 0.02,
            gamma: 0.6,
            lambda_col: 10.0,
            lambda_smooth: 0.001,
            iters_first: 5,
            iters_later: 2,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_samples == 0 || self.horizon == 0 {
            return Err("MPPI needs at least one sample and a positive horizon".into());
        }
        if !(self.temperature > 0.0) || self.noise_scale < 0.0 {
            return Err("MPPI temperature must be positive and noise non-negative".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.lambda_remote < 0.0 || self.lambda_col < 0.0 || self.lambda_smooth < 0.0 {
            return Err("cost weights must be non-negative".into());
        }
        Ok(())
    }

    /// Remoteness bonus `lambda_remote * (1 - gamma^i) / (1 - gamma)` for
    /// chain position `i`.
    pub fn remoteness_bonus(&self, i: usize) -> f64 {
        self.lambda_remote * (1.0 - self.gamma.powi(i as i32)) / (1.0 - self.gamma)
    }
}

/// Which part of the state is compared against the goal set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tracking {
    /// All object keypoints.
    Object,
    /// Only the gripper position (single-point goals).
    Gripper,
}

impl Tracking {
    fn features<'s>(&self, s: &'s ChainState) -> &'s [Vec2] {
        match self {
            Tracking::Object => &s.joints,
            Tracking::Gripper => std::slice::from_ref(s.joints.last().expect("non-empty state")),
        }
    }
}

/// Warm-started nominal control sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalPlan {
    pub controls: Vec<Control>,
}

impl NominalPlan {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            controls: vec![Control::ZERO; horizon],
        }
    }

    /// Drops the first control and repeats the last one.
    pub fn shifted(&self) -> Self {
        let mut controls: Vec<Control> = self.controls.iter().skip(1).copied().collect();
        if let Some(&last) = self.controls.last() {
            controls.push(last);
        }
        Self { controls }
    }
}

fn squared_distance(a: &[Vec2], b: &ObjectState) -> f64 {
    a.iter().zip(&b.points).map(|(p, q)| (*p - *q).norm_sq()).sum()
}

/// Cost of one rollout step.
fn step_cost(
    features: &[Vec2],
    gripper: Vec2,
    u: Control,
    u_prev: Control,
    chain: &[ObjectState],
    bonuses: &[f64],
    sdf: &SdfGrid,
    cfg: &MppiConfig,
) -> f64 {
    let goal_term = chain
        .iter()
        .zip(bonuses)
        .map(|(g, b)| squared_distance(features, g) - b)
        .fold(f64::INFINITY, f64::min);
    let collision = cfg.lambda_col * (-sdf.query(gripper)).max(0.0);
    let smooth = cfg.lambda_smooth * (u.du - u_prev.du).norm_sq();
    goal_term + collision + smooth
}

/// Goal-set cost of a rollout:
/// `sum_t min_i(|o_t - g_i|^2 - lambda_remote (1 - gamma^i)/(1 - gamma))
///  + lambda_col max(-SDF(r_t), 0) + lambda_smooth |u_t - u_{t-1}|^2`.
///
/// `states[t]` and `grippers[t]` are the object keypoints and gripper after
/// applying `controls[t]`; `prev_control` is `u_{-1}`.
pub fn chain_cost(
    states: &[ObjectState],
    grippers: &[Vec2],
    controls: &[Control],
    prev_control: Control,
    chain: &[ObjectState],
    sdf: &SdfGrid,
    cfg: &MppiConfig,
) -> f64 {
    assert!(!chain.is_empty(), "goal chain must not be empty");
    assert_eq!(states.len(), controls.len());
    assert_eq!(grippers.len(), controls.len());
    let bonuses: Vec<f64> = (0..chain.len()).map(|i| cfg.remoteness_bonus(i)).collect();
    let mut prev = prev_control;
    let mut total = 0.0;
    for ((o, &r), &u) in states.iter().zip(grippers).zip(controls) {
        total += step_cost(&o.points, r, u, prev, chain, &bonuses, sdf, cfg);
        prev = u;
    }
    total
}

/// Softmax of `-(C - min C) / temperature`.
pub fn weights(costs: &[f64], temperature: f64) -> Vec<f64> {
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|c| (-(c - min) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

#[derive(Clone, Debug)]
pub struct PlanOutput {
    pub control: Control,
    pub next_nominal: NominalPlan,
    /// Refined nominal before shifting.
    pub refined: NominalPlan,
    /// Lowest sampled cost in the final iteration (NaN with no iterations).
    pub best_cost: f64,
}

/// Runs `iterations` rounds of MPPI refinement around `nominal` and returns
/// the first control plus the time-shifted warm start.
///
/// Every sample draws its noise from its own stream derived from
/// `(seed, iteration, sample)`.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    env: &EnvConfig,
    state: &ChainState,
    chain: &[ObjectState],
    tracking: Tracking,
    cfg: &MppiConfig,
    nominal: &NominalPlan,
    prev_control: Control,
    iterations: usize,
    seed: u64,
) -> PlanOutput {
    assert!(!chain.is_empty(), "goal chain must not be empty");
    let h = cfg.horizon;
    let mut nominal: Vec<Control> = nominal.controls.iter().map(|c| c.clamped(env.u_max)).collect();
    nominal.resize(h, nominal.last().copied().unwrap_or(Control::ZERO));
    let bonuses: Vec<f64> = (0..chain.len()).map(|i| cfg.remoteness_bonus(i)).collect();
    let n = cfg.n_samples;
    let mut perturbations = vec![Vec2::ZERO; n * h];
    let mut costs = vec![0.0; n];
    let mut best_cost = f64::NAN;

    for iter in 0..iterations {
        for j in 0..n {
            let mut rng = seeds::rng(seed, &[iter as u64, j as u64]);
            let mut s = state.clone();
            let mut prev = prev_control;
            let mut cost = 0.0;
            for t in 0..h {
                let ex: f64 = StandardNormal.sample(&mut rng);
                let ey: f64 = StandardNormal.sample(&mut rng);
                let noisy = Control {
                    du: nominal[t].du + Vec2::new(ex, ey) * cfg.noise_scale,
                }
                .clamped(env.u_max);
                perturbations[j * h + t] = noisy.du - nominal[t].du;
                s = env.step(&s, noisy);
                cost += step_cost(
                    tracking.features(&s),
                    s.gripper(),
                    noisy,
                    prev,
                    chain,
                    &bonuses,
                    &env.sdf,
                    cfg,
                );
                prev = noisy;
            }
            costs[j] = cost;
        }
        best_cost = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let w = weights(&costs, cfg.temperature);
        for (t, u) in nominal.iter_mut().enumerate() {
            let mut delta = Vec2::ZERO;
            for (j, wj) in w.iter().enumerate() {
                delta += perturbations[j * h + t] * *wj;
            }
            *u = Control { du: u.du + delta }.clamped(env.u_max);
        }
    }

    let refined = NominalPlan { controls: nominal };
    PlanOutput {
        control: refined.controls[0],
        next_nominal: refined.shifted(),
        refined,
        best_cost,
    }
}
