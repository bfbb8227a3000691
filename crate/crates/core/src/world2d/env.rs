use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geom::{ObjectState, Vec2};
use super::sdf::{rasterize, SdfGrid, Shape};
use crate::error::{Error, Result};

/// Joints may sit this far inside an obstacle after a step.
pub const PENETRATION_TOL: f64 = 1e-3;
/// Steps are only accepted if every joint clears this bound, leaving
/// headroom under [`PENETRATION_TOL`].
const ACCEPT_SDF: f64 = -0.5 * PENETRATION_TOL;
const MAX_FREE_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Fixed-base kinematic chain whose last joint is the gripper.
    Chain,
    /// A single point that is both object and gripper.
    PointMass,
}

/// Change in gripper position for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Control {
    pub du: Vec2,
}

impl Control {
    pub const ZERO: Control = Control { du: Vec2::ZERO };

    pub fn new(dx: f64, dy: f64) -> Self {
        Self { du: Vec2::new(dx, dy) }
    }

    pub fn clamped(self, u_max: f64) -> Self {
        Self {
            du: self.du.clamp_norm(u_max),
        }
    }
}

/// Joint positions; joint 0 is the fixed base for chains and the single
/// point for the point mass. The last joint is always the gripper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub joints: Vec<Vec2>,
    pub link_length: f64,
}

impl ChainState {
    pub fn gripper(&self) -> Vec2 {
        *self.joints.last().expect("state has at least one joint")
    }

    pub fn max_link_error(&self) -> f64 {
        self.joints
            .windows(2)
            .map(|w| ((w[1] - w[0]).norm() - self.link_length).abs())
            .fold(0.0, f64::max)
    }
}

/// Serializable description of an environment; [`EnvSpec::build`]
/// rasterizes the obstacles into the SDF used at runtime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub kind: EnvKind,
    #[serde(default = "default_keypoints")]
    pub keypoints: usize,
    #[serde(default = "default_link_length")]
    pub link_length: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_projection_iters")]
    pub projection_iters: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    /// Chain base, fixed for the whole episode.
    #[serde(default)]
    pub base: Vec2,
    /// Direction (radians) of the straight rest configuration.
    #[serde(default)]
    pub rest_heading: f64,
    #[serde(default)]
    pub obstacles: Vec<Shape>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_keypoints() -> usize {
    10
}
fn default_link_length() -> f64 {
    0.1
}
fn default_u_max() -> f64 {
    0.02
}
fn default_projection_iters() -> usize {
    20
}
fn default_margin() -> f64 {
    0.01
}
fn default_clearance() -> f64 {
    0.05
}
fn default_resolution() -> usize {
    89
}

impl EnvSpec {
    pub fn build(&self) -> Result<EnvConfig> {
        if self.resolution < 2 {
            return Err(Error::Config("SDF resolution must be at least 2".into()));
        }
        let sdf = rasterize(&self.obstacles, self.resolution)?;
        let env = EnvConfig {
            id: self.id.clone(),
            kind: self.kind,
            keypoints: if self.kind == EnvKind::PointMass {
                1
            } else {
                self.keypoints
            },
            link_length: self.link_length,
            u_max: self.u_max,
            sdf,
            projection_iters: self.projection_iters,
            margin: self.margin,
            clearance: self.clearance,
            base: self.base,
            rest_heading: self.rest_heading,
        };
        env.validate()?;
        Ok(env)
    }

    /// Point mass next to a U-shaped trap whose mouth faces left. Driving
    /// straight from in front of the mouth to a goal behind the closed end
    /// leads into the U and pins the point against its inner wall.
    pub fn u_trap() -> Self {
        Self {
            id: "u_trap".into(),
            kind: EnvKind::PointMass,
            keypoints: 1,
            link_length: default_link_length(),
            u_max: default_u_max(),
            projection_iters: default_projection_iters(),
            margin: default_margin(),
            clearance: default_clearance(),
            base: Vec2::ZERO,
            rest_heading: 0.0,
            obstacles: vec![
                Shape::Box {
                    min: Vec2::new(0.0, -0.28),
                    max: Vec2::new(0.08, 0.28),
                },
                Shape::Box {
                    min: Vec2::new(-0.25, 0.2),
                    max: Vec2::new(0.08, 0.28),
                },
                Shape::Box {
                    min: Vec2::new(-0.25, -0.28),
                    max: Vec2::new(0.08, -0.2),
                },
            ],
            resolution: default_resolution(),
        }
    }

    /// Ten-joint chain anchored at the left edge with two posts it can
    /// snag on.
    pub fn chain_posts() -> Self {
        Self {
            id: "chain_posts".into(),
            kind: EnvKind::Chain,
            keypoints: 10,
            link_length: default_link_length(),
            u_max: default_u_max(),
            projection_iters: default_projection_iters(),
            margin: default_margin(),
            clearance: default_clearance(),
            base: Vec2::new(-0.6, 0.0),
            rest_heading: 0.0,
            obstacles: vec![
                Shape::Disk {
                    center: Vec2::new(0.05, 0.4),
                    radius: 0.12,
                },
                Shape::Disk {
                    center: Vec2::new(0.05, -0.4),
                    radius: 0.12,
                },
            ],
            resolution: default_resolution(),
        }
    }
}

/// Runtime environment: dynamics parameters plus the rasterized SDF.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub id: String,
    pub kind: EnvKind,
    pub keypoints: usize,
    pub link_length: f64,
    pub u_max: f64,
    pub sdf: SdfGrid,
    pub projection_iters: usize,
    pub margin: f64,
    pub clearance: f64,
    pub base: Vec2,
    pub rest_heading: f64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_max > 0.0) || !(self.link_length > 0.0) || self.projection_iters == 0 {
            return Err(Error::Config(
                "u_max, link_length and projection_iters must be positive".into(),
            ));
        }
        match self.kind {
            EnvKind::Chain => {
                if self.keypoints < 2 {
                    return Err(Error::Config("a chain needs at least 2 keypoints".into()));
                }
                let reach = (self.keypoints - 1) as f64 * self.link_length;
                if reach > 2.0 * std::f64::consts::SQRT_2 {
                    return Err(Error::Config(format!(
                        "chain length {reach} exceeds the workspace diagonal"
                    )));
                }
                if self.sdf.query(self.base) < self.margin {
                    return Err(Error::Config("chain base lies inside an obstacle".into()));
                }
            }
            EnvKind::PointMass => {
                if self.keypoints != 1 {
                    return Err(Error::Config("a point mass has exactly one keypoint".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sdf_query(&self, p: Vec2) -> f64 {
        self.sdf.query(p)
    }

    /// Straight configuration from the base along `rest_heading`; the point
    /// mass rests at the base point.
    pub fn rest_state(&self) -> ChainState {
        let dir = Vec2::new(self.rest_heading.cos(), self.rest_heading.sin());
        let joints = (0..self.keypoints)
            .map(|i| self.base + dir * (i as f64 * self.link_length))
            .collect();
        ChainState {
            joints,
            link_length: self.link_length,
        }
    }

    pub fn point_state(&self, p: Vec2) -> ChainState {
        ChainState {
            joints: vec![p],
            link_length: self.link_length,
        }
    }

    pub fn state_is_valid(&self, s: &ChainState) -> bool {
        if s.joints.len() != self.keypoints || s.joints.iter().any(|p| !p.is_finite()) {
            return false;
        }
        let collision_free = s.joints.iter().all(|&p| self.sdf.query(p) >= -PENETRATION_TOL);
        match self.kind {
            EnvKind::PointMass => collision_free,
            EnvKind::Chain => collision_free && s.joints[0] == self.base && s.max_link_error() <= 1e-6,
        }
    }

    /// Where the gripper ends up when asked to move by `du` from `start`.
    ///
    /// Motion is stopped where the segment would first enter the margin band
    /// (or go deeper into it); the leftover displacement slides along the
    /// surface tangent when that stays clear.
    pub fn gripper_target(&self, start: Vec2, du: Vec2) -> Vec2 {
        let len = du.norm();
        if len == 0.0 {
            return start;
        }
        let floor = self.margin.min(self.sdf.query(start));
        let blocked = |q: Vec2| self.sdf.query(q) < floor;
        let n_samples = ((len / (0.5 * self.sdf.cell_size)).ceil() as usize).max(1);
        let mut free_t = 0.0;
        for s in 1..=n_samples {
            let t = s as f64 / n_samples as f64;
            if !blocked(start + du * t) {
                free_t = t;
                continue;
            }
            let (mut lo, mut hi) = (free_t, t);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if blocked(start + du * mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let stop = start + du * lo;
            let remainder = du * (1.0 - lo);
            let g = self.sdf.gradient(stop);
            let gn = g.norm();
            if gn < 1e-12 {
                return stop;
            }
            let normal = g * (1.0 / gn);
            let tangent = remainder - normal * remainder.dot(normal);
            let slid = stop + tangent;
            let clear = (1..=4).all(|k| !blocked(stop.lerp(slid, k as f64 / 4.0)));
            return if clear { slid } else { stop };
        }
        start + du
    }

    /// Known deterministic transition function.
    pub fn step(&self, s: &ChainState, u: Control) -> ChainState {
        let du = u.du.clamp_norm(self.u_max);
        match self.kind {
            EnvKind::PointMass => {
                let p = s.joints[0];
                for frac in [1.0, 0.5, 0.25, 0.125] {
                    let q = self.gripper_target(p, du * frac);
                    if self.sdf.query(q) >= ACCEPT_SDF {
                        return self.point_state(q);
                    }
                }
                s.clone()
            }
            EnvKind::Chain => {
                let grip = s.gripper();
                for frac in [1.0, 0.5, 0.25, 0.125] {
                    let target = self.gripper_target(grip, du * frac);
                    let cand = self.project_chain(s, target);
                    if cand.joints.iter().all(|&p| self.sdf.query(p) >= ACCEPT_SDF) {
                        return cand;
                    }
                }
                s.clone()
            }
        }
    }

    /// Position-based projection: pin base and gripper, enforce link lengths
    /// symmetrically, push interior joints out of obstacles. A final pass
    /// from the base restores exact link lengths.
    fn project_chain(&self, s: &ChainState, target: Vec2) -> ChainState {
        let k = s.joints.len();
        let l = s.link_length;
        let mut p = s.joints.clone();
        for _ in 0..self.projection_iters {
            let mut moved = (p[k - 1] - target).norm_sq();
            p[0] = self.base;
            p[k - 1] = target;
            for i in 0..k - 1 {
                let wa = if i == 0 { 0.0 } else { 1.0 };
                let wb = if i + 1 == k - 1 { 0.0 } else { 1.0 };
                if wa + wb == 0.0 {
                    continue;
                }
                let d = p[i + 1] - p[i];
                let len = d.norm();
                if len < 1e-12 {
                    continue;
                }
                let corr = d * ((len - l) / (len * (wa + wb)));
                p[i] += corr * wa;
                p[i + 1] -= corr * wb;
                moved += corr.norm_sq() * (wa + wb);
            }
            for q in p.iter_mut().take(k - 1).skip(1) {
                let d = self.sdf.query(*q);
                if d < self.margin {
                    let g = self.sdf.gradient(*q);
                    let gn = g.norm();
                    if gn > 1e-12 {
                        let push = g * ((self.margin - d) / gn);
                        *q += push;
                        moved += push.norm_sq();
                    }
                }
            }
            if moved < 1e-24 {
                break;
            }
        }
        for i in 1..k {
            let d = p[i] - p[i - 1];
            let n = d.norm();
            let dir = if n > 1e-12 {
                d * (1.0 / n)
            } else {
                let prev = s.joints[i] - s.joints[i - 1];
                prev * (1.0 / prev.norm())
            };
            p[i] = p[i - 1] + dir * l;
        }
        ChainState {
            joints: p,
            link_length: l,
        }
    }

    pub fn keypoints(&self, s: &ChainState) -> ObjectState {
        ObjectState::new(s.joints.clone())
    }

    /// Uniform rejection sample of a workspace point with
    /// `sdf >= clearance`. For a chain the point must also lie within the
    /// gripper's reach from the base.
    pub fn sample_free_target_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec2> {
        let reach = match self.kind {
            EnvKind::Chain => (self.keypoints - 1) as f64 * self.link_length,
            EnvKind::PointMass => f64::INFINITY,
        };
        for _ in 0..MAX_FREE_SAMPLES {
            let p = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if self.sdf.query(p) >= self.clearance && p.distance(self.base) <= reach {
                return Ok(p);
            }
        }
        Err(Error::NoFreeSpace(MAX_FREE_SAMPLES))
    }

    pub fn sample_free_target(&self, seed: u64) -> Result<Vec2> {
        self.sample_free_target_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_chain() -> EnvConfig {
        let mut spec = EnvSpec::chain_posts();
        spec.obstacles.clear();
        spec.build().unwrap()
    }

    #[test]
    fn zero_control_is_a_fixed_point() {
        let env = EnvSpec::chain_posts().build().unwrap();
        let s = env.rest_state();
        let next = env.step(&s, Control::ZERO);
        for (a, b) in s.joints.iter().zip(&next.joints) {
            assert!(a.distance(*b) < 1e-9);
        }
        let pm = EnvSpec::u_trap().build().unwrap();
        let s = pm.point_state(Vec2::new(0.0, 0.0));
        assert_eq!(pm.step(&s, Control::ZERO), s);
    }

    #[test]
    fn extended_chain_cannot_be_pulled_further() {
        let env = open_chain();
        let s = env.rest_state();
        let next = env.step(&s, Control::new(0.05, 0.0));
        assert!(next.max_link_error() <= 1e-6);
        for (a, b) in s.joints.iter().zip(&next.joints) {
            assert!(a.distance(*b) < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn control_is_clamped() {
        let env = open_chain();
        let s = env.rest_state();
        let next = env.step(&s, Control::new(0.0, 3.0));
        assert!((next.gripper() - s.gripper()).norm() <= env.u_max + 1e-9);
        let pm = EnvSpec::u_trap().build().unwrap();
        let p = pm.point_state(Vec2::new(-0.7, -0.8));
        let q = pm.step(&p, Control::new(1.0, 1.0));
        assert!((q.gripper() - p.gripper()).norm() <= pm.u_max + 1e-12);
    }

    #[test]
    fn point_mass_stops_at_wall() {
        let env = EnvSpec::u_trap().build().unwrap();
        let mut s = env.point_state(Vec2::new(-0.3, 0.0));
        for _ in 0..30 {
            s = env.step(&s, Control::new(0.05, 0.0));
        }
        let p = s.gripper();
        assert!(p.x < 0.0 && p.x > -0.05, "{p:?}");
        assert!(env.sdf_query(p) >= -PENETRATION_TOL);
    }

    #[test]
    fn free_target_sampling() {
        let env = EnvSpec::u_trap().build().unwrap();
        let a = env.sample_free_target(7).unwrap();
        assert_eq!(a, env.sample_free_target(7).unwrap());
        for seed in 0..50 {
            let p = env.sample_free_target(seed).unwrap();
            assert!(env.sdf_query(p) >= env.clearance);
        }
        let mut full = env.clone();
        full.sdf = SdfGrid::constant(-1.0);
        assert!(matches!(full.sample_free_target(1), Err(Error::NoFreeSpace(_))));
    }

    #[test]
    fn keypoints_are_joints() {
        let env = open_chain();
        let s = ChainState {
            joints: vec![Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.0), Vec2::new(0.1, 0.1)],
            link_length: 0.1,
        };
        assert_eq!(env.keypoints(&s).points, s.joints);
        let pm = EnvSpec::u_trap().build().unwrap();
        let p = pm.point_state(Vec2::new(0.3, -0.7));
        assert_eq!(pm.keypoints(&p).points, vec![Vec2::new(0.3, -0.7)]);
    }

    #[test]
    fn chain_too_long_is_rejected() {
        let mut spec = EnvSpec::chain_posts();
        spec.keypoints = 40;
        assert!(spec.build().is_err());
    }
}
