#![allow(dead_code)]

pub mod mppi;
pub mod planner;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subgoal_mpc::datastore::{Dataset, DatasetHeader, Normalization, Trajectory, FORMAT};
use subgoal_mpc::world2d::{ObjectState, Vec2};

/// Point-mass trajectories moving at constant speed along random segments.
pub fn line_dataset(n: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectories = (0..n)
        .map(|_| {
            let a = Vec2::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9));
            let b = Vec2::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9));
            Trajectory {
                env_id: "line".into(),
                states: (0..len)
                    .map(|i| ObjectState::new(vec![a.lerp(b, i as f64 / (len - 1) as f64)]))
                    .collect(),
                controls: vec![Default::default(); len - 1],
            }
        })
        .collect();
    Dataset {
        header: DatasetHeader {
            format: FORMAT.into(),
            keypoints: 1,
            traj_len: len,
            normalization: Normalization::default(),
        },
        trajectories,
    }
}

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}
