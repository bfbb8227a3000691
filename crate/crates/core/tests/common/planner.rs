use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use subgoal_mpc::diffusion::Conditioning;
use subgoal_mpc::subgoal_planner::{LatentChain, LevelSampler, Reachability};
use subgoal_mpc::world2d::{ObjectState, Vec2};
use subgoal_mpc::Result;

/// Returns fixed segment lengths regardless of the chain.
pub struct FixedLengths(pub Vec<f64>);

impl Reachability for FixedLengths {
    fn segment_lengths(&self, _: &[ObjectState]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
    fn threshold(&self) -> f64 {
        10.0
    }
}

/// Euclidean segment length against a fixed threshold.
pub struct Euclid(pub f64);

impl Reachability for Euclid {
    fn segment_lengths(&self, chain: &[ObjectState]) -> Result<Vec<f64>> {
        Ok(chain.windows(2).map(|w| w[0].distance(&w[1])).collect())
    }
    fn threshold(&self) -> f64 {
        self.0
    }
}

pub struct Constant(pub bool);

impl Reachability for Constant {
    fn segment_lengths(&self, chain: &[ObjectState]) -> Result<Vec<f64>> {
        Ok(vec![if self.0 { 0.0 } else { 100.0 }; chain.len() - 1])
    }
    fn threshold(&self) -> f64 {
        1.0
    }
}

/// Evenly spaced states between the endpoints; records what it was given.
#[derive(Default)]
pub struct LineSampler {
    pub calls: RefCell<Vec<(usize, Option<(usize, Vec<f64>)>)>>,
}

impl LevelSampler for LineSampler {
    fn sample_level(
        &self,
        current: &ObjectState,
        goal: &ObjectState,
        cond: &Conditioning,
        m: usize,
        _: u64,
    ) -> Result<Vec<ObjectState>> {
        let seen = match cond {
            Conditioning::Dropped => None,
            Conditioning::Chain { states, upsample } => Some((states.len(), upsample.clone())),
        };
        self.calls.borrow_mut().push((m, seen));
        Ok((0..m)
            .map(|i| {
                let t = i as f64 / (m - 1) as f64;
                ObjectState::new(
                    current
                        .points
                        .iter()
                        .zip(&goal.points)
                        .map(|(a, b)| a.lerp(*b, t))
                        .collect(),
                )
            })
            .collect())
    }
}

pub fn random_latents(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> LatentChain {
    LatentChain {
        latents: (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect(),
        source: (0..n).map(|_| ObjectState::new(vec![Vec2::new(0.0, 0.0)])).collect(),
    }
}

/// Interpolation at equally spaced fractional indices.
pub fn equal_spacing(latents: &[Vec<f64>], m: usize) -> Vec<Vec<f64>> {
    let n = latents.len();
    (0..m)
        .map(|i| {
            let s = i as f64 * (n - 1) as f64 / (m - 1) as f64;
            let j = (s.floor() as usize).min(n - 2);
            let t = s - j as f64;
            latents[j]
                .iter()
                .zip(&latents[j + 1])
                .map(|(a, b)| a * (1.0 - t) + b * t)
                .collect()
        })
        .collect()
}

/// Scans every segment for the one containing each query position.
pub fn arc_length_oracle(latents: &[Vec<f64>], lengths: &[f64], m: usize) -> Vec<Vec<f64>> {
    let total: f64 = lengths.iter().sum();
    let mut cum = vec![0.0];
    for l in lengths {
        cum.push(cum.last().unwrap() + l / total);
    }
    (0..m)
        .map(|i| {
            let q = i as f64 / (m - 1) as f64;
            let mut out = None;
            for j in 0..lengths.len() {
                let (lo, hi) = (cum[j], if j + 1 == lengths.len() { 1.0 } else { cum[j + 1] });
                if q >= lo && (q < hi || j + 1 == lengths.len()) {
                    let t = ((q - lo) / (hi - lo)).clamp(0.0, 1.0);
                    out = Some(
                        latents[j]
                            .iter()
                            .zip(&latents[j + 1])
                            .map(|(a, b)| a + t * (b - a))
                            .collect(),
                    );
                    break;
                }
            }
            out.expect("query inside [0,1]")
        })
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn random_pair(rng: &mut ChaCha8Rng, k: usize) -> (ObjectState, ObjectState) {
    let mut pt = || Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let a = ObjectState::new((0..k).map(|_| pt()).collect());
    let b = ObjectState::new((0..k).map(|_| pt()).collect());
    (a, b)
}
