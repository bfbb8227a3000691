//! Coarse-to-fine subgoal generation with reachability-based stopping,
//! distance-weighted redistribution of the previous level, pruning and the
//! regeneration cadence.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Conditioning, SubgoalDiffusion};
use crate::interp::{apply, arc_positions, upsample_matrix};
use crate::reachability::DistanceModel;
use crate::seeds;
use crate::world2d::ObjectState;
use crate::{Error, Result};

pub const REGENERATE_EVERY: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Hierarchy {
    levels: Vec<usize>,
}

impl Hierarchy {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.first() != Some(&2) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "hierarchy must start at 2 and be strictly increasing, got {levels:?}"
            )));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn finest(&self) -> usize {
        *self.levels.last().expect("non-empty")
    }
}

impl Default for Hierarchy {
    fn default() -> Self {
        Self {
            levels: vec![2, 3, 5, 7, 9, 17],
        }
    }
}

impl TryFrom<Vec<usize>> for Hierarchy {
    type Error = Error;
    fn try_from(levels: Vec<usize>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<Hierarchy> for Vec<usize> {
    fn from(h: Hierarchy) -> Self {
        h.levels
    }
}

/// Pairwise travel estimate between consecutive subgoals and the
/// threshold below which a segment counts as reachable.
pub trait Reachability {
    fn segment_lengths(&self, chain: &[ObjectState]) -> Result<Vec<f64>>;
    fn threshold(&self) -> f64;
}

impl Reachability for DistanceModel {
    fn segment_lengths(&self, chain: &[ObjectState]) -> Result<Vec<f64>> {
        self.segment_d_hats(chain)
    }

    fn threshold(&self) -> f64 {
        self.config.horizon
    }
}

/// Generator of one hierarchy level given the conditioning.
pub trait LevelSampler {
    fn sample_level(
        &self,
        current: &ObjectState,
        goal: &ObjectState,
        cond: &Conditioning,
        m: usize,
        seed: u64,
    ) -> Result<Vec<ObjectState>>;
}

/// Diffusion model bound to the scene feature it conditions on.
pub struct DiffusionSampler<'a> {
    pub model: &'a SubgoalDiffusion,
    pub sdf_feature: &'a [f64],
}

impl LevelSampler for DiffusionSampler<'_> {
    fn sample_level(
        &self,
        current: &ObjectState,
        goal: &ObjectState,
        cond: &Conditioning,
        m: usize,
        seed: u64,
    ) -> Result<Vec<ObjectState>> {
        self.model.sample_level(current, goal, cond, m, self.sdf_feature, seed)
    }
}

/// Per-subgoal latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentChain {
    pub latents: Vec<Vec<f64>>,
    pub source: Vec<ObjectState>,
}

pub fn encode_latents(model: &SubgoalDiffusion, chain: &[ObjectState]) -> LatentChain {
    LatentChain {
        latents: model.encode(chain),
        source: chain.to_vec(),
    }
}

/// Interpolation weights that place the source chain at its cumulative
/// normalized segment-length positions and read it back at `m_target`
/// uniform positions. Without `redistribute` every segment counts as 1.
pub fn redistribution_weights(segment_lengths: &[f64], m_target: usize, redistribute: bool) -> Vec<f64> {
    let positions = if redistribute {
        arc_positions(segment_lengths)
    } else {
        arc_positions(&vec![1.0; segment_lengths.len()])
    };
    upsample_matrix(&positions, m_target)
}

/// Resamples `latents` to `m_target` vectors, spacing the source latents by
/// the estimated travel between consecutive source subgoals.
pub fn redistribute_upsample(
    latents: &LatentChain,
    reach: &dyn Reachability,
    m_target: usize,
    redistribute: bool,
) -> Result<Vec<Vec<f64>>> {
    let n = latents.latents.len();
    if n == 0 || latents.source.len() != n || m_target < n {
        return Err(Error::Config(format!(
            "cannot upsample {n} latents ({} subgoals) to {m_target}",
            latents.source.len()
        )));
    }
    let lengths = if redistribute {
        reach.segment_lengths(&latents.source)?
    } else {
        vec![1.0; n - 1]
    };
    let w = redistribution_weights(&lengths, m_target, redistribute);
    Ok(apply(&w, m_target, &latents.latents))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateOptions {
    /// Weight upsampling positions by estimated segment lengths.
    pub redistribute: bool,
    /// Condition each level on the previous one.
    pub coarse_to_fine: bool,
    /// Stop at the first level whose segments are all reachable.
    pub adaptive: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            redistribute: true,
            coarse_to_fine: true,
            adaptive: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedChain {
    pub goals: Vec<ObjectState>,
    /// Index into the hierarchy of the returned chain.
    pub level: usize,
    /// Chain size of every level visited, coarsest first.
    pub visited: Vec<usize>,
}

/// Refines `[current, goal]` level by level until every segment is
/// reachable or the hierarchy is exhausted. Level `l` is sampled with seed
/// `derive(seed, [l])`.
pub fn generate_subgoals(
    current: &ObjectState,
    goal: &ObjectState,
    sampler: &dyn LevelSampler,
    reach: &dyn Reachability,
    hierarchy: &Hierarchy,
    opts: GenerateOptions,
    seed: u64,
) -> Result<GeneratedChain> {
    let levels = hierarchy.levels();
    let mut chain = vec![current.clone(), goal.clone()];
    let mut level = 0;
    let mut visited = vec![2];
    loop {
        let lengths = if opts.adaptive || (opts.coarse_to_fine && opts.redistribute) {
            Some(reach.segment_lengths(&chain)?)
        } else {
            None
        };
        if opts.adaptive {
            let max = lengths
                .as_ref()
                .expect("computed")
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            if max < reach.threshold() {
                break;
            }
        }
        if level + 1 == levels.len() {
            break;
        }
        level += 1;
        let m = levels[level];
        let cond = if opts.coarse_to_fine {
            let lengths = lengths.unwrap_or_else(|| vec![1.0; chain.len() - 1]);
            Conditioning::Chain {
                upsample: redistribution_weights(&lengths, m, opts.redistribute),
                states: chain,
            }
        } else {
            Conditioning::Dropped
        };
        chain = sampler.sample_level(current, goal, &cond, m, seeds::derive(seed, &[level as u64]))?;
        if chain.len() != m {
            return Err(Error::Config(format!(
                "level sampler returned {} subgoals, expected {m}",
                chain.len()
            )));
        }
        visited.push(m);
    }
    Ok(GeneratedChain {
        goals: chain,
        level,
        visited,
    })
}

/// Removes every subgoal up to and including the last one (other than the
/// final goal) within `eps` of `now`.
pub fn prune_reached(chain: &[ObjectState], now: &ObjectState, eps: f64) -> Vec<ObjectState> {
    let m = chain.len();
    let reached = (0..m.saturating_sub(1)).rev().find(|&i| chain[i].distance(now) <= eps);
    match reached {
        Some(i) => chain[i + 1..].to_vec(),
        None => chain.to_vec(),
    }
}

pub fn should_regenerate(step: usize) -> bool {
    step.is_multiple_of(REGENERATE_EVERY)
}
