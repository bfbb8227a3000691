//! Travel-time classifier over step bins and the soft minimum-step
//! estimate derived from it.

use std::path::Path;

use netcore::{read_checkpoint, softmax, Adam, AdamConfig, Mlp, ParamStore, Tape};
use serde::{Deserialize, Serialize};

use crate::datastore::{sample_distance_pairs, Dataset, DistancePair, DISTANCE_BINS};
use crate::seeds;
use crate::world2d::ObjectState;
use crate::{Error, Result};

pub const MODEL_NAME: &str = "distance";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceConfig {
    pub hidden: Vec<usize>,
    /// Soft-minimum temperature.
    pub alpha: f64,
    /// Reachability threshold in steps (the MPC horizon).
    pub horizon: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub lr: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            alpha: 1.0,
            horizon: 10.0,
            batch_size: 128,
            train_steps: 3000,
            lr: 1e-3,
        }
    }
}

/// `-alpha ln sum_k p_k exp(-k / alpha)` with bins valued `1..=p.len()`,
/// evaluated in log space.
pub fn d_hat_from_probs(p: &[f64], alpha: f64) -> f64 {
    let terms: Vec<f64> = p
        .iter()
        .enumerate()
        .filter(|(_, &pk)| pk > 0.0)
        .map(|(i, &pk)| pk.ln() - (i + 1) as f64 / alpha)
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    (-alpha * lse).clamp(1.0, p.len() as f64)
}

/// Input features `[o_a, o_b, o_b - o_a]`.
pub fn pair_features(a: &ObjectState, b: &ObjectState) -> Vec<f64> {
    let (fa, fb) = (a.to_flat(), b.to_flat());
    let diff: Vec<f64> = fb.iter().zip(&fa).map(|(y, x)| y - x).collect();
    let mut out = fa;
    out.extend(fb);
    out.extend(diff);
    out
}

#[derive(Clone, Debug)]
pub struct DistanceModel {
    pub config: DistanceConfig,
    pub state_dim: usize,
    pub store: ParamStore,
    mlp: Mlp,
}

#[derive(Serialize, Deserialize)]
struct Hyper {
    config: DistanceConfig,
    state_dim: usize,
}

impl DistanceModel {
    pub fn new(config: DistanceConfig, state_dim: usize, seed: u64) -> Result<Self> {
        if !(config.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", config.alpha)));
        }
        let mut widths = vec![3 * state_dim];
        widths.extend(&config.hidden);
        widths.push(DISTANCE_BINS);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "distance", &widths, false, &mut seeds::rng(seed, &[]));
        Ok(Self {
            config,
            state_dim,
            store,
            mlp,
        })
    }

    fn check_dims(&self, a: &ObjectState, b: &ObjectState) -> Result<()> {
        if a.len() * 2 != self.state_dim || b.len() * 2 != self.state_dim {
            return Err(Error::Config(format!(
                "distance model expects state dimension {}",
                self.state_dim
            )));
        }
        Ok(())
    }

    /// Logits for a batch of pairs, row-major `[pairs.len(), 40]`.
    fn batch_logits(&self, pairs: &[(&ObjectState, &ObjectState)]) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let feats: Vec<f64> = pairs.iter().flat_map(|(a, b)| pair_features(a, b)).collect();
        let x = tape.constant(pairs.len(), 3 * self.state_dim, feats);
        let y = self.mlp.forward(&mut tape, x);
        tape.value(y).to_vec()
    }

    pub fn probabilities(&self, a: &ObjectState, b: &ObjectState) -> Result<Vec<f64>> {
        self.check_dims(a, b)?;
        Ok(softmax(&self.batch_logits(&[(a, b)])))
    }

    pub fn d_hat(&self, a: &ObjectState, b: &ObjectState) -> Result<f64> {
        Ok(d_hat_from_probs(&self.probabilities(a, b)?, self.config.alpha))
    }

    /// `d_hat` for consecutive pairs of a chain.
    pub fn segment_d_hats(&self, chain: &[ObjectState]) -> Result<Vec<f64>> {
        if chain.len() < 2 {
            return Ok(Vec::new());
        }
        for s in chain {
            self.check_dims(s, s)?;
        }
        let pairs: Vec<_> = chain.windows(2).map(|w| (&w[0], &w[1])).collect();
        let logits = self.batch_logits(&pairs);
        Ok(logits
            .chunks(DISTANCE_BINS)
            .map(|l| d_hat_from_probs(&softmax(l), self.config.alpha))
            .collect())
    }

    /// `d_hat < horizon`.
    pub fn is_reachable(&self, a: &ObjectState, b: &ObjectState) -> Result<bool> {
        Ok(self.d_hat(a, b)? < self.config.horizon)
    }

    /// Mean cross-entropy on `pairs`.
    pub fn loss(&self, pairs: &[DistancePair]) -> f64 {
        let mut tape = Tape::new(&self.store);
        let loss = self.loss_on(&mut tape, pairs);
        tape.scalar(loss)
    }

    fn loss_on(&self, tape: &mut Tape, pairs: &[DistancePair]) -> netcore::Var {
        let feats: Vec<f64> = pairs.iter().flat_map(|p| pair_features(&p.a, &p.b)).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.k - 1).collect();
        let x = tape.constant(pairs.len(), 3 * self.state_dim, feats);
        let logits = self.mlp.forward(tape, x);
        tape.cross_entropy(logits, &labels)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let hyper = Hyper {
            config: self.config.clone(),
            state_dim: self.state_dim,
        };
        self.store.save(stem, MODEL_NAME, serde_json::to_value(hyper)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (manifest, blob) = read_checkpoint(stem)?;
        if manifest.model_name != MODEL_NAME {
            return Err(Error::Config(format!(
                "checkpoint {} holds model {:?}, expected {MODEL_NAME:?}",
                stem.display(),
                manifest.model_name
            )));
        }
        let hyper: Hyper = serde_json::from_value(manifest.hyperparams.clone())?;
        let mut model = Self::new(hyper.config, hyper.state_dim, 0)?;
        model.store.load_values(&manifest, &blob)?;
        Ok(model)
    }
}

/// Runs `config.train_steps` Adam steps of cross-entropy training, asking
/// `pairs_for_step` for each step's batch. Returns the per-step loss.
pub fn fit_pairs<F>(model: &mut DistanceModel, mut pairs_for_step: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<Vec<DistancePair>>,
{
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: model.config.lr,
            ..AdamConfig::default()
        },
    );
    let mut losses = Vec::with_capacity(model.config.train_steps);
    for step in 0..model.config.train_steps {
        let pairs = pairs_for_step(step)?;
        if pairs.iter().any(|p| !(1..=DISTANCE_BINS).contains(&p.k)) {
            return Err(Error::Dataset(format!(
                "distance labels must lie in 1..={DISTANCE_BINS}"
            )));
        }
        let grads = {
            let mut tape = Tape::new(&model.store);
            let loss = model.loss_on(&mut tape, &pairs);
            losses.push(tape.scalar(loss));
            tape.backward(loss)?
        };
        model.store.accumulate(&grads, 1.0);
        adam.step(&mut model.store);
    }
    Ok(losses)
}

/// Cross-entropy training on freshly sampled pairs each step. Returns the
/// model and the per-step training loss.
pub fn train_distance_model(
    dataset: &Dataset,
    config: &DistanceConfig,
    seed: u64,
) -> Result<(DistanceModel, Vec<f64>)> {
    let mut model = DistanceModel::new(config.clone(), 2 * dataset.header.keypoints, seeds::derive(seed, &[0]))?;
    let losses = fit_pairs(&mut model, |step| {
        sample_distance_pairs(dataset, config.batch_size, seeds::derive(seed, &[1, step as u64]))
    })?;
    Ok((model, losses))
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
