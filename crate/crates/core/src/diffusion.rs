//! DDPM noise schedule, the subgoal denoiser with its latent encoder,
//! training loss and ancestral sampling with endpoint in-painting.

use std::path::Path;

use netcore::{
    read_checkpoint, sinusoidal_embedding, Adam, AdamConfig, Gradients, Mlp, ParamStore, Tape, TemporalUNet,
    UNetConfig, Var,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datastore::{sample_subgoal_batch, Dataset, SubgoalBatch};
use crate::interp::{uniform_positions, upsample_matrix};
use crate::seeds;
use crate::world2d::ObjectState;
use crate::{Error, Result};

pub const MODEL_NAME: &str = "diffusion";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `alpha_bar` at step `k` in `0..=K`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }
}

/// Linear betas on `[1e-4, 0.02]`, stretched by `1000 / K` so that short
/// schedules still end near pure noise, capped at 0.999.
pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("a noise schedule needs at least one step".into()));
    }
    let ScheduleKind::Linear = kind;
    let (lo, hi) = (1e-4, 0.02);
    let stretch = 1000.0 / steps as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            let lin = if steps == 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (steps - 1) as f64
            };
            (lin * stretch).min(0.999)
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        steps,
        betas,
        alphas,
        alpha_bars,
    })
}

/// Closed-form marginal `sqrt(ab_k) tau0 + sqrt(1 - ab_k) eps`.
pub fn forward_noise(tau0: &[f64], k: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if tau0.len() != eps.len() {
        return Err(Error::Config(format!(
            "noise has {} elements, chain has {}",
            eps.len(),
            tau0.len()
        )));
    }
    if k == 0 || k > schedule.steps {
        return Err(Error::Config(format!(
            "diffusion step {k} outside 1..={}",
            schedule.steps
        )));
    }
    let ab = schedule.alpha_bar(k);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(tau0.iter().zip(eps).map(|(x, e)| s * x + n * e).collect())
}

/// How pinned endpoints are written back during sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InpaintMode {
    /// Endpoints forward-noised to the marginal of the next step.
    #[default]
    Noised,
    /// Endpoints copied clean at every step.
    Clean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    /// Width of the per-subgoal coordinate embedding fed to the U-Net
    /// alongside the raw noisy states (0 disables it).
    pub point_features: usize,
    pub point_hidden: usize,
    pub time_dim: usize,
    pub unet_widths: [usize; 2],
    pub ctx_hidden: usize,
    pub cond_dropout: f64,
    pub sigma_cond: f64,
    pub inpaint: InpaintMode,
    pub batch_size: usize,
    pub train_steps: usize,
    pub lr: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            schedule: ScheduleKind::Linear,
            latent_dim: 16,
            encoder_hidden: 64,
            point_features: 32,
            point_hidden: 64,
            time_dim: 32,
            unet_widths: [32, 64],
            ctx_hidden: 64,
            cond_dropout: 0.1,
            sigma_cond: 0.03,
            inpaint: InpaintMode::Noised,
            batch_size: 32,
            train_steps: 3000,
            lr: 1e-3,
        }
    }
}

/// Previous-level information handed to the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub enum Conditioning {
    /// No previous level (dropout during training, or direct sampling).
    Dropped,
    /// Previous-level chain plus the `[M, states.len()]` row-major weights
    /// that resample its latents to the target length.
    Chain {
        states: Vec<ObjectState>,
        upsample: Vec<f64>,
    },
}

impl Conditioning {
    /// Previous level resampled with equal spacing.
    pub fn uniform(states: Vec<ObjectState>, m: usize) -> Self {
        let upsample = upsample_matrix(&uniform_positions(states.len()), m);
        Conditioning::Chain { states, upsample }
    }
}

fn flatten(states: &[ObjectState]) -> Vec<f64> {
    states.iter().flat_map(ObjectState::to_flat).collect()
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Network structure: latent encoder plus temporal U-Net denoiser. The
/// parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DenoiserNet {
    pub config: DiffusionConfig,
    pub state_dim: usize,
    pub sdf_dim: usize,
    pub schedule: NoiseSchedule,
    encoder: Mlp,
    points: Option<Mlp>,
    unet: TemporalUNet,
}

impl DenoiserNet {
    pub fn new(
        config: DiffusionConfig,
        state_dim: usize,
        sdf_dim: usize,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        let schedule = make_schedule(config.steps, config.schedule)?;
        let mut rng = seeds::rng(seed, &[]);
        let dz = config.latent_dim;
        let encoder = Mlp::new(
            store,
            "encoder",
            &[state_dim, config.encoder_hidden, dz],
            false,
            &mut rng,
        );
        let pf = config.point_features;
        let points = (pf > 0).then(|| {
            Mlp::new(
                store,
                "points",
                &[state_dim, config.point_hidden, config.point_hidden, pf],
                false,
                &mut rng,
            )
        });
        let ctx_dim = config.time_dim + 2 * state_dim + dz + sdf_dim + 1;
        let mut ucfg = UNetConfig::new(state_dim + dz + pf, state_dim, ctx_dim);
        ucfg.widths = config.unet_widths;
        ucfg.ctx_hidden = config.ctx_hidden;
        let unet = TemporalUNet::new(store, "denoiser", ucfg, &mut rng);
        Ok(Self {
            config,
            state_dim,
            sdf_dim,
            schedule,
            encoder,
            points,
            unet,
        })
    }

    /// Latent code of every state, `[states.len(), latent_dim]`.
    pub fn encode_on(&self, tape: &mut Tape, states: &[ObjectState]) -> Var {
        let c = tape.constant(states.len(), self.state_dim, flatten(states));
        self.encoder.forward(tape, c)
    }

    pub fn encode(&self, store: &ParamStore, states: &[ObjectState]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new(store);
        let z = self.encode_on(&mut tape, states);
        tape.value(z)
            .chunks(self.config.latent_dim)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Predicted noise for `x: [M, state_dim]` at step `k`.
    #[allow(clippy::too_many_arguments)]
    pub fn predict(
        &self,
        tape: &mut Tape,
        x: Var,
        k: usize,
        current: &ObjectState,
        goal: &ObjectState,
        cond: &Conditioning,
        sdf_feature: &[f64],
    ) -> Result<Var> {
        let (m, d) = tape.shape(x);
        let dz = self.config.latent_dim;
        if d != self.state_dim || current.len() * 2 != d || goal.len() * 2 != d {
            return Err(Error::Config(format!(
                "denoiser expects state dimension {}",
                self.state_dim
            )));
        }
        if sdf_feature.len() != self.sdf_dim {
            return Err(Error::Config(format!(
                "scene feature has {} values, model expects {}",
                sdf_feature.len(),
                self.sdf_dim
            )));
        }
        let (latents, pooled, flag) = match cond {
            Conditioning::Dropped => (tape.constant(m, dz, vec![0.0; m * dz]), tape.row(vec![0.0; dz]), 0.0),
            Conditioning::Chain { states, upsample } => {
                if states.is_empty() || upsample.len() != m * states.len() {
                    return Err(Error::Config(format!(
                        "conditioning weights for {} states do not map onto length {m}",
                        states.len()
                    )));
                }
                let z = self.encode_on(tape, states);
                let a = tape.constant(m, states.len(), upsample.clone());
                let up = tape.matmul(a, z);
                let pooled = tape.mean_rows(up);
                (up, pooled, 1.0)
            }
        };
        let mut fixed = current.to_flat();
        fixed.extend(goal.to_flat());
        let parts = [
            tape.row(sinusoidal_embedding(k as f64, self.config.time_dim)),
            tape.row(fixed),
            pooled,
            tape.row(sdf_feature.to_vec()),
            tape.row(vec![flag]),
        ];
        let ctx = parts[1..].iter().fold(parts[0], |acc, &p| tape.concat_cols(acc, p));
        let mut input = tape.concat_cols(x, latents);
        if let Some(points) = &self.points {
            let feats = points.forward(tape, x);
            let feats = tape.silu(feats);
            input = tape.concat_cols(input, feats);
        }
        Ok(self.unet.forward(tape, input, ctx)?)
    }

    /// Noise-prediction error on the interior rows of one example.
    fn example_loss(&self, tape: &mut Tape, ex: &SubgoalBatch, seed: u64) -> Result<Var> {
        let m = ex.targets.len();
        let d = self.state_dim;
        if m < 3 {
            return Err(Error::Config("training examples need at least one free subgoal".into()));
        }
        let mut rng = seeds::rng(seed, &[]);
        let k = rng.random_range(1..=self.schedule.steps);
        let eps = normals(&mut rng, m * d);
        let dropped = rng.random::<f64>() < self.config.cond_dropout;
        let mut xk = forward_noise(&flatten(&ex.targets), k, &eps, &self.schedule)?;
        xk[..d].copy_from_slice(&ex.current.to_flat());
        xk[(m - 1) * d..].copy_from_slice(&ex.goal.to_flat());
        let cond = if dropped {
            Conditioning::Dropped
        } else {
            Conditioning::uniform(ex.conditioning.clone(), m)
        };
        let x = tape.constant(m, d, xk);
        let pred = self.predict(tape, x, k, &ex.current, &ex.goal, &cond, &ex.sdf_feature)?;
        let inner = tape.slice_rows(pred, 1, m - 2);
        let target = tape.constant(m - 2, d, eps[d..(m - 1) * d].to_vec());
        let diff = tape.sub(inner, target);
        let sq = tape.square(diff);
        let total = tape.sum(sq);
        Ok(tape.scale(total, 1.0 / ((m - 2) * d) as f64))
    }

    /// Mean loss over `batch`; example `i` draws its step, noise and
    /// dropout from a stream derived from `(seed, i)`.
    pub fn batch_loss_on(&self, tape: &mut Tape, batch: &[SubgoalBatch], seed: u64) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let mut total: Option<Var> = None;
        for (i, ex) in batch.iter().enumerate() {
            let l = self.example_loss(tape, ex, seeds::derive(seed, &[i as u64]))?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l),
            });
        }
        Ok(tape.scale(total.expect("non-empty"), 1.0 / batch.len() as f64))
    }

    pub fn loss_and_grad(&self, store: &ParamStore, batch: &[SubgoalBatch], seed: u64) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(store);
        let loss = self.batch_loss_on(&mut tape, batch, seed)?;
        let value = tape.scalar(loss);
        Ok((value, tape.backward(loss)?))
    }

    pub fn loss(&self, store: &ParamStore, batch: &[SubgoalBatch], seed: u64) -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = self.batch_loss_on(&mut tape, batch, seed)?;
        Ok(tape.scalar(loss))
    }

    fn pin<R: Rng + ?Sized>(&self, x: &mut [f64], m: usize, step: usize, current: &[f64], goal: &[f64], rng: &mut R) {
        let d = self.state_dim;
        let ab = self.schedule.alpha_bar(step);
        for (row, value) in [(0, current), (m - 1, goal)] {
            let dst = &mut x[row * d..(row + 1) * d];
            match self.config.inpaint {
                InpaintMode::Noised if step > 0 => {
                    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
                    for (o, v) in dst.iter_mut().zip(value) {
                        let z: f64 = StandardNormal.sample(rng);
                        *o = s * v + n * z;
                    }
                }
                _ => dst.copy_from_slice(value),
            }
        }
    }

    /// Ancestral sampling of an `m`-subgoal chain from `current` to `goal`.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_level(
        &self,
        store: &ParamStore,
        current: &ObjectState,
        goal: &ObjectState,
        cond: &Conditioning,
        m: usize,
        sdf_feature: &[f64],
        seed: u64,
    ) -> Result<Vec<ObjectState>> {
        if m < 2 {
            return Err(Error::Config(format!(
                "a subgoal chain needs at least 2 states, got {m}"
            )));
        }
        if m == 2 {
            return Ok(vec![current.clone(), goal.clone()]);
        }
        let d = self.state_dim;
        let (cur, gl) = (current.to_flat(), goal.to_flat());
        let mut rng = seeds::rng(seed, &[]);
        let big_k = self.schedule.steps;
        let mut x = normals(&mut rng, m * d);
        self.pin(&mut x, m, big_k, &cur, &gl, &mut rng);
        for k in (1..=big_k).rev() {
            let mut tape = Tape::new(store);
            let xv = tape.constant(m, d, x.clone());
            let eps = self.predict(&mut tape, xv, k, current, goal, cond, sdf_feature)?;
            let eps = tape.value(eps);
            let ab = self.schedule.alpha_bar(k);
            let ab_prev = self.schedule.alpha_bar(k - 1);
            let beta = self.schedule.betas[k - 1];
            let alpha = self.schedule.alphas[k - 1];
            let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let ck = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
            for (xi, ei) in x.iter_mut().zip(eps) {
                let x0 = ((*xi - (1.0 - ab).sqrt() * ei) / ab.sqrt()).clamp(-1.0, 1.0);
                let mean = c0 * x0 + ck * *xi;
                *xi = if k > 1 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + sigma * z
                } else {
                    mean
                };
            }
            self.pin(&mut x, m, k - 1, &cur, &gl, &mut rng);
        }
        x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        let mut chain: Vec<ObjectState> = x.chunks(d).map(ObjectState::from_flat).collect();
        chain[0] = current.clone();
        chain[m - 1] = goal.clone();
        Ok(chain)
    }
}

/// Denoiser and encoder together with their trained parameters.
#[derive(Clone, Debug)]
pub struct SubgoalDiffusion {
    pub net: DenoiserNet,
    pub store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Hyper {
    config: DiffusionConfig,
    state_dim: usize,
    sdf_dim: usize,
}

impl SubgoalDiffusion {
    pub fn new(config: DiffusionConfig, state_dim: usize, sdf_dim: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = DenoiserNet::new(config, state_dim, sdf_dim, &mut store, seed)?;
        Ok(Self { net, store })
    }

    pub fn encode(&self, states: &[ObjectState]) -> Vec<Vec<f64>> {
        self.net.encode(&self.store, states)
    }

    pub fn sample_level(
        &self,
        current: &ObjectState,
        goal: &ObjectState,
        cond: &Conditioning,
        m: usize,
        sdf_feature: &[f64],
        seed: u64,
    ) -> Result<Vec<ObjectState>> {
        self.net
            .sample_level(&self.store, current, goal, cond, m, sdf_feature, seed)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let hyper = Hyper {
            config: self.net.config.clone(),
            state_dim: self.net.state_dim,
            sdf_dim: self.net.sdf_dim,
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
        let mut model = Self::new(hyper.config, hyper.state_dim, hyper.sdf_dim, 0)?;
        model.store.load_values(&manifest, &blob)?;
        Ok(model)
    }
}

/// Mean denoising loss of `batch` under `model`.
pub fn denoise_loss(model: &SubgoalDiffusion, batch: &[SubgoalBatch], seed: u64) -> Result<f64> {
    model.net.loss(&model.store, batch, seed)
}

/// Trains encoder and denoiser jointly on batches drawn from `dataset`.
/// Returns the model and the per-step training loss.
pub fn train_diffusion(
    dataset: &Dataset,
    hierarchy: &[usize],
    sdf_feature: &[f64],
    config: &DiffusionConfig,
    seed: u64,
) -> Result<(SubgoalDiffusion, Vec<f64>)> {
    let state_dim = 2 * dataset.header.keypoints;
    let mut model = SubgoalDiffusion::new(config.clone(), state_dim, sdf_feature.len(), seeds::derive(seed, &[0]))?;
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut losses = Vec::with_capacity(config.train_steps);
    for step in 0..config.train_steps {
        let s = step as u64;
        let batch = sample_subgoal_batch(
            dataset,
            hierarchy,
            config.batch_size,
            config.sigma_cond,
            sdf_feature,
            seeds::derive(seed, &[1, s]),
        )?;
        let (loss, grads) = model
            .net
            .loss_and_grad(&model.store, &batch, seeds::derive(seed, &[2, s]))?;
        model.store.accumulate(&grads, 1.0);
        adam.step(&mut model.store);
        losses.push(loss);
    }
    Ok((model, losses))
}
