//! Energy-matching training objective and the optimization loop.
//!
//! The loss for one sample is `||eps - grad_tau E(tau_t, t, z)||^2`, where
//! `tau_t` is the forward-diffused demonstration. Its parameter gradient goes
//! through the input gradient of the energy, so the tape records the first
//! backward pass (`create_graph = true`) and differentiates it again.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, Tape, Tensor};
use crate::diffusion::{forward_diffuse, standard_normal, GuidanceConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::Model;
use crate::nn::{encode_tape, time_embedding, trunk_tape, AdamConfig, AdamState, ParamStore, TIME_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Environments each batch draws from; 0 means no limit. Encoding is
    /// the dominant cost per step, so fewer clouds per batch train faster.
    #[serde(default)]
    pub envs_per_batch: usize,
    /// Cosine decay from `lr` to `lr * final_lr_fraction` over the run.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
    /// Global gradient-norm clip.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, batch_size: 128, lr: 1e-4, n_steps: 100, seed: 0, envs_per_batch: 8, final_lr_fraction: 1.0, grad_clip: None }
    }
}

/// Index batches for one epoch. Every item appears at least once; a pool
/// smaller than the batch size is repeated to fill it.
fn epoch_batches<R: Rng>(items: &[TrainItem<'_>], cfg: &TrainConfig, order: &mut [usize], rng: &mut R) -> Vec<Vec<usize>> {
    let bs = cfg.batch_size;
    let chunk = |pool: &[usize], out: &mut Vec<Vec<usize>>| {
        if pool.len() < bs {
            out.push((0..bs).map(|k| pool[k % pool.len()]).collect());
        } else {
            out.extend(pool.chunks(bs).map(|c| c.to_vec()));
        }
    };
    let mut out = Vec::new();
    if cfg.envs_per_batch == 0 {
        order.shuffle(rng);
        chunk(order, &mut out);
        return out;
    }
    let mut envs: Vec<usize> = items.iter().map(|i| i.cloud).collect();
    envs.sort_unstable();
    envs.dedup();
    envs.shuffle(rng);
    for group in envs.chunks(cfg.envs_per_batch) {
        let mut pool: Vec<usize> = (0..items.len()).filter(|&i| group.contains(&items[i].cloud)).collect();
        pool.shuffle(rng);
        chunk(&pool, &mut out);
    }
    out
}

/// One training example: a clean trajectory and the cloud it was planned in.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub traj: &'a [f64],
    pub cloud: usize,
}

/// Random draws for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub dropped: bool,
    pub eps: Vec<f64>,
}

/// Draws `(t, dropout, eps)` in a fixed order: step, dropout, then noise.
pub fn draw_noise<R: Rng>(dim: usize, n_steps: usize, dropout_p: f64, rng: &mut R) -> NoiseDraw {
    let t = rng.random_range(1..=n_steps);
    let dropped = rng.random::<f64>() < dropout_p;
    let eps = standard_normal(dim, rng);
    NoiseDraw { t, dropped, eps }
}

/// `||eps - pred||^2` summed over rows of `dim` entries and averaged over rows.
pub fn denoising_loss(eps: &[f64], pred: &[f64], dim: usize) -> f64 {
    let rows = eps.len() / dim;
    eps.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / rows as f64
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub n_dropped: usize,
}

/// Batch loss and, when `with_grads`, its gradient for every parameter.
pub fn loss_and_grads<R: Rng>(
    params: &ParamStore,
    batch: &[TrainItem<'_>],
    clouds: &[&PointCloud],
    sched: &NoiseSchedule,
    dropout_p: f64,
    rng: &mut R,
    with_grads: bool,
) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let td = params.config.traj_dim();
    let n = sched.n_steps();
    let b = batch.len();
    let mut noisy = Vec::with_capacity(b * td);
    let mut eps_all = Vec::with_capacity(b * td);
    let mut temb = Vec::with_capacity(b * TIME_DIM);
    let mut used: Vec<usize> = Vec::new();
    let mut slot = Vec::with_capacity(b);
    let mut n_dropped = 0;
    for item in batch {
        if item.traj.len() != td {
            return Err(Error::ShapeMismatch { expected: vec![td], got: vec![item.traj.len()] });
        }
        let d = draw_noise(td, n, dropout_p, rng);
        noisy.extend(forward_diffuse(item.traj, d.t, &d.eps, sched)?);
        eps_all.extend_from_slice(&d.eps);
        temb.extend_from_slice(&time_embedding(d.t, n));
        if d.dropped {
            n_dropped += 1;
            slot.push(None);
        } else {
            let k = match used.iter().position(|&c| c == item.cloud) {
                Some(k) => k,
                None => {
                    used.push(item.cloud);
                    used.len() - 1
                }
            };
            slot.push(Some(k));
        }
    }

    let tape = Tape::new();
    let p = params.vars(&tape);
    let z = if used.is_empty() {
        tape.constant(Tensor::zeros(&[b, crate::nn::LATENT_DIM]))
    } else {
        let cl: Vec<&PointCloud> = used.iter().map(|&c| clouds[c]).collect();
        encode_tape(&tape, &p, &cl).gather_rows(Rc::new(slot))
    };
    let x = tape.var(Tensor::matrix(b, td, noisy));
    let tv = tape.constant(Tensor::matrix(b, TIME_DIM, temb));
    let energy = trunk_tape(&p, x, tv, z).square().sum();
    let pred = grad(energy, &[x], true)?[0];
    let eps = tape.constant(Tensor::matrix(b, td, eps_all));
    let loss = (eps - pred).square().sum().scale(1.0 / b as f64);
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let mut grads = BTreeMap::new();
    if with_grads {
        let names = p.names();
        let g = grad(loss, &p.all(), false)?;
        for (name, gv) in names.into_iter().zip(g) {
            grads.insert(name, gv.value().as_ref().clone());
        }
    }
    Ok(LossEval { loss: value, grads, n_dropped })
}

/// Mean denoising loss of `batch` under fresh noise draws.
pub fn training_loss<R: Rng>(
    params: &ParamStore,
    batch: &[TrainItem<'_>],
    clouds: &[&PointCloud],
    sched: &NoiseSchedule,
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<f64> {
    Ok(loss_and_grads(params, batch, clouds, sched, guidance.dropout_p, rng, false)?.loss)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// `(epoch, mean batch loss)` per epoch.
    pub epoch_losses: Vec<(usize, f64)>,
    /// Loss of every optimizer step in order.
    pub step_losses: Vec<f64>,
}

/// Scales `grads` so that their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) {
    let norm = grads.values().flat_map(|t| t.data().iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
}

/// Trains `model` on `items`. Each epoch visits a fresh permutation in
/// batches; a dataset smaller than the batch size is repeated to fill it.
///
/// `on_epoch` is called with `(epoch, mean loss)` after each epoch.
pub fn train(
    model: &Model,
    items: &[TrainItem<'_>],
    clouds: &[&PointCloud],
    cfg: &TrainConfig,
    guidance: &GuidanceConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    guidance.validate()?;
    if !(cfg.lr > 0.0) || !(0.0..=1.0).contains(&cfg.final_lr_fraction) || cfg.grad_clip.is_some_and(|c| !(c > 0.0)) {
        return Err(Error::InvalidArgument("need lr > 0, final_lr_fraction in [0, 1], grad_clip > 0".into()));
    }
    let mut adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut params = model.params.clone();
    let mut state = AdamState::new(&params);
    let start_step = model.meta.train_steps;
    // Resumed runs draw from a different stream than fresh ones.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ start_step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut initial: Option<f64> = None;
    let mut total_steps = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut count = 0;
        let batches = epoch_batches(items, cfg, &mut order, &mut rng);
        if epoch == 0 {
            total_steps = (batches.len() * cfg.epochs).max(1);
        }
        for batch_idx in batches {
            let batch: Vec<TrainItem> = batch_idx.iter().map(|&i| items[i]).collect();
            let mut eval = loss_and_grads(&params, &batch, clouds, &model.schedule, guidance.dropout_p, &mut rng, true)?;
            let init = *initial.get_or_insert(eval.loss);
            if eval.loss > 10.0 * init {
                return Err(Error::Diverged { step: step_losses.len(), loss: eval.loss, initial: init });
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut eval.grads, c);
            }
            let progress = (step_losses.len() as f64 / total_steps as f64).min(1.0);
            let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            adam.lr = cfg.lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cos);
            let (p, s) = crate::nn::adam_step(&params, &eval.grads, &state, &adam);
            params = p;
            state = s;
            step_losses.push(eval.loss);
            sum += eval.loss;
            count += 1;
        }
        let mean = sum / count as f64;
        epoch_losses.push((epoch, mean));
        on_epoch(epoch, mean);
    }
    let mut trained = model.with_params(params);
    trained.meta.train_steps = start_step + step_losses.len() as u64;
    Ok(TrainOutcome { model: trained.seal(), epoch_losses, step_losses })
}
