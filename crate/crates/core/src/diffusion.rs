//! Noise schedule, forward diffusion, guidance combination and the two
//! reverse samplers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SceneLatent;

/// Linear beta schedule. Arrays are indexed by diffusion step `t` in `1..=N`;
/// `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    n_steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

pub const MAX_BETA: f64 = 0.5;

impl NoiseSchedule {
    /// Betas rise linearly from `1e-4` to `2e-2` on a 1000-step scale, i.e.
    /// from `0.1 / N` to `20 / N` for `N` steps.
    pub fn linear(n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 diffusion steps, got {n_steps}")));
        }
        let scale = 1000.0 / n_steps as f64;
        let (lo, hi) = (1e-4 * scale, 2e-2 * scale);
        // Very short chains would otherwise push beta past 1.
        let betas: Vec<f64> =
            (0..n_steps).map(|i| (lo + (hi - lo) * i as f64 / (n_steps - 1) as f64).min(MAX_BETA)).collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        let mut alpha_bars = vec![1.0];
        for b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        let mut sigmas = vec![0.0; betas.len() + 1];
        for t in 2..=betas.len() {
            let var = betas[t - 1] * (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]);
            sigmas[t] = var.sqrt();
        }
        Ok(NoiseSchedule { n_steps: betas.len(), betas, alpha_bars, sigmas })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Reverse-process standard deviation; zero at `t = 1`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.n_steps {
            return Err(Error::InvalidArgument(format!("step {t} outside [1, {}]", self.n_steps)));
        }
        Ok(())
    }

    /// Evenly spaced DDIM grid from `N` down to `0` with `steps` transitions.
    pub fn ddim_grid(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.n_steps {
            return Err(Error::InvalidArgument(format!("DDIM steps {steps} outside [1, {}]", self.n_steps)));
        }
        let n = self.n_steps as f64;
        Ok((0..=steps).map(|k| (n - k as f64 * n / steps as f64).round() as usize).collect())
    }
}

/// `tau_t = sqrt(ab_t) tau_0 + sqrt(1 - ab_t) eps`.
pub fn forward_diffuse(tau0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    same_len(tau0, eps)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(tau0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn standard_normal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: vec![a.len()], got: vec![b.len()] });
    }
    Ok(())
}

/// Classifier-free guidance settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Guidance scale `w`.
    pub w: f64,
    /// Probability of dropping the scene latent during training.
    pub dropout_p: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { w: 2.0, dropout_p: 0.2 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) || !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!("bad guidance config {self:?}")));
        }
        Ok(())
    }
}

/// Guided prediction `(1 + w) e_cond - w e_uncond`.
///
/// Evaluated as the one-component composition `e_uncond + (1 + w)(e_cond -
/// e_uncond)` so that guided and composed sampling share arithmetic exactly.
pub fn cfg_combine(e_cond: &[f64], e_uncond: &[f64], w: f64) -> Result<Vec<f64>> {
    compose_gradients(e_uncond, &[(e_cond, 1.0 + w)])
}

/// `e_uncond + sum_i w_i (e_cond_i - e_uncond)`.
pub fn compose_gradients(e_uncond: &[f64], parts: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("composition needs at least one component".into()));
    }
    let mut out = e_uncond.to_vec();
    for (e, w) in parts {
        same_len(e_uncond, e)?;
        for ((o, c), u) in out.iter_mut().zip(e.iter()).zip(e_uncond) {
            *o += w * (c - u);
        }
    }
    Ok(out)
}

/// Scene latents and their guidance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionSpec {
    pub parts: Vec<(SceneLatent, f64)>,
}

impl CompositionSpec {
    /// Single-latent guidance with scale `w`.
    pub fn guided(z: SceneLatent, w: f64) -> Self {
        CompositionSpec { parts: vec![(z, 1.0 + w)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() || self.parts.iter().any(|(_, w)| !w.is_finite()) {
            return Err(Error::InvalidArgument("composition needs finite weights and >= 1 part".into()));
        }
        Ok(())
    }
}

/// DDPM posterior mean `(tau_t - (1 - a_t)/sqrt(1 - ab_t) e) / sqrt(a_t)`.
pub fn ddpm_mean(tau_t: &[f64], e: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let a = sched.alpha(t);
    let k = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / a.sqrt();
    tau_t.iter().zip(e).map(|(x, e)| (x - k * e) * inv).collect()
}

/// Adds `sigma_t xi` to `mean`; no noise at `t = 1`.
pub fn add_reverse_noise<R: Rng>(mean: &mut [f64], t: usize, sched: &NoiseSchedule, rng: &mut R) {
    if t > 1 {
        let s = sched.sigma(t);
        for x in mean.iter_mut() {
            *x += s * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// One ancestral DDPM step `tau_t -> tau_{t-1}`.
pub fn ddpm_step<R: Rng>(tau_t: &[f64], e: &[f64], t: usize, sched: &NoiseSchedule, rng: &mut R) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    same_len(tau_t, e)?;
    let mut out = ddpm_mean(tau_t, e, t, sched);
    add_reverse_noise(&mut out, t, sched, rng);
    Ok(out)
}

/// Deterministic DDIM step `tau_t -> tau_{t_prev}`.
pub fn ddim_step(tau_t: &[f64], e: &[f64], t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    same_len(tau_t, e)?;
    if t_prev > t {
        return Err(Error::InvalidArgument(format!("t_prev {t_prev} > t {t}")));
    }
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    Ok(tau_t
        .iter()
        .zip(e)
        .map(|(x, e)| {
            let x0 = (x - sb * e) / sa;
            pa * x0 + pb * e
        })
        .collect())
}

/// Clean-sample estimate `(tau_t - sqrt(1 - ab_t) e) / sqrt(ab_t)`, clamped
/// to `[-c, c]` when `clip` is `Some(c)`.
pub fn predict_x0(tau_t: &[f64], e: &[f64], t: usize, sched: &NoiseSchedule, clip: Option<f64>) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    tau_t
        .iter()
        .zip(e)
        .map(|(x, e)| {
            let x0 = (x - sb * e) / sa;
            clip.map_or(x0, |c| x0.clamp(-c, c))
        })
        .collect()
}

/// DDPM posterior mean written through the clean-sample estimate, so the
/// estimate can be clipped. Without clipping it equals [`ddpm_mean`] up to
/// rounding.
pub fn ddpm_mean_clipped(tau_t: &[f64], e: &[f64], t: usize, sched: &NoiseSchedule, clip: Option<f64>) -> Vec<f64> {
    let x0 = predict_x0(tau_t, e, t, sched, clip);
    let (ab, ab_prev, a) = (sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.alpha(t));
    let c0 = ab_prev.sqrt() * (1.0 - a) / (1.0 - ab);
    let ct = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    x0.iter().zip(tau_t).map(|(x0, x)| c0 * x0 + ct * x).collect()
}

/// [`ddim_step`] with the clean-sample estimate optionally clipped.
pub fn ddim_step_clipped(
    tau_t: &[f64],
    e: &[f64],
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    clip: Option<f64>,
) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    same_len(tau_t, e)?;
    if t_prev > t {
        return Err(Error::InvalidArgument(format!("t_prev {t_prev} > t {t}")));
    }
    let ab_prev = sched.alpha_bar(t_prev);
    let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let x0 = predict_x0(tau_t, e, t, sched, clip);
    Ok(x0.iter().zip(e).map(|(x0, e)| pa * x0 + pb * e).collect())
}

/// Sampler choice for the reverse chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    /// Ancestral updates over all `N` steps.
    Ddpm,
    /// Deterministic updates over an evenly spaced grid.
    Ddim { steps: usize },
}

impl Sampler {
    /// Timesteps visited, from `N` down to `1` (DDPM) or the DDIM grid
    /// without its trailing zero.
    pub fn timesteps(&self, sched: &NoiseSchedule) -> Result<Vec<usize>> {
        match *self {
            Sampler::Ddpm => Ok((1..=sched.n_steps()).rev().collect()),
            Sampler::Ddim { steps } => {
                let mut g = sched.ddim_grid(steps)?;
                g.pop();
                Ok(g)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Sampler::Ddpm => "ddpm".into(),
            Sampler::Ddim { steps } => format!("ddim{steps}"),
        }
    }
}
