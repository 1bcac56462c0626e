//! Guided reverse diffusion with potential-field injection and endpoint
//! conditioning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apf::{apply_apf, flat_positions, repulsive_force, APFParams};
use crate::diffusion::{
    add_reverse_noise, compose_gradients, ddim_step_clipped, ddpm_mean_clipped, predict_x0, standard_normal, CompositionSpec, GuidanceConfig,
    Sampler,
};
use crate::error::{Error, Result};
use crate::geometry::Environment;
use crate::kdtree::NearestIndex;
use crate::model::Model;
use crate::nn::{encode_cloud, EnergyNet, SceneLatent};
use crate::pursuit::{trajectory_cost, CostWeights};
use crate::seed::derive_seed;
use crate::trajectory::{State, Trajectory};

/// A clean-sample estimate outside this box late in sampling, or a final
/// sample outside it, is treated as divergence.
pub const STABILITY_BOUND: f64 = 1.5;

/// Overwrites the first and last rows with `start` and `goal`.
pub fn condition_endpoints(traj: &mut Trajectory, start: &State, goal: &State) {
    let last = traj.horizon() - 1;
    traj.row_mut(0).copy_from_slice(&start.as_row());
    traj.row_mut(last).copy_from_slice(&goal.as_row());
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: State,
    pub goal: State,
    pub batch: usize,
    pub sampler: Sampler,
    pub guidance: GuidanceConfig,
    pub apf: Option<APFParams>,
    /// Bound on the clean-sample estimate inside each reverse step.
    #[serde(default = "default_clip")]
    pub x0_clip: Option<f64>,
    pub seed: u64,
}

/// Trajectories live in the unit workspace box.
pub const DEFAULT_X0_CLIP: f64 = 1.0;

fn default_clip() -> Option<f64> {
    Some(DEFAULT_X0_CLIP)
}

impl PlanRequest {
    pub fn new(start: State, goal: State, seed: u64) -> Self {
        PlanRequest {
            start,
            goal,
            batch: 32,
            sampler: Sampler::Ddim { steps: 5 },
            guidance: GuidanceConfig::default(),
            apf: Some(APFParams::for_steps(100)),
            x0_clip: Some(DEFAULT_X0_CLIP),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub n_colliding: usize,
    pub collision_free: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanBatch {
    pub trajectories: Vec<Trajectory>,
    pub stats: Vec<CandidateStats>,
}

impl PlanBatch {
    pub fn evaluate(trajectories: Vec<Trajectory>, env: &Environment, weights: &CostWeights) -> Self {
        let stats = trajectories
            .iter()
            .map(|t| {
                let (n, _) = env.trajectory_collision_stats(t, 0.0);
                CandidateStats { n_colliding: n, collision_free: n == 0, cost: trajectory_cost(t, weights.w_l, weights.w_s) }
            })
            .collect();
        PlanBatch { trajectories, stats }
    }

    pub fn any_collision_free(&self) -> bool {
        self.stats.iter().any(|s| s.collision_free)
    }

    /// Fraction of all waypoints that lie inside an obstacle.
    pub fn collision_intensity(&self) -> f64 {
        let total: usize = self.trajectories.iter().map(|t| t.horizon()).sum();
        let bad: usize = self.stats.iter().map(|s| s.n_colliding).sum();
        bad as f64 / total.max(1) as f64
    }
}

/// Latents and weights used by every reverse step.
pub struct Guidance<'a> {
    pub net: &'a EnergyNet,
    pub n_steps: usize,
    pub spec: &'a CompositionSpec,
}

impl Guidance<'_> {
    /// Combined gradient for each trajectory of a flat `B x (H d)` batch.
    pub fn combined(&self, trajs: &[f64], t: usize) -> Result<Vec<f64>> {
        let td = self.net.config.traj_dim();
        let b = trajs.len() / td;
        let parts = self.spec.parts.len();
        let mut contexts = vec![self.net.context_bias(t, self.n_steps, &SceneLatent::zero())];
        for (z, _) in &self.spec.parts {
            contexts.push(self.net.context_bias(t, self.n_steps, z));
        }
        let mut stacked = Vec::with_capacity((parts + 1) * trajs.len());
        let mut ctx_index = Vec::with_capacity((parts + 1) * b);
        for c in 0..=parts {
            stacked.extend_from_slice(trajs);
            ctx_index.extend(std::iter::repeat_n(c, b));
        }
        let (_, g) = self.net.energy_and_grad(&stacked, &contexts, &ctx_index);
        let mut out = Vec::with_capacity(trajs.len());
        for i in 0..b {
            let row = |c: usize| &g[(c * b + i) * td..(c * b + i + 1) * td];
            let comps: Vec<(&[f64], f64)> = self.spec.parts.iter().enumerate().map(|(k, (_, w))| (row(k + 1), *w)).collect();
            out.extend(compose_gradients(row(0), &comps)?);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("guided gradient at t={t}")));
        }
        Ok(out)
    }
}

/// Ensures the model carries a checksum and matches `env`.
pub fn check_model(model: &Model, env: &Environment) -> Result<()> {
    if model.checksum().is_none() {
        return Err(Error::UntrainedModel);
    }
    if model.config().d_space != env.d_space {
        return Err(Error::ShapeMismatch { expected: vec![model.config().d_space], got: vec![env.d_space] });
    }
    Ok(())
}

fn check_request(model: &Model, env: &Environment, req: &PlanRequest) -> Result<()> {
    check_model(model, env)?;
    let d = env.d_space;
    for s in [&req.start, &req.goal] {
        if s.pos.len() != d || s.vel.len() != d {
            return Err(Error::ShapeMismatch { expected: vec![d], got: vec![s.pos.len()] });
        }
        if env.in_collision(&s.pos, 0.0) {
            return Err(Error::InvalidArgument(format!("state {:?} is in collision", s.pos)));
        }
    }
    if req.batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    req.guidance.validate()?;
    if req.x0_clip.is_some_and(|c| !(c > 0.0)) {
        return Err(Error::InvalidArgument("x0 clip must be positive".into()));
    }
    if let Some(apf) = &req.apf {
        apf.validate(model.schedule.n_steps())?;
    }
    Ok(())
}

/// Samples `req.batch` candidates guided by the scene latent of `env`.
pub fn plan_static(model: &Model, env: &Environment, req: &PlanRequest) -> Result<PlanBatch> {
    check_request(model, env, req)?;
    let z = encode_cloud(&model.params, &env.cloud);
    plan_compositional(model, env, &CompositionSpec::guided(z, req.guidance.w), req)
}

/// Samples candidates under a composition of scene latents. `env` is the
/// environment whose cloud drives the potential field and whose obstacles
/// are used for collision statistics.
pub fn plan_compositional(model: &Model, env: &Environment, spec: &CompositionSpec, req: &PlanRequest) -> Result<PlanBatch> {
    sample(model, env, spec, req, true, None)
}

/// Like [`plan_compositional`], also returning the batch after every
/// reverse step (first entry is the initial noise).
pub fn plan_traced(
    model: &Model,
    env: &Environment,
    spec: &CompositionSpec,
    req: &PlanRequest,
) -> Result<(PlanBatch, Vec<Vec<Trajectory>>)> {
    let mut trace = Vec::new();
    let batch = sample(model, env, spec, req, true, Some(&mut trace))?;
    Ok((batch, trace))
}

fn sample(
    model: &Model,
    env: &Environment,
    spec: &CompositionSpec,
    req: &PlanRequest,
    guard: bool,
    mut trace: Option<&mut Vec<Vec<Trajectory>>>,
) -> Result<PlanBatch> {
    check_request(model, env, req)?;
    spec.validate()?;
    let net = model.net();
    let sched = &model.schedule;
    let n = sched.n_steps();
    let cfg = model.config();
    let (h, d) = (cfg.horizon, cfg.d_space);
    let td = cfg.traj_dim();
    let b = req.batch;
    let guide = Guidance { net: &net, n_steps: n, spec };
    let index = NearestIndex::build(&env.cloud);

    let steps = req.sampler.timesteps(sched)?;
    let s = steps.len();
    let apf_from = s - req.apf.map_or(0, |a| a.active_steps(s, n));
    let guard_from = s - (s as f64 * 0.25).ceil() as usize;

    let mut rngs: Vec<ChaCha8Rng> =
        (0..b).map(|i| ChaCha8Rng::seed_from_u64(derive_seed(req.seed, &[i as u64]))).collect();
    let mut trajs = Vec::with_capacity(b);
    for rng in rngs.iter_mut() {
        let mut t = Trajectory::from_flat(h, d, standard_normal(td, rng))?;
        condition_endpoints(&mut t, &req.start, &req.goal);
        trajs.push(t);
    }
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(trajs.clone());
    }

    for (k, &t) in steps.iter().enumerate() {
        let flat: Vec<f64> = trajs.iter().flat_map(|tr| tr.as_slice().iter().copied()).collect();
        let e = guide.combined(&flat, t)?;
        for (i, tr) in trajs.iter_mut().enumerate() {
            let x = tr.as_slice();
            let ei = &e[i * td..(i + 1) * td];
            let next = match req.sampler {
                Sampler::Ddpm => ddpm_mean_clipped(x, ei, t, sched, req.x0_clip),
                Sampler::Ddim { .. } => {
                    let t_prev = steps.get(k + 1).copied().unwrap_or(0);
                    ddim_step_clipped(x, ei, t, t_prev, sched, req.x0_clip)?
                }
            };
            if guard && k >= guard_from {
                // The noisy state legitimately leaves the box; its clean
                // estimate only does so when the chain diverges.
                let x0 = predict_x0(x, ei, t, sched, None);
                let m = x0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if !(m <= STABILITY_BOUND) {
                    return Err(Error::Unstable { step: t, value: m });
                }
            }
            let mut next = Trajectory::from_flat(h, d, next)?;
            if k >= apf_from {
                let apf = req.apf.expect("active steps imply APF");
                let f = repulsive_force(&flat_positions(&next), d, &index, apf.gamma, apf.d_thresh);
                apply_apf(&mut next, &f)?;
            }
            if req.sampler == Sampler::Ddpm {
                add_reverse_noise(next.as_mut_slice(), t, sched, &mut rngs[i]);
            }
            condition_endpoints(&mut next, &req.start, &req.goal);
            if !next.is_finite() {
                return Err(Error::NonFinite(format!("candidate {i} at t={t}")));
            }
            if guard && k + 1 == s && next.max_abs() > STABILITY_BOUND {
                return Err(Error::Unstable { step: t, value: next.max_abs() });
            }
            *tr = next;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(trajs.clone());
        }
    }
    Ok(PlanBatch::evaluate(trajs, env, &CostWeights::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Obstacle;
    use crate::nn::NetConfig;

    fn model() -> Model {
        Model::init(NetConfig::new(2, 48), 100, 1).unwrap().seal()
    }

    fn unguarded(m: &Model, env: &Environment, req: &PlanRequest) -> PlanBatch {
        let z = encode_cloud(&m.params, &env.cloud);
        sample(m, env, &CompositionSpec::guided(z, req.guidance.w), req, false, None).unwrap()
    }

    fn endpoints() -> (State, State) {
        (State::at_rest(&[-0.8, -0.8]), State::at_rest(&[0.8, 0.7]))
    }

    #[test]
    fn conditioning_overwrites_only_endpoints() {
        let (s, g) = endpoints();
        let mut t = Trajectory::from_flat(5, 2, (0..20).map(|v| v as f64).collect()).unwrap();
        let orig = t.clone();
        condition_endpoints(&mut t, &s, &g);
        assert_eq!(t.row(0), &[-0.8, -0.8, 0.0, 0.0]);
        assert_eq!(t.row(4), &[0.8, 0.7, 0.0, 0.0]);
        for k in 1..4 {
            assert_eq!(t.row(k), orig.row(k));
        }
        let again = t.clone();
        condition_endpoints(&mut t, &s, &g);
        assert_eq!(t, again);
    }

    #[test]
    fn samples_are_conditioned_and_deterministic() {
        let m = model();
        let env = Environment::new("e", 2, vec![Obstacle::circle(&[0.0, 0.0], 0.2)], 3).unwrap();
        let (s, g) = endpoints();
        for sampler in [Sampler::Ddpm, Sampler::Ddim { steps: 5 }] {
            let req = PlanRequest { batch: 4, sampler, ..PlanRequest::new(s.clone(), g.clone(), 11) };
            let a = unguarded(&m, &env, &req);
            let b = unguarded(&m, &env, &req);
            assert_eq!(a, b);
            for t in &a.trajectories {
                assert_eq!(t.row(0), s.as_row().as_slice());
                assert_eq!(t.row(47), g.as_row().as_slice());
            }
            // Candidate i does not depend on the batch size.
            let small = unguarded(&m, &env, &PlanRequest { batch: 2, ..req.clone() });
            assert_eq!(small.trajectories[..], a.trajectories[..2]);
        }
    }

    #[test]
    fn single_component_composition_matches_guidance() {
        let m = model();
        let env = Environment::new("e", 2, vec![Obstacle::axis_box(&[-0.2, -0.1], &[0.1, 0.3])], 2).unwrap();
        let (s, g) = endpoints();
        let req = PlanRequest { batch: 3, ..PlanRequest::new(s, g, 5) };
        let a = unguarded(&m, &env, &req);
        let z = encode_cloud(&m.params, &env.cloud);
        let spec = CompositionSpec { parts: vec![(z.clone(), 1.0 + req.guidance.w)] };
        assert_eq!(sample(&m, &env, &spec, &req, false, None).unwrap(), a);
        let split = CompositionSpec { parts: vec![(z.clone(), 1.5), (z, 1.5)] };
        let c = sample(&m, &env, &split, &req, false, None).unwrap();
        for (x, y) in c.trajectories.iter().zip(&a.trajectories) {
            for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn apf_changes_only_the_active_steps() {
        let m = model();
        let env = Environment::new("e", 2, vec![Obstacle::circle(&[0.0, 0.0], 0.25)], 4).unwrap();
        let (s, g) = endpoints();
        let z = encode_cloud(&m.params, &env.cloud);
        // Untrained samples drift far away, so use a long-range field.
        let apf = APFParams { d_thresh: 1e4, ..APFParams::for_steps(100) };
        let on = PlanRequest { batch: 2, sampler: Sampler::Ddpm, apf: Some(apf), ..PlanRequest::new(s, g, 3) };
        let off = PlanRequest { apf: None, ..on.clone() };
        let spec = CompositionSpec::guided(z, on.guidance.w);
        let trace = |req: &PlanRequest| {
            let mut t = Vec::new();
            sample(&m, &env, &spec, req, false, Some(&mut t)).unwrap();
            t
        };
        let (a, b) = (trace(&on), trace(&off));
        assert_eq!(a.len(), 101);
        // Entry k holds the batch after k steps; the step from t to t-1 is
        // entry 101 - t, so APF first acts at t = 24.
        assert_eq!(a[..77], b[..77]);
        assert_ne!(a[77], b[77]);
    }

    #[test]
    fn unsealed_model_and_bad_requests_are_rejected() {
        let env = Environment::empty("e", 2);
        let (s, g) = endpoints();
        let req = PlanRequest::new(s.clone(), g.clone(), 0);
        let raw = Model::init(NetConfig::new(2, 48), 100, 1).unwrap();
        assert!(matches!(plan_static(&raw, &env, &req), Err(Error::UntrainedModel)));
        let blocked = Environment::new("b", 2, vec![Obstacle::circle(&[-0.8, -0.8], 0.1)], 0).unwrap();
        assert!(plan_static(&model(), &blocked, &req).is_err());
        assert!(plan_static(&model(), &env, &PlanRequest { batch: 0, ..req }).is_err());
        let env3 = Environment::empty("e3", 3);
        assert!(plan_static(&model(), &env3, &PlanRequest::new(s, g, 0)).is_err());
    }

    #[test]
    fn empty_environment_is_collision_free() {
        let env = Environment::empty("e", 2);
        let (s, g) = endpoints();
        let req = PlanRequest { batch: 4, ..PlanRequest::new(s, g, 1) };
        let batch = unguarded(&model(), &env, &req);
        assert!(batch.stats.iter().all(|c| c.collision_free));
        assert_eq!(batch.collision_intensity(), 0.0);
    }

    #[test]
    fn divergent_sampling_is_reported() {
        // An untrained energy predicts almost no noise, so the chain blows up.
        let env = Environment::empty("e", 2);
        let (s, g) = endpoints();
        let r = plan_static(&model(), &env, &PlanRequest::new(s, g, 1));
        assert!(matches!(r, Err(Error::Unstable { .. })), "{r:?}");
    }
}
