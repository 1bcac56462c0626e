//! Pursuit-evasion episodes: perturb-and-refine replanning around the
//! executed history, velocity-limited splicing and candidate selection.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apf::{apply_apf, flat_positions, pursuer_force, repulsive_force, APFParams};
use crate::diffusion::{ddpm_mean_clipped, standard_normal, CompositionSpec, GuidanceConfig, Sampler};
use crate::error::{Error, Result};
use crate::geometry::{dist, norm, Environment};
use crate::kdtree::NearestIndex;
use crate::model::Model;
use crate::nn::encode_cloud;
use crate::planner::{check_model, plan_static, Guidance, PlanBatch, PlanRequest, DEFAULT_X0_CLIP};
use crate::seed::derive_seed;
use crate::trajectory::{State, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_l: f64,
    pub w_s: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { w_l: 1.0, w_s: 0.5 }
    }
}

/// `w_l * length + w_s * sum of squared second differences` of positions.
pub fn trajectory_cost(traj: &Trajectory, w_l: f64, w_s: f64) -> f64 {
    let h = traj.horizon();
    let length: f64 = (1..h).map(|k| dist(traj.pos(k), traj.pos(k - 1))).sum();
    let smooth: f64 = (1..h.saturating_sub(1))
        .map(|k| {
            let (a, b, c) = (traj.pos(k - 1), traj.pos(k), traj.pos(k + 1));
            (0..a.len()).map(|j| (c[j] - 2.0 * b[j] + a[j]).powi(2)).sum::<f64>()
        })
        .sum();
    w_l * length + w_s * smooth
}

/// Moves the pursuer `dt * v * k_p` toward `s`; holds still if they coincide.
pub fn pursuer_update(p: &[f64], s: &[f64], v: f64, k_p: f64, dt: f64) -> Vec<f64> {
    let d = dist(s, p);
    if d == 0.0 {
        return p.to_vec();
    }
    p.iter().zip(s).map(|(pi, si)| pi + dt * v * k_p * (si - pi) / d).collect()
}

/// `n` states from `s1` toward `s2` at constant velocity capped at `v_max`.
pub fn smooth_transition(s1: &State, s2: &State, dt: f64, n: usize, v_max: f64) -> Result<Vec<State>> {
    if n == 0 || !(dt > 0.0) {
        return Err(Error::InvalidArgument("smoothing needs n >= 1 and dt > 0".into()));
    }
    let dw: Vec<f64> = s2.pos.iter().zip(&s1.pos).map(|(b, a)| b - a).collect();
    let len = norm(&dw);
    if len == 0.0 {
        return Ok(vec![State::at_rest(&s1.pos); n]);
    }
    let v_tar: Vec<f64> = dw.iter().map(|x| x / (n as f64 * dt)).collect();
    let speed = norm(&v_tar);
    let clamped = speed > v_max;
    let v_base: Vec<f64> = if clamped {
        let unit: Vec<f64> = v_tar.iter().map(|x| x / speed).collect();
        unit.iter().map(|u| v_max * u).collect()
    } else {
        v_tar
    };
    let mut out: Vec<State> = (1..=n)
        .map(|k| {
            let t = k as f64 * dt;
            State { pos: s1.pos.iter().zip(&v_base).map(|(p, v)| p + t * v).collect(), vel: v_base.clone() }
        })
        .collect();
    if !clamped {
        out[n - 1].pos = s2.pos.clone();
    }
    Ok(out)
}

/// Index of the chosen candidate: cheapest among those free of obstacles
/// and, when `threat` is given, with no waypoint within `r_cap` of it.
/// Without survivors, the fewest colliding waypoints wins, then cost.
/// Ties go to the lower index.
pub fn select_best(batch: &PlanBatch, threat: Option<&[f64]>, r_cap: f64) -> Result<usize> {
    if batch.trajectories.is_empty() {
        return Err(Error::InvalidArgument("empty candidate batch".into()));
    }
    let safe = |i: usize| {
        let t = &batch.trajectories[i];
        batch.stats[i].collision_free && threat.is_none_or(|p| (0..t.horizon()).all(|k| dist(t.pos(k), p) >= r_cap))
    };
    let mut best: Option<usize> = None;
    for i in 0..batch.trajectories.len() {
        if safe(i) && best.is_none_or(|b| batch.stats[i].cost < batch.stats[b].cost) {
            best = Some(i);
        }
    }
    if let Some(b) = best {
        return Ok(b);
    }
    let mut b = 0;
    for i in 1..batch.trajectories.len() {
        let (si, sb) = (&batch.stats[i], &batch.stats[b]);
        if si.n_colliding < sb.n_colliding || (si.n_colliding == sb.n_colliding && si.cost < sb.cost) {
            b = i;
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuerParams {
    pub v: f64,
    pub k_p: f64,
    pub radius: f64,
}

impl Default for PursuerParams {
    fn default() -> Self {
        PursuerParams { v: 0.3, k_p: 1.0, radius: 0.05 }
    }
}

/// Which potential fields the evader uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// No potential fields.
    Base,
    /// Static obstacle field only.
    StaticApf,
    /// Static field plus detection-gated pursuer field.
    FullApf,
}

impl Variant {
    pub fn static_apf(self) -> bool {
        self != Variant::Base
    }

    pub fn pursuer_apf(self) -> bool {
        self == Variant::FullApf
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "diff-base",
            Variant::StaticApf => "diff-sapf",
            Variant::FullApf => "diff-apf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicConfig {
    pub n_dyn: usize,
    pub batch: usize,
    pub m: usize,
    pub m_threshold: usize,
    pub sigma_perturb: f64,
    pub r_detect: f64,
    pub r_cap: f64,
    pub eps_goal: f64,
    pub dt: f64,
    pub n_smooth: usize,
    pub v_max: f64,
    pub cost: CostWeights,
    pub pursuer: PursuerParams,
    pub apf: APFParams,
    pub guidance: GuidanceConfig,
    pub variant: Variant,
    /// Candidates and sampler for the initial plan.
    pub initial_batch: usize,
    pub initial_sampler: Sampler,
    pub x0_clip: Option<f64>,
    /// Keep every chosen plan in the record.
    pub record_plans: bool,
}

impl DynamicConfig {
    pub fn for_horizon(horizon: usize, n_steps: usize) -> Self {
        DynamicConfig {
            n_dyn: 3 * horizon,
            batch: 16,
            m: 4,
            m_threshold: 2,
            sigma_perturb: 0.05,
            r_detect: 0.4,
            r_cap: 0.08,
            eps_goal: 0.05,
            dt: 0.1,
            n_smooth: 3,
            v_max: 1.0,
            cost: CostWeights::default(),
            pursuer: PursuerParams::default(),
            apf: APFParams::for_steps(n_steps),
            guidance: GuidanceConfig::default(),
            variant: Variant::FullApf,
            initial_batch: 32,
            initial_sampler: Sampler::Ddim { steps: 5 },
            x0_clip: Some(DEFAULT_X0_CLIP),
            record_plans: false,
        }
    }

    pub fn validate(&self, horizon: usize, n_steps: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.m_threshold > self.m || self.m > n_steps {
            return bad("need m_threshold <= m <= N");
        }
        if !(2..=3).contains(&self.n_smooth) || self.n_smooth + 1 >= horizon {
            return bad("smoothing window must be 2 or 3");
        }
        if self.batch == 0 || self.initial_batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.dt > 0.0 && self.v_max > 0.0 && self.r_cap > 0.0 && self.r_detect > 0.0 && self.sigma_perturb >= 0.0) {
            return bad("dt, v_max, radii must be positive");
        }
        if self.v_max <= self.pursuer.v * self.pursuer.k_p {
            return bad("evader speed cap must exceed the pursuer's speed");
        }
        self.apf.validate(n_steps)?;
        self.guidance.validate()
    }

    /// Highest plan row that holds executed history.
    fn cursor_max(&self, horizon: usize) -> usize {
        horizon - 1 - self.n_smooth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    Detection { step: usize },
    Capture { step: usize },
    Collision { step: usize },
    GoalReached { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub variant: Variant,
    pub seed: u64,
    pub start: State,
    pub goal: State,
    pub history: Vec<State>,
    pub pursuer_path: Vec<Vec<f64>>,
    pub events: Vec<Event>,
    pub goal_reached: bool,
    pub captured: bool,
    pub n_collisions: usize,
    pub iterations: usize,
    pub initial_plan: Trajectory,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub plans: Vec<Trajectory>,
    /// Wall-clock seconds per iteration; not serialized so records stay
    /// reproducible.
    #[serde(skip)]
    pub iteration_seconds: Vec<f64>,
}

impl EpisodeRecord {
    /// Goal reached with no collisions and no capture.
    pub fn success(&self) -> bool {
        self.goal_reached && !self.captured && self.n_collisions == 0
    }

    pub fn path_length(&self) -> f64 {
        self.history.windows(2).map(|w| dist(&w[0].pos, &w[1].pos)).sum()
    }

    /// Largest executed speed.
    pub fn max_speed(&self, dt: f64) -> f64 {
        self.history.windows(2).map(|w| dist(&w[0].pos, &w[1].pos) / dt).fold(0.0, f64::max)
    }
}

/// Shared, read-only inputs of a refinement.
pub struct RefineInputs<'a> {
    pub guide: &'a Guidance<'a>,
    pub index: &'a NearestIndex,
    pub cfg: &'a DynamicConfig,
    pub sched: &'a crate::diffusion::NoiseSchedule,
}

/// Rows `0..=cursor` take the executed window, the last row takes the goal.
fn condition_history(traj: &mut Trajectory, window: &[State], goal: &State) {
    for (k, s) in window.iter().enumerate() {
        traj.row_mut(k).copy_from_slice(&s.as_row());
    }
    let last = traj.horizon() - 1;
    traj.row_mut(last).copy_from_slice(&goal.as_row());
}

/// Perturbs `tau_high` into `cfg.batch` candidates and runs `cfg.m` partial
/// denoising steps at `t = m..1`. The last `window.len()` states are the
/// executed history ending at plan row `window.len() - 1`.
pub fn refine_step(
    inp: &RefineInputs<'_>,
    tau_high: &Trajectory,
    window: &[State],
    goal: &State,
    pursuer: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let cfg = inp.cfg;
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (h, d) = (tau_high.horizon(), tau_high.d_space());
    let td = tau_high.width() * h;
    let cursor = window.len() - 1;
    let mut trajs = Vec::with_capacity(cfg.batch);
    for i in 0..cfg.batch {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let xi = standard_normal(td, &mut rng);
        let data = tau_high.as_slice().iter().zip(&xi).map(|(x, e)| x + cfg.sigma_perturb * e).collect();
        let mut t = Trajectory::from_flat(h, d, data)?;
        condition_history(&mut t, window, goal);
        trajs.push(t);
    }
    let (g_p, d_p) = cfg.apf.pursuer(cfg.r_detect);
    for j in (1..=cfg.m).rev() {
        let flat: Vec<f64> = trajs.iter().flat_map(|t| t.as_slice().iter().copied()).collect();
        let e = inp.guide.combined(&flat, j)?;
        for (i, tr) in trajs.iter_mut().enumerate() {
            let mu = ddpm_mean_clipped(tr.as_slice(), &e[i * td..(i + 1) * td], j, inp.sched, inp.cfg.x0_clip);
            let mut next = Trajectory::from_flat(h, d, mu)?;
            if j < cfg.m_threshold {
                if cfg.variant.static_apf() {
                    let f = repulsive_force(&flat_positions(&next), d, inp.index, cfg.apf.gamma, cfg.apf.d_thresh);
                    apply_apf(&mut next, &f)?;
                }
                if let Some(p) = pursuer {
                    if cfg.variant.pursuer_apf() && dist(tr.pos(cursor), p) < cfg.r_detect {
                        let f = pursuer_force(&flat_positions(&next), p, g_p, d_p);
                        apply_apf(&mut next, &f)?;
                    }
                }
            }
            condition_history(&mut next, window, goal);
            if !next.is_finite() {
                return Err(Error::NonFinite(format!("refinement candidate {i} at j={j}")));
            }
            *tr = next;
        }
    }
    Ok(trajs)
}

/// Replaces rows `cursor+1..=cursor+n` by a velocity-limited segment from
/// row `cursor` toward row `cursor+n`.
pub fn splice_smooth(traj: &mut Trajectory, cursor: usize, cfg: &DynamicConfig) -> Result<()> {
    let d = traj.d_space();
    let state = |t: &Trajectory, k: usize| State { pos: t.pos(k).to_vec(), vel: t.vel(k).to_vec() };
    let seg = smooth_transition(&state(traj, cursor), &state(traj, cursor + cfg.n_smooth), cfg.dt, cfg.n_smooth, cfg.v_max)?;
    for (k, s) in seg.iter().enumerate() {
        let row = traj.row_mut(cursor + 1 + k);
        row[..d].copy_from_slice(&s.pos);
        row[d..].copy_from_slice(&s.vel);
    }
    Ok(())
}

/// Default pursuer start: 60% of the way from start to goal, nudged
/// sideways until it is clear of obstacles.
pub fn default_pursuer_start(env: &Environment, start: &[f64], goal: &[f64], radius: f64) -> Vec<f64> {
    let base: Vec<f64> = start.iter().zip(goal).map(|(s, g)| s + 0.6 * (g - s)).collect();
    let dir: Vec<f64> = goal.iter().zip(start).map(|(g, s)| g - s).collect();
    let len = norm(&dir);
    let mut side = vec![0.0; start.len()];
    if len > 0.0 && start.len() >= 2 {
        side[0] = -dir[1] / len;
        side[1] = dir[0] / len;
    } else {
        side[0] = 1.0;
    }
    for k in 0..200usize {
        let off = 0.02 * k.div_ceil(2) as f64 * if k % 2 == 0 { 1.0 } else { -1.0 };
        let p: Vec<f64> = base.iter().zip(&side).map(|(b, s)| b + off * s).collect();
        if env.in_workspace(&p) && env.clearance(&p) > radius {
            return p;
        }
    }
    base
}

/// Runs one pursuit-evasion episode. `pursuer_start` of `None` gives a
/// pursuer-free run.
pub fn run_pursuit_episode(
    model: &Model,
    env: &Environment,
    start: &State,
    goal: &State,
    pursuer_start: Option<&[f64]>,
    cfg: &DynamicConfig,
    seed: u64,
) -> Result<EpisodeRecord> {
    check_model(model, env)?;
    let mcfg = model.config();
    let h = mcfg.horizon;
    cfg.validate(h, model.schedule.n_steps())?;
    let init_req = PlanRequest {
        start: start.clone(),
        goal: goal.clone(),
        batch: cfg.initial_batch,
        sampler: cfg.initial_sampler,
        guidance: cfg.guidance,
        apf: cfg.variant.static_apf().then_some(cfg.apf),
        x0_clip: cfg.x0_clip,
        seed: derive_seed(seed, &[0]),
    };
    let init = plan_static(model, env, &init_req)?;
    let mut tau_high = init.trajectories[select_best(&init, None, cfg.r_cap)?].clone();
    let initial_plan = tau_high.clone();

    let net = model.net();
    let spec = CompositionSpec::guided(encode_cloud(&model.params, &env.cloud), cfg.guidance.w);
    let guide = Guidance { net: &net, n_steps: model.schedule.n_steps(), spec: &spec };
    let index = NearestIndex::build(&env.cloud);
    let inp = RefineInputs { guide: &guide, index: &index, cfg, sched: &model.schedule };
    let c_max = cfg.cursor_max(h);

    let mut rec = EpisodeRecord {
        variant: cfg.variant,
        seed,
        start: start.clone(),
        goal: goal.clone(),
        history: vec![start.clone()],
        pursuer_path: pursuer_start.map(|p| vec![p.to_vec()]).unwrap_or_default(),
        events: Vec::new(),
        goal_reached: false,
        captured: false,
        n_collisions: 0,
        iterations: 0,
        initial_plan,
        plans: Vec::new(),
        iteration_seconds: Vec::new(),
    };
    if dist(&start.pos, &goal.pos) < cfg.eps_goal {
        rec.goal_reached = true;
        rec.events.push(Event::GoalReached { step: 0 });
        return Ok(rec);
    }
    let mut p = pursuer_start.map(|p| p.to_vec());

    for step in 0..cfg.n_dyn {
        let clock = Instant::now();
        rec.iterations = step + 1;
        let current = rec.history.last().expect("non-empty history").clone();
        if let Some(pp) = p.as_mut() {
            *pp = pursuer_update(pp, &current.pos, cfg.pursuer.v, cfg.pursuer.k_p, cfg.dt);
            rec.pursuer_path.push(pp.clone());
            if dist(&current.pos, pp) < cfg.r_cap {
                rec.captured = true;
                rec.events.push(Event::Capture { step });
                break;
            }
        }
        let detected = p.as_deref().filter(|pp| dist(&current.pos, pp) < cfg.r_detect);
        if detected.is_some() {
            rec.events.push(Event::Detection { step });
        }

        let window_start = rec.history.len().saturating_sub(c_max + 1);
        let window = &rec.history[window_start..];
        let cursor = window.len() - 1;
        let mut cands = refine_step(&inp, &tau_high, window, goal, detected, derive_seed(seed, &[1, step as u64]))?;
        for c in cands.iter_mut() {
            splice_smooth(c, cursor, cfg)?;
        }
        let batch = PlanBatch::evaluate(cands, env, &cfg.cost);
        let best = select_best(&batch, detected, cfg.r_cap)?;
        let mut chosen = batch.trajectories[best].clone();
        let next = State { pos: chosen.pos(cursor + 1).to_vec(), vel: chosen.vel(cursor + 1).to_vec() };
        rec.history.push(next.clone());

        // Keep the executed window at most c_max + 1 rows by dropping the
        // oldest row and repeating the goal at the end.
        if rec.history.len() > c_max + 1 {
            let w = chosen.width();
            let data = chosen.as_mut_slice();
            data.copy_within(w.., 0);
        }
        let window_start = rec.history.len().saturating_sub(c_max + 1);
        condition_history(&mut chosen, &rec.history[window_start..], goal);
        if cfg.record_plans {
            rec.plans.push(chosen.clone());
        }
        tau_high = chosen;
        rec.iteration_seconds.push(clock.elapsed().as_secs_f64());

        if env.in_collision(&next.pos, 0.0) {
            rec.n_collisions += 1;
            rec.events.push(Event::Collision { step });
        }
        if let Some(pp) = p.as_deref() {
            if dist(&next.pos, pp) < cfg.r_cap {
                rec.captured = true;
                rec.events.push(Event::Capture { step });
                break;
            }
        }
        if dist(&next.pos, &goal.pos) < cfg.eps_goal {
            rec.goal_reached = true;
            rec.events.push(Event::GoalReached { step });
            break;
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(p: &[f64]) -> State {
        State::at_rest(p)
    }

    #[test]
    fn pursuer_steps_have_fixed_length() {
        assert_eq!(pursuer_update(&[0.0, 0.0], &[2.0, 0.0], 1.0, 1.0, 0.1), vec![0.1, 0.0]);
        assert_eq!(pursuer_update(&[0.3, 0.1], &[2.0, 0.0], 1.0, 0.0, 0.1), vec![0.3, 0.1]);
        assert_eq!(pursuer_update(&[0.3, 0.1], &[0.3, 0.1], 1.0, 1.0, 0.1), vec![0.3, 0.1]);
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let q = pursuer_update(&p, &s, 0.6, 0.7, 0.1);
            assert!((dist(&p, &q) - 0.042).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_examples() {
        let out = smooth_transition(&st(&[0.0, 0.0]), &st(&[0.3, 0.0]), 0.1, 3, 2.0).unwrap();
        // 0.3 / (3 * 0.1) is not exactly 1 in binary floating point.
        for (s, x) in out.iter().zip([0.1, 0.2, 0.3]) {
            assert!((s.pos[0] - x).abs() < 1e-15 && s.pos[1] == 0.0);
            assert!((s.vel[0] - 1.0).abs() < 1e-15 && s.vel[1] == 0.0);
        }
        assert_eq!(out[2].pos[0], 0.3);

        let s2 = st(&[0.13, -0.21]);
        let out = smooth_transition(&st(&[0.05, 0.02]), &s2, 0.1, 3, 1.0).unwrap();
        assert_eq!(out[2].pos, s2.pos);

        let out = smooth_transition(&st(&[0.0, 0.0]), &st(&[0.0, 0.9]), 0.1, 3, 1.0).unwrap();
        assert!(out.iter().all(|s| norm(&s.vel) == 1.0));
        assert!(out[2].pos[1] < 0.9);

        let out = smooth_transition(&st(&[0.2, 0.2]), &st(&[0.2, 0.2]), 0.1, 2, 1.0).unwrap();
        assert_eq!(out, vec![st(&[0.2, 0.2]); 2]);
        assert!(smooth_transition(&st(&[0.0]), &st(&[1.0]), 0.0, 2, 1.0).is_err());
    }

    #[test]
    fn cost_properties() {
        let line: Vec<Vec<f64>> = (0..10).map(|k| vec![0.1 * k as f64, 0.05 * k as f64]).collect();
        let t = Trajectory::from_positions(2, &line, 0.1);
        let c = trajectory_cost(&t, 1.0, 0.0);
        assert!((c - dist(&line[0], &line[9])).abs() < 1e-12);
        assert!(trajectory_cost(&t, 0.0, 1.0) < 1e-28);

        let bent: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.1, 0.1], vec![0.3, 0.0], vec![0.4, 0.2]];
        let t = Trajectory::from_positions(2, &bent, 0.1);
        let doubled: Vec<Vec<f64>> = bent.iter().map(|p| p.iter().map(|x| 2.0 * x).collect()).collect();
        let t2 = Trajectory::from_positions(2, &doubled, 0.1);
        let (l, s) = (trajectory_cost(&t, 1.0, 0.0), trajectory_cost(&t, 0.0, 1.0));
        assert!((trajectory_cost(&t2, 1.0, 0.0) - 2.0 * l).abs() < 1e-12);
        assert!((trajectory_cost(&t2, 0.0, 1.0) - 4.0 * s).abs() < 1e-12);
        // Hand computation: second differences (0.1,-0.2) and (-0.1,0.3).
        let len = 0.02f64.sqrt() + 0.05f64.sqrt() + 0.05f64.sqrt();
        assert!((trajectory_cost(&t, 1.0, 0.5) - (len + 0.5 * 0.15)).abs() < 1e-12);
    }

    fn batch_of(costs: &[(usize, f64)]) -> PlanBatch {
        PlanBatch {
            trajectories: costs.iter().map(|_| Trajectory::zeros(4, 2)).collect(),
            stats: costs
                .iter()
                .map(|&(n, c)| crate::planner::CandidateStats { n_colliding: n, collision_free: n == 0, cost: c })
                .collect(),
        }
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_best(&batch_of(&[(2, 1.0), (0, 9.0), (1, 0.5)]), None, 0.08).unwrap(), 1);
        assert_eq!(select_best(&batch_of(&[(3, 1.0), (1, 9.0), (1, 2.0)]), None, 0.08).unwrap(), 2);
        assert_eq!(select_best(&batch_of(&[(0, 2.0), (0, 1.5), (0, 1.5)]), None, 0.08).unwrap(), 1);
        // A pursuer at the origin sits on every waypoint of these candidates.
        assert_eq!(select_best(&batch_of(&[(1, 1.0), (0, 9.0)]), Some(&[0.0, 0.0]), 0.08).unwrap(), 1);
        assert!(select_best(&batch_of(&[]), None, 0.08).is_err());
    }

    #[test]
    fn defaults_are_consistent() {
        let c = DynamicConfig::for_horizon(48, 100);
        assert_eq!(c.n_dyn, 144);
        assert!(c.validate(48, 100).is_ok());
        assert!(c.v_max > c.pursuer.v * c.pursuer.k_p);
        let fast = DynamicConfig { pursuer: PursuerParams { v: 2.0, ..c.pursuer }, ..c.clone() };
        assert!(fast.validate(48, 100).is_err());
        assert!(DynamicConfig { n_smooth: 4, ..c }.validate(48, 100).is_err());
    }
}
