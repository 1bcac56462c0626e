//! Point-cloud encoder and energy network.
//!
//! The encoder runs a per-point MLP, pools each obstacle's points with
//! mean and max, projects to 160 features, pools across obstacles the same
//! way and projects to the 320-dim scene latent. The energy network is an MLP
//! over `[flattened trajectory, time embedding, latent]` whose scalar energy is
//! the squared norm of its 64-dim output. Its input gradient is the noise
//! prediction used by the samplers.
//!
//! Two evaluation paths exist: a tape path ([`energy_tape`]) used for
//! training and as a reference, and a hand-derived batched path
//! ([`EnergyNet`]) used by the samplers.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, grad, Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, POINTS_PER_OBSTACLE};

pub const LATENT_DIM: usize = 320;
pub const TIME_DIM: usize = 32;
pub const HIDDEN_DIM: usize = 256;
pub const ENERGY_OUT_DIM: usize = 64;
pub const POINT_DIM: usize = 64;
pub const OBSTACLE_DIM: usize = 160;

/// Network topology, fixed per `(d_space, horizon)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub d_space: usize,
    pub horizon: usize,
}

impl NetConfig {
    pub fn new(d_space: usize, horizon: usize) -> Self {
        NetConfig { d_space, horizon }
    }

    /// Row width of a trajectory.
    pub fn width(&self) -> usize {
        2 * self.d_space
    }

    /// Flattened trajectory length `H * d`.
    pub fn traj_dim(&self) -> usize {
        self.horizon * self.width()
    }

    /// `(name, shape, fan_in, init scale)` for every parameter.
    fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize, f64)> {
        let (p, o, l, h) = (POINT_DIM, OBSTACLE_DIM, LATENT_DIM, HIDDEN_DIM);
        let trunk_in = self.traj_dim() + TIME_DIM + LATENT_DIM;
        vec![
            ("enc.point1.w", vec![self.d_space, p], self.d_space, 1.0),
            ("enc.point1.b", vec![p], self.d_space, 1.0),
            ("enc.point2.w", vec![p, p], p, 1.0),
            ("enc.point2.b", vec![p], p, 1.0),
            ("enc.obstacle.w_mean", vec![p, o], 2 * p, 1.0),
            ("enc.obstacle.w_max", vec![p, o], 2 * p, 1.0),
            ("enc.obstacle.b", vec![o], 2 * p, 1.0),
            ("enc.scene.w_mean", vec![o, l], 2 * o, 1.0),
            ("enc.scene.w_max", vec![o, l], 2 * o, 1.0),
            ("enc.scene.b", vec![l], 2 * o, 1.0),
            ("trunk.l1.w_traj", vec![self.traj_dim(), h], trunk_in, 1.0),
            ("trunk.l1.w_time", vec![TIME_DIM, h], trunk_in, 1.0),
            ("trunk.l1.w_scene", vec![LATENT_DIM, h], trunk_in, 1.0),
            ("trunk.l1.b", vec![h], trunk_in, 1.0),
            ("trunk.l2.w", vec![h, h], h, 1.0),
            ("trunk.l2.b", vec![h], h, 1.0),
            ("trunk.l3.w", vec![h, ENERGY_OUT_DIM], h, 0.1),
            ("trunk.l3.b", vec![ENERGY_OUT_DIM], h, 0.1),
        ]
    }
}

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub config: NetConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    /// Uniform `+-1/sqrt(fan_in)` initialization; the output layer is scaled
    /// by 0.1.
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, fan_in, scale) in config.layout() {
            let bound = scale / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            tensors.insert(name.to_string(), Tensor::new(shape, data).expect("layout shape"));
        }
        ParamStore { config, tensors }
    }

    /// Rebuilds a store from named tensors, checking them against the layout.
    pub fn from_tensors(config: NetConfig, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, shape, _, _) in config.layout() {
            let t = named.remove(name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch { expected: shape, got: t.shape().to_vec() });
            }
            tensors.insert(name.to_string(), t);
        }
        Ok(ParamStore { config, tensors })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Copy with `name` replaced.
    pub fn with(&self, name: &str, t: Tensor) -> Self {
        let mut out = self.clone();
        assert_eq!(out.get(name).shape(), t.shape(), "replacement shape for {name}");
        out.tensors.insert(name.to_string(), t);
        out
    }

    /// Records every parameter as a differentiable leaf.
    pub fn vars<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        ParamVars { vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.var(v.clone()))).collect() }
    }
}

/// Parameters recorded on a tape.
pub struct ParamVars<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn get(&self, name: &str) -> Var<'t> {
        self.vars[name]
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn all(&self) -> Vec<Var<'t>> {
        self.vars.values().copied().collect()
    }
}

/// 320-dim scene latent; the zero vector is the unconditional branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLatent(pub Vec<f64>);

impl SceneLatent {
    pub fn zero() -> Self {
        SceneLatent(vec![0.0; LATENT_DIM])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

/// Sinusoidal embedding of `t / n_steps`: 16 frequencies, sine then cosine.
pub fn time_embedding(t: usize, n_steps: usize) -> [f64; TIME_DIM] {
    let x = t as f64 / n_steps as f64;
    let mut e = [0.0; TIME_DIM];
    for k in 0..TIME_DIM / 2 {
        let f = 0.5 * 2f64.powf(k as f64 / 3.0);
        let a = 2.0 * std::f64::consts::PI * f * x;
        e[k] = a.sin();
        e[k + TIME_DIM / 2] = a.cos();
    }
    e
}

fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    x.matmul(w).add_row(b)
}

/// Encodes a batch of clouds on the tape, one latent row per cloud.
/// A cloud without obstacles encodes to the zero latent.
pub fn encode_tape<'t>(tape: &'t Tape, p: &ParamVars<'t>, clouds: &[&PointCloud]) -> Var<'t> {
    let nonempty: Vec<&PointCloud> = clouds.iter().copied().filter(|c| c.n_obstacles() > 0).collect();
    if nonempty.is_empty() {
        return tape.constant(Tensor::zeros(&[clouds.len(), LATENT_DIM]));
    }
    let d = nonempty[0].d_space;
    let mut pts = Vec::new();
    let mut obs_per_cloud = Vec::new();
    for c in &nonempty {
        pts.extend_from_slice(&c.points);
        obs_per_cloud.push(c.n_obstacles());
    }
    let n_pts = pts.len() / d;
    let n_obs: usize = obs_per_cloud.iter().sum();
    let x = tape.constant(Tensor::matrix(n_pts, d, pts));
    let h = linear(x, p.get("enc.point1.w"), p.get("enc.point1.b")).tanh();
    let h = linear(h, p.get("enc.point2.w"), p.get("enc.point2.b")).tanh();
    let per_obstacle = Segments::uniform_mean(n_obs, POINTS_PER_OBSTACLE);
    let mean = h.segment_sum(Rc::new(Segments::uniform_mean(n_obs, POINTS_PER_OBSTACLE)));
    let max = h.segment_max(&per_obstacle);
    let o = (mean.matmul(p.get("enc.obstacle.w_mean")) + max.matmul(p.get("enc.obstacle.w_max")))
        .add_row(p.get("enc.obstacle.b"))
        .tanh();
    let per_scene = Segments::mean_from_sizes(&obs_per_cloud);
    let mean = o.segment_sum(Rc::new(Segments::mean_from_sizes(&obs_per_cloud)));
    let max = o.segment_max(&per_scene);
    let z = (mean.matmul(p.get("enc.scene.w_mean")) + max.matmul(p.get("enc.scene.w_max")))
        .add_row(p.get("enc.scene.b"))
        .tanh();
    if nonempty.len() == clouds.len() {
        return z;
    }
    let mut k = 0;
    let idx = clouds
        .iter()
        .map(|c| {
            (c.n_obstacles() > 0).then(|| {
                k += 1;
                k - 1
            })
        })
        .collect();
    z.gather_rows(Rc::new(idx))
}

/// Scene latent for one cloud.
pub fn encode_cloud(params: &ParamStore, cloud: &PointCloud) -> SceneLatent {
    let tape = Tape::new();
    let p = constant_vars(params, &tape);
    let z = encode_tape(&tape, &p, &[cloud]);
    SceneLatent(z.value().data().to_vec())
}

fn constant_vars<'t>(params: &ParamStore, tape: &'t Tape) -> ParamVars<'t> {
    ParamVars { vars: params.iter().map(|(k, v)| (k.to_string(), tape.constant(v.clone()))).collect() }
}

/// Per-row energies `E = ||s||^2` for a batch on the tape.
///
/// `traj` is `B x (H d)`, `temb` is `B x 32` and `z` is `B x 320`.
/// Returns the `B x 64` trunk output `s`.
pub fn trunk_tape<'t>(p: &ParamVars<'t>, traj: Var<'t>, temb: Var<'t>, z: Var<'t>) -> Var<'t> {
    let h1 = (traj.matmul(p.get("trunk.l1.w_traj"))
        + temb.matmul(p.get("trunk.l1.w_time"))
        + z.matmul(p.get("trunk.l1.w_scene")))
    .add_row(p.get("trunk.l1.b"))
    .tanh();
    let h2 = linear(h1, p.get("trunk.l2.w"), p.get("trunk.l2.b")).tanh();
    linear(h2, p.get("trunk.l3.w"), p.get("trunk.l3.b"))
}

fn check_traj(params: &ParamStore, traj: &[f64], z: &SceneLatent, t: usize, n_steps: usize) -> Result<()> {
    let td = params.config.traj_dim();
    if traj.len() != td {
        return Err(Error::ShapeMismatch { expected: vec![td], got: vec![traj.len()] });
    }
    if z.0.len() != LATENT_DIM {
        return Err(Error::ShapeMismatch { expected: vec![LATENT_DIM], got: vec![z.0.len()] });
    }
    if t == 0 || t > n_steps {
        return Err(Error::InvalidArgument(format!("diffusion step {t} outside [1, {n_steps}]")));
    }
    Ok(())
}

/// Scalar energy of one noisy trajectory, evaluated on the tape.
pub fn energy(params: &ParamStore, traj: &[f64], t: usize, n_steps: usize, z: &SceneLatent) -> Result<f64> {
    check_traj(params, traj, z, t, n_steps)?;
    let tape = Tape::new();
    let p = constant_vars(params, &tape);
    let x = tape.constant(Tensor::matrix(1, traj.len(), traj.to_vec()));
    let temb = tape.constant(Tensor::matrix(1, TIME_DIM, time_embedding(t, n_steps).to_vec()));
    let zv = tape.constant(Tensor::matrix(1, LATENT_DIM, z.0.clone()));
    let s = trunk_tape(&p, x, temb, zv);
    Ok(s.square().sum().item())
}

/// `grad_tau E` for one trajectory through the autodiff engine.
pub fn energy_input_gradient_tape(
    params: &ParamStore,
    traj: &[f64],
    t: usize,
    n_steps: usize,
    z: &SceneLatent,
) -> Result<Vec<f64>> {
    check_traj(params, traj, z, t, n_steps)?;
    let tape = Tape::new();
    let p = constant_vars(params, &tape);
    let x = tape.var(Tensor::matrix(1, traj.len(), traj.to_vec()));
    let temb = tape.constant(Tensor::matrix(1, TIME_DIM, time_embedding(t, n_steps).to_vec()));
    let zv = tape.constant(Tensor::matrix(1, LATENT_DIM, z.0.clone()));
    let e = trunk_tape(&p, x, temb, zv).square().sum();
    let g = grad(e, &[x], false)?;
    Ok(g[0].value().data().to_vec())
}

/// Plain-buffer copy of the trunk weights for fast batched sampling.
#[derive(Debug, Clone)]
pub struct EnergyNet {
    pub config: NetConfig,
    w_traj: Vec<f64>,
    w_time: Vec<f64>,
    w_scene: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl EnergyNet {
    pub fn new(params: &ParamStore) -> Self {
        let g = |n: &str| params.get(n).data().to_vec();
        EnergyNet {
            config: params.config,
            w_traj: g("trunk.l1.w_traj"),
            w_time: g("trunk.l1.w_time"),
            w_scene: g("trunk.l1.w_scene"),
            b1: g("trunk.l1.b"),
            w2: g("trunk.l2.w"),
            b2: g("trunk.l2.b"),
            w3: g("trunk.l3.w"),
            b3: g("trunk.l3.b"),
        }
    }

    /// First-layer pre-activation contribution of `(t, z)`, shared by every
    /// trajectory in a batch.
    pub fn context_bias(&self, t: usize, n_steps: usize, z: &SceneLatent) -> Vec<f64> {
        let temb = time_embedding(t, n_steps);
        let mut out = self.b1.clone();
        gemm(&temb, 1, TIME_DIM, false, &self.w_time, TIME_DIM, HIDDEN_DIM, false, 1.0, 1.0, &mut out);
        gemm(&z.0, 1, LATENT_DIM, false, &self.w_scene, LATENT_DIM, HIDDEN_DIM, false, 1.0, 1.0, &mut out);
        out
    }

    /// Energies and input gradients for `B` flattened trajectories, where
    /// trajectory `i` uses context row `ctx_index[i]` of `contexts`.
    pub fn energy_and_grad(&self, trajs: &[f64], contexts: &[Vec<f64>], ctx_index: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let td = self.config.traj_dim();
        let b = trajs.len() / td;
        assert_eq!(ctx_index.len(), b, "one context per trajectory");
        let mut h1 = vec![0.0; b * HIDDEN_DIM];
        for (i, &c) in ctx_index.iter().enumerate() {
            h1[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM].copy_from_slice(&contexts[c]);
        }
        gemm(trajs, b, td, false, &self.w_traj, td, HIDDEN_DIM, false, 1.0, 1.0, &mut h1);
        h1.iter_mut().for_each(|x| *x = x.tanh());
        let mut h2 = vec![0.0; b * HIDDEN_DIM];
        for row in h2.chunks_mut(HIDDEN_DIM) {
            row.copy_from_slice(&self.b2);
        }
        gemm(&h1, b, HIDDEN_DIM, false, &self.w2, HIDDEN_DIM, HIDDEN_DIM, false, 1.0, 1.0, &mut h2);
        h2.iter_mut().for_each(|x| *x = x.tanh());
        let mut s = vec![0.0; b * ENERGY_OUT_DIM];
        for row in s.chunks_mut(ENERGY_OUT_DIM) {
            row.copy_from_slice(&self.b3);
        }
        gemm(&h2, b, HIDDEN_DIM, false, &self.w3, HIDDEN_DIM, ENERGY_OUT_DIM, false, 1.0, 1.0, &mut s);
        let energies = s.chunks(ENERGY_OUT_DIM).map(|r| r.iter().map(|x| x * x).sum()).collect();

        // Backward: dE/ds = 2s, through tanh via (1 - h^2).
        let mut g2 = vec![0.0; b * HIDDEN_DIM];
        gemm(&s, b, ENERGY_OUT_DIM, false, &self.w3, HIDDEN_DIM, ENERGY_OUT_DIM, true, 2.0, 0.0, &mut g2);
        g2.iter_mut().zip(&h2).for_each(|(g, h)| *g *= 1.0 - h * h);
        let mut g1 = vec![0.0; b * HIDDEN_DIM];
        gemm(&g2, b, HIDDEN_DIM, false, &self.w2, HIDDEN_DIM, HIDDEN_DIM, true, 1.0, 0.0, &mut g1);
        g1.iter_mut().zip(&h1).for_each(|(g, h)| *g *= 1.0 - h * h);
        let mut gx = vec![0.0; b * td];
        gemm(&g1, b, HIDDEN_DIM, false, &self.w_traj, td, HIDDEN_DIM, true, 1.0, 0.0, &mut gx);
        (energies, gx)
    }

    /// `grad_tau E(tau, t, z)` for a single trajectory.
    pub fn input_gradient(&self, traj: &[f64], t: usize, n_steps: usize, z: &SceneLatent) -> Vec<f64> {
        let ctx = self.context_bias(t, n_steps, z);
        self.energy_and_grad(traj, &[ctx], &[0]).1
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers, sized like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> =
            params.iter().map(|(k, t)| (k.to_string(), vec![0.0; t.len()])).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update, returning new parameters and moments.
pub fn adam_step(
    params: &ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &AdamState,
    cfg: &AdamConfig,
) -> (ParamStore, AdamState) {
    let step = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut out = params.clone();
    let mut next = AdamState { step, m: state.m.clone(), v: state.v.clone() };
    for (name, t) in out.tensors.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        let m = next.m.get_mut(name).expect("moment buffer");
        let v = next.v.get_mut(name).expect("moment buffer");
        for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    (out, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Environment, Obstacle};

    fn small_env(shift: f64) -> Environment {
        Environment::new(
            "e",
            2,
            vec![
                Obstacle::circle(&[0.3 + shift, 0.2], 0.12),
                Obstacle::axis_box(&[-0.5, -0.4], &[-0.3, -0.1]),
                Obstacle::circle(&[-0.4, 0.6], 0.1),
            ],
            5,
        )
        .unwrap()
    }

    fn rand_traj(cfg: NetConfig, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cfg.traj_dim()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn parameter_count_is_bounded() {
        let p = ParamStore::init(NetConfig::new(2, 48), 0);
        assert!(p.num_params() < 1_000_000);
        assert_eq!(p.get("trunk.l1.w_traj").shape(), &[192, 256]);
    }

    #[test]
    fn encoder_is_permutation_invariant() {
        let params = ParamStore::init(NetConfig::new(2, 48), 1);
        let env = small_env(0.0);
        let z = encode_cloud(&params, &env.cloud);
        let d = 2;
        // Reverse points inside each obstacle.
        let mut permuted = env.cloud.clone();
        for k in 0..env.cloud.n_obstacles() {
            let src = env.cloud.obstacle_points(k);
            let n = src.len() / d;
            for i in 0..n {
                let j = (i * 37 + 11) % n;
                let base = k * n * d;
                permuted.points[base + i * d..base + (i + 1) * d].copy_from_slice(&src[j * d..(j + 1) * d]);
            }
        }
        assert_eq!(encode_cloud(&params, &permuted), z);
        // Reverse obstacle order.
        let w = POINTS_PER_OBSTACLE * d;
        let mut swapped = env.cloud.clone();
        let n_obs = env.cloud.n_obstacles();
        for k in 0..n_obs {
            swapped.points[k * w..(k + 1) * w].copy_from_slice(env.cloud.obstacle_points(n_obs - 1 - k));
        }
        assert_eq!(encode_cloud(&params, &swapped), z);
        let moved = encode_cloud(&params, &small_env(0.1).cloud);
        let diff: f64 = moved.0.iter().zip(&z.0).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn batched_encoding_matches_single() {
        let params = ParamStore::init(NetConfig::new(2, 48), 2);
        let a = small_env(0.0);
        let b = small_env(0.2);
        let empty = PointCloud::empty(2);
        let tape = Tape::new();
        let p = params.vars(&tape);
        let z = encode_tape(&tape, &p, &[&a.cloud, &empty, &b.cloud]).value();
        assert_eq!(&z.data()[..LATENT_DIM], encode_cloud(&params, &a.cloud).0.as_slice());
        assert!(z.data()[LATENT_DIM..2 * LATENT_DIM].iter().all(|&x| x == 0.0));
        let zb = encode_cloud(&params, &b.cloud);
        for (x, y) in z.data()[2 * LATENT_DIM..].iter().zip(&zb.0) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_energy() {
        let cfg = NetConfig::new(2, 48);
        let p = ParamStore::init(cfg, 3)
            .with("trunk.l3.w", Tensor::zeros(&[HIDDEN_DIM, ENERGY_OUT_DIM]))
            .with("trunk.l3.b", Tensor::zeros(&[ENERGY_OUT_DIM]));
        let z = SceneLatent(vec![0.3; LATENT_DIM]);
        for seed in 0..5 {
            let tau = rand_traj(cfg, seed);
            assert_eq!(energy(&p, &tau, 10, 100, &z).unwrap(), 0.0);
            assert!(EnergyNet::new(&p).input_gradient(&tau, 10, 100, &z).iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn energy_is_nonnegative_and_continuous() {
        let cfg = NetConfig::new(2, 48);
        let p = ParamStore::init(cfg, 4);
        let z = encode_cloud(&p, &small_env(0.0).cloud);
        for seed in 0..100 {
            let tau = rand_traj(cfg, seed);
            let t = 1 + (seed as usize % 100);
            assert!(energy(&p, &tau, t, 100, &z).unwrap() >= 0.0);
        }
        let tau = rand_traj(cfg, 7);
        let mut nudged = tau.clone();
        nudged.iter_mut().for_each(|x| *x += 1e-6);
        let e0 = energy(&p, &tau, 5, 100, &z).unwrap();
        let e1 = energy(&p, &nudged, 5, 100, &z).unwrap();
        assert!((e1 - e0).abs() < 1e-4);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let cfg = NetConfig::new(2, 48);
        let p = ParamStore::init(cfg, 5);
        let z = encode_cloud(&p, &small_env(0.0).cloud);
        let tau = rand_traj(cfg, 9);
        let g = EnergyNet::new(&p).input_gradient(&tau, 30, 100, &z);
        assert_eq!(g.len(), 48 * 4);
        let g_tape = energy_input_gradient_tape(&p, &tau, 30, 100, &z).unwrap();
        for i in 0..g.len() {
            assert!((g[i] - g_tape[i]).abs() <= 1e-12 * (1.0 + g[i].abs()));
            let mut a = tau.clone();
            let mut b = tau.clone();
            a[i] += 1e-5;
            b[i] -= 1e-5;
            let fd = (energy(&p, &a, 30, 100, &z).unwrap() - energy(&p, &b, 30, 100, &z).unwrap()) / 2e-5;
            let rel = (fd - g[i]).abs() / g[i].abs().max(1e-3);
            assert!(rel < 1e-5, "component {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn energy_rejects_bad_shapes() {
        let p = ParamStore::init(NetConfig::new(2, 48), 6);
        assert!(energy(&p, &[0.0; 10], 1, 100, &SceneLatent::zero()).is_err());
        assert!(energy(&p, &[0.0; 192], 0, 100, &SceneLatent::zero()).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let p = ParamStore::init(NetConfig::new(2, 48), 7);
        let grads: BTreeMap<String, Tensor> = p.iter().map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape()))).collect();
        let (q, _) = adam_step(&p, &grads, &AdamState::new(&p), &AdamConfig::default());
        assert_eq!(p, q);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        // m1 = 0.1, v1 = 0.001; mhat = 1, vhat = 1, step = -lr / (1 + eps).
        let p = ParamStore::init(NetConfig::new(2, 48), 8);
        let name = "trunk.l3.b";
        let mut grads = BTreeMap::new();
        grads.insert(name.to_string(), Tensor::full(&[ENERGY_OUT_DIM], 1.0));
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let (q, st) = adam_step(&p, &grads, &AdamState::new(&p), &cfg);
        assert_eq!(st.step, 1);
        let expected = -0.1 / (1.0 + 1e-8);
        for (a, b) in q.get(name).data().iter().zip(p.get(name).data()) {
            assert!((a - b - expected).abs() < 1e-15);
        }
    }
}
