//! Random environments and expert demonstrations: RRT-connect, shortcut
//! smoothing and arc-length resampling, plus the dataset file.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{dist, Environment, EnvironmentFile, Obstacle, WORKSPACE_MAX, WORKSPACE_MIN};
use crate::model::{read_tensor, read_u32, write_tensor};
use crate::seed::{derive_seed, Provenance};
use crate::trajectory::{State, Trajectory, HORIZON};

pub const DATASET_MAGIC: &[u8; 4] = b"RMPD";
pub const DATASET_VERSION: u32 = 1;

pub const OBSTACLE_CLEARANCE: f64 = 0.05;
pub const BORDER_CLEARANCE: f64 = 0.1;
pub const SIZE_RANGE: (f64, f64) = (0.08, 0.2);
pub const MAX_REJECTIONS: usize = 10_000;
pub const EDGE_RESOLUTION: f64 = 0.01;
/// Extra clearance kept by expert paths beyond the inflated obstacles.
pub const DEMO_MARGIN: f64 = 0.02;

/// Distance between two obstacles, zero when they overlap.
pub fn obstacle_gap(a: &Obstacle, b: &Obstacle) -> f64 {
    match (a, b) {
        (Obstacle::Circle { center: c1, radius: r1 }, Obstacle::Circle { center: c2, radius: r2 }) => {
            (dist(&c1.0, &c2.0) - r1 - r2).max(0.0)
        }
        (Obstacle::Circle { center, radius }, other) | (other, Obstacle::Circle { center, radius }) => {
            (other.distance(&center.0) - radius).max(0.0)
        }
        (Obstacle::AxisBox { min: a0, max: a1 }, Obstacle::AxisBox { min: b0, max: b1 }) => (0..a0.dim())
            .map(|k| (a0.0[k] - b1.0[k]).max(b0.0[k] - a1.0[k]).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt(),
    }
}

fn random_obstacle<R: Rng>(d: usize, rng: &mut R) -> Obstacle {
    let (lo, hi) = SIZE_RANGE;
    let inner = WORKSPACE_MAX - BORDER_CLEARANCE;
    if rng.random::<bool>() {
        let r = rng.random_range(lo..=hi);
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-inner + r..=inner - r)).collect();
        Obstacle::circle(&c, r)
    } else {
        let half: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
        let c: Vec<f64> = half.iter().map(|h| rng.random_range(-inner + h..=inner - h)).collect();
        let min: Vec<f64> = c.iter().zip(&half).map(|(c, h)| c - h).collect();
        let max: Vec<f64> = c.iter().zip(&half).map(|(c, h)| c + h).collect();
        Obstacle::axis_box(&min, &max)
    }
}

/// Places `n_obs` circles or boxes by rejection sampling. Sizes (radius or
/// half-extent) are uniform in `SIZE_RANGE`.
pub fn sample_environment<R: Rng>(id: &str, n_obs: usize, d_space: usize, rng: &mut R) -> Result<Environment> {
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(n_obs);
    let mut rejections = 0;
    while obstacles.len() < n_obs {
        let o = random_obstacle(d_space, rng);
        if obstacles.iter().all(|p| obstacle_gap(p, &o) >= OBSTACLE_CLEARANCE) {
            obstacles.push(o);
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::PlacementFailed(obstacles.len()));
            }
        }
    }
    let cloud_seed = rng.random();
    Environment::new(id, d_space, obstacles, cloud_seed)
}

fn random_point<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(WORKSPACE_MIN..=WORKSPACE_MAX)).collect()
}

struct Tree {
    nodes: Vec<Vec<f64>>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: &[f64]) -> Self {
        Tree { nodes: vec![root.to_vec()], parent: vec![usize::MAX] }
    }

    fn nearest(&self, q: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist(n, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn path_to_root(&self, mut i: usize) -> Vec<Vec<f64>> {
        let mut out = vec![];
        while i != usize::MAX {
            out.push(self.nodes[i].clone());
            i = self.parent[i];
        }
        out
    }
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

fn steer(from: &[f64], to: &[f64], step: f64) -> (Vec<f64>, bool) {
    let d = dist(from, to);
    if d <= step {
        (to.to_vec(), true)
    } else {
        (from.iter().zip(to).map(|(a, b)| a + (b - a) * step / d).collect(), false)
    }
}

fn extend(tree: &mut Tree, env: &Environment, q: &[f64], step: f64, margin: f64) -> Extend {
    let near = tree.nearest(q);
    let (new, reached) = steer(&tree.nodes[near], q, step);
    if !env.in_workspace(&new) || !env.segment_free(&tree.nodes[near], &new, EDGE_RESOLUTION, margin) {
        return Extend::Trapped;
    }
    tree.nodes.push(new);
    tree.parent.push(near);
    let i = tree.nodes.len() - 1;
    if reached {
        Extend::Reached(i)
    } else {
        Extend::Advanced(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtConfig {
    pub max_iters: usize,
    pub step: f64,
    /// Clearance kept from the inflated obstacles.
    pub margin: f64,
}

impl Default for RrtConfig {
    fn default() -> Self {
        RrtConfig { max_iters: 5000, step: 0.1, margin: DEMO_MARGIN }
    }
}

/// Bidirectional RRT with greedy connection. Returns the waypoint path
/// from `s` to `g`, or `None` once `max_iters` samples are used.
pub fn rrt_connect<R: Rng>(env: &Environment, s: &[f64], g: &[f64], rng: &mut R, cfg: &RrtConfig) -> Option<Vec<Vec<f64>>> {
    if env.in_collision(s, cfg.margin) || env.in_collision(g, cfg.margin) {
        return None;
    }
    if dist(s, g) == 0.0 {
        return Some(vec![s.to_vec()]);
    }
    if env.segment_free(s, g, EDGE_RESOLUTION, cfg.margin) {
        return Some(vec![s.to_vec(), g.to_vec()]);
    }
    let mut a = Tree::new(s);
    let mut b = Tree::new(g);
    let mut a_is_start = true;
    for _ in 0..cfg.max_iters {
        let q = random_point(env.d_space, rng);
        let new = match extend(&mut a, env, &q, cfg.step, cfg.margin) {
            Extend::Trapped => None,
            Extend::Reached(i) | Extend::Advanced(i) => Some(i),
        };
        if let Some(ia) = new {
            let target = a.nodes[ia].clone();
            loop {
                match extend(&mut b, env, &target, cfg.step, cfg.margin) {
                    Extend::Advanced(_) => continue,
                    Extend::Trapped => break,
                    Extend::Reached(ib) => {
                        let mut from_a = a.path_to_root(ia);
                        from_a.reverse();
                        let mut from_b = b.path_to_root(ib);
                        from_b.remove(0);
                        from_a.extend(from_b);
                        if !a_is_start {
                            from_a.reverse();
                        }
                        return Some(from_a);
                    }
                }
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    None
}

pub fn path_length(path: &[Vec<f64>]) -> f64 {
    path.windows(2).map(|w| dist(&w[0], &w[1])).sum()
}

fn point_at(path: &[Vec<f64>], cum: &[f64], s: f64) -> (usize, Vec<f64>) {
    let k = match cum.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => i.min(path.len() - 2),
        Err(i) => i.saturating_sub(1).min(path.len() - 2),
    };
    let seg = cum[k + 1] - cum[k];
    let u = if seg > 0.0 { ((s - cum[k]) / seg).clamp(0.0, 1.0) } else { 0.0 };
    (k, path[k].iter().zip(&path[k + 1]).map(|(a, b)| a + u * (b - a)).collect())
}

fn cumulative(path: &[Vec<f64>]) -> Vec<f64> {
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + dist(&w[0], &w[1]));
    }
    cum
}

/// Replaces random sub-segments by straight lines when the line is free
/// and strictly shorter.
pub fn shortcut_smooth<R: Rng>(path: &[Vec<f64>], env: &Environment, iters: usize, margin: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut path = path.to_vec();
    for _ in 0..iters {
        if path.len() < 3 {
            break;
        }
        let cum = cumulative(&path);
        let total = *cum.last().unwrap();
        let (mut s1, mut s2) = (rng.random_range(0.0..=total), rng.random_range(0.0..=total));
        if s1 > s2 {
            std::mem::swap(&mut s1, &mut s2);
        }
        let (k1, p1) = point_at(&path, &cum, s1);
        let (k2, p2) = point_at(&path, &cum, s2);
        if k1 == k2 {
            continue;
        }
        let old = s2 - s1;
        if dist(&p1, &p2) >= old - 1e-12 || !env.segment_free(&p1, &p2, EDGE_RESOLUTION, margin) {
            continue;
        }
        let mut next: Vec<Vec<f64>> = path[..=k1].to_vec();
        if p1 != path[k1] {
            next.push(p1);
        }
        if p2 != path[k2 + 1] {
            next.push(p2);
        }
        next.extend_from_slice(&path[k2 + 1..]);
        path = next;
    }
    path
}

/// `h` positions evenly spaced in arc length, with central-difference
/// velocities and zero velocity at both ends.
pub fn resample_to_horizon(path: &[Vec<f64>], h: usize, dt: f64) -> Result<Trajectory> {
    if path.len() < 2 || h < 2 {
        return Err(Error::InvalidArgument("need >= 2 path points and horizon >= 2".into()));
    }
    let d = path[0].len();
    let cum = cumulative(path);
    let total = *cum.last().unwrap();
    let mut pos = Vec::with_capacity(h);
    pos.push(path[0].clone());
    for k in 1..h - 1 {
        pos.push(point_at(path, &cum, total * k as f64 / (h - 1) as f64).1);
    }
    pos.push(path[path.len() - 1].clone());
    Ok(Trajectory::from_positions(d, &pos, dt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_envs: usize,
    pub n_obstacles: usize,
    pub pairs_per_env: usize,
    pub demos_per_pair: usize,
    pub horizon: usize,
    pub dt: f64,
    pub d_space: usize,
    pub seed: u64,
    pub rrt: RrtConfig,
    pub shortcut_iters: usize,
    /// Minimum start-goal separation.
    pub min_pair_distance: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_envs: 100,
            n_obstacles: 6,
            pairs_per_env: 5,
            demos_per_pair: 5,
            horizon: HORIZON,
            dt: 0.1,
            d_space: 2,
            seed: 0,
            rrt: RrtConfig::default(),
            shortcut_iters: 200,
            min_pair_distance: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.pairs_per_env == 0 || self.demos_per_pair == 0 || self.horizon < 3 {
            return Err(Error::InvalidArgument("dataset counts must be >= 1 and horizon >= 3".into()));
        }
        if !(self.dt > 0.0) || !(2..=3).contains(&self.d_space) {
            return Err(Error::InvalidArgument("dt must be positive and d_space 2 or 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub env: usize,
    pub pair: usize,
    pub index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub meta: DemoMeta,
    pub traj: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub env_seeds: Vec<u64>,
    pub demos: Vec<DemoMeta>,
    /// Resampled environments, pairs and demonstrations.
    pub retries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub envs: Vec<Environment>,
    pub demos: Vec<Demonstration>,
}

/// Environments `0..n` generated from `seed`; placement failures are
/// retried with a fresh stream.
pub fn generate_environments(n: usize, n_obstacles: usize, d_space: usize, seed: u64) -> Result<Vec<(Environment, u64, usize)>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..100u64 {
                let s = derive_seed(seed, &[0, i as u64, attempt]);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                match sample_environment(&format!("env-{i:04}"), n_obstacles, d_space, &mut rng) {
                    Ok(env) => return Ok((env, s, attempt as usize)),
                    Err(Error::PlacementFailed(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::PlacementFailed(n_obstacles))
        })
        .collect()
}

/// Random start and goal at least `min_sep` apart, both clear by `margin`.
pub fn sample_pair<R: Rng>(env: &Environment, min_sep: f64, margin: f64, rng: &mut R) -> Option<(Vec<f64>, Vec<f64>)> {
    let inner = WORKSPACE_MAX - 0.05;
    let free = |rng: &mut R| -> Option<Vec<f64>> {
        for _ in 0..1000 {
            let p: Vec<f64> = (0..env.d_space).map(|_| rng.random_range(-inner..=inner)).collect();
            if !env.in_collision(&p, margin) {
                return Some(p);
            }
        }
        None
    };
    for _ in 0..1000 {
        let s = free(rng)?;
        let g = free(rng)?;
        if dist(&s, &g) >= min_sep {
            return Some((s, g));
        }
    }
    None
}

fn demos_for_env(spec: &DatasetSpec, env: &Environment, i: usize) -> Result<(Vec<Demonstration>, usize)> {
    let mut out = Vec::new();
    let mut retries = 0;
    for pair in 0..spec.pairs_per_env {
        let mut done = false;
        for attempt in 0..50u64 {
            let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2, i as u64, pair as u64, attempt]));
            let Some((s, g)) = sample_pair(env, spec.min_pair_distance, spec.rrt.margin, &mut prng) else {
                retries += 1;
                continue;
            };
            let mut demos = Vec::new();
            for index in 0..spec.demos_per_pair {
                let seed = derive_seed(spec.seed, &[3, i as u64, pair as u64, attempt, index as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let Some(path) = rrt_connect(env, &s, &g, &mut rng, &spec.rrt) else { break };
                let path = shortcut_smooth(&path, env, spec.shortcut_iters, spec.rrt.margin, &mut rng);
                let traj = resample_to_horizon(&path, spec.horizon, spec.dt)?;
                if env.trajectory_collision_stats(&traj, 0.0).0 != 0 {
                    break;
                }
                demos.push(Demonstration { meta: DemoMeta { env: i, pair, index, seed }, traj });
            }
            if demos.len() == spec.demos_per_pair {
                out.extend(demos);
                done = true;
                break;
            }
            retries += 1;
        }
        if !done {
            return Err(Error::PlanningFailed(format!("no demonstrations for {} pair {pair}", env.id)));
        }
    }
    Ok((out, retries))
}

/// Builds the full dataset. Output depends only on `spec`.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let envs = generate_environments(spec.n_envs, spec.n_obstacles, spec.d_space, spec.seed)?;
    let per_env: Vec<(Vec<Demonstration>, usize)> =
        envs.par_iter().enumerate().map(|(i, (env, _, _))| demos_for_env(spec, env, i)).collect::<Result<_>>()?;
    let mut retries: usize = envs.iter().map(|e| e.2).sum();
    let mut demos = Vec::new();
    for (d, r) in per_env {
        demos.extend(d);
        retries += r;
    }
    let manifest = Manifest {
        spec: spec.clone(),
        env_seeds: envs.iter().map(|e| e.1).collect(),
        demos: demos.iter().map(|d| d.meta.clone()).collect(),
        retries,
        provenance: None,
    };
    Ok(Dataset { manifest, envs: envs.into_iter().map(|e| e.0).collect(), demos })
}

impl Dataset {
    pub fn start_goal(&self, k: usize) -> (State, State) {
        let t = &self.demos[k].traj;
        let h = t.horizon();
        (State::at_rest(t.pos(0)), State::at_rest(t.pos(h - 1)))
    }

    /// Layout: magic, version, manifest JSON, environment JSON, then one
    /// tensor record per demonstration.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        let put_json = |out: &mut Vec<u8>, bytes: Vec<u8>| {
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        };
        put_json(&mut out, serde_json::to_vec(&self.manifest).expect("manifest serializes"));
        let files: Vec<EnvironmentFile> = self.envs.iter().map(|e| e.to_file()).collect();
        put_json(&mut out, serde_json::to_vec(&files).expect("environments serialize"));
        for (k, d) in self.demos.iter().enumerate() {
            let t = &d.traj;
            let tensor = Tensor::new(vec![t.horizon(), t.width()], t.as_slice().to_vec()).expect("shape");
            write_tensor(&mut out, &format!("demo.{k}"), &tensor).expect("write to vec");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("missing magic".into()))?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a RMPD dataset file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("dataset version {version}, expected {DATASET_VERSION}")));
        }
        let take_json = |r: &mut &[u8]| -> Result<Vec<u8>> {
            let n = read_u32(r)? as usize;
            if n > r.len() {
                return Err(Error::Format("truncated header".into()));
            }
            let (head, tail) = r.split_at(n);
            *r = tail;
            Ok(head.to_vec())
        };
        let manifest: Manifest = serde_json::from_slice(&take_json(&mut r)?)?;
        let files: Vec<EnvironmentFile> = serde_json::from_slice(&take_json(&mut r)?)?;
        let envs = files.iter().map(Environment::from_file).collect::<Result<Vec<_>>>()?;
        let mut demos = Vec::with_capacity(manifest.demos.len());
        while let Some((name, t)) = read_tensor(&mut r)? {
            let k = demos.len();
            if name != format!("demo.{k}") || k >= manifest.demos.len() {
                return Err(Error::Format(format!("unexpected record {name}")));
            }
            let meta = manifest.demos[k].clone();
            if meta.env >= envs.len() || t.shape().len() != 2 {
                return Err(Error::Format(format!("bad demonstration {k}")));
            }
            let d = t.shape()[1] / 2;
            let traj = Trajectory::from_flat(t.shape()[0], d, t.into_data())?;
            demos.push(Demonstration { meta, traj });
        }
        if demos.len() != manifest.demos.len() {
            return Err(Error::Format("missing demonstrations".into()));
        }
        Ok(Dataset { manifest, envs, demos })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
