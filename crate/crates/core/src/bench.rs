//! Evaluation studies: static planning, pursuit-evasion, sampler ablation
//! and latent composition.
//!
//! Every study is a pure function of its config and the model, except for
//! wall-clock timings, which are returned outside the serialized results.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apf::APFParams;
use crate::datagen::{generate_environments, sample_pair};
use crate::diffusion::{CompositionSpec, GuidanceConfig, Sampler};
use crate::error::{Error, Result};
use crate::geometry::Environment;
use crate::metrics::{mean, std_dev, summarize_episodes, waypoint_variance, EpisodeSummary};
use crate::model::Model;
use crate::nn::encode_cloud;
use crate::planner::{plan_compositional, plan_static, PlanBatch, PlanRequest, DEFAULT_X0_CLIP};
use crate::pursuit::{default_pursuer_start, run_pursuit_episode, DynamicConfig, Variant};
use crate::seed::derive_seed;
use crate::trajectory::State;

/// Clearance required around sampled start and goal points.
const PAIR_MARGIN: f64 = 0.02;

/// Held-out environments and one start-goal pair list per environment.
pub fn held_out_scenes(
    n_envs: usize,
    n_obstacles: usize,
    d_space: usize,
    pairs: usize,
    min_sep: f64,
    seed: u64,
) -> Result<Vec<(Environment, Vec<(State, State)>)>> {
    let envs = generate_environments(n_envs, n_obstacles, d_space, seed)?;
    envs.into_iter()
        .enumerate()
        .map(|(i, (env, _, _))| {
            let list = (0..pairs)
                .map(|p| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[7, i as u64, p as u64]));
                    sample_pair(&env, min_sep, PAIR_MARGIN, &mut rng)
                        .map(|(s, g)| (State::at_rest(&s), State::at_rest(&g)))
                        .ok_or_else(|| Error::PlanningFailed(format!("no start-goal pair in {}", env.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((env, list))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticStudyConfig {
    pub n_envs: usize,
    pub n_obstacles: usize,
    pub pairs_per_env: usize,
    pub batch: usize,
    pub sampler: Sampler,
    pub w: f64,
    pub min_pair_distance: f64,
    /// Seed of the held-out environments; keep it apart from training seeds.
    pub env_seed: u64,
    pub seed: u64,
}

impl Default for StaticStudyConfig {
    fn default() -> Self {
        StaticStudyConfig {
            n_envs: 50,
            n_obstacles: 6,
            pairs_per_env: 5,
            batch: 32,
            sampler: Sampler::Ddim { steps: 5 },
            w: 2.0,
            min_pair_distance: 1.0,
            env_seed: 1_000_003,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRun {
    pub env: usize,
    pub pair: usize,
    pub variant: String,
    pub success: bool,
    pub collision_intensity: f64,
    pub waypoint_variance: f64,
    /// Mean candidate path length.
    pub path_length: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// Wall-clock sampling time; not serialized.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub variant: String,
    pub runs: usize,
    pub success_rate: f64,
    pub mean_collision_intensity: f64,
    pub mean_waypoint_variance: f64,
    pub mean_path_length: f64,
    pub errors: usize,
    #[serde(skip)]
    pub mean_seconds: f64,
}

pub fn summarize_plans(variant: &str, runs: &[&PlanRun]) -> PlanSummary {
    let n = runs.len().max(1) as f64;
    let ci: Vec<f64> = runs.iter().map(|r| r.collision_intensity).collect();
    let wv: Vec<f64> = runs.iter().map(|r| r.waypoint_variance).collect();
    let ok: Vec<f64> = runs.iter().filter(|r| r.error.is_none()).map(|r| r.path_length).collect();
    let secs: Vec<f64> = runs.iter().map(|r| r.seconds).collect();
    PlanSummary {
        variant: variant.to_string(),
        runs: runs.len(),
        success_rate: runs.iter().filter(|r| r.success).count() as f64 / n,
        mean_collision_intensity: mean(&ci),
        mean_waypoint_variance: mean(&wv),
        mean_path_length: mean(&ok),
        errors: runs.iter().filter(|r| r.error.is_some()).count(),
        mean_seconds: mean(&secs),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64())
}

fn plan_run(env: usize, pair: usize, variant: &str, (out, seconds): (Result<PlanBatch>, f64)) -> PlanRun {
    match out {
        Ok(b) => PlanRun {
            env,
            pair,
            variant: variant.to_string(),
            success: b.any_collision_free(),
            collision_intensity: b.collision_intensity(),
            waypoint_variance: waypoint_variance(&b.trajectories),
            path_length: mean(&b.trajectories.iter().map(|t| t.path_length()).collect::<Vec<_>>()),
            error: None,
            seconds,
        },
        // A failed sample counts as a fully colliding batch.
        Err(e) => PlanRun {
            env,
            pair,
            variant: variant.to_string(),
            success: false,
            collision_intensity: 1.0,
            waypoint_variance: 0.0,
            path_length: 0.0,
            error: Some(e.to_string()),
            seconds,
        },
    }
}

fn static_request(start: &State, goal: &State, batch: usize, sampler: Sampler, w: f64, apf: Option<APFParams>, seed: u64) -> PlanRequest {
    PlanRequest {
        start: start.clone(),
        goal: goal.clone(),
        batch,
        sampler,
        guidance: GuidanceConfig { w, ..GuidanceConfig::default() },
        apf,
        x0_clip: Some(DEFAULT_X0_CLIP),
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticStudy {
    pub config: StaticStudyConfig,
    pub runs: Vec<PlanRun>,
    pub summary: Vec<PlanSummary>,
}

/// Diff-base against Diff-APF on held-out scenes with shared seeds.
pub fn static_study(model: &Model, cfg: &StaticStudyConfig) -> Result<StaticStudy> {
    let d = model.config().d_space;
    let scenes = held_out_scenes(cfg.n_envs, cfg.n_obstacles, d, cfg.pairs_per_env, cfg.min_pair_distance, cfg.env_seed)?;
    let n_steps = model.schedule.n_steps();
    let jobs: Vec<(usize, usize)> =
        (0..scenes.len()).flat_map(|e| (0..cfg.pairs_per_env).map(move |p| (e, p))).collect();
    let runs: Vec<PlanRun> = jobs
        .par_iter()
        .flat_map_iter(|&(e, p)| {
            let (env, pairs) = &scenes[e];
            let (s, g) = &pairs[p];
            let seed = derive_seed(cfg.seed, &[e as u64, p as u64]);
            [("diff-base", None), ("diff-apf", Some(APFParams::for_steps(n_steps)))].map(|(label, apf)| {
                let req = static_request(s, g, cfg.batch, cfg.sampler, cfg.w, apf, seed);
                plan_run(e, p, label, timed(|| plan_static(model, env, &req)))
            })
        })
        .collect();
    let summary = ["diff-base", "diff-apf"]
        .iter()
        .map(|v| summarize_plans(v, &runs.iter().filter(|r| r.variant == *v).collect::<Vec<_>>()))
        .collect();
    Ok(StaticStudy { config: cfg.clone(), runs, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PursuitStudyConfig {
    pub n_obstacles: usize,
    pub n_pairs: usize,
    pub seeds: Vec<u64>,
    pub min_pair_distance: f64,
    pub env_seed: u64,
    pub dynamic: Option<DynamicConfig>,
}

impl Default for PursuitStudyConfig {
    fn default() -> Self {
        PursuitStudyConfig {
            n_obstacles: 6,
            n_pairs: 100,
            seeds: (0..5).collect(),
            min_pair_distance: 1.0,
            env_seed: 2_000_003,
            dynamic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRun {
    pub seed: u64,
    pub pair: usize,
    pub variant: String,
    pub success: bool,
    pub goal_reached: bool,
    pub captured: bool,
    pub n_collisions: usize,
    pub iterations: usize,
    pub path_length: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub variant: String,
    /// Mean and sample standard deviation of the per-seed score.
    pub score_mean: f64,
    pub score_std: f64,
    pub per_seed: Vec<f64>,
    pub overall: EpisodeSummary,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PursuitStudy {
    pub config: PursuitStudyConfig,
    pub env: String,
    pub runs: Vec<EpisodeRun>,
    pub scores: Vec<VariantScore>,
}

/// Episodes of every variant over one held-out environment.
pub fn pursuit_study(model: &Model, cfg: &PursuitStudyConfig) -> Result<PursuitStudy> {
    let mcfg = model.config();
    let scenes = held_out_scenes(1, cfg.n_obstacles, mcfg.d_space, cfg.n_pairs, cfg.min_pair_distance, cfg.env_seed)?;
    let (env, pairs) = &scenes[0];
    let base = cfg.dynamic.clone().unwrap_or_else(|| DynamicConfig::for_horizon(mcfg.horizon, model.schedule.n_steps()));
    let variants = [Variant::Base, Variant::StaticApf, Variant::FullApf];
    let jobs: Vec<(u64, usize, Variant)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| (0..pairs.len()).flat_map(move |p| variants.map(|v| (s, p, v))))
        .collect();
    let results: Vec<(EpisodeRun, Option<crate::pursuit::EpisodeRecord>)> = jobs
        .par_iter()
        .map(|&(seed, p, variant)| {
            let (s, g) = &pairs[p];
            let pstart = default_pursuer_start(env, &s.pos, &g.pos, base.pursuer.radius);
            let dcfg = DynamicConfig { variant, ..base.clone() };
            let ep_seed = derive_seed(seed, &[p as u64]);
            match run_pursuit_episode(model, env, s, g, Some(&pstart), &dcfg, ep_seed) {
                Ok(rec) => (
                    EpisodeRun {
                        seed,
                        pair: p,
                        variant: variant.label().into(),
                        success: rec.success(),
                        goal_reached: rec.goal_reached,
                        captured: rec.captured,
                        n_collisions: rec.n_collisions,
                        iterations: rec.iterations,
                        path_length: rec.path_length(),
                        error: None,
                    },
                    Some(rec),
                ),
                Err(e) => (
                    EpisodeRun {
                        seed,
                        pair: p,
                        variant: variant.label().into(),
                        success: false,
                        goal_reached: false,
                        captured: false,
                        n_collisions: 0,
                        iterations: 0,
                        path_length: 0.0,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let scores = variants
        .iter()
        .map(|v| {
            let label = v.label();
            let per_seed: Vec<f64> = cfg
                .seeds
                .iter()
                .map(|&s| {
                    let rs: Vec<&EpisodeRun> = results.iter().map(|r| &r.0).filter(|r| r.variant == label && r.seed == s).collect();
                    100.0 * rs.iter().filter(|r| r.success).count() as f64 / rs.len().max(1) as f64
                })
                .collect();
            let recs: Vec<&crate::pursuit::EpisodeRecord> =
                results.iter().filter(|r| r.0.variant == label).filter_map(|r| r.1.as_ref()).collect();
            VariantScore {
                variant: label.into(),
                score_mean: mean(&per_seed),
                score_std: std_dev(&per_seed),
                per_seed,
                overall: summarize_episodes(&recs),
                errors: results.iter().filter(|r| r.0.variant == label && r.0.error.is_some()).count(),
            }
        })
        .collect();
    Ok(PursuitStudy { config: cfg.clone(), env: env.id.clone(), runs: results.into_iter().map(|r| r.0).collect(), scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub steps: Vec<usize>,
    pub n_envs: usize,
    pub n_obstacles: usize,
    pub pairs_per_env: usize,
    pub batch: usize,
    pub w: f64,
    pub min_pair_distance: f64,
    pub env_seed: u64,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            steps: vec![5, 10, 20, 50],
            n_envs: 20,
            n_obstacles: 6,
            pairs_per_env: 5,
            batch: 32,
            w: 2.0,
            min_pair_distance: 1.0,
            env_seed: 3_000_003,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub steps: usize,
    pub summary: PlanSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub config: AblationConfig,
    pub rows: Vec<AblationRow>,
}

/// Mean wall-clock seconds per plan, per step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTiming {
    pub steps: usize,
    pub mean_seconds: f64,
}

/// DDIM step-count sweep. Plans run one at a time so that timings are not
/// distorted by sharing cores.
pub fn ddim_ablation(model: &Model, cfg: &AblationConfig) -> Result<(Ablation, Vec<AblationTiming>)> {
    let d = model.config().d_space;
    let n_steps = model.schedule.n_steps();
    let scenes = held_out_scenes(cfg.n_envs, cfg.n_obstacles, d, cfg.pairs_per_env, cfg.min_pair_distance, cfg.env_seed)?;
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for &steps in &cfg.steps {
        let sampler = Sampler::Ddim { steps };
        let mut secs = Vec::new();
        for (label, apf) in [("diff-base", None), ("diff-apf", Some(APFParams::for_steps(n_steps)))] {
            let mut runs = Vec::new();
            for (e, (env, pairs)) in scenes.iter().enumerate() {
                for (p, (s, g)) in pairs.iter().enumerate() {
                    let seed = derive_seed(cfg.seed, &[e as u64, p as u64]);
                    let req = static_request(s, g, cfg.batch, sampler, cfg.w, apf, seed);
                    let run = plan_run(e, p, label, timed(|| plan_static(model, env, &req)));
                    secs.push(run.seconds);
                    runs.push(run);
                }
            }
            rows.push(AblationRow { steps, summary: summarize_plans(label, &runs.iter().collect::<Vec<_>>()) });
        }
        timing.push(AblationTiming { steps, mean_seconds: mean(&secs) });
    }
    Ok((Ablation { config: cfg.clone(), rows }, timing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeStudyConfig {
    pub n_compositions: usize,
    pub pairs_per_composition: usize,
    pub n_obstacles: usize,
    pub batch: usize,
    pub sampler: Sampler,
    /// Weight on each composed latent.
    pub part_weight: f64,
    pub apf: bool,
    pub min_pair_distance: f64,
    pub env_seed: u64,
    pub seed: u64,
}

impl Default for ComposeStudyConfig {
    fn default() -> Self {
        ComposeStudyConfig {
            n_compositions: 25,
            pairs_per_composition: 2,
            n_obstacles: 10,
            batch: 32,
            sampler: Sampler::Ddim { steps: 5 },
            part_weight: 3.0,
            apf: true,
            min_pair_distance: 1.0,
            env_seed: 4_000_003,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeStudy {
    pub config: ComposeStudyConfig,
    pub runs: Vec<PlanRun>,
    pub summary: PlanSummary,
}

/// Plans in the union of two environments guided by both scene latents.
/// Collisions are checked against the union.
pub fn compose_study(model: &Model, cfg: &ComposeStudyConfig) -> Result<ComposeStudy> {
    let d = model.config().d_space;
    let n_steps = model.schedule.n_steps();
    let envs = generate_environments(2 * cfg.n_compositions, cfg.n_obstacles, d, cfg.env_seed)?;
    let runs: Vec<PlanRun> = (0..cfg.n_compositions)
        .into_par_iter()
        .map(|c| -> Result<Vec<PlanRun>> {
            let (a, b) = (&envs[2 * c].0, &envs[2 * c + 1].0);
            let union = Environment::union(format!("{}+{}", a.id, b.id), &[a, b])?;
            let spec = CompositionSpec {
                parts: vec![
                    (encode_cloud(&model.params, &a.cloud), cfg.part_weight),
                    (encode_cloud(&model.params, &b.cloud), cfg.part_weight),
                ],
            };
            let mut out = Vec::new();
            for p in 0..cfg.pairs_per_composition {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.env_seed, &[7, c as u64, p as u64]));
                let Some((s, g)) = sample_pair(&union, cfg.min_pair_distance, PAIR_MARGIN, &mut rng) else {
                    return Err(Error::PlanningFailed(format!("no start-goal pair in {}", union.id)));
                };
                let seed = derive_seed(cfg.seed, &[c as u64, p as u64]);
                let apf = cfg.apf.then(|| APFParams::for_steps(n_steps));
                let req = static_request(&State::at_rest(&s), &State::at_rest(&g), cfg.batch, cfg.sampler, 0.0, apf, seed);
                out.push(plan_run(c, p, "compose", timed(|| plan_compositional(model, &union, &spec, &req))));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize_plans("compose", &runs.iter().collect::<Vec<_>>());
    Ok(ComposeStudy { config: cfg.clone(), runs, summary })
}
