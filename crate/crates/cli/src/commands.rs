use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ramp::apf::APFParams;
use ramp::bench::{
    compose_study, ddim_ablation, pursuit_study, static_study, AblationConfig, ComposeStudyConfig, PlanSummary,
    PursuitStudyConfig, StaticStudyConfig,
};
use ramp::datagen::{build_dataset, generate_environments, Dataset, DatasetSpec};
use ramp::diffusion::{CompositionSpec, GuidanceConfig, Sampler};
use ramp::geometry::{Environment, EnvironmentFile};
use ramp::metrics::waypoint_variance;
use ramp::model::Model;
use ramp::nn::{encode_cloud, NetConfig};
use ramp::planner::{plan_traced, PlanBatch, PlanRequest, DEFAULT_X0_CLIP};
use ramp::pursuit::{default_pursuer_start, run_pursuit_episode, select_best, DynamicConfig, EpisodeRecord, Variant};
use ramp::seed::Provenance;
use ramp::svg::{render, Scene};
use ramp::training::{train, TrainConfig, TrainItem};
use ramp::trajectory::{State, Trajectory};
use serde::{Deserialize, Serialize};

use crate::args::{Compose, Evaluate, GenData, GenEnvs, Plan, Render, Sampling, Simulate, Train};
use crate::config::{
    check_version, parse_point, provenance, read_json, required, resolve_seed, usage, write_csv, write_json, write_svg,
    Stamped,
};

fn load_env(path: &Path) -> Result<Environment> {
    let f: EnvironmentFile = read_json(path)?;
    Environment::from_file(&f).with_context(|| format!("environment {}", path.display()))
}

fn load_model(path: &Option<PathBuf>) -> Result<Model> {
    let p = required(path, "weights")?;
    Model::load(&p).with_context(|| format!("loading weights {}", p.display()))
}

/// Flags left out of the hash: output destinations, which do not change
/// what is written, and the seed flag, replaced by the resolved seed.
const UNHASHED: [&str; 5] = ["out", "svg", "dump-steps", "loss-csv", "seed"];

/// Effective settings hashed into each artifact.
#[derive(Serialize)]
struct Effective<'a> {
    command: &'a str,
    flags: serde_json::Value,
    seed: u64,
}

fn stamp<T: Serialize>(command: &str, flags: &T, seed: u64) -> Provenance {
    let mut flags = serde_json::to_value(flags).expect("flags serialize");
    if let Some(m) = flags.as_object_mut() {
        for k in UNHASHED {
            m.remove(k);
        }
    }
    provenance(&Effective { command, flags, seed }, seed)
}

#[derive(Serialize)]
struct EnvManifest {
    n: usize,
    obstacles: usize,
    d_space: usize,
    env_seeds: Vec<u64>,
    attempts: Vec<usize>,
}

pub fn gen_envs(a: &GenEnvs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let out = required(&a.out, "out")?;
    let (n, obstacles, d) = (a.n.unwrap_or(10), a.obstacles.unwrap_or(6), a.d_space.unwrap_or(2));
    let prov = stamp("gen-envs", a, seed);
    let envs = generate_environments(n, obstacles, d, seed)?;
    for (env, _, _) in &envs {
        write_json(&out.join(format!("{}.json", env.id)), &prov, &env.to_file())?;
    }
    let manifest = EnvManifest {
        n,
        obstacles,
        d_space: d,
        env_seeds: envs.iter().map(|e| e.1).collect(),
        attempts: envs.iter().map(|e| e.2).collect(),
    };
    write_json(&out.join("manifest.json"), &prov, &manifest)?;
    let total: usize = envs.iter().map(|e| e.0.obstacles.len()).sum();
    println!("wrote {n} environments ({total} obstacles) to {} with seed {seed}", out.display());
    Ok(())
}

pub fn gen_data(a: &GenData) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let out = required(&a.out, "out")?;
    let spec = DatasetSpec {
        n_envs: a.n_envs.unwrap_or(100),
        n_obstacles: a.obstacles.unwrap_or(6),
        pairs_per_env: a.pairs.unwrap_or(5),
        demos_per_pair: a.demos.unwrap_or(5),
        horizon: a.horizon.unwrap_or(48),
        d_space: a.d_space.unwrap_or(2),
        seed,
        ..DatasetSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let mut ds = build_dataset(&spec)?;
    ds.manifest.provenance = Some(stamp("gen-data", a, seed));
    ds.save(&out)?;
    println!(
        "wrote {} demonstrations over {} environments to {} (seed {seed}, {} retries)",
        ds.demos.len(),
        ds.envs.len(),
        out.display(),
        ds.manifest.retries
    );
    Ok(())
}

pub fn train_cmd(a: &Train) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let data = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let loss_csv = a.loss_csv.clone().unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let ds = Dataset::load(&data).with_context(|| format!("loading dataset {}", data.display()))?;
    let n_steps = a.n_steps.unwrap_or(100);
    let spec = &ds.manifest.spec;
    let prov = stamp("train", a, seed);
    let mut model = match &a.resume {
        Some(p) => {
            let m = Model::load(p).with_context(|| format!("loading weights {}", p.display()))?;
            if m.meta.d_space != spec.d_space || m.meta.horizon != spec.horizon || m.meta.n_steps != n_steps {
                bail!("weights {} do not match the dataset shape or step count", p.display());
            }
            m
        }
        None => Model::init(NetConfig::new(spec.d_space, spec.horizon), n_steps, seed)?,
    };
    model.meta.config_hash = prov.config_hash.clone();
    model.meta.seed = seed;
    let demos = if a.overfit { &ds.demos[..1] } else { &ds.demos[..] };
    let items: Vec<TrainItem> = demos.iter().map(|d| TrainItem { traj: d.traj.as_slice(), cloud: d.meta.env }).collect();
    let clouds: Vec<_> = ds.envs.iter().map(|e| &e.cloud).collect();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(100),
        batch_size: a.batch.unwrap_or(128),
        lr: a.lr.unwrap_or(1e-4),
        n_steps,
        seed,
        envs_per_batch: a.envs_per_batch.unwrap_or(8),
        final_lr_fraction: a.final_lr_fraction.unwrap_or(1.0),
        grad_clip: a.grad_clip,
    };
    let guidance = GuidanceConfig { dropout_p: a.dropout.unwrap_or(0.2), ..GuidanceConfig::default() };
    guidance.validate().map_err(|e| usage(e.to_string()))?;
    let first_step = model.meta.train_steps;
    let outcome = train(&model, &items, &clouds, &cfg, &guidance, |e, l| eprintln!("epoch {e} loss {l:.4}"))?;
    outcome.model.save(&out)?;
    let rows: Vec<Vec<String>> = outcome
        .step_losses
        .iter()
        .enumerate()
        .map(|(k, l)| vec![(first_step + k as u64).to_string(), l.to_string()])
        .collect();
    write_csv(&loss_csv, &prov, &["step", "loss"], &rows)?;
    let (first, last) = (outcome.step_losses[0], *outcome.step_losses.last().expect("at least one step"));
    println!(
        "trained {} steps, loss {first:.4} -> {last:.4} (ratio {:.3}); wrote {} and {}",
        outcome.step_losses.len(),
        last / first,
        out.display(),
        loss_csv.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Candidate {
    pub n_colliding: usize,
    pub collision_free: bool,
    pub cost: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanOutput {
    pub envs: Vec<String>,
    pub request: PlanRequest,
    pub best: usize,
    pub collision_intensity: f64,
    pub waypoint_variance: f64,
    pub candidates: Vec<Candidate>,
}

fn request(s: &Sampling, model: &Model, seed: u64) -> Result<PlanRequest> {
    let d = model.config().d_space;
    let point = |v: &Option<String>, flag: &str| -> Result<State> {
        let p = parse_point(&required(v, flag)?)?;
        if p.len() != d {
            bail!(usage(format!("--{flag} needs {d} coordinates, got {}", p.len())));
        }
        Ok(State::at_rest(&p))
    };
    let n = model.schedule.n_steps();
    let base = APFParams::for_steps(n);
    let apf = APFParams {
        gamma: s.gamma.unwrap_or(base.gamma),
        d_thresh: s.d_thresh.unwrap_or(base.d_thresh),
        n_apf: s.n_apf.unwrap_or(base.n_apf),
    };
    Ok(PlanRequest {
        start: point(&s.start, "start")?,
        goal: point(&s.goal, "goal")?,
        batch: s.batch.unwrap_or(32),
        sampler: if s.ddpm { Sampler::Ddpm } else { Sampler::Ddim { steps: s.ddim_steps.unwrap_or(5) } },
        guidance: GuidanceConfig { w: s.guidance.unwrap_or(2.0), ..GuidanceConfig::default() },
        apf: (!s.no_apf).then_some(apf),
        x0_clip: (!s.no_x0_clip).then(|| s.x0_clip.unwrap_or(DEFAULT_X0_CLIP)),
        seed,
    })
}

fn finish_plan(
    s: &Sampling,
    prov: &Provenance,
    env: &Environment,
    ids: Vec<String>,
    req: PlanRequest,
    batch: PlanBatch,
    trace: Vec<Vec<Trajectory>>,
) -> Result<()> {
    let out = required(&s.out, "out")?;
    let best = select_best(&batch, None, 0.0)?;
    let output = PlanOutput {
        envs: ids,
        best,
        collision_intensity: batch.collision_intensity(),
        waypoint_variance: waypoint_variance(&batch.trajectories),
        candidates: batch
            .trajectories
            .iter()
            .zip(&batch.stats)
            .map(|(t, st)| Candidate {
                n_colliding: st.n_colliding,
                collision_free: st.collision_free,
                cost: st.cost,
                trajectory: t.clone(),
            })
            .collect(),
        request: req,
    };
    write_json(&out, prov, &output)?;
    if let Some(p) = &s.dump_steps {
        write_json(p, prov, &serde_json::json!({ "steps": trace }))?;
    }
    if let Some(p) = &s.svg {
        write_svg(p, prov, &plan_svg(Some(env), &output))?;
    }
    let free = output.candidates.iter().filter(|c| c.collision_free).count();
    println!(
        "{free}/{} candidates collision-free, intensity {:.4}, best #{best}; wrote {}",
        output.candidates.len(),
        output.collision_intensity,
        out.display()
    );
    Ok(())
}

fn plan_svg(env: Option<&Environment>, p: &PlanOutput) -> String {
    let scene = Scene {
        env,
        candidates: p.candidates.iter().map(|c| &c.trajectory).collect(),
        chosen: p.candidates.get(p.best).map(|c| &c.trajectory),
        start: Some(p.request.start.pos.clone()),
        goal: Some(p.request.goal.pos.clone()),
        ..Scene::default()
    };
    render(&scene)
}

pub fn plan(a: &Plan) -> Result<()> {
    let seed = resolve_seed(a.sampling.seed)?;
    let model = load_model(&a.sampling.weights)?;
    let d = model.config().d_space;
    let env = match &a.env {
        Some(p) => load_env(p)?,
        None => Environment::empty("empty", d),
    };
    let req = request(&a.sampling, &model, seed)?;
    let z = encode_cloud(&model.params, &env.cloud);
    let (batch, trace) = plan_traced(&model, &env, &CompositionSpec::guided(z, req.guidance.w), &req)?;
    let prov = stamp("plan", a, seed);
    finish_plan(&a.sampling, &prov, &env, vec![env.id.clone()], req, batch, trace)
}

pub fn compose(a: &Compose) -> Result<()> {
    let seed = resolve_seed(a.sampling.seed)?;
    if a.env.is_empty() {
        bail!(usage("compose needs at least one --env"));
    }
    let model = load_model(&a.sampling.weights)?;
    let envs: Vec<Environment> = a.env.iter().map(|p| load_env(p)).collect::<Result<_>>()?;
    let req = request(&a.sampling, &model, seed)?;
    let weights = match a.part_weight.len() {
        0 => vec![1.0 + req.guidance.w; envs.len()],
        n if n == envs.len() => a.part_weight.clone(),
        n => bail!(usage(format!("{n} part weights for {} environments", envs.len()))),
    };
    let refs: Vec<&Environment> = envs.iter().collect();
    let ids: Vec<String> = envs.iter().map(|e| e.id.clone()).collect();
    let union = Environment::union(ids.join("+"), &refs)?;
    let spec = CompositionSpec {
        parts: envs.iter().zip(&weights).map(|(e, &w)| (encode_cloud(&model.params, &e.cloud), w)).collect(),
    };
    let (batch, trace) = plan_traced(&model, &union, &spec, &req)?;
    let prov = stamp("compose", a, seed);
    finish_plan(&a.sampling, &prov, &union, ids, req, batch, trace)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EpisodeOutput {
    pub env: String,
    pub r_detect: f64,
    pub success: bool,
    pub path_length: f64,
    pub episode: EpisodeRecord,
}

fn episode_svg(env: Option<&Environment>, e: &EpisodeOutput) -> String {
    let ep = &e.episode;
    let scene = Scene {
        env,
        chosen: Some(&ep.initial_plan),
        executed: ep.history.iter().map(|s| s.pos.clone()).collect(),
        pursuer_path: ep.pursuer_path.clone(),
        detection_radius: (!ep.pursuer_path.is_empty()).then_some(e.r_detect),
        start: Some(ep.start.pos.clone()),
        goal: Some(ep.goal.pos.clone()),
        ..Scene::default()
    };
    render(&scene)
}

pub fn simulate(a: &Simulate) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let out = required(&a.out, "out")?;
    let model = load_model(&a.weights)?;
    let d = model.config().d_space;
    let env = match &a.env {
        Some(p) => load_env(p)?,
        None => Environment::empty("empty", d),
    };
    let start = parse_point(&required(&a.start, "start")?)?;
    let goal = parse_point(&required(&a.goal, "goal")?)?;
    if start.len() != d || goal.len() != d {
        bail!(usage(format!("--start and --goal need {d} coordinates")));
    }
    let variant = match a.variant.as_deref().unwrap_or("apf") {
        "base" => Variant::Base,
        "sapf" => Variant::StaticApf,
        "apf" => Variant::FullApf,
        v => bail!(usage(format!("unknown variant `{v}`; use base, sapf or apf"))),
    };
    let mut cfg = DynamicConfig::for_horizon(model.config().horizon, model.schedule.n_steps());
    cfg.variant = variant;
    cfg.record_plans = a.record_plans;
    if let Some(b) = a.batch {
        cfg.batch = b;
    }
    if let Some(n) = a.n_dyn {
        cfg.n_dyn = n;
    }
    if let Some(v) = a.pursuer_speed {
        cfg.pursuer.v = v;
    }
    let pursuer = if a.no_pursuer {
        None
    } else {
        Some(match &a.pursuer {
            Some(p) => parse_point(p)?,
            None => default_pursuer_start(&env, &start, &goal, cfg.pursuer.radius),
        })
    };
    let rec = run_pursuit_episode(
        &model,
        &env,
        &State::at_rest(&start),
        &State::at_rest(&goal),
        pursuer.as_deref(),
        &cfg,
        seed,
    )?;
    let output =
        EpisodeOutput { env: env.id.clone(), r_detect: cfg.r_detect, success: rec.success(), path_length: rec.path_length(), episode: rec };
    let prov = stamp("simulate", a, seed);
    write_json(&out, &prov, &output)?;
    if let Some(p) = &a.svg {
        write_svg(p, &prov, &episode_svg(Some(&env), &output))?;
    }
    let ep = &output.episode;
    println!(
        "{}: goal {} captured {} collisions {} after {} iterations; wrote {}",
        variant.label(),
        ep.goal_reached,
        ep.captured,
        ep.n_collisions,
        ep.iterations,
        out.display()
    );
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn summary_rows(rows: &[(String, &PlanSummary)]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|(k, s)| {
            vec![
                k.clone(),
                s.runs.to_string(),
                pct(s.success_rate),
                pct(s.mean_collision_intensity),
                format!("{:.4}", s.mean_waypoint_variance),
                format!("{:.4}", s.mean_seconds),
                format!("{:.4}", s.mean_path_length),
            ]
        })
        .collect()
}

const TABLE_HEADER: [&str; 7] =
    ["variant", "runs", "success_rate_pct", "collision_intensity_pct", "waypoint_variance", "time_s", "path_length"];

fn plan_run_rows(runs: &[ramp::bench::PlanRun]) -> Vec<Vec<String>> {
    runs.iter()
        .map(|r| {
            vec![
                r.env.to_string(),
                r.pair.to_string(),
                r.variant.clone(),
                r.success.to_string(),
                r.collision_intensity.to_string(),
                r.waypoint_variance.to_string(),
                r.path_length.to_string(),
                r.error.clone().unwrap_or_default().replace(',', ";"),
            ]
        })
        .collect()
}

const RUN_HEADER: [&str; 8] =
    ["env", "pair", "variant", "success", "collision_intensity", "waypoint_variance", "path_length", "error"];

pub fn evaluate(a: &Evaluate) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let out = required(&a.out, "out")?;
    let suite = required(&a.suite, "suite")?;
    let model = load_model(&a.weights)?;
    check_version("weight file", &model.meta.tool_version)?;
    let prov = stamp("evaluate", a, seed);
    match suite.as_str() {
        "static" => {
            let d = StaticStudyConfig::default();
            let cfg = StaticStudyConfig {
                n_envs: a.n_envs.unwrap_or(d.n_envs),
                n_obstacles: a.obstacles.unwrap_or(d.n_obstacles),
                pairs_per_env: a.pairs.unwrap_or(d.pairs_per_env),
                batch: a.batch.unwrap_or(d.batch),
                env_seed: a.env_seed.unwrap_or(d.env_seed),
                seed,
                ..d
            };
            let st = static_study(&model, &cfg)?;
            write_json(&out.join("results.json"), &prov, &st)?;
            write_csv(&out.join("runs.csv"), &prov, &RUN_HEADER, &plan_run_rows(&st.runs))?;
            let rows: Vec<(String, &PlanSummary)> = st.summary.iter().map(|s| (s.variant.clone(), s)).collect();
            let table = summary_rows(&rows);
            write_csv(&out.join("table.csv"), &prov, &TABLE_HEADER, &table)?;
            print_table(&TABLE_HEADER, &table);
        }
        "pursuit" => {
            let d = PursuitStudyConfig::default();
            let cfg = PursuitStudyConfig {
                n_obstacles: a.obstacles.unwrap_or(d.n_obstacles),
                n_pairs: a.pairs.unwrap_or(d.n_pairs),
                seeds: (0..a.seeds.unwrap_or(5) as u64).map(|k| ramp::seed::derive_seed(seed, &[k])).collect(),
                env_seed: a.env_seed.unwrap_or(d.env_seed),
                ..d
            };
            let st = pursuit_study(&model, &cfg)?;
            write_json(&out.join("results.json"), &prov, &st)?;
            let runs: Vec<Vec<String>> = st
                .runs
                .iter()
                .map(|r| {
                    vec![
                        r.seed.to_string(),
                        r.pair.to_string(),
                        r.variant.clone(),
                        r.success.to_string(),
                        r.goal_reached.to_string(),
                        r.captured.to_string(),
                        r.n_collisions.to_string(),
                        r.iterations.to_string(),
                        r.path_length.to_string(),
                        r.error.clone().unwrap_or_default().replace(',', ";"),
                    ]
                })
                .collect();
            let header =
                ["seed", "pair", "variant", "success", "goal_reached", "captured", "collisions", "iterations", "path_length", "error"];
            write_csv(&out.join("runs.csv"), &prov, &header, &runs)?;
            let table: Vec<Vec<String>> = st
                .scores
                .iter()
                .map(|s| {
                    vec![
                        s.variant.clone(),
                        format!("{:.2}", s.score_mean),
                        format!("{:.2}", s.score_std),
                        pct(s.overall.goal_rate),
                        pct(s.overall.collision_rate),
                        pct(s.overall.capture_rate),
                        format!("{:.4}", s.overall.mean_path_length),
                    ]
                })
                .collect();
            let header = ["variant", "score", "score_std", "goal_rate_pct", "collision_rate_pct", "capture_rate_pct", "path_length"];
            write_csv(&out.join("table.csv"), &prov, &header, &table)?;
            print_table(&header, &table);
        }
        "ablation" => {
            let d = AblationConfig::default();
            let cfg = AblationConfig {
                steps: if a.steps.is_empty() { d.steps.clone() } else { a.steps.clone() },
                n_envs: a.n_envs.unwrap_or(d.n_envs),
                n_obstacles: a.obstacles.unwrap_or(d.n_obstacles),
                pairs_per_env: a.pairs.unwrap_or(d.pairs_per_env),
                batch: a.batch.unwrap_or(d.batch),
                env_seed: a.env_seed.unwrap_or(d.env_seed),
                seed,
                ..d
            };
            let (ab, timing) = ddim_ablation(&model, &cfg)?;
            write_json(&out.join("results.json"), &prov, &ab)?;
            let rows: Vec<(String, &PlanSummary)> =
                ab.rows.iter().map(|r| (format!("{}@{}", r.summary.variant, r.steps), &r.summary)).collect();
            let table = summary_rows(&rows);
            write_csv(&out.join("table.csv"), &prov, &TABLE_HEADER, &table)?;
            write_json(&out.join("timing.json"), &prov, &serde_json::json!({ "timing": timing }))?;
            print_table(&TABLE_HEADER, &table);
        }
        "compose" => {
            let d = ComposeStudyConfig::default();
            let cfg = ComposeStudyConfig {
                n_compositions: a.compositions.unwrap_or(d.n_compositions),
                pairs_per_composition: a.pairs.unwrap_or(d.pairs_per_composition),
                n_obstacles: a.obstacles.unwrap_or(d.n_obstacles),
                batch: a.batch.unwrap_or(d.batch),
                env_seed: a.env_seed.unwrap_or(d.env_seed),
                seed,
                ..d
            };
            let st = compose_study(&model, &cfg)?;
            write_json(&out.join("results.json"), &prov, &st)?;
            write_csv(&out.join("runs.csv"), &prov, &RUN_HEADER, &plan_run_rows(&st.runs))?;
            let table = summary_rows(&[("compose".to_string(), &st.summary)]);
            write_csv(&out.join("table.csv"), &prov, &TABLE_HEADER, &table)?;
            print_table(&TABLE_HEADER, &table);
        }
        s => bail!(usage(format!("unknown suite `{s}`; use static, pursuit, ablation or compose"))),
    }
    println!("wrote results to {}", out.display());
    Ok(())
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    println!("{}", header.join("\t"));
    for r in rows {
        println!("{}", r.join("\t"));
    }
}

pub fn render_cmd(a: &Render) -> Result<()> {
    let out = required(&a.out, "out")?;
    let env = a.env.as_deref().map(load_env).transpose()?;
    let (svg, prov) = match (&a.plan, &a.episode) {
        (Some(p), None) => {
            let s: Stamped<PlanOutput> = read_json(p)?;
            (plan_svg(env.as_ref(), &s.body), s.provenance)
        }
        (None, Some(p)) => {
            let s: Stamped<EpisodeOutput> = read_json(p)?;
            (episode_svg(env.as_ref(), &s.body), s.provenance)
        }
        (None, None) => {
            let Some(e) = &env else { bail!(usage("render needs --env, --plan or --episode")) };
            (render(&Scene { env: Some(e), ..Scene::default() }), stamp("render", a, 0))
        }
        _ => bail!(usage("give either --plan or --episode, not both")),
    };
    write_svg(&out, &prov, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
