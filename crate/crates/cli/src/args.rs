//! Command-line flags. Every subcommand's flags double as its config-file
//! schema, with keys spelled like the long flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "ramp", version, about = "Diffusion motion planning with potential fields")]
pub struct Cli {
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON config file; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample random obstacle environments.
    GenEnvs(GenEnvs),
    /// Build a demonstration dataset.
    GenData(GenData),
    /// Train the energy model.
    Train(Train),
    /// Sample a batch of trajectories in one environment.
    Plan(Plan),
    /// Plan under a composition of several environments.
    Compose(Compose),
    /// Run a pursuit-evasion episode.
    Simulate(Simulate),
    /// Run an evaluation suite.
    Evaluate(Evaluate),
    /// Draw an environment, plan or episode as SVG.
    Render(Render),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenEnvs(_) => "gen-envs",
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Plan(_) => "plan",
            Command::Compose(_) => "compose",
            Command::Simulate(_) => "simulate",
            Command::Evaluate(_) => "evaluate",
            Command::Render(_) => "render",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenEnvs {
    /// Number of environments [default: 10]
    #[arg(long)]
    pub n: Option<usize>,
    /// Obstacles per environment [default: 6]
    #[arg(long)]
    pub obstacles: Option<usize>,
    /// Workspace dimension [default: 2]
    #[arg(long)]
    pub d_space: Option<usize>,
    /// Seed; falls back to RAMP_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenData {
    /// [default: 100]
    #[arg(long)]
    pub n_envs: Option<usize>,
    /// [default: 6]
    #[arg(long)]
    pub obstacles: Option<usize>,
    /// Start-goal pairs per environment [default: 5]
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Demonstrations per pair [default: 5]
    #[arg(long)]
    pub demos: Option<usize>,
    /// [default: 48]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub d_space: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Train {
    /// Dataset file from gen-data
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output weight file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step loss CSV [default: <out>.loss.csv]
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Continue from these weights
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Cosine-decay the learning rate to this fraction of --lr [default: 1]
    #[arg(long)]
    pub final_lr_fraction: Option<f64>,
    /// Clip the global gradient norm
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Diffusion steps N [default: 100]
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Latent dropout probability [default: 0.2]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Environments per batch, 0 for no limit [default: 8]
    #[arg(long)]
    pub envs_per_batch: Option<usize>,
    /// Train on the first demonstration only
    #[arg(long)]
    pub overfit: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Sampling flags shared by plan and compose.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Sampling {
    /// Trained weight file
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Start position, e.g. -0.8,-0.8
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    /// Goal position
    #[arg(long, allow_hyphen_values = true)]
    pub goal: Option<String>,
    /// Candidates [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
    /// DDIM steps [default: 5]
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    /// Ancestral sampling over all N steps instead of DDIM
    #[arg(long)]
    pub ddpm: bool,
    /// Guidance scale w [default: 2.0]
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Disable the potential field
    #[arg(long)]
    pub no_apf: bool,
    /// Field gain [default: 0.05]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Field range [default: 0.15]
    #[arg(long)]
    pub d_thresh: Option<f64>,
    /// Field acts while the step index is below this [default: ceil(N/4)]
    #[arg(long)]
    pub n_apf: Option<usize>,
    /// Bound on the clean-sample estimate [default: 1.0]
    #[arg(long)]
    pub x0_clip: Option<f64>,
    /// Do not bound the clean-sample estimate
    #[arg(long)]
    pub no_x0_clip: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also draw the result
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Write the batch after every reverse step
    #[arg(long)]
    pub dump_steps: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Plan {
    /// Environment file; omit for an empty workspace
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: Sampling,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Compose {
    /// Environment files to compose; repeat the flag
    #[arg(long)]
    pub env: Vec<PathBuf>,
    /// Weight per environment, in order [default: 1 + guidance each]
    #[arg(long, value_delimiter = ',')]
    pub part_weight: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: Sampling,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Simulate {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Environment file; omit for an empty workspace
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub goal: Option<String>,
    /// Pursuer start [default: 60% of the way to the goal, nudged clear]
    #[arg(long, allow_hyphen_values = true)]
    pub pursuer: Option<String>,
    /// Run without a pursuer
    #[arg(long)]
    pub no_pursuer: bool,
    /// base, sapf or apf [default: apf]
    #[arg(long)]
    pub variant: Option<String>,
    /// Candidates per refinement [default: 16]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Iteration limit [default: 3H]
    #[arg(long)]
    pub n_dyn: Option<usize>,
    /// Pursuer speed [default: 0.3]
    #[arg(long)]
    pub pursuer_speed: Option<f64>,
    /// Keep every chosen plan in the output
    #[arg(long)]
    pub record_plans: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Evaluate {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// static, pursuit, ablation or compose
    #[arg(long)]
    pub suite: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Held-out environments (static, ablation)
    #[arg(long)]
    pub n_envs: Option<usize>,
    /// Pairs per environment (static, ablation, compose) or in total (pursuit)
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Number of seeds (pursuit) [default: 5]
    #[arg(long)]
    pub seeds: Option<usize>,
    /// DDIM step counts (ablation) [default: 5,10,20,50]
    #[arg(long, value_delimiter = ',')]
    pub steps: Vec<usize>,
    /// Environment pairs to compose (compose) [default: 25]
    #[arg(long)]
    pub compositions: Option<usize>,
    /// Obstacles per held-out environment
    #[arg(long)]
    pub obstacles: Option<usize>,
    /// Candidates per plan [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Seed of the held-out environments
    #[arg(long)]
    pub env_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Render {
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Output of plan or compose
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Output of simulate
    #[arg(long)]
    pub episode: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
