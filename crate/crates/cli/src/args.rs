use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mmhca::network::Placement;
use mmhca::train::{Precision, TrainConfig};
use mmhca::{AttentionConfig, Host, ModelSpec};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "mmhca", version, about = "Multimodal attention super-resolution toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic multimodal dataset (PGM slices plus manifest.toml).
    Synth(SynthArgs),
    /// Train a model on the train split and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint (or the bicubic baseline) on a split.
    Eval(EvalArgs),
    /// Super-resolve one set of co-registered LR slices.
    Sr(SrArgs),
    /// Train and score the ablation grid and the reduction-ratio sweep.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients of a whole network.
    Gradcheck(GradcheckArgs),
    /// Export attention maps as grayscale images.
    DumpAttention(DumpAttentionArgs),
    /// Re-run the command recorded in a config echo file.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Mmhca,
    Mhca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HostArg {
    Edsr,
    Espc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    PerBlock,
    AfterConcat,
}

/// Network flags. Unset values fall back to the command's base spec.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub host: Option<HostArg>,
    /// Feature width F of every branch.
    #[arg(long)]
    pub width: Option<usize>,
    /// Residual blocks per branch (EDSR host only).
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long, value_enum)]
    pub attention: Option<AttentionKind>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Channel reduction ratio r.
    #[arg(long)]
    pub reduction: Option<f64>,
    /// Replace each head's conv/deconv pair by a single padded conv.
    #[arg(long)]
    pub no_deconv: bool,
    /// Use this kernel size for every head.
    #[arg(long)]
    pub uniform_kernel: Option<usize>,
    #[arg(long, value_enum)]
    pub placement: Option<PlacementArg>,
    /// Drop the bicubic global skip.
    #[arg(long)]
    pub no_global_skip: bool,
    #[arg(long)]
    pub res_scale: Option<f64>,
}

impl ModelArgs {
    /// Apply the flags to `base` for a model with `n` inputs.
    pub fn resolve(&self, base: ModelSpec, n: usize, target_index: usize) -> Result<ModelSpec, CliError> {
        let mut spec = ModelSpec {
            n_modalities: n,
            target_index,
            ..base
        };
        if let Some(h) = self.host {
            spec.host = match h {
                HostArg::Edsr => Host::EdsrLite,
                HostArg::Espc => Host::EspcLite,
            };
        }
        if let Some(w) = self.width {
            spec.width = w;
        }
        if let Some(b) = self.blocks {
            spec.blocks = b;
        }
        if let Some(s) = self.scale {
            spec.scale = s;
        }
        if let Some(p) = self.placement {
            spec.placement = Some(match p {
                PlacementArg::PerBlock => Placement::PerBlock,
                PlacementArg::AfterConcat => Placement::AfterConcat,
            });
        }
        if self.no_global_skip {
            spec.global_skip = false;
        }
        if let Some(r) = self.res_scale {
            spec.res_scale = r;
        }
        match self.attention {
            Some(AttentionKind::None) => spec.attention = None,
            Some(AttentionKind::Mhca) if n != 1 => {
                return Err(CliError::Usage(format!(
                    "--attention mhca needs exactly one input modality, got {n}"
                )))
            }
            Some(_) if spec.attention.is_none() => spec.attention = Some(AttentionConfig::default()),
            _ => {}
        }
        let tweaks = self.heads.is_some() || self.reduction.is_some() || self.no_deconv || self.uniform_kernel.is_some();
        match &mut spec.attention {
            Some(a) => {
                if let Some(h) = self.heads {
                    a.heads = h;
                }
                if let Some(r) = self.reduction {
                    a.reduction = r;
                }
                a.no_deconv |= self.no_deconv;
                if self.uniform_kernel.is_some() {
                    a.uniform_kernel = self.uniform_kernel;
                }
            }
            None if tweaks => {
                return Err(CliError::Usage("attention flags given with --attention none".into()));
            }
            None => {}
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// LR patch side.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Initial Adam step size; halved at the midpoint of the step budget.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validation cadence as a fraction of the step budget.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long, value_parser = ["f32", "f64"])]
    pub precision: Option<String>,
    /// Stop early (after a final validation) once this much wall time has passed.
    #[arg(long)]
    pub max_seconds: Option<f64>,
}

impl OptimArgs {
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let precision: Precision = match &self.precision {
            Some(p) => p.parse()?,
            None => d.precision,
        };
        let cfg = TrainConfig {
            steps: self.steps.unwrap_or(d.steps),
            batch: self.batch.unwrap_or(d.batch),
            patch: self.patch.unwrap_or(d.patch),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            seed: self.seed.unwrap_or(d.seed),
            val_fraction: self.val_fraction.unwrap_or(d.val_fraction),
            log_every: self.log_every.unwrap_or(d.log_every),
            precision,
            max_seconds: self.max_seconds,
        };
        cfg.validate()?;
        if cfg.max_seconds.is_some_and(|m| m.is_nan() || m <= 0.0) {
            return Err(CliError::Usage("--max-seconds must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 10)]
    pub val: usize,
    #[arg(long, default_value_t = 20)]
    pub test: usize,
    /// HR slice side in pixels.
    #[arg(long, default_value_t = 96)]
    pub hr_size: usize,
    /// Number of modalities (t1w, t2w, pd); the target is t2w when there are two or more.
    #[arg(long, default_value_t = 2)]
    pub modalities: usize,
    /// Dataset directory; receives the slices, manifest.toml and config.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dataset modalities fed to the model, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub inputs: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required_unless_present = "bicubic", conflicts_with = "bicubic")]
    pub checkpoint: Option<PathBuf>,
    /// Score bicubic upscaling instead of a model.
    #[arg(long)]
    pub bicubic: bool,
    /// Average over the eight flips and rotations of the input.
    #[arg(long)]
    pub self_ensemble: bool,
    /// Bicubic scale factor (checkpoints carry their own).
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// LR slices in the checkpoint's input order, one flag per modality.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub self_ensemble: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Total wall-clock budget in seconds, split evenly across rows.
    #[arg(long)]
    pub budget_seconds: Option<f64>,
    /// Run only rows whose name contains this text.
    #[arg(long)]
    pub filter: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model inputs of the checked network.
    #[arg(long, default_value_t = 2)]
    pub modalities: usize,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Check at most this many elements per tensor.
    #[arg(long)]
    pub max_elements: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpAttentionArgs {
    /// Trained weights; without one, an untrained model with zeroed attention is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// LR slices in model input order, one flag per modality.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Which input is the target (untrained models only).
    #[arg(long, default_value_t = 0)]
    pub target_index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A config.json written by an earlier run.
    pub echo: PathBuf,
}
