//! Argument definitions.

use std::path::PathBuf;

use ccgan_core::DomainTag;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ccgan", version, about = "Constrained CycleGAN for ultrasound envelope translation")]
pub struct Cli {
    /// Worker threads for data-parallel stages (defaults to all cores).
    #[arg(long, global = true, env = "CCGAN_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic train/test/sequence datasets.
    Synth(SynthArgs),
    /// Train both generators and discriminators.
    Train(TrainArgs),
    /// Run a trained generator over a set of frames.
    Translate(TranslateArgs),
    /// Axial and lateral FWHM at every point target.
    EvalResolution(ResolutionArgs),
    /// Nakagami m inside speckle ROIs.
    EvalNakagami(NakagamiArgs),
    /// SSIM and PSNR against paired reference frames.
    EvalImageQuality(QualityArgs),
    /// Block-matching speckle tracking over consecutive frames.
    Track(TrackArgs),
    /// Train and evaluate the four loss configurations on one dataset.
    Ablate(AblateArgs),
    /// Summarise a training run per epoch.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// TOML run configuration; overrides --preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in configuration when no file is given: desk or full.
    #[arg(long, default_value = "desk")]
    pub preset: String,
}

/// Frames taken from a manifest, optionally restricted to one domain.
#[derive(Debug, Clone, Args)]
pub struct FrameSource {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Only use frames of this domain (phased, linear or generated).
    #[arg(long)]
    pub domain: Option<DomainTag>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Overrides synth.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Manifest with phased (domain A) and linear (domain B) frames.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Exported generator weights (e.g. exported-generators/g_a.ccgw).
    #[arg(long)]
    pub generator: PathBuf,
    #[command(flatten)]
    pub source: FrameSource,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ResolutionArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub source: FrameSource,
    /// Point-target list; defaults to eval.targets.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a per-target bar chart (SVG).
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct NakagamiArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub source: FrameSource,
    /// ROI list; defaults to eval.rois.
    #[arg(long)]
    pub rois: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct QualityArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub source: FrameSource,
    /// Manifest holding the reference frames, paired by frame index.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub reference_domain: Option<DomainTag>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write SSIM/PSNR profiles over frames (SVG).
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub source: FrameSource,
    /// ROI mask container; defaults to track.mask, then the whole frame.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-pair correlation / RMSD profile (SVG).
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.seed for all four runs.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Training run directory.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the loss curves (SVG).
    #[arg(long)]
    pub plot: bool,
}
