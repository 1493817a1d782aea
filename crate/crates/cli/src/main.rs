//! `tpan`: batch front end for t-kernel view synthesis.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::CliError;

#[derive(Parser, Debug)]
#[command(name = "tpan", version, about = "T-shaped adaptive-dilation view synthesis tools")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TPAN_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Rule {
    /// Divide the pan by the long-wing length in both directions.
    LongWing,
    /// Divide by the short-wing length for leftward pans.
    PanSign,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Gd,
    Adam,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Blend-convolve an image with kernel and weight fields.
    Pan(PanArgs),
    /// Write disparity and occlusion maps of a kernel field.
    Extract(ExtractArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Fit per-pixel kernels to a synthetic layered scene.
    TrainToy(TrainToyArgs),
    /// Build the shifted-downscaled stack of an image.
    Stack(StackArgs),
    /// RMSE, PSNR and SSIM of two PNG images.
    Metrics(MetricsArgs),
    /// Depth metrics of two disparity fields.
    DepthMetrics(DepthMetricsArgs),
    /// Softmax-blend forward and backward disparities.
    Spp(SppArgs),
    /// Rescale a pan amount to another stereo baseline.
    ScalePan(ScalePanArgs),
}

#[derive(Args, Debug)]
pub struct PanArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// 81-channel kernel field (MNRT).
    #[arg(long)]
    pub params: PathBuf,
    /// N-channel blend weights (MNRT); N sets the number of dilations.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub pan: f64,
    #[arg(long, value_enum, default_value_t = Rule::LongWing)]
    pub rule: Rule,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Pan amount used to report the disparity range in pixels.
    #[arg(long, allow_negative_numbers = true)]
    pub pan: f64,
    /// Directory receiving disp.mnrt, disp.png, occ.mnrt and occ.png.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(4..))]
    pub h: u32,
    #[arg(long, default_value_t = 9, value_parser = clap::value_parser!(u32).range(4..))]
    pub w: u32,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 153.0, allow_negative_numbers = true)]
    pub pan: f64,
    /// Entries checked per gradient group.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[arg(long, default_value = "noise")]
    pub kind: String,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    /// Layer disparities in pixels, front to back.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub disparities: Vec<f64>,
    #[arg(long, default_value_t = 32.0, allow_negative_numbers = true)]
    pub pan: f64,
    #[arg(long, default_value_t = 3)]
    pub dilations: usize,
    #[arg(long, value_enum, default_value_t = Rule::LongWing)]
    pub rule: Rule,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Gd)]
    pub optimizer: OptimizerKind,
    /// Scene seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving history.csv, kernels.mnrt, weights.mnrt,
    /// reconstruction.png and disparity.png.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct StackArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub pan: f64,
    /// Largest normalized disparity in [0, 1].
    #[arg(long, conflicts_with = "params", required_unless_present = "params")]
    pub max_disp: Option<f64>,
    /// Kernel field whose largest extracted disparity sets the stride.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = tpan_core::srstack::DEFAULT_LEVELS)]
    pub levels: usize,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Args, Debug)]
pub struct DepthMetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Validity field; defaults to the pixels where the ground truth is positive.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SppArgs {
    #[arg(long)]
    pub disp_fwd: PathBuf,
    #[arg(long)]
    pub disp_bwd: PathBuf,
    #[arg(long)]
    pub amb_fwd: PathBuf,
    #[arg(long)]
    pub amb_bwd: PathBuf,
    /// Blended disparity (MNRT).
    #[arg(long, short)]
    pub output: PathBuf,
    /// Optional PNG rendering of the blend.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScalePanArgs {
    /// Baselines as tag=length pairs.
    #[arg(long, default_value = "kitti=54,cityscapes=22,viclab=12")]
    pub baselines: String,
    #[arg(long = "ref", default_value = "kitti")]
    pub reference: String,
    #[arg(long, default_value_t = 153.0, allow_negative_numbers = true)]
    pub pan: f64,
    #[arg(long)]
    pub dataset: String,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::precondition(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Pan(a) => commands::pan(&a),
        Command::Extract(a) => commands::extract(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::TrainToy(a) => commands::train_toy(&a),
        Command::Stack(a) => commands::stack(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::DepthMetrics(a) => commands::depth_metrics(&a),
        Command::Spp(a) => commands::spp(&a),
        Command::ScalePan(a) => commands::scale_pan(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tpan: {e}");
            e.exit_code()
        }
    }
}
