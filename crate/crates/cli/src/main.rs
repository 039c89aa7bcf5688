use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stem_cli::commands::{
    cmd_bench, cmd_em, cmd_gen, cmd_invert, cmd_metrics, cmd_sweep_k, BenchArgs, EmArgs,
    GenArgs, InvertArgs, MetricsArgs, SweepArgs,
};
use stem_cli::config::{ExperimentConfig, Overrides};
use stem_cli::synth::SynthKind;

/// Low-rank video inversion harness: EM basis estimation, DDIM
/// inversion/reconstruction, attention benchmarks, K sweeps, quality
/// metrics, and synthetic input generation.
#[derive(Parser)]
#[command(name = "stem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Clone)]
struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to STEM_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Attention variant: self_only, two_frame_fatezero,
    /// two_frame_tuneavideo, all_frame, stem.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Basis count, or comma-separated list for sweeps (e.g. 128,256,512).
    #[arg(long, global = true)]
    k: Option<String>,
    /// EM softmax temperature.
    #[arg(long, global = true)]
    tau: Option<f32>,
    /// EM iterations R.
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// DDIM inference steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Classifier-free guidance scale (unguided when absent).
    #[arg(long, global = true)]
    guidance: Option<f32>,
    /// Write wall-time fields as zero so reruns are byte-identical.
    #[arg(long, global = true)]
    no_timing: bool,
}

impl Common {
    fn resolve(&self) -> stem_cli::Result<ExperimentConfig> {
        let ov = Overrides {
            variant: self.variant.clone(),
            k: self.k.clone(),
            tau: self.tau,
            iters: self.iters,
            steps: self.steps,
            guidance: self.guidance,
            seed: self.seed,
            threads: self.threads,
            no_timing: self.no_timing,
        };
        ExperimentConfig::resolve(self.config.as_deref(), &ov)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a basis set from a feature tensor via EM.
    Em {
        #[command(flatten)]
        common: Common,
        /// Input feature tensor, 4-D (N,H,W,C) or 2-D (M,C).
        #[arg(long)]
        input: PathBuf,
    },
    /// DDIM-invert a video then reconstruct it, reporting PSNR/SSIM.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Input video tensor (N,H,W,C).
        #[arg(long)]
        input: PathBuf,
        /// Also write the full inversion trajectory.
        #[arg(long)]
        save_trajectory: bool,
    },
    /// Benchmark attention variants: FLOPs and median wall time.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 64)]
        head_dim: usize,
        /// Timed repetitions per variant (at least 5), after one
        /// discarded warm-up.
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Run one stem inversion per K and tabulate reconstruction quality.
    SweepK {
        #[command(flatten)]
        common: Common,
        /// Input video tensor (N,H,W,C).
        #[arg(long)]
        input: PathBuf,
    },
    /// Reconstruction-quality metrics between two tensors, plus optional
    /// warp error and cosine maps.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Video under evaluation (N,H,W,C).
        #[arg(long)]
        input: PathBuf,
        /// Reference video of the same shape.
        #[arg(long)]
        reference: PathBuf,
        /// Optical flow tensor (N-1,H,W,2); enables warp error.
        #[arg(long)]
        flow: Option<PathBuf>,
        /// First single-frame feature map; enables cosine maps.
        #[arg(long)]
        feature_a: Option<PathBuf>,
        /// Second single-frame feature map.
        #[arg(long)]
        feature_b: Option<PathBuf>,
    },
    /// Generate a synthetic input tensor.
    Gen {
        #[command(flatten)]
        common: Common,
        /// clusters, perturbed_video, or moving_blob.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        /// Cluster count (clusters kind).
        #[arg(long, default_value_t = 2)]
        centers: usize,
        /// Points per cluster (clusters kind).
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Noise scale: cluster spread or per-frame perturbation.
        #[arg(long, default_value_t = 0.1)]
        sigma: f32,
        /// Distance between cluster centers.
        #[arg(long, default_value_t = 20.0)]
        separation: f32,
    },
}

fn run(cli: Cli) -> stem_cli::Result<()> {
    match cli.command {
        Command::Em { common, input } => {
            let cfg = common.resolve()?;
            cmd_em(&cfg, &EmArgs { input, out: common.out })
        }
        Command::Invert { common, input, save_trajectory } => {
            let cfg = common.resolve()?;
            cmd_invert(&cfg, &InvertArgs { input, out: common.out, save_trajectory })
        }
        Command::Bench { common, frames, height, width, channels, head_dim, runs } => {
            let cfg = common.resolve()?;
            cmd_bench(
                &cfg,
                &BenchArgs { out: common.out, frames, height, width, channels, head_dim, runs },
            )
        }
        Command::SweepK { common, input } => {
            let cfg = common.resolve()?;
            cmd_sweep_k(&cfg, &SweepArgs { input, out: common.out })
        }
        Command::Metrics { common, input, reference, flow, feature_a, feature_b } => {
            let cfg = common.resolve()?;
            cmd_metrics(
                &cfg,
                &MetricsArgs { input, reference, flow, feature_a, feature_b, out: common.out },
            )
        }
        Command::Gen {
            common,
            kind,
            frames,
            height,
            width,
            channels,
            centers,
            points,
            sigma,
            separation,
        } => {
            let cfg = common.resolve()?;
            cmd_gen(
                &cfg,
                &GenArgs {
                    kind: SynthKind::parse(&kind)?,
                    out: common.out,
                    frames,
                    height,
                    width,
                    channels,
                    centers,
                    points,
                    sigma,
                    separation,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
