mod commands;
mod tables;

use clap::{Args, Parser, Subcommand};
use se3grasp::flow::Solver;
use se3grasp::{GenMode, Vec3};
use std::path::PathBuf;
use std::process::ExitCode;

/// Default output root when neither `--out` nor `output_dir` is set.
pub const OUT_ENV: &str = "SE3GRASP_OUT";

#[derive(Debug, Parser)]
#[command(name = "se3grasp", version, about = "SE(3) grasp pose generation by score or flow matching")]
pub struct Cli {
    /// TOML run configuration; flags below override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (else `output_dir` from the config, else $SE3GRASP_OUT, else ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic grasp dataset.
    Datagen(DatagenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Draw grasps for every scene of a dataset.
    Sample(SampleArgs),
    /// Score one or more sample files against a dataset.
    Eval(EvalArgs),
    /// Ray-constrained translational ICP between two point clouds.
    Icp(IcpArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub grasps_per_scene: Option<usize>,
    /// Output file (default `<out>/dataset.jsonl`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<GenMode>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Checkpoint path (default `<out>/<mode>.ckpt`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Samples per scene (default `eval.samples_per_scene`).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = parse_solver)]
    pub solver: Option<Solver>,
    #[arg(long)]
    pub cfg_weight: Option<f64>,
    /// Enables guidance with this strength.
    #[arg(long)]
    pub lambda_gd: Option<f64>,
    #[arg(long)]
    pub theta_thr: Option<f64>,
    #[arg(long, value_parser = parse_vec3)]
    pub e_app: Option<Vec3>,
    /// Pose CSV path (default `<out>/samples_<mode>.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint of each run, paired in order with `--samples`.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub samples: Vec<PathBuf>,
    /// Run labels (default: the checkpoint's mode).
    #[arg(long)]
    pub label: Vec<String>,
}

#[derive(Debug, Args)]
pub struct IcpArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_parser = parse_vec3)]
    pub ray: Vec3,
    #[arg(long)]
    pub max_offset: Option<f64>,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {} components", v.len())),
    }
}

fn parse_mode(s: &str) -> Result<GenMode, String> {
    s.parse().map_err(|e: se3grasp::Error| e.to_string())
}

fn parse_solver(s: &str) -> Result<Solver, String> {
    s.parse().map_err(|e: se3grasp::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
