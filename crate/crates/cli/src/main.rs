use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mast_core::io::{read_tensor, write_feature_map, write_tensor, Tensor, TensorData};
use mast_core::job::{build_affinity, format_report, run_job, JobManifest, JobOverrides, Mode};
use mast_core::optim::{align_with, procrustes_oracle, CrossKernel};
use mast_core::transfer::{transfer_to_content_with, transfer_to_style_with};
use mast_core::{normalize_affinity, Execution, FeatureMap, MastError, ProjectionPair, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "mast",
    version,
    about = "Orthogonal manifold alignment of content and style feature maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a tensor file's header and value statistics.
    Inspect { file: PathBuf },
    /// Build the content/style affinity and write it as an int32 [N, 2] pair list.
    Affinity {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the projection pair and write P_c, P_s and the report.
    Align {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out_pc: PathBuf,
        #[arg(long)]
        out_ps: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Apply a learned pair: content -> style, or style -> content with --reverse.
    Transfer {
        #[arg(long)]
        pc: PathBuf,
        #[arg(long)]
        ps: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reverse: bool,
    },
    /// Run a full job from a TOML manifest; flags override manifest values.
    Run {
        manifest: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        content_mask: Option<PathBuf>,
        #[arg(long)]
        style_mask: Option<PathBuf>,
        #[arg(long)]
        bidirectional: bool,
    },
    /// Generate synthetic fixtures.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Random nonnegative features, [C, H, W] float32.
    Features {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        channels: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vertical stripes labelled 1..=regions, [H, W] int32.
    Labels {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 2)]
        regions: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    #[arg(long, default_value = "unsupervised")]
    mode: Mode,
    #[arg(long, default_value_t = mast_core::DEFAULT_K)]
    k: usize,
    #[arg(long)]
    content_mask: Option<PathBuf>,
    #[arg(long)]
    style_mask: Option<PathBuf>,
}

impl ProblemArgs {
    fn manifest(&self) -> JobManifest {
        let mut m = JobManifest::new(&self.content, &self.style, PathBuf::new());
        m.mode = self.mode;
        m.k = self.k;
        m.content_mask = self.content_mask.clone();
        m.style_mask = self.style_mask.clone();
        m
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Iteration budget [default: 100].
    #[arg(long)]
    iters: Option<usize>,
    /// Stationarity tolerance [default: 1e-6].
    #[arg(long)]
    epsilon: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    let exec = Execution::default();
    match command {
        Command::Inspect { file } => inspect(&file),
        Command::Affinity { problem, out } => {
            let m = problem.manifest();
            m.validate()?;
            let (content, style) = load_pair(&m)?;
            let a = build_affinity(&m, &content, &style, exec)?;
            write_tensor(&Tensor::from_affinity(&a)?, &out)?;
            println!(
                "pairs={} n_content={} n_style={}",
                a.pair_count(),
                a.n_content(),
                a.n_style()
            );
            Ok(())
        }
        Command::Align {
            problem,
            solver,
            out_pc,
            out_ps,
            report,
        } => {
            let mut m = problem.manifest();
            m.apply(&JobOverrides {
                max_iterations: solver.iters,
                epsilon: solver.epsilon,
                ..Default::default()
            });
            m.validate()?;
            let (content, style) = load_pair(&m)?;
            let a = build_affinity(&m, &content, &style, exec)?;
            let na = normalize_affinity(&a)?;
            let (pair, solver_report) = align_with(&content, &style, &na, &m.solver, exec)?;
            let bound = procrustes_oracle(&CrossKernel::new_with(&content, &style, &na, exec)?).1;
            write_tensor(&Tensor::from_matrix(pair.p_c()), &out_pc)?;
            write_tensor(&Tensor::from_matrix(pair.p_s()), &out_ps)?;
            let text = format_report(&m, &a, bound, &solver_report);
            match report {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| MastError::Io { path, source: e })?
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Transfer {
            pc,
            ps,
            input,
            out,
            reverse,
        } => {
            let pair = ProjectionPair::from_parts_unchecked(
                read_tensor(&pc)?.to_matrix()?,
                read_tensor(&ps)?.to_matrix()?,
            )?;
            let features = read_tensor(&input)?.to_feature_map()?;
            let moved = if reverse {
                transfer_to_content_with(&features, &pair, exec)?
            } else {
                transfer_to_style_with(&features, &pair, exec)?
            };
            write_feature_map(&moved, &out)
        }
        Command::Run {
            manifest,
            mode,
            k,
            solver,
            content_mask,
            style_mask,
            bidirectional,
        } => {
            let mut m = JobManifest::load(&manifest)?;
            m.apply(&JobOverrides {
                mode,
                k,
                max_iterations: solver.iters,
                epsilon: solver.epsilon,
                content_mask: content_mask.map(|p| absolute(&p)),
                style_mask: style_mask.map(|p| absolute(&p)),
                bidirectional: bidirectional.then_some(true),
            });
            let outcome = run_job(&m)?;
            if m.output.report.is_none() {
                print!("{}", outcome.report);
            }
            Ok(())
        }
        Command::Synth { what } => synth(what),
    }
}

// Flag paths are relative to the working directory, not the manifest.
fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir()
        .map(|d| d.join(p))
        .unwrap_or_else(|_| p.to_path_buf())
}

fn load_pair(m: &JobManifest) -> Result<(FeatureMap, FeatureMap)> {
    let content = read_tensor(&m.content_features)?.to_feature_map()?;
    let style = read_tensor(&m.style_features)?.to_feature_map()?;
    Ok((content, style))
}

fn inspect(file: &Path) -> Result<()> {
    let t = read_tensor(file)?;
    let count: usize = t.shape().iter().product();
    println!(
        "dtype={} shape={:?} elements={count}",
        t.dtype().name(),
        t.shape()
    );
    match t.data() {
        TensorData::Float(v) if !v.is_empty() => {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            println!("min={min:e} max={max:e} mean={mean:e}");
        }
        TensorData::Int(v) if !v.is_empty() => {
            let mut distinct = v.clone();
            distinct.sort_unstable();
            distinct.dedup();
            println!(
                "min={} max={} distinct={}",
                distinct[0],
                distinct[distinct.len() - 1],
                distinct.len()
            );
        }
        _ => {}
    }
    Ok(())
}

fn synth(what: SynthCommand) -> Result<()> {
    match what {
        SynthCommand::Features {
            seed,
            channels,
            width,
            height,
            out,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..channels * width * height)
                .map(|_| (rng.random_range(-0.5f32..1.0)).max(0.0) as f64)
                .collect();
            write_feature_map(
                &FeatureMap::from_chw(channels, height, width, &values)?,
                &out,
            )
        }
        SynthCommand::Labels {
            width,
            height,
            regions,
            out,
        } => {
            if regions == 0 || regions > width {
                return Err(MastError::InvalidConfig(format!(
                    "regions must lie in 1..={width}"
                )));
            }
            let labels: Vec<i32> = (0..height)
                .flat_map(|_| (0..width).map(move |x| (x * regions / width) as i32 + 1))
                .collect();
            write_tensor(&Tensor::from_labels(height, width, &labels)?, &out)
        }
    }
}
