use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use l1loop::detector::DetectorConfig;
use l1loop::error::Error;
use l1loop::run::{self, EvalSpec, FeatureSpec, InputSource, RunConfig, SynthSpec};

/// Loop-closure detection by sparse l1-minimization.
#[derive(Parser, Debug)]
#[command(name = "l1loop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the detector over an image directory or descriptor file.
    Detect(DetectArgs),
    /// Score a detection archive against ground truth.
    Eval(EvalArgs),
    /// Generate a planted-loop descriptor stream with ground truth.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "descriptors"])))]
struct DetectArgs {
    /// Directory of PGM/PPM images, read in file-name order.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Descriptor file (.csv, otherwise LCDF).
    #[arg(long)]
    descriptors: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Concatenate several resolutions, e.g. `3x4,6x8` (rows x cols).
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    stack: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.99)]
    tau: f64,
    #[arg(long = "tg-seconds", default_value_t = 10.0)]
    tg_seconds: f64,
    /// Frame rate of the input before striding.
    #[arg(long, default_value_t = 1.0)]
    fps: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Consistency window in seconds (defaults to --tg-seconds).
    #[arg(long)]
    window_seconds: Option<f64>,
    #[arg(long, overrides_with = "no_consistency")]
    consistency: bool,
    #[arg(long)]
    no_consistency: bool,
    /// Sum scores over frames already linked by accepted loops.
    #[arg(long)]
    joint: bool,
    /// Freeze the dictionary after a memory phase and match the rest.
    #[arg(long)]
    two_phase: bool,
    /// Memory size for --two-phase (default: half the stream).
    #[arg(long, requires = "two_phase")]
    memory_frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Output directory of a `detect` run.
    #[arg(long)]
    archive: PathBuf,
    /// Ground-truth CSV of `i,j` frame pairs.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,1.0")]
    taus: Vec<f64>,
    /// Re-solves the whole stream once per value.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = l1loop::evaluation::DEFAULT_TOLERANCE_FRAMES)]
    tolerance: usize,
    /// Also run the dense least-squares baseline (slow).
    #[arg(long)]
    lsq: bool,
    /// Defaults to `<archive>/eval`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 20)]
    loops: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

fn detect(a: DetectArgs) -> Result<(), Error> {
    let (input, features) = match (a.input, a.descriptors) {
        (Some(dir), _) => {
            let spec = if a.stack.is_empty() {
                FeatureSpec::Downsample { rows: a.rows, cols: a.cols }
            } else {
                FeatureSpec::Stack(a.stack)
            };
            (InputSource::Images(dir), spec)
        }
        (None, Some(file)) => (InputSource::Descriptors(file), FeatureSpec::Passthrough),
        (None, None) => unreachable!("clap requires a source"),
    };
    let (InputSource::Images(path) | InputSource::Descriptors(path)) = &input;
    if !path.exists() {
        return Err(Error::Io {
            path: path.clone(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    let cfg = RunConfig {
        input,
        features,
        detector: DetectorConfig {
            lambda: a.lambda,
            tau: a.tau,
            t_g_seconds: a.tg_seconds,
            fps: a.fps,
            consistency_window_seconds: a.window_seconds,
            consistency_required: !a.no_consistency,
            joint_contribution: a.joint,
            max_breakpoints: None,
        },
        out_dir: a.out,
        seed: a.seed,
        stride: a.stride,
        memory_frames: None,
    };
    let cfg = if a.two_phase {
        let n = run::load_frames(&cfg)?.len();
        RunConfig {
            memory_frames: Some(a.memory_frames.unwrap_or(n / 2)),
            ..cfg
        }
    } else {
        cfg
    };
    let result = run::run_detect(&cfg)?;
    let timing = l1loop::evaluation::timing_report(&result.traces);
    println!(
        "{} queries, {} hypotheses ({} accepted), mean solve {:.3} ms; wrote {}",
        result.traces.len(),
        result.hypotheses.len(),
        result.detections().len(),
        timing.mean_ms,
        cfg.out_dir.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    let spec = EvalSpec {
        taus: a.taus,
        lambdas: a.lambdas,
        tolerance_frames: a.tolerance,
        lsq_baseline: a.lsq,
    };
    let out = a.out.unwrap_or_else(|| a.archive.join("eval"));
    let report = run::run_eval(&a.archive, &a.truth, &spec, &out)?;
    println!("tau       precision recall    tp   fp   fn");
    for p in &report.tau_sweep {
        println!(
            "{:<9} {:<9.4} {:<9.4} {:<4} {:<4} {}",
            p.parameter, p.precision, p.recall, p.tp, p.fp, p.fn_
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        seed: a.seed,
        n_frames: a.frames,
        n_loops: a.loops,
        dim: a.dim,
        noise_level: a.noise,
    };
    let data = run::synth(&spec)?;
    run::write_synth(&data, &a.out)?;
    println!(
        "{} frames, {} loop pairs; wrote {}",
        data.frames.len(),
        data.truth.len(),
        a.out.display()
    );
    Ok(())
}

/// 2 for bad input or configuration, 1 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::InvalidConfig(_)
        | Error::EmptyInput
        | Error::BadDimensions(_)
        | Error::DimensionMismatch { .. }
        | Error::ZeroVector
        | Error::NonFinite => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
