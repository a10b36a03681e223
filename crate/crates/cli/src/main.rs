use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sqn_cli::diagnostics::{
    drift_metric, landscape, landscape_csv, mip_error, rescale_for_display, LandscapeSpec,
};
use sqn_cli::phantom::{synth, PhantomKind, PhantomSpec};
use sqn_cli::run::{register_run, Mode, RunConfig};
use sqn_core::measures::{MeasureConfig, SqnConfig};
use sqn_core::ngf::{EdgeParameter, DEFAULT_EDGE};
use sqn_core::optimize::OptimizerConfig;
use sqn_core::pgm::{load_stack, save_pgm};
use sqn_core::regularizer::{RegularizerConfig, DEFAULT_ALPHA};
use sqn_core::transform::load_dfield;

/// Registration of image sequences with the Schatten-q norm of normalized
/// gradient fields, plus phantoms and diagnostics for experiments.
#[derive(Parser)]
#[command(name = "sqn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic sequence (PGM frames, manifest, ground-truth shifts).
    Synth(SynthArgs),
    /// Register a sequence and write the results.
    Register(RegisterArgs),
    /// Evaluate measures over integer translations of one frame against another.
    Landscape(LandscapeArgs),
    /// Error projection of a sequence.
    Mip(MipArgs),
    /// Drift statistics of a set of displacement fields.
    Drift(DriftArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Uptake,
    Serial,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeasureArg {
    Sqn,
    Ngf,
    Ssd,
    Mi,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    Sequential,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "uptake")]
    kind: KindArg,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Rows and columns.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Uptake: largest shift per axis; serial: jitter standard deviation (px).
    #[arg(long)]
    max_shift: Option<f64>,
    /// Contrast factor of the enhancing structures in the first frame.
    #[arg(long)]
    ramp_start: Option<f64>,
    /// Contrast factor in the last frame.
    #[arg(long)]
    ramp_end: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Peak amplitude (px) of an extra smooth warp per frame.
    #[arg(long, default_value_t = 0.0)]
    deformation: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long, value_enum, default_value = "sqn")]
    measure: MeasureArg,
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    #[arg(long, default_value_t = DEFAULT_EDGE)]
    eta: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Histogram bins for mutual information.
    #[arg(long, default_value_t = 16)]
    bins: usize,
}

#[derive(Args)]
struct RegisterArgs {
    /// Stack manifest: one PGM path per line, in temporal order.
    manifest: PathBuf,
    #[command(flatten)]
    measure: MeasureArgs,
    #[arg(long, value_enum, default_value = "global")]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
    /// Forward-backward sweeps of the sequential mode.
    #[arg(long, default_value_t = 1)]
    sweeps: usize,
    /// Order-independent reductions, so results do not depend on frame order.
    #[arg(long)]
    deterministic: bool,
    /// Gaussian width (px) of the smoothing applied before registration; 0 disables.
    #[arg(long, default_value_t = 1.0)]
    presmooth: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LandscapeArgs {
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    reference: usize,
    #[arg(long, default_value_t = 1)]
    template: usize,
    #[arg(long, default_value_t = 8)]
    range: i64,
    #[arg(long, default_value_t = 1)]
    step: i64,
    /// Measures to evaluate; all of them when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    measure: Vec<MeasureArg>,
    /// Exponents for the SqN columns.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5])]
    q: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_EDGE)]
    eta: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 16)]
    bins: usize,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MipArgs {
    manifest: PathBuf,
    /// PGM output, rescaled to [0, 255].
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DriftArgs {
    /// DFIELD files, one per frame, in temporal order.
    #[arg(required = true)]
    fields: Vec<PathBuf>,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
}

fn measure_config(args: &MeasureArgs) -> Result<MeasureConfig> {
    Ok(match args.measure {
        MeasureArg::Sqn => MeasureConfig::Sqn(SqnConfig::new(args.q, args.eta, args.epsilon)?),
        MeasureArg::Ngf => MeasureConfig::Ngf {
            eta: EdgeParameter::new(args.eta)?,
        },
        MeasureArg::Ssd => MeasureConfig::Ssd,
        MeasureArg::Mi => MeasureConfig::Mi { bins: args.bins },
    })
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match args.kind {
        KindArg::Uptake => PhantomSpec::uptake(args.frames, args.size, args.seed),
        KindArg::Serial => PhantomSpec::serial(args.frames, args.size, args.seed),
    };
    if let Some(s) = args.max_shift {
        spec.max_shift = s;
    }
    if let Some(v) = args.ramp_start {
        spec.intensity.0 = v;
    }
    if let Some(v) = args.ramp_end {
        spec.intensity.1 = v;
    }
    spec.amplitude = args.amplitude;
    spec.deformation = args.deformation;
    let phantom = synth(&spec)?;
    let manifest = sqn_cli::run::write_phantom(&phantom, &args.out)?;
    let kind = match spec.kind {
        PhantomKind::Uptake => "uptake",
        PhantomKind::Serial => "serial",
    };
    println!(
        "{kind} phantom with {} frames written to {}",
        spec.frames,
        manifest.display()
    );
    Ok(())
}

fn run_register(args: &RegisterArgs) -> Result<()> {
    let stack = load_stack(&args.manifest)
        .with_context(|| format!("loading {}", args.manifest.display()))?;
    let cfg = RunConfig {
        measure: measure_config(&args.measure)?,
        mode: match args.mode {
            ModeArg::Global => Mode::Global,
            ModeArg::Sequential => Mode::Sequential,
        },
        regularizer: RegularizerConfig::new(args.alpha)?,
        optimizer: OptimizerConfig {
            levels: args.levels,
            max_iterations: args.max_iterations,
            deterministic: args.deterministic,
            ..OptimizerConfig::default()
        },
        sweeps: args.sweeps,
        presmooth: args.presmooth,
    };
    let summary = register_run(&stack, &cfg, &args.out)?;
    println!(
        "{} {} registration of {} frames: objective {:.6e}, {:.2} s, error projection mean {:.4} -> {:.4}",
        cfg.mode.label(),
        cfg.measure.label(),
        stack.len(),
        summary.result.objective,
        summary.seconds,
        summary.mip_in_mean,
        summary.mip_out_mean
    );
    Ok(())
}

fn run_landscape(args: &LandscapeArgs) -> Result<()> {
    let stack = load_stack(&args.manifest)?;
    let frames = stack.frames();
    let pick = |i: usize| {
        frames
            .get(i)
            .with_context(|| format!("frame {i} out of range for {} frames", frames.len()))
    };
    let (reference, template) = (pick(args.reference)?, pick(args.template)?);
    let wanted = if args.measure.is_empty() {
        vec![
            MeasureArg::Ssd,
            MeasureArg::Mi,
            MeasureArg::Ngf,
            MeasureArg::Sqn,
        ]
    } else {
        args.measure.clone()
    };
    let mut measures = Vec::new();
    for m in wanted {
        match m {
            MeasureArg::Sqn => {
                for &q in &args.q {
                    measures.push(MeasureConfig::Sqn(SqnConfig::new(
                        q,
                        args.eta,
                        args.epsilon,
                    )?));
                }
            }
            MeasureArg::Ngf => measures.push(MeasureConfig::Ngf {
                eta: EdgeParameter::new(args.eta)?,
            }),
            MeasureArg::Ssd => measures.push(MeasureConfig::Ssd),
            MeasureArg::Mi => measures.push(MeasureConfig::Mi { bins: args.bins }),
        }
    }
    let spec = LandscapeSpec {
        range: args.range,
        step: args.step,
        measures,
    };
    let rows = landscape(reference, template, &spec)?;
    write(&args.out, &landscape_csv(&rows))?;
    println!("{} rows written to {}", rows.len(), args.out.display());
    Ok(())
}

fn run_mip(args: &MipArgs) -> Result<()> {
    let stack = load_stack(&args.manifest)?;
    let mip = mip_error(&stack);
    let (display, factor) = rescale_for_display(&mip);
    save_pgm(&display, &args.out)?;
    println!(
        "error projection mean {:.6} written with display factor {factor:.6e}",
        mip.mean()
    );
    Ok(())
}

fn run_drift(args: &DriftArgs) -> Result<()> {
    let fields = args
        .fields
        .iter()
        .map(|p| load_dfield(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let drift = drift_metric(&fields)?;
    write(&args.out, &drift.csv())?;
    println!(
        "drift {:.6} max frame displacement {:.6}",
        drift.drift, drift.max_frame
    );
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Register(a) => run_register(a),
        Command::Landscape(a) => run_landscape(a),
        Command::Mip(a) => run_mip(a),
        Command::Drift(a) => run_drift(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
