//! Artifact writers behind the `synth` and `register` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sqn_core::grid::ImageStack;
use sqn_core::measures::{MeasureConfig, PairKind};
use sqn_core::optimize::{OptimizerConfig, TRACE_HEADER};
use sqn_core::pgm::{save_pgm, write_manifest};
use sqn_core::register::{
    register_global, register_sequential, RegistrationResult, SequentialConfig,
};
use sqn_core::regularizer::RegularizerConfig;
use sqn_core::transform::{save_dfield, warp_image};
use sqn_core::{Error, Result};

use crate::diagnostics::{drift_metric, mip_error, rescale_for_display};
use crate::phantom::{shifts_csv, Phantom};

pub const MANIFEST: &str = "stack.txt";
pub const SHIFTS: &str = "shifts.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// All frames at once with SqN.
    Global,
    /// Pairwise chain with NGF or SSD.
    Sequential,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Global => "global",
            Mode::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub measure: MeasureConfig,
    pub mode: Mode,
    pub regularizer: RegularizerConfig,
    pub optimizer: OptimizerConfig,
    pub sweeps: usize,
    /// Gaussian width (cells) applied to the frames the optimizer sees;
    /// outputs always warp the frames as given. 8-bit frames have exactly
    /// flat patches bordered by single gray-level steps, and with a small
    /// edge parameter those steps make the edge-based measures jump under
    /// sub-pixel motion.
    pub presmooth: f64,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn frame_name(prefix: &str, t: usize, ext: &str) -> String {
    format!("{prefix}_{t:03}.{ext}")
}

/// Writes the frames as PGM, the manifest and the ground-truth shifts;
/// returns the manifest path.
pub fn write_phantom(phantom: &Phantom, dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let mut entries = Vec::new();
    for (t, frame) in phantom.stack.frames().iter().enumerate() {
        let name = frame_name("frame", t, "pgm");
        save_pgm(frame, dir.join(&name))?;
        entries.push(PathBuf::from(name));
    }
    let manifest = dir.join(MANIFEST);
    write_manifest(&manifest, &entries)?;
    write_text(&dir.join(SHIFTS), &shifts_csv(&phantom.shifts))?;
    Ok(manifest)
}

/// Runs the registration selected by `cfg`.
pub fn register(stack: &ImageStack, cfg: &RunConfig) -> Result<RegistrationResult> {
    cfg.measure.validate()?;
    match (cfg.mode, &cfg.measure) {
        (Mode::Global, MeasureConfig::Sqn(sqn)) => {
            register_global(stack, sqn, &cfg.regularizer, &cfg.optimizer)
        }
        (Mode::Sequential, MeasureConfig::Ngf { eta }) => {
            let mut seq = SequentialConfig::new(PairKind::Ngf { eta: *eta });
            seq.sweeps = cfg.sweeps;
            register_sequential(stack, &seq, &cfg.regularizer, &cfg.optimizer)
        }
        (Mode::Sequential, MeasureConfig::Ssd) => {
            let mut seq = SequentialConfig::new(PairKind::Ssd);
            seq.sweeps = cfg.sweeps;
            register_sequential(stack, &seq, &cfg.regularizer, &cfg.optimizer)
        }
        (mode, m) => Err(Error::InvalidParameter(format!(
            "{} registration does not support measure {}",
            mode.label(),
            m.label()
        ))),
    }
}

/// What `register_run` produced, for callers that report on it.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub result: RegistrationResult,
    pub seconds: f64,
    pub mip_in_mean: f64,
    pub mip_out_mean: f64,
}

/// Registers `stack` and writes registered frames, fields, trace, error
/// projections, drift table and a summary into `dir`.
pub fn register_run(stack: &ImageStack, cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    create_dir(dir)?;
    let start = Instant::now();
    let working = if cfg.presmooth > 0.0 {
        let frames = stack
            .frames()
            .iter()
            .map(|f| f.smoothed(cfg.presmooth))
            .collect::<Result<Vec<_>>>()?;
        ImageStack::new(frames)?
    } else {
        stack.clone()
    };
    let result = register(&working, cfg)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut entries = Vec::new();
    let mut registered = Vec::with_capacity(stack.len());
    for (t, (frame, field)) in stack.frames().iter().zip(&result.fields).enumerate() {
        let warped = warp_image(frame, field)?;
        let name = frame_name("registered", t, "pgm");
        save_pgm(&warped, dir.join(&name))?;
        entries.push(PathBuf::from(name));
        save_dfield(field, dir.join(frame_name("field", t, "dfield")))?;
        registered.push(warped);
    }
    write_manifest(dir.join("registered.txt"), &entries)?;
    let registered = ImageStack::new(registered)?;

    let mut trace = String::from(TRACE_HEADER);
    trace.push('\n');
    for e in &result.trace {
        trace.push_str(&e.csv_row());
        trace.push('\n');
    }
    write_text(&dir.join("trace.csv"), &trace)?;

    let mip_in = mip_error(stack);
    let mip_out = mip_error(&registered);
    let (mip_in_img, in_factor) = rescale_for_display(&mip_in);
    let (mip_out_img, out_factor) = rescale_for_display(&mip_out);
    save_pgm(&mip_in_img, dir.join("mip_input.pgm"))?;
    save_pgm(&mip_out_img, dir.join("mip_output.pgm"))?;

    let drift = drift_metric(&result.fields)?;
    write_text(&dir.join("drift.csv"), &drift.csv())?;

    let mut summary = String::new();
    let _ = writeln!(summary, "mode {}", cfg.mode.label());
    let _ = writeln!(summary, "measure {}", cfg.measure.label());
    let _ = writeln!(summary, "alpha {}", cfg.regularizer.alpha);
    let _ = writeln!(summary, "presmooth {}", cfg.presmooth);
    let _ = writeln!(summary, "levels {}", cfg.optimizer.levels);
    let _ = writeln!(summary, "max_iterations {}", cfg.optimizer.max_iterations);
    if cfg.mode == Mode::Sequential {
        let _ = writeln!(summary, "sweeps {}", cfg.sweeps);
    }
    let _ = writeln!(summary, "deterministic {}", cfg.optimizer.deterministic);
    let _ = writeln!(summary, "frames {}", stack.len());
    let _ = writeln!(summary, "dims {:?}", stack.grid().dims());
    let _ = writeln!(summary, "objective {:.17e}", result.objective);
    let _ = writeln!(summary, "converged {}", result.converged);
    let _ = writeln!(summary, "seconds {seconds:.3}");
    for (level, s) in &result.stage_seconds {
        let _ = writeln!(summary, "level_{level}_seconds {s:.3}");
    }
    let _ = writeln!(summary, "mip_input_mean {:.17e}", mip_in.mean());
    let _ = writeln!(summary, "mip_output_mean {:.17e}", mip_out.mean());
    let _ = writeln!(summary, "mip_input_display_factor {in_factor:.17e}");
    let _ = writeln!(summary, "mip_output_display_factor {out_factor:.17e}");
    let _ = writeln!(summary, "drift {:.17e}", drift.drift);
    let _ = writeln!(summary, "max_frame_displacement {:.17e}", drift.max_frame);
    write_text(&dir.join("summary.txt"), &summary)?;

    Ok(RunSummary {
        result,
        seconds,
        mip_in_mean: mip_in.mean(),
        mip_out_mean: mip_out.mean(),
    })
}
