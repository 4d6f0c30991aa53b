//! Command-line front end for the `riou` library.
//!
//! Exit codes: 0 ok, 2 bad input or config, 3 shape mismatch, 4 I/O failure,
//! 5 numeric check failure.

pub mod gradcheck;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use riou::losses::{self, LossKind};
use riou::pyramid::{self, LevelSpec, PyramidError, TpnetOptions};
use riou::regsim::{self, RunOptions, SimConfig, SimError, DEFAULT_BUDGET};
use riou::{solve_params, ParamError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SHAPE: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

/// Channel and spatial caps applied to the level table before a smoke run.
const SMOKE_CHANNELS: usize = 8;
const SMOKE_SPATIAL: usize = 16;

#[derive(Debug, Parser)]
#[command(name = "riou", version, about = "Rectified IoU loss laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the five loss coefficients for a gradient peak at BETA.
    SolveParams {
        /// IoU at which the gradient magnitude peaks, in (0.5, 1).
        #[arg(long)]
        beta: f64,
    },
    /// Write loss and gradient curves of the plain and rectified losses as CSV.
    Curves {
        /// IoU at which the rectified gradient peaks, in (0.5, 1).
        #[arg(long, default_value_t = 0.95)]
        beta: f64,
        /// Grid spacing on [0, 1], in (0, 0.1].
        #[arg(long, default_value_t = 0.001)]
        step: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic box gradients with central differences.
    Gradcheck {
        /// Random configurations per loss kind.
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Seed for the configuration generator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Peak location of the rectified loss under test.
        #[arg(long, default_value_t = 0.95)]
        beta: f64,
    },
    /// Run the synthetic box-regression experiment described by a config file.
    Simulate {
        /// TOML file with exactly the simulation keys.
        #[arg(long)]
        config: PathBuf,
        /// Directory for histograms.csv and scalars.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        threads: Option<u64>,
        /// Upper bound on sample_count * steps.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Build and validate the two-pronged pyramid dataflow graph.
    Pyramid {
        /// Input resolution selecting the default level table.
        #[arg(long, value_enum)]
        input_size: InputSize,
        /// TOML level table `levels = [[channels, height, width], ...]`,
        /// replacing the default one.
        #[arg(long)]
        levels: Option<PathBuf>,
        /// Number of T blocks; defaults to two fewer than the level count.
        #[arg(long)]
        t_blocks: Option<usize>,
        /// Channel width of the fused pyramid.
        #[arg(long, default_value_t = 256)]
        pyramid_channels: usize,
        /// Also execute a down-scaled copy of the graph with this seed.
        #[arg(long)]
        smoke_seed: Option<u64>,
        /// Write the smoke-run digest CSV here instead of standard output.
        #[arg(long, requires = "smoke_seed")]
        smoke_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputSize {
    #[value(name = "320")]
    S320,
    #[value(name = "512")]
    S512,
}

impl InputSize {
    pub fn pixels(self) -> usize {
        match self {
            InputSize::S320 => 320,
            InputSize::S512 => 512,
        }
    }
}

/// A failed command: exit code plus message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn param_failure(e: ParamError) -> Failure {
    match e {
        ParamError::BetaOutOfDomain { .. } => Failure::new(EXIT_INPUT, e.to_string()),
        ParamError::ResidualTooLarge { .. } => Failure::new(EXIT_NUMERIC, e.to_string()),
    }
}

fn sim_failure(e: SimError) -> Failure {
    let code = match &e {
        SimError::Parse(_)
        | SimError::InvalidConfig(_)
        | SimError::BudgetExceeded { .. }
        | SimError::Params(ParamError::BetaOutOfDomain { .. }) => EXIT_INPUT,
        _ => EXIT_NUMERIC,
    };
    Failure::new(code, e.to_string())
}

fn pyramid_failure(e: PyramidError) -> Failure {
    let code = match &e {
        PyramidError::ShapeMismatch(_) => EXIT_SHAPE,
        PyramidError::Precondition(_) | PyramidError::Parse(_) => EXIT_INPUT,
        PyramidError::NumericFailure { .. } => EXIT_NUMERIC,
    };
    Failure::new(code, e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_IO, format!("standard output: {e}")))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::SolveParams { beta } => emit(out, &solve_params_cmd(beta)?),
        Command::Curves { beta, step, out: path } => {
            let csv = curves_csv(beta, step)?;
            fs::write(&path, csv).map_err(|e| io_failure(&path, e))?;
            emit(out, &format!("wrote {}\n", path.display()))
        }
        Command::Gradcheck { trials, seed, beta } => {
            let params = solve_params(beta).map_err(param_failure)?;
            let kinds = [LossKind::Iou, LossKind::Giou, LossKind::Diou, LossKind::Riou(params)];
            let report = gradcheck::run(trials as usize, seed, &kinds)
                .map_err(|e| Failure::new(EXIT_NUMERIC, e.to_string()))?;
            gradcheck_outcome(&report, out)
        }
        Command::Simulate {
            config,
            out: dir,
            threads,
            budget,
        } => simulate_cmd(&config, &dir, threads.map(|t| t as usize), budget, out),
        Command::Pyramid {
            input_size,
            levels,
            t_blocks,
            pyramid_channels,
            smoke_seed,
            smoke_out,
        } => pyramid_cmd(
            input_size,
            levels.as_deref(),
            t_blocks,
            pyramid_channels,
            smoke_seed,
            smoke_out.as_deref(),
            out,
        ),
    }
}

pub fn solve_params_cmd(beta: f64) -> Result<String, Failure> {
    let p = solve_params(beta).map_err(param_failure)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>24} {:>24} {:>24} {:>24} {:>24} {:>12}",
        "beta", "a", "b", "c", "k", "t", "max|resid|"
    );
    let _ = writeln!(
        s,
        "{:>6} {:>24} {:>24} {:>24} {:>24} {:>24} {:>12.3e}",
        p.beta(),
        p.a(),
        p.b(),
        p.c(),
        p.k(),
        p.t(),
        p.max_residual()
    );
    let _ = writeln!(
        s,
        "beta={} a={} b={} c={} k={} t={} max_residual={:e}",
        p.beta(),
        p.a(),
        p.b(),
        p.c(),
        p.k(),
        p.t(),
        p.max_residual()
    );
    Ok(s)
}

/// Grid `0, step, 2 step, ...` with 1 appended when `step` does not divide
/// it. An even division is evaluated as `i / n` so points like 0.95 come out
/// exact.
fn grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() < 1e-9 {
        let n = n as usize;
        return (0..=n).map(|i| i as f64 / n as f64).collect();
    }
    let n = (1.0 / step).floor() as usize;
    let mut xs: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    xs.push(1.0);
    xs
}

pub fn curves_csv(beta: f64, step: f64) -> Result<String, Failure> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(Failure::new(EXIT_INPUT, format!("step {step} must lie in (0, 0.1]")));
    }
    let p = solve_params(beta).map_err(param_failure)?;
    let mut s = String::from("iou,loss_iou,grad_iou,loss_riou,grad_riou\n");
    for x in grid(step) {
        let row = (|| -> Result<_, losses::LossError> {
            Ok((
                losses::iou_loss(x)?,
                losses::iou_loss_grad_mag(x)?,
                losses::riou_loss(x, &p)?,
                losses::riou_grad_mag(x, &p)?,
            ))
        })()
        .map_err(|e| Failure::new(EXIT_NUMERIC, e.to_string()))?;
        let _ = writeln!(s, "{x},{},{},{},{}", row.0, row.1, row.2, row.3);
    }
    Ok(s)
}

/// Prints a gradcheck report and maps it to an exit status.
pub fn gradcheck_outcome(report: &gradcheck::Report, out: &mut dyn Write) -> Result<(), Failure> {
    emit(out, &report.render())?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_NUMERIC,
            format!("gradient check failed: relative error at or above {:e}", gradcheck::TOLERANCE),
        ))
    }
}

fn simulate_cmd(
    config: &Path,
    dir: &Path,
    threads: Option<usize>,
    budget: u64,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| io_failure(config, e))?;
    let cfg = SimConfig::from_toml_str(&text).map_err(sim_failure)?;
    let report = regsim::run_descent_with(&cfg, RunOptions { budget, threads }).map_err(sim_failure)?;
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    for (name, body) in [
        ("histograms.csv", report.histogram_csv()),
        ("scalars.csv", report.scalars_csv()),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| io_failure(&path, e))?;
    }
    emit(out, &report.summary())
}

fn pyramid_cmd(
    input_size: InputSize,
    levels_path: Option<&Path>,
    t_blocks: Option<usize>,
    pyramid_channels: usize,
    smoke_seed: Option<u64>,
    smoke_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let levels = match levels_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            LevelSpec::from_toml_str(&text).map_err(pyramid_failure)?
        }
        None => LevelSpec::resnet50_like(input_size.pixels()).map_err(pyramid_failure)?,
    };
    if pyramid_channels == 0 {
        return Err(Failure::new(EXIT_INPUT, "pyramid channels must be positive"));
    }
    let blocks = t_blocks.unwrap_or(levels.len().saturating_sub(2));
    let opts = TpnetOptions {
        pyramid_channels,
        ..TpnetOptions::default()
    };
    let net = pyramid::build_tpnet(&levels, blocks, opts).map_err(pyramid_failure)?;
    emit(out, &net.graph.shape_table())?;
    let problems = pyramid::validate(&net.graph);
    if !problems.is_empty() {
        let mut msg = format!("{} shape mismatch(es)", problems.len());
        for p in &problems {
            let _ = write!(msg, "\n  {p}");
        }
        return Err(Failure::new(EXIT_SHAPE, msg));
    }
    let pyramid_dims: Vec<String> = net.pyramid_shapes().iter().map(|s| s.to_string()).collect();
    emit(
        out,
        &format!(
            "validation: ok ({} nodes, {} T blocks, pyramid {})\n",
            net.graph.len(),
            blocks,
            pyramid_dims.join(" ")
        ),
    )?;

    if let Some(seed) = smoke_seed {
        let small = levels
            .downscaled(SMOKE_CHANNELS, SMOKE_SPATIAL)
            .map_err(pyramid_failure)?;
        let small_opts = TpnetOptions {
            pyramid_channels: pyramid_channels.min(SMOKE_CHANNELS),
            ..opts
        };
        let small_net = pyramid::build_tpnet(&small, blocks, small_opts).map_err(pyramid_failure)?;
        let report = pyramid::forward_smoke(&small_net.graph, seed).map_err(pyramid_failure)?;
        let csv = report.to_csv();
        match smoke_out {
            Some(path) => fs::write(path, csv).map_err(|e| io_failure(path, e))?,
            None => emit(out, &csv)?,
        }
        emit(out, &format!("smoke: ok (seed {seed}, {} nodes)\n", report.rows.len()))?;
    }
    Ok(())
}
