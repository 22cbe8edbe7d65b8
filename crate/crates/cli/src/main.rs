//! `iit` command-line tool.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use iit::exemplar::{clahe, load_exemplar, ClaheParams};
use iit::io::{self, BitDepth};
use iit::kernels::KernelParams;
use iit::lle::LleParams;
use iit::oracle::verify_battery;
use iit::pipeline::{
    hdr_compress, hdr_exemplar, iit_transfer, run_report, smoothing_layers, ChannelMode, Diagnostics, Domain,
    HdrParams, IitParams, LleFeatures,
};
use iit::raster::{layer_remap, LogDomainParams, RasterImage, RemapParams};
use iit::solve::SolverOptions;

const EXIT_USAGE: u8 = 1;
const EXIT_PROCESSING: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "iit", version, about = "Illumination transfer from an exemplar image by one sparse solve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transfer the global illumination of an exemplar onto an image.
    Transfer(TransferArgs),
    /// Compress an HDR radiance image (.hdr) to display range.
    Hdr(HdrArgs),
    /// Generate a CLAHE exemplar.
    Clahe(ClaheArgs),
    /// Remap smoothing-split illumination/reflectance layers: exp(a + b*L + c*R).
    Remap(RemapArgs),
    /// Run the oracle battery and print pass/fail per check.
    #[command(hide = true)]
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Gaussian,
    Bilateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChannelArg {
    PerChannel,
    Luminance,
}

/// Tile grid given as `ROWSxCOLS`, e.g. `16x16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Tiles {
    rows: usize,
    cols: usize,
}

fn parse_tiles(s: &str) -> Result<Tiles, String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad tile count {v:?}: {e}"));
    let tiles = Tiles { rows: parse(r)?, cols: parse(c)? };
    if tiles.rows == 0 || tiles.cols == 0 {
        return Err("tile counts must be >= 1".into());
    }
    Ok(tiles)
}

#[derive(Debug, Clone, Args)]
struct ClaheOpts {
    /// CLAHE clip limit, as a fraction of tile pixels per bin
    #[arg(long, default_value_t = 0.01)]
    clip_limit: f64,
    /// CLAHE tile grid ROWSxCOLS (16x16 gives stronger global correction)
    #[arg(long, default_value = "8x8", value_parser = parse_tiles)]
    tiles: Tiles,
}

impl ClaheOpts {
    fn params(&self) -> Result<ClaheParams> {
        Ok(ClaheParams::new(self.clip_limit, self.tiles.cols, self.tiles.rows)?)
    }
}

#[derive(Debug, Clone, Args)]
struct SolveOpts {
    /// Smoothing kernel
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    kernel: KernelArg,
    /// Kernel window (odd)
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Spatial bandwidth of the kernel
    #[arg(long, default_value_t = 2.0)]
    sigma_s: f64,
    /// Range bandwidth of the bilateral kernel
    #[arg(long, default_value_t = 0.2)]
    sigma_r: f64,
    /// Reconstruction-weight window (odd, center excluded)
    #[arg(long, default_value_t = 5)]
    lle_window: usize,
    /// Reconstruction-weight regularization
    #[arg(long, default_value_t = 1e-5)]
    lle_eps: f64,
    /// Scale the regularization by the trace of each local Gram matrix
    #[arg(long)]
    lle_eps_scale_trace: bool,
    /// Compute one weight set from all color channels jointly
    #[arg(long)]
    lle_joint_color: bool,
    /// Illumination weight
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    /// Reflectance weight (10 to 100 for strong exemplars)
    #[arg(long, default_value_t = 100.0)]
    beta: f64,
    /// Content weight
    #[arg(long, default_value_t = 0.2)]
    gamma: f64,
    /// Use alpha and gamma as given instead of rescaling them to sum to 1
    #[arg(long)]
    no_normalize_ag: bool,
    /// Relative residual target of the solver
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Solver iteration cap
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
}

impl SolveOpts {
    fn params(&self) -> Result<IitParams> {
        let kernel = match self.kernel {
            KernelArg::Gaussian => KernelParams::gaussian(self.window, self.sigma_s)?,
            KernelArg::Bilateral => KernelParams::bilateral(self.window, self.sigma_s, self.sigma_r)?,
        };
        let mut lle = LleParams::new(self.lle_window, self.lle_eps)?;
        lle.scale_by_trace = self.lle_eps_scale_trace;
        let p = IitParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            normalize_ag: !self.no_normalize_ag,
            kernel,
            lle,
            lle_features: if self.lle_joint_color { LleFeatures::JointColor } else { LleFeatures::PerChannel },
            solver: SolverOptions { rel_tol: self.tol, max_iter: self.max_iter, ..Default::default() },
            ..IitParams::default()
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Source image (PNG or PPM)
    #[arg(short, long)]
    input: PathBuf,
    /// Exemplar image; a CLAHE exemplar of the input is used when absent
    #[arg(short, long)]
    exemplar: Option<PathBuf>,
    /// Output image (.png or .ppm)
    #[arg(short, long)]
    output: PathBuf,
    /// Write a JSON run report here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Working domain of the solve
    #[arg(long, value_enum, default_value_t = DomainArg::Log)]
    domain: DomainArg,
    /// Solve every channel, or luminance only
    #[arg(long, value_enum, default_value_t = ChannelArg::PerChannel)]
    channel_mode: ChannelArg,
    #[command(flatten)]
    solve: SolveOpts,
    #[command(flatten)]
    clahe: ClaheOpts,
}

#[derive(Debug, Args)]
struct HdrArgs {
    /// Radiance HDR input
    #[arg(short, long)]
    input: PathBuf,
    /// Display-referred exemplar; CLAHE of the log-luminance when absent
    #[arg(short, long)]
    exemplar: Option<PathBuf>,
    /// Output image (.png or .ppm)
    #[arg(short, long)]
    output: PathBuf,
    /// Write a JSON run report here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Saturation exponent (0.4 to 0.6 recommended)
    #[arg(long, default_value_t = 0.5)]
    saturation: f64,
    #[command(flatten)]
    solve: SolveOpts,
    #[command(flatten)]
    clahe: ClaheOpts,
}

#[derive(Debug, Args)]
struct ClaheArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    clahe: ClaheOpts,
}

#[derive(Debug, Args)]
struct RemapArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Additive log-domain offset (global brightness)
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    a: f64,
    /// Illumination gain
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    b: f64,
    /// Reflectance gain (contrast)
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    c_gain: f64,
    /// Window of the smoothing split
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Spatial bandwidth of the smoothing split
    #[arg(long, default_value_t = 2.0)]
    sigma_s: f64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Seed for the random instances
    #[arg(long, default_value_t = 20_211)]
    seed: u64,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Processing(anyhow::Error),
    NotConverged,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Processing(e)
    }
}

impl From<iit::Error> for Failure {
    fn from(e: iit::Error) -> Self {
        Failure::Processing(e.into())
    }
}

fn finish(diagnostics: &Diagnostics, report: Option<&PathBuf>) -> Result<(), Failure> {
    let summary = run_report(diagnostics);
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = report {
        summary.write(path).with_context(|| format!("writing report {}", path.display()))?;
    }
    if !summary.converged {
        eprintln!("note: output written from the best iterate of an unconverged solve");
        return Err(Failure::NotConverged);
    }
    Ok(())
}

fn run_transfer(args: &TransferArgs) -> Result<(), Failure> {
    let mut params = args.solve.params().map_err(Failure::Usage)?;
    params.domain = match args.domain {
        DomainArg::Log => Domain::Log,
        DomainArg::Linear => Domain::Linear,
    };
    params.channel_mode = match args.channel_mode {
        ChannelArg::PerChannel => ChannelMode::PerChannel,
        ChannelArg::Luminance => ChannelMode::Luminance,
    };
    let clahe_params = args.clahe.params().map_err(Failure::Usage)?;
    let loaded = io::load(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    if loaded.high_dynamic_range {
        return Err(anyhow!("{} is an HDR image; use the `hdr` subcommand", args.input.display()).into());
    }
    let source = loaded.image;
    let exemplar = match &args.exemplar {
        Some(path) => {
            let ex = load_exemplar(path).with_context(|| format!("reading exemplar {}", path.display()))?;
            if ex.height() != source.height() || ex.width() != source.width() {
                return Err(anyhow!(
                    "exemplar is {}x{} but input is {}x{}",
                    ex.height(),
                    ex.width(),
                    source.height(),
                    source.width()
                )
                .into());
            }
            ex
        }
        None => clahe(&source, &clahe_params)?,
    };
    let (output, diagnostics) = iit_transfer(&source, &exemplar, &params)?;
    io::save_image(&args.output, &output, loaded.depth)?;
    finish(&diagnostics, args.report.as_ref())
}

/// Lifts zero samples to the smallest positive sample of the image.
fn lift_zeros(img: RasterImage) -> Result<RasterImage> {
    let floor = img.data().iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        bail!("HDR image holds no positive samples");
    }
    let zeros = img.data().iter().filter(|&&v| v <= 0.0).count();
    if zeros == 0 {
        return Ok(img);
    }
    eprintln!("warning: {zeros} non-positive HDR samples raised to {floor:e}");
    Ok(img.map(|v| v.max(floor))?)
}

fn run_hdr(args: &HdrArgs) -> Result<(), Failure> {
    let hp = HdrParams { s_exponent: args.saturation, iit: args.solve.params().map_err(Failure::Usage)? };
    hp.validate().map_err(|e| Failure::Usage(e.into()))?;
    let clahe_params = args.clahe.params().map_err(Failure::Usage)?;
    let hdr = io::load_image(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let hdr = lift_zeros(hdr)?;
    let exemplar = match &args.exemplar {
        Some(path) => load_exemplar(path).with_context(|| format!("reading exemplar {}", path.display()))?,
        None => hdr_exemplar(&hdr, &clahe_params)?,
    };
    let (output, diagnostics) = hdr_compress(&hdr, &exemplar, &hp)?;
    io::save_image(&args.output, &output, BitDepth::Eight)?;
    finish(&diagnostics, args.report.as_ref())
}

fn run_clahe(args: &ClaheArgs) -> Result<(), Failure> {
    let params = args.clahe.params().map_err(Failure::Usage)?;
    let loaded = io::load(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let out = clahe(&loaded.image, &params)?;
    io::save_image(&args.output, &out, loaded.depth)?;
    Ok(())
}

fn run_remap(args: &RemapArgs) -> Result<(), Failure> {
    let kernel = KernelParams::gaussian(args.window, args.sigma_s).map_err(|e| Failure::Usage(e.into()))?;
    let remap = RemapParams::new(args.a, args.b, args.c_gain).map_err(|e| Failure::Usage(e.into()))?;
    let loaded = io::load(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let layers = smoothing_layers(&loaded.image, &kernel, &LogDomainParams::default())?;
    let out = layer_remap(&layers, &remap)?;
    io::save_image(&args.output, &out.clamp_unit().0, loaded.depth)?;
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let checks = verify_battery(args.seed)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<52} {:.3e} <= {:.0e}", c.name, c.value, c.bound);
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(anyhow!("{failed} of {} checks failed", checks.len()).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Transfer(a) => run_transfer(a),
        Command::Hdr(a) => run_hdr(a),
        Command::Clahe(a) => run_clahe(a),
        Command::Remap(a) => run_remap(a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Processing(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_PROCESSING)
        }
    }
}
