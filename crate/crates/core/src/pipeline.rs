//! End-to-end transfer: smoothing operator, reconstruction weights, one
//! sparse solve per plane, and the HDR luminance path.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exemplar::{clahe, ClaheParams};
use crate::kernels::{apply_affinity, build_bilateral_affinity, build_gaussian_affinity, AffinityMatrix, KernelParams};
use crate::lle::{build_encoding_matrix, EncodingMatrix, LleParams};
use crate::raster::{from_log_domain, rgb_to_luminance, to_log_domain, IntrinsicLayers, LogDomainParams, RasterImage};
use crate::solve::{
    assemble_rhs, assemble_system, energy, pcg_solve_from, Energy, Preconditioner, SolveReport, SolverOptions,
    Weights,
};

/// Version of the JSON run report layout.
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    #[default]
    PerChannel,
    Luminance,
}

/// Which features the reconstruction weights are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LleFeatures {
    /// One weight set per plane, scalar features.
    #[default]
    PerChannel,
    /// One weight set from all channels jointly, shared by every plane.
    JointColor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IitParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Rescale `alpha` and `gamma` so that they sum to one.
    pub normalize_ag: bool,
    /// Bilateral when `sigma_r` is set, Gaussian otherwise.
    pub kernel: KernelParams,
    pub lle: LleParams,
    pub lle_features: LleFeatures,
    pub domain: Domain,
    pub log: LogDomainParams,
    pub channel_mode: ChannelMode,
    pub solver: SolverOptions,
}

impl Default for IitParams {
    /// Settings for CLAHE exemplars: `α = 0.8, β = 100, γ = 0.2`, 5×5
    /// Gaussian with `σ_s = 2`, 5×5 reconstruction window with `ε = 1e-5`.
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 100.0,
            gamma: 0.2,
            normalize_ag: true,
            kernel: KernelParams::default(),
            lle: LleParams::default(),
            lle_features: LleFeatures::PerChannel,
            domain: Domain::Log,
            log: LogDomainParams::default(),
            channel_mode: ChannelMode::PerChannel,
            solver: SolverOptions::default(),
        }
    }
}

impl IitParams {
    /// Settings for exemplars produced by stronger enhancement methods:
    /// `α = 0.95, γ = 0.05` with the given `β` (typically 10 to 100).
    pub fn strong_exemplar(beta: f64) -> Self {
        Self { alpha: 0.95, beta, gamma: 0.05, ..Self::default() }
    }

    /// Balance weights after optional `α + γ = 1` normalization.
    pub fn weights(&self) -> Result<Weights> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        let (mut alpha, mut gamma) = (self.alpha, self.gamma);
        if self.normalize_ag {
            let sum = alpha + gamma;
            if sum == 0.0 {
                return Err(Error::Parameter("alpha + gamma must be positive".into()));
            }
            alpha /= sum;
            gamma /= sum;
        }
        Ok(Weights { alpha, beta: self.beta, gamma })
    }

    pub fn validate(&self) -> Result<()> {
        self.weights()?;
        self.kernel.validate()?;
        self.lle.validate()?;
        self.solver.validate()
    }
}

/// Per-plane outcome of a transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneDiagnostics {
    /// Minimizer in the working domain, before the back-transform and clamp.
    pub solution: Vec<f64>,
    pub energy_source: Energy,
    pub energy_exemplar: Energy,
    pub energy_output: Energy,
    pub solve: SolveReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub kernel: f64,
    pub lle: f64,
    pub assemble: f64,
    pub solve: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub params: IitParams,
    pub weights: Weights,
    pub height: usize,
    pub width: usize,
    pub planes: Vec<PlaneDiagnostics>,
    pub clamped_samples: usize,
    pub timings: Timings,
}

impl Diagnostics {
    pub fn converged(&self) -> bool {
        self.planes.iter().all(|p| p.solve.converged)
    }
}

fn check_unit_range(img: &RasterImage, what: &str) -> Result<()> {
    if img.min_value() < 0.0 || img.max_value() > 1.0 {
        return Err(Error::InvalidImage(format!(
            "{what} intensities must lie in [0, 1], found [{}, {}]",
            img.min_value(),
            img.max_value()
        )));
    }
    Ok(())
}

fn luminance_or_self(img: &RasterImage) -> Result<RasterImage> {
    if img.channels() == 1 {
        Ok(img.clone())
    } else {
        rgb_to_luminance(img)
    }
}

/// Builds the smoothing operator for `source` (the guide of a bilateral kernel).
pub fn build_affinity_for(source: &RasterImage, kernel: &KernelParams) -> Result<AffinityMatrix> {
    match kernel.sigma_r {
        Some(_) => build_bilateral_affinity(source, kernel),
        None => build_gaussian_affinity(source.height(), source.width(), kernel),
    }
}

/// Minimizes the transfer energy of one working-domain plane.
pub fn solve_plane(
    s: &[f64],
    c: &[f64],
    k: &AffinityMatrix,
    m: &EncodingMatrix,
    w: Weights,
    solver: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let l = assemble_system(k, m, w.alpha, w.beta, w.gamma)?;
    let b = assemble_rhs(k, c, s, w.alpha, w.gamma)?;
    pcg_solve_from(&l, &b, Some(s), solver)
}

/// Transfers the illumination of `exemplar` onto `source`.
///
/// Both images hold display intensities in `[0, 1]` and share their size.
/// Output samples are clamped to `[0, 1]` as the very last step; the number
/// of changed samples is recorded in the diagnostics. Non-convergence is not
/// an error; check [`Diagnostics::converged`].
pub fn iit_transfer(source: &RasterImage, exemplar: &RasterImage, p: &IitParams) -> Result<(RasterImage, Diagnostics)> {
    let started = Instant::now();
    p.validate()?;
    let weights = p.weights()?;
    let (h, w) = (source.height(), source.width());
    if exemplar.height() != h || exemplar.width() != w {
        return Err(Error::Shape(format!(
            "exemplar is {}x{}, source is {h}x{w}",
            exemplar.height(),
            exemplar.width()
        )));
    }
    check_unit_range(source, "source")?;
    check_unit_range(exemplar, "exemplar")?;

    let (src_work, ex_work) = match p.channel_mode {
        ChannelMode::PerChannel => {
            if exemplar.channels() != source.channels() {
                return Err(Error::Shape(format!(
                    "exemplar has {} channels, source has {}",
                    exemplar.channels(),
                    source.channels()
                )));
            }
            (source.clone(), exemplar.clone())
        }
        ChannelMode::Luminance => (luminance_or_self(source)?, luminance_or_self(exemplar)?),
    };
    let (src_work, ex_work) = match p.domain {
        Domain::Log => (to_log_domain(&src_work, &p.log)?, to_log_domain(&ex_work, &p.log)?),
        Domain::Linear => (src_work, ex_work),
    };

    let mut timings = Timings::default();
    let t = Instant::now();
    let k = build_affinity_for(source, &p.kernel)?;
    timings.kernel = t.elapsed().as_secs_f64();

    let s_planes = src_work.planes();
    let c_planes = ex_work.planes();

    let t = Instant::now();
    let encodings: Vec<EncodingMatrix> = match p.lle_features {
        LleFeatures::JointColor => vec![build_encoding_matrix(&src_work, &p.lle)?],
        LleFeatures::PerChannel => s_planes
            .iter()
            .map(|plane| build_encoding_matrix(&RasterImage::new(h, w, 1, plane.clone())?, &p.lle))
            .collect::<Result<_>>()?,
    };
    timings.lle = t.elapsed().as_secs_f64();

    let mut planes = Vec::with_capacity(s_planes.len());
    for (idx, (s, c)) in s_planes.iter().zip(&c_planes).enumerate() {
        let m = &encodings[idx.min(encodings.len() - 1)];
        let t = Instant::now();
        let l = assemble_system(&k, m, weights.alpha, weights.beta, weights.gamma)?;
        let b = assemble_rhs(&k, c, s, weights.alpha, weights.gamma)?;
        timings.assemble += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (solution, solve) = pcg_solve_from(&l, &b, Some(s), &p.solver)?;
        timings.solve += t.elapsed().as_secs_f64();
        planes.push(PlaneDiagnostics {
            energy_source: energy(s, s, c, &k, m, weights)?,
            energy_exemplar: energy(c, s, c, &k, m, weights)?,
            energy_output: energy(&solution, s, c, &k, m, weights)?,
            solution,
            solve,
        });
    }

    let solved = RasterImage::from_planes(h, w, &planes.iter().map(|d| d.solution.clone()).collect::<Vec<_>>())?;
    let solved = match p.domain {
        Domain::Log => from_log_domain(&solved)?,
        Domain::Linear => solved,
    };
    let output = match p.channel_mode {
        ChannelMode::PerChannel => solved,
        ChannelMode::Luminance if source.channels() == 1 => solved,
        ChannelMode::Luminance => {
            let l_in = rgb_to_luminance(source)?;
            restore_saturation(source, l_in.data(), solved.data(), 1.0)?
        }
    };
    let (output, clamped_samples) = output.clamp_unit();
    timings.total = started.elapsed().as_secs_f64();
    let diagnostics = Diagnostics { params: *p, weights, height: h, width: w, planes, clamped_samples, timings };
    Ok((output, diagnostics))
}

/// Splits `img` into log-domain layers: illumination is the smoothed log
/// image, reflectance the remainder.
pub fn smoothing_layers(img: &RasterImage, kernel: &KernelParams, log: &LogDomainParams) -> Result<IntrinsicLayers> {
    let log_img = to_log_domain(img, log)?;
    let k = build_affinity_for(img, kernel)?;
    let illumination = apply_affinity(&k, &log_img)?;
    let reflectance = RasterImage::new(
        img.height(),
        img.width(),
        img.channels(),
        log_img.data().iter().zip(illumination.data()).map(|(a, b)| a - b).collect(),
    )?;
    IntrinsicLayers::new(illumination, reflectance)
}

/// Settings of the HDR compression path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdrParams {
    /// Saturation exponent, `0 < s ≤ 1`; values in `[0.4, 0.6]` work well.
    pub s_exponent: f64,
    /// Luminance solve settings. The working plane is already logarithmic,
    /// so the domain is forced to linear and the channel mode to luminance.
    pub iit: IitParams,
}

impl Default for HdrParams {
    fn default() -> Self {
        Self { s_exponent: 0.5, iit: IitParams::default() }
    }
}

impl HdrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_exponent > 0.0 && self.s_exponent <= 1.0) {
            return Err(Error::Parameter(format!(
                "saturation exponent must lie in (0, 1], got {}",
                self.s_exponent
            )));
        }
        self.iit.validate()
    }
}

/// `C_out = (C_in / L_in)^s · L_out` per channel, without clamping.
pub fn restore_saturation(color: &RasterImage, l_in: &[f64], l_out: &[f64], s: f64) -> Result<RasterImage> {
    let n = color.pixel_count();
    if l_in.len() != n || l_out.len() != n {
        return Err(Error::Shape(format!(
            "luminance planes of length {} / {} for {n} pixels",
            l_in.len(),
            l_out.len()
        )));
    }
    let mut data = Vec::with_capacity(color.data().len());
    for i in 0..n {
        for &c in color.pixel(i) {
            let v = if l_in[i] > 0.0 {
                if s == 1.0 { c / l_in[i] * l_out[i] } else { (c / l_in[i]).powf(s) * l_out[i] }
            } else {
                l_out[i]
            };
            data.push(v);
        }
    }
    RasterImage::new(color.height(), color.width(), color.channels(), data)
}

/// Luminance of an HDR image and its log mapped linearly onto `[0, 1]`.
pub fn hdr_log_luminance(hdr: &RasterImage) -> Result<(Vec<f64>, RasterImage)> {
    hdr.ensure_positive()?;
    let l_in = luminance_or_self(hdr)?;
    let logs: Vec<f64> = l_in.data().iter().map(|v| v.ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let normalized = logs.iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.5 }).collect();
    Ok((l_in.into_data(), RasterImage::new(hdr.height(), hdr.width(), 1, normalized)?))
}

/// CLAHE exemplar computed on the normalized log-luminance of `hdr`.
pub fn hdr_exemplar(hdr: &RasterImage, p: &ClaheParams) -> Result<RasterImage> {
    let (_, plane) = hdr_log_luminance(hdr)?;
    clahe(&plane, p)
}

/// Compresses an HDR radiance image to display range.
///
/// The normalized log-luminance is transferred toward `exemplar_lum`
/// (single-channel, `[0, 1]`, same size) and colors are restored with the
/// saturation exponent. Output is clamped to `[0, 1]`.
pub fn hdr_compress(hdr: &RasterImage, exemplar_lum: &RasterImage, hp: &HdrParams) -> Result<(RasterImage, Diagnostics)> {
    hp.validate()?;
    let (l_in, source) = hdr_log_luminance(hdr)?;
    let exemplar = luminance_or_self(exemplar_lum)?;
    let params = IitParams { domain: Domain::Linear, channel_mode: ChannelMode::PerChannel, ..hp.iit };
    let (l_out, mut diagnostics) = iit_transfer(&source, &exemplar, &params)?;
    let restored = restore_saturation(hdr, &l_in, l_out.data(), hp.s_exponent)?;
    let (out, clamped) = restored.clamp_unit();
    diagnostics.clamped_samples += clamped;
    Ok((out, diagnostics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub normalize_ag: bool,
    pub kernel: String,
    pub window: usize,
    pub sigma_s: f64,
    pub sigma_r: Option<f64>,
    pub lle_window: usize,
    pub lle_epsilon: f64,
    pub lle_scale_by_trace: bool,
    pub lle_features: LleFeatures,
    pub domain: Domain,
    pub log_floor: f64,
    pub channel_mode: ChannelMode,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneEnergies {
    pub source: Energy,
    pub exemplar: Energy,
    pub output: Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneReport {
    pub index: usize,
    pub energies: PlaneEnergies,
    pub solve: SolveReport,
}

/// Machine-readable record of one transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub height: usize,
    pub width: usize,
    pub params: ReportParams,
    pub effective_weights: Weights,
    pub planes: Vec<PlaneReport>,
    pub converged: bool,
    pub clamped_samples: usize,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

pub fn run_report(d: &Diagnostics) -> RunReport {
    let p = &d.params;
    let mut warnings = Vec::new();
    if d.clamped_samples > 0 {
        warnings.push(format!("{} samples clamped to [0, 1]", d.clamped_samples));
    }
    for (i, plane) in d.planes.iter().enumerate() {
        if !plane.solve.converged {
            warnings.push(format!(
                "plane {i}: solver stopped after {} iterations at relative residual {:.3e}",
                plane.solve.iterations, plane.solve.final_rel_residual
            ));
        }
    }
    RunReport {
        schema: REPORT_SCHEMA,
        height: d.height,
        width: d.width,
        params: ReportParams {
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            normalize_ag: p.normalize_ag,
            kernel: if p.kernel.sigma_r.is_some() { "bilateral" } else { "gaussian" }.into(),
            window: p.kernel.window,
            sigma_s: p.kernel.sigma_s,
            sigma_r: p.kernel.sigma_r,
            lle_window: p.lle.window,
            lle_epsilon: p.lle.epsilon,
            lle_scale_by_trace: p.lle.scale_by_trace,
            lle_features: p.lle_features,
            domain: p.domain,
            log_floor: p.log.epsilon_floor(),
            channel_mode: p.channel_mode,
            rel_tol: p.solver.rel_tol,
            max_iter: p.solver.max_iter,
            preconditioner: p.solver.preconditioner,
        },
        effective_weights: d.weights,
        planes: d
            .planes
            .iter()
            .enumerate()
            .map(|(index, pl)| PlaneReport {
                index,
                energies: PlaneEnergies {
                    source: pl.energy_source,
                    exemplar: pl.energy_exemplar,
                    output: pl.energy_output,
                },
                solve: pl.solve,
            })
            .collect(),
        converged: d.converged(),
        clamped_samples: d.clamped_samples,
        warnings,
        timings: d.timings,
    }
}
