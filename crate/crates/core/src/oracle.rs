//! Independent brute-force reference computations.
//!
//! Nothing here goes through the sparse assembly or the iterative solver:
//! the minimizer forms the normal equations densely from the operator
//! entries, the gradient is taken numerically, and reconstruction weights are
//! found by projected descent on the constrained objective. Random test
//! instances come from a seeded ChaCha generator, so every battery run is
//! reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{build_bilateral_affinity, build_gaussian_affinity, AffinityMatrix};
use crate::lle::{build_encoding_matrix, solve_local_weights, EncodingMatrix, LleParams};
use crate::raster::RasterImage;
use crate::solve::{assemble_system, dense_solve, energy, energy_gradient, pcg_solve, Energy, SolverOptions, Weights};
use crate::pipeline::{solve_plane, IitParams};

/// Largest plane [`brute_force_minimize`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 4096;
/// Largest plane [`finite_diff_gradient`] accepts.
pub const FINITE_DIFF_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffSpec {
    pub step: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        Self { step: 1e-5 }
    }
}

/// Dense normal-equation minimizer of the transfer energy.
pub fn brute_force_minimize(
    s: &[f64],
    c: &[f64],
    k: &AffinityMatrix,
    m: &EncodingMatrix,
    w: Weights,
) -> Result<Vec<f64>> {
    let n = s.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { n, limit: BRUTE_FORCE_LIMIT });
    }
    if c.len() != n || k.n() != n || m.n() != n {
        return Err(Error::Shape(format!("inconsistent sizes around n = {n}")));
    }
    let kd = k.matrix().to_dense();
    let md = m.matrix().to_dense();
    let kt_k = kd.transpose() * &kd;
    let lhs = &kt_k * w.alpha + md.transpose() * &md * w.beta + DMatrix::identity(n, n) * w.gamma;
    let rhs = &kt_k * DVector::from_column_slice(c) * w.alpha + DVector::from_column_slice(s) * w.gamma;
    let lu = lhs.lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Parameter("dense normal equations are singular".into()))?;
    Ok(x.iter().copied().collect())
}

/// Central-difference gradient of `f` at `o`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, o: &[f64], spec: &FiniteDiffSpec) -> Result<Vec<f64>> {
    if o.len() > FINITE_DIFF_LIMIT {
        return Err(Error::TooLarge { n: o.len(), limit: FINITE_DIFF_LIMIT });
    }
    if !(spec.step > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be > 0, got {}", spec.step)));
    }
    let mut x = o.to_vec();
    let mut g = Vec::with_capacity(o.len());
    for i in 0..o.len() {
        let orig = x[i];
        x[i] = orig + spec.step;
        let up = f(&x);
        x[i] = orig - spec.step;
        let down = f(&x);
        x[i] = orig;
        g.push((up - down) / (2.0 * spec.step));
    }
    Ok(g)
}

/// Steepest descent with exact line search on
/// `|center − Σ w_j n_j|² + ε|w|²`, projected onto `Σ w = 1`.
pub fn projected_gradient_weights(center: &[f64], neighbors: &[&[f64]], epsilon: f64, iters: usize) -> Vec<f64> {
    let k = neighbors.len();
    assert!(k > 0 && iters > 0);
    let dim = center.len();
    let combine = |w: &[f64]| -> Vec<f64> {
        (0..dim).map(|d| neighbors.iter().zip(w).map(|(n, wj)| wj * n[d]).sum()).collect()
    };
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..iters {
        let recon = combine(&w);
        let resid: Vec<f64> = center.iter().zip(&recon).map(|(a, b)| a - b).collect();
        let mut g: Vec<f64> = neighbors
            .iter()
            .zip(&w)
            .map(|(n, wj)| -2.0 * n.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() + 2.0 * epsilon * wj)
            .collect();
        let mean = g.iter().sum::<f64>() / k as f64;
        for gj in &mut g {
            *gj -= mean;
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg == 0.0 {
            break;
        }
        let sg = combine(&g);
        let curvature = 2.0 * (sg.iter().map(|v| v * v).sum::<f64>() + epsilon * gg);
        if !(curvature > 0.0) {
            break;
        }
        let step = gg / curvature;
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= step * gj;
        }
    }
    w
}

/// A random single-plane problem instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub source: RasterImage,
    pub exemplar: RasterImage,
    pub k: AffinityMatrix,
    pub m: EncodingMatrix,
    pub weights: Weights,
}

impl Instance {
    pub fn s(&self) -> Vec<f64> {
        self.source.plane(0)
    }

    pub fn c(&self) -> Vec<f64> {
        self.exemplar.plane(0)
    }

    pub fn energy(&self, o: &[f64]) -> Result<Energy> {
        energy(o, &self.source.plane(0), &self.exemplar.plane(0), &self.k, &self.m, self.weights)
    }
}

/// Seeded random `size × size` instance with the default transfer settings:
/// a textured source in `[0.05, 1]` and a brighter, noisier exemplar.
pub fn random_instance(seed: u64, size: usize, params: &IitParams) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = RasterImage::from_fn(size, size, 1, |_, _, _| rng.random_range(0.05..1.0))?;
    let exemplar = RasterImage::new(
        size,
        size,
        1,
        source.data().iter().map(|v| (v * 1.4 + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)).collect(),
    )?;
    let k = match params.kernel.sigma_r {
        Some(_) => build_bilateral_affinity(&source, &params.kernel)?,
        None => build_gaussian_affinity(size, size, &params.kernel)?,
    };
    let m = build_encoding_matrix(&source, &params.lle)?;
    Ok(Instance { source, exemplar, k, m, weights: params.weights()? })
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }
}

pub(crate) fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 { num } else { num / den }
}

/// Runs the oracle battery on seeded random instances.
pub fn verify_battery(seed: u64) -> Result<Vec<Check>> {
    let params = IitParams::default();
    let tight = SolverOptions { rel_tol: 1e-12, max_iter: 5000, ..Default::default() };
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for t in 0..5 {
        let inst = random_instance(seed.wrapping_add(t), 16, &params)?;
        let (x, _) = solve_plane(&inst.s(), &inst.c(), &inst.k, &inst.m, inst.weights, &tight)?;
        let reference = brute_force_minimize(&inst.s(), &inst.c(), &inst.k, &inst.m, inst.weights)?;
        worst = worst.max(rel_l2(&x, &reference));
    }
    checks.push(Check { name: "pcg vs dense minimizer (16x16)".into(), value: worst, bound: 1e-6 });

    let inst = random_instance(seed ^ 0x5eed, 8, &params)?;
    let (s, c) = (inst.s(), inst.c());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let o: Vec<f64> = (0..s.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let analytic = energy_gradient(&o, &s, &c, &inst.k, &inst.m, inst.weights)?;
        let numeric = finite_diff_gradient(|x| inst.energy(x).map(|e| e.total).unwrap_or(f64::NAN), &o, &FiniteDiffSpec::default())?;
        worst = worst.max(rel_l2(&analytic, &numeric));
    }
    checks.push(Check { name: "analytic vs finite-difference gradient (8x8)".into(), value: worst, bound: 1e-4 });

    let mut worst = 0.0f64;
    for _ in 0..5 {
        let center = [rng.random_range(0.0..1.0)];
        let pts: Vec<[f64; 1]> = (0..24).map(|_| [rng.random_range(0.0..1.0)]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let closed = solve_local_weights(&center, &refs, 1e-5)?;
        let descent = projected_gradient_weights(&center, &refs, 1e-5, 20_000);
        for (a, b) in closed.iter().zip(&descent) {
            worst = worst.max((a - b).abs());
        }
    }
    checks.push(Check { name: "closed-form vs projected-gradient weights".into(), value: worst, bound: 1e-6 });

    let img = inst.source.clone();
    let shifted = img.map(|v| v + 0.37)?;
    let m_a = build_encoding_matrix(&img, &LleParams::default())?;
    let m_b = build_encoding_matrix(&shifted, &LleParams::default())?;
    let mut worst = 0.0f64;
    for i in 0..m_a.n() {
        for ((_, a), (_, b)) in m_a.weights(i).iter().zip(m_b.weights(i)) {
            worst = worst.max((a - b).abs());
        }
    }
    let annihilated = m_a.matrix().mul_vec(&vec![1.0; m_a.n()]);
    worst = worst.max(annihilated.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
    checks.push(Check { name: "translation invariance of reconstruction weights".into(), value: worst, bound: 1e-10 });

    let l = assemble_system(&inst.k, &inst.m, inst.weights.alpha, inst.weights.beta, inst.weights.gamma)?;
    let b: Vec<f64> = (0..l.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, rep) = pcg_solve(&l, &b, &SolverOptions::default())?;
    let d = dense_solve(&l, &b)?;
    let residual = if rep.converged { rep.final_rel_residual } else { f64::INFINITY };
    checks.push(Check { name: "pcg relative residual".into(), value: residual, bound: 1e-6 });
    let (x_tight, _) = pcg_solve(&l, &b, &tight)?;
    checks.push(Check { name: "pcg vs dense solve".into(), value: rel_l2(&x_tight, &d), bound: 1e-6 });

    Ok(checks)
}
