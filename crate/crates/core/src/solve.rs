//! Normal-equation assembly, preconditioned conjugate gradients and the
//! quadratic transfer energy.
//!
//! The energy over a plane `o` is
//!
//! ```text
//! E(o) = α‖K o − K c‖² + β‖M o‖² + γ‖o − s‖²
//! ```
//!
//! and its minimizer solves `(αKᵀK + βMᵀM + γI) o = αKᵀK c + γ s`.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::AffinityMatrix;
use crate::lle::EncodingMatrix;
use crate::sparse::{dot, norm2, CsrMatrix};

/// Largest system [`dense_solve`] accepts.
pub const DENSE_LIMIT: usize = 10_000;

/// Sparse symmetric positive-definite system matrix `αKᵀK + βMᵀM + γI`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    matrix: CsrMatrix,
}

impl SystemMatrix {
    /// Wraps an explicitly built matrix; it must be exactly symmetric with a
    /// positive diagonal.
    pub fn from_csr(matrix: CsrMatrix) -> Result<Self> {
        if matrix.asymmetry() != 0.0 {
            return Err(Error::Parameter("system matrix is not symmetric".into()));
        }
        if matrix.diagonal().iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Parameter("system matrix needs a positive diagonal".into()));
        }
        Ok(Self { matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    /// Coordinate text export, one `row col value` line per entry.
    pub fn write_coordinate(&self, out: impl Write) -> std::io::Result<()> {
        self.matrix.write_coordinate(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::Parameter(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-6, max_iter: 1000, preconditioner: Preconditioner::Jacobi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_rel_residual: f64,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
}

fn check_weights(alpha: f64, beta: f64, gamma: f64) -> Result<()> {
    for (name, w) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {w}")));
        }
    }
    if alpha == 0.0 && gamma == 0.0 {
        return Err(Error::Parameter(
            "alpha or gamma must be positive for a definite system".into(),
        ));
    }
    Ok(())
}

pub fn assemble_system(
    k: &AffinityMatrix,
    m: &EncodingMatrix,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<SystemMatrix> {
    if k.n() != m.n() {
        return Err(Error::Shape(format!("affinity n = {} vs encoding n = {}", k.n(), m.n())));
    }
    check_weights(alpha, beta, gamma)?;
    let ktk = (alpha != 0.0).then(|| k.matrix().gram());
    let mtm = (beta != 0.0).then(|| m.matrix().gram());
    let mut terms = Vec::new();
    if let Some(g) = &ktk {
        terms.push((alpha, g));
    }
    if let Some(g) = &mtm {
        terms.push((beta, g));
    }
    let matrix = if terms.is_empty() {
        let mut id = CsrMatrix::identity(k.n());
        if gamma != 1.0 {
            id = CsrMatrix::linear_combination(&[(gamma, &id)], 0.0)?;
        }
        id
    } else {
        CsrMatrix::linear_combination(&terms, gamma)?
    };
    Ok(SystemMatrix { matrix })
}

/// `b = αKᵀ(K c) + γ s`.
pub fn assemble_rhs(k: &AffinityMatrix, c: &[f64], s: &[f64], alpha: f64, gamma: f64) -> Result<Vec<f64>> {
    if c.len() != k.n() || s.len() != k.n() {
        return Err(Error::Shape(format!(
            "planes of length {} / {} vs affinity n = {}",
            c.len(),
            s.len(),
            k.n()
        )));
    }
    let kc = k.matrix().mul_vec(c);
    let ktkc = k.matrix().mul_transpose_vec(&kc);
    Ok(ktkc.iter().zip(s).map(|(a, b)| alpha * a + gamma * b).collect())
}

/// Conjugate gradients from a zero initial guess.
pub fn pcg_solve(l: &SystemMatrix, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
    pcg_solve_from(l, b, None, opts)
}

/// Conjugate gradients from `x0` (zero when `None`).
///
/// Convergence means `‖b − Lx‖ ≤ rel_tol · ‖b‖` for the true residual. If the
/// iteration cap is hit, the iterate with the smallest residual seen is
/// returned with `converged = false`.
pub fn pcg_solve_from(
    l: &SystemMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    let n = l.n();
    if b.len() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(Error::Shape(format!("right-hand side length {} vs system n = {n}", b.len())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidImage("right-hand side is not finite".into()));
    }
    let start = Instant::now();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        let report = SolveReport {
            iterations: 0,
            final_rel_residual: 0.0,
            converged: true,
            wall_time: start.elapsed().as_secs_f64(),
        };
        return Ok((vec![0.0; n], report));
    }
    let inv_diag: Vec<f64> = match opts.preconditioner {
        Preconditioner::Jacobi => l
            .matrix
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
        Preconditioner::None => vec![1.0; n],
    };
    let target = opts.rel_tol * b_norm;
    let true_residual = |x: &[f64]| -> Vec<f64> {
        l.mul_vec(x).iter().zip(b).map(|(lx, bi)| bi - lx).collect()
    };

    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut r = true_residual(&x);
    let mut r_norm = norm2(&r);
    let mut best = (r_norm, x.clone());
    let mut iterations = 0;
    let mut converged = r_norm <= target;
    let mut ap = vec![0.0; n];

    'restart: while !converged && iterations < opts.max_iter {
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < opts.max_iter {
            l.matrix.mul_vec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break 'restart;
            }
            let step = rz / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            iterations += 1;
            r_norm = norm2(&r);
            if r_norm < best.0 {
                best = (r_norm, x.clone());
            }
            if r_norm <= target {
                // The recursive residual drifts; confirm against the true one.
                r = true_residual(&x);
                r_norm = norm2(&r);
                converged = r_norm <= target;
                continue 'restart;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }

    let x = if converged { x } else { best.1 };
    let final_rel_residual = norm2(&true_residual(&x)) / b_norm;
    let report = SolveReport {
        iterations,
        final_rel_residual,
        converged: converged && final_rel_residual <= opts.rel_tol,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

/// Direct Cholesky solve of a small system.
pub fn dense_solve(l: &SystemMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.n();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    if b.len() != n {
        return Err(Error::Shape(format!("right-hand side length {} vs system n = {n}", b.len())));
    }
    let chol = l
        .matrix
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::Parameter("system matrix is not positive definite".into()))?;
    Ok(chol.solve(&nalgebra::DVector::from_column_slice(b)).iter().copied().collect())
}

/// Unweighted energy terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub total: f64,
    pub illumination: f64,
    pub reflectance: f64,
    pub content: f64,
}

/// Balance weights of the three energy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn check_planes(planes: &[&[f64]], n: usize) -> Result<()> {
    match planes.iter().find(|p| p.len() != n) {
        Some(p) => Err(Error::Shape(format!("plane length {} vs n = {n}", p.len()))),
        None => Ok(()),
    }
}

pub fn energy(
    o: &[f64],
    s: &[f64],
    c: &[f64],
    k: &AffinityMatrix,
    m: &EncodingMatrix,
    w: Weights,
) -> Result<Energy> {
    let n = k.n();
    if m.n() != n {
        return Err(Error::Shape(format!("affinity n = {n} vs encoding n = {}", m.n())));
    }
    check_planes(&[o, s, c], n)?;
    let ko = k.matrix().mul_vec(o);
    let kc = k.matrix().mul_vec(c);
    let illumination: f64 = ko.iter().zip(&kc).map(|(a, b)| (a - b) * (a - b)).sum();
    let reflectance: f64 = m.matrix().mul_vec(o).iter().map(|v| v * v).sum();
    let content: f64 = o.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(Energy {
        total: w.alpha * illumination + w.beta * reflectance + w.gamma * content,
        illumination,
        reflectance,
        content,
    })
}

/// `dE/do = 2(αKᵀ(Ko − Kc) + βMᵀM o + γ(o − s))`.
pub fn energy_gradient(
    o: &[f64],
    s: &[f64],
    c: &[f64],
    k: &AffinityMatrix,
    m: &EncodingMatrix,
    w: Weights,
) -> Result<Vec<f64>> {
    let n = k.n();
    if m.n() != n {
        return Err(Error::Shape(format!("affinity n = {n} vs encoding n = {}", m.n())));
    }
    check_planes(&[o, s, c], n)?;
    let km = k.matrix();
    let diff: Vec<f64> = km.mul_vec(o).iter().zip(km.mul_vec(c)).map(|(a, b)| a - b).collect();
    let illum = km.mul_transpose_vec(&diff);
    let refl = m.matrix().mul_transpose_vec(&m.matrix().mul_vec(o));
    Ok((0..n)
        .map(|i| 2.0 * (w.alpha * illum[i] + w.beta * refl[i] + w.gamma * (o[i] - s[i])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_gaussian_affinity, KernelParams};
    use crate::lle::{build_encoding_matrix, LleParams};
    use crate::raster::RasterImage;

    fn fixture(h: usize, w: usize) -> (AffinityMatrix, EncodingMatrix, Vec<f64>) {
        let img = RasterImage::from_fn(h, w, 1, |r, c, _| {
            0.1 + 0.8 * (((r * 31 + c * 17) % 13) as f64 / 12.0)
        })
        .unwrap();
        let k = build_gaussian_affinity(h, w, &KernelParams::gaussian(3, 2.0).unwrap()).unwrap();
        let m = build_encoding_matrix(&img, &LleParams::new(3, 1e-5).unwrap()).unwrap();
        (k, m, img.plane(0))
    }

    #[test]
    fn identity_system() {
        let (k, m, s) = fixture(4, 4);
        let l = assemble_system(&k, &m, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(l.matrix().to_dense(), nalgebra::DMatrix::identity(16, 16));
        let (x, rep) = pcg_solve(&l, &s, &SolverOptions::default()).unwrap();
        assert_eq!(x, s);
        assert!(rep.iterations <= 1 && rep.converged);
        assert_eq!(dense_solve(&l, &s).unwrap(), s);
    }

    #[test]
    fn weight_validation() {
        let (k, m, _) = fixture(4, 4);
        assert!(matches!(assemble_system(&k, &m, 0.0, 0.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(assemble_system(&k, &m, 0.0, 1.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(assemble_system(&k, &m, -1.0, 1.0, 1.0), Err(Error::Parameter(_))));
        let (k5, _, _) = fixture(5, 5);
        assert!(matches!(assemble_system(&k5, &m, 0.8, 1.0, 0.2), Err(Error::Shape(_))));
    }

    #[test]
    fn system_is_exactly_symmetric() {
        let (k, m, _) = fixture(9, 7);
        let l = assemble_system(&k, &m, 0.8, 100.0, 0.2).unwrap();
        assert_eq!(l.matrix().asymmetry(), 0.0);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let (k, m, _) = fixture(4, 4);
        let l = assemble_system(&k, &m, 0.8, 100.0, 0.2).unwrap();
        let (x, rep) = pcg_solve(&l, &[0.0; 16], &SolverOptions::default()).unwrap();
        assert_eq!(x, vec![0.0; 16]);
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
    }

    #[test]
    fn rhs_examples() {
        let (k, _, s) = fixture(4, 4);
        let b = assemble_rhs(&k, &s, &s, 0.0, 0.2).unwrap();
        for (bi, si) in b.iter().zip(&s) {
            assert_eq!(*bi, 0.2 * si);
        }
        assert!(assemble_rhs(&k, &s[..3], &s, 1.0, 1.0).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let (k, m, s) = fixture(8, 8);
        let l = assemble_system(&k, &m, 0.8, 100.0, 0.2).unwrap();
        let opts = SolverOptions { rel_tol: 1e-12, max_iter: 1, ..Default::default() };
        let (x, rep) = pcg_solve(&l, &s, &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(x.len(), 64);
        assert!(rep.final_rel_residual > 1e-12);
    }

    #[test]
    fn pcg_matches_dense() {
        let (k, m, s) = fixture(8, 8);
        let l = assemble_system(&k, &m, 0.8, 100.0, 0.2).unwrap();
        let b = assemble_rhs(&k, &s.iter().map(|v| v * 1.5).collect::<Vec<_>>(), &s, 0.8, 0.2).unwrap();
        for pre in [Preconditioner::Jacobi, Preconditioner::None] {
            let opts = SolverOptions { rel_tol: 1e-12, max_iter: 2000, preconditioner: pre };
            let (x, rep) = pcg_solve(&l, &b, &opts).unwrap();
            assert!(rep.converged);
            assert!(rep.final_rel_residual <= 1e-12);
            let d = dense_solve(&l, &b).unwrap();
            let err: f64 = x.iter().zip(&d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(err <= 1e-9 * norm2(&d));
        }
    }

    #[test]
    fn energy_simple_cases() {
        let (k, m, s) = fixture(6, 6);
        let w = Weights { alpha: 0.8, beta: 100.0, gamma: 0.2 };
        let e = energy(&s, &s, &s, &k, &m, w).unwrap();
        assert_eq!(e.illumination, 0.0);
        assert_eq!(e.content, 0.0);
        assert!(e.reflectance >= 0.0);
        assert_eq!(e.total, 100.0 * e.reflectance);
        let z = vec![0.0; 36];
        let e0 = energy(&z, &z, &z, &k, &m, w).unwrap();
        assert_eq!((e0.total, e0.illumination, e0.reflectance, e0.content), (0.0, 0.0, 0.0, 0.0));
        assert!(energy(&z[..3], &z, &z, &k, &m, w).is_err());
    }

    #[test]
    fn dense_guard() {
        let l = SystemMatrix { matrix: CsrMatrix::identity(DENSE_LIMIT + 1) };
        assert!(matches!(dense_solve(&l, &vec![0.0; DENSE_LIMIT + 1]), Err(Error::TooLarge { .. })));
        let one = SystemMatrix { matrix: CsrMatrix::linear_combination(&[(0.3, &CsrMatrix::identity(1))], 0.0).unwrap() };
        let x = dense_solve(&one, &[0.3 * 0.7]).unwrap();
        assert!((x[0] - 0.7).abs() < 1e-15);
    }
}
