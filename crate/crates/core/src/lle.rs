//! Locally linear reconstruction weights and the encoding matrix `M = I − W`.
//!
//! Each pixel is reconstructed as an affine combination of the other pixels
//! in its square window (the center itself is excluded). The weights solve
//!
//! ```text
//! min_w |x_i − Σ_j w_j x_j|² + ε |w|²   subject to   Σ_j w_j = 1
//! ```
//!
//! through the local Gram form `C_jk = (x_i − x_j)·(x_i − x_k)`,
//! `(C + εI) v = 1`, `w = v / Σ v`. Since `C` only sees differences, the
//! weights do not change when a constant is added to the image, and rows of
//! `W` summing to one make `M` annihilate constant vectors.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::window_span;
use crate::raster::RasterImage;
use crate::sparse::CsrMatrix;

/// Neighborhood and regularization of the local reconstruction.
///
/// The feature dimension is the channel count of the image handed to
/// [`build_encoding_matrix`]: a single plane gives scalar features, a color
/// image gives one joint weight set across channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LleParams {
    pub window: usize,
    pub epsilon: f64,
    /// Scale `epsilon` by `trace(C)` per pixel instead of using it as is.
    pub scale_by_trace: bool,
}

impl LleParams {
    pub fn new(window: usize, epsilon: f64) -> Result<Self> {
        let p = Self { window, epsilon, scale_by_trace: false };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "LLE window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("LLE epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

impl Default for LleParams {
    fn default() -> Self {
        Self { window: 5, epsilon: 1e-5, scale_by_trace: false }
    }
}

/// Solves the regularized, sum-to-one constrained reconstruction of `center`
/// from `neighbors` (all of equal dimension).
///
/// A singular local system (possible only with `epsilon = 0`) is reported as
/// [`Error::Singular`] with pixel index 0; [`build_encoding_matrix`] fills in
/// the real pixel.
pub fn solve_local_weights(center: &[f64], neighbors: &[&[f64]], epsilon: f64) -> Result<Vec<f64>> {
    solve_weights(center, neighbors, epsilon, false)
}

fn solve_weights(center: &[f64], neighbors: &[&[f64]], epsilon: f64, scale_by_trace: bool) -> Result<Vec<f64>> {
    let k = neighbors.len();
    if k == 0 {
        return Err(Error::Parameter("at least one neighbor is required".into()));
    }
    if neighbors.iter().any(|n| n.len() != center.len()) {
        return Err(Error::Shape("neighbor feature dimension differs from center".into()));
    }
    let diffs: Vec<Vec<f64>> = neighbors
        .iter()
        .map(|n| center.iter().zip(n.iter()).map(|(c, x)| c - x).collect())
        .collect();
    let mut gram = DMatrix::<f64>::from_fn(k, k, |a, b| {
        diffs[a].iter().zip(&diffs[b]).map(|(x, y)| x * y).sum()
    });
    let reg = if scale_by_trace {
        let tr = gram.trace();
        if tr > 0.0 { epsilon * tr } else { epsilon }
    } else {
        epsilon
    };
    for d in 0..k {
        gram[(d, d)] += reg;
    }
    let ones = DVector::<f64>::from_element(k, 1.0);
    let v = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&ones),
        // C is positive semi-definite, so a failed factorization without
        // regularization means a singular system.
        None if reg == 0.0 => return Err(Error::Singular { pixel: 0 }),
        None => gram.lu().solve(&ones).ok_or(Error::Singular { pixel: 0 })?,
    };
    let total: f64 = v.iter().sum();
    if !total.is_finite() || total.abs() < f64::EPSILON * v.amax().max(1.0) {
        return Err(Error::Singular { pixel: 0 });
    }
    let w: Vec<f64> = v.iter().map(|x| x / total).collect();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular { pixel: 0 });
    }
    Ok(w)
}

/// `M = I − W` over an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrix {
    height: usize,
    width: usize,
    matrix: CsrMatrix,
}

impl EncodingMatrix {
    /// Assembles `M` from explicit weight rows (`(column, w_ij)` without the
    /// diagonal). Each row must sum to one within `1e-10`.
    pub fn from_weight_rows(height: usize, width: usize, weights: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = height * width;
        if weights.len() != n {
            return Err(Error::Shape(format!("{} weight rows for {n} pixels", weights.len())));
        }
        let mut rows = Vec::with_capacity(n);
        for (i, row) in weights.into_iter().enumerate() {
            let total: f64 = row.iter().map(|&(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-10 || row.iter().any(|&(j, _)| j == i) {
                return Err(Error::Parameter(format!(
                    "weight row {i} must exclude the diagonal and sum to 1 (sum {total})"
                )));
            }
            let mut entries: Vec<(usize, f64)> = row.into_iter().map(|(j, w)| (j, -w)).collect();
            entries.push((i, 1.0));
            rows.push(entries);
        }
        Ok(Self { height, width, matrix: CsrMatrix::from_rows(n, rows)? })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Off-diagonal weights `w_ij` of row `i`.
    pub fn weights(&self, i: usize) -> Vec<(usize, f64)> {
        let (cols, vals) = self.matrix.row(i);
        cols.iter().zip(vals).filter(|(&j, _)| j != i).map(|(&j, &v)| (j, -v)).collect()
    }

    /// Debug dump of every weight as `row col w` lines.
    pub fn dump_weights(&self, mut out: impl Write) -> std::io::Result<()> {
        for i in 0..self.n() {
            for (j, w) in self.weights(i) {
                writeln!(out, "{i} {j} {w:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Builds `M` with weights computed from the features of `img`.
pub fn build_encoding_matrix(img: &RasterImage, p: &LleParams) -> Result<EncodingMatrix> {
    p.validate()?;
    let (height, width) = (img.height(), img.width());
    if p.window > height || p.window > width {
        return Err(Error::Parameter(format!(
            "LLE window {} larger than {height}x{width} image",
            p.window
        )));
    }
    let radius = p.window / 2;
    let rows: Vec<Result<Vec<(usize, f64)>>> = (0..height * width)
        .into_par_iter()
        .with_min_len(128)
        .map(|i| {
            let (row, col) = (i / width, i % width);
            let (r0, r1) = window_span(row, radius, height);
            let (c0, c1) = window_span(col, radius, width);
            let mut idx = Vec::with_capacity(p.window * p.window);
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let j = rr * width + cc;
                    if j != i {
                        idx.push(j);
                    }
                }
            }
            let neighbors: Vec<&[f64]> = idx.iter().map(|&j| img.pixel(j)).collect();
            let w = solve_weights(img.pixel(i), &neighbors, p.epsilon, p.scale_by_trace)
                .map_err(|e| match e {
                    Error::Singular { .. } => Error::Singular { pixel: i },
                    other => other,
                })?;
            let mut entries: Vec<(usize, f64)> = idx.into_iter().zip(w).map(|(j, w)| (j, -w)).collect();
            entries.push((i, 1.0));
            Ok(entries)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EncodingMatrix { height, width, matrix: CsrMatrix::from_rows(height * width, rows)? })
}

/// `‖M · img‖²` summed over channels.
pub fn encoding_residual(m: &EncodingMatrix, img: &RasterImage) -> Result<f64> {
    if img.height() != m.height || img.width() != m.width {
        return Err(Error::Shape(format!(
            "encoding matrix over {}x{} applied to {}x{} image",
            m.height,
            m.width,
            img.height(),
            img.width()
        )));
    }
    Ok(img
        .planes()
        .iter()
        .map(|p| m.matrix.mul_vec(p).iter().map(|v| v * v).sum::<f64>())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_neighbors_give_uniform_weights() {
        let n = [0.3];
        let neighbors = vec![&n[..]; 24];
        let w = solve_local_weights(&[0.8], &neighbors, 1e-5).unwrap();
        for x in w {
            assert!((x - 1.0 / 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let w = solve_local_weights(&[0.5], &[&[0.0], &[1.0]], 1e-5).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_without_regularization() {
        let n = [0.3];
        let r = solve_local_weights(&[0.3], &[&n[..], &n[..], &n[..]], 0.0);
        assert!(matches!(r, Err(Error::Singular { .. })));
        let img = RasterImage::constant(4, 4, 1, 0.2).unwrap();
        let p = LleParams { window: 3, epsilon: 0.0, scale_by_trace: false };
        assert!(matches!(build_encoding_matrix(&img, &p), Err(Error::Singular { .. })));
    }

    #[test]
    fn single_neighbor_takes_full_weight() {
        let w = solve_local_weights(&[0.9], &[&[0.1]], 1e-5).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn constant_image_rows() {
        let img = RasterImage::constant(9, 9, 1, 0.4).unwrap();
        let m = build_encoding_matrix(&img, &LleParams::default()).unwrap();
        let i = 4 * 9 + 4;
        assert_eq!(m.matrix().get(i, i), 1.0);
        let w = m.weights(i);
        assert_eq!(w.len(), 24);
        for (_, x) in w {
            assert!((x - 1.0 / 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_window_geometry() {
        let img = RasterImage::from_fn(3, 3, 1, |r, c, _| (r * 3 + c) as f64 / 8.0).unwrap();
        let m = build_encoding_matrix(&img, &LleParams::new(3, 1e-5).unwrap()).unwrap();
        assert_eq!(m.weights(4).len(), 8);
        for corner in [0, 2, 6, 8] {
            assert_eq!(m.weights(corner).len(), 3);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(m.weights(edge).len(), 5);
        }
    }

    #[test]
    fn window_larger_than_image_rejected() {
        let img = RasterImage::constant(4, 8, 1, 0.4).unwrap();
        assert!(matches!(build_encoding_matrix(&img, &LleParams::default()), Err(Error::Parameter(_))));
        assert!(LleParams::new(4, 1e-5).is_err());
        assert!(LleParams::new(5, -1.0).is_err());
    }

    #[test]
    fn ramp_is_reconstructed() {
        let img = RasterImage::from_fn(9, 9, 1, |_, c, _| c as f64 / 8.0).unwrap();
        let m = build_encoding_matrix(&img, &LleParams::default()).unwrap();
        let r = m.matrix().mul_vec(&img.plane(0));
        for row in 2..7 {
            for col in 2..7 {
                assert!(r[row * 9 + col].abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn residual_ignores_constants() {
        let img = RasterImage::from_fn(8, 8, 1, |r, c, _| ((r * 5 + c * 3) % 7) as f64 / 7.0).unwrap();
        let m = build_encoding_matrix(&img, &LleParams::default()).unwrap();
        let base = encoding_residual(&m, &img).unwrap();
        let shifted = encoding_residual(&m, &img.map(|v| v + 0.37).unwrap()).unwrap();
        assert!((base - shifted).abs() <= 1e-10);
        let zero = RasterImage::constant(8, 8, 1, 0.0).unwrap();
        assert_eq!(encoding_residual(&m, &zero).unwrap(), 0.0);
        let wrong = RasterImage::constant(8, 9, 1, 0.0).unwrap();
        assert!(encoding_residual(&m, &wrong).is_err());
    }

    #[test]
    fn joint_color_features() {
        let img = RasterImage::from_fn(6, 6, 3, |r, c, ch| ((r * 6 + c + ch * 5) % 11) as f64 / 10.0).unwrap();
        let m = build_encoding_matrix(&img, &LleParams::new(3, 1e-5).unwrap()).unwrap();
        for i in 0..36 {
            let s: f64 = m.weights(i).iter().map(|w| w.1).sum();
            assert!((s - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn trace_scaled_regularization() {
        let img = RasterImage::from_fn(6, 6, 1, |r, c, _| ((r * 3 + c * 2) % 5) as f64 / 4.0).unwrap();
        let p = LleParams { window: 3, epsilon: 1e-3, scale_by_trace: true };
        let m = build_encoding_matrix(&img, &p).unwrap();
        for i in 0..36 {
            let s: f64 = m.weights(i).iter().map(|w| w.1).sum();
            assert!((s - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn explicit_weight_rows_validated() {
        let ok = EncodingMatrix::from_weight_rows(1, 2, vec![vec![(1, 1.0)], vec![(0, 1.0)]]).unwrap();
        assert_eq!(ok.matrix().get(0, 1), -1.0);
        assert!(EncodingMatrix::from_weight_rows(1, 2, vec![vec![(1, 0.5)], vec![(0, 1.0)]]).is_err());
        assert!(EncodingMatrix::from_weight_rows(1, 2, vec![vec![(0, 1.0)], vec![(0, 1.0)]]).is_err());
        let mut buf = Vec::new();
        ok.dump_weights(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
