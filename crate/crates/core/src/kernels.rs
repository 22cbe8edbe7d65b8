//! Row-stochastic smoothing operators (Gaussian and bilateral).
//!
//! The weight between pixels `i` and `j` inside the square window around `i`
//! (center included, clipped at the border) is
//!
//! ```text
//! exp(-|p_i - p_j|^2 / sigma_s^2) * exp(-|g_i - g_j|^2 / sigma_r^2)
//! ```
//!
//! with the range factor only present for the bilateral kernel. Note the
//! exponent divides by `sigma^2`, not `2 sigma^2`. Each row is normalized to
//! sum to one, so the operator maps an image to a convex combination of its
//! neighbors.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::sparse::CsrMatrix;

/// Window and bandwidths of a smoothing kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub window: usize,
    pub sigma_s: f64,
    /// Range bandwidth; `Some` selects the bilateral kernel.
    pub sigma_r: Option<f64>,
}

impl KernelParams {
    pub fn gaussian(window: usize, sigma_s: f64) -> Result<Self> {
        let p = Self { window, sigma_s, sigma_r: None };
        p.validate()?;
        Ok(p)
    }

    pub fn bilateral(window: usize, sigma_s: f64, sigma_r: f64) -> Result<Self> {
        let p = Self { window, sigma_s, sigma_r: Some(sigma_r) };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "kernel window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return Err(Error::Parameter(format!("sigma_s must be positive, got {}", self.sigma_s)));
        }
        if let Some(r) = self.sigma_r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Parameter(format!("sigma_r must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

impl Default for KernelParams {
    /// 5×5 Gaussian with `sigma_s = 2`.
    fn default() -> Self {
        Self { window: 5, sigma_s: 2.0, sigma_r: None }
    }
}

/// Sparse row-stochastic smoothing matrix over an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    height: usize,
    width: usize,
    matrix: CsrMatrix,
}

impl AffinityMatrix {
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

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        self.matrix.row(i)
    }

    /// Debug dump of one row as `row col weight` lines.
    pub fn dump_row(&self, i: usize, out: impl Write) -> std::io::Result<()> {
        self.matrix.write_row(i, out)
    }
}

/// Clipped window bounds `[lo, hi]` around `center` on an axis of length `len`.
pub(crate) fn window_span(center: usize, radius: usize, len: usize) -> (usize, usize) {
    (center.saturating_sub(radius), (center + radius).min(len - 1))
}

fn build_affinity(
    height: usize,
    width: usize,
    p: &KernelParams,
    range: Option<(&RasterImage, f64)>,
) -> Result<AffinityMatrix> {
    p.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::Shape("empty image grid".into()));
    }
    let n = height * width;
    let radius = p.window / 2;
    let inv_s2 = 1.0 / (p.sigma_s * p.sigma_s);
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let (row, col) = (i / width, i % width);
            let (r0, r1) = window_span(row, radius, height);
            let (c0, c1) = window_span(col, radius, width);
            let mut entries = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let dy = rr as f64 - row as f64;
                    let dx = cc as f64 - col as f64;
                    let mut w = (-(dx * dx + dy * dy) * inv_s2).exp();
                    if let Some((guide, inv_r2)) = range {
                        let j = rr * width + cc;
                        let d2: f64 = guide
                            .pixel(i)
                            .iter()
                            .zip(guide.pixel(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        w *= (-d2 * inv_r2).exp();
                    }
                    entries.push((rr * width + cc, w));
                }
            }
            let total: f64 = entries.iter().map(|&(_, w)| w).sum();
            for e in &mut entries {
                e.1 /= total;
            }
            entries
        })
        .collect();
    Ok(AffinityMatrix { height, width, matrix: CsrMatrix::from_rows(n, rows)? })
}

/// Spatial Gaussian affinity over a `height × width` grid.
pub fn build_gaussian_affinity(height: usize, width: usize, p: &KernelParams) -> Result<AffinityMatrix> {
    if p.sigma_r.is_some() {
        return Err(Error::Parameter("gaussian kernel takes no sigma_r".into()));
    }
    build_affinity(height, width, p, None)
}

/// Bilateral affinity whose range term compares all channels of `guide`.
pub fn build_bilateral_affinity(guide: &RasterImage, p: &KernelParams) -> Result<AffinityMatrix> {
    let sigma_r = p
        .sigma_r
        .ok_or_else(|| Error::Parameter("bilateral kernel requires sigma_r".into()))?;
    build_affinity(guide.height(), guide.width(), p, Some((guide, 1.0 / (sigma_r * sigma_r))))
}

/// Per-channel product `K · img`.
pub fn apply_affinity(k: &AffinityMatrix, img: &RasterImage) -> Result<RasterImage> {
    if img.height() != k.height || img.width() != k.width {
        return Err(Error::Shape(format!(
            "affinity over {}x{} applied to {}x{} image",
            k.height,
            k.width,
            img.height(),
            img.width()
        )));
    }
    let planes: Vec<Vec<f64>> = img.planes().iter().map(|p| k.matrix.mul_vec(p)).collect();
    RasterImage::from_planes(img.height(), img.width(), &planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_sums(k: &AffinityMatrix) -> Vec<f64> {
        (0..k.n()).map(|i| k.row(i).1.iter().sum()).collect()
    }

    #[test]
    fn huge_sigma_is_box_filter() {
        let k = build_gaussian_affinity(5, 5, &KernelParams::gaussian(3, 1e9).unwrap()).unwrap();
        let (cols, vals) = k.row(12);
        assert_eq!(cols.len(), 9);
        for &v in vals {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_sigma_interior_weights() {
        let k = build_gaussian_affinity(5, 5, &KernelParams::gaussian(3, 1.0).unwrap()).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        let z = 1.0 + 4.0 * e1 + 4.0 * e2;
        assert!((k.matrix().get(12, 12) - 1.0 / z).abs() < 1e-15);
        assert!((k.matrix().get(12, 7) - e1 / z).abs() < 1e-15);
        assert!((k.matrix().get(12, 13) - e1 / z).abs() < 1e-15);
        assert!((k.matrix().get(12, 6) - e2 / z).abs() < 1e-15);
        assert!((k.matrix().get(12, 18) - e2 / z).abs() < 1e-15);
    }

    #[test]
    fn single_pixel_grid() {
        let k = build_gaussian_affinity(1, 1, &KernelParams::default()).unwrap();
        assert_eq!(k.row(0), (&[0usize][..], &[1.0][..]));
        let img = RasterImage::constant(1, 1, 3, 0.3).unwrap();
        assert_eq!(apply_affinity(&k, &img).unwrap(), img);
    }

    #[test]
    fn parameter_errors() {
        assert!(KernelParams::gaussian(4, 1.0).is_err());
        assert!(KernelParams::gaussian(1, 1.0).is_err());
        assert!(KernelParams::gaussian(3, 0.0).is_err());
        assert!(KernelParams::bilateral(3, 1.0, -1.0).is_err());
        let bad = KernelParams { window: 6, sigma_s: 1.0, sigma_r: None };
        assert!(build_gaussian_affinity(4, 4, &bad).is_err());
        let guide = RasterImage::constant(4, 4, 1, 0.5).unwrap();
        assert!(matches!(
            build_bilateral_affinity(&guide, &KernelParams::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn border_rows_are_clipped_and_normalized() {
        let k = build_gaussian_affinity(6, 4, &KernelParams::default()).unwrap();
        assert_eq!(k.row(0).0.len(), 9);
        for s in row_sums(&k) {
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn bilateral_on_constant_guide_equals_gaussian() {
        let guide = RasterImage::constant(7, 6, 3, 0.42).unwrap();
        let b = build_bilateral_affinity(&guide, &KernelParams::bilateral(5, 2.0, 0.2).unwrap()).unwrap();
        let g = build_gaussian_affinity(7, 6, &KernelParams::gaussian(5, 2.0).unwrap()).unwrap();
        assert_eq!(b, g);
    }

    #[test]
    fn bilateral_huge_range_converges_to_gaussian() {
        let guide = RasterImage::from_fn(6, 6, 1, |r, c, _| ((r * 7 + c * 3) % 5) as f64 / 4.0).unwrap();
        let b = build_bilateral_affinity(&guide, &KernelParams::bilateral(3, 1.5, 1e9).unwrap()).unwrap();
        let g = build_gaussian_affinity(6, 6, &KernelParams::gaussian(3, 1.5).unwrap()).unwrap();
        for i in 0..36 {
            for (a, b) in b.row(i).1.iter().zip(g.row(i).1) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn bilateral_step_edge_suppresses_cross_edge_weights() {
        let guide = RasterImage::from_fn(1, 6, 1, |_, c, _| if c < 3 { 0.0 } else { 1.0 }).unwrap();
        let p = KernelParams::bilateral(3, 1.0, 0.2).unwrap();
        let k = build_bilateral_affinity(&guide, &p).unwrap();
        let factor = (-1.0f64 / 0.04).exp();
        assert!((factor - 1.3888e-11).abs() < 1e-14);
        // Pixel 2 sits left of the edge; its right neighbor is across it.
        let g = build_gaussian_affinity(1, 6, &KernelParams::gaussian(3, 1.0).unwrap()).unwrap();
        let z = 1.0 + (-1.0f64).exp() * (1.0 + factor);
        assert!((k.matrix().get(2, 3) - (-1.0f64).exp() * factor / z).abs() < 1e-24);
        assert!(k.matrix().get(2, 3) < 1e-10);
        assert!(k.matrix().get(2, 1) > g.matrix().get(2, 1));
    }

    #[test]
    fn apply_preserves_constants() {
        let k = build_gaussian_affinity(8, 9, &KernelParams::default()).unwrap();
        let img = RasterImage::constant(8, 9, 3, 0.7).unwrap();
        let out = apply_affinity(&k, &img).unwrap();
        for &v in out.data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
        let wrong = RasterImage::constant(9, 8, 1, 0.7).unwrap();
        assert!(matches!(apply_affinity(&k, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn dump_row_lists_window() {
        let k = build_gaussian_affinity(3, 3, &KernelParams::gaussian(3, 1.0).unwrap()).unwrap();
        let mut buf = Vec::new();
        k.dump_row(4, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
    }
}
