//! Exemplar images: loaded from disk or synthesized with contrast-limited
//! adaptive histogram equalization (CLAHE).

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{rgb_to_luminance, RasterImage};

/// CLAHE settings.
///
/// The clip level of a tile holding `N` pixels is
/// `max(clip_limit * N, N / bins)` counts per bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub clip_limit: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub bins: usize,
}

impl ClaheParams {
    pub fn new(clip_limit: f64, tiles_x: usize, tiles_y: usize) -> Result<Self> {
        let p = Self { clip_limit, tiles_x, tiles_y, ..Self::default() };
        p.validate()?;
        Ok(p)
    }

    /// 16×16 tiles at clip limit 0.01, for exemplars with stronger global
    /// correction.
    pub fn strong() -> Self {
        Self { clip_limit: 0.01, tiles_x: 16, tiles_y: 16, bins: 256 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_limit > 0.0) {
            return Err(Error::Parameter(format!("clip limit must be > 0, got {}", self.clip_limit)));
        }
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::Parameter("tile counts must be >= 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::Parameter(format!("need at least 2 bins, got {}", self.bins)));
        }
        Ok(())
    }
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self { clip_limit: 0.01, tiles_x: 8, tiles_y: 8, bins: 256 }
    }
}

/// Per-tile transfer functions, row-major over the tile grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TileMappings {
    pub tiles_y: usize,
    pub tiles_x: usize,
    pub rows: Vec<(usize, usize)>,
    pub cols: Vec<(usize, usize)>,
    /// `maps[ty * tiles_x + tx][bin]` in `[0, 1]`.
    pub maps: Vec<Vec<f64>>,
}

pub(crate) fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Half-open `[start, end)` extents of `tiles` near-equal tiles over `len`.
fn tile_spans(len: usize, tiles: usize) -> Vec<(usize, usize)> {
    let tiles = tiles.min(len);
    (0..tiles).map(|t| (t * len / tiles, (t + 1) * len / tiles)).collect()
}

fn clipped_cdf(mut hist: Vec<f64>, tile_pixels: usize, p: &ClaheParams) -> Vec<f64> {
    let bins = hist.len() as f64;
    let clip = (p.clip_limit * tile_pixels as f64).max(tile_pixels as f64 / bins);
    let mut excess = 0.0;
    for h in &mut hist {
        if *h > clip {
            excess += *h - clip;
            *h = clip;
        }
    }
    let share = excess / bins;
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = hist
        .iter()
        .map(|h| {
            acc += h + share;
            acc
        })
        .collect();
    for v in &mut cdf {
        *v = (*v / acc).min(1.0);
    }
    cdf
}

/// Clipped-histogram CDFs of every tile of a single plane.
pub fn tile_mappings(plane: &[f64], height: usize, width: usize, p: &ClaheParams) -> Result<TileMappings> {
    p.validate()?;
    if height == 0 || width == 0 || plane.len() != height * width {
        return Err(Error::Shape(format!("plane of {} values for {height}x{width}", plane.len())));
    }
    let rows = tile_spans(height, p.tiles_y);
    let cols = tile_spans(width, p.tiles_x);
    let mut maps = Vec::with_capacity(rows.len() * cols.len());
    for &(r0, r1) in &rows {
        for &(c0, c1) in &cols {
            let mut hist = vec![0.0; p.bins];
            for r in r0..r1 {
                for c in c0..c1 {
                    hist[bin_of(plane[r * width + c], p.bins)] += 1.0;
                }
            }
            maps.push(clipped_cdf(hist, (r1 - r0) * (c1 - c0), p));
        }
    }
    Ok(TileMappings { tiles_y: rows.len(), tiles_x: cols.len(), rows, cols, maps })
}

/// Neighboring tile indices and blend weight of `pos` along one axis.
fn axis_blend(pos: usize, spans: &[(usize, usize)]) -> (usize, usize, f64) {
    let center = |t: usize| (spans[t].0 + spans[t].1 - 1) as f64 / 2.0;
    let x = pos as f64;
    let last = spans.len() - 1;
    if x <= center(0) {
        return (0, 0, 0.0);
    }
    if x >= center(last) {
        return (last, last, 0.0);
    }
    let t0 = (0..last).rev().find(|&t| center(t) <= x).unwrap_or(0);
    let t1 = t0 + 1;
    (t0, t1, (x - center(t0)) / (center(t1) - center(t0)))
}

/// CLAHE on a single plane with values in `[0, 1]`.
pub fn clahe_plane(plane: &[f64], height: usize, width: usize, p: &ClaheParams) -> Result<Vec<f64>> {
    let tm = tile_mappings(plane, height, width, p)?;
    let mut out = vec![0.0; plane.len()];
    for r in 0..height {
        let (ty0, ty1, fy) = axis_blend(r, &tm.rows);
        for c in 0..width {
            let (tx0, tx1, fx) = axis_blend(c, &tm.cols);
            let b = bin_of(plane[r * width + c], p.bins);
            let m = |ty: usize, tx: usize| tm.maps[ty * tm.tiles_x + tx][b];
            let top = (1.0 - fx) * m(ty0, tx0) + fx * m(ty0, tx1);
            let bottom = (1.0 - fx) * m(ty1, tx0) + fx * m(ty1, tx1);
            out[r * width + c] = ((1.0 - fy) * top + fy * bottom).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// CLAHE of a grey or RGB image.
///
/// Color images are equalized on luminance; each channel is then scaled by
/// `lum_out / lum_in` and clamped to `[0, 1]`. Black pixels take the
/// equalized luminance as a grey value.
pub fn clahe(img: &RasterImage, p: &ClaheParams) -> Result<RasterImage> {
    let (h, w) = (img.height(), img.width());
    if img.channels() == 1 {
        let out = clahe_plane(img.data(), h, w, p)?;
        return RasterImage::new(h, w, 1, out);
    }
    let lum = rgb_to_luminance(img)?;
    let lum_out = clahe_plane(lum.data(), h, w, p)?;
    let mut data = Vec::with_capacity(img.data().len());
    for i in 0..h * w {
        let l_in = lum.data()[i];
        let l_out = lum_out[i];
        for &v in img.pixel(i) {
            let scaled = if l_in > 0.0 { v * l_out / l_in } else { l_out };
            data.push(scaled.clamp(0.0, 1.0));
        }
    }
    RasterImage::new(h, w, 3, data)
}

/// Loads an externally produced exemplar.
pub fn load_exemplar(path: impl AsRef<Path>) -> Result<RasterImage> {
    crate::io::load_image(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_cover_axis() {
        assert_eq!(tile_spans(10, 3), vec![(0, 3), (3, 6), (6, 10)]);
        assert_eq!(tile_spans(2, 8), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn blend_at_edges_and_between_centers() {
        let spans = tile_spans(8, 2);
        assert_eq!(axis_blend(0, &spans), (0, 0, 0.0));
        assert_eq!(axis_blend(7, &spans), (1, 1, 0.0));
        let (a, b, f) = axis_blend(3, &spans);
        assert_eq!((a, b), (0, 1));
        assert!((f - 0.375).abs() < 1e-15);
    }

    #[test]
    fn output_in_unit_range_and_monotone_maps() {
        let img = RasterImage::from_fn(40, 30, 1, |r, c, _| ((r * 7 + c * 13) % 17) as f64 / 16.0).unwrap();
        let p = ClaheParams::default();
        let out = clahe(&img, &p).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let tm = tile_mappings(img.data(), 40, 30, &p).unwrap();
        for m in &tm.maps {
            assert!(m.windows(2).all(|w| w[0] <= w[1]));
            assert!((m[p.bins - 1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn color_keeps_channel_ratios() {
        let img = RasterImage::from_fn(16, 16, 3, |r, c, ch| {
            0.05 + 0.3 * ((r + c) as f64 / 30.0) * [1.0, 0.8, 0.5][ch]
        })
        .unwrap();
        let out = clahe(&img, &ClaheParams::new(0.02, 4, 4).unwrap()).unwrap();
        for i in 0..256 {
            let (a, b) = (img.pixel(i), out.pixel(i));
            if b.iter().all(|&v| v < 1.0) {
                assert!((b[0] / b[2] - a[0] / a[2]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(ClaheParams::new(0.0, 8, 8).is_err());
        assert!(ClaheParams::new(0.01, 0, 8).is_err());
        let p = ClaheParams { bins: 1, ..Default::default() };
        assert!(p.validate().is_err());
        assert!(tile_mappings(&[], 0, 0, &ClaheParams::default()).is_err());
        assert_eq!(ClaheParams::strong().tiles_x, 16);
    }
}
