//! Image carrier, logarithmic-domain transforms, luminance and the
//! illumination/reflectance layer remap.
//!
//! Pixels are stored row-major with channels interleaved, so the value of
//! channel `ch` at `(row, col)` lives at `(row * width + col) * channels + ch`.
//! Solver code works on single-channel planes extracted with
//! [`RasterImage::plane`].

use crate::error::{Error, Result};

/// Rec. 709 luma weights for linear RGB.
pub const REC709_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// An `height × width × channels` array of finite real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite value at index {pos}")));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Builds an image by evaluating `f(row, col, channel)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    data.push(f(row, col, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Interleaves single-channel planes (each `height * width` long).
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let n = height * width;
        if let Some(bad) = planes.iter().find(|p| p.len() != n) {
            return Err(Error::Shape(format!("plane length {} != {n}", bad.len())));
        }
        let channels = planes.len();
        let mut data = vec![0.0; n * channels];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + ch] = v;
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Channel values of pixel `i` (row-major pixel index).
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Copies channel `ch` out as a plane of `height * width` values.
    pub fn plane(&self, ch: usize) -> Vec<f64> {
        assert!(ch < self.channels, "channel {ch} out of range");
        self.data.iter().skip(ch).step_by(self.channels).copied().collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|ch| self.plane(ch)).collect()
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Applies `f` to every sample; fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Clamps to `[0, 1]`, returning the image and the number of samples changed.
    pub fn clamp_unit(&self) -> (Self, usize) {
        let mut clamped = 0;
        let data = self
            .data
            .iter()
            .map(|&v| {
                let c = v.clamp(0.0, 1.0);
                if c != v {
                    clamped += 1;
                }
                c
            })
            .collect();
        (Self { data, ..*self }, clamped)
    }

    pub(crate) fn ensure_positive(&self) -> Result<()> {
        match self.data.iter().position(|&v| v <= 0.0) {
            Some(pos) => Err(Error::InvalidImage(format!(
                "non-positive radiance {} at index {pos}",
                self.data[pos]
            ))),
            None => Ok(()),
        }
    }
}

/// Intensity floor applied before taking logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDomainParams {
    epsilon_floor: f64,
}

impl LogDomainParams {
    pub fn new(epsilon_floor: f64) -> Result<Self> {
        if !(epsilon_floor > 0.0 && epsilon_floor < 1.0) {
            return Err(Error::Parameter(format!(
                "log floor must lie in (0, 1), got {epsilon_floor}"
            )));
        }
        Ok(Self { epsilon_floor })
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }
}

impl Default for LogDomainParams {
    /// One 8-bit quantization step.
    fn default() -> Self {
        Self { epsilon_floor: 1.0 / 255.0 }
    }
}

/// `ln(max(v, floor))` per sample.
pub fn to_log_domain(img: &RasterImage, p: &LogDomainParams) -> Result<RasterImage> {
    let floor = p.epsilon_floor;
    img.map(|v| v.max(floor).ln())
}

pub fn from_log_domain(img: &RasterImage) -> Result<RasterImage> {
    img.map(f64::exp)
}

/// Rec. 709 luminance of a 3-channel image.
pub fn rgb_to_luminance(img: &RasterImage) -> Result<RasterImage> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "luminance needs 3 channels, got {}",
            img.channels()
        )));
    }
    let [wr, wg, wb] = REC709_WEIGHTS;
    let data = img.data.chunks_exact(3).map(|p| wr * p[0] + wg * p[1] + wb * p[2]).collect();
    RasterImage::new(img.height, img.width, 1, data)
}

/// Log-domain illumination and reflectance layers of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicLayers {
    illumination: RasterImage,
    reflectance: RasterImage,
}

impl IntrinsicLayers {
    pub fn new(illumination: RasterImage, reflectance: RasterImage) -> Result<Self> {
        if !illumination.same_shape(&reflectance) {
            return Err(Error::Shape(format!(
                "illumination {}x{}x{} vs reflectance {}x{}x{}",
                illumination.height,
                illumination.width,
                illumination.channels,
                reflectance.height,
                reflectance.width,
                reflectance.channels
            )));
        }
        Ok(Self { illumination, reflectance })
    }

    pub fn illumination(&self) -> &RasterImage {
        &self.illumination
    }

    pub fn reflectance(&self) -> &RasterImage {
        &self.reflectance
    }
}

/// Coefficients of the log-domain remap `a + b * L + c_gain * R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemapParams {
    pub a: f64,
    pub b: f64,
    pub c_gain: f64,
}

impl RemapParams {
    pub fn new(a: f64, b: f64, c_gain: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c_gain.is_finite()) {
            return Err(Error::Parameter("remap coefficients must be finite".into()));
        }
        Ok(Self { a, b, c_gain })
    }
}

impl Default for RemapParams {
    fn default() -> Self {
        Self { a: 0.0, b: 1.0, c_gain: 1.0 }
    }
}

/// Recombines the layers as `exp(a + b * L + c_gain * R)`.
///
/// With the identity coefficients `(0, 1, 1)` this returns `exp(L + R)`.
pub fn layer_remap(layers: &IntrinsicLayers, p: &RemapParams) -> Result<RasterImage> {
    let l = &layers.illumination;
    let r = &layers.reflectance;
    let data = l
        .data
        .iter()
        .zip(&r.data)
        .map(|(&li, &ri)| (p.a + p.b * li + p.c_gain * ri).exp())
        .collect();
    RasterImage::new(l.height, l.width, l.channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(v: f64) -> RasterImage {
        RasterImage::constant(1, 1, 1, v).unwrap()
    }

    #[test]
    fn log_domain_examples() {
        let p = LogDomainParams::default();
        assert_eq!(to_log_domain(&px(1.0), &p).unwrap().data()[0], 0.0);
        let dark = to_log_domain(&px(0.0), &p).unwrap().data()[0];
        assert!((dark - (1.0f64 / 255.0).ln()).abs() < 1e-15);
        assert!((dark + 5.5413).abs() < 1e-4);
        let e = RasterImage::constant(3, 4, 1, (-1.0f64).exp()).unwrap();
        let le = to_log_domain(&e, &p).unwrap();
        assert!(le.data().iter().all(|&v| (v + 1.0).abs() < 1e-15));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(from_log_domain(&px(0.0)).unwrap().data()[0], 1.0);
        let v = from_log_domain(&px(-1.0)).unwrap().data()[0];
        assert!((v - 0.36788).abs() < 1e-5);
        let p = LogDomainParams::default();
        let rt = from_log_domain(&to_log_domain(&px(0.5), &p).unwrap()).unwrap();
        assert!((rt.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(RasterImage::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(RasterImage::new(1, 2, 1, vec![0.0]).is_err());
        assert!(RasterImage::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(LogDomainParams::new(0.0).is_err());
        assert!(LogDomainParams::new(1.0).is_err());
        assert!(from_log_domain(&px(1e6)).is_err());
    }

    #[test]
    fn luminance_examples() {
        let img = RasterImage::new(1, 3, 3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap();
        let lum = rgb_to_luminance(&img).unwrap();
        assert!((lum.data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(lum.data()[1], 0.0);
        assert_eq!(lum.data()[2], 0.2126);
        assert!(matches!(rgb_to_luminance(&px(0.3)), Err(Error::Shape(_))));
    }

    #[test]
    fn planes_roundtrip() {
        let img = RasterImage::from_fn(2, 3, 3, |r, c, ch| (r * 9 + c * 3 + ch) as f64).unwrap();
        let back = RasterImage::from_planes(2, 3, &img.planes()).unwrap();
        assert_eq!(img, back);
        assert_eq!(img.plane(1), vec![1.0, 4.0, 7.0, 10.0, 13.0, 16.0]);
    }

    #[test]
    fn remap_identity_and_offset() {
        let l = RasterImage::from_fn(3, 3, 1, |r, c, _| -0.1 * (r + c) as f64).unwrap();
        let r = RasterImage::from_fn(3, 3, 1, |r, c, _| 0.05 * (r as f64 - c as f64)).unwrap();
        let layers = IntrinsicLayers::new(l.clone(), r.clone()).unwrap();
        let id = layer_remap(&layers, &RemapParams::default()).unwrap();
        for i in 0..9 {
            assert_eq!(id.data()[i], (l.data()[i] + r.data()[i]).exp());
        }
        for a in [0.3, 0.1, -0.1, -0.3] {
            let out = layer_remap(&layers, &RemapParams::new(a, 1.0, 1.0).unwrap()).unwrap();
            for i in 0..9 {
                let ratio = out.data()[i] / id.data()[i];
                assert!((ratio - a.exp()).abs() < 1e-12);
            }
        }
        for c in [0.5, 0.8, 1.2, 1.5] {
            let out = layer_remap(&layers, &RemapParams::new(0.0, 1.0, c).unwrap()).unwrap();
            let expect = (l.data()[2] + c * r.data()[2]).exp();
            assert!((out.data()[2] - expect).abs() < 1e-15);
        }
        let bad = IntrinsicLayers::new(l, RasterImage::constant(2, 3, 1, 0.0).unwrap());
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn clamp_counts() {
        let img = RasterImage::new(1, 3, 1, vec![-0.5, 0.5, 1.5]).unwrap();
        let (c, n) = img.clamp_unit();
        assert_eq!(c.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(n, 2);
    }
}
