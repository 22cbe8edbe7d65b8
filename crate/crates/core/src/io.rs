//! Reading and writing PNG (8/16-bit), binary PPM and Radiance HDR files.
//!
//! Display-referred formats are normalized to `[0, 1]` on load. Radiance
//! files keep their linear radiance values. Alpha channels are dropped.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Sample depth for encoded output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

/// A decoded file together with the depth it was stored at.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub image: RasterImage,
    pub depth: BitDepth,
    pub high_dynamic_range: bool,
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    Ok(load(path)?.image)
}

pub fn load(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let decode_err = |message: String| Error::Decode { path: path.to_path_buf(), message };
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    let dynamic = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    from_dynamic(dynamic).map_err(|e| match e {
        Error::InvalidImage(m) | Error::Shape(m) => decode_err(m),
        other => other,
    })
}

fn from_dynamic(img: DynamicImage) -> Result<Loaded> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale8 = |v: u8| f64::from(v) / 255.0;
    let scale16 = |v: u16| f64::from(v) / 65535.0;
    let (image, depth, hdr) = match img {
        DynamicImage::ImageLuma8(b) => {
            (RasterImage::new(h, w, 1, b.into_raw().into_iter().map(scale8).collect())?, BitDepth::Eight, false)
        }
        DynamicImage::ImageLumaA8(_) => {
            let b = img.to_luma8();
            (RasterImage::new(h, w, 1, b.into_raw().into_iter().map(scale8).collect())?, BitDepth::Eight, false)
        }
        DynamicImage::ImageLuma16(b) => {
            (RasterImage::new(h, w, 1, b.into_raw().into_iter().map(scale16).collect())?, BitDepth::Sixteen, false)
        }
        DynamicImage::ImageLumaA16(_) => {
            let b = img.to_luma16();
            (RasterImage::new(h, w, 1, b.into_raw().into_iter().map(scale16).collect())?, BitDepth::Sixteen, false)
        }
        DynamicImage::ImageRgb8(b) => {
            (RasterImage::new(h, w, 3, b.into_raw().into_iter().map(scale8).collect())?, BitDepth::Eight, false)
        }
        DynamicImage::ImageRgba8(_) => {
            let b = img.to_rgb8();
            (RasterImage::new(h, w, 3, b.into_raw().into_iter().map(scale8).collect())?, BitDepth::Eight, false)
        }
        DynamicImage::ImageRgb16(b) => {
            (RasterImage::new(h, w, 3, b.into_raw().into_iter().map(scale16).collect())?, BitDepth::Sixteen, false)
        }
        DynamicImage::ImageRgba16(_) => {
            let b = img.to_rgb16();
            (RasterImage::new(h, w, 3, b.into_raw().into_iter().map(scale16).collect())?, BitDepth::Sixteen, false)
        }
        other => {
            let b = other.to_rgb32f();
            (RasterImage::new(h, w, 3, b.into_raw().into_iter().map(f64::from).collect())?, BitDepth::Sixteen, true)
        }
    };
    Ok(Loaded { image, depth, high_dynamic_range: hdr })
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a display image; values are clamped to `[0, 1]` and quantized.
///
/// The container is picked from the extension: `.png`, or `.ppm`/`.pnm` for
/// binary PPM (single-channel images are replicated to RGB for PPM).
pub fn save_image(path: impl AsRef<Path>, img: &RasterImage, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let encode_err = |message: String| Error::Encode { path: path.to_path_buf(), message };
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ext) if ext == "png" => ImageFormat::Png,
        Some(ext) if ext == "ppm" || ext == "pnm" => ImageFormat::Pnm,
        other => return Err(encode_err(format!("unsupported output extension {other:?}"))),
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    let rgb_data = || -> Vec<f64> {
        if img.channels() == 3 {
            img.data().to_vec()
        } else {
            img.data().iter().flat_map(|&v| [v, v, v]).collect()
        }
    };
    let dynamic = match (depth, img.channels() == 1 && format == ImageFormat::Png) {
        (BitDepth::Eight, true) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, img.data().iter().map(|&v| quantize8(v)).collect())
                .expect("buffer size"),
        ),
        (BitDepth::Sixteen, true) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, img.data().iter().map(|&v| quantize16(v)).collect())
                .expect("buffer size"),
        ),
        (BitDepth::Eight, false) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, rgb_data().into_iter().map(quantize8).collect())
                .expect("buffer size"),
        ),
        (BitDepth::Sixteen, false) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, rgb_data().into_iter().map(quantize16).collect())
                .expect("buffer size"),
        ),
    };
    if format == ImageFormat::Pnm {
        let file = std::fs::File::create(path)?;
        let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary));
        return dynamic.write_with_encoder(encoder).map_err(|e| encode_err(e.to_string()));
    }
    dynamic.save_with_format(path, format).map_err(|e| encode_err(e.to_string()))
}
