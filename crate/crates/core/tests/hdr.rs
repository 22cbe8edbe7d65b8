use std::io::Write;

use iit::io;
use iit::pipeline::{hdr_compress, hdr_exemplar, hdr_log_luminance, restore_saturation, HdrParams};
use iit::raster::rgb_to_luminance;
use iit::exemplar::ClaheParams;
use iit::RasterImage;

fn radiance(h: usize, w: usize) -> RasterImage {
    RasterImage::from_fn(h, w, 3, |r, c, ch| {
        let base = 10f64.powf(-2.0 + 4.0 * c as f64 / (w - 1) as f64);
        base * [1.0, 0.7 + 0.02 * r as f64, 0.4][ch]
    })
    .unwrap()
}

#[test]
fn unit_exponent_with_identity_luminance_reproduces_colors() {
    let hdr = radiance(6, 9);
    let l = rgb_to_luminance(&hdr).unwrap();
    let out = restore_saturation(&hdr, l.data(), l.data(), 1.0).unwrap();
    for (a, b) in out.data().iter().zip(hdr.data()) {
        assert!((a - b).abs() <= 1e-9 * b.max(1.0));
    }
}

#[test]
fn grey_pixels_map_to_output_luminance() {
    let grey = RasterImage::from_fn(2, 3, 3, |r, c, _| 0.5 + (r * 3 + c) as f64).unwrap();
    let l_in = rgb_to_luminance(&grey).unwrap();
    let l_out: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 + 0.05).collect();
    for s in [0.4, 0.5, 0.6] {
        let out = restore_saturation(&grey, l_in.data(), &l_out, s).unwrap();
        for i in 0..6 {
            for v in out.pixel(i) {
                assert!((v - l_out[i]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn compression_fits_display_range() {
    let hdr = radiance(24, 24);
    let ex = hdr_exemplar(&hdr, &ClaheParams::default()).unwrap();
    let (out, d) = hdr_compress(&hdr, &ex, &HdrParams::default()).unwrap();
    assert_eq!(d.planes.len(), 1);
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let (_, plane) = hdr_log_luminance(&hdr).unwrap();
    assert!((plane.min_value() - 0.0).abs() < 1e-15 && (plane.max_value() - 1.0).abs() < 1e-15);
    let first = d.planes[0].energy_output.total;
    assert!(first <= d.planes[0].energy_source.total + 1e-9);
}

#[test]
fn zero_radiance_rejected() {
    let mut data = radiance(4, 4).into_data();
    data[0] = 0.0;
    let hdr = RasterImage::new(4, 4, 3, data).unwrap();
    assert!(hdr_log_luminance(&hdr).is_err());
}

#[test]
fn reads_flat_rgbe_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.hdr");
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 1 +X 2\n").unwrap();
    f.write_all(&[128, 64, 32, 129, 128, 128, 128, 136]).unwrap();
    drop(f);
    let loaded = io::load(&path).unwrap();
    assert!(loaded.high_dynamic_range);
    let img = loaded.image;
    assert_eq!((img.height(), img.width(), img.channels()), (1, 2, 3));
    let expect = [1.0, 0.5, 0.25, 128.0, 128.0, 128.0];
    for (a, b) in img.data().iter().zip(expect) {
        assert!((a - b).abs() <= 0.01 * b, "{a} vs {b}");
    }
}
