//! Image quality metrics and report formatting.

use crate::nv12::RgbaImage;
use thiserror::Error;

/// PSNR for identical images (and the upper clamp), in dB.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u16, u16, u16, u16),
}

/// Peak signal-to-noise ratio over RGB channels normalized to [0, 1];
/// alpha is excluded. Capped at 99 dB.
pub fn psnr(a: &RgbaImage, b: &RgbaImage) -> Result<f64, MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mut sum = 0f64;
    let mut count = 0usize;
    for (pa, pb) in a.pixels.chunks_exact(4).zip(b.pixels.chunks_exact(4)) {
        for ch in 0..3 {
            let d = (pa[ch] as f64 - pb[ch] as f64) / 255.0;
            sum += d * d;
        }
        count += 3;
    }
    Ok(psnr_from_mse(sum / count as f64))
}

/// PSNR of two equal-length linear [0, 1] sample slices.
pub fn psnr_linear(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "psnr inputs must have equal length");
    assert!(!a.is_empty());
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum();
    psnr_from_mse(sum / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Table-style decibel formatting, e.g. "25.68".
pub fn format_db(v: f64) -> String {
    format!("{v:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: u16, h: u16, f: impl Fn(usize) -> [u8; 4]) -> RgbaImage {
        let pixels = (0..w as usize * h as usize).flat_map(f).collect();
        RgbaImage::new(w, h, pixels).unwrap()
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = image(4, 4, |i| [i as u8, 10, 20, 255]);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    }

    #[test]
    fn uniform_error_of_a_tenth_is_twenty_db() {
        let a = vec![0.5f32; 300];
        let b = vec![0.6f32; 300];
        let db = psnr_linear(&a, &b);
        assert!((db - 20.0).abs() < 0.01, "{db}");
    }

    #[test]
    fn alpha_is_excluded() {
        let a = image(2, 2, |_| [100, 100, 100, 255]);
        let b = image(2, 2, |_| [100, 100, 100, 0]);
        assert_eq!(psnr(&a, &b).unwrap(), 99.0);
    }

    #[test]
    fn symmetric() {
        let a = image(3, 3, |i| [(i * 17) as u8, 0, 200, 255]);
        let b = image(3, 3, |i| [(i * 5) as u8, 90, 10, 255]);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn decreasing_in_noise_amplitude() {
        let base = vec![0.5f32; 1000];
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.05, 0.1, 0.2, 0.4] {
            let noisy: Vec<f32> = base.iter().map(|v| v + amp).collect();
            let db = psnr_linear(&base, &noisy);
            assert!(db < last, "psnr must strictly decrease: {db} !< {last}");
            last = db;
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = image(2, 2, |_| [0, 0, 0, 255]);
        let b = image(2, 4, |_| [0, 0, 0, 255]);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn table_formatting() {
        assert_eq!(format_db(25.6789), "25.68");
        assert_eq!(format_db(99.0), "99.00");
    }
}
