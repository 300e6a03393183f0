//! NV12 (YUV 4:2:0, interleaved UV) to RGBA conversion and back.
//!
//! The stream carries NV12; the trainer wants RGBA. Conversion uses BT.601
//! limited range (Y in [16, 235], chroma centered on 128) with
//! nearest-neighbor chroma upsampling on decode and 2x2 chroma averaging on
//! encode. Alpha is always 255.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Nv12Error {
    #[error("image dimensions {0}x{1} must be even and nonzero")]
    BadDimensions(u16, u16),
    #[error("plane length mismatch: y={y} uv={uv}, expected y={ey} uv={euv}")]
    PlaneMismatch { y: usize, uv: usize, ey: usize, euv: usize },
    #[error("pixel buffer is {actual} bytes, expected {expected}")]
    PixelLength { expected: usize, actual: usize },
}

/// Planar NV12 frame: full-resolution Y plane plus interleaved
/// half-resolution UV plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Nv12Frame {
    pub width: u16,
    pub height: u16,
    pub y_plane: Vec<u8>,
    pub uv_plane: Vec<u8>,
}

impl Nv12Frame {
    pub fn new(width: u16, height: u16, y_plane: Vec<u8>, uv_plane: Vec<u8>) -> Result<Self, Nv12Error> {
        check_dims(width, height)?;
        let ey = width as usize * height as usize;
        let euv = ey / 2;
        if y_plane.len() != ey || uv_plane.len() != euv {
            return Err(Nv12Error::PlaneMismatch {
                y: y_plane.len(),
                uv: uv_plane.len(),
                ey,
                euv,
            });
        }
        Ok(Self {
            width,
            height,
            y_plane,
            uv_plane,
        })
    }

    /// Splits a contiguous w*h*3/2 buffer (the wire layout) into planes.
    pub fn from_contiguous(width: u16, height: u16, data: &[u8]) -> Result<Self, Nv12Error> {
        check_dims(width, height)?;
        let ey = width as usize * height as usize;
        if data.len() != ey * 3 / 2 {
            return Err(Nv12Error::PixelLength {
                expected: ey * 3 / 2,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            y_plane: data[..ey].to_vec(),
            uv_plane: data[ey..].to_vec(),
        })
    }

    /// Y plane followed by the UV plane, as sent on the wire.
    pub fn to_contiguous(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.y_plane.len() + self.uv_plane.len());
        out.extend_from_slice(&self.y_plane);
        out.extend_from_slice(&self.uv_plane);
        out
    }
}

/// 8-bit RGBA image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbaImage {
    pub width: u16,
    pub height: u16,
    pub pixels: Vec<u8>,
}

impl RgbaImage {
    pub fn new(width: u16, height: u16, pixels: Vec<u8>) -> Result<Self, Nv12Error> {
        let expected = width as usize * height as usize * 4;
        if pixels.len() != expected {
            return Err(Nv12Error::PixelLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn rgba(&self, x: usize, y: usize) -> [u8; 4] {
        let o = (y * self.width as usize + x) * 4;
        self.pixels[o..o + 4].try_into().unwrap()
    }
}

fn check_dims(width: u16, height: u16) -> Result<(), Nv12Error> {
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(Nv12Error::BadDimensions(width, height));
    }
    Ok(())
}

fn clamp_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// BT.601 limited-range decode with nearest-neighbor chroma upsampling.
pub fn nv12_to_rgba(f: &Nv12Frame) -> RgbaImage {
    let w = f.width as usize;
    let h = f.height as usize;
    let mut pixels = vec![0u8; w * h * 4];
    for y in 0..h {
        let uv_row = (y / 2) * w;
        for x in 0..w {
            let luma = f.y_plane[y * w + x] as f32 - 16.0;
            let uvo = uv_row + (x / 2) * 2;
            let cb = f.uv_plane[uvo] as f32 - 128.0;
            let cr = f.uv_plane[uvo + 1] as f32 - 128.0;

            let c = 1.164_383 * luma;
            let r = c + 1.596_027 * cr;
            let g = c - 0.391_762 * cb - 0.812_968 * cr;
            let b = c + 2.017_232 * cb;

            let o = (y * w + x) * 4;
            pixels[o] = clamp_u8(r);
            pixels[o + 1] = clamp_u8(g);
            pixels[o + 2] = clamp_u8(b);
            pixels[o + 3] = 255;
        }
    }
    RgbaImage {
        width: f.width,
        height: f.height,
        pixels,
    }
}

/// BT.601 limited-range encode with 2x2 chroma averaging. Alpha is ignored.
pub fn rgba_to_nv12(img: &RgbaImage) -> Result<Nv12Frame, Nv12Error> {
    check_dims(img.width, img.height)?;
    let w = img.width as usize;
    let h = img.height as usize;
    let mut y_plane = vec![0u8; w * h];
    let mut uv_plane = vec![0u8; w * h / 2];

    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * 4;
            let r = img.pixels[o] as f32 / 255.0;
            let g = img.pixels[o + 1] as f32 / 255.0;
            let b = img.pixels[o + 2] as f32 / 255.0;
            let luma = 16.0 + 65.481 * r + 128.553 * g + 24.966 * b;
            y_plane[y * w + x] = clamp_u8(luma);
        }
    }
    for cy in 0..h / 2 {
        for cx in 0..w / 2 {
            let mut r = 0f32;
            let mut g = 0f32;
            let mut b = 0f32;
            for dy in 0..2 {
                for dx in 0..2 {
                    let o = ((cy * 2 + dy) * w + cx * 2 + dx) * 4;
                    r += img.pixels[o] as f32;
                    g += img.pixels[o + 1] as f32;
                    b += img.pixels[o + 2] as f32;
                }
            }
            let (r, g, b) = (r / (4.0 * 255.0), g / (4.0 * 255.0), b / (4.0 * 255.0));
            let cb = 128.0 - 37.797 * r - 74.203 * g + 112.0 * b;
            let cr = 128.0 + 112.0 * r - 93.786 * g - 18.214 * b;
            uv_plane[(cy * w) + cx * 2] = clamp_u8(cb);
            uv_plane[(cy * w) + cx * 2 + 1] = clamp_u8(cr);
        }
    }
    Ok(Nv12Frame {
        width: img.width,
        height: img.height,
        y_plane,
        uv_plane,
    })
}
