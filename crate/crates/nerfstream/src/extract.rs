//! Explicit geometry extraction from a trained field.
//!
//! Rays are drawn uniformly over (valid frame, pixel) pairs from the
//! training views and marched with the renderer's sampler; a ray yields a
//! point where its transmittance first drops below one half. Colors come
//! from the truncated rendering integral renormalized by the accumulated
//! weight. Point clouds go to disk as binary little-endian PLY.

use crate::client::FrameBuffer;
use crate::field::RadianceField;
use crate::scene::{pixel_to_ray, unit_to_world, CameraIntrinsics, SceneBox, SceneError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no frames with valid poses available")]
    NoFrames,
    #[error("ray generation: {0}")]
    Scene(#[from] SceneError),
    #[error("point cloud is empty, refusing to write")]
    EmptyCloud,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One extracted surface sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    /// World coordinates, meters.
    pub position: [f32; 3],
    pub color: [u8; 3],
    /// Originating (frame index, pixel u, pixel v).
    pub source: (u32, u16, u16),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<SurfacePoint>,
}

#[derive(Debug, Clone)]
pub struct ExtractionReport {
    pub target_rays: usize,
    pub hit_points: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractConfig {
    pub samples_per_ray: usize,
    /// A ray terminates where transmittance crosses below this value.
    pub termination_transmittance: f32,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 96,
            termination_transmittance: 0.5,
            seed: 0,
        }
    }
}

/// Draws `target` rays over the buffered frames and collects a point for
/// every ray that terminates inside the scene box. Deterministic for a
/// fixed seed; points are emitted in ray order.
pub fn extract_points(
    field: &RadianceField,
    buffer: &FrameBuffer,
    intr: &CameraIntrinsics,
    sbox: &SceneBox,
    target: usize,
    cfg: &ExtractConfig,
) -> Result<(PointCloud, ExtractionReport), ExtractError> {
    let frames = buffer.published_count();
    if frames == 0 {
        return Err(ExtractError::NoFrames);
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cloud = PointCloud::default();
    let n = cfg.samples_per_ray;
    let mut ts: Vec<f32> = Vec::with_capacity(n);

    for _ in 0..target {
        let frame_idx = rng.random_range(0..frames);
        let frame = buffer.get(frame_idx).expect("published frame");
        let u = rng.random_range(0..intr.width as usize);
        let v = rng.random_range(0..intr.height as usize);
        let ray = pixel_to_ray(intr, &frame.pose, sbox, u as f64 + 0.5, v as f64 + 0.5)?;
        if ray.is_empty() {
            continue;
        }

        ts.clear();
        let span = ray.t_far - ray.t_near;
        let step = span / n as f32;
        for i in 0..n {
            let jitter: f32 = rng.random_range(0.0..1.0);
            ts.push(ray.t_near + (i as f32 + jitter) * step);
        }

        let dir = ray.direction;
        let mut transmittance = 1f32;
        let mut acc = [0f32; 3];
        let mut weight = 0f32;
        for i in 0..n {
            let t = ts[i];
            let delta = if i + 1 < n { ts[i + 1] - t } else { ray.t_far - t };
            let (sigma, c) = field.query(ray.point_at(t), dir);
            let alpha = 1.0 - (-sigma * delta.max(0.0)).exp();
            let w = transmittance * alpha;
            acc[0] += w * c[0];
            acc[1] += w * c[1];
            acc[2] += w * c[2];
            weight += w;
            transmittance *= 1.0 - alpha;
            if transmittance < cfg.termination_transmittance {
                // first major density peak: the median-termination depth
                let q = ray.point_at(t);
                let world = unit_to_world(sbox, [q[0] as f64, q[1] as f64, q[2] as f64]);
                let inv = 1.0 / weight.max(1e-9);
                cloud.points.push(SurfacePoint {
                    position: world.map(|x| x as f32),
                    color: acc.map(|c| ((c * inv).clamp(0.0, 1.0) * 255.0).round() as u8),
                    source: (frame_idx as u32, u as u16, v as u16),
                });
                break;
            }
        }
    }

    let report = ExtractionReport {
        target_rays: target,
        hit_points: cloud.points.len(),
        wall_time: started.elapsed(),
    };
    Ok((cloud, report))
}

/// Binary little-endian PLY with float32 positions and uchar colors.
pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<(), ExtractError> {
    if cloud.points.is_empty() {
        return Err(ExtractError::EmptyCloud);
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         end_header\n",
        cloud.points.len()
    )?;
    for p in &cloud.points {
        for c in p.position {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&p.color)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct BenchRow {
    pub target: usize,
    pub hits: usize,
    pub seconds: f64,
}

/// Times extraction for each target count. PLY writing is excluded; only
/// the in-memory extraction is on the clock.
pub fn benchmark_extraction(
    field: &RadianceField,
    buffer: &FrameBuffer,
    intr: &CameraIntrinsics,
    sbox: &SceneBox,
    targets: &[usize],
    cfg: &ExtractConfig,
) -> Result<Vec<BenchRow>, ExtractError> {
    let mut rows = Vec::with_capacity(targets.len());
    for &target in targets {
        let (_, report) = extract_points(field, buffer, intr, sbox, target, cfg)?;
        rows.push(BenchRow {
            target,
            hits: report.hit_points,
            seconds: report.wall_time.as_secs_f64(),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("target,hits,seconds\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6}\n", r.target, r.hits, r.seconds));
    }
    out
}
