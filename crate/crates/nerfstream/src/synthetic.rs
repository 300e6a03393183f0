//! Synthetic scene recorder.
//!
//! An analytic stand-in for a real capture: a textured upright barrel
//! (0.93 m tall, 0.62 m across) standing on a checkered floor inside a
//! cylindrical room. Cameras move on two rings, one looking at the top rim
//! of the barrel, one at the base, so every pixel of every view hits scene
//! surface and multi-view coverage of the barrel coat is guaranteed.
//!
//! The generator emits a `Recording` (NV12 frames, exact poses, pinhole
//! intrinsics) plus the analytic geometry, which doubles as the distance
//! oracle for reconstruction tests. Poses use the renderer convention
//! (x right, y down, z forward), so no device-axis conversion applies.

use crate::math::{self, Vec3};
use crate::nv12::{rgba_to_nv12, RgbaImage};
use crate::recording::Recording;
use crate::scene::{CameraIntrinsics, Pose, SceneBox};
use crate::wire::{IntrinsicsResponse, StreamEntity};
use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub struct SyntheticSceneConfig {
    pub width: u16,
    pub height: u16,
    pub views: usize,
    pub focal_px: f64,
    /// Recording indices whose poses are corrupted (cycling through zero,
    /// NaN, scaled and non-affine matrices).
    pub invalid_pose_indices: BTreeSet<usize>,
    /// Timestamp increment per frame, 100 ns ticks.
    pub timestamp_ticks: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            views: 60,
            focal_px: 72.0,
            invalid_pose_indices: BTreeSet::new(),
            timestamp_ticks: 333_333, // 30 fps capture clock
        }
    }
}

/// Analytic scene: barrel on a floor inside a cylindrical room, z up,
/// floor at z = 0, barrel axis through the origin.
#[derive(Debug, Clone, Copy)]
pub struct SceneGeometry {
    pub barrel_radius: f64,
    pub barrel_height: f64,
    pub room_radius: f64,
    pub wall_height: f64,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self {
            barrel_radius: 0.31,
            barrel_height: 0.93,
            room_radius: 1.7,
            wall_height: 2.4,
        }
    }
}

const T_EPS: f64 = 1e-9;

impl SceneGeometry {
    /// Scene box sized to contain the whole room.
    pub fn recommended_box(&self) -> SceneBox {
        let half = (self.room_radius + 0.1).max(self.wall_height / 2.0 + 0.1);
        SceneBox::new([0.0, 0.0, half], 0.5 / half)
    }

    /// First intersection of a world ray with the scene, with its unlit
    /// texture color. `None` only for rays escaping through the open top.
    pub fn trace(&self, origin: Vec3, dir: Vec3) -> Option<(f64, [u8; 3])> {
        let mut best: Option<(f64, [u8; 3])> = None;
        let mut consider = |t: f64, color: [u8; 3]| {
            if t > T_EPS && best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, color));
            }
        };

        // barrel side
        for t in cylinder_hits(origin, dir, self.barrel_radius) {
            let p = math::add(origin, math::scale(dir, t));
            if p[2] >= 0.0 && p[2] <= self.barrel_height {
                consider(t, self.barrel_side_color(p));
            }
        }
        // barrel top cap
        if dir[2].abs() > T_EPS {
            let t = (self.barrel_height - origin[2]) / dir[2];
            if t > T_EPS {
                let p = math::add(origin, math::scale(dir, t));
                let rho = p[0].hypot(p[1]);
                if rho <= self.barrel_radius {
                    consider(t, self.barrel_top_color(rho));
                }
            }
            // floor
            let t = -origin[2] / dir[2];
            if t > T_EPS {
                let p = math::add(origin, math::scale(dir, t));
                let rho = p[0].hypot(p[1]);
                if rho <= self.room_radius {
                    consider(t, floor_color(p));
                }
            }
        }
        // room wall, seen from inside
        for t in cylinder_hits(origin, dir, self.room_radius) {
            let p = math::add(origin, math::scale(dir, t));
            if p[2] >= 0.0 && p[2] <= self.wall_height {
                consider(t, wall_color(p));
            }
        }
        best
    }

    /// Distance from a point to the nearest scene surface: barrel side,
    /// barrel top, floor disk or wall.
    pub fn surface_distance(&self, p: Vec3) -> f64 {
        let rho = p[0].hypot(p[1]);
        let z = p[2];

        let side = (rho - self.barrel_radius)
            .hypot(z - z.clamp(0.0, self.barrel_height));
        let top = (rho - rho.min(self.barrel_radius)).hypot(z - self.barrel_height);
        let floor = (rho - self.room_radius).max(0.0).hypot(z);
        let wall = (rho - self.room_radius).hypot(z - z.clamp(0.0, self.wall_height));
        side.min(top).min(floor).min(wall)
    }

    fn barrel_side_color(&self, p: Vec3) -> [u8; 3] {
        let theta = p[1].atan2(p[0]);
        let band = ((p[2] / self.barrel_height) * 4.0).floor() as i64;
        let sector = (((theta + std::f64::consts::PI) / std::f64::consts::TAU) * 8.0).floor() as i64;
        if (band + sector).rem_euclid(2) == 0 {
            [210, 168, 40]
        } else {
            [120, 72, 28]
        }
    }

    fn barrel_top_color(&self, rho: f64) -> [u8; 3] {
        let ring = ((rho / self.barrel_radius) * 3.0).floor() as i64;
        if ring.rem_euclid(2) == 0 {
            [185, 185, 195]
        } else {
            [70, 80, 100]
        }
    }
}

fn floor_color(p: Vec3) -> [u8; 3] {
    let cx = (p[0] / 0.4).floor() as i64;
    let cy = (p[1] / 0.4).floor() as i64;
    if (cx + cy).rem_euclid(2) == 0 {
        [150, 150, 148]
    } else {
        [75, 85, 75]
    }
}

fn wall_color(p: Vec3) -> [u8; 3] {
    let theta = p[1].atan2(p[0]);
    let sector = (((theta + std::f64::consts::PI) / std::f64::consts::TAU) * 12.0).floor() as i64;
    match sector.rem_euclid(3) {
        0 => [95, 105, 160],
        1 => [165, 110, 95],
        _ => [105, 160, 120],
    }
}

/// Positive-t intersections with an infinite vertical cylinder of the
/// given radius around the z axis.
fn cylinder_hits(origin: Vec3, dir: Vec3, radius: f64) -> impl Iterator<Item = f64> {
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    let b = 2.0 * (origin[0] * dir[0] + origin[1] * dir[1]);
    let c = origin[0] * origin[0] + origin[1] * origin[1] - radius * radius;
    let mut roots = [f64::NAN; 2];
    if a > T_EPS {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots[0] = (-b - sq) / (2.0 * a);
            roots[1] = (-b + sq) / (2.0 * a);
        }
    }
    roots.into_iter().filter(|t| t.is_finite() && *t > T_EPS)
}

/// Camera-to-world pose at `position` looking at `target`, renderer
/// convention (x right, y down, z forward), world up +z.
pub fn look_at_pose(position: Vec3, target: Vec3) -> Pose {
    let forward = math::normalize(math::sub(target, position));
    let right = math::normalize(math::cross(forward, [0.0, 0.0, 1.0]));
    let down = math::cross(forward, right);
    Pose {
        rotation: [
            [right[0], down[0], forward[0]],
            [right[1], down[1], forward[1]],
            [right[2], down[2], forward[2]],
        ],
        translation: position,
    }
}

/// The two capture rings: one skimming the barrel's top rim, one the base
/// edge where coat and floor meet.
fn ring_view(geom: &SceneGeometry, index: usize, views: usize) -> (Vec3, Vec3) {
    let half = views / 2;
    let (ring_count, ring_idx, radius, height, target) = if index < half {
        (
            half,
            index,
            1.05,
            1.55,
            [0.0, 0.0, geom.barrel_height * 0.88],
        )
    } else {
        (views - half, index - half, 1.15, 0.85, [0.0, 0.0, 0.10])
    };
    let phase = if index < half { 0.0 } else { 0.5 };
    let angle = std::f64::consts::TAU * (ring_idx as f64 + phase) / ring_count.max(1) as f64;
    (
        [radius * angle.cos(), radius * angle.sin(), height],
        target,
    )
}

/// Ray-traces one view of the scene on black background.
pub fn render_view(geom: &SceneGeometry, intr: &CameraIntrinsics, pose: &Pose) -> RgbaImage {
    let w = intr.width as usize;
    let h = intr.height as usize;
    let mut pixels = vec![0u8; w * h * 4];
    for v in 0..h {
        for u in 0..w {
            let xn = (u as f64 + 0.5 - intr.cx) / intr.fx;
            let yn = (v as f64 + 0.5 - intr.cy) / intr.fy;
            let dir = math::normalize(math::mat_vec(&pose.rotation, [xn, yn, 1.0]));
            let o = (v * w + u) * 4;
            if let Some((_, rgb)) = geom.trace(pose.translation, dir) {
                pixels[o..o + 3].copy_from_slice(&rgb);
            }
            pixels[o + 3] = 255;
        }
    }
    RgbaImage::new(intr.width, intr.height, pixels).unwrap()
}

fn corrupt_pose(kind: usize, pose: &Pose) -> [f32; 16] {
    let mut m = pose.to_matrix();
    match kind % 4 {
        0 => m = [0.0; 16],
        1 => m[5] = f32::NAN,
        2 => {
            for r in 0..3 {
                for c in 0..3 {
                    m[r * 4 + c] *= 1.5;
                }
            }
        }
        _ => m[15] = 0.5,
    }
    m
}

/// Builds the recording: ray-traced NV12 frames with exact poses. Frames
/// listed in `invalid_pose_indices` carry corrupted pose matrices so the
/// client-side validation has something to sort out.
pub fn generate_recording(cfg: &SyntheticSceneConfig) -> (Recording, SceneGeometry) {
    let geom = SceneGeometry::default();
    let intr_struct = CameraIntrinsics::pinhole(
        cfg.focal_px,
        cfg.focal_px,
        cfg.width as f64 / 2.0,
        cfg.height as f64 / 2.0,
        cfg.width,
        cfg.height,
    );
    let intrinsics = IntrinsicsResponse::new(
        cfg.focal_px as f32,
        cfg.focal_px as f32,
        cfg.width as f32 / 2.0,
        cfg.height as f32 / 2.0,
        [0.0; 5],
        cfg.width,
        cfg.height,
    )
    .expect("pinhole intrinsics are valid");

    let mut entities = Vec::with_capacity(cfg.views);
    let mut invalid_kind = 0usize;
    for i in 0..cfg.views {
        let (position, target) = ring_view(&geom, i, cfg.views);
        let pose = look_at_pose(position, target);
        let image = render_view(&geom, &intr_struct, &pose);
        let nv12 = rgba_to_nv12(&image).expect("even frame size").to_contiguous();
        let pose_matrix = if cfg.invalid_pose_indices.contains(&i) {
            invalid_kind += 1;
            corrupt_pose(invalid_kind - 1, &pose)
        } else {
            pose.to_matrix()
        };
        entities.push(
            StreamEntity::new(
                i as u64 * cfg.timestamp_ticks,
                cfg.width,
                cfg.height,
                nv12,
                [
                    cfg.focal_px as f32,
                    cfg.focal_px as f32,
                    cfg.width as f32 / 2.0,
                    cfg.height as f32 / 2.0,
                ],
                pose_matrix,
            )
            .expect("traced frame matches recording size"),
        );
    }
    (Recording::new(intrinsics, entities), geom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{project, validate_pose};

    #[test]
    fn default_recording_has_valid_poses() {
        let cfg = SyntheticSceneConfig {
            views: 8,
            width: 16,
            height: 16,
            focal_px: 18.0,
            ..SyntheticSceneConfig::default()
        };
        let (rec, _) = generate_recording(&cfg);
        assert_eq!(rec.len(), 8);
        for e in &rec.entities {
            assert!(validate_pose(&e.pose).is_ok());
        }
    }

    #[test]
    fn invalid_pose_injection_rejected_by_validation() {
        let cfg = SyntheticSceneConfig {
            views: 8,
            width: 16,
            height: 16,
            focal_px: 18.0,
            invalid_pose_indices: [1usize, 3, 5, 7].into_iter().collect(),
            ..SyntheticSceneConfig::default()
        };
        let (rec, _) = generate_recording(&cfg);
        let bad: Vec<bool> = rec
            .entities
            .iter()
            .map(|e| validate_pose(&e.pose).is_err())
            .collect();
        assert_eq!(bad, vec![false, true, false, true, false, true, false, true]);
    }

    #[test]
    fn every_pixel_hits_scene_surface() {
        let geom = SceneGeometry::default();
        let intr = CameraIntrinsics::pinhole(72.0, 72.0, 32.0, 32.0, 64, 64);
        for i in 0..6 {
            let (pos, target) = ring_view(&geom, i * 7, 42);
            let pose = look_at_pose(pos, target);
            let img = render_view(&geom, &intr, &pose);
            let black = img
                .pixels
                .chunks_exact(4)
                .filter(|p| p[0] == 0 && p[1] == 0 && p[2] == 0)
                .count();
            assert_eq!(black, 0, "view {i} has {black} background pixels");
        }
    }

    /// Traced hit points must project back to the pixel they came from.
    #[test]
    fn hit_points_reproject_to_source_pixels() {
        let geom = SceneGeometry::default();
        let intr = CameraIntrinsics::pinhole(72.0, 72.0, 32.0, 32.0, 64, 64);
        let (pos, target) = ring_view(&geom, 3, 12);
        let pose = look_at_pose(pos, target);
        for (u, v) in [(0usize, 0usize), (32, 32), (63, 12), (10, 60)] {
            let xn = (u as f64 + 0.5 - intr.cx) / intr.fx;
            let yn = (v as f64 + 0.5 - intr.cy) / intr.fy;
            let dir = math::normalize(math::mat_vec(&pose.rotation, [xn, yn, 1.0]));
            let (t, _) = geom.trace(pose.translation, dir).expect("hit");
            let hit = math::add(pose.translation, math::scale(dir, t));
            let (pu, pv) = project(&intr, &pose, hit).expect("in front of camera");
            let err = (pu - (u as f64 + 0.5)).hypot(pv - (v as f64 + 0.5));
            assert!(err < 0.5, "pixel ({u},{v}) reprojects {err} px off");
        }
    }

    #[test]
    fn surface_distance_vanishes_on_surfaces() {
        let geom = SceneGeometry::default();
        // a point on the barrel side, on the top cap, on the floor, on the wall
        for p in [
            [geom.barrel_radius, 0.0, 0.4],
            [0.1, 0.05, geom.barrel_height],
            [1.0, -0.8, 0.0],
            [0.0, geom.room_radius, 1.2],
        ] {
            assert!(geom.surface_distance(p) < 1e-12, "{p:?}");
        }
        // interior point well away from everything
        let d = geom.surface_distance([0.9, 0.0, 1.3]);
        assert!(d > 0.3, "free-space distance {d}");
    }

    #[test]
    fn cameras_sit_inside_the_recommended_box() {
        let geom = SceneGeometry::default();
        let sbox = geom.recommended_box();
        for i in 0..20 {
            let (pos, _) = ring_view(&geom, i, 20);
            let q = crate::scene::world_to_unit(&sbox, pos);
            assert!(q.iter().all(|&c| c > 0.0 && c < 1.0), "{q:?}");
        }
    }
}
