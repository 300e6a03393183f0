//! Online training of the radiance field from the frame buffer.
//!
//! Each step draws random (frame, pixel) pairs over the published prefix of
//! the buffer, renders the rays, applies an L2 photometric loss against the
//! stored pixels and takes one adaptive-moment step on all parameters. The
//! loop form re-reads the published count every iteration, so frames that
//! arrive mid-training immediately join the sampling pool.

use super::grid::GridFootprint;
use super::net::{self, NetGrads, NetTrace};
use super::{RadianceField, ENC_DIM};
use crate::client::FrameBuffer;
use crate::scene::{pixel_to_ray, CameraIntrinsics, Ray, SceneBox, SceneError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("frame buffer has no published frames")]
    EmptyBuffer,
    #[error("ray generation: {0}")]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Rays per step.
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    pub lr_grid: f32,
    pub lr_net: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    /// March cutoff; 0 disables early stopping (exact quadrature).
    pub min_transmittance: f32,
    /// Exclude every k-th buffered frame from sampling (held-out views).
    pub holdout_every: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_rays: 4096,
            samples_per_ray: 128,
            lr_grid: 1e-2,
            lr_net: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            min_transmittance: 1e-4,
            holdout_every: None,
            seed: 0,
        }
    }
}

pub fn is_holdout(idx: usize, holdout_every: Option<usize>) -> bool {
    match holdout_every {
        Some(k) if k > 0 => idx % k == 0,
        _ => false,
    }
}

struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Per-sample state kept between the forward march and the backward pass.
struct SampleTrace {
    fp: GridFootprint,
    trace: NetTrace,
    t: f32,
    delta: f32,
    alpha: f32,
    /// Transmittance before this sample.
    transmittance: f32,
}

impl Default for SampleTrace {
    fn default() -> Self {
        Self {
            fp: GridFootprint::ZERO,
            trace: NetTrace::default(),
            t: 0.0,
            delta: 0.0,
            alpha: 0.0,
            transmittance: 1.0,
        }
    }
}

/// One drawn training batch: rays with their targets and frozen sample
/// positions, so the same batch can be re-evaluated (gradient checks).
pub struct RayBatch {
    entries: Vec<BatchEntry>,
    ts: Vec<f32>,
    pub max_frame: usize,
    pub published: usize,
}

struct BatchEntry {
    ray: Ray,
    target: [f32; 3],
    ts_start: usize,
    ts_len: usize,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterates (ray, target color, sample positions); lets external
    /// oracles re-evaluate the exact batch the trainer saw.
    pub fn iter(&self) -> impl Iterator<Item = (&Ray, [f32; 3], &[f32])> {
        self.entries
            .iter()
            .map(move |e| (&e.ray, e.target, &self.ts[e.ts_start..e.ts_start + e.ts_len]))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f32,
    /// Highest buffer index sampled this step.
    pub max_frame: usize,
    /// Published count observed when the batch was drawn.
    pub published: usize,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    pub step_count: usize,
    net_grads: NetGrads,
    grid_grad: Vec<f32>,
    adam_grid: Moments,
    adam_net: Vec<Moments>,
    traces: Vec<SampleTrace>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, field: &RadianceField) -> Self {
        let net_lens = net_tensor_lens(field);
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            step_count: 0,
            net_grads: NetGrads::zeros_like(&field.net),
            grid_grad: vec![0.0; field.grid_table.len()],
            adam_grid: Moments::new(field.grid_table.len()),
            adam_net: net_lens.into_iter().map(Moments::new).collect(),
            traces: Vec::new(),
            cfg,
        }
    }

    /// Draws `batch_rays` random (frame, pixel) rays over the published
    /// prefix, skipping held-out frames when an alternative exists.
    pub fn draw_batch(
        &mut self,
        buffer: &FrameBuffer,
        intr: &CameraIntrinsics,
        sbox: &SceneBox,
    ) -> Result<RayBatch, TrainError> {
        let published = buffer.published_count();
        if published == 0 {
            return Err(TrainError::EmptyBuffer);
        }
        let mut batch = RayBatch {
            entries: Vec::with_capacity(self.cfg.batch_rays),
            ts: Vec::with_capacity(self.cfg.batch_rays * self.cfg.samples_per_ray),
            max_frame: 0,
            published,
        };
        for _ in 0..self.cfg.batch_rays {
            let mut idx = self.rng.random_range(0..published);
            if is_holdout(idx, self.cfg.holdout_every) {
                for _ in 0..32 {
                    idx = self.rng.random_range(0..published);
                    if !is_holdout(idx, self.cfg.holdout_every) {
                        break;
                    }
                }
            }
            batch.max_frame = batch.max_frame.max(idx);
            let frame = buffer.get(idx).expect("published frame");
            let u = self.rng.random_range(0..intr.width as usize);
            let v = self.rng.random_range(0..intr.height as usize);
            let ray = pixel_to_ray(intr, &frame.pose, sbox, u as f64 + 0.5, v as f64 + 0.5)?;
            let px = frame.image.rgba(u, v);
            let target = [
                px[0] as f32 / 255.0,
                px[1] as f32 / 255.0,
                px[2] as f32 / 255.0,
            ];

            let ts_start = batch.ts.len();
            if !ray.is_empty() {
                let span = ray.t_far - ray.t_near;
                let step = span / self.cfg.samples_per_ray as f32;
                for i in 0..self.cfg.samples_per_ray {
                    let jitter: f32 = self.rng.random_range(0.0..1.0);
                    batch.ts.push(ray.t_near + (i as f32 + jitter) * step);
                }
            }
            batch.entries.push(BatchEntry {
                ray,
                target,
                ts_start,
                ts_len: batch.ts.len() - ts_start,
            });
        }
        Ok(batch)
    }

    /// Forward-only mean-squared-error of a frozen batch, accumulated in
    /// f64. Marches with the same cutoff as the training pass.
    pub fn batch_loss(&self, field: &RadianceField, batch: &RayBatch) -> f64 {
        let mut sum = 0f64;
        for e in &batch.entries {
            let ts = &batch.ts[e.ts_start..e.ts_start + e.ts_len];
            let color = forward_color_only(field, &e.ray, ts, self.cfg.min_transmittance);
            for ch in 0..3 {
                let r = (color[ch] - e.target[ch]) as f64;
                sum += r * r;
            }
        }
        sum / (batch.entries.len() * 3) as f64
    }

    /// Forward + backward over a frozen batch, accumulating parameter
    /// gradients. Does not touch the optimizer state.
    pub fn accumulate_gradients(&mut self, field: &RadianceField, batch: &RayBatch) -> f32 {
        let g_scale = 2.0 / (batch.entries.len() * 3) as f32;
        let mut loss = 0f64;
        for e in &batch.entries {
            let ts = &batch.ts[e.ts_start..e.ts_start + e.ts_len];
            loss += self.process_ray(field, &e.ray, ts, e.target, g_scale);
        }
        (loss / (batch.entries.len() * 3) as f64) as f32
    }

    /// One full training step: draw, differentiate, apply.
    pub fn step(
        &mut self,
        field: &mut RadianceField,
        buffer: &FrameBuffer,
        intr: &CameraIntrinsics,
        sbox: &SceneBox,
    ) -> Result<StepStats, TrainError> {
        let batch = self.draw_batch(buffer, intr, sbox)?;
        let loss = self.accumulate_gradients(field, &batch);
        self.apply_gradients(field);
        Ok(StepStats {
            loss,
            max_frame: batch.max_frame,
            published: batch.published,
        })
    }

    /// Marches one ray with traces and backpropagates the photometric
    /// residual. Returns the unnormalized squared error.
    fn process_ray(
        &mut self,
        field: &RadianceField,
        ray: &Ray,
        ts: &[f32],
        target: [f32; 3],
        g_scale: f32,
    ) -> f64 {
        let mut color = [0f32; 3];
        let mut used = 0usize;
        if !ray.is_empty() && !ts.is_empty() {
            if self.traces.len() < ts.len() {
                self.traces.resize_with(ts.len(), SampleTrace::default);
            }
            let dir = ray.direction;
            let mut transmittance = 1f32;
            for (i, &t) in ts.iter().enumerate() {
                let delta = if i + 1 < ts.len() {
                    ts[i + 1] - t
                } else {
                    ray.t_far - t
                };
                let tr = &mut self.traces[i];
                field.forward_traced(ray.point_at(t), dir, &mut tr.fp, &mut tr.trace);
                let alpha = 1.0 - (-tr.trace.sigma * delta.max(0.0)).exp();
                let w = transmittance * alpha;
                color[0] += w * tr.trace.color[0];
                color[1] += w * tr.trace.color[1];
                color[2] += w * tr.trace.color[2];
                tr.t = t;
                tr.delta = delta.max(0.0);
                tr.alpha = alpha;
                tr.transmittance = transmittance;
                transmittance *= 1.0 - alpha;
                used = i + 1;
                if transmittance < self.cfg.min_transmittance {
                    break;
                }
            }
        }

        let mut sq = 0f64;
        let mut g = [0f32; 3];
        for ch in 0..3 {
            let r = color[ch] - target[ch];
            sq += (r as f64) * (r as f64);
            g[ch] = r * g_scale;
        }
        if used == 0 || g == [0.0; 3] {
            return sq;
        }

        // Backward through the quadrature. With suffix S_i = sum_{j>i} w_j c_j:
        //   dL/dc_i    = g * w_i
        //   dL/dsigma_i = delta_i * ((1 - alpha_i) * T_i * (g . c_i) - (g . S_i))
        let mut suffix = [0f32; 3];
        for i in (0..used).rev() {
            let tr = &self.traces[i];
            let w = tr.transmittance * tr.alpha;
            let d_color = [g[0] * w, g[1] * w, g[2] * w];
            let g_dot_c = g[0] * tr.trace.color[0]
                + g[1] * tr.trace.color[1]
                + g[2] * tr.trace.color[2];
            let g_dot_s = g[0] * suffix[0] + g[1] * suffix[1] + g[2] * suffix[2];
            let d_sigma = tr.delta * ((1.0 - tr.alpha) * tr.transmittance * g_dot_c - g_dot_s);
            let d_enc: [f32; ENC_DIM] =
                net::backward_sample(&field.net, &tr.trace, d_sigma, d_color, &mut self.net_grads);
            field.grid.accumulate_grad(&mut self.grid_grad, &tr.fp, &d_enc);
            suffix[0] += w * tr.trace.color[0];
            suffix[1] += w * tr.trace.color[1];
            suffix[2] += w * tr.trace.color[2];
        }
        sq
    }

    /// Adam over all parameters: dense on the network, lazy on the grid
    /// (entries untouched by the batch carry exactly-zero gradients and are
    /// skipped).
    pub fn apply_gradients(&mut self, field: &mut RadianceField) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps);

        let lr = self.cfg.lr_grid;
        for i in 0..self.grid_grad.len() {
            let g = self.grid_grad[i];
            if g == 0.0 {
                continue;
            }
            self.grid_grad[i] = 0.0;
            let m = b1 * self.adam_grid.m[i] + (1.0 - b1) * g;
            let v = b2 * self.adam_grid.v[i] + (1.0 - b2) * g * g;
            self.adam_grid.m[i] = m;
            self.adam_grid.v[i] = v;
            field.grid_table[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        }

        let lr = self.cfg.lr_net;
        let params: [&mut [f32]; 8] = [
            &mut field.net.w1,
            &mut field.net.b1,
            &mut field.net.w2,
            &mut field.net.b2,
            &mut field.net.w3,
            &mut field.net.b3,
            &mut field.net.w4,
            &mut field.net.b4,
        ];
        let grads: [&mut [f32]; 8] = [
            &mut self.net_grads.w1,
            &mut self.net_grads.b1,
            &mut self.net_grads.w2,
            &mut self.net_grads.b2,
            &mut self.net_grads.w3,
            &mut self.net_grads.b3,
            &mut self.net_grads.w4,
            &mut self.net_grads.b4,
        ];
        for ((p, g), mom) in params.into_iter().zip(grads).zip(&mut self.adam_net) {
            for i in 0..p.len() {
                let gi = g[i];
                g[i] = 0.0;
                let m = b1 * mom.m[i] + (1.0 - b1) * gi;
                let v = b2 * mom.v[i] + (1.0 - b2) * gi * gi;
                mom.m[i] = m;
                mom.v[i] = v;
                p[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            }
        }
    }

    /// Gradient of the last accumulated batch for one global parameter
    /// index, ordered [grid, w1, b1, w2, b2, w3, b3, w4, b4]. Call after
    /// `accumulate_gradients` and before `apply_gradients`.
    pub fn gradient(&self, global_idx: usize) -> f32 {
        let mut idx = global_idx;
        if idx < self.grid_grad.len() {
            return self.grid_grad[idx];
        }
        idx -= self.grid_grad.len();
        let tensors: [&[f32]; 8] = [
            &self.net_grads.w1,
            &self.net_grads.b1,
            &self.net_grads.w2,
            &self.net_grads.b2,
            &self.net_grads.w3,
            &self.net_grads.b3,
            &self.net_grads.w4,
            &self.net_grads.b4,
        ];
        for t in tensors {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index {global_idx} out of range");
    }
}

fn net_tensor_lens(field: &RadianceField) -> Vec<usize> {
    vec![
        field.net.w1.len(),
        field.net.b1.len(),
        field.net.w2.len(),
        field.net.b2.len(),
        field.net.w3.len(),
        field.net.b3.len(),
        field.net.w4.len(),
        field.net.b4.len(),
    ]
}

impl RadianceField {
    /// Read one parameter by global index (same ordering as
    /// `Trainer::gradient`).
    pub fn param(&self, global_idx: usize) -> f32 {
        *self.param_slot(global_idx)
    }

    pub fn param_mut(&mut self, global_idx: usize) -> &mut f32 {
        let mut idx = global_idx;
        if idx < self.grid_table.len() {
            return &mut self.grid_table[idx];
        }
        idx -= self.grid_table.len();
        let tensors: [&mut Vec<f32>; 8] = [
            &mut self.net.w1,
            &mut self.net.b1,
            &mut self.net.w2,
            &mut self.net.b2,
            &mut self.net.w3,
            &mut self.net.b3,
            &mut self.net.w4,
            &mut self.net.b4,
        ];
        for t in tensors {
            if idx < t.len() {
                return &mut t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index {global_idx} out of range");
    }

    fn param_slot(&self, global_idx: usize) -> &f32 {
        let mut idx = global_idx;
        if idx < self.grid_table.len() {
            return &self.grid_table[idx];
        }
        idx -= self.grid_table.len();
        let tensors: [&[f32]; 8] = [
            &self.net.w1,
            &self.net.b1,
            &self.net.w2,
            &self.net.b2,
            &self.net.w3,
            &self.net.b3,
            &self.net.w4,
            &self.net.b4,
        ];
        for t in tensors {
            if idx < t.len() {
                return &t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index {global_idx} out of range");
    }
}

/// Forward-only march identical in arithmetic to the traced training pass.
fn forward_color_only(
    field: &RadianceField,
    ray: &Ray,
    ts: &[f32],
    min_transmittance: f32,
) -> [f32; 3] {
    let mut color = [0f32; 3];
    if ray.is_empty() || ts.is_empty() {
        return color;
    }
    let dir = ray.direction;
    let mut transmittance = 1f32;
    for (i, &t) in ts.iter().enumerate() {
        let delta = if i + 1 < ts.len() {
            ts[i + 1] - t
        } else {
            ray.t_far - t
        };
        let (sigma, c) = field.query(ray.point_at(t), dir);
        let alpha = 1.0 - (-sigma * delta.max(0.0)).exp();
        let w = transmittance * alpha;
        color[0] += w * c[0];
        color[1] += w * c[1];
        color[2] += w * c[2];
        transmittance *= 1.0 - alpha;
        if transmittance < min_transmittance {
            break;
        }
    }
    color
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: usize,
    pub wall: Duration,
    pub final_loss: f32,
    /// Published frames when training began.
    pub initial_published: usize,
    /// Per-step highest sampled buffer index; evidence that late frames
    /// join the pool.
    pub step_max_frame: Vec<u32>,
}

impl TrainReport {
    /// True iff some step sampled a frame published after training start.
    pub fn sampled_beyond_initial(&self) -> bool {
        self.step_max_frame
            .iter()
            .any(|&m| m as usize >= self.initial_published)
    }
}

/// Trains until `stop` is raised, re-reading the published count each step
/// so the pool grows with the stream.
pub fn run_online_training(
    field: &mut RadianceField,
    trainer: &mut Trainer,
    buffer: &FrameBuffer,
    intr: &CameraIntrinsics,
    sbox: &SceneBox,
    stop: &AtomicBool,
) -> Result<TrainReport, TrainError> {
    let started = Instant::now();
    let mut report = TrainReport {
        steps: 0,
        wall: Duration::ZERO,
        final_loss: f32::NAN,
        initial_published: 0,
        step_max_frame: Vec::new(),
    };
    // training-start signal: wait for the first publication
    while buffer.published_count() == 0 {
        if stop.load(Ordering::Acquire) {
            report.wall = started.elapsed();
            return Ok(report);
        }
        std::thread::sleep(Duration::from_micros(200));
    }
    report.initial_published = buffer.published_count();
    while !stop.load(Ordering::Acquire) {
        let stats = trainer.step(field, buffer, intr, sbox)?;
        report.steps += 1;
        report.final_loss = stats.loss;
        report.step_max_frame.push(stats.max_frame as u32);
    }
    report.wall = started.elapsed();
    Ok(report)
}

/// Fixed-budget training over an already-filled buffer.
pub fn train_steps(
    field: &mut RadianceField,
    trainer: &mut Trainer,
    buffer: &FrameBuffer,
    intr: &CameraIntrinsics,
    sbox: &SceneBox,
    steps: usize,
) -> Result<TrainReport, TrainError> {
    let started = Instant::now();
    let initial_published = buffer.published_count();
    let mut report = TrainReport {
        steps: 0,
        wall: Duration::ZERO,
        final_loss: f32::NAN,
        initial_published,
        step_max_frame: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let stats = trainer.step(field, buffer, intr, sbox)?;
        report.steps += 1;
        report.final_loss = stats.loss;
        report.step_max_frame.push(stats.max_frame as u32);
    }
    report.wall = started.elapsed();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::BufferedFrame;
    use crate::nv12::RgbaImage;
    use crate::scene::Pose;
    use crate::field::FieldConfig;

    fn tiny_setup(pixel: [u8; 3]) -> (FrameBuffer, CameraIntrinsics, SceneBox) {
        let w = 8u16;
        let h = 8u16;
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 4);
        for _ in 0..(w as usize * h as usize) {
            pixels.extend_from_slice(&[pixel[0], pixel[1], pixel[2], 255]);
        }
        let buffer = FrameBuffer::new(4);
        // camera below the box looking up along +z
        let pose = Pose {
            rotation: crate::math::IDENTITY3,
            translation: [0.0, 0.0, -2.0],
        };
        buffer.publish_batch(vec![BufferedFrame {
            image: RgbaImage::new(w, h, pixels).unwrap(),
            pose,
            timestamp: 0,
        }]);
        let intr = CameraIntrinsics::pinhole(8.0, 8.0, 4.0, 4.0, w, h);
        let sbox = SceneBox::new([0.0, 0.0, 0.0], 0.5);
        (buffer, intr, sbox)
    }

    fn tiny_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_rays: 16,
            samples_per_ray: 8,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let (_, intr, sbox) = tiny_setup([0, 0, 0]);
        let empty = FrameBuffer::new(4);
        let mut field = RadianceField::new(FieldConfig::default());
        let mut trainer = Trainer::new(tiny_cfg(1), &field);
        assert!(matches!(
            trainer.step(&mut field, &empty, &intr, &sbox),
            Err(TrainError::EmptyBuffer)
        ));
    }

    #[test]
    fn identical_seeds_give_identical_losses() {
        let (buffer, intr, sbox) = tiny_setup([120, 40, 200]);
        let mut losses = Vec::new();
        for _ in 0..2 {
            let mut field = RadianceField::new(FieldConfig {
                init_seed: 5,
                ..FieldConfig::default()
            });
            let mut trainer = Trainer::new(tiny_cfg(9), &field);
            let a = trainer.step(&mut field, &buffer, &intr, &sbox).unwrap();
            let b = trainer.step(&mut field, &buffer, &intr, &sbox).unwrap();
            losses.push((a.loss, b.loss));
        }
        assert_eq!(losses[0], losses[1]);
    }

    #[test]
    fn near_transparent_field_has_near_zero_loss_on_black() {
        let (buffer, intr, sbox) = tiny_setup([0, 0, 0]);
        let mut field = RadianceField::new(FieldConfig::default());
        let mut trainer = Trainer::new(tiny_cfg(3), &field);
        let stats = trainer.step(&mut field, &buffer, &intr, &sbox).unwrap();
        assert!(stats.loss < 1e-2, "loss {}", stats.loss);
    }

    #[test]
    fn loss_decreases_on_constant_color_target() {
        let (buffer, intr, sbox) = tiny_setup([200, 80, 30]);
        let mut field = RadianceField::new(FieldConfig::default());
        let mut trainer = Trainer::new(
            TrainConfig {
                batch_rays: 64,
                samples_per_ray: 16,
                seed: 7,
                ..TrainConfig::default()
            },
            &field,
        );
        let first = trainer.step(&mut field, &buffer, &intr, &sbox).unwrap().loss;
        let mut last = first;
        for _ in 0..60 {
            last = trainer.step(&mut field, &buffer, &intr, &sbox).unwrap().loss;
        }
        assert!(
            last < first * 0.5,
            "loss did not drop: first {first}, last {last}"
        );
    }

    #[test]
    fn traced_forward_matches_render_path() {
        use crate::field::render;
        let (buffer, intr, sbox) = tiny_setup([90, 90, 90]);
        let field = RadianceField::new(FieldConfig::default());
        let mut trainer = Trainer::new(tiny_cfg(12), &field);
        let batch = trainer.draw_batch(&buffer, &intr, &sbox).unwrap();
        for e in &batch.entries {
            let ts = &batch.ts[e.ts_start..e.ts_start + e.ts_len];
            let a = forward_color_only(&field, &e.ray, ts, trainer.cfg.min_transmittance);
            let b = render::render_samples(&field, &e.ray, ts, trainer.cfg.min_transmittance);
            assert_eq!(a, b.color);
        }
    }

    /// Gradient of the full loss against double-precision central
    /// differences on parameters drawn across the grid and the network.
    #[test]
    fn loss_gradient_matches_central_differences() {
        use crate::field::check::FieldF64;

        let (buffer, intr, sbox) = tiny_setup([160, 60, 220]);
        let mut field = RadianceField::new(FieldConfig {
            density_bias: -0.5,
            ..FieldConfig::default()
        });
        // a few warmup steps move the parameters off their tiny init so
        // the probed gradients are healthy
        let mut trainer = Trainer::new(
            TrainConfig {
                batch_rays: 32,
                samples_per_ray: 8,
                min_transmittance: 0.0,
                seed: 21,
                ..TrainConfig::default()
            },
            &field,
        );
        for _ in 0..30 {
            trainer.step(&mut field, &buffer, &intr, &sbox).unwrap();
        }

        let batch = trainer.draw_batch(&buffer, &intr, &sbox).unwrap();
        trainer.accumulate_gradients(&field, &batch);
        let oracle = FieldF64::from_field(&field);
        let h = 1e-5f64;

        let grid_len = field.grid_table.len();
        let mut probes: Vec<usize> = vec![
            grid_len + 3,
            grid_len + 250,
            grid_len + 1040,
            grid_len + 1057,
            grid_len + 2100,
            grid_len + 4200,
        ];
        // plus grid entries actually touched by the batch
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut found = 0;
        while found < 6 {
            let idx = rng.random_range(0..grid_len);
            if trainer.gradient(idx) != 0.0 {
                probes.push(idx);
                found += 1;
            }
        }

        let mut checked = 0;
        for idx in probes {
            let analytic = trainer.gradient(idx) as f64;
            let fd = (oracle.loss_perturbed(&field, &batch, idx, h)
                - oracle.loss_perturbed(&field, &batch, idx, -h))
                / (2.0 * h);
            let denom = analytic.abs().max(fd.abs());
            if denom < 1e-5 {
                continue;
            }
            assert!(
                (analytic - fd).abs() / denom < 5e-3,
                "idx {idx}: analytic {analytic}, fd {fd}"
            );
            checked += 1;
        }
        assert!(checked >= 6, "only {checked} probes had usable gradients");
    }
}
