//! Rough per-stage timings for the field hot paths.
//! cargo run --release --example profile_field

use nerfstream::field::{net, FieldConfig, RadianceField};
use nerfstream::scene::Ray;
use std::time::Instant;

fn main() {
    let field = RadianceField::new(FieldConfig::default());
    let n = 200_000usize;

    // raw query throughput
    let mut acc = 0f32;
    let start = Instant::now();
    for i in 0..n {
        let f = (i as f32) / (n as f32);
        let q = [f.fract(), (f * 7.3).fract(), (f * 3.1).fract()];
        let (s, c) = field.query(q, [0.0, 0.6, 0.8]);
        acc += s + c[0];
    }
    let dt = start.elapsed();
    println!(
        "query: {:.0} ns/sample ({acc:.3})",
        dt.as_nanos() as f64 / n as f64
    );

    // encoding alone
    let start = Instant::now();
    let mut acc = 0f32;
    for i in 0..n {
        let f = (i as f32) / (n as f32);
        let q = [f.fract(), (f * 7.3).fract(), (f * 3.1).fract()];
        let enc = field.encode_position(q);
        acc += enc[0] + enc[15];
    }
    let dt = start.elapsed();
    println!(
        "encode: {:.0} ns/sample ({acc:.3})",
        dt.as_nanos() as f64 / n as f64
    );

    // density branch alone
    let enc = field.encode_position([0.3, 0.4, 0.5]);
    let mut trace = net::NetTrace::default();
    let start = Instant::now();
    let mut acc = 0f32;
    for _ in 0..n {
        net::forward_density(&field.net, &enc, &mut trace);
        acc += trace.sigma;
    }
    let dt = start.elapsed();
    println!(
        "density mlp: {:.0} ns/sample ({acc:.3})",
        dt.as_nanos() as f64 / n as f64
    );

    // color branch alone
    let sh = net::sh_basis([0.0, 0.6, 0.8]);
    let start = Instant::now();
    let mut acc = 0f32;
    for _ in 0..n {
        net::forward_color(&field.net, &sh, &mut trace);
        acc += trace.color[0];
    }
    let dt = start.elapsed();
    println!(
        "color mlp: {:.0} ns/sample ({acc:.3})",
        dt.as_nanos() as f64 / n as f64
    );

    // full render of one ray, amortized per sample
    let ray = Ray {
        origin: [0.05, 0.5, 0.5],
        direction: [1.0, 0.001, 0.001],
        t_near: 0.0,
        t_far: 0.9,
    };
    let start = Instant::now();
    let reps = n / 64;
    let mut acc = 0f32;
    for _ in 0..reps {
        let out = nerfstream::field::render::render_ray_deterministic(&field, &ray, 64);
        acc += out.opacity;
    }
    let dt = start.elapsed();
    println!(
        "render: {:.0} ns/sample ({acc:.3})",
        dt.as_nanos() as f64 / (reps * 64) as f64
    );

    // training phases
    use nerfstream::client::{BufferedFrame, FrameBuffer};
    use nerfstream::field::train::{TrainConfig, Trainer};
    use nerfstream::nv12::RgbaImage;
    use nerfstream::scene::{CameraIntrinsics, Pose, SceneBox};

    let (w, h) = (64u16, 64u16);
    let pixels = vec![128u8; w as usize * h as usize * 4];
    let buffer = FrameBuffer::new(4);
    buffer.publish_batch(vec![BufferedFrame {
        image: RgbaImage::new(w, h, pixels).unwrap(),
        pose: Pose {
            rotation: nerfstream::math::IDENTITY3,
            translation: [0.0, 0.0, -2.0],
        },
        timestamp: 0,
    }]);
    let intr = CameraIntrinsics::pinhole(72.0, 72.0, 32.0, 32.0, w, h);
    let sbox = SceneBox::new([0.0, 0.0, 0.0], 0.4);
    let mut field = RadianceField::new(FieldConfig::default());
    let mut trainer = Trainer::new(
        TrainConfig {
            batch_rays: 1024,
            samples_per_ray: 48,
            seed: 3,
            ..TrainConfig::default()
        },
        &field,
    );
    let samples = 1024 * 48;

    let start = Instant::now();
    let batch = trainer.draw_batch(&buffer, &intr, &sbox).unwrap();
    println!(
        "draw_batch: {:.0} ns/sample",
        start.elapsed().as_nanos() as f64 / samples as f64
    );

    let start = Instant::now();
    let loss = trainer.batch_loss(&field, &batch);
    println!(
        "batch_loss fwd: {:.0} ns/sample ({loss:.4})",
        start.elapsed().as_nanos() as f64 / samples as f64
    );

    let start = Instant::now();
    let loss = trainer.accumulate_gradients(&field, &batch);
    println!(
        "fwd+bwd: {:.0} ns/sample ({loss:.4})",
        start.elapsed().as_nanos() as f64 / samples as f64
    );

    let start = Instant::now();
    trainer.apply_gradients(&mut field);
    println!(
        "adam: {:.2} ms/step",
        start.elapsed().as_secs_f64() * 1e3
    );

    let start = Instant::now();
    for _ in 0..5 {
        trainer.step(&mut field, &buffer, &intr, &sbox).unwrap();
    }
    println!(
        "full step: {:.1} ms ({:.0} ns/sample)",
        start.elapsed().as_secs_f64() * 1e3 / 5.0,
        start.elapsed().as_nanos() as f64 / (5 * samples) as f64
    );
}
