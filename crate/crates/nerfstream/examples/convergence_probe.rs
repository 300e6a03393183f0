//! Prints the loss / held-out-PSNR trajectory while training offline on a
//! recording. cargo run --release --example convergence_probe -- rec.hlns

use nerfstream::client::{BufferedFrame, FrameBuffer};
use nerfstream::field::train::{TrainConfig, Trainer};
use nerfstream::field::{FieldConfig, RadianceField};
use nerfstream::nv12::{nv12_to_rgba, Nv12Frame};
use nerfstream::pipeline::evaluate_holdout;
use nerfstream::recording::load_recording;
use nerfstream::scene::{validate_pose, CameraIntrinsics, SceneBox};
use std::time::Instant;

fn main() {
    let path = std::env::args().nth(1).expect("recording path");
    let rec = load_recording(path.as_ref()).expect("load recording");
    let buffer = FrameBuffer::new(rec.len());
    let mut frames = Vec::new();
    for e in &rec.entities {
        if let Ok(pose) = validate_pose(&e.pose) {
            let f = Nv12Frame::from_contiguous(rec.width(), rec.height(), &e.nv12).unwrap();
            frames.push(BufferedFrame {
                image: nv12_to_rgba(&f),
                pose,
                timestamp: e.timestamp,
            });
        }
    }
    buffer.publish_batch(frames);
    let intr = CameraIntrinsics::from(&rec.intrinsics);
    let sbox = SceneBox::new([0.0, 0.0, 1.8], 0.5 / 1.8);

    let arg = |name: &str, default: f64| -> f64 {
        std::env::args()
            .skip_while(|a| a != name)
            .nth(1)
            .map(|v| v.parse().unwrap())
            .unwrap_or(default)
    };

    let mut field = RadianceField::new(FieldConfig {
        table_log2: arg("--table", 14.0) as u32,
        density_bias: arg("--bias", -1.0) as f32,
        ..FieldConfig::default()
    });
    let cfg = TrainConfig {
        batch_rays: arg("--batch", 1024.0) as usize,
        samples_per_ray: arg("--samples", 48.0) as usize,
        lr_grid: arg("--lr-grid", 1e-2) as f32,
        lr_net: arg("--lr-net", 1e-3) as f32,
        beta2: arg("--beta2", 0.99) as f32,
        holdout_every: Some(10),
        seed: 7,
        ..TrainConfig::default()
    };
    let steps = arg("--steps", 2000.0) as usize;
    let mut trainer = Trainer::new(cfg, &field);

    let start = Instant::now();
    let mut window = 0f64;
    for s in 1..=steps {
        let stats = trainer.step(&mut field, &buffer, &intr, &sbox).unwrap();
        window += stats.loss as f64;
        if s % 100 == 0 {
            let (psnr, _) = evaluate_holdout(&field, &buffer, &intr, &sbox, 10, Some(3), 48);
            println!(
                "step {s:5}  loss(avg100) {:.5}  holdout {}  [{:.1} s]",
                window / 100.0,
                psnr.map_or("-".into(), |p| format!("{p:.2} dB")),
                start.elapsed().as_secs_f64()
            );
            window = 0.0;
        }
    }
}
