// scratch: train, then dump gt/rendered holdout views as PPM for inspection
use nerfstream::client::{BufferedFrame, FrameBuffer};
use nerfstream::field::render::render_ray_deterministic;
use nerfstream::field::train::{TrainConfig, Trainer};
use nerfstream::field::{FieldConfig, RadianceField};
use nerfstream::nv12::{nv12_to_rgba, Nv12Frame};
use nerfstream::recording::load_recording;
use nerfstream::scene::{pixel_to_ray, validate_pose, CameraIntrinsics, SceneBox};
use std::io::Write;

fn save_ppm(path: &str, w: usize, h: usize, rgb: &[u8]) {
    let mut f = std::fs::File::create(path).unwrap();
    write!(f, "P6\n{w} {h}\n255\n").unwrap();
    f.write_all(rgb).unwrap();
}

fn main() {
    let rec = load_recording("/tmp/ns/rec60.hlns".as_ref()).unwrap();
    let buffer = FrameBuffer::new(rec.len());
    let mut frames = Vec::new();
    for e in &rec.entities {
        if let Ok(pose) = validate_pose(&e.pose) {
            let f = Nv12Frame::from_contiguous(rec.width(), rec.height(), &e.nv12).unwrap();
            frames.push(BufferedFrame { image: nv12_to_rgba(&f), pose, timestamp: e.timestamp });
        }
    }
    buffer.publish_batch(frames);
    let intr = CameraIntrinsics::from(&rec.intrinsics);
    let sbox = SceneBox::new([0.0, 0.0, 1.8], 0.5 / 1.8);
    let mut field = RadianceField::new(FieldConfig { table_log2: 14, density_bias: -1.0, ..FieldConfig::default() });
    let mut trainer = Trainer::new(TrainConfig { batch_rays: 1024, samples_per_ray: 48, holdout_every: Some(10), seed: 7, beta2: 0.95, lr_grid: 0.02, ..TrainConfig::default() }, &field);
    for _ in 0..700 { trainer.step(&mut field, &buffer, &intr, &sbox).unwrap(); }

    let w = intr.width as usize;
    let h = intr.height as usize;
    for (tag, idx) in [("holdout0", 0usize), ("holdout30", 30), ("train1", 1)] {
        let frame = buffer.get(idx).unwrap();
        let mut gt = Vec::with_capacity(w * h * 3);
        let mut render = Vec::with_capacity(w * h * 3);
        let mut depth = Vec::with_capacity(w * h * 3);
        for v in 0..h {
            for u in 0..w {
                let px = frame.image.rgba(u, v);
                gt.extend_from_slice(&px[..3]);
                let ray = pixel_to_ray(&intr, &frame.pose, &sbox, u as f64 + 0.5, v as f64 + 0.5).unwrap();
                let out = render_ray_deterministic(&field, &ray, 64);
                for c in out.color { render.push((c.clamp(0.0, 1.0) * 255.0) as u8); }
                let d = (out.depth / 2.0).clamp(0.0, 1.0);
                for _ in 0..3 { depth.push((d * 255.0) as u8); }
            }
        }
        save_ppm(&format!("/tmp/ns/{tag}_gt.ppm"), w, h, &gt);
        save_ppm(&format!("/tmp/ns/{tag}_render.ppm"), w, h, &render);
        save_ppm(&format!("/tmp/ns/{tag}_depth.ppm"), w, h, &depth);
    }
    println!("dumped to /tmp/ns");
}
