// scratch probe: train 600 steps, then eval train views vs holdout views at several sample counts
use nerfstream::client::{BufferedFrame, FrameBuffer};
use nerfstream::field::train::{TrainConfig, Trainer};
use nerfstream::field::{FieldConfig, RadianceField};
use nerfstream::nv12::{nv12_to_rgba, Nv12Frame};
use nerfstream::recording::load_recording;
use nerfstream::scene::{validate_pose, pixel_to_ray, CameraIntrinsics, SceneBox};
use nerfstream::field::render::{render_ray_deterministic, render_ray};
use nerfstream::metrics::psnr_from_mse;
use rand::SeedableRng;

fn eval_views(field: &RadianceField, buffer: &FrameBuffer, intr: &CameraIntrinsics, sbox: &SceneBox, views: &[usize], n: usize, stratified: bool) -> f64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let (mut sum, mut cnt) = (0f64, 0usize);
    for &idx in views {
        let frame = buffer.get(idx).unwrap();
        for v in 0..intr.height as usize {
            for u in 0..intr.width as usize {
                let ray = pixel_to_ray(intr, &frame.pose, sbox, u as f64 + 0.5, v as f64 + 0.5).unwrap();
                let out = if stratified { render_ray(field, &ray, n, &mut rng) } else { render_ray_deterministic(field, &ray, n) };
                let gt = frame.image.rgba(u, v);
                for ch in 0..3 {
                    let d = out.color[ch] as f64 - gt[ch] as f64 / 255.0;
                    sum += d * d; cnt += 1;
                }
            }
        }
    }
    psnr_from_mse(sum / cnt as f64)
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
    let mut trainer = Trainer::new(TrainConfig { batch_rays: 1024, samples_per_ray: 48, holdout_every: Some(10), seed: 7, ..TrainConfig::default() }, &field);
    for _ in 0..600 { trainer.step(&mut field, &buffer, &intr, &sbox).unwrap(); }
    println!("train views (1,2,3) midpoint48:  {:.2}", eval_views(&field, &buffer, &intr, &sbox, &[1,2,3], 48, false));
    println!("train views (1,2,3) midpoint128: {:.2}", eval_views(&field, &buffer, &intr, &sbox, &[1,2,3], 128, false));
    println!("train views (1,2,3) strat48:     {:.2}", eval_views(&field, &buffer, &intr, &sbox, &[1,2,3], 48, true));
    println!("holdout (0,10,20) midpoint48:    {:.2}", eval_views(&field, &buffer, &intr, &sbox, &[0,10,20], 48, false));
    println!("holdout (0,10,20) midpoint128:   {:.2}", eval_views(&field, &buffer, &intr, &sbox, &[0,10,20], 128, false));
}
