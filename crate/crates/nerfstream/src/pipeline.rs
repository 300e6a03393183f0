//! End-to-end orchestration: serve a recording, stream it into the buffer,
//! train online while frames arrive, then extract geometry the moment the
//! stream ends. Runtime accounting follows the paper-style split: training
//! time from the stream-triggered start until the stream ends, then the 3D
//! reconstruction time, then their sum.

use crate::client::{run_stream, FrameBuffer, StreamConfig, StreamEvent, StreamReport};
use crate::config::RunConfig;
use crate::extract::{extract_points, write_ply, ExtractError, PointCloud};
use crate::field::render::render_ray_deterministic;
use crate::field::train::{
    run_online_training, train_steps, TrainError, TrainReport, Trainer,
};
use crate::field::{save_checkpoint, RadianceField};
use crate::metrics::{format_db, psnr_from_mse};
use crate::recording::{load_recording, Recording};
use crate::scene::{pixel_to_ray, CameraIntrinsics, SceneBox};
use crate::server::{bind_local, serve, ReplayPlan, ServeError, SessionSummary};
use crate::wire::IntrinsicsResponse;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("recording: {0}")]
    Recording(#[from] crate::recording::RecordingError),
    #[error("server: {0}")]
    Serve(#[from] ServeError),
    #[error("stream: {0}")]
    Stream(#[from] crate::client::StreamError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("extraction: {0}")]
    Extract(#[from] ExtractError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::field::CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker thread panicked: {0}")]
    WorkerPanic(&'static str),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
}

/// Everything one run produced.
#[derive(Debug)]
pub struct RunReport {
    /// Pacing rate, None for offline (unpaced) runs.
    pub fps: Option<f64>,
    pub train_seconds: f64,
    pub extract_seconds: f64,
    /// Train + extraction, the paper-style accumulated runtime.
    pub accumulated_seconds: f64,
    /// Held-out PSNR, when a holdout set existed.
    pub psnr_db: Option<f64>,
    pub target_rays: usize,
    pub hit_points: usize,
    pub eval_views: usize,
    pub stream: StreamReport,
    pub train: TrainReport,
    pub session: Option<SessionSummary>,
}

impl RunReport {
    pub fn summary_line(&self) -> String {
        format!(
            "fps {} | {} frames buffered ({} rejected, {} dropped) | {} steps in {:.2} s | 3DR {:.3} s | ACC {:.2} s | PSNR {} | hits {}/{}",
            self.fps.map_or("-".into(), |f| format!("{f}")),
            self.stream.buffered,
            self.stream.rejected,
            self.stream.dropped,
            self.train.steps,
            self.train_seconds,
            self.extract_seconds,
            self.accumulated_seconds,
            self.psnr_db.map_or("-".into(), format_db),
            self.hit_points,
            self.target_rays,
        )
    }
}

/// Loads the recording named in the config and runs the pipeline on it.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let path = cfg.recording.as_ref().ok_or_else(|| {
        crate::config::ConfigError::Invalid("run_pipeline needs a recording path".into())
    })?;
    let recording = load_recording(path)?;
    run_pipeline_on(Arc::new(recording), cfg)
}

/// Runs serve -> stream -> train -> extract on an in-memory recording.
pub fn run_pipeline_on(
    recording: Arc<Recording>,
    cfg: &RunConfig,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let offline = cfg.offline_steps.is_some();
    let sbox = cfg.scene_box();

    // server
    let (listener, addr) = bind_local()?;
    let plan = ReplayPlan {
        fps: if offline { f64::INFINITY } else { cfg.fps },
        range: cfg
            .range
            .unwrap_or((0, recording.len().saturating_sub(1))),
        drop: cfg.drop_set(),
    };
    plan.validate(&recording)?;
    let server_rec = Arc::clone(&recording);
    let server = std::thread::spawn(move || serve(&server_rec, &plan, &listener));

    // client
    let buffer = Arc::new(FrameBuffer::new(cfg.buffer_capacity));
    let (tx, rx) = mpsc::channel::<StreamEvent>();
    let stream_cfg = StreamConfig {
        batch_n: cfg.effective_batch_n(),
        fps_request: cfg.fps.round().clamp(0.0, 255.0) as u8,
        convert_device_poses: cfg.device_pose_convention,
        read_timeout: Duration::from_secs(120),
    };
    let client_buffer = Arc::clone(&buffer);
    let client = std::thread::spawn(move || {
        run_stream(addr, &stream_cfg, &client_buffer, Some(&tx))
    });

    // training
    let mut field = RadianceField::new(cfg.field_config());
    let mut trainer = Trainer::new(cfg.train_config(), &field);
    let mut intrinsics: Option<IntrinsicsResponse> = None;
    let train_report;

    if offline {
        // drain the whole stream first, then a fixed step budget
        loop {
            match rx.recv_timeout(Duration::from_secs(600)) {
                Ok(StreamEvent::TrainingStart { intrinsics: i, .. }) => intrinsics = Some(i),
                Ok(StreamEvent::EndOfStream) => break,
                Err(_) => return Err(PipelineError::Timeout("end of stream")),
            }
        }
        let steps = cfg.offline_steps.unwrap();
        train_report = match intrinsics {
            Some(intr) => {
                let intr = CameraIntrinsics::from(&intr);
                train_steps(&mut field, &mut trainer, &buffer, &intr, &sbox, steps)?
            }
            None => empty_train_report(),
        };
    } else {
        // online: trainer starts on the stream's signal, stops at its end
        let stop = Arc::new(AtomicBool::new(false));
        let mut idle = Some((field, trainer));
        let mut worker = None;
        loop {
            match rx.recv_timeout(Duration::from_secs(600)) {
                Ok(StreamEvent::TrainingStart { intrinsics: i, .. }) => {
                    intrinsics = Some(i);
                    if let Some((mut wfield, mut wtrainer)) = idle.take() {
                        let intr = CameraIntrinsics::from(&i);
                        let wbuffer = Arc::clone(&buffer);
                        let wstop = Arc::clone(&stop);
                        worker = Some(std::thread::spawn(move || {
                            let report = run_online_training(
                                &mut wfield,
                                &mut wtrainer,
                                &wbuffer,
                                &intr,
                                &sbox,
                                &wstop,
                            );
                            (wfield, report)
                        }));
                    }
                }
                Ok(StreamEvent::EndOfStream) => break,
                Err(_) => return Err(PipelineError::Timeout("stream events")),
            }
        }
        stop.store(true, Ordering::Release);
        match worker {
            Some(handle) => {
                let (f, report) = handle
                    .join()
                    .map_err(|_| PipelineError::WorkerPanic("trainer"))?;
                field = f;
                train_report = report?;
            }
            None => {
                // stream ended without a single valid frame
                let (f, _) = idle.take().expect("field unmoved");
                field = f;
                train_report = empty_train_report();
            }
        }
    }

    let stream_report = client
        .join()
        .map_err(|_| PipelineError::WorkerPanic("client"))??;
    let session = server
        .join()
        .map_err(|_| PipelineError::WorkerPanic("server"))??;

    // held-out evaluation (not part of the accumulated runtime)
    let mut psnr_db = None;
    let mut eval_views = 0usize;
    if let (Some(resp), Some(k)) = (intrinsics.as_ref(), cfg.holdout_every) {
        if train_report.steps > 0 {
            let intr = CameraIntrinsics::from(resp);
            let (db, views) = evaluate_holdout(
                &field,
                &buffer,
                &intr,
                &sbox,
                k,
                cfg.eval_max_views,
                cfg.eval_samples_per_ray,
            );
            psnr_db = db;
            eval_views = views;
        }
    }

    // extraction
    let mut hit_points = 0usize;
    let mut extract_seconds = 0f64;
    let mut target_rays = 0usize;
    let mut cloud = PointCloud::default();
    if let (Some(resp), Some(&target)) = (intrinsics.as_ref(), cfg.extract.targets.first()) {
        if buffer.published_count() > 0 {
            let intr = CameraIntrinsics::from(resp);
            let (c, report) =
                extract_points(&field, &buffer, &intr, &sbox, target, &cfg.extract_config())?;
            hit_points = report.hit_points;
            extract_seconds = report.wall_time.as_secs_f64();
            target_rays = report.target_rays;
            cloud = c;
        }
    }

    // outputs
    if let Some(path) = &cfg.output.ply {
        if !cloud.points.is_empty() {
            write_ply(&cloud, path)?;
        }
    }
    if let Some(path) = &cfg.output.csv {
        let rows = [crate::extract::BenchRow {
            target: target_rays,
            hits: hit_points,
            seconds: extract_seconds,
        }];
        std::fs::write(path, crate::extract::bench_csv(&rows))?;
    }
    if let Some(path) = &cfg.output.checkpoint {
        save_checkpoint(&field, &sbox, path)?;
    }

    let train_seconds = train_report.wall.as_secs_f64();
    let report = RunReport {
        fps: if offline { None } else { Some(cfg.fps) },
        train_seconds,
        extract_seconds,
        accumulated_seconds: train_seconds + extract_seconds,
        psnr_db,
        target_rays,
        hit_points,
        eval_views,
        stream: stream_report,
        train: train_report,
        session: Some(session),
    };
    if let Some(path) = &cfg.output.report {
        std::fs::write(path, format!("{}\n", report.summary_line()))?;
    }
    Ok(report)
}

fn empty_train_report() -> TrainReport {
    TrainReport {
        steps: 0,
        wall: Duration::ZERO,
        final_loss: f32::NAN,
        initial_published: 0,
        step_max_frame: Vec::new(),
    }
}

/// Renders the held-out views (every k-th buffered frame, strided down to
/// `max_views`) and returns the PSNR over their aggregate MSE.
pub fn evaluate_holdout(
    field: &RadianceField,
    buffer: &FrameBuffer,
    intr: &CameraIntrinsics,
    sbox: &SceneBox,
    holdout_every: usize,
    max_views: Option<usize>,
    samples_per_ray: usize,
) -> (Option<f64>, usize) {
    let published = buffer.published_count();
    let holdout: Vec<usize> = (0..published)
        .filter(|i| i % holdout_every.max(1) == 0)
        .collect();
    if holdout.is_empty() {
        return (None, 0);
    }
    let selected: Vec<usize> = match max_views {
        Some(m) if m > 0 && holdout.len() > m => {
            let stride = holdout.len() as f64 / m as f64;
            (0..m).map(|i| holdout[(i as f64 * stride) as usize]).collect()
        }
        _ => holdout,
    };

    let mut sum = 0f64;
    let mut count = 0usize;
    for &idx in &selected {
        let frame = buffer.get(idx).expect("published frame");
        for v in 0..intr.height as usize {
            for u in 0..intr.width as usize {
                let Ok(ray) = pixel_to_ray(intr, &frame.pose, sbox, u as f64 + 0.5, v as f64 + 0.5)
                else {
                    continue;
                };
                let out = render_ray_deterministic(field, &ray, samples_per_ray);
                let gt = frame.image.rgba(u, v);
                for ch in 0..3 {
                    let d = out.color[ch] as f64 - gt[ch] as f64 / 255.0;
                    sum += d * d;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return (None, selected.len());
    }
    (Some(psnr_from_mse(sum / count as f64)), selected.len())
}

/// Formats sweep results the way the runtime tables in the report read:
/// framerate, training time, reconstruction time, accumulated, PSNR.
pub fn format_report_table(rows: &[RunReport]) -> String {
    let mut out = String::new();
    out.push_str("FR      Train      3DR        ACC        PSNR     Hits\n");
    out.push_str("fps     s          s          s          dB\n");
    for r in rows {
        let fps = r.fps.map_or("-".to_string(), |f| {
            if f.fract() == 0.0 {
                format!("{}", f as i64)
            } else {
                format!("{f:.1}")
            }
        });
        out.push_str(&format!(
            "{:<7} {:<10.3} {:<10.3} {:<10.3} {:<8} {}\n",
            fps,
            r.train_seconds,
            r.extract_seconds,
            r.accumulated_seconds,
            r.psnr_db.map_or("-".to_string(), format_db),
            r.hit_points,
        ));
    }
    out
}
