use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nerfstream::client::FrameBuffer;
use nerfstream::config::RunConfig;
use nerfstream::extract::{bench_csv, benchmark_extraction, extract_points, write_ply, ExtractConfig};
use nerfstream::field::load_checkpoint;
use nerfstream::nv12::{nv12_to_rgba, Nv12Frame};
use nerfstream::pipeline::{format_report_table, run_pipeline};
use nerfstream::recording::{load_recording, save_recording, Recording};
use nerfstream::scene::{validate_pose, CameraIntrinsics};
use nerfstream::server::{serve, ReplayPlan};
use nerfstream::synthetic::{generate_recording, SyntheticSceneConfig};
use std::collections::BTreeSet;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "nerfstream",
    about = "Sensor-stream replay, online radiance-field training and fast point-cloud extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to a recording file.
    RecordSynthetic {
        /// Output recording path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        views: usize,
        /// Square frame size in pixels (even).
        #[arg(long, default_value_t = 64)]
        size: u16,
        #[arg(long, default_value_t = 72.0)]
        focal: f64,
        /// Number of frames to stamp with invalid poses, spread evenly.
        #[arg(long, default_value_t = 0)]
        invalid: usize,
    },
    /// Replay a recording to one client over TCP.
    Serve {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long, default_value_t = 5.0)]
        fps: f64,
        /// Inclusive index range, e.g. 10..250
        #[arg(long)]
        range: Option<String>,
        /// Comma-separated indices to cut from the stream.
        #[arg(long)]
        drop: Option<String>,
    },
    /// Run the full pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Repeat the run for each framerate and print a summary table.
        #[arg(long)]
        fps_sweep: Option<String>,
    },
    /// Extract a point cloud from a checkpointed field.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Recording supplying the rays (training views).
        #[arg(long)]
        recording: PathBuf,
        #[arg(long, default_value_t = 500_000)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 96)]
        samples: usize,
    },
    /// Time extraction over a list of target counts.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        /// Comma-separated ray targets, e.g. 50000,500000
        #[arg(long, default_value = "50000,500000")]
        targets: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 96)]
        samples: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::RecordSynthetic {
            out,
            views,
            size,
            focal,
            invalid,
        } => {
            if size % 2 != 0 || size == 0 {
                bail!("frame size must be even and nonzero");
            }
            let mut invalid_pose_indices = BTreeSet::new();
            if invalid > 0 {
                let stride = (views as f64 / invalid as f64).max(1.0);
                for i in 0..invalid {
                    invalid_pose_indices.insert(((i as f64 * stride) as usize).min(views - 1));
                }
            }
            let cfg = SyntheticSceneConfig {
                width: size,
                height: size,
                views,
                focal_px: focal,
                invalid_pose_indices,
                ..SyntheticSceneConfig::default()
            };
            let (recording, geom) = generate_recording(&cfg);
            save_recording(&recording, &out).context("write recording")?;
            let sbox = geom.recommended_box();
            println!(
                "wrote {} views ({}x{}) to {}",
                recording.len(),
                size,
                size,
                out.display()
            );
            println!(
                "scene box: center = [{:.3}, {:.3}, {:.3}], scale = {:.4}",
                sbox.center[0], sbox.center[1], sbox.center[2], sbox.scale
            );
        }
        Command::Serve {
            recording,
            listen,
            fps,
            range,
            drop,
        } => {
            let rec = load_recording(&recording).context("load recording")?;
            let mut plan = ReplayPlan::full(&rec, fps);
            if let Some(spec) = range {
                plan.range = parse_range(&spec)?;
            }
            if let Some(spec) = drop {
                plan.drop = parse_indices(&spec)?;
            }
            let listener = TcpListener::bind(&listen).context("bind listener")?;
            println!(
                "serving {} entities at {} fps on {listen}",
                plan.planned_count(&rec),
                fps
            );
            let summary = serve(&rec, &plan, &listener)?;
            println!(
                "session ended ({:?}): {} frames sent in {:.2} s",
                summary.end,
                summary.frames_sent,
                summary.stream_duration.as_secs_f64()
            );
        }
        Command::Run { config, fps_sweep } => {
            let base = RunConfig::load(&config).context("load config")?;
            match fps_sweep {
                None => {
                    let report = run_pipeline(&base)?;
                    println!("{}", report.summary_line());
                    println!("{}", format_report_table(std::slice::from_ref(&report)));
                }
                Some(spec) => {
                    let mut reports = Vec::new();
                    for fps in spec.split(',') {
                        let fps: f64 = fps.trim().parse().context("parse fps")?;
                        let mut cfg = base.clone();
                        cfg.fps = fps;
                        cfg.batch_n = None; // track the framerate
                        println!("running at {fps} fps ...");
                        let report = run_pipeline(&cfg)?;
                        println!("  {}", report.summary_line());
                        reports.push(report);
                    }
                    println!("{}", format_report_table(&reports));
                }
            }
        }
        Command::Extract {
            checkpoint,
            recording,
            target,
            out,
            seed,
            samples,
        } => {
            let (field, sbox) = load_checkpoint(&checkpoint).context("load checkpoint")?;
            let rec = load_recording(&recording).context("load recording")?;
            let (buffer, intr) = buffer_from_recording(&rec);
            let cfg = ExtractConfig {
                samples_per_ray: samples,
                seed,
                ..ExtractConfig::default()
            };
            let (cloud, report) = extract_points(&field, &buffer, &intr, &sbox, target, &cfg)?;
            write_ply(&cloud, &out)?;
            println!(
                "extracted {} / {} points in {:.3} s -> {}",
                report.hit_points,
                report.target_rays,
                report.wall_time.as_secs_f64(),
                out.display()
            );
        }
        Command::Bench {
            checkpoint,
            recording,
            targets,
            csv,
            seed,
            samples,
        } => {
            let (field, sbox) = load_checkpoint(&checkpoint).context("load checkpoint")?;
            let rec = load_recording(&recording).context("load recording")?;
            let (buffer, intr) = buffer_from_recording(&rec);
            let targets: Vec<usize> = targets
                .split(',')
                .map(|t| t.trim().parse().context("parse target"))
                .collect::<Result<_>>()?;
            let cfg = ExtractConfig {
                samples_per_ray: samples,
                seed,
                ..ExtractConfig::default()
            };
            let rows = benchmark_extraction(&field, &buffer, &intr, &sbox, &targets, &cfg)?;
            let table = bench_csv(&rows);
            print!("{table}");
            if let Some(path) = csv {
                std::fs::write(&path, table).context("write csv")?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

/// Decodes a recording straight into a frame buffer, dropping invalid
/// poses the same way the live client does.
fn buffer_from_recording(rec: &Recording) -> (Arc<FrameBuffer>, CameraIntrinsics) {
    let buffer = FrameBuffer::new(rec.len().max(1));
    let mut frames = Vec::new();
    for e in &rec.entities {
        if let Ok(pose) = validate_pose(&e.pose) {
            let frame = Nv12Frame::from_contiguous(rec.width(), rec.height(), &e.nv12)
                .expect("recording frames are self-consistent");
            frames.push(nerfstream::client::BufferedFrame {
                image: nv12_to_rgba(&frame),
                pose,
                timestamp: e.timestamp,
            });
        }
    }
    buffer.publish_batch(frames);
    (Arc::new(buffer), CameraIntrinsics::from(&rec.intrinsics))
}

fn parse_range(spec: &str) -> Result<(usize, usize)> {
    let (lo, hi) = spec
        .split_once("..")
        .context("range must look like 10..250")?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn parse_indices(spec: &str) -> Result<BTreeSet<usize>> {
    spec.split(',')
        .map(|s| s.trim().parse::<usize>().context("parse drop index"))
        .collect()
}
