//! The stream client: connects, requests intrinsics and the stream,
//! validates poses, converts frames to RGBA and publishes them in batches
//! of `batch_n` into a bounded frame buffer that the trainer reads
//! concurrently.

use crate::nv12::{nv12_to_rgba, Nv12Frame, RgbaImage};
use crate::scene::{convert_device_pose, validate_pose, Pose, PoseRejection};
use crate::wire::{
    decode_intrinsics, encode_instruction, EntityDecoder, Instruction, IntrinsicsResponse,
    WireError, INTRINSICS_LEN,
};
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::Sender;
use std::sync::OnceLock;
use std::time::{Duration, Instant};
use thiserror::Error;

/// One decoded, validated frame as the trainer sees it.
#[derive(Debug)]
pub struct BufferedFrame {
    pub image: RgbaImage,
    pub pose: Pose,
    pub timestamp: u64,
}

/// Bounded append-only frame store shared between the network loop (single
/// producer) and any number of readers.
///
/// Publication is a batch of slot writes followed by a release store of the
/// published count; readers acquire the count and only index below it, so
/// they always observe fully written, immutable frames. Nothing is ever
/// evicted or mutated after publication.
pub struct FrameBuffer {
    slots: Vec<OnceLock<BufferedFrame>>,
    published: AtomicUsize,
}

impl FrameBuffer {
    pub fn new(capacity: usize) -> Self {
        let mut slots = Vec::with_capacity(capacity);
        slots.resize_with(capacity, OnceLock::new);
        Self {
            slots,
            published: AtomicUsize::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn published_count(&self) -> usize {
        self.published.load(Ordering::Acquire)
    }

    /// Frame `i`, available iff `i < published_count()`.
    pub fn get(&self, i: usize) -> Option<&BufferedFrame> {
        if i >= self.published_count() {
            return None;
        }
        self.slots[i].get()
    }

    /// Appends a batch and makes it visible atomically. Single producer.
    /// Returns the new published count.
    pub fn publish_batch(&self, frames: Vec<BufferedFrame>) -> usize {
        let start = self.published.load(Ordering::Relaxed);
        assert!(
            start + frames.len() <= self.slots.len(),
            "publish beyond buffer capacity"
        );
        let total = start + frames.len();
        for (j, f) in frames.into_iter().enumerate() {
            if self.slots[start + j].set(f).is_err() {
                panic!("frame slot {} written twice", start + j);
            }
        }
        self.published.store(total, Ordering::Release);
        total
    }
}

/// Events the client raises for the orchestrator.
#[derive(Debug, Clone)]
pub enum StreamEvent {
    /// First batch published; training may begin.
    TrainingStart {
        published: usize,
        intrinsics: IntrinsicsResponse,
    },
    /// Server closed the stream; the residual batch has been published.
    EndOfStream,
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Frames per publication; the residual batch may be smaller.
    pub batch_n: usize,
    /// Framerate requested in the StartStream instruction.
    pub fps_request: u8,
    /// Apply the device-to-renderer axis flip to incoming poses.
    pub convert_device_poses: bool,
    pub read_timeout: Duration,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            batch_n: 1,
            fps_request: 30,
            convert_device_poses: false,
            read_timeout: Duration::from_secs(30),
        }
    }
}

/// Accounting for one stream run; `rejected + buffered + dropped` always
/// equals `received`.
#[derive(Debug, Clone)]
pub struct StreamReport {
    pub received: usize,
    pub buffered: usize,
    pub rejected: usize,
    pub dropped: usize,
    /// Size of each publication in order.
    pub publications: Vec<usize>,
    pub rejections: Vec<(usize, PoseRejection)>,
    pub intrinsics: Option<IntrinsicsResponse>,
    pub duration: Duration,
}

impl StreamReport {
    fn new() -> Self {
        Self {
            received: 0,
            buffered: 0,
            rejected: 0,
            dropped: 0,
            publications: Vec::new(),
            rejections: Vec::new(),
            intrinsics: None,
            duration: Duration::ZERO,
        }
    }
}

#[derive(Debug, Error)]
pub enum StreamErrorKind {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Wire(#[from] WireError),
    #[error("frame decode: {0}")]
    Pixel(#[from] crate::nv12::Nv12Error),
    #[error("batch size must be at least 1")]
    BadBatch,
}

/// Stream failure carrying the partial accounting gathered so far.
#[derive(Debug, Error)]
#[error("{kind}")]
pub struct StreamError {
    pub kind: StreamErrorKind,
    pub partial: StreamReport,
}

/// Connects to the server, queries intrinsics, starts the stream and fills
/// the buffer until the server closes. Emits `TrainingStart` right after
/// the first publication and `EndOfStream` after the residual batch.
pub fn run_stream<A: ToSocketAddrs>(
    addr: A,
    cfg: &StreamConfig,
    buffer: &FrameBuffer,
    events: Option<&Sender<StreamEvent>>,
) -> Result<StreamReport, StreamError> {
    let mut report = StreamReport::new();
    let started = Instant::now();
    let run = || -> Result<(), StreamErrorKind> {
        if cfg.batch_n == 0 {
            return Err(StreamErrorKind::BadBatch);
        }
        let mut sock = TcpStream::connect(addr).map_err(StreamErrorKind::Io)?;
        sock.set_nodelay(true).ok();
        sock.set_read_timeout(Some(cfg.read_timeout)).ok();

        sock.write_all(&encode_instruction(Instruction::QueryIntrinsics))?;
        let mut intr_bytes = [0u8; INTRINSICS_LEN];
        sock.read_exact(&mut intr_bytes)?;
        let intrinsics = decode_intrinsics(&intr_bytes)?;
        report.intrinsics = Some(intrinsics);

        sock.write_all(&encode_instruction(Instruction::StartStream {
            width: intrinsics.width,
            height: intrinsics.height,
            fps: cfg.fps_request,
        }))?;

        let mut decoder = EntityDecoder::new(intrinsics.width, intrinsics.height)?;
        let mut staged: Vec<BufferedFrame> = Vec::with_capacity(cfg.batch_n);
        let mut training_started = false;
        let mut chunk = vec![0u8; 64 * 1024];

        let publish = |staged: &mut Vec<BufferedFrame>,
                           report: &mut StreamReport,
                           training_started: &mut bool| {
            if staged.is_empty() {
                return;
            }
            let n = staged.len();
            let published = buffer.publish_batch(std::mem::take(staged));
            report.publications.push(n);
            if !*training_started {
                *training_started = true;
                if let Some(tx) = events {
                    let _ = tx.send(StreamEvent::TrainingStart {
                        published,
                        intrinsics,
                    });
                }
            }
        };

        loop {
            let n = match sock.read(&mut chunk) {
                Ok(0) => break, // server closed: end of stream
                Ok(n) => n,
                Err(e) => return Err(StreamErrorKind::Io(e)),
            };
            decoder.feed(&chunk[..n]);
            while let Some(entity) = decoder.next_entity()? {
                let index = report.received;
                report.received += 1;
                let pose = match validate_pose(&entity.pose) {
                    Ok(p) => {
                        if cfg.convert_device_poses {
                            convert_device_pose(&p)
                        } else {
                            p
                        }
                    }
                    Err(reason) => {
                        report.rejected += 1;
                        report.rejections.push((index, reason));
                        continue;
                    }
                };
                if report.buffered + staged.len() >= buffer.capacity() {
                    report.dropped += 1;
                    continue;
                }
                let frame =
                    Nv12Frame::from_contiguous(intrinsics.width, intrinsics.height, &entity.nv12)?;
                staged.push(BufferedFrame {
                    image: nv12_to_rgba(&frame),
                    pose,
                    timestamp: entity.timestamp,
                });
                if staged.len() == cfg.batch_n {
                    report.buffered += staged.len();
                    publish(&mut staged, &mut report, &mut training_started);
                }
            }
        }
        report.buffered += staged.len();
        publish(&mut staged, &mut report, &mut training_started);
        if let Some(tx) = events {
            let _ = tx.send(StreamEvent::EndOfStream);
        }
        Ok(())
    };
    let result = run();
    report.duration = started.elapsed();
    match result {
        Ok(()) => Ok(report),
        Err(kind) => Err(StreamError {
            kind,
            partial: report,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(ts: u64) -> BufferedFrame {
        BufferedFrame {
            image: RgbaImage::new(2, 2, vec![0; 16]).unwrap(),
            pose: Pose::identity(),
            timestamp: ts,
        }
    }

    #[test]
    fn publication_is_prefix_consistent() {
        let buf = FrameBuffer::new(8);
        assert_eq!(buf.published_count(), 0);
        assert!(buf.get(0).is_none());

        buf.publish_batch(vec![frame(1), frame(2), frame(3)]);
        assert_eq!(buf.published_count(), 3);
        assert_eq!(buf.get(2).unwrap().timestamp, 3);
        assert!(buf.get(3).is_none());

        buf.publish_batch(vec![frame(4)]);
        assert_eq!(buf.published_count(), 4);
        assert_eq!(buf.get(3).unwrap().timestamp, 4);
    }

    #[test]
    #[should_panic(expected = "publish beyond buffer capacity")]
    fn publishing_past_capacity_panics() {
        let buf = FrameBuffer::new(1);
        buf.publish_batch(vec![frame(1), frame(2)]);
    }
}
