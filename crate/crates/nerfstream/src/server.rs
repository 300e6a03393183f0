//! Replay server: presents a recorded stream over TCP the way the headset
//! would. One client per session. Supports framerate override, frame
//! ranges and drop lists, and answers intrinsics queries.

use crate::recording::Recording;
use crate::wire::{
    decode_instruction, encode_entity, encode_intrinsics, Instruction, WireError, INSTRUCTION_LEN,
};
use std::collections::BTreeSet;
use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("client protocol violation: {0}")]
    Protocol(#[from] WireError),
    #[error("client requested {req_w}x{req_h}, recording is {rec_w}x{rec_h}")]
    SizeMismatch {
        req_w: u16,
        req_h: u16,
        rec_w: u16,
        rec_h: u16,
    },
    #[error("replay plan: {0}")]
    BadPlan(String),
}

/// What to replay and how fast.
#[derive(Debug, Clone)]
pub struct ReplayPlan {
    /// Pacing rate; `f64::INFINITY` streams unpaced.
    pub fps: f64,
    /// Inclusive index interval into the recording.
    pub range: (usize, usize),
    /// Recording indices to omit; must lie within `range`.
    pub drop: BTreeSet<usize>,
}

impl ReplayPlan {
    /// Whole recording at the given rate.
    pub fn full(recording: &Recording, fps: f64) -> Self {
        Self {
            fps,
            range: (0, recording.len().saturating_sub(1)),
            drop: BTreeSet::new(),
        }
    }

    pub fn validate(&self, recording: &Recording) -> Result<(), ServeError> {
        if !(self.fps > 0.0) {
            return Err(ServeError::BadPlan(format!("fps {} not positive", self.fps)));
        }
        if recording.is_empty() {
            return Ok(());
        }
        let (lo, hi) = self.range;
        if lo > hi || hi >= recording.len() {
            return Err(ServeError::BadPlan(format!(
                "range {lo}..={hi} outside recording of {} entities",
                recording.len()
            )));
        }
        if let Some(&bad) = self.drop.iter().find(|&&i| i < lo || i > hi) {
            return Err(ServeError::BadPlan(format!(
                "drop index {bad} outside range {lo}..={hi}"
            )));
        }
        Ok(())
    }

    /// Number of entities the plan will send.
    pub fn planned_count(&self, recording: &Recording) -> usize {
        if recording.is_empty() {
            return 0;
        }
        let (lo, hi) = self.range;
        (hi - lo + 1) - self.drop.len()
    }
}

/// Why the session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    /// All planned entities were sent.
    PlanExhausted,
    /// The client sent StopStream.
    Stopped,
    /// The client closed the connection.
    ClientClosed,
}

#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub frames_sent: usize,
    pub intrinsics_queries: usize,
    pub end: SessionEnd,
    /// Wall time spent inside the streaming loop.
    pub stream_duration: Duration,
}

/// Serves exactly one client session on an already-bound listener and
/// reports what was sent. Protocol violations close the connection and
/// surface as errors.
pub fn serve(
    recording: &Recording,
    plan: &ReplayPlan,
    listener: &TcpListener,
) -> Result<SessionSummary, ServeError> {
    plan.validate(recording)?;
    let (mut sock, _peer) = listener.accept()?;
    sock.set_nodelay(true).ok();
    sock.set_read_timeout(Some(Duration::from_secs(60))).ok();

    let mut summary = SessionSummary {
        frames_sent: 0,
        intrinsics_queries: 0,
        end: SessionEnd::ClientClosed,
        stream_duration: Duration::ZERO,
    };

    loop {
        let mut instr = [0u8; INSTRUCTION_LEN];
        match read_exact_or_close(&mut sock, &mut instr)? {
            false => return Ok(summary), // client went away
            true => {}
        }
        match decode_instruction(&instr)? {
            Instruction::QueryIntrinsics => {
                summary.intrinsics_queries += 1;
                sock.write_all(&encode_intrinsics(&recording.intrinsics))?;
            }
            Instruction::StopStream => {
                summary.end = SessionEnd::Stopped;
                return Ok(summary);
            }
            Instruction::StartStream { width, height, .. } => {
                if width != recording.width() || height != recording.height() {
                    return Err(ServeError::SizeMismatch {
                        req_w: width,
                        req_h: height,
                        rec_w: recording.width(),
                        rec_h: recording.height(),
                    });
                }
                let end = stream_entities(recording, plan, &mut sock, &mut summary)?;
                summary.end = end;
                return Ok(summary);
            }
        }
    }
}

/// Convenience: bind an ephemeral local port and return it with the
/// listener, for in-process sessions.
pub fn bind_local() -> std::io::Result<(TcpListener, std::net::SocketAddr)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    Ok((listener, addr))
}

fn stream_entities(
    recording: &Recording,
    plan: &ReplayPlan,
    sock: &mut TcpStream,
    summary: &mut SessionSummary,
) -> Result<SessionEnd, ServeError> {
    let paced = plan.fps.is_finite();
    let interval = if paced {
        Duration::from_secs_f64(1.0 / plan.fps)
    } else {
        Duration::ZERO
    };

    // poll for StopStream between sends without blocking the pacer
    sock.set_nonblocking(true)?;
    let mut instr = [0u8; INSTRUCTION_LEN];
    let mut instr_fill = 0usize;

    let start = Instant::now();
    let (lo, hi) = plan.range;
    let mut sent = 0usize;
    let mut outcome = SessionEnd::PlanExhausted;

    'stream: for idx in lo..=hi.min(recording.len().saturating_sub(1)) {
        if plan.drop.contains(&idx) {
            continue;
        }
        if paced {
            let deadline = start + interval.mul_f64(sent as f64);
            while Instant::now() < deadline {
                match poll_stop(sock, &mut instr, &mut instr_fill)? {
                    PollResult::Stop => {
                        outcome = SessionEnd::Stopped;
                        break 'stream;
                    }
                    PollResult::Closed => {
                        outcome = SessionEnd::ClientClosed;
                        break 'stream;
                    }
                    PollResult::Nothing => {}
                }
                let remaining = deadline.saturating_duration_since(Instant::now());
                std::thread::sleep(remaining.min(Duration::from_millis(2)));
            }
        } else {
            match poll_stop(sock, &mut instr, &mut instr_fill)? {
                PollResult::Stop => {
                    outcome = SessionEnd::Stopped;
                    break 'stream;
                }
                PollResult::Closed => {
                    outcome = SessionEnd::ClientClosed;
                    break 'stream;
                }
                PollResult::Nothing => {}
            }
        }
        match write_all_nonblocking(sock, &encode_entity(&recording.entities[idx])) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::BrokenPipe || e.kind() == ErrorKind::ConnectionReset => {
                outcome = SessionEnd::ClientClosed;
                break 'stream;
            }
            Err(e) => return Err(ServeError::Io(e)),
        }
        sent += 1;
        summary.frames_sent = sent;
    }
    summary.stream_duration = start.elapsed();
    Ok(outcome)
}

enum PollResult {
    Nothing,
    Stop,
    Closed,
}

fn poll_stop(
    sock: &mut TcpStream,
    instr: &mut [u8; INSTRUCTION_LEN],
    fill: &mut usize,
) -> Result<PollResult, ServeError> {
    loop {
        match sock.read(&mut instr[*fill..]) {
            Ok(0) => return Ok(PollResult::Closed),
            Ok(n) => {
                *fill += n;
                if *fill == INSTRUCTION_LEN {
                    *fill = 0;
                    if decode_instruction(instr)? == Instruction::StopStream {
                        return Ok(PollResult::Stop);
                    }
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => return Ok(PollResult::Nothing),
            Err(e) => return Err(ServeError::Io(e)),
        }
    }
}

/// write_all over a nonblocking socket: spin on WouldBlock. Entities are a
/// few MB at most and loopback drains quickly.
fn write_all_nonblocking(sock: &mut TcpStream, mut buf: &[u8]) -> std::io::Result<()> {
    while !buf.is_empty() {
        match sock.write(buf) {
            Ok(0) => return Err(std::io::Error::from(ErrorKind::WriteZero)),
            Ok(n) => buf = &buf[n..],
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_micros(100));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Blocking read of the full buffer; `Ok(false)` if the peer closed before
/// any byte arrived.
fn read_exact_or_close(sock: &mut TcpStream, buf: &mut [u8]) -> Result<bool, ServeError> {
    let mut fill = 0usize;
    while fill < buf.len() {
        match sock.read(&mut buf[fill..]) {
            Ok(0) => {
                if fill == 0 {
                    return Ok(false);
                }
                return Err(ServeError::Io(std::io::Error::from(
                    ErrorKind::UnexpectedEof,
                )));
            }
            Ok(n) => fill += n,
            Err(e) => return Err(ServeError::Io(e)),
        }
    }
    Ok(true)
}
