//! Binary codec for the sensor stream.
//!
//! Three message families cross the socket, all little-endian:
//!
//! Streaming entity (server -> client), one per frame:
//!
//! ```text
//! +-----------+--------------+-------------------+-------------+------------+
//! | timestamp | payload_size | NV12 image        | intrinsics  | pose       |
//! | u64       | u32          | w*h*3/2 bytes     | 4 x f32     | 16 x f32   |
//! | 8 bytes   | 4 bytes      | (payload)         | 16 bytes    | 64 bytes   |
//! +-----------+--------------+-------------------+-------------+------------+
//! ```
//!
//! `payload_size` counts the NV12 image plus the intrinsics and pose blocks
//! (w*h*3/2 + 80); the 12-byte header is not included. The pose is a
//! row-major 4x4 camera-to-world transform. Timestamps are opaque 100 ns
//! ticks, used only for ordering.
//!
//! Instruction (client -> server), fixed 6 bytes:
//!
//! ```text
//! +--------+-------+--------+-----+
//! | opcode | width | height | fps |
//! | u8     | u16   | u16    | u8  |
//! +--------+-------+--------+-----+
//! ```
//!
//! Intrinsics response (server -> client), fixed 40 bytes: nine f32
//! parameters `fx fy cx cy k1 k2 p1 p2 k3` followed by width and height
//! as u16.

use thiserror::Error;

/// Entity header: timestamp (8) + payload_size (4).
pub const ENTITY_HEADER_LEN: usize = 12;
/// Trailing blocks after the image: 4 f32 intrinsics + 16 f32 pose.
pub const ENTITY_TRAILER_LEN: usize = 16 + 64;
pub const INSTRUCTION_LEN: usize = 6;
pub const INTRINSICS_LEN: usize = 40;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("nv12 payload is {actual} bytes, expected {expected} for {width}x{height}")]
    PayloadSizeMismatch {
        expected: usize,
        actual: usize,
        width: u16,
        height: u16,
    },
    #[error("image dimensions {0}x{1} are not both even and nonzero")]
    BadDimensions(u16, u16),
    #[error("payload_size field {got} inconsistent with {width}x{height} stream (expected {expected})")]
    CorruptPayloadSize {
        got: u32,
        expected: u32,
        width: u16,
        height: u16,
    },
    #[error("unknown instruction opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("message is {actual} bytes, expected {expected}")]
    WrongLength { expected: usize, actual: usize },
    #[error("intrinsics out of range: {0}")]
    InvalidIntrinsics(String),
}

/// One timestamped frame as it travels on the wire: NV12 pixels, the four
/// pinhole parameters and a 4x4 camera-to-world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEntity {
    pub timestamp: u64,
    pub nv12: Vec<u8>,
    /// (fx, fy, cx, cy) in pixels.
    pub intrinsics4: [f32; 4],
    /// Row-major 4x4 camera-to-world transform.
    pub pose: [f32; 16],
}

impl StreamEntity {
    /// Builds an entity, checking the NV12 length against the frame size.
    pub fn new(
        timestamp: u64,
        width: u16,
        height: u16,
        nv12: Vec<u8>,
        intrinsics4: [f32; 4],
        pose: [f32; 16],
    ) -> Result<Self, WireError> {
        let expected = nv12_len(width, height)?;
        if nv12.len() != expected {
            return Err(WireError::PayloadSizeMismatch {
                expected,
                actual: nv12.len(),
                width,
                height,
            });
        }
        Ok(Self {
            timestamp,
            nv12,
            intrinsics4,
            pose,
        })
    }

    pub fn payload_size(&self) -> u32 {
        (self.nv12.len() + ENTITY_TRAILER_LEN) as u32
    }

    pub fn encoded_len(&self) -> usize {
        ENTITY_HEADER_LEN + self.nv12.len() + ENTITY_TRAILER_LEN
    }
}

/// NV12 byte count for a frame, rejecting odd or zero dimensions.
pub fn nv12_len(width: u16, height: u16) -> Result<usize, WireError> {
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(WireError::BadDimensions(width, height));
    }
    Ok(width as usize * height as usize * 3 / 2)
}

pub fn encode_entity(e: &StreamEntity) -> Vec<u8> {
    let mut out = Vec::with_capacity(e.encoded_len());
    out.extend_from_slice(&e.timestamp.to_le_bytes());
    out.extend_from_slice(&e.payload_size().to_le_bytes());
    out.extend_from_slice(&e.nv12);
    for v in e.intrinsics4 {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in e.pose {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Incremental entity decoder for one connection.
///
/// Feed arbitrary byte chunks; complete entities come out in order. The
/// frame size is fixed per stream (from the intrinsics exchange), so the
/// expected payload size is known and a mismatching `payload_size` field is
/// a fatal protocol error rather than a framing ambiguity.
#[derive(Debug)]
pub struct EntityDecoder {
    width: u16,
    height: u16,
    expected_payload: u32,
    buf: Vec<u8>,
    read_pos: usize,
}

impl EntityDecoder {
    pub fn new(width: u16, height: u16) -> Result<Self, WireError> {
        let payload = (nv12_len(width, height)? + ENTITY_TRAILER_LEN) as u32;
        Ok(Self {
            width,
            height,
            expected_payload: payload,
            buf: Vec::new(),
            read_pos: 0,
        })
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes buffered but not yet consumed by a decoded entity.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.read_pos
    }

    /// Pops the next complete entity, `Ok(None)` while more bytes are needed.
    pub fn next_entity(&mut self) -> Result<Option<StreamEntity>, WireError> {
        let avail = &self.buf[self.read_pos..];
        if avail.len() < ENTITY_HEADER_LEN {
            return Ok(None);
        }
        let timestamp = u64::from_le_bytes(avail[0..8].try_into().unwrap());
        let payload_size = u32::from_le_bytes(avail[8..12].try_into().unwrap());
        if payload_size != self.expected_payload {
            return Err(WireError::CorruptPayloadSize {
                got: payload_size,
                expected: self.expected_payload,
                width: self.width,
                height: self.height,
            });
        }
        let total = ENTITY_HEADER_LEN + payload_size as usize;
        if avail.len() < total {
            return Ok(None);
        }

        let nv12_end = ENTITY_HEADER_LEN + payload_size as usize - ENTITY_TRAILER_LEN;
        let nv12 = avail[ENTITY_HEADER_LEN..nv12_end].to_vec();
        let mut intrinsics4 = [0f32; 4];
        for (i, v) in intrinsics4.iter_mut().enumerate() {
            let o = nv12_end + i * 4;
            *v = f32::from_le_bytes(avail[o..o + 4].try_into().unwrap());
        }
        let mut pose = [0f32; 16];
        for (i, v) in pose.iter_mut().enumerate() {
            let o = nv12_end + 16 + i * 4;
            *v = f32::from_le_bytes(avail[o..o + 4].try_into().unwrap());
        }

        self.read_pos += total;
        // Reclaim consumed space once it dominates the buffer.
        if self.read_pos > 4096 && self.read_pos * 2 > self.buf.len() {
            self.buf.drain(..self.read_pos);
            self.read_pos = 0;
        }

        Ok(Some(StreamEntity {
            timestamp,
            nv12,
            intrinsics4,
            pose,
        }))
    }
}

/// Client-to-server control message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    StartStream { width: u16, height: u16, fps: u8 },
    QueryIntrinsics,
    StopStream,
}

pub const OP_START_STREAM: u8 = 0x01;
pub const OP_QUERY_INTRINSICS: u8 = 0x02;
pub const OP_STOP_STREAM: u8 = 0x03;

pub fn encode_instruction(i: Instruction) -> [u8; INSTRUCTION_LEN] {
    let (op, w, h, fps) = match i {
        Instruction::StartStream { width, height, fps } => (OP_START_STREAM, width, height, fps),
        Instruction::QueryIntrinsics => (OP_QUERY_INTRINSICS, 0, 0, 0),
        Instruction::StopStream => (OP_STOP_STREAM, 0, 0, 0),
    };
    let wb = w.to_le_bytes();
    let hb = h.to_le_bytes();
    [op, wb[0], wb[1], hb[0], hb[1], fps]
}

pub fn decode_instruction(bytes: &[u8]) -> Result<Instruction, WireError> {
    if bytes.len() != INSTRUCTION_LEN {
        return Err(WireError::WrongLength {
            expected: INSTRUCTION_LEN,
            actual: bytes.len(),
        });
    }
    let width = u16::from_le_bytes([bytes[1], bytes[2]]);
    let height = u16::from_le_bytes([bytes[3], bytes[4]]);
    let fps = bytes[5];
    match bytes[0] {
        OP_START_STREAM => Ok(Instruction::StartStream { width, height, fps }),
        OP_QUERY_INTRINSICS => Ok(Instruction::QueryIntrinsics),
        OP_STOP_STREAM => Ok(Instruction::StopStream),
        other => Err(WireError::UnknownOpcode(other)),
    }
}

/// Full interior orientation reported by the server: OpenCV-style
/// `fx fy cx cy k1 k2 p1 p2 k3` plus the streamed frame size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicsResponse {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub k1: f32,
    pub k2: f32,
    pub p1: f32,
    pub p2: f32,
    pub k3: f32,
    pub width: u16,
    pub height: u16,
}

impl IntrinsicsResponse {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f32,
        fy: f32,
        cx: f32,
        cy: f32,
        dist: [f32; 5],
        width: u16,
        height: u16,
    ) -> Result<Self, WireError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(WireError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(0.0..width as f32).contains(&cx) || !(0.0..height as f32).contains(&cy) {
            return Err(WireError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        let [k1, k2, p1, p2, k3] = dist;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            k1,
            k2,
            p1,
            p2,
            k3,
            width,
            height,
        })
    }

    fn params(&self) -> [f32; 9] {
        [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.p1, self.p2, self.k3,
        ]
    }
}

pub fn encode_intrinsics(r: &IntrinsicsResponse) -> [u8; INTRINSICS_LEN] {
    let mut out = [0u8; INTRINSICS_LEN];
    for (i, v) in r.params().iter().enumerate() {
        out[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
    }
    out[36..38].copy_from_slice(&r.width.to_le_bytes());
    out[38..40].copy_from_slice(&r.height.to_le_bytes());
    out
}

pub fn decode_intrinsics(bytes: &[u8]) -> Result<IntrinsicsResponse, WireError> {
    if bytes.len() != INTRINSICS_LEN {
        return Err(WireError::WrongLength {
            expected: INTRINSICS_LEN,
            actual: bytes.len(),
        });
    }
    let mut p = [0f32; 9];
    for (i, v) in p.iter_mut().enumerate() {
        *v = f32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
    }
    let width = u16::from_le_bytes([bytes[36], bytes[37]]);
    let height = u16::from_le_bytes([bytes[38], bytes[39]]);
    IntrinsicsResponse::new(p[0], p[1], p[2], p[3], [p[4], p[5], p[6], p[7], p[8]], width, height)
}
