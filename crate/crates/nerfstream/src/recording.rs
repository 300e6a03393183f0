//! Persistent stream recordings.
//!
//! File layout (all little-endian): magic `HLNS`, format version u16, the
//! 40-byte intrinsics block, entity count u32, then the concatenated wire
//! encoding of every entity. Reusing the wire codec verbatim means the file
//! reader doubles as a protocol exerciser.

use crate::wire::{
    decode_intrinsics, encode_entity, encode_intrinsics, EntityDecoder, IntrinsicsResponse,
    StreamEntity, INTRINSICS_LEN,
};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const RECORDING_MAGIC: &[u8; 4] = b"HLNS";
pub const RECORDING_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a recording file (bad magic)")]
    BadMagic,
    #[error("unsupported recording version {0}")]
    BadVersion(u16),
    #[error("wire: {0}")]
    Wire(#[from] crate::wire::WireError),
    #[error("file truncated while reading entity {index} of {count}")]
    Truncated { index: usize, count: usize },
    #[error("entity {index} timestamp {got} decreases below {prev}")]
    TimestampOrder { index: usize, got: u64, prev: u64 },
    #[error("trailing bytes after last entity")]
    TrailingBytes,
}

/// A recorded stream: the interior orientation plus every entity in capture
/// order. All entities share the recording's frame size and timestamps are
/// nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub intrinsics: IntrinsicsResponse,
    pub entities: Vec<StreamEntity>,
}

impl Recording {
    pub fn new(intrinsics: IntrinsicsResponse, entities: Vec<StreamEntity>) -> Self {
        Self {
            intrinsics,
            entities,
        }
    }

    pub fn width(&self) -> u16 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u16 {
        self.intrinsics.height
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

pub fn save_recording(r: &Recording, path: &Path) -> Result<(), RecordingError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RECORDING_MAGIC)?;
    w.write_all(&RECORDING_VERSION.to_le_bytes())?;
    w.write_all(&encode_intrinsics(&r.intrinsics))?;
    w.write_all(&(r.entities.len() as u32).to_le_bytes())?;
    for e in &r.entities {
        w.write_all(&encode_entity(e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_recording(path: &Path) -> Result<Recording, RecordingError> {
    let mut rd = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic)?;
    if &magic != RECORDING_MAGIC {
        return Err(RecordingError::BadMagic);
    }
    let mut ver = [0u8; 2];
    rd.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != RECORDING_VERSION {
        return Err(RecordingError::BadVersion(version));
    }
    let mut intr_bytes = [0u8; INTRINSICS_LEN];
    rd.read_exact(&mut intr_bytes)?;
    let intrinsics = decode_intrinsics(&intr_bytes)?;
    let mut cnt = [0u8; 4];
    rd.read_exact(&mut cnt)?;
    let count = u32::from_le_bytes(cnt) as usize;

    let mut rest = Vec::new();
    rd.read_to_end(&mut rest)?;
    let mut dec = EntityDecoder::new(intrinsics.width, intrinsics.height)?;
    dec.feed(&rest);

    let mut entities = Vec::with_capacity(count);
    let mut prev_ts = 0u64;
    for index in 0..count {
        match dec.next_entity()? {
            Some(e) => {
                if e.timestamp < prev_ts {
                    return Err(RecordingError::TimestampOrder {
                        index,
                        got: e.timestamp,
                        prev: prev_ts,
                    });
                }
                prev_ts = e.timestamp;
                entities.push(e);
            }
            None => return Err(RecordingError::Truncated { index, count }),
        }
    }
    if dec.pending() != 0 {
        return Err(RecordingError::TrailingBytes);
    }
    Ok(Recording {
        intrinsics,
        entities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::nv12_len;
    use tempfile::tempdir;

    fn recording(n: usize) -> Recording {
        let intr = IntrinsicsResponse::new(90.0, 90.0, 2.0, 2.0, [0.0; 5], 4, 4).unwrap();
        let len = nv12_len(4, 4).unwrap();
        let mut pose = [0f32; 16];
        pose[0] = 1.0;
        pose[5] = 1.0;
        pose[10] = 1.0;
        pose[15] = 1.0;
        let entities = (0..n)
            .map(|i| {
                StreamEntity::new(
                    i as u64 * 1000,
                    4,
                    4,
                    vec![i as u8; len],
                    [90.0, 90.0, 2.0, 2.0],
                    pose,
                )
                .unwrap()
            })
            .collect();
        Recording::new(intr, entities)
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.hlns");
        let r = recording(5);
        save_recording(&r, &path).unwrap();
        assert_eq!(load_recording(&path).unwrap(), r);
    }

    #[test]
    fn empty_recording_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.hlns");
        let r = recording(0);
        save_recording(&r, &path).unwrap();
        let back = load_recording(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.intrinsics, r.intrinsics);
    }

    #[test]
    fn truncation_names_entity_index() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.hlns");
        let r = recording(3);
        save_recording(&r, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // cut into the middle of the third entity
        std::fs::write(&path, &bytes[..bytes.len() - 30]).unwrap();
        match load_recording(&path) {
            Err(RecordingError::Truncated { index: 2, count: 3 }) => {}
            other => panic!("expected truncation at entity 2, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.hlns");
        std::fs::write(&path, b"JUNKxxxxxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(load_recording(&path), Err(RecordingError::BadMagic)));
    }

    #[test]
    fn bad_version_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v9.hlns");
        let r = recording(1);
        save_recording(&r, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_recording(&path),
            Err(RecordingError::BadVersion(9))
        ));
    }
}
