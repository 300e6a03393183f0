//! The trainable scene representation.
//!
//! A multiresolution hash-grid encoding feeds a small fully-connected
//! network that maps (position, view direction) to (density, radiance).
//! Density depends only on position; radiance additionally on direction.
//! The module also owns the checkpoint format so a trained field can be
//! re-extracted without retraining.

pub mod check;
pub mod grid;
pub mod net;
pub mod render;
pub mod train;

use crate::scene::SceneBox;
use grid::{GridFootprint, HashGrid};
use net::{NetParams, NetTrace};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const LEVELS: usize = 8;
pub const FEATURES: usize = 2;
pub const ENC_DIM: usize = LEVELS * FEATURES; // 16
pub const HIDDEN: usize = 64;
pub const GEO_FEAT: usize = 15;
pub const SH_DIM: usize = 16;
pub const COLOR_IN: usize = GEO_FEAT + SH_DIM; // 31

const GRID_INIT_SCALE: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub base_resolution: u32,
    pub growth_factor: f64,
    /// log2 of the per-level hash-table size.
    pub table_log2: u32,
    /// Initial raw-density bias; negative starts the field near-transparent.
    pub density_bias: f32,
    pub init_seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            base_resolution: 16,
            growth_factor: 1.45,
            table_log2: 16,
            density_bias: -3.0,
            init_seed: 42,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}

pub struct RadianceField {
    pub config: FieldConfig,
    pub grid: HashGrid,
    /// Hash-table parameters, level-major then entry-major.
    pub grid_table: Vec<f32>,
    pub net: NetParams,
}

impl RadianceField {
    pub fn new(config: FieldConfig) -> Self {
        let grid = HashGrid::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let grid_table: Vec<f32> = (0..grid.param_count())
            .map(|_| rng.random_range(-GRID_INIT_SCALE..GRID_INIT_SCALE))
            .collect();
        let net = NetParams::init(&mut rng, config.density_bias);
        Self {
            config,
            grid,
            grid_table,
            net,
        }
    }

    pub fn param_count(&self) -> usize {
        self.grid_table.len() + self.net.param_count()
    }

    /// Trilinear hash-grid encoding of a unit-cube position.
    pub fn encode_position(&self, q: [f32; 3]) -> [f32; ENC_DIM] {
        let fp = self.grid.footprint(q);
        self.grid.encode(&self.grid_table, &fp)
    }

    /// Full forward pass recording intermediates; the footprint and trace
    /// feed the backward pass during training.
    #[inline]
    pub(crate) fn forward_traced(
        &self,
        q: [f32; 3],
        d: [f32; 3],
        fp: &mut GridFootprint,
        trace: &mut NetTrace,
    ) {
        *fp = self.grid.footprint(q);
        let enc = self.grid.encode(&self.grid_table, fp);
        net::forward_density(&self.net, &enc, trace);
        net::forward_color(&self.net, &net::sh_basis(d), trace);
    }

    /// Density and radiance at a unit-cube position seen from direction `d`.
    /// Density is independent of `d` by construction.
    pub fn query(&self, q: [f32; 3], d: [f32; 3]) -> (f32, [f32; 3]) {
        let mut fp = GridFootprint::ZERO;
        let mut trace = NetTrace::default();
        self.forward_traced(q, d, &mut fp, &mut trace);
        (trace.sigma, trace.color)
    }

    /// Density only, skipping the color branch.
    pub fn query_density(&self, q: [f32; 3]) -> f32 {
        let fp = self.grid.footprint(q);
        let enc = self.grid.encode(&self.grid_table, &fp);
        let mut trace = NetTrace::default();
        net::forward_density(&self.net, &enc, &mut trace);
        trace.sigma
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"NRFC";
const CHECKPOINT_VERSION: u16 = 1;

/// Writes the field parameters, architecture constants and the scene box
/// to a versioned little-endian binary file.
pub fn save_checkpoint(
    field: &RadianceField,
    sbox: &SceneBox,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [
        LEVELS as u32,
        FEATURES as u32,
        HIDDEN as u32,
        field.config.base_resolution,
        field.config.table_log2,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&field.config.growth_factor.to_le_bytes())?;
    w.write_all(&field.config.density_bias.to_le_bytes())?;
    w.write_all(&field.config.init_seed.to_le_bytes())?;
    for v in [sbox.center[0], sbox.center[1], sbox.center[2], sbox.scale, sbox.extent] {
        w.write_all(&v.to_le_bytes())?;
    }
    let tensors: [&[f32]; 9] = [
        &field.grid_table,
        &field.net.w1,
        &field.net.b1,
        &field.net.w2,
        &field.net.b2,
        &field.net.w3,
        &field.net.b3,
        &field.net.w4,
        &field.net.b4,
    ];
    for t in tensors {
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RadianceField, SceneBox), CheckpointError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);

    fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], CheckpointError> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(read_exact::<4>(r)?))
    }
    fn read_f32(r: &mut impl Read) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(read_exact::<4>(r)?))
    }
    fn read_f64(r: &mut impl Read) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(read_exact::<8>(r)?))
    }
    fn read_tensor(r: &mut impl Read, expected: usize, name: &str) -> Result<Vec<f32>, CheckpointError> {
        let len = u64::from_le_bytes(read_exact::<8>(r)?) as usize;
        if len != expected {
            return Err(CheckpointError::Architecture(format!(
                "{name}: {len} values, expected {expected}"
            )));
        }
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    if &read_exact::<4>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(read_exact::<2>(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let levels = read_u32(&mut r)?;
    let features = read_u32(&mut r)?;
    let hidden = read_u32(&mut r)?;
    if levels as usize != LEVELS || features as usize != FEATURES || hidden as usize != HIDDEN {
        return Err(CheckpointError::Architecture(format!(
            "levels/features/hidden {levels}/{features}/{hidden}, built for {LEVELS}/{FEATURES}/{HIDDEN}"
        )));
    }
    let base_resolution = read_u32(&mut r)?;
    let table_log2 = read_u32(&mut r)?;
    let growth_factor = read_f64(&mut r)?;
    let density_bias = read_f32(&mut r)?;
    let init_seed = u64::from_le_bytes(read_exact::<8>(&mut r)?);
    let center = [read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?];
    let scale = read_f64(&mut r)?;
    let extent = read_f64(&mut r)?;

    let config = FieldConfig {
        base_resolution,
        growth_factor,
        table_log2,
        density_bias,
        init_seed,
    };
    let grid = HashGrid::new(&config);
    let grid_table = read_tensor(&mut r, grid.param_count(), "grid")?;
    let net = NetParams {
        w1: read_tensor(&mut r, ENC_DIM * HIDDEN, "w1")?,
        b1: read_tensor(&mut r, HIDDEN, "b1")?,
        w2: read_tensor(&mut r, HIDDEN * net::DENSITY_OUT, "w2")?,
        b2: read_tensor(&mut r, net::DENSITY_OUT, "b2")?,
        w3: read_tensor(&mut r, COLOR_IN * HIDDEN, "w3")?,
        b3: read_tensor(&mut r, HIDDEN, "b3")?,
        w4: read_tensor(&mut r, HIDDEN * 3, "w4")?,
        b4: read_tensor(&mut r, 3, "b4")?,
    };
    let mut sbox = SceneBox::new(center, scale);
    sbox.extent = extent;
    Ok((
        RadianceField {
            config,
            grid,
            grid_table,
            net,
        },
        sbox,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn density_is_direction_invariant() {
        let field = RadianceField::new(FieldConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let q = [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ];
            let d1 = sample_dir(&mut rng);
            let d2 = sample_dir(&mut rng);
            let (s1, _) = field.query(q, d1);
            let (s2, _) = field.query(q, d2);
            assert_eq!(s1.to_bits(), s2.to_bits());
        }
    }

    #[test]
    fn color_depends_on_direction() {
        let field = RadianceField::new(FieldConfig::default());
        let (_, c1) = field.query([0.4, 0.4, 0.4], [1.0, 0.0, 0.0]);
        let (_, c2) = field.query([0.4, 0.4, 0.4], [0.0, 0.0, 1.0]);
        assert_ne!(c1, c2);
    }

    #[test]
    fn fresh_field_is_finite_and_bounded() {
        let field = RadianceField::new(FieldConfig::default());
        let (sigma, c) = field.query([0.2, 0.7, 0.9], [0.0, 1.0, 0.0]);
        assert!(sigma.is_finite() && sigma >= 0.0);
        assert!(c.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.nrfc");
        let field = RadianceField::new(FieldConfig {
            init_seed: 9,
            ..FieldConfig::default()
        });
        let sbox = SceneBox::new([0.5, -1.0, 2.0], 0.3);
        save_checkpoint(&field, &sbox, &path).unwrap();
        let (loaded, lbox) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.grid_table, field.grid_table);
        assert_eq!(loaded.net.w3, field.net.w3);
        assert_eq!(lbox, sbox);

        let q = [0.31, 0.62, 0.18];
        let d = [0.0, 0.0, 1.0];
        assert_eq!(field.query(q, d), loaded.query(q, d));
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.nrfc");
        std::fs::write(&path, b"XXXXGARBAGE").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
    }

    fn sample_dir(rng: &mut ChaCha8Rng) -> [f32; 3] {
        loop {
            let v = [
                rng.random_range(-1.0f32..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-3 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    use rand::Rng;
}
