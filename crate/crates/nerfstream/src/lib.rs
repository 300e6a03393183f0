//! Streamed radiance-field mapping at desk scale.
//!
//! The pipeline: a replay server presents a recorded sensor stream over
//! TCP; the client decodes frames, validates poses and fills a bounded
//! frame buffer; a hash-grid radiance field trains online against the
//! growing buffer; when the stream ends, a ray-sampled point-cloud
//! extractor turns the trained field into explicit geometry with per-point
//! color, written as binary PLY.
//!
//! Module map:
//! - [`wire`]: binary entity/instruction/intrinsics codec
//! - [`nv12`]: NV12 <-> RGBA conversion
//! - [`recording`] / [`server`]: persistent streams and their replay
//! - [`client`]: stream consumption and the shared frame buffer
//! - [`scene`]: camera model, pose validation, unit-cube mapping
//! - [`field`]: hash-grid encoding, network, renderer, online trainer
//! - [`extract`]: point extraction, PLY writer, extraction benchmark
//! - [`synthetic`]: analytic scene recorder for ground-truth experiments
//! - [`metrics`] / [`config`] / [`pipeline`]: PSNR, run config, orchestration

pub mod client;
pub mod config;
pub mod extract;
pub mod field;
pub mod math;
pub mod metrics;
pub mod nv12;
pub mod pipeline;
pub mod recording;
pub mod scene;
pub mod server;
pub mod synthetic;
pub mod wire;
