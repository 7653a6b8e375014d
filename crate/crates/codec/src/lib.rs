//! Deterministic stand-in for a block video codec: intra frames go through
//! an 8x8 DCT with uniform quantization, inter frames add full-search
//! motion compensation against a single reference, and rate is an entropy
//! proxy over the quantized levels. This is a noise model for the
//! cross-resolution pipeline, not a standard-compliant encoder; real
//! encoders plug in through [`external_encode`].

mod external;
mod inter;
mod intra;
mod motion;
mod qp;
mod transform;

pub use external::{external_encode, EncoderConfig};
pub use inter::simulate_inter;
pub use intra::simulate_intra;
pub use motion::{estimate_motion, MotionField};
pub use qp::QpModel;

use crossres_video::Frame;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("plane {width}x{height} is not a multiple of the {block} block")]
    BlockAlignment { width: usize, height: usize, block: usize },
    #[error("frame size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("qp {qp} outside supported range 0..=51")]
    QpRange { qp: i32 },
    #[error("encoder not found: {path}")]
    EncoderNotFound { path: String },
    #[error("encoder exited with status {status}: {stderr}")]
    EncoderFailed { status: i32, stderr: String },
    #[error("cannot parse rate log {path} line {line}: {msg}")]
    RateLogParse { path: String, line: usize, msg: String },
    #[error("encoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Video(#[from] crossres_video::VideoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Role a frame plays in the tiered coding structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRole {
    Intra,
    Inter,
}

/// Outcome of coding one frame: reconstruction plus a rate proxy.
#[derive(Clone, Debug)]
pub struct CodecRun {
    pub frame_index: usize,
    pub role: FrameRole,
    pub qp: i32,
    pub bits: f64,
    pub recon: Frame,
}
