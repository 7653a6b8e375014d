//! Pipeline orchestration library behind the `crossres` binary: GoP
//! planning, tier coding, synthesis, evaluation, and the tier bundle
//! format.

pub mod gop;
pub mod pipeline;
pub mod synthetic;

pub use gop::{inter_indices, plan_gops, structure_gop, window_indices, FramePlan, GopStructure};
pub use pipeline::{
    bicubic_baseline, build_train_samples, encode_external, encode_simulate, evaluate, load_tiers,
    plane_to_tensor, run_pipeline, save_tiers, synthesize_sequence, tensor_to_plane, EncodedTiers,
    RunRecord, Tier, SEARCH_RADIUS,
};
pub use synthetic::synthetic_sequence;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("gop length must be at least 2, got {0}")]
    GopLength(usize),
    #[error("frame {index} is on the wrong tier for this operation")]
    TierMismatch { index: usize },
    #[error("frame counts differ: {0} vs {1}")]
    FrameCount(usize, usize),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Codec(#[from] crossres_codec::CodecError),
    #[error(transparent)]
    Video(#[from] crossres_video::VideoError),
    #[error(transparent)]
    Model(#[from] crossres_model::ModelError),
    #[error(transparent)]
    Rd(#[from] crossres_rd::RdError),
    #[error(transparent)]
    Tensor(#[from] crossres_tensor::TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
