//! The cross-resolution synthesis model: deformable motion alignment and
//! attention aggregation over the low-resolution window, patchwise texture
//! transfer from the high-resolution intra reference, and similarity-driven
//! fusion into the upscaled output, plus training and weight-file I/O.

mod blocks;
mod error;
mod fusion;
mod motion;
mod resample_ops;
mod texture;
mod train;
mod weights;

pub use blocks::{Binder, Conv, ModelConfig, PyramidTrunk, ResBlock};
pub use error::ModelError;
pub use fusion::{FusionNet, FusionNetVals, SynthModel, SynthModelVals};
pub use motion::{dcn_align, ManNet, ManNetVals, OffsetPyramidVals};
pub use resample_ops::{bicubic_down_t, bicubic_up_t, degrade_t};
pub use texture::{build_affinity, AffinityResult, TcnNet, TcnNetVals, TextureBundleVals};
pub use train::{train_step, TrainSample, Trainer};
pub use weights::{read_weight_file, write_weight_file, WeightEntry};

/// Reference arity of the coding structure: one bounding intra (low-delay)
/// or two (random access).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GopMode {
    Ldp,
    Ra,
}

impl GopMode {
    pub fn bundles(self) -> usize {
        match self {
            GopMode::Ldp => 1,
            GopMode::Ra => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GopMode::Ldp => "ldp",
            GopMode::Ra => "ra",
        }
    }
}
