//! Planar 8-bit YUV 4:2:0 frames, raw file I/O with alignment padding, and
//! the bicubic resampling chain (down, up, down-then-up degradation).

mod error;
mod frame;
mod resample;
mod yuv;

pub use error::VideoError;
pub use frame::{Frame, Plane, Sequence};
pub use resample::{
    bicubic_down, bicubic_down_plane, bicubic_up, bicubic_up_plane, degrade, degrade_plane,
    BicubicKernel,
};
pub use yuv::{load_yuv, write_yuv};
