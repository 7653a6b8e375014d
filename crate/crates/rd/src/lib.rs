//! Rate-distortion evaluation: PSNR, Bjøntegaard delta metrics between R-D
//! curves, and the fixed-offset QP allocation across the intra/inter tiers.

mod bd;
mod psnr;
mod qp_alloc;
mod report;

pub use bd::{bd_psnr, bd_rate, CubicFit, RdCurve};
pub use psnr::{psnr, psnr_planes, PlaneSel, PSNR_CAP_DB};
pub use qp_alloc::{allocate_qp, QpSchedule, QP_OFFSET};
pub use report::{BdSummary, FramePsnr, RdComparison, RdReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("R-D curve needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("R-D curve must be strictly increasing in {axis} at point {index}")]
    NotMonotone { axis: &'static str, index: usize },
    #[error("curves share no {0} overlap")]
    NoOverlap(&'static str),
    #[error("qp {qp} outside supported range 0..=51")]
    QpRange { qp: i32 },
}
