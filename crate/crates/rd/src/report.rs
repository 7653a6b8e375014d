//! JSON report records emitted by the evaluation stage.

use serde::{Deserialize, Serialize};

use crate::bd::{bd_psnr, bd_rate, RdCurve};
use crate::RdError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePsnr {
    pub frame: usize,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdReport {
    pub frames: Vec<FramePsnr>,
    pub mean_psnr_y: f64,
    pub mean_psnr_u: f64,
    pub mean_psnr_v: f64,
    pub total_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bd: Option<BdSummary>,
}

/// One anchor-vs-test comparison: the raw points and both deltas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdSummary {
    pub anchor_points: Vec<(f64, f64)>,
    pub test_points: Vec<(f64, f64)>,
    pub bd_rate_percent: f64,
    pub bd_psnr_db: f64,
}

/// Standalone anchor/test comparison record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdComparison {
    pub anchor_points: Vec<(f64, f64)>,
    pub test_points: Vec<(f64, f64)>,
    pub bd_rate_percent: f64,
    pub bd_psnr_db: f64,
}

impl RdComparison {
    pub fn compute(anchor: &RdCurve, test: &RdCurve) -> Result<Self, RdError> {
        Ok(RdComparison {
            anchor_points: anchor.points().to_vec(),
            test_points: test.points().to_vec(),
            bd_rate_percent: bd_rate(anchor, test)?,
            bd_psnr_db: bd_psnr(anchor, test)?,
        })
    }
}
