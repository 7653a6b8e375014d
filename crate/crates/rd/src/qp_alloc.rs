use crate::RdError;
use serde::{Deserialize, Serialize};

/// Fixed QP offset between the high-resolution intra tier and the finer-
/// quantized low-resolution inter tier.
pub const QP_OFFSET: i32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpSchedule {
    pub qp_intra: i32,
    pub delta: i32,
    pub qp_inter: i32,
}

/// `qp_inter = qp_intra - 5`, floored at 0.
pub fn allocate_qp(qp_intra: i32) -> Result<QpSchedule, RdError> {
    if !(0..=51).contains(&qp_intra) {
        return Err(RdError::QpRange { qp: qp_intra });
    }
    Ok(QpSchedule { qp_intra, delta: QP_OFFSET, qp_inter: (qp_intra - QP_OFFSET).max(0) })
}
