use crate::CodecError;

/// Uniform quantizer derived from a QP via the conventional exponential
/// mapping `step = 2^((qp - 4) / 6)`; step doubles every 6 QP and equals 1
/// at QP 4.
#[derive(Clone, Copy, Debug)]
pub struct QpModel {
    pub qp: i32,
    pub step: f64,
    /// Luma transform block edge; chroma planes that are not a multiple of
    /// this use the halved block.
    pub block: usize,
}

impl QpModel {
    pub fn new(qp: i32) -> Result<Self, CodecError> {
        if !(0..=51).contains(&qp) {
            return Err(CodecError::QpRange { qp });
        }
        Ok(QpModel { qp, step: ((qp - 4) as f64 / 6.0).exp2(), block: 8 })
    }

    pub fn quantize(&self, coeff: f64) -> i64 {
        (coeff / self.step).round() as i64
    }

    pub fn dequantize(&self, level: i64) -> f64 {
        level as f64 * self.step
    }
}
