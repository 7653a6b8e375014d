use crate::motion::{compensate, estimate_motion};
use crate::qp::QpModel;
use crate::transform::{code_plane, plane_block};
use crate::CodecError;
use crossres_video::{Frame, Plane};

// Flat per-block signaling charge for one motion vector.
const MV_BITS: f64 = 6.0;

fn code_residual_plane(cur: &Plane, pred: &Plane, qp: &QpModel) -> Result<(Plane, f64), CodecError> {
    let block = plane_block(cur, qp.block);
    if cur.width % block != 0 || cur.height % block != 0 {
        return Err(CodecError::BlockAlignment { width: cur.width, height: cur.height, block });
    }
    let mut residual: Vec<f64> =
        cur.data.iter().zip(&pred.data).map(|(&c, &p)| c as f64 - p as f64).collect();
    let bits = code_plane(&mut residual, cur.width, cur.height, block, qp);
    let recon = Plane {
        width: cur.width,
        height: cur.height,
        data: residual
            .iter()
            .zip(&pred.data)
            .map(|(&r, &p)| (p as f64 + r).round().clamp(0.0, 255.0) as u8)
            .collect(),
    };
    Ok((recon, bits))
}

/// Motion-compensated prediction from `ref_`, residual coded through the
/// same transform path as intra blocks. Registration error shows up where
/// blocks mismatch; quantization error rides on the residual; whatever
/// noise the reference carries propagates into the reconstruction.
pub fn simulate_inter(
    t: &Frame,
    ref_: &Frame,
    qp: &QpModel,
    search: i32,
) -> Result<(Frame, f64), CodecError> {
    if t.width() != ref_.width() || t.height() != ref_.height() {
        return Err(CodecError::SizeMismatch(t.width(), t.height(), ref_.width(), ref_.height()));
    }
    let field = estimate_motion(t, ref_, search)?;
    let pred = compensate(ref_, &field);
    let (y, by) = code_residual_plane(&t.y, &pred.y, qp)?;
    let (u, bu) = code_residual_plane(&t.u, &pred.u, qp)?;
    let (v, bv) = code_residual_plane(&t.v, &pred.v, qp)?;
    let mv_bits = field.vectors.len() as f64 * MV_BITS;
    Ok((Frame::new(y, u, v)?, by + bu + bv + mv_bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate_intra;

    fn textured(w: usize, h: usize, seed: u64) -> Frame {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        // Smooth base plus mild texture so the transform has work to do.
        let y = Plane {
            width: w,
            height: h,
            data: (0..w * h)
                .map(|i| {
                    let x = (i % w) as f64;
                    let yy = (i / w) as f64;
                    let base = 100.0 + 60.0 * (x / w as f64) + 40.0 * (yy / h as f64);
                    (base + (next() % 17) as f64 - 8.0).clamp(0.0, 255.0) as u8
                })
                .collect(),
        };
        Frame::new(y, Plane::filled(w / 2, h / 2, 120), Plane::filled(w / 2, h / 2, 130)).unwrap()
    }

    fn mse_y(a: &Frame, b: &Frame) -> f64 {
        a.y.data
            .iter()
            .zip(&b.y.data)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            / a.y.data.len() as f64
    }

    #[test]
    fn perfect_prediction_at_step_one_is_exact() {
        let f = textured(32, 32, 5);
        let qp = QpModel::new(4).unwrap();
        let (recon, bits) = simulate_inter(&f, &f, &qp, 2).unwrap();
        assert_eq!(recon, f);
        // Residual is all-zero: only significance and mv signaling remain.
        let blocks = (32 / 8) * (32 / 8) + 2 * (16 / 8) * (16 / 8);
        let mv = ((32 / 8) * (32 / 8)) as f64 * 6.0;
        assert!(bits <= blocks as f64 * 1.0 + mv + 1e-9, "bits {bits}");
    }

    #[test]
    fn degraded_reference_propagates_noise() {
        let f = textured(32, 32, 5);
        let qp = QpModel::new(30).unwrap();
        // Pristine reference vs. a heavily quantized one.
        let (noisy_ref, _) = simulate_intra(&f, &QpModel::new(45).unwrap()).unwrap();
        let (recon_clean, _) = simulate_inter(&f, &f, &qp, 2).unwrap();
        let (recon_noisy, _) = simulate_inter(&f, &noisy_ref, &qp, 2).unwrap();
        assert!(mse_y(&f, &recon_noisy) >= mse_y(&f, &recon_clean));
    }

    #[test]
    fn coarse_qp_zeroes_residual() {
        let cur = textured(32, 32, 5);
        let ref_ = textured(32, 32, 9);
        let qp = QpModel::new(47).unwrap();
        let (recon, _) = simulate_inter(&cur, &ref_, &qp, 2).unwrap();
        // Residual mostly dead-zoned: reconstruction hugs the prediction.
        let field = estimate_motion(&cur, &ref_, 2).unwrap();
        let pred = compensate(&ref_, &field);
        let drift = mse_y(&recon, &pred);
        assert!(drift < 40.0, "recon drifted {drift} from prediction");
    }

    #[test]
    fn deterministic_across_runs() {
        let cur = textured(32, 32, 7);
        let ref_ = textured(32, 32, 11);
        let qp = QpModel::new(32).unwrap();
        let (r1, b1) = simulate_inter(&cur, &ref_, &qp, 4).unwrap();
        let (r2, b2) = simulate_inter(&cur, &ref_, &qp, 4).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(b1, b2);
    }
}
