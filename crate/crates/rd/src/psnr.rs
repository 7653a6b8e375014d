use crate::RdError;
use crossres_video::{Frame, Plane};

/// Identical planes report this instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaneSel {
    Y,
    U,
    V,
}

fn plane_of(f: &Frame, sel: PlaneSel) -> &Plane {
    match sel {
        PlaneSel::Y => &f.y,
        PlaneSel::U => &f.u,
        PlaneSel::V => &f.v,
    }
}

fn mse(a: &Plane, b: &Plane) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64
}

/// `10 * log10(255^2 / MSE)` over one plane, capped at 99 dB for zero MSE.
pub fn psnr(a: &Frame, b: &Frame, plane: PlaneSel) -> Result<f64, RdError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(RdError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let m = mse(plane_of(a, plane), plane_of(b, plane));
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / m).log10()).min(PSNR_CAP_DB))
}

/// `(Y, U, V)` PSNR triple.
pub fn psnr_planes(a: &Frame, b: &Frame) -> Result<(f64, f64, f64), RdError> {
    Ok((psnr(a, b, PlaneSel::Y)?, psnr(a, b, PlaneSel::U)?, psnr(a, b, PlaneSel::V)?))
}
