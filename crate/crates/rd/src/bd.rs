//! Bjøntegaard delta metrics, cubic-polynomial variant: fit a third-order
//! polynomial per curve, integrate the difference over the common interval,
//! and convert back (percent bitrate at equal quality, or dB at equal rate).

use crate::RdError;

/// Operating points of one codec run, strictly increasing in both rate and
/// quality. At least four points so the cubic fit is determined.
#[derive(Clone, Debug)]
pub struct RdCurve {
    points: Vec<(f64, f64)>,
}

impl RdCurve {
    /// `points` are `(bitrate_kbps, psnr_db)` pairs.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, RdError> {
        if points.len() < 4 {
            return Err(RdError::TooFewPoints(points.len()));
        }
        for i in 1..points.len() {
            if points[i].0 <= points[i - 1].0 {
                return Err(RdError::NotMonotone { axis: "bitrate", index: i });
            }
            if points[i].1 <= points[i - 1].1 {
                return Err(RdError::NotMonotone { axis: "psnr", index: i });
            }
        }
        Ok(RdCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0.log10()).collect()
    }

    pub fn psnrs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Cubic fit `y = c0 + c1 u + c2 u^2 + c3 u^3` in `u = x - x_mean`; the
/// shift keeps the normal equations well conditioned. Public so external
/// oracles can integrate the same fitted polynomials by another route.
#[derive(Clone, Copy, Debug)]
pub struct CubicFit {
    pub coeff: [f64; 4],
    pub shift: f64,
}

impl CubicFit {
    pub fn fit(xs: &[f64], ys: &[f64]) -> CubicFit {
        let shift = xs.iter().sum::<f64>() / xs.len() as f64;
        // Normal equations for the Vandermonde system in shifted x.
        let mut ata = [[0.0f64; 4]; 4];
        let mut atb = [0.0f64; 4];
        for (&x, &y) in xs.iter().zip(ys) {
            let u = x - shift;
            let pow = [1.0, u, u * u, u * u * u];
            for r in 0..4 {
                for c in 0..4 {
                    ata[r][c] += pow[r] * pow[c];
                }
                atb[r] += pow[r] * y;
            }
        }
        CubicFit { coeff: solve4(ata, atb), shift }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.shift;
        ((self.coeff[3] * u + self.coeff[2]) * u + self.coeff[1]) * u + self.coeff[0]
    }

    /// Definite integral over `[lo, hi]` in the original coordinates.
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let anti = |x: f64| {
            let u = x - self.shift;
            (((self.coeff[3] / 4.0 * u + self.coeff[2] / 3.0) * u + self.coeff[1] / 2.0) * u
                + self.coeff[0])
                * u
        };
        anti(hi) - anti(lo)
    }
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

fn overlap(a: &[f64], b: &[f64], axis: &'static str) -> Result<(f64, f64), RdError> {
    let lo = a.first().unwrap().max(*b.first().unwrap());
    let hi = a.last().unwrap().min(*b.last().unwrap());
    if hi <= lo {
        return Err(RdError::NoOverlap(axis));
    }
    Ok((lo, hi))
}

/// Average bitrate difference of `test` against `anchor` at equal quality,
/// in percent. Negative means the test curve spends fewer bits.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64, RdError> {
    let (lo, hi) = overlap(&anchor.psnrs(), &test.psnrs(), "psnr")?;
    let fa = CubicFit::fit(&anchor.psnrs(), &anchor.log_rates());
    let ft = CubicFit::fit(&test.psnrs(), &test.log_rates());
    let avg_diff = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg_diff) - 1.0) * 100.0)
}

/// Average quality difference of `test` against `anchor` at equal rate, in
/// dB. Positive means the test curve is better.
pub fn bd_psnr(anchor: &RdCurve, test: &RdCurve) -> Result<f64, RdError> {
    let (lo, hi) = overlap(&anchor.log_rates(), &test.log_rates(), "log-rate")?;
    let fa = CubicFit::fit(&anchor.log_rates(), &anchor.psnrs());
    let ft = CubicFit::fit(&test.log_rates(), &test.psnrs());
    Ok((ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo))
}
