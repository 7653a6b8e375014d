//! Reverse-mode vs. central-finite-difference comparison.
//!
//! The forward map may emit a tensor of any shape; both sides are reduced
//! through the same fixed random probe weights, so the check compares the
//! directional derivative per perturbed input coordinate. The probe sum and
//! the +/- difference are accumulated in f64 to keep the oracle from being
//! dominated by cancellation noise in the summation itself.

use crate::error::TensorError;
use crate::scalar::Real;
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Uniform in [-1, -0.5] U [0.5, 1]: bounded away from zero so no output
/// element silently drops out of the probe.
fn probe_value(state: &mut u64) -> f64 {
    let u = (splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64;
    let mag = 0.5 + 0.5 * u;
    if splitmix64(state) & 1 == 0 {
        mag
    } else {
        -mag
    }
}

/// Check every coordinate of every input. See [`grad_check_sampled`].
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: T) -> Result<f64, TensorError>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Val]) -> Result<Val, TensorError>,
{
    grad_check_sampled(f, inputs, eps, usize::MAX, 0x5EED)
}

/// Compare reverse-mode gradients of `f` against central finite differences
/// on up to `max_coords` sampled coordinates per input. Returns the worst
/// relative error, `|fd - ad| / max(|fd|, |ad|, 1)`; the unit floor makes
/// the bound absolute for sub-unit gradients.
///
/// Central differences are only a valid oracle where `f` is C1 across the
/// whole interval, so a coordinate is skipped when its two perturbed
/// forward passes (or the base pass) disagree on any discrete decision
/// (ReLU signs, interpolation cells, argmax picks) per the tape's region
/// signature. Non-differentiable points themselves are out of scope.
pub fn grad_check_sampled<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    eps: T,
    max_coords: usize,
    seed: u64,
) -> Result<f64, TensorError>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Val]) -> Result<Val, TensorError>,
{
    if eps.to_f64() <= 0.0 {
        return Err(TensorError::arg("grad_check", "eps must be positive"));
    }

    // Analytic pass.
    let mut tape = Tape::<T>::new();
    let vals: Vec<Val> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = f(&mut tape, &vals)?;
    let base_region = tape.region_signature();
    let out_shape = tape.shape(out).to_vec();
    let out_len: usize = out_shape.iter().product();

    let mut probe_state = seed ^ 0xA076_1D64_78BD_642F;
    let probe: Vec<f64> = (0..out_len).map(|_| probe_value(&mut probe_state)).collect();
    let seed_grad = Tensor::new(
        out_shape,
        probe.iter().map(|&p| T::from_f64(p)).collect::<Vec<T>>(),
    )
    .unwrap();
    let grads = tape.backward_seeded(out, seed_grad)?;

    let eval = |perturbed: &[Tensor<T>]| -> Result<(Vec<T>, u64), TensorError> {
        let mut tape = Tape::<T>::new();
        let vals: Vec<Val> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vals)?;
        Ok((tape.value(out).data().to_vec(), tape.region_signature()))
    };

    let mut worst = 0.0f64;
    let mut compared = 0usize;
    let mut total = 0usize;
    let mut coord_state = seed ^ 0x243F_6A88_85A3_08D3;
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            // Sampling with replacement is fine: duplicates only repeat work.
            (0..max_coords).map(|_| (splitmix64(&mut coord_state) % n as u64) as usize).collect()
        };
        let analytic = grads.get(vals[ti]);
        for &ci in &coords {
            total += 1;
            let base = input.data()[ci];
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[ci] = base + eps;
            let hi = plus[ti].data()[ci];
            let (y_plus, sig_plus) = eval(&plus)?;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[ci] = base - eps;
            let lo = minus[ti].data()[ci];
            let (y_minus, sig_minus) = eval(&minus)?;
            if sig_plus != base_region || sig_minus != base_region {
                continue;
            }
            let mut diff = 0.0f64;
            for ((yp, ym), p) in y_plus.iter().zip(&y_minus).zip(&probe) {
                diff += (yp.to_f64() - ym.to_f64()) * p;
            }
            // Divide by the perturbation actually realized in T's precision,
            // not the nominal 2*eps.
            let fd = diff / (hi.to_f64() - lo.to_f64());
            let ad = analytic.map_or(0.0, |g| g.data()[ci].to_f64());
            let err = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1.0);
            compared += 1;
            if err > worst {
                worst = err;
            }
        }
    }
    if compared == 0 && total > 0 {
        return Err(TensorError::arg(
            "grad_check",
            "every sampled coordinate straddled a non-differentiable region",
        ));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_error_is_summation_noise_only() {
        // Analytic gradient of sum is all-ones; the only residual is the
        // element type's own summation rounding.
        let x32 = Tensor::from_fn(vec![2, 3, 3], |i| (i as f32) * 0.1);
        let err32 = grad_check(
            |tape: &mut Tape<f32>, vals: &[Val]| Ok(tape.sum(vals[0])),
            &[x32],
            1e-3f32,
        )
        .unwrap();
        assert!(err32 < 1e-3, "f32: {err32}");

        let x64 = Tensor::from_fn(vec![2, 3, 3], |i| (i as f64) * 0.1);
        let err64 = grad_check(
            |tape: &mut Tape<f64>, vals: &[Val]| Ok(tape.sum(vals[0])),
            &[x64],
            1e-3f64,
        )
        .unwrap();
        assert!(err64 < 1e-12, "f64: {err64}");
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::zeros(vec![1]);
        let r = grad_check(|tape: &mut Tape<f32>, vals: &[Val]| Ok(tape.sum(vals[0])), &[x], 0.0f32);
        assert!(r.is_err());
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // An op whose backward is deliberately off by 2x must be flagged.
        let x = Tensor::from_fn(vec![4], |i| 0.5 + i as f32);
        let err = grad_check(
            |tape: &mut Tape<f32>, vals: &[Val]| {
                let v = vals[0];
                let value = tape.value(v).clone();
                let broken = tape.custom(
                    value,
                    &[v],
                    Box::new(|args| {
                        let mut g = args.grad.clone();
                        for x in g.data_mut() {
                            *x *= 2.0;
                        }
                        vec![Some(g)]
                    }),
                );
                Ok(tape.sum(broken))
            },
            &[x],
            1e-3f32,
        )
        .unwrap();
        assert!(err > 0.3, "broken backward not caught: {err}");
    }
}
