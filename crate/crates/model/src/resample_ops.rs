//! Differentiable bicubic resampling on tensors, sharing the tap plans of
//! the frame-domain resampler so both paths realize the same filter.

use crossres_tensor::{Real, Tape, Tensor, Val};
use crossres_video::BicubicKernel;

use crate::error::ModelError;

#[derive(Clone, Copy)]
enum Dir {
    Down,
    Up,
}

fn plans(n: usize, factor: usize, dir: Dir) -> Vec<Vec<(usize, f64)>> {
    let k = BicubicKernel::default();
    match dir {
        Dir::Down => k.down_taps(n, factor),
        Dir::Up => k.up_taps(n, factor),
    }
}

fn filter_rows<T: Real>(src: &[T], h: usize, w: usize, plan: &[Vec<(usize, f64)>]) -> Vec<T> {
    let ow = plan.len();
    let mut out = vec![T::ZERO; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, taps) in plan.iter().enumerate() {
            let mut acc = T::ZERO;
            for &(j, wt) in taps {
                acc += row[j] * T::from_f64(wt);
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn filter_cols<T: Real>(src: &[T], _h: usize, w: usize, plan: &[Vec<(usize, f64)>]) -> Vec<T> {
    let oh = plan.len();
    let mut out = vec![T::ZERO; oh * w];
    for (y, taps) in plan.iter().enumerate() {
        for x in 0..w {
            let mut acc = T::ZERO;
            for &(j, wt) in taps {
                acc += src[j * w + x] * T::from_f64(wt);
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Transpose plan: for input length `n_in`, invert `plan` so each source
/// index lists the output taps that read it.
fn transpose_plan(plan: &[Vec<(usize, f64)>], n_in: usize) -> Vec<Vec<(usize, f64)>> {
    let mut out = vec![Vec::new(); n_in];
    for (dst, taps) in plan.iter().enumerate() {
        for &(src, w) in taps {
            out[src].push((dst, w));
        }
    }
    out
}

fn resample<T: Real>(
    x: &Tensor<T>,
    factor: usize,
    dir: Dir,
) -> Result<(Tensor<T>, usize, usize), ModelError> {
    let (c, h, w) = x.dims3()?;
    let hplan = plans(w, factor, dir);
    let vplan = plans(h, factor, dir);
    let (oh, ow) = (vplan.len(), hplan.len());
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        let mid = filter_rows(plane, h, w, &hplan);
        out.extend(filter_cols(&mid, h, ow, &vplan));
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, oh, ow))
}

fn record<T: Real>(
    tape: &mut Tape<T>,
    x: Val,
    factor: usize,
    dir: Dir,
) -> Result<Val, ModelError> {
    let value = tape.value(x).clone();
    let (out, _, _) = resample(&value, factor, dir)?;
    let (c, h, w) = value.dims3()?;
    Ok(tape.custom(
        out,
        &[x],
        Box::new(move |args| {
            // Linear op: pull the gradient back through the transposed taps.
            let g = args.grad;
            let (gc, gh, gw) = g.dims3().expect("grad rank");
            debug_assert_eq!(gc, c);
            let hplan_t = transpose_plan(&plans(w, factor, dir), w);
            let vplan_t = transpose_plan(&plans(h, factor, dir), h);
            let mut gx = Vec::with_capacity(c * h * w);
            for ch in 0..gc {
                let plane = &g.data()[ch * gh * gw..(ch + 1) * gh * gw];
                let mid = filter_cols(plane, gh, gw, &vplan_t);
                gx.extend(filter_rows(&mid, h, gw, &hplan_t));
            }
            vec![Some(Tensor::new(vec![c, h, w], gx).unwrap())]
        }),
    ))
}

/// Anti-aliased bicubic downscale of a `[C,H,W]` tensor by `factor`.
pub fn bicubic_down_t<T: Real>(
    tape: &mut Tape<T>,
    x: Val,
    factor: usize,
) -> Result<Val, ModelError> {
    record(tape, x, factor, Dir::Down)
}

/// Bicubic upscale of a `[C,H,W]` tensor by `factor`.
pub fn bicubic_up_t<T: Real>(tape: &mut Tape<T>, x: Val, factor: usize) -> Result<Val, ModelError> {
    record(tape, x, factor, Dir::Up)
}

/// Down-then-up re-sampling chain on the tape.
pub fn degrade_t<T: Real>(tape: &mut Tape<T>, x: Val, factor: usize) -> Result<Val, ModelError> {
    let d = bicubic_down_t(tape, x, factor)?;
    bicubic_up_t(tape, d, factor)
}
