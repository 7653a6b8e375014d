//! Raw numeric kernels shared by the pure ops and the tape. Hot loops are
//! written as contiguous-slice axpy passes so the compiler can vectorize.

use crate::scalar::Real;
use crate::tensor::PadMode;

/// `floor((extent + 2*pad - k) / stride) + 1`
pub fn conv2d_out_dim(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * *xi;
    }
}

/// Dot product over 8 independent accumulator lanes. A single-accumulator
/// dot is a loop-carried dependence chain the compiler may not reassociate;
/// the fixed lane split keeps results deterministic and vectorizable.
#[inline]
pub(crate) fn dotp<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::ZERO; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] += xa[i] * xb[i];
        }
    }
    let mut tail = T::ZERO;
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *xa * *xb;
    }
    let s01 = lanes[0] + lanes[1];
    let s23 = lanes[2] + lanes[3];
    let s45 = lanes[4] + lanes[5];
    let s67 = lanes[6] + lanes[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// Map a (possibly out-of-range) coordinate into `[0, n)` per the pad mode.
/// `None` means the sample reads as zero and receives no gradient.
#[inline]
pub(crate) fn resolve_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    let n_i = n as isize;
    if (0..n_i).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            // Symmetric reflection; valid while |overhang| <= n.
            let r = if i < 0 { -1 - i } else { 2 * n_i - 1 - i };
            Some(r.clamp(0, n_i - 1) as usize)
        }
        PadMode::Replicate => Some(i.clamp(0, n_i - 1) as usize),
    }
}

/// Patch geometry shared by unfold, fold, and im2col-based convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PatchGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PatchGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let out_h = conv2d_out_dim(h, k, stride, pad)?;
        let out_w = conv2d_out_dim(w, k, stride, pad)?;
        Some(PatchGeom { c, h, w, k, stride, pad, out_h, out_w })
    }

    pub fn patches(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Extract sliding windows into a `[patches, C*k*k]` matrix. Row `p` holds
/// the raster-scan window `p`, laid out channel-major then ky, kx.
pub(crate) fn im2col<T: Real>(x: &[T], g: &PatchGeom, mode: PadMode) -> Vec<T> {
    let mut cols = vec![T::ZERO; g.patches() * g.patch_len()];
    let kk = g.k * g.k;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * g.patch_len()..][..g.patch_len()];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                let sy = resolve_index(iy, g.h, mode);
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    let sx = resolve_index(ix, g.w, mode);
                    if let (Some(sy), Some(sx)) = (sy, sx) {
                        let src = sy * g.w + sx;
                        for c in 0..g.c {
                            row[c * kk + ky * g.k + kx] = x[c * g.h * g.w + src];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the patch matrix back onto the `[C,H,W]` grid (transpose of
/// `im2col`). Reflected/replicated taps accumulate into their source sample.
pub(crate) fn col2im_add<T: Real>(cols: &[T], g: &PatchGeom, mode: PadMode, out: &mut [T]) {
    debug_assert_eq!(out.len(), g.c * g.h * g.w);
    let kk = g.k * g.k;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * g.patch_len()..][..g.patch_len()];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                let sy = resolve_index(iy, g.h, mode);
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    let sx = resolve_index(ix, g.w, mode);
                    if let (Some(sy), Some(sx)) = (sy, sx) {
                        let dst = sy * g.w + sx;
                        for c in 0..g.c {
                            out[c * g.h * g.w + dst] += row[c * kk + ky * g.k + kx];
                        }
                    }
                }
            }
        }
    }
}

/// im2col in `[K, P]` layout (row = one (channel, ky, kx) tap, column =
/// patch): reads and writes are both contiguous along the patch axis, and
/// the convolution gemm needs no transposes in either direction. The
/// unit-stride interior degenerates to a row copy.
pub(crate) fn im2col_kp<T: Real>(x: &[T], g: &PatchGeom, mode: PadMode) -> Vec<T> {
    let kk = g.k * g.k;
    let p = g.patches();
    let mut cols = vec![T::ZERO; g.patch_len() * p];
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[(c * kk + ky * g.k + kx) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let Some(sy) = resolve_index(iy, g.h, mode) else { continue };
                    let src_row = &plane[sy * g.w..(sy + 1) * g.w];
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        // ix = ox + kx - pad is in-bounds on a solid span.
                        let shift = kx as isize - g.pad as isize;
                        let lo = (-shift).clamp(0, g.out_w as isize) as usize;
                        let hi = (g.w as isize - shift).clamp(0, g.out_w as isize) as usize;
                        for (ox, d) in dst[..lo].iter_mut().enumerate() {
                            if let Some(sx) = resolve_index(ox as isize + shift, g.w, mode) {
                                *d = src_row[sx];
                            }
                        }
                        dst[lo..hi].copy_from_slice(
                            &src_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize],
                        );
                        for (i, d) in dst[hi..].iter_mut().enumerate() {
                            let ox = hi + i;
                            if let Some(sx) = resolve_index(ox as isize + shift, g.w, mode) {
                                *d = src_row[sx];
                            }
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if let Some(sx) = resolve_index(ix, g.w, mode) {
                                *d = src_row[sx];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Transpose of [`im2col_kp`]: scatter-add `[K, P]` columns onto the grid.
/// The unit-stride interior degenerates to an elementwise row add.
pub(crate) fn col2im_kp_add<T: Real>(cols: &[T], g: &PatchGeom, mode: PadMode, out: &mut [T]) {
    let kk = g.k * g.k;
    let p = g.patches();
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[(c * kk + ky * g.k + kx) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let Some(sy) = resolve_index(iy, g.h, mode) else { continue };
                    let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let shift = kx as isize - g.pad as isize;
                        let lo = (-shift).clamp(0, g.out_w as isize) as usize;
                        let hi = (g.w as isize - shift).clamp(0, g.out_w as isize) as usize;
                        for (ox, s) in src[..lo].iter().enumerate() {
                            if let Some(sx) = resolve_index(ox as isize + shift, g.w, mode) {
                                plane[sy * g.w + sx] += *s;
                            }
                        }
                        let base = (sy * g.w) as isize;
                        let dst = &mut plane[(base + lo as isize + shift) as usize
                            ..(base + hi as isize + shift) as usize];
                        for (d, s) in dst.iter_mut().zip(&src[lo..hi]) {
                            *d += *s;
                        }
                        for (i, s) in src[hi..].iter().enumerate() {
                            let ox = hi + i;
                            if let Some(sx) = resolve_index(ox as isize + shift, g.w, mode) {
                                plane[sy * g.w + sx] += *s;
                            }
                        }
                    } else {
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if let Some(sx) = resolve_index(ix, g.w, mode) {
                                plane[sy * g.w + sx] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Patch-axis tile and tap-axis block: one `KBLOCK x PTILE` window of the
/// patch matrix plus one `C x PTILE` window of the output/gradient stay
/// L1-resident in the inner loops.
const PTILE: usize = 512;
const KBLOCK: usize = 32;

/// Forward convolution from a `[K, P]` patch matrix.
/// `weights` is `[C_out, K]`, output is `[C_out, P]` (the CHW layout
/// directly).
pub(crate) fn conv_from_cols<T: Real>(
    cols_kp: &[T],
    weights: &[T],
    bias: &[T],
    patches: usize,
    patch_len: usize,
    c_out: usize,
) -> Vec<T> {
    let mut out = vec![T::ZERO; c_out * patches];
    for p0 in (0..patches).step_by(PTILE) {
        let pl = PTILE.min(patches - p0);
        for c in 0..c_out {
            for o in out[c * patches + p0..][..pl].iter_mut() {
                *o = bias[c];
            }
        }
        for k0 in (0..patch_len).step_by(KBLOCK) {
            let kl = KBLOCK.min(patch_len - k0);
            for c in 0..c_out {
                let wrow = &weights[c * patch_len + k0..][..kl];
                let orow = &mut out[c * patches + p0..][..pl];
                let mut k = 0;
                while k + 4 <= kl {
                    let (w0, w1, w2, w3) = (wrow[k], wrow[k + 1], wrow[k + 2], wrow[k + 3]);
                    let b0 = &cols_kp[(k0 + k) * patches + p0..][..pl];
                    let b1 = &cols_kp[(k0 + k + 1) * patches + p0..][..pl];
                    let b2 = &cols_kp[(k0 + k + 2) * patches + p0..][..pl];
                    let b3 = &cols_kp[(k0 + k + 3) * patches + p0..][..pl];
                    for j in 0..pl {
                        orow[j] += w0 * b0[j] + w1 * b1[j] + w2 * b2[j] + w3 * b3[j];
                    }
                    k += 4;
                }
                while k < kl {
                    axpy(wrow[k], &cols_kp[(k0 + k) * patches + p0..][..pl], orow);
                    k += 1;
                }
            }
        }
    }
    out
}

/// Gradients of the im2col convolution. Returns
/// `(grad_cols [K, P], grad_weights [C_out, K], grad_bias)`. Same blocking
/// discipline as the forward pass; nothing is transposed.
pub(crate) fn conv_backward_from_cols<T: Real>(
    cols_kp: &[T],
    weights: &[T],
    grad_out: &[T],
    patches: usize,
    patch_len: usize,
    c_out: usize,
    need_input: bool,
    need_weights: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let mut grad_bias = vec![T::ZERO; c_out];
    for (gb, row) in grad_bias.iter_mut().zip(grad_out.chunks_exact(patches)) {
        for g in row {
            *gb += *g;
        }
    }
    let grad_cols = need_input.then(|| {
        // gc [K, P] += W^T [K, C] @ g [C, P]: the gc block accumulates in
        // cache across the channel sweep.
        let mut gc = vec![T::ZERO; patch_len * patches];
        for p0 in (0..patches).step_by(PTILE) {
            let pl = PTILE.min(patches - p0);
            for k0 in (0..patch_len).step_by(KBLOCK) {
                let kl = KBLOCK.min(patch_len - k0);
                for k in 0..kl {
                    let grow = &mut gc[(k0 + k) * patches + p0..][..pl];
                    let mut c = 0;
                    while c + 4 <= c_out {
                        let (w0, w1, w2, w3) = (
                            weights[c * patch_len + k0 + k],
                            weights[(c + 1) * patch_len + k0 + k],
                            weights[(c + 2) * patch_len + k0 + k],
                            weights[(c + 3) * patch_len + k0 + k],
                        );
                        let g0 = &grad_out[c * patches + p0..][..pl];
                        let g1 = &grad_out[(c + 1) * patches + p0..][..pl];
                        let g2 = &grad_out[(c + 2) * patches + p0..][..pl];
                        let g3 = &grad_out[(c + 3) * patches + p0..][..pl];
                        for j in 0..pl {
                            grow[j] += w0 * g0[j] + w1 * g1[j] + w2 * g2[j] + w3 * g3[j];
                        }
                        c += 4;
                    }
                    while c < c_out {
                        axpy(weights[c * patch_len + k0 + k], &grad_out[c * patches + p0..][..pl], grow);
                        c += 1;
                    }
                }
            }
        }
        gc
    });
    let grad_weights =
        need_weights.then(|| grad_weights_from_cols(cols_kp, grad_out, patches, patch_len, c_out));
    (grad_cols, grad_weights, grad_bias)
}

/// gw [C, K] += g [C, P] @ cols^T [P, K] as tile-local dot products; the
/// cols block is reused across all channels.
pub(crate) fn grad_weights_from_cols<T: Real>(
    cols_kp: &[T],
    grad_out: &[T],
    patches: usize,
    patch_len: usize,
    c_out: usize,
) -> Vec<T> {
    let mut gw = vec![T::ZERO; c_out * patch_len];
    for p0 in (0..patches).step_by(PTILE) {
        let pl = PTILE.min(patches - p0);
        for k0 in (0..patch_len).step_by(KBLOCK) {
            let kl = KBLOCK.min(patch_len - k0);
            for c in 0..c_out {
                let grow = &grad_out[c * patches + p0..][..pl];
                let gwrow = &mut gw[c * patch_len + k0..][..kl];
                for (k, acc) in gwrow.iter_mut().enumerate() {
                    *acc += dotp(grow, &cols_kp[(k0 + k) * patches + p0..][..pl]);
                }
            }
        }
    }
    gw
}

/// Bilinear taps of one real-valued coordinate along an axis of length `n`.
/// Out-of-frame positions clamp to the border, which also zeroes the
/// positional derivative there.
#[inline]
pub(crate) fn bilinear_taps<T: Real>(coord: T, n: usize) -> (usize, usize, T, bool) {
    let max = T::from_f64((n - 1) as f64);
    let inside = coord >= T::ZERO && coord <= max;
    let c = coord.maxv(T::ZERO).minv(max);
    if n == 1 {
        return (0, 0, T::ZERO, false);
    }
    let mut lo = c.floor();
    if lo > T::from_f64((n - 2) as f64) {
        lo = T::from_f64((n - 2) as f64);
    }
    let i0 = lo.to_f64() as usize;
    (i0, i0 + 1, c - lo, inside)
}

/// Per-position taps precomputed once so the channel loop can run outermost
/// over contiguous planes.
struct SampleTaps<T> {
    idx: Vec<[usize; 4]>,
    wgt: Vec<[T; 4]>,
    y_in: Vec<bool>,
    x_in: Vec<bool>,
    y01: Vec<(usize, usize, T)>,
    x01: Vec<(usize, usize, T)>,
}

fn sample_taps<T: Real>(coords: &[T], h: usize, w: usize, plane: usize) -> SampleTaps<T> {
    let mut taps = SampleTaps {
        idx: Vec::with_capacity(plane),
        wgt: Vec::with_capacity(plane),
        y_in: Vec::with_capacity(plane),
        x_in: Vec::with_capacity(plane),
        y01: Vec::with_capacity(plane),
        x01: Vec::with_capacity(plane),
    };
    for p in 0..plane {
        let (y0, y1, ty, y_in) = bilinear_taps(coords[p], h);
        let (x0, x1, tx, x_in) = bilinear_taps(coords[plane + p], w);
        taps.idx.push([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]);
        taps.wgt.push([
            (T::ONE - ty) * (T::ONE - tx),
            (T::ONE - ty) * tx,
            ty * (T::ONE - tx),
            ty * tx,
        ]);
        taps.y_in.push(y_in);
        taps.x_in.push(x_in);
        taps.y01.push((y0, y1, ty));
        taps.x01.push((x0, x1, tx));
    }
    taps
}

pub(crate) fn bilinear_forward<T: Real>(
    feat: &[T],
    c: usize,
    h: usize,
    w: usize,
    coords: &[T],
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let plane = out_h * out_w;
    let taps = sample_taps(coords, h, w, plane);
    let mut out = vec![T::ZERO; c * plane];
    for ch in 0..c {
        let f = &feat[ch * h * w..(ch + 1) * h * w];
        let orow = &mut out[ch * plane..(ch + 1) * plane];
        for p in 0..plane {
            let i = &taps.idx[p];
            let g = &taps.wgt[p];
            orow[p] = g[0] * f[i[0]] + g[1] * f[i[1]] + g[2] * f[i[2]] + g[3] * f[i[3]];
        }
    }
    out
}

/// Returns `(grad_feat, grad_coords)`.
pub(crate) fn bilinear_backward<T: Real>(
    feat: &[T],
    c: usize,
    h: usize,
    w: usize,
    coords: &[T],
    out_h: usize,
    out_w: usize,
    grad_out: &[T],
    need_feat: bool,
    need_coords: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let plane = out_h * out_w;
    let taps = sample_taps(coords, h, w, plane);
    let gf = need_feat.then(|| {
        let mut gf = vec![T::ZERO; c * h * w];
        for ch in 0..c {
            let grow = &grad_out[ch * plane..(ch + 1) * plane];
            let dst = &mut gf[ch * h * w..(ch + 1) * h * w];
            for p in 0..plane {
                let g = grow[p];
                let i = &taps.idx[p];
                let wt = &taps.wgt[p];
                dst[i[0]] += g * wt[0];
                dst[i[1]] += g * wt[1];
                dst[i[2]] += g * wt[2];
                dst[i[3]] += g * wt[3];
            }
        }
        gf
    });
    let gc = need_coords.then(|| {
        let mut gc = vec![T::ZERO; 2 * plane];
        for ch in 0..c {
            let grow = &grad_out[ch * plane..(ch + 1) * plane];
            let f = &feat[ch * h * w..(ch + 1) * h * w];
            for p in 0..plane {
                let g = grow[p];
                let (y0, y1, ty) = taps.y01[p];
                let (x0, x1, tx) = taps.x01[p];
                gc[p] += g
                    * ((T::ONE - tx) * (f[y1 * w + x0] - f[y0 * w + x0])
                        + tx * (f[y1 * w + x1] - f[y0 * w + x1]));
                gc[plane + p] += g
                    * ((T::ONE - ty) * (f[y0 * w + x1] - f[y0 * w + x0])
                        + ty * (f[y1 * w + x1] - f[y1 * w + x0]));
            }
        }
        // Clamped coordinates receive no positional gradient.
        for p in 0..plane {
            if !taps.y_in[p] {
                gc[p] = T::ZERO;
            }
            if !taps.x_in[p] {
                gc[plane + p] = T::ZERO;
            }
        }
        gc
    });
    (gf, gc)
}

/// Co-sited bilinear upsampling by an integer factor: `src = dst / factor`.
/// Source samples land exactly on every `factor`-th output position.
fn upsample_axis_taps<T: Real>(n: usize, factor: usize) -> Vec<(usize, usize, T)> {
    let f = T::from_f64(factor as f64);
    (0..n * factor)
        .map(|o| {
            let (i0, i1, t, _) = bilinear_taps(T::from_f64(o as f64) / f, n);
            (i0, i1, t)
        })
        .collect()
}

pub(crate) fn upsample_bilinear<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let ytaps = upsample_axis_taps::<T>(h, factor);
    let xtaps = upsample_axis_taps::<T>(w, factor);
    let mut out = vec![T::ZERO; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1, ty) = ytaps[oy];
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            let orow = &mut dst[oy * ow..(oy + 1) * ow];
            for (ox, o) in orow.iter_mut().enumerate() {
                let (x0, x1, tx) = xtaps[ox];
                let top = r0[x0] + tx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + tx * (r1[x1] - r1[x0]);
                *o = top + ty * (bot - top);
            }
        }
    }
    out
}

/// Transpose of `upsample_bilinear`.
pub(crate) fn upsample_bilinear_backward<T: Real>(
    grad_out: &[T],
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let ytaps = upsample_axis_taps::<T>(h, factor);
    let xtaps = upsample_axis_taps::<T>(w, factor);
    let mut gx = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        let grow_plane = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, ty) = ytaps[oy];
            let grow = &grow_plane[oy * ow..(oy + 1) * ow];
            for (ox, g) in grow.iter().enumerate() {
                let (x0, x1, tx) = xtaps[ox];
                let w00 = (T::ONE - ty) * (T::ONE - tx);
                let w01 = (T::ONE - ty) * tx;
                let w10 = ty * (T::ONE - tx);
                let w11 = ty * tx;
                dst[y0 * w + x0] += *g * w00;
                dst[y0 * w + x1] += *g * w01;
                dst[y1 * w + x0] += *g * w10;
                dst[y1 * w + x1] += *g * w11;
            }
        }
    }
    gx
}

/// `[r*r*C, H, W] -> [C, r*H, r*W]` sub-pixel rearrangement.
pub(crate) fn pixel_shuffle<T: Real>(x: &[T], c_out: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::ZERO; c_out * oh * ow];
    for ch in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let cin = ch * r * r + (oy % r) * r + (ox % r);
                out[(ch * oh + oy) * ow + ox] = x[(cin * h + oy / r) * w + ox / r];
            }
        }
    }
    out
}

pub(crate) fn pixel_shuffle_backward<T: Real>(
    grad_out: &[T],
    c_out: usize,
    h: usize,
    w: usize,
    r: usize,
) -> Vec<T> {
    let (oh, ow) = (h * r, w * r);
    let mut gx = vec![T::ZERO; c_out * r * r * h * w];
    for ch in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let cin = ch * r * r + (oy % r) * r + (ox % r);
                gx[(cin * h + oy / r) * w + ox / r] += grad_out[(ch * oh + oy) * ow + ox];
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_from_cols_identity_kernel() {
        // 1x1 identity weights reproduce the input rows.
        let geom = PatchGeom::new(2, 3, 3, 1, 1, 0).unwrap();
        let x: Vec<f32> = (0..18).map(|i| i as f32).collect();
        let cols = im2col_kp(&x, &geom, PadMode::Zero);
        let weights = [1.0f32, 0.0, 0.0, 1.0]; // [2,2] identity
        let out = conv_from_cols(&cols, &weights, &[0.0, 0.0], 9, 2, 2);
        assert_eq!(out, x);
    }

    #[test]
    fn dotp_matches_sequential_sum() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32) * 0.3 - 4.0).collect();
        let b: Vec<f32> = (0..37).map(|i| 2.0 - (i as f32) * 0.1).collect();
        let want: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dotp(&a, &b) - want).abs() < 1e-3);
    }

    #[test]
    fn reflect_resolves_symmetric() {
        assert_eq!(resolve_index(-1, 4, PadMode::Reflect), Some(0));
        assert_eq!(resolve_index(-2, 4, PadMode::Reflect), Some(1));
        assert_eq!(resolve_index(4, 4, PadMode::Reflect), Some(3));
        assert_eq!(resolve_index(5, 4, PadMode::Reflect), Some(2));
        assert_eq!(resolve_index(2, 4, PadMode::Reflect), Some(2));
    }

    #[test]
    fn pixel_shuffle_roundtrip() {
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect(); // [4,2,2] -> [1,4,4]
        let y = pixel_shuffle(&x, 1, 2, 2, 2);
        let back = pixel_shuffle_backward(&y, 1, 2, 2, 2);
        assert_eq!(x, back);
    }
}
