//! Tape-free forward ops. These share kernels with the tape; they exist for
//! callers that need a plain value without recording gradients.

use crate::error::TensorError;
use crate::kernels::{self, PatchGeom};
use crate::scalar::Real;
use crate::tensor::{ConvParams, PadMode, Tensor};

pub fn conv2d<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>, TensorError> {
    conv2d_padded(input, params, PadMode::Zero)
}

pub fn conv2d_padded<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    mode: PadMode,
) -> Result<Tensor<T>, TensorError> {
    let (c_in, h, w) = input.dims3()?;
    if params.in_channels() != c_in {
        return Err(TensorError::ShapeMismatch {
            axis: "input channels",
            expected: params.in_channels(),
            got: c_in,
        });
    }
    let (kh, kw) = params.kernel();
    if kh != kw {
        return Err(TensorError::arg("conv2d", "kernel must be square"));
    }
    let geom = PatchGeom::new(c_in, h, w, kh, params.stride, params.padding).ok_or_else(|| {
        TensorError::arg(
            "conv2d",
            format!("kernel {} with pad {} does not fit {}x{}", kh, params.padding, h, w),
        )
    })?;
    let cols = kernels::im2col_kp(input.data(), &geom, mode);
    let out = kernels::conv_from_cols(
        &cols,
        params.weights.data(),
        params.bias.data(),
        geom.patches(),
        geom.patch_len(),
        params.out_channels(),
    );
    Tensor::new(vec![params.out_channels(), geom.out_h, geom.out_w], out)
}

/// `x + conv2(relu(conv1(x)))`. Both convolutions must preserve the shape.
pub fn residual_block<T: Real>(
    x: &Tensor<T>,
    p1: &ConvParams<T>,
    p2: &ConvParams<T>,
) -> Result<Tensor<T>, TensorError> {
    let (c, _, _) = x.dims3()?;
    for (name, p) in [("first", p1), ("second", p2)] {
        let (k, _) = p.kernel();
        if p.stride != 1 || p.padding != (k - 1) / 2 || p.out_channels() != c || p.in_channels() != c
        {
            return Err(TensorError::arg(
                "residual_block",
                format!("{} conv does not preserve shape [{}xHxW]", name, c),
            ));
        }
    }
    let mut mid = conv2d(x, p1)?;
    for v in mid.data_mut() {
        *v = v.maxv(T::ZERO);
    }
    let branch = conv2d(&mid, p2)?;
    let mut out = x.clone();
    for (o, b) in out.data_mut().iter_mut().zip(branch.data()) {
        *o += *b;
    }
    Ok(out)
}

/// Bilinear interpolation of `feat [C,H,W]` at `coords [2,Ho,Wo]`
/// (y plane first). Out-of-frame coordinates clamp to the border.
pub fn bilinear_sample<T: Real>(feat: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (c, h, w) = feat.dims3()?;
    let (cc, oh, ow) = coords.dims3()?;
    if cc != 2 {
        return Err(TensorError::ShapeMismatch { axis: "coord channels", expected: 2, got: cc });
    }
    let out = kernels::bilinear_forward(feat.data(), c, h, w, coords.data(), oh, ow);
    Tensor::new(vec![c, oh, ow], out)
}

/// Sliding windows of `x [C,H,W]` as a `[patches, C*k*k]` matrix; patch `i`
/// is raster-scan window `i`.
pub fn unfold<T: Real>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> Result<Tensor<T>, TensorError> {
    if k == 0 || stride == 0 {
        return Err(TensorError::arg("unfold", "k and stride must be positive"));
    }
    let (c, h, w) = x.dims3()?;
    let geom = PatchGeom::new(c, h, w, k, stride, pad).ok_or_else(|| {
        TensorError::arg("unfold", format!("window {} does not fit {}x{} with pad {}", k, h, w, pad))
    })?;
    let cols = kernels::im2col(x.data(), &geom, mode);
    Tensor::new(vec![geom.patches(), geom.patch_len()], cols)
}

/// Overlap-add inverse of [`unfold`], normalized by the per-pixel overlap
/// count. An optional embedding convolution is applied to the folded grid.
pub fn fold<T: Real>(
    patches: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
    embed: Option<&ConvParams<T>>,
) -> Result<Tensor<T>, TensorError> {
    let mut tape = crate::tape::Tape::<T>::new();
    let p = tape.constant(patches.clone());
    let folded = tape.fold(p, k, stride, pad, out_hw)?;
    let value = tape.value(folded).clone();
    match embed {
        Some(params) => conv2d(&value, params),
        None => Ok(value),
    }
}
