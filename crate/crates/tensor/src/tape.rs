//! Single-writer operation tape for reverse-mode differentiation. Every op
//! appends one node; `backward` sweeps the list once in reverse, so each
//! recorded node is visited exactly once regardless of fan-out.

use crate::error::TensorError;
use crate::kernels::{self, PatchGeom};
use crate::scalar::Real;
use crate::tensor::{PadMode, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Val(pub(crate) usize);

/// Context handed to a backward closure.
pub struct BackArgs<'a, T: Real> {
    /// Values of every node recorded so far.
    pub values: &'a [Tensor<T>],
    /// Parent node indices of the node being differentiated.
    pub parents: &'a [usize],
    /// Index of the node being differentiated.
    pub node: usize,
    /// Incoming gradient, same shape as the node value.
    pub grad: &'a Tensor<T>,
    /// Which parents actually need a gradient.
    pub parent_needs: &'a [bool],
}

impl<'a, T: Real> BackArgs<'a, T> {
    pub fn parent_value(&self, i: usize) -> &Tensor<T> {
        &self.values[self.parents[i]]
    }

    pub fn own_value(&self) -> &Tensor<T> {
        &self.values[self.node]
    }
}

/// Produces one gradient per parent (`None` where not needed).
pub type BackFn<T> = Box<dyn Fn(&BackArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    parents: Vec<usize>,
    needs_grad: bool,
    back: Option<BackFn<T>>,
}

pub struct Tape<T: Real = f32> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
    region: u64,
    track_regions: bool,
}

/// Gradients per tape node after a backward sweep.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` if it was never on a differentiable path.
    pub fn get(&self, v: Val) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros of `shape` when absent.
    pub fn get_or_zeros(&self, v: Val, shape: &[usize]) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            nodes: Vec::new(),
            region: 0xcbf2_9ce4_8422_2325,
            track_regions: true,
        }
    }

    /// Region signatures only matter to the finite-difference checker;
    /// training and inference loops switch them off to skip the extra
    /// passes over activation data.
    pub fn set_region_tracking(&mut self, on: bool) {
        self.track_regions = on;
    }

    pub fn regions_tracked(&self) -> bool {
        self.track_regions
    }

    /// Fold a discrete forward decision (ReLU sign pattern, interpolation
    /// cell, argmax index) into the linearity-region signature. Two forward
    /// passes with equal signatures took identical branches everywhere, so
    /// a finite-difference interval between them contains no kink.
    pub fn note_region(&mut self, h: u64) {
        let mut z = self.region ^ h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        self.region = z ^ (z >> 31);
    }

    /// Signature of every discrete decision taken by ops recorded so far.
    pub fn region_signature(&self) -> u64 {
        self.region
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Val) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Val) -> &[usize] {
        self.values[v.0].shape()
    }

    fn push(&mut self, value: Tensor<T>, parents: Vec<usize>, back: Option<BackFn<T>>) -> Val {
        let needs = back.is_some() && parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.values.push(value);
        self.nodes.push(Node { parents, needs_grad: needs, back });
        Val(self.nodes.len() - 1)
    }

    /// Record an input. It participates in gradients iff `requires_grad` is
    /// set on the tensor.
    pub fn leaf(&mut self, t: Tensor<T>) -> Val {
        let needs = t.requires_grad();
        self.values.push(t);
        self.nodes.push(Node { parents: vec![], needs_grad: needs, back: None });
        Val(self.nodes.len() - 1)
    }

    /// Record a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor<T>) -> Val {
        let mut t = t;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Record a custom op. Exposed so downstream crates can add ops (the
    /// affinity search does) without widening this module.
    pub fn custom(&mut self, value: Tensor<T>, parents: &[Val], back: BackFn<T>) -> Val {
        let parents = parents.iter().map(|v| v.0).collect();
        self.push(value, parents, Some(back))
    }

    /// Reverse sweep from `root`, which must be scalar-shaped (`[1]`); the
    /// seed gradient is 1.
    ///
    /// The sweep consumes the tape: values and intermediate gradients are
    /// released as soon as the reverse-topological order proves them dead,
    /// which keeps the working set near the live frontier instead of the
    /// whole graph. Only leaf gradients survive in the result.
    pub fn backward(&mut self, root: Val) -> Result<Gradients<T>, TensorError> {
        if self.values[root.0].len() != 1 {
            return Err(TensorError::arg("backward", "root must be scalar"));
        }
        self.backward_seeded(root, Tensor::scalar(T::ONE))
    }

    /// Reverse sweep with an explicit seed gradient (shape must match root).
    pub fn backward_seeded(
        &mut self,
        root: Val,
        seed: Tensor<T>,
    ) -> Result<Gradients<T>, TensorError> {
        if seed.shape() != self.values[root.0].shape() {
            return Err(TensorError::arg("backward", "seed shape must match root value"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let is_op = node.back.is_some();
            if !node.needs_grad {
                if is_op {
                    // Never revisited: release the value eagerly.
                    self.values[i] = Tensor::zeros(vec![0]);
                    grads[i] = None;
                }
                continue;
            }
            if !is_op {
                continue; // leaf: keep its accumulated gradient
            }
            let Some(grad) = grads[i].take() else {
                self.values[i] = Tensor::zeros(vec![0]);
                continue;
            };
            let node = &self.nodes[i];
            let parent_needs: Vec<bool> =
                node.parents.iter().map(|&p| self.nodes[p].needs_grad).collect();
            let parent_grads = {
                let args = BackArgs {
                    values: &self.values,
                    parents: &node.parents,
                    node: i,
                    grad: &grad,
                    parent_needs: &parent_needs,
                };
                let back = node.back.as_ref().expect("op node");
                (back)(&args)
            };
            debug_assert_eq!(parent_grads.len(), self.nodes[i].parents.len());
            let parents = self.nodes[i].parents.clone();
            for (slot, g) in parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                debug_assert_eq!(g.shape(), self.values[*slot].shape());
                match &mut grads[*slot] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    slot_g => *slot_g = Some(g),
                }
            }
            // All consumers of node i sit at higher indices and are done;
            // its value and gradient are dead.
            self.values[i] = Tensor::zeros(vec![0]);
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise ----------------------------------------------------

    fn check_same_shape(&self, op: &'static str, a: Val, b: Val) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::arg(
                op,
                format!("operand shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|args: &BackArgs<'_, T>| {
                vec![
                    args.parent_needs[0].then(|| args.grad.clone()),
                    args.parent_needs[1].then(|| args.grad.clone()),
                ]
            })),
        ))
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x - *y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|args: &BackArgs<'_, T>| {
                let neg = || {
                    let mut g = args.grad.clone();
                    for v in g.data_mut() {
                        *v = -*v;
                    }
                    g
                };
                vec![
                    args.parent_needs[0].then(|| args.grad.clone()),
                    args.parent_needs[1].then(neg),
                ]
            })),
        ))
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.check_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|args: &BackArgs<'_, T>| {
                let ga = args.parent_needs[0].then(|| {
                    let mut g = args.grad.clone();
                    for (v, o) in g.data_mut().iter_mut().zip(args.parent_value(1).data()) {
                        *v = *v * *o;
                    }
                    g
                });
                let gb = args.parent_needs[1].then(|| {
                    let mut g = args.grad.clone();
                    for (v, o) in g.data_mut().iter_mut().zip(args.parent_value(0).data()) {
                        *v = *v * *o;
                    }
                    g
                });
                vec![ga, gb]
            })),
        ))
    }

    pub fn scale(&mut self, a: Val, factor: T) -> Val {
        let data = self.value(a).data().iter().map(|x| *x * factor).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let mut g = args.grad.clone();
                for v in g.data_mut() {
                    *v = *v * factor;
                }
                vec![Some(g)]
            })),
        )
    }

    pub fn add_scalar(&mut self, a: Val, offset: T) -> Val {
        let data = self.value(a).data().iter().map(|x| *x + offset).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|args: &BackArgs<'_, T>| vec![Some(args.grad.clone())])),
        )
    }

    pub fn relu(&mut self, a: Val) -> Val {
        if self.track_regions {
            let sig = sign_hash(self.value(a).data().iter().map(|x| *x > T::ZERO));
            self.note_region(sig ^ 0x5E1F);
        }
        let data = self.value(a).data().iter().map(|x| x.maxv(T::ZERO)).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|args: &BackArgs<'_, T>| {
                let mut g = args.grad.clone();
                for (v, x) in g.data_mut().iter_mut().zip(args.parent_value(0).data()) {
                    if *x <= T::ZERO {
                        *v = T::ZERO;
                    }
                }
                vec![Some(g)]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Val) -> Val {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| T::ONE / (T::ONE + (-*x).exp()))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|args: &BackArgs<'_, T>| {
                let mut g = args.grad.clone();
                for (v, y) in g.data_mut().iter_mut().zip(args.own_value().data()) {
                    *v = *v * *y * (T::ONE - *y);
                }
                vec![Some(g)]
            })),
        )
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&mut self, a: Val) -> Val {
        let mut acc = T::ZERO;
        for v in self.value(a).data() {
            acc += *v;
        }
        self.push(
            Tensor::scalar(acc),
            vec![a.0],
            Some(Box::new(|args: &BackArgs<'_, T>| {
                let g = args.grad.data()[0];
                vec![Some(Tensor::full(args.parent_value(0).shape().to_vec(), g))]
            })),
        )
    }

    /// Mean absolute difference (L1) between two same-shape tensors.
    /// The subgradient at exact zeros is zero.
    pub fn l1_loss(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.check_same_shape("l1_loss", a, b)?;
        let n = self.value(a).len();
        let inv_n = T::ONE / T::from_f64(n as f64);
        if self.track_regions {
            let sig = sign_hash(
                self.value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(x, y)| *x > *y),
            );
            self.note_region(sig ^ 0xABD1);
        }
        let mut acc = T::ZERO;
        for (x, y) in self.value(a).data().iter().zip(self.value(b).data()) {
            acc += (*x - *y).abs();
        }
        Ok(self.push(
            Tensor::scalar(acc * inv_n),
            vec![a.0, b.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let g = args.grad.data()[0] * inv_n;
                let signs = |flip: bool| {
                    let mut out = Tensor::zeros(args.parent_value(0).shape().to_vec());
                    for ((o, x), y) in out
                        .data_mut()
                        .iter_mut()
                        .zip(args.parent_value(0).data())
                        .zip(args.parent_value(1).data())
                    {
                        let d = *x - *y;
                        let s = if d > T::ZERO {
                            g
                        } else if d < T::ZERO {
                            -g
                        } else {
                            T::ZERO
                        };
                        *o = if flip { -s } else { s };
                    }
                    out
                };
                vec![
                    args.parent_needs[0].then(|| signs(false)),
                    args.parent_needs[1].then(|| signs(true)),
                ]
            })),
        ))
    }

    // ---- shape ops -------------------------------------------------------

    pub fn reshape(&mut self, a: Val, shape: impl Into<Vec<usize>>) -> Result<Val, TensorError> {
        let shape = shape.into();
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(
            out,
            vec![a.0],
            Some(Box::new(|args: &BackArgs<'_, T>| {
                let g = args
                    .grad
                    .clone()
                    .reshape(args.parent_value(0).shape().to_vec())
                    .expect("reshape grad");
                vec![Some(g)]
            })),
        ))
    }

    pub fn concat_channels(&mut self, parts: &[Val]) -> Result<Val, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::arg("concat_channels", "empty input list"));
        }
        let (_, h, w) = self.value(parts[0]).dims3()?;
        let mut c_total = 0usize;
        for &p in parts {
            let (c, ph, pw) = self.value(p).dims3()?;
            if (ph, pw) != (h, w) {
                return Err(TensorError::arg(
                    "concat_channels",
                    format!("spatial dims differ: {}x{} vs {}x{}", ph, pw, h, w),
                ));
            }
            c_total += c;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![c_total, h, w], data).unwrap();
        Ok(self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(|args: &BackArgs<'_, T>| {
                let mut offset = 0usize;
                let mut grads = Vec::with_capacity(args.parents.len());
                for (i, &p) in args.parents.iter().enumerate() {
                    let len = args.values[p].len();
                    let piece = args.parent_needs[i].then(|| {
                        Tensor::new(
                            args.values[p].shape().to_vec(),
                            args.grad.data()[offset..offset + len].to_vec(),
                        )
                        .unwrap()
                    });
                    offset += len;
                    grads.push(piece);
                }
                grads
            })),
        ))
    }

    pub fn slice_channels(&mut self, a: Val, start: usize, count: usize) -> Result<Val, TensorError> {
        let (c, h, w) = self.value(a).dims3()?;
        if start + count > c {
            return Err(TensorError::arg(
                "slice_channels",
                format!("range {}..{} out of {} channels", start, start + count, c),
            ));
        }
        let plane = h * w;
        let data = self.value(a).data()[start * plane..(start + count) * plane].to_vec();
        let out = Tensor::new(vec![count, h, w], data).unwrap();
        Ok(self.push(
            out,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let mut g = Tensor::zeros(args.parent_value(0).shape().to_vec());
                g.data_mut()[start * plane..(start + count) * plane]
                    .copy_from_slice(args.grad.data());
                vec![Some(g)]
            })),
        ))
    }

    // ---- convolution and friends ------------------------------------------

    /// 2-D convolution over `[C,H,W]` with explicit weight/bias vals.
    pub fn conv2d(
        &mut self,
        x: Val,
        weights: Val,
        bias: Val,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
    ) -> Result<Val, TensorError> {
        self.conv2d_ext(x, weights, bias, stride, padding, pad_mode, false, None)
    }

    /// Convolution with the ReLU fused into the output buffer.
    pub fn conv2d_relu(
        &mut self,
        x: Val,
        weights: Val,
        bias: Val,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
    ) -> Result<Val, TensorError> {
        self.conv2d_ext(x, weights, bias, stride, padding, pad_mode, true, None)
    }

    /// Convolution with an elementwise skip addition fused into the output
    /// buffer (the residual-block tail).
    pub fn conv2d_skip(
        &mut self,
        x: Val,
        weights: Val,
        bias: Val,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
        skip: Val,
    ) -> Result<Val, TensorError> {
        self.conv2d_ext(x, weights, bias, stride, padding, pad_mode, false, Some(skip))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_ext(
        &mut self,
        x: Val,
        weights: Val,
        bias: Val,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
        relu: bool,
        skip: Option<Val>,
    ) -> Result<Val, TensorError> {
        let (c_in, h, w) = self.value(x).dims3()?;
        let ws = self.value(weights).shape().to_vec();
        if ws.len() != 4 {
            return Err(TensorError::ShapeMismatch { axis: "weight rank", expected: 4, got: ws.len() });
        }
        let (c_out, wc_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wc_in != c_in {
            return Err(TensorError::ShapeMismatch { axis: "input channels", expected: wc_in, got: c_in });
        }
        if kh != kw {
            return Err(TensorError::arg("conv2d", "kernel must be square"));
        }
        if self.value(bias).len() != c_out {
            return Err(TensorError::ShapeMismatch {
                axis: "bias/out-channel",
                expected: c_out,
                got: self.value(bias).len(),
            });
        }
        let geom = PatchGeom::new(c_in, h, w, kh, stride, padding).ok_or_else(|| {
            TensorError::arg(
                "conv2d",
                format!("kernel {} with pad {} does not fit {}x{}", kh, padding, h, w),
            )
        })?;
        let out_shape = [c_out, geom.out_h, geom.out_w];
        if let Some(sv) = skip {
            if self.value(sv).shape() != out_shape {
                return Err(TensorError::arg(
                    "conv2d",
                    format!(
                        "skip shape {:?} differs from output {:?}",
                        self.value(sv).shape(),
                        out_shape
                    ),
                ));
            }
        }
        let cols = kernels::im2col_kp(self.value(x).data(), &geom, pad_mode);
        let mut out_data = kernels::conv_from_cols(
            &cols,
            self.value(weights).data(),
            self.value(bias).data(),
            geom.patches(),
            geom.patch_len(),
            c_out,
        );
        drop(cols);
        if let Some(sv) = skip {
            for (o, s) in out_data.iter_mut().zip(self.value(sv).data()) {
                *o += *s;
            }
        }
        if relu {
            for o in out_data.iter_mut() {
                *o = o.maxv(T::ZERO);
            }
        }
        if relu && self.track_regions {
            // out > 0 iff the pre-activation was > 0: same region bits.
            let sig = sign_hash(out_data.iter().map(|v| *v > T::ZERO));
            self.note_region(sig ^ 0x5E1F);
        }
        let out = Tensor::new(out_shape.to_vec(), out_data).unwrap();
        let mut parents = vec![x.0, weights.0, bias.0];
        if let Some(sv) = skip {
            parents.push(sv.0);
        }
        let has_skip = skip.is_some();
        Ok(self.push(
            out,
            parents,
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                // The fused ReLU zeroes the gradient wherever the stored
                // output is zero (output > 0 iff pre-activation > 0).
                let masked;
                let g_eff: &Tensor<T> = if relu {
                    let mut g = args.grad.clone();
                    for (gv, ov) in g.data_mut().iter_mut().zip(args.own_value().data()) {
                        if *ov <= T::ZERO {
                            *gv = T::ZERO;
                        }
                    }
                    masked = g;
                    &masked
                } else {
                    args.grad
                };
                // im2col is recomputed instead of captured: the input
                // already lives on the tape and the gemm dominates.
                let cols = kernels::im2col_kp(args.parent_value(0).data(), &geom, pad_mode);
                let (g_cols, gw_data, gb_data) = kernels::conv_backward_from_cols(
                    &cols,
                    args.parent_value(1).data(),
                    g_eff.data(),
                    geom.patches(),
                    geom.patch_len(),
                    c_out,
                    args.parent_needs[0],
                    args.parent_needs[1],
                );
                let gx_data = g_cols.map(|gc| {
                    let mut gx = vec![T::ZERO; geom.c * geom.h * geom.w];
                    kernels::col2im_kp_add(&gc, &geom, pad_mode, &mut gx);
                    gx
                });
                let gx = gx_data
                    .map(|g| Tensor::new(args.parent_value(0).shape().to_vec(), g).unwrap());
                let gw = gw_data
                    .map(|g| Tensor::new(args.parent_value(1).shape().to_vec(), g).unwrap());
                let gb = args.parent_needs[2].then(|| Tensor::new(vec![c_out], gb_data).unwrap());
                let mut grads = vec![gx, gw, gb];
                if has_skip {
                    grads.push(args.parent_needs[3].then(|| g_eff.clone()));
                }
                grads
            })),
        ))
    }

    /// Bilinear sampling of `feat [C,H,W]` at `coords [2,Ho,Wo]` (y plane
    /// then x plane). Out-of-frame positions clamp to the border.
    pub fn bilinear_sample(&mut self, feat: Val, coords: Val) -> Result<Val, TensorError> {
        let (c, h, w) = self.value(feat).dims3()?;
        let (cc, oh, ow) = self.value(coords).dims3()?;
        if cc != 2 {
            return Err(TensorError::ShapeMismatch { axis: "coord channels", expected: 2, got: cc });
        }
        if self.track_regions {
            // Interpolation cells and clamp states are region decisions.
            let data = self.value(coords).data();
            let plane = oh * ow;
            let mut acc = 0xcbf2_9ce4_8422_2325u64;
            for p in 0..plane {
                let (y0, _, _, y_in) = kernels::bilinear_taps(data[p], h);
                let (x0, _, _, x_in) = kernels::bilinear_taps(data[plane + p], w);
                let code = (y0 as u64) << 34
                    | (x0 as u64) << 4
                    | u64::from(y_in) << 1
                    | u64::from(x_in);
                acc = (acc ^ code).wrapping_mul(0x0000_0100_0000_01B3);
            }
            self.note_region(acc ^ 0xB111);
        }
        let out_data =
            kernels::bilinear_forward(self.value(feat).data(), c, h, w, self.value(coords).data(), oh, ow);
        let out = Tensor::new(vec![c, oh, ow], out_data).unwrap();
        Ok(self.push(
            out,
            vec![feat.0, coords.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let (gf, gc) = kernels::bilinear_backward(
                    args.parent_value(0).data(),
                    c,
                    h,
                    w,
                    args.parent_value(1).data(),
                    oh,
                    ow,
                    args.grad.data(),
                    args.parent_needs[0],
                    args.parent_needs[1],
                );
                vec![
                    gf.map(|g| Tensor::new(vec![c, h, w], g).unwrap()),
                    gc.map(|g| Tensor::new(vec![2, oh, ow], g).unwrap()),
                ]
            })),
        ))
    }

    /// Sliding-window extraction into `[patches, C*k*k]`.
    pub fn unfold(
        &mut self,
        x: Val,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Val, TensorError> {
        if k == 0 || stride == 0 {
            return Err(TensorError::arg("unfold", "k and stride must be positive"));
        }
        let (c, h, w) = self.value(x).dims3()?;
        let geom = PatchGeom::new(c, h, w, k, stride, pad).ok_or_else(|| {
            TensorError::arg("unfold", format!("window {} does not fit {}x{} with pad {}", k, h, w, pad))
        })?;
        let cols = kernels::im2col(self.value(x).data(), &geom, mode);
        let out = Tensor::new(vec![geom.patches(), geom.patch_len()], cols).unwrap();
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let mut gx = vec![T::ZERO; geom.c * geom.h * geom.w];
                kernels::col2im_add(args.grad.data(), &geom, mode, &mut gx);
                vec![Some(Tensor::new(args.parent_value(0).shape().to_vec(), gx).unwrap())]
            })),
        ))
    }

    /// Inverse of `unfold`: overlap-add of the patch rows onto the output
    /// grid, then division by the per-pixel overlap count so that
    /// `fold(unfold(x)) == x`. Non-overlapping tilings have all counts 1.
    pub fn fold(
        &mut self,
        patches: Val,
        k: usize,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Result<Val, TensorError> {
        if k == 0 || stride == 0 {
            return Err(TensorError::arg("fold", "k and stride must be positive"));
        }
        let (n, d) = self.value(patches).dims2()?;
        if d % (k * k) != 0 {
            return Err(TensorError::arg(
                "fold",
                format!("patch length {} is not divisible by k*k = {}", d, k * k),
            ));
        }
        let c = d / (k * k);
        let (h, w) = out_hw;
        let geom = PatchGeom::new(c, h, w, k, stride, pad).ok_or_else(|| {
            TensorError::arg("fold", format!("window {} does not fit {}x{} with pad {}", k, h, w, pad))
        })?;
        if geom.patches() != n {
            return Err(TensorError::ShapeMismatch {
                axis: "patch count",
                expected: geom.patches(),
                got: n,
            });
        }
        let counts = fold_counts::<T>(&geom);
        let mut acc = vec![T::ZERO; c * h * w];
        kernels::col2im_add(self.value(patches).data(), &geom, PadMode::Zero, &mut acc);
        let plane = h * w;
        for ch in 0..c {
            for (a, cnt) in acc[ch * plane..(ch + 1) * plane].iter_mut().zip(&counts) {
                if *cnt > T::ZERO {
                    *a = *a / *cnt;
                }
            }
        }
        let out = Tensor::new(vec![c, h, w], acc).unwrap();
        Ok(self.push(
            out,
            vec![patches.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                // Linear op: grad_patches = gather(grad_out / count).
                let counts = fold_counts::<T>(&geom);
                let plane = geom.h * geom.w;
                let mut scaled = args.grad.clone();
                for ch in 0..geom.c {
                    for (g, cnt) in scaled.data_mut()[ch * plane..(ch + 1) * plane]
                        .iter_mut()
                        .zip(&counts)
                    {
                        if *cnt > T::ZERO {
                            *g = *g / *cnt;
                        }
                    }
                }
                let cols = kernels::im2col(scaled.data(), &geom, PadMode::Zero);
                vec![Some(
                    Tensor::new(args.parent_value(0).shape().to_vec(), cols).unwrap(),
                )]
            })),
        ))
    }

    /// Row gather: `out[i] = patches[indices[i]]`. The index map is data,
    /// not a differentiable input.
    pub fn select_rows(&mut self, patches: Val, indices: &[usize]) -> Result<Val, TensorError> {
        let (n, d) = self.value(patches).dims2()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::arg(
                "select_rows",
                format!("index {} out of {} rows", bad, n),
            ));
        }
        let src = self.value(patches).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], data).unwrap();
        let idx: Vec<usize> = indices.to_vec();
        Ok(self.push(
            out,
            vec![patches.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let mut g = Tensor::zeros(args.parent_value(0).shape().to_vec());
                for (row, &i) in idx.iter().enumerate() {
                    let dst = &mut g.data_mut()[i * d..(i + 1) * d];
                    let src = &args.grad.data()[row * d..(row + 1) * d];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += *b;
                    }
                }
                vec![Some(g)]
            })),
        ))
    }

    /// Per-position channel dot product of two `[C,H,W]` tensors -> `[1,H,W]`.
    pub fn dot_channels(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.check_same_shape("dot_channels", a, b)?;
        let (c, h, w) = self.value(a).dims3()?;
        let plane = h * w;
        let mut data = vec![T::ZERO; plane];
        for ch in 0..c {
            for p in 0..plane {
                data[p] += self.value(a).data()[ch * plane + p] * self.value(b).data()[ch * plane + p];
            }
        }
        let out = Tensor::new(vec![1, h, w], data).unwrap();
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let grad_for = |other: usize| {
                    let mut g = Tensor::zeros(args.parent_value(other).shape().to_vec());
                    for ch in 0..c {
                        for p in 0..plane {
                            g.data_mut()[ch * plane + p] =
                                args.grad.data()[p] * args.parent_value(other).data()[ch * plane + p];
                        }
                    }
                    g
                };
                vec![
                    args.parent_needs[0].then(|| grad_for(1)),
                    args.parent_needs[1].then(|| grad_for(0)),
                ]
            })),
        ))
    }

    /// Broadcast multiply of `[C,H,W]` by a `[1,H,W]` plane.
    pub fn mul_plane(&mut self, x: Val, plane: Val) -> Result<Val, TensorError> {
        let (c, h, w) = self.value(x).dims3()?;
        let (pc, ph, pw) = self.value(plane).dims3()?;
        if pc != 1 || (ph, pw) != (h, w) {
            return Err(TensorError::arg(
                "mul_plane",
                format!("plane must be [1,{},{}], got [{},{},{}]", h, w, pc, ph, pw),
            ));
        }
        let np = h * w;
        let mut data = vec![T::ZERO; c * np];
        for ch in 0..c {
            for p in 0..np {
                data[ch * np + p] = self.value(x).data()[ch * np + p] * self.value(plane).data()[p];
            }
        }
        let out = Tensor::new(vec![c, h, w], data).unwrap();
        Ok(self.push(
            out,
            vec![x.0, plane.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let gx = args.parent_needs[0].then(|| {
                    let mut g = Tensor::zeros(args.parent_value(0).shape().to_vec());
                    for ch in 0..c {
                        for p in 0..np {
                            g.data_mut()[ch * np + p] =
                                args.grad.data()[ch * np + p] * args.parent_value(1).data()[p];
                        }
                    }
                    g
                });
                let gp = args.parent_needs[1].then(|| {
                    let mut g = Tensor::zeros(vec![1, h, w]);
                    for ch in 0..c {
                        for p in 0..np {
                            g.data_mut()[p] +=
                                args.grad.data()[ch * np + p] * args.parent_value(0).data()[ch * np + p];
                        }
                    }
                    g
                });
                vec![gx, gp]
            })),
        ))
    }

    /// `[r*r*C, H, W] -> [C, r*H, r*W]` sub-pixel rearrangement.
    pub fn pixel_shuffle(&mut self, x: Val, r: usize) -> Result<Val, TensorError> {
        let (c_in, h, w) = self.value(x).dims3()?;
        if r == 0 || c_in % (r * r) != 0 {
            return Err(TensorError::arg(
                "pixel_shuffle",
                format!("channels {} not divisible by r*r = {}", c_in, r * r),
            ));
        }
        let c_out = c_in / (r * r);
        let data = kernels::pixel_shuffle(self.value(x).data(), c_out, h, w, r);
        let out = Tensor::new(vec![c_out, h * r, w * r], data).unwrap();
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let g = kernels::pixel_shuffle_backward(args.grad.data(), c_out, h, w, r);
                vec![Some(Tensor::new(args.parent_value(0).shape().to_vec(), g).unwrap())]
            })),
        ))
    }

    /// Co-sited bilinear upsampling by an integer factor (`src = dst/f`);
    /// source samples are reproduced exactly at every `f`-th position.
    pub fn upsample_bilinear(&mut self, x: Val, factor: usize) -> Result<Val, TensorError> {
        if factor == 0 {
            return Err(TensorError::arg("upsample_bilinear", "factor must be positive"));
        }
        let (c, h, w) = self.value(x).dims3()?;
        let data = kernels::upsample_bilinear(self.value(x).data(), c, h, w, factor);
        let out = Tensor::new(vec![c, h * factor, w * factor], data).unwrap();
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |args: &BackArgs<'_, T>| {
                let g = kernels::upsample_bilinear_backward(args.grad.data(), c, h, w, factor);
                vec![Some(Tensor::new(args.parent_value(0).shape().to_vec(), g).unwrap())]
            })),
        ))
    }
}

/// Order-dependent hash of a boolean stream (FNV-1a over packed words).
pub(crate) fn sign_hash(bits: impl Iterator<Item = bool>) -> u64 {
    let mut acc = 0xcbf2_9ce4_8422_2325u64;
    let mut word = 0u64;
    let mut n = 0u32;
    for b in bits {
        word = (word << 1) | u64::from(b);
        n += 1;
        if n == 64 {
            acc = (acc ^ word).wrapping_mul(0x0000_0100_0000_01B3);
            word = 0;
            n = 0;
        }
    }
    (acc ^ word ^ u64::from(n)).wrapping_mul(0x0000_0100_0000_01B3)
}

fn fold_counts<T: Real>(geom: &PatchGeom) -> Vec<T> {
    let ones = vec![T::ONE; geom.patches() * geom.patch_len()];
    let single = PatchGeom { c: 1, ..*geom };
    let ones_single: Vec<T> = ones[..geom.patches() * geom.k * geom.k].to_vec();
    let mut counts = vec![T::ZERO; geom.h * geom.w];
    kernels::col2im_add(&ones_single, &single, PadMode::Zero, &mut counts);
    counts
}
