//! Convolution parameter blocks, their tape-bound mirrors, and the binder
//! that records (name, Val) pairs so gradients can be pulled back out by
//! parameter name after a backward sweep.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crossres_tensor::{PadMode, Real, Tape, Tensor, Val};

use crate::error::ModelError;
use crate::GopMode;

#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    /// Feature width of every stage.
    pub channels: usize,
    pub mode: GopMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { channels: 64, mode: GopMode::Ldp }
    }
}

/// One convolution layer's owned parameters (always f32 masters; binding
/// casts into the tape's element type).
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl Conv {
    pub fn kaiming(
        rng: &mut ChaCha8Rng,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Conv {
        let bound = (6.0 / (c_in * k * k) as f32).sqrt();
        let w = Tensor::from_fn(vec![c_out, c_in, k, k], |_| rng.random_range(-bound..bound));
        Conv { w, b: Tensor::zeros(vec![c_out]), stride, pad, pad_mode: PadMode::Zero }
    }

    /// Zero-initialized head: emits exactly zero regardless of input.
    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, pad: usize) -> Conv {
        Conv {
            w: Tensor::zeros(vec![c_out, c_in, k, k]),
            b: Tensor::zeros(vec![c_out]),
            stride,
            pad,
            pad_mode: PadMode::Zero,
        }
    }

    /// Small random head; used where exact zeros would pin sampling
    /// coordinates onto the bilinear lattice kinks during checks.
    pub fn jittered(
        rng: &mut ChaCha8Rng,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        pad: usize,
        scale: f32,
    ) -> Conv {
        let mut c = Conv::zeros(c_out, c_in, k, stride, pad);
        for v in c.w.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
        for v in c.b.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
        c
    }

    pub fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        out.push((format!("{name}.w"), &self.w));
        out.push((format!("{name}.b"), &self.b));
    }

    pub fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        out.push((format!("{name}.w"), &mut self.w));
        out.push((format!("{name}.b"), &mut self.b));
    }
}

/// Tape-resident conv handles.
#[derive(Clone, Copy, Debug)]
pub struct ConvVal {
    pub w: Val,
    pub b: Val,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl ConvVal {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Val) -> Result<Val, ModelError> {
        Ok(tape.conv2d(x, self.w, self.b, self.stride, self.pad, self.pad_mode)?)
    }

    pub fn apply_relu<T: Real>(&self, tape: &mut Tape<T>, x: Val) -> Result<Val, ModelError> {
        Ok(tape.conv2d_relu(x, self.w, self.b, self.stride, self.pad, self.pad_mode)?)
    }

    pub fn apply_skip<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: Val,
        skip: Val,
    ) -> Result<Val, ModelError> {
        Ok(tape.conv2d_skip(x, self.w, self.b, self.stride, self.pad, self.pad_mode, skip)?)
    }
}

/// Records parameters onto a tape, remembering their names in bind order.
pub struct Binder<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub entries: Vec<(String, Val)>,
    pub trainable: bool,
}

impl<'a, T: Real> Binder<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, trainable: bool) -> Self {
        Binder { tape, entries: Vec::new(), trainable }
    }

    pub fn conv(&mut self, name: &str, c: &Conv) -> ConvVal {
        let mut w: Tensor<T> = c.w.cast();
        let mut b: Tensor<T> = c.b.cast();
        w.set_requires_grad(self.trainable);
        b.set_requires_grad(self.trainable);
        let w = self.tape.leaf(w);
        let b = self.tape.leaf(b);
        self.entries.push((format!("{name}.w"), w));
        self.entries.push((format!("{name}.b"), b));
        ConvVal { w, b, stride: c.stride, pad: c.pad, pad_mode: c.pad_mode }
    }
}

/// conv -> ReLU -> conv with an identity skip; no normalization layers.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub c1: Conv,
    pub c2: Conv,
}

impl ResBlock {
    pub fn init(rng: &mut ChaCha8Rng, channels: usize) -> ResBlock {
        // The closing conv starts at a tenth of Kaiming scale; without
        // normalization layers, unit-gain branches double the activation
        // variance at every block and deep stacks blow up.
        let mut c2 = Conv::kaiming(rng, channels, channels, 3, 1, 1);
        for v in c2.w.data_mut() {
            *v *= 0.1;
        }
        ResBlock { c1: Conv::kaiming(rng, channels, channels, 3, 1, 1), c2 }
    }

    pub fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        self.c1.visit(&format!("{name}.c1"), out);
        self.c2.visit(&format!("{name}.c2"), out);
    }

    pub fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        self.c1.visit_mut(&format!("{name}.c1"), out);
        self.c2.visit_mut(&format!("{name}.c2"), out);
    }

    pub fn bind<T: Real>(&self, b: &mut Binder<'_, T>, name: &str) -> ResBlockVals {
        ResBlockVals {
            c1: b.conv(&format!("{name}.c1"), &self.c1),
            c2: b.conv(&format!("{name}.c2"), &self.c2),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ResBlockVals {
    pub c1: ConvVal,
    pub c2: ConvVal,
}

impl ResBlockVals {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Val) -> Result<Val, ModelError> {
        let act = self.c1.apply_relu(tape, x)?;
        self.c2.apply_skip(tape, act, x)
    }
}

/// Three-level multiscale trunk: stride-2 descents with two residual
/// blocks per level, then coarse-to-fine merges back to every scale.
/// Emits refined features at full, half, and quarter resolution.
#[derive(Clone, Debug)]
pub struct PyramidTrunk {
    pub conv_in: Conv,
    pub level_blocks: Vec<[ResBlock; 2]>,
    pub down: [Conv; 2],
    pub merge: [Conv; 2],
}

impl PyramidTrunk {
    pub fn init(rng: &mut ChaCha8Rng, c_in: usize, channels: usize) -> PyramidTrunk {
        PyramidTrunk {
            conv_in: Conv::kaiming(rng, channels, c_in, 3, 1, 1),
            level_blocks: (0..3)
                .map(|_| [ResBlock::init(rng, channels), ResBlock::init(rng, channels)])
                .collect(),
            down: [
                Conv::kaiming(rng, channels, channels, 3, 2, 1),
                Conv::kaiming(rng, channels, channels, 3, 2, 1),
            ],
            merge: [
                Conv::kaiming(rng, channels, 2 * channels, 3, 1, 1),
                Conv::kaiming(rng, channels, 2 * channels, 3, 1, 1),
            ],
        }
    }

    pub fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        self.conv_in.visit(&format!("{name}.conv_in"), out);
        for (l, blocks) in self.level_blocks.iter().enumerate() {
            for (i, blk) in blocks.iter().enumerate() {
                blk.visit(&format!("{name}.l{l}.b{i}"), out);
            }
        }
        for (i, d) in self.down.iter().enumerate() {
            d.visit(&format!("{name}.down{i}"), out);
        }
        for (i, m) in self.merge.iter().enumerate() {
            m.visit(&format!("{name}.merge{i}"), out);
        }
    }

    pub fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        self.conv_in.visit_mut(&format!("{name}.conv_in"), out);
        for (l, blocks) in self.level_blocks.iter_mut().enumerate() {
            for (i, blk) in blocks.iter_mut().enumerate() {
                blk.visit_mut(&format!("{name}.l{l}.b{i}"), out);
            }
        }
        for (i, d) in self.down.iter_mut().enumerate() {
            d.visit_mut(&format!("{name}.down{i}"), out);
        }
        for (i, m) in self.merge.iter_mut().enumerate() {
            m.visit_mut(&format!("{name}.merge{i}"), out);
        }
    }

    pub fn bind<T: Real>(&self, b: &mut Binder<'_, T>, name: &str) -> PyramidTrunkVals {
        PyramidTrunkVals {
            conv_in: b.conv(&format!("{name}.conv_in"), &self.conv_in),
            level_blocks: self
                .level_blocks
                .iter()
                .enumerate()
                .map(|(l, blocks)| {
                    [
                        blocks[0].bind(b, &format!("{name}.l{l}.b0")),
                        blocks[1].bind(b, &format!("{name}.l{l}.b1")),
                    ]
                })
                .collect(),
            down: [
                b.conv(&format!("{name}.down0"), &self.down[0]),
                b.conv(&format!("{name}.down1"), &self.down[1]),
            ],
            merge: [
                b.conv(&format!("{name}.merge0"), &self.merge[0]),
                b.conv(&format!("{name}.merge1"), &self.merge[1]),
            ],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PyramidTrunkVals {
    pub conv_in: ConvVal,
    pub level_blocks: Vec<[ResBlockVals; 2]>,
    pub down: [ConvVal; 2],
    pub merge: [ConvVal; 2],
}

impl PyramidTrunkVals {
    /// Returns `[finest, half, quarter]` refined feature maps.
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Val) -> Result<[Val; 3], ModelError> {
        let mut l0 = self.conv_in.apply(tape, x)?;
        for blk in &self.level_blocks[0] {
            l0 = blk.apply(tape, l0)?;
        }
        let mut l1 = self.down[0].apply(tape, l0)?;
        for blk in &self.level_blocks[1] {
            l1 = blk.apply(tape, l1)?;
        }
        let mut l2 = self.down[1].apply(tape, l1)?;
        for blk in &self.level_blocks[2] {
            l2 = blk.apply(tape, l2)?;
        }
        let u2 = l2;
        let up2 = tape.upsample_bilinear(u2, 2)?;
        let cat1 = tape.concat_channels(&[l1, up2])?;
        let u1 = self.merge[0].apply(tape, cat1)?;
        let up1 = tape.upsample_bilinear(u1, 2)?;
        let cat0 = tape.concat_channels(&[l0, up1])?;
        let u0 = self.merge[1].apply(tape, cat0)?;
        Ok([u0, u1, u2])
    }
}

/// Sub-pixel x2 upscale: conv to 4C channels then depth-to-space.
pub fn subpixel_up2<T: Real>(
    tape: &mut Tape<T>,
    conv: &ConvVal,
    x: Val,
) -> Result<Val, ModelError> {
    let lifted = conv.apply(tape, x)?;
    Ok(tape.pixel_shuffle(lifted, 2)?)
}
