//! Motion alignment and aggregation over the low-resolution temporal
//! window: shared feature extraction, multiscale offset/mask prediction per
//! frame pair (the center pairs with every window frame, itself included),
//! modulated deformable alignment at the finest scale, then temporal and
//! spatial attention to a single aggregated motion representation.

use rand_chacha::ChaCha8Rng;

use crossres_tensor::{Real, Tape, Tensor, Val};

use crate::blocks::{Binder, Conv, ConvVal, ModelConfig, PyramidTrunk, PyramidTrunkVals, ResBlock, ResBlockVals};
use crate::error::ModelError;

/// Offsets (2 per kernel tap) and sigmoid modulation masks (1 per tap) at
/// the three pyramid scales, finest first. One deformable group.
#[derive(Clone, Debug)]
pub struct OffsetPyramidVals {
    pub offsets: [Val; 3],
    pub masks: [Val; 3],
}

#[derive(Clone, Debug)]
pub struct FeatureNet {
    pub conv_in: Conv,
    pub blocks: Vec<ResBlock>,
}

impl FeatureNet {
    fn init(rng: &mut ChaCha8Rng, c_in: usize, channels: usize) -> Self {
        FeatureNet {
            conv_in: Conv::kaiming(rng, channels, c_in, 3, 1, 1),
            blocks: (0..4).map(|_| ResBlock::init(rng, channels)).collect(),
        }
    }

    fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        self.conv_in.visit(&format!("{name}.conv_in"), out);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.visit(&format!("{name}.b{i}"), out);
        }
    }

    fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        self.conv_in.visit_mut(&format!("{name}.conv_in"), out);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_mut(&format!("{name}.b{i}"), out);
        }
    }

    fn bind<T: Real>(&self, b: &mut Binder<'_, T>, name: &str) -> FeatureNetVals {
        FeatureNetVals {
            conv_in: b.conv(&format!("{name}.conv_in"), &self.conv_in),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, blk)| blk.bind(b, &format!("{name}.b{i}")))
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureNetVals {
    pub conv_in: ConvVal,
    pub blocks: Vec<ResBlockVals>,
}

impl FeatureNetVals {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Val) -> Result<Val, ModelError> {
        let mut f = self.conv_in.apply(tape, x)?;
        for blk in &self.blocks {
            f = blk.apply(tape, f)?;
        }
        Ok(f)
    }
}

/// Multiscale offset/mask predictor over a concatenated feature pair.
/// Offset heads start at zero so alignment begins as a plain convolution;
/// mask heads start at zero so sigmoid masks begin at 0.5.
#[derive(Clone, Debug)]
pub struct OffsetNet {
    pub trunk: PyramidTrunk,
    pub off_heads: [Conv; 3],
    pub mask_heads: [Conv; 3],
}

const TAPS: usize = 9; // 3x3 kernel, one deformable group

impl OffsetNet {
    fn init(rng: &mut ChaCha8Rng, channels: usize, jitter: f32) -> Self {
        let head = |rng: &mut ChaCha8Rng, c_out: usize| {
            if jitter > 0.0 {
                Conv::jittered(rng, c_out, channels, 3, 1, 1, jitter)
            } else {
                Conv::zeros(c_out, channels, 3, 1, 1)
            }
        };
        OffsetNet {
            trunk: PyramidTrunk::init(rng, 2 * channels, channels),
            off_heads: [
                head(rng, 2 * TAPS),
                head(rng, 2 * TAPS),
                head(rng, 2 * TAPS),
            ],
            mask_heads: [head(rng, TAPS), head(rng, TAPS), head(rng, TAPS)],
        }
    }

    fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        self.trunk.visit(&format!("{name}.trunk"), out);
        for (i, h) in self.off_heads.iter().enumerate() {
            h.visit(&format!("{name}.off{i}"), out);
        }
        for (i, h) in self.mask_heads.iter().enumerate() {
            h.visit(&format!("{name}.mask{i}"), out);
        }
    }

    fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        self.trunk.visit_mut(&format!("{name}.trunk"), out);
        for (i, h) in self.off_heads.iter_mut().enumerate() {
            h.visit_mut(&format!("{name}.off{i}"), out);
        }
        for (i, h) in self.mask_heads.iter_mut().enumerate() {
            h.visit_mut(&format!("{name}.mask{i}"), out);
        }
    }

    fn bind<T: Real>(&self, b: &mut Binder<'_, T>, name: &str) -> OffsetNetVals {
        OffsetNetVals {
            trunk: self.trunk.bind(b, &format!("{name}.trunk")),
            off_heads: [
                b.conv(&format!("{name}.off0"), &self.off_heads[0]),
                b.conv(&format!("{name}.off1"), &self.off_heads[1]),
                b.conv(&format!("{name}.off2"), &self.off_heads[2]),
            ],
            mask_heads: [
                b.conv(&format!("{name}.mask0"), &self.mask_heads[0]),
                b.conv(&format!("{name}.mask1"), &self.mask_heads[1]),
                b.conv(&format!("{name}.mask2"), &self.mask_heads[2]),
            ],
        }
    }
}

#[derive(Clone, Debug)]
pub struct OffsetNetVals {
    pub trunk: PyramidTrunkVals,
    pub off_heads: [ConvVal; 3],
    pub mask_heads: [ConvVal; 3],
}

impl OffsetNetVals {
    /// Coarse-to-fine offsets: each finer level refines the upsampled
    /// coarser offsets (displacements double when the grid does).
    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        feat_cur: Val,
        feat_nbr: Val,
    ) -> Result<OffsetPyramidVals, ModelError> {
        let cat = tape.concat_channels(&[feat_cur, feat_nbr])?;
        let [u0, u1, u2] = self.trunk.apply(tape, cat)?;
        let o2 = self.off_heads[2].apply(tape, u2)?;
        let o2_up = tape.upsample_bilinear(o2, 2)?;
        let o2_up = tape.scale(o2_up, T::from_f64(2.0));
        let o1_head = self.off_heads[1].apply(tape, u1)?;
        let o1 = tape.add(o1_head, o2_up)?;
        let o1_up = tape.upsample_bilinear(o1, 2)?;
        let o1_up = tape.scale(o1_up, T::from_f64(2.0));
        let o0_head = self.off_heads[0].apply(tape, u0)?;
        let o0 = tape.add(o0_head, o1_up)?;
        let masks = [
            {
                let m = self.mask_heads[0].apply(tape, u0)?;
                tape.sigmoid(m)
            },
            {
                let m = self.mask_heads[1].apply(tape, u1)?;
                tape.sigmoid(m)
            },
            {
                let m = self.mask_heads[2].apply(tape, u2)?;
                tape.sigmoid(m)
            },
        ];
        Ok(OffsetPyramidVals { offsets: [o0, o1, o2], masks })
    }
}

/// Rearrange a `[C_out, C_in, 3, 3]` kernel into the `[C_out, 9*C_in, 1, 1]`
/// layout used after per-tap sampling (tap-major channel blocks).
fn dcn_weight_as_1x1<T: Real>(tape: &mut Tape<T>, w: Val) -> Result<Val, ModelError> {
    let shape = tape.value(w).shape().to_vec();
    let (c_out, c_in) = (shape[0], shape[1]);
    let src = tape.value(w).data();
    let mut data = vec![T::ZERO; src.len()];
    for o in 0..c_out {
        for c in 0..c_in {
            for t in 0..TAPS {
                data[o * TAPS * c_in + t * c_in + c] = src[(o * c_in + c) * TAPS + t];
            }
        }
    }
    let out = Tensor::new(vec![c_out, TAPS * c_in, 1, 1], data)?;
    Ok(tape.custom(
        out,
        &[w],
        Box::new(move |args| {
            let mut g = vec![T::ZERO; args.grad.len()];
            for o in 0..c_out {
                for c in 0..c_in {
                    for t in 0..TAPS {
                        g[(o * c_in + c) * TAPS + t] = args.grad.data()[o * TAPS * c_in + t * c_in + c];
                    }
                }
            }
            vec![Some(Tensor::new(args.parent_value(0).shape().to_vec(), g).unwrap())]
        }),
    ))
}

/// Modulated deformable 3x3 convolution: every kernel tap samples the
/// neighbor features at its grid position displaced by the learned offset,
/// is scaled by its sigmoid mask, and the taps convolve as usual. With zero
/// offsets and unit masks this is exactly a border-replicating convolution.
pub fn dcn_align<T: Real>(
    tape: &mut Tape<T>,
    feat_nbr: Val,
    pyramid: &OffsetPyramidVals,
    weights: &ConvVal,
) -> Result<Val, ModelError> {
    let (_, h, w) = tape.value(feat_nbr).dims3()?;
    let offsets = pyramid.offsets[0];
    let (oc, oh, ow) = tape.value(offsets).dims3()?;
    if (oh, ow) != (h, w) || oc != 2 * TAPS {
        return Err(ModelError::Tensor(crossres_tensor::TensorError::ShapeMismatch {
            axis: "finest offset grid",
            expected: h * w * 2 * TAPS,
            got: oh * ow * oc,
        }));
    }
    let masks = pyramid.masks[0];
    let mut sampled = Vec::with_capacity(TAPS);
    for t in 0..TAPS {
        let (ky, kx) = ((t / 3) as f64 - 1.0, (t % 3) as f64 - 1.0);
        let base = Tensor::from_fn(vec![2, h, w], |i| {
            let plane = h * w;
            let (p, is_x) = (i % plane, i >= plane);
            let (y, x) = (p / w, p % w);
            if is_x {
                T::from_f64(x as f64 + kx)
            } else {
                T::from_f64(y as f64 + ky)
            }
        });
        let base = tape.constant(base);
        let off_t = tape.slice_channels(offsets, 2 * t, 2)?;
        let coords = tape.add(base, off_t)?;
        let tap = tape.bilinear_sample(feat_nbr, coords)?;
        let mask_t = tape.slice_channels(masks, t, 1)?;
        sampled.push(tape.mul_plane(tap, mask_t)?);
    }
    let stacked = tape.concat_channels(&sampled)?;
    let w1x1 = dcn_weight_as_1x1(tape, weights.w)?;
    Ok(tape.conv2d(stacked, w1x1, weights.b, 1, 0, crossres_tensor::PadMode::Zero)?)
}

/// Temporal attention, fuse, then spatial attention.
#[derive(Clone, Debug)]
pub struct AggregatorNet {
    pub embed_self: Conv,
    pub embed_nbr: Conv,
    pub fuse: Conv,
    pub sa_trunk: PyramidTrunk,
    pub sa_head: Conv,
}

impl AggregatorNet {
    fn init(rng: &mut ChaCha8Rng, channels: usize, window: usize) -> Self {
        AggregatorNet {
            embed_self: Conv::kaiming(rng, channels, channels, 3, 1, 1),
            embed_nbr: Conv::kaiming(rng, channels, channels, 3, 1, 1),
            fuse: Conv::kaiming(rng, channels, window * channels, 3, 1, 1),
            sa_trunk: PyramidTrunk::init(rng, channels, channels),
            sa_head: Conv::kaiming(rng, channels, channels, 3, 1, 1),
        }
    }

    fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        self.embed_self.visit(&format!("{name}.embed_self"), out);
        self.embed_nbr.visit(&format!("{name}.embed_nbr"), out);
        self.fuse.visit(&format!("{name}.fuse"), out);
        self.sa_trunk.visit(&format!("{name}.sa_trunk"), out);
        self.sa_head.visit(&format!("{name}.sa_head"), out);
    }

    fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        self.embed_self.visit_mut(&format!("{name}.embed_self"), out);
        self.embed_nbr.visit_mut(&format!("{name}.embed_nbr"), out);
        self.fuse.visit_mut(&format!("{name}.fuse"), out);
        self.sa_trunk.visit_mut(&format!("{name}.sa_trunk"), out);
        self.sa_head.visit_mut(&format!("{name}.sa_head"), out);
    }

    fn bind<T: Real>(&self, b: &mut Binder<'_, T>, name: &str) -> AggregatorNetVals {
        AggregatorNetVals {
            embed_self: b.conv(&format!("{name}.embed_self"), &self.embed_self),
            embed_nbr: b.conv(&format!("{name}.embed_nbr"), &self.embed_nbr),
            fuse: b.conv(&format!("{name}.fuse"), &self.fuse),
            sa_trunk: self.sa_trunk.bind(b, &format!("{name}.sa_trunk")),
            sa_head: b.conv(&format!("{name}.sa_head"), &self.sa_head),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AggregatorNetVals {
    pub embed_self: ConvVal,
    pub embed_nbr: ConvVal,
    pub fuse: ConvVal,
    pub sa_trunk: PyramidTrunkVals,
    pub sa_head: ConvVal,
}

impl AggregatorNetVals {
    /// Neighbor stacks are gated by a sigmoid of the embedded dot-product
    /// similarity against the self stack; the self stack passes unmasked.
    /// The fused concatenation is then gated by a full-channel spatial mask.
    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        aligned: &[Val],
        self_idx: usize,
    ) -> Result<Val, ModelError> {
        let e_self = self.embed_self.apply(tape, aligned[self_idx])?;
        let mut gated = Vec::with_capacity(aligned.len());
        for (i, &stack) in aligned.iter().enumerate() {
            if i == self_idx {
                gated.push(stack);
                continue;
            }
            let e_nbr = self.embed_nbr.apply(tape, stack)?;
            let sim = tape.dot_channels(e_nbr, e_self)?;
            let mask = tape.sigmoid(sim);
            gated.push(tape.mul_plane(stack, mask)?);
        }
        let cat = tape.concat_channels(&gated)?;
        let fused = self.fuse.apply(tape, cat)?;
        let [u0, _, _] = self.sa_trunk.apply(tape, fused)?;
        let sa_raw = self.sa_head.apply(tape, u0)?;
        let sa_mask = tape.sigmoid(sa_raw);
        Ok(tape.mul(fused, sa_mask)?)
    }
}

/// The full alignment-and-aggregation network.
#[derive(Clone, Debug)]
pub struct ManNet {
    pub extract: FeatureNet,
    pub offsets: OffsetNet,
    pub dcn: Conv,
    pub aggregate: AggregatorNet,
    pub window: usize,
}

impl ManNet {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig, window: usize, jitter: f32) -> Self {
        let c = cfg.channels;
        ManNet {
            extract: FeatureNet::init(rng, 1, c),
            offsets: OffsetNet::init(rng, c, jitter),
            dcn: Conv::kaiming(rng, c, c, 3, 1, 1),
            aggregate: AggregatorNet::init(rng, c, window),
            window,
        }
    }

    pub fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        self.extract.visit(&format!("{name}.extract"), out);
        self.offsets.visit(&format!("{name}.offsets"), out);
        self.dcn.visit(&format!("{name}.dcn"), out);
        self.aggregate.visit(&format!("{name}.agg"), out);
    }

    pub fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        self.extract.visit_mut(&format!("{name}.extract"), out);
        self.offsets.visit_mut(&format!("{name}.offsets"), out);
        self.dcn.visit_mut(&format!("{name}.dcn"), out);
        self.aggregate.visit_mut(&format!("{name}.agg"), out);
    }

    pub fn bind<T: Real>(&self, b: &mut Binder<'_, T>, name: &str) -> ManNetVals {
        ManNetVals {
            extract: self.extract.bind(b, &format!("{name}.extract")),
            offsets: self.offsets.bind(b, &format!("{name}.offsets")),
            dcn: b.conv(&format!("{name}.dcn"), &self.dcn),
            aggregate: self.aggregate.bind(b, &format!("{name}.agg")),
            window: self.window,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManNetVals {
    pub extract: FeatureNetVals,
    pub offsets: OffsetNetVals,
    pub dcn: ConvVal,
    pub aggregate: AggregatorNetVals,
    pub window: usize,
}

impl ManNetVals {
    /// `window`: T luma tensors `[1, H/2, W/2]`, center at `window/2`.
    /// Identical frame handles are extracted once and share their features.
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, window: &[Val]) -> Result<Val, ModelError> {
        if window.len() != self.window {
            return Err(ModelError::WindowSize(window.len(), self.window));
        }
        let center = window.len() / 2;
        // Replicated edge frames arrive as the same Val; forward passes are
        // pure, so identical pairs share one extraction/alignment.
        let mut feats: Vec<Val> = Vec::with_capacity(window.len());
        for (i, &frame) in window.iter().enumerate() {
            if let Some(j) = window[..i].iter().position(|&p| p == frame) {
                feats.push(feats[j]);
            } else {
                feats.push(self.extract.apply(tape, frame)?);
            }
        }
        let mut aligned: Vec<Val> = Vec::with_capacity(window.len());
        for (i, &feat) in feats.iter().enumerate() {
            if let Some(j) = feats[..i].iter().position(|&p| p == feat) {
                aligned.push(aligned[j]);
                continue;
            }
            let pyr = self.offsets.apply(tape, feats[center], feat)?;
            aligned.push(dcn_align(tape, feat, &pyr, &self.dcn)?);
        }
        self.aggregate.apply(tape, &aligned, center)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crossres_tensor::{conv2d, ConvParams, PadMode};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut state = seed | 1;
        Tensor::from_fn(shape.to_vec(), |_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state >> 40) as f32 / (1u64 << 24) as f32) - 0.5
        })
    }

    #[test]
    fn feature_extractor_maps_1_to_c() {
        let cfg = ModelConfig { channels: 64, ..Default::default() };
        let net = ManNet::init(&mut rng(3), &cfg, 3, 0.0);
        let mut tape = Tape::<f32>::new();
        let mut b = Binder::new(&mut tape, false);
        let vals = net.bind(&mut b, "man");
        let x = tape.leaf(random_tensor(&[1, 32, 32], 5));
        let f = vals.extract.apply(&mut tape, x).unwrap();
        assert_eq!(tape.shape(f), &[64, 32, 32]);
    }

    #[test]
    fn zero_init_heads_give_zero_offsets_and_half_masks() {
        let cfg = ModelConfig { channels: 16, ..Default::default() };
        let net = ManNet::init(&mut rng(7), &cfg, 3, 0.0);
        let mut tape = Tape::<f32>::new();
        let mut b = Binder::new(&mut tape, false);
        let vals = net.bind(&mut b, "man");
        let cur = tape.leaf(random_tensor(&[16, 16, 16], 1));
        let nbr = tape.leaf(random_tensor(&[16, 16, 16], 2));
        let pyr = vals.offsets.apply(&mut tape, cur, nbr).unwrap();
        for s in 0..3 {
            assert!(tape.value(pyr.offsets[s]).data().iter().all(|&v| v == 0.0));
            assert!(tape.value(pyr.masks[s]).data().iter().all(|&v| v == 0.5));
        }
        // Offset grids at 16, 8, 4.
        assert_eq!(tape.shape(pyr.offsets[0]), &[18, 16, 16]);
        assert_eq!(tape.shape(pyr.offsets[1]), &[18, 8, 8]);
        assert_eq!(tape.shape(pyr.offsets[2]), &[18, 4, 4]);
        assert_eq!(tape.shape(pyr.masks[0]), &[9, 16, 16]);
    }

    #[test]
    fn offsets_are_deterministic_across_calls() {
        let cfg = ModelConfig { channels: 16, ..Default::default() };
        let net = ManNet::init(&mut rng(7), &cfg, 3, 0.05);
        let mut tape = Tape::<f32>::new();
        let mut b = Binder::new(&mut tape, false);
        let vals = net.bind(&mut b, "man");
        let cur = tape.leaf(random_tensor(&[16, 12, 12], 1));
        let nbr = tape.leaf(random_tensor(&[16, 12, 12], 2));
        let p1 = vals.offsets.apply(&mut tape, cur, nbr).unwrap();
        let p2 = vals.offsets.apply(&mut tape, cur, nbr).unwrap();
        assert_eq!(tape.value(p1.offsets[0]).data(), tape.value(p2.offsets[0]).data());
    }

    /// Force a pyramid of given constant offsets with unit masks.
    fn forced_pyramid(
        tape: &mut Tape<f32>,
        h: usize,
        w: usize,
        dy: f32,
        dx: f32,
    ) -> OffsetPyramidVals {
        let mk = |tape: &mut Tape<f32>, h: usize, w: usize, dy: f32, dx: f32| {
            let off = Tensor::from_fn(vec![2 * TAPS, h, w], |i| {
                let plane = h * w;
                if (i / plane) % 2 == 0 {
                    dy
                } else {
                    dx
                }
            });
            let mask = Tensor::full(vec![TAPS, h, w], 1.0f32);
            (tape.constant(off), tape.constant(mask))
        };
        let (o0, m0) = mk(tape, h, w, dy, dx);
        let (o1, m1) = mk(tape, h / 2, w / 2, dy / 2.0, dx / 2.0);
        let (o2, m2) = mk(tape, h / 4, w / 4, dy / 4.0, dx / 4.0);
        OffsetPyramidVals { offsets: [o0, o1, o2], masks: [m0, m1, m2] }
    }

    #[test]
    fn dcn_with_zero_offsets_and_unit_masks_equals_replicate_conv() {
        for seed in [1u64, 2, 3, 4, 5] {
            let mut r = rng(seed);
            let conv = Conv::kaiming(&mut r, 8, 8, 3, 1, 1);
            let feat = random_tensor(&[8, 10, 10], seed + 100);

            let mut tape = Tape::<f32>::new();
            let mut b = Binder::new(&mut tape, false);
            let cv = b.conv("dcn", &conv);
            let fv = tape.leaf(feat.clone());
            let pyr = forced_pyramid(&mut tape, 10, 10, 0.0, 0.0);
            let out = dcn_align(&mut tape, fv, &pyr, &cv).unwrap();

            // Plain conv with replicate padding matches the clamped sampler.
            let params = ConvParams::new(conv.w.clone(), conv.b.clone(), 1, 1).unwrap();
            let plain = crossres_tensor::conv2d_padded(&feat, &params, PadMode::Replicate).unwrap();
            for (a, c) in tape.value(out).data().iter().zip(plain.data()) {
                assert!((a - c).abs() < 1e-5, "seed {seed}: {a} vs {c}");
            }
        }
    }

    #[test]
    fn dcn_constant_offset_aligns_translated_content() {
        // Neighbor shows base content displaced left by 2 (shifted[x] =
        // base[x+2]); sampling it with offset dx = -2 restores
        // registration. Alignment error must beat the unaligned conv.
        let mut r = rng(9);
        let conv = Conv::kaiming(&mut r, 4, 4, 3, 1, 1);
        let base = random_tensor(&[4, 12, 12], 77);
        // shifted[y][x] = base[y][x+2]
        let (c, h, w) = (4usize, 12usize, 12usize);
        let shifted = Tensor::from_fn(vec![c, h, w], |i| {
            let ch = i / (h * w);
            let p = i % (h * w);
            let (y, x) = (p / w, p % w);
            let sx = (x + 2).min(w - 1);
            base.data()[ch * h * w + y * w + sx]
        });

        let run = |dx: f32| -> Vec<f32> {
            let mut tape = Tape::<f32>::new();
            let mut b = Binder::new(&mut tape, false);
            let cv = b.conv("dcn", &conv);
            let fv = tape.leaf(shifted.clone());
            let pyr = forced_pyramid(&mut tape, h, w, 0.0, dx);
            let out = dcn_align(&mut tape, fv, &pyr, &cv).unwrap();
            tape.value(out).data().to_vec()
        };
        let reference = {
            let mut tape = Tape::<f32>::new();
            let mut b = Binder::new(&mut tape, false);
            let cv = b.conv("dcn", &conv);
            let fv = tape.leaf(base.clone());
            let pyr = forced_pyramid(&mut tape, h, w, 0.0, 0.0);
            let out = dcn_align(&mut tape, fv, &pyr, &cv).unwrap();
            tape.value(out).data().to_vec()
        };
        let err = |a: &[f32]| -> f32 {
            // Interior columns only: border clamp differs by construction.
            let mut acc = 0.0;
            for ch in 0..c {
                for y in 0..h {
                    for x in 2..w - 4 {
                        let i = ch * h * w + y * w + x;
                        acc += (a[i] - reference[i]).abs();
                    }
                }
            }
            acc
        };
        let aligned = run(-2.0);
        let unaligned = run(0.0);
        assert!(
            err(&aligned) < 0.2 * err(&unaligned),
            "aligned {} vs unaligned {}",
            err(&aligned),
            err(&unaligned)
        );
    }

    #[test]
    fn aggregate_masks_are_open_sigmoids() {
        let cfg = ModelConfig { channels: 8, ..Default::default() };
        let net = ManNet::init(&mut rng(21), &cfg, 3, 0.0);
        let mut tape = Tape::<f32>::new();
        let mut b = Binder::new(&mut tape, false);
        let vals = net.bind(&mut b, "man");
        let stacks: Vec<Val> = (0..3)
            .map(|i| tape.leaf(random_tensor(&[8, 8, 8], 50 + i)))
            .collect();
        let out = vals.aggregate.apply(&mut tape, &stacks, 1).unwrap();
        assert_eq!(tape.shape(out), &[8, 8, 8]);
        assert!(tape.value(out).all_finite());
    }

    #[test]
    fn man_forward_shape_contract() {
        let cfg = ModelConfig { channels: 64, ..Default::default() };
        let net = ManNet::init(&mut rng(4), &cfg, 3, 0.0);
        let mut tape = Tape::<f32>::new();
        let mut b = Binder::new(&mut tape, false);
        let vals = net.bind(&mut b, "man");
        for hw in [8usize, 16] {
            let frames: Vec<Val> = (0..3)
                .map(|i| tape.leaf(random_tensor(&[1, hw, hw], 80 + i)))
                .collect();
            let out = vals.apply(&mut tape, &frames).unwrap();
            assert_eq!(tape.shape(out), &[64, hw, hw]);
        }
    }

    #[test]
    fn identical_window_frames_share_feature_extraction() {
        let cfg = ModelConfig { channels: 8, ..Default::default() };
        let net = ManNet::init(&mut rng(4), &cfg, 3, 0.0);
        let mut tape = Tape::<f32>::new();
        let mut b = Binder::new(&mut tape, false);
        let vals = net.bind(&mut b, "man");
        let frame = tape.leaf(random_tensor(&[1, 8, 8], 7));
        let start_dup = tape.len();
        let out = vals.apply(&mut tape, &[frame, frame, frame]).unwrap();
        assert!(tape.value(out).all_finite());
        let dup_nodes = tape.len() - start_dup;

        let f2 = tape.leaf(random_tensor(&[1, 8, 8], 8));
        let f3 = tape.leaf(random_tensor(&[1, 8, 8], 9));
        let start_distinct = tape.len();
        vals.apply(&mut tape, &[f2, frame, f3]).unwrap();
        let distinct_nodes = tape.len() - start_distinct;
        assert!(distinct_nodes > dup_nodes, "{distinct_nodes} vs {dup_nodes}");
    }

    #[test]
    fn swapping_neighbors_keeps_self_branch_bit_identical() {
        let cfg = ModelConfig { channels: 8, ..Default::default() };
        let net = ManNet::init(&mut rng(31), &cfg, 3, 0.05);
        let mut tape = Tape::<f32>::new();
        let mut b = Binder::new(&mut tape, false);
        let vals = net.bind(&mut b, "man");
        let a = tape.leaf(random_tensor(&[1, 8, 8], 70));
        let c = tape.leaf(random_tensor(&[1, 8, 8], 71));
        let center = tape.leaf(random_tensor(&[1, 8, 8], 72));

        let run = |tape: &mut Tape<f32>, order: [Val; 3]| -> (Vec<f32>, Vec<f32>) {
            let feats: Vec<Val> =
                order.iter().map(|&f| vals.extract.apply(tape, f).unwrap()).collect();
            let center_feat = feats[1];
            let mut aligned = Vec::new();
            for &f in &feats {
                let pyr = vals.offsets.apply(tape, center_feat, f).unwrap();
                aligned.push(dcn_align(tape, f, &pyr, &vals.dcn).unwrap());
            }
            let self_stack = tape.value(aligned[1]).data().to_vec();
            let out = vals.aggregate.apply(tape, &aligned, 1).unwrap();
            (self_stack, tape.value(out).data().to_vec())
        };
        let (self1, _) = run(&mut tape, [a, center, c]);
        let (self2, _) = run(&mut tape, [c, center, a]);
        assert_eq!(self1, self2);
    }
}
