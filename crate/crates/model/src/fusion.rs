//! Similarity-driven fusion and the full synthesis model. Fusion runs at
//! the half-resolution grid first (motion features, affinity-gated half-
//! scale textures, the lifted quarter-scale textures), sub-pixel upscales,
//! then finishes at the full grid (full-scale textures, features of the
//! upscaled inter frame) and adds the upscaled inter frame as a global
//! residual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crossres_tensor::{Real, Tape, Tensor, Val};

use crate::blocks::{subpixel_up2, Binder, Conv, ConvVal, ModelConfig, ResBlock, ResBlockVals};
use crate::error::ModelError;
use crate::motion::{ManNet, ManNetVals};
use crate::resample_ops::{bicubic_up_t, degrade_t};
use crate::texture::{TcnNet, TcnNetVals, TextureBundleVals};
use crate::GopMode;

#[derive(Clone, Debug)]
pub struct FusionNet {
    pub lift_quarter: Conv,
    pub fuse_half: Conv,
    pub blocks_half: Vec<ResBlock>,
    pub up: Conv,
    pub inter_feat: Conv,
    pub fuse_full: Conv,
    pub blocks_full: Vec<ResBlock>,
    pub project: Conv,
}

impl FusionNet {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig, jitter: f32) -> Self {
        let c = cfg.channels;
        let nb = cfg.mode.bundles();
        let in_half = c + nb * (2 * c + 1);
        let in_full = c + nb * (c + 1) + c;
        let project = if jitter > 0.0 {
            Conv::jittered(rng, 1, c, 3, 1, 1, jitter)
        } else {
            Conv::zeros(1, c, 3, 1, 1)
        };
        FusionNet {
            lift_quarter: Conv::kaiming(rng, 4 * c, c, 3, 1, 1),
            fuse_half: Conv::kaiming(rng, c, in_half, 3, 1, 1),
            blocks_half: (0..8).map(|_| ResBlock::init(rng, c)).collect(),
            up: Conv::kaiming(rng, 4 * c, c, 3, 1, 1),
            inter_feat: Conv::kaiming(rng, c, 1, 3, 1, 1),
            fuse_full: Conv::kaiming(rng, c, in_full, 3, 1, 1),
            blocks_full: (0..8).map(|_| ResBlock::init(rng, c)).collect(),
            project,
        }
    }

    pub fn visit<'s>(&'s self, name: &str, out: &mut Vec<(String, &'s Tensor)>) {
        self.lift_quarter.visit(&format!("{name}.lift_quarter"), out);
        self.fuse_half.visit(&format!("{name}.fuse_half"), out);
        for (i, blk) in self.blocks_half.iter().enumerate() {
            blk.visit(&format!("{name}.half_b{i}"), out);
        }
        self.up.visit(&format!("{name}.up"), out);
        self.inter_feat.visit(&format!("{name}.inter_feat"), out);
        self.fuse_full.visit(&format!("{name}.fuse_full"), out);
        for (i, blk) in self.blocks_full.iter().enumerate() {
            blk.visit(&format!("{name}.full_b{i}"), out);
        }
        self.project.visit(&format!("{name}.project"), out);
    }

    pub fn visit_mut<'s>(&'s mut self, name: &str, out: &mut Vec<(String, &'s mut Tensor)>) {
        self.lift_quarter.visit_mut(&format!("{name}.lift_quarter"), out);
        self.fuse_half.visit_mut(&format!("{name}.fuse_half"), out);
        for (i, blk) in self.blocks_half.iter_mut().enumerate() {
            blk.visit_mut(&format!("{name}.half_b{i}"), out);
        }
        self.up.visit_mut(&format!("{name}.up"), out);
        self.inter_feat.visit_mut(&format!("{name}.inter_feat"), out);
        self.fuse_full.visit_mut(&format!("{name}.fuse_full"), out);
        for (i, blk) in self.blocks_full.iter_mut().enumerate() {
            blk.visit_mut(&format!("{name}.full_b{i}"), out);
        }
        self.project.visit_mut(&format!("{name}.project"), out);
    }

    pub fn bind<T: Real>(&self, b: &mut Binder<'_, T>, name: &str) -> FusionNetVals {
        FusionNetVals {
            lift_quarter: b.conv(&format!("{name}.lift_quarter"), &self.lift_quarter),
            fuse_half: b.conv(&format!("{name}.fuse_half"), &self.fuse_half),
            blocks_half: self
                .blocks_half
                .iter()
                .enumerate()
                .map(|(i, blk)| blk.bind(b, &format!("{name}.half_b{i}")))
                .collect(),
            up: b.conv(&format!("{name}.up"), &self.up),
            inter_feat: b.conv(&format!("{name}.inter_feat"), &self.inter_feat),
            fuse_full: b.conv(&format!("{name}.fuse_full"), &self.fuse_full),
            blocks_full: self
                .blocks_full
                .iter()
                .enumerate()
                .map(|(i, blk)| blk.bind(b, &format!("{name}.full_b{i}")))
                .collect(),
            project: b.conv(&format!("{name}.project"), &self.project),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionNetVals {
    pub lift_quarter: ConvVal,
    pub fuse_half: ConvVal,
    pub blocks_half: Vec<ResBlockVals>,
    pub up: ConvVal,
    pub inter_feat: ConvVal,
    pub fuse_full: ConvVal,
    pub blocks_full: Vec<ResBlockVals>,
    pub project: ConvVal,
}

impl FusionNetVals {
    /// `bundles` holds one texture set (low-delay) or two (random access,
    /// preceding reference first). `motion` sits on the half grid,
    /// `inter_up` on the full grid; the output adds `inter_up` back as the
    /// global residual.
    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        motion: Val,
        bundles: &[&TextureBundleVals],
        inter_up: Val,
        expected_bundles: usize,
    ) -> Result<Val, ModelError> {
        if bundles.is_empty() || bundles.len() > 2 {
            return Err(ModelError::RefArity(bundles.len()));
        }
        // A lone bundle under a two-reference model stands in for both
        // directions (bounding reference unavailable).
        let mut ordered: Vec<&TextureBundleVals> = bundles.to_vec();
        while ordered.len() < expected_bundles {
            ordered.push(bundles[bundles.len() - 1]);
        }
        ordered.truncate(expected_bundles);

        let mut half_inputs = vec![motion];
        for bundle in &ordered {
            let gated = tape.mul_plane(bundle.tex_half, bundle.aff_half)?;
            half_inputs.push(gated);
            half_inputs.push(bundle.aff_half);
            let gated_quarter = tape.mul_plane(bundle.tex_quarter, bundle.aff_quarter)?;
            half_inputs.push(subpixel_up2(tape, &self.lift_quarter, gated_quarter)?);
        }
        let cat_half = tape.concat_channels(&half_inputs)?;
        let mut x = self.fuse_half.apply_relu(tape, cat_half)?;
        for blk in &self.blocks_half {
            x = blk.apply(tape, x)?;
        }
        let upscaled = subpixel_up2(tape, &self.up, x)?;

        let mut full_inputs = vec![upscaled];
        for bundle in &ordered {
            let gated = tape.mul_plane(bundle.tex_full, bundle.aff_full)?;
            full_inputs.push(gated);
            full_inputs.push(bundle.aff_full);
        }
        full_inputs.push(self.inter_feat.apply(tape, inter_up)?);
        let cat_full = tape.concat_channels(&full_inputs)?;
        let mut y = self.fuse_full.apply_relu(tape, cat_full)?;
        for blk in &self.blocks_full {
            y = blk.apply(tape, y)?;
        }
        let residual = self.project.apply(tape, y)?;
        Ok(tape.add(residual, inter_up)?)
    }
}

/// The complete synthesis model over one temporal window and its intra
/// reference(s).
#[derive(Clone, Debug)]
pub struct SynthModel {
    pub cfg: ModelConfig,
    pub seed: u64,
    pub man: ManNet,
    pub tcn: TcnNet,
    pub fusion: FusionNet,
}

pub const WINDOW: usize = 3;

impl SynthModel {
    /// Offset and projection heads start at zero: alignment begins as a
    /// plain convolution and the output begins as the upscaled inter frame.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        Self::init_inner(cfg, seed, 0.0)
    }

    /// Heads get small random values instead of zeros. Zero offsets pin the
    /// deformable sampler exactly onto the bilinear lattice, whose
    /// positional kinks would invalidate finite-difference checks.
    pub fn init_jittered(cfg: ModelConfig, seed: u64) -> Self {
        Self::init_inner(cfg, seed, 0.02)
    }

    fn init_inner(cfg: ModelConfig, seed: u64, jitter: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SynthModel {
            cfg,
            seed,
            man: ManNet::init(&mut rng, &cfg, WINDOW, jitter),
            tcn: TcnNet::init(&mut rng, &cfg),
            fusion: FusionNet::init(&mut rng, &cfg, jitter),
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.man.visit("man", &mut out);
        self.tcn.visit("tcn", &mut out);
        self.fusion.visit("fusion", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.man.visit_mut("man", &mut out);
        self.tcn.visit_mut("tcn", &mut out);
        self.fusion.visit_mut("fusion", &mut out);
        out
    }

    pub fn bind<T: Real>(&self, b: &mut Binder<'_, T>) -> SynthModelVals {
        SynthModelVals {
            mode: self.cfg.mode,
            man: self.man.bind(b, "man"),
            tcn: self.tcn.bind(b, "tcn"),
            fusion: self.fusion.bind(b, "fusion"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthModelVals {
    pub mode: GopMode,
    pub man: ManNetVals,
    pub tcn: TcnNetVals,
    pub fusion: FusionNetVals,
}

impl SynthModelVals {
    /// Synthesize the high-resolution luma of the window's center frame.
    ///
    /// `window`: low-resolution luma tensors `[1, H/2, W/2]` on the tape.
    /// `intra_refs`: one or two decoded intra luma tensors `[1, H, W]`;
    /// each is re-degraded in-graph for key extraction. The center frame is
    /// bicubic-upscaled in-graph to form the query and the global residual.
    pub fn synthesize<T: Real>(
        &self,
        tape: &mut Tape<T>,
        window: &[Val],
        intra_refs: &[Val],
    ) -> Result<Val, ModelError> {
        if intra_refs.is_empty() || intra_refs.len() > 2 {
            return Err(ModelError::RefArity(intra_refs.len()));
        }
        let motion = self.man.apply(tape, window)?;
        let center = window[window.len() / 2];
        let inter_up = bicubic_up_t(tape, center, 2)?;
        let mut bundles = Vec::with_capacity(intra_refs.len());
        for &intra in intra_refs {
            let resampled = degrade_t(tape, intra, 2)?;
            bundles.push(self.tcn.apply(tape, intra, resampled, inter_up)?);
        }
        let bundle_refs: Vec<&TextureBundleVals> = bundles.iter().collect();
        self.fusion
            .apply(tape, motion, &bundle_refs, inter_up, self.mode.bundles())
    }
}
