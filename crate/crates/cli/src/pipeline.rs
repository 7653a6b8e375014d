//! End-to-end orchestration: tier coding through the simulator (or the
//! external adapter for uniform anchor runs), cross-resolution synthesis of
//! the inter frames, evaluation, and the on-disk tier bundle.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crossres_codec::{
    external_encode, simulate_inter, simulate_intra, EncoderConfig, FrameRole,
    QpModel,
};
use crossres_model::{Binder, GopMode, SynthModel, TrainSample};
use crossres_rd::{psnr_planes, FramePsnr, RdReport};
use crossres_tensor::{Tape, Tensor};
use crossres_video::{
    bicubic_down, bicubic_up_plane, load_yuv, write_yuv, Frame, Plane, Sequence,
};

use crate::gop::{window_indices, GopStructure};
use crate::PipelineError;

/// Default full-search motion radius of the simulator, in pels.
pub const SEARCH_RADIUS: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Hr,
    Lr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub role: FrameRole,
    pub qp: i32,
    pub bits: f64,
    pub tier: Tier,
}

/// Decoded tier bundle: what the decoder side of the pipeline sees.
#[derive(Clone, Debug)]
pub struct EncodedTiers {
    pub frames: Vec<(Tier, Frame)>,
    pub records: Vec<RunRecord>,
    pub width: usize,
    pub height: usize,
    pub orig_width: usize,
    pub orig_height: usize,
    pub fps: f64,
    pub gop_len: usize,
    pub mode: GopMode,
    pub qp_intra: i32,
}

impl EncodedTiers {
    pub fn total_bits(&self) -> f64 {
        self.records.iter().map(|r| r.bits).sum()
    }
}

/// Code every GoP through the simulator: intra frames at full resolution,
/// inter frames downscaled and predicted along the chain, the decoded intra
/// entering the reference buffer downscaled.
pub fn encode_simulate(
    seq: &Sequence,
    gops: &[GopStructure],
    search: i32,
) -> Result<EncodedTiers, PipelineError> {
    let mut frames: Vec<Option<(Tier, Frame)>> = vec![None; seq.frames.len()];
    let mut records = Vec::with_capacity(seq.frames.len());
    let (mut gop_len, mut mode, mut qp_intra) = (2, GopMode::Ldp, 32);
    for gop in gops {
        gop_len = gop.len.max(gop_len);
        mode = gop.mode;
        qp_intra = gop.schedule.qp_intra;
        let mut dpb: Option<Frame> = None;
        for plan in &gop.frames {
            let qp = QpModel::new(plan.qp)?;
            match plan.role {
                FrameRole::Intra => {
                    let (recon, bits) = simulate_intra(&seq.frames[plan.index], &qp)?;
                    dpb = Some(bicubic_down(&recon, 2)?);
                    records.push(RunRecord {
                        index: plan.index,
                        role: FrameRole::Intra,
                        qp: plan.qp,
                        bits,
                        tier: Tier::Hr,
                    });
                    frames[plan.index] = Some((Tier::Hr, recon));
                }
                FrameRole::Inter => {
                    let lr = bicubic_down(&seq.frames[plan.index], 2)?;
                    let reference = dpb.as_ref().expect("inter frame precedes its intra");
                    let (recon, bits) = simulate_inter(&lr, reference, &qp, search)?;
                    dpb = Some(recon.clone());
                    records.push(RunRecord {
                        index: plan.index,
                        role: FrameRole::Inter,
                        qp: plan.qp,
                        bits,
                        tier: Tier::Lr,
                    });
                    frames[plan.index] = Some((Tier::Lr, recon));
                }
            }
        }
    }
    Ok(EncodedTiers {
        frames: frames.into_iter().map(|f| f.expect("every frame coded")).collect(),
        records,
        width: seq.width(),
        height: seq.height(),
        orig_width: seq.orig_width,
        orig_height: seq.orig_height,
        fps: seq.fps,
        gop_len,
        mode,
        qp_intra,
    })
}

/// Uniform anchor run through a real encoder binary: every frame keeps its
/// resolution; no synthesis applies afterwards.
pub fn encode_external(
    seq: &Sequence,
    gops: &[GopStructure],
    cfg: &EncoderConfig,
) -> Result<EncodedTiers, PipelineError> {
    let roles: Vec<(FrameRole, i32)> = gops
        .iter()
        .flat_map(|g| g.frames.iter().map(|f| (f.role, f.qp)))
        .collect();
    let qp_intra = gops.first().map_or(32, |g| g.schedule.qp_intra);
    let runs = external_encode(seq, &roles, qp_intra, cfg)?;
    Ok(EncodedTiers {
        frames: runs.iter().map(|r| (Tier::Hr, r.recon.clone())).collect(),
        records: runs
            .iter()
            .map(|r| RunRecord {
                index: r.frame_index,
                role: r.role,
                qp: r.qp,
                bits: r.bits,
                tier: Tier::Hr,
            })
            .collect(),
        width: seq.width(),
        height: seq.height(),
        orig_width: seq.orig_width,
        orig_height: seq.orig_height,
        fps: seq.fps,
        gop_len: gops.first().map_or(2, |g| g.len),
        mode: gops.first().map_or(GopMode::Ldp, |g| g.mode),
        qp_intra,
    })
}

pub fn plane_to_tensor(p: &Plane) -> Tensor {
    Tensor::new(vec![1, p.height, p.width], p.to_unit_f32()).expect("plane tensor")
}

pub fn tensor_to_plane(t: &Tensor) -> Plane {
    let (_, h, w) = t.dims3().expect("luma tensor");
    Plane {
        width: w,
        height: h,
        data: t
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}

fn lr_frame<'t>(tiers: &'t EncodedTiers, index: usize) -> Result<&'t Frame, PipelineError> {
    match &tiers.frames[index] {
        (Tier::Lr, f) => Ok(f),
        (Tier::Hr, _) => Err(PipelineError::TierMismatch { index }),
    }
}

fn hr_frame<'t>(tiers: &'t EncodedTiers, index: usize) -> Result<&'t Frame, PipelineError> {
    match &tiers.frames[index] {
        (Tier::Hr, f) => Ok(f),
        (Tier::Lr, _) => Err(PipelineError::TierMismatch { index }),
    }
}

/// Synthesize every inter frame of every GoP back to full resolution; intra
/// frames pass through their decoded form. Luma goes through the model;
/// chroma of inter frames is upscaled bicubically. Output is cropped to the
/// original geometry.
pub fn synthesize_sequence(
    tiers: &EncodedTiers,
    gops: &[GopStructure],
    model: &SynthModel,
) -> Result<Sequence, PipelineError> {
    let mut out: Vec<Option<Frame>> = vec![None; tiers.frames.len()];
    for gop in gops {
        for plan in &gop.frames {
            match plan.role {
                FrameRole::Intra => {
                    out[plan.index] = Some(hr_frame(tiers, plan.index)?.clone());
                }
                FrameRole::Inter => {
                    let win = window_indices(gop, plan.index);
                    let mut tape = Tape::<f32>::new();
                    tape.set_region_tracking(false);
                    let mut binder = Binder::new(&mut tape, false);
                    let vals = model.bind(&mut binder);
                    // Identical window slots must share a Val so replicated
                    // edges reuse their alignment.
                    let mut win_vals = Vec::with_capacity(3);
                    for (i, &idx) in win.iter().enumerate() {
                        if let Some(j) = win[..i].iter().position(|&p| p == idx) {
                            win_vals.push(win_vals[j]);
                        } else {
                            let t = plane_to_tensor(&lr_frame(tiers, idx)?.y);
                            win_vals.push(tape.leaf(t));
                        }
                    }
                    let mut ref_vals = Vec::new();
                    for &r in &plan.texture_refs {
                        let t = plane_to_tensor(&hr_frame(tiers, r)?.y);
                        ref_vals.push(tape.leaf(t));
                    }
                    let o = vals.synthesize(&mut tape, &win_vals, &ref_vals)?;
                    let y = tensor_to_plane(tape.value(o));
                    let lr = lr_frame(tiers, plan.index)?;
                    let u = bicubic_up_plane(&lr.u, 2)?;
                    let v = bicubic_up_plane(&lr.v, 2)?;
                    out[plan.index] = Some(Frame::new(y, u, v)?);
                }
            }
        }
    }
    let seq = Sequence {
        frames: out.into_iter().map(|f| f.expect("every frame synthesized")).collect(),
        fps: tiers.fps,
        orig_width: tiers.orig_width,
        orig_height: tiers.orig_height,
    };
    Ok(seq.crop_to_original())
}

/// Coding plus synthesis in one call.
pub fn run_pipeline(
    seq: &Sequence,
    gops: &[GopStructure],
    model: &SynthModel,
    search: i32,
) -> Result<(Sequence, EncodedTiers), PipelineError> {
    let tiers = encode_simulate(seq, gops, search)?;
    let recon = synthesize_sequence(&tiers, gops, model)?;
    Ok((recon, tiers))
}

/// Per-frame and mean PSNR per plane plus the total bit proxy.
pub fn evaluate(
    original: &Sequence,
    recon: &Sequence,
    total_bits: f64,
) -> Result<RdReport, PipelineError> {
    if original.frames.len() != recon.frames.len() {
        return Err(PipelineError::FrameCount(original.frames.len(), recon.frames.len()));
    }
    let mut frames = Vec::with_capacity(recon.frames.len());
    let (mut sy, mut su, mut sv) = (0.0, 0.0, 0.0);
    for (i, (a, b)) in original.frames.iter().zip(&recon.frames).enumerate() {
        let (y, u, v) = psnr_planes(a, b)?;
        sy += y;
        su += u;
        sv += v;
        frames.push(FramePsnr { frame: i, y, u, v });
    }
    let n = frames.len().max(1) as f64;
    Ok(RdReport {
        frames,
        mean_psnr_y: sy / n,
        mean_psnr_u: su / n,
        mean_psnr_v: sv / n,
        total_bits,
        bd: None,
    })
}

/// Baseline reconstruction: bicubic upscale of inter tiers, intra frames
/// pass through. What the pipeline produces with synthesis disabled.
pub fn bicubic_baseline(tiers: &EncodedTiers) -> Result<Sequence, PipelineError> {
    let mut frames = Vec::with_capacity(tiers.frames.len());
    for (tier, f) in &tiers.frames {
        frames.push(match tier {
            Tier::Hr => f.clone(),
            Tier::Lr => crossres_video::bicubic_up(f, 2)?,
        });
    }
    let seq = Sequence {
        frames,
        fps: tiers.fps,
        orig_width: tiers.orig_width,
        orig_height: tiers.orig_height,
    };
    Ok(seq.crop_to_original())
}

/// Training samples for the inter frames of one GoP: decoded window and
/// reference tiers as inputs, the pristine source luma as ground truth.
pub fn build_train_samples(
    source: &Sequence,
    tiers: &EncodedTiers,
    gop: &GopStructure,
) -> Result<Vec<TrainSample>, PipelineError> {
    let mut samples = Vec::new();
    for plan in &gop.frames {
        if plan.role != FrameRole::Inter {
            continue;
        }
        let win = window_indices(gop, plan.index);
        let window = win
            .iter()
            .map(|&i| Ok(plane_to_tensor(&lr_frame(tiers, i)?.y)))
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let intra_refs = plan
            .texture_refs
            .iter()
            .map(|&r| Ok(plane_to_tensor(&hr_frame(tiers, r)?.y)))
            .collect::<Result<Vec<_>, PipelineError>>()?;
        samples.push(TrainSample {
            window,
            intra_refs,
            ground_truth: plane_to_tensor(&source.frames[plan.index].y),
        });
    }
    Ok(samples)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    width: usize,
    height: usize,
    orig_width: usize,
    orig_height: usize,
    fps: f64,
    gop: usize,
    mode: String,
    qp: i32,
    frames: Vec<RunRecord>,
}

/// Write the tier bundle: `manifest.json`, `hr.yuv`, `lr.yuv`.
pub fn save_tiers(dir: impl AsRef<Path>, tiers: &EncodedTiers) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::Io { path: dir.display().to_string(), source: e })?;
    let hr: Vec<Frame> = tiers
        .frames
        .iter()
        .filter(|(t, _)| *t == Tier::Hr)
        .map(|(_, f)| f.clone())
        .collect();
    let lr: Vec<Frame> = tiers
        .frames
        .iter()
        .filter(|(t, _)| *t == Tier::Lr)
        .map(|(_, f)| f.clone())
        .collect();
    write_yuv(dir.join("hr.yuv"), &hr)?;
    write_yuv(dir.join("lr.yuv"), &lr)?;
    let manifest = Manifest {
        width: tiers.width,
        height: tiers.height,
        orig_width: tiers.orig_width,
        orig_height: tiers.orig_height,
        fps: tiers.fps,
        gop: tiers.gop_len,
        mode: tiers.mode.as_str().to_string(),
        qp: tiers.qp_intra,
        frames: tiers.records.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest json");
    let path = dir.join("manifest.json");
    std::fs::write(&path, text)
        .map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })
}

/// Read a tier bundle back.
pub fn load_tiers(dir: impl AsRef<Path>) -> Result<EncodedTiers, PipelineError> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
    let mode = match manifest.mode.as_str() {
        "ldp" => GopMode::Ldp,
        "ra" => GopMode::Ra,
        other => return Err(PipelineError::Manifest(format!("unknown mode {other}"))),
    };
    let hr_count = manifest.frames.iter().filter(|r| r.tier == Tier::Hr).count();
    let lr_count = manifest.frames.len() - hr_count;
    let hr = load_yuv(dir.join("hr.yuv"), manifest.width, manifest.height, hr_count)?;
    let lr = if lr_count > 0 {
        load_yuv(dir.join("lr.yuv"), manifest.width / 2, manifest.height / 2, lr_count)?.frames
    } else {
        Vec::new()
    };
    let (mut hi, mut li) = (hr.frames.into_iter(), lr.into_iter());
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for rec in &manifest.frames {
        let frame = match rec.tier {
            Tier::Hr => (Tier::Hr, hi.next().ok_or_else(|| PipelineError::Manifest("hr tier underrun".into()))?),
            Tier::Lr => (Tier::Lr, li.next().ok_or_else(|| PipelineError::Manifest("lr tier underrun".into()))?),
        };
        frames.push(frame);
    }
    Ok(EncodedTiers {
        frames,
        records: manifest.frames,
        width: manifest.width,
        height: manifest.height,
        orig_width: manifest.orig_width,
        orig_height: manifest.orig_height,
        fps: manifest.fps,
        gop_len: manifest.gop,
        mode,
        qp_intra: manifest.qp,
    })
}
