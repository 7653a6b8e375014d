//! Group-of-pictures planning: the first frame of every GoP is intra-coded
//! at full resolution, the rest are inter-coded at half resolution with a
//! finer quantizer; texture references point at the bounding intra
//! frame(s).

use crossres_codec::FrameRole;
use crossres_model::GopMode;
use crossres_rd::{allocate_qp, QpSchedule};
use crossres_video::Sequence;

use crate::PipelineError;

#[derive(Clone, Debug)]
pub struct FramePlan {
    pub index: usize,
    pub role: FrameRole,
    pub qp: i32,
    /// Codec prediction reference in coding order (inter frames only).
    pub pred_ref: Option<usize>,
    /// Intra frame indices feeding texture compensation: the GoP's own
    /// intra, plus the succeeding one under random access when it exists.
    pub texture_refs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GopStructure {
    pub start: usize,
    pub len: usize,
    pub mode: GopMode,
    pub schedule: QpSchedule,
    pub frames: Vec<FramePlan>,
}

pub fn structure_gop(
    seq: &Sequence,
    gop_len: usize,
    mode: GopMode,
    qp_intra: i32,
) -> Result<Vec<GopStructure>, PipelineError> {
    plan_gops(seq.frames.len(), gop_len, mode, qp_intra)
}

/// [`structure_gop`] from a bare frame count.
pub fn plan_gops(
    total: usize,
    gop_len: usize,
    mode: GopMode,
    qp_intra: i32,
) -> Result<Vec<GopStructure>, PipelineError> {
    if gop_len < 2 {
        return Err(PipelineError::GopLength(gop_len));
    }
    let schedule = allocate_qp(qp_intra)?;
    let mut gops = Vec::new();
    let mut start = 0;
    while start < total {
        let len = gop_len.min(total - start);
        let next_intra = (start + gop_len < total).then_some(start + gop_len);
        let frames = (start..start + len)
            .map(|index| {
                if index == start {
                    FramePlan {
                        index,
                        role: FrameRole::Intra,
                        qp: schedule.qp_intra,
                        pred_ref: None,
                        texture_refs: vec![],
                    }
                } else {
                    let mut texture_refs = vec![start];
                    if mode == GopMode::Ra {
                        if let Some(n) = next_intra {
                            texture_refs.push(n);
                        }
                    }
                    FramePlan {
                        index,
                        role: FrameRole::Inter,
                        qp: schedule.qp_inter,
                        pred_ref: Some(index - 1),
                        texture_refs,
                    }
                }
            })
            .collect();
        gops.push(GopStructure { start, len, mode, schedule, frames });
        start += len;
    }
    Ok(gops)
}

/// Indices of this GoP's inter frames.
pub fn inter_indices(gop: &GopStructure) -> Vec<usize> {
    gop.frames
        .iter()
        .filter(|f| f.role == FrameRole::Inter)
        .map(|f| f.index)
        .collect()
}

/// Temporal window (prev, self, next) over the GoP's inter frames,
/// replicating the nearest in-GoP inter frame at the edges. Intra frames
/// never enter the window.
pub fn window_indices(gop: &GopStructure, frame: usize) -> [usize; 3] {
    let inters = inter_indices(gop);
    let first = *inters.first().expect("window for a gop without inter frames");
    let last = *inters.last().unwrap();
    [frame.saturating_sub(1).max(first), frame, (frame + 1).min(last)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crossres_video::Frame;

    fn seq(n: usize) -> Sequence {
        Sequence {
            frames: (0..n).map(|i| Frame::gray(16, 16, i as u8).unwrap()).collect(),
            fps: 30.0,
            orig_width: 16,
            orig_height: 16,
        }
    }

    #[test]
    fn intra_placement_is_modular() {
        let gops = structure_gop(&seq(10), 5, GopMode::Ldp, 37).unwrap();
        assert_eq!(gops.len(), 2);
        assert_eq!(gops[0].frames[0].role, FrameRole::Intra);
        assert_eq!(gops[0].frames[0].index, 0);
        assert_eq!(gops[1].frames[0].index, 5);
        assert_eq!(gops[1].frames[0].role, FrameRole::Intra);
    }

    #[test]
    fn qp_offset_applies_to_every_inter_frame() {
        let gops = structure_gop(&seq(6), 3, GopMode::Ldp, 37).unwrap();
        for gop in &gops {
            for f in &gop.frames {
                match f.role {
                    FrameRole::Intra => assert_eq!(f.qp, 37),
                    FrameRole::Inter => assert_eq!(f.qp, 32),
                }
            }
        }
    }

    #[test]
    fn ra_interior_frames_reference_both_bounding_intras() {
        let gops = structure_gop(&seq(12), 10, GopMode::Ra, 32).unwrap();
        // Frame 3 of GoP [0..10): refs {0, 10} since frame 10 exists.
        assert_eq!(gops[0].frames[3].texture_refs, vec![0, 10]);
        // Last GoP has no succeeding intra: single reference.
        assert_eq!(gops[1].frames[1].texture_refs, vec![10]);
    }

    #[test]
    fn ldp_references_only_preceding_intra() {
        let gops = structure_gop(&seq(8), 4, GopMode::Ldp, 32).unwrap();
        assert_eq!(gops[0].frames[3].texture_refs, vec![0]);
        assert_eq!(gops[1].frames[2].texture_refs, vec![4]);
    }

    #[test]
    fn prediction_chain_is_sequential() {
        let gops = structure_gop(&seq(5), 5, GopMode::Ldp, 32).unwrap();
        let plans = &gops[0].frames;
        assert_eq!(plans[1].pred_ref, Some(0));
        assert_eq!(plans[2].pred_ref, Some(1));
    }

    #[test]
    fn short_gop_rejected() {
        assert!(structure_gop(&seq(4), 1, GopMode::Ldp, 32).is_err());
    }

    #[test]
    fn window_replicates_at_gop_edges() {
        let gops = structure_gop(&seq(5), 5, GopMode::Ldp, 32).unwrap();
        assert_eq!(window_indices(&gops[0], 1), [1, 1, 2]);
        assert_eq!(window_indices(&gops[0], 2), [1, 2, 3]);
        assert_eq!(window_indices(&gops[0], 4), [3, 4, 4]);
    }
}
