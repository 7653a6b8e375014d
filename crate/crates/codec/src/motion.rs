use crate::CodecError;
use crossres_video::{Frame, Plane};

/// Integer-pel block displacements, one vector per 8x8 luma block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionField {
    pub block_size: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
    /// `(dy, dx)` per block in raster order.
    pub vectors: Vec<(i32, i32)>,
}

impl MotionField {
    pub fn zero(width: usize, height: usize, block_size: usize) -> Self {
        let blocks_x = width / block_size;
        let blocks_y = height / block_size;
        MotionField { block_size, blocks_x, blocks_y, vectors: vec![(0, 0); blocks_x * blocks_y] }
    }

    pub fn vector(&self, by: usize, bx: usize) -> (i32, i32) {
        self.vectors[by * self.blocks_x + bx]
    }
}

/// Displacement clamped so the whole block stays inside the reference.
fn clamp_vector(
    dy: i32,
    dx: i32,
    by: usize,
    bx: usize,
    bs: usize,
    w: usize,
    h: usize,
) -> (i32, i32) {
    let max_y = (h - bs) as i32;
    let max_x = (w - bs) as i32;
    let base_y = (by * bs) as i32;
    let base_x = (bx * bs) as i32;
    ((base_y + dy).clamp(0, max_y) - base_y, (base_x + dx).clamp(0, max_x) - base_x)
}

fn block_sad(cur: &Plane, ref_: &Plane, by: usize, bx: usize, bs: usize, dy: i32, dx: i32) -> u64 {
    let base_y = by * bs;
    let base_x = bx * bs;
    let src_y = (base_y as i32 + dy) as usize;
    let src_x = (base_x as i32 + dx) as usize;
    let mut sad = 0u64;
    for r in 0..bs {
        let crow = &cur.data[(base_y + r) * cur.width + base_x..][..bs];
        let rrow = &ref_.data[(src_y + r) * ref_.width + src_x..][..bs];
        for (c, rf) in crow.iter().zip(rrow) {
            sad += (*c as i64 - *rf as i64).unsigned_abs();
        }
    }
    sad
}

/// Full-search SAD minimization within +/- `search` pels on the luma plane.
/// Ties break toward smaller |dy|+|dx|, then candidate scan order.
pub fn estimate_motion(cur: &Frame, ref_: &Frame, search: i32) -> Result<MotionField, CodecError> {
    if cur.width() != ref_.width() || cur.height() != ref_.height() {
        return Err(CodecError::SizeMismatch(cur.width(), cur.height(), ref_.width(), ref_.height()));
    }
    let bs = 8;
    let mut field = MotionField::zero(cur.width(), cur.height(), bs);
    for by in 0..field.blocks_y {
        for bx in 0..field.blocks_x {
            let mut best = (u64::MAX, i32::MAX, (0i32, 0i32));
            for dy in -search..=search {
                for dx in -search..=search {
                    let (cy, cx) = clamp_vector(dy, dx, by, bx, bs, cur.width(), cur.height());
                    let sad = block_sad(&cur.y, &ref_.y, by, bx, bs, cy, cx);
                    let l1 = cy.abs() + cx.abs();
                    if sad < best.0 || (sad == best.0 && l1 < best.1) {
                        best = (sad, l1, (cy, cx));
                    }
                }
            }
            field.vectors[by * field.blocks_x + bx] = best.2;
        }
    }
    Ok(field)
}

/// Motion-compensated prediction of all three planes. Chroma reuses the
/// luma vectors halved (toward zero), staying integer-pel on its own grid.
pub fn compensate(ref_: &Frame, field: &MotionField) -> Frame {
    let comp_plane = |p: &Plane, scale: usize| -> Plane {
        let bs = field.block_size / scale;
        let mut out = vec![0u8; p.width * p.height];
        for by in 0..field.blocks_y {
            for bx in 0..field.blocks_x {
                let (dy, dx) = field.vector(by, bx);
                let (dy, dx) = (dy / scale as i32, dx / scale as i32);
                // Luma vectors keep blocks in-frame; halved chroma vectors
                // shrink toward zero so they stay in-frame too.
                for r in 0..bs {
                    let dst_y = by * bs + r;
                    let src_y = (dst_y as i32 + dy) as usize;
                    let dst_x = bx * bs;
                    let src_x = (dst_x as i32 + dx) as usize;
                    out[dst_y * p.width + dst_x..dst_y * p.width + dst_x + bs]
                        .copy_from_slice(&p.data[src_y * p.width + src_x..src_y * p.width + src_x + bs]);
                }
            }
        }
        Plane { width: p.width, height: p.height, data: out }
    };
    Frame {
        y: comp_plane(&ref_.y, 1),
        u: comp_plane(&ref_.u, 2),
        v: comp_plane(&ref_.v, 2),
    }
}
