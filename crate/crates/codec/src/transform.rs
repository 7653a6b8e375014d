//! Orthonormal block DCT-II with uniform quantization and the bit proxy.
//!
//! Rate proxy per block: `log2(1 + nnz)` significance bits plus, for every
//! nonzero level of magnitude m, `2*floor(log2 m) + 1` magnitude bits
//! (exp-Golomb order-0 length) and one sign bit. Monotone in the level
//! magnitudes and reproducible, which is all the R-D machinery needs.

use crate::qp::QpModel;
use crossres_video::Plane;

/// Orthonormal 1-D DCT-II basis, row u = basis for frequency u.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for u in 0..n {
        for x in 0..n {
            let angle = std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64;
            basis[u * n + x] = if u == 0 { norm0 } else { norm * angle.cos() };
        }
    }
    basis
}

fn forward_2d(block: &[f64], basis: &[f64], n: usize, out: &mut [f64]) {
    // X = C * x * C^T
    let mut tmp = vec![0.0; n * n];
    for u in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += basis[u * n + k] * block[k * n + x];
            }
            tmp[u * n + x] = acc;
        }
    }
    for u in 0..n {
        for v in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += tmp[u * n + k] * basis[v * n + k];
            }
            out[u * n + v] = acc;
        }
    }
}

fn inverse_2d(coeff: &[f64], basis: &[f64], n: usize, out: &mut [f64]) {
    // x = C^T * X * C
    let mut tmp = vec![0.0; n * n];
    for x in 0..n {
        for v in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += basis[k * n + x] * coeff[k * n + v];
            }
            tmp[x * n + v] = acc;
        }
    }
    for x in 0..n {
        for y in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += tmp[x * n + k] * basis[k * n + y];
            }
            out[x * n + y] = acc;
        }
    }
}

fn magnitude_bits(level: i64) -> f64 {
    let m = level.unsigned_abs();
    debug_assert!(m > 0);
    (2 * (63 - m.leading_zeros()) + 1) as f64 + 1.0
}

/// Transform-quantize-reconstruct one residual plane in place.
/// `plane` holds centered real samples; returns the bit proxy.
pub fn code_plane(plane: &mut [f64], width: usize, height: usize, block: usize, qp: &QpModel) -> f64 {
    debug_assert!(width % block == 0 && height % block == 0);
    let basis = dct_basis(block);
    let mut blk = vec![0.0; block * block];
    let mut coeff = vec![0.0; block * block];
    let mut bits = 0.0;
    for by in (0..height).step_by(block) {
        for bx in (0..width).step_by(block) {
            for r in 0..block {
                for c in 0..block {
                    blk[r * block + c] = plane[(by + r) * width + bx + c];
                }
            }
            forward_2d(&blk, &basis, block, &mut coeff);
            let mut nnz = 0usize;
            for v in coeff.iter_mut() {
                let level = qp.quantize(*v);
                if level != 0 {
                    nnz += 1;
                    bits += magnitude_bits(level);
                }
                *v = qp.dequantize(level);
            }
            bits += (1.0 + nnz as f64).log2();
            inverse_2d(&coeff, &basis, block, &mut blk);
            for r in 0..block {
                for c in 0..block {
                    plane[(by + r) * width + bx + c] = blk[r * block + c];
                }
            }
        }
    }
    bits
}

/// Block size used for a plane: full-size blocks for plane dims that divide
/// by it, halved blocks for 4:2:0 chroma of half-granularity planes.
pub fn plane_block(p: &Plane, luma_block: usize) -> usize {
    if p.width % luma_block == 0 && p.height % luma_block == 0 {
        luma_block
    } else {
        luma_block / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_roundtrip_is_lossless_without_quantization() {
        let basis = dct_basis(8);
        let block: Vec<f64> = (0..64).map(|i| ((i * 37) % 256) as f64 - 128.0).collect();
        let mut coeff = vec![0.0; 64];
        forward_2d(&block, &basis, 8, &mut coeff);
        let mut back = vec![0.0; 64];
        inverse_2d(&coeff, &basis, 8, &mut back);
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_block_is_dc_only() {
        let basis = dct_basis(8);
        let block = vec![42.0; 64];
        let mut coeff = vec![0.0; 64];
        forward_2d(&block, &basis, 8, &mut coeff);
        assert!((coeff[0] - 8.0 * 42.0).abs() < 1e-9);
        for &c in &coeff[1..] {
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn magnitude_bits_grow_with_level() {
        assert_eq!(magnitude_bits(1), 2.0); // 1 + sign
        assert_eq!(magnitude_bits(-1), 2.0);
        assert_eq!(magnitude_bits(3), 4.0);
        assert_eq!(magnitude_bits(8), 8.0);
    }
}
