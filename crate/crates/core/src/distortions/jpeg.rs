//! Block-DCT quantization that reproduces JPEG blocking and ringing without
//! entropy coding.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{invalid, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

/// Standard JPEG luminance quantization table, row-major by (v, u).
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Orthonormal DCT-II basis: `basis[u][x]`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * (((2 * x + 1) as f64 * u as f64 * PI) / 16.0).cos();
            }
        }
        b
    })
}

pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| c[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| c[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

pub fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| c[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| c[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Per 8x8 block (on 8-bit, level-shifted samples): DCT, quantize with the
/// luminance table times `quant_scale`, dequantize, inverse DCT, clamp.
/// Partial edge blocks are filled by replicating the last row/column.
pub fn jpeg_proxy<T: Real>(image: &Tensor<T>, quant_scale: f64) -> Result<Tensor<T>> {
    if !(quant_scale >= 1.0) || !quant_scale.is_finite() {
        return Err(invalid!("quant_scale must be finite and >= 1, got {quant_scale}"));
    }
    let (h, w) = image.hw()?;
    let src = image.data();
    let mut out = vec![T::zero(); h * w];
    let steps: Vec<f64> = LUMA_QUANT.iter().map(|&q| q as f64 * quant_scale).collect();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                let sy = (by + y).min(h - 1);
                for x in 0..8 {
                    let sx = (bx + x).min(w - 1);
                    block[y * 8 + x] = src[sy * w + sx].to_f64_lossy() * 255.0 - 128.0;
                }
            }
            let mut coef = dct8x8(&block);
            for (c, step) in coef.iter_mut().zip(&steps) {
                *c = (*c / step).round() * step;
            }
            let rec = idct8x8(&coef);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    let v = ((rec[y * 8 + x] + 128.0) / 255.0).clamp(0.0, 1.0);
                    out[(by + y) * w + bx + x] = T::from_f64_lossy(v);
                }
            }
        }
    }
    Tensor::new([h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_round_trip() {
        let block: [f64; 64] = std::array::from_fn(|i| (i as f64 * 1.7).sin() * 50.0);
        let back = idct8x8(&dct8x8(&block));
        for (a, b) in block.iter().zip(back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn representable_ramp_block_is_reproduced() {
        // coefficients that are exact multiples of their quantization steps
        let mut coef = [0.0; 64];
        coef[0] = 16.0 * 2.0;
        coef[1] = 11.0 * 4.0;
        coef[8] = -12.0;
        let pixels = idct8x8(&coef);
        let img = Tensor::<f64>::from_fn([8, 8], |i| (pixels[i] + 128.0) / 255.0);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let out = jpeg_proxy(&img, 1.0).unwrap();
        let max_err = img.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err < 1.0 / 255.0, "max error {max_err}");
    }

    #[test]
    fn constant_image_error_within_dc_step() {
        for scale in [1.0, 3.0, 16.0] {
            let img = Tensor::<f64>::full([20, 13], 0.3137);
            let out = jpeg_proxy(&img, scale).unwrap();
            let dc_step = 16.0 * scale / 8.0 / 255.0;
            let first = out.data()[0];
            for v in out.data() {
                assert!((v - 0.3137).abs() <= dc_step);
                assert!((v - first).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_scale_below_one() {
        assert!(jpeg_proxy(&Tensor::<f32>::zeros([8, 8]), 0.5).is_err());
    }
}
