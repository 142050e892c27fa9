//! Procedural "clean" images for building synthetic corpora when no natural
//! image collection is at hand.
//!
//! Each image is a stationary random texture with a natural-image-like
//! `1/f` amplitude spectrum (band-limited below 1/24 cycles per pixel so that
//! every 64x64 window carries comparable detail), scaled to a standard
//! deviation of 0.12 around a random mean luminance in [0.4, 0.6].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;

use crate::distortions::{bin_frequency, fft2};
use crate::nn::Tensor;
use crate::scalar::Real;

const LOW_CUTOFF: f64 = 1.0 / 24.0;
const TEXTURE_STD: f64 = 0.12;

pub fn procedural_image<T: Real>(height: usize, width: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_level = rng.random_range(0.4..0.6);
    let mut grid: Vec<Complex<f64>> = (0..height * width)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    fft2(&mut grid, height, width, false);
    for y in 0..height {
        let fy = bin_frequency(y, height);
        for x in 0..width {
            let fx = bin_frequency(x, width);
            let f = (fx * fx + fy * fy).sqrt();
            grid[y * width + x] *= if f < LOW_CUTOFF { 0.0 } else { 1.0 / f };
        }
    }
    fft2(&mut grid, height, width, true);
    let n = (height * width) as f64;
    let mean = grid.iter().map(|c| c.re).sum::<f64>() / n;
    let std = (grid.iter().map(|c| (c.re - mean).powi(2)).sum::<f64>() / n).sqrt();
    Tensor::from_fn([height, width], |i| {
        let v = mean_level + TEXTURE_STD * (grid[i].re - mean) / std;
        T::from_f64_lossy(v.clamp(0.0, 1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = procedural_image::<f32>(64, 80, 1);
        assert_eq!(a, procedural_image::<f32>(64, 80, 1));
        assert_ne!(a, procedural_image::<f32>(64, 80, 2));
        assert_eq!(a.shape(), &[64, 80]);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn windows_have_comparable_detail() {
        use crate::pooling::{extract_patches, patch_variance, PoolingConfig};
        let img = procedural_image::<f64>(192, 192, 5);
        let cfg = PoolingConfig { stride: 16, ..Default::default() };
        let v: Vec<f64> = extract_patches(&img, &cfg).unwrap().iter().map(|(_, p)| patch_variance(p)).collect();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(0.0, f64::max);
        assert!(min > 0.002, "flattest window variance {min}");
        assert!(max / min < 6.0, "variance spread {min}..{max}");
    }
}
