use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

/// In-place 2-D FFT of a row-major `h x w` complex grid.
pub(crate) fn fft2(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Signed spatial frequency (cycles/pixel) of FFT bin `k` out of `n`.
pub(crate) fn bin_frequency(k: usize, n: usize) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

/// Zero-mean, unit-variance noise field whose power spectrum falls as `1/f`:
/// white Gaussian noise with every frequency bin scaled by `1/sqrt(f)`.
pub fn pink_noise_field(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid: Vec<Complex<f64>> = (0..h * w)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    fft2(&mut grid, h, w, false);
    for y in 0..h {
        let fy = bin_frequency(y, h);
        for x in 0..w {
            let fx = bin_frequency(x, w);
            let f = (fx * fx + fy * fy).sqrt();
            grid[y * w + x] *= if f == 0.0 { 0.0 } else { 1.0 / f.sqrt() };
        }
    }
    fft2(&mut grid, h, w, true);
    let real: Vec<f64> = grid.iter().map(|c| c.re).collect();
    let n = real.len() as f64;
    let mean = real.iter().sum::<f64>() / n;
    let std = (real.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { 1.0 / std } else { 0.0 };
    real.into_iter().map(|v| (v - mean) * scale).collect()
}

/// Adds pink noise with spatial standard deviation `std`, clamping to [0, 1].
pub fn pink_noise<T: Real>(image: &Tensor<T>, std: f64, seed: u64) -> Result<Tensor<T>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(invalid!("noise std must be finite and >= 0, got {std}"));
    }
    let (h, w) = image.hw()?;
    if std == 0.0 {
        return Ok(image.clone());
    }
    let field = pink_noise_field(h, w, seed);
    let data = image
        .data()
        .iter()
        .zip(field)
        .map(|(&v, n)| T::from_f64_lossy((v.to_f64_lossy() + std * n).clamp(0.0, 1.0)))
        .collect();
    Tensor::new([h, w], data)
}
