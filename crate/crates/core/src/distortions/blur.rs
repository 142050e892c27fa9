use crate::error::{invalid, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

/// Sampled Gaussian of radius `ceil(3 sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (…, 2, 1, | 0, 1, 2, …, n-1 |, n-2, …).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn convolve_axis(src: &[f64], dst: &mut [f64], h: usize, w: usize, kernel: &[f64], horizontal: bool) {
    let r = (kernel.len() / 2) as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in kernel.iter().enumerate() {
                let off = j as isize - r;
                let v = if horizontal {
                    src[y * w + reflect(x as isize + off, w)]
                } else {
                    src[reflect(y as isize + off, h) * w + x]
                };
                acc += kv * v;
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Separable Gaussian blur with reflect padding. `sigma == 0` returns the
/// input unchanged.
pub fn gaussian_blur<T: Real>(image: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid!("blur sigma must be finite and >= 0, got {sigma}"));
    }
    let (h, w) = image.hw()?;
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let src: Vec<f64> = image.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut tmp = vec![0.0; h * w];
    let mut out = vec![0.0; h * w];
    convolve_axis(&src, &mut tmp, h, w, &kernel, true);
    convolve_axis(&tmp, &mut out, h, w, &kernel, false);
    Tensor::new([h, w], out.into_iter().map(|v| T::from_f64_lossy(v.clamp(0.0, 1.0))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = Tensor::<f32>::from_fn([9, 7], |i| (i as f32 * 0.37).sin().abs());
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn impulse_response_is_sampled_gaussian() {
        let n = 21;
        let c = n / 2;
        let mut img = Tensor::<f64>::zeros([n, n]);
        img.set(&[c, c], 1.0);
        let out = gaussian_blur(&img, 1.0).unwrap();
        // closed form: exp(-x^2/2) normalized over the radius-3 support
        let g: Vec<f64> = (-3..=3).map(|x: i32| (-(x * x) as f64 / 2.0).exp()).collect();
        let s: f64 = g.iter().sum();
        for (i, dx) in (-3i32..=3).enumerate() {
            let expected = (g[3] / s) * (g[i] / s);
            let got = out.at(&[c, (c as i32 + dx) as usize]);
            assert!((got - expected).abs() < 1e-6, "dx={dx}: {got} vs {expected}");
        }
        assert_eq!(out.at(&[c, c + 4]), 0.0);
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Tensor::<f64>::full([16, 12], 0.42);
        for sigma in [0.5, 2.0, 8.0] {
            let out = gaussian_blur(&img, sigma).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
        }
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-9, 5), 1);
        assert_eq!(reflect(3, 1), 0);
    }
}
