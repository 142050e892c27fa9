//! Independent reference implementations used only by unit tests.

use crate::nn::{ConvLayer, Tensor};
use crate::scalar::Real;
use rand::Rng;

pub fn rand_tensor<T: Real>(rng: &mut impl Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

/// Six nested loops, zero padding, no kernel flip.
pub fn naive_conv<T: Real>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Tensor<T> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (o, k) = (layer.kernels.shape()[0], layer.kernels.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros([o, h, w]);
    for oc in 0..o {
        for y in 0..h {
            for x in 0..w {
                let mut acc = layer.bias.data()[oc].to_f64_lossy();
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - pad;
                            let sx = x as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += layer.kernels.at(&[oc, ic, ky, kx]).to_f64_lossy()
                                * input.at(&[ic, sy as usize, sx as usize]).to_f64_lossy();
                        }
                    }
                }
                out.set(&[oc, y, x], T::from_f64_lossy(acc));
            }
        }
    }
    out
}

/// Max over elements of `|a - b| / max(|b|, 1e-6)`.
pub fn rel_err<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
            (x - y).abs() / y.abs().max(1e-6)
        })
        .fold(0.0, f64::max)
}
