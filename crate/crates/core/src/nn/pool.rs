//! 2x2 max pooling with stride 2.

use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

/// Flat input offsets of the winning element of every pooling tile, plus the
/// input shape they index into.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: [usize; 3],
    pub argmax: Vec<usize>,
}

/// Each output element is the max of its 2x2 tile. Ties go to the first
/// element in row-major order.
pub fn maxpool2_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (c, h, w) = input.chw("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("maxpool2 needs even spatial dims, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new([c, oh, ow], out)?,
        PoolIndices {
            input_shape: [c, h, w],
            argmax,
        },
    ))
}

/// Routes each upstream gradient to the argmax position of its tile.
pub fn maxpool2_backward<T: Real>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    let [c, h, w] = indices.input_shape;
    if grad_out.shape() != [c, h / 2, w / 2] || indices.argmax.len() != grad_out.len() {
        return Err(shape_err!(
            "maxpool2 indices were recorded for input {:?} but grad_out is {:?}",
            indices.input_shape,
            grad_out.shape()
        ));
    }
    let mut grad_in = vec![T::zero(); c * h * w];
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        grad_in[idx] += g;
    }
    Tensor::new([c, h, w], grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::rand_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_tile() {
        let x = Tensor::<f32>::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
    }

    #[test]
    fn ties_break_to_first_row_major_element() {
        let x = Tensor::<f32>::full([1, 4, 4], 0.5);
        let (y, idx) = maxpool2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        assert_eq!(idx.argmax, vec![0, 2, 8, 10]);
    }

    #[test]
    fn matches_brute_force_tile_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor::<f64>(&mut rng, &[1, 8, 8]);
        let (y, _) = maxpool2_forward(&x).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| x.at(&[0, 2 * oy + dy, 2 * ox + dx]))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(y.at(&[0, oy, ox]), m);
            }
        }
    }

    #[test]
    fn rejects_odd_dims_and_stale_indices() {
        assert!(maxpool2_forward(&Tensor::<f32>::zeros([1, 3, 4])).is_err());
        let (_, idx) = maxpool2_forward(&Tensor::<f32>::zeros([1, 4, 4])).unwrap();
        assert!(maxpool2_backward(&Tensor::<f32>::zeros([1, 4, 4]), &idx).is_err());
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor::<f32>(&mut rng, &[1, 4, 4]);
        let (_, idx) = maxpool2_forward(&x).unwrap();
        let g = maxpool2_backward(&Tensor::full([1, 2, 2], 1.0), &idx).unwrap();
        assert_eq!(g.data().iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(g.data().iter().filter(|&&v| v == 0.0).count(), 12);
        let z = maxpool2_backward(&Tensor::<f32>::zeros([1, 2, 2]), &idx).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor::<f64>(&mut rng, &[1, 4, 4]);
        let weights = rand_tensor::<f64>(&mut rng, &[1, 2, 2]);
        let loss = |x: &Tensor<f64>| -> f64 {
            let (y, _) = maxpool2_forward(x).unwrap();
            y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
        };
        let (_, idx) = maxpool2_forward(&x).unwrap();
        let g = maxpool2_backward(&weights, &idx).unwrap();
        let eps = 1e-5;
        for i in 0..16 {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&p) - loss(&m)) / (2.0 * eps);
            let an = g.data()[i];
            let denom = fd.abs().max(an.abs());
            assert!((fd - an).abs() <= 1e-8 || (fd - an).abs() / denom < 1e-4);
        }
    }
}
