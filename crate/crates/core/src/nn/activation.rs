use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` through where the forward input was strictly positive.
/// The subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(shape_err!(
            "relu grad_out {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

/// In-place variant used by the network tape.
pub(crate) fn relu_mask_inplace<T: Real>(grad: &mut Tensor<T>, activation: &Tensor<T>) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f32>::new([3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::<f32>::new([3], vec![0.5, 1.0, 7.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn backward_masks_non_positive_inputs() {
        let x = Tensor::<f64>::new([3], vec![-0.5, 0.0, 0.5]).unwrap();
        let g = Tensor::<f64>::new([3], vec![3.0, 3.0, 3.0]).unwrap();
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 3.0]);
        assert!(relu_backward(&g, &Tensor::zeros([2])).is_err());
    }
}
