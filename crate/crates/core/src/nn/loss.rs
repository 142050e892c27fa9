use crate::error::{invalid, Result};
use crate::nn::{DenseLayer, Tensor};
use crate::scalar::Real;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot(label)`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(invalid!("label {label} out of range for {} classes", z.len()));
    }
    if !logits.is_finite() {
        return Err(crate::Error::NonFinite("logits".into()));
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let sum_exp: T = z.iter().map(|&v| (v - max).exp()).sum();
    let log_sum_exp = max + sum_exp.ln();
    let loss = log_sum_exp - z[label];
    let mut grad: Vec<T> = z.iter().map(|&v| (v - log_sum_exp).exp()).collect();
    grad[label] -= T::one();
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

/// `lambda * Σ w²` over the weight matrices (never the biases) of the given
/// layers, with per-layer gradients `2 λ w`.
pub fn l2_penalty<T: Real>(layers: &[&DenseLayer<T>], lambda: T) -> Result<(T, Vec<Tensor<T>>)> {
    if lambda < T::zero() || !lambda.is_finite() {
        return Err(invalid!("l2 lambda must be a finite non-negative number, got {lambda}"));
    }
    let two = T::one() + T::one();
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(layers.len());
    for layer in layers {
        value += layer.weights.data().iter().map(|&w| w * w).sum::<T>();
        grads.push(layer.weights.map(|w| two * lambda * w));
    }
    Ok((lambda * value, grads))
}

/// Plain gradient descent: `p <- p - lr * g` for every parameter tensor.
pub fn sgd_step<T: Real>(params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], learning_rate: T) -> Result<()> {
    if !(learning_rate > T::zero()) || !learning_rate.is_finite() {
        return Err(invalid!("learning rate must be positive, got {learning_rate}"));
    }
    if params.len() != grads.len() {
        return Err(invalid!("{} parameter tensors but {} gradients", params.len(), grads.len()));
    }
    if let Some((p, g)) = params.iter().zip(grads).find(|(p, g)| p.shape() != g.shape()) {
        return Err(crate::error::shape_err!(
            "parameter {:?} vs gradient {:?}",
            p.shape(),
            g.shape()
        ));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-learning_rate, g)?;
    }
    Ok(())
}
