use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[out_dim, in_dim]`
    pub weights: Tensor<T>,
    /// `[out_dim]`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let layer = DenseLayer { weights, bias };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseLayer {
            weights: Tensor::zeros([out_dim, in_dim]),
            bias: Tensor::zeros([out_dim]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [o, _] = *self.weights.shape() else {
            return Err(shape_err!("dense weights must be [out,in], got {:?}", self.weights.shape()));
        };
        if self.bias.shape() != [o] {
            return Err(shape_err!("dense bias must be [{o}], got {:?}", self.bias.shape()));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        self.validate()?;
        if input.len() != self.in_dim() {
            return Err(shape_err!(
                "dense layer expects {} inputs, got {}",
                self.in_dim(),
                input.len()
            ));
        }
        Ok(())
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `W x + b`. The input is treated as a flat vector whatever its shape.
pub fn dense_forward<T: Real>(input: &Tensor<T>, layer: &DenseLayer<T>) -> Result<Tensor<T>> {
    layer.check_input(input)?;
    let (o, n) = (layer.out_dim(), layer.in_dim());
    let x = input.data();
    let out = layer
        .weights
        .data()
        .chunks_exact(n)
        .zip(layer.bias.data())
        .map(|(row, &b)| b + dot(row, x))
        .collect::<Vec<T>>();
    debug_assert_eq!(out.len(), o);
    Tensor::new([o], out)
}

pub(crate) fn dense_backward_accumulate<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &DenseLayer<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    layer.check_input(input)?;
    let (o, n) = (layer.out_dim(), layer.in_dim());
    if grad_out.len() != o {
        return Err(shape_err!("dense grad_out has {} entries, layer outputs {o}", grad_out.len()));
    }
    if grad_weights.shape() != layer.weights.shape() || grad_bias.shape() != layer.bias.shape() {
        return Err(shape_err!("dense gradient buffers do not match layer parameters"));
    }
    let g = grad_out.data();
    for (gb, &v) in grad_bias.data_mut().iter_mut().zip(g) {
        *gb += v;
    }
    let x = input.data();
    let mut grad_in = vec![T::zero(); n];
    for ((gw_row, w_row), &go) in grad_weights
        .data_mut()
        .chunks_exact_mut(n)
        .zip(layer.weights.data().chunks_exact(n))
        .zip(g)
    {
        axpy(go, x, gw_row);
        axpy(go, w_row, &mut grad_in);
    }
    debug_assert_eq!(o * n, layer.weights.len());
    Tensor::new(input.shape(), grad_in)
}

/// Returns `grad_input = W^T g`, `grad_W = g ⊗ x`, `grad_b = g`.
pub fn dense_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &DenseLayer<T>,
) -> Result<DenseGrads<T>> {
    let mut weights = Tensor::zeros(layer.weights.shape());
    let mut bias = Tensor::zeros(layer.bias.shape());
    let input_grad = dense_backward_accumulate(grad_out, input, layer, &mut weights, &mut bias)?;
    Ok(DenseGrads {
        input: input_grad,
        weights,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::rand_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let w = Tensor::<f64>::from_fn([4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let layer = DenseLayer::new(w, Tensor::zeros([4])).unwrap();
        let x = Tensor::new([4], vec![1.5, -2.0, 0.25, 9.0]).unwrap();
        assert_eq!(dense_forward(&x, &layer).unwrap(), x);
    }

    #[test]
    fn zero_weights_output_bias() {
        let b = Tensor::<f32>::new([3], vec![1.0, 2.0, 3.0]).unwrap();
        let layer = DenseLayer::new(Tensor::zeros([3, 7]), b.clone()).unwrap();
        assert_eq!(dense_forward(&Tensor::full([7], 4.0), &layer).unwrap(), b);
    }

    #[test]
    fn rejects_length_mismatch() {
        let layer = DenseLayer::<f32>::zeros(3, 7);
        assert!(dense_forward(&Tensor::zeros([6]), &layer).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layer = DenseLayer::new(rand_tensor::<f64>(&mut rng, &[3, 5]), rand_tensor(&mut rng, &[3])).unwrap();
        let x = rand_tensor::<f64>(&mut rng, &[5]);
        let wgt = rand_tensor::<f64>(&mut rng, &[3]);
        let loss = |l: &DenseLayer<f64>, x: &Tensor<f64>| -> f64 {
            let y = dense_forward(x, l).unwrap();
            y.data().iter().zip(wgt.data()).map(|(a, b)| (a * b).tanh()).sum()
        };
        let y = dense_forward(&x, &layer).unwrap();
        let up: Vec<f64> = y
            .data()
            .iter()
            .zip(wgt.data())
            .map(|(a, b)| b * (1.0 - (a * b).tanh().powi(2)))
            .collect();
        let grads = dense_backward(&Tensor::new([3], up).unwrap(), &x, &layer).unwrap();
        let eps = 1e-5;
        let check = |fd: f64, an: f64| {
            assert!((fd - an).abs() <= 1e-8 || (fd - an).abs() / fd.abs().max(an.abs()) < 1e-4, "{fd} vs {an}");
        };
        for i in 0..15 {
            let (mut p, mut m) = (layer.clone(), layer.clone());
            p.weights.data_mut()[i] += eps;
            m.weights.data_mut()[i] -= eps;
            check((loss(&p, &x) - loss(&m, &x)) / (2.0 * eps), grads.weights.data()[i]);
        }
        for i in 0..3 {
            let (mut p, mut m) = (layer.clone(), layer.clone());
            p.bias.data_mut()[i] += eps;
            m.bias.data_mut()[i] -= eps;
            check((loss(&p, &x) - loss(&m, &x)) / (2.0 * eps), grads.bias.data()[i]);
        }
        for i in 0..5 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            check((loss(&layer, &p) - loss(&layer, &m)) / (2.0 * eps), grads.input.data()[i]);
        }
    }
}
