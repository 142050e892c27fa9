//! The patch classifier: three conv/ReLU/maxpool stages followed by two fully
//! connected layers, mapping a 1x64x64 luminance patch to five grade logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::grade::{QualityGrade, NUM_GRADES};
use crate::nn::{
    conv2d_backward_accumulate, conv2d_forward, dense_backward_accumulate, dense_forward,
    maxpool2_backward, maxpool2_forward, relu_mask_inplace, softmax, ConvLayer, DenseLayer,
    PoolIndices, Tensor, softmax_cross_entropy,
};
use crate::scalar::Real;

pub const PATCH_SIZE: usize = 64;
pub const KERNEL_SIZES: [usize; 3] = [5, 3, 3];
/// Spatial size after the three 2x2 pools.
pub const FINAL_SPATIAL: usize = PATCH_SIZE / 8;

pub const PARAM_NAMES: [&str; 10] = [
    "conv1.kernels",
    "conv1.bias",
    "conv2.kernels",
    "conv2.bias",
    "conv3.kernels",
    "conv3.bias",
    "fc1.weights",
    "fc1.bias",
    "fc2.weights",
    "fc2.bias",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetWidths {
    pub conv: [usize; 3],
    pub hidden: usize,
}

impl Default for NetWidths {
    fn default() -> Self {
        NetWidths {
            conv: [16, 32, 64],
            hidden: 128,
        }
    }
}

impl NetWidths {
    pub fn validate(&self) -> Result<()> {
        if self.conv.iter().any(|&c| c == 0) || self.hidden == 0 {
            return Err(invalid!("network widths must be positive, got {self:?}"));
        }
        Ok(())
    }

    pub fn flatten_dim(&self) -> usize {
        FINAL_SPATIAL * FINAL_SPATIAL * self.conv[2]
    }

    /// Expected shape of every parameter tensor, in declaration order.
    pub fn param_shapes(&self) -> [Vec<usize>; 10] {
        let [c1, c2, c3] = self.conv;
        let [k1, k2, k3] = KERNEL_SIZES;
        [
            vec![c1, 1, k1, k1],
            vec![c1],
            vec![c2, c1, k2, k2],
            vec![c2],
            vec![c3, c2, k3, k3],
            vec![c3],
            vec![self.hidden, self.flatten_dim()],
            vec![self.hidden],
            vec![NUM_GRADES, self.hidden],
            vec![NUM_GRADES],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepQualityNet<T> {
    widths: NetWidths,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub conv3: ConvLayer<T>,
    pub fc1: DenseLayer<T>,
    pub fc2: DenseLayer<T>,
}

/// Per-parameter gradients share the network's layout.
pub type Gradients<T> = DeepQualityNet<T>;

/// Probability vector over the five grades plus its argmax.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchScore<T> {
    pub probabilities: [T; NUM_GRADES],
    pub predicted_grade: QualityGrade,
}

impl<T: Real> PatchScore<T> {
    pub fn from_logits(logits: &Tensor<T>) -> Result<Self> {
        if logits.len() != NUM_GRADES {
            return Err(shape_err!("expected {NUM_GRADES} logits, got {}", logits.len()));
        }
        let p = softmax(logits.data());
        let probabilities: [T; NUM_GRADES] = p.try_into().expect("length checked");
        Ok(PatchScore {
            predicted_grade: QualityGrade::argmax(&probabilities),
            probabilities,
        })
    }

    /// Probability-weighted mean grade index.
    pub fn expected_grade(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| i as f64 * p.to_f64_lossy())
            .sum()
    }
}

/// Activations a backward pass needs, recorded by [`DeepQualityNet::record`].
#[derive(Clone, Debug)]
struct ConvCache<T> {
    act: [Tensor<T>; 3],
    pooled: [Tensor<T>; 3],
    pool_idx: [PoolIndices; 3],
}

#[derive(Clone, Debug)]
struct ForwardCache<T> {
    input: Tensor<T>,
    conv: ConvCache<T>,
    hidden: Tensor<T>,
}

/// Gradient accumulator plus the activations of the most recent recorded
/// forward pass.
#[derive(Clone, Debug)]
pub struct GradientTape<T> {
    pub grads: Gradients<T>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> GradientTape<T> {
    pub fn new(net: &DeepQualityNet<T>) -> Self {
        GradientTape {
            grads: net.zeros_like(),
            cache: None,
        }
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl<T: Real> DeepQualityNet<T> {
    /// All-zero parameters for the given widths.
    pub fn zeros(widths: NetWidths) -> Result<Self> {
        widths.validate()?;
        let [c1, c2, c3] = widths.conv;
        let [k1, k2, k3] = KERNEL_SIZES;
        Ok(DeepQualityNet {
            widths,
            conv1: ConvLayer::zeros(c1, 1, k1),
            conv2: ConvLayer::zeros(c2, c1, k2),
            conv3: ConvLayer::zeros(c3, c2, k3),
            fc1: DenseLayer::zeros(widths.hidden, widths.flatten_dim()),
            fc2: DenseLayer::zeros(NUM_GRADES, widths.hidden),
        })
    }

    /// He initialization: weights ~ N(0, 2 / fan_in), zero biases. Weights are
    /// drawn in f64 and rounded, so f32 and f64 networks from one seed agree.
    pub fn init(seed: u64, widths: NetWidths) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: [&mut Tensor<T>; 5] = [
            &mut net.conv1.kernels,
            &mut net.conv2.kernels,
            &mut net.conv3.kernels,
            &mut net.fc1.weights,
            &mut net.fc2.weights,
        ];
        for w in weights {
            let fan_in: usize = w.shape()[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in w.data_mut() {
                *v = T::from_f64_lossy(normal.sample(&mut rng));
            }
        }
        Ok(net)
    }

    /// Reassembles a network from parameter tensors in [`PARAM_NAMES`] order.
    pub fn from_params(widths: NetWidths, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        if params.len() != PARAM_NAMES.len() {
            return Err(shape_err!("expected {} parameter tensors, got {}", PARAM_NAMES.len(), params.len()));
        }
        for ((slot, value), name) in net.params_mut().into_iter().zip(params).zip(PARAM_NAMES) {
            if slot.shape() != value.shape() {
                return Err(shape_err!("{name}: expected {:?}, got {:?}", slot.shape(), value.shape()));
            }
            *slot = value;
        }
        Ok(net)
    }

    pub fn widths(&self) -> NetWidths {
        self.widths
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.widths).expect("widths already validated")
    }

    pub fn params(&self) -> [&Tensor<T>; 10] {
        [
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.conv3.kernels,
            &self.conv3.bias,
            &self.fc1.weights,
            &self.fc1.bias,
            &self.fc2.weights,
            &self.fc2.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 10] {
        [
            &mut self.conv1.kernels,
            &mut self.conv1.bias,
            &mut self.conv2.kernels,
            &mut self.conv2.bias,
            &mut self.conv3.kernels,
            &mut self.conv3.bias,
            &mut self.fc1.weights,
            &mut self.fc1.bias,
            &mut self.fc2.weights,
            &mut self.fc2.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> DeepQualityNet<U> {
        let params = self.params().iter().map(|t| t.cast()).collect();
        DeepQualityNet::from_params(self.widths, params).expect("same layout")
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    /// `self += alpha * other` over every parameter.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        for (p, o) in self.params_mut().into_iter().zip(other.params()) {
            p.axpy(alpha, o)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn check_patch(patch: &Tensor<T>) -> Result<()> {
        if patch.shape() != [1, PATCH_SIZE, PATCH_SIZE] {
            return Err(shape_err!(
                "network input must be [1, {PATCH_SIZE}, {PATCH_SIZE}], got {:?}",
                patch.shape()
            ));
        }
        Ok(())
    }

    /// The three conv/ReLU/pool stages for one patch.
    fn conv_stages(&self, patch: &Tensor<T>) -> Result<ConvCache<T>> {
        Self::check_patch(patch)?;
        let convs = [&self.conv1, &self.conv2, &self.conv3];
        let mut acts = Vec::with_capacity(3);
        let mut pooled: Vec<Tensor<T>> = Vec::with_capacity(3);
        let mut idx = Vec::with_capacity(3);
        for conv in convs {
            let x = pooled.last().unwrap_or(patch);
            let mut a = conv2d_forward(x, conv)?;
            a.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
            let (p, i) = maxpool2_forward(&a)?;
            acts.push(a);
            pooled.push(p);
            idx.push(i);
        }
        Ok(ConvCache {
            act: acts.try_into().expect("three stages"),
            pooled: pooled.try_into().expect("three stages"),
            pool_idx: idx.try_into().expect("three stages"),
        })
    }

    /// Back-propagates the gradient of the flattened conv output through the
    /// conv stages, accumulating into `g`.
    fn conv_backward(
        &self,
        patch: &Tensor<T>,
        cache: &ConvCache<T>,
        d_flat: Vec<T>,
        g: &mut Gradients<T>,
    ) -> Result<()> {
        let mut d_pooled = Tensor::new(cache.pooled[2].shape(), d_flat)?;
        let convs = [&self.conv1, &self.conv2, &self.conv3];
        let grads = [
            (&mut g.conv1.kernels, &mut g.conv1.bias),
            (&mut g.conv2.kernels, &mut g.conv2.bias),
            (&mut g.conv3.kernels, &mut g.conv3.bias),
        ];
        for (stage, (gk, gb)) in grads.into_iter().enumerate().rev() {
            let mut d_act = maxpool2_backward(&d_pooled, &cache.pool_idx[stage])?;
            relu_mask_inplace(&mut d_act, &cache.act[stage]);
            let input = if stage == 0 { patch } else { &cache.pooled[stage - 1] };
            match conv2d_backward_accumulate(&d_act, input, convs[stage], gk, gb, stage > 0)? {
                Some(d_in) => d_pooled = d_in,
                None => break,
            }
        }
        Ok(())
    }

    fn run(&self, patch: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let conv = self.conv_stages(patch)?;
        let flat = conv.pooled[2].clone().reshape([self.widths.flatten_dim()])?;
        let mut hidden = dense_forward(&flat, &self.fc1)?;
        hidden.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        let logits = dense_forward(&hidden, &self.fc2)?;
        let cache = ForwardCache {
            input: patch.clone(),
            conv,
            hidden,
        };
        Ok((logits, cache))
    }

    /// conv1→relu→pool → conv2→relu→pool → conv3→relu→pool → fc1→relu → fc2.
    pub fn forward(&self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(patch).map(|(logits, _)| logits)
    }

    /// Forward pass that also stores the activations in `tape` for a later
    /// [`backward`](Self::backward).
    pub fn record(&self, patch: &Tensor<T>, tape: &mut GradientTape<T>) -> Result<Tensor<T>> {
        let (logits, cache) = self.run(patch)?;
        tape.cache = Some(cache);
        Ok(logits)
    }

    /// Back-propagates `grad_logits` through the recorded forward pass and
    /// accumulates parameter gradients into `tape.grads`. Consumes the cache.
    pub fn backward(&self, tape: &mut GradientTape<T>, grad_logits: &Tensor<T>) -> Result<()> {
        let cache = tape.cache.take().ok_or(Error::MissingCache("network forward pass"))?;
        if tape.grads.widths != self.widths {
            return Err(shape_err!("gradient tape was created for a different architecture"));
        }
        let g = &mut tape.grads;
        let flat = cache.conv.pooled[2].clone().reshape([self.widths.flatten_dim()])?;
        let mut d_hidden = dense_backward_accumulate(grad_logits, &cache.hidden, &self.fc2, &mut g.fc2.weights, &mut g.fc2.bias)?;
        relu_mask_inplace(&mut d_hidden, &cache.hidden);
        let d_flat = dense_backward_accumulate(&d_hidden, &flat, &self.fc1, &mut g.fc1.weights, &mut g.fc1.bias)?;
        self.conv_backward(&cache.input, &cache.conv, d_flat.into_data(), g)
    }

    /// Cross-entropy forward/backward over a chunk of labelled patches.
    ///
    /// The fully connected head runs as matrix products over the whole chunk.
    /// Gradients of the *summed* (not averaged) data loss are added to
    /// `grads`; the per-sample losses and predicted grades are returned.
    pub fn accumulate_batch(
        &self,
        patches: &[&Tensor<T>],
        labels: &[usize],
        grads: &mut Gradients<T>,
    ) -> Result<Vec<(T, QualityGrade)>> {
        if patches.len() != labels.len() {
            return Err(invalid!("{} patches but {} labels", patches.len(), labels.len()));
        }
        if grads.widths != self.widths {
            return Err(shape_err!("gradient buffer was created for a different architecture"));
        }
        let b = patches.len();
        if b == 0 {
            return Ok(Vec::new());
        }
        let fd = self.widths.flatten_dim();
        let hd = self.widths.hidden;
        let nc = NUM_GRADES;

        let mut caches = Vec::with_capacity(b);
        let mut flat = Vec::with_capacity(b * fd);
        for patch in patches {
            let cache = self.conv_stages(patch)?;
            flat.extend_from_slice(cache.pooled[2].data());
            caches.push(cache);
        }

        // hidden[b, hd] = relu(flat[b, fd] * W1^T + b1)
        let mut hidden: Vec<T> = (0..b).flat_map(|_| self.fc1.bias.data().iter().copied()).collect();
        T::gemm(b, fd, hd, T::one(), &flat, fd as isize, 1, self.fc1.weights.data(), 1, fd as isize, T::one(), &mut hidden, hd as isize, 1);
        hidden.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let mut logits: Vec<T> = (0..b).flat_map(|_| self.fc2.bias.data().iter().copied()).collect();
        T::gemm(b, hd, nc, T::one(), &hidden, hd as isize, 1, self.fc2.weights.data(), 1, hd as isize, T::one(), &mut logits, nc as isize, 1);

        let mut d_logits = Vec::with_capacity(b * nc);
        let mut out = Vec::with_capacity(b);
        for (row, &label) in logits.chunks_exact(nc).zip(labels) {
            let z = Tensor::new([nc], row.to_vec())?;
            let (loss, d) = softmax_cross_entropy(&z, label)?;
            out.push((loss, QualityGrade::argmax(row)));
            d_logits.extend_from_slice(d.data());
        }

        let g = grads;
        T::gemm(nc, b, hd, T::one(), &d_logits, 1, nc as isize, &hidden, hd as isize, 1, T::one(), g.fc2.weights.data_mut(), hd as isize, 1);
        for row in d_logits.chunks_exact(nc) {
            for (gb, &v) in g.fc2.bias.data_mut().iter_mut().zip(row) {
                *gb += v;
            }
        }
        let mut d_hidden = vec![T::zero(); b * hd];
        T::gemm(b, nc, hd, T::one(), &d_logits, nc as isize, 1, self.fc2.weights.data(), hd as isize, 1, T::zero(), &mut d_hidden, hd as isize, 1);
        for (d, &h) in d_hidden.iter_mut().zip(&hidden) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        T::gemm(hd, b, fd, T::one(), &d_hidden, 1, hd as isize, &flat, fd as isize, 1, T::one(), g.fc1.weights.data_mut(), fd as isize, 1);
        for row in d_hidden.chunks_exact(hd) {
            for (gb, &v) in g.fc1.bias.data_mut().iter_mut().zip(row) {
                *gb += v;
            }
        }
        let mut d_flat = vec![T::zero(); b * fd];
        T::gemm(b, hd, fd, T::one(), &d_hidden, hd as isize, 1, self.fc1.weights.data(), fd as isize, 1, T::zero(), &mut d_flat, fd as isize, 1);

        for ((patch, cache), d) in patches.iter().zip(&caches).zip(d_flat.chunks_exact(fd)) {
            self.conv_backward(patch, cache, d.to_vec(), g)?;
        }
        Ok(out)
    }

    pub fn predict(&self, patch: &Tensor<T>) -> Result<PatchScore<T>> {
        PatchScore::from_logits(&self.forward(patch)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        Tensor::from_fn([1, 64, 64], |_| rng.random::<f32>())
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = DeepQualityNet::<f32>::init(3, NetWidths::default()).unwrap();
        let b = DeepQualityNet::<f32>::init(3, NetWidths::default()).unwrap();
        let c = DeepQualityNet::<f32>::init(4, NetWidths::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.params().iter().skip(1).step_by(2).all(|b| b.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn he_init_std_matches_fan_in() {
        let net = DeepQualityNet::<f64>::init(99, NetWidths::default()).unwrap();
        let w = net.conv1.kernels.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0f64 / 25.0).sqrt();
        assert!(w.len() >= 400);
        assert!((std - target).abs() / target < 0.2, "std {std} vs {target}");
    }

    #[test]
    fn rejects_zero_width() {
        let widths = NetWidths { conv: [0, 4, 4], hidden: 8 };
        assert!(DeepQualityNet::<f32>::init(0, widths).is_err());
    }

    #[test]
    fn forward_shape_contract() {
        let net = DeepQualityNet::<f32>::init(1, NetWidths::default()).unwrap();
        let (logits, cache) = net.run(&patch(0)).unwrap();
        assert_eq!(logits.shape(), &[5]);
        assert!(logits.is_finite());
        assert_eq!(cache.conv.pooled[0].shape(), &[16, 32, 32]);
        assert_eq!(cache.conv.pooled[1].shape(), &[32, 16, 16]);
        assert_eq!(cache.conv.pooled[2].shape(), &[64, 8, 8]);
        assert_eq!(net.widths().flatten_dim(), 4096);
        assert!(net.forward(&Tensor::zeros([1, 32, 32])).is_err());
        assert!(net.forward(&Tensor::zeros([64, 64])).is_err());
    }

    #[test]
    fn zero_patch_yields_fc2_bias() {
        let mut net = DeepQualityNet::<f32>::init(1, NetWidths::default()).unwrap();
        let logits = net.forward(&Tensor::zeros([1, 64, 64])).unwrap();
        assert_eq!(logits.data(), &[0.0; 5]);
        net.fc2.bias = Tensor::new([5], vec![0.5, -1.0, 0.0, 2.0, 1.0]).unwrap();
        let logits = net.forward(&Tensor::zeros([1, 64, 64])).unwrap();
        assert_eq!(logits.data(), net.fc2.bias.data());
    }

    #[test]
    fn predict_probabilities_sum_to_one() {
        let net = DeepQualityNet::<f32>::init(5, NetWidths::default()).unwrap();
        let score = net.predict(&patch(1)).unwrap();
        let s: f32 = score.probabilities.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(score.probabilities.iter().all(|&p| p >= 0.0));
        assert_eq!(score.predicted_grade, QualityGrade::argmax(&score.probabilities));
    }

    #[test]
    fn argmax_of_logits_picks_c4() {
        let logits = Tensor::<f64>::new([5], vec![1.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(PatchScore::from_logits(&logits).unwrap().predicted_grade.index(), 4);
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let net = DeepQualityNet::<f32>::init(1, NetWidths { conv: [2, 2, 2], hidden: 4 }).unwrap();
        let mut tape = GradientTape::new(&net);
        assert!(matches!(
            net.backward(&mut tape, &Tensor::zeros([5])),
            Err(Error::MissingCache(_))
        ));
        net.record(&patch(2), &mut tape).unwrap();
        net.backward(&mut tape, &Tensor::zeros([5])).unwrap();
        assert!(!tape.has_cache());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = DeepQualityNet::<f32>::init(8, NetWidths::default()).unwrap();
        let p = patch(3);
        assert_eq!(net.forward(&p).unwrap(), net.forward(&p).unwrap());
    }

    #[test]
    fn batched_gradients_match_per_sample_tape() {
        let widths = NetWidths { conv: [3, 4, 5], hidden: 6 };
        let mut net = DeepQualityNet::<f64>::init(17, widths).unwrap();
        for b in net.params_mut().into_iter().skip(1).step_by(2) {
            b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * (i as f64).sin());
        }
        let patches: Vec<Tensor<f64>> = (0..3).map(|s| patch(10 + s).cast()).collect();
        let labels = [0usize, 3, 4];

        let mut tape = GradientTape::new(&net);
        let mut tape_losses = Vec::new();
        for (p, &l) in patches.iter().zip(&labels) {
            let logits = net.record(p, &mut tape).unwrap();
            let (loss, d) = softmax_cross_entropy(&logits, l).unwrap();
            tape_losses.push(loss);
            net.backward(&mut tape, &d).unwrap();
        }

        let mut grads = net.zeros_like();
        let refs: Vec<&Tensor<f64>> = patches.iter().collect();
        let out = net.accumulate_batch(&refs, &labels, &mut grads).unwrap();
        for ((loss, _), expected) in out.iter().zip(&tape_losses) {
            assert!((loss - expected).abs() < 1e-12);
        }
        for (name, (a, b)) in PARAM_NAMES.iter().zip(grads.params().iter().zip(tape.grads.params())) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{name}: {x} vs {y}");
            }
        }
    }
}
