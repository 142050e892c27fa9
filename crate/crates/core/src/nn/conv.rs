//! Stride-1 "same" convolution (cross-correlation, no kernel flip), lowered to
//! GEMM through an im2col buffer.

use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `[out_channels, in_channels, k, k]`
    pub kernels: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(kernels: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let layer = ConvLayer { kernels, bias };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        ConvLayer {
            kernels: Tensor::zeros([out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros([out_channels]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [o, _, kh, kw] = *self.kernels.shape() else {
            return Err(shape_err!(
                "conv kernels must be [out,in,k,k], got {:?}",
                self.kernels.shape()
            ));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err!("conv kernel must be square with odd size, got {kh}x{kw}"));
        }
        if self.bias.shape() != [o] {
            return Err(shape_err!(
                "conv bias must be [{o}], got {:?}",
                self.bias.shape()
            ));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let (c, h, w) = input.chw("conv2d")?;
        if c != self.in_channels() {
            return Err(shape_err!(
                "conv2d input has {c} channels but the layer expects {}",
                self.in_channels()
            ));
        }
        let k = self.kernel_size();
        if h < k || w < k {
            return Err(shape_err!("conv2d input {h}x{w} is smaller than the {k}x{k} kernel"));
        }
        Ok((c, h, w))
    }
}

/// Fills `cols` (`[c*k*k, h*w]`, row-major) with zero-padded input windows.
fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * k * k * hw);
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                // valid output x range where x + kx - pad lands inside [0, w)
                let x0 = pad.saturating_sub(kx);
                let x1 = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let line = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    line[..x0].fill(T::zero());
                    line[x0..x1].copy_from_slice(&src[x0 + kx - pad..x1 + kx - pad]);
                    line[x1..].fill(T::zero());
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto an image; the adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x0 = pad.saturating_sub(kx);
                let x1 = (w + pad).saturating_sub(kx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let line = &src[y * w..(y + 1) * w];
                    for (d, &s) in dst[x0 + kx - pad..x1 + kx - pad].iter_mut().zip(&line[x0..x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 cross-correlation plus bias: `[C,H,W] -> [outC,H,W]`.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let (c, h, w) = layer.check_input(input)?;
    let k = layer.kernel_size();
    let o = layer.out_channels();
    let hw = h * w;
    let ckk = c * k * k;
    let mut out = vec![T::zero(); o * hw];
    for (oc, chunk) in out.chunks_exact_mut(hw).enumerate() {
        chunk.fill(layer.bias.data()[oc]);
    }
    if k == 1 {
        T::gemm(o, c, hw, T::one(), layer.kernels.data(), c as isize, 1, input.data(), hw as isize, 1, T::one(), &mut out, hw as isize, 1);
    } else {
        let mut cols = vec![T::zero(); ckk * hw];
        im2col(input.data(), c, h, w, k, &mut cols);
        T::gemm(o, ckk, hw, T::one(), layer.kernels.data(), ckk as isize, 1, &cols, hw as isize, 1, T::one(), &mut out, hw as isize, 1);
    }
    Tensor::new([o, h, w], out)
}

/// Accumulates kernel and bias gradients into `grad_kernels` / `grad_bias`
/// and, when `want_input` is set, returns the gradient w.r.t. the input.
pub(crate) fn conv2d_backward_accumulate<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_kernels: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    let (c, h, w) = layer.check_input(input)?;
    let o = layer.out_channels();
    if grad_out.shape() != [o, h, w] {
        return Err(shape_err!(
            "conv2d grad_out {:?} does not match forward output [{o}, {h}, {w}]",
            grad_out.shape()
        ));
    }
    if grad_kernels.shape() != layer.kernels.shape() || grad_bias.shape() != layer.bias.shape() {
        return Err(shape_err!("conv2d gradient buffers do not match layer parameters"));
    }
    let k = layer.kernel_size();
    let hw = h * w;
    let ckk = c * k * k;
    let g = grad_out.data();

    for (oc, gb) in grad_bias.data_mut().iter_mut().enumerate() {
        *gb += g[oc * hw..(oc + 1) * hw].iter().copied().sum::<T>();
    }

    let mut cols = vec![T::zero(); ckk * hw];
    im2col(input.data(), c, h, w, k, &mut cols);
    // dK[o, ckk] += dY[o, hw] * cols^T[hw, ckk]
    T::gemm(o, hw, ckk, T::one(), g, hw as isize, 1, &cols, 1, hw as isize, T::one(), grad_kernels.data_mut(), ckk as isize, 1);

    if !want_input {
        return Ok(None);
    }
    // dcols[ckk, hw] = K^T[ckk, o] * dY[o, hw]
    T::gemm(ckk, o, hw, T::one(), layer.kernels.data(), 1, ckk as isize, g, hw as isize, 1, T::zero(), &mut cols, hw as isize, 1);
    let mut grad_in = vec![T::zero(); c * hw];
    col2im(&cols, c, h, w, k, &mut grad_in);
    Ok(Some(Tensor::new([c, h, w], grad_in)?))
}

/// Gradients of a scalar loss w.r.t. input, kernels and bias given `grad_out`.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<ConvGrads<T>> {
    let mut kernels = Tensor::zeros(layer.kernels.shape());
    let mut bias = Tensor::zeros(layer.bias.shape());
    let input_grad = conv2d_backward_accumulate(grad_out, input, layer, &mut kernels, &mut bias, true)?;
    Ok(ConvGrads {
        input: input_grad,
        kernels,
        bias,
    })
}
