//! Forward and backward kernels for the layer set of the detector.
//!
//! Convolutions are lowered to GEMM through an explicit im2col buffer. The
//! buffer is returned from the forward pass so the backward pass can reuse it
//! for the weight gradient.

use super::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Output length `ceil(n / stride)`; zero padding split evenly, extra on the far side.
    Same,
    /// No padding; output length `floor((n - k) / stride) + 1`.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn square(kernel: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            out_channels,
            stride,
            padding: Padding::Same,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(TensorError::invalid("conv2d", "stride and kernel dims must be >= 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::invalid("conv2d", "channel counts must be >= 1"));
        }
        Ok(())
    }

    /// Output `(height, width)` for an input of the given spatial size.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (oh, _) = window_geometry("conv2d", "height", h, self.kernel_h, self.stride, self.padding)?;
        let (ow, _) = window_geometry("conv2d", "width", w, self.kernel_w, self.stride, self.padding)?;
        Ok((oh, ow))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize, padding: Padding) -> Self {
        PoolSpec { window, stride, padding }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(TensorError::invalid("maxpool", "window and stride must be >= 1"));
        }
        let (oh, _) = window_geometry("maxpool", "height", h, self.window, self.stride, self.padding)?;
        let (ow, _) = window_geometry("maxpool", "width", w, self.window, self.stride, self.padding)?;
        Ok((oh, ow))
    }
}

/// Output length and leading pad for one spatial axis.
fn window_geometry(
    op: &'static str,
    axis: &'static str,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(len);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if len < kernel {
                return Err(TensorError::shape(op, axis, kernel, len));
            }
            Ok(((len - kernel) / stride + 1, 0))
        }
    }
}

fn hwc(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(TensorError::shape(op, "rank", 3, t.rank())),
    }
}

struct ConvGeometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn conv_geometry<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>, spec: &ConvSpec) -> Result<ConvGeometry> {
    spec.validate()?;
    let (h, w, c) = hwc("conv2d", input)?;
    if c != spec.in_channels {
        return Err(TensorError::shape("conv2d", "input channels", spec.in_channels, c));
    }
    let wd = spec.weight_dims();
    if weights.rank() != 4 {
        return Err(TensorError::shape("conv2d", "weight rank", 4, weights.rank()));
    }
    const AXES: [&str; 4] = ["kernel height", "kernel width", "kernel in_channels", "kernel out_channels"];
    for (i, axis) in AXES.iter().enumerate() {
        if weights.dims()[i] != wd[i] {
            return Err(TensorError::shape("conv2d", axis, wd[i], weights.dims()[i]));
        }
    }
    if bias.dims() != [spec.out_channels] {
        return Err(TensorError::shape("conv2d", "bias length", spec.out_channels, bias.len()));
    }
    let (out_h, pad_top) = window_geometry("conv2d", "height", h, spec.kernel_h, spec.stride, spec.padding)?;
    let (out_w, pad_left) = window_geometry("conv2d", "width", w, spec.kernel_w, spec.stride, spec.padding)?;
    Ok(ConvGeometry {
        in_h: h,
        in_w: w,
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry, spec: &ConvSpec) -> Vec<T> {
    let c = spec.in_channels;
    let row_len = spec.kernel_h * spec.kernel_w * c;
    let mut cols = vec![T::zero(); g.out_h * g.out_w * row_len];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * row_len..][..row_len];
            for ky in 0..spec.kernel_h {
                let iy = (oy * spec.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..spec.kernel_w {
                    let ix = (ox * spec.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.in_w + ix as usize) * c;
                    let dst = (ky * spec.kernel_w + kx) * c;
                    row[dst..dst + c].copy_from_slice(&input[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, spec: &ConvSpec) -> Vec<T> {
    let c = spec.in_channels;
    let row_len = spec.kernel_h * spec.kernel_w * c;
    let mut out = vec![T::zero(); g.in_h * g.in_w * c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * row_len..][..row_len];
            for ky in 0..spec.kernel_h {
                let iy = (oy * spec.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..spec.kernel_w {
                    let ix = (ox * spec.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.in_w + ix as usize) * c;
                    let src = (ky * spec.kernel_w + kx) * c;
                    out[dst..dst + c].iter_mut().zip(&row[src..src + c]).for_each(|(o, &v)| *o += v);
                }
            }
        }
    }
    out
}

/// im2col buffer kept from a convolution forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
}

/// 2-D convolution over an `[H, W, C_in]` feature map.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    conv2d_forward_cached(input, weights, bias, spec).map(|(out, _)| out)
}

pub fn conv2d_forward_cached<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let g = conv_geometry(input, weights, bias, spec)?;
    let cols = im2col(input.data(), &g, spec);
    let p = g.out_h * g.out_w;
    let k = spec.kernel_h * spec.kernel_w * spec.in_channels;
    let n = spec.out_channels;
    let mut out = Vec::with_capacity(p * n);
    for _ in 0..p {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        p,
        k,
        n,
        T::one(),
        (&cols, k as isize, 1),
        (weights.data(), n as isize, 1),
        T::one(),
        (&mut out, n as isize, 1),
    );
    let out = Tensor::new(vec![g.out_h, g.out_w, n], out)?;
    Ok((out, ConvCache { cols }))
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a convolution given the upstream gradient of its output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    cache: &ConvCache<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weights, bias, spec)?;
    grad_out.expect_dims("conv2d_backward", &[g.out_h, g.out_w, spec.out_channels])?;
    let p = g.out_h * g.out_w;
    let k = spec.kernel_h * spec.kernel_w * spec.in_channels;
    let n = spec.out_channels;

    // dW[k, n] = cols^T[k, p] * dY[p, n]
    let mut dw = vec![T::zero(); k * n];
    T::gemm(
        k,
        p,
        n,
        T::one(),
        (&cache.cols, 1, k as isize),
        (grad_out.data(), n as isize, 1),
        T::zero(),
        (&mut dw, n as isize, 1),
    );
    let mut db = vec![T::zero(); n];
    for row in grad_out.data().chunks_exact(n) {
        db.iter_mut().zip(row).for_each(|(b, &v)| *b += v);
    }

    let input_grad = if want_input {
        // dCols[p, k] = dY[p, n] * W^T[n, k]
        let mut dcols = vec![T::zero(); p * k];
        T::gemm(
            p,
            n,
            k,
            T::one(),
            (grad_out.data(), n as isize, 1),
            (weights.data(), 1, n as isize),
            T::zero(),
            (&mut dcols, k as isize, 1),
        );
        Some(Tensor::new(input.dims().to_vec(), col2im(&dcols, &g, spec))?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::new(weights.dims().to_vec(), dw)?,
        bias: Tensor::new(vec![n], db)?,
    })
}

/// Max pooling over an `[H, W, C]` map. Returns the pooled map and, for every
/// output element, the flat input index that produced it.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let (h, w, c) = hwc("maxpool", input)?;
    if spec.window == 0 || spec.stride == 0 {
        return Err(TensorError::invalid("maxpool", "window and stride must be >= 1"));
    }
    let (oh, pt) = window_geometry("maxpool", "height", h, spec.window, spec.stride, spec.padding)?;
    let (ow, pl) = window_geometry("maxpool", "width", w, spec.window, spec.stride, spec.padding)?;
    let data = input.data();
    let mut out = vec![T::neg_infinity(); oh * ow * c];
    let mut argmax = vec![usize::MAX; oh * ow * c];
    for oy in 0..oh {
        let y0 = (oy * spec.stride) as isize - pt as isize;
        for ox in 0..ow {
            let x0 = (ox * spec.stride) as isize - pl as isize;
            let obase = (oy * ow + ox) * c;
            for dy in 0..spec.window as isize {
                let iy = y0 + dy;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for dx in 0..spec.window as isize {
                    let ix = x0 + dx;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * w + ix as usize) * c;
                    for ch in 0..c {
                        let v = data[ibase + ch];
                        if argmax[obase + ch] == usize::MAX || v > out[obase + ch] {
                            out[obase + ch] = v;
                            argmax[obase + ch] = ibase + ch;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, argmax))
}

/// Routes each output gradient to the input cell recorded in `argmax`.
pub fn maxpool_backward<T: Scalar>(input_dims: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(TensorError::shape(
            "maxpool_backward",
            "gradient length",
            argmax.len(),
            grad_out.len(),
        ));
    }
    let mut grad = Tensor::zeros(input_dims.to_vec());
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}

/// `(batch, n_in)` of a dense input: rank 1 is a single row.
fn dense_rows(op: &'static str, input: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match *input.dims() {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        _ => Err(TensorError::shape(op, "rank", 2, input.rank())),
    }
}

fn dense_dims<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, n) = dense_rows("dense", input)?;
    let (wn, m) = match *weights.dims() {
        [wn, m] => (wn, m),
        _ => return Err(TensorError::shape("dense", "weight rank", 2, weights.rank())),
    };
    if wn != n {
        return Err(TensorError::shape("dense", "input length", wn, n));
    }
    if bias.dims() != [m] {
        return Err(TensorError::shape("dense", "bias length", m, bias.len()));
    }
    Ok((b, n, m))
}

/// Fully-connected layer: `input · weights + bias` for `[N]` or `[B, N]` inputs.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, n, m) = dense_dims(input, weights, bias)?;
    let mut out = Vec::with_capacity(b * m);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        b,
        n,
        m,
        T::one(),
        (input.data(), n as isize, 1),
        (weights.data(), m as isize, 1),
        T::one(),
        (&mut out, m as isize, 1),
    );
    let dims = if input.rank() == 1 { vec![m] } else { vec![b, m] };
    Tensor::new(dims, out)
}

pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<DenseGrads<T>> {
    let (b, n, m) = dense_dims(input, weights, bias)?;
    if grad_out.len() != b * m {
        return Err(TensorError::shape("dense_backward", "gradient length", b * m, grad_out.len()));
    }
    let mut dw = vec![T::zero(); n * m];
    T::gemm(
        n,
        b,
        m,
        T::one(),
        (input.data(), 1, n as isize),
        (grad_out.data(), m as isize, 1),
        T::zero(),
        (&mut dw, m as isize, 1),
    );
    let mut db = vec![T::zero(); m];
    for row in grad_out.data().chunks_exact(m) {
        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
    }
    let input_grad = if want_input {
        let mut dx = vec![T::zero(); b * n];
        T::gemm(
            b,
            m,
            n,
            T::one(),
            (grad_out.data(), m as isize, 1),
            (weights.data(), 1, m as isize),
            T::zero(),
            (&mut dx, n as isize, 1),
        );
        Some(Tensor::new(input.dims().to_vec(), dx)?)
    } else {
        None
    };
    Ok(DenseGrads {
        input: input_grad,
        weights: Tensor::new(vec![n, m], dw)?,
        bias: Tensor::new(vec![m], db)?,
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}

/// Softmax along the last axis, with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if !logits.all_finite() {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let n = *logits.dims().last().expect("tensor rank >= 1");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[true_class]` for a single distribution.
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, true_class: usize) -> Result<T> {
    if true_class >= probs.len() {
        return Err(TensorError::Index {
            op: "cross_entropy_loss",
            index: true_class,
            len: probs.len(),
        });
    }
    let p = probs.data()[true_class].max(T::from_f64(PROB_FLOOR));
    Ok(-p.ln())
}

/// Unnormalized sum of squared differences.
pub fn l2_loss<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if predicted.len() != target.len() {
        return Err(TensorError::shape("l2_loss", "length", predicted.len(), target.len()));
    }
    Ok(predicted.data().iter().zip(target.data()).map(|(&p, &t)| (p - t) * (p - t)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(dims.to_vec(), |i| ((i * 7919) % 101) as f64 * scale - 0.5)
    }

    // Direct 7-loop convolution, used as the reference for the GEMM path.
    fn naive_conv(input: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
        let (h, wd, c) = (input.dims()[0], input.dims()[1], input.dims()[2]);
        let (oh, ow) = spec.output_hw(h, wd).unwrap();
        let (_, pt) = window_geometry("t", "h", h, spec.kernel_h, spec.stride, spec.padding).unwrap();
        let (_, pl) = window_geometry("t", "w", wd, spec.kernel_w, spec.stride, spec.padding).unwrap();
        let mut out = Tensor::zeros(vec![oh, ow, spec.out_channels]);
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..spec.out_channels {
                    let mut acc = b.data()[co];
                    for ky in 0..spec.kernel_h {
                        for kx in 0..spec.kernel_w {
                            let iy = (oy * spec.stride + ky) as isize - pt as isize;
                            let ix = (ox * spec.stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..c {
                                acc += input.at(&[iy as usize, ix as usize, ci]) * w.at(&[ky, kx, ci, co]);
                            }
                        }
                    }
                    out.set(&[oy, ox, co], acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        for (padding, stride) in [(Padding::Same, 1), (Padding::Same, 3), (Padding::Valid, 2)] {
            let spec = ConvSpec {
                kernel_h: 3,
                kernel_w: 4,
                in_channels: 2,
                out_channels: 3,
                stride,
                padding,
            };
            let x = ramp(&[7, 9, 2], 0.01);
            let w = ramp(&[3, 4, 2, 3], 0.02);
            let b = Tensor::from_vec(vec![0.1, -0.2, 0.3]);
            let fast = conv2d_forward(&x, &w, &b, &spec).unwrap();
            let slow = naive_conv(&x, &w, &b, &spec);
            assert_eq!(fast.dims(), slow.dims());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 1, 1], vec![0.37]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(vec![0.0]);
        let y = conv2d_forward(&x, &w, &b, &ConvSpec::square(1, 1, 1, 1)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_shape_errors_name_axis() {
        let spec = ConvSpec::square(3, 4, 8, 1);
        let x = Tensor::<f64>::zeros(vec![5, 5, 3]);
        let w = Tensor::zeros(vec![3, 3, 4, 8]);
        let b = Tensor::zeros(vec![8]);
        match conv2d_forward(&x, &w, &b, &spec) {
            Err(TensorError::Shape {
                axis,
                expected: 4,
                found: 3,
                ..
            }) => assert_eq!(axis, "input channels"),
            other => panic!("unexpected {other:?}"),
        }
        let x = Tensor::<f64>::zeros(vec![5, 5, 4]);
        let w_bad = Tensor::zeros(vec![3, 2, 4, 8]);
        match conv2d_forward(&x, &w_bad, &b, &spec) {
            Err(TensorError::Shape { axis, .. }) => assert_eq!(axis, "kernel width"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_and_valid_output_lengths() {
        assert_eq!(window_geometry("t", "h", 224, 11, 4, Padding::Same).unwrap(), (56, 3));
        assert_eq!(window_geometry("t", "h", 56, 3, 2, Padding::Valid).unwrap(), (27, 0));
        assert_eq!(window_geometry("t", "h", 13, 3, 2, Padding::Valid).unwrap(), (6, 0));
        assert!(window_geometry("t", "h", 2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn maxpool_window_too_large() {
        let x = Tensor::<f64>::zeros(vec![2, 2, 1]);
        assert!(maxpool_forward(&x, &PoolSpec::new(3, 2, Padding::Valid)).is_err());
    }

    #[test]
    fn maxpool_constant_input() {
        let x = Tensor::<f64>::full(vec![7, 7, 2], 0.25);
        let (y, _) = maxpool_forward(&x, &PoolSpec::new(3, 2, Padding::Valid)).unwrap();
        assert_eq!(y.dims(), &[3, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn dense_zero_weights_gives_bias() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let w = Tensor::zeros(vec![3, 2]);
        let b = Tensor::from_vec(vec![0.5, -1.5]);
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[0.5, -1.5]);
        let bad = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(matches!(dense_forward(&bad, &w, &b), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn dense_batch_rows_match_single() {
        let w = ramp(&[4, 3], 0.03);
        let b = Tensor::from_vec(vec![0.1, 0.2, 0.3]);
        let xb = ramp(&[2, 4], 0.05);
        let yb = dense_forward(&xb, &w, &b).unwrap();
        for r in 0..2 {
            let x = Tensor::from_vec(xb.data()[r * 4..(r + 1) * 4].to_vec());
            let y = dense_forward(&x, &w, &b).unwrap();
            assert_eq!(&yb.data()[r * 3..(r + 1) * 3], y.data());
        }
    }

    #[test]
    fn relu_cases() {
        let t = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::from_vec(vec![-3.0, -0.1]);
        assert_eq!(relu(&neg).data(), &[0.0, 0.0]);
        let pos = Tensor::from_vec(vec![0.5, 4.0]);
        assert_eq!(relu(&pos).data(), pos.data());
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&Tensor::from_vec(vec![0.0f64, 0.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax(&Tensor::from_vec(vec![1000.0f64, 0.0])).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1] >= 0.0 && p.data()[1] < 1e-300);
        // exp(ln k) = k, so the oracle is k / 6
        let p = softmax(&Tensor::from_vec(vec![1f64.ln(), 2f64.ln(), 3f64.ln()])).unwrap();
        for (k, v) in p.data().iter().enumerate() {
            assert!((v - (k + 1) as f64 / 6.0).abs() < 1e-12);
        }
        assert!(softmax(&Tensor::from_vec(vec![f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let p = Tensor::from_vec(vec![0.0, 1.0]);
        assert_eq!(cross_entropy_loss(&p, 1).unwrap(), 0.0);
        let u = Tensor::from_vec(vec![0.5f64, 0.5]);
        assert!((cross_entropy_loss(&u, 0).unwrap() - 0.693_147_180_559_945_3).abs() < 1e-12);
        let q = Tensor::from_vec(vec![0.25, 0.75]);
        assert!((cross_entropy_loss(&q, 0).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&q, 2).is_err());
        // clamped, not infinite
        assert!((cross_entropy_loss(&p, 0).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn l2_cases() {
        let a = Tensor::from_vec(vec![0.0, 0.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_loss(&a, &b).unwrap(), 25.0);
        assert!(l2_loss(&a, &Tensor::from_vec(vec![1.0])).is_err());
        let x = ramp(&[17], 0.1);
        let y = ramp(&[17], 0.07);
        let mut oracle = 0.0;
        for i in 0..17 {
            let d = x.data()[i] - y.data()[i];
            oracle += d * d;
        }
        assert!((l2_loss(&x, &y).unwrap() - oracle).abs() < 1e-12);
    }
}
