//! Forward and backward passes for every layer kind used by the encoders and
//! inverse networks: 2D convolution, 2D transposed convolution, max pooling,
//! ReLU, instance normalization, and nearest-neighbor upsampling.
//!
//! All passes are pure functions. Convolutions parallelize over output rows;
//! each output element is accumulated in a fixed sequential order, so results
//! do not depend on the thread count.

use crate::error::{Error, Result};
use crate::parallel::*;
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Variance stabilizer inside the instance-norm square root.
pub const INSTANCE_NORM_EPSILON: f64 = 1e-5;

/// Geometry of a convolution: square `filter`, shared by the transposed form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub filter: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// 3x3 filter, stride 1, padding 1: the shape every stacked network here uses.
    pub fn standard(in_channels: usize, out_channels: usize) -> Self {
        Self {
            filter: 3,
            stride: 1,
            padding: 1,
            in_channels,
            out_channels,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.filter == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::InvalidLayer {
                reason: format!(
                    "filter, stride and channel counts must be at least 1 (got {self:?})"
                ),
            });
        }
        Ok(())
    }

    /// Spatial output extent of the forward convolution for one axis.
    pub fn conv_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if self.filter > padded {
            return Err(Error::FilterTooLarge {
                filter: self.filter,
                padded_h: padded,
                padded_w: padded,
            });
        }
        Ok((padded - self.filter) / self.stride + 1)
    }

    /// Spatial output extent of the transposed convolution for one axis.
    pub fn transposed_extent(&self, input: usize) -> Result<usize> {
        let full = (input - 1) * self.stride + self.filter;
        if full <= 2 * self.padding {
            return Err(Error::InvalidLayer {
                reason: format!("transposed output extent would be empty for {self:?}"),
            });
        }
        Ok(full - 2 * self.padding)
    }
}

/// Parameters of a convolutional layer. Weights are laid out
/// `filter x filter x in_channels x out_channels`; bias is `out_channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(spec: &ConvSpec) -> Self {
        Self {
            weights: Tensor::zeros(&[spec.filter, spec.filter, spec.in_channels, spec.out_channels])
                .expect("valid spec"),
            bias: Tensor::zeros(&[spec.out_channels]).expect("valid spec"),
        }
    }

    /// Fan-in-scaled uniform init (`+-sqrt(6 / (f*f*in))`), zero bias.
    pub fn init_uniform(spec: &ConvSpec, rng: &mut SeededRng) -> Self {
        let fan_in = (spec.filter * spec.filter * spec.in_channels) as f64;
        let limit = T::from_f64((6.0 / fan_in).sqrt());
        Self {
            weights: Tensor::random_uniform(
                &[spec.filter, spec.filter, spec.in_channels, spec.out_channels],
                -limit,
                limit,
                rng,
            )
            .expect("valid spec"),
            bias: Tensor::zeros(&[spec.out_channels]).expect("valid spec"),
        }
    }

    fn validate(&self, spec: &ConvSpec) -> Result<()> {
        let expected = [spec.filter, spec.filter, spec.in_channels, spec.out_channels];
        if self.weights.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                got: self.weights.shape().to_vec(),
            });
        }
        if self.bias.shape() != [spec.out_channels] {
            return Err(Error::ShapeMismatch {
                expected: vec![spec.out_channels],
                got: self.bias.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Gradients produced by a backward pass. `grad_weights`/`grad_bias` are
/// present only for layers that own parameters.
#[derive(Clone, Debug)]
pub struct LayerGrad<T: Scalar> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Option<Tensor<T>>,
    pub grad_bias: Option<Tensor<T>>,
}

impl<T: Scalar> LayerGrad<T> {
    fn input_only(grad_input: Tensor<T>) -> Self {
        Self {
            grad_input,
            grad_weights: None,
            grad_bias: None,
        }
    }
}

/// Layer kind plus its geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    TransposedConv(ConvSpec),
    MaxPool { factor: usize },
    ReLU,
    InstanceNorm,
    NnUpsample { factor: usize },
}

/// A layer instance: spec plus parameters where the kind has any.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Scalar> {
    pub spec: LayerSpec,
    pub params: Option<LayerParams<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn conv(spec: ConvSpec, params: LayerParams<T>) -> Self {
        Self {
            spec: LayerSpec::Conv(spec),
            params: Some(params),
        }
    }

    pub fn transposed_conv(spec: ConvSpec, params: LayerParams<T>) -> Self {
        Self {
            spec: LayerSpec::TransposedConv(spec),
            params: Some(params),
        }
    }

    pub fn max_pool(factor: usize) -> Self {
        Self {
            spec: LayerSpec::MaxPool { factor },
            params: None,
        }
    }

    pub fn relu() -> Self {
        Self {
            spec: LayerSpec::ReLU,
            params: None,
        }
    }

    pub fn instance_norm() -> Self {
        Self {
            spec: LayerSpec::InstanceNorm,
            params: None,
        }
    }

    pub fn nn_upsample(factor: usize) -> Self {
        Self {
            spec: LayerSpec::NnUpsample { factor },
            params: None,
        }
    }

    fn params(&self) -> Result<&LayerParams<T>> {
        self.params.as_ref().ok_or_else(|| Error::InvalidLayer {
            reason: "convolutional layer is missing parameters".into(),
        })
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.spec {
            LayerSpec::Conv(spec) => conv2d_forward(input, spec, self.params()?),
            LayerSpec::TransposedConv(spec) => {
                transposed_conv2d_forward(input, spec, self.params()?)
            }
            LayerSpec::MaxPool { factor } => maxpool_forward(input, *factor),
            LayerSpec::ReLU => Ok(relu_forward(input)),
            LayerSpec::InstanceNorm => instance_norm_forward(input),
            LayerSpec::NnUpsample { factor } => nn_upsample_forward(input, *factor),
        }
    }

    /// Backward pass given the same `input` the forward saw.
    pub fn backward(&self, input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<LayerGrad<T>> {
        match &self.spec {
            LayerSpec::Conv(spec) => conv2d_backward(input, spec, self.params()?, grad_output),
            LayerSpec::TransposedConv(spec) => {
                transposed_conv2d_backward(input, spec, self.params()?, grad_output)
            }
            LayerSpec::MaxPool { factor } => {
                Ok(LayerGrad::input_only(maxpool_backward(input, *factor, grad_output)?))
            }
            LayerSpec::ReLU => Ok(LayerGrad::input_only(relu_backward(input, grad_output)?)),
            LayerSpec::InstanceNorm => {
                Ok(LayerGrad::input_only(instance_norm_backward(input, grad_output)?))
            }
            LayerSpec::NnUpsample { factor } => Ok(LayerGrad::input_only(nn_upsample_backward(
                *factor,
                grad_output,
            )?)),
        }
    }
}

fn expect_rank3<T: Scalar>(input: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0, 0],
            got: input.shape().to_vec(),
        });
    }
    Ok(input.dims3())
}

/// 2D convolution with zero padding.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    params.validate(spec)?;
    let (h, w, d) = expect_rank3(input)?;
    if d != spec.in_channels {
        return Err(Error::ChannelMismatch {
            input: d,
            expected: spec.in_channels,
        });
    }
    let out_h = spec.conv_extent(h)?;
    let out_w = spec.conv_extent(w)?;
    let (f, s, p, ic, oc) = (
        spec.filter,
        spec.stride,
        spec.padding,
        spec.in_channels,
        spec.out_channels,
    );

    let x = input.data();
    let wt = params.weights.data();
    let bias = params.bias.data();
    let mut out = vec![T::zero(); out_h * out_w * oc];

    out.par_chunks_mut(out_w * oc)
        .enumerate()
        .for_each(|(i, row)| {
            for j in 0..out_w {
                let acc = &mut row[j * oc..(j + 1) * oc];
                acc.copy_from_slice(bias);
                for di in 0..f {
                    let ii = (i * s + di).wrapping_sub(p);
                    if ii >= h {
                        continue;
                    }
                    for dj in 0..f {
                        let jj = (j * s + dj).wrapping_sub(p);
                        if jj >= w {
                            continue;
                        }
                        let x_base = (ii * w + jj) * d;
                        let w_base = ((di * f + dj) * ic) * oc;
                        for c in 0..ic {
                            let xv = x[x_base + c];
                            let wrow = &wt[w_base + c * oc..w_base + (c + 1) * oc];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a = *a + xv * wv;
                            }
                        }
                    }
                }
            }
        });

    Tensor::from_vec(&[out_h, out_w, oc], out)
}

/// Gradients of `sum(grad_output . conv2d_forward(input))` with respect to
/// input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
    grad_output: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    spec.validate()?;
    params.validate(spec)?;
    let (h, w, d) = expect_rank3(input)?;
    if d != spec.in_channels {
        return Err(Error::ChannelMismatch {
            input: d,
            expected: spec.in_channels,
        });
    }
    let out_h = spec.conv_extent(h)?;
    let out_w = spec.conv_extent(w)?;
    let expected = [out_h, out_w, spec.out_channels];
    if grad_output.shape() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            got: grad_output.shape().to_vec(),
        });
    }
    let (f, s, p, ic, oc) = (
        spec.filter,
        spec.stride,
        spec.padding,
        spec.in_channels,
        spec.out_channels,
    );
    let x = input.data();
    let wt = params.weights.data();
    let go = grad_output.data();

    // bias: per-channel sum of grad_output
    let mut grad_bias = vec![T::zero(); oc];
    for cell in go.chunks_exact(oc) {
        for (b, &g) in grad_bias.iter_mut().zip(cell) {
            *b = *b + g;
        }
    }

    // weights: each (di, dj) slab is an independent accumulation
    let mut grad_weights = vec![T::zero(); f * f * ic * oc];
    grad_weights
        .par_chunks_mut(ic * oc)
        .enumerate()
        .for_each(|(tap, slab)| {
            let (di, dj) = (tap / f, tap % f);
            for i in 0..out_h {
                let ii = (i * s + di).wrapping_sub(p);
                if ii >= h {
                    continue;
                }
                for j in 0..out_w {
                    let jj = (j * s + dj).wrapping_sub(p);
                    if jj >= w {
                        continue;
                    }
                    let x_base = (ii * w + jj) * d;
                    let g_base = (i * out_w + j) * oc;
                    for c in 0..ic {
                        let xv = x[x_base + c];
                        let dst = &mut slab[c * oc..(c + 1) * oc];
                        let grow = &go[g_base..g_base + oc];
                        for (dw, &g) in dst.iter_mut().zip(grow) {
                            *dw = *dw + xv * g;
                        }
                    }
                }
            }
        });

    // input: gather form, parallel over input rows
    let mut grad_input = vec![T::zero(); h * w * d];
    grad_input
        .par_chunks_mut(w * d)
        .enumerate()
        .for_each(|(ii, row)| {
            for di in 0..f {
                // solve ii = i*s + di - p for the output row i
                let num_i = ii + p;
                if num_i < di {
                    continue;
                }
                let rem = num_i - di;
                if rem % s != 0 {
                    continue;
                }
                let i = rem / s;
                if i >= out_h {
                    continue;
                }
                for jj in 0..w {
                    for dj in 0..f {
                        let num_j = jj + p;
                        if num_j < dj {
                            continue;
                        }
                        let rem_j = num_j - dj;
                        if rem_j % s != 0 {
                            continue;
                        }
                        let j = rem_j / s;
                        if j >= out_w {
                            continue;
                        }
                        let g_base = (i * out_w + j) * oc;
                        let w_base = ((di * f + dj) * ic) * oc;
                        for c in 0..ic {
                            let wrow = &wt[w_base + c * oc..w_base + (c + 1) * oc];
                            let grow = &go[g_base..g_base + oc];
                            let mut acc = T::zero();
                            for (&wv, &g) in wrow.iter().zip(grow) {
                                acc = acc + wv * g;
                            }
                            row[jj * d + c] = row[jj * d + c] + acc;
                        }
                    }
                }
            }
        });

    Ok(LayerGrad {
        grad_input: Tensor::from_vec(&[h, w, d], grad_input)?,
        grad_weights: Some(Tensor::from_vec(&[f, f, ic, oc], grad_weights)?),
        grad_bias: Some(Tensor::from_vec(&[oc], grad_bias)?),
    })
}

/// 2D transposed convolution: the adjoint of [`conv2d_forward`] with the same
/// spec. Input carries `out_channels` channels and the result carries
/// `in_channels`. The bias in `params` belongs to the forward convolution and
/// is not applied here, so `<conv(x), y> == <x, transposed_conv(y)>` holds.
pub fn transposed_conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    params.validate(spec)?;
    let (h_in, w_in, d_in) = expect_rank3(input)?;
    if d_in != spec.out_channels {
        return Err(Error::ChannelMismatch {
            input: d_in,
            expected: spec.out_channels,
        });
    }
    let out_h = spec.transposed_extent(h_in)?;
    let out_w = spec.transposed_extent(w_in)?;
    let (f, s, p, ic, oc) = (
        spec.filter,
        spec.stride,
        spec.padding,
        spec.in_channels,
        spec.out_channels,
    );
    let y = input.data();
    let wt = params.weights.data();
    let mut out = vec![T::zero(); out_h * out_w * ic];

    out.par_chunks_mut(out_w * ic)
        .enumerate()
        .for_each(|(ii, row)| {
            for di in 0..f {
                let num_i = ii + p;
                if num_i < di {
                    continue;
                }
                let rem = num_i - di;
                if rem % s != 0 {
                    continue;
                }
                let i = rem / s;
                if i >= h_in {
                    continue;
                }
                for jj in 0..out_w {
                    for dj in 0..f {
                        let num_j = jj + p;
                        if num_j < dj {
                            continue;
                        }
                        let rem_j = num_j - dj;
                        if rem_j % s != 0 {
                            continue;
                        }
                        let j = rem_j / s;
                        if j >= w_in {
                            continue;
                        }
                        let y_base = (i * w_in + j) * oc;
                        let w_base = ((di * f + dj) * ic) * oc;
                        for c in 0..ic {
                            let wrow = &wt[w_base + c * oc..w_base + (c + 1) * oc];
                            let yrow = &y[y_base..y_base + oc];
                            let mut acc = T::zero();
                            for (&wv, &yv) in wrow.iter().zip(yrow) {
                                acc = acc + wv * yv;
                            }
                            row[jj * ic + c] = row[jj * ic + c] + acc;
                        }
                    }
                }
            }
        });

    Tensor::from_vec(&[out_h, out_w, ic], out)
}

/// Gradients of `sum(grad_output . transposed_conv2d_forward(input))`.
/// The input gradient is the plain convolution of `grad_output` (adjoint of
/// the adjoint); the bias gradient is zero because the transposed pass never
/// applies it.
pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
    grad_output: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    spec.validate()?;
    params.validate(spec)?;
    let (h_in, w_in, d_in) = expect_rank3(input)?;
    if d_in != spec.out_channels {
        return Err(Error::ChannelMismatch {
            input: d_in,
            expected: spec.out_channels,
        });
    }
    let out_h = spec.transposed_extent(h_in)?;
    let out_w = spec.transposed_extent(w_in)?;
    let expected = [out_h, out_w, spec.in_channels];
    if grad_output.shape() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            got: grad_output.shape().to_vec(),
        });
    }

    let zero_bias = LayerParams {
        weights: params.weights.clone(),
        bias: Tensor::zeros(&[spec.out_channels])?,
    };
    let grad_input = conv2d_forward(grad_output, spec, &zero_bias)?;

    let (f, s, p, ic, oc) = (
        spec.filter,
        spec.stride,
        spec.padding,
        spec.in_channels,
        spec.out_channels,
    );
    let y = input.data();
    let go = grad_output.data();
    let mut grad_weights = vec![T::zero(); f * f * ic * oc];
    grad_weights
        .par_chunks_mut(ic * oc)
        .enumerate()
        .for_each(|(tap, slab)| {
            let (di, dj) = (tap / f, tap % f);
            for i in 0..h_in {
                let ii = (i * s + di).wrapping_sub(p);
                if ii >= out_h {
                    continue;
                }
                for j in 0..w_in {
                    let jj = (j * s + dj).wrapping_sub(p);
                    if jj >= out_w {
                        continue;
                    }
                    let g_base = (ii * out_w + jj) * ic;
                    let y_base = (i * w_in + j) * oc;
                    for c in 0..ic {
                        let g = go[g_base + c];
                        let dst = &mut slab[c * oc..(c + 1) * oc];
                        let yrow = &y[y_base..y_base + oc];
                        for (dw, &yv) in dst.iter_mut().zip(yrow) {
                            *dw = *dw + g * yv;
                        }
                    }
                }
            }
        });

    Ok(LayerGrad {
        grad_input,
        grad_weights: Some(Tensor::from_vec(&[f, f, ic, oc], grad_weights)?),
        grad_bias: Some(Tensor::zeros(&[oc])?),
    })
}

/// Max pooling with a square window of `factor` and equal stride. Odd
/// trailing rows/columns are truncated.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w, d) = expect_rank3(input)?;
    if factor < 2 {
        return Err(Error::InvalidLayer {
            reason: format!("pooling factor must be at least 2, got {factor}"),
        });
    }
    let out_h = h / factor;
    let out_w = w / factor;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InputTooSmall {
            h,
            w,
            min: factor,
        });
    }
    let mut out = vec![T::zero(); out_h * out_w * d];
    for i in 0..out_h {
        for j in 0..out_w {
            for c in 0..d {
                let mut best = input.at3(i * factor, j * factor, c);
                for di in 0..factor {
                    for dj in 0..factor {
                        let v = input.at3(i * factor + di, j * factor + dj, c);
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(i * out_w + j) * d + c] = best;
            }
        }
    }
    Tensor::from_vec(&[out_h, out_w, d], out)
}

/// Routes each output gradient to the window's argmax; ties go to the first
/// element in scan order. Truncated rows/columns receive zero gradient.
pub fn maxpool_backward<T: Scalar>(
    input: &Tensor<T>,
    factor: usize,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, d) = expect_rank3(input)?;
    let pooled = [h / factor, w / factor, d];
    if grad_output.shape() != pooled {
        return Err(Error::ShapeMismatch {
            expected: pooled.to_vec(),
            got: grad_output.shape().to_vec(),
        });
    }
    let (out_h, out_w) = (pooled[0], pooled[1]);
    let mut grad = vec![T::zero(); h * w * d];
    for i in 0..out_h {
        for j in 0..out_w {
            for c in 0..d {
                let mut best = input.at3(i * factor, j * factor, c);
                let mut best_at = (i * factor, j * factor);
                for di in 0..factor {
                    for dj in 0..factor {
                        let v = input.at3(i * factor + di, j * factor + dj, c);
                        if v > best {
                            best = v;
                            best_at = (i * factor + di, j * factor + dj);
                        }
                    }
                }
                let g = grad_output.at3(i, j, c);
                grad[(best_at.0 * w + best_at.1) * d + c] =
                    grad[(best_at.0 * w + best_at.1) * d + c] + g;
            }
        }
    }
    Tensor::from_vec(&[h, w, d], grad)
}

/// `max(x, 0)` elementwise.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the input was strictly positive; the subgradient at
/// exactly 0 is taken as 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_output, |x, g| if x > T::zero() { g } else { T::zero() })
}

/// Standardizes each channel independently to zero mean and unit variance
/// over the spatial extent (population variance, epsilon-stabilized).
pub fn instance_norm_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, d) = expect_rank3(input)?;
    let n = h * w;
    if n < 2 {
        return Err(Error::DegenerateChannel { cells: n });
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    let eps = T::from_f64(INSTANCE_NORM_EPSILON);
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for c in 0..d {
        let mut mean = T::zero();
        for cell in 0..n {
            mean = mean + x[cell * d + c];
        }
        mean = mean * inv_n;
        let mut var = T::zero();
        for cell in 0..n {
            let dv = x[cell * d + c] - mean;
            var = var + dv * dv;
        }
        var = var * inv_n;
        let inv_std = T::one() / (var + eps).sqrt();
        for cell in 0..n {
            out[cell * d + c] = (x[cell * d + c] - mean) * inv_std;
        }
    }
    Tensor::from_vec(&[h, w, d], out)
}

/// Backward of [`instance_norm_forward`]:
/// `dx = (g - mean(g) - y * mean(g * y)) / sqrt(var + eps)` per channel.
pub fn instance_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, d) = expect_rank3(input)?;
    if grad_output.shape() != input.shape() {
        return Err(Error::ShapeMismatch {
            expected: input.shape().to_vec(),
            got: grad_output.shape().to_vec(),
        });
    }
    let n = h * w;
    if n < 2 {
        return Err(Error::DegenerateChannel { cells: n });
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    let eps = T::from_f64(INSTANCE_NORM_EPSILON);
    let x = input.data();
    let g = grad_output.data();
    let mut grad = vec![T::zero(); x.len()];
    for c in 0..d {
        let mut mean = T::zero();
        for cell in 0..n {
            mean = mean + x[cell * d + c];
        }
        mean = mean * inv_n;
        let mut var = T::zero();
        for cell in 0..n {
            let dv = x[cell * d + c] - mean;
            var = var + dv * dv;
        }
        var = var * inv_n;
        let inv_std = T::one() / (var + eps).sqrt();

        let mut g_mean = T::zero();
        let mut gy_mean = T::zero();
        for cell in 0..n {
            let y = (x[cell * d + c] - mean) * inv_std;
            g_mean = g_mean + g[cell * d + c];
            gy_mean = gy_mean + g[cell * d + c] * y;
        }
        g_mean = g_mean * inv_n;
        gy_mean = gy_mean * inv_n;
        for cell in 0..n {
            let y = (x[cell * d + c] - mean) * inv_std;
            grad[cell * d + c] = (g[cell * d + c] - g_mean - y * gy_mean) * inv_std;
        }
    }
    Tensor::from_vec(&[h, w, d], grad)
}

/// Nearest-neighbor upsampling: each cell becomes a `factor x factor` block.
pub fn nn_upsample_forward<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w, d) = expect_rank3(input)?;
    if factor == 0 {
        return Err(Error::InvalidLayer {
            reason: "upsample factor must be at least 1".into(),
        });
    }
    let (out_h, out_w) = (h * factor, w * factor);
    let mut out = vec![T::zero(); out_h * out_w * d];
    for i in 0..out_h {
        let si = i / factor;
        for j in 0..out_w {
            let sj = j / factor;
            let src = (si * w + sj) * d;
            let dst = (i * out_w + j) * d;
            out[dst..dst + d].copy_from_slice(&input.data()[src..src + d]);
        }
    }
    Tensor::from_vec(&[out_h, out_w, d], out)
}

/// Adjoint of replication: sums gradients over each `factor x factor` block.
pub fn nn_upsample_backward<T: Scalar>(
    factor: usize,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (gh, gw, d) = expect_rank3(grad_output)?;
    if factor == 0 || gh % factor != 0 || gw % factor != 0 {
        return Err(Error::InvalidLayer {
            reason: format!("gradient extent {gh}x{gw} is not a multiple of factor {factor}"),
        });
    }
    let (h, w) = (gh / factor, gw / factor);
    let mut grad = vec![T::zero(); h * w * d];
    for i in 0..gh {
        let si = i / factor;
        for j in 0..gw {
            let sj = j / factor;
            let src = (i * gw + j) * d;
            let dst = (si * w + sj) * d;
            for c in 0..d {
                grad[dst + c] = grad[dst + c] + grad_output.data()[src + c];
            }
        }
    }
    Tensor::from_vec(&[h, w, d], grad)
}
