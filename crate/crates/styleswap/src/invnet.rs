//! Inverse networks: decoders trained to map activations back to images by
//! minimizing activation-space reconstruction error plus a TV prior, with
//! style-swapped activations mixed into the training batches so the decoder
//! also handles activations outside the encoder's range.
//!
//! Once trained, `feedforward_stylize` replaces the optimization loop with a
//! single forward pass: encode, swap, invert.

use std::path::PathBuf;

use crate::encoder::{encode, EncoderSpec};
use crate::error::{Error, Result};
use crate::nn::{ConvSpec, Layer, LayerGrad, LayerParams, LayerSpec};
use crate::optim::{tv_grad, tv_loss, Adam};
use crate::parallel::*;
use crate::rng::SeededRng;
use crate::swap::{style_swap, SwapConfig};
use crate::tensor::{Scalar, Tensor};

/// A decoder paired with the encoder whose activations it inverts.
#[derive(Clone, Debug)]
pub struct InverseNetSpec<T: Scalar> {
    name: String,
    encoder_name: String,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> InverseNetSpec<T> {
    pub fn new(
        name: impl Into<String>,
        encoder_name: impl Into<String>,
        layers: Vec<Layer<T>>,
    ) -> Self {
        Self {
            name: name.into(),
            encoder_name: encoder_name.into(),
            layers,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Product of the upsampling factors; spatial extents grow by this much.
    pub fn upsample_factor(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l.spec {
                LayerSpec::NnUpsample { factor } => factor,
                _ => 1,
            })
            .product()
    }

    /// Channel count this net accepts.
    pub fn input_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match &l.spec {
                LayerSpec::Conv(spec) => Some(spec.in_channels),
                _ => None,
            })
            .unwrap_or(3)
    }

    fn check_pairing(&self, enc: &EncoderSpec<T>) -> Result<()> {
        if self.encoder_name != enc.name() {
            return Err(Error::PairingMismatch {
                net: self.name.clone(),
                expected: self.encoder_name.clone(),
                got: enc.name().to_string(),
            });
        }
        Ok(())
    }
}

fn conv_in_relu<T: Scalar>(ic: usize, oc: usize, rng: &mut SeededRng) -> Vec<Layer<T>> {
    let spec = ConvSpec::standard(ic, oc);
    vec![
        Layer::conv(spec, LayerParams::init_uniform(&spec, rng)),
        Layer::instance_norm(),
        Layer::relu(),
    ]
}

/// The decoder for the truncated VGG-19 encoder: conv-instancenorm-relu
/// blocks interleaved with two nearest-neighbor upsamples, ending in a bare
/// conv to 3 channels (linear output, clamped only at image write-out).
pub fn build_vgg_inverse<T: Scalar>(encoder_name: &str, seed: u64) -> InverseNetSpec<T> {
    let base = SeededRng::new(seed);
    let mut layers = Vec::new();
    let mut stream = 101u64;
    let mut rng = |layers: &mut Vec<Layer<T>>, ic, oc| {
        let mut r = base.stream(stream);
        stream += 1;
        layers.extend(conv_in_relu(ic, oc, &mut r));
    };
    rng(&mut layers, 256, 128);
    layers.push(Layer::nn_upsample(2));
    rng(&mut layers, 128, 128);
    rng(&mut layers, 128, 64);
    layers.push(Layer::nn_upsample(2));
    rng(&mut layers, 64, 64);
    let last = ConvSpec::standard(64, 3);
    let mut r = base.stream(stream);
    layers.push(Layer::conv(last, LayerParams::init_uniform(&last, &mut r)));
    InverseNetSpec::new(format!("vgg19t-inverse-s{seed}"), encoder_name, layers)
}

/// Builds a decoder whose upsampling mirrors the encoder's pooling stages.
/// The 256-channel quarter-resolution pairing gets the reference decoder;
/// anything else gets conv-instancenorm-relu blocks around one upsample per
/// pooling stage, ending in a bare conv to RGB.
pub fn build_matching_inverse<T: Scalar>(enc: &EncoderSpec<T>, seed: u64) -> InverseNetSpec<T> {
    let ch = enc.output_channels();
    let pools: Vec<usize> = enc
        .layers()
        .iter()
        .filter_map(|l| match l.spec {
            LayerSpec::MaxPool { factor } => Some(factor),
            _ => None,
        })
        .collect();
    if ch == 256 && pools == [2, 2] {
        return build_vgg_inverse(enc.name(), seed);
    }
    let base = SeededRng::new(seed);
    let mut stream = 301u64;
    let mut next = |layers: &mut Vec<Layer<T>>, ic: usize, oc: usize| {
        let mut r = base.stream(stream);
        stream += 1;
        layers.extend(conv_in_relu(ic, oc, &mut r));
    };
    let mut layers = Vec::new();
    next(&mut layers, ch, ch);
    for &factor in pools.iter().rev() {
        layers.push(Layer::nn_upsample(factor));
        next(&mut layers, ch, ch);
    }
    let last = ConvSpec::standard(ch, 3);
    let mut r = base.stream(stream);
    layers.push(Layer::conv(last, LayerParams::init_uniform(&last, &mut r)));
    InverseNetSpec::new(
        format!("{}-inverse-s{seed}", enc.name()),
        enc.name(),
        layers,
    )
}

/// Desk-scale decoder paired with the tiny encoder: one conv-in-relu block,
/// an upsample, another block, and a bare conv to RGB.
pub fn build_tiny_inverse<T: Scalar>(
    channels: usize,
    encoder_name: &str,
    seed: u64,
) -> InverseNetSpec<T> {
    let base = SeededRng::new(seed);
    let mut layers = Vec::new();
    let mut r1 = base.stream(201);
    layers.extend(conv_in_relu(channels, channels, &mut r1));
    layers.push(Layer::nn_upsample(2));
    let mut r2 = base.stream(202);
    layers.extend(conv_in_relu(channels, channels, &mut r2));
    let last = ConvSpec::standard(channels, 3);
    let mut r3 = base.stream(203);
    layers.push(Layer::conv(last, LayerParams::init_uniform(&last, &mut r3)));
    InverseNetSpec::new(format!("tiny{channels}-inverse-s{seed}"), encoder_name, layers)
}

/// Runs the decoder on activations of any spatial extent.
pub fn invert<T: Scalar>(activations: &Tensor<T>, net: &InverseNetSpec<T>) -> Result<Tensor<T>> {
    let d = activations.dims3().2;
    if d != net.input_channels() {
        return Err(Error::ChannelMismatch {
            input: d,
            expected: net.input_channels(),
        });
    }
    let mut current = activations.clone();
    for layer in &net.layers {
        current = layer.forward(&current)?;
    }
    Ok(current)
}

fn invert_with_trace<T: Scalar>(
    activations: &Tensor<T>,
    net: &InverseNetSpec<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let d = activations.dims3().2;
    if d != net.input_channels() {
        return Err(Error::ChannelMismatch {
            input: d,
            expected: net.input_channels(),
        });
    }
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut current = activations.clone();
    for layer in &net.layers {
        let next = layer.forward(&current)?;
        inputs.push(current);
        current = next;
    }
    Ok((current, inputs))
}

/// Per-layer parameter gradients, aligned with the net's layer list.
pub type ParamGrads<T> = Vec<Option<LayerParams<T>>>;

fn zero_grads<T: Scalar>(net: &InverseNetSpec<T>) -> ParamGrads<T> {
    net.layers
        .iter()
        .map(|l| {
            l.params.as_ref().map(|p| LayerParams {
                weights: Tensor::zeros(p.weights.shape()).expect("param shape"),
                bias: Tensor::zeros(p.bias.shape()).expect("param shape"),
            })
        })
        .collect()
}

fn accumulate_grads<T: Scalar>(
    total: &mut ParamGrads<T>,
    sample: &ParamGrads<T>,
    scale: T,
) -> Result<()> {
    for (dst, src) in total.iter_mut().zip(sample) {
        if let (Some(d), Some(s)) = (dst.as_mut(), src.as_ref()) {
            d.weights.add_scaled_assign(scale, &s.weights)?;
            d.bias.add_scaled_assign(scale, &s.bias)?;
        }
    }
    Ok(())
}

/// Loss terms of the inversion objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionLoss {
    /// `mean_i [ ||enc(f(H_i)) - H_i||_F^2 + tv_weight * tv(f(H_i)) ]`
    pub total: f64,
    pub activation_term: f64,
    pub tv_term: f64,
}

fn sample_loss_and_grads<T: Scalar>(
    h: &Tensor<T>,
    net: &InverseNetSpec<T>,
    enc: &EncoderSpec<T>,
    tv_weight: f64,
) -> Result<(f64, f64, ParamGrads<T>)> {
    let (image, net_inputs) = invert_with_trace(h, net)?;
    let (acts, enc_trace) = encode(&image, enc)?;
    if acts.shape() != h.shape() {
        return Err(Error::ShapeMismatch {
            expected: h.shape().to_vec(),
            got: acts.shape().to_vec(),
        });
    }
    let residual = acts.sub(h)?;
    let act_term = residual.frobenius_norm_sq().as_f64();
    let tv_term = tv_loss(&image).as_f64();

    // d(loss)/d(image), with the encoder frozen
    let mut grad_image =
        crate::encoder::encode_backward(&enc_trace, enc, &residual.scale(T::from_f64(2.0)))?;
    if tv_weight != 0.0 {
        grad_image.add_scaled_assign(T::from_f64(tv_weight), &tv_grad(&image))?;
    }

    // backprop through the decoder collecting parameter gradients
    let mut grads: ParamGrads<T> = vec![None; net.layers.len()];
    let mut grad = grad_image;
    for (idx, (layer, input)) in net.layers.iter().zip(&net_inputs).enumerate().rev() {
        let LayerGrad {
            grad_input,
            grad_weights,
            grad_bias,
        } = layer.backward(input, &grad)?;
        if let (Some(w), Some(b)) = (grad_weights, grad_bias) {
            grads[idx] = Some(LayerParams { weights: w, bias: b });
        }
        grad = grad_input;
    }
    Ok((act_term, tv_term, grads))
}

/// The training objective over a batch of target activations, with gradients
/// for the decoder parameters only (the encoder stays frozen).
pub fn inversion_loss<T: Scalar>(
    batch: &[Tensor<T>],
    net: &InverseNetSpec<T>,
    enc: &EncoderSpec<T>,
    tv_weight: f64,
) -> Result<(InversionLoss, ParamGrads<T>)> {
    net.check_pairing(enc)?;
    if batch.is_empty() {
        return Err(Error::PoolExhausted {
            available: 0,
            needed: 1,
        });
    }
    let per_sample: Vec<Result<(f64, f64, ParamGrads<T>)>> = batch
        .par_iter()
        .map(|h| sample_loss_and_grads(h, net, enc, tv_weight))
        .collect();

    let n = batch.len() as f64;
    let inv_n = T::from_f64(1.0 / n);
    let mut total_grads = zero_grads(net);
    let mut act_sum = 0.0;
    let mut tv_sum = 0.0;
    // fixed fold order over samples keeps the reduction deterministic
    for result in per_sample {
        let (act, tv, grads) = result?;
        act_sum += act;
        tv_sum += tv;
        accumulate_grads(&mut total_grads, &grads, inv_n)?;
    }
    let loss = InversionLoss {
        total: (act_sum + tv_weight * tv_sum) / n,
        activation_term: act_sum / n,
        tv_term: tv_sum / n,
    };
    Ok((loss, total_grads))
}

/// Loss only, skipping the backward pass (used for validation).
pub fn inversion_loss_value<T: Scalar>(
    batch: &[Tensor<T>],
    net: &InverseNetSpec<T>,
    enc: &EncoderSpec<T>,
    tv_weight: f64,
) -> Result<InversionLoss> {
    net.check_pairing(enc)?;
    if batch.is_empty() {
        return Err(Error::PoolExhausted {
            available: 0,
            needed: 1,
        });
    }
    let parts: Vec<Result<(f64, f64)>> = batch
        .par_iter()
        .map(|h| {
            let image = invert(h, net)?;
            let (acts, _) = encode(&image, enc)?;
            let residual = acts.sub(h)?;
            Ok((
                residual.frobenius_norm_sq().as_f64(),
                tv_loss(&image).as_f64(),
            ))
        })
        .collect();
    let n = batch.len() as f64;
    let mut act_sum = 0.0;
    let mut tv_sum = 0.0;
    for p in parts {
        let (a, t) = p?;
        act_sum += a;
        tv_sum += t;
    }
    Ok(InversionLoss {
        total: (act_sum + tv_weight * tv_sum) / n,
        activation_term: act_sum / n,
        tv_term: tv_sum / n,
    })
}

/// Builds one training batch from already-selected images: the encoded
/// naturals, the encoded paintings, then the first `n_swapped`
/// natural-painting pairs style-swapped (pairs in row-major order).
pub fn build_batch<T: Scalar>(
    naturals: &[&Tensor<T>],
    paintings: &[&Tensor<T>],
    enc: &EncoderSpec<T>,
    swap_cfg: &SwapConfig,
    n_swapped: usize,
) -> Result<Vec<Tensor<T>>> {
    if n_swapped > naturals.len() * paintings.len() {
        return Err(Error::InvalidConfig {
            reason: format!(
                "{} swapped samples requested but only {} pairs exist",
                n_swapped,
                naturals.len() * paintings.len()
            ),
        });
    }
    let mut batch = Vec::with_capacity(naturals.len() + paintings.len() + n_swapped);
    let mut nat_acts = Vec::with_capacity(naturals.len());
    for img in naturals {
        let (acts, _) = encode(img, enc)?;
        nat_acts.push(acts);
    }
    let mut paint_acts = Vec::with_capacity(paintings.len());
    for img in paintings {
        let (acts, _) = encode(img, enc)?;
        paint_acts.push(acts);
    }
    let mut swapped = Vec::with_capacity(n_swapped);
    'outer: for c in &nat_acts {
        for s in &paint_acts {
            if swapped.len() == n_swapped {
                break 'outer;
            }
            swapped.push(style_swap(c, s, swap_cfg)?);
        }
    }
    batch.extend(nat_acts);
    batch.extend(paint_acts);
    batch.extend(swapped);
    Ok(batch)
}

/// Samples images from both pools with the given generator and builds the
/// batch: `n_natural` + `n_painting` real activations plus `n_swapped`
/// style-swapped augmentations.
#[allow(clippy::too_many_arguments)]
pub fn make_minibatch<T: Scalar>(
    natural_pool: &[Tensor<T>],
    painting_pool: &[Tensor<T>],
    enc: &EncoderSpec<T>,
    swap_cfg: &SwapConfig,
    rng: &mut SeededRng,
    n_natural: usize,
    n_painting: usize,
    n_swapped: usize,
) -> Result<Vec<Tensor<T>>> {
    for (pool, needed) in [(natural_pool, n_natural), (painting_pool, n_painting)] {
        if pool.len() < needed {
            return Err(Error::PoolExhausted {
                available: pool.len(),
                needed,
            });
        }
    }
    let pick = |pool: &[Tensor<T>], n: usize, rng: &mut SeededRng| -> Vec<usize> {
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        rng.shuffle(&mut indices);
        indices.truncate(n);
        indices
    };
    let nat_idx = pick(natural_pool, n_natural, rng);
    let paint_idx = pick(painting_pool, n_painting, rng);
    let naturals: Vec<&Tensor<T>> = nat_idx.iter().map(|&i| &natural_pool[i]).collect();
    let paintings: Vec<&Tensor<T>> = paint_idx.iter().map(|&i| &painting_pool[i]).collect();
    build_batch(&naturals, &paintings, enc, swap_cfg, n_swapped)
}

/// Training hyperparameters and schedule.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub tv_weight: f64,
    pub learning_rate: f64,
    pub n_natural: usize,
    pub n_painting: usize,
    /// Style-swapped augmentations per batch (0 trains the ablation net).
    pub n_swapped: usize,
    pub epochs: usize,
    pub swap_config: SwapConfig,
    pub seed: u64,
    /// Final checkpoint path; intermediate checkpoints derive from it.
    pub checkpoint: Option<PathBuf>,
    /// Save an intermediate checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
    /// Images held out from the end of each pool for validation.
    pub val_natural: usize,
    pub val_painting: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tv_weight: 1e-6,
            learning_rate: 1e-3,
            n_natural: 2,
            n_painting: 2,
            n_swapped: 4,
            epochs: 2,
            swap_config: SwapConfig::default(),
            seed: 0,
            checkpoint: None,
            checkpoint_every: 0,
            val_natural: 0,
            val_painting: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
}

/// Validation losses on held-out real and style-swapped activations,
/// reported separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValLog {
    pub step: usize,
    pub real_loss: f64,
    pub swapped_loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub validations: Vec<ValLog>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Trains the decoder on the two image pools. The encoder is frozen; batches
/// follow the configured composition; validation (when held-out counts are
/// nonzero) runs at the end of every epoch on real and style-swapped
/// activations separately. A non-finite loss aborts with the last saved
/// checkpoint named in the error.
pub fn train<T: Scalar>(
    natural_pool: &[Tensor<T>],
    painting_pool: &[Tensor<T>],
    enc: &EncoderSpec<T>,
    mut net: InverseNetSpec<T>,
    cfg: &TrainConfig,
) -> Result<(InverseNetSpec<T>, TrainReport)> {
    net.check_pairing(enc)?;
    if cfg.n_swapped > cfg.n_natural * cfg.n_painting {
        return Err(Error::InvalidConfig {
            reason: "n_swapped exceeds the number of natural-painting pairs".into(),
        });
    }
    let nat_train_len = natural_pool.len().saturating_sub(cfg.val_natural);
    let paint_train_len = painting_pool.len().saturating_sub(cfg.val_painting);
    if nat_train_len < cfg.n_natural || paint_train_len < cfg.n_painting {
        return Err(Error::PoolExhausted {
            available: nat_train_len.min(paint_train_len),
            needed: cfg.n_natural.max(cfg.n_painting),
        });
    }
    let (nat_train, nat_val) = natural_pool.split_at(nat_train_len);
    let (paint_train, paint_val) = painting_pool.split_at(paint_train_len);

    // pre-encode validation activations once; swapped validation pairs are
    // all natural x painting combinations of the held-out images
    let mut val_real: Vec<Tensor<T>> = Vec::new();
    let mut val_swapped: Vec<Tensor<T>> = Vec::new();
    for img in nat_val.iter().chain(paint_val) {
        val_real.push(encode(img, enc)?.0);
    }
    for nat in nat_val {
        let (nat_acts, _) = encode(nat, enc)?;
        for paint in paint_val {
            let (paint_acts, _) = encode(paint, enc)?;
            val_swapped.push(style_swap(&nat_acts, &paint_acts, &cfg.swap_config)?);
        }
    }

    let mut optimizers: Vec<Option<(Adam<T>, Adam<T>)>> = net
        .layers
        .iter()
        .map(|l| {
            l.params.as_ref().map(|p| {
                (
                    Adam::new(cfg.learning_rate, p.weights.len()),
                    Adam::new(cfg.learning_rate, p.bias.len()),
                )
            })
        })
        .collect();

    let steps_per_epoch = (nat_train_len / cfg.n_natural).min(paint_train_len / cfg.n_painting);
    let mut rng = SeededRng::new(cfg.seed).stream(7);
    let mut report = TrainReport::default();
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        let mut nat_order: Vec<usize> = (0..nat_train_len).collect();
        let mut paint_order: Vec<usize> = (0..paint_train_len).collect();
        rng.shuffle(&mut nat_order);
        rng.shuffle(&mut paint_order);

        for s in 0..steps_per_epoch {
            let naturals: Vec<&Tensor<T>> = nat_order
                [s * cfg.n_natural..(s + 1) * cfg.n_natural]
                .iter()
                .map(|&i| &nat_train[i])
                .collect();
            let paintings: Vec<&Tensor<T>> = paint_order
                [s * cfg.n_painting..(s + 1) * cfg.n_painting]
                .iter()
                .map(|&i| &paint_train[i])
                .collect();
            let batch = build_batch(&naturals, &paintings, enc, &cfg.swap_config, cfg.n_swapped)?;
            let (loss, grads) = inversion_loss(&batch, &net, enc, cfg.tv_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainDiverged {
                    step,
                    last_checkpoint: report.checkpoints.last().cloned(),
                });
            }
            report.steps.push(StepLog {
                step,
                loss: loss.total,
            });

            for (layer, (opt, grad)) in net
                .layers
                .iter_mut()
                .zip(optimizers.iter_mut().zip(&grads))
            {
                if let (Some(p), Some((opt_w, opt_b)), Some(g)) =
                    (layer.params.as_mut(), opt.as_mut(), grad.as_ref())
                {
                    opt_w.step(p.weights.data_mut(), g.weights.data());
                    opt_b.step(p.bias.data_mut(), g.bias.data());
                }
            }
            step += 1;

            if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
                if let Some(path) = &cfg.checkpoint {
                    let stem = path.with_extension("");
                    let interim = PathBuf::from(format!("{}-step{step}.sswp", stem.display()));
                    crate::io::save_inverse_net(&interim, &net)?;
                    report.checkpoints.push(interim);
                }
            }
        }

        if !val_real.is_empty() || !val_swapped.is_empty() {
            let real_loss = if val_real.is_empty() {
                f64::NAN
            } else {
                inversion_loss_value(&val_real, &net, enc, cfg.tv_weight)?.total
            };
            let swapped_loss = if val_swapped.is_empty() {
                f64::NAN
            } else {
                inversion_loss_value(&val_swapped, &net, enc, cfg.tv_weight)?.total
            };
            report.validations.push(ValLog {
                step,
                real_loss,
                swapped_loss,
            });
        }
    }

    if let Some(path) = &cfg.checkpoint {
        crate::io::save_inverse_net(path, &net)?;
        report.checkpoints.push(path.clone());
    }
    Ok((net, report))
}

/// One-pass stylization: encode both images, style swap, and invert through
/// the paired decoder. No optimization loop.
pub fn feedforward_stylize<T: Scalar>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    enc: &EncoderSpec<T>,
    net: &InverseNetSpec<T>,
    swap_cfg: &SwapConfig,
) -> Result<Tensor<T>> {
    net.check_pairing(enc)?;
    let (content_acts, _) = encode(content, enc)?;
    let (style_acts, _) = encode(style, enc)?;
    let target = style_swap(&content_acts, &style_acts, swap_cfg)?;
    invert(&target, net)
}

/// Writes per-step training losses and the per-epoch validation series.
pub fn write_train_csv(path: &std::path::Path, report: &TrainReport) -> Result<()> {
    let mut val_at: std::collections::BTreeMap<usize, &ValLog> = Default::default();
    for v in &report.validations {
        val_at.insert(v.step, v);
    }
    let rows: Vec<Vec<String>> = report
        .steps
        .iter()
        .map(|s| {
            let (real, swapped) = match val_at.get(&(s.step + 1)) {
                Some(v) => (v.real_loss.to_string(), v.swapped_loss.to_string()),
                None => (String::new(), String::new()),
            };
            vec![s.step.to_string(), s.loss.to_string(), real, swapped]
        })
        .collect();
    crate::io::write_csv(path, &["step", "train_loss", "val_real", "val_swapped"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_identity, build_tiny};

    fn random_images(n: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor<f32>> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|_| Tensor::random_uniform(&[h, w, 3], 0.0, 1.0, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn tiny_pairing_shapes() {
        let enc = build_tiny::<f32>(8, 0);
        let net = build_tiny_inverse::<f32>(8, enc.name(), 0);
        assert_eq!(net.upsample_factor(), 2);
        assert_eq!(net.input_channels(), 8);
        let acts = Tensor::<f32>::ones(&[16, 16, 8]).unwrap();
        let img = invert(&acts, &net).unwrap();
        assert_eq!(img.shape(), &[32, 32, 3]);
    }

    #[test]
    fn vgg_inverse_structure() {
        let net = build_vgg_inverse::<f32>("vgg19t-s0", 0);
        let convs: Vec<(usize, usize)> = net
            .layers()
            .iter()
            .filter_map(|l| match &l.spec {
                LayerSpec::Conv(s) => Some((s.in_channels, s.out_channels)),
                _ => None,
            })
            .collect();
        assert_eq!(
            convs,
            vec![(256, 128), (128, 128), (128, 64), (64, 64), (64, 3)]
        );
        let ups = net
            .layers()
            .iter()
            .filter(|l| matches!(l.spec, LayerSpec::NnUpsample { .. }))
            .count();
        assert_eq!(ups, 2);
        assert_eq!(net.upsample_factor(), 4);
        // instance norm follows every conv except the last
        let ins = net
            .layers()
            .iter()
            .filter(|l| matches!(l.spec, LayerSpec::InstanceNorm))
            .count();
        assert_eq!(ins, 4);
    }

    #[test]
    fn invert_is_deterministic_and_fully_convolutional() {
        let net = build_tiny_inverse::<f32>(4, "tiny4-s0", 1);
        let mut rng = SeededRng::new(50);
        for (h, w) in [(8, 8), (5, 9), (16, 4)] {
            let acts = Tensor::<f32>::random_uniform(&[h, w, 4], -1.0, 1.0, &mut rng).unwrap();
            let a = invert(&acts, &net).unwrap();
            let b = invert(&acts, &net).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.shape(), &[h * 2, w * 2, 3]);
        }
    }

    #[test]
    fn identity_fixed_point_has_zero_loss() {
        // identity encoder + an identity 1x1 conv decoder: f(H) = H exactly
        let enc = build_identity::<f64>();
        let spec = ConvSpec {
            filter: 1,
            stride: 1,
            padding: 0,
            in_channels: 3,
            out_channels: 3,
        };
        let mut weights = vec![0.0f64; 9];
        for c in 0..3 {
            weights[c * 3 + c] = 1.0;
        }
        let params = LayerParams {
            weights: Tensor::from_vec(&[1, 1, 3, 3], weights).unwrap(),
            bias: Tensor::zeros(&[3]).unwrap(),
        };
        let net = InverseNetSpec::new("id-inverse", "identity", vec![Layer::conv(spec, params)]);
        let mut rng = SeededRng::new(51);
        let batch: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::random_uniform(&[6, 6, 3], 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let (loss, _) = inversion_loss(&batch, &net, &enc, 0.0).unwrap();
        assert_eq!(loss.total, 0.0);
    }

    #[test]
    fn inversion_loss_is_non_negative_and_decomposes() {
        let enc = build_tiny::<f32>(4, 7);
        let net = build_tiny_inverse::<f32>(4, enc.name(), 7);
        let mut rng = SeededRng::new(52);
        let batch: Vec<Tensor<f32>> = (0..4)
            .map(|_| Tensor::random_uniform(&[8, 8, 4], 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let tv_weight = 1e-4;
        let (loss, _) = inversion_loss(&batch, &net, &enc, tv_weight).unwrap();
        assert!(loss.total >= 0.0);
        let recomposed = loss.activation_term + tv_weight * loss.tv_term;
        assert!((loss.total - recomposed).abs() < 1e-9 * loss.total.max(1.0));
    }

    #[test]
    fn inversion_loss_matches_independent_composition() {
        let enc = build_tiny::<f32>(4, 8);
        let net = build_tiny_inverse::<f32>(4, enc.name(), 8);
        let mut rng = SeededRng::new(53);
        let batch: Vec<Tensor<f32>> = (0..3)
            .map(|_| Tensor::random_uniform(&[6, 6, 4], 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let tv_weight = 1e-6;
        let (loss, _) = inversion_loss(&batch, &net, &enc, tv_weight).unwrap();

        let mut act = 0.0f64;
        let mut tv = 0.0f64;
        for h in &batch {
            let img = invert(h, &net).unwrap();
            let (acts, _) = encode(&img, &enc).unwrap();
            act += acts.sub(h).unwrap().frobenius_norm_sq() as f64;
            tv += tv_loss(&img) as f64;
        }
        let n = batch.len() as f64;
        let independent = act / n + tv_weight * (tv / n);
        assert!((loss.total - independent).abs() <= 1e-6 * independent.max(1.0));
    }

    #[test]
    fn pairing_mismatch_rejected() {
        let enc = build_tiny::<f32>(4, 0);
        let net = build_tiny_inverse::<f32>(4, "some-other-encoder", 0);
        let batch = vec![Tensor::<f32>::ones(&[6, 6, 4]).unwrap()];
        assert!(matches!(
            inversion_loss(&batch, &net, &enc, 0.0),
            Err(Error::PairingMismatch { .. })
        ));
    }

    #[test]
    fn minibatch_composition() {
        let enc = build_tiny::<f32>(4, 3);
        let naturals = random_images(6, 8, 8, 60);
        let paintings = random_images(6, 8, 8, 61);
        let cfg = SwapConfig::default();
        let mut rng = SeededRng::new(62);
        let batch =
            make_minibatch(&naturals, &paintings, &enc, &cfg, &mut rng, 2, 2, 4).unwrap();
        assert_eq!(batch.len(), 8);
        for acts in &batch {
            assert_eq!(acts.shape(), &[4, 4, 4]);
        }

        // same seed, same batch
        let mut rng2 = SeededRng::new(62);
        let batch2 =
            make_minibatch(&naturals, &paintings, &enc, &cfg, &mut rng2, 2, 2, 4).unwrap();
        assert_eq!(batch, batch2);

        // ablation batch has no swapped samples
        let mut rng3 = SeededRng::new(62);
        let plain = make_minibatch(&naturals, &paintings, &enc, &cfg, &mut rng3, 2, 2, 0).unwrap();
        assert_eq!(plain.len(), 4);
    }

    #[test]
    fn empty_pool_is_rejected() {
        let enc = build_tiny::<f32>(4, 3);
        let paintings = random_images(4, 8, 8, 63);
        let mut rng = SeededRng::new(64);
        assert!(matches!(
            make_minibatch::<f32>(&[], &paintings, &enc, &SwapConfig::default(), &mut rng, 2, 2, 4),
            Err(Error::PoolExhausted { .. })
        ));
    }

    #[test]
    fn training_descends_and_freezes_encoder() {
        let enc = build_tiny::<f32>(4, 5);
        let enc_before = enc.clone();
        let net = build_tiny_inverse::<f32>(4, enc.name(), 5);
        let naturals = random_images(12, 8, 8, 70);
        let paintings = random_images(12, 8, 8, 71);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, report) = train(&naturals, &paintings, &enc, net, &cfg).unwrap();
        assert!(!report.steps.is_empty());
        assert!(report.final_loss().unwrap() < report.initial_loss().unwrap());
        for (a, b) in enc.layers().iter().zip(enc_before.layers()) {
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_validation_loss() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("net.sswp");
        let enc = build_tiny::<f32>(4, 6);
        let net = build_tiny_inverse::<f32>(4, enc.name(), 6);
        let naturals = random_images(10, 8, 8, 72);
        let paintings = random_images(10, 8, 8, 73);
        let cfg = TrainConfig {
            epochs: 1,
            seed: 4,
            checkpoint: Some(ckpt.clone()),
            val_natural: 2,
            val_painting: 2,
            ..TrainConfig::default()
        };
        let (trained, report) = train(&naturals, &paintings, &enc, net, &cfg).unwrap();
        let loaded = crate::io::load_inverse_net::<f32>(&ckpt).unwrap();
        assert_eq!(loaded.encoder_name(), enc.name());

        let mut rng = SeededRng::new(74);
        let val: Vec<Tensor<f32>> = (0..4)
            .map(|_| Tensor::random_uniform(&[6, 6, 4], 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let a = inversion_loss_value(&val, &trained, &enc, 1e-6).unwrap();
        let b = inversion_loss_value(&val, &loaded, &enc, 1e-6).unwrap();
        assert_eq!(a.total, b.total);
        assert!(!report.validations.is_empty());
    }

    #[test]
    fn feedforward_equals_composition() {
        let enc = build_tiny::<f32>(4, 9);
        let net = build_tiny_inverse::<f32>(4, enc.name(), 9);
        let mut rng = SeededRng::new(80);
        let content = Tensor::<f32>::random_uniform(&[12, 12, 3], 0.0, 1.0, &mut rng).unwrap();
        let style = Tensor::<f32>::random_uniform(&[12, 12, 3], 0.0, 1.0, &mut rng).unwrap();
        let cfg = SwapConfig::default();
        let ff = feedforward_stylize(&content, &style, &enc, &net, &cfg).unwrap();

        let (c_acts, _) = encode(&content, &enc).unwrap();
        let (s_acts, _) = encode(&style, &enc).unwrap();
        let target = style_swap(&c_acts, &s_acts, &cfg).unwrap();
        let composed = invert(&target, &net).unwrap();
        assert_eq!(ff, composed);

        let again = feedforward_stylize(&content, &style, &enc, &net, &cfg).unwrap();
        assert_eq!(ff, again);
    }
}
