//! Feature encoders: feedforward stacks mapping `[0,1]` RGB images into an
//! activation space, with reverse-mode gradients back to the image.
//!
//! Three builders are provided: the truncated VGG-19 stack (input through
//! relu3_1), a tiny desk-scale encoder for fast experiments and gradient
//! checks, and the identity encoder (activation space = RGB space).

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, Layer, LayerParams, LayerSpec};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Per-channel affine applied to RGB input before the first layer:
/// `x' = (x - mean) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preprocess {
    pub mean: [f32; 3],
    pub scale: [f32; 3],
}

impl Preprocess {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            scale: [1.0; 3],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean == [0.0; 3] && self.scale == [1.0; 3]
    }
}

/// An immutable encoder: ordered layers plus the input preprocessing
/// descriptor. Images are `[0,1]` RGB at this boundary.
#[derive(Clone, Debug)]
pub struct EncoderSpec<T: Scalar> {
    name: String,
    layers: Vec<Layer<T>>,
    preprocess: Preprocess,
}

impl<T: Scalar> EncoderSpec<T> {
    pub fn new(name: impl Into<String>, layers: Vec<Layer<T>>, preprocess: Preprocess) -> Self {
        Self {
            name: name.into(),
            layers,
            preprocess,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn preprocess(&self) -> &Preprocess {
        &self.preprocess
    }

    /// Product of the pooling factors; spatial extents shrink by this much.
    pub fn downsample_factor(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l.spec {
                LayerSpec::MaxPool { factor } => factor,
                _ => 1,
            })
            .product()
    }

    /// Channel count of the activation space.
    pub fn output_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match &l.spec {
                LayerSpec::Conv(spec) => Some(spec.out_channels),
                _ => None,
            })
            .unwrap_or(3)
    }

    fn apply_preprocess(&self, image: &Tensor<T>) -> Tensor<T> {
        if self.preprocess.is_identity() {
            return image.clone();
        }
        let mean: Vec<T> = self.preprocess.mean.iter().map(|&m| T::from_f64(m as f64)).collect();
        let scale: Vec<T> = self
            .preprocess
            .scale
            .iter()
            .map(|&s| T::from_f64(s as f64))
            .collect();
        let mut out = image.clone();
        for cell in out.data_mut().chunks_exact_mut(3) {
            for c in 0..3 {
                cell[c] = (cell[c] - mean[c]) * scale[c];
            }
        }
        out
    }
}

/// Per-layer inputs retained by [`encode`] so the backward pass can replay
/// the stack in reverse.
#[derive(Clone, Debug)]
pub struct ActivationTrace<T: Scalar> {
    encoder_name: String,
    /// Input to layer `i` (entry 0 is the preprocessed image).
    layer_inputs: Vec<Tensor<T>>,
    output_shape: Vec<usize>,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

/// Runs the encoder on an `h x w x 3` image in `[0,1]`, returning the
/// activations and the trace needed for [`encode_backward`].
pub fn encode<T: Scalar>(
    image: &Tensor<T>,
    spec: &EncoderSpec<T>,
) -> Result<(Tensor<T>, ActivationTrace<T>)> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0, 3],
            got: image.shape().to_vec(),
        });
    }
    let factor = spec.downsample_factor();
    if image.shape()[0] < factor || image.shape()[1] < factor {
        return Err(Error::InputTooSmall {
            h: image.shape()[0],
            w: image.shape()[1],
            min: factor,
        });
    }
    let mut layer_inputs = Vec::with_capacity(spec.layers.len());
    let mut current = spec.apply_preprocess(image);
    for layer in &spec.layers {
        let next = layer.forward(&current)?;
        layer_inputs.push(current);
        current = next;
    }
    let trace = ActivationTrace {
        encoder_name: spec.name.clone(),
        layer_inputs,
        output_shape: current.shape().to_vec(),
    };
    Ok((current, trace))
}

/// Gradient of `<grad_activations, encode(image)>` with respect to the raw
/// image, using the trace from the matching [`encode`] call.
pub fn encode_backward<T: Scalar>(
    trace: &ActivationTrace<T>,
    spec: &EncoderSpec<T>,
    grad_activations: &Tensor<T>,
) -> Result<Tensor<T>> {
    if trace.encoder_name != spec.name || trace.layer_inputs.len() != spec.layers.len() {
        return Err(Error::MismatchedTrace {
            expected: spec.name.clone(),
            got: trace.encoder_name.clone(),
        });
    }
    if grad_activations.shape() != trace.output_shape {
        return Err(Error::ShapeMismatch {
            expected: trace.output_shape.clone(),
            got: grad_activations.shape().to_vec(),
        });
    }
    let mut grad = grad_activations.clone();
    for (layer, input) in spec.layers.iter().zip(&trace.layer_inputs).rev() {
        grad = layer.backward(input, &grad)?.grad_input;
    }
    // chain through x' = (x - mean) * scale
    if !spec.preprocess.is_identity() {
        let scale: Vec<T> = spec
            .preprocess
            .scale
            .iter()
            .map(|&s| T::from_f64(s as f64))
            .collect();
        for cell in grad.data_mut().chunks_exact_mut(3) {
            for c in 0..3 {
                cell[c] = cell[c] * scale[c];
            }
        }
    }
    Ok(grad)
}

/// The identity encoder: activation space is RGB space itself.
pub fn build_identity<T: Scalar>() -> EncoderSpec<T> {
    EncoderSpec::new("identity", Vec::new(), Preprocess::identity())
}

/// A small conv-relu-pool encoder for desk-scale experiments. Deterministic
/// in `(channels, seed)`; the name records both so a rebuild can be checked
/// against a checkpoint pairing.
pub fn build_tiny<T: Scalar>(channels: usize, seed: u64) -> EncoderSpec<T> {
    let mut rng = SeededRng::new(seed).stream(1);
    let spec = ConvSpec::standard(3, channels);
    let layers = vec![
        Layer::conv(spec, LayerParams::init_uniform(&spec, &mut rng)),
        Layer::relu(),
        Layer::max_pool(2),
    ];
    EncoderSpec::new(format!("tiny{channels}-s{seed}"), layers, Preprocess::identity())
}

/// The truncated VGG-19 stack from the input through relu3_1:
/// two 64-channel conv-relu pairs, pool, two 128-channel pairs, pool, and a
/// final 256-channel conv-relu. Weights are randomly initialized; pretrained
/// parameters load through the weight-file format.
pub fn build_truncated_vgg19<T: Scalar>(seed: u64) -> EncoderSpec<T> {
    let rng = SeededRng::new(seed);
    let mut layers = Vec::new();
    let plan: &[(usize, usize)] = &[(3, 64), (64, 64), (64, 128), (128, 128), (128, 256)];
    for (idx, &(ic, oc)) in plan.iter().enumerate() {
        let spec = ConvSpec::standard(ic, oc);
        // one weight stream per conv so layer params are independent
        let mut layer_rng = rng.stream(1 + idx as u64);
        layers.push(Layer::conv(spec, LayerParams::init_uniform(&spec, &mut layer_rng)));
        layers.push(Layer::relu());
        if idx == 1 || idx == 3 {
            layers.push(Layer::max_pool(2));
        }
    }
    EncoderSpec::new(format!("vgg19t-s{seed}"), layers, Preprocess::identity())
}
