//! Model description, container format, graph validation and the fixed-point
//! plaintext reference engine.
//!
//! Activations are indexed so that `act[0]` is the model input and `act[i + 1]`
//! is the output of layer `i`; [`LayerSpec::AddSkip`] refers to this index.

pub mod fixtures;
mod format;
pub mod plain;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{FixedTensor, RingConfig, RingError};

pub use format::{load_model, save_model, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("not a model file")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u16),
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated model file")]
    Truncated,
    #[error("invalid model header: {0}")]
    Header(String),
    #[error("model fails validation: {0}")]
    Invalid(ValidationReport),
    #[error("input shape {got:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("batchnorm requires a positive standard deviation, got {0}")]
    NonPositiveSigma(f64),
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// Kind tag of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Fc,
    Conv2d,
    BatchNorm,
    Relu,
    AvgPool,
    AddSkip,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Fc => "fc",
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::AvgPool => "avgpool",
            LayerKind::AddSkip => "add_skip",
        }
    }
}

/// One layer. Weight words are ring-encoded at scale `2^phi`; they are not part
/// of the JSON header and are empty in a public skeleton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `y = W x + b` with `W` stored `out x in`, row-major. With `flatten` the
    /// input may have any shape of `in_features` elements.
    Fc {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        flatten: bool,
        #[serde(skip)]
        weights: Vec<u64>,
        #[serde(skip)]
        bias: Vec<u64>,
    },
    /// Cross-correlation with zero padding; kernel stored `out x in x kh x kw`.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        #[serde(skip)]
        weights: Vec<u64>,
        #[serde(skip)]
        bias: Vec<u64>,
    },
    /// Folded per-channel affine map `y = W_c x + b_c` over the leading dimension.
    BatchNorm {
        channels: usize,
        #[serde(skip)]
        scale: Vec<u64>,
        #[serde(skip)]
        shift: Vec<u64>,
    },
    Relu,
    /// Average over non-overlapping `kh x kw` windows.
    AvgPool { kernel: [usize; 2] },
    /// Adds activation `from` to the current activation.
    AddSkip { from: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Fc { .. } => LayerKind::Fc,
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::BatchNorm { .. } => LayerKind::BatchNorm,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::AvgPool { .. } => LayerKind::AvgPool,
            LayerSpec::AddSkip { .. } => LayerKind::AddSkip,
        }
    }

    /// Expected `(weight, bias)` lengths for the weighted kinds.
    pub fn param_lens(&self) -> Option<(usize, usize)> {
        match self {
            LayerSpec::Fc { in_features, out_features, .. } => Some((in_features * out_features, *out_features)),
            LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => Some((out_ch * in_ch * kernel[0] * kernel[1], *out_ch)),
            LayerSpec::BatchNorm { channels, .. } => Some((*channels, *channels)),
            _ => None,
        }
    }

    pub fn params(&self) -> Option<(&[u64], &[u64])> {
        match self {
            LayerSpec::Fc { weights, bias, .. } | LayerSpec::Conv2d { weights, bias, .. } => Some((weights, bias)),
            LayerSpec::BatchNorm { scale, shift, .. } => Some((scale, shift)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<u64>, &mut Vec<u64>)> {
        match self {
            LayerSpec::Fc { weights, bias, .. } | LayerSpec::Conv2d { weights, bias, .. } => Some((weights, bias)),
            LayerSpec::BatchNorm { scale, shift, .. } => Some((scale, shift)),
            _ => None,
        }
    }

    /// Output shape for one sample, or a description of why the input does not conform.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let numel: usize = input.iter().product();
        match self {
            LayerSpec::Fc { in_features, out_features, flatten, .. } => {
                if input.len() != 1 && !flatten {
                    return Err(format!("fc expects a flat input, got {input:?} (set flatten)"));
                }
                if numel != *in_features {
                    return Err(format!("fc expects {in_features} inputs, got {input:?}"));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, .. } => {
                let [c, h, w] = input else {
                    return Err(format!("conv2d expects a CxHxW input, got {input:?}"));
                };
                if c != in_ch {
                    return Err(format!("conv2d expects {in_ch} channels, got {c}"));
                }
                if *stride == 0 || kernel[0] == 0 || kernel[1] == 0 {
                    return Err("conv2d with zero stride or kernel".into());
                }
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                if ph < kernel[0] || pw < kernel[1] {
                    return Err(format!("kernel {kernel:?} larger than padded input {ph}x{pw}"));
                }
                Ok(vec![*out_ch, (ph - kernel[0]) / stride + 1, (pw - kernel[1]) / stride + 1])
            }
            LayerSpec::BatchNorm { channels, .. } => {
                if input.first() != Some(channels) {
                    return Err(format!("batchnorm over {channels} channels, got input {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::AvgPool { kernel } => {
                let [c, h, w] = input else {
                    return Err(format!("avgpool expects a CxHxW input, got {input:?}"));
                };
                if kernel[0] == 0 || kernel[1] == 0 {
                    return Err("avgpool with an empty window".into());
                }
                if h % kernel[0] != 0 || w % kernel[1] != 0 {
                    return Err(format!("avgpool {}x{} does not tile a {h}x{w} map", kernel[0], kernel[1]));
                }
                Ok(vec![*c, h / kernel[0], w / kernel[1]])
            }
            LayerSpec::AddSkip { .. } => Ok(input.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Shape of one sample.
    pub input_shape: Vec<usize>,
    pub ring: RingConfig,
    pub layers: Vec<LayerSpec>,
}

/// One problem found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub layer: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            match issue.layer {
                Some(l) => write!(f, "layer {l}: {}", issue.message)?,
                None => write!(f, "{}", issue.message)?,
            }
        }
        Ok(())
    }
}

/// Checks shape conformance, pooling divisibility, skip references and weight
/// lengths, collecting every problem.
pub fn validate_graph(m: &ModelSpec) -> ValidationReport {
    let mut issues = Vec::new();
    let mut push = |layer: Option<usize>, message: String| issues.push(Issue { layer, message });
    if RingConfig::new(m.ring.bits, m.ring.frac_bits).is_err() {
        push(None, format!("invalid ring configuration {:?}", m.ring));
    }
    if m.input_shape.is_empty() || m.input_shape.contains(&0) {
        push(None, format!("invalid input shape {:?}", m.input_shape));
    }
    let skeleton = m.is_skeleton();
    let mut shapes: Vec<Option<Vec<usize>>> = vec![Some(m.input_shape.clone())];
    for (i, layer) in m.layers.iter().enumerate() {
        let current = shapes[i].clone();
        let out = match &current {
            Some(s) => match layer.output_shape(s) {
                Ok(o) => Some(o),
                Err(msg) => {
                    push(Some(i), msg);
                    None
                }
            },
            None => None,
        };
        if let LayerSpec::AddSkip { from } = layer {
            if *from > i {
                push(Some(i), format!("skip source {from} is not an earlier activation"));
            } else if let (Some(a), Some(b)) = (&shapes[*from], &current) {
                if a != b {
                    push(Some(i), format!("skip source shape {a:?} differs from {b:?}"));
                }
            }
        }
        if let (Some((wl, bl)), Some((w, b))) = (layer.param_lens(), layer.params()) {
            let ok = if skeleton { w.is_empty() && b.is_empty() } else { w.len() == wl && b.len() == bl };
            if !ok {
                push(Some(i), format!("expected {wl} weights and {bl} biases, found {} and {}", w.len(), b.len()));
            }
        }
        shapes.push(out);
    }
    ValidationReport { issues }
}

impl ModelSpec {
    /// True when no layer carries weight material.
    pub fn is_skeleton(&self) -> bool {
        self.layers.iter().filter_map(|l| l.params()).all(|(w, b)| w.is_empty() && b.is_empty())
    }

    /// The architecture without weights, as shared with the cloud party.
    pub fn skeleton(&self) -> ModelSpec {
        let mut out = self.clone();
        for layer in &mut out.layers {
            if let Some((w, b)) = layer.params_mut() {
                w.clear();
                b.clear();
            }
        }
        out
    }

    /// Per-sample shapes of every activation, `act[0]` being the input.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let report = validate_graph(self);
        if !report.is_empty() {
            return Err(ModelError::Invalid(report));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap()).expect("validated");
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, ModelError> {
        Ok(self.activation_shapes()?.pop().unwrap())
    }

    /// Batch size implied by `shape`: either one sample, or a leading batch dimension.
    pub fn batch_of(&self, shape: &[usize]) -> Result<usize, ModelError> {
        if shape == self.input_shape.as_slice() {
            Ok(1)
        } else if shape.len() == self.input_shape.len() + 1 && shape[1..] == self.input_shape[..] && shape[0] > 0 {
            Ok(shape[0])
        } else {
            Err(ModelError::InputShape { expected: self.input_shape.clone(), got: shape.to_vec() })
        }
    }
}

/// Folds a batch normalization into a per-channel affine map in real arithmetic:
/// `W = W~ / sigma`, `b = b~ - mu * W~ / sigma`.
pub fn batchnorm_fold(gamma: f64, beta: f64, mu: f64, sigma: f64) -> Result<(f64, f64), ModelError> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(ModelError::NonPositiveSigma(sigma));
    }
    let w = gamma / sigma;
    Ok((w, beta - mu * w))
}

/// Folds and quantizes per-channel parameters into a [`LayerSpec::BatchNorm`].
pub fn batchnorm_layer(
    ring: RingConfig,
    gamma: &[f64],
    beta: &[f64],
    mu: &[f64],
    sigma: &[f64],
) -> Result<LayerSpec, ModelError> {
    let mut scale = Vec::with_capacity(gamma.len());
    let mut shift = Vec::with_capacity(gamma.len());
    for c in 0..gamma.len() {
        let (w, b) = batchnorm_fold(gamma[c], beta[c], mu[c], sigma[c])?;
        scale.push(ring.encode(w)?);
        shift.push(ring.encode(b)?);
    }
    Ok(LayerSpec::BatchNorm { channels: gamma.len(), scale, shift })
}

/// Reference fixed-point inference. `x` is one sample or a batch with a leading
/// dimension; the output keeps the same batching.
pub fn plaintext_infer(m: &ModelSpec, x: &FixedTensor) -> Result<FixedTensor, ModelError> {
    let batch = m.batch_of(x.shape())?;
    let shapes = m.activation_shapes()?;
    if m.is_skeleton() && m.layers.iter().any(|l| l.params().is_some()) {
        return Err(ModelError::Header("model has no weights".into()));
    }
    let ring = m.ring;
    let mut acts: Vec<Vec<u64>> = vec![x.data().to_vec()];
    for (i, layer) in m.layers.iter().enumerate() {
        let input = &acts[i];
        let in_shape = &shapes[i];
        let y = match layer {
            LayerSpec::Fc { in_features, out_features, weights, bias, .. } => {
                let geom = plain::LinearShape::fc(*in_features, *out_features);
                let acc = plain::linear(ring, &geom, input, weights, batch);
                let acc = plain::add_bias(ring, &acc, bias, batch, 1);
                acc.iter().map(|&v| ring.shift_right(v, ring.frac_bits)).collect()
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, weights, bias } => {
                let geom = plain::LinearShape::conv(*in_ch, in_shape[1], in_shape[2], *out_ch, *kernel, *stride, *padding);
                let acc = plain::linear(ring, &geom, input, weights, batch);
                let (oh, ow) = geom.out_hw();
                let acc = plain::add_bias(ring, &acc, bias, batch, oh * ow);
                acc.iter().map(|&v| ring.shift_right(v, ring.frac_bits)).collect()
            }
            LayerSpec::BatchNorm { scale, shift, .. } => {
                let inner: usize = in_shape[1..].iter().product();
                let prod = plain::scale_channels(ring, input, scale, inner);
                let acc = plain::add_bias(ring, &prod, shift, batch, inner);
                acc.iter().map(|&v| ring.shift_right(v, ring.frac_bits)).collect()
            }
            LayerSpec::Relu => input.iter().map(|&v| if ring.msb(v) == 0 { v } else { 0 }).collect(),
            LayerSpec::AvgPool { kernel } => {
                let sums = plain::window_sums(ring, input, batch * in_shape[0], in_shape[1], in_shape[2], *kernel);
                let d = (kernel[0] * kernel[1]) as u64;
                sums.iter().map(|&v| ring.floor_div(v, d)).collect()
            }
            LayerSpec::AddSkip { from } => input.iter().zip(&acts[*from]).map(|(&a, &b)| ring.add(a, b)).collect(),
        };
        acts.push(y);
    }
    let out_shape = shapes.last().unwrap();
    let shape = if x.shape() == m.input_shape.as_slice() {
        out_shape.clone()
    } else {
        std::iter::once(batch).chain(out_shape.iter().copied()).collect()
    };
    Ok(FixedTensor::new(shape, acts.pop().unwrap(), ring)?)
}
