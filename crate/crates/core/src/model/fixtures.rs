//! Hand-built models with seeded random weights, used by tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{batchnorm_layer, LayerSpec, ModelSpec};
use crate::ring::RingConfig;

fn uniform(rng: &mut ChaCha20Rng, ring: RingConfig, n: usize, bound: f64) -> Vec<u64> {
    (0..n).map(|_| ring.encode_unchecked(rng.gen_range(-bound..bound))).collect()
}

pub fn fc(rng: &mut ChaCha20Rng, ring: RingConfig, in_features: usize, out_features: usize, flatten: bool) -> LayerSpec {
    let bound = 1.0 / (in_features as f64).sqrt();
    LayerSpec::Fc {
        in_features,
        out_features,
        flatten,
        weights: uniform(rng, ring, in_features * out_features, bound),
        bias: uniform(rng, ring, out_features, 0.1),
    }
}

pub fn conv(
    rng: &mut ChaCha20Rng,
    ring: RingConfig,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> LayerSpec {
    let bound = 1.0 / ((in_ch * k * k) as f64).sqrt();
    LayerSpec::Conv2d {
        in_ch,
        out_ch,
        kernel: [k, k],
        stride,
        padding,
        weights: uniform(rng, ring, out_ch * in_ch * k * k, bound),
        bias: uniform(rng, ring, out_ch, 0.1),
    }
}

pub fn batchnorm(rng: &mut ChaCha20Rng, ring: RingConfig, channels: usize) -> LayerSpec {
    let gamma: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..channels).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let mu: Vec<f64> = (0..channels).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let sigma: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.5..2.0)).collect();
    batchnorm_layer(ring, &gamma, &beta, &mu, &sigma).expect("positive sigma")
}

/// `n x n` identity matrix with zero bias.
pub fn identity(n: usize) -> ModelSpec {
    let ring = RingConfig::default();
    let one = ring.encode(1.0).unwrap();
    let weights = (0..n * n).map(|i| if i / n == i % n { one } else { 0 }).collect();
    ModelSpec {
        name: "identity".into(),
        input_shape: vec![n],
        ring,
        layers: vec![LayerSpec::Fc { in_features: n, out_features: n, flatten: false, weights, bias: vec![0; n] }],
    }
}

/// 784-64-10 perceptron with one hidden ReLU layer.
pub fn mlp(seed: u64) -> ModelSpec {
    let ring = RingConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ModelSpec {
        name: "mlp".into(),
        input_shape: vec![784],
        ring,
        layers: vec![fc(&mut rng, ring, 784, 64, false), LayerSpec::Relu, fc(&mut rng, ring, 64, 10, false)],
    }
}

/// LeNet-5 on 1x28x28 inputs with average pooling.
pub fn lenet5(seed: u64) -> ModelSpec {
    let ring = RingConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ModelSpec {
        name: "lenet5".into(),
        input_shape: vec![1, 28, 28],
        ring,
        layers: vec![
            conv(&mut rng, ring, 1, 6, 5, 1, 2),
            LayerSpec::Relu,
            LayerSpec::AvgPool { kernel: [2, 2] },
            conv(&mut rng, ring, 6, 16, 5, 1, 0),
            LayerSpec::Relu,
            LayerSpec::AvgPool { kernel: [2, 2] },
            fc(&mut rng, ring, 400, 120, true),
            LayerSpec::Relu,
            fc(&mut rng, ring, 120, 84, false),
            LayerSpec::Relu,
            fc(&mut rng, ring, 84, 10, false),
        ],
    }
}

/// A small residual network on 3x16x16 inputs: stem, one residual block with
/// batch normalization, a strided convolution, pooling and a classifier.
pub fn tiny_resnet(seed: u64) -> ModelSpec {
    let ring = RingConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ModelSpec {
        name: "tiny_resnet".into(),
        input_shape: vec![3, 16, 16],
        ring,
        layers: vec![
            conv(&mut rng, ring, 3, 8, 3, 1, 1),
            batchnorm(&mut rng, ring, 8),
            LayerSpec::Relu,
            conv(&mut rng, ring, 8, 8, 3, 1, 1),
            batchnorm(&mut rng, ring, 8),
            LayerSpec::Relu,
            conv(&mut rng, ring, 8, 8, 3, 1, 1),
            batchnorm(&mut rng, ring, 8),
            LayerSpec::AddSkip { from: 3 },
            LayerSpec::Relu,
            conv(&mut rng, ring, 8, 16, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::AvgPool { kernel: [4, 4] },
            fc(&mut rng, ring, 16 * 2 * 2, 10, true),
        ],
    }
}

/// Fixture by name, for the command line.
pub fn by_name(name: &str, seed: u64) -> Option<ModelSpec> {
    match name {
        "mlp" => Some(mlp(seed)),
        "lenet5" | "lenet-5" => Some(lenet5(seed)),
        "tiny_resnet" | "resnet" => Some(tiny_resnet(seed)),
        _ => None,
    }
}

/// Uniform inputs in `[0, 1)`, shaped `[batch] ++ input_shape`.
pub fn random_input(m: &ModelSpec, batch: usize, seed: u64) -> crate::ring::FixedTensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n: usize = m.input_shape.iter().product::<usize>() * batch;
    let data = (0..n).map(|_| m.ring.encode_unchecked(rng.gen_range(0.0..1.0))).collect();
    let shape = std::iter::once(batch).chain(m.input_shape.iter().copied()).collect();
    crate::ring::FixedTensor::new(shape, data, m.ring).expect("consistent shape")
}
