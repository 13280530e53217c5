//! Secure forward evaluation of the supported layer types.
//!
//! Party 0 is the model owner and holds every weight; party 1 is the cloud and
//! holds the HE secret key. Both hold one additive share of every activation.
//!
//! Linear layers (fully connected, convolution, folded batch normalization) use
//! one round: the cloud encrypts its packed share, the owner multiplies by the
//! packed weights, adds a fresh encryption of a uniform mask `R` and flooding
//! noise, and returns the result. The cloud's output share is the decryption
//! `W x_1 + R`; the owner's is `W x_0 + b 2^phi - R`. Both are then truncated by
//! `phi`. Encrypting `R` (rather than adding it in the clear) also rerandomizes
//! the `c1` component, which would otherwise let the key holder solve for the
//! weight polynomial.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::gadgets::{divide_public, relu, truncate, GadgetError, Party};
use crate::he::{Ciphertext, HeContext, HeError, PackingPlan, Plaintext, PublicKey, SecretKey};
use crate::model::plain::{self, LinearShape};
use crate::model::LayerSpec;
use crate::ring::RingConfig;
use crate::sharing::PartyId;
use crate::transport::{Tag, TransportError};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Gadget(#[from] GadgetError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("the model owner is missing weights for a {0} layer")]
    MissingWeights(&'static str),
    #[error("weight material must not be present at the cloud party")]
    WeightsAtCloud,
    #[error("HE plaintext modulus 2^{he} does not match the share ring 2^{ring}")]
    ModulusMismatch { he: u32, ring: u32 },
}

impl LayerError {
    pub fn transport(&self) -> Option<&TransportError> {
        match self {
            LayerError::Transport(e) => Some(e),
            LayerError::Gadget(g) => g.transport(),
            _ => None,
        }
    }
}

/// Which computing party this context belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    ModelOwner,
    Cloud,
}

impl Role {
    pub fn party(self) -> PartyId {
        match self {
            Role::ModelOwner => PartyId::Zero,
            Role::Cloud => PartyId::One,
        }
    }
}

pub enum HeKeys {
    Owner { pk: PublicKey },
    Cloud { pk: PublicKey, sk: SecretKey },
}

pub struct LayerContext {
    pub party: Party,
    pub he: Arc<HeContext>,
    pub keys: HeKeys,
}

impl LayerContext {
    /// Key setup: the cloud generates an HE key pair and sends the public key.
    /// Exchanges the HE public key. On failure the peer is sent an abort.
    pub fn establish(mut party: Party, he: Arc<HeContext>) -> Result<Self, LayerError> {
        let plain_bits = he.params().plain_bits;
        let keys = if plain_bits != party.ring.bits {
            Err(LayerError::ModulusMismatch { he: plain_bits, ring: party.ring.bits })
        } else if party.is_zero() {
            party
                .chan
                .recv(Tag::HePublicKey)
                .map_err(LayerError::from)
                .and_then(|bytes| Ok(HeKeys::Owner { pk: he.public_key_from_bytes(&bytes)? }))
        } else {
            let (pk, sk) = he.keygen(&mut party.rng);
            party.chan.send(Tag::HePublicKey, &pk.to_bytes()).map(|_| HeKeys::Cloud { pk, sk }).map_err(LayerError::from)
        };
        match keys {
            Ok(keys) => Ok(Self { party, he, keys }),
            Err(e) => {
                if !matches!(e.transport(), Some(TransportError::PeerAborted(_))) {
                    party.chan.abort(&e.to_string());
                }
                Err(e)
            }
        }
    }

    pub fn role(&self) -> Role {
        if self.party.is_zero() {
            Role::ModelOwner
        } else {
            Role::Cloud
        }
    }

    pub fn ring(&self) -> RingConfig {
        self.party.ring
    }
}

fn encode_cts(cts: &[Ciphertext]) -> Vec<u8> {
    let mut out = (cts.len() as u32).to_le_bytes().to_vec();
    for ct in cts {
        let b = ct.to_bytes();
        out.extend_from_slice(&(b.len() as u32).to_le_bytes());
        out.extend_from_slice(&b);
    }
    out
}

fn decode_cts(he: &HeContext, bytes: &[u8], expected: usize) -> Result<Vec<Ciphertext>, LayerError> {
    let bad = || TransportError::malformed("ciphertext list");
    let count = u32::from_le_bytes(bytes.get(..4).ok_or_else(bad)?.try_into().unwrap()) as usize;
    if count != expected {
        return Err(bad().into());
    }
    let mut pos = 4;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32::from_le_bytes(bytes.get(pos..pos + 4).ok_or_else(bad)?.try_into().unwrap()) as usize;
        pos += 4;
        out.push(he.ciphertext_from_bytes(bytes.get(pos..pos + len).ok_or_else(bad)?)?);
        pos += len;
    }
    if pos != bytes.len() {
        return Err(bad().into());
    }
    Ok(out)
}

/// Shares of `W x + b` for `batch` samples, truncated by `phi`. The owner passes
/// `(weights, bias)`; the cloud passes `None`.
pub fn linear_forward(
    ctx: &mut LayerContext,
    shape: &LinearShape,
    x: &[u64],
    batch: usize,
    params: Option<(&[u64], &[u64])>,
) -> Result<Vec<u64>, LayerError> {
    if x.len() != batch * shape.in_len() {
        return Err(LayerError::Shape(format!("linear input has {} words, expected {}", x.len(), batch * shape.in_len())));
    }
    let ring = ctx.ring();
    let he = ctx.he.clone();
    let plan = PackingPlan::new(shape.geometry(), he.degree())?;
    let g = plan.geom;
    let (n_in, n_out) = (plan.input_cts(), plan.output_cts());
    let acc = match (&ctx.keys, params) {
        (HeKeys::Cloud { .. }, Some(_)) => return Err(LayerError::WeightsAtCloud),
        (HeKeys::Owner { .. }, None) => return Err(LayerError::MissingWeights("linear")),
        (HeKeys::Cloud { pk, sk }, None) => {
            let mut cts = Vec::with_capacity(batch * n_in);
            for b in 0..batch {
                let sample = &x[b * shape.in_len()..(b + 1) * shape.in_len()];
                let padded = plain::pad(sample, g.in_ch, shape.height, shape.width, shape.padding);
                for pt in plan.pack_input(&padded)? {
                    cts.push(he.encrypt(pk, &pt, &mut ctx.party.rng)?);
                }
            }
            ctx.party.chan.send(Tag::LinCt, &encode_cts(&cts))?;
            let reply = ctx.party.chan.recv(Tag::LinResult)?;
            let results = decode_cts(&he, &reply, batch * n_out)?;
            let mut out = Vec::with_capacity(batch * shape.out_len());
            for chunk in results.chunks(n_out) {
                let pts = chunk.iter().map(|ct| he.decrypt(sk, ct)).collect::<Result<Vec<_>, _>>()?;
                out.extend(plan.unpack_result(&pts)?);
            }
            out
        }
        (HeKeys::Owner { pk }, Some((weights, bias))) => {
            if weights.len() != g.out_ch * g.in_ch * g.kh * g.kw || bias.len() != g.out_ch {
                return Err(LayerError::Shape("weight or bias length does not match the layer".into()));
            }
            let prepared = plan
                .pack_weights(weights)?
                .iter()
                .map(|p| he.prepare_plain(p))
                .collect::<Result<Vec<_>, _>>()?;
            let request = ctx.party.chan.recv(Tag::LinCt)?;
            let cts = decode_cts(&he, &request, batch * n_in)?;
            let t_mask = he.plain_modulus() - 1;
            let (ig, og) = (plan.in_groups(), plan.out_groups());
            let mut replies = Vec::with_capacity(batch * n_out);
            let mut masks = Vec::with_capacity(batch * shape.out_len());
            for b in 0..batch {
                let ntt = cts[b * n_in..(b + 1) * n_in].iter().map(|c| he.to_ntt(c)).collect::<Result<Vec<_>, _>>()?;
                let mut r_polys = Vec::with_capacity(n_out);
                for t in 0..plan.tiles.len() {
                    for mg in 0..og {
                        let mut acc = he.mul_prepared(&ntt[t * ig], &prepared[mg * ig])?;
                        for cg in 1..ig {
                            let term = he.mul_prepared(&ntt[t * ig + cg], &prepared[mg * ig + cg])?;
                            he.add_ntt_assign(&mut acc, &term);
                        }
                        let r = Plaintext::new((0..he.degree()).map(|_| ctx.party.rng.gen::<u64>() & t_mask).collect());
                        let masked = he.eval_add(&he.from_ntt(acc), &he.encrypt(pk, &r, &mut ctx.party.rng)?)?;
                        let mut masked = masked;
                        he.flood(&mut masked, &mut ctx.party.rng);
                        if he.noise_budget(&masked) <= 0.0 {
                            return Err(HeError::NoiseExhausted { budget: he.noise_budget(&masked) }.into());
                        }
                        replies.push(masked);
                        r_polys.push(r);
                    }
                }
                masks.extend(plan.unpack_result(&r_polys)?);
            }
            ctx.party.chan.send(Tag::LinResult, &encode_cts(&replies))?;
            let local = plain::linear(ring, shape, x, weights, batch);
            let (oh, ow) = shape.out_hw();
            let local = plain::add_bias(ring, &local, bias, batch, oh * ow);
            local.iter().zip(&masks).map(|(&v, &r)| ring.sub(v, r)).collect()
        }
    };
    Ok(truncate(&mut ctx.party, &acc, ring.frac_bits)?)
}

pub fn fc_forward(
    ctx: &mut LayerContext,
    x: &[u64],
    batch: usize,
    in_features: usize,
    out_features: usize,
    params: Option<(&[u64], &[u64])>,
) -> Result<Vec<u64>, LayerError> {
    linear_forward(ctx, &LinearShape::fc(in_features, out_features), x, batch, params)
}

pub fn conv2d_forward(
    ctx: &mut LayerContext,
    shape: &LinearShape,
    x: &[u64],
    batch: usize,
    params: Option<(&[u64], &[u64])>,
) -> Result<Vec<u64>, LayerError> {
    linear_forward(ctx, shape, x, batch, params)
}

/// Folded batch normalization over `channels x inner` samples. The per-channel
/// scale is a weight, so it is applied through the HE flow as a diagonal 1x1
/// convolution rather than in the clear.
pub fn batchnorm_forward(
    ctx: &mut LayerContext,
    x: &[u64],
    batch: usize,
    channels: usize,
    inner: usize,
    params: Option<(&[u64], &[u64])>,
) -> Result<Vec<u64>, LayerError> {
    let shape = LinearShape::conv(channels, inner, 1, channels, [1, 1], 1, 0);
    let diag = params.map(|(scale, shift)| {
        let mut w = vec![0u64; channels * channels];
        for (c, &s) in scale.iter().enumerate().take(channels) {
            w[c * channels + c] = s;
        }
        (w, shift.to_vec())
    });
    linear_forward(ctx, &shape, x, batch, diag.as_ref().map(|(w, b)| (w.as_slice(), b.as_slice())))
}

pub fn relu_forward(ctx: &mut LayerContext, x: &[u64]) -> Result<Vec<u64>, LayerError> {
    Ok(relu(&mut ctx.party, x)?)
}

/// Floor of the mean over non-overlapping windows: local window sums, then one
/// exact division by the window size.
pub fn avgpool_forward(
    ctx: &mut LayerContext,
    x: &[u64],
    planes: usize,
    h: usize,
    w: usize,
    kernel: [usize; 2],
) -> Result<Vec<u64>, LayerError> {
    if kernel[0] == 0 || kernel[1] == 0 || !h.is_multiple_of(kernel[0]) || !w.is_multiple_of(kernel[1]) {
        return Err(LayerError::Shape(format!("avgpool {kernel:?} does not tile {h}x{w}")));
    }
    if x.len() != planes * h * w {
        return Err(LayerError::Shape(format!("avgpool input has {} words, expected {}", x.len(), planes * h * w)));
    }
    let sums = plain::window_sums(ctx.ring(), x, planes, h, w, kernel);
    if kernel == [1, 1] {
        return Ok(sums);
    }
    Ok(divide_public(&mut ctx.party, &sums, (kernel[0] * kernel[1]) as u64)?)
}

/// Evaluates one layer on this party's share of a batch. `acts` holds every
/// earlier activation share, `in_shape` the per-sample input shape.
pub fn forward_layer(
    ctx: &mut LayerContext,
    layer: &LayerSpec,
    in_shape: &[usize],
    acts: &[Vec<u64>],
    batch: usize,
) -> Result<Vec<u64>, LayerError> {
    let x = acts.last().expect("input activation");
    let owner = ctx.role() == Role::ModelOwner;
    let params = |p: Option<(&[u64], &[u64])>, kind: &'static str| -> Result<Option<(Vec<u64>, Vec<u64>)>, LayerError> {
        let (w, b) = p.expect("weighted kind");
        match (owner, w.is_empty() && b.is_empty()) {
            (true, true) => Err(LayerError::MissingWeights(kind)),
            (true, false) => Ok(Some((w.to_vec(), b.to_vec()))),
            (false, true) => Ok(None),
            (false, false) => Err(LayerError::WeightsAtCloud),
        }
    };
    match layer {
        LayerSpec::Fc { in_features, out_features, .. } => {
            let p = params(layer.params(), "fc")?;
            fc_forward(ctx, x, batch, *in_features, *out_features, as_ref(&p))
        }
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, .. } => {
            let p = params(layer.params(), "conv2d")?;
            let shape = LinearShape::conv(*in_ch, in_shape[1], in_shape[2], *out_ch, *kernel, *stride, *padding);
            conv2d_forward(ctx, &shape, x, batch, as_ref(&p))
        }
        LayerSpec::BatchNorm { channels, .. } => {
            let p = params(layer.params(), "batchnorm")?;
            let inner = in_shape[1..].iter().product();
            batchnorm_forward(ctx, x, batch, *channels, inner, as_ref(&p))
        }
        LayerSpec::Relu => relu_forward(ctx, x),
        LayerSpec::AvgPool { kernel } => avgpool_forward(ctx, x, batch * in_shape[0], in_shape[1], in_shape[2], *kernel),
        LayerSpec::AddSkip { from } => {
            let ring = ctx.ring();
            let other = acts.get(*from).ok_or_else(|| LayerError::Shape(format!("no activation {from}")))?;
            if other.len() != x.len() {
                return Err(LayerError::Shape("skip operands differ in size".into()));
            }
            Ok(x.iter().zip(other).map(|(&a, &b)| ring.add(a, b)).collect())
        }
    }
}

fn as_ref(p: &Option<(Vec<u64>, Vec<u64>)>) -> Option<(&[u64], &[u64])> {
    p.as_ref().map(|(w, b)| (w.as_slice(), b.as_slice()))
}
