//! Ring-word linear algebra on plaintext tensors, batched along the leading
//! dimension. All sums wrap modulo `2^l`.

use crate::he::ConvGeometry;
use crate::ring::RingConfig;

/// A fully connected or convolutional map on unpadded `C x H x W` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearShape {
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub padding: usize,
}

impl LinearShape {
    pub fn fc(in_features: usize, out_features: usize) -> Self {
        Self { in_ch: in_features, height: 1, width: 1, out_ch: out_features, kernel: [1, 1], stride: 1, padding: 0 }
    }

    pub fn conv(
        in_ch: usize,
        height: usize,
        width: usize,
        out_ch: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    ) -> Self {
        Self { in_ch, height, width, out_ch, kernel, stride, padding }
    }

    pub fn padded_hw(&self) -> (usize, usize) {
        (self.height + 2 * self.padding, self.width + 2 * self.padding)
    }

    pub fn out_hw(&self) -> (usize, usize) {
        let (ph, pw) = self.padded_hw();
        ((ph - self.kernel[0]) / self.stride + 1, (pw - self.kernel[1]) / self.stride + 1)
    }

    pub fn in_len(&self) -> usize {
        self.in_ch * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        let (oh, ow) = self.out_hw();
        self.out_ch * oh * ow
    }

    /// Geometry of the packed product, which works on the padded input.
    pub fn geometry(&self) -> ConvGeometry {
        let (ph, pw) = self.padded_hw();
        ConvGeometry {
            in_ch: self.in_ch,
            height: ph,
            width: pw,
            out_ch: self.out_ch,
            kh: self.kernel[0],
            kw: self.kernel[1],
            stride: self.stride,
        }
    }
}

/// Zero-pads one `C x H x W` sample on all four sides.
pub fn pad(x: &[u64], c: usize, h: usize, w: usize, p: usize) -> Vec<u64> {
    if p == 0 {
        return x.to_vec();
    }
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0u64; c * ph * pw];
    for ch in 0..c {
        for i in 0..h {
            let src = (ch * h + i) * w;
            let dst = (ch * ph + i + p) * pw + p;
            out[dst..dst + w].copy_from_slice(&x[src..src + w]);
        }
    }
    out
}

/// `W * x` for every sample, without bias or rescaling.
pub fn linear(ring: RingConfig, s: &LinearShape, x: &[u64], weights: &[u64], batch: usize) -> Vec<u64> {
    let g = s.geometry();
    let (oh, ow) = s.out_hw();
    let mut out = Vec::with_capacity(batch * s.out_len());
    for b in 0..batch {
        let sample = pad(&x[b * s.in_len()..(b + 1) * s.in_len()], s.in_ch, s.height, s.width, s.padding);
        for m in 0..g.out_ch {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = 0u64;
                    for c in 0..g.in_ch {
                        for a in 0..g.kh {
                            let row = (c * g.height + oi * g.stride + a) * g.width + oj * g.stride;
                            let krow = ((m * g.in_ch + c) * g.kh + a) * g.kw;
                            for bb in 0..g.kw {
                                acc = acc.wrapping_add(sample[row + bb].wrapping_mul(weights[krow + bb]));
                            }
                        }
                    }
                    out.push(acc & ring.mask());
                }
            }
        }
    }
    out
}

/// Adds `bias[c] * 2^phi` to every element of channel `c`; channels repeat with
/// period `bias.len() * inner` along the data.
pub fn add_bias(ring: RingConfig, x: &[u64], bias: &[u64], batch: usize, inner: usize) -> Vec<u64> {
    debug_assert_eq!(x.len(), batch * bias.len() * inner);
    x.iter()
        .enumerate()
        .map(|(i, &v)| ring.add(v, bias[(i / inner) % bias.len()] << ring.frac_bits))
        .collect()
}

/// Multiplies channel `c` by `scale[c]`.
pub fn scale_channels(ring: RingConfig, x: &[u64], scale: &[u64], inner: usize) -> Vec<u64> {
    x.iter().enumerate().map(|(i, &v)| ring.mul(v, scale[(i / inner) % scale.len()])).collect()
}

/// Sums of non-overlapping `kh x kw` windows over `planes` maps of `h x w`.
pub fn window_sums(ring: RingConfig, x: &[u64], planes: usize, h: usize, w: usize, kernel: [usize; 2]) -> Vec<u64> {
    let (oh, ow) = (h / kernel[0], w / kernel[1]);
    let mut out = vec![0u64; planes * oh * ow];
    for p in 0..planes {
        for i in 0..h {
            for j in 0..w {
                let o = (p * oh + i / kernel[0]) * ow + j / kernel[1];
                out[o] = ring.add(out[o], x[(p * h + i) * w + j]);
            }
        }
    }
    out
}
