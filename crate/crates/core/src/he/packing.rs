//! Coefficient packing for convolutions; a matrix-vector product is the special
//! case of a 1x1 convolution on a 1x1 image with `cols` input channels.
//!
//! Input channel `c`, pixel `(i, j)` of a tile goes to coefficient
//! `c*Ht*Wt + i*Wt + j`. The kernel for output channel slot `mm` and input
//! channel `c` places `k[a][b]` at `mm*S + O - (c*Ht*Wt + a*Wt + b)`, where
//! `S = Cg*Ht*Wt` and `O = (Cg-1)*Ht*Wt + (kh-1)*Wt + (kw-1)`. The negacyclic
//! product then holds output pixel `(i, j)` of slot `mm` at `mm*S + O + i*Wt + j`,
//! and no other term lands there. Since `Mg*S <= N` nothing wraps.

use serde::{Deserialize, Serialize};

use super::bfv::Plaintext;
use super::HeError;

/// Geometry of a (cross-correlation) convolution on an already padded input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn matvec(rows: usize, cols: usize) -> Self {
        Self { in_ch: cols, height: 1, width: 1, out_ch: rows, kh: 1, kw: 1, stride: 1 }
    }

    /// Output size at stride 1.
    pub fn full_out(&self) -> (usize, usize) {
        (self.height + 1 - self.kh, self.width + 1 - self.kw)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        let (fh, fw) = self.full_out();
        ((fh - 1) / self.stride + 1, (fw - 1) / self.stride + 1)
    }

    fn check(&self) -> Result<(), HeError> {
        if self.in_ch == 0 || self.out_ch == 0 || self.kh == 0 || self.kw == 0 || self.stride == 0 {
            return Err(HeError::Packing(format!("degenerate geometry {self:?}")));
        }
        if self.kh > self.height || self.kw > self.width {
            return Err(HeError::Packing(format!("kernel larger than input in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackingPlan {
    pub geom: ConvGeometry,
    pub degree: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    /// Top-left corner of every tile, in input (= full-resolution output) coordinates.
    pub tiles: Vec<(usize, usize)>,
    /// Input channels per input ciphertext.
    pub chan_group: usize,
    /// Output channels per output ciphertext.
    pub out_group: usize,
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl PackingPlan {
    pub fn new(geom: ConvGeometry, degree: usize) -> Result<Self, HeError> {
        geom.check()?;
        let (h, w) = (geom.height, geom.width);
        let (tile_h, tile_w) = if h * w <= degree {
            (h, w)
        } else if w * geom.kh <= degree {
            (h.min(degree / w), w)
        } else {
            (geom.kh, w.min(degree / geom.kh))
        };
        if tile_h < geom.kh || tile_w < geom.kw {
            return Err(HeError::Packing(format!("kernel {}x{} does not fit in degree {degree}", geom.kh, geom.kw)));
        }
        let (fh, fw) = geom.full_out();
        let (step_h, step_w) = (tile_h + 1 - geom.kh, tile_w + 1 - geom.kw);
        let mut tiles = Vec::new();
        for r in (0..fh).step_by(step_h) {
            for c in (0..fw).step_by(step_w) {
                tiles.push((r, c));
            }
        }
        let area = tile_h * tile_w;
        let max_group = geom.in_ch.min(degree / area);
        let mut best: Option<((usize, usize), usize, usize)> = None;
        for cg in 1..=max_group {
            let mg = (degree / (cg * area)).min(geom.out_ch);
            let (n_in, n_out) = (div_ceil(geom.in_ch, cg), div_ceil(geom.out_ch, mg));
            let key = (n_in + n_out, n_in * n_out);
            if best.is_none_or(|(k, _, _)| key <= k) {
                best = Some((key, cg, mg));
            }
        }
        let (_, chan_group, out_group) = best.expect("area <= degree so one group fits");
        Ok(Self { geom, degree, tile_h, tile_w, tiles, chan_group, out_group })
    }

    pub fn matvec(rows: usize, cols: usize, degree: usize) -> Result<Self, HeError> {
        Self::new(ConvGeometry::matvec(rows, cols), degree)
    }

    pub fn in_groups(&self) -> usize {
        div_ceil(self.geom.in_ch, self.chan_group)
    }

    pub fn out_groups(&self) -> usize {
        div_ceil(self.geom.out_ch, self.out_group)
    }

    /// Number of input ciphertexts (tiles x channel groups).
    pub fn input_cts(&self) -> usize {
        self.tiles.len() * self.in_groups()
    }

    /// Number of output ciphertexts (tiles x output groups).
    pub fn output_cts(&self) -> usize {
        self.tiles.len() * self.out_groups()
    }

    fn slot_stride(&self) -> usize {
        self.chan_group * self.tile_h * self.tile_w
    }

    fn offset(&self) -> usize {
        let area = self.tile_h * self.tile_w;
        (self.chan_group - 1) * area + (self.geom.kh - 1) * self.tile_w + (self.geom.kw - 1)
    }

    /// Packs a `C x H x W` tensor (row-major) into `input_cts()` plaintexts,
    /// ordered tile-major then channel group.
    pub fn pack_input(&self, x: &[u64]) -> Result<Vec<Plaintext>, HeError> {
        let g = &self.geom;
        if x.len() != g.in_ch * g.height * g.width {
            return Err(HeError::Packing(format!("input length {} does not match {g:?}", x.len())));
        }
        let area = self.tile_h * self.tile_w;
        let mut out = Vec::with_capacity(self.input_cts());
        for &(r0, c0) in &self.tiles {
            for cg in 0..self.in_groups() {
                let mut coeffs = vec![0u64; self.degree];
                for cl in 0..self.chan_group {
                    let c = cg * self.chan_group + cl;
                    if c >= g.in_ch {
                        break;
                    }
                    for i in 0..self.tile_h.min(g.height.saturating_sub(r0)) {
                        for j in 0..self.tile_w.min(g.width.saturating_sub(c0)) {
                            coeffs[cl * area + i * self.tile_w + j] = x[(c * g.height + r0 + i) * g.width + c0 + j];
                        }
                    }
                }
                out.push(Plaintext::new(coeffs));
            }
        }
        Ok(out)
    }

    /// Packs an `M x C x kh x kw` kernel into `out_groups() x in_groups()`
    /// plaintexts, ordered output group then channel group. Tiles share them.
    pub fn pack_weights(&self, k: &[u64]) -> Result<Vec<Plaintext>, HeError> {
        let g = &self.geom;
        if k.len() != g.out_ch * g.in_ch * g.kh * g.kw {
            return Err(HeError::Packing(format!("kernel length {} does not match {g:?}", k.len())));
        }
        let (s, o, area) = (self.slot_stride(), self.offset(), self.tile_h * self.tile_w);
        let mut out = Vec::with_capacity(self.out_groups() * self.in_groups());
        for mg in 0..self.out_groups() {
            for cg in 0..self.in_groups() {
                let mut coeffs = vec![0u64; self.degree];
                for mm in 0..self.out_group {
                    let m = mg * self.out_group + mm;
                    if m >= g.out_ch {
                        break;
                    }
                    for cl in 0..self.chan_group {
                        let c = cg * self.chan_group + cl;
                        if c >= g.in_ch {
                            break;
                        }
                        for a in 0..g.kh {
                            for b in 0..g.kw {
                                let idx = mm * s + o - (cl * area + a * self.tile_w + b);
                                coeffs[idx] = k[((m * g.in_ch + c) * g.kh + a) * g.kw + b];
                            }
                        }
                    }
                }
                out.push(Plaintext::new(coeffs));
            }
        }
        Ok(out)
    }

    /// Extracts the `M x OH x OW` output (stride applied) from `output_cts()`
    /// product polynomials ordered tile-major then output group.
    pub fn unpack_result(&self, products: &[Plaintext]) -> Result<Vec<u64>, HeError> {
        if products.len() != self.output_cts() {
            return Err(HeError::Packing(format!("expected {} products, got {}", self.output_cts(), products.len())));
        }
        let g = &self.geom;
        let (fh, fw) = g.full_out();
        let (oh, ow) = g.out_dims();
        let (s, o) = (self.slot_stride(), self.offset());
        let (step_h, step_w) = (self.tile_h + 1 - g.kh, self.tile_w + 1 - g.kw);
        let mut out = vec![0u64; g.out_ch * oh * ow];
        for (t, &(r0, c0)) in self.tiles.iter().enumerate() {
            for mg in 0..self.out_groups() {
                let poly = &products[t * self.out_groups() + mg].coeffs;
                for mm in 0..self.out_group {
                    let m = mg * self.out_group + mm;
                    if m >= g.out_ch {
                        break;
                    }
                    for i in 0..step_h.min(fh - r0) {
                        let r = r0 + i;
                        if r % g.stride != 0 {
                            continue;
                        }
                        for j in 0..step_w.min(fw - c0) {
                            let c = c0 + j;
                            if c % g.stride != 0 {
                                continue;
                            }
                            out[(m * oh + r / g.stride) * ow + c / g.stride] = poly[mm * s + o + i * self.tile_w + j];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn negacyclic(a: &[u64], b: &[u64], mask: u64) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0u64; n];
        for i in 0..n {
            for j in 0..n {
                let p = a[i].wrapping_mul(b[j]);
                let k = (i + j) % n;
                out[k] = if i + j < n { out[k].wrapping_add(p) } else { out[k].wrapping_sub(p) };
            }
        }
        out.iter().map(|v| v & mask).collect()
    }

    #[test]
    fn matvec_examples() {
        let plan = PackingPlan::matvec(1, 1, 8).unwrap();
        let x = plan.pack_input(&[3]).unwrap();
        let w = plan.pack_weights(&[2]).unwrap();
        let prod = Plaintext::new(negacyclic(&x[0].coeffs, &w[0].coeffs, 255));
        assert_eq!(plan.unpack_result(&[prod]).unwrap(), vec![6]);

        let plan = PackingPlan::matvec(2, 2, 8).unwrap();
        let x = plan.pack_input(&[5, 7]).unwrap();
        let w = plan.pack_weights(&[1, 0, 0, 1]).unwrap();
        assert_eq!(plan.input_cts(), 1);
        let prods: Vec<Plaintext> =
            w.iter().map(|wp| Plaintext::new(negacyclic(&x[0].coeffs, &wp.coeffs, 255))).collect();
        assert_eq!(plan.unpack_result(&prods).unwrap(), vec![5, 7]);
    }

    #[test]
    fn tiling_kicks_in_for_large_inputs() {
        let g = ConvGeometry { in_ch: 1, height: 10, width: 10, out_ch: 1, kh: 3, kw: 3, stride: 1 };
        let plan = PackingPlan::new(g, 32).unwrap();
        assert!(plan.tiles.len() > 1);
        assert!(plan.tile_h * plan.tile_w <= 32);
        let g = ConvGeometry { in_ch: 1, height: 8, width: 8, out_ch: 1, kh: 7, kw: 7, stride: 1 };
        assert!(PackingPlan::new(g, 32).is_err());
    }
}
