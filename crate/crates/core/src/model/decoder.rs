//! Convolutional decoder: latent code → multi-scale feature pyramid.
//!
//! A dense layer lifts `z` to a `C0 × 4³` seed volume. Each block doubles the
//! resolution with nearest-neighbour upsampling followed by a zero-padded
//! `3³` convolution and a leaky ReLU. Every level (seed and block outputs) is
//! projected to `k` feature channels by a `1³` convolution.

use rand::Rng;

use super::dense::Dense;
use super::ArchConfig;
use crate::linalg::{gemm, Scalar, View};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;
pub(crate) const SEED_RES: usize = 4;
const TAPS: usize = 27;

/// Dense feature grid of `channels` values per node, stored `[node][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    pub res: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn shape(&self) -> [usize; 3] {
        [self.res; 3]
    }

    pub fn node(&self, index: usize) -> &[T] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }
}

/// The decoded feature grids, coarse to fine.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<FeatureGrid<T>>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn width(&self) -> usize {
        self.levels.iter().map(|l| l.channels).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub seed: Dense<T>,
    pub blocks: Vec<Dense<T>>,
    pub projs: Vec<Dense<T>>,
}

/// Intermediates of one decoder pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DecoderTrace<T> {
    pub z: Vec<T>,
    /// Post-activation volume of every level, `[channel][node]`.
    pub acts: Vec<Vec<T>>,
    /// Shifted inputs of every block, per output parity, `[cin * 8][low-res node]`.
    pub cols: Vec<Vec<Vec<T>>>,
    pub pyramid: FeaturePyramid<T>,
}

#[inline]
fn leaky<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::of(LEAKY_SLOPE)
    }
}

/// Derivative of the leaky ReLU expressed through its output (the sign is preserved).
#[inline]
fn leaky_grad<T: Scalar>(act: T) -> T {
    if act > T::zero() {
        T::one()
    } else {
        T::of(LEAKY_SLOPE)
    }
}

/// Kernel taps (per axis) that read low-resolution offset slot `s` when the
/// output index has parity `p`; slot `s` sits at offset `p + s - 1`.
const SLOT_TAPS: [[&[usize]; 2]; 2] = [[&[0], &[1, 2]], [&[0, 1], &[2]]];

#[inline]
fn parity_bits(parity: usize) -> [usize; 3] {
    [parity >> 2 & 1, parity >> 1 & 1, parity & 1]
}

/// Nearest-neighbour 2x upsampling followed by a `3³` convolution equals, for
/// each of the 8 output parities, a `2³` convolution of the low-resolution
/// input. These are the folded `[cout, cin * 8]` weights of one parity.
fn parity_weights<T: Scalar>(block: &Dense<T>, cin: usize, parity: usize) -> Vec<T> {
    let p = parity_bits(parity);
    let ld = block.inp + 1;
    let mut out = vec![T::zero(); block.out * cin * 8];
    for co in 0..block.out {
        for ci in 0..cin {
            for slot in 0..8 {
                let s = parity_bits(slot);
                let mut acc = T::zero();
                for &kd in SLOT_TAPS[p[0]][s[0]] {
                    for &kh in SLOT_TAPS[p[1]][s[1]] {
                        for &kw in SLOT_TAPS[p[2]][s[2]] {
                            acc += block.w[co * ld + ci * TAPS + (kd * 3 + kh) * 3 + kw];
                        }
                    }
                }
                out[(co * cin + ci) * 8 + slot] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`parity_weights`]: adds folded-weight gradients into `grad`.
fn unfold_parity_grad<T: Scalar>(dwp: &[T], cin: usize, parity: usize, grad: &mut Dense<T>) {
    let p = parity_bits(parity);
    let ld = grad.inp + 1;
    for co in 0..grad.out {
        for ci in 0..cin {
            for slot in 0..8 {
                let s = parity_bits(slot);
                let g = dwp[(co * cin + ci) * 8 + slot];
                for &kd in SLOT_TAPS[p[0]][s[0]] {
                    for &kh in SLOT_TAPS[p[1]][s[1]] {
                        for &kw in SLOT_TAPS[p[2]][s[2]] {
                            grad.w[co * ld + ci * TAPS + (kd * 3 + kh) * 3 + kw] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(dst_row, src_row, shift_w)` for every in-range row pair of the
/// shifted copy that feeds `slot` of `parity`.
fn for_each_shift(r: usize, parity: usize, slot: usize, mut f: impl FnMut(usize, usize, isize)) {
    let p = parity_bits(parity);
    let s = parity_bits(slot);
    let off: [isize; 3] = std::array::from_fn(|a| p[a] as isize + s[a] as isize - 1);
    let ri = r as isize;
    for i in 0..ri {
        let si = i + off[0];
        if si < 0 || si >= ri {
            continue;
        }
        for j in 0..ri {
            let sj = j + off[1];
            if sj < 0 || sj >= ri {
                continue;
            }
            f(((i * ri + j) * ri) as usize, ((si * ri + sj) * ri) as usize, off[2]);
        }
    }
}

/// The `[cin * 8, r³]` matrix of shifted inputs used by one parity.
fn shifted_cols<T: Scalar>(input: &[T], cin: usize, r: usize, parity: usize) -> Vec<T> {
    let n = r * r * r;
    let mut cols = vec![T::zero(); cin * 8 * n];
    for ci in 0..cin {
        let src = &input[ci * n..(ci + 1) * n];
        for slot in 0..8 {
            let dst = &mut cols[(ci * 8 + slot) * n..(ci * 8 + slot + 1) * n];
            for_each_shift(r, parity, slot, |d, s, w| match w {
                -1 => dst[d + 1..d + r].copy_from_slice(&src[s..s + r - 1]),
                0 => dst[d..d + r].copy_from_slice(&src[s..s + r]),
                _ => dst[d..d + r - 1].copy_from_slice(&src[s + 1..s + r]),
            });
        }
    }
    cols
}

fn shifted_cols_adjoint_add<T: Scalar>(dcols: &[T], cin: usize, r: usize, parity: usize, dinput: &mut [T]) {
    let n = r * r * r;
    for ci in 0..cin {
        let dst = &mut dinput[ci * n..(ci + 1) * n];
        for slot in 0..8 {
            let src = &dcols[(ci * 8 + slot) * n..(ci * 8 + slot + 1) * n];
            for_each_shift(r, parity, slot, |d, s, w| {
                let (from, to, len) = match w {
                    -1 => (d + 1, s, r - 1),
                    0 => (d, s, r),
                    _ => (d, s + 1, r - 1),
                };
                for (o, g) in dst[to..to + len].iter_mut().zip(&src[from..from + len]) {
                    *o += *g;
                }
            });
        }
    }
}

/// High-resolution flat index of low-resolution node `v` under `parity`.
#[inline]
fn parity_target(v: usize, r: usize, parity: usize) -> usize {
    let p = parity_bits(parity);
    let h = 2 * r;
    let (i, j, l) = (v / (r * r), (v / r) % r, v % r);
    ((2 * i + p[0]) * h + 2 * j + p[1]) * h + 2 * l + p[2]
}

/// Pre-activation output `[cout, (2r)³]` of upsample + convolution, plus the
/// per-parity shifted inputs for the backward pass.
fn upconv_forward<T: Scalar>(block: &Dense<T>, input: &[T], cin: usize, r: usize) -> (Vec<T>, Vec<Vec<T>>) {
    let n_low = r * r * r;
    let n = 8 * n_low;
    let mut out = vec![T::zero(); block.out * n];
    let mut all_cols = Vec::with_capacity(8);
    let mut part = vec![T::zero(); block.out * n_low];
    for parity in 0..8 {
        let wp = parity_weights(block, cin, parity);
        let cols = shifted_cols(input, cin, r, parity);
        gemm(T::one(), View::rm(&wp, block.out, cin * 8, cin * 8), View::rm(&cols, cin * 8, n_low, n_low), T::zero(), &mut part, n_low);
        for co in 0..block.out {
            let b = block.bias(co);
            let dst = &mut out[co * n..(co + 1) * n];
            for (v, x) in part[co * n_low..(co + 1) * n_low].iter().enumerate() {
                dst[parity_target(v, r, parity)] = *x + b;
            }
        }
        all_cols.push(cols);
    }
    (out, all_cols)
}

/// `1³` projection of a `[channel][node]` volume to a `[node][k]` feature grid.
fn project<T: Scalar>(proj: &Dense<T>, act: &[T], channels: usize, res: usize) -> FeatureGrid<T> {
    let n = res * res * res;
    let k = proj.out;
    let mut data = vec![T::zero(); n * k];
    // [n, C] x [C, k]
    gemm(T::one(), View::rm(act, channels, n, n).t(), proj.weight().t(), T::zero(), &mut data, k);
    for node in data.chunks_exact_mut(k) {
        for (o, v) in node.iter_mut().enumerate() {
            *v += proj.bias(o);
        }
    }
    FeatureGrid { res, channels: k, data }
}

impl<T: Scalar> DecoderParams<T> {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let seed = Dense::zeros(arch.seed_channels * SEED_RES.pow(3), arch.latent_dim);
        let mut blocks = Vec::new();
        let mut cin = arch.seed_channels;
        for &cout in &arch.block_channels {
            blocks.push(Dense::zeros(cout, cin * TAPS));
            cin = cout;
        }
        let projs = (0..arch.levels())
            .map(|l| Dense::zeros(arch.feature_channels, arch.level_channels(l)))
            .collect();
        Self { seed, blocks, projs }
    }

    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        p.seed.init_uniform(rng);
        for b in &mut p.blocks {
            b.init_uniform(rng);
        }
        for q in &mut p.projs {
            q.init_uniform(rng);
        }
        p
    }

    pub fn dense_layers(&self) -> Vec<(String, &Dense<T>)> {
        let mut out = vec![("decoder.seed".to_owned(), &self.seed)];
        out.extend(self.blocks.iter().enumerate().map(|(i, b)| (format!("decoder.block{i}.conv"), b)));
        out.extend(self.projs.iter().enumerate().map(|(i, p)| (format!("decoder.proj{i}"), p)));
        out
    }

    pub fn dense_layers_mut(&mut self) -> Vec<&mut Dense<T>> {
        let mut out = vec![&mut self.seed];
        out.extend(self.blocks.iter_mut());
        out.extend(self.projs.iter_mut());
        out
    }

    pub fn forward(&self, z: &[T]) -> DecoderTrace<T> {
        let c0 = self.seed.out / SEED_RES.pow(3);
        let mut seed = vec![T::zero(); self.seed.out];
        self.seed.apply_vec(z, &mut seed);
        for v in &mut seed {
            *v = leaky(*v);
        }
        let mut acts = vec![seed];
        let mut cols_all = Vec::new();
        let mut channels = vec![c0];
        let mut res = SEED_RES;
        for block in &self.blocks {
            let cin = *channels.last().unwrap();
            let (mut out, cols) = upconv_forward(block, acts.last().unwrap(), cin, res);
            res *= 2;
            for v in &mut out {
                *v = leaky(*v);
            }
            cols_all.push(cols);
            acts.push(out);
            channels.push(block.out);
        }
        let levels = acts
            .iter()
            .enumerate()
            .map(|(l, act)| project(&self.projs[l], act, channels[l], SEED_RES << l))
            .collect();
        DecoderTrace {
            z: z.to_vec(),
            acts,
            cols: cols_all,
            pyramid: FeaturePyramid { levels },
        }
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dz`, given
    /// `dL/dF` for every pyramid level in `[node][k]` layout.
    pub fn backward(&self, trace: &DecoderTrace<T>, dfeatures: &[Vec<T>], grads: &mut DecoderParams<T>) -> Vec<T> {
        let levels = trace.acts.len();
        let channels: Vec<usize> = (0..levels)
            .map(|l| if l == 0 { self.seed.out / SEED_RES.pow(3) } else { self.blocks[l - 1].out })
            .collect();
        let mut carry: Option<Vec<T>> = None; // dL/d(act) flowing down from the next block
        for l in (0..levels).rev() {
            let res = SEED_RES << l;
            let n = res * res * res;
            let c = channels[l];
            let proj = &self.projs[l];
            let k = proj.out;
            let df = &dfeatures[l];
            let act = &trace.acts[l];

            // projection: F[n, k] = act^T[n, C] W^T[C, k] + b
            let gp = &mut grads.projs[l];
            let ld = gp.inp + 1;
            gemm(T::one(), View::rm(df, n, k, k).t(), View::rm(act, c, n, n).t(), T::one(), &mut gp.w, ld);
            for node in df.chunks_exact(k) {
                for (o, g) in node.iter().enumerate() {
                    gp.w[o * ld + gp.inp] += *g;
                }
            }
            let mut dact = carry.take().unwrap_or_else(|| vec![T::zero(); c * n]);
            // dact[C, n] += W[k, C]^T dF^T[k, n]
            gemm(T::one(), proj.weight().t(), View::rm(df, n, k, k).t(), T::one(), &mut dact, n);
            for (g, a) in dact.iter_mut().zip(act) {
                *g = *g * leaky_grad(*a);
            }
            let dpre = dact;

            if l == 0 {
                let gs = &mut grads.seed;
                let ld = gs.inp + 1;
                for (o, g) in dpre.iter().enumerate() {
                    let row = &mut gs.w[o * ld..(o + 1) * ld];
                    for (w, zj) in row.iter_mut().zip(&trace.z) {
                        *w += *g * *zj;
                    }
                    row[gs.inp] += *g;
                }
                let mut dz = vec![T::zero(); self.seed.inp];
                // dz[c] = W^T[c, out] dpre[out]
                gemm(T::one(), self.seed.weight().t(), View::rm(&dpre, dpre.len(), 1, 1), T::zero(), &mut dz, 1);
                return dz;
            }

            let block = &self.blocks[l - 1];
            let cin = channels[l - 1];
            let low = res / 2;
            let n_low = low * low * low;
            let gb = &mut grads.blocks[l - 1];
            let ld = gb.inp + 1;
            for (o, row) in dpre.chunks_exact(n).enumerate() {
                let s: T = row.iter().copied().sum();
                gb.w[o * ld + gb.inp] += s;
            }
            let mut dlow = vec![T::zero(); cin * n_low];
            let mut dpart = vec![T::zero(); c * n_low];
            let mut dwp = vec![T::zero(); c * cin * 8];
            let mut dcols = vec![T::zero(); cin * 8 * n_low];
            for (parity, cols) in trace.cols[l - 1].iter().enumerate() {
                for co in 0..c {
                    let src = &dpre[co * n..(co + 1) * n];
                    for (v, g) in dpart[co * n_low..(co + 1) * n_low].iter_mut().enumerate() {
                        *g = src[parity_target(v, low, parity)];
                    }
                }
                let dp = View::rm(&dpart, c, n_low, n_low);
                gemm(T::one(), dp, View::rm(cols, cin * 8, n_low, n_low).t(), T::zero(), &mut dwp, cin * 8);
                unfold_parity_grad(&dwp, cin, parity, gb);
                let wp = parity_weights(block, cin, parity);
                gemm(T::one(), View::rm(&wp, c, cin * 8, cin * 8).t(), dp, T::zero(), &mut dcols, n_low);
                shifted_cols_adjoint_add(&dcols, cin, low, parity, &mut dlow);
            }
            carry = Some(dlow);
        }
        unreachable!("level 0 returns")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct (loop-based) upsample + convolution.
    fn conv_oracle(input: &[f64], cin: usize, low: usize, w: &Dense<f64>) -> Vec<f64> {
        let high = 2 * low;
        let n = high * high * high;
        let mut out = vec![0.0; w.out * n];
        for o in 0..w.out {
            for z in 0..high {
                for y in 0..high {
                    for x in 0..high {
                        let mut acc = w.bias(o);
                        for ci in 0..cin {
                            for kd in 0..3 {
                                for kh in 0..3 {
                                    for kw in 0..3 {
                                        let (sz, sy, sx) = (z as isize + kd - 1, y as isize + kh - 1, x as isize + kw - 1);
                                        let hi = high as isize;
                                        if sz < 0 || sy < 0 || sx < 0 || sz >= hi || sy >= hi || sx >= hi {
                                            continue;
                                        }
                                        let src = ((sz as usize / 2) * low + sy as usize / 2) * low + sx as usize / 2;
                                        let tap = ((kd * 3 + kh) * 3 + kw) as usize;
                                        acc += w.w[o * (w.inp + 1) + ci * 27 + tap] * input[ci * low * low * low + src];
                                    }
                                }
                            }
                        }
                        out[o * n + (z * high + y) * high + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn parity_convolution_matches_direct_loops() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (cin, cout, low) = (2, 3, 3);
        let mut w = Dense::<f64>::zeros(cout, cin * 27);
        w.init_uniform(&mut rng);
        let input: Vec<f64> = (0..cin * 27).map(|i| (i as f64 * 0.37).sin()).collect();
        let (out, _) = upconv_forward(&w, &input, cin, low);
        let oracle = conv_oracle(&input, cin, low, &w);
        for (a, b) in out.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_cols_adjoint() {
        // <S x, y> == <x, S^T y> for every parity
        let (cin, r) = (2, 3);
        let x: Vec<f64> = (0..cin * 27).map(|i| (i as f64 * 0.7).cos()).collect();
        for parity in 0..8 {
            let cols = shifted_cols(&x, cin, r, parity);
            let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.13 + parity as f64).sin()).collect();
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let mut back = vec![0.0; x.len()];
            shifted_cols_adjoint_add(&y, cin, r, parity, &mut back);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
