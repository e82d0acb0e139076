//! The implicit occupancy model: latent codes, the convolutional feature
//! decoder and the MLP head, plus the training objective.

mod decoder;
mod dense;
mod head;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use decoder::{DecoderParams, DecoderTrace, FeatureGrid, FeaturePyramid};
pub use dense::Dense;
pub use head::{HeadParams, HeadTrace};
pub use head::{assemble_inputs, level_stencils, scatter_features};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::volume::{NormalizedPoint, Stencil};

/// Points evaluated per head pass when querying large grids.
const QUERY_CHUNK: usize = 32_768;
/// Probabilities are clamped to `[EPS, 1 - EPS]` before the logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Latent dimension `c`.
    pub latent_dim: usize,
    /// Channels of the `4³` seed volume.
    pub seed_channels: usize,
    /// Output channels of each upsampling block.
    pub block_channels: Vec<usize>,
    /// Channels `k` of every projected feature grid.
    pub feature_channels: usize,
    pub head_hidden: Vec<usize>,
    /// Feed the appearance value to the head (S+A) or not (S).
    pub use_appearance: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            seed_channels: 256,
            block_channels: vec![128, 64, 32],
            feature_channels: 16,
            head_hidden: vec![128, 128],
            use_appearance: true,
        }
    }
}

impl ArchConfig {
    /// A reduced network for the 20-case synthetic study on one CPU core.
    ///
    /// Only the 4³ level is kept: finer feature grids let each latent encode
    /// the voxel-scale distortions it should be repairing, while the coarse
    /// field leaves the exact boundary to the appearance input.
    pub fn desk() -> Self {
        Self {
            latent_dim: 8,
            seed_channels: 16,
            block_channels: vec![],
            feature_channels: 2,
            head_hidden: vec![16, 16],
            use_appearance: true,
        }
    }

    /// Number of pyramid levels `m`.
    pub fn levels(&self) -> usize {
        self.block_channels.len() + 1
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        decoder::SEED_RES << level
    }

    pub fn level_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.seed_channels
        } else {
            self.block_channels[level - 1]
        }
    }

    pub fn head_input_width(&self) -> usize {
        3 + self.levels() * self.feature_channels + usize::from(self.use_appearance)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.latent_dim > 0
            && self.seed_channels > 0
            && self.feature_channels > 0
            && self.block_channels.iter().all(|&c| c > 0)
            && self.head_hidden.iter().all(|&c| c > 0);
        if !positive {
            return Err(Error::InvalidConfig("architecture widths must be positive".into()));
        }
        if self.block_channels.len() > 5 {
            return Err(Error::InvalidConfig("at most 5 upsampling blocks (128³ features)".into()));
        }
        Ok(())
    }
}

/// How the latent penalty measures `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentNorm {
    /// `‖z‖₂`
    #[default]
    L2,
    /// `‖z‖₂²`
    SquaredL2,
}

/// Query points with their appearance values and (for training) labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointBatch {
    pub points: Vec<NormalizedPoint>,
    pub appearance: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PointBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One latent code per training shape, stored `[shape][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable<T> {
    pub dim: usize,
    pub codes: Vec<T>,
}

impl<T: Scalar> LatentTable<T> {
    pub fn len(&self) -> usize {
        self.codes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, i: usize) -> &[T] {
        &self.codes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn code_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.codes[i * self.dim..(i + 1) * self.dim]
    }
}

/// Shared network parameters (decoder and head).
#[derive(Debug, Clone, PartialEq)]
pub struct NearModel<T> {
    pub arch: ArchConfig,
    pub decoder: DecoderParams<T>,
    pub head: HeadParams<T>,
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub decoder: DecoderTrace<T>,
    pub stencils: Vec<Vec<Stencil>>,
    pub head: HeadTrace<T>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn logits(&self) -> &[T] {
        &self.head.logits
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.head.logits.iter().map(|&l| sigmoid(l)).collect()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Randomly initialised model and latent table; fully determined by `rng`.
pub fn init_model<T: Scalar, R: Rng + ?Sized>(
    arch: &ArchConfig,
    n_shapes: usize,
    rng: &mut R,
) -> Result<(NearModel<T>, LatentTable<T>)> {
    arch.validate()?;
    if n_shapes == 0 {
        return Err(Error::Empty("init_model needs at least one shape"));
    }
    let decoder = DecoderParams::init(arch, rng);
    let head = HeadParams::init(arch.head_input_width(), &arch.head_hidden, rng);
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let codes = (0..n_shapes * arch.latent_dim).map(|_| T::of(normal.sample(rng))).collect();
    Ok((
        NearModel {
            arch: arch.clone(),
            decoder,
            head,
        },
        LatentTable {
            dim: arch.latent_dim,
            codes,
        },
    ))
}

impl<T: Scalar> NearModel<T> {
    /// All-zero parameters with the shapes implied by `arch`.
    pub fn zeros(arch: &ArchConfig) -> Self {
        Self {
            arch: arch.clone(),
            decoder: DecoderParams::zeros(arch),
            head: HeadParams::zeros(arch.head_input_width(), &arch.head_hidden),
        }
    }

    /// Checkpoint names and tensors, in a fixed order.
    pub fn dense_layers(&self) -> Vec<(String, &Dense<T>)> {
        let mut v = self.decoder.dense_layers();
        v.extend(self.head.dense_layers());
        v
    }

    pub fn dense_layers_mut(&mut self) -> Vec<&mut Dense<T>> {
        let mut v = self.decoder.dense_layers_mut();
        v.extend(self.head.layers.iter_mut());
        v
    }

    fn check_latent(&self, z: &[T]) -> Result<()> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent has {} components, model expects {}",
                z.len(),
                self.arch.latent_dim
            )));
        }
        Ok(())
    }

    fn appearance<'a>(&self, points: &[NormalizedPoint], appearance: &'a [f64]) -> Result<Option<&'a [f64]>> {
        if !self.arch.use_appearance {
            return Ok(None);
        }
        if appearance.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} appearance values",
                points.len(),
                appearance.len()
            )));
        }
        Ok(Some(appearance))
    }

    pub fn decode_features(&self, z: &[T]) -> Result<FeaturePyramid<T>> {
        self.check_latent(z)?;
        Ok(self.decoder.forward(z).pyramid)
    }

    /// Full forward pass with every intermediate recorded.
    pub fn evaluate(&self, z: &[T], points: &[NormalizedPoint], appearance: &[f64]) -> Result<Evaluation<T>> {
        self.check_latent(z)?;
        let a = self.appearance(points, appearance)?;
        let decoder = self.decoder.forward(z);
        let stencils = level_stencils(&decoder.pyramid, points);
        let inputs = assemble_inputs(&decoder.pyramid, &stencils, points, a);
        let head = self.head.forward(inputs, points.len());
        Ok(Evaluation { decoder, stencils, head })
    }

    /// Pre-sigmoid outputs of the head for points sampled from `pyramid`.
    pub fn logits_from(&self, pyramid: &FeaturePyramid<T>, points: &[NormalizedPoint], appearance: &[f64]) -> Result<Vec<T>> {
        let a = self.appearance(points, appearance)?;
        let mut out = Vec::with_capacity(points.len());
        for (start, chunk) in (0..points.len()).step_by(QUERY_CHUNK).zip(points.chunks(QUERY_CHUNK)) {
            let stencils = level_stencils(pyramid, chunk);
            let a_chunk = a.map(|a| &a[start..start + chunk.len()]);
            let inputs = assemble_inputs(pyramid, &stencils, chunk, a_chunk);
            out.extend(self.head.forward(inputs, chunk.len()).logits);
        }
        Ok(out)
    }

    pub fn query_logits(&self, z: &[T], points: &[NormalizedPoint], appearance: &[f64]) -> Result<Vec<T>> {
        let pyramid = self.decode_features(z)?;
        self.logits_from(&pyramid, points, appearance)
    }

    /// Occupancy probabilities in `(0, 1)`, one per point, in input order.
    pub fn query(&self, z: &[T], points: &[NormalizedPoint], appearance: &[f64]) -> Result<Vec<T>> {
        Ok(self.query_logits(z, points, appearance)?.into_iter().map(sigmoid).collect())
    }
}

fn latent_norm<T: Scalar>(z: &[T]) -> f64 {
    z.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
}

/// Mean binary cross-entropy plus `lambda` times the latent norm.
pub fn loss<T: Scalar>(probabilities: &[T], labels: &[u8], z: &[T], lambda: f64, norm: LatentNorm) -> f64 {
    assert_eq!(probabilities.len(), labels.len(), "one label per probability");
    let bce = if probabilities.is_empty() {
        0.0
    } else {
        let sum: f64 = probabilities
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.f64().clamp(PROB_EPS, 1.0 - PROB_EPS);
                if y != 0 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        sum / probabilities.len() as f64
    };
    let n = latent_norm(z);
    let penalty = match norm {
        LatentNorm::L2 => n,
        LatentNorm::SquaredL2 => n * n,
    };
    bce + lambda * penalty
}

/// `d loss / d logit` per point (already divided by the batch size).
pub fn loss_logit_grad<T: Scalar>(logits: &[T], labels: &[u8]) -> Vec<T> {
    let n = T::of(logits.len().max(1) as f64);
    let (lo, hi) = (T::of(PROB_EPS), T::of(1.0 - PROB_EPS));
    logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            let p = sigmoid(l);
            if p < lo || p > hi {
                // the clamp is flat there
                T::zero()
            } else {
                (p - if y != 0 { T::one() } else { T::zero() }) / n
            }
        })
        .collect()
}

/// `d (lambda * penalty) / d z`; the unsquared norm has gradient 0 at `z = 0`.
pub fn latent_penalty_grad<T: Scalar>(z: &[T], lambda: f64, norm: LatentNorm) -> Vec<T> {
    match norm {
        LatentNorm::L2 => {
            let n = latent_norm(z);
            if n == 0.0 {
                vec![T::zero(); z.len()]
            } else {
                z.iter().map(|&v| T::of(lambda * v.f64() / n)).collect()
            }
        }
        LatentNorm::SquaredL2 => z.iter().map(|&v| T::of(2.0 * lambda * v.f64())).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{meshgrid, voxel_coord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            latent_dim: 8,
            seed_channels: 6,
            block_channels: vec![5, 4, 3],
            feature_channels: 3,
            head_hidden: vec![10, 10],
            use_appearance: true,
        }
    }

    fn points(n: usize, seed: u64) -> (Vec<NormalizedPoint>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = (0..n)
            .map(|_| NormalizedPoint::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let a = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        (p, a)
    }

    #[test]
    fn default_architecture_widths() {
        let arch = ArchConfig::default();
        assert_eq!(arch.levels(), 4);
        assert_eq!(arch.level_resolution(3), 32);
        assert_eq!(arch.head_input_width(), 68);
    }

    #[test]
    fn init_is_deterministic_and_sized() {
        let arch = small_arch();
        let a = init_model::<f64, _>(&arch, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_model::<f64, _>(&arch, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let (_, one) = init_model::<f64, _>(&arch, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(init_model::<f64, _>(&arch, 0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn latent_init_std() {
        let arch = ArchConfig {
            latent_dim: 100,
            ..small_arch()
        };
        let (_, lat) = init_model::<f64, _>(&arch, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let n = lat.codes.len() as f64;
        let mean = lat.codes.iter().sum::<f64>() / n;
        let std = (lat.codes.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.01).abs() < 0.0005, "std {std}");
    }

    #[test]
    fn pyramid_shapes_and_zero_weights() {
        let arch = small_arch();
        let (model, lat) = init_model::<f64, _>(&arch, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let pyr = model.decode_features(lat.code(0)).unwrap();
        let res: Vec<usize> = pyr.levels.iter().map(|l| l.res).collect();
        assert_eq!(res, vec![4, 8, 16, 32]);
        assert!(pyr.levels.iter().all(|l| l.channels == 3 && l.data.len() == l.res.pow(3) * 3));
        assert_eq!(pyr, model.decode_features(lat.code(0)).unwrap());
        let zero = NearModel::<f64>::zeros(&arch);
        let zp = zero.decode_features(lat.code(0)).unwrap();
        assert!(zp.levels.iter().all(|l| l.data.iter().all(|&v| v == 0.0)));
        assert!(model.decode_features(&[0.0; 3]).is_err());
    }

    #[test]
    fn grid_nodes_sample_exactly() {
        let arch = small_arch();
        let (model, lat) = init_model::<f64, _>(&arch, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let pyr = model.decode_features(lat.code(0)).unwrap();
        let top = pyr.levels.last().unwrap();
        let pts = meshgrid(32).unwrap();
        let st = level_stencils(&pyr, &pts);
        let rows = assemble_inputs(&pyr, &st, &pts, None);
        let width = 3 + pyr.width();
        let off = width - top.channels;
        for (i, row) in rows.chunks_exact(width).enumerate() {
            for c in 0..top.channels {
                assert!((row[off + c] - top.node(i)[c]).abs() < 1e-12);
            }
        }
        assert_eq!(voxel_coord(31, 32), 1.0);
    }

    #[test]
    fn outputs_in_unit_interval_and_permutation_equivariant() {
        let arch = small_arch();
        let (model, lat) = init_model::<f64, _>(&arch, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (p, a) = points(50, 6);
        let o = model.query(lat.code(0), &p, &a).unwrap();
        assert!(o.iter().all(|&v| v > 0.0 && v < 1.0));
        let perm: Vec<usize> = (0..50).rev().collect();
        let pp: Vec<_> = perm.iter().map(|&i| p[i]).collect();
        let ap: Vec<_> = perm.iter().map(|&i| a[i]).collect();
        let op = model.query(lat.code(0), &pp, &ap).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(op[j], o[i]);
        }
    }

    #[test]
    fn dead_appearance_column_matches_shape_only_model() {
        let arch = small_arch();
        let (mut sa, lat) = init_model::<f64, _>(&arch, 1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let width = arch.head_input_width();
        let first = &mut sa.head.layers[0];
        for o in 0..first.out {
            first.w[o * (width + 1) + width - 1] = 0.0;
        }
        // shape-only twin: same weights with the appearance column removed
        let s_arch = ArchConfig {
            use_appearance: false,
            ..arch.clone()
        };
        let mut s = NearModel::<f64>::zeros(&s_arch);
        s.decoder = sa.decoder.clone();
        s.head.layers = sa.head.layers.clone();
        let sw = s_arch.head_input_width();
        let l0 = &mut s.head.layers[0];
        *l0 = Dense::zeros(l0.out, sw);
        for o in 0..l0.out {
            for i in 0..sw {
                l0.w[o * (sw + 1) + i] = sa.head.layers[0].w[o * (width + 1) + i];
            }
            l0.w[o * (sw + 1) + sw] = sa.head.layers[0].bias(o);
        }
        let (p, a) = points(40, 8);
        let a2: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        let o1 = sa.query(lat.code(0), &p, &a).unwrap();
        let o2 = sa.query(lat.code(0), &p, &a2).unwrap();
        let o3 = s.query(lat.code(0), &p, &[]).unwrap();
        for i in 0..40 {
            assert_eq!(o1[i], o2[i]);
            assert!((o1[i] - o3[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_of_logits_reproduces_query() {
        let arch = small_arch();
        let (model, lat) = init_model::<f64, _>(&arch, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (p, a) = points(30, 10);
        let l = model.query_logits(lat.code(0), &p, &a).unwrap();
        let o = model.query(lat.code(0), &p, &a).unwrap();
        for (li, oi) in l.iter().zip(&o) {
            assert_eq!(sigmoid(*li), *oi);
        }
        let ev = model.evaluate(lat.code(0), &p, &a).unwrap();
        assert_eq!(ev.probabilities(), o);
    }

    #[test]
    fn loss_examples() {
        let z0 = [0.0f64; 4];
        assert!(loss(&[1.0f64; 5], &[1; 5], &z0, 0.01, LatentNorm::L2).abs() < 1e-6);
        let half = loss(&[0.5f64; 6], &[0, 1, 0, 1, 1, 0], &z0, 0.01, LatentNorm::L2);
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        let z = [2.0f64, 0.0, 0.0, 0.0];
        let l = loss(&[1.0f64, 0.0], &[1, 0], &z, 0.01, LatentNorm::L2);
        assert!((l - 0.02).abs() < 1e-6);
        let sq = loss(&[1.0f64, 0.0], &[1, 0], &z, 0.01, LatentNorm::SquaredL2);
        assert!((sq - 0.04).abs() < 1e-6);
        let perm = loss(&[0.2f64, 0.9, 0.4], &[0, 1, 1], &z, 0.01, LatentNorm::L2);
        let perm2 = loss(&[0.4f64, 0.2, 0.9], &[1, 0, 1], &z, 0.01, LatentNorm::L2);
        assert!((perm - perm2).abs() < 1e-15);
        assert_eq!(latent_penalty_grad(&z0, 0.01, LatentNorm::L2), vec![0.0; 4]);
    }
}
