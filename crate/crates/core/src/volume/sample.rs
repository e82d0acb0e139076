//! Normalized coordinates, grid sampling and training point generation.
//!
//! Coordinates follow the align-corners convention: along every axis `-1` is
//! the center of the first voxel and `+1` the center of the last one. The
//! three components are ordered like the grid shape, `(d, h, w)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::grid::{VolumeGrid, VolumeKind};
use crate::error::{Error, Result};

/// A query location in normalized `[-1, 1]³` space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint(pub [f64; 3]);

impl NormalizedPoint {
    pub fn new(d: f64, h: f64, w: f64) -> Self {
        Self([d, h, w])
    }

    pub fn clamped(self) -> Self {
        Self(self.0.map(|c| c.clamp(-1.0, 1.0)))
    }
}

/// Continuous voxel index along an axis of `n` voxels, after clamping.
#[inline]
pub fn continuous_index(coord: f64, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    (coord.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64
}

/// Normalized coordinate of voxel `i` along an axis of `n` voxels.
#[inline]
pub fn voxel_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

/// The eight corner indices and blend weights of a trilinear lookup.
///
/// Corner `c` uses bit 2 for the `d` axis, bit 1 for `h` and bit 0 for `w`.
/// Weights are non-negative and sum to one.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

impl Stencil {
    pub fn new(shape: [usize; 3], p: NormalizedPoint) -> Self {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = shape[a];
            let u = continuous_index(p.0[a], n);
            let base = if n <= 1 { 0 } else { (u.floor() as usize).min(n - 2) };
            lo[a] = base;
            hi[a] = (base + 1).min(n - 1);
            frac[a] = if n <= 1 { 0.0 } else { u - base as f64 };
        }
        let mut index = [0usize; 8];
        let mut weight = [0.0f64; 8];
        for c in 0..8 {
            let pick = |a: usize, bit: usize| if c >> bit & 1 == 1 { (hi[a], frac[a]) } else { (lo[a], 1.0 - frac[a]) };
            let (d, wd) = pick(0, 2);
            let (h, wh) = pick(1, 1);
            let (w, ww) = pick(2, 0);
            index[c] = (d * shape[1] + h) * shape[2] + w;
            weight[c] = wd * wh * ww;
        }
        Self { index, weight }
    }
}

/// Trilinear interpolation of `grid` at `p`; points outside `[-1, 1]` clamp to the boundary.
pub fn trilinear_sample(grid: &VolumeGrid, p: NormalizedPoint) -> f64 {
    let st = Stencil::new(grid.shape(), p);
    let data = grid.data();
    st.index.iter().zip(st.weight.iter()).map(|(&i, &w)| w * data[i]).sum()
}

/// Label of the voxel whose center is nearest to `p` (clamp, then round per axis).
pub fn nearest_label(mask: &VolumeGrid, p: NormalizedPoint) -> Result<u8> {
    mask.require_kind(VolumeKind::Mask)?;
    let shape = mask.shape();
    let idx: [usize; 3] = std::array::from_fn(|a| {
        let u = continuous_index(p.0[a], shape[a]).round() as usize;
        u.min(shape[a] - 1)
    });
    Ok(u8::from(mask.get(idx[0], idx[1], idx[2]) > 0.5))
}

/// `resolution³` evenly spaced points spanning `[-1, 1]³`, in C order.
pub fn meshgrid(resolution: usize) -> Result<Vec<NormalizedPoint>> {
    if resolution < 2 {
        return Err(Error::InvalidResolution(resolution));
    }
    let axis: Vec<f64> = (0..resolution).map(|i| voxel_coord(i, resolution)).collect();
    let mut out = Vec::with_capacity(resolution.pow(3));
    for &d in &axis {
        for &h in &axis {
            for &w in &axis {
                out.push(NormalizedPoint([d, h, w]));
            }
        }
    }
    Ok(out)
}

/// Adds independent `N(0, sigma²)` noise to every coordinate.
pub fn jitter<R: Rng + ?Sized>(points: &mut [NormalizedPoint], sigma: f64, rng: &mut R) -> Result<()> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("jitter sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for p in points.iter_mut() {
        for c in p.0.iter_mut() {
            *c += normal.sample(rng);
        }
    }
    Ok(())
}
