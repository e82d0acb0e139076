//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher), run once per axis on squared distances with the axis
//! spacing folded into the parabola width.

use super::grid::{VolumeGrid, VolumeKind};
use crate::error::{Error, Result};

/// One 1D pass: `out[p] = min_q f[q] + weight * (p - q)²`.
fn envelope_1d(f: &[f64], weight: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // first finite sample starts the envelope
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.fill(f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let r = v[k];
            let rf = r as f64;
            let s = ((f[q] + weight * qf * qf) - (f[r] + weight * rf * rf)) / (2.0 * weight * (qf - rf));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates from -inf
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while z[k + 1] < pf {
            k += 1;
        }
        let r = v[k] as f64;
        *o = weight * (pf - r) * (pf - r) + f[v[k]];
    }
}

/// Squared distances (mm²) from every voxel to the nearest `true` voxel, or
/// `None` if there is no such voxel.
pub fn squared_edt_bits(shape: [usize; 3], spacing: [f64; 3], bits: &[bool]) -> Option<Vec<f64>> {
    if !bits.iter().any(|&b| b) {
        return None;
    }
    let mut dist: Vec<f64> = bits.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let longest = *shape.iter().max().unwrap();
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    let strides = [shape[1] * shape[2], shape[2], 1];
    for axis in [2usize, 1, 0] {
        let n = shape[axis];
        let stride = strides[axis];
        let weight = spacing[axis] * spacing[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..shape[others[0]] {
            for j in 0..shape[others[1]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                for t in 0..n {
                    line[t] = dist[base + t * stride];
                }
                envelope_1d(&line[..n], weight, &mut out[..n], &mut v, &mut z);
                for t in 0..n {
                    dist[base + t * stride] = out[t];
                }
            }
        }
    }
    Some(dist)
}

/// Distance in millimeters from each voxel center to the nearest foreground voxel center.
pub fn edt(mask: &VolumeGrid) -> Result<VolumeGrid> {
    mask.require_kind(VolumeKind::Mask)?;
    let sq = squared_edt_bits(mask.shape(), mask.spacing(), &mask.bits()).ok_or(Error::NoForeground)?;
    VolumeGrid::new(mask.shape(), mask.spacing(), VolumeKind::Distance, sq.into_iter().map(f64::sqrt).collect())
}
