//! Binary morphology and connected components with 6-connectivity.
//!
//! The structuring element of radius `r` is the discrete L1 ball, i.e. every
//! voxel reachable in at most `r` face steps. Radius one is the center plus
//! its six face neighbors.

use std::collections::VecDeque;

use super::grid::{VolumeGrid, VolumeKind};
use crate::error::{Error, Result};

/// Calls `f` with the flat index of every in-bounds face neighbor of `[d, h, w]`.
#[inline]
pub(crate) fn for_each_neighbor(shape: [usize; 3], [d, h, w]: [usize; 3], mut f: impl FnMut(usize)) {
    let [nd, nh, nw] = shape;
    if d > 0 {
        f(((d - 1) * nh + h) * nw + w);
    }
    if d + 1 < nd {
        f(((d + 1) * nh + h) * nw + w);
    }
    if h > 0 {
        f((d * nh + h - 1) * nw + w);
    }
    if h + 1 < nh {
        f((d * nh + h + 1) * nw + w);
    }
    if w > 0 {
        f((d * nh + h) * nw + w - 1);
    }
    if w + 1 < nw {
        f((d * nh + h) * nw + w + 1);
    }
}

fn step(shape: [usize; 3], bits: &[bool], grow: bool) -> Vec<bool> {
    let [nd, nh, nw] = shape;
    let mut out = bits.to_vec();
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let i = (d * nh + h) * nw + w;
                // dilation switches background on next to foreground; erosion
                // switches foreground off next to background or the border
                if bits[i] != grow {
                    let mut hit = false;
                    let mut count = 0;
                    for_each_neighbor(shape, [d, h, w], |j| {
                        count += 1;
                        hit |= bits[j] == grow;
                    });
                    if grow && hit {
                        out[i] = true;
                    } else if !grow && (hit || count < 6) {
                        out[i] = false;
                    }
                }
            }
        }
    }
    out
}

/// Dilation of a boolean occupancy array. Voxels outside the grid are background.
pub fn dilate_bits(shape: [usize; 3], bits: &[bool], radius: usize) -> Vec<bool> {
    let mut cur = bits.to_vec();
    for _ in 0..radius {
        cur = step(shape, &cur, true);
    }
    cur
}

/// Erosion of a boolean occupancy array. Voxels outside the grid are background.
pub fn erode_bits(shape: [usize; 3], bits: &[bool], radius: usize) -> Vec<bool> {
    let mut cur = bits.to_vec();
    for _ in 0..radius {
        cur = step(shape, &cur, false);
    }
    cur
}

fn check_morph(mask: &VolumeGrid, radius: usize) -> Result<()> {
    mask.require_kind(VolumeKind::Mask)?;
    if radius == 0 {
        return Err(Error::InvalidConfig("morphology radius must be at least 1".into()));
    }
    Ok(())
}

pub fn dilate(mask: &VolumeGrid, radius: usize) -> Result<VolumeGrid> {
    check_morph(mask, radius)?;
    VolumeGrid::from_bits(mask.shape(), mask.spacing(), &dilate_bits(mask.shape(), &mask.bits(), radius))
}

pub fn erode(mask: &VolumeGrid, radius: usize) -> Result<VolumeGrid> {
    check_morph(mask, radius)?;
    VolumeGrid::from_bits(mask.shape(), mask.spacing(), &erode_bits(mask.shape(), &mask.bits(), radius))
}

/// Copies `bits` into a grid enlarged by `pad` background voxels on every side.
pub(crate) fn pad_bits(shape: [usize; 3], bits: &[bool], pad: usize) -> ([usize; 3], Vec<bool>) {
    let ps = shape.map(|n| n + 2 * pad);
    let mut out = vec![false; ps.iter().product()];
    for d in 0..shape[0] {
        for h in 0..shape[1] {
            let src = (d * shape[1] + h) * shape[2];
            let dst = ((d + pad) * ps[1] + h + pad) * ps[2] + pad;
            out[dst..dst + shape[2]].copy_from_slice(&bits[src..src + shape[2]]);
        }
    }
    (ps, out)
}

pub(crate) fn crop_bits(padded_shape: [usize; 3], bits: &[bool], pad: usize) -> Vec<bool> {
    let shape = padded_shape.map(|n| n - 2 * pad);
    let mut out = vec![false; shape.iter().product()];
    for d in 0..shape[0] {
        for h in 0..shape[1] {
            let dst = (d * shape[1] + h) * shape[2];
            let src = ((d + pad) * padded_shape[1] + h + pad) * padded_shape[2] + pad;
            out[dst..dst + shape[2]].copy_from_slice(&bits[src..src + shape[2]]);
        }
    }
    out
}

/// Closing (dilate, then erode) computed on a grid padded by `radius`, so the
/// result always contains the input even at the volume border.
pub fn closing_bits(shape: [usize; 3], bits: &[bool], radius: usize) -> Vec<bool> {
    let (ps, padded) = pad_bits(shape, bits, radius);
    let closed = erode_bits(ps, &dilate_bits(ps, &padded, radius), radius);
    crop_bits(ps, &closed, radius)
}

pub fn morphological_close(mask: &VolumeGrid, radius: usize) -> Result<VolumeGrid> {
    check_morph(mask, radius)?;
    VolumeGrid::from_bits(mask.shape(), mask.spacing(), &closing_bits(mask.shape(), &mask.bits(), radius))
}

/// Which connected components survive [`connected_components`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    /// The single largest component. Ties go to the component holding the
    /// smallest flat voxel index.
    Largest,
    /// Every component with at least this many voxels.
    MinSize(usize),
}

/// Labels 6-connected components. Labels start at 1 and follow the order of
/// each component's smallest flat index; background is 0. Returns the label
/// array and the size of every component (index `label - 1`).
pub fn label_components(shape: [usize; 3], bits: &[bool]) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; bits.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    let plane = shape[1] * shape[2];
    for seed in 0..bits.len() {
        if !bits[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[seed] = label;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let coords = [i / plane, (i / shape[2]) % shape[1], i % shape[2]];
            for_each_neighbor(shape, coords, |j| {
                if bits[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            });
        }
        sizes.push(size);
    }
    (labels, sizes)
}

pub fn filter_components_bits(shape: [usize; 3], bits: &[bool], keep: Keep) -> Vec<bool> {
    let (labels, sizes) = label_components(shape, bits);
    if sizes.is_empty() {
        return bits.to_vec();
    }
    let kept: Vec<bool> = match keep {
        Keep::Largest => {
            let mut best = 0;
            for (i, &s) in sizes.iter().enumerate() {
                if s > sizes[best] {
                    best = i;
                }
            }
            (0..sizes.len()).map(|i| i == best).collect()
        }
        Keep::MinSize(k) => sizes.iter().map(|&s| s >= k).collect(),
    };
    labels.iter().map(|&l| l != 0 && kept[l as usize - 1]).collect()
}

pub fn connected_components(mask: &VolumeGrid, keep: Keep) -> Result<VolumeGrid> {
    mask.require_kind(VolumeKind::Mask)?;
    VolumeGrid::from_bits(mask.shape(), mask.spacing(), &filter_components_bits(mask.shape(), &mask.bits(), keep))
}

/// Foreground voxels with at least one 6-neighbor in the background; the
/// volume border counts as background.
pub fn boundary_bits(shape: [usize; 3], bits: &[bool]) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    let plane = shape[1] * shape[2];
    for (i, &b) in bits.iter().enumerate() {
        if !b {
            continue;
        }
        let coords = [i / plane, (i / shape[2]) % shape[1], i % shape[2]];
        let mut count = 0;
        let mut open = false;
        for_each_neighbor(shape, coords, |j| {
            count += 1;
            if !bits[j] {
                open = true;
            }
        });
        out[i] = open || count < 6;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FACE_OFFSETS: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

    fn cube(shape: [usize; 3], lo: usize, hi: usize) -> Vec<bool> {
        let mut bits = vec![false; shape.iter().product()];
        for d in lo..hi {
            for h in lo..hi {
                for w in lo..hi {
                    bits[(d * shape[1] + h) * shape[2] + w] = true;
                }
            }
        }
        bits
    }

    fn single(shape: [usize; 3], at: [usize; 3]) -> Vec<bool> {
        let mut bits = vec![false; shape.iter().product()];
        bits[(at[0] * shape[1] + at[1]) * shape[2] + at[2]] = true;
        bits
    }

    #[test]
    fn dilate_single_voxel() {
        let s = [5, 5, 5];
        let out = dilate_bits(s, &single(s, [2, 2, 2]), 1);
        let on: Vec<usize> = (0..125).filter(|&i| out[i]).collect();
        // enumerate the 6-neighborhood directly
        let mut expected = vec![(2 * 5 + 2) * 5 + 2];
        for o in FACE_OFFSETS {
            let p = [2 + o[0], 2 + o[1], 2 + o[2]];
            expected.push(((p[0] * 5 + p[1]) * 5 + p[2]) as usize);
        }
        expected.sort();
        assert_eq!(on, expected);
        assert_eq!(dilate_bits(s, &single(s, [2, 2, 2]), 2).iter().filter(|&&b| b).count(), 25);
    }

    #[test]
    fn erode_single_voxel_vanishes() {
        let s = [5, 5, 5];
        assert!(erode_bits(s, &single(s, [2, 2, 2]), 1).iter().all(|&b| !b));
    }

    #[test]
    fn opening_of_cube_is_contained() {
        let s = [14, 14, 14];
        let c = cube(s, 2, 12);
        let opened = dilate_bits(s, &erode_bits(s, &c, 1), 1);
        assert!(opened.iter().zip(&c).all(|(&o, &b)| !o || b));
        assert!(opened.iter().filter(|&&b| b).count() < c.iter().filter(|&&b| b).count());
    }

    #[test]
    fn closing_cases() {
        let s = [12, 12, 12];
        let c = cube(s, 2, 10);
        assert_eq!(closing_bits(s, &c, 1), c);

        let mut holed = c.clone();
        holed[(5 * 12 + 5) * 12 + 5] = false;
        assert_eq!(closing_bits(s, &holed, 1), c);

        let empty = vec![false; 12 * 12 * 12];
        assert_eq!(closing_bits(s, &empty, 2), empty);
    }

    #[test]
    fn closing_contains_border_touching_input() {
        let s = [6, 6, 6];
        let c = cube(s, 0, 3);
        let closed = closing_bits(s, &c, 2);
        assert!(c.iter().zip(&closed).all(|(&b, &o)| !b || o));
    }

    #[test]
    fn components_keep_largest() {
        let s = [20, 20, 20];
        let mut bits = vec![false; 8000];
        // blob of 100 voxels: 5x5x4 block
        for d in 10..15 {
            for h in 10..15 {
                for w in 10..14 {
                    bits[(d * 20 + h) * 20 + w] = true;
                }
            }
        }
        // blob of 3 voxels
        for w in 0..3 {
            bits[(1 * 20 + 1) * 20 + w] = true;
        }
        let (_, sizes) = label_components(s, &bits);
        assert_eq!(sizes, vec![3, 100]);
        let kept = filter_components_bits(s, &bits, Keep::Largest);
        assert_eq!(kept.iter().filter(|&&b| b).count(), 100);
        assert!(!kept[(1 * 20 + 1) * 20]);
        let min = filter_components_bits(s, &bits, Keep::MinSize(3));
        assert_eq!(min, bits);
    }

    #[test]
    fn components_tie_break_and_trivial() {
        let s = [4, 4, 4];
        let mut bits = single(s, [0, 0, 0]);
        bits[63] = true;
        let kept = filter_components_bits(s, &bits, Keep::Largest);
        assert!(kept[0] && !kept[63]);

        let blob = cube(s, 1, 3);
        assert_eq!(filter_components_bits(s, &blob, Keep::Largest), blob);
        let empty = vec![false; 64];
        assert_eq!(filter_components_bits(s, &empty, Keep::Largest), empty);
    }

    #[test]
    fn boundary_of_cube_is_its_shell() {
        let s = [7, 7, 7];
        let c = cube(s, 1, 6);
        let b = boundary_bits(s, &c);
        assert_eq!(b.iter().filter(|&&x| x).count(), 125 - 27);
        let full = vec![true; 27];
        assert_eq!(boundary_bits([3, 3, 3], &full).iter().filter(|&&x| x).count(), 26);
    }

    #[test]
    fn morph_rejects_bad_input() {
        let m = VolumeGrid::zeros([3, 3, 3], [1.0; 3], VolumeKind::Mask);
        assert!(dilate(&m, 0).is_err());
        let a = VolumeGrid::zeros([3, 3, 3], [1.0; 3], VolumeKind::Appearance);
        assert!(erode(&a, 1).is_err());
        assert!(connected_components(&a, Keep::Largest).is_err());
    }

    fn interior_mask() -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(prop::bool::weighted(0.45), 6 * 6 * 6).prop_map(|inner| {
            let (_, padded) = pad_bits([6, 6, 6], &inner, 2);
            padded
        })
    }

    proptest! {
        #[test]
        fn erosion_is_dual_to_dilation(bits in interior_mask(), r in 1usize..3) {
            let s = [10, 10, 10];
            let complement: Vec<bool> = bits.iter().map(|b| !b).collect();
            let dual: Vec<bool> = dilate_bits(s, &complement, r).iter().map(|b| !b).collect();
            let eroded = erode_bits(s, &bits, r);
            // away from the border both routes agree
            for d in r..10 - r {
                for h in r..10 - r {
                    for w in r..10 - r {
                        let i = (d * 10 + h) * 10 + w;
                        prop_assert_eq!(eroded[i], dual[i]);
                    }
                }
            }
        }

        #[test]
        fn closing_is_extensive_and_idempotent(bits in prop::collection::vec(prop::bool::weighted(0.4), 8 * 8 * 8), r in 1usize..3) {
            let s = [8, 8, 8];
            let once = closing_bits(s, &bits, r);
            prop_assert!(bits.iter().zip(&once).all(|(&b, &o)| !b || o));
            let (ps, padded) = pad_bits(s, &bits, 2 * r);
            let a = closing_bits(ps, &padded, r);
            prop_assert_eq!(closing_bits(ps, &a, r), a);
        }
    }
}
