use crate::error::{Error, Result};

/// What the scalars in a [`VolumeGrid`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VolumeKind {
    /// Normalized image intensity in `[0, 1]`.
    Appearance,
    /// Binary occupancy, every value is `0.0` or `1.0`.
    Mask,
    /// Non-negative distances in millimeters.
    Distance,
}

impl VolumeKind {
    pub fn name(self) -> &'static str {
        match self {
            VolumeKind::Appearance => "appearance",
            VolumeKind::Mask => "mask",
            VolumeKind::Distance => "distance",
        }
    }
}

/// Dense 3D scalar grid stored in C order: `index = (d * H + h) * W + w`.
///
/// Raw (un-normalized) intensities are carried with kind `Appearance` until
/// they pass through [`window_normalize`]; the range invariant is checked by
/// [`VolumeGrid::validate`], not on every construction.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    shape: [usize; 3],
    spacing: [f64; 3],
    kind: VolumeKind,
    data: Vec<f64>,
}

impl VolumeGrid {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], kind: VolumeKind, data: Vec<f64>) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Self {
            shape,
            spacing,
            kind,
            data,
        })
    }

    pub fn zeros(shape: [usize; 3], spacing: [f64; 3], kind: VolumeKind) -> Self {
        let n = shape.iter().product();
        Self::new(shape, spacing, kind, vec![0.0; n]).expect("valid zero grid")
    }

    /// Builds a mask from a boolean occupancy array.
    pub fn from_bits(shape: [usize; 3], spacing: [f64; 3], bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(shape, spacing, VolumeKind::Mask, data)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.shape[1] + h) * self.shape[2] + w
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let w = index % self.shape[2];
        let h = (index / self.shape[2]) % self.shape[1];
        let d = index / (self.shape[1] * self.shape[2]);
        [d, h, w]
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(d, h, w)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, h: usize, w: usize, value: f64) {
        let i = self.index(d, h, w);
        self.data[i] = value;
    }

    /// Foreground test used for masks: any value above one half.
    pub fn bits(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v > 0.5).collect()
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn with_kind(mut self, kind: VolumeKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn require_kind(&self, kind: VolumeKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: kind.name(),
                found: self.kind.name(),
            })
        }
    }

    pub fn require_same_shape(&self, other: &VolumeGrid) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Checks the value-range invariant for the grid's kind.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            VolumeKind::Appearance => self.data.iter().all(|v| (0.0..=1.0).contains(v)),
            VolumeKind::Mask => self.data.iter().all(|&v| v == 0.0 || v == 1.0),
            VolumeKind::Distance => self.data.iter().all(|&v| v >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("values out of range for {} grid", self.kind.name())))
        }
    }
}

/// Clips raw intensities to `[lo, hi]` and rescales them linearly to `[0, 1]`.
pub fn window_normalize(raw: &VolumeGrid, lo: f64, hi: f64) -> Result<VolumeGrid> {
    if !(lo < hi) {
        return Err(Error::InvalidWindow { lo, hi });
    }
    let width = hi - lo;
    let data = raw.data.iter().map(|&v| ((v - lo) / width).clamp(0.0, 1.0)).collect();
    VolumeGrid::new(raw.shape, raw.spacing, VolumeKind::Appearance, data)
}

/// Extracts a `size³` cube centered on `center`, zero-padding outside the source.
///
/// For even sizes the cube spans `center - size/2 .. center + size/2`.
pub fn center_crop(vol: &VolumeGrid, center: [usize; 3], size: usize) -> Result<VolumeGrid> {
    if size == 0 {
        return Err(Error::InvalidConfig("crop size must be positive".into()));
    }
    let half = (size / 2) as isize;
    let origin: [isize; 3] = std::array::from_fn(|a| center[a] as isize - half);
    let mut out = VolumeGrid::zeros([size; 3], vol.spacing, vol.kind);
    for d in 0..size {
        let sd = origin[0] + d as isize;
        if sd < 0 || sd >= vol.shape[0] as isize {
            continue;
        }
        for h in 0..size {
            let sh = origin[1] + h as isize;
            if sh < 0 || sh >= vol.shape[1] as isize {
                continue;
            }
            for w in 0..size {
                let sw = origin[2] + w as isize;
                if sw < 0 || sw >= vol.shape[2] as isize {
                    continue;
                }
                let v = vol.get(sd as usize, sh as usize, sw as usize);
                out.set(d, h, w, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3]) -> VolumeGrid {
        let n = shape.iter().product::<usize>();
        VolumeGrid::new(shape, [1.0; 3], VolumeKind::Appearance, (0..n).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn window_endpoints_and_midpoint() {
        let raw = VolumeGrid::new([1, 1, 5], [1.0; 3], VolumeKind::Appearance, vec![-60.0, 140.0, 40.0, -1000.0, 900.0]).unwrap();
        let out = window_normalize(&raw, -60.0, 140.0).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 0.5, 0.0, 1.0]);
        out.validate().unwrap();
    }

    #[test]
    fn window_rejects_inverted_bounds() {
        let raw = ramp([2, 2, 2]);
        assert!(matches!(window_normalize(&raw, 10.0, 10.0), Err(Error::InvalidWindow { .. })));
        assert!(matches!(window_normalize(&raw, 11.0, 10.0), Err(Error::InvalidWindow { .. })));
    }

    #[test]
    fn crop_center_block() {
        let vol = ramp([8, 8, 8]);
        let out = center_crop(&vol, [4, 4, 4], 4).unwrap();
        for d in 0..4 {
            for h in 0..4 {
                for w in 0..4 {
                    assert_eq!(out.get(d, h, w), vol.get(d + 2, h + 2, w + 2));
                }
            }
        }
    }

    #[test]
    fn crop_at_corner_keeps_one_octant() {
        let vol = ramp([8, 8, 8]);
        let out = center_crop(&vol, [0, 0, 0], 4).unwrap();
        let mut nonzero = 0;
        for d in 0..4 {
            for h in 0..4 {
                for w in 0..4 {
                    let v = out.get(d, h, w);
                    if d >= 2 && h >= 2 && w >= 2 {
                        assert_eq!(v, vol.get(d - 2, h - 2, w - 2));
                        nonzero += 1;
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
        assert_eq!(nonzero, 8);
    }

    #[test]
    fn full_size_crop_is_a_copy() {
        let vol = ramp([6, 6, 6]);
        let out = center_crop(&vol, [3, 3, 3], 6).unwrap();
        assert_eq!(out, vol);
    }

    #[test]
    fn new_checks_length_and_spacing() {
        assert!(VolumeGrid::new([2, 2, 2], [1.0; 3], VolumeKind::Mask, vec![0.0; 7]).is_err());
        assert!(VolumeGrid::new([2, 2, 2], [1.0, 0.0, 1.0], VolumeKind::Mask, vec![0.0; 8]).is_err());
    }

    #[test]
    fn index_coords_round_trip() {
        let vol = ramp([3, 4, 5]);
        for i in 0..vol.len() {
            let [d, h, w] = vol.coords(i);
            assert_eq!(vol.index(d, h, w), i);
        }
    }
}
