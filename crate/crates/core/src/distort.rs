//! Synthetic annotation errors: boundary cubes, a global dilation or erosion,
//! and salt-and-pepper flips, rejection-sampled into a target Dice band.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::dsc_bits;
use crate::volume::{boundary_bits, dilate_bits, erode_bits, VolumeGrid, VolumeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionConfig {
    /// Inclusive range for the number of cubes.
    pub n_cubes_range: [usize; 2],
    /// Inclusive range for the cube side, in voxels.
    pub cube_side_range: [usize; 2],
    /// Probability that a cube is added rather than cut out.
    pub p_add: f64,
    /// Radii for the global morphology step; empty disables it.
    pub morph_radius_choices: Vec<usize>,
    /// Probability of dilation rather than erosion.
    pub p_dilate: f64,
    /// Flip probability inside the padded foreground bounding box.
    pub salt_pepper_density: f64,
    /// Accepted Dice interval, inclusive at both ends.
    pub dice_band: [f64; 2],
    pub max_attempts: usize,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            n_cubes_range: [3, 8],
            cube_side_range: [4, 12],
            p_add: 0.5,
            morph_radius_choices: vec![1, 2],
            p_dilate: 0.5,
            salt_pepper_density: 0.001,
            dice_band: [0.65, 0.75],
            max_attempts: 100,
        }
    }
}

impl DistortionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.n_cubes_range[0] > self.n_cubes_range[1] {
            return bad("n_cubes_range must be ordered");
        }
        if self.cube_side_range[0] == 0 || self.cube_side_range[0] > self.cube_side_range[1] {
            return bad("cube_side_range must be ordered and positive");
        }
        if !(0.0..=1.0).contains(&self.p_add) || !(0.0..=1.0).contains(&self.p_dilate) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.salt_pepper_density) {
            return bad("salt_pepper_density must lie in [0, 1]");
        }
        if self.morph_radius_choices.contains(&0) {
            return bad("morphology radii must be positive");
        }
        let [lo, hi] = self.dice_band;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("dice_band must satisfy 0 <= lo < hi <= 1");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        Ok(())
    }

    /// Reads a config from JSON (`.json`) or TOML (anything else).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Adds (`add = true`) or removes the axis-aligned cube of side `side` whose
/// lowest corner is `center - side / 2`, clipped to the grid.
pub fn apply_cube(shape: [usize; 3], bits: &mut [bool], center: [usize; 3], side: usize, add: bool) {
    let lo: [usize; 3] = std::array::from_fn(|a| center[a].saturating_sub(side / 2));
    let hi: [usize; 3] = std::array::from_fn(|a| (center[a] + side - side / 2).min(shape[a]));
    for d in lo[0]..hi[0] {
        for h in lo[1]..hi[1] {
            for w in lo[2]..hi[2] {
                bits[(d * shape[1] + h) * shape[2] + w] = add;
            }
        }
    }
}

fn add_cut_cubes_bits<R: Rng + ?Sized>(shape: [usize; 3], bits: &[bool], cfg: &DistortionConfig, rng: &mut R) -> Vec<bool> {
    let boundary: Vec<usize> = boundary_bits(shape, bits)
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    let mut out = bits.to_vec();
    let n = rng.random_range(cfg.n_cubes_range[0]..=cfg.n_cubes_range[1]);
    let plane = shape[1] * shape[2];
    for _ in 0..n {
        let i = *boundary.choose(rng).expect("non-empty boundary");
        let center = [i / plane, (i / shape[2]) % shape[1], i % shape[2]];
        let side = rng.random_range(cfg.cube_side_range[0]..=cfg.cube_side_range[1]);
        let add = rng.random_bool(cfg.p_add);
        apply_cube(shape, &mut out, center, side, add);
    }
    out
}

fn require_foreground(mask: &VolumeGrid) -> Result<()> {
    mask.require_kind(VolumeKind::Mask)?;
    if mask.count_foreground() == 0 {
        return Err(Error::NoForeground);
    }
    Ok(())
}

/// Adds or cuts out cubes centered on boundary voxels of `mask`.
pub fn add_cut_cubes<R: Rng + ?Sized>(mask: &VolumeGrid, cfg: &DistortionConfig, rng: &mut R) -> Result<VolumeGrid> {
    require_foreground(mask)?;
    let bits = add_cut_cubes_bits(mask.shape(), &mask.bits(), cfg, rng);
    VolumeGrid::from_bits(mask.shape(), mask.spacing(), &bits)
}

/// Inclusive bounding box of the foreground, grown by `pad` and clipped to the grid.
pub fn padded_bbox(shape: [usize; 3], bits: &[bool], pad: usize) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let plane = shape[1] * shape[2];
    let mut any = false;
    for (i, &b) in bits.iter().enumerate() {
        if b {
            any = true;
            let c = [i / plane, (i / shape[2]) % shape[1], i % shape[2]];
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    any.then(|| {
        (
            lo.map(|x| x.saturating_sub(pad)),
            std::array::from_fn(|a| (hi[a] + pad).min(shape[a] - 1)),
        )
    })
}

fn salt_pepper_bits<R: Rng + ?Sized>(shape: [usize; 3], bits: &mut [bool], density: f64, rng: &mut R) {
    let Some((lo, hi)) = padded_bbox(shape, bits, 4) else {
        return;
    };
    for d in lo[0]..=hi[0] {
        for h in lo[1]..=hi[1] {
            for w in lo[2]..=hi[2] {
                if rng.random_bool(density) {
                    let i = (d * shape[1] + h) * shape[2] + w;
                    bits[i] = !bits[i];
                }
            }
        }
    }
}

/// Flips each voxel of the foreground bounding box (padded by 4) with probability `density`.
pub fn salt_pepper<R: Rng + ?Sized>(mask: &VolumeGrid, density: f64, rng: &mut R) -> Result<VolumeGrid> {
    mask.require_kind(VolumeKind::Mask)?;
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidConfig(format!("density must lie in [0, 1], got {density}")));
    }
    let mut bits = mask.bits();
    salt_pepper_bits(mask.shape(), &mut bits, density, rng);
    VolumeGrid::from_bits(mask.shape(), mask.spacing(), &bits)
}

/// An accepted distortion.
#[derive(Debug, Clone)]
pub struct Distortion {
    pub mask: VolumeGrid,
    pub dice: f64,
    pub attempts: usize,
}

/// Runs cubes, morphology and noise, redrawing everything until the Dice
/// against `mask` falls inside `cfg.dice_band`.
pub fn synthesize_distortion<R: Rng + ?Sized>(mask: &VolumeGrid, cfg: &DistortionConfig, rng: &mut R) -> Result<Distortion> {
    cfg.validate()?;
    require_foreground(mask)?;
    let shape = mask.shape();
    let gold = mask.bits();
    let [lo, hi] = cfg.dice_band;
    let mut best: Option<(f64, Vec<bool>)> = None;
    for attempt in 1..=cfg.max_attempts {
        let mut bits = add_cut_cubes_bits(shape, &gold, cfg, rng);
        if let Some(&radius) = cfg.morph_radius_choices.choose(rng) {
            bits = if rng.random_bool(cfg.p_dilate) {
                dilate_bits(shape, &bits, radius)
            } else {
                erode_bits(shape, &bits, radius)
            };
        }
        salt_pepper_bits(shape, &mut bits, cfg.salt_pepper_density, rng);
        let dice = dsc_bits(&bits, &gold);
        if (lo..=hi).contains(&dice) {
            return Ok(Distortion {
                mask: VolumeGrid::from_bits(shape, mask.spacing(), &bits)?,
                dice,
                attempts: attempt,
            });
        }
        let gap = if dice < lo { lo - dice } else { dice - hi };
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, bits));
        }
    }
    let (_, bits) = best.expect("at least one attempt");
    let best_dice = dsc_bits(&bits, &gold);
    Err(Error::BandUnreachable {
        attempts: cfg.max_attempts,
        best_dice,
        best_mask: Box::new(VolumeGrid::from_bits(shape, mask.spacing(), &bits)?),
    })
}
