//! Synthetic cases: a smooth blob made of overlapping rotated ellipsoids and a
//! CT-like appearance volume whose intensity edge sits on the blob surface.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, save_manifest, save_volume, CaseRecord};
use crate::error::{Error, Result};
use crate::volume::{filter_components_bits, label_components, nvol, squared_edt_bits, window_normalize, Keep, VolumeGrid, VolumeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Voxels per axis (spacing is 1 mm).
    pub resolution: usize,
    /// Inclusive range for the number of ellipsoids.
    pub ellipsoids: [usize; 2],
    /// Range of ellipsoid semi-axes, in mm.
    pub semi_axes_mm: [f64; 2],
    /// Maximum offset of each ellipsoid center from the blob center, per axis.
    pub spread_mm: f64,
    /// Maximum offset of the blob center from the volume center, per axis.
    pub center_jitter_mm: f64,
    pub hu_inside: f64,
    pub hu_outside: f64,
    /// Width of the logistic intensity ramp across the surface.
    pub edge_mm: f64,
    /// Standard deviation of the additive Gaussian texture.
    pub noise_hu: f64,
    /// Intensity window mapped to `[0, 1]`.
    pub window: [f64; 2],
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            ellipsoids: [2, 4],
            semi_axes_mm: [5.0, 12.0],
            spread_mm: 6.0,
            center_jitter_mm: 3.0,
            hu_inside: 100.0,
            hu_outside: -10.0,
            edge_mm: 1.0,
            noise_hu: 15.0,
            window: [-60.0, 140.0],
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.resolution < 8 {
            return bad("phantom resolution must be at least 8");
        }
        if self.ellipsoids[0] == 0 || self.ellipsoids[0] > self.ellipsoids[1] {
            return bad("ellipsoid count range must be ordered and positive");
        }
        let [a, b] = self.semi_axes_mm;
        if !(a > 0.0 && a <= b) {
            return bad("semi-axis range must be ordered and positive");
        }
        if !(self.edge_mm > 0.0) || !(self.noise_hu >= 0.0) || self.spread_mm < 0.0 || self.center_jitter_mm < 0.0 {
            return bad("edge_mm must be positive; noise and offsets non-negative");
        }
        if !(self.window[0] < self.window[1]) {
            return Err(Error::InvalidWindow {
                lo: self.window[0],
                hi: self.window[1],
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub appearance: VolumeGrid,
    pub mask: VolumeGrid,
}

struct Ellipsoid {
    center: [f64; 3],
    /// Rows are the ellipsoid's axes in volume coordinates.
    axes: [[f64; 3]; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut f = 0.0;
        for (axis, r) in self.axes.iter().zip(self.radii) {
            let q = axis[0] * d[0] + axis[1] * d[1] + axis[2] * d[2];
            f += (q / r) * (q / r);
        }
        f <= 1.0
    }
}

/// Rotation matrix of a uniformly random unit quaternion.
fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn blob_bits<R: Rng + ?Sized>(cfg: &PhantomConfig, rng: &mut R) -> Vec<bool> {
    let n = cfg.resolution;
    let mid = (n as f64 - 1.0) / 2.0;
    let center: [f64; 3] = std::array::from_fn(|_| mid + rng.random_range(-cfg.center_jitter_mm..=cfg.center_jitter_mm));
    let count = rng.random_range(cfg.ellipsoids[0]..=cfg.ellipsoids[1]);
    let parts: Vec<Ellipsoid> = (0..count)
        .map(|i| {
            let offset: [f64; 3] = if i == 0 {
                [0.0; 3]
            } else {
                std::array::from_fn(|_| rng.random_range(-cfg.spread_mm..=cfg.spread_mm))
            };
            Ellipsoid {
                center: std::array::from_fn(|a| center[a] + offset[a]),
                axes: random_rotation(rng),
                radii: std::array::from_fn(|_| rng.random_range(cfg.semi_axes_mm[0]..=cfg.semi_axes_mm[1])),
            }
        })
        .collect();
    let mut bits = vec![false; n * n * n];
    for (i, b) in bits.iter_mut().enumerate() {
        let p = [(i / (n * n)) as f64, ((i / n) % n) as f64, (i % n) as f64];
        *b = parts.iter().any(|e| e.contains(p));
    }
    filter_components_bits([n; 3], &bits, Keep::Largest)
}

/// One phantom drawn from `rng`.
pub fn make_phantom<R: Rng + ?Sized>(cfg: &PhantomConfig, rng: &mut R) -> Result<Phantom> {
    cfg.validate()?;
    let n = cfg.resolution;
    let shape = [n; 3];
    let spacing = [1.0; 3];
    let bits = blob_bits(cfg, rng);
    let (_, sizes) = label_components(shape, &bits);
    if sizes.len() != 1 {
        return Err(Error::NoForeground);
    }
    let outside = squared_edt_bits(shape, spacing, &bits).expect("non-empty blob");
    let inverse: Vec<bool> = bits.iter().map(|b| !b).collect();
    let inside = squared_edt_bits(shape, spacing, &inverse).ok_or(Error::InvalidConfig("blob fills the volume".into()))?;
    let noise = Normal::new(0.0, cfg.noise_hu).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let raw: Vec<f64> = bits
        .iter()
        .enumerate()
        .map(|(i, &fg)| {
            // signed distance to the surface half-way between voxel centers
            let s = if fg { 0.5 - inside[i].sqrt() } else { outside[i].sqrt() - 0.5 };
            let t = 1.0 / (1.0 + (s / cfg.edge_mm).exp());
            cfg.hu_outside + (cfg.hu_inside - cfg.hu_outside) * t + noise.sample(rng)
        })
        .collect();
    let raw = VolumeGrid::new(shape, spacing, VolumeKind::Appearance, raw)?;
    let mut appearance = window_normalize(&raw, cfg.window[0], cfg.window[1])?;
    nvol::quantize_f32(&mut appearance);
    Ok(Phantom {
        appearance,
        mask: VolumeGrid::from_bits(shape, spacing, &bits)?,
    })
}

/// Writes `n` phantoms (`case_000`, …) and `manifest.json` under `out_dir`.
/// Each case draws from its own seed derived from `seed` and its id.
pub fn make_phantoms(n: usize, cfg: &PhantomConfig, seed: u64, out_dir: &Path) -> Result<Vec<CaseRecord>> {
    if n == 0 {
        return Err(Error::Empty("need at least one phantom"));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let case_id = format!("case_{i:03}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &case_id));
        let ph = make_phantom(cfg, &mut rng)?;
        let appearance_path = out_dir.join(format!("{case_id}.appearance.json"));
        let mask_path = out_dir.join(format!("{case_id}.mask.json"));
        save_volume(&ph.appearance, &appearance_path)?;
        save_volume(&ph.mask, &mask_path)?;
        records.push(CaseRecord {
            case_id,
            appearance_path,
            mask_path,
            gt_mask_path: None,
            label: None,
        });
    }
    save_manifest(&out_dir.join("manifest.json"), &records)?;
    Ok(records)
}
