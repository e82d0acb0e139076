//! Browser bindings: draw a phantom, distort its mask, smooth it back, and
//! compare surface agreement across tolerances.

use near_core::distort::{synthesize_distortion, DistortionConfig};
use near_core::metrics::{dsc, nsd};
use near_core::pipeline::{baseline_smooth, derive_seed, make_phantom, PhantomConfig};
use near_core::volume::{boundary_bits, VolumeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: near_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One phantom with its gold mask, a distorted copy and an optional smoothed copy.
#[wasm_bindgen]
pub struct Demo {
    appearance: VolumeGrid,
    gold: VolumeGrid,
    distorted: VolumeGrid,
    smoothed: Option<VolumeGrid>,
    distortion_dice: f64,
}

#[wasm_bindgen]
impl Demo {
    /// Draws a phantom of `resolution`³ voxels and distorts it with the default settings.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, resolution: usize) -> Result<Demo, JsError> {
        let cfg = PhantomConfig {
            resolution,
            ..PhantomConfig::default()
        };
        let seed = u64::from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "phantom"));
        let ph = make_phantom(&cfg, &mut rng).map_err(js_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "distort"));
        let d = synthesize_distortion(&ph.mask, &DistortionConfig::default(), &mut rng).map_err(js_err)?;
        Ok(Demo {
            appearance: ph.appearance,
            gold: ph.mask,
            distorted: d.mask,
            smoothed: None,
            distortion_dice: d.dice,
        })
    }

    pub fn resolution(&self) -> usize {
        self.gold.shape()[0]
    }

    #[wasm_bindgen(getter)]
    pub fn distortion_dice(&self) -> f64 {
        self.distortion_dice
    }

    /// Closing with `radius` plus largest component; returns the Dice of the result against gold.
    pub fn smooth(&mut self, radius: usize) -> Result<f64, JsError> {
        let s = baseline_smooth(&self.distorted, radius).map_err(js_err)?;
        let d = dsc(&s, &self.gold).map_err(js_err)?;
        self.smoothed = Some(s);
        Ok(d)
    }

    /// NSD against gold at `steps` tolerances evenly spaced on `[0, max_tau]`,
    /// laid out as `[tau, distorted, smoothed]` triples (smoothed is NaN before `smooth`).
    pub fn nsd_curve(&self, max_tau: f64, steps: usize) -> Result<Vec<f64>, JsError> {
        let steps = steps.max(2);
        let mut out = Vec::with_capacity(3 * steps);
        for i in 0..steps {
            let tau = max_tau * i as f64 / (steps - 1) as f64;
            out.push(tau);
            out.push(nsd(&self.distorted, &self.gold, tau).map_err(js_err)?);
            out.push(match &self.smoothed {
                Some(s) => nsd(s, &self.gold, tau).map_err(js_err)?,
                None => f64::NAN,
            });
        }
        Ok(out)
    }

    /// RGBA pixels of axial slice `d`: appearance in gray, gold contour in
    /// yellow, distorted in red, smoothed in blue.
    pub fn slice_rgba(&self, d: usize) -> Vec<u8> {
        let [n, h, w] = self.gold.shape();
        let d = d.min(n - 1);
        let edges = |g: &VolumeGrid| boundary_bits(g.shape(), &g.bits());
        let gold = edges(&self.gold);
        let distorted = edges(&self.distorted);
        let smoothed = self.smoothed.as_ref().map(edges);
        let mut px = Vec::with_capacity(h * w * 4);
        for y in 0..h {
            for x in 0..w {
                let i = self.gold.index(d, y, x);
                let g = (self.appearance.data()[i].clamp(0.0, 1.0) * 255.0) as u8;
                let rgb = if smoothed.as_ref().is_some_and(|s| s[i]) {
                    [60, 140, 255]
                } else if distorted[i] {
                    [230, 40, 40]
                } else if gold[i] {
                    [250, 220, 40]
                } else {
                    [g, g, g]
                };
                px.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
            }
        }
        px
    }
}
