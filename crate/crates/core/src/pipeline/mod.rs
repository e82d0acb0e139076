//! Dataset manifests and the end-to-end refinement workflow.

mod experiment;
mod phantom;
mod repair;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use experiment::{
    baseline_dataset, distort_dataset, evaluate_method, repair_dataset, run_experiment, ExperimentConfig, ExperimentReport, MethodSummary, VariantConfig};
pub use phantom::{make_phantom, make_phantoms, Phantom, PhantomConfig};
pub use repair::{baseline_smooth, baseline_sweep, export_mesh, repair, threshold_logits};

use crate::error::{Error, Result};
use crate::train::TrainCase;
use crate::volume::{nvol, VolumeGrid, VolumeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseLabel {
    Normal,
    Abnormal,
}

/// One case of a dataset manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub case_id: String,
    pub appearance_path: PathBuf,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<CaseLabel>,
}

impl CaseRecord {
    fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.appearance_path);
        fix(&mut self.mask_path);
        if let Some(g) = &mut self.gt_mask_path {
            fix(g);
        }
        self
    }

    pub fn load_appearance(&self) -> Result<VolumeGrid> {
        let g = nvol::load(&self.appearance_path)?;
        g.require_kind(VolumeKind::Appearance)?;
        Ok(g)
    }

    pub fn load_mask(&self) -> Result<VolumeGrid> {
        let g = nvol::load(&self.mask_path)?;
        g.require_kind(VolumeKind::Mask)?;
        Ok(g)
    }

    pub fn load_gt(&self) -> Result<Option<VolumeGrid>> {
        self.gt_mask_path
            .as_ref()
            .map(|p| {
                let g = nvol::load(p)?;
                g.require_kind(VolumeKind::Mask)?;
                Ok(g)
            })
            .transpose()
    }

    /// Appearance plus the mask to fit, checked for equal shapes.
    pub fn load_train_case(&self) -> Result<TrainCase> {
        let case = TrainCase {
            case_id: self.case_id.clone(),
            appearance: self.load_appearance()?,
            mask: self.load_mask()?,
        };
        case.validate()?;
        Ok(case)
    }
}

/// Reads a JSON array of case records and resolves their paths.
pub fn load_manifest(path: &Path) -> Result<Vec<CaseRecord>> {
    let text = fs::read_to_string(path)?;
    let records: Vec<CaseRecord> = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let mut ids: Vec<&str> = records.iter().map(|r| r.case_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::format(path, format!("duplicate case id {}", w[0])));
    }
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    Ok(records.into_iter().map(|r| r.resolved(&base)).collect())
}

/// `target` relative to `base` when it lies inside it, absolute otherwise.
fn relative_path(target: &Path, base: &Path) -> Result<PathBuf> {
    let target = std::path::absolute(target)?;
    let base = std::path::absolute(base)?;
    Ok(target.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(target))
}

/// Writes records with paths inside the manifest's directory stored relative to it.
pub fn save_manifest(path: &Path, records: &[CaseRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
    let rel = |p: &PathBuf| relative_path(p, base);
    let out = records
        .iter()
        .map(|r| {
            Ok(CaseRecord {
                appearance_path: rel(&r.appearance_path)?,
                mask_path: rel(&r.mask_path)?,
                gt_mask_path: r.gt_mask_path.as_ref().map(rel).transpose()?,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = serde_json::to_string_pretty(&out)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Creates parent directories, then writes.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save_volume(grid: &VolumeGrid, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    nvol::save(grid, path)
}

/// Per-case seed: FNV-1a of the id mixed with `base` through SplitMix64.
pub fn derive_seed(base: u64, case_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in case_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `case_id,dsc,nsd` rows followed by a `mean±std` summary row.
pub fn metrics_csv(reports: &[crate::metrics::MetricReport]) -> Result<String> {
    let mut s = String::from("case_id,dsc,nsd\n");
    for r in reports {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.case_id, r.dsc, r.nsd));
    }
    let agg = crate::metrics::aggregate(reports)?;
    s.push_str(&format!("mean±std,{},{}\n", agg.dsc.percent(), agg.nsd.percent()));
    Ok(s)
}
