//! The full refinement study: phantoms → distortion → training → repair →
//! baseline → evaluation. Every reported number is recomputed from the files
//! written by earlier phases.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    baseline_smooth, derive_seed, load_manifest, make_phantoms, metrics_csv, repair, save_manifest, save_volume, write_file,
    CaseRecord, PhantomConfig,
};
use crate::checkpoint::Checkpoint;
use crate::distort::{synthesize_distortion, DistortionConfig};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate, MeanStd, MetricReport};
use crate::model::ArchConfig;
use crate::train::{train, TrainConfig};
use crate::volume::{nvol, MeshFormat};

/// One trained model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    /// Directory name.
    pub name: String,
    /// Row label in the summary.
    pub label: String,
    pub use_appearance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_cases: usize,
    pub phantom: PhantomConfig,
    pub distortion: DistortionConfig,
    /// Shared architecture; each variant only toggles the appearance input.
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub variants: Vec<VariantConfig>,
    /// Occupancy threshold for repair.
    pub threshold: f64,
    pub tolerance_mm: f64,
    /// Closing radii tried by the smoothing baseline.
    pub baseline_radii: Vec<usize>,
    /// Also write OFF surfaces of gold, distorted and repaired masks.
    pub export_meshes: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_cases: 20,
            phantom: PhantomConfig::default(),
            distortion: DistortionConfig::default(),
            arch: ArchConfig::desk(),
            train: TrainConfig::desk(),
            variants: vec![
                VariantConfig {
                    name: "near_s".into(),
                    label: "NeAR (S)".into(),
                    use_appearance: false,
                },
                VariantConfig {
                    name: "near_sa".into(),
                    label: "NeAR (S+A)".into(),
                    use_appearance: true,
                },
            ],
            threshold: 0.5,
            tolerance_mm: 1.0,
            baseline_radii: vec![1, 2],
            export_meshes: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases == 0 {
            return Err(Error::InvalidConfig("n_cases must be at least 1".into()));
        }
        self.phantom.validate()?;
        self.distortion.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if self.baseline_radii.is_empty() || self.baseline_radii.contains(&0) {
            return Err(Error::InvalidConfig("baseline_radii must be non-empty and positive".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.is_empty() || n.contains(['/', '\\'])) {
            return Err(Error::InvalidConfig("variant names must be unique plain names".into()));
        }
        Ok(())
    }

    /// JSON for `.json` files, TOML otherwise.
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

/// Aggregate scores of one method against the gold masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub dsc: MeanStd,
    pub nsd: MeanStd,
    pub per_case: Vec<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    /// Rows in order: distorted, baseline, then every variant.
    pub rows: Vec<MethodSummary>,
    /// Dice of each accepted distortion, in case order.
    pub distortion_dice: Vec<f64>,
    pub baseline_radius: usize,
}

impl ExperimentReport {
    pub fn row(&self, method: &str) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn phase<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Phase {
        phase: name,
        source: Box::new(e),
    })
}

#[cfg(feature = "parallel")]
fn map_cases<T: Send, F>(records: &[CaseRecord], f: F) -> Result<Vec<T>>
where
    F: Fn(&CaseRecord) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    records.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_cases<T, F>(records: &[CaseRecord], f: F) -> Result<Vec<T>>
where
    F: Fn(&CaseRecord) -> Result<T>,
{
    records.iter().map(f).collect()
}

/// Distorts every gold mask in `gold` into `dir`, writing `distortion.csv` and
/// a manifest whose records point back at the gold masks. Returns the new
/// records and the achieved Dice per case.
pub fn distort_dataset(gold: &[CaseRecord], cfg: &DistortionConfig, seed: u64, dir: &Path) -> Result<(Vec<CaseRecord>, Vec<f64>)> {
    let done = map_cases(gold, |rec| {
        let mask = rec.load_mask()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &rec.case_id));
        let out = synthesize_distortion(&mask, cfg, &mut rng)?;
        let path = dir.join(format!("{}.mask.json", rec.case_id));
        save_volume(&out.mask, &path)?;
        let record = CaseRecord {
            case_id: rec.case_id.clone(),
            appearance_path: rec.appearance_path.clone(),
            mask_path: path,
            gt_mask_path: Some(rec.mask_path.clone()),
            label: rec.label,
        };
        Ok((record, out.dice, out.attempts))
    })?;
    let mut csv = String::from("case_id,dice,attempts\n");
    for (r, d, a) in &done {
        csv.push_str(&format!("{},{d:.6},{a}\n", r.case_id));
    }
    write_file(&dir.join("distortion.csv"), csv.as_bytes())?;
    let records: Vec<CaseRecord> = done.iter().map(|t| t.0.clone()).collect();
    save_manifest(&dir.join("manifest.json"), &records)?;
    Ok((records, done.iter().map(|t| t.1).collect()))
}

fn train_phase(cfg: &ExperimentConfig, variant: &VariantConfig, manifest: &Path, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<PathBuf> {
    let records = load_manifest(manifest)?;
    let cases = records.iter().map(CaseRecord::load_train_case).collect::<Result<Vec<_>>>()?;
    let arch = ArchConfig {
        use_appearance: variant.use_appearance,
        ..cfg.arch.clone()
    };
    let train_cfg = TrainConfig {
        seed: derive_seed(cfg.seed, "train"),
        ..cfg.train.clone()
    };
    let every = (train_cfg.epochs / 10).max(1);
    let outcome = train(&cases, &arch, &train_cfg, |epoch, loss| {
        if epoch % every == 0 || epoch == 1 {
            log(&format!("[{}] epoch {epoch} loss {loss:.5}", variant.name));
        }
    })?;
    let ck_path = dir.join("checkpoint.json");
    std::fs::create_dir_all(dir)?;
    outcome.checkpoint.save(&ck_path)?;
    write_file(&dir.join("loss.csv"), outcome.log.to_csv().as_bytes())?;
    log(&format!(
        "[{}] selected epoch {} (loss {:.5})",
        variant.name, outcome.checkpoint.selected_epoch, outcome.checkpoint.selected_loss
    ));
    Ok(ck_path)
}

/// Repairs every case of `records` with the checkpoint at `ck_path`, writing
/// `{case_id}.mask.json` (and an OFF surface when `meshes`) under `dir`.
pub fn repair_dataset(ck_path: &Path, records: &[CaseRecord], threshold: f64, meshes: bool, dir: &Path) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(ck_path)?;
    map_cases(records, |rec| {
        let appearance = rec.load_appearance()?;
        let mask = repair(&ck, &rec.case_id, &appearance, threshold)?;
        let path = dir.join(format!("{}.mask.json", rec.case_id));
        save_volume(&mask, &path)?;
        if meshes {
            super::export_mesh(&mask, 0.5, &path.with_extension("off"), MeshFormat::Off)?;
        }
        Ok(path)
    })
}

/// Smooths every mask of `records` into `dir`. With gold masks on every
/// record, the radius with the best mean Dice over the dataset wins and the
/// sweep goes to `radius_sweep.csv`; otherwise the first radius is used.
pub fn baseline_dataset(records: &[CaseRecord], radii: &[usize], dir: &Path) -> Result<(Vec<PathBuf>, usize)> {
    let first = *radii.first().ok_or(Error::Empty("no closing radii"))?;
    let mut radius = first;
    if records.iter().all(|r| r.gt_mask_path.is_some()) {
        let mut csv = String::from("radius,mean_dsc\n");
        let mut best: Option<(f64, usize)> = None;
        for &r in radii {
            let dices = map_cases(records, |rec| {
                let smooth = baseline_smooth(&rec.load_mask()?, r)?;
                let gt = rec.load_gt()?.ok_or(Error::Empty("baseline sweep needs gold masks"))?;
                crate::metrics::dsc(&smooth, &gt)
            })?;
            let mean = dices.iter().sum::<f64>() / dices.len() as f64;
            csv.push_str(&format!("{r},{mean:.6}\n"));
            if best.is_none_or(|b| mean > b.0) {
                best = Some((mean, r));
            }
        }
        radius = best.expect("non-empty radii").1;
        write_file(&dir.join("radius_sweep.csv"), csv.as_bytes())?;
    }
    let paths = map_cases(records, |rec| {
        let smooth = baseline_smooth(&rec.load_mask()?, radius)?;
        let path = dir.join(format!("{}.mask.json", rec.case_id));
        save_volume(&smooth, &path)?;
        Ok(path)
    })?;
    Ok((paths, radius))
}

/// Scores `preds` (one file per record, same order) against each record's gold mask.
pub fn evaluate_method(method: &str, records: &[CaseRecord], preds: &[PathBuf], tau: f64) -> Result<MethodSummary> {
    let per_case: Vec<MetricReport> = records
        .iter()
        .zip(preds)
        .map(|(rec, p)| {
            let pred = nvol::load(p)?;
            let gt = rec.load_gt()?.ok_or(Error::Empty("evaluation needs gold masks"))?;
            evaluate(&rec.case_id, &pred, &gt, tau)
        })
        .collect::<Result<_>>()?;
    let agg = aggregate(&per_case)?;
    Ok(MethodSummary {
        method: method.to_owned(),
        dsc: agg.dsc,
        nsd: agg.nsd,
        per_case,
    })
}

fn summary_csv(rows: &[MethodSummary]) -> String {
    let mut s = String::from("method,dsc_mean,dsc_std,nsd_mean,nsd_std\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.method, r.dsc.mean, r.dsc.std, r.nsd.mean, r.nsd.std
        ));
    }
    s
}

fn summary_table(rows: &[MethodSummary], tau: f64) -> String {
    let mut s = format!("| Method | DSC (%) | NSD (%, τ = {tau} mm) |\n|---|---|---|\n");
    for r in rows {
        s.push_str(&format!("| {} | {} | {} |\n", r.method, r.dsc.percent(), r.nsd.percent()));
    }
    s
}

/// Runs every phase under `out_dir`. A failing phase aborts with its name;
/// files from earlier phases stay on disk.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    phase("config", cfg.validate())?;
    std::fs::create_dir_all(out_dir)?;
    let mut echo = serde_json::to_string_pretty(cfg)?;
    echo.push('\n');
    write_file(&out_dir.join("experiment.json"), echo.as_bytes())?;

    log("phantoms");
    let phantom_dir = out_dir.join("phantoms");
    let gold = phase("phantoms", make_phantoms(cfg.n_cases, &cfg.phantom, cfg.seed, &phantom_dir))?;

    log("distort");
    let distort_dir = out_dir.join("distorted");
    let (records, distortion_dice) = phase(
        "distort",
        distort_dataset(&gold, &cfg.distortion, derive_seed(cfg.seed, "distort"), &distort_dir),
    )?;
    let manifest = distort_dir.join("manifest.json");

    let mut repaired = Vec::new();
    for v in &cfg.variants {
        log(&format!("train {}", v.name));
        let ck = phase("train", train_phase(cfg, v, &manifest, &out_dir.join("models").join(&v.name), log))?;
        log(&format!("repair {}", v.name));
        let paths = phase(
            "repair",
            repair_dataset(&ck, &records, cfg.threshold, cfg.export_meshes, &out_dir.join("repaired").join(&v.name)),
        )?;
        repaired.push((v.label.clone(), paths));
    }

    log("baseline");
    let (baseline_paths, baseline_radius) = phase(
        "baseline",
        baseline_dataset(&records, &cfg.baseline_radii, &out_dir.join("baseline")),
    )?;

    log("evaluate");
    let reports = out_dir.join("reports");
    let evaluation = (|| -> Result<Vec<MethodSummary>> {
        let records = load_manifest(&manifest)?;
        let distorted: Vec<PathBuf> = records.iter().map(|r| r.mask_path.clone()).collect();
        let mut rows = vec![
            evaluate_method("distorted", &records, &distorted, cfg.tolerance_mm)?,
            evaluate_method("baseline", &records, &baseline_paths, cfg.tolerance_mm)?,
        ];
        for (label, paths) in &repaired {
            rows.push(evaluate_method(label, &records, paths, cfg.tolerance_mm)?);
        }
        for (row, file) in rows.iter().zip(
            ["distorted".to_owned(), "baseline".to_owned()]
                .into_iter()
                .chain(cfg.variants.iter().map(|v| v.name.clone())),
        ) {
            write_file(&reports.join(format!("{file}.csv")), metrics_csv(&row.per_case)?.as_bytes())?;
        }
        write_file(&reports.join("summary.csv"), summary_csv(&rows).as_bytes())?;
        write_file(&reports.join("summary.md"), summary_table(&rows, cfg.tolerance_mm).as_bytes())?;
        Ok(rows)
    })();
    let rows = phase("evaluate", evaluation)?;
    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        rows,
        distortion_dice,
        baseline_radius,
    })
}
