use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use near_core::checkpoint::Checkpoint;
use near_core::distort::DistortionConfig;
use near_core::model::ArchConfig;
use near_core::pipeline::{
    baseline_dataset, derive_seed, distort_dataset, evaluate_method, export_mesh, load_manifest, make_phantoms, metrics_csv,
    repair_dataset, run_experiment, save_manifest, write_file, CaseRecord, ExperimentConfig, PhantomConfig,
};
use near_core::train::{train, TrainConfig, TrainingSetup};
use near_core::volume::{nvol, MeshFormat};

/// Annotation refinement with appearance-aware implicit shape models.
#[derive(Parser)]
#[command(name = "near", version)]
struct Cli {
    /// Base seed; overrides the seed in `--config`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Subcommand config file (JSON for `.json`, TOML otherwise).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (a file path for `mesh`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-case work; 0 lets rayon decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantoms and their manifest. Config: phantom settings.
    Phantoms {
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Overrides the configured resolution.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Distort every mask of a manifest into a new dataset. Config: distortion settings.
    Distort {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fit the implicit model to a manifest. Config: `{arch, train}` sections.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Start from the reduced desk-scale sizes instead of the full ones.
        #[arg(long)]
        desk: bool,
        /// Overrides the configured number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Re-sample trained shapes on the full grid.
    Repair {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Only repair this case.
        #[arg(long)]
        case: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Also write an OFF surface per case.
        #[arg(long)]
        meshes: bool,
    },
    /// Closing plus largest-component smoothing of every mask.
    Baseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
        radii: Vec<usize>,
    },
    /// Score predicted masks against the gold masks of a manifest.
    Eval {
        /// Manifest whose records carry `gt_mask_path`.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `{case_id}.mask.json` predictions; defaults to the manifest masks.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Tolerance in mm.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Marching-cubes surface of a volume.
    Mesh {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value = "off")]
        format: MeshFormat,
    },
    /// The full study: phantoms, distortion, training, repair, baseline, evaluation.
    Experiment {
        /// Overrides the configured case count.
        #[arg(long)]
        n_cases: Option<usize>,
        /// Overrides the configured number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().context("--out is required")
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.cmd {
        Command::Phantoms { n, resolution } => {
            let mut cfg: PhantomConfig = read_config(config)?;
            if let Some(r) = resolution {
                cfg.resolution = *r;
            }
            let out = out_dir(cli)?;
            let records = make_phantoms(*n, &cfg, cli.seed.unwrap_or(0), out)?;
            println!("case_id,appearance_path,mask_path");
            for r in &records {
                println!("{},{},{}", r.case_id, r.appearance_path.display(), r.mask_path.display());
            }
        }
        Command::Distort { manifest } => {
            let cfg = match config {
                Some(p) => DistortionConfig::from_file(p)?,
                None => DistortionConfig::default(),
            };
            let gold = load_manifest(manifest)?;
            let seed = derive_seed(cli.seed.unwrap_or(0), "distort");
            let (records, dice) = distort_dataset(&gold, &cfg, seed, out_dir(cli)?)?;
            println!("case_id,dice");
            for (r, d) in records.iter().zip(dice) {
                println!("{},{d:.6}", r.case_id);
            }
        }
        Command::Train { manifest, desk, epochs } => {
            let mut setup = match config {
                Some(p) => TrainingSetup::from_file(p)?,
                None if *desk => TrainingSetup {
                    arch: ArchConfig::desk(),
                    train: TrainConfig::desk(),
                },
                None => TrainingSetup::default(),
            };
            if let Some(e) = epochs {
                setup.train.epochs = *e;
            }
            if let Some(s) = cli.seed {
                setup.train.seed = s;
            }
            setup.train.validate()?;
            let cases = load_manifest(manifest)?
                .iter()
                .map(CaseRecord::load_train_case)
                .collect::<near_core::Result<Vec<_>>>()?;
            let out = out_dir(cli)?;
            let every = (setup.train.epochs / 20).max(1);
            let outcome = train(&cases, &setup.arch, &setup.train, |epoch, loss| {
                if epoch % every == 0 || epoch == 1 {
                    eprintln!("epoch {epoch} loss {loss:.5}");
                }
            })?;
            std::fs::create_dir_all(out)?;
            outcome.checkpoint.save(&out.join("checkpoint.json"))?;
            write_file(&out.join("loss.csv"), outcome.log.to_csv().as_bytes())?;
            print!("{}", outcome.log.to_csv());
            eprintln!(
                "selected epoch {} (loss {:.5})",
                outcome.checkpoint.selected_epoch, outcome.checkpoint.selected_loss
            );
        }
        Command::Repair {
            checkpoint,
            manifest,
            case,
            threshold,
            meshes,
        } => {
            let mut records = load_manifest(manifest)?;
            if let Some(id) = case {
                records.retain(|r| &r.case_id == id);
                if records.is_empty() {
                    bail!("case {id} is not in {}", manifest.display());
                }
            }
            let out = out_dir(cli)?;
            // fail on unknown ids before any inference runs
            let ck = Checkpoint::load(checkpoint)?;
            for r in &records {
                ck.latent_for(&r.case_id)?;
            }
            drop(ck);
            let paths = repair_dataset(checkpoint, &records, *threshold, *meshes, out)?;
            let repaired: Vec<CaseRecord> = records
                .iter()
                .zip(&paths)
                .map(|(r, p)| CaseRecord {
                    mask_path: p.clone(),
                    ..r.clone()
                })
                .collect();
            save_manifest(&out.join("manifest.json"), &repaired)?;
            println!("case_id,mask_path");
            for (r, p) in records.iter().zip(&paths) {
                println!("{},{}", r.case_id, p.display());
            }
        }
        Command::Baseline { manifest, radii } => {
            let records = load_manifest(manifest)?;
            let (paths, radius) = baseline_dataset(&records, radii, out_dir(cli)?)?;
            println!("case_id,radius,mask_path");
            for (r, p) in records.iter().zip(&paths) {
                println!("{},{radius},{}", r.case_id, p.display());
            }
        }
        Command::Eval { manifest, pred, tau } => {
            let records = load_manifest(manifest)?;
            if let Some(r) = records.iter().find(|r| r.gt_mask_path.is_none()) {
                bail!("case {} has no gt_mask_path", r.case_id);
            }
            let preds: Vec<PathBuf> = match pred {
                Some(dir) => records.iter().map(|r| dir.join(format!("{}.mask.json", r.case_id))).collect(),
                None => records.iter().map(|r| r.mask_path.clone()).collect(),
            };
            let summary = evaluate_method("eval", &records, &preds, *tau)?;
            let csv = metrics_csv(&summary.per_case)?;
            if let Some(out) = &cli.out {
                write_file(&out.join("metrics.csv"), csv.as_bytes())?;
            }
            print!("{csv}");
        }
        Command::Mesh {
            input,
            threshold,
            format,
        } => {
            let out = cli.out.as_deref().context("--out <file> is required")?;
            let field = nvol::load(input)?;
            let mesh = export_mesh(&field, *threshold, out, *format)?;
            if mesh.triangles.is_empty() {
                eprintln!("warning: empty surface at threshold {threshold}");
            }
            println!("vertices,triangles");
            println!("{},{}", mesh.vertices.len(), mesh.triangles.len());
        }
        Command::Experiment { n_cases, epochs } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_file(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(n) = n_cases {
                cfg.n_cases = *n;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            let report = run_experiment(&cfg, out_dir(cli)?, &mut |m| eprintln!("{m}"))?;
            println!("method,dsc_mean,dsc_std,nsd_mean,nsd_std");
            for r in &report.rows {
                println!("{},{:.6},{:.6},{:.6},{:.6}", r.method, r.dsc.mean, r.dsc.std, r.nsd.mean, r.nsd.std);
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring the thread pool")?;
    run(&cli)
}
