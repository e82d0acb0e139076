//! Auto-decoding: shared network weights and one latent code per case are
//! fitted jointly with Adam on jittered meshgrid samples.

mod adam;
mod backward;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use backward::{backward, GradientTape};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::{init_model, loss, ArchConfig, LatentNorm, LatentTable, NearModel, PointBatch};
use crate::volume::{jitter, meshgrid, nearest_label, trilinear_sample, VolumeGrid, VolumeKind};

/// Which epoch's weights end up in the checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    #[default]
    LowestTrainingLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lambda: f64,
    /// Meshgrid points per axis sampled every epoch.
    pub train_grid: usize,
    pub jitter_sigma: f64,
    pub points_per_step: usize,
    pub seed: u64,
    pub latent_norm: LatentNorm,
    pub checkpoint_policy: CheckpointPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 300,
            lambda: 0.01,
            train_grid: 64,
            jitter_sigma: 0.01,
            points_per_step: 16_384,
            seed: 0,
            latent_norm: LatentNorm::L2,
            checkpoint_policy: CheckpointPolicy::LowestTrainingLoss,
        }
    }
}

impl TrainConfig {
    /// Settings for 64³ volumes on a single core: a 32³ epoch grid in one step per case.
    pub fn desk() -> Self {
        Self {
            train_grid: 32,
            points_per_step: 32_768,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lambda >= 0.0) || !(self.jitter_sigma >= 0.0) {
            return bad("lambda and jitter_sigma must be non-negative");
        }
        if self.train_grid < 2 {
            return bad("train_grid must be at least 2");
        }
        if self.points_per_step == 0 {
            return bad("points_per_step must be positive");
        }
        Ok(())
    }
}

/// Architecture and optimisation settings, as read from a config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSetup {
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl TrainingSetup {
    /// JSON for `.json` files, TOML otherwise.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        };
        cfg.arch.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// One training shape: its appearance volume and the (possibly noisy) mask to fit.
#[derive(Debug, Clone)]
pub struct TrainCase {
    pub case_id: String,
    pub appearance: VolumeGrid,
    pub mask: VolumeGrid,
}

impl TrainCase {
    pub fn validate(&self) -> Result<()> {
        self.appearance.require_kind(VolumeKind::Appearance)?;
        self.mask.require_kind(VolumeKind::Mask)?;
        self.appearance.require_same_shape(&self.mask)
    }
}

/// One epoch of labelled points for `case`, shuffled and cut into steps.
pub fn sample_epoch_batch<R: rand::Rng + ?Sized>(case: &TrainCase, cfg: &TrainConfig, rng: &mut R) -> Result<Vec<PointBatch>> {
    case.validate()?;
    let full = case.mask.shape().into_iter().min().unwrap_or(0);
    if cfg.train_grid > full {
        return Err(Error::InvalidConfig(format!(
            "train_grid {} exceeds volume resolution {full}",
            cfg.train_grid
        )));
    }
    let mut points = meshgrid(cfg.train_grid)?;
    jitter(&mut points, cfg.jitter_sigma, rng)?;
    points.shuffle(rng);
    let mut batches = Vec::with_capacity(points.len().div_ceil(cfg.points_per_step));
    for chunk in points.chunks(cfg.points_per_step) {
        let labels = chunk
            .iter()
            .map(|&p| nearest_label(&case.mask, p))
            .collect::<Result<Vec<u8>>>()?;
        let appearance = chunk.iter().map(|&p| trilinear_sample(&case.appearance, p)).collect();
        batches.push(PointBatch {
            points: chunk.to_vec(),
            appearance,
            labels,
        });
    }
    Ok(batches)
}

/// Per-epoch mean loss, in training order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub epochs: Vec<(usize, f64)>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (e, l) in &self.epochs {
            s.push_str(&format!("{e},{l}\n"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: LossLog,
}

/// Optimiser state: one shared Adam state plus one per latent row.
struct Optimizer<T> {
    shared: AdamState<T>,
    latents: Vec<AdamState<T>>,
}

/// Runs one optimisation step on `batch` for latent row `row`; returns the
/// pre-update loss.
pub fn train_step<T: Scalar>(
    model: &mut NearModel<T>,
    latents: &mut LatentTable<T>,
    row: usize,
    batch: &PointBatch,
    cfg: &TrainConfig,
    shared: &mut AdamState<T>,
    latent_state: &mut AdamState<T>,
) -> Result<f64> {
    let eval = model.evaluate(latents.code(row), &batch.points, &batch.appearance)?;
    let value = loss(&eval.probabilities(), &batch.labels, latents.code(row), cfg.lambda, cfg.latent_norm);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let tape = backward(model, &eval, &batch.labels, cfg.lambda, cfg.latent_norm)?;
    let grads: Vec<&[T]> = tape.model.dense_layers().into_iter().map(|(_, d)| d.w.as_slice()).collect();
    let mut params: Vec<&mut [T]> = model.dense_layers_mut().into_iter().map(|d| d.w.as_mut_slice()).collect();
    adam_step(shared, &mut params, &grads, cfg.lr);
    adam_step(latent_state, &mut [latents.code_mut(row)], &[&tape.latent], cfg.lr);
    Ok(value)
}

/// Fits model and latents to `dataset`, keeping the epoch with the lowest
/// mean training loss. `progress` sees every finished epoch.
pub fn train(
    dataset: &[TrainCase],
    arch: &ArchConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training needs at least one case"));
    }
    for case in dataset {
        case.validate()?;
    }
    let mut ids: Vec<&str> = dataset.iter().map(|c| c.case_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("case ids must be unique".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut model, mut latents) = init_model::<f32, _>(arch, dataset.len(), &mut rng)?;
    let sizes: Vec<usize> = model.dense_layers().iter().map(|(_, d)| d.w.len()).collect();
    let mut opt = Optimizer {
        shared: AdamState::new(&sizes),
        latents: (0..dataset.len()).map(|_| AdamState::new(&[arch.latent_dim])).collect(),
    };
    let case_ids: Vec<String> = dataset.iter().map(|c| c.case_id.clone()).collect();
    let snapshot = |model: &NearModel<f32>, latents: &LatentTable<f32>, epoch: usize, loss: f64| Checkpoint {
        arch: arch.clone(),
        train: cfg.clone(),
        case_ids: case_ids.clone(),
        selected_epoch: epoch,
        selected_loss: loss,
        model: model.clone(),
        latents: latents.clone(),
    };

    let mut best: Option<Checkpoint> = None;
    let mut log = LossLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0f64, 0usize);
        for &row in &order {
            for batch in sample_epoch_batch(&dataset[row], cfg, &mut rng)? {
                let step = train_step(&mut model, &mut latents, row, &batch, cfg, &mut opt.shared, &mut opt.latents[row]);
                match step {
                    Ok(l) => {
                        total += l * batch.len() as f64;
                        count += batch.len();
                    }
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            last_good: best.map(Box::new),
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let mean = total / count as f64;
        log.epochs.push((epoch, mean));
        progress(epoch, mean);
        if best.as_ref().is_none_or(|b| mean < b.selected_loss) {
            best = Some(snapshot(&model, &latents, epoch, mean));
        }
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        log,
    })
}
