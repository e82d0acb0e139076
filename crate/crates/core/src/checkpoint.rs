//! Trained model on disk: a JSON manifest plus one little-endian `f32` blob.
//!
//! The manifest records, for every tensor, its byte offset into the blob and
//! its shape. Dense layers are stored as `[out, in + 1]` with the bias in the
//! last column; `latents` is `[cases, latent_dim]` in `case_ids` order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, LatentTable, NearModel};
use crate::train::TrainConfig;

const FORMAT: &str = "near-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub case_ids: Vec<String>,
    pub selected_epoch: usize,
    pub selected_loss: f64,
    pub model: NearModel<f32>,
    pub latents: LatentTable<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    /// Byte offset into the blob.
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    arch: ArchConfig,
    train: TrainConfig,
    case_ids: Vec<String>,
    selected_epoch: usize,
    selected_loss: f64,
    tensors: BTreeMap<String, TensorEntry>,
    blob: String,
}

impl Checkpoint {
    /// Row index of `case_id` in the latent table.
    pub fn case_index(&self, case_id: &str) -> Result<usize> {
        self.case_ids
            .iter()
            .position(|c| c == case_id)
            .ok_or_else(|| Error::UnknownCase(case_id.to_owned()))
    }

    pub fn latent_for(&self, case_id: &str) -> Result<&[f32]> {
        Ok(self.latents.code(self.case_index(case_id)?))
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut v: Vec<(String, Vec<usize>, &[f32])> = self
            .model
            .dense_layers()
            .into_iter()
            .map(|(name, d)| (name, d.shape().to_vec(), d.w.as_slice()))
            .collect();
        v.push((
            "latents".to_owned(),
            vec![self.latents.len(), self.latents.dim],
            self.latents.codes.as_slice(),
        ));
        v
    }

    /// Writes the manifest to `path` and the blob next to it (`.bin`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_path = path.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::format(path, "unusable file name"))?
            .to_owned();
        let mut blob = Vec::new();
        let mut tensors = BTreeMap::new();
        for (name, shape, data) in self.tensors() {
            tensors.insert(name, TensorEntry { offset: blob.len(), shape });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.to_owned(),
            version: VERSION,
            arch: self.arch.clone(),
            train: self.train.clone(),
            case_ids: self.case_ids.clone(),
            selected_epoch: self.selected_epoch,
            selected_loss: self.selected_loss,
            tensors,
            blob: blob_name,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text)?;
        fs::write(blob_path, blob)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::format(path, format!("unsupported format {} v{}", m.format, m.version)));
        }
        m.arch.validate()?;
        let blob_path: PathBuf = path.parent().unwrap_or(Path::new("")).join(&m.blob);
        let blob = fs::read(&blob_path)?;
        let read = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let entry = m
                .tensors
                .get(name)
                .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
            if entry.shape != shape {
                return Err(Error::format(
                    path,
                    format!("tensor {name} has shape {:?}, expected {shape:?}", entry.shape),
                ));
            }
            let n: usize = shape.iter().product();
            let bytes = blob
                .get(entry.offset..entry.offset + 4 * n)
                .ok_or_else(|| Error::format(&blob_path, format!("tensor {name} out of range")))?;
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.to_owned()));
            }
            Ok(data)
        };
        let mut model = NearModel::<f32>::zeros(&m.arch);
        let names: Vec<String> = model.dense_layers().into_iter().map(|(n, _)| n).collect();
        if m.tensors.len() != names.len() + 1 {
            return Err(Error::format(path, "unexpected tensor count"));
        }
        for (name, dense) in names.iter().zip(model.dense_layers_mut()) {
            let shape = dense.shape();
            dense.w = read(name, &shape)?;
        }
        let latents = LatentTable {
            dim: m.arch.latent_dim,
            codes: read("latents", &[m.case_ids.len(), m.arch.latent_dim])?,
        };
        Ok(Self {
            arch: m.arch,
            train: m.train,
            case_ids: m.case_ids,
            selected_epoch: m.selected_epoch,
            selected_loss: m.selected_loss,
            model,
            latents,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> Checkpoint {
        let arch = ArchConfig {
            latent_dim: 5,
            seed_channels: 3,
            block_channels: vec![2, 2],
            feature_channels: 2,
            head_hidden: vec![4],
            use_appearance: seed % 2 == 0,
        };
        let (model, latents) = init_model::<f32, _>(&arch, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        Checkpoint {
            arch,
            train: TrainConfig::default(),
            case_ids: vec!["a".into(), "b".into(), "c".into()],
            selected_epoch: 7,
            selected_loss: 0.123_456_789_012_345_67,
            model,
            latents,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample(4);
        let p = dir.path().join("ck.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let names: Vec<String> = ck.tensors().into_iter().map(|t| t.0).collect();
        assert_eq!(
            names,
            ["decoder.seed", "decoder.block0.conv", "decoder.block1.conv", "decoder.proj0", "decoder.proj1", "decoder.proj2", "head.layer0", "head.layer1", "latents"]
        );
        assert_eq!(back.latent_for("b").unwrap(), ck.latents.code(1));
        assert!(matches!(back.latent_for("zz"), Err(Error::UnknownCase(_))));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        sample(1).save(&p).unwrap();
        let bin = p.with_extension("bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
