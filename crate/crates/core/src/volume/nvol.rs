//! The `nvol` container: a small JSON header next to a raw little-endian blob.
//!
//! ```json
//! {"dtype": "u8", "shape": [64, 64, 64], "spacing_mm": [1.0, 1.0, 1.0],
//!  "kind": "mask", "data": "case_000.mask.bin"}
//! ```
//!
//! Masks are stored as `u8` in `{0, 1}`, appearance volumes as `f32`. The
//! blob path is relative to the header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::{VolumeGrid, VolumeKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    kind: String,
    data: String,
}

/// Path of the binary blob that belongs to `header`: same stem, `.bin` extension.
pub fn blob_path_for(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Encodes `grid` into header JSON and blob bytes, naming the blob `blob_name`.
pub fn encode(grid: &VolumeGrid, blob_name: &str) -> Result<(String, Vec<u8>)> {
    let (dtype, kind, bytes) = match grid.kind() {
        VolumeKind::Mask => {
            grid.validate()?;
            ("u8", "mask", grid.data().iter().map(|&v| v as u8).collect::<Vec<u8>>())
        }
        VolumeKind::Appearance => {
            let mut bytes = Vec::with_capacity(grid.len() * 4);
            for &v in grid.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            ("f32", "appearance", bytes)
        }
        VolumeKind::Distance => {
            return Err(Error::InvalidConfig("distance grids have no nvol encoding".into()));
        }
    };
    let header = Header {
        dtype: dtype.into(),
        shape: grid.shape(),
        spacing_mm: grid.spacing(),
        kind: kind.into(),
        data: blob_name.into(),
    };
    Ok((serde_json::to_string_pretty(&header)? + "\n", bytes))
}

/// Writes `grid` to `header_path` and its blob next to it.
pub fn save(grid: &VolumeGrid, header_path: &Path) -> Result<()> {
    let blob = blob_path_for(header_path);
    let blob_name = blob
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(header_path, "header path has no file name"))?
        .to_owned();
    let (json, bytes) = encode(grid, &blob_name)?;
    if let Some(dir) = header_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(header_path, json)?;
    fs::write(blob, bytes)?;
    Ok(())
}

pub fn load(header_path: &Path) -> Result<VolumeGrid> {
    let text = fs::read_to_string(header_path)?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::format(header_path, e.to_string()))?;
    let blob_path = header_path.parent().unwrap_or(Path::new(".")).join(&header.data);
    let bytes = fs::read(&blob_path)?;
    let n: usize = header.shape.iter().product();
    let kind = match header.kind.as_str() {
        "mask" => VolumeKind::Mask,
        "appearance" => VolumeKind::Appearance,
        other => return Err(Error::format(header_path, format!("unknown kind `{other}`"))),
    };
    let data: Vec<f64> = match header.dtype.as_str() {
        "u8" => {
            if bytes.len() != n {
                return Err(Error::format(&blob_path, format!("expected {n} bytes, found {}", bytes.len())));
            }
            bytes.iter().map(|&b| f64::from(b)).collect()
        }
        "f32" => {
            if bytes.len() != 4 * n {
                return Err(Error::format(&blob_path, format!("expected {} bytes, found {}", 4 * n, bytes.len())));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
        other => return Err(Error::format(header_path, format!("unknown dtype `{other}`"))),
    };
    let grid = VolumeGrid::new(header.shape, header.spacing_mm, kind, data)
        .map_err(|e| Error::format(header_path, e.to_string()))?;
    if kind == VolumeKind::Mask {
        grid.validate().map_err(|_| Error::format(&blob_path, "mask values must be 0 or 1"))?;
    }
    Ok(grid)
}

/// Rounds every value through `f32`, the precision appearance volumes are stored at.
pub fn quantize_f32(grid: &mut VolumeGrid) {
    for v in grid.data_mut() {
        *v = *v as f32 as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = VolumeGrid::zeros([3, 4, 5], [1.0, 0.5, 2.0], VolumeKind::Mask);
        m.set(1, 2, 3, 1.0);
        let p = dir.path().join("m.nvol");
        save(&m, &p).unwrap();
        assert_eq!(load(&p).unwrap(), m);
        let header = fs::read_to_string(&p).unwrap();
        assert!(header.contains("\"dtype\": \"u8\""));
        assert!(header.contains("\"data\": \"m.bin\""));
        assert_eq!(fs::read(dir.path().join("m.bin")).unwrap().len(), 60);
    }

    #[test]
    fn appearance_is_stored_as_f32() {
        let dir = tempfile::tempdir().unwrap();
        let a = VolumeGrid::new([1, 1, 2], [1.0; 3], VolumeKind::Appearance, vec![0.1, 0.7]).unwrap();
        let p = dir.path().join("a.nvol");
        save(&a, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.data(), &[0.1f32 as f64, 0.7f32 as f64]);
    }

    #[test]
    fn rejects_truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        let m = VolumeGrid::zeros([2, 2, 2], [1.0; 3], VolumeKind::Mask);
        let p = dir.path().join("m.nvol");
        save(&m, &p).unwrap();
        fs::write(dir.path().join("m.bin"), [0u8; 5]).unwrap();
        assert!(matches!(load(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn distance_grids_cannot_be_saved() {
        let g = VolumeGrid::zeros([2, 2, 2], [1.0; 3], VolumeKind::Distance);
        assert!(encode(&g, "x.bin").is_err());
    }
}
