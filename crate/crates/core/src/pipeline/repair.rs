use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::dsc_bits;
use crate::volume::{
    closing_bits, filter_components_bits, marching_cubes, voxel_coord, Keep, MeshFormat, NormalizedPoint, TriangleMesh, VolumeGrid, VolumeKind,
};

/// Foreground where `sigmoid(logit) > t`, compared in logit space so that
/// `t = 0` selects every voxel and `t = 1` none.
pub fn threshold_logits(logits: &[f32], t: f64) -> Vec<bool> {
    let cut = if t <= 0.0 {
        f64::NEG_INFINITY
    } else if t >= 1.0 {
        f64::INFINITY
    } else {
        (t / (1.0 - t)).ln()
    };
    logits.iter().map(|&l| f64::from(l) > cut).collect()
}

fn voxel_points(shape: [usize; 3]) -> Vec<NormalizedPoint> {
    let mut pts = Vec::with_capacity(shape.iter().product());
    for d in 0..shape[0] {
        for h in 0..shape[1] {
            for w in 0..shape[2] {
                pts.push(NormalizedPoint::new(
                    voxel_coord(d, shape[0]),
                    voxel_coord(h, shape[1]),
                    voxel_coord(w, shape[2]),
                ));
            }
        }
    }
    pts
}

/// Occupancy logits at every voxel center of `appearance`'s grid.
pub fn repair_logits(ck: &Checkpoint, case_id: &str, appearance: &VolumeGrid) -> Result<Vec<f32>> {
    appearance.require_kind(VolumeKind::Appearance)?;
    let z = ck.latent_for(case_id)?;
    let pts = voxel_points(appearance.shape());
    ck.model.query_logits(z, &pts, appearance.data())
}

/// Re-samples the fitted field on the full voxel grid, thresholds it at `t`
/// and keeps the largest connected component.
pub fn repair(ck: &Checkpoint, case_id: &str, appearance: &VolumeGrid, t: f64) -> Result<VolumeGrid> {
    let logits = repair_logits(ck, case_id, appearance)?;
    let shape = appearance.shape();
    let bits = filter_components_bits(shape, &threshold_logits(&logits, t), Keep::Largest);
    VolumeGrid::from_bits(shape, appearance.spacing(), &bits)
}

/// Morphological closing with `radius`, then the largest component.
pub fn baseline_smooth(mask: &VolumeGrid, radius: usize) -> Result<VolumeGrid> {
    mask.require_kind(VolumeKind::Mask)?;
    if radius == 0 {
        return Err(Error::InvalidConfig("closing radius must be at least 1".into()));
    }
    let shape = mask.shape();
    let closed = closing_bits(shape, &mask.bits(), radius);
    VolumeGrid::from_bits(shape, mask.spacing(), &filter_components_bits(shape, &closed, Keep::Largest))
}

/// Smooths with every radius in `radii`; with a reference mask the best-Dice
/// radius wins, otherwise the first. Returns the mask and the chosen radius.
pub fn baseline_sweep(mask: &VolumeGrid, gt: Option<&VolumeGrid>, radii: &[usize]) -> Result<(VolumeGrid, usize)> {
    let first = *radii.first().ok_or(Error::Empty("no closing radii"))?;
    let Some(gt) = gt else {
        return Ok((baseline_smooth(mask, first)?, first));
    };
    gt.require_same_shape(mask)?;
    let gold = gt.bits();
    let mut best: Option<(f64, VolumeGrid, usize)> = None;
    for &r in radii {
        let m = baseline_smooth(mask, r)?;
        let d = dsc_bits(&m.bits(), &gold);
        if best.as_ref().is_none_or(|b| d > b.0) {
            best = Some((d, m, r));
        }
    }
    let (_, m, r) = best.expect("non-empty sweep");
    Ok((m, r))
}

/// Extracts the `t` iso-surface of `field` and writes it to `path`. An empty
/// surface still produces a valid, empty file.
pub fn export_mesh(field: &VolumeGrid, t: f64, path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    if field.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mesh field".into()));
    }
    let mesh = marching_cubes(field, t);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    mesh.write(format, BufWriter::new(File::create(path)?))?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(n: usize, r: f64) -> VolumeGrid {
        let mut m = VolumeGrid::zeros([n; 3], [1.0; 3], VolumeKind::Mask);
        let c = (n as f64 - 1.0) / 2.0;
        for i in 0..m.len() {
            let [d, h, w] = m.coords(i);
            let q = (d as f64 - c).powi(2) + (h as f64 - c).powi(2) + (w as f64 - c).powi(2);
            if q <= r * r {
                m.data_mut()[i] = 1.0;
            }
        }
        m
    }

    #[test]
    fn threshold_extremes() {
        let l = [-80.0f32, -1.0, 0.0, 3.0, 80.0];
        assert!(threshold_logits(&l, 0.0).iter().all(|&b| b));
        assert!(threshold_logits(&l, 1.0).iter().all(|&b| !b));
        assert_eq!(threshold_logits(&l, 0.5), vec![false, false, false, true, true]);
    }

    #[test]
    fn baseline_cases() {
        let b = ball(20, 6.0);
        assert_eq!(baseline_smooth(&b, 1).unwrap(), b);
        let mut speck = b.clone();
        speck.set(1, 1, 1, 1.0);
        assert_eq!(baseline_smooth(&speck, 1).unwrap(), b);
        let mut hole = b.clone();
        hole.set(10, 10, 10, 0.0);
        assert_eq!(baseline_smooth(&hole, 1).unwrap(), b);
        let (m, r) = baseline_sweep(&speck, Some(&b), &[1, 2]).unwrap();
        assert_eq!((m, r), (b.clone(), 1));
    }

    #[test]
    fn mesh_exports_agree() {
        let dir = tempfile::tempdir().unwrap();
        let b = ball(16, 5.0);
        let off = export_mesh(&b, 0.5, &dir.path().join("b.off"), MeshFormat::Off).unwrap();
        let stl = export_mesh(&b, 0.5, &dir.path().join("b.stl"), MeshFormat::Stl).unwrap();
        assert_eq!(off.triangles.len(), stl.triangles.len());
        assert!(off.is_watertight());
        assert_eq!(off.euler_characteristic(), 2);
        let back = TriangleMesh::read_stl(File::open(dir.path().join("b.stl")).unwrap()).unwrap();
        assert_eq!(back.triangles.len(), off.triangles.len());
        let empty = VolumeGrid::zeros([4; 3], [1.0; 3], VolumeKind::Mask);
        let e = export_mesh(&empty, 0.5, &dir.path().join("e.off"), MeshFormat::Off).unwrap();
        assert!(e.triangles.is_empty());
        let text = std::fs::read_to_string(dir.path().join("e.off")).unwrap();
        assert!(text.starts_with("OFF"));
    }
}
