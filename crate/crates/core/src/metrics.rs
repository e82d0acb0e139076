//! Overlap and surface agreement between binary masks.

use crate::error::{Error, Result};
use crate::volume::{boundary_bits, squared_edt_bits, VolumeGrid, VolumeKind};

/// Dice and surface Dice for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub case_id: String,
    pub dsc: f64,
    pub nsd: f64,
    pub tolerance_mm: f64,
}

/// Mean and population standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to aggregate"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }

    /// `"81.07±0.22"`: percentages with two decimals.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub dsc: MeanStd,
    pub nsd: MeanStd,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<Aggregate> {
    let dsc: Vec<f64> = reports.iter().map(|r| r.dsc).collect();
    let nsd: Vec<f64> = reports.iter().map(|r| r.nsd).collect();
    Ok(Aggregate {
        dsc: MeanStd::of(&dsc)?,
        nsd: MeanStd::of(&nsd)?,
    })
}

fn check_pair(a: &VolumeGrid, b: &VolumeGrid) -> Result<()> {
    a.require_kind(VolumeKind::Mask)?;
    b.require_kind(VolumeKind::Mask)?;
    a.require_same_shape(b)?;
    if a.spacing() != b.spacing() {
        return Err(Error::ShapeMismatch(format!(
            "spacing {:?} vs {:?}",
            a.spacing(),
            b.spacing()
        )));
    }
    Ok(())
}

pub fn dsc_bits(a: &[bool], b: &[bool]) -> f64 {
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

/// Dice similarity coefficient `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dsc(a: &VolumeGrid, b: &VolumeGrid) -> Result<f64> {
    check_pair(a, b)?;
    Ok(dsc_bits(&a.bits(), &b.bits()))
}

pub fn nsd_bits(shape: [usize; 3], spacing: [f64; 3], a: &[bool], b: &[bool], tau_mm: f64) -> f64 {
    let sa = boundary_bits(shape, a);
    let sb = boundary_bits(shape, b);
    let (na, nb) = (sa.iter().filter(|&&x| x).count(), sb.iter().filter(|&&x| x).count());
    match (na, nb) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let to_b = squared_edt_bits(shape, spacing, &sb).expect("non-empty boundary");
    let to_a = squared_edt_bits(shape, spacing, &sa).expect("non-empty boundary");
    let within = |surface: &[bool], dist: &[f64]| {
        surface
            .iter()
            .zip(dist)
            .filter(|(&s, &d2)| s && d2.sqrt() <= tau_mm)
            .count()
    };
    (within(&sa, &to_b) + within(&sb, &to_a)) as f64 / (na + nb) as f64
}

/// Normalized surface Dice at tolerance `tau_mm`.
///
/// Surfaces are the boundary voxels of each mask (6-connectivity, border as
/// background); distances run between voxel centers in millimeters. Two empty
/// masks score 1, exactly one empty mask scores 0.
pub fn nsd(a: &VolumeGrid, b: &VolumeGrid, tau_mm: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(tau_mm >= 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be non-negative, got {tau_mm}")));
    }
    Ok(nsd_bits(a.shape(), a.spacing(), &a.bits(), &b.bits(), tau_mm))
}

pub fn evaluate(case_id: &str, pred: &VolumeGrid, gt: &VolumeGrid, tau_mm: f64) -> Result<MetricReport> {
    Ok(MetricReport {
        case_id: case_id.to_owned(),
        dsc: dsc(pred, gt)?,
        nsd: nsd(pred, gt, tau_mm)?,
        tolerance_mm: tau_mm,
    })
}
