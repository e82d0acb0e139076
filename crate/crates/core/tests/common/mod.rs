//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

pub fn random_bits<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(p)).collect()
}

pub fn dice_oracle(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let total = (a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count()) as f64;
    if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    }
}

/// Foreground voxels with a background 6-neighbor, the outside counting as background.
pub fn surface_oracle(shape: [usize; 3], bits: &[bool]) -> Vec<[usize; 3]> {
    let [nd, nh, nw] = shape;
    let at = |d: isize, h: isize, w: isize| {
        if d < 0 || h < 0 || w < 0 || d >= nd as isize || h >= nh as isize || w >= nw as isize {
            false
        } else {
            bits[(d as usize * nh + h as usize) * nw + w as usize]
        }
    };
    let mut out = Vec::new();
    for d in 0..nd as isize {
        for h in 0..nh as isize {
            for w in 0..nw as isize {
                if !at(d, h, w) {
                    continue;
                }
                let open = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                    .iter()
                    .any(|&(a, b, c)| !at(d + a, h + b, w + c));
                if open {
                    out.push([d as usize, h as usize, w as usize]);
                }
            }
        }
    }
    out
}

pub fn nsd_oracle(shape: [usize; 3], spacing: [f64; 3], a: &[bool], b: &[bool], tau: f64) -> f64 {
    let sa = surface_oracle(shape, a);
    let sb = surface_oracle(shape, b);
    match (sa.is_empty(), sb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        (0..3)
            .map(|k| ((p[k] as f64 - q[k] as f64) * spacing[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let near = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        from.iter()
            .filter(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min) <= tau)
            .count()
    };
    (near(&sa, &sb) + near(&sb, &sa)) as f64 / (sa.len() + sb.len()) as f64
}

/// A seconds-scale experiment: small phantoms, a narrow model, few epochs.
pub fn tiny_experiment(seed: u64) -> near_core::pipeline::ExperimentConfig {
    use near_core::model::ArchConfig;
    use near_core::pipeline::{ExperimentConfig, PhantomConfig};
    use near_core::train::TrainConfig;
    ExperimentConfig {
        seed,
        n_cases: 2,
        phantom: PhantomConfig {
            resolution: 32,
            semi_axes_mm: [4.0, 8.0],
            spread_mm: 3.0,
            ..PhantomConfig::default()
        },
        arch: ArchConfig {
            latent_dim: 4,
            seed_channels: 4,
            block_channels: vec![4, 4],
            feature_channels: 2,
            head_hidden: vec![8],
            use_appearance: true,
        },
        train: TrainConfig {
            epochs: 3,
            train_grid: 12,
            points_per_step: 1024,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}
