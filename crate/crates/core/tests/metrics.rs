mod common;

use common::{dice_oracle, nsd_oracle, random_bits};
use near_core::metrics::{dsc, dsc_bits, nsd, nsd_bits};
use near_core::volume::VolumeGrid;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SHAPE: [usize; 3] = [8, 8, 8];

fn mask_strategy() -> impl Strategy<Value = Vec<bool>> {
    (0.05f64..0.95).prop_flat_map(|p| proptest::collection::vec(proptest::bool::weighted(p), 512))
}

#[test]
fn brute_force_agreement_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..200 {
        let p = 0.1 + 0.8 * (i as f64 / 199.0);
        let a = random_bits(&mut rng, 512, p);
        let b = random_bits(&mut rng, 512, 1.0 - p);
        let spacing = if i % 2 == 0 { [1.0; 3] } else { [1.0, 0.8, 1.5] };
        assert!((dsc_bits(&a, &b) - dice_oracle(&a, &b)).abs() <= 1e-12);
        for tau in [0.0, 1.0, 1.5, 2.5] {
            let got = nsd_bits(SHAPE, spacing, &a, &b, tau);
            let want = nsd_oracle(SHAPE, spacing, &a, &b, tau);
            assert!((got - want).abs() <= 1e-12, "pair {i} tau {tau}: {got} vs {want}");
        }
    }
}

#[test]
fn empty_mask_conventions() {
    let empty = VolumeGrid::zeros(SHAPE, [1.0; 3], near_core::volume::VolumeKind::Mask);
    let mut one = empty.clone();
    one.set(3, 3, 3, 1.0);
    assert_eq!(dsc(&empty, &empty).unwrap(), 1.0);
    assert_eq!(nsd(&empty, &empty, 1.0).unwrap(), 1.0);
    assert_eq!(dsc(&empty, &one).unwrap(), 0.0);
    assert_eq!(nsd(&one, &empty, 1.0).unwrap(), 0.0);
    assert!(nsd(&one, &one, -1.0).is_err());
}

#[test]
fn one_voxel_shift_of_a_cube() {
    let mut a = VolumeGrid::zeros([12; 3], [1.0; 3], near_core::volume::VolumeKind::Mask);
    let mut b = a.clone();
    for d in 2..8 {
        for h in 2..8 {
            for w in 2..8 {
                a.set(d, h, w, 1.0);
                b.set(d + 1, h, w, 1.0);
            }
        }
    }
    // 5 of 6 slabs overlap
    assert!((dsc(&a, &b).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(nsd(&a, &b, 1.0).unwrap(), 1.0);
    assert!(nsd(&a, &b, 0.0).unwrap() < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric(a in mask_strategy(), b in mask_strategy(), tau in 0.0f64..3.0) {
        prop_assert_eq!(dsc_bits(&a, &b), dsc_bits(&b, &a));
        prop_assert_eq!(nsd_bits(SHAPE, [1.0; 3], &a, &b, tau), nsd_bits(SHAPE, [1.0; 3], &b, &a, tau));
    }

    #[test]
    fn identical_masks_score_one(a in mask_strategy(), tau in 0.0f64..3.0) {
        prop_assert_eq!(dsc_bits(&a, &a), 1.0);
        prop_assert_eq!(nsd_bits(SHAPE, [1.0; 3], &a, &a, tau), 1.0);
    }

    #[test]
    fn nsd_monotone_in_tolerance(a in mask_strategy(), b in mask_strategy(), t0 in 0.0f64..3.0, dt in 0.0f64..3.0) {
        let lo = nsd_bits(SHAPE, [1.0; 3], &a, &b, t0);
        let hi = nsd_bits(SHAPE, [1.0; 3], &a, &b, t0 + dt);
        prop_assert!(lo <= hi);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }
}
