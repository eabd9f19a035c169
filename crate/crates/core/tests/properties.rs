use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix6};
use pairqfi::aperture::{PupilFunction, QuadratureSpec, ZernikeBasis};
use pairqfi::channels::{classical_fi, ChannelEvaluator};
use pairqfi::montecarlo::sample_frame;
use pairqfi::overlap::{compute_overlap, SceneParams};
use pairqfi::qfi::{compute_h_ll, h_ss_for_scene, QfiBlocks};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pupil() -> &'static PupilFunction {
    static P: OnceLock<PupilFunction> = OnceLock::new();
    P.get_or_init(|| PupilFunction::clear_circular(QuadratureSpec::new(48, 96).unwrap()).unwrap())
}

fn distinguishable(l: [f64; 3]) -> bool {
    compute_overlap(pupil(), &SceneParams::with_l(l))
        .map(|o| o.one_minus_delta_sq() > 1e-3)
        .unwrap_or(false)
}

fn scene() -> impl Strategy<Value = ([f64; 3], [f64; 3])> {
    (
        [-0.8..0.8f64, -0.8..0.8f64, -1.5..1.5f64],
        [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
    )
        .prop_filter("pair must be distinguishable", |(l, _)| distinguishable(*l))
}

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.abs().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn centroid_block_does_not_depend_on_centroid((l, s) in scene()) {
        let (h0, _) = h_ss_for_scene(pupil(), &SceneParams::with_l(l)).unwrap();
        let (h1, _) = h_ss_for_scene(pupil(), &SceneParams::with_l(l).with_s(s)).unwrap();
        prop_assert!(max_abs(&(h0 - h1)) < 1e-9 * (1.0 + max_abs(&h0)));
    }

    #[test]
    fn full_qfi_is_symmetric_psd_with_vanishing_mixed_block((l, s) in scene()) {
        let blocks = QfiBlocks::compute(pupil(), &SceneParams::with_l(l).with_s(s)).unwrap();
        let h: Matrix6<f64> = blocks.full();
        prop_assert!((h - h.transpose()).abs().max() < 1e-9);
        prop_assert!(blocks.h_sl.abs().max() < 1e-8);
        let min = h.symmetric_eigenvalues().min();
        prop_assert!(min > -1e-9, "min eigenvalue {min}");
    }

    #[test]
    fn swapping_x_and_y_swaps_the_centroid_block((l, _) in scene()) {
        let (h, _) = h_ss_for_scene(pupil(), &SceneParams::with_l(l)).unwrap();
        let (hs, _) = h_ss_for_scene(pupil(), &SceneParams::with_l([l[1], l[0], l[2]])).unwrap();
        let perm = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        prop_assert!(max_abs(&(perm * h * perm - hs)) < 1e-9 * (1.0 + max_abs(&h)));
    }

    #[test]
    fn classical_information_never_exceeds_quantum((l, s) in scene()) {
        let basis = ZernikeBasis::new(6).unwrap();
        let model = ChannelEvaluator::new(pupil(), &basis)
            .derivatives_unchecked(&SceneParams::with_l(l).with_s(s))
            .unwrap();
        let j = classical_fi(&model, 1.0).unwrap().j_ll;
        let gap = compute_h_ll(pupil()) - j;
        prop_assert!(gap.symmetric_eigenvalues().min() > -1e-6);
    }

    #[test]
    fn frames_conserve_photons(
        weights in prop::collection::vec(0.0..1.0f64, 2..8),
        photons in 0u64..5000,
        seed in any::<u64>(),
    ) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 1e-6);
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = sample_frame(&probs, photons, &mut rng).unwrap();
        prop_assert_eq!(frame.all_counts().sum::<u64>(), photons);
        for (count, p) in frame.all_counts().zip(&probs) {
            if *p == 0.0 {
                prop_assert_eq!(count, 0);
            }
        }
    }
}
