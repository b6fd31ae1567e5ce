use proptest::prelude::*;
use ssvd_core::backbone::{Contribution, FeaturePyramid};
use ssvd_core::oracle::random_tensor;
use ssvd_core::sampling::{
    aggregate_sampling, hallucinate, identity_sampler, predict_offsets, sampling_locations, sampling_locations_jsonl,
    OffsetPredictorWeights, DEFORM_GROUPS, KERNEL, OFFSET_CHANNELS,
};
use ssvd_core::tensor::{mean_stack, Tensor};

const C: usize = 8;

fn pyramid(seed: u64) -> FeaturePyramid {
    FeaturePyramid::new([16, 8, 4, 2].map(|s| random_tensor([1, C, s, s], seed * 10 + s as u64))).unwrap()
}

/// Full stream for one reference: hallucinate every support (and the
/// reference itself) with predicted offsets, then average.
fn sampling_stream(reference: &FeaturePyramid, supports: &[(i32, FeaturePyramid)], w: &OffsetPredictorWeights) -> FeaturePyramid {
    let sampler = identity_sampler(C);
    let mut terms = Vec::new();
    for (tau, sup) in std::iter::once((0, reference)).chain(supports.iter().map(|(t, p)| (*t, p))) {
        let p = sup
            .try_map(|l, s| {
                let off = predict_offsets(reference.level(l), s, w)?;
                hallucinate(s, &off, &sampler)
            })
            .unwrap();
        terms.push(Contribution { tau, pyramid: p });
    }
    aggregate_sampling(reference, &terms).unwrap()
}

#[test]
fn zero_predictor_and_identity_sampler_reduce_to_plain_averaging() {
    let w = OffsetPredictorWeights::init(4, C, C);
    let reference = pyramid(0);
    let supports: Vec<(i32, FeaturePyramid)> = [-2, -1, 1, 2].iter().map(|&t| (t, pyramid((10 + t) as u64))).collect();
    let got = sampling_stream(&reference, &supports, &w);
    for l in 0..4 {
        let mut raw: Vec<&Tensor> = vec![&reference.levels[l]];
        raw.extend(supports.iter().map(|(_, p)| &p.levels[l]));
        let want = mean_stack(&raw).unwrap();
        assert!(got.levels[l].max_abs_diff(&want).unwrap() < 1e-5);
    }
}

#[test]
fn stream_is_deterministic() {
    let mut w = OffsetPredictorWeights::init(9, C, C);
    // non-zero offsets so the deformable path is exercised
    w.predict.weight = random_tensor(w.predict.weight.shape(), 77).map(|v| 0.05 * v);
    let reference = pyramid(1);
    let supports = vec![(-3, pyramid(2)), (3, pyramid(3))];
    let a = sampling_stream(&reference, &supports, &w);
    let b = sampling_stream(&reference.clone(), &supports.clone(), &w.clone());
    assert_eq!(a, b);
}

#[test]
fn offsets_have_72_channels_at_every_level() {
    let w = OffsetPredictorWeights::init(0, C, 16);
    for side in [56, 28, 14, 7, 5, 1] {
        let x = random_tensor([1, C, side, side], side as u64);
        let off = predict_offsets(&x, &x, &w).unwrap();
        assert_eq!(off.shape(), [1, OFFSET_CHANNELS, side, side]);
        assert!(off.is_finite());
    }
    assert_eq!(OFFSET_CHANNELS, 72);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let w = OffsetPredictorWeights::init(0, C, C);
    let a = random_tensor([1, C, 8, 8], 0);
    assert!(predict_offsets(&a, &random_tensor([1, C, 8, 7], 1), &w).is_err());
    assert!(hallucinate(&a, &Tensor::zeros([1, 70, 8, 8]), &identity_sampler(C)).is_err());
}

#[test]
fn single_term_and_opposite_terms() {
    let x = pyramid(5);
    let neg = x.try_map(|_, t| Ok(t.map(|v| -v))).unwrap();
    assert_eq!(aggregate_sampling(&x, &[Contribution { tau: 0, pyramid: x.clone() }]).unwrap(), x);
    let z = aggregate_sampling(&x, &[Contribution { tau: 0, pyramid: x.clone() }, Contribution { tau: 1, pyramid: neg }])
        .unwrap();
    assert!(z.levels.iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn locations_are_grid_plus_offset(seed in 0u64..10_000, h in 1usize..7, w in 1usize..7) {
        let support = random_tensor([1, C, h, w], seed);
        let offsets = random_tensor([1, OFFSET_CHANNELS, h, w], seed + 1).map(|v| 3.0 * v);
        let locs = sampling_locations(&support, &offsets, &identity_sampler(C), 4).unwrap();
        prop_assert_eq!(locs.len(), h * w * DEFORM_GROUPS * KERNEL * KERNEL);
        for l in &locs {
            let (r, c) = (l.tap / KERNEL, l.tap % KERNEL);
            let ch = 2 * (l.group * KERNEL * KERNEL + l.tap);
            let gy = l.y as f32 + r as f32 - 1.0;
            let gx = l.x as f32 + c as f32 - 1.0;
            prop_assert_eq!(l.level, 4);
            prop_assert_eq!(l.sy, gy + offsets.get(0, ch, l.y, l.x));
            prop_assert_eq!(l.sx, gx + offsets.get(0, ch + 1, l.y, l.x));
        }
        let jsonl = sampling_locations_jsonl(&locs).unwrap();
        prop_assert_eq!(jsonl.lines().count(), locs.len());
    }
}
