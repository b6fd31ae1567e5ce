use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssvd_core::backbone::{extract_pyramid, BackboneConfig, BackboneWeights, Contribution, FeaturePyramid};
use ssvd_core::flow::FlowProvider;
use ssvd_core::pipeline::{Detector, PipelineConfig};
use ssvd_core::motion::{aggregate_motion, calibrate_pyramid};
use ssvd_core::oracle::random_tensor;
use ssvd_core::synth::{render_scene, suite_scene, truth_flow, SuiteKind};
use ssvd_core::tensor::{Tensor, warp};
use std::sync::Arc;

fn random_pyramid(seed: u64, c: usize) -> FeaturePyramid {
    FeaturePyramid::new([8, 4, 2, 1].map(|s| random_tensor([1, c, s, s], seed * 4 + s as u64))).unwrap()
}

#[test]
fn static_scene_aggregates_to_the_single_frame_pyramid() {
    let mut spec = suite_scene(SuiteKind::Clean, 7);
    for o in &mut spec.objects {
        o.vx = 0.0;
        o.vy = 0.0;
    }
    spec.degradations.noise = 0.0;
    spec.frame_count = 9;
    let (frames, truth) = render_scene(&spec).unwrap();
    let provider = FlowProvider::ExactSynthetic(Arc::new(truth));
    let weights = BackboneWeights::init(0, &BackboneConfig::default());
    let t = 4;
    let reference = extract_pyramid(&frames[t], &weights).unwrap();
    let mut terms = vec![Contribution { tau: 0, pyramid: reference.clone() }];
    for tau in [-4, -2, 2, 4] {
        let s = (t as i32 + tau) as usize;
        let flow = provider.provide(&frames, t, s).unwrap();
        let support = extract_pyramid(&frames[s], &weights).unwrap();
        terms.push(Contribution { tau, pyramid: calibrate_pyramid(&support, &flow).unwrap() });
    }
    let agg = aggregate_motion(&reference, &terms).unwrap();
    for i in 0..4 {
        assert!(agg.levels[i].max_abs_diff(&reference.levels[i]).unwrap() < 1e-5);
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Object cells of the P3 map at frame `t`: cells whose stride-8 footprint
/// lies inside some box.
fn object_cells(boxes: &[ssvd_core::boxes::BBox], side: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let (x0, y0) = (8.0 * x as f32, 8.0 * y as f32);
            if boxes.iter().any(|b| x0 >= b.x1 && y0 >= b.y1 && x0 + 8.0 <= b.x2 && y0 + 8.0 <= b.y2) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Region values with each channel centred, so the correlation measures
/// spatial layout rather than per-channel offsets.
fn region(t: &Tensor, cells: &[(usize, usize)]) -> Vec<f64> {
    let mut v = Vec::new();
    for c in 0..t.channels() {
        let vals: Vec<f64> = cells.iter().map(|&(y, x)| t.get(0, c, y, x) as f64).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        v.extend(vals.iter().map(|x| x - m));
    }
    v
}

// Measured with the detector's own backbone: randomly initialised stacks
// alias under shifts that are not multiples of the deepest stride, so their
// P3 maps are a poor stand-in for "the feature of the object".
#[test]
fn alignment_beats_naive_averaging() {
    let weights = Detector::new(&PipelineConfig::default(), 256, 256).unwrap().weights.backbone;
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let (mut wins, mut sum_aligned, mut sum_naive) = (0, 0.0, 0.0);
    let scenes = 20;
    for i in 0..scenes {
        let mut spec = suite_scene(SuiteKind::Clean, 500 + i);
        spec.frame_count = 2;
        for o in &mut spec.objects {
            let mut v = || (r.random_range(8..=16) * if r.random_bool(0.5) { 1 } else { -1 }) as f32;
            o.vx = v();
            o.vy = v();
            o.x = o.x.round();
            o.y = o.y.round();
        }
        let (frames, truth) = render_scene(&spec).unwrap();
        let flow = truth_flow(&truth, 0, 1).unwrap();
        let reference = extract_pyramid(&frames[0], &weights).unwrap();
        let support = extract_pyramid(&frames[1], &weights).unwrap();
        let p3 = |p: &FeaturePyramid| p.levels[0].clone();
        let warped = warp(&p3(&support), flow.level(3)).unwrap();
        let mean = |a: &Tensor, b: &Tensor| Tensor::from_fn(a.shape(), |n, c, y, x| 0.5 * (a.get(n, c, y, x) + b.get(n, c, y, x)));
        let aligned = mean(&p3(&reference), &warped);
        let naive = mean(&p3(&reference), &p3(&support));
        let boxes: Vec<_> = truth.frame_boxes(0).map(|b| b.bbox).collect();
        let cells = object_cells(&boxes, reference.levels[0].height());
        assert!(cells.len() > 10, "scene {i}: {} cells", cells.len());
        let clean = region(&p3(&reference), &cells);
        let ca = pearson(&region(&aligned, &cells), &clean);
        let cn = pearson(&region(&naive, &cells), &clean);
        wins += usize::from(ca > cn);
        sum_aligned += ca;
        sum_naive += cn;
    }
    let n = scenes as f64;
    println!("aligned wins {wins}/{scenes}, mean r {:.4} vs {:.4}", sum_aligned / n, sum_naive / n);
    // one-sided sign test at p < 0.001 needs 18 of 20
    assert!(wins >= 18, "aligned won only {wins} of {scenes}");
    assert!(sum_aligned > sum_naive);
}

#[test]
fn pairwise_mean_matches_a_scalar_loop() {
    let (x, y) = (random_pyramid(1, 3), random_pyramid(2, 3));
    let agg = aggregate_motion(
        &x,
        &[Contribution { tau: 0, pyramid: x.clone() }, Contribution { tau: 3, pyramid: y.clone() }],
    )
    .unwrap();
    for l in 0..4 {
        for (i, v) in agg.levels[l].data().iter().enumerate() {
            assert_eq!(*v, (x.levels[l].data()[i] + y.levels[l].data()[i]) / 2.0);
        }
    }
}

#[test]
fn empty_contribution_list_is_rejected() {
    let x = random_pyramid(1, 2);
    assert!(aggregate_motion(&x, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn aggregation_ignores_contribution_order(seed in 0u64..10_000, n in 2usize..7, rot in 0usize..7) {
        let reference = random_pyramid(seed, 4);
        let mut terms: Vec<Contribution> = (0..n)
            .map(|i| Contribution { tau: i as i32 - 3, pyramid: random_pyramid(seed + 1 + i as u64, 4) })
            .collect();
        let a = aggregate_motion(&reference, &terms).unwrap();
        terms.rotate_left(rot % n);
        terms.swap(0, n - 1);
        prop_assert_eq!(aggregate_motion(&reference, &terms).unwrap(), a);
    }
}
