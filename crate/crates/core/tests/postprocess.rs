use proptest::prelude::*;
use rand::Rng;
use ssvd_core::boxes::BBox;
use ssvd_core::oracle::{best_path_bruteforce, nms_bruteforce};
use ssvd_core::postprocess::{late_fuse, nms, nms_indices, seq_nms, Detection, LinkGraph, SeqNmsConfig, Stream};
use ssvd_core::weights::rng;

fn det(frame: usize, class: usize, score: f32, b: BBox) -> Detection {
    Detection { frame, class, score, bbox: b, stream: Stream::Motion }
}

fn random_set(seed: u64, max: usize, span: f32) -> Vec<Detection> {
    let mut r = rng(seed);
    (0..r.random_range(0..=max))
        .map(|_| {
            let (x, y) = (r.random_range(0.0..span), r.random_range(0.0..span));
            let b = BBox::new(x, y, x + r.random_range(4.0..16.0), y + r.random_range(4.0..16.0)).unwrap();
            det(0, r.random_range(0..2), r.random_range(0.0..1.0), b)
        })
        .collect()
}

#[test]
fn nms_equals_the_oracle_on_100_trials() {
    for trial in 0..100 {
        let dets = random_set(trial, 8, 16.0);
        assert_eq!(nms_indices(&dets, 0.45), nms_bruteforce(&dets, 0.45), "trial {trial}");
    }
}

proptest! {
    #[test]
    fn nms_output_is_a_separated_subset(seed in 0u64..100_000, thr in 0.1f64..0.9) {
        let dets = random_set(seed, 12, 20.0);
        let kept = nms(&dets, thr);
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class != b.class || a.bbox.iou(&b.bbox) <= thr);
            }
        }
        prop_assert_eq!(nms(&kept, thr), kept.clone());
    }

    #[test]
    fn fusion_is_order_independent(seed in 0u64..100_000) {
        let mut a = random_set(seed, 6, 20.0);
        let mut b = random_set(seed + 1, 6, 20.0);
        for d in &mut b { d.stream = Stream::Sampling; }
        // distinct scores so greedy order is unambiguous
        for (i, d) in a.iter_mut().chain(b.iter_mut()).enumerate() { d.score = 0.01 * i as f32 + 0.001 * d.score; }
        let key = |v: Vec<Detection>| { let mut k: Vec<_> = v.iter().map(|d| (d.score.to_bits(), d.class)).collect(); k.sort(); k };
        prop_assert_eq!(key(late_fuse(&a, &b, 0.45)), key(late_fuse(&b, &a, 0.45)));
        prop_assert_eq!(late_fuse(&a, &[], 0.45), nms(&a, 0.45));
    }
}

fn random_frames(r: &mut impl Rng, frames: usize, boxes: usize) -> Vec<Vec<Detection>> {
    (0..frames)
        .map(|t| {
            (0..r.random_range(0..=boxes))
                .map(|_| {
                    let (x, y) = (r.random_range(0.0..10.0f32), r.random_range(0.0..10.0f32));
                    det(t, 0, r.random_range(0.01..1.0), BBox::new(x, y, x + 10.0, y + 10.0).unwrap())
                })
                .collect()
        })
        .collect()
}

/// Every extracted path is optimal in the residual graph it came from.
#[test]
fn seq_nms_paths_are_optimal_on_100_trials() {
    let mut r = rng(77);
    for trial in 0..100 {
        let n = r.random_range(1..=5);
        let frames = random_frames(&mut r, n, 4);
        let mut g = LinkGraph::new(frames.clone(), 0.3);
        let boxes: Vec<Vec<BBox>> = frames.iter().map(|f| f.iter().map(|d| d.bbox).collect()).collect();
        let scores: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|d| d.score as f64).collect()).collect();
        while g.has_links() {
            let (total, path) = g.best_path().unwrap();
            let oracle = best_path_bruteforce(&boxes, &scores, &g.alive, 0.3).unwrap();
            assert!((total - oracle).abs() < 1e-9, "trial {trial}: {total} vs {oracle}");
            let sum: f64 = path.iter().map(|&(t, i)| scores[t][i]).sum();
            assert!((sum - total).abs() < 1e-9);
            assert!(path.windows(2).all(|w| w[1].0 == w[0].0 + 1 && g.linked(w[0].0, w[0].1, w[1].1)));
            g.remove_path(&path, 0.45);
        }
    }
}

#[test]
fn stationary_box_is_rescored_to_the_path_mean() {
    let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let frames: Vec<Vec<Detection>> = [0.9, 0.2, 0.9, 0.9, 0.9].iter().enumerate().map(|(t, &s)| vec![det(t, 0, s, b)]).collect();
    let (tubes, out) = seq_nms(&frames, &SeqNmsConfig::default()).unwrap();
    assert_eq!(tubes.len(), 1);
    assert!(out.iter().flatten().all(|d| (d.score - 0.76).abs() < 1e-6));
}
