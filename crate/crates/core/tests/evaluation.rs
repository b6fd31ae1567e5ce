use proptest::prelude::*;
use ssvd_core::boxes::BBox;
use ssvd_core::eval::{ap_from_flags, evaluate, mean_nearby_iou, speed_stratify, EvalConfig, GroundTruthTrack, Interpolation, Stratum};
use ssvd_core::oracle::{ap_fixture, stratification_fixture};
use ssvd_core::postprocess::{Detection, Stream};
use std::collections::BTreeMap;

#[test]
fn ap_fixture_is_five_sixths() {
    let (dets, gts) = ap_fixture();
    let r = evaluate(&dets, &gts, &EvalConfig::default());
    assert_eq!(r.map, 5.0 / 6.0);
}

#[test]
fn three_track_stratification_fixture() {
    let fixture = stratification_fixture();
    let tracks: Vec<_> = fixture.iter().map(|(t, _)| t.clone()).collect();
    let s = speed_stratify(&tracks, 10);
    for (t, want) in &fixture {
        // the oracle: a w-wide square shifted by d has IoU (w - d) / (w + d)
        let d = t.boxes[&1].x1 - t.boxes[&0].x1;
        let iou = (20.0 - d as f64) / (20.0 + d as f64);
        assert!((mean_nearby_iou(t, 0, 10).unwrap() - iou).abs() < 1e-6);
        assert_eq!(Stratum::from_mean_iou(iou), *want);
        assert_eq!(s[&(t.track_id, 0)], *want);
        assert_eq!(s[&(t.track_id, 1)], *want);
    }
}

#[test]
fn mean_iou_of_point_eight_is_medium() {
    // a 9-wide square shifted by 1: IoU 8/10
    let boxes = BTreeMap::from([(0, BBox::new(0.0, 0.0, 9.0, 9.0).unwrap()), (1, BBox::new(1.0, 0.0, 10.0, 9.0).unwrap())]);
    let t = GroundTruthTrack { track_id: 0, class_id: 0, boxes };
    assert!((mean_nearby_iou(&t, 0, 10).unwrap() - 0.8).abs() < 1e-9);
    assert_eq!(speed_stratify(&[t], 10)[&(0, 0)], Stratum::Medium);
}

#[test]
fn iou_hand_geometry() {
    let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
    let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
    assert_eq!(a.iou(&b), 1.0 / 7.0);
    assert_eq!(a.iou(&BBox::new(5.0, 5.0, 6.0, 6.0).unwrap()), 0.0);
}

#[test]
fn perfect_and_empty_detections() {
    let (_, mut gts) = ap_fixture();
    gts[1].stratum = Stratum::Fast;
    let perfect: Vec<Detection> = gts
        .iter()
        .map(|g| Detection { frame: g.frame, class: g.class_id, score: 1.0, bbox: g.bbox, stream: Stream::Motion })
        .collect();
    let r = evaluate(&perfect, &gts, &EvalConfig::default());
    assert_eq!((r.map, r.map_slow, r.map_fast), (1.0, Some(1.0), Some(1.0)));
    let e = evaluate(&[], &gts, &EvalConfig::default());
    assert_eq!((e.map, e.map_slow, e.map_fast), (0.0, Some(0.0), Some(0.0)));
    assert_eq!(r.gt_slow + r.gt_medium + r.gt_fast, r.gt_total);
}

proptest! {
    #[test]
    fn adding_a_top_ranked_hit_never_lowers_ap(flags in prop::collection::vec(any::<bool>(), 0..20), extra in 1usize..4) {
        let hits = flags.iter().filter(|&&f| f).count();
        let n = hits + extra;
        let mut more = vec![true];
        more.extend(&flags);
        for interp in [Interpolation::AllPoint, Interpolation::ElevenPoint] {
            prop_assert!(ap_from_flags(&more, n, interp) >= ap_from_flags(&flags, n, interp));
        }
    }

    #[test]
    fn iou_is_symmetric_and_self_one(x in -50.0f32..50.0, y in -50.0f32..50.0, w in 0.5f32..40.0, h in 0.5f32..40.0,
                                      u in -50.0f32..50.0, v in -50.0f32..50.0) {
        let a = BBox::new(x, y, x + w, y + h).unwrap();
        let b = BBox::new(u, v, u + h, v + w).unwrap();
        prop_assert_eq!(a.iou(&b), b.iou(&a));
        prop_assert_eq!(a.iou(&a), 1.0);
    }
}
