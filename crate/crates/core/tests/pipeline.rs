use ssvd_core::boxes::BBox;
use ssvd_core::flow::FlowProvider;
use ssvd_core::pipeline::{
    detect_frame, infer_ablation, infer_video, sample_train_supports, support_offsets, train_step_forward,
    train_step_with_supports, valid_supports, Detector, PipelineConfig, Streams,
};
use ssvd_core::postprocess::{detections_jsonl, nms, Detection, Stream};
use ssvd_core::synth::{render_scene, suite_scene, SceneTruth, SuiteKind, TruthBox};
use ssvd_core::tensor::Tensor;
use ssvd_core::Error;
use std::sync::Arc;

fn short_config(k: usize, streams: Streams) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.aggregation.k = k;
    c.aggregation.buffer_capacity = 2 * k + 1;
    c.aggregation.supports = c.aggregation.supports.min(2 * k);
    c.streams = streams;
    c
}

fn clip(kind: SuiteKind, seed: u64, frames: usize) -> (Vec<Tensor>, SceneTruth) {
    let mut spec = suite_scene(kind, seed);
    spec.frame_count = frames;
    if let Some(b) = &mut spec.degradations.blur {
        b.frames.retain(|&f| f < frames);
    }
    render_scene(&spec).unwrap()
}

fn exact(truth: &SceneTruth) -> FlowProvider {
    FlowProvider::ExactSynthetic(Arc::new(truth.clone()))
}

/// Everything but the stream tag, which says where a box came from rather
/// than what was detected.
fn strip(dets: &[Detection]) -> Vec<(usize, usize, f32, BBox)> {
    dets.iter().map(|d| (d.frame, d.class, d.score, d.bbox)).collect()
}

#[test]
fn six_supports_are_symmetric_and_exclude_the_reference() {
    assert_eq!(support_offsets(12, 6), [-12, -8, -4, 4, 8, 12]);
    assert_eq!(valid_supports(&support_offsets(12, 6), 12, 25), [-12, -8, -4, 4, 8, 12]);
    assert_eq!(valid_supports(&support_offsets(12, 6), 2, 25), [4, 8, 12]);
    assert_eq!(valid_supports(&support_offsets(12, 6), 24, 25), [-12, -8, -4]);
    assert_eq!(support_offsets(12, 2), [-12, 12]);
    assert!(support_offsets(12, 0).is_empty());
}

#[test]
fn streams_off_is_the_single_frame_pipeline() {
    let cfg = short_config(3, Streams::None);
    let (frames, truth) = clip(SuiteKind::Clean, 11, 5);
    let det = Detector::new(&cfg, 256, 256).unwrap();
    let out = infer_video(&det, &frames, &exact(&truth)).unwrap();
    for (t, f) in frames.iter().enumerate() {
        let h = det.heads(&det.pyramid(f).unwrap()).unwrap();
        let manual = nms(&det.decode(&h, t, Stream::Motion), cfg.nms_iou);
        assert_eq!(out.frames[t], manual, "frame {t}");
    }
}

#[test]
fn sliding_buffer_matches_recomputation() {
    for streams in [Streams::Both, Streams::Motion, Streams::Sampling] {
        let cfg = short_config(3, streams);
        let (frames, truth) = clip(SuiteKind::Blur, 21, 8);
        let det = Detector::new(&cfg, 256, 256).unwrap();
        let p = exact(&truth);
        let out = infer_video(&det, &frames, &p).unwrap();
        for t in 0..frames.len() {
            assert_eq!(out.frames[t], detect_frame(&det, &frames, &p, t).unwrap(), "{streams:?} frame {t}");
        }
    }
}

#[test]
fn one_frame_video_is_single_frame_detection() {
    let (frames, truth) = clip(SuiteKind::Clean, 12, 1);
    let base = Detector::new(&short_config(3, Streams::None), 256, 256).unwrap();
    let want = infer_video(&base, &frames, &exact(&truth)).unwrap();
    for streams in [Streams::Both, Streams::Motion, Streams::Sampling] {
        let det = Detector::new(&short_config(3, streams), 256, 256).unwrap();
        let got = infer_video(&det, &frames, &exact(&truth)).unwrap();
        assert_eq!(strip(&got.frames[0]), strip(&want.frames[0]), "{streams:?}");
    }
}

#[test]
fn detections_jsonl_is_reproducible() {
    let mut cfg = short_config(3, Streams::Both);
    cfg.use_seq_nms = true;
    let (frames, truth) = clip(SuiteKind::Occlusion, 31, 6);
    let run = || {
        let det = Detector::new(&cfg, 256, 256).unwrap();
        detections_jsonl(&infer_video(&det, &frames, &exact(&truth)).unwrap().frames).unwrap()
    };
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
}

#[test]
fn inconsistent_config_fails_before_any_frame() {
    let mut cfg = PipelineConfig::default();
    cfg.aggregation.buffer_capacity = 20;
    assert!(matches!(Detector::new(&cfg, 256, 256), Err(Error::Config(_))));
    let mut cfg = PipelineConfig::default();
    cfg.aggregation.supports = 30;
    assert!(matches!(Detector::new(&cfg, 256, 256), Err(Error::Config(_))));
    let mut cfg = PipelineConfig::default();
    cfg.backbone.channels = 30;
    assert!(matches!(Detector::new(&cfg, 256, 256), Err(Error::Config(_))));
    let det = Detector::new(&PipelineConfig::default(), 256, 256).unwrap();
    let (_, truth) = clip(SuiteKind::Clean, 1, 2);
    assert!(infer_video(&det, &[], &exact(&truth)).is_err());
    assert!(Detector::new(&PipelineConfig::default(), 200, 256).is_err());
}

#[test]
fn train_step_is_seeded() {
    let (frames, truth) = clip(SuiteKind::Clean, 41, 9);
    let det = Detector::new(&short_config(4, Streams::Both), 256, 256).unwrap();
    let p = exact(&truth);
    let a = train_step_forward(&det, &frames, &truth.boxes, &p, 4, 17).unwrap();
    let b = train_step_forward(&det, &frames, &truth.boxes, &p, 4, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.supports.len(), 2);
    assert!(a.supports.iter().all(|&s| s != 0 && s.abs() <= 4));
    assert_eq!(sample_train_supports(4, 4, 9, 2, 17), a.supports);
    let others: Vec<Vec<i32>> = (0..20).map(|s| sample_train_supports(4, 4, 9, 2, s)).collect();
    assert!(others.iter().any(|o| *o != a.supports));
    // near the start only valid frames are drawn
    assert!(sample_train_supports(12, 0, 25, 2, 3).iter().all(|&s| s > 0));
}

#[test]
fn train_step_needs_truth() {
    let (frames, truth) = clip(SuiteKind::Clean, 41, 3);
    let det = Detector::new(&short_config(1, Streams::Both), 256, 256).unwrap();
    let empty: Vec<TruthBox> = Vec::new();
    assert!(train_step_with_supports(&det, &frames, &empty, &exact(&truth), 1, &[-1]).is_err());
}

#[test]
fn static_clones_give_the_single_frame_loss() {
    let mut spec = suite_scene(SuiteKind::Clean, 51);
    spec.frame_count = 5;
    for o in &mut spec.objects {
        (o.vx, o.vy) = (0.0, 0.0);
    }
    spec.degradations.noise = 0.0;
    let (frames, truth) = render_scene(&spec).unwrap();
    let p = exact(&truth);
    let both = Detector::new(&short_config(2, Streams::Both), 256, 256).unwrap();
    let single = train_step_with_supports(&both, &frames, &truth.boxes, &p, 2, &[]).unwrap();
    let clones = train_step_with_supports(&both, &frames, &truth.boxes, &p, 2, &[-2, 1]).unwrap();
    assert!((single.total - clones.total).abs() < 1e-4, "{} vs {}", single.total, clones.total);
    assert!(single.total > 0.0);

    // one stream keeps half of the four loss terms
    let motion = Detector::new(&short_config(2, Streams::Motion), 256, 256).unwrap();
    let m = train_step_with_supports(&motion, &frames, &truth.boxes, &p, 2, &[-2, 1]).unwrap();
    assert_eq!((m.focal_sampling, m.loc_sampling), (0.0, 0.0));
    assert!(m.focal_motion > 0.0 && m.loc_motion > 0.0);
    assert!((2.0 * m.total - clones.total).abs() < 1e-4, "{} vs {}", m.total, clones.total);
}

fn true_positives(dets: &[Detection], truth: &[TruthBox], frame: usize) -> usize {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let gts: Vec<&TruthBox> = truth.iter().filter(|g| g.frame == frame).collect();
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for d in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(i, g)| !used[*i] && g.class_id == d.class)
            .map(|(i, g)| (i, d.bbox.iou(&g.bbox)))
            .filter(|(_, iou)| *iou >= 0.5)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = best {
            used[i] = true;
            tp += 1;
        }
    }
    tp
}

#[test]
fn late_fusion_keeps_the_better_streams_true_positives() {
    let mut cfg = short_config(4, Streams::Both);
    cfg.sampling.offsets = ssvd_core::sampling::OffsetSource::FlowOracle;
    let (mut frames_seen, mut lowered) = (0, 0);
    let (mut fused_total, mut best_total) = (0, 0);
    for (i, kind) in [SuiteKind::Blur, SuiteKind::Occlusion].into_iter().cycle().take(20).enumerate() {
        let (frames, truth) = clip(kind, 900 + i as u64, 9);
        let det = Detector::new(&cfg, 256, 256).unwrap();
        let a = infer_ablation(&det, &frames, &exact(&truth)).unwrap();
        for t in 0..frames.len() {
            let m = true_positives(&a.motion[t], &truth.boxes, t);
            let s = true_positives(&a.sampling[t], &truth.boxes, t);
            let f = true_positives(&a.both[t], &truth.boxes, t);
            frames_seen += 1;
            lowered += usize::from(f < m.max(s));
            fused_total += f;
            best_total += m.max(s);
        }
    }
    println!("fusion lowered the best stream's TP count on {lowered} of {frames_seen} frames ({fused_total} vs {best_total})");
    assert_eq!(lowered, 0);
}
