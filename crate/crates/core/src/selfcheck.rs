//! Quick invariant suite over every module plus the brute-force oracles.
//! Each check is independent; a failing or panicking check never hides the
//! others.

use crate::backbone::{aggregate, BackboneConfig, BackboneWeights, Contribution, FeaturePyramid};
use crate::boxes::BBox;
use crate::detector::DetectorWeights;
use crate::eval::{average_precision, evaluate, speed_stratify, EvalConfig};
use crate::flow::{block_match, flo_bytes, parse_flo, BlockMatchParams};
use crate::heads::{decode_box, encode_box, generate_anchors, match_anchors, Assignment, HeadWeights};
use crate::losses::{focal_loss, total_loss, LossConfig, LossTargets, StreamOutputs};
use crate::motion::calibrate;
use crate::oracle::{
    ap_fixture, best_path_bruteforce, conv2d_naive, gradient_check, nms_bruteforce, random_tensor,
    stratification_fixture,
};
use crate::pipeline::{infer_ablation, support_offsets, Detector, PipelineConfig};
use crate::postprocess::{detections_jsonl, nms_indices, parse_detections_jsonl, Detection, LinkGraph, Stream};
use crate::sampling::{hallucinate, identity_sampler, offsets_from_flow, predict_offsets, OffsetPredictorWeights};
use crate::synth::{render_scene, suite_scene, truth_flow_full, SuiteKind};
use crate::tensor::io::{read_archive, write_archive};
use crate::tensor::{avg_pool, bilinear_at, conv2d, deform_conv, warp, ConvSpec, Tensor};
use crate::weights::rng;
use crate::flow::FlowProvider;
use rand::Rng;
use serde::Serialize;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub checks: Vec<Check>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn run(&mut self, module: &'static str, name: &str, f: impl FnOnce() -> Result<String, String>) {
        let (passed, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(d)) => (true, d),
            Ok(Err(e)) => (false, e),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                (false, format!("panic: {msg}"))
            }
        };
        self.checks.push(Check {
            module,
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_conv(r: &mut impl Rng, seed: u64, co: usize, ci: usize, k: usize) -> ConvSpec {
    let bias = (0..co).map(|_| r.random_range(-0.5..0.5)).collect();
    let spec = ConvSpec::new(random_tensor([co, ci, k, k], seed), bias, r.random_range(1..=2), r.random_range(0..=k / 2))
        .expect("valid conv");
    spec.with_dilation(r.random_range(1..=2)).expect("valid dilation")
}

fn det(frame: usize, class: usize, score: f32, bbox: BBox) -> Detection {
    Detection {
        frame,
        class,
        score,
        bbox,
        stream: Stream::Motion,
    }
}

fn random_box(r: &mut impl Rng, span: f32) -> BBox {
    let (x, y) = (r.random_range(0.0..span), r.random_range(0.0..span));
    BBox::new(x, y, x + r.random_range(4.0..20.0), y + r.random_range(4.0..20.0)).expect("ordered")
}

/// Runs every check. With `weights_dir`, also loads that saved weight set
/// and reports which module's file is broken.
pub fn selfcheck(config: &PipelineConfig, weights_dir: Option<&Path>) -> SelfCheckReport {
    let mut rep = SelfCheckReport::default();
    kernel_checks(&mut rep);
    backbone_checks(&mut rep, config);
    motion_checks(&mut rep);
    sampling_checks(&mut rep, config);
    head_checks(&mut rep, config);
    loss_checks(&mut rep);
    postprocess_checks(&mut rep);
    eval_checks(&mut rep);
    synth_checks(&mut rep);
    pipeline_checks(&mut rep, config);
    if let Some(dir) = weights_dir {
        rep.run("weights", &format!("load {}", dir.display()), || {
            let c = config.backbone.channels;
            DetectorWeights::load(dir, c, config.classes, config.anchors.per_location(), config.offset_filters())
                .map(|_| "all modules loaded".to_string())
                .map_err(e2s)
        });
    }
    rep
}

fn kernel_checks(rep: &mut SelfCheckReport) {
    const M: &str = "tensor-kernels";
    rep.run(M, "conv2d matches the direct loop", || {
        let mut r = rng(11);
        let mut worst = 0.0f32;
        for case in 0..10u64 {
            let (ci, co, k) = (r.random_range(1..4), r.random_range(1..4), [1, 3][r.random_range(0..2)]);
            let x = random_tensor([1, ci, r.random_range(5..12), r.random_range(5..12)], 100 + case);
            let spec = random_conv(&mut r, 200 + case, co, ci, k);
            worst = worst.max(conv2d(&x, &spec).map_err(e2s)?.max_abs_diff(&conv2d_naive(&x, &spec)).map_err(e2s)?);
        }
        ensure(worst < 1e-5, || format!("max abs diff {worst}"))?;
        Ok(format!("max abs diff {worst:.1e}"))
    });
    rep.run(M, "deform_conv with zero offsets equals conv2d", || {
        let mut r = rng(12);
        let mut worst = 0.0f32;
        for case in 0..20u64 {
            let g = [1, 2, 4][r.random_range(0..3)];
            let ci = g * r.random_range(1..3);
            let x = random_tensor([1, ci, r.random_range(4..10), r.random_range(4..10)], 300 + case);
            let co = r.random_range(1..4);
            let spec = random_conv(&mut r, 400 + case, co, ci, 3);
            let (ho, wo) = spec.output_size(x.height(), x.width()).map_err(e2s)?;
            let off = Tensor::zeros([1, 2 * 9 * g, ho, wo]);
            let d = deform_conv(&x, &off, &spec, g).map_err(e2s)?;
            worst = worst.max(d.max_abs_diff(&conv2d(&x, &spec).map_err(e2s)?).map_err(e2s)?);
        }
        ensure(worst < 1e-5, || format!("max abs diff {worst}"))?;
        Ok(format!("max abs diff {worst:.1e}"))
    });
    rep.run(M, "warp with zero flow is the identity", || {
        let x = random_tensor([1, 3, 9, 7], 13);
        let y = warp(&x, &Tensor::zeros([1, 2, 9, 7])).map_err(e2s)?;
        ensure(y == x, || "output differs from input".into())?;
        Ok("bit-exact".into())
    });
    rep.run(M, "bilinear fixture values", || {
        let plane = [1.0f32, 2.0, 3.0, 4.0];
        for &(x, y, want) in &[(0.5, 0.5, 2.5), (0.25, 0.0, 1.25), (1.0, 1.0, 4.0), (1.5, 0.0, 1.0), (-2.0, 0.0, 0.0)] {
            let got = bilinear_at(&plane, 2, 2, x, y);
            ensure(got == want, || format!("({x}, {y}) gave {got}, expected {want}"))?;
        }
        Ok("5 points exact".into())
    });
    rep.run(M, "average pooling keeps constants", || {
        let y = avg_pool(&Tensor::full([1, 2, 8, 8], 0.3), 4).map_err(e2s)?;
        ensure(y.shape() == [1, 2, 2, 2] && y.data().iter().all(|&v| v == 0.3), || format!("{:?}", y.data()))?;
        Ok("constant preserved".into())
    });
    rep.run(M, "tensor archive round trip", || {
        let entries = vec![("a".to_string(), random_tensor([2, 3, 4, 5], 14)), ("b".to_string(), Tensor::zeros([1, 1, 1, 1]))];
        let mut buf = Vec::new();
        write_archive(&mut buf, &entries).map_err(e2s)?;
        let back = read_archive(&mut buf.as_slice()).map_err(e2s)?;
        ensure(back == entries, || "archive changed on reload".into())?;
        Ok(format!("{} bytes", buf.len()))
    });
}

fn backbone_checks(rep: &mut SelfCheckReport, config: &PipelineConfig) {
    const M: &str = "pyramid-backbone";
    let c = config.backbone.channels;
    rep.run(M, "pyramid levels at strides 8 to 64", || {
        let w = BackboneWeights::init(1, &BackboneConfig { channels: c });
        let p = crate::backbone::extract_pyramid(&random_tensor([1, 3, 128, 128], 15).map(f32::abs), &w).map_err(e2s)?;
        let sizes: Vec<usize> = p.shapes().iter().map(|s| s[2]).collect();
        ensure(sizes == [16, 8, 4, 2] && p.channels() == c, || format!("sizes {sizes:?}"))?;
        Ok(format!("{sizes:?} x {c} channels"))
    });
    rep.run(M, "aggregating the reference alone is the identity", || {
        let p = FeaturePyramid::new([8, 4, 2, 1].map(|s| random_tensor([1, 2, s, s], 16 + s as u64))).map_err(e2s)?;
        let a = aggregate(&p, &[Contribution { tau: 0, pyramid: p.clone() }]).map_err(e2s)?;
        ensure(a == p, || "aggregate changed the reference".into())?;
        Ok("bit-exact".into())
    });
    rep.run(M, "aggregation is order independent", || {
        let mk = |s: u64| FeaturePyramid::new([4, 2, 2, 1].map(|n| random_tensor([1, 1, n, n], s + n as u64))).expect("shapes");
        let terms: Vec<Contribution> = (0..3).map(|i| Contribution { tau: i - 1, pyramid: mk(20 + i as u64) }).collect();
        let mut rev = terms.clone();
        rev.reverse();
        let (a, b) = (aggregate(&terms[1].pyramid, &terms).map_err(e2s)?, aggregate(&terms[1].pyramid, &rev).map_err(e2s)?);
        ensure(a == b, || "result depends on list order".into())?;
        Ok("bit-exact".into())
    });
    rep.run(M, "backbone weights round trip", || {
        let w = BackboneWeights::init(2, &BackboneConfig { channels: c });
        let mut buf = Vec::new();
        w.write(&mut buf).map_err(e2s)?;
        let back = BackboneWeights::read(&mut buf.as_slice(), &BackboneConfig { channels: c }).map_err(e2s)?;
        ensure(back == w, || "weights changed on reload".into())?;
        Ok(format!("{} bytes", buf.len()))
    });
}

fn motion_checks(rep: &mut SelfCheckReport) {
    const M: &str = "motion-stream";
    rep.run(M, "calibration with zero flow is the identity", || {
        let f = random_tensor([1, 4, 6, 6], 17);
        ensure(calibrate(&f, &Tensor::zeros([1, 2, 6, 6])).map_err(e2s)? == f, || "feature changed".into())?;
        Ok("bit-exact".into())
    });
    rep.run(M, "integer flow shifts features exactly", || {
        let f = random_tensor([1, 2, 6, 8], 18);
        let mut flow = Tensor::zeros([1, 2, 6, 8]);
        flow.plane_mut(0, 0).fill(2.0);
        flow.plane_mut(0, 1).fill(-1.0);
        let g = calibrate(&f, &flow).map_err(e2s)?;
        for c in 0..2 {
            for y in 1..6 {
                for x in 0..6 {
                    ensure(g.get(0, c, y, x) == f.get(0, c, y - 1, x + 2), || format!("mismatch at ({c}, {y}, {x})"))?;
                }
            }
        }
        Ok("shift (2, -1) exact".into())
    });
    rep.run(M, ".flo round trip", || {
        let flow = random_tensor([1, 2, 5, 7], 19);
        let back = parse_flo(&flo_bytes(&flow).map_err(e2s)?).map_err(e2s)?;
        ensure(back == flow, || "flow changed on reload".into())?;
        Ok("bit-exact".into())
    });
    rep.run(M, "block matching recovers a translation", || {
        let base = random_tensor([1, 3, 48, 48], 20).map(f32::abs);
        // support(x) = reference(x - (3, -2)), so the flow is (3, -2)
        let support = Tensor::from_fn([1, 3, 48, 48], |_, c, y, x| {
            let (sy, sx) = (y as isize + 2, x as isize - 3);
            if (0..48).contains(&sy) && (0..48).contains(&sx) {
                base.get(0, c, sy as usize, sx as usize)
            } else {
                0.0
            }
        });
        let flow = block_match(&base, &support, &BlockMatchParams::default()).map_err(e2s)?;
        let (dx, dy) = (flow.get(0, 0, 24, 24), flow.get(0, 1, 24, 24));
        ensure((dx, dy) == (3.0, -2.0), || format!("centre flow ({dx}, {dy})"))?;
        Ok("centre flow (3, -2)".into())
    });
}

fn sampling_checks(rep: &mut SelfCheckReport, config: &PipelineConfig) {
    const M: &str = "sampling-stream";
    let c = config.backbone.channels;
    rep.run(M, "offset predictor emits 72 channels", || {
        let w = OffsetPredictorWeights::init(3, 4, 8);
        let o = predict_offsets(&random_tensor([1, 4, 7, 9], 21), &random_tensor([1, 4, 7, 9], 22), &w).map_err(e2s)?;
        ensure(o.shape() == [1, 72, 7, 9], || format!("shape {:?}", o.shape()))?;
        Ok("72 channels".into())
    });
    rep.run(M, "zero offsets with the identity sampler reproduce the support", || {
        let s = random_tensor([1, 8, 6, 6], 23);
        let h = hallucinate(&s, &Tensor::zeros([1, 72, 6, 6]), &identity_sampler(8)).map_err(e2s)?;
        ensure(h == s, || "support changed".into())?;
        Ok("bit-exact".into())
    });
    rep.run(M, "flow-oracle offsets equal warping within reach", || {
        let s = random_tensor([1, 4, 8, 8], 24);
        let flow = Tensor::from_fn([1, 2, 8, 8], |_, ch, y, x| if ch == 0 { 0.5 + 0.1 * x as f32 } else { -0.25 * y as f32 / 8.0 });
        let h = hallucinate(&s, &offsets_from_flow(&flow, 10.0).map_err(e2s)?, &identity_sampler(4)).map_err(e2s)?;
        let d = h.max_abs_diff(&warp(&s, &flow).map_err(e2s)?).map_err(e2s)?;
        ensure(d < 1e-6, || format!("max abs diff {d}"))?;
        Ok(format!("max abs diff {d:.1e}"))
    });
    rep.run(M, "predictor weights round trip", || {
        let f = config.offset_filters();
        let w = OffsetPredictorWeights::init(4, c, f);
        let mut buf = Vec::new();
        w.write(&mut buf).map_err(e2s)?;
        let back = OffsetPredictorWeights::read(&mut buf.as_slice(), c, f).map_err(e2s)?;
        ensure(back == w, || "weights changed on reload".into())?;
        Ok(format!("{} bytes", buf.len()))
    });
}

fn head_checks(rep: &mut SelfCheckReport, config: &PipelineConfig) {
    const M: &str = "detection-heads";
    rep.run(M, "anchor count at 448 by 448", || {
        let a = generate_anchors(&config.anchors, 448, 448).map_err(e2s)?;
        let per = config.anchors.per_location();
        let want = per * (56 * 56 + 28 * 28 + 14 * 14 + 7 * 7);
        ensure(a.len() == want, || format!("{} anchors, expected {want}", a.len()))?;
        Ok(format!("{} anchors", a.len()))
    });
    rep.run(M, "box encoding round trip", || {
        let mut r = rng(25);
        let mut worst = 0.0f32;
        for _ in 0..100 {
            let (a, g) = (random_box(&mut r, 100.0), random_box(&mut r, 100.0));
            let d = encode_box(&a, &g).map_err(e2s)?.map(|v| v as f32);
            let b = decode_box(&a, d);
            worst = worst.max((b.x1 - g.x1).abs().max((b.y2 - g.y2).abs()));
        }
        ensure(worst < 1e-3, || format!("max corner error {worst}"))?;
        Ok(format!("max corner error {worst:.1e}"))
    });
    rep.run(M, "every ground truth claims an anchor", || {
        let anchors = generate_anchors(&config.anchors, 128, 128).map_err(e2s)?;
        let gts = [(BBox::new(3.0, 3.0, 9.0, 40.0).map_err(e2s)?, 0), (BBox::new(60.0, 60.0, 120.0, 70.0).map_err(e2s)?, 1)];
        let asg = match_anchors(&anchors, &gts, &config.matching);
        for gi in 0..gts.len() {
            ensure(asg.iter().any(|a| matches!(a, Assignment::Foreground { gt, .. } if *gt == gi)), || {
                format!("ground truth {gi} has no anchor")
            })?;
        }
        Ok("2 of 2 matched".into())
    });
    rep.run(M, "head weights round trip", || {
        let (c, k, a) = (config.backbone.channels, config.classes, config.anchors.per_location());
        let w = HeadWeights::init(5, c, k, a);
        let mut buf = Vec::new();
        w.write(&mut buf).map_err(e2s)?;
        let back = HeadWeights::read(&mut buf.as_slice(), c, k, a).map_err(e2s)?;
        ensure(back == w, || "weights changed on reload".into())?;
        Ok(format!("{} bytes", buf.len()))
    });
}

fn loss_checks(rep: &mut SelfCheckReport) {
    const M: &str = "losses";
    rep.run(M, "analytic gradients match finite differences", || {
        let g = gradient_check(26, 2, 32, 3);
        ensure(g.max_relative_error < 1e-4, || format!("{g:?}"))?;
        Ok(format!("{} coordinates, max relative error {:.1e}", g.coords, g.max_relative_error))
    });
    rep.run(M, "focal loss with gamma 0 is weighted cross-entropy", || {
        for p in [0.05, 0.3, 0.5, 0.9] {
            let want = -0.25 * f64::ln(p);
            let got = focal_loss(p, true, 0.25, 0.0);
            ensure((got - want).abs() < 1e-12, || format!("p = {p}: {got} vs {want}"))?;
        }
        Ok("4 probabilities".into())
    });
    rep.run(M, "each stream adds its own terms", || {
        let asg = [Assignment::Foreground { class: 0, gt: 0 }, Assignment::Background];
        let targets = [[0.1, 0.2, 0.0, 0.0], [0.0; 4]];
        let t = LossTargets {
            assignments: &asg,
            targets: &targets,
            classes: 2,
        };
        let s = StreamOutputs {
            logits: &[0.3, -1.0, 0.5, 2.0],
            deltas: &[0.0, 0.5, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        let cfg = LossConfig::default();
        let one = total_loss(Some(s), None, &t, &cfg).map_err(e2s)?;
        let two = total_loss(Some(s), Some(s), &t, &cfg).map_err(e2s)?;
        ensure((two.total - 2.0 * one.total).abs() < 1e-12 && one.focal_sampling == 0.0, || {
            format!("{} vs 2 x {}", two.total, one.total)
        })?;
        Ok(format!("single stream {:.4}", one.total))
    });
}

fn postprocess_checks(rep: &mut SelfCheckReport) {
    const M: &str = "postprocessing";
    rep.run(M, "NMS equals the brute-force oracle", || {
        let mut r = rng(27);
        for trial in 0..50 {
            let n = r.random_range(0..=8);
            let dets: Vec<Detection> =
                (0..n).map(|_| det(0, r.random_range(0..2), r.random_range(0.0..1.0), random_box(&mut r, 20.0))).collect();
            let (fast, slow) = (nms_indices(&dets, 0.45), nms_bruteforce(&dets, 0.45));
            ensure(fast == slow, || format!("trial {trial}: {fast:?} vs {slow:?}"))?;
        }
        Ok("50 trials".into())
    });
    rep.run(M, "Seq-NMS best path equals enumeration", || {
        let mut r = rng(28);
        for trial in 0..50 {
            let frames: Vec<Vec<Detection>> = (0..r.random_range(1..=5))
                .map(|t| (0..r.random_range(0..=4)).map(|_| det(t, 0, r.random_range(0.01..1.0), random_box(&mut r, 12.0))).collect())
                .collect();
            let g = LinkGraph::new(frames.clone(), 0.3);
            let boxes: Vec<Vec<BBox>> = frames.iter().map(|f| f.iter().map(|d| d.bbox).collect()).collect();
            let scores: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|d| d.score as f64).collect()).collect();
            let fast = g.best_path().map(|(v, _)| v);
            let slow = best_path_bruteforce(&boxes, &scores, &g.alive, 0.3);
            let same = match (fast, slow) {
                (Some(a), Some(b)) => (a - b).abs() < 1e-9,
                (None, None) => true,
                _ => false,
            };
            ensure(same, || format!("trial {trial}: {fast:?} vs {slow:?}"))?;
        }
        Ok("50 trials".into())
    });
    rep.run(M, "detections JSONL round trip", || {
        let mut r = rng(29);
        let frames: Vec<Vec<Detection>> =
            (0..3).map(|t| (0..3).map(|_| det(t, 1, r.random_range(0.0..1.0), random_box(&mut r, 50.0))).collect()).collect();
        let text = detections_jsonl(&frames).map_err(e2s)?;
        let back = parse_detections_jsonl(&text).map_err(e2s)?;
        ensure(back == frames.concat(), || "detections changed on reload".into())?;
        Ok(format!("{} lines", back.len()))
    });
}

fn eval_checks(rep: &mut SelfCheckReport) {
    const M: &str = "evaluation";
    rep.run(M, "AP fixture equals 5/6", || {
        let (dets, gts) = ap_fixture();
        let ap = average_precision(&dets, &gts, 0.5);
        ensure(ap == 5.0 / 6.0, || format!("AP {ap}"))?;
        Ok("exact".into())
    });
    rep.run(M, "speed stratification fixture", || {
        let fixture = stratification_fixture();
        let tracks: Vec<_> = fixture.iter().map(|(t, _)| t.clone()).collect();
        let strata = speed_stratify(&tracks, 10);
        for (t, want) in &fixture {
            for &f in t.boxes.keys() {
                let got = strata[&(t.track_id, f)];
                ensure(got == *want, || format!("track {} frame {f}: {got:?}, expected {want:?}", t.track_id))?;
            }
        }
        Ok("3 tracks".into())
    });
    rep.run(M, "perfect detections score 1", || {
        let (_, gts) = ap_fixture();
        let dets: Vec<Detection> = gts.iter().map(|g| det(g.frame, g.class_id, 1.0, g.bbox)).collect();
        let r = evaluate(&dets, &gts, &EvalConfig::default());
        ensure(r.map == 1.0, || format!("mAP {}", r.map))?;
        Ok("mAP 1".into())
    });
}

fn synth_checks(rep: &mut SelfCheckReport) {
    const M: &str = "synthetic-data";
    rep.run(M, "rendering is deterministic", || {
        let mut spec = suite_scene(SuiteKind::Blur, 7);
        spec.frame_count = 3;
        if let Some(b) = spec.degradations.blur.as_mut() {
            b.frames.retain(|&f| f < 3);
        }
        let (a, ta) = render_scene(&spec).map_err(e2s)?;
        let (b, tb) = render_scene(&spec).map_err(e2s)?;
        ensure(a == b && ta == tb, || "two renders differ".into())?;
        Ok(format!("{} frames", a.len()))
    });
    rep.run(M, "exact flow is the object velocity", || {
        let mut spec = suite_scene(SuiteKind::Fast, 8);
        spec.frame_count = 2;
        spec.objects.truncate(1);
        spec.objects[0].x = 100.0;
        spec.objects[0].y = 100.0;
        let (_, truth) = render_scene(&spec).map_err(e2s)?;
        let o = &truth.objects[0];
        let flow = truth_flow_full(&truth, 0, 1).map_err(e2s)?;
        let (cx, cy) = o.box_at(0).center();
        let (x, y) = (cx as usize, cy as usize);
        let got = (flow.get(0, 0, y, x), flow.get(0, 1, y, x));
        ensure(got == (o.vx, o.vy), || format!("flow {got:?}, velocity ({}, {})", o.vx, o.vy))?;
        Ok(format!("({}, {})", o.vx, o.vy))
    });
}

fn pipeline_checks(rep: &mut SelfCheckReport, config: &PipelineConfig) {
    const M: &str = "pipeline";
    rep.run(M, "configuration is consistent", || config.validate().map(|_| "valid".into()).map_err(e2s));
    rep.run(M, "configuration JSON round trip", || {
        let text = serde_json::to_string(config).map_err(e2s)?;
        let back: PipelineConfig = serde_json::from_str(&text).map_err(e2s)?;
        ensure(&back == config, || "config changed on reload".into())?;
        Ok(format!("{} bytes", text.len()))
    });
    rep.run(M, "support selection is symmetric and uniform", || {
        let s = support_offsets(12, 6);
        ensure(s == [-12, -8, -4, 4, 8, 12], || format!("{s:?}"))?;
        Ok(format!("{s:?}"))
    });
    rep.run(M, "single-frame video: every stream equals the baseline", || {
        let mut spec = suite_scene(SuiteKind::Clean, 9);
        spec.frame_count = 1;
        let (frames, truth) = render_scene(&spec).map_err(e2s)?;
        let det = Detector::new(config, spec.height, spec.width).map_err(e2s)?;
        let provider = FlowProvider::ExactSynthetic(std::sync::Arc::new(truth));
        let ab = infer_ablation(&det, &frames, &provider).map_err(e2s)?;
        let strip = |v: &[Vec<Detection>]| -> Vec<(usize, u32, [u32; 4])> {
            v.iter()
                .flatten()
                .map(|d| (d.class, d.score.to_bits(), [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2].map(f32::to_bits)))
                .collect()
        };
        let base = strip(&ab.baseline);
        for (name, v) in [("motion", &ab.motion), ("sampling", &ab.sampling)] {
            ensure(strip(v) == base, || format!("{name} differs from the baseline"))?;
        }
        Ok(format!("{} detections", base.len()))
    });
}
