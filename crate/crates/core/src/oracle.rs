//! Slow, obviously-correct reference implementations. Tests, the self-check
//! and the acceptance suite compare the optimised code paths against these.

use crate::boxes::BBox;
use crate::eval::{GroundTruthTrack, Stratum};
use crate::heads::Assignment;
use crate::losses::{loss_gradients, total_loss, LossConfig, LossTargets, StreamOutputs};
use crate::postprocess::{Detection, Stream};
use crate::synth::TruthBox;
use crate::tensor::{ConvSpec, Tensor};
use crate::weights::rng;
use rand::Rng;
use std::collections::BTreeMap;

/// Uniform `[-1, 1)` tensor from a seed.
pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect()).expect("non-empty shape")
}

/// Direct six-loop convolution accumulated in `f64`.
pub fn conv2d_naive(input: &Tensor, spec: &ConvSpec) -> Tensor {
    let [n, ci, h, w] = input.shape();
    let [co, _, kh, kw] = spec.weight.shape();
    let (ho, wo) = spec.output_size(h, w).expect("valid geometry");
    Tensor::from_fn([n, co, ho, wo], |b, o, oy, ox| {
        let mut acc = spec.bias[o] as f64;
        for i in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += spec.weight.get(o, i, ky, kx) as f64 * input.get(b, i, iy as usize, ix as usize) as f64;
                    }
                }
            }
        }
        acc as f32
    })
}

/// Greedy NMS characterised without simulating it: the kept set is the unique
/// subset in which every box survives exactly when no higher-ranked kept box
/// of its class overlaps it by more than `iou`. Found by trying all subsets.
pub fn nms_bruteforce(dets: &[Detection], iou: f64) -> Vec<usize> {
    let n = dets.len();
    assert!(n <= 16, "brute force is exponential");
    let ranks_above = |a: usize, b: usize| dets[a].score > dets[b].score || (dets[a].score == dets[b].score && a < b);
    let suppresses = |a: usize, b: usize| dets[a].class == dets[b].class && dets[a].bbox.iou(&dets[b].bbox) > iou;
    for mask in 0u32..(1 << n) {
        let kept = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|b| {
            let blocked = (0..n).any(|a| a != b && kept(a) && ranks_above(a, b) && suppresses(a, b));
            kept(b) != blocked
        });
        if consistent {
            let mut out: Vec<usize> = (0..n).filter(|&i| kept(i)).collect();
            out.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
            return out;
        }
    }
    unreachable!("greedy suppression always has a consistent subset")
}

/// Best total score over every chain of linked boxes in consecutive frames,
/// by enumerating all chains. `alive` masks removed nodes.
pub fn best_path_bruteforce(frames: &[Vec<BBox>], scores: &[Vec<f64>], alive: &[Vec<bool>], link_iou: f64) -> Option<f64> {
    fn extend(
        frames: &[Vec<BBox>],
        scores: &[Vec<f64>],
        alive: &[Vec<bool>],
        link_iou: f64,
        t: usize,
        i: usize,
        acc: f64,
        best: &mut Option<f64>,
    ) {
        let total = acc + scores[t][i];
        if best.is_none_or(|b| total > b) {
            *best = Some(total);
        }
        if t + 1 < frames.len() {
            for j in 0..frames[t + 1].len() {
                if alive[t + 1][j] && frames[t][i].iou(&frames[t + 1][j]) >= link_iou {
                    extend(frames, scores, alive, link_iou, t + 1, j, total, best);
                }
            }
        }
    }
    let mut best = None;
    for t in 0..frames.len() {
        for i in 0..frames[t].len() {
            if alive[t][i] {
                extend(frames, scores, alive, link_iou, t, i, 0.0, &mut best);
            }
        }
    }
    best
}

/// Five-point central differences of the single-stream objective with
/// respect to the listed logit and delta coordinates, in `f64`.
pub fn loss_fd_gradient(
    logits: &[f64],
    deltas: &[f64],
    targets: &LossTargets,
    cfg: &LossConfig,
    logit_coords: &[usize],
    delta_coords: &[usize],
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let eval = |l: &[f64], d: &[f64]| {
        total_loss(Some(StreamOutputs { logits: l, deltas: d }), None, targets, cfg)
            .expect("consistent shapes")
            .total
    };
    // derivative of `f` at 0 from f(-2h), f(-h), f(h), f(2h)
    let stencil = |f: &mut dyn FnMut(f64) -> f64| (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
    let mut l = logits.to_vec();
    let mut d = deltas.to_vec();
    let gl = logit_coords
        .iter()
        .map(|&i| {
            let x = l[i];
            let g = stencil(&mut |e| {
                l[i] = x + e;
                eval(&l, &d)
            });
            l[i] = x;
            g
        })
        .collect();
    let gd = delta_coords
        .iter()
        .map(|&i| {
            let x = d[i];
            let g = stencil(&mut |e| {
                d[i] = x + e;
                eval(&l, &d)
            });
            d[i] = x;
            g
        })
        .collect();
    (gl, gd)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Outcome of comparing analytic and numeric loss gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// Coordinates compared.
    pub coords: usize,
    /// Coordinates the loss actually depends on.
    pub active: usize,
    pub max_relative_error: f64,
}

/// Random single-stream loss instance: logits in `[-4, 4]`, every assignment
/// kind present, deltas at least `0.01` away from the smooth-L1 joint.
pub fn random_loss_case(seed: u64, anchors: usize, classes: usize) -> (Vec<Assignment>, Vec<[f64; 4]>, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let assignments: Vec<Assignment> = (0..anchors)
        .map(|j| match (j % 4, r.random_range(0..3)) {
            (0, _) => Assignment::Foreground { class: r.random_range(0..classes), gt: 0 },
            (1, _) => Assignment::Background,
            (_, 0) => Assignment::Ignore,
            (_, 1) => Assignment::Background,
            _ => Assignment::Foreground { class: r.random_range(0..classes), gt: 0 },
        })
        .collect();
    let targets: Vec<[f64; 4]> = (0..anchors).map(|_| [0; 4].map(|_| r.random_range(-1.0..1.0))).collect();
    let logits = (0..anchors * classes).map(|_| r.random_range(-4.0..4.0)).collect();
    let deltas = (0..anchors * 4)
        .map(|i| {
            let t = targets[i / 4][i % 4];
            loop {
                let d = r.random_range(-3.0..3.0);
                if ((d - t).abs() - 1.0f64).abs() > 0.01 {
                    break d;
                }
            }
        })
        .collect();
    (assignments, targets, logits, deltas)
}

/// Compares [`loss_gradients`] with central differences on every coordinate
/// of `cases` random instances.
pub fn gradient_check(seed: u64, cases: usize, anchors: usize, classes: usize) -> GradientCheck {
    let cfg = LossConfig::default();
    let mut out = GradientCheck {
        coords: 0,
        active: 0,
        max_relative_error: 0.0,
    };
    for case in 0..cases {
        let (asg, targets, logits, deltas) = random_loss_case(seed.wrapping_add(case as u64), anchors, classes);
        let t = LossTargets {
            assignments: &asg,
            targets: &targets,
            classes,
        };
        let analytic = loss_gradients(StreamOutputs { logits: &logits, deltas: &deltas }, &t, &cfg).expect("shapes");
        let lc: Vec<usize> = (0..logits.len()).collect();
        let dc: Vec<usize> = (0..deltas.len()).collect();
        let (nl, nd) = loss_fd_gradient(&logits, &deltas, &t, &cfg, &lc, &dc, 1e-4);
        for (a, n) in analytic.logits.iter().chain(&analytic.deltas).zip(nl.iter().chain(&nd)) {
            out.coords += 1;
            if *a != 0.0 {
                out.active += 1;
            }
            out.max_relative_error = out.max_relative_error.max(relative_error(*a, *n, 1e-6));
        }
    }
    out
}

/// Two ground truths and three ranked detections: hit, miss, hit. The
/// precision envelope is 1 up to recall 1/2 and 2/3 after, so AP = 5/6.
pub fn ap_fixture() -> (Vec<Detection>, Vec<TruthBox>) {
    let square = |x: f32| BBox::new(x, 0.0, x + 10.0, 10.0).expect("ordered");
    let gt = |x: f32, track_id: usize| TruthBox {
        frame: 0,
        track_id,
        class_id: 0,
        bbox: square(x),
        stratum: Stratum::Slow,
    };
    let det = |x: f32, score: f32| Detection {
        frame: 0,
        class: 0,
        score,
        bbox: square(x),
        stream: Stream::Motion,
    };
    (vec![det(0.0, 0.9), det(200.0, 0.8), det(50.0, 0.7)], vec![gt(0.0, 0), gt(50.0, 1)])
}

/// Three two-frame tracks of 20-pixel squares moving by 0.5, 2 and 5 pixels,
/// with IoUs 19.5/20.5, 18/22 and 15/25, and the stratum each must get.
pub fn stratification_fixture() -> Vec<(GroundTruthTrack, Stratum)> {
    [(0.5f32, Stratum::Slow), (2.0, Stratum::Medium), (5.0, Stratum::Fast)]
        .into_iter()
        .enumerate()
        .map(|(id, (shift, stratum))| {
            let y = 40.0 * id as f32;
            let boxes = BTreeMap::from([
                (0, BBox::new(0.0, y, 20.0, y + 20.0).expect("ordered")),
                (1, BBox::new(shift, y, shift + 20.0, y + 20.0).expect("ordered")),
            ]);
            let track = GroundTruthTrack {
                track_id: id,
                class_id: 0,
                boxes,
            };
            (track, stratum)
        })
        .collect()
}
