//! Video-level orchestration: configuration, the sliding feature buffer,
//! support selection, two-stream inference with late fusion, the training
//! forward pass, and stage timing.

use crate::backbone::{aggregate, extract_pyramid, BackboneConfig, Contribution, FeaturePyramid};
use crate::boxes::BBox;
use crate::detector::{AnalyticHeadConfig, DetectorWeights, WeightMode};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::flow::{BlockMatchParams, FlowField, FlowProvider};
use crate::heads::{
    encode_targets, generate_anchors, head_forward, match_anchors, Anchor, AnchorConfig, HeadOutputs, MatchConfig,
};
use crate::losses::{total_loss, LossBreakdown, LossConfig, LossTargets, StreamOutputs};
use crate::motion::calibrate_pyramid;
use crate::postprocess::{
    decode_detections, late_fuse, nms, seq_nms, DecodeConfig, Detection, SeqNmsConfig, Stream, Tubelet,
};
use crate::sampling::{hallucinate, offsets_from_flow, predict_offsets, OffsetSource, DEFORM_GROUPS};
use crate::synth::{SceneTruth, TruthBox, CLASS_COUNT};
use crate::tensor::Tensor;
use crate::weights::rng;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Streams {
    Motion,
    Sampling,
    Both,
    None,
}

impl Streams {
    pub fn motion(self) -> bool {
        matches!(self, Streams::Motion | Streams::Both)
    }
    pub fn sampling(self) -> bool {
        matches!(self, Streams::Sampling | Streams::Both)
    }
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "motion" => Some(Streams::Motion),
            "sampling" => Some(Streams::Sampling),
            "both" => Some(Streams::Both),
            "none" => Some(Streams::None),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    /// Temporal range: supports come from `t - k ..= t + k`.
    pub k: usize,
    pub buffer_capacity: usize,
    /// Supports used per reference frame at inference.
    pub supports: usize,
    /// Supports drawn per training step.
    pub train_supports: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            k: 12,
            buffer_capacity: 25,
            supports: 6,
            train_supports: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FlowChoice {
    /// Ground truth of a generated scene.
    Exact,
    /// `.flo` files; `dir` defaults to the scene's `flow/` directory.
    FloFiles { dir: Option<PathBuf> },
    BlockMatch(BlockMatchParams),
}

impl FlowChoice {
    pub fn provider(&self, truth: Option<Arc<SceneTruth>>, scene_dir: Option<&Path>) -> Result<FlowProvider> {
        match self {
            FlowChoice::Exact => truth
                .map(FlowProvider::ExactSynthetic)
                .ok_or_else(|| Error::Config("exact flow needs a generated scene with a manifest".into())),
            FlowChoice::FloFiles { dir } => {
                let dir = dir
                    .clone()
                    .or_else(|| scene_dir.map(crate::dataset::flow_dir))
                    .ok_or_else(|| Error::Config("flo-files flow needs a directory".into()))?;
                Ok(FlowProvider::FloFiles(dir))
            }
            FlowChoice::BlockMatch(p) => Ok(FlowProvider::BlockMatcher(*p)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub offsets: OffsetSource,
    /// Filters per offset-predictor conv; 0 means the pyramid channel count.
    pub offset_filters: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            offsets: OffsetSource::Predictor,
            offset_filters: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub mode: WeightMode,
    pub analytic: AnalyticHeadConfig,
    /// Load a saved weight set instead of building one.
    pub weights_dir: Option<PathBuf>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            mode: WeightMode::Analytic,
            analytic: AnalyticHeadConfig::default(),
            weights_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub detector: DetectorConfig,
    pub classes: usize,
    pub anchors: AnchorConfig,
    pub matching: MatchConfig,
    pub loss: LossConfig,
    pub decode: DecodeConfig,
    pub nms_iou: f64,
    pub use_seq_nms: bool,
    pub seq_nms: SeqNmsConfig,
    pub aggregation: AggregationConfig,
    pub flow: FlowChoice,
    pub sampling: SamplingConfig,
    pub streams: Streams,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            backbone: BackboneConfig::default(),
            detector: DetectorConfig::default(),
            classes: CLASS_COUNT,
            anchors: AnchorConfig::default(),
            matching: MatchConfig::default(),
            loss: LossConfig::default(),
            decode: DecodeConfig::default(),
            nms_iou: 0.45,
            use_seq_nms: false,
            seq_nms: SeqNmsConfig::default(),
            aggregation: AggregationConfig::default(),
            flow: FlowChoice::Exact,
            sampling: SamplingConfig::default(),
            streams: Streams::Both,
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.aggregation;
        if a.buffer_capacity != 2 * a.k + 1 {
            return Err(Error::Config(format!(
                "buffer_capacity {} must equal 2k+1 = {}",
                a.buffer_capacity,
                2 * a.k + 1
            )));
        }
        if a.supports > 2 * a.k {
            return Err(Error::Config(format!("{} supports exceed the 2k = {} window", a.supports, 2 * a.k)));
        }
        if a.train_supports != 2 {
            return Err(Error::Config("train_supports must be 2".into()));
        }
        let c = self.backbone.channels;
        if c == 0 || !c.is_multiple_of(DEFORM_GROUPS) {
            return Err(Error::Config(format!(
                "channels ({c}) must be a positive multiple of {DEFORM_GROUPS} deformable groups"
            )));
        }
        if self.classes == 0 {
            return Err(Error::Config("at least one class is required".into()));
        }
        self.anchors.validate()?;
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config("nms_iou must lie in [0, 1]".into()));
        }
        if self.matching.background_iou > self.matching.foreground_iou {
            return Err(Error::Config("background_iou exceeds foreground_iou".into()));
        }
        Ok(())
    }

    pub fn offset_filters(&self) -> usize {
        if self.sampling.offset_filters == 0 {
            self.backbone.channels
        } else {
            self.sampling.offset_filters
        }
    }
}

/// Supports for reference `t`: `n / 2` evenly spaced before and the rest
/// after, at offsets `round(k * j / count)`, dropped when outside the video.
pub fn support_offsets(k: usize, count: usize) -> Vec<i32> {
    let before = count / 2;
    let after = count - before;
    let side = |n: usize| -> Vec<i32> {
        (1..=n)
            .map(|j| (k as f64 * j as f64 / n as f64).round() as i32)
            .collect()
    };
    let mut out: Vec<i32> = side(before).into_iter().map(|o| -o).collect();
    out.extend(side(after));
    out.sort_unstable();
    out.dedup();
    out.retain(|&o| o != 0);
    out
}

pub fn valid_supports(offsets: &[i32], t: usize, frames: usize) -> Vec<i32> {
    offsets
        .iter()
        .copied()
        .filter(|&o| {
            let s = t as i64 + o as i64;
            s >= 0 && s < frames as i64
        })
        .collect()
}

/// Wall time per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub pyramid: Duration,
    pub flow: Duration,
    pub motion: Duration,
    pub sampling: Duration,
    pub heads: Duration,
    pub postprocess: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.pyramid + self.flow + self.motion + self.sampling + self.heads + self.postprocess
    }
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// A ready-to-run detector for one input size.
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: PipelineConfig,
    pub weights: DetectorWeights,
    pub anchors: Vec<Anchor>,
    pub height: usize,
    pub width: usize,
    reach: f32,
}

impl Detector {
    pub fn new(config: &PipelineConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        let c = config.backbone.channels;
        let a = config.anchors.per_location();
        let f = config.offset_filters();
        let weights = match (&config.detector.weights_dir, config.detector.mode) {
            (Some(dir), _) => DetectorWeights::load(dir, c, config.classes, a, f)?,
            (None, WeightMode::Seeded) => DetectorWeights::seeded(config.seed, c, config.classes, a, f),
            (None, WeightMode::Analytic) => {
                DetectorWeights::analytic(config.seed, c, config.classes, &config.anchors, &config.detector.analytic, f)?
            }
        };
        let anchors = generate_anchors(&config.anchors, height, width)?;
        let reach = weights.predictor.reach() as f32;
        Ok(Detector {
            config: config.clone(),
            weights,
            anchors,
            height,
            width,
            reach,
        })
    }

    /// Offset magnitude the predictor can express, in level pixels.
    pub fn reach(&self) -> f32 {
        self.reach
    }

    pub fn pyramid(&self, frame: &Tensor) -> Result<FeaturePyramid> {
        if frame.spatial() != (self.height, self.width) {
            return Err(Error::dims("frame vs detector", &[frame.height(), frame.width()], &[self.height, self.width]));
        }
        extract_pyramid(frame, &self.weights.backbone)
    }

    pub fn heads(&self, pyramid: &FeaturePyramid) -> Result<HeadOutputs> {
        head_forward(pyramid, &self.weights.head)
    }

    pub fn decode(&self, outputs: &HeadOutputs, frame: usize, stream: Stream) -> Vec<Detection> {
        decode_detections(outputs, &self.anchors, frame, stream, &self.config.decode, (self.height, self.width))
    }

    fn needs_flow(&self, motion: bool, sampling: bool) -> bool {
        motion || (sampling && self.config.sampling.offsets == OffsetSource::FlowOracle)
    }

    /// The support pyramid hallucinated onto the reference, level by level.
    pub fn sampling_term(
        &self,
        reference: &FeaturePyramid,
        support: &FeaturePyramid,
        flow: Option<&FlowField>,
    ) -> Result<FeaturePyramid> {
        support.try_map(|level, sup| {
            let offsets = match (self.config.sampling.offsets, flow) {
                (OffsetSource::FlowOracle, Some(f)) => offsets_from_flow(f.level(level), self.reach)?,
                (OffsetSource::FlowOracle, None) => {
                    return Err(Error::Config("flow-oracle offsets need a flow field".into()))
                }
                (OffsetSource::Predictor, _) => predict_offsets(reference.level(level), sup, &self.weights.predictor)?,
            };
            hallucinate(sup, &offsets, &self.weights.sampler)
        })
    }

    fn zero_flow(&self, t: usize) -> FlowField {
        FlowField::zeros(self.height, self.width, t, t)
    }
}

/// Which per-frame outputs to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Want {
    pub baseline: bool,
    pub motion: bool,
    pub sampling: bool,
}

impl Want {
    pub fn for_streams(s: Streams) -> Self {
        Want {
            baseline: s == Streams::None,
            motion: s.motion(),
            sampling: s.sampling(),
        }
    }
}

/// Decoded, not yet suppressed, candidates of one reference frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameCandidates {
    pub baseline: Option<Vec<Detection>>,
    pub motion: Option<Vec<Detection>>,
    pub sampling: Option<Vec<Detection>>,
}

impl FrameCandidates {
    /// Final detections for a stream setting, following late fusion.
    pub fn finish(&self, streams: Streams, iou: f64) -> Vec<Detection> {
        let get = |o: &Option<Vec<Detection>>| o.as_deref().unwrap_or(&[]).to_vec();
        match streams {
            Streams::None => nms(&get(&self.baseline), iou),
            Streams::Motion => nms(&get(&self.motion), iou),
            Streams::Sampling => nms(&get(&self.sampling), iou),
            Streams::Both => late_fuse(&get(&self.motion), &get(&self.sampling), iou),
        }
    }
}

/// Runs both aggregations for reference `t` given the pyramids it needs.
pub fn frame_candidates(
    det: &Detector,
    frames: &[Tensor],
    pyramids: &dyn Fn(usize) -> Result<FeaturePyramid>,
    provider: &FlowProvider,
    t: usize,
    want: Want,
    times: &mut StageTimes,
) -> Result<FrameCandidates> {
    let cfg = &det.config;
    let offsets = valid_supports(&support_offsets(cfg.aggregation.k, cfg.aggregation.supports), t, frames.len());
    let reference = pyramids(t)?;
    let mut out = FrameCandidates::default();

    if want.baseline {
        let h = timed(&mut times.heads, || det.heads(&reference))?;
        out.baseline = Some(timed(&mut times.postprocess, || det.decode(&h, t, Stream::Motion)));
    }
    if !(want.motion || want.sampling) {
        return Ok(out);
    }
    let use_flow = det.needs_flow(want.motion, want.sampling);
    let mut motion_terms = vec![Contribution {
        tau: 0,
        pyramid: reference.clone(),
    }];
    let mut sampling_terms = Vec::new();
    if want.sampling {
        let own = (det.config.sampling.offsets == OffsetSource::FlowOracle).then(|| det.zero_flow(t));
        let p = timed(&mut times.sampling, || det.sampling_term(&reference, &reference, own.as_ref()))?;
        sampling_terms.push(Contribution { tau: 0, pyramid: p });
    }
    for &tau in &offsets {
        let s = (t as i64 + tau as i64) as usize;
        let support = pyramids(s)?;
        let flow = if use_flow {
            Some(timed(&mut times.flow, || provider.provide(frames, t, s))?)
        } else {
            None
        };
        if want.motion {
            let f = flow.as_ref().expect("motion stream always has flow");
            let p = timed(&mut times.motion, || calibrate_pyramid(&support, f))?;
            motion_terms.push(Contribution { tau, pyramid: p });
        }
        if want.sampling {
            let p = timed(&mut times.sampling, || det.sampling_term(&reference, &support, flow.as_ref()))?;
            sampling_terms.push(Contribution { tau, pyramid: p });
        }
    }
    if want.motion {
        let agg = timed(&mut times.motion, || aggregate(&reference, &motion_terms))?;
        let h = timed(&mut times.heads, || det.heads(&agg))?;
        out.motion = Some(timed(&mut times.postprocess, || det.decode(&h, t, Stream::Motion)));
    }
    if want.sampling {
        let agg = timed(&mut times.sampling, || aggregate(&reference, &sampling_terms))?;
        let h = timed(&mut times.heads, || det.heads(&agg))?;
        out.sampling = Some(timed(&mut times.postprocess, || det.decode(&h, t, Stream::Sampling)));
    }
    Ok(out)
}

/// Fixed-capacity cache of per-frame pyramids, advanced one frame at a time.
#[derive(Debug)]
pub struct FeatureBuffer {
    capacity: usize,
    entries: VecDeque<(usize, FeaturePyramid)>,
}

impl FeatureBuffer {
    pub fn new(capacity: usize) -> Self {
        FeatureBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, frame: usize) -> Option<&FeaturePyramid> {
        self.entries.iter().find(|(f, _)| *f == frame).map(|(_, p)| p)
    }

    /// Slides the window to `lo..=hi`, computing only frames not yet cached.
    pub fn advance(&mut self, lo: usize, hi: usize, mut compute: impl FnMut(usize) -> Result<FeaturePyramid>) -> Result<()> {
        while self.entries.front().is_some_and(|(f, _)| *f < lo) {
            self.entries.pop_front();
        }
        let next = self.entries.back().map_or(lo, |(f, _)| f + 1).max(lo);
        for f in next..=hi {
            if self.entries.len() == self.capacity {
                return Err(Error::Validation(format!("feature buffer overflow at frame {f}")));
            }
            self.entries.push_back((f, compute(f)?));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoDetections {
    pub frames: Vec<Vec<Detection>>,
    pub tubelets: Vec<Tubelet>,
}

/// Candidates for every frame with a sliding buffer of pyramids.
pub fn video_candidates(
    det: &Detector,
    frames: &[Tensor],
    provider: &FlowProvider,
    want: Want,
    times: &mut StageTimes,
) -> Result<Vec<FrameCandidates>> {
    if frames.is_empty() {
        return Err(Error::Validation("video has no frames".into()));
    }
    let k = det.config.aggregation.k;
    let aggregate_window = want.motion || want.sampling;
    let reach = if aggregate_window && det.config.aggregation.supports > 0 { k } else { 0 };
    let mut buffer = FeatureBuffer::new(det.config.aggregation.buffer_capacity.max(1));
    let mut out = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        let (lo, hi) = (t.saturating_sub(reach), (t + reach).min(frames.len() - 1));
        let mut pyr_time = Duration::ZERO;
        buffer.advance(lo, hi, |f| timed(&mut pyr_time, || det.pyramid(&frames[f])))?;
        times.pyramid += pyr_time;
        let lookup = |f: usize| {
            buffer
                .get(f)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("frame {f} missing from the feature buffer")))
        };
        out.push(frame_candidates(det, frames, &lookup, provider, t, want, times)?);
    }
    Ok(out)
}

/// Algorithm-2 style inference: per-frame fused detections, then optional
/// Seq-NMS over the whole clip.
pub fn infer_video(det: &Detector, frames: &[Tensor], provider: &FlowProvider) -> Result<VideoDetections> {
    infer_video_timed(det, frames, provider, &mut StageTimes::default())
}

pub fn infer_video_timed(
    det: &Detector,
    frames: &[Tensor],
    provider: &FlowProvider,
    times: &mut StageTimes,
) -> Result<VideoDetections> {
    let streams = det.config.streams;
    let cands = video_candidates(det, frames, provider, Want::for_streams(streams), times)?;
    let start = Instant::now();
    let per_frame: Vec<Vec<Detection>> = cands.iter().map(|c| c.finish(streams, det.config.nms_iou)).collect();
    let out = if det.config.use_seq_nms {
        let (tubelets, frames) = seq_nms(&per_frame, &det.config.seq_nms)?;
        VideoDetections { frames, tubelets }
    } else {
        VideoDetections {
            frames: per_frame,
            tubelets: Vec::new(),
        }
    };
    times.postprocess += start.elapsed();
    Ok(out)
}

/// One reference frame recomputed from scratch, without the buffer.
pub fn detect_frame(det: &Detector, frames: &[Tensor], provider: &FlowProvider, t: usize) -> Result<Vec<Detection>> {
    let streams = det.config.streams;
    let lookup = |f: usize| det.pyramid(&frames[f]);
    let c = frame_candidates(det, frames, &lookup, provider, t, Want::for_streams(streams), &mut StageTimes::default())?;
    Ok(c.finish(streams, det.config.nms_iou))
}

/// Final per-frame detections of all four stream settings from one pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ablation {
    pub baseline: Vec<Vec<Detection>>,
    pub motion: Vec<Vec<Detection>>,
    pub sampling: Vec<Vec<Detection>>,
    pub both: Vec<Vec<Detection>>,
}

pub fn infer_ablation(det: &Detector, frames: &[Tensor], provider: &FlowProvider) -> Result<Ablation> {
    let want = Want {
        baseline: true,
        motion: true,
        sampling: true,
    };
    let cands = video_candidates(det, frames, provider, want, &mut StageTimes::default())?;
    let iou = det.config.nms_iou;
    let run = |s: Streams| cands.iter().map(|c| c.finish(s, iou)).collect();
    Ok(Ablation {
        baseline: run(Streams::None),
        motion: run(Streams::Motion),
        sampling: run(Streams::Sampling),
        both: run(Streams::Both),
    })
}

/// Two distinct temporal offsets drawn uniformly from the valid part of
/// `-k..=k` without zero, sorted.
pub fn sample_train_supports(k: usize, t: usize, frames: usize, count: usize, seed: u64) -> Vec<i32> {
    let all: Vec<i32> = (-(k as i32)..=k as i32).filter(|&o| o != 0).collect();
    let pool = valid_supports(&all, t, frames);
    let n = count.min(pool.len());
    let mut r = rng(seed);
    let mut picked: Vec<i32> = sample(&mut r, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub frame: usize,
    pub seed: u64,
    pub supports: Vec<i32>,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Forward pass of one training step with explicit support offsets.
pub fn train_step_with_supports(
    det: &Detector,
    frames: &[Tensor],
    truth: &[TruthBox],
    provider: &FlowProvider,
    t: usize,
    supports: &[i32],
) -> Result<LossBreakdown> {
    let gts: Vec<(BBox, usize)> = truth.iter().filter(|b| b.frame == t).map(|b| (b.bbox, b.class_id)).collect();
    if gts.is_empty() {
        return Err(Error::Validation(format!("no ground truth for frame {t}")));
    }
    if t >= frames.len() {
        return Err(Error::Validation(format!("frame {t} outside a {}-frame video", frames.len())));
    }
    let streams = det.config.streams;
    let want = Want {
        baseline: false,
        motion: streams.motion() || streams == Streams::None,
        sampling: streams.sampling(),
    };
    let reference = det.pyramid(&frames[t])?;
    let use_flow = det.needs_flow(want.motion, want.sampling);
    let mut motion_terms = vec![Contribution {
        tau: 0,
        pyramid: reference.clone(),
    }];
    let own = use_flow.then(|| det.zero_flow(t));
    let mut sampling_terms = vec![Contribution {
        tau: 0,
        pyramid: det.sampling_term(&reference, &reference, own.as_ref())?,
    }];
    if streams != Streams::None {
        for &tau in supports {
            let s = t as i64 + tau as i64;
            if s < 0 || s >= frames.len() as i64 {
                return Err(Error::Validation(format!("support {tau} of frame {t} is outside the video")));
            }
            let s = s as usize;
            let support = det.pyramid(&frames[s])?;
            let flow = if use_flow { Some(provider.provide(frames, t, s)?) } else { None };
            if want.motion {
                motion_terms.push(Contribution {
                    tau,
                    pyramid: calibrate_pyramid(&support, flow.as_ref().expect("flow"))?,
                });
            }
            if want.sampling {
                sampling_terms.push(Contribution {
                    tau,
                    pyramid: det.sampling_term(&reference, &support, flow.as_ref())?,
                });
            }
        }
    }
    let assignments = match_anchors(&det.anchors, &gts, &det.config.matching);
    let targets = encode_targets(&det.anchors, &gts, &assignments)?;
    let lt = LossTargets {
        assignments: &assignments,
        targets: &targets,
        classes: det.config.classes,
    };
    let flat = |terms: &[Contribution]| -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(det.heads(&aggregate(&reference, terms)?)?.flatten(&det.anchors))
    };
    let m = if want.motion { Some(flat(&motion_terms)?) } else { None };
    let s = if want.sampling { Some(flat(&sampling_terms)?) } else { None };
    fn view(o: &Option<(Vec<f64>, Vec<f64>)>) -> Option<StreamOutputs<'_>> {
        o.as_ref().map(|(l, d)| StreamOutputs { logits: l, deltas: d })
    }
    total_loss(view(&m), view(&s), &lt, &det.config.loss)
}

/// Training forward pass with seeded temporal dropout.
pub fn train_step_forward(
    det: &Detector,
    frames: &[Tensor],
    truth: &[TruthBox],
    provider: &FlowProvider,
    t: usize,
    seed: u64,
) -> Result<TrainStepReport> {
    let a = &det.config.aggregation;
    let supports = sample_train_supports(a.k, t, frames.len(), a.train_supports, seed);
    let loss = train_step_with_supports(det, frames, truth, provider, t, &supports)?;
    Ok(TrainStepReport {
        frame: t,
        seed,
        supports,
        loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMillis {
    pub pyramid: f64,
    pub flow: f64,
    pub motion: f64,
    pub sampling: f64,
    pub heads: f64,
    pub postprocess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub supports: usize,
    pub frames: usize,
    pub runs: usize,
    /// Median total wall time of one clip.
    pub median_ms: f64,
    pub median_ms_per_frame: f64,
    /// Median of each stage over the runs.
    pub stages: StageMillis,
    /// `(max - min) / median` of the run totals.
    pub spread: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times full inference for each support count: one warm-up run, then
/// `runs` measured runs.
pub fn bench(
    config: &PipelineConfig,
    frames: &[Tensor],
    provider: &FlowProvider,
    support_counts: &[usize],
    runs: usize,
) -> Result<Vec<BenchReport>> {
    let (h, w) = frames
        .first()
        .map(|f| f.spatial())
        .ok_or_else(|| Error::Validation("bench needs at least one frame".into()))?;
    let mut reports = Vec::new();
    for &supports in support_counts {
        let mut cfg = config.clone();
        cfg.aggregation.supports = supports;
        let det = Detector::new(&cfg, h, w)?;
        infer_video(&det, frames, provider)?;
        let mut samples = Vec::with_capacity(runs);
        for _ in 0..runs.max(1) {
            let mut times = StageTimes::default();
            let start = Instant::now();
            infer_video_timed(&det, frames, provider, &mut times)?;
            samples.push((start.elapsed(), times));
        }
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        let totals: Vec<f64> = samples.iter().map(|(d, _)| ms(*d)).collect();
        let stage = |f: fn(&StageTimes) -> Duration| median(samples.iter().map(|(_, s)| ms(f(s))).collect());
        let med = median(totals.clone());
        let (lo, hi) = totals.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        reports.push(BenchReport {
            supports,
            frames: frames.len(),
            runs: samples.len(),
            median_ms: med,
            median_ms_per_frame: med / frames.len() as f64,
            stages: StageMillis {
                pyramid: stage(|s| s.pyramid),
                flow: stage(|s| s.flow),
                motion: stage(|s| s.motion),
                sampling: stage(|s| s.sampling),
                heads: stage(|s| s.heads),
                postprocess: stage(|s| s.postprocess),
            },
            spread: if med > 0.0 { (hi - lo) / med } else { 0.0 },
        });
    }
    Ok(reports)
}
