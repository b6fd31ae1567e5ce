//! Anchors, box coding, anchor/ground-truth matching and the shared
//! class/box subnets applied to every pyramid level.

use crate::backbone::{level_stride, FeaturePyramid, INPUT_MULTIPLE, LEVELS};
use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::{conv2d, ConvSpec, Tensor};
use crate::weights::{he_conv, rng, write_convs, ConvTable};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    /// Square side of the base anchor for P3..P6, in input pixels.
    pub sizes: [f32; 4],
    /// Width over height.
    pub aspect_ratios: Vec<f32>,
    pub size_factors: Vec<f32>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            sizes: [32.0, 64.0, 128.0, 256.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            size_factors: vec![1.0, 2f32.powf(1.0 / 3.0), 2f32.powf(2.0 / 3.0)],
        }
    }
}

impl AnchorConfig {
    pub fn per_location(&self) -> usize {
        self.aspect_ratios.len() * self.size_factors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &f32| v.is_finite() && *v > 0.0;
        if !self.sizes.iter().all(positive)
            || self.aspect_ratios.is_empty()
            || self.size_factors.is_empty()
            || !self.aspect_ratios.iter().all(positive)
            || !self.size_factors.iter().all(positive)
        {
            return Err(Error::Config("anchor sizes, ratios and factors must be positive".into()));
        }
        Ok(())
    }

    /// `(width, height)` of `slot` at `level`; slot = ratio index * factors + factor index.
    pub fn shape(&self, level: usize, slot: usize) -> (f32, f32) {
        let nf = self.size_factors.len();
        let ratio = self.aspect_ratios[slot / nf];
        let factor = self.size_factors[slot % nf];
        let side = self.sizes[level - LEVELS[0]];
        let area = side * side * factor * factor;
        let h = (area / ratio).sqrt();
        (ratio * h, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub level: usize,
    pub y: usize,
    pub x: usize,
    pub slot: usize,
    pub bbox: BBox,
}

/// Anchors ordered by `(level, y, x, slot)`.
pub fn generate_anchors(config: &AnchorConfig, height: usize, width: usize) -> Result<Vec<Anchor>> {
    config.validate()?;
    if !height.is_multiple_of(INPUT_MULTIPLE) || !width.is_multiple_of(INPUT_MULTIPLE) {
        return Err(Error::Config(format!(
            "input {height}x{width} is not a multiple of {INPUT_MULTIPLE}"
        )));
    }
    let a = config.per_location();
    let mut out = Vec::new();
    for level in LEVELS {
        let s = level_stride(level);
        let shapes: Vec<(f32, f32)> = (0..a).map(|slot| config.shape(level, slot)).collect();
        for y in 0..height / s {
            for x in 0..width / s {
                let (cx, cy) = (s as f32 * (x as f32 + 0.5), s as f32 * (y as f32 + 0.5));
                for (slot, &(w, h)) in shapes.iter().enumerate() {
                    out.push(Anchor {
                        level,
                        y,
                        x,
                        slot,
                        bbox: BBox::from_center(cx, cy, w, h),
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn anchors_csv(anchors: &[Anchor]) -> String {
    let mut s = String::from("level,y,x,slot,x1,y1,x2,y2\n");
    for a in anchors {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.level, a.y, a.x, a.slot, a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2
        ));
    }
    s
}

/// Deltas beyond this are clamped on decode so `exp` cannot overflow.
const MAX_LOG_SCALE: f32 = 4.135; // ln(1000 / 16)

fn check_positive(b: &BBox, what: &str) -> Result<()> {
    if b.width() > 0.0 && b.height() > 0.0 && b.is_valid() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} box {b:?} has non-positive size")))
    }
}

/// `(dx, dy, dw, dh)`: centre offset over anchor size, then log size ratios.
pub fn encode_box(anchor: &BBox, gt: &BBox) -> Result<[f64; 4]> {
    check_positive(anchor, "anchor")?;
    check_positive(gt, "ground-truth")?;
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    let (aw, ah) = (anchor.width() as f64, anchor.height() as f64);
    Ok([
        (gx as f64 - ax as f64) / aw,
        (gy as f64 - ay as f64) / ah,
        (gt.width() as f64 / aw).ln(),
        (gt.height() as f64 / ah).ln(),
    ])
}

pub fn decode_box(anchor: &BBox, deltas: [f32; 4]) -> BBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + deltas[0] * aw;
    let cy = ay + deltas[1] * ah;
    let w = aw * deltas[2].min(MAX_LOG_SCALE).exp();
    let h = ah * deltas[3].min(MAX_LOG_SCALE).exp();
    BBox::from_center(cx, cy, w, h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Assignment {
    Foreground { class: usize, gt: usize },
    Background,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub foreground_iou: f64,
    pub background_iou: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            foreground_iou: 0.5,
            background_iou: 0.4,
        }
    }
}

/// Labels every anchor against `gts` (`(box, class)`). Each ground truth also
/// claims its best anchor, so none is left without a foreground anchor.
pub fn match_anchors(anchors: &[Anchor], gts: &[(BBox, usize)], config: &MatchConfig) -> Vec<Assignment> {
    let ious: Vec<Vec<f64>> = gts.iter().map(|(g, _)| anchors.iter().map(|a| a.bbox.iou(g)).collect()).collect();
    let mut out: Vec<Assignment> = (0..anchors.len())
        .map(|j| {
            let mut best: Option<(f64, usize)> = None;
            for (gi, row) in ious.iter().enumerate() {
                if best.is_none_or(|(b, _)| row[j] > b) {
                    best = Some((row[j], gi));
                }
            }
            match best {
                Some((iou, gi)) if iou >= config.foreground_iou => Assignment::Foreground { class: gts[gi].1, gt: gi },
                Some((iou, _)) if iou >= config.background_iou => Assignment::Ignore,
                _ => Assignment::Background,
            }
        })
        .collect();

    let argmax = |row: &[f64], taken: &[bool]| {
        let mut best: Option<(f64, usize)> = None;
        for (j, &v) in row.iter().enumerate() {
            if !taken[j] && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, j));
            }
        }
        best
    };
    // stronger claims first, then lower gt index
    let mut order: Vec<(f64, usize)> = ious
        .iter()
        .enumerate()
        .filter_map(|(gi, row)| argmax(row, &vec![false; row.len()]).map(|(v, _)| (v, gi)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut claimed = vec![false; anchors.len()];
    for (_, gi) in order {
        if let Some((_, j)) = argmax(&ious[gi], &claimed) {
            claimed[j] = true;
            out[j] = Assignment::Foreground { class: gts[gi].1, gt: gi };
        }
    }
    out
}

/// Regression targets for every foreground anchor (zeros elsewhere).
pub fn encode_targets(anchors: &[Anchor], gts: &[(BBox, usize)], assignments: &[Assignment]) -> Result<Vec<[f64; 4]>> {
    anchors
        .iter()
        .zip(assignments)
        .map(|(a, asg)| match asg {
            Assignment::Foreground { gt, .. } => encode_box(&a.bbox, &gts[*gt].0),
            _ => Ok([0.0; 4]),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutput {
    /// `k * A` channels; channel `slot * k + class`.
    pub logits: Tensor,
    /// `4 * A` channels; channel `slot * 4 + coord`.
    pub deltas: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub levels: Vec<LevelOutput>,
    pub classes: usize,
    pub anchors_per_location: usize,
}

impl HeadOutputs {
    /// Logit of `(class)` for an anchor, following the channel layout above.
    pub fn logit(&self, a: &Anchor, class: usize) -> f32 {
        self.levels[a.level - LEVELS[0]].logits.get(0, a.slot * self.classes + class, a.y, a.x)
    }

    pub fn deltas(&self, a: &Anchor) -> [f32; 4] {
        let d = &self.levels[a.level - LEVELS[0]].deltas;
        [0, 1, 2, 3].map(|i| d.get(0, a.slot * 4 + i, a.y, a.x))
    }

    /// Flattens logits to `[anchor][class]` and deltas to `[anchor][coord]`,
    /// in anchor order.
    pub fn flatten(&self, anchors: &[Anchor]) -> (Vec<f64>, Vec<f64>) {
        let mut logits = Vec::with_capacity(anchors.len() * self.classes);
        let mut deltas = Vec::with_capacity(anchors.len() * 4);
        for a in anchors {
            for c in 0..self.classes {
                logits.push(self.logit(a, c) as f64);
            }
            deltas.extend(self.deltas(a).map(f64::from));
        }
        (logits, deltas)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub channels: usize,
    pub classes: usize,
    pub anchors_per_location: usize,
    pub class_trunk: [ConvSpec; 2],
    pub class_out: ConvSpec,
    pub box_trunk: [ConvSpec; 2],
    pub box_out: ConvSpec,
}

/// Prior foreground probability of a freshly initialised class output.
pub const PRIOR_PROBABILITY: f32 = 0.01;

impl HeadWeights {
    pub fn init(seed: u64, channels: usize, classes: usize, anchors_per_location: usize) -> Self {
        let mut r = rng(seed);
        let c = channels;
        let class_trunk = [he_conv(&mut r, c, c, 3, 1), he_conv(&mut r, c, c, 3, 1)];
        let box_trunk = [he_conv(&mut r, c, c, 3, 1), he_conv(&mut r, c, c, 3, 1)];
        let small = Normal::new(0.0f32, 0.01).expect("finite std");
        let mut out = |o: usize, bias: f32| {
            let data = (0..o * c * 9).map(|_| small.sample(&mut r)).collect();
            ConvSpec {
                weight: Tensor::new([o, c, 3, 3], data).expect("shape"),
                bias: vec![bias; o],
                stride: 1,
                padding: 1,
                dilation: 1,
            }
        };
        let class_out = out(classes * anchors_per_location, -((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY).ln());
        let box_out = out(4 * anchors_per_location, 0.0);
        HeadWeights {
            channels,
            classes,
            anchors_per_location,
            class_trunk,
            class_out,
            box_trunk,
            box_out,
        }
    }

    pub fn named_convs(&self) -> Vec<(String, &ConvSpec)> {
        vec![
            ("class.trunk1".into(), &self.class_trunk[0]),
            ("class.trunk2".into(), &self.class_trunk[1]),
            ("class.out".into(), &self.class_out),
            ("box.trunk1".into(), &self.box_trunk[0]),
            ("box.trunk2".into(), &self.box_trunk[1]),
            ("box.out".into(), &self.box_out),
        ]
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        write_convs(w, self.named_convs())
    }

    pub fn read(r: &mut impl Read, channels: usize, classes: usize, anchors_per_location: usize) -> Result<Self> {
        let mut t = ConvTable::read("detection-heads", r)?;
        let c = channels;
        let w = HeadWeights {
            channels,
            classes,
            anchors_per_location,
            class_trunk: [t.take("class.trunk1", c, c, 3)?, t.take("class.trunk2", c, c, 3)?],
            class_out: t.take("class.out", classes * anchors_per_location, c, 3)?,
            box_trunk: [t.take("box.trunk1", c, c, 3)?, t.take("box.trunk2", c, c, 3)?],
            box_out: t.take("box.out", 4 * anchors_per_location, c, 3)?,
        };
        t.finish()?;
        Ok(w)
    }
}

fn branch(x: &Tensor, trunk: &[ConvSpec; 2], out: &ConvSpec) -> Result<Tensor> {
    let mut h = conv2d(x, &trunk[0])?;
    h.relu_inplace();
    let mut h = conv2d(&h, &trunk[1])?;
    h.relu_inplace();
    conv2d(&h, out)
}

/// Applies the shared class and box subnets to every level.
pub fn head_forward(pyramid: &FeaturePyramid, weights: &HeadWeights) -> Result<HeadOutputs> {
    if pyramid.channels() != weights.channels {
        return Err(Error::dims("head input channels", &[pyramid.channels()], &[weights.channels]));
    }
    let levels = pyramid
        .levels
        .iter()
        .map(|x| {
            Ok(LevelOutput {
                logits: branch(x, &weights.class_trunk, &weights.class_out)?,
                deltas: branch(x, &weights.box_trunk, &weights.box_out)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeadOutputs {
        levels,
        classes: weights.classes,
        anchors_per_location: weights.anchors_per_location,
    })
}
