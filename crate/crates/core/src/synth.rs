//! Deterministic moving-shapes video generator with exact ground truth:
//! boxes, tracks, speed strata and optical flow.

use crate::backbone::{level_stride, LEVELS};
use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::eval::{speed_stratify, GroundTruthTrack, Stratum, DEFAULT_SPEED_WINDOW};
use crate::flow::FlowField;
use crate::par;
use crate::tensor::{bilinear_at, Tensor};
use crate::weights::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const CLASS_COUNT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disc,
    Rectangle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Disc, Shape::Rectangle, Shape::Triangle];

    pub fn class_id(self) -> usize {
        match self {
            Shape::Disc => 0,
            Shape::Rectangle => 1,
            Shape::Triangle => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disc => "disc",
            Shape::Rectangle => "rectangle",
            Shape::Triangle => "triangle",
        }
    }

    /// Whether the pixel centre `(u, v)`, in box-normalised coordinates
    /// `[0, 1]^2`, lies inside the shape.
    fn contains(self, u: f32, v: f32) -> bool {
        match self {
            Shape::Rectangle => (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v),
            Shape::Disc => {
                let (a, b) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                a * a + b * b <= 1.0
            }
            // apex at the top centre, base along the bottom edge
            Shape::Triangle => (0.0..=1.0).contains(&v) && (2.0 * u - 1.0).abs() <= v,
        }
    }
}

/// One linearly moving object. `x`, `y` are the top-left corner at frame 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub class_id: usize,
    pub width: f32,
    pub height: f32,
    pub x: f32,
    pub y: f32,
    pub vx: f32,
    pub vy: f32,
    pub texture_seed: u64,
}

impl ObjectSpec {
    pub fn box_at(&self, frame: usize) -> BBox {
        let t = frame as f32;
        let (x, y) = (self.x + self.vx * t, self.y + self.vy * t);
        BBox {
            x1: x,
            y1: y,
            x2: x + self.width,
            y2: y + self.height,
        }
    }

    fn covers(&self, frame: usize, px: f32, py: f32) -> bool {
        let b = self.box_at(frame);
        self.shape.contains((px - b.x1) / self.width, (py - b.y1) / self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blur {
    pub length: usize,
    pub angle_deg: f32,
    pub frames: Vec<usize>,
}

/// Flat grey bar drawn on frames `first_frame..=last_frame`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x: f32,
    pub y: f32,
    pub width: f32,
    pub height: f32,
    pub vx: f32,
    pub vy: f32,
    pub first_frame: usize,
    pub last_frame: usize,
    pub shade: f32,
}

impl Occluder {
    fn covers(&self, frame: usize, px: f32, py: f32) -> bool {
        if frame < self.first_frame || frame > self.last_frame {
            return false;
        }
        let t = frame as f32;
        let (x, y) = (self.x + self.vx * t, self.y + self.vy * t);
        px >= x && px < x + self.width && py >= y && py < y + self.height
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Degradations {
    pub blur: Option<Blur>,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    #[serde(default)]
    pub noise: f32,
}

impl Degradations {
    pub fn is_clean(&self) -> bool {
        self.blur.is_none() && self.occluders.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub objects: Vec<ObjectSpec>,
    pub degradations: Degradations,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return Err(Error::Validation("scene needs a non-empty canvas and at least one frame".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.width < 8.0 || o.height < 8.0 {
                return Err(Error::Validation(format!("object {i} is smaller than 8 px")));
            }
            if ![o.x, o.y, o.vx, o.vy].iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("object {i} has non-finite motion")));
            }
            if o.class_id >= CLASS_COUNT {
                return Err(Error::Validation(format!("object {i} has class {} >= {CLASS_COUNT}", o.class_id)));
            }
            if !(0..self.frame_count).any(|t| self.visible(o, t)) {
                return Err(Error::Validation(format!("object {i} never enters the canvas")));
            }
        }
        if let Some(b) = &self.degradations.blur {
            if b.length == 0 || b.frames.iter().any(|&f| f >= self.frame_count) {
                return Err(Error::Validation("blur spec references missing frames".into()));
            }
        }
        Ok(())
    }

    /// An object is annotated on a frame while its box centre is on the canvas.
    fn visible(&self, o: &ObjectSpec, frame: usize) -> bool {
        let (cx, cy) = o.box_at(frame).center();
        cx >= 0.0 && cx < self.width as f32 && cy >= 0.0 && cy < self.height as f32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub frame: usize,
    pub track_id: usize,
    pub class_id: usize,
    #[serde(flatten)]
    pub bbox: BBox,
    pub stratum: Stratum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub objects: Vec<ObjectSpec>,
    /// Sorted by `(frame, track_id)`.
    pub boxes: Vec<TruthBox>,
}

impl SceneTruth {
    pub fn frame_boxes(&self, frame: usize) -> impl Iterator<Item = &TruthBox> {
        self.boxes.iter().filter(move |b| b.frame == frame)
    }

    pub fn tracks(&self) -> Vec<GroundTruthTrack> {
        tracks_from_boxes(&self.boxes)
    }
}

pub fn tracks_from_boxes(boxes: &[TruthBox]) -> Vec<GroundTruthTrack> {
    let mut tracks: BTreeMap<usize, GroundTruthTrack> = BTreeMap::new();
    for b in boxes {
        tracks
            .entry(b.track_id)
            .or_insert_with(|| GroundTruthTrack {
                track_id: b.track_id,
                class_id: b.class_id,
                boxes: BTreeMap::new(),
            })
            .boxes
            .insert(b.frame, b.bbox);
    }
    tracks.into_values().collect()
}

/// Static grey background: smooth value noise plus fine grain, identical in
/// every channel so it carries no colour.
fn background(spec: &SceneSpec) -> Vec<f32> {
    let mut r = rng(spec.seed ^ 0x6261_636b);
    let cell = 16usize;
    let (gw, gh) = (spec.width / cell + 2, spec.height / cell + 2);
    let lattice: Vec<f32> = (0..gw * gh).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let grain: Vec<f32> = (0..spec.width * spec.height).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let mut out = vec![0.0; spec.width * spec.height];
    for y in 0..spec.height {
        for x in 0..spec.width {
            let smooth = bilinear_at(&lattice, gh, gw, x as f32 / cell as f32, y as f32 / cell as f32);
            out[y * spec.width + x] = 0.5 + 0.12 * smooth + 0.04 * grain[y * spec.width + x];
        }
    }
    out
}

/// Per-object 2x2-pixel texels in `[-1, 1]`.
struct Texture {
    cols: usize,
    values: Vec<f32>,
}

impl Texture {
    fn new(o: &ObjectSpec) -> Self {
        let cols = (o.width / 2.0).ceil() as usize + 2;
        let rows = (o.height / 2.0).ceil() as usize + 2;
        let mut r = rng(o.texture_seed);
        Texture {
            cols,
            values: (0..cols * rows).map(|_| r.random_range(-1.0f32..1.0)).collect(),
        }
    }

    fn at(&self, lx: f32, ly: f32) -> f32 {
        let tx = (lx / 2.0).floor().max(0.0) as usize;
        let ty = (ly / 2.0).floor().max(0.0) as usize;
        self.values
            .get(ty * self.cols + tx.min(self.cols - 1))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Colour of an object pixel: the class's dominant channel carries the
/// texture, the others stay dark.
fn object_colour(class_id: usize, texel: f32) -> [f32; 3] {
    let mut c = [0.15; 3];
    c[class_id % 3] = 0.5 + 0.4 * texel;
    c
}

fn quantise(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn line_blur(frame: &Tensor, blur: &Blur) -> Tensor {
    let (h, w) = frame.spatial();
    let (s, c) = blur.angle_deg.to_radians().sin_cos();
    let half = (blur.length as f32 - 1.0) / 2.0;
    let mut out = Tensor::zeros(frame.shape());
    for ch in 0..3 {
        let src = frame.plane(0, ch);
        let dst = out.plane_mut(0, ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for k in 0..blur.length {
                    let d = k as f32 - half;
                    let sx = (x as f32 + d * c).clamp(0.0, (w - 1) as f32);
                    let sy = (y as f32 + d * s).clamp(0.0, (h - 1) as f32);
                    acc += bilinear_at(src, h, w, sx, sy);
                }
                dst[y * w + x] = acc / blur.length as f32;
            }
        }
    }
    out
}

fn render_frame(spec: &SceneSpec, bg: &[f32], textures: &[Texture], t: usize) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let mut frame = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let g = bg[y * w + x];
            let mut colour = [g; 3];
            for (o, tex) in spec.objects.iter().zip(textures) {
                if o.covers(t, px, py) {
                    let b = o.box_at(t);
                    colour = object_colour(o.class_id, tex.at(px - b.x1, py - b.y1));
                }
            }
            for occ in &spec.degradations.occluders {
                if occ.covers(t, px, py) {
                    colour = [occ.shade; 3];
                }
            }
            for (ch, v) in colour.into_iter().enumerate() {
                frame.set(0, ch, y, x, v);
            }
        }
    }
    if let Some(blur) = &spec.degradations.blur {
        if blur.frames.contains(&t) {
            frame = line_blur(&frame, blur);
        }
    }
    let sigma = spec.degradations.noise;
    if sigma > 0.0 {
        let mut r = rng(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(t as u64 + 1));
        let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
        for v in frame.data_mut() {
            *v += normal.sample(&mut r);
        }
    }
    for v in frame.data_mut() {
        *v = quantise(*v);
    }
    frame
}

/// Renders every frame (8-bit quantised, so a PPM round trip is lossless)
/// and the matching ground truth.
pub fn render_scene(spec: &SceneSpec) -> Result<(Vec<Tensor>, SceneTruth)> {
    spec.validate()?;
    let bg = background(spec);
    let textures: Vec<Texture> = spec.objects.iter().map(Texture::new).collect();
    let frames = par::map_range(spec.frame_count, |t| render_frame(spec, &bg, &textures, t));
    Ok((frames, scene_truth(spec)?))
}

/// Ground truth without rendering pixels.
pub fn scene_truth(spec: &SceneSpec) -> Result<SceneTruth> {
    spec.validate()?;
    let mut boxes = Vec::new();
    for t in 0..spec.frame_count {
        for (id, o) in spec.objects.iter().enumerate() {
            if !spec.visible(o, t) {
                continue;
            }
            if let Some(bbox) = o.box_at(t).clip(spec.width as f32, spec.height as f32) {
                boxes.push(TruthBox {
                    frame: t,
                    track_id: id,
                    class_id: o.class_id,
                    bbox,
                    stratum: Stratum::Slow,
                });
            }
        }
    }
    let strata = speed_stratify(&tracks_from_boxes(&boxes), DEFAULT_SPEED_WINDOW);
    for b in &mut boxes {
        b.stratum = strata[&(b.track_id, b.frame)];
    }
    Ok(SceneTruth {
        width: spec.width,
        height: spec.height,
        frame_count: spec.frame_count,
        objects: spec.objects.clone(),
        boxes,
    })
}

/// Full-resolution flow from frame `t` to `t + tau`: each object's velocity
/// times `tau` on its frame-`t` mask (topmost object wins), zero elsewhere.
pub fn truth_flow_full(truth: &SceneTruth, t: usize, tau: i32) -> Result<Tensor> {
    let support = t as i64 + tau as i64;
    if t >= truth.frame_count || support < 0 || support >= truth.frame_count as i64 {
        return Err(Error::Validation(format!(
            "flow pair {t}->{support} outside 0..{}",
            truth.frame_count
        )));
    }
    let (h, w) = (truth.height, truth.width);
    let mut flow = Tensor::zeros([1, 2, h, w]);
    if tau == 0 {
        return Ok(flow);
    }
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            if let Some(o) = truth.objects.iter().rev().find(|o| o.covers(t, px, py)) {
                flow.set(0, 0, y, x, o.vx * tau as f32);
                flow.set(0, 1, y, x, o.vy * tau as f32);
            }
        }
    }
    Ok(flow)
}

pub fn truth_flow(truth: &SceneTruth, t: usize, tau: i32) -> Result<FlowField> {
    let full = truth_flow_full(truth, t, tau)?;
    FlowField::from_full_resolution(&full, t, (t as i64 + tau as i64) as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    Clean,
    Blur,
    Occlusion,
    Fast,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 4] = [SuiteKind::Clean, SuiteKind::Blur, SuiteKind::Occlusion, SuiteKind::Fast];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Clean => "clean",
            SuiteKind::Blur => "blur",
            SuiteKind::Occlusion => "occlusion",
            SuiteKind::Fast => "fast",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

pub const SUITE_SCENES: usize = 20;
pub const SUITE_FRAMES: usize = 25;
pub const BLUR_LENGTHS: (usize, usize) = (9, 21);
pub const BLURRED_FRAMES: (usize, usize) = (8, 14);
pub const OCCLUDED_FRACTION: (f32, f32) = (0.3, 0.6);
pub const OCCLUDED_FRAMES: (usize, usize) = (3, 8);
pub const FAST_SPEED: (f32, f32) = (24.0, 48.0);

/// Box sides matching the anchor shapes of P3 and P4.
const SIDES: [f32; 5] = [32.0, 40.0, 50.0, 64.0, 80.0];

fn object_size(r: &mut impl Rng, shape: Shape) -> (f32, f32) {
    let side = SIDES[r.random_range(0..SIDES.len())];
    // triangles stay at least as wide as tall so their apex is always sampled
    let ratios: &[f32] = if shape == Shape::Triangle { &[1.0, 2.0] } else { &[0.5, 1.0, 2.0] };
    let ratio = ratios[r.random_range(0..ratios.len())];
    let even = |v: f32| (v / 2.0).round() * 2.0;
    (even(side * ratio.sqrt()), even(side / ratio.sqrt()))
}

fn random_object(r: &mut impl Rng, seed: u64, index: usize) -> ObjectSpec {
    let shape = Shape::ALL[r.random_range(0..3)];
    let (width, height) = object_size(r, shape);
    ObjectSpec {
        shape,
        class_id: shape.class_id(),
        width,
        height,
        x: 0.0,
        y: 0.0,
        vx: 0.0,
        vy: 0.0,
        texture_seed: seed.wrapping_mul(31).wrapping_add(index as u64 + 7),
    }
}

fn slow_scene(r: &mut impl Rng, seed: u64) -> SceneSpec {
    let size = 256usize;
    let count = r.random_range(2..=3);
    let mut cells = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
    let mut objects = Vec::new();
    for i in 0..count {
        let (cy, cx) = cells.remove(r.random_range(0..cells.len()));
        let mut o = random_object(r, seed, i);
        let centre_x = 64.0 + 128.0 * cx as f32 + r.random_range(-12..=12) as f32;
        let centre_y = 64.0 + 128.0 * cy as f32 + r.random_range(-12..=12) as f32;
        o.x = centre_x - o.width / 2.0;
        o.y = centre_y - o.height / 2.0;
        o.vx = r.random_range(-1..=1) as f32;
        o.vy = r.random_range(-1..=1) as f32;
        // start so the object sits at its cell centre mid-clip
        o.x -= o.vx * (SUITE_FRAMES / 2) as f32;
        o.y -= o.vy * (SUITE_FRAMES / 2) as f32;
        objects.push(o);
    }
    SceneSpec {
        width: size,
        height: size,
        frame_count: SUITE_FRAMES,
        objects,
        degradations: Degradations {
            noise: 0.01,
            ..Default::default()
        },
        seed,
    }
}

fn fast_scene(r: &mut impl Rng, seed: u64) -> SceneSpec {
    let size = 448usize;
    let count = 2;
    let mut objects = Vec::new();
    for i in 0..count {
        let mut o = random_object(r, seed, i);
        let speed = r.random_range(FAST_SPEED.0..=FAST_SPEED.1);
        let angle = r.random_range(0.0f32..std::f32::consts::TAU);
        o.vx = (speed * angle.cos()).round();
        o.vy = (speed * angle.sin()).round();
        // pass through a point near the centre at a mid-clip frame
        let t0 = r.random_range(8..=16) as f32;
        let px = (size / 2) as f32 + r.random_range(-96..=96) as f32;
        let py = (size / 2) as f32 + r.random_range(-96..=96) as f32;
        o.x = (px - o.vx * t0 - o.width / 2.0).round();
        o.y = (py - o.vy * t0 - o.height / 2.0).round();
        objects.push(o);
    }
    SceneSpec {
        width: size,
        height: size,
        frame_count: SUITE_FRAMES,
        objects,
        degradations: Degradations {
            noise: 0.01,
            ..Default::default()
        },
        seed,
    }
}

/// Seeded scenes for one degradation family.
pub fn scenario_suite(kind: SuiteKind) -> Vec<SceneSpec> {
    scenario_suite_sized(kind, SUITE_SCENES)
}

pub fn scenario_suite_sized(kind: SuiteKind, scenes: usize) -> Vec<SceneSpec> {
    let base = 10_000 * (kind as u64 + 1);
    (0..scenes as u64).map(|i| suite_scene(kind, base + i)).collect()
}

pub fn suite_scene(kind: SuiteKind, seed: u64) -> SceneSpec {
    let mut r = rng(seed);
    match kind {
        SuiteKind::Clean => slow_scene(&mut r, seed),
        SuiteKind::Fast => fast_scene(&mut r, seed),
        SuiteKind::Blur => {
            let mut s = slow_scene(&mut r, seed);
            let mut frames: Vec<usize> = (0..SUITE_FRAMES).collect();
            let n = r.random_range(BLURRED_FRAMES.0..=BLURRED_FRAMES.1);
            let mut picked = Vec::with_capacity(n);
            for _ in 0..n {
                picked.push(frames.remove(r.random_range(0..frames.len())));
            }
            picked.sort_unstable();
            s.degradations.blur = Some(Blur {
                length: r.random_range(BLUR_LENGTHS.0..=BLUR_LENGTHS.1),
                angle_deg: r.random_range(0.0f32..180.0).round(),
                frames: picked,
            });
            s
        }
        SuiteKind::Occlusion => {
            let mut s = slow_scene(&mut r, seed);
            for o in &s.objects {
                let frac = r.random_range(OCCLUDED_FRACTION.0..=OCCLUDED_FRACTION.1);
                let bar = (o.width * frac).round().max(1.0);
                let offset = r.random_range(0.0..=(o.width - bar)).round();
                let len = r.random_range(OCCLUDED_FRAMES.0..=OCCLUDED_FRAMES.1);
                let first = r.random_range(0..=SUITE_FRAMES - len);
                s.degradations.occluders.push(Occluder {
                    x: o.x + offset,
                    y: o.y - 4.0,
                    width: bar,
                    height: o.height + 8.0,
                    vx: o.vx,
                    vy: o.vy,
                    first_frame: first,
                    last_frame: first + len - 1,
                    shade: 0.45,
                });
            }
            s
        }
    }
}

/// Downscaled exact flow at one level, for callers that need a single map.
pub fn truth_flow_level(truth: &SceneTruth, t: usize, tau: i32, level: usize) -> Result<Tensor> {
    let f = truth_flow(truth, t, tau)?;
    Ok(f.levels[LEVELS.iter().position(|&l| l == level).ok_or_else(|| {
        Error::Config(format!("level {level} not in P3..P6 (stride {})", level_stride(level)))
    })?]
    .clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_object(vx: f32, vy: f32, size: usize) -> SceneSpec {
        SceneSpec {
            width: size,
            height: size,
            frame_count: 25,
            objects: vec![ObjectSpec {
                shape: Shape::Disc,
                class_id: 0,
                width: 48.0,
                height: 48.0,
                x: 40.0,
                y: 100.0,
                vx,
                vy,
                texture_seed: 3,
            }],
            degradations: Degradations::default(),
            seed: 5,
        }
    }

    #[test]
    fn kinematics_advance_boxes() {
        let truth = scene_truth(&one_object(8.0, 0.0, 448)).unwrap();
        let xs: Vec<f32> = truth.boxes.iter().map(|b| b.bbox.x1).collect();
        assert_eq!(xs.len(), 25);
        assert!(xs.windows(2).all(|w| w[1] - w[0] == 8.0));
    }

    #[test]
    fn stationary_object_is_slow() {
        let truth = scene_truth(&one_object(0.0, 0.0, 256)).unwrap();
        assert!(truth.boxes.iter().all(|b| b.stratum == Stratum::Slow && b.bbox == truth.boxes[0].bbox));
    }

    #[test]
    fn object_never_on_canvas_is_rejected() {
        let mut s = one_object(0.0, 0.0, 256);
        s.objects[0].x = 1000.0;
        assert!(matches!(render_scene(&s), Err(Error::Validation(_))));
    }

    #[test]
    fn flow_is_velocity_inside_and_antisymmetric() {
        let truth = scene_truth(&one_object(8.0, 0.0, 448)).unwrap();
        let f = truth_flow(&truth, 5, 1).unwrap();
        // disc centre at frame 5: (40 + 40 + 24, 124) -> level-3 cell (13, 15)
        assert_eq!(f.level(3).get(0, 0, 15, 13), 1.0);
        assert_eq!(f.level(3).get(0, 1, 15, 13), 0.0);
        let b = truth_flow(&truth, 5, -1).unwrap();
        for i in 0..4 {
            assert_eq!(b.levels[i], f.levels[i].map(|v| -v));
        }
        let z = truth_flow(&truth, 5, 0).unwrap();
        assert!(z.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        assert!(truth_flow(&truth, 24, 1).is_err());
    }

    #[test]
    fn suites_are_reproducible_and_tagged() {
        for kind in SuiteKind::ALL {
            let a = scenario_suite(kind);
            assert_eq!(a.len(), SUITE_SCENES);
            assert_eq!(a, scenario_suite(kind));
            for s in &a {
                s.validate().unwrap();
                assert_eq!(s.degradations.is_clean(), matches!(kind, SuiteKind::Clean | SuiteKind::Fast));
            }
        }
    }
}
