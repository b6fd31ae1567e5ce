//! Complete weight sets for the detector, either seeded-random or built by
//! hand for the synthetic domain.
//!
//! The hand-built ("analytic") detector keys on colour texture: object
//! classes own one colour channel each and carry fine random texels, while
//! the background and occluders are grey. The backbone computes, per class,
//! the local energy of the colour-excess Laplacian at every pyramid stride.
//! The class head then scores each anchor with a fixed template (mean energy
//! inside the anchor minus the mean in a one-cell ring around it). Motion
//! blur and occlusion remove that energy, which is what temporal aggregation
//! has to restore.

use crate::backbone::{BackboneConfig, BackboneWeights};
use crate::error::{Error, Result};
use crate::heads::{AnchorConfig, HeadWeights};
use crate::sampling::{identity_sampler, OffsetPredictorWeights};
use crate::tensor::{ConvSpec, Tensor};
use crate::weights::{write_convs, ConvTable};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Analytic,
    Seeded,
}

/// Scoring template of the analytic class head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticHeadConfig {
    /// Weight of the surrounding ring relative to the anchor interior.
    pub ring_weight: f32,
    /// Cells left out between the anchor and its ring.
    pub ring_gap: f32,
    /// Ring thickness in cells.
    pub ring_width: f32,
    /// Logit slope per unit of template response.
    pub gain: f32,
    /// Template response mapped to logit zero.
    pub threshold: f32,
}

impl Default for AnalyticHeadConfig {
    fn default() -> Self {
        AnalyticHeadConfig {
            ring_weight: 1.5,
            ring_gap: 0.0,
            ring_width: 1.0,
            gain: 10.0,
            threshold: 0.4,
        }
    }
}

/// Channels the analytic head needs: nine shifted copies per class.
pub const ANALYTIC_MIN_CHANNELS: usize = 27;
const ANALYTIC_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorWeights {
    pub backbone: BackboneWeights,
    pub head: HeadWeights,
    pub predictor: OffsetPredictorWeights,
    pub sampler: ConvSpec,
}

const FILES: [&str; 4] = ["backbone.wgts", "heads.wgts", "sampling.wgts", "sampler.wgts"];

impl DetectorWeights {
    pub fn seeded(seed: u64, channels: usize, classes: usize, anchors_per_location: usize, offset_filters: usize) -> Self {
        DetectorWeights {
            backbone: BackboneWeights::init(seed, &BackboneConfig { channels }),
            head: HeadWeights::init(seed.wrapping_add(1), channels, classes, anchors_per_location),
            predictor: OffsetPredictorWeights::init(seed.wrapping_add(2), channels, offset_filters),
            sampler: identity_sampler(channels),
        }
    }

    pub fn analytic(
        seed: u64,
        channels: usize,
        classes: usize,
        anchors: &AnchorConfig,
        head: &AnalyticHeadConfig,
        offset_filters: usize,
    ) -> Result<Self> {
        if channels < ANALYTIC_MIN_CHANNELS {
            return Err(Error::Config(format!(
                "analytic weights need at least {ANALYTIC_MIN_CHANNELS} channels, got {channels}"
            )));
        }
        if classes > ANALYTIC_CLASSES {
            return Err(Error::Config(format!(
                "analytic weights support at most {ANALYTIC_CLASSES} colour-coded classes"
            )));
        }
        Ok(DetectorWeights {
            backbone: analytic_backbone(channels),
            head: analytic_head(channels, classes, anchors, head)?,
            predictor: OffsetPredictorWeights::init(seed.wrapping_add(2), channels, offset_filters),
            sampler: identity_sampler(channels),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            File::create(&p)
                .map(BufWriter::new)
                .map_err(|e| Error::io(format!("writing {}", p.display()), e))
        };
        self.backbone.write(&mut create(FILES[0])?)?;
        self.head.write(&mut create(FILES[1])?)?;
        self.predictor.write(&mut create(FILES[2])?)?;
        write_convs(&mut create(FILES[3])?, [("sampler".to_string(), &self.sampler)])?;
        Ok(())
    }

    /// Loads a saved set; errors name the module whose file is bad.
    pub fn load(
        dir: &Path,
        channels: usize,
        classes: usize,
        anchors_per_location: usize,
        offset_filters: usize,
    ) -> Result<Self> {
        let open = |name: &str, module: &'static str| {
            let p = dir.join(name);
            File::open(&p).map(BufReader::new).map_err(|e| Error::io(format!("{module}: reading {}", p.display()), e))
        };
        let backbone = BackboneWeights::read(&mut open(FILES[0], "pyramid-backbone")?, &BackboneConfig { channels })?;
        let head = HeadWeights::read(
            &mut open(FILES[1], "detection-heads")?,
            channels,
            classes,
            anchors_per_location,
        )?;
        let predictor = OffsetPredictorWeights::read(&mut open(FILES[2], "sampling-stream")?, channels, offset_filters)?;
        let mut t = ConvTable::read("sampling-stream", &mut open(FILES[3], "sampling-stream")?)?;
        let sampler = t.take("sampler", channels, channels, 3)?;
        t.finish()?;
        Ok(DetectorWeights {
            backbone,
            head,
            predictor,
            sampler,
        })
    }
}

fn set(c: &mut ConvSpec, o: usize, i: usize, ky: usize, kx: usize, v: f32) {
    let idx = c.weight.offset(o, i, ky, kx);
    c.weight.data_mut()[idx] += v;
}

/// Taps of a 3x3, stride-2, pad-1 kernel that average a 2x2 block.
const POOL_TAPS: [(usize, usize); 4] = [(1, 1), (1, 2), (2, 1), (2, 2)];

fn pool(c: usize, from: impl Fn(usize) -> Vec<usize>) -> ConvSpec {
    let mut s = ConvSpec::zeros(c, c, 3, 2);
    for o in 0..3 {
        for i in from(o) {
            for (ky, kx) in POOL_TAPS {
                set(&mut s, o, i, ky, kx, 0.25);
            }
        }
    }
    s
}

fn select(c: usize, k: usize, stride: usize, pairs: &[(usize, usize)]) -> ConvSpec {
    let mut s = ConvSpec::zeros(c, c, k, stride);
    for &(o, i) in pairs {
        set(&mut s, o, i, k / 2, k / 2, 1.0);
    }
    s
}

/// Per-class texture energy at strides 8..64 in channels 0..3 of every level.
pub fn analytic_backbone(c: usize) -> BackboneWeights {
    let mut stem = ConvSpec::zeros(c, 3, 3, 2);
    for o in 0..3 {
        for i in 0..3 {
            set(&mut stem, o, i, 1, 1, if i == o { 1.0 } else { -0.5 });
        }
    }
    // Laplacian split into its positive and negative parts
    let mut lap = ConvSpec::zeros(c, c, 3, 1);
    for ch in 0..3 {
        for (o, sign) in [(2 * ch, 1.0), (2 * ch + 1, -1.0)] {
            set(&mut lap, o, ch, 1, 1, 4.0 * sign);
            for (ky, kx) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
                set(&mut lap, o, ch, ky, kx, -sign);
            }
        }
    }
    let identity: Vec<(usize, usize)> = (0..3).map(|i| (i, i)).collect();
    let keep = |ch: usize| vec![ch];
    let stages = [
        [lap, pool(c, |ch| vec![2 * ch, 2 * ch + 1])],
        [select(c, 3, 1, &identity), pool(c, keep)],
        [select(c, 3, 1, &identity), pool(c, keep)],
        [select(c, 3, 1, &identity), pool(c, keep)],
    ];
    // laterals write disjoint channel blocks so the top-down sums never mix
    let route = |base: usize| (0..3).map(|i| (base + i, i)).collect::<Vec<_>>();
    let laterals = [select(c, 1, 1, &route(6)), select(c, 1, 1, &route(0)), select(c, 1, 1, &route(3))];
    let back = |base: usize| (0..3).map(|i| (i, base + i)).collect::<Vec<_>>();
    let merges = [select(c, 3, 1, &back(6)), select(c, 3, 1, &back(0)), select(c, 3, 1, &back(3))];
    BackboneWeights {
        channels: c,
        stem,
        stages,
        laterals,
        merges,
        p6: pool(c, keep),
    }
}

/// Overlap of the unit cell centred at `(dy, dx)` with a centred box.
fn cell_overlap(dy: f32, dx: f32, w: f32, h: f32) -> f32 {
    let ov = |d: f32, half: f32| ((d + 0.5).min(half) - (d - 0.5).max(-half)).max(0.0);
    ov(dx, w / 2.0) * ov(dy, h / 2.0)
}

/// Dilation of the final class conv; with the two dense trunk layers the
/// composite kernel then covers `11 x 11` cells.
pub const FINAL_DILATION: usize = 3;
pub const TEMPLATE_RADIUS: usize = 2 + FINAL_DILATION;
const T: usize = 2 * TEMPLATE_RADIUS + 1;

/// Square template over level cells for an anchor of `w x h` cells:
/// normalised interior coverage minus `ring_weight` times the normalised
/// one-cell ring, both truncated to the window.
pub fn anchor_template(w: f32, h: f32, cfg: &AnalyticHeadConfig) -> [[f32; T]; T] {
    let mut inside = [[0.0; T]; T];
    let mut ring = [[0.0; T]; T];
    for y in 0..T {
        for x in 0..T {
            let (dy, dx) = (y as f32 - TEMPLATE_RADIUS as f32, x as f32 - TEMPLATE_RADIUS as f32);
            inside[y][x] = cell_overlap(dy, dx, w, h);
            let (g, r) = (2.0 * cfg.ring_gap, 2.0 * (cfg.ring_gap + cfg.ring_width));
            ring[y][x] = cell_overlap(dy, dx, w + r, h + r) - cell_overlap(dy, dx, w + g, h + g);
        }
    }
    let si: f32 = inside.iter().flatten().sum();
    let sr: f32 = ring.iter().flatten().sum();
    let mut out = [[0.0; T]; T];
    for y in 0..T {
        for x in 0..T {
            out[y][x] = inside[y][x] / si - if sr > 0.0 { cfg.ring_weight * ring[y][x] / sr } else { 0.0 };
        }
    }
    out
}

/// Box-sum basis of the second trunk layer: half extents `(ry, rx)`.
fn basis_boxes() -> Vec<(usize, usize)> {
    (0..3).flat_map(|ry| (0..3).map(move |rx| (ry, rx))).collect()
}

/// Splits an offset in `[-2, 2]` into a trunk-2 tap and a trunk-1 shift.
fn split(d: isize) -> (isize, isize) {
    match d {
        2 => (1, 1),
        -2 => (-1, -1),
        _ => (d, 0),
    }
}

/// Final-layer coefficients `[box][tap]` whose composite kernel best fits
/// `template` in least squares.
pub fn fit_template(template: &[[f32; T]; T]) -> (Vec<[f32; 9]>, f32) {
    let boxes = basis_boxes();
    let r = TEMPLATE_RADIUS as isize;
    let cols = boxes.len() * 9;
    let mut a = DMatrix::<f64>::zeros(T * T, cols);
    for (b, &(ry, rx)) in boxes.iter().enumerate() {
        for tap in 0..9 {
            let d = FINAL_DILATION as isize;
            let (oy, ox) = (d * (tap as isize / 3 - 1), d * (tap as isize % 3 - 1));
            for dy in -(ry as isize)..=ry as isize {
                for dx in -(rx as isize)..=rx as isize {
                    let (y, x) = (dy + oy + r, dx + ox + r);
                    a[(y as usize * T + x as usize, b * 9 + tap)] += 1.0;
                }
            }
        }
    }
    let target = DVector::<f64>::from_iterator(T * T, template.iter().flatten().map(|&v| v as f64));
    let solution = a
        .clone()
        .svd(true, true)
        .solve(&target, 1e-10)
        .expect("SVD computed with both factors");
    let residual = (&a * &solution - &target).amax() as f32;
    let coeffs = boxes
        .iter()
        .enumerate()
        .map(|(b, _)| std::array::from_fn(|tap| solution[b * 9 + tap] as f32))
        .collect();
    (coeffs, residual)
}

/// Class head scoring anchors by template response; box regressors are zero.
pub fn analytic_head(c: usize, classes: usize, anchors: &AnchorConfig, cfg: &AnalyticHeadConfig) -> Result<HeadWeights> {
    let a = anchors.per_location();
    let mut trunk1 = ConvSpec::zeros(c, c, 3, 1);
    let mut trunk2 = ConvSpec::zeros(c, c, 3, 1);
    let boxes = basis_boxes();
    for class in 0..classes {
        for j in 0..9 {
            set(&mut trunk1, 9 * class + j, class, j / 3, j % 3, 1.0);
        }
        for (b, &(ry, rx)) in boxes.iter().enumerate() {
            for dy in -(ry as isize)..=ry as isize {
                for dx in -(rx as isize)..=rx as isize {
                    let ((ty, sy), (tx, sx)) = (split(dy), split(dx));
                    let shift = ((sy + 1) * 3 + sx + 1) as usize;
                    set(&mut trunk2, 9 * class + b, 9 * class + shift, (ty + 1) as usize, (tx + 1) as usize, 1.0);
                }
            }
        }
    }
    let mut out = ConvSpec::zeros(classes * a, c, 3, 1);
    out.dilation = FINAL_DILATION;
    out.padding = FINAL_DILATION;
    // with the default sizes an anchor spans the same number of cells at
    // every level, so one template per slot serves all of them
    let stride = 8.0;
    for slot in 0..a {
        let (w, h) = anchors.shape(3, slot);
        let template = anchor_template(w / stride, h / stride, cfg);
        let (coeffs, _) = fit_template(&template);
        for class in 0..classes {
            let o = slot * classes + class;
            for (b, row) in coeffs.iter().enumerate() {
                for (tap, &v) in row.iter().enumerate() {
                    set(&mut out, o, 9 * class + b, tap / 3, tap % 3, cfg.gain * v);
                }
            }
            out.bias[o] = -cfg.gain * cfg.threshold;
        }
    }
    let tensor_zero = |o: usize| ConvSpec {
        weight: Tensor::zeros([o, c, 3, 3]),
        bias: vec![0.0; o],
        stride: 1,
        padding: 1,
        dilation: 1,
    };
    Ok(HeadWeights {
        channels: c,
        classes,
        anchors_per_location: a,
        class_trunk: [trunk1, trunk2],
        class_out: out,
        box_trunk: [tensor_zero(c), tensor_zero(c)],
        box_out: tensor_zero(4 * a),
    })
}
