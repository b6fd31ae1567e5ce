//! Toy feature-pyramid network producing P3..P6 at strides 8..64.
//!
//! Bottom-up: a stride-2 stem, then four stages of two 3x3 convolutions
//! (stride 1 then stride 2), each followed by a rectifier. Stages 2..4 give
//! C3, C4, C5. Top-down: 1x1 laterals summed with the 2x nearest upsampled
//! coarser level and smoothed by a 3x3 merge conv. P6 is a 3x3 stride-2
//! convolution over C5.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, mean_stack, upsample_nearest, ConvSpec, Tensor};
use crate::weights::{he_conv, rng, write_convs, ConvTable};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Pyramid level indices, finest first.
pub const LEVELS: [usize; 4] = [3, 4, 5, 6];

/// Input sides must be multiples of the coarsest stride.
pub const INPUT_MULTIPLE: usize = 64;

pub fn level_stride(level: usize) -> usize {
    1 << level
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { channels: 32 }
    }
}

/// Feature maps `[P3, P4, P5, P6]`, batch 1, equal channel counts.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: [Tensor; 4],
}

impl FeaturePyramid {
    pub fn new(levels: [Tensor; 4]) -> Result<Self> {
        let c = levels[0].channels();
        for t in &levels {
            if t.channels() != c || t.batch() != 1 {
                return Err(Error::dims("pyramid level", &levels[0].shape(), &t.shape()));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    /// Level by pyramid index (3..=6).
    pub fn level(&self, level: usize) -> &Tensor {
        &self.levels[level - LEVELS[0]]
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels()
    }

    pub fn shapes(&self) -> [[usize; 4]; 4] {
        [0, 1, 2, 3].map(|i| self.levels[i].shape())
    }

    pub fn try_map(&self, mut f: impl FnMut(usize, &Tensor) -> Result<Tensor>) -> Result<Self> {
        let mut out = Vec::with_capacity(4);
        for (i, t) in self.levels.iter().enumerate() {
            out.push(f(LEVELS[i], t)?);
        }
        let levels: [Tensor; 4] = out.try_into().expect("four levels");
        FeaturePyramid::new(levels)
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(Tensor::is_finite)
    }
}

/// One term of a temporal mean: a pyramid already aligned to the reference,
/// tagged with its temporal offset.
#[derive(Clone, Debug)]
pub struct Contribution {
    pub tau: i32,
    pub pyramid: FeaturePyramid,
}

/// Per-level arithmetic mean of aligned pyramids, summed in increasing `tau`
/// so the result does not depend on list order.
pub fn aggregate(reference: &FeaturePyramid, contributions: &[Contribution]) -> Result<FeaturePyramid> {
    if contributions.is_empty() {
        return Err(Error::Validation("aggregation needs at least one contribution".into()));
    }
    let mut order: Vec<&Contribution> = contributions.iter().collect();
    order.sort_by_key(|c| c.tau);
    if order.windows(2).any(|w| w[0].tau == w[1].tau) {
        return Err(Error::Validation("duplicate temporal offset in aggregation".into()));
    }
    for c in &order {
        if c.pyramid.shapes() != reference.shapes() {
            return Err(Error::dims(
                "aggregated pyramid",
                &reference.levels[0].shape(),
                &c.pyramid.levels[0].shape(),
            ));
        }
    }
    reference.try_map(|level, _| {
        let maps: Vec<&Tensor> = order.iter().map(|c| c.pyramid.level(level)).collect();
        mean_stack(&maps)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights {
    pub channels: usize,
    pub stem: ConvSpec,
    /// `[stage][conv]`; conv 0 is stride 1, conv 1 is stride 2.
    pub stages: [[ConvSpec; 2]; 4],
    /// 1x1 laterals for C3, C4, C5.
    pub laterals: [ConvSpec; 3],
    /// 3x3 smoothing after the top-down sum, for P3, P4, P5.
    pub merges: [ConvSpec; 3],
    pub p6: ConvSpec,
}

impl BackboneWeights {
    pub fn init(seed: u64, config: &BackboneConfig) -> Self {
        let c = config.channels;
        let mut r = rng(seed);
        let stem = he_conv(&mut r, c, 3, 3, 2);
        let stages = [(); 4].map(|_| [he_conv(&mut r, c, c, 3, 1), he_conv(&mut r, c, c, 3, 2)]);
        let laterals = [(); 3].map(|_| he_conv(&mut r, c, c, 1, 1));
        let merges = [(); 3].map(|_| he_conv(&mut r, c, c, 3, 1));
        let p6 = he_conv(&mut r, c, c, 3, 2);
        BackboneWeights {
            channels: c,
            stem,
            stages,
            laterals,
            merges,
            p6,
        }
    }

    pub fn named_convs(&self) -> Vec<(String, &ConvSpec)> {
        let mut v = vec![("stem".to_string(), &self.stem)];
        for (s, stage) in self.stages.iter().enumerate() {
            v.push((format!("stage{}.a", s + 1), &stage[0]));
            v.push((format!("stage{}.b", s + 1), &stage[1]));
        }
        for (i, c) in self.laterals.iter().enumerate() {
            v.push((format!("lateral{}", i + 3), c));
        }
        for (i, c) in self.merges.iter().enumerate() {
            v.push((format!("merge{}", i + 3), c));
        }
        v.push(("p6".to_string(), &self.p6));
        v
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        write_convs(w, self.named_convs())
    }

    pub fn read(r: &mut impl Read, config: &BackboneConfig) -> Result<Self> {
        let table = ConvTable::read("pyramid-backbone", r)?;
        Self::from_table(table, config)
    }

    pub(crate) fn from_table(mut t: ConvTable, config: &BackboneConfig) -> Result<Self> {
        let c = config.channels;
        let stem = t.take("stem", c, 3, 3)?;
        let mut stages = Vec::new();
        for s in 1..=4 {
            stages.push([t.take(&format!("stage{s}.a"), c, c, 3)?, t.take(&format!("stage{s}.b"), c, c, 3)?]);
        }
        let laterals = [t.take("lateral3", c, c, 1)?, t.take("lateral4", c, c, 1)?, t.take("lateral5", c, c, 1)?];
        let merges = [t.take("merge3", c, c, 3)?, t.take("merge4", c, c, 3)?, t.take("merge5", c, c, 3)?];
        let p6 = t.take("p6", c, c, 3)?;
        t.finish()?;
        Ok(BackboneWeights {
            channels: c,
            stem,
            stages: stages.try_into().expect("four stages"),
            laterals,
            merges,
            p6,
        })
    }
}

fn conv_relu(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let mut y = conv2d(x, spec)?;
    y.relu_inplace();
    Ok(y)
}

fn add_inplace(a: &mut Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims("top-down sum", &a.shape(), &b.shape()));
    }
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    Ok(())
}

/// Runs the backbone on one RGB frame of shape `(1, 3, H, W)`.
pub fn extract_pyramid(frame: &Tensor, weights: &BackboneWeights) -> Result<FeaturePyramid> {
    let [n, c, h, w] = frame.shape();
    if n != 1 || c != 3 {
        return Err(Error::dims("backbone input", &frame.shape(), &[1, 3, h, w]));
    }
    if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
        return Err(Error::Config(format!(
            "frame size {h}x{w} is not a multiple of {INPUT_MULTIPLE}"
        )));
    }
    let mut x = conv_relu(frame, &weights.stem)?;
    let mut taps = Vec::with_capacity(3);
    for (s, stage) in weights.stages.iter().enumerate() {
        x = conv_relu(&x, &stage[0])?;
        x = conv_relu(&x, &stage[1])?;
        if s >= 1 {
            taps.push(x.clone());
        }
    }
    let (c3, c4, c5) = (&taps[0], &taps[1], &taps[2]);

    let top5 = conv2d(c5, &weights.laterals[2])?;
    let mut top4 = conv2d(c4, &weights.laterals[1])?;
    add_inplace(&mut top4, &upsample_nearest(&top5, 2)?)?;
    let mut top3 = conv2d(c3, &weights.laterals[0])?;
    add_inplace(&mut top3, &upsample_nearest(&top4, 2)?)?;

    FeaturePyramid::new([
        conv2d(&top3, &weights.merges[0])?,
        conv2d(&top4, &weights.merges[1])?,
        conv2d(&top5, &weights.merges[2])?,
        conv2d(c5, &weights.p6)?,
    ])
}

/// Motion- and sampling-stream pyramids from independent weight sets.
pub fn dual_pyramids(
    frame: &Tensor,
    motion: &BackboneWeights,
    sampling: &BackboneWeights,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    Ok((extract_pyramid(frame, motion)?, extract_pyramid(frame, sampling)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize) -> Tensor {
        Tensor::from_fn([1, 3, h, w], |_, c, y, x| ((c * 7 + y * 3 + x * 5) % 17) as f32 / 17.0)
    }

    #[test]
    fn level_sizes_follow_strides() {
        let w = BackboneWeights::init(0, &BackboneConfig { channels: 4 });
        let p = extract_pyramid(&frame(64, 128), &w).unwrap();
        let sizes: Vec<_> = p.levels.iter().map(|t| t.spatial()).collect();
        assert_eq!(sizes, vec![(8, 16), (4, 8), (2, 4), (1, 2)]);
        assert!(p.levels.iter().all(|t| t.channels() == 4));
    }

    #[test]
    fn rejects_indivisible_input() {
        let w = BackboneWeights::init(0, &BackboneConfig { channels: 4 });
        let err = extract_pyramid(&frame(64, 96), &w).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = BackboneConfig { channels: 8 };
        assert_eq!(BackboneWeights::init(0, &cfg), BackboneWeights::init(0, &cfg));
        assert_ne!(BackboneWeights::init(0, &cfg), BackboneWeights::init(1, &cfg));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let cfg = BackboneConfig { channels: 6 };
        let w = BackboneWeights::init(7, &cfg);
        let mut buf = Vec::new();
        w.write(&mut buf).unwrap();
        let back = BackboneWeights::read(&mut buf.as_slice(), &cfg).unwrap();
        assert_eq!(back, w);
        let f = frame(64, 64);
        assert_eq!(extract_pyramid(&f, &w).unwrap(), extract_pyramid(&f, &back).unwrap());
    }

    #[test]
    fn corrupt_checkpoint_names_module() {
        let cfg = BackboneConfig { channels: 4 };
        let mut buf = Vec::new();
        BackboneWeights::init(0, &cfg).write(&mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        let err = BackboneWeights::read(&mut buf.as_slice(), &cfg).unwrap_err();
        assert!(err.to_string().contains("pyramid-backbone"), "{err}");
        let err = BackboneWeights::read(&mut b"nope".as_slice(), &cfg).unwrap_err();
        assert!(err.to_string().contains("pyramid-backbone"), "{err}");
    }

    #[test]
    fn dual_pyramids_compose() {
        let cfg = BackboneConfig { channels: 4 };
        let (a, b) = (BackboneWeights::init(1, &cfg), BackboneWeights::init(2, &cfg));
        let f = frame(64, 64);
        let (pa, pb) = dual_pyramids(&f, &a, &b).unwrap();
        assert_eq!(pa, extract_pyramid(&f, &a).unwrap());
        assert_eq!(pb, extract_pyramid(&f, &b).unwrap());
        assert_ne!(pa, pb);
        let (qa, qb) = dual_pyramids(&f, &a, &a).unwrap();
        assert_eq!(qa, qb);
    }

    #[test]
    fn aggregate_is_order_independent() {
        let mk = |v: f32| FeaturePyramid::new([8, 4, 2, 1].map(|s| Tensor::full([1, 2, s, s], v))).unwrap();
        let r = mk(0.0);
        let cs = vec![
            Contribution { tau: 2, pyramid: mk(0.1) },
            Contribution { tau: -1, pyramid: mk(0.7) },
            Contribution { tau: 0, pyramid: mk(0.3) },
        ];
        let mut rev = cs.clone();
        rev.reverse();
        assert_eq!(aggregate(&r, &cs).unwrap(), aggregate(&r, &rev).unwrap());
        assert!(aggregate(&r, &[]).is_err());
    }
}
