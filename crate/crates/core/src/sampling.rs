//! Sampling stream: a small U-shaped network predicts deformable offsets from
//! the concatenated reference and support features; a deformable 3x3
//! convolution over the support then hallucinates the reference feature.

use crate::backbone::{aggregate, Contribution, FeaturePyramid};
use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, conv2d, deform_conv, deform_sampling_locations, offset_channel, upsample_nearest, ConvSpec,
    SamplingLocation, Tensor,
};
use crate::weights::{he_conv, rng, write_convs, ConvTable};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const KERNEL: usize = 3;
pub const DEFORM_GROUPS: usize = 4;
pub const OFFSET_CHANNELS: usize = 2 * KERNEL * KERNEL * DEFORM_GROUPS;

/// Where the sampling stream gets its offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetSource {
    /// The offset predictor network.
    Predictor,
    /// Exact flow replicated to every tap, limited to the predictor's reach.
    FlowOracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetPredictorWeights {
    pub in_channels: usize,
    pub filters: usize,
    /// Group 1 keeps resolution; groups 2 and 3 each open with a stride-2 conv.
    pub groups: [[ConvSpec; 2]; 3],
    /// Applied to the concatenation of the three (upsampled) group outputs.
    pub predict: ConvSpec,
}

impl OffsetPredictorWeights {
    /// Random trunk; the prediction conv starts at zero.
    pub fn init(seed: u64, in_channels: usize, filters: usize) -> Self {
        let mut r = rng(seed);
        let (c, f) = (in_channels, filters);
        let groups = [
            [he_conv(&mut r, f, 2 * c, 3, 1), he_conv(&mut r, f, f, 3, 1)],
            [he_conv(&mut r, f, f, 3, 2), he_conv(&mut r, f, f, 3, 1)],
            [he_conv(&mut r, f, f, 3, 2), he_conv(&mut r, f, f, 3, 1)],
        ];
        OffsetPredictorWeights {
            in_channels,
            filters,
            groups,
            predict: ConvSpec::zeros(OFFSET_CHANNELS, 3 * f, 3, 1),
        }
    }

    /// Receptive-field radius of one output offset, in level pixels. Nearest
    /// upsampling by `u` widens it by `u - 1`.
    pub fn reach(&self) -> usize {
        let mut radius = 0;
        let mut jump = 1;
        let mut widest = 0;
        for (g, pair) in self.groups.iter().enumerate() {
            for conv in pair {
                radius += (conv.kernel().0 / 2) * conv.dilation * jump;
                jump *= conv.stride;
            }
            let upsample = [1, 2, 4][g];
            widest = widest.max(radius + upsample - 1);
        }
        widest + self.predict.kernel().0 / 2
    }

    pub fn named_convs(&self) -> Vec<(String, &ConvSpec)> {
        let mut v = Vec::new();
        for (g, pair) in self.groups.iter().enumerate() {
            v.push((format!("group{}.a", g + 1), &pair[0]));
            v.push((format!("group{}.b", g + 1), &pair[1]));
        }
        v.push(("predict".into(), &self.predict));
        v
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        write_convs(w, self.named_convs())
    }

    pub fn read(r: &mut impl Read, in_channels: usize, filters: usize) -> Result<Self> {
        let mut t = ConvTable::read("sampling-stream", r)?;
        let (c, f) = (in_channels, filters);
        let w = OffsetPredictorWeights {
            in_channels,
            filters,
            groups: [
                [t.take("group1.a", f, 2 * c, 3)?, t.take("group1.b", f, f, 3)?],
                [t.take("group2.a", f, f, 3)?, t.take("group2.b", f, f, 3)?],
                [t.take("group3.a", f, f, 3)?, t.take("group3.b", f, f, 3)?],
            ],
            predict: t.take("predict", OFFSET_CHANNELS, 3 * f, 3)?,
        };
        t.finish()?;
        Ok(w)
    }
}

fn conv_relu(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let mut y = conv2d(x, spec)?;
    y.relu_inplace();
    Ok(y)
}

/// Offsets for one level: `(1, 72, h, w)`.
pub fn predict_offsets(reference: &Tensor, support: &Tensor, weights: &OffsetPredictorWeights) -> Result<Tensor> {
    if reference.shape() != support.shape() {
        return Err(Error::dims("offset predictor inputs", &reference.shape(), &support.shape()));
    }
    if reference.channels() != weights.in_channels {
        return Err(Error::dims(
            "offset predictor channels",
            &[reference.channels()],
            &[weights.in_channels],
        ));
    }
    let (h, w) = reference.spatial();
    let x = concat_channels(reference, support)?;
    let g1 = conv_relu(&conv_relu(&x, &weights.groups[0][0])?, &weights.groups[0][1])?;
    let g2 = conv_relu(&conv_relu(&g1, &weights.groups[1][0])?, &weights.groups[1][1])?;
    let g3 = conv_relu(&conv_relu(&g2, &weights.groups[2][0])?, &weights.groups[2][1])?;
    let up2 = upsample_nearest(&g2, 2)?.crop(h, w)?;
    let up3 = upsample_nearest(&g3, 4)?.crop(h, w)?;
    let joined = concat_channels(&concat_channels(&g1, &up2)?, &up3)?;
    conv2d(&joined, &weights.predict)
}

/// Offset field that moves every tap of every group by the same flow vector,
/// with the vector's length capped at `reach`.
pub fn offsets_from_flow(flow_level: &Tensor, reach: f32) -> Result<Tensor> {
    let [n, c, h, w] = flow_level.shape();
    if n != 1 || c != 2 {
        return Err(Error::dims("flow level", &flow_level.shape(), &[1, 2, h, w]));
    }
    let mut out = Tensor::zeros([1, OFFSET_CHANNELS, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (mut dx, mut dy) = (flow_level.get(0, 0, y, x), flow_level.get(0, 1, y, x));
            let len = (dx * dx + dy * dy).sqrt();
            if len > reach {
                dx *= reach / len;
                dy *= reach / len;
            }
            for g in 0..DEFORM_GROUPS {
                for tap in 0..KERNEL * KERNEL {
                    let (cy, cx) = offset_channel(g, tap, KERNEL * KERNEL);
                    out.set(0, cy, y, x, dy);
                    out.set(0, cx, y, x, dx);
                }
            }
        }
    }
    Ok(out)
}

/// 3x3 sampler whose centre tap copies each channel through.
pub fn identity_sampler(channels: usize) -> ConvSpec {
    let mut s = ConvSpec::zeros(channels, channels, KERNEL, 1);
    for c in 0..channels {
        let i = s.weight.offset(c, c, 1, 1);
        s.weight.data_mut()[i] = 1.0;
    }
    s
}

pub fn hallucinate(support: &Tensor, offsets: &Tensor, sampler: &ConvSpec) -> Result<Tensor> {
    deform_conv(support, offsets, sampler, DEFORM_GROUPS)
}

/// Per-level mean of hallucinated pyramids including the reference's own term.
pub fn aggregate_sampling(reference: &FeaturePyramid, hallucinated: &[Contribution]) -> Result<FeaturePyramid> {
    aggregate(reference, hallucinated)
}

/// Every sampling position used when hallucinating one level.
pub fn sampling_locations(
    support: &Tensor,
    offsets: &Tensor,
    sampler: &ConvSpec,
    level: usize,
) -> Result<Vec<SamplingLocation>> {
    deform_sampling_locations(support, offsets, sampler, DEFORM_GROUPS, level)
}

pub fn sampling_locations_jsonl(locations: &[SamplingLocation]) -> Result<String> {
    let mut s = String::new();
    for l in locations {
        s.push_str(&serde_json::to_string(l)?);
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(c: usize, h: usize, w: usize, k: f32) -> Tensor {
        Tensor::from_fn([1, c, h, w], |_, ch, y, x| ((ch * 5 + y * 3 + x) as f32 * k).sin())
    }

    #[test]
    fn zero_predictor_gives_zero_offsets_of_72_channels() {
        let w = OffsetPredictorWeights::init(3, 8, 8);
        let o = predict_offsets(&feat(8, 7, 7, 0.3), &feat(8, 7, 7, 0.7), &w).unwrap();
        assert_eq!(o.shape(), [1, 72, 7, 7]);
        assert!(o.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_levels_are_cropped() {
        let mut w = OffsetPredictorWeights::init(3, 4, 4);
        w.predict = he_conv(&mut rng(1), OFFSET_CHANNELS, 12, 3, 1);
        let o = predict_offsets(&feat(4, 7, 7, 0.3), &feat(4, 7, 7, 0.3), &w).unwrap();
        assert_eq!(o.shape(), [1, 72, 7, 7]);
        assert!(o.is_finite());
    }

    #[test]
    fn reach_follows_architecture() {
        let w = OffsetPredictorWeights::init(0, 4, 4);
        // group 3 radius 11 at jump 4, +3 from 4x upsampling, +1 final conv
        assert_eq!(w.reach(), 15);
    }

    #[test]
    fn identity_sampler_with_zero_offsets_is_identity() {
        let f = feat(8, 5, 6, 0.4);
        let out = hallucinate(&f, &Tensor::zeros([1, 72, 5, 6]), &identity_sampler(8)).unwrap();
        assert!(out.max_abs_diff(&f).unwrap() < 1e-6);
        assert!(hallucinate(&f, &Tensor::zeros([1, 70, 5, 6]), &identity_sampler(8)).is_err());
    }

    #[test]
    fn flow_offsets_are_replicated_and_capped() {
        let flow = Tensor::from_fn([1, 2, 2, 2], |_, c, y, _| if c == 0 { 3.0 + 30.0 * y as f32 } else { 4.0 });
        let o = offsets_from_flow(&flow, 10.0).unwrap();
        let (cy, cx) = offset_channel(3, 8, 9);
        assert_eq!((o.get(0, cy, 0, 0), o.get(0, cx, 0, 0)), (4.0, 3.0));
        let (dy, dx) = (o.get(0, 0, 1, 0), o.get(0, 1, 1, 0));
        assert!(((dx * dx + dy * dy).sqrt() - 10.0).abs() < 1e-4);
    }
}
