//! Motion stream: warp support pyramids onto the reference along per-level
//! flow, then average with the reference itself.

use crate::backbone::{aggregate, Contribution, FeaturePyramid};
use crate::error::Result;
use crate::flow::FlowField;
use crate::tensor::{warp, Tensor};

/// Bilinear warp of one support level onto the reference grid.
pub fn calibrate(support_feature: &Tensor, flow_level: &Tensor) -> Result<Tensor> {
    warp(support_feature, flow_level)
}

pub fn calibrate_pyramid(support: &FeaturePyramid, flow: &FlowField) -> Result<FeaturePyramid> {
    support.try_map(|level, t| calibrate(t, flow.level(level)))
}

/// Mean over calibrated contributions; the caller includes the reference's
/// own `tau = 0` term.
pub fn aggregate_motion(reference: &FeaturePyramid, calibrated: &[Contribution]) -> Result<FeaturePyramid> {
    aggregate(reference, calibrated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_integer_flow_shifts_with_zero_border() {
        let f = Tensor::from_fn([1, 1, 3, 4], |_, _, y, x| (1 + y * 4 + x) as f32);
        let flow = Tensor::from_fn([1, 2, 3, 4], |_, c, _, _| if c == 0 { 1.0 } else { 0.0 });
        let out = calibrate(&f, &flow).unwrap();
        assert_eq!(out.plane(0, 0)[..4], [2.0, 3.0, 4.0, 0.0]);
        assert_eq!(calibrate(&f, &Tensor::zeros([1, 2, 3, 4])).unwrap(), f);
        assert!(calibrate(&f, &Tensor::zeros([1, 2, 3, 3])).is_err());
    }

    #[test]
    fn single_reference_term_is_identity() {
        let p = FeaturePyramid::new([8, 4, 2, 1].map(|s| Tensor::from_fn([1, 2, s, s], |_, c, y, x| (c + y + x) as f32)))
            .unwrap();
        let out = aggregate_motion(&p, &[Contribution { tau: 0, pyramid: p.clone() }]).unwrap();
        assert_eq!(out, p);
    }
}
