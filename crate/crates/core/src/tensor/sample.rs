use super::{ConvSpec, Tensor};
use crate::error::{Error, Result};
use crate::par;
use serde::{Deserialize, Serialize};

/// Bilinear read of a `height x width` plane at continuous `(x, y)`.
///
/// Each of the four neighbouring taps reads as zero when it falls outside the
/// plane, so points further than one pixel outside return exactly zero.
#[inline]
pub fn bilinear_at(plane: &[f32], height: usize, width: usize, x: f32, y: f32) -> f32 {
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let (x0, y0) = (x0f as isize, y0f as isize);
    let (h, w) = (height as isize, width as isize);
    let tap = |yy: isize, xx: isize| -> f32 {
        if yy >= 0 && yy < h && xx >= 0 && xx < w {
            plane[yy as usize * width + xx as usize]
        } else {
            0.0
        }
    };
    if fx == 0.0 && fy == 0.0 {
        return tap(y0, x0);
    }
    let top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx;
    let bottom = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Samples every channel of a single-image map at each `(x, y)` point.
pub fn bilinear_sample(map: &Tensor, points: &[(f32, f32)]) -> Result<Vec<Vec<f32>>> {
    if map.batch() != 1 {
        return Err(Error::dims("bilinear_sample batch", &[map.batch()], &[1]));
    }
    let (h, w) = map.spatial();
    Ok(points
        .iter()
        .map(|&(x, y)| {
            (0..map.channels())
                .map(|c| bilinear_at(map.plane(0, c), h, w, x, y))
                .collect()
        })
        .collect())
}

/// Backward warp: `out(c, y, x) = feature(c, y + dy(y, x), x + dx(y, x))`,
/// with `flow` channel 0 holding `dx` and channel 1 holding `dy`.
pub fn warp(feature: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = feature.shape();
    let fs = flow.shape();
    if fs[0] != n || fs[1] != 2 || fs[2] != h || fs[3] != w {
        return Err(Error::dims("warp feature vs flow", &feature.shape(), &fs));
    }
    let mut out = vec![0.0f32; feature.len()];
    par::for_each_chunk(&mut out, h * w, |idx, dst| {
        let (b, ch) = (idx / c, idx % c);
        let src = feature.plane(b, ch);
        let (fx, fy) = (flow.plane(b, 0), flow.plane(b, 1));
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                dst[i] = bilinear_at(src, h, w, x as f32 + fx[i], y as f32 + fy[i]);
            }
        }
    });
    Tensor::new(feature.shape(), out)
}

/// Offset channels `(dy, dx)` for deformable `group` and row-major `tap`.
#[inline]
pub fn offset_channel(group: usize, tap: usize, taps: usize) -> (usize, usize) {
    let base = 2 * (group * taps + tap);
    (base, base + 1)
}

fn check_deform(input: &Tensor, offsets: &Tensor, spec: &ConvSpec, groups: usize) -> Result<(usize, usize)> {
    spec.validate()?;
    let (kh, kw) = spec.kernel();
    let ci = input.channels();
    if ci != spec.in_channels() {
        return Err(Error::dims("deform_conv input vs kernel", &input.shape(), &spec.weight.shape()));
    }
    if groups == 0 || !ci.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "{ci} input channels cannot be split into {groups} deformable groups"
        )));
    }
    let expected = 2 * kh * kw * groups;
    if offsets.channels() != expected {
        return Err(Error::Config(format!(
            "offset field has {} channels, expected 2*{kh}*{kw}*{groups} = {expected}",
            offsets.channels()
        )));
    }
    let (ho, wo) = spec.output_size(input.height(), input.width())?;
    if offsets.batch() != input.batch() || offsets.spatial() != (ho, wo) {
        return Err(Error::dims(
            "deform_conv offsets vs output",
            &offsets.shape(),
            &[input.batch(), expected, ho, wo],
        ));
    }
    Ok((ho, wo))
}

/// Sampling position of one deformable tap, shared by the kernel and the
/// introspection dump so the two can never disagree.
#[inline]
fn tap_position(spec: &ConvSpec, oy: usize, ox: usize, ky: usize, kx: usize, dy: f32, dx: f32) -> (f32, f32) {
    let base_y = (oy * spec.stride) as f32 - spec.padding as f32 + (ky * spec.dilation) as f32;
    let base_x = (ox * spec.stride) as f32 - spec.padding as f32 + (kx * spec.dilation) as f32;
    (base_x + dx, base_y + dy)
}

/// Deformable convolution: tap `(ky, kx)` of output `(oy, ox)` reads the input
/// at its regular grid position plus the learned offset of its channel group.
///
/// Accumulation order matches [`super::conv2d`], so all-zero offsets give the
/// same result as the plain convolution.
pub fn deform_conv(input: &Tensor, offsets: &Tensor, spec: &ConvSpec, groups: usize) -> Result<Tensor> {
    let (ho, wo) = check_deform(input, offsets, spec, groups)?;
    let [n, ci, h, w] = input.shape();
    let co = spec.out_channels();
    let (kh, kw) = spec.kernel();
    let taps = kh * kw;
    let per_group = ci / groups;

    // weights reordered to (out, tap, in) so the inner product walks memory linearly
    let mut wt = vec![0.0f32; co * taps * ci];
    for o in 0..co {
        for ky in 0..kh {
            for kx in 0..kw {
                for i in 0..ci {
                    wt[(o * taps + ky * kw + kx) * ci + i] = spec.weight_at(o, i, ky, kx);
                }
            }
        }
    }

    // columns no output reads are never sampled
    let used: Vec<bool> = (0..taps * ci)
        .map(|col| (0..co).any(|o| wt[o * taps * ci + col] != 0.0))
        .collect();

    // rows of (out_channel, x) per (batch, oy), transposed afterwards
    let rows = par::map_range(n * ho, |row| {
        let (b, oy) = (row / ho, row % ho);
        let mut cols = vec![0.0f32; taps * ci];
        let mut line = vec![0.0f32; co * wo];
        for ox in 0..wo {
            for ky in 0..kh {
                for kx in 0..kw {
                    let tap = ky * kw + kx;
                    for g in 0..groups {
                        let (cy, cx) = offset_channel(g, tap, taps);
                        let dy = offsets.get(b, cy, oy, ox);
                        let dx = offsets.get(b, cx, oy, ox);
                        let (sx, sy) = tap_position(spec, oy, ox, ky, kx, dy, dx);
                        for i in g * per_group..(g + 1) * per_group {
                            if used[tap * ci + i] {
                                cols[tap * ci + i] = bilinear_at(input.plane(b, i), h, w, sx, sy);
                            }
                        }
                    }
                }
            }
            for o in 0..co {
                let wrow = &wt[o * taps * ci..(o + 1) * taps * ci];
                let mut acc = 0.0f32;
                for (wv, v) in wrow.iter().zip(&cols) {
                    if *wv != 0.0 {
                        acc += wv * v;
                    }
                }
                line[o * wo + ox] = acc + spec.bias[o];
            }
        }
        line
    });

    let mut out = Tensor::zeros([n, co, ho, wo]);
    for (row, line) in rows.iter().enumerate() {
        let (b, oy) = (row / ho, row % ho);
        for o in 0..co {
            let dst = out.plane_mut(b, o);
            dst[oy * wo..(oy + 1) * wo].copy_from_slice(&line[o * wo..(o + 1) * wo]);
        }
    }
    Ok(out)
}

/// One deformable sampling location, for visualising where the sampler looked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingLocation {
    pub level: usize,
    pub y: usize,
    pub x: usize,
    pub group: usize,
    pub tap: usize,
    pub sx: f32,
    pub sy: f32,
}

/// Every `(output pixel, group, tap)` sampling position of a deformable layer,
/// computed by the same routine [`deform_conv`] uses.
pub fn deform_sampling_locations(
    input: &Tensor,
    offsets: &Tensor,
    spec: &ConvSpec,
    groups: usize,
    level: usize,
) -> Result<Vec<SamplingLocation>> {
    let (ho, wo) = check_deform(input, offsets, spec, groups)?;
    let (kh, kw) = spec.kernel();
    let taps = kh * kw;
    let mut out = Vec::with_capacity(ho * wo * groups * taps);
    for y in 0..ho {
        for x in 0..wo {
            for group in 0..groups {
                for tap in 0..taps {
                    let (cy, cx) = offset_channel(group, tap, taps);
                    let (sx, sy) = tap_position(
                        spec,
                        y,
                        x,
                        tap / kw,
                        tap % kw,
                        offsets.get(0, cy, y, x),
                        offsets.get(0, cx, y, x),
                    );
                    out.push(SamplingLocation { level, y, x, group, tap, sx, sy });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;

    #[test]
    fn integer_points_read_stored_values() {
        let map = Tensor::from_fn([1, 2, 3, 4], |_, c, y, x| (c * 12 + y * 4 + x) as f32);
        let got = bilinear_sample(&map, &[(2.0, 1.0), (0.0, 0.0), (3.0, 2.0)]).unwrap();
        assert_eq!(got[0], vec![6.0, 18.0]);
        assert_eq!(got[1], vec![0.0, 12.0]);
        assert_eq!(got[2], vec![11.0, 23.0]);
    }

    #[test]
    fn patch_centre_is_average() {
        let map = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&map, &[(0.5, 0.5)]).unwrap()[0][0], 1.5);
    }

    #[test]
    fn far_outside_reads_zero() {
        let map = Tensor::full([1, 3, 4, 4], 7.0);
        assert_eq!(bilinear_sample(&map, &[(-5.0, -5.0)]).unwrap()[0], vec![0.0; 3]);
        // half a pixel past the edge blends with the zero outside
        assert_eq!(bilinear_sample(&map, &[(3.5, 0.0)]).unwrap()[0][0], 3.5);
    }

    #[test]
    fn zero_flow_warp_is_bit_exact() {
        let f = Tensor::from_fn([1, 3, 5, 6], |_, c, y, x| (c as f32 + 0.1) * (y as f32 - 2.3) * (x as f32 + 0.7));
        let out = warp(&f, &Tensor::zeros([1, 2, 5, 6])).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn unit_flow_shifts_left_with_zero_border() {
        let f = Tensor::from_fn([1, 1, 3, 4], |_, _, y, x| (1 + y * 4 + x) as f32);
        let flow = Tensor::from_fn([1, 2, 3, 4], |_, c, _, _| if c == 0 { 1.0 } else { 0.0 });
        let out = warp(&f, &flow).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(out.get(0, 0, y, x), f.get(0, 0, y, x + 1));
            }
            assert_eq!(out.get(0, 0, y, 3), 0.0);
        }
    }

    #[test]
    fn half_pixel_flow_on_ramp() {
        let f = Tensor::from_fn([1, 1, 2, 6], |_, _, _, x| x as f32);
        let flow = Tensor::from_fn([1, 2, 2, 6], |_, c, _, _| if c == 0 { 0.5 } else { 0.0 });
        let out = warp(&f, &flow).unwrap();
        for x in 0..5 {
            assert_eq!(out.get(0, 0, 1, x), x as f32 + 0.5);
        }
    }

    #[test]
    fn warp_rejects_bad_flow() {
        let f = Tensor::zeros([1, 1, 3, 3]);
        assert!(warp(&f, &Tensor::zeros([1, 3, 3, 3])).is_err());
        assert!(warp(&f, &Tensor::zeros([1, 2, 3, 4])).is_err());
    }

    fn seeded(shape: [usize; 4], seed: u32) -> Tensor {
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(1);
        Tensor::from_fn(shape, |_, _, _, _| {
            s ^= s << 13;
            s ^= s >> 17;
            s ^= s << 5;
            (s % 2001) as f32 / 1000.0 - 1.0
        })
    }

    #[test]
    fn deform_with_zero_offsets_is_conv() {
        let x = seeded([1, 8, 6, 7], 3);
        let spec = ConvSpec::new(seeded([5, 8, 3, 3], 4), vec![0.1, 0.2, 0.0, -0.3, 1.0], 1, 1).unwrap();
        let offsets = Tensor::zeros([1, 72, 6, 7]);
        let a = deform_conv(&x, &offsets, &spec, 4).unwrap();
        let b = conv2d(&x, &spec).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
    }

    #[test]
    fn offset_channel_count_is_checked() {
        let x = Tensor::zeros([1, 8, 4, 4]);
        let spec = ConvSpec::zeros(8, 8, 3, 1);
        let err = deform_conv(&x, &Tensor::zeros([1, 36, 4, 4]), &spec, 4).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("72"));
        assert!(deform_conv(&Tensor::zeros([1, 6, 4, 4]), &Tensor::zeros([1, 72, 4, 4]), &ConvSpec::zeros(6, 6, 3, 1), 4).is_err());
    }

    #[test]
    fn integer_offsets_equal_shifted_conv() {
        let x = seeded([1, 4, 5, 6], 9);
        let spec = ConvSpec::new(seeded([3, 4, 3, 3], 10), vec![0.0; 3], 1, 1).unwrap();
        let offsets = Tensor::from_fn([1, 72, 5, 6], |_, c, _, _| if c % 2 == 1 { 1.0 } else { 0.0 });
        let deformed = deform_conv(&x, &offsets, &spec, 4).unwrap();
        let shifted = Tensor::from_fn([1, 4, 5, 6], |_, c, y, xx| if xx + 1 < 6 { x.get(0, c, y, xx + 1) } else { 0.0 });
        let plain = conv2d(&shifted, &spec).unwrap();
        // column 0 differs: its left tap reads x[0] rather than padding
        for (c, y, xx) in (0..3).flat_map(|c| (0..5).flat_map(move |y| (1..6).map(move |xx| (c, y, xx)))) {
            assert!((deformed.get(0, c, y, xx) - plain.get(0, c, y, xx)).abs() < 1e-5);
        }
    }

    #[test]
    fn sampling_locations_are_grid_plus_offset() {
        let x = Tensor::zeros([1, 4, 3, 3]);
        let spec = ConvSpec::zeros(4, 4, 3, 1);
        let offsets = Tensor::from_fn([1, 72, 3, 3], |_, c, y, xx| c as f32 * 0.25 - (y * 3 + xx) as f32 * 0.5);
        let locs = deform_sampling_locations(&x, &offsets, &spec, 4, 3).unwrap();
        assert_eq!(locs.len(), 9 * 4 * 9);
        for l in &locs {
            let (cy, cx) = offset_channel(l.group, l.tap, 9);
            let gy = l.y as f32 - 1.0 + (l.tap / 3) as f32;
            let gx = l.x as f32 - 1.0 + (l.tap % 3) as f32;
            assert_eq!(l.sy, gy + offsets.get(0, cy, l.y, l.x));
            assert_eq!(l.sx, gx + offsets.get(0, cx, l.y, l.x));
        }
    }
}
