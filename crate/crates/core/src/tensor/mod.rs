//! Dense 4-D `f32` tensors in (batch, channel, row, column) order and the
//! handful of kernels the detector is built from.

mod conv;
pub mod io;
mod sample;

pub use conv::{conv2d, ConvSpec};
pub use sample::{
    bilinear_at, bilinear_sample, deform_conv, deform_sampling_locations, offset_channel, warp,
    SamplingLocation,
};

use crate::error::{Error, Result};

/// Shape as `[batch, channels, height, width]`.
pub type Shape = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Validation(format!(
                "tensor dimensions must be >= 1, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::dims("tensor data length", &[data.len()], &[len]));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics if any dimension is zero.
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor dimensions must be >= 1, got {shape:?}"
        );
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        let [n, c, h, w] = shape;
        let mut i = 0;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f(b, ch, y, x);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    pub fn spatial(&self) -> (usize, usize) {
        (self.shape[2], self.shape[3])
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// One (row-major) spatial plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn relu_inplace(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Channels `start..end` as a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.channels() {
            return Err(Error::dims(
                "channel slice",
                &[start, end],
                &[0, self.channels()],
            ));
        }
        let [n, _, h, w] = self.shape;
        let mut data = Vec::with_capacity(n * (end - start) * h * w);
        for b in 0..n {
            for c in start..end {
                data.extend_from_slice(self.plane(b, c));
            }
        }
        Tensor::new([n, end - start, h, w], data)
    }

    /// Keeps the top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if height > h || width > w || height == 0 || width == 0 {
            return Err(Error::dims("crop", &[height, width], &[h, w]));
        }
        let mut data = Vec::with_capacity(n * c * height * width);
        for b in 0..n {
            for ch in 0..c {
                let p = self.plane(b, ch);
                for y in 0..height {
                    data.extend_from_slice(&p[y * w..y * w + width]);
                }
            }
        }
        Tensor::new([n, c, height, width], data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::dims("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Replicates every pixel into a `factor x factor` block.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("upsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..oh {
                let row = &src[(y / factor) * w..(y / factor + 1) * w];
                for (x, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = row[x / factor];
                }
            }
        }
    }
    Ok(out)
}

/// Mean over non-overlapping `factor x factor` windows. Edge windows that run
/// past the border average only the pixels that exist.
pub fn avg_pool(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("pool factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    let mut count = 0usize;
                    for y in oy * factor..((oy + 1) * factor).min(h) {
                        for x in ox * factor..((ox + 1) * factor).min(w) {
                            acc += src[y * w + x] as f64;
                            count += 1;
                        }
                    }
                    dst[oy * ow + ox] = (acc / count as f64) as f32;
                }
            }
        }
    }
    Ok(out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
        return Err(Error::dims("concat_channels", &sa, &sb));
    }
    let c = sa[1] + sb[1];
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa[0] {
        for ch in 0..sa[1] {
            data.extend_from_slice(a.plane(n, ch));
        }
        for ch in 0..sb[1] {
            data.extend_from_slice(b.plane(n, ch));
        }
    }
    Tensor::new([sa[0], c, sa[2], sa[3]], data)
}

/// Elementwise arithmetic mean, summed in list order.
pub fn mean_stack(tensors: &[&Tensor]) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Validation("mean_stack of an empty list".into()))?;
    let mut acc = (*first).clone();
    for t in &tensors[1..] {
        if t.shape() != first.shape() {
            return Err(Error::dims("mean_stack", &first.shape(), &t.shape()));
        }
        for (a, v) in acc.data.iter_mut().zip(t.data()) {
            *a += v;
        }
    }
    let n = tensors.len() as f32;
    if tensors.len() > 1 {
        for a in &mut acc.data {
            *a /= n;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new([1, 0, 2, 2], vec![]).is_err());
        assert!(Tensor::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let t = Tensor::from_fn([1, 2, 3, 3], |_, c, y, x| (c * 9 + y * 3 + x) as f32);
        assert_eq!(upsample_nearest(&t, 1).unwrap(), t);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let t = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = upsample_nearest(&t, 2).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(u.data(), &expected[..]);
    }

    #[test]
    fn pool_then_upsample_fixes_constants() {
        let t = Tensor::full([1, 3, 8, 8], 0.37);
        let back = upsample_nearest(&avg_pool(&t, 4).unwrap(), 4).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn mean_stack_cases() {
        let x = Tensor::from_fn([1, 2, 3, 4], |_, c, y, x| c as f32 - y as f32 * 0.5 + x as f32);
        assert_eq!(mean_stack(&[&x]).unwrap(), x);
        let neg = x.map(|v| -v);
        let z = mean_stack(&[&x, &neg]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(mean_stack(&[]).is_err());
        let other = Tensor::zeros([1, 2, 3, 3]);
        assert!(mean_stack(&[&x, &other]).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let a = Tensor::from_fn([1, 2, 3, 3], |_, c, y, x| (c + y + x) as f32);
        let b = Tensor::from_fn([1, 3, 3, 3], |_, c, y, x| (10 * c + y * x) as f32);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.channels(), 5);
        assert_eq!(cat.slice_channels(0, 2).unwrap(), a);
        assert_eq!(cat.slice_channels(2, 5).unwrap(), b);
        assert!(concat_channels(&a, &Tensor::zeros([1, 1, 2, 3])).is_err());
    }

    #[test]
    fn crop_keeps_top_left() {
        let t = Tensor::from_fn([1, 1, 4, 4], |_, _, y, x| (y * 4 + x) as f32);
        let c = t.crop(3, 2).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 4.0, 5.0, 8.0, 9.0]);
    }
}
