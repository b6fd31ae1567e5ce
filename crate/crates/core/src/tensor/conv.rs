use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Weights and geometry of one 2-D convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    /// `(out_channels, in_channels, kh, kw)`.
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(weight: Tensor, bias: Vec<f32>, stride: usize, padding: usize) -> Result<Self> {
        let spec = ConvSpec {
            weight,
            bias,
            stride,
            padding,
            dilation: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// All-zero `k x k` layer with "same" padding at stride 1.
    pub fn zeros(out_channels: usize, in_channels: usize, k: usize, stride: usize) -> Self {
        ConvSpec {
            weight: Tensor::zeros([out_channels, in_channels, k, k]),
            bias: vec![0.0; out_channels],
            stride,
            padding: k / 2,
            dilation: 1,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Result<Self> {
        self.dilation = dilation;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let [o, _, kh, kw] = self.weight.shape();
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("kernel must be odd-sized, got {kh}x{kw}")));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::Config("stride and dilation must be >= 1".into()));
        }
        if self.bias.len() != o {
            return Err(Error::dims("conv bias", &[self.bias.len()], &[o]));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// `floor((in + 2 pad - dilation (k - 1) - 1) / stride) + 1` per axis.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let axis = |len: usize, k: usize| -> Option<usize> {
            let span = len + 2 * self.padding;
            let reach = self.dilation * (k - 1) + 1;
            (span >= reach).then(|| (span - reach) / self.stride + 1)
        };
        match (axis(height, kh), axis(width, kw)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::dims("conv output size", &[height, width], &[kh, kw])),
        }
    }

    #[inline]
    pub(crate) fn weight_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        let [_, ci, kh, kw] = self.weight.shape();
        self.weight.data()[((o * ci + i) * kh + ky) * kw + kx]
    }
}

/// Zero-padded cross-correlation.
///
/// Every output element accumulates its taps in the fixed order kernel row,
/// kernel column, input channel, then adds the bias. Zero weights and
/// out-of-bounds taps add exactly zero and are skipped.
pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let [n, ci, h, w] = input.shape();
    if ci != spec.in_channels() {
        return Err(Error::dims(
            "conv2d input vs kernel",
            &input.shape(),
            &spec.weight.shape(),
        ));
    }
    let (ho, wo) = spec.output_size(h, w)?;
    let co = spec.out_channels();
    let (kh, kw) = spec.kernel();
    let (stride, pad, dil) = (spec.stride as isize, spec.padding as isize, spec.dilation as isize);
    let plane = ho * wo;
    let mut out = vec![0.0f32; n * co * plane];

    par::for_each_chunk(&mut out, plane, |idx, dst| {
        let (b, o) = (idx / co, idx % co);
        for ky in 0..kh {
            let dy = ky as isize * dil - pad;
            for kx in 0..kw {
                let dx = kx as isize * dil - pad;
                // valid output columns: 0 <= ox*stride + dx < w
                let lo = if dx >= 0 { 0 } else { ((-dx) + stride - 1) / stride };
                let hi = ((w as isize - dx + stride - 1) / stride).clamp(0, wo as isize);
                if lo >= hi {
                    continue;
                }
                let (lo, hi) = (lo as usize, hi as usize);
                for i in 0..ci {
                    let wv = spec.weight_at(o, i, ky, kx);
                    if wv == 0.0 {
                        continue;
                    }
                    let src = input.plane(b, i);
                    for oy in 0..ho {
                        let iy = oy as isize * stride + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                        if stride == 1 {
                            let shift = dx; // ix = ox + dx
                            let row = &row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (d, s) in out_row[lo..hi].iter_mut().zip(row) {
                                *d += wv * s;
                            }
                        } else {
                            for (ox, d) in out_row.iter_mut().enumerate().take(hi).skip(lo) {
                                let ix = (ox as isize * stride + dx) as usize;
                                *d += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
        let bias = spec.bias[o];
        for d in dst.iter_mut() {
            *d += bias;
        }
    });

    Tensor::new([n, co, ho, wo], out)
}
