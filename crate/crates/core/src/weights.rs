//! Seeded initialisation and named-archive plumbing shared by every weight set.

use crate::error::{Error, Result};
use crate::tensor::io::{read_archive, write_archive};
use crate::tensor::{ConvSpec, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::io::{Read, Write};

/// Deterministic RNG used for every weight initialiser.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// He-normal `k x k` convolution with zero bias and "same" padding.
pub fn he_conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, k: usize, stride: usize) -> ConvSpec {
    let fan_in = (in_c * k * k) as f32;
    let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("finite std");
    let data = (0..out_c * in_c * k * k).map(|_| normal.sample(rng)).collect();
    ConvSpec {
        weight: Tensor::new([out_c, in_c, k, k], data).expect("shape matches data"),
        bias: vec![0.0; out_c],
        stride,
        padding: k / 2,
        dilation: 1,
    }
}

/// Flattens named convolutions into archive entries: `<name>.weight`,
/// `<name>.bias` and `<name>.geom` (stride, padding, dilation).
pub fn convs_to_entries<'a>(convs: impl IntoIterator<Item = (String, &'a ConvSpec)>) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (name, c) in convs {
        out.push((format!("{name}.weight"), c.weight.clone()));
        let o = c.bias.len();
        out.push((
            format!("{name}.bias"),
            Tensor::new([1, o, 1, 1], c.bias.clone()).expect("bias shape"),
        ));
        out.push((
            format!("{name}.geom"),
            Tensor::new(
                [1, 1, 1, 3],
                vec![c.stride as f32, c.padding as f32, c.dilation as f32],
            )
            .expect("geom shape"),
        ));
    }
    out
}

/// Named convolutions read back from an archive, consumed by name.
pub struct ConvTable {
    module: &'static str,
    entries: BTreeMap<String, Tensor>,
}

impl ConvTable {
    pub fn from_entries(module: &'static str, entries: Vec<(String, Tensor)>) -> Self {
        ConvTable {
            module,
            entries: entries.into_iter().collect(),
        }
    }

    pub fn read(module: &'static str, r: &mut impl Read) -> Result<Self> {
        let entries = read_archive(r).map_err(|e| Error::Format {
            kind: "weights",
            reason: format!("{module}: {e}"),
        })?;
        Ok(Self::from_entries(module, entries))
    }

    fn fail(&self, reason: String) -> Error {
        Error::Format {
            kind: "weights",
            reason: format!("{}: {reason}", self.module),
        }
    }

    /// Removes `<name>.*` and checks the kernel is `(out_c, in_c, k, k)`.
    pub fn take(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) -> Result<ConvSpec> {
        let mut get = |suffix: &str| {
            let key = format!("{name}.{suffix}");
            self.entries.remove(&key).ok_or(key)
        };
        let (weight, bias, geom) = match (get("weight"), get("bias"), get("geom")) {
            (Ok(w), Ok(b), Ok(g)) => (w, b, g),
            (Err(k), _, _) | (_, Err(k), _) | (_, _, Err(k)) => {
                return Err(self.fail(format!("missing entry {k}")))
            }
        };
        if weight.shape() != [out_c, in_c, k, k] || bias.len() != out_c || geom.len() != 3 {
            return Err(self.fail(format!(
                "{name} has kernel {:?}, expected {:?}",
                weight.shape(),
                [out_c, in_c, k, k]
            )));
        }
        let g = geom.data();
        let as_count = |v: f32| (v.is_finite() && v >= 0.0 && v.fract() == 0.0).then_some(v as usize);
        let (Some(stride), Some(padding), Some(dilation)) = (as_count(g[0]), as_count(g[1]), as_count(g[2])) else {
            return Err(self.fail(format!("{name} has invalid geometry {g:?}")));
        };
        if !weight.is_finite() || bias.data().iter().any(|v| !v.is_finite()) {
            return Err(self.fail(format!("{name} contains non-finite values")));
        }
        let spec = ConvSpec {
            weight,
            bias: bias.into_data(),
            stride,
            padding,
            dilation,
        };
        spec.validate().map_err(|e| self.fail(format!("{name}: {e}")))?;
        Ok(spec)
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(extra) => Err(self.fail(format!("unexpected entry {extra}"))),
            None => Ok(()),
        }
    }
}

pub fn write_convs<'a>(w: &mut impl Write, convs: impl IntoIterator<Item = (String, &'a ConvSpec)>) -> Result<()> {
    write_archive(w, &convs_to_entries(convs))
}
