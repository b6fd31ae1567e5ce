//! Optical-flow fields aligned to the pyramid, `.flo` files, and the
//! pluggable providers that produce them.
//!
//! Convention: `flow(p) = (dx, dy)` maps reference pixel `p` to `p + flow(p)`
//! in the support frame, which is exactly what the backward warp consumes.

use crate::backbone::{level_stride, LEVELS};
use crate::error::{Error, Result};
use crate::par;
use crate::synth::{truth_flow, SceneTruth};
use crate::tensor::{avg_pool, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Middlebury magic number; its little-endian bytes spell `PIEH`.
pub const FLO_MAGIC: f32 = 202021.25;

/// Per-level displacement maps `[P3..P6]`, each `(1, 2, h, w)` holding
/// `(dx, dy)` in that level's pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub levels: [Tensor; 4],
    pub reference: usize,
    pub support: usize,
}

impl FlowField {
    pub fn level(&self, level: usize) -> &Tensor {
        &self.levels[level - LEVELS[0]]
    }

    /// Downscales a full-resolution field to every pyramid level.
    pub fn from_full_resolution(full: &Tensor, reference: usize, support: usize) -> Result<Self> {
        let levels = [0, 1, 2, 3].map(|i| downscale_flow(full, LEVELS[i]));
        let [a, b, c, d] = levels;
        Ok(FlowField {
            levels: [a?, b?, c?, d?],
            reference,
            support,
        })
    }

    pub fn zeros(height: usize, width: usize, reference: usize, support: usize) -> Self {
        let levels = LEVELS.map(|l| {
            let s = level_stride(l);
            Tensor::zeros([1, 2, height.div_ceil(s), width.div_ceil(s)])
        });
        FlowField {
            levels,
            reference,
            support,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(Tensor::is_finite)
    }
}

/// Average-pools a full-resolution flow by `2^level` and rescales the
/// displacements into level pixels.
pub fn downscale_flow(full: &Tensor, level: usize) -> Result<Tensor> {
    if full.channels() != 2 {
        return Err(Error::dims("flow channels", &full.shape(), &[1, 2, full.height(), full.width()]));
    }
    let s = level_stride(level);
    let pooled = avg_pool(full, s)?;
    Ok(pooled.map(|v| v / s as f32))
}

pub fn write_flo(path: &Path, flow: &Tensor) -> Result<()> {
    fs::write(path, flo_bytes(flow)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn flo_bytes(flow: &Tensor) -> Result<Vec<u8>> {
    let [n, c, h, w] = flow.shape();
    if n != 1 || c != 2 {
        return Err(Error::dims("flo payload", &flow.shape(), &[1, 2, h, w]));
    }
    let mut buf = Vec::with_capacity(12 + 8 * h * w);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    let (u, v) = (flow.plane(0, 0), flow.plane(0, 1));
    for i in 0..h * w {
        buf.extend_from_slice(&u[i].to_le_bytes());
        buf.extend_from_slice(&v[i].to_le_bytes());
    }
    Ok(buf)
}

pub fn parse_flo(bytes: &[u8]) -> Result<Tensor> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .ok_or_else(|| Error::format("flo", "truncated file"))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(Error::format("flo", "missing PIEH magic"));
    }
    let w = i32::from_le_bytes(word(1)?);
    let h = i32::from_le_bytes(word(2)?);
    if w <= 0 || h <= 0 || (w as i64) * (h as i64) > (1 << 28) {
        return Err(Error::format("flo", format!("implausible size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + 8 * w * h {
        return Err(Error::format("flo", format!("expected {} bytes, found {}", 12 + 8 * w * h, bytes.len())));
    }
    let mut t = Tensor::zeros([1, 2, h, w]);
    for i in 0..w * h {
        let u = f32::from_le_bytes(word(3 + 2 * i)?);
        let v = f32::from_le_bytes(word(4 + 2 * i)?);
        t.plane_mut(0, 0)[i] = u;
        t.plane_mut(0, 1)[i] = v;
    }
    Ok(t)
}

pub fn read_flo(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_flo(&bytes)
}

/// Exhaustive-search block matcher on frame luminance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockMatchParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Estimate on every `step`-th pixel and fill the block around it.
    pub step: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        BlockMatchParams {
            patch_radius: 3,
            search_radius: 8,
            step: 4,
        }
    }
}

fn luminance(frame: &Tensor) -> Vec<f32> {
    let c = frame.channels();
    let n = frame.height() * frame.width();
    (0..n)
        .map(|i| (0..c).map(|ch| frame.plane(0, ch)[i]).sum::<f32>() / c as f32)
        .collect()
}

/// Candidate displacements ordered by magnitude, then `(dy, dx)`; the first
/// strict minimum of the matching cost wins, which fixes tie-breaking.
fn candidates(radius: isize) -> Vec<(isize, isize)> {
    let mut c: Vec<(isize, isize)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dy, dx)))
        .collect();
    c.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));
    c
}

/// Full-resolution flow from `reference` to `support` by block matching.
pub fn block_match(reference: &Tensor, support: &Tensor, params: &BlockMatchParams) -> Result<Tensor> {
    if reference.shape() != support.shape() {
        return Err(Error::dims("block_match frames", &reference.shape(), &support.shape()));
    }
    let (h, w) = reference.spatial();
    let step = params.step.max(1);
    let (a, b) = (luminance(reference), luminance(support));
    let pr = params.patch_radius as isize;
    let cands = candidates(params.search_radius as isize);
    let at = |img: &[f32], y: isize, x: isize| -> f32 {
        if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
            img[y as usize * w + x as usize]
        } else {
            0.0
        }
    };
    let grid_h = h.div_ceil(step);
    let grid_w = w.div_ceil(step);
    let rows = par::map_range(grid_h, |gy| {
        let y = (gy * step + step / 2).min(h - 1) as isize;
        (0..grid_w)
            .map(|gx| {
                let x = (gx * step + step / 2).min(w - 1) as isize;
                let mut best = (f32::INFINITY, 0isize, 0isize);
                for &(dy, dx) in &cands {
                    let mut sad = 0.0f32;
                    for py in -pr..=pr {
                        for px in -pr..=pr {
                            sad += (at(&a, y + py, x + px) - at(&b, y + py + dy, x + px + dx)).abs();
                        }
                    }
                    if sad < best.0 {
                        best = (sad, dy, dx);
                    }
                }
                (best.2 as f32, best.1 as f32)
            })
            .collect::<Vec<_>>()
    });
    let mut flow = Tensor::zeros([1, 2, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = rows[y / step][x / step];
            flow.set(0, 0, y, x, dx);
            flow.set(0, 1, y, x, dy);
        }
    }
    Ok(flow)
}

/// Where per-pair flow comes from.
#[derive(Clone, Debug)]
pub enum FlowProvider {
    /// Ground-truth flow of a synthetic scene.
    ExactSynthetic(Arc<SceneTruth>),
    /// `.flo` files named `RRRRR_SSSSS_P<level>.flo` (per level) or
    /// `RRRRR_SSSSS.flo` (full resolution, downscaled on load).
    FloFiles(PathBuf),
    BlockMatcher(BlockMatchParams),
}

pub fn flo_pair_name(reference: usize, support: usize) -> String {
    format!("{reference:05}_{support:05}")
}

impl FlowProvider {
    pub fn provide(&self, frames: &[Tensor], reference: usize, support: usize) -> Result<FlowField> {
        let get = |i: usize| {
            frames
                .get(i)
                .ok_or_else(|| Error::Validation(format!("frame {i} out of range ({} frames)", frames.len())))
        };
        let (r, s) = (get(reference)?, get(support)?);
        if r.shape() != s.shape() {
            return Err(Error::dims("flow frame pair", &r.shape(), &s.shape()));
        }
        let (h, w) = r.spatial();
        if reference == support {
            return Ok(FlowField::zeros(h, w, reference, support));
        }
        let field = match self {
            FlowProvider::ExactSynthetic(truth) => {
                if (truth.height, truth.width) != (h, w) {
                    return Err(Error::dims("truth vs frames", &[truth.height, truth.width], &[h, w]));
                }
                let tau = support as i64 - reference as i64;
                truth_flow(truth, reference, tau as i32)?
            }
            FlowProvider::FloFiles(dir) => load_flo_pair(dir, reference, support, h, w)?,
            FlowProvider::BlockMatcher(p) => {
                FlowField::from_full_resolution(&block_match(r, s, p)?, reference, support)?
            }
        };
        Ok(field)
    }
}

fn load_flo_pair(dir: &Path, reference: usize, support: usize, h: usize, w: usize) -> Result<FlowField> {
    let stem = flo_pair_name(reference, support);
    let per_level: Vec<PathBuf> = LEVELS.iter().map(|l| dir.join(format!("{stem}_P{l}.flo"))).collect();
    let field = if per_level.iter().all(|p| p.exists()) {
        let mut levels = Vec::with_capacity(4);
        for p in &per_level {
            levels.push(read_flo(p)?);
        }
        FlowField {
            levels: levels.try_into().expect("four levels"),
            reference,
            support,
        }
    } else {
        let full = dir.join(format!("{stem}.flo"));
        if !full.exists() {
            return Err(Error::io(
                format!("no flow for pair {reference}->{support} in {}", dir.display()),
                std::io::Error::from(std::io::ErrorKind::NotFound),
            ));
        }
        let t = read_flo(&full)?;
        if t.spatial() != (h, w) {
            return Err(Error::dims("flo vs frame", &[t.height(), t.width()], &[h, w]));
        }
        FlowField::from_full_resolution(&t, reference, support)?
    };
    for (i, l) in LEVELS.iter().enumerate() {
        let s = level_stride(*l);
        let expect = (h.div_ceil(s), w.div_ceil(s));
        if field.levels[i].spatial() != expect || field.levels[i].channels() != 2 {
            return Err(Error::dims("flo level", &field.levels[i].shape(), &[1, 2, expect.0, expect.1]));
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flo_header_bytes() {
        let t = Tensor::from_fn([1, 2, 2, 3], |_, c, y, x| (c * 10 + y * 3 + x) as f32);
        let bytes = flo_bytes(&t).unwrap();
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(&bytes[4..8], &3i32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2i32.to_le_bytes());
        // interleaved (u, v) of the first pixel
        assert_eq!(&bytes[12..16], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &10.0f32.to_le_bytes());
        assert_eq!(parse_flo(&bytes).unwrap(), t);
        assert!(parse_flo(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn downscale_divides_displacement() {
        let full = Tensor::from_fn([1, 2, 16, 16], |_, c, _, _| if c == 0 { 8.0 } else { -16.0 });
        let l3 = downscale_flow(&full, 3).unwrap();
        assert_eq!(l3.shape(), [1, 2, 2, 2]);
        assert!(l3.plane(0, 0).iter().all(|&v| v == 1.0));
        assert!(l3.plane(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn candidate_order_prefers_small_then_lexicographic() {
        let c = candidates(1);
        assert_eq!(c[0], (0, 0));
        assert_eq!(&c[1..5], &[(-1, 0), (0, -1), (0, 1), (1, 0)]);
    }

    #[test]
    fn missing_flo_names_pair() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![Tensor::zeros([1, 3, 64, 64]); 3];
        let err = FlowProvider::FloFiles(dir.path().to_path_buf()).provide(&frames, 0, 2).unwrap_err();
        assert!(err.to_string().contains("0->2"), "{err}");
        // identical frames never touch the disk
        assert!(FlowProvider::FloFiles(dir.path().to_path_buf()).provide(&frames, 1, 1).is_ok());
    }
}
