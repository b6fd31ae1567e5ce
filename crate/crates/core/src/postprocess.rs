//! Score decoding, greedy per-class NMS, two-stream late fusion and Seq-NMS
//! tubelet rescoring.

use crate::boxes::BBox;
use crate::error::Result;
use crate::heads::{decode_box, Anchor, HeadOutputs};
use crate::losses::sigmoid;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Motion,
    Sampling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub class: usize,
    pub score: f32,
    #[serde(flatten)]
    pub bbox: BBox,
    pub stream: Stream,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub score_threshold: f32,
    pub top_k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_threshold: 0.05,
            top_k: 1000,
        }
    }
}

/// Scored, decoded and clipped candidates, the best `top_k` per level.
pub fn decode_detections(
    outputs: &HeadOutputs,
    anchors: &[Anchor],
    frame: usize,
    stream: Stream,
    cfg: &DecodeConfig,
    image: (usize, usize),
) -> Vec<Detection> {
    let k = outputs.classes;
    let mut out = Vec::new();
    let mut start = 0;
    while start < anchors.len() {
        let level = anchors[start].level;
        let end = start + anchors[start..].iter().take_while(|a| a.level == level).count();
        let mut cands: Vec<(f32, usize, usize)> = Vec::new();
        for (j, a) in anchors[start..end].iter().enumerate() {
            for c in 0..k {
                let score = sigmoid(outputs.logit(a, c) as f64) as f32;
                if score >= cfg.score_threshold {
                    cands.push((score, start + j, c));
                }
            }
        }
        // stable: equal scores keep (anchor, class) order
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        cands.truncate(cfg.top_k);
        for (score, j, class) in cands {
            let b = decode_box(&anchors[j].bbox, outputs.deltas(&anchors[j]));
            if let Some(bbox) = b.clip(image.1 as f32, image.0 as f32) {
                out.push(Detection {
                    frame,
                    class,
                    score,
                    bbox,
                    stream,
                });
            }
        }
        start = end;
    }
    out
}

/// Indices kept by greedy per-class NMS, best first. Ties in score go to the
/// lower input index.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &dets[i];
        if kept
            .iter()
            .all(|&k| dets[k].class != d.class || dets[k].bbox.iou(&d.bbox) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold).into_iter().map(|i| dets[i]).collect()
}

/// Pools both streams' candidates for one frame and suppresses jointly.
pub fn late_fuse(motion: &[Detection], sampling: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut all = Vec::with_capacity(motion.len() + sampling.len());
    all.extend_from_slice(motion);
    all.extend_from_slice(sampling);
    nms(&all, iou_threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rescore {
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqNmsConfig {
    pub link_iou: f64,
    pub suppress_iou: f64,
    pub rescore: Rescore,
}

impl Default for SeqNmsConfig {
    fn default() -> Self {
        SeqNmsConfig {
            link_iou: 0.5,
            suppress_iou: 0.45,
            rescore: Rescore::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tubelet {
    pub class: usize,
    pub score: f32,
    /// Members with their original scores, one per consecutive frame.
    pub members: Vec<Detection>,
}

/// Residual linking graph of one class. Nodes are `(frame, index)` into the
/// per-frame candidate lists; extracted and suppressed nodes leave the graph.
#[derive(Clone, Debug)]
pub struct LinkGraph {
    pub frames: Vec<Vec<Detection>>,
    pub alive: Vec<Vec<bool>>,
    pub link_iou: f64,
}

impl LinkGraph {
    pub fn new(frames: Vec<Vec<Detection>>, link_iou: f64) -> Self {
        let alive = frames.iter().map(|f| vec![true; f.len()]).collect();
        LinkGraph {
            frames,
            alive,
            link_iou,
        }
    }

    pub fn linked(&self, t: usize, i: usize, j: usize) -> bool {
        self.alive[t][i] && self.alive[t + 1][j] && self.frames[t][i].bbox.iou(&self.frames[t + 1][j].bbox) >= self.link_iou
    }

    pub fn has_links(&self) -> bool {
        (0..self.frames.len().saturating_sub(1)).any(|t| {
            (0..self.frames[t].len()).any(|i| (0..self.frames[t + 1].len()).any(|j| self.linked(t, i, j)))
        })
    }

    /// Highest-total path over live nodes, as `(frame, index)` pairs, by
    /// dynamic programming. Ties resolve to the earliest end frame and lowest
    /// indices.
    pub fn best_path(&self) -> Option<(f64, Vec<(usize, usize)>)> {
        let n = self.frames.len();
        let mut best: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut back: Vec<Vec<Option<usize>>> = Vec::with_capacity(n);
        for t in 0..n {
            let mut b = vec![f64::NEG_INFINITY; self.frames[t].len()];
            let mut p = vec![None; self.frames[t].len()];
            for (i, d) in self.frames[t].iter().enumerate() {
                if !self.alive[t][i] {
                    continue;
                }
                let mut prev: Option<(f64, usize)> = None;
                if t > 0 {
                    for (j, &v) in best[t - 1].iter().enumerate() {
                        if self.linked(t - 1, j, i) && prev.is_none_or(|(pv, _)| v > pv) {
                            prev = Some((v, j));
                        }
                    }
                }
                let gain = prev.map_or(0.0, |(v, _)| v.max(0.0));
                b[i] = d.score as f64 + gain;
                p[i] = prev.filter(|(v, _)| *v > 0.0).map(|(_, j)| j);
            }
            best.push(b);
            back.push(p);
        }
        let mut end: Option<(f64, usize, usize)> = None;
        for (t, row) in best.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if v > f64::NEG_INFINITY && end.is_none_or(|(bv, _, _)| v > bv) {
                    end = Some((v, t, i));
                }
            }
        }
        let (total, mut t, mut i) = end?;
        let mut path = vec![(t, i)];
        while let Some(j) = back[t][i] {
            t -= 1;
            i = j;
            path.push((t, i));
        }
        path.reverse();
        Some((total, path))
    }

    /// Removes the path and, in each of its frames, every live node that
    /// overlaps the path member by more than `suppress_iou`. Returns the
    /// suppressed nodes.
    pub fn remove_path(&mut self, path: &[(usize, usize)], suppress_iou: f64) -> Vec<(usize, usize)> {
        let mut suppressed = Vec::new();
        for &(t, i) in path {
            self.alive[t][i] = false;
            let anchor = self.frames[t][i].bbox;
            for j in 0..self.frames[t].len() {
                if self.alive[t][j] && self.frames[t][j].bbox.iou(&anchor) > suppress_iou {
                    self.alive[t][j] = false;
                    suppressed.push((t, j));
                }
            }
        }
        suppressed
    }
}

/// Links detections into tubelets per class and rescores them. Returns the
/// tubelets and the rescored per-frame detections (suppressed ones dropped).
pub fn seq_nms(per_frame: &[Vec<Detection>], cfg: &SeqNmsConfig) -> Result<(Vec<Tubelet>, Vec<Vec<Detection>>)> {
    let n = per_frame.len();
    let mut scores: Vec<Vec<Option<f32>>> = per_frame.iter().map(|f| f.iter().map(|d| Some(d.score)).collect()).collect();
    let mut classes: Vec<usize> = per_frame.iter().flatten().map(|d| d.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut tubelets = Vec::new();
    for class in classes {
        // per-class view: (local list, original indices)
        let index: Vec<Vec<usize>> = per_frame
            .iter()
            .map(|f| (0..f.len()).filter(|&i| f[i].class == class).collect())
            .collect();
        let frames: Vec<Vec<Detection>> = (0..n).map(|t| index[t].iter().map(|&i| per_frame[t][i]).collect()).collect();
        let mut g = LinkGraph::new(frames, cfg.link_iou);
        while g.has_links() {
            let Some((total, path)) = g.best_path() else { break };
            let members: Vec<Detection> = path.iter().map(|&(t, i)| g.frames[t][i]).collect();
            let value = match cfg.rescore {
                Rescore::Mean => (total / path.len() as f64) as f32,
                Rescore::Max => members.iter().map(|d| d.score).fold(0.0, f32::max),
            };
            for &(t, i) in &path {
                scores[t][index[t][i]] = Some(value);
            }
            for (t, j) in g.remove_path(&path, cfg.suppress_iou) {
                scores[t][index[t][j]] = None;
            }
            tubelets.push(Tubelet {
                class,
                score: value,
                members,
            });
        }
    }
    let rescored = per_frame
        .iter()
        .zip(&scores)
        .map(|(f, s)| {
            f.iter()
                .zip(s)
                .filter_map(|(d, s)| s.map(|score| Detection { score, ..*d }))
                .collect()
        })
        .collect();
    Ok((tubelets, rescored))
}

pub fn detections_jsonl(frames: &[Vec<Detection>]) -> Result<String> {
    let mut s = String::new();
    for d in frames.iter().flatten() {
        s.push_str(&serde_json::to_string(d)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_detections_jsonl(text: &str) -> Result<Vec<Detection>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

pub fn tubelets_jsonl(tubelets: &[Tubelet]) -> Result<String> {
    let mut s = String::new();
    for t in tubelets {
        s.push_str(&serde_json::to_string(t)?);
        s.push('\n');
    }
    Ok(s)
}
