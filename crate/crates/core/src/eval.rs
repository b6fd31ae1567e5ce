//! VID-style evaluation: greedy IoU matching, all-point AP, mAP, and
//! slow/medium/fast stratification by a track's own nearby-frame IoU.

use crate::boxes::BBox;
use crate::postprocess::Detection;
use crate::synth::TruthBox;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const DEFAULT_SPEED_WINDOW: usize = 10;
pub const SLOW_ABOVE: f64 = 0.9;
pub const MEDIUM_FROM: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Slow,
    Medium,
    Fast,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Slow, Stratum::Medium, Stratum::Fast];

    /// `> 0.9` slow, `[0.7, 0.9]` medium, `< 0.7` fast.
    pub fn from_mean_iou(mean: f64) -> Self {
        if mean > SLOW_ABOVE {
            Stratum::Slow
        } else if mean >= MEDIUM_FROM {
            Stratum::Medium
        } else {
            Stratum::Fast
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTrack {
    pub track_id: usize,
    pub class_id: usize,
    pub boxes: BTreeMap<usize, BBox>,
}

/// Mean IoU between the track's box at `frame` and its boxes in the other
/// frames within `window`; `None` if it has no neighbours there.
pub fn mean_nearby_iou(track: &GroundTruthTrack, frame: usize, window: usize) -> Option<f64> {
    let b = track.boxes.get(&frame)?;
    let lo = frame.saturating_sub(window);
    let ious: Vec<f64> = track
        .boxes
        .range(lo..=frame + window)
        .filter(|(&f, _)| f != frame)
        .map(|(_, other)| b.iou(other))
        .collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Stratum per `(track_id, frame)`; lone instances default to slow.
pub fn speed_stratify(tracks: &[GroundTruthTrack], window: usize) -> HashMap<(usize, usize), Stratum> {
    let mut out = HashMap::new();
    for t in tracks {
        for &f in t.boxes.keys() {
            let s = mean_nearby_iou(t, f, window).map_or(Stratum::Slow, Stratum::from_mean_iou);
            out.insert((t.track_id, f), s);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    AllPoint,
    ElevenPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_match: f64,
    pub speed_window: usize,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_match: 0.5,
            speed_window: DEFAULT_SPEED_WINDOW,
            interpolation: Interpolation::AllPoint,
        }
    }
}

/// AP from true-positive flags in rank order.
pub fn ap_from_flags(tp: &[bool], gt_count: usize, interpolation: Interpolation) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    for (rank, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (rank + 1) as f64);
        recall.push(hits as f64 / gt_count as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match interpolation {
        // each true positive raises recall by exactly 1 / gt_count
        Interpolation::AllPoint => exact_all_point(tp, gt_count).unwrap_or_else(|| {
            let sum: f64 = tp.iter().zip(&precision).filter(|(&t, _)| t).map(|(_, &p)| p).sum();
            sum / gt_count as f64
        }),
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|i| {
                    let r = i as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(&rc, _)| rc >= r)
                        .map(|(_, &p)| p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// All-point AP in rational arithmetic so that fixtures come out correctly
/// rounded; `None` if the denominators outgrow `u128`.
fn exact_all_point(tp: &[bool], gt_count: usize) -> Option<f64> {
    // envelope precision as hits / rank, scanned from the tail
    let mut env: Vec<(u128, u128)> = Vec::with_capacity(tp.len());
    let mut hits = 0u128;
    for (rank, &t) in tp.iter().enumerate() {
        hits += t as u128;
        env.push((hits, rank as u128 + 1));
    }
    for i in (0..env.len().saturating_sub(1)).rev() {
        let (a, b) = (env[i], env[i + 1]);
        if b.0.checked_mul(a.1)? > a.0.checked_mul(b.1)? {
            env[i] = b;
        }
    }
    let (mut num, mut den) = (0u128, 1u128);
    for (&(p, q), _) in env.iter().zip(tp).filter(|(_, &t)| t) {
        let g = gcd(den, q);
        let l = den.checked_mul(q / g)?;
        num = num.checked_mul(l / den)?.checked_add(p.checked_mul(l / q)?)?;
        den = l;
        let r = gcd(num, den).max(1);
        (num, den) = (num / r, den / r);
    }
    let den = den.checked_mul(gt_count as u128)?;
    let r = gcd(num, den).max(1);
    let (num, den) = (num / r, den / r);
    if num > 1 << 53 || den > 1 << 53 {
        return None;
    }
    Some(num as f64 / den as f64)
}

/// One video's detections and ground truth; frames are local to the video.
#[derive(Clone, Debug, Default)]
pub struct EvalVideo {
    pub detections: Vec<Detection>,
    pub truth: Vec<TruthBox>,
}

/// Greedy matching of one class. Returns, in rank order, the matched ground
/// truth (index into `gts`) or `None` for a false positive.
fn match_class(dets: &[(usize, &Detection)], gts: &[(usize, &TruthBox)], iou_match: f64) -> Vec<Option<usize>> {
    let mut by_frame: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, (video, g)) in gts.iter().enumerate() {
        by_frame.entry((*video, g.frame)).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    dets.iter()
        .map(|(video, d)| {
            let mut best: Option<(f64, usize)> = None;
            for &gi in by_frame.get(&(*video, d.frame)).map(Vec::as_slice).unwrap_or(&[]) {
                if used[gi] {
                    continue;
                }
                let iou = d.bbox.iou(&gts[gi].1.bbox);
                if iou >= iou_match && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, gi));
                }
            }
            best.map(|(_, gi)| {
                used[gi] = true;
                gi
            })
        })
        .collect()
}

/// Sorts by score descending; stable, so ties keep input order.
fn rank(dets: &mut [(usize, &Detection)]) {
    dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
}

/// AP for one class of a single video.
pub fn average_precision(dets: &[Detection], gts: &[TruthBox], iou_match: f64) -> f64 {
    let mut d: Vec<(usize, &Detection)> = dets.iter().map(|x| (0, x)).collect();
    rank(&mut d);
    let g: Vec<(usize, &TruthBox)> = gts.iter().map(|x| (0, x)).collect();
    let flags: Vec<bool> = match_class(&d, &g, iou_match).iter().map(Option::is_some).collect();
    ap_from_flags(&flags, gts.len(), Interpolation::AllPoint)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    pub ap: f64,
    pub gt_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    /// `None` when no ground truth falls into the stratum.
    pub map_slow: Option<f64>,
    pub map_medium: Option<f64>,
    pub map_fast: Option<f64>,
    pub gt_total: usize,
    pub gt_slow: usize,
    pub gt_medium: usize,
    pub gt_fast: usize,
}

impl EvalReport {
    pub fn stratum_map(&self, s: Stratum) -> Option<f64> {
        match s {
            Stratum::Slow => self.map_slow,
            Stratum::Medium => self.map_medium,
            Stratum::Fast => self.map_fast,
        }
    }

    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,ap,gt_count\n");
        for c in &self.per_class {
            s.push_str(&format!("{},{:.6},{}\n", c.class, c.ap, c.gt_count));
        }
        s
    }
}

pub fn evaluate(dets: &[Detection], truth: &[TruthBox], config: &EvalConfig) -> EvalReport {
    evaluate_videos(
        &[EvalVideo {
            detections: dets.to_vec(),
            truth: truth.to_vec(),
        }],
        config,
    )
}

/// Pools several videos into one report. Strata come from the `stratum`
/// field of each ground-truth box.
pub fn evaluate_videos(videos: &[EvalVideo], config: &EvalConfig) -> EvalReport {
    let mut classes: Vec<usize> = videos
        .iter()
        .flat_map(|v| v.truth.iter().map(|g| g.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = Vec::new();
    let mut strat_aps: BTreeMap<Stratum, Vec<f64>> = BTreeMap::new();
    for &c in &classes {
        let mut dets: Vec<(usize, &Detection)> = videos
            .iter()
            .enumerate()
            .flat_map(|(v, x)| x.detections.iter().filter(|d| d.class == c).map(move |d| (v, d)))
            .collect();
        rank(&mut dets);
        let gts: Vec<(usize, &TruthBox)> = videos
            .iter()
            .enumerate()
            .flat_map(|(v, x)| x.truth.iter().filter(|g| g.class_id == c).map(move |g| (v, g)))
            .collect();
        let matched = match_class(&dets, &gts, config.iou_match);
        let flags: Vec<bool> = matched.iter().map(Option::is_some).collect();
        per_class.push(ClassAp {
            class: c,
            ap: ap_from_flags(&flags, gts.len(), config.interpolation),
            gt_count: gts.len(),
        });
        for s in Stratum::ALL {
            let n = gts.iter().filter(|(_, g)| g.stratum == s).count();
            if n == 0 {
                continue;
            }
            // hits on other strata are ignored; false positives count everywhere
            let flags: Vec<bool> = matched
                .iter()
                .filter_map(|m| match m {
                    Some(gi) if gts[*gi].1.stratum != s => None,
                    m => Some(m.is_some()),
                })
                .collect();
            strat_aps.entry(s).or_default().push(ap_from_flags(&flags, n, config.interpolation));
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let count = |s: Stratum| videos.iter().flat_map(|v| &v.truth).filter(|g| g.stratum == s).count();
    let aps: Vec<f64> = per_class.iter().map(|c| c.ap).collect();
    EvalReport {
        map: mean(&aps).unwrap_or(0.0),
        map_slow: strat_aps.get(&Stratum::Slow).and_then(|v| mean(v)),
        map_medium: strat_aps.get(&Stratum::Medium).and_then(|v| mean(v)),
        map_fast: strat_aps.get(&Stratum::Fast).and_then(|v| mean(v)),
        gt_total: videos.iter().map(|v| v.truth.len()).sum(),
        gt_slow: count(Stratum::Slow),
        gt_medium: count(Stratum::Medium),
        gt_fast: count(Stratum::Fast),
        per_class,
    }
}
