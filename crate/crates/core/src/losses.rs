//! Focal classification loss and smooth-L1 localisation loss over both
//! streams, normalised by the foreground count, with analytic gradients.
//! All arithmetic is 64-bit.

use crate::error::{Error, Result};
use crate::heads::Assignment;
use serde::{Deserialize, Serialize};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.25, gamma: 2.0 }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn focal_loss(prob: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Derivative of [`focal_loss`] of `sigmoid(logit)` with respect to the logit.
/// Zero where the probability clamp is active.
pub fn focal_grad_logit(logit: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = sigmoid(logit);
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    if positive {
        alpha * (1.0 - p).powf(gamma) * (gamma * p * p.ln() - (1.0 - p))
    } else {
        (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * (1.0 - p).ln())
    }
}

pub fn smooth_l1(pred: &[f64; 4], target: &[f64; 4]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum()
}

pub fn smooth_l1_grad(pred: &[f64; 4], target: &[f64; 4]) -> [f64; 4] {
    [0, 1, 2, 3].map(|i| {
        let d = pred[i] - target[i];
        if d.abs() < 1.0 {
            d
        } else {
            d.signum()
        }
    })
}

/// One stream's raw outputs, flattened in anchor order: `logits[anchor * k +
/// class]` and `deltas[anchor * 4 + coord]`.
#[derive(Clone, Copy, Debug)]
pub struct StreamOutputs<'a> {
    pub logits: &'a [f64],
    pub deltas: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub focal_motion: f64,
    pub focal_sampling: f64,
    pub loc_motion: f64,
    pub loc_sampling: f64,
    pub total: f64,
    pub n_fg: usize,
}

/// Everything the objective needs besides the network outputs.
#[derive(Clone, Copy, Debug)]
pub struct LossTargets<'a> {
    pub assignments: &'a [Assignment],
    /// Encoded regression targets per anchor; read only for foreground.
    pub targets: &'a [[f64; 4]],
    pub classes: usize,
}

impl LossTargets<'_> {
    fn check(&self, s: &StreamOutputs) -> Result<()> {
        let n = self.assignments.len();
        if s.logits.len() != n * self.classes || s.deltas.len() != n * 4 || self.targets.len() != n {
            return Err(Error::dims(
                "loss inputs",
                &[s.logits.len(), s.deltas.len(), self.targets.len()],
                &[n * self.classes, n * 4, n],
            ));
        }
        Ok(())
    }

    pub fn n_fg(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| matches!(a, Assignment::Foreground { .. }))
            .count()
    }
}

fn deltas_of(d: &[f64], j: usize) -> [f64; 4] {
    [d[4 * j], d[4 * j + 1], d[4 * j + 2], d[4 * j + 3]]
}

/// Unnormalised `(focal, localisation)` sums of one stream, in anchor order.
fn stream_terms(s: &StreamOutputs, t: &LossTargets, cfg: &LossConfig) -> (f64, f64) {
    let (mut focal, mut loc) = (0.0, 0.0);
    for (j, a) in t.assignments.iter().enumerate() {
        let class = match a {
            Assignment::Ignore => continue,
            Assignment::Background => None,
            Assignment::Foreground { class, .. } => Some(*class),
        };
        for k in 0..t.classes {
            let p = sigmoid(s.logits[j * t.classes + k]);
            focal += focal_loss(p, class == Some(k), cfg.alpha, cfg.gamma);
        }
        if class.is_some() {
            loc += smooth_l1(&deltas_of(s.deltas, j), &t.targets[j]);
        }
    }
    (focal, loc)
}

/// The two-stream objective. A disabled stream contributes no terms.
pub fn total_loss(
    motion: Option<StreamOutputs>,
    sampling: Option<StreamOutputs>,
    targets: &LossTargets,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut terms = [(0.0, 0.0); 2];
    for (i, s) in [motion, sampling].iter().enumerate() {
        if let Some(s) = s {
            targets.check(s)?;
            terms[i] = stream_terms(s, targets, cfg);
        }
    }
    let n_fg = targets.n_fg();
    let [(fm, lm), (fs, ls)] = terms;
    Ok(LossBreakdown {
        focal_motion: fm,
        focal_sampling: fs,
        loc_motion: lm,
        loc_sampling: ls,
        total: (fm + fs + lm + ls) / n_fg.max(1) as f64,
        n_fg,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamGradients {
    pub logits: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// `d total / d output` for one stream; the other stream does not enter.
pub fn loss_gradients(s: StreamOutputs, targets: &LossTargets, cfg: &LossConfig) -> Result<StreamGradients> {
    targets.check(&s)?;
    let norm = 1.0 / targets.n_fg().max(1) as f64;
    let mut g = StreamGradients {
        logits: vec![0.0; s.logits.len()],
        deltas: vec![0.0; s.deltas.len()],
    };
    for (j, a) in targets.assignments.iter().enumerate() {
        let class = match a {
            Assignment::Ignore => continue,
            Assignment::Background => None,
            Assignment::Foreground { class, .. } => Some(*class),
        };
        for k in 0..targets.classes {
            let i = j * targets.classes + k;
            g.logits[i] = norm * focal_grad_logit(s.logits[i], class == Some(k), cfg.alpha, cfg.gamma);
        }
        if class.is_some() {
            let d = smooth_l1_grad(&deltas_of(s.deltas, j), &targets.targets[j]);
            for (c, v) in d.iter().enumerate() {
                g.deltas[4 * j + c] = norm * v;
            }
        }
    }
    Ok(g)
}
