use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned box in input-image pixels, `x2 > x1` and `y2 > y1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Validation(format!("degenerate box {b:?}")))
        }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BBox {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x2 > self.x1
            && self.y2 > self.y1
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }
    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }
    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
    pub fn area(&self) -> f64 {
        let w = (self.x2 as f64 - self.x1 as f64).max(0.0);
        let h = (self.y2 as f64 - self.y1 as f64).max(0.0);
        w * h
    }

    pub fn translate(&self, dx: f32, dy: f32) -> Self {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Intersection with `[0, width] x [0, height]`; `None` when nothing is left.
    pub fn clip(&self, width: f32, height: f32) -> Option<Self> {
        let b = BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        };
        b.is_valid().then_some(b)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) as f64 - self.x1.max(other.x1) as f64).max(0.0);
        let h = (self.y2.min(other.y2) as f64 - self.y1.max(other.y1) as f64).max(0.0);
        w * h
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}
