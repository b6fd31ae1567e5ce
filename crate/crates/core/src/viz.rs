//! Annotated frames: detection boxes with `class:score` labels, dashed
//! ground truth, and a legend strip under the image.

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::image_io::write_ppm;
use crate::postprocess::Detection;
use crate::synth::TruthBox;
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

/// Height of the legend strip appended below each frame.
pub const LEGEND_HEIGHT: usize = 9;

const PALETTE: [[f32; 3]; 6] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.3, 0.5, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.3, 1.0],
    [0.2, 1.0, 1.0],
];
const TRUTH_COLOUR: [f32; 3] = [1.0, 1.0, 1.0];
const DASH: (usize, usize) = (4, 3);

pub fn class_colour(class: usize) -> [f32; 3] {
    PALETTE[class % PALETTE.len()]
}

/// 3x5 glyphs, one row per `u8`, low three bits left to right.
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        'g' => [0b111, 0b101, 0b111, 0b001, 0b111],
        't' => [0b010, 0b111, 0b010, 0b010, 0b011],
        _ => return None,
    })
}

struct Canvas {
    img: Tensor,
    h: usize,
    w: usize,
}

impl Canvas {
    fn put(&mut self, x: isize, y: isize, c: [f32; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            for (ch, v) in c.iter().enumerate() {
                self.img.set(0, ch, y as usize, x as usize, *v);
            }
        }
    }

    fn fill(&mut self, x: isize, y: isize, w: usize, h: usize, c: [f32; 3]) {
        for dy in 0..h as isize {
            for dx in 0..w as isize {
                self.put(x + dx, y + dy, c);
            }
        }
    }

    /// Outline of `b`, solid or dashed along its perimeter.
    fn rect(&mut self, b: &BBox, c: [f32; 3], dashed: bool) {
        let (x1, y1) = (b.x1.round() as isize, b.y1.round() as isize);
        let (x2, y2) = ((b.x2.round() as isize - 1).max(x1), (b.y2.round() as isize - 1).max(y1));
        let mut perimeter = Vec::new();
        perimeter.extend((x1..=x2).map(|x| (x, y1)));
        perimeter.extend((y1 + 1..=y2).map(|y| (x2, y)));
        perimeter.extend((x1..x2).rev().map(|x| (x, y2)));
        perimeter.extend((y1 + 1..y2).rev().map(|y| (x1, y)));
        for (i, (x, y)) in perimeter.into_iter().enumerate() {
            if !dashed || i % (DASH.0 + DASH.1) < DASH.0 {
                self.put(x, y, c);
            }
        }
    }

    fn text(&mut self, x: isize, y: isize, s: &str, c: [f32; 3]) {
        let width = 4 * s.chars().count() + 1;
        self.fill(x - 1, y - 1, width, 7, [0.0; 3]);
        for (i, ch) in s.chars().enumerate() {
            let Some(rows) = glyph(ch) else { continue };
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..3 {
                    if row & (0b100 >> dx) != 0 {
                        self.put(x + 4 * i as isize + dx, y + dy as isize, c);
                    }
                }
            }
        }
    }
}

fn label(d: &Detection) -> String {
    format!("{}:{:.2}", d.class, d.score)
}

/// One frame with annotations and the legend; the image area is untouched
/// when there is nothing to draw.
pub fn annotate(frame: &Tensor, dets: &[Detection], truth: &[TruthBox], classes: usize) -> Result<Tensor> {
    let [n, c, h, w] = frame.shape();
    if n != 1 || c != 3 {
        return Err(Error::dims("viz frame", &frame.shape(), &[1, 3, h, w]));
    }
    let mut img = Tensor::zeros([1, 3, h + LEGEND_HEIGHT, w]);
    for ch in 0..3 {
        img.plane_mut(0, ch)[..h * w].copy_from_slice(frame.plane(0, ch));
    }
    let mut cv = Canvas {
        img,
        h: h + LEGEND_HEIGHT,
        w,
    };
    for g in truth {
        cv.rect(&g.bbox, TRUTH_COLOUR, true);
    }
    for d in dets {
        cv.rect(&d.bbox, class_colour(d.class), false);
    }
    // labels last so boxes never cross them
    for d in dets {
        let (x, y) = (d.bbox.x1.round() as isize + 1, d.bbox.y1.round() as isize - 7);
        cv.text(x, y.max(1), &label(d), class_colour(d.class));
    }
    let top = h as isize + 2;
    let mut x = 2isize;
    for class in 0..classes {
        cv.fill(x, top, 5, 5, class_colour(class));
        cv.text(x + 7, top, &class.to_string(), TRUTH_COLOUR);
        x += 7 + 4 * class.to_string().len() as isize + 5;
    }
    for i in 0..11 {
        if i % (DASH.0 + DASH.1) < DASH.0 {
            cv.put(x + i as isize, top + 2, TRUTH_COLOUR);
        }
    }
    cv.text(x + 14, top, "gt", TRUTH_COLOUR);
    Ok(cv.img)
}

/// Writes `NNNNN.ppm` per frame into `out`; returns the paths in frame order.
pub fn visualize(
    frames: &[Tensor],
    dets: &[Detection],
    truth: &[TruthBox],
    classes: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let d: Vec<Detection> = dets.iter().filter(|d| d.frame == t).copied().collect();
            let g: Vec<TruthBox> = truth.iter().filter(|b| b.frame == t).cloned().collect();
            let p = out.join(format!("{t:05}.ppm"));
            write_ppm(&p, &annotate(f, &d, &g, classes)?)?;
            Ok(p)
        })
        .collect()
}
