use rand::Rng;

use super::image::{rotate90, Image, ANGLES};
use crate::error::{Error, Result};
use crate::rng;

/// Minimum fraction of pixels that must differ between a template and each of
/// its nontrivial rotations, and between any two templates.
pub const MIN_DISTANCE_FRACTION: f64 = 0.15;

const MAX_ATTEMPTS: usize = 20_000;

/// Binary glyph mask for one class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphTemplate {
    pub class_id: usize,
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl GlyphTemplate {
    pub fn new(class_id: usize, height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::ShapeMismatch {
                shape: vec![height, width],
                expected: height * width,
                actual: mask.len(),
            });
        }
        Ok(GlyphTemplate {
            class_id,
            height,
            width,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_set(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.width + c]
    }

    pub fn foreground(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn rotated(&self, k: usize) -> Result<GlyphTemplate> {
        let img = Image::new(
            self.height,
            self.width,
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?;
        let r = rotate90(&img, k)?;
        Ok(GlyphTemplate {
            class_id: self.class_id,
            height: self.height,
            width: self.width,
            mask: r.pixels().iter().map(|&v| v > 0.5).collect(),
        })
    }

    pub fn min_distance_threshold(&self) -> f64 {
        MIN_DISTANCE_FRACTION * (self.height * self.width) as f64
    }
}

pub fn hamming(a: &GlyphTemplate, b: &GlyphTemplate) -> usize {
    a.mask.iter().zip(&b.mask).filter(|(x, y)| x != y).count()
}

/// Smallest Hamming distance between `t` and its three nontrivial rotations.
pub fn rotation_asymmetry(t: &GlyphTemplate) -> Result<usize> {
    (1..ANGLES)
        .map(|k| t.rotated(k).map(|r| hamming(t, &r)))
        .try_fold(usize::MAX, |m, d| d.map(|d| m.min(d)))
}

/// Hamming distance between `a` and the closest rotation of `b`.
pub fn rotation_distance(a: &GlyphTemplate, b: &GlyphTemplate) -> Result<usize> {
    (0..ANGLES)
        .map(|k| b.rotated(k).map(|r| hamming(a, &r)))
        .try_fold(usize::MAX, |m, d| d.map(|d| m.min(d)))
}

struct Canvas {
    h: usize,
    w: usize,
    mask: Vec<bool>,
}

impl Canvas {
    fn fill(&mut self, r0: usize, r1: usize, c0: usize, c1: usize) {
        for r in r0..r1.min(self.h) {
            for c in c0..c1.min(self.w) {
                self.mask[r * self.w + c] = true;
            }
        }
    }
}

/// One candidate figure: a thick spine with arms and an optional hook, in the
/// spirit of F, L, P and J shapes, then a random flip.
fn draw_candidate<R: Rng>(rng: &mut R, h: usize, w: usize) -> Vec<bool> {
    let margin_r = (h / 5).max(1);
    let margin_c = (w / 5).max(1);
    let (top, bottom) = (margin_r, h - margin_r);
    let (left, right) = (margin_c, w - margin_c);
    let thick = (h.min(w) / 8).max(1);
    let box_h = bottom - top;
    let box_w = right - left;
    let mut cv = Canvas {
        h,
        w,
        mask: vec![false; h * w],
    };

    let spine_len = rng.gen_range((box_h * 3 / 5).max(thick)..=box_h);
    let spine_top = top + rng.gen_range(0..=box_h - spine_len);
    let spine_col = left + rng.gen_range(0..=box_w.saturating_sub(thick));
    cv.fill(spine_top, spine_top + spine_len, spine_col, spine_col + thick);

    let arms = rng.gen_range(1..=3);
    for _ in 0..arms {
        let row = spine_top + rng.gen_range(0..=spine_len.saturating_sub(thick));
        let len = rng.gen_range((box_w / 3).max(thick)..=box_w);
        let (c0, c1) = if rng.gen_bool(0.5) {
            (spine_col, (spine_col + len).min(right))
        } else {
            (spine_col.saturating_sub(len).max(left), spine_col + thick)
        };
        cv.fill(row, row + thick, c0, c1);
        if rng.gen_bool(0.35) {
            // hook dropping from the free end of the arm
            let end = if c1 > spine_col + thick { c1 - thick } else { c0 };
            let drop = rng.gen_range(thick..=(box_h / 2).max(thick));
            let (r0, r1) = if rng.gen_bool(0.5) {
                (row, (row + drop).min(bottom))
            } else {
                (row.saturating_sub(drop).max(top), row + thick)
            };
            cv.fill(r0, r1, end, end + thick);
        }
    }

    let mut mask = cv.mask;
    if rng.gen_bool(0.5) {
        // mirror left-right
        for row in mask.chunks_mut(w) {
            row.reverse();
        }
    }
    mask
}

/// Draws `classes` glyph templates that are far from their own rotations and
/// from each other under every relative rotation. Deterministic in `seed`.
pub fn make_templates(classes: usize, height: usize, width: usize, seed: u64) -> Result<Vec<GlyphTemplate>> {
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    if height < 8 || width < 8 {
        return Err(Error::invalid(format!(
            "templates need at least 8x8 pixels, got {height}x{width}"
        )));
    }
    if height != width {
        return Err(Error::invalid("templates must be square to be rotated"));
    }
    let mut rng = rng::stream(seed, rng::TEMPLATES);
    let threshold = MIN_DISTANCE_FRACTION * (height * width) as f64;
    let mut out: Vec<GlyphTemplate> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while out.len() < classes {
        if attempts >= MAX_ATTEMPTS {
            return Err(Error::TemplateGeneration {
                attempts,
                reason: format!(
                    "found {} of {classes} templates at {height}x{width} with distance >= {threshold}",
                    out.len()
                ),
            });
        }
        attempts += 1;
        let t = GlyphTemplate::new(out.len(), height, width, draw_candidate(&mut rng, height, width))?;
        if (rotation_asymmetry(&t)? as f64) < threshold {
            continue;
        }
        let mut distinct = true;
        for other in &out {
            if (rotation_distance(&t, other)? as f64) < threshold {
                distinct = false;
                break;
            }
        }
        if distinct {
            out.push(t);
        }
    }
    Ok(out)
}
