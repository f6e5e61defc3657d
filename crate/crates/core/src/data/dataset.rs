use rand::seq::SliceRandom;
use rand::Rng;

use super::glyph::GlyphTemplate;
use super::image::Image;
use crate::error::{Error, Result};
use crate::rng;

/// A labeled image. Labels of the unlabeled split are kept for diagnostics
/// only and never reach a training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: Image,
    pub label: usize,
}

/// Renders `n_per_class` noisy, translated copies of every template.
///
/// Each copy is the template shifted by an integer offset in
/// `[-jitter, jitter]^2` (zero padded) with foreground intensity drawn from
/// `[0.7, 1.0]`; each pixel is then replaced by uniform noise with
/// probability `noise`. Examples are interleaved by class.
pub fn generate_dataset(
    templates: &[GlyphTemplate],
    n_per_class: usize,
    noise: f64,
    jitter: usize,
    seed: u64,
) -> Result<Vec<Example>> {
    if !(0.0..=0.2).contains(&noise) {
        return Err(Error::invalid(format!("noise rate {noise} outside [0, 0.2]")));
    }
    if jitter > 3 {
        return Err(Error::invalid(format!("jitter {jitter} exceeds 3")));
    }
    let Some(first) = templates.first() else {
        return Err(Error::invalid("no templates"));
    };
    let (h, w) = (first.height(), first.width());
    if templates.iter().any(|t| t.height() != h || t.width() != w) {
        return Err(Error::invalid("templates differ in size"));
    }
    let mut rng = rng::stream(seed, rng::DATASET);
    let j = jitter as i64;
    let mut out = Vec::with_capacity(n_per_class * templates.len());
    for _ in 0..n_per_class {
        for t in templates {
            let dy = rng.gen_range(-j..=j);
            let dx = rng.gen_range(-j..=j);
            let intensity = rng.gen_range(0.7..=1.0);
            let mut pixels = vec![0.0; h * w];
            for r in 0..h {
                for c in 0..w {
                    let (sr, sc) = (r as i64 - dy, c as i64 - dx);
                    if sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w && t.is_set(sr as usize, sc as usize) {
                        pixels[r * w + c] = intensity;
                    }
                }
            }
            // noise draws are unconditional so noise-free and noisy datasets
            // with equal seeds share every other draw
            for p in pixels.iter_mut() {
                let flip: f64 = rng.gen();
                let value: f64 = rng.gen();
                if flip < noise {
                    *p = value;
                }
            }
            out.push(Example {
                image: Image::new(h, w, pixels)?,
                label: t.class_id,
            });
        }
    }
    Ok(out)
}

/// Index partition behind a [`Split`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub test: Vec<Example>,
    pub classes: usize,
}

/// Class-balanced labeled subset, then a test set, with everything left over
/// unlabeled. Deterministic in `seed`.
pub fn partition_indices(
    labels: &[usize],
    classes: usize,
    n_labeled: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitIndices> {
    if classes == 0 || n_labeled % classes != 0 {
        return Err(Error::invalid(format!(
            "{n_labeled} labeled examples cannot be balanced over {classes} classes"
        )));
    }
    if n_labeled + n_test >= labels.len() {
        return Err(Error::invalid(format!(
            "{n_labeled} labeled + {n_test} test leaves nothing of {} examples",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
    }
    let per_class = n_labeled / classes;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::SPLIT));

    let mut counts = vec![0; classes];
    let mut labeled = Vec::with_capacity(n_labeled);
    let mut rest = Vec::with_capacity(labels.len() - n_labeled);
    for &i in &order {
        if counts[labels[i]] < per_class {
            counts[labels[i]] += 1;
            labeled.push(i);
        } else {
            rest.push(i);
        }
    }
    if labeled.len() != n_labeled {
        return Err(Error::invalid(format!(
            "not enough examples per class for {per_class} labels each"
        )));
    }
    let unlabeled = rest.split_off(n_test);
    Ok(SplitIndices {
        labeled,
        unlabeled,
        test: rest,
    })
}

pub fn split_dataset(
    examples: &[Example],
    classes: usize,
    n_labeled: usize,
    n_test: usize,
    seed: u64,
) -> Result<Split> {
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let idx = partition_indices(&labels, classes, n_labeled, n_test, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| examples[i].clone()).collect();
    Ok(Split {
        labeled: pick(&idx.labeled),
        unlabeled: pick(&idx.unlabeled),
        test: pick(&idx.test),
        classes,
    })
}
