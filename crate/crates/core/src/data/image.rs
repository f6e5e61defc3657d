use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of rotation angles (0, 90, 180 and 270 degrees).
pub const ANGLES: usize = 4;

/// Row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::ShapeMismatch {
                shape: vec![height, width],
                expected: height * width,
                actual: pixels.len(),
            });
        }
        if let Some(index) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }
}

/// Rotates a square image by `k` quarter turns counter-clockwise.
///
/// One quarter turn maps `out[r][c] = in[c][W - 1 - r]`.
pub fn rotate90(image: &Image, k: usize) -> Result<Image> {
    if !image.is_square() {
        return Err(Error::invalid(format!(
            "rotate90 needs a square image, got {}x{}",
            image.height, image.width
        )));
    }
    let n = image.width;
    let src = &image.pixels;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = match k % ANGLES {
                0 => (r, c),
                1 => (c, n - 1 - r),
                2 => (n - 1 - r, n - 1 - c),
                _ => (n - 1 - c, r),
            };
            out[r * n + c] = src[sr * n + sc];
        }
    }
    Ok(Image {
        height: n,
        width: n,
        pixels: out,
    })
}

/// An image together with the rotation that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatedExample {
    pub image: Image,
    pub angle: usize,
}

/// The four rotated copies of `image`, ordered by angle index 0..4.
pub fn rotation_quadruple(image: &Image) -> Result<[RotatedExample; ANGLES]> {
    let rot = |k| rotate90(image, k).map(|image| RotatedExample { image, angle: k });
    Ok([rot(0)?, rot(1)?, rot(2)?, rot(3)?])
}

/// `alpha * target + (1 - alpha) * other`, with `alpha` in `[0.5, 1]` so the
/// target stays dominant.
pub fn mix_images(target: &Image, other: &Image, alpha: f64) -> Result<Image> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("mixing weight {alpha} outside [0.5, 1]")));
    }
    if target.height != other.height || target.width != other.width {
        return Err(Error::dim(
            "mix_images",
            format!(
                "{}x{} vs {}x{}",
                target.height, target.width, other.height, other.width
            ),
        ));
    }
    let pixels = target
        .pixels
        .iter()
        .zip(&other.pixels)
        .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    Ok(Image {
        height: target.height,
        width: target.width,
        pixels,
    })
}

/// Plain-text graymap (P2) with maxval 255.
pub fn to_pgm(image: &Image) -> String {
    let mut s = format!("P2\n{} {}\n255\n", image.width, image.height);
    for row in image.pixels.chunks(image.width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn write_pgm(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, to_pgm(image)).map_err(|e| Error::io(path, e))
}
