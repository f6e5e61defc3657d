//! Synthetic rotation-sensitive glyph benchmark.

mod batch;
mod dataset;
mod glyph;
mod image;

pub use batch::{batch_iterator, steps_per_epoch, Batch, BatchIter};
pub use dataset::{generate_dataset, partition_indices, split_dataset, Example, Split, SplitIndices};
pub use glyph::{
    hamming, make_templates, rotation_asymmetry, rotation_distance, GlyphTemplate,
    MIN_DISTANCE_FRACTION,
};
pub use image::{mix_images, rotate90, rotation_quadruple, to_pgm, write_pgm, Image, RotatedExample, ANGLES};

/// Benchmark dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub n_per_class: usize,
    pub n_labeled: usize,
    pub n_test: usize,
    pub noise: f64,
    pub jitter: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: 4,
            height: 16,
            width: 16,
            n_per_class: 1260,
            n_labeled: 40,
            n_test: 1000,
            noise: 0.05,
            jitter: 2,
        }
    }
}

impl DataConfig {
    /// Templates, examples and split for one run, all drawn from `seed`.
    pub fn build(&self, seed: u64) -> crate::Result<Split> {
        let templates = make_templates(self.classes, self.height, self.width, seed)?;
        let examples = generate_dataset(&templates, self.n_per_class, self.noise, self.jitter, seed)?;
        split_dataset(&examples, self.classes, self.n_labeled, self.n_test, seed)
    }
}
