//! Training objectives and the training loop for the conditional rotation
//! method, its extended form, and the baselines it is compared against.

mod losses;
mod train;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use losses::{
    baseline_weights, batch_losses, craeplus_batch_losses, crae_batch_losses, marginalize, sharpen, sharpen_target,
    unlabeled_rotation_loss, BatchImages, BatchLosses, HeadWeighting, Phase,
};
pub use train::{train, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Semantic head trained on the labeled set alone.
    LabeledOnly,
    /// Labeled images in all four rotations, keeping their class label.
    RotAugSupervised,
    /// Rotation-augmented supervision plus sharpened pseudo-targets on
    /// unlabeled images. No rotation heads.
    SharpenOnly,
    /// Rotation pretraining on all images, then a fresh semantic head
    /// fine-tuned on the labeled set.
    FineTune,
    /// Shared backbone with a semantic head and one unconditional rotation
    /// head trained jointly.
    S4L,
    /// Rotation heads mixed by the semantic prediction.
    Crae,
    /// `Crae` with sharpened targets and mixed-image rotation prediction.
    CraePlus,
    /// A uniformly random rotation head per row.
    EnsembleRandom,
    /// Every rotation head trained on every row.
    EnsembleIndependent,
    /// `Crae` with the mixture weights cut from the graph.
    CraeDetach,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::LabeledOnly,
        Method::RotAugSupervised,
        Method::SharpenOnly,
        Method::FineTune,
        Method::S4L,
        Method::Crae,
        Method::CraePlus,
        Method::EnsembleRandom,
        Method::EnsembleIndependent,
        Method::CraeDetach,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LabeledOnly => "labeled_only",
            Method::RotAugSupervised => "rot_aug_supervised",
            Method::SharpenOnly => "sharpen_only",
            Method::FineTune => "fine_tune",
            Method::S4L => "s4l",
            Method::Crae => "crae",
            Method::CraePlus => "crae_plus",
            Method::EnsembleRandom => "ensemble_random",
            Method::EnsembleIndependent => "ensemble_independent",
            Method::CraeDetach => "crae_detach",
        }
    }

    /// Methods built around the class-conditional rotation heads.
    pub fn is_conditional(self) -> bool {
        matches!(
            self,
            Method::Crae | Method::CraePlus | Method::EnsembleRandom | Method::EnsembleIndependent | Method::CraeDetach
        )
    }

    /// Whether the auxiliary classifier is trained and used for test
    /// decisions under `config`.
    pub fn uses_aux(self, config: &TrainConfig) -> bool {
        config.use_aux && self.is_conditional()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "craeplus" | "crae+" => "crae_plus",
            "finetune" => "fine_tune",
            other => other,
        };
        Method::ALL
            .into_iter()
            .find(|m| m.name() == alias)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the rotation loss.
    pub eta: f64,
    /// Weight of the mixed-image rotation loss in the extended method.
    pub eta1: f64,
    /// Weight of the sharpened-target loss, reached after the warm-up.
    pub eta2: f64,
    /// Fraction of all steps over which `eta2` ramps linearly from 0.
    pub ramp_fraction: f64,
    pub temperature: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub use_aux: bool,
    /// Size of the unlabeled subsample used for the head confusion matrix.
    pub diag_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            ramp_fraction: 0.25,
            temperature: 0.5,
            alpha_min: 0.5,
            alpha_max: 1.0,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            use_aux: true,
            diag_samples: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| {
            Err(Error::Config {
                key: key.into(),
                reason,
            })
        };
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return bad("temp", format!("{} is outside (0, 1]", self.temperature));
        }
        for (key, v) in [("eta", self.eta), ("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, format!("{v} must be a finite non-negative weight"));
            }
        }
        if !(0.0..=1.0).contains(&self.ramp_fraction) {
            return bad("ramp_fraction", format!("{} is outside [0, 1]", self.ramp_fraction));
        }
        if !(0.5 <= self.alpha_min && self.alpha_min <= self.alpha_max && self.alpha_max <= 1.0) {
            return bad(
                "alpha_min",
                format!("[{}, {}] is not a sub-range of [0.5, 1]", self.alpha_min, self.alpha_max),
            );
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("{} is outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.diag_samples == 0 {
            return bad("diag_samples", "must be positive".into());
        }
        Ok(())
    }

    /// Multiplier on `eta2` at a given global step.
    pub fn ramp(&self, step: usize, total_steps: usize) -> f64 {
        let span = self.ramp_fraction * total_steps as f64;
        if span <= 0.0 {
            1.0
        } else {
            (step as f64 / span).min(1.0)
        }
    }
}

/// Per-batch loss terms. Terms a method does not use are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub supervised_ce: f64,
    pub rotation_ce: f64,
    pub sharpen_ce: f64,
    pub aux_ce: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add_assign(&mut self, o: &LossBreakdown) {
        self.supervised_ce += o.supervised_ce;
        self.rotation_ce += o.rotation_ce;
        self.sharpen_ce += o.sharpen_ce;
        self.aux_ce += o.aux_ce;
        self.total += o.total;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.supervised_ce *= s;
        self.rotation_ce *= s;
        self.sharpen_ce *= s;
        self.aux_ce *= s;
        self.total *= s;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("CRAE+".parse::<Method>().unwrap(), Method::CraePlus);
        assert!("mixmatch".parse::<Method>().is_err());
    }

    #[test]
    fn aux_only_for_conditional_methods() {
        let cfg = TrainConfig::default();
        assert!(Method::Crae.uses_aux(&cfg));
        assert!(Method::CraePlus.uses_aux(&cfg));
        assert!(!Method::LabeledOnly.uses_aux(&cfg));
        assert!(!Method::S4L.uses_aux(&cfg));
        let off = TrainConfig {
            use_aux: false,
            ..cfg
        };
        assert!(!Method::Crae.uses_aux(&off));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for t in [0.0, -0.5, 1.5] {
            let c = TrainConfig {
                temperature: t,
                ..Default::default()
            };
            assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "temp"));
        }
        let c = TrainConfig {
            alpha_min: 0.3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            eta1: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ramp_is_linear_then_flat() {
        let c = TrainConfig::default();
        assert_eq!(c.ramp(0, 100), 0.0);
        assert_eq!(c.ramp(10, 100), 0.4);
        assert_eq!(c.ramp(25, 100), 1.0);
        assert_eq!(c.ramp(90, 100), 1.0);
        let none = TrainConfig {
            ramp_fraction: 0.0,
            ..c
        };
        assert_eq!(none.ramp(0, 100), 1.0);
    }
}
