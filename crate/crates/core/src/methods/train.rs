use rand::seq::index::sample;

use super::losses::{batch_losses, BatchImages, Phase};
use super::{LossBreakdown, Method, TrainConfig};
use crate::autodiff::{Sgd, Tape};
use crate::data::{batch_iterator, steps_per_epoch, Example, Split};
use crate::diagnostics::{diagonality, evaluate_error, head_confusion, ConfusionMatrix, MetricsRecord};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParameters};
use crate::rng;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub records: Vec<MetricsRecord>,
    /// Head confusion after the last epoch, or at initialization when no
    /// epochs ran.
    pub confusion: ConfusionMatrix,
}

/// Fixed evaluation subsample for the head confusion matrix. Drawn from the
/// unlabeled set (whose hidden labels diagnostics may read) unless that set
/// misses a class, in which case the labeled set is used whole.
fn diagnostic_set<'a>(split: &'a Split, config: &TrainConfig) -> Vec<&'a Example> {
    let mut r = rng::stream(config.seed, rng::DIAGNOSTICS);
    let n = split.unlabeled.len();
    let mut picked: Vec<usize> = sample(&mut r, n, config.diag_samples.min(n)).into_vec();
    picked.sort_unstable();
    let chosen: Vec<&Example> = picked.iter().map(|&i| &split.unlabeled[i]).collect();
    let covers = (0..split.classes).all(|c| chosen.iter().any(|e| e.label == c));
    if covers {
        chosen
    } else {
        split.labeled.iter().collect()
    }
}

fn check_inputs(split: &Split, model: &ModelConfig, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    model.validate()?;
    if split.classes != model.classes {
        return Err(Error::invalid(format!(
            "split has {} classes, model {}",
            split.classes, model.classes
        )));
    }
    if split.labeled.is_empty() {
        return Err(Error::invalid("training needs labeled examples"));
    }
    if split.test.is_empty() {
        return Err(Error::invalid("training needs a test set"));
    }
    let dim = split.labeled[0].image.pixels().len();
    if dim != model.input_dim {
        return Err(Error::dim(
            "train",
            format!("images have {dim} pixels, model expects {}", model.input_dim),
        ));
    }
    Ok(())
}

/// Trains `method` for `config.epochs` epochs with one momentum-SGD update
/// per batch and a metrics record after every epoch.
///
/// `FineTune` spends the first half of its epochs on rotation pretraining,
/// then replaces the semantic head and restarts the optimizer.
pub fn train(method: Method, split: &Split, model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    check_inputs(split, model, config)?;
    let mut params = ModelParameters::init(model, config.seed)?;
    let mut rng = rng::stream(config.seed, rng::TRAIN);
    let diag_set = diagnostic_set(split, config);
    let use_aux = method.uses_aux(config);

    let (nl, nu) = (split.labeled.len(), split.unlabeled.len());
    let steps = steps_per_epoch(nl, nu, config.batch_size);
    let pretext_epochs = if method == Method::FineTune { config.epochs / 2 } else { 0 };
    let total_steps = steps * config.epochs;
    let mut opt = Sgd::new(config.lr, config.momentum)?;
    let mut records = Vec::with_capacity(config.epochs);
    let mut global_step = 0;

    for epoch in 0..config.epochs {
        let phase = if epoch < pretext_epochs { Phase::Pretext } else { Phase::Main };
        if pretext_epochs > 0 && epoch == pretext_epochs {
            params.reinit_semantic(config.seed);
            opt = Sgd::new(config.lr, config.momentum)?;
        }
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for batch in batch_iterator(nl, nu, config.batch_size, config.seed, epoch as u64)? {
            let images = BatchImages::from_split(split, &batch);
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let ramp = config.ramp(global_step, total_steps);
            let losses = batch_losses(&mut tape, &vars, method, phase, &images, config, ramp, &mut rng)?;
            if !losses.breakdown.total.is_finite() {
                return Err(Error::invalid(format!(
                    "{method} diverged at epoch {} step {global_step}",
                    epoch + 1
                )));
            }
            let mut grads = tape.backward(losses.total)?;
            let flat: Vec<Vec<f64>> = vars
                .flat()
                .iter()
                .map(|&v| grads.take(v).expect("every parameter requires grad"))
                .collect();
            opt.step(&mut params.tensors_mut(), &flat)?;
            if !params.all_finite() {
                return Err(Error::invalid(format!(
                    "{method} produced non-finite parameters at epoch {}",
                    epoch + 1
                )));
            }
            sum.add_assign(&losses.breakdown);
            batches += 1;
            global_step += 1;
        }
        let mean = sum.scaled(1.0 / batches.max(1) as f64);
        let confusion = head_confusion(&params, &diag_set)?;
        records.push(MetricsRecord {
            epoch: epoch + 1,
            supervised_ce: mean.supervised_ce,
            rotation_ce: mean.rotation_ce,
            sharpen_ce: mean.sharpen_ce,
            aux_ce: mean.aux_ce,
            total: mean.total,
            test_error: evaluate_error(&params, &split.test, use_aux)?,
            diagonality: diagonality(&confusion),
        });
    }
    let confusion = head_confusion(&params, &diag_set)?;
    Ok(TrainOutcome {
        params,
        records,
        confusion,
    })
}
