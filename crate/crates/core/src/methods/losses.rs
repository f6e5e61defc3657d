use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{LossBreakdown, Method, TrainConfig};
use crate::autodiff::{Tape, Tensor, Var, DIST_TOL};
use crate::data::{mix_images, rotate90, rotation_quadruple, Batch, Image, Split, ANGLES};
use crate::error::{Error, Result};
use crate::model::ParamVars;

/// Images of one training step. `labels` pairs with `labeled`.
#[derive(Clone, Debug)]
pub struct BatchImages<'a> {
    pub labeled: Vec<&'a Image>,
    pub labels: Vec<usize>,
    pub unlabeled: Vec<&'a Image>,
}

impl<'a> BatchImages<'a> {
    pub fn from_split(split: &'a Split, batch: &Batch) -> Self {
        BatchImages {
            labeled: batch.labeled.iter().map(|&i| &split.labeled[i].image).collect(),
            labels: batch.labeled.iter().map(|&i| split.labeled[i].label).collect(),
            unlabeled: batch.unlabeled.iter().map(|&i| &split.unlabeled[i].image).collect(),
        }
    }
}

/// Stage of a method with more than one objective. Only `FineTune` has a
/// pretext stage; every other method trains in `Main` throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Main,
    Pretext,
}

/// Scalar loss on the tape plus the value of each term.
#[derive(Clone, Copy, Debug)]
pub struct BatchLosses {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// How the per-class rotation heads combine into one angle prediction.
#[derive(Clone, Copy, Debug)]
pub enum HeadWeighting {
    /// Row-wise mixture weights over the heads, `[rows, C]`.
    Weights(Var),
    /// Every head is scored separately and the cross-entropies averaged.
    MeanOfHeads,
}

/// `out[i] = sum_k weights[i, k] * head_dists[i, k, :]` on plain tensors.
pub fn marginalize(head_dists: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.leaf(head_dists, false);
    let w = tape.leaf(weights, false);
    let m = tape.marginalize(h, w)?;
    Ok(tape.to_tensor(m))
}

/// Temperature sharpening `p_i^(1/T) / sum_j p_j^(1/T)`.
///
/// Entries are divided by the row maximum before the power so that small
/// temperatures cannot underflow the whole row. `T = 1` returns the input.
pub fn sharpen(p_bar: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature <= 1.0) {
        return Err(Error::invalid(format!("temperature {temperature} outside (0, 1]")));
    }
    let max = p_bar.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::invalid("cannot sharpen an all-zero vector"));
    }
    if temperature == 1.0 {
        return Ok(p_bar.to_vec());
    }
    let inv = 1.0 / temperature;
    let powered: Vec<f64> = p_bar.iter().map(|&p| (p / max).powf(inv)).collect();
    let sum: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| p / sum).collect())
}

/// Sharpened class target for one image from the semantic predictions on its
/// four rotated copies (`4 x classes`, row-major).
pub fn sharpen_target(rotated_preds: &[f64], classes: usize, temperature: f64) -> Result<Vec<f64>> {
    if classes == 0 || rotated_preds.len() != ANGLES * classes {
        return Err(Error::dim(
            "sharpen_target",
            format!("expected {ANGLES}x{classes} predictions, got {}", rotated_preds.len()),
        ));
    }
    for (row, r) in rotated_preds.chunks(classes).enumerate() {
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > DIST_TOL {
            return Err(Error::NotDistribution {
                op: "sharpen_target",
                row,
                sum,
            });
        }
    }
    let mut mean = vec![0.0; classes];
    for r in rotated_preds.chunks(classes) {
        for (m, &p) in mean.iter_mut().zip(r) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= ANGLES as f64);
    sharpen(&mean, temperature)
}

/// Head weighting used by the conditional methods on the rows behind `p_y`.
///
/// `Crae` and `CraePlus` mix with `p_y` itself, `CraeDetach` with a
/// stop-gradient copy, `EnsembleRandom` with a uniformly random one-hot per
/// row, and `EnsembleIndependent` averages the per-head losses instead.
pub fn baseline_weights(tape: &mut Tape, method: Method, p_y: Var, rng: &mut ChaCha8Rng) -> Result<HeadWeighting> {
    match method {
        Method::Crae | Method::CraePlus => Ok(HeadWeighting::Weights(p_y)),
        Method::CraeDetach => Ok(HeadWeighting::Weights(tape.detach(p_y)?)),
        Method::EnsembleRandom => {
            let (rows, classes) = (tape.shape(p_y)[0], tape.shape(p_y)[1]);
            let picks: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
            let w = tape.constant(vec![rows, classes], one_hot(&picks, classes))?;
            Ok(HeadWeighting::Weights(w))
        }
        Method::EnsembleIndependent => Ok(HeadWeighting::MeanOfHeads),
        other => Err(Error::invalid(format!("{other} has no class-conditional rotation heads"))),
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        v[i * classes + y] = 1.0;
    }
    v
}

/// Pixels of the four rotated copies of every image, rows ordered `4 * i + z`.
fn rotated_pixels(images: &[&Image], out: &mut Vec<f64>) -> Result<()> {
    for img in images {
        for r in rotation_quadruple(img)? {
            out.extend_from_slice(r.image.pixels());
        }
    }
    Ok(())
}

fn input_leaf(tape: &mut Tape, pixels: Vec<f64>, rows: usize) -> Result<Var> {
    let dim = pixels.len() / rows;
    tape.constant(vec![rows, dim], pixels)
}

/// One-hot angle targets for `images` quadruples.
fn angle_targets(tape: &mut Tape, images: usize) -> Result<Var> {
    let angles: Vec<usize> = (0..images * ANGLES).map(|r| r % ANGLES).collect();
    tape.constant(vec![angles.len(), ANGLES], one_hot(&angles, ANGLES))
}

fn rotation_ce(tape: &mut Tape, heads: &[Var], weighting: HeadWeighting, target: Var) -> Result<Var> {
    match weighting {
        HeadWeighting::Weights(w) => {
            let stacked = tape.stack(heads)?;
            let mixed = tape.marginalize(stacked, w)?;
            tape.cross_entropy(mixed, target)
        }
        HeadWeighting::MeanOfHeads => {
            let mut acc: Option<Var> = None;
            for &h in heads {
                let ce = tape.cross_entropy(h, target)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, ce)?,
                    None => ce,
                });
            }
            let acc = acc.ok_or_else(|| Error::invalid("no rotation heads"))?;
            Ok(tape.scale(acc, 1.0 / heads.len() as f64))
        }
    }
}

fn require_labeled(batch: &BatchImages) -> Result<()> {
    if batch.labeled.is_empty() {
        return Err(Error::invalid("labeled batch is empty"));
    }
    if batch.labels.len() != batch.labeled.len() {
        return Err(Error::dim("batch", "labels do not pair with labeled images"));
    }
    Ok(())
}

/// Weighted sum of scalar terms on the tape.
fn combine(tape: &mut Tape, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let scaled = if w == 1.0 { v } else { tape.scale(v, w) };
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    acc.ok_or_else(|| Error::invalid("no loss terms"))
}

/// Rotated copies of the labeled images followed by those of the unlabeled
/// images, pushed through the backbone once.
struct RotatedForward {
    features: Var,
    p_y: Var,
    n_labeled_rows: usize,
    n_rows: usize,
}

impl RotatedForward {
    fn new(tape: &mut Tape, vars: &ParamVars, labeled: &[&Image], unlabeled: &[&Image]) -> Result<Self> {
        let mut pixels = Vec::new();
        rotated_pixels(labeled, &mut pixels)?;
        rotated_pixels(unlabeled, &mut pixels)?;
        let n_rows = ANGLES * (labeled.len() + unlabeled.len());
        let x = input_leaf(tape, pixels, n_rows)?;
        let features = vars.features(tape, x)?;
        let p_y = vars.semantic_dist(tape, features)?;
        Ok(RotatedForward {
            features,
            p_y,
            n_labeled_rows: ANGLES * labeled.len(),
            n_rows,
        })
    }

    fn labeled_upright_rows(&self) -> Vec<usize> {
        (0..self.n_labeled_rows).step_by(ANGLES).collect()
    }

    fn unlabeled_rows(&self) -> Vec<usize> {
        (self.n_labeled_rows..self.n_rows).collect()
    }

    fn has_unlabeled(&self) -> bool {
        self.n_rows > self.n_labeled_rows
    }
}

struct SupervisedTerms {
    supervised: Var,
    aux: Option<Var>,
}

/// Cross-entropy of the semantic (and optionally auxiliary) head on the
/// upright labeled copies.
fn upright_supervised(
    tape: &mut Tape,
    vars: &ParamVars,
    fwd: &RotatedForward,
    labels: &[usize],
    with_aux: bool,
) -> Result<SupervisedTerms> {
    let classes = vars.classes();
    let rows = fwd.labeled_upright_rows();
    let y = tape.constant(vec![labels.len(), classes], one_hot(labels, classes))?;
    let p = tape.gather_rows(fwd.p_y, &rows)?;
    let supervised = tape.cross_entropy(p, y)?;
    let aux = if with_aux {
        let f = tape.gather_rows(fwd.features, &rows)?;
        let pa = vars.aux_dist(tape, f)?;
        Some(tape.cross_entropy(pa, y)?)
    } else {
        None
    };
    Ok(SupervisedTerms { supervised, aux })
}

/// Cross-entropy of every unlabeled rotated copy against the sharpened
/// average of its image's four copies. The target is stop-gradient.
fn sharpen_term(tape: &mut Tape, fwd: &RotatedForward, classes: usize, temperature: f64) -> Result<Option<Var>> {
    if !fwd.has_unlabeled() {
        return Ok(None);
    }
    let p_u = tape.gather_rows(fwd.p_y, &fwd.unlabeled_rows())?;
    let frozen = tape.detach(p_u)?;
    let values = tape.value(frozen).to_vec();
    let mut target = Vec::with_capacity(values.len());
    for quad in values.chunks(ANGLES * classes) {
        let p_hat = sharpen_target(quad, classes, temperature)?;
        for _ in 0..ANGLES {
            target.extend_from_slice(&p_hat);
        }
    }
    let rows = values.len() / classes;
    let t = tape.constant(vec![rows, classes], target)?;
    Ok(Some(tape.cross_entropy(p_u, t)?))
}

/// Rotation weights for the conditional methods: exact head selection for
/// labeled rows, the method's weighting for unlabeled rows. The random and
/// independent ensembles ignore labels and treat every row alike.
fn conditional_weighting(
    tape: &mut Tape,
    method: Method,
    fwd: &RotatedForward,
    labels: &[usize],
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HeadWeighting> {
    match method {
        Method::EnsembleRandom | Method::EnsembleIndependent => baseline_weights(tape, method, fwd.p_y, rng),
        _ => {
            let repeated: Vec<usize> = labels.iter().flat_map(|&y| [y; ANGLES]).collect();
            let onehot = tape.constant(vec![repeated.len(), classes], one_hot(&repeated, classes))?;
            if !fwd.has_unlabeled() {
                return Ok(HeadWeighting::Weights(onehot));
            }
            let p_u = tape.gather_rows(fwd.p_y, &fwd.unlabeled_rows())?;
            match baseline_weights(tape, method, p_u, rng)? {
                HeadWeighting::Weights(w) => Ok(HeadWeighting::Weights(tape.concat_rows(&[onehot, w])?)),
                HeadWeighting::MeanOfHeads => unreachable!("only ensembles average heads"),
            }
        }
    }
}

fn finish(tape: &mut Tape, terms: &[(Var, f64)], named: NamedTerms) -> Result<BatchLosses> {
    let total = combine(tape, terms)?;
    let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar_value(v));
    let breakdown = LossBreakdown {
        supervised_ce: val(named.supervised),
        rotation_ce: val(named.rotation),
        sharpen_ce: val(named.sharpen),
        aux_ce: val(named.aux),
        total: tape.scalar_value(total),
    };
    Ok(BatchLosses { total, breakdown })
}

#[derive(Default)]
struct NamedTerms {
    supervised: Option<Var>,
    rotation: Option<Var>,
    sharpen: Option<Var>,
    aux: Option<Var>,
}

/// Objective of the conditional rotation method:
/// `supervised + eta * rotation + aux`, where the rotation term mixes the
/// per-class heads by the semantic prediction on unlabeled rows and selects
/// the true class head on labeled rows.
pub fn crae_batch_losses(
    tape: &mut Tape,
    vars: &ParamVars,
    batch: &BatchImages,
    config: &TrainConfig,
) -> Result<BatchLosses> {
    // plain mixture weights draw nothing from the generator
    let mut rng = crate::rng::stream(0, 0);
    conditional_batch_losses(tape, vars, Method::Crae, batch, config, &mut rng)
}

fn conditional_batch_losses(
    tape: &mut Tape,
    vars: &ParamVars,
    method: Method,
    batch: &BatchImages,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLosses> {
    require_labeled(batch)?;
    let classes = vars.classes();
    let fwd = RotatedForward::new(tape, vars, &batch.labeled, &batch.unlabeled)?;
    let sup = upright_supervised(tape, vars, &fwd, &batch.labels, method.uses_aux(config))?;
    let heads = vars.rotation_dists(tape, fwd.features)?;
    let weighting = conditional_weighting(tape, method, &fwd, &batch.labels, classes, rng)?;
    let target = angle_targets(tape, batch.labeled.len() + batch.unlabeled.len())?;
    let rotation = rotation_ce(tape, &heads, weighting, target)?;

    let mut terms = vec![(sup.supervised, 1.0), (rotation, config.eta)];
    terms.extend(sup.aux.map(|a| (a, 1.0)));
    finish(
        tape,
        &terms,
        NamedTerms {
            supervised: Some(sup.supervised),
            rotation: Some(rotation),
            aux: sup.aux,
            ..Default::default()
        },
    )
}

/// Mixes every rotated copy with a rotated distractor drawn from the same
/// list. Rows follow the `4 * i + z` layout.
fn mixed_pixels(images: &[&Image], config: &TrainConfig, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) -> Result<()> {
    for img in images {
        for target in rotation_quadruple(img)? {
            let j = rng.gen_range(0..images.len());
            let k = rng.gen_range(0..ANGLES);
            let alpha = rng.gen_range(config.alpha_min..=config.alpha_max);
            let other = rotate90(images[j], k)?;
            out.extend_from_slice(mix_images(&target.image, &other, alpha)?.pixels());
        }
    }
    Ok(())
}

/// Objective of the extended method:
/// `supervised + eta1 * mixed_rotation + ramp * eta2 * sharpen + aux`.
///
/// Rotation heads see mixed images while the mixture weights of unlabeled
/// rows come from the semantic prediction on the unmixed rotated copy.
pub fn craeplus_batch_losses(
    tape: &mut Tape,
    vars: &ParamVars,
    batch: &BatchImages,
    config: &TrainConfig,
    ramp: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLosses> {
    require_labeled(batch)?;
    let classes = vars.classes();
    let fwd = RotatedForward::new(tape, vars, &batch.labeled, &batch.unlabeled)?;
    let sup = upright_supervised(tape, vars, &fwd, &batch.labels, Method::CraePlus.uses_aux(config))?;
    let sharpen = sharpen_term(tape, &fwd, classes, config.temperature)?;

    let mut pixels = Vec::new();
    mixed_pixels(&batch.labeled, config, rng, &mut pixels)?;
    mixed_pixels(&batch.unlabeled, config, rng, &mut pixels)?;
    let x_mix = input_leaf(tape, pixels, fwd.n_rows)?;
    let f_mix = vars.features(tape, x_mix)?;
    let heads = vars.rotation_dists(tape, f_mix)?;
    let weighting = conditional_weighting(tape, Method::CraePlus, &fwd, &batch.labels, classes, rng)?;
    let target = angle_targets(tape, batch.labeled.len() + batch.unlabeled.len())?;
    let rotation = rotation_ce(tape, &heads, weighting, target)?;

    let mut terms = vec![(sup.supervised, 1.0), (rotation, config.eta1)];
    terms.extend(sharpen.map(|s| (s, ramp * config.eta2)));
    terms.extend(sup.aux.map(|a| (a, 1.0)));
    finish(
        tape,
        &terms,
        NamedTerms {
            supervised: Some(sup.supervised),
            rotation: Some(rotation),
            sharpen,
            aux: sup.aux,
        },
    )
}

fn labeled_only_losses(tape: &mut Tape, vars: &ParamVars, batch: &BatchImages) -> Result<BatchLosses> {
    require_labeled(batch)?;
    let classes = vars.classes();
    let mut pixels = Vec::new();
    for img in &batch.labeled {
        pixels.extend_from_slice(img.pixels());
    }
    let x = input_leaf(tape, pixels, batch.labeled.len())?;
    let f = vars.features(tape, x)?;
    let p = vars.semantic_dist(tape, f)?;
    let y = tape.constant(vec![batch.labels.len(), classes], one_hot(&batch.labels, classes))?;
    let sup = tape.cross_entropy(p, y)?;
    finish(
        tape,
        &[(sup, 1.0)],
        NamedTerms {
            supervised: Some(sup),
            ..Default::default()
        },
    )
}

/// Supervised cross-entropy over all four rotated copies of each labeled
/// image, with an optional sharpening term on the unlabeled images.
fn rotation_augmented_losses(
    tape: &mut Tape,
    vars: &ParamVars,
    batch: &BatchImages,
    config: &TrainConfig,
    with_sharpen: bool,
    ramp: f64,
) -> Result<BatchLosses> {
    require_labeled(batch)?;
    let classes = vars.classes();
    let unlabeled: &[&Image] = if with_sharpen { &batch.unlabeled } else { &[] };
    let fwd = RotatedForward::new(tape, vars, &batch.labeled, unlabeled)?;
    let repeated: Vec<usize> = batch.labels.iter().flat_map(|&y| [y; ANGLES]).collect();
    let y = tape.constant(vec![repeated.len(), classes], one_hot(&repeated, classes))?;
    let rows: Vec<usize> = (0..fwd.n_labeled_rows).collect();
    let p = tape.gather_rows(fwd.p_y, &rows)?;
    let sup = tape.cross_entropy(p, y)?;
    let sharpen = if with_sharpen {
        sharpen_term(tape, &fwd, classes, config.temperature)?
    } else {
        None
    };
    let mut terms = vec![(sup, 1.0)];
    terms.extend(sharpen.map(|s| (s, ramp * config.eta2)));
    finish(
        tape,
        &terms,
        NamedTerms {
            supervised: Some(sup),
            sharpen,
            ..Default::default()
        },
    )
}

/// Unconditional rotation prediction on every rotated copy of both lists.
fn pretext_rotation(tape: &mut Tape, vars: &ParamVars, features: Var, images: usize) -> Result<Var> {
    let p = vars.pretext_dist(tape, features)?;
    let target = angle_targets(tape, images)?;
    tape.cross_entropy(p, target)
}

fn s4l_losses(tape: &mut Tape, vars: &ParamVars, batch: &BatchImages, config: &TrainConfig) -> Result<BatchLosses> {
    require_labeled(batch)?;
    let fwd = RotatedForward::new(tape, vars, &batch.labeled, &batch.unlabeled)?;
    let sup = upright_supervised(tape, vars, &fwd, &batch.labels, false)?;
    let rotation = pretext_rotation(tape, vars, fwd.features, batch.labeled.len() + batch.unlabeled.len())?;
    finish(
        tape,
        &[(sup.supervised, 1.0), (rotation, config.eta)],
        NamedTerms {
            supervised: Some(sup.supervised),
            rotation: Some(rotation),
            ..Default::default()
        },
    )
}

fn pretext_losses(tape: &mut Tape, vars: &ParamVars, batch: &BatchImages) -> Result<BatchLosses> {
    let images: Vec<&Image> = batch.labeled.iter().chain(&batch.unlabeled).copied().collect();
    if images.is_empty() {
        return Err(Error::invalid("pretext batch is empty"));
    }
    let mut pixels = Vec::new();
    rotated_pixels(&images, &mut pixels)?;
    let x = input_leaf(tape, pixels, ANGLES * images.len())?;
    let f = vars.features(tape, x)?;
    let rotation = pretext_rotation(tape, vars, f, images.len())?;
    finish(
        tape,
        &[(rotation, 1.0)],
        NamedTerms {
            rotation: Some(rotation),
            ..Default::default()
        },
    )
}

/// Full training objective of `method` on one batch. `ramp` scales the
/// sharpening weight during warm-up.
#[allow(clippy::too_many_arguments)]
pub fn batch_losses(
    tape: &mut Tape,
    vars: &ParamVars,
    method: Method,
    phase: Phase,
    batch: &BatchImages,
    config: &TrainConfig,
    ramp: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLosses> {
    match (method, phase) {
        (Method::FineTune, Phase::Pretext) => pretext_losses(tape, vars, batch),
        (_, Phase::Pretext) => Err(Error::invalid(format!("{method} has no pretext stage"))),
        (Method::LabeledOnly | Method::FineTune, Phase::Main) => labeled_only_losses(tape, vars, batch),
        (Method::RotAugSupervised, _) => rotation_augmented_losses(tape, vars, batch, config, false, ramp),
        (Method::SharpenOnly, _) => rotation_augmented_losses(tape, vars, batch, config, true, ramp),
        (Method::S4L, _) => s4l_losses(tape, vars, batch, config),
        (Method::CraePlus, _) => craeplus_batch_losses(tape, vars, batch, config, ramp, rng),
        (Method::Crae | Method::CraeDetach | Method::EnsembleRandom | Method::EnsembleIndependent, _) => {
            conditional_batch_losses(tape, vars, method, batch, config, rng)
        }
    }
}

/// Rotation loss of `method` on unlabeled images alone: the part of the
/// objective that carries unlabeled signal into the network.
pub fn unlabeled_rotation_loss(
    tape: &mut Tape,
    vars: &ParamVars,
    method: Method,
    images: &[&Image],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    if images.is_empty() {
        return Err(Error::invalid("no unlabeled images"));
    }
    let fwd = RotatedForward::new(tape, vars, &[], images)?;
    let target = angle_targets(tape, images.len())?;
    match method {
        Method::S4L | Method::FineTune => {
            let p = vars.pretext_dist(tape, fwd.features)?;
            tape.cross_entropy(p, target)
        }
        Method::CraePlus => {
            let mut pixels = Vec::new();
            mixed_pixels(images, config, rng, &mut pixels)?;
            let x_mix = input_leaf(tape, pixels, fwd.n_rows)?;
            let f_mix = vars.features(tape, x_mix)?;
            let heads = vars.rotation_dists(tape, f_mix)?;
            let w = baseline_weights(tape, method, fwd.p_y, rng)?;
            rotation_ce(tape, &heads, w, target)
        }
        Method::Crae | Method::CraeDetach | Method::EnsembleRandom | Method::EnsembleIndependent => {
            let heads = vars.rotation_dists(tape, fwd.features)?;
            let w = baseline_weights(tape, method, fwd.p_y, rng)?;
            rotation_ce(tape, &heads, w, target)
        }
        other => Err(Error::invalid(format!("{other} has no rotation loss"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParameters};

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn marginalize_selects_and_averages() {
        let heads = Tensor::new(vec![1, 2, 4], vec![0.7, 0.1, 0.1, 0.1, 0.1, 0.7, 0.1, 0.1]).unwrap();
        let pick = marginalize(&heads, &Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(pick.values(), &[0.1, 0.7, 0.1, 0.1]);
        let avg = marginalize(&heads, &Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap()).unwrap();
        for (a, b) in avg.values().iter().zip([0.4, 0.4, 0.1, 0.1]) {
            assert!(approx(*a, b, 1e-15));
        }
        let bad = Tensor::new(vec![1, 2], vec![0.5, 0.6]).unwrap();
        assert!(marginalize(&heads, &bad).is_err());
    }

    #[test]
    fn sharpen_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(sharpen(&p, 1.0).unwrap(), p.to_vec());
        assert_eq!(sharpen(&[0.0, 1.0, 0.0], 0.3).unwrap(), vec![0.0, 1.0, 0.0]);
        let s = sharpen(&[0.6, 0.4], 0.5).unwrap();
        assert!(approx(s[0], 0.36 / 0.52, 1e-15) && approx(s[1], 0.16 / 0.52, 1e-15));
        assert!(sharpen(&p, 0.0).is_err());
        // tiny temperatures must not underflow to 0/0
        let s = sharpen(&[0.3, 0.3 + 1e-9, 0.4 - 1e-9], 0.001).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sharpen_target_averages_four_rows() {
        let rows = [0.8, 0.2, 0.6, 0.4, 0.4, 0.6, 0.6, 0.4];
        let t = sharpen_target(&rows, 2, 1.0).unwrap();
        assert!(approx(t[0], 0.6, 1e-15) && approx(t[1], 0.4, 1e-15));
        assert!(sharpen_target(&rows[..6], 2, 1.0).is_err());
        assert!(sharpen_target(&[0.9; 8], 2, 1.0).is_err());
    }

    fn tiny_setup() -> (ModelParameters, Vec<Image>, Vec<usize>) {
        let cfg = ModelConfig {
            input_dim: 16,
            backbone_widths: vec![10, 8],
            classes: 3,
            angles: 4,
            proj_dim: 4,
            head_hidden: 6,
        };
        let params = ModelParameters::init(&cfg, 9).unwrap();
        let mut rng = crate::rng::stream(1, 99);
        let imgs = (0..6)
            .map(|_| Image::new(4, 4, (0..16).map(|_| rng.gen::<f64>()).collect()).unwrap())
            .collect();
        (params, imgs, vec![0, 1, 2])
    }

    fn zero_linear(l: &mut crate::model::Linear) {
        l.weight.values_mut().iter_mut().for_each(|v| *v = 0.0);
        l.bias.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    #[test]
    fn uniform_heads_give_ln4_and_uniform_semantics_give_ln_c() {
        let (mut params, imgs, labels) = tiny_setup();
        for h in &mut params.rotation_heads {
            zero_linear(&mut h.out);
        }
        zero_linear(&mut params.semantic);
        let batch = BatchImages {
            labeled: imgs[..3].iter().collect(),
            labels,
            unlabeled: imgs[3..].iter().collect(),
        };
        let cfg = TrainConfig::default();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let l = crae_batch_losses(&mut tape, &vars, &batch, &cfg).unwrap();
        assert!(approx(l.breakdown.rotation_ce, 4f64.ln(), 1e-12));
        assert!(approx(l.breakdown.supervised_ce, 3f64.ln(), 1e-12));

        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let mut rng = crate::rng::stream(0, 1);
        let l = craeplus_batch_losses(&mut tape, &vars, &batch, &cfg, 1.0, &mut rng).unwrap();
        assert!(approx(l.breakdown.sharpen_ce, 3f64.ln(), 1e-12));
        assert!(approx(l.breakdown.rotation_ce, 4f64.ln(), 1e-12));
    }

    #[test]
    fn zero_eta_drops_rotation_from_total() {
        let (params, imgs, labels) = tiny_setup();
        let batch = BatchImages {
            labeled: imgs[..3].iter().collect(),
            labels,
            unlabeled: imgs[3..].iter().collect(),
        };
        let cfg = TrainConfig {
            eta: 0.0,
            ..Default::default()
        };
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let l = crae_batch_losses(&mut tape, &vars, &batch, &cfg).unwrap();
        let b = l.breakdown;
        assert!(b.rotation_ce > 0.0);
        assert_eq!(b.total, b.supervised_ce + b.aux_ce);
    }

    #[test]
    fn empty_labeled_batch_is_rejected() {
        let (params, imgs, _) = tiny_setup();
        let batch = BatchImages {
            labeled: vec![],
            labels: vec![],
            unlabeled: imgs.iter().collect(),
        };
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        assert!(crae_batch_losses(&mut tape, &vars, &batch, &TrainConfig::default()).is_err());
    }

    #[test]
    fn without_unlabeled_data_heads_are_selected_by_label() {
        let (params, imgs, labels) = tiny_setup();
        let batch = BatchImages {
            labeled: imgs[..3].iter().collect(),
            labels: labels.clone(),
            unlabeled: vec![],
        };
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let l = crae_batch_losses(&mut tape, &vars, &batch, &TrainConfig::default()).unwrap();

        // independent route: per-image head of the true class, scored on its quadruple
        let pred = crate::model::predict(
            &params,
            &imgs[..3]
                .iter()
                .flat_map(|im| rotation_quadruple(im).unwrap().map(|r| r.image))
                .collect::<Vec<_>>()
                .iter()
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mut expect = 0.0;
        for row in 0..12 {
            let y = labels[row / 4];
            let p = pred.head_dists.values()[(row * 3 + y) * 4 + row % 4];
            expect -= p.ln();
        }
        expect /= 12.0;
        assert!(approx(l.breakdown.rotation_ce, expect, 1e-12));
    }

    #[test]
    fn ensemble_random_weights_are_one_hot() {
        let mut tape = Tape::new();
        let p = tape.constant(vec![50, 3], vec![1.0 / 3.0; 150]).unwrap();
        let mut rng = crate::rng::stream(4, 0);
        let HeadWeighting::Weights(w) = baseline_weights(&mut tape, Method::EnsembleRandom, p, &mut rng).unwrap() else {
            panic!("expected weights");
        };
        let mut seen = [false; 3];
        for row in tape.value(w).chunks(3) {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
            seen[row.iter().position(|&v| v == 1.0).unwrap()] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert!(baseline_weights(&mut tape, Method::S4L, p, &mut rng).is_err());
    }

    #[test]
    fn independent_ensemble_averages_head_losses() {
        let mut tape = Tape::new();
        let h0 = tape.constant(vec![1, 4], vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let h1 = tape.constant(vec![1, 4], vec![0.2, 0.6, 0.1, 0.1]).unwrap();
        let t = tape.constant(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let l = rotation_ce(&mut tape, &[h0, h1], HeadWeighting::MeanOfHeads, t).unwrap();
        assert!(approx(tape.scalar_value(l), 0.5 * (-(0.7f64.ln()) - 0.2f64.ln()), 1e-15));
    }
}
