//! Shared MLP backbone with a semantic classifier, an auxiliary classifier,
//! and one rotation-angle head per class behind a dimension-reducing
//! projection. A single unconditional rotation head is kept alongside for
//! the multi-task and pretrain/fine-tune baselines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Image, ANGLES};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub backbone_widths: Vec<usize>,
    pub classes: usize,
    pub angles: usize,
    pub proj_dim: usize,
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        ModelConfig {
            input_dim,
            backbone_widths: vec![256, 128, 64],
            classes,
            angles: ANGLES,
            proj_dim: 16,
            head_hidden: 32,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.backbone_widths.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let widths_ok = !self.backbone_widths.is_empty() && self.backbone_widths.iter().all(|&w| w > 0);
        if self.input_dim == 0 || !widths_ok || self.proj_dim == 0 || self.head_hidden == 0 {
            return Err(Error::invalid(format!("all model widths must be positive: {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::invalid("model needs at least 2 classes"));
        }
        if self.angles != ANGLES {
            return Err(Error::invalid(format!("angle count must be {ANGLES}")));
        }
        if self.proj_dim > self.feature_dim() {
            return Err(Error::invalid(format!(
                "projection width {} exceeds feature width {}",
                self.proj_dim,
                self.feature_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn glorot<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Linear {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.gen_range(-limit..=limit)).collect();
        Linear {
            weight: Tensor::new(vec![outputs, inputs], w).expect("finite init"),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Hidden relu layer followed by a K-way angle classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl RotationHead {
    fn init<R: Rng>(rng: &mut R, inputs: usize, hidden: usize, angles: usize) -> Self {
        RotationHead {
            hidden: Linear::glorot(rng, inputs, hidden),
            out: Linear::glorot(rng, hidden, angles),
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.out.param_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub backbone: Vec<Linear>,
    pub semantic: Linear,
    pub aux: Linear,
    pub projection: Linear,
    pub rotation_heads: Vec<RotationHead>,
    pub pretext: RotationHead,
}

impl ModelParameters {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, rng::INIT);
        let mut backbone = Vec::with_capacity(config.backbone_widths.len());
        let mut width = config.input_dim;
        for &w in &config.backbone_widths {
            backbone.push(Linear::glorot(&mut rng, width, w));
            width = w;
        }
        let semantic = Linear::glorot(&mut rng, width, config.classes);
        let aux = Linear::glorot(&mut rng, width, config.classes);
        let projection = Linear::glorot(&mut rng, width, config.proj_dim);
        let rotation_heads = (0..config.classes)
            .map(|_| RotationHead::init(&mut rng, config.proj_dim, config.head_hidden, config.angles))
            .collect();
        let pretext = RotationHead::init(&mut rng, config.proj_dim, config.head_hidden, config.angles);
        Ok(ModelParameters {
            config: config.clone(),
            backbone,
            semantic,
            aux,
            projection,
            rotation_heads,
            pretext,
        })
    }

    /// Fresh semantic head, as used when fine-tuning after pretraining.
    pub fn reinit_semantic(&mut self, seed: u64) {
        let mut rng = rng::stream(seed, rng::REINIT);
        self.semantic = Linear::glorot(&mut rng, self.semantic.inputs(), self.semantic.outputs());
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out: Vec<(String, &Linear)> = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{i}"), l));
        }
        out.push(("semantic".into(), &self.semantic));
        out.push(("aux".into(), &self.aux));
        out.push(("projection".into(), &self.projection));
        for (k, h) in self.rotation_heads.iter().enumerate() {
            out.push((format!("rotation.{k}.hidden"), &h.hidden));
            out.push((format!("rotation.{k}.out"), &h.out));
        }
        out.push(("pretext.hidden".into(), &self.pretext.hidden));
        out.push(("pretext.out".into(), &self.pretext.out));
        out
    }

    /// Parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        self.linears()
            .into_iter()
            .flat_map(|(n, _)| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    /// All parameter tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.linears()
            .into_iter()
            .flat_map(|(_, l)| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut layers: Vec<&mut Linear> = self.backbone.iter_mut().collect();
        layers.push(&mut self.semantic);
        layers.push(&mut self.aux);
        layers.push(&mut self.projection);
        for h in &mut self.rotation_heads {
            layers.push(&mut h.hidden);
            layers.push(&mut h.out);
        }
        layers.push(&mut self.pretext.hidden);
        layers.push(&mut self.pretext.out);
        layers
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn backbone_param_count(&self) -> usize {
        self.backbone.iter().map(Linear::param_count).sum()
    }

    /// Projection plus all class-conditional heads.
    pub fn rotation_branch_param_count(&self) -> usize {
        self.projection.param_count() + self.rotation_heads.iter().map(RotationHead::param_count).sum::<usize>()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Registers every parameter as a leaf, in canonical order.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.leaf(t, requires_grad)).collect();
        ParamVars::from_flat(&self.config, &vars).expect("layout matches config")
    }

    /// One line per tensor: `name dims value...`, where dims are joined by
    /// `x` and values carry 17 significant digits.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        for (name, t) in self.names().iter().zip(self.tensors()) {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = write!(s, "{name} {}", dims.join("x"));
            for v in t.values() {
                let _ = write!(s, " {v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint(config: &ModelConfig, text: &str, path: &Path) -> Result<Self> {
        let mut params = ModelParameters::init(config, 0)?;
        let names = params.names();
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != names.len() {
            return Err(parse_err(
                lines.len(),
                format!("expected {} tensors, found {}", names.len(), lines.len()),
            ));
        }
        for (i, ((line, name), tensor)) in lines.iter().zip(&names).zip(params.tensors_mut()).enumerate() {
            let mut fields = line.split_whitespace();
            let got = fields.next().unwrap_or_default();
            if got != name {
                return Err(parse_err(i + 1, format!("expected tensor `{name}`, found `{got}`")));
            }
            let dims: Vec<usize> = fields
                .next()
                .unwrap_or_default()
                .split('x')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(i + 1, format!("bad shape: {e}")))?;
            if dims != tensor.shape() {
                return Err(parse_err(
                    i + 1,
                    format!("shape {dims:?} does not match {:?}", tensor.shape()),
                ));
            }
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(i + 1, format!("bad value: {e}")))?;
            *tensor = Tensor::new(dims, values).map_err(|e| parse_err(i + 1, e.to_string()))?;
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(config: &ModelConfig, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(config, &text, path)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.affine(self.weight, x, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub hidden: LinearVars,
    pub out: LinearVars,
}

impl HeadVars {
    /// Unnormalized angle scores `[rows, K]`.
    pub fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.hidden.apply(tape, x)?;
        let h = tape.relu(h);
        self.out.apply(tape, h)
    }

    fn dist(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = self.logits(tape, x)?;
        Ok(tape.softmax(z))
    }
}

/// Tape handles for every parameter, mirroring [`ModelParameters`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub backbone: Vec<LinearVars>,
    pub semantic: LinearVars,
    pub aux: LinearVars,
    pub projection: LinearVars,
    pub rotation_heads: Vec<HeadVars>,
    pub pretext: HeadVars,
    flat: Vec<Var>,
}

/// Distributions produced by one forward pass. `head_dists` has shape
/// `[rows, classes, angles]`.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub features: Var,
    pub p_y: Var,
    pub p_aux: Var,
    pub head_dists: Var,
}

impl ParamVars {
    /// Rebuilds the structure from leaves listed in canonical order.
    pub fn from_flat(config: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let expected = 2 * (config.backbone_widths.len() + 3 + 2 * config.classes + 2);
        if vars.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameter leaves, got {}",
                vars.len()
            )));
        }
        let mut it = vars.chunks(2).map(|p| LinearVars {
            weight: p[0],
            bias: p[1],
        });
        let mut next = || it.next().unwrap();
        let backbone = (0..config.backbone_widths.len()).map(|_| next()).collect();
        let semantic = next();
        let aux = next();
        let projection = next();
        let rotation_heads = (0..config.classes)
            .map(|_| HeadVars {
                hidden: next(),
                out: next(),
            })
            .collect();
        let pretext = HeadVars {
            hidden: next(),
            out: next(),
        };
        Ok(ParamVars {
            backbone,
            semantic,
            aux,
            projection,
            rotation_heads,
            pretext,
            flat: vars.to_vec(),
        })
    }

    /// Leaves in canonical order, matching [`ModelParameters::tensors`].
    pub fn flat(&self) -> &[Var] {
        &self.flat
    }

    pub fn classes(&self) -> usize {
        self.rotation_heads.len()
    }

    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.backbone {
            let z = layer.apply(tape, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    pub fn semantic_dist(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let z = self.semantic.apply(tape, features)?;
        Ok(tape.softmax(z))
    }

    pub fn aux_dist(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let z = self.aux.apply(tape, features)?;
        Ok(tape.softmax(z))
    }

    /// Angle distribution of every class-conditional head, each `[rows, K]`.
    pub fn rotation_dists(&self, tape: &mut Tape, features: Var) -> Result<Vec<Var>> {
        let p = self.projection.apply(tape, features)?;
        self.rotation_heads.iter().map(|h| h.dist(tape, p)).collect()
    }

    /// Stacked `[rows, C, K]` head distributions.
    pub fn head_dists(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let heads = self.rotation_dists(tape, features)?;
        tape.stack(&heads)
    }

    /// Unconditional angle distribution `[rows, K]`.
    pub fn pretext_dist(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let p = self.projection.apply(tape, features)?;
        self.pretext.dist(tape, p)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<ForwardOutput> {
        let features = self.features(tape, x)?;
        let p_y = self.semantic_dist(tape, features)?;
        let p_aux = self.aux_dist(tape, features)?;
        let head_dists = self.head_dists(tape, features)?;
        Ok(ForwardOutput {
            features,
            p_y,
            p_aux,
            head_dists,
        })
    }
}

/// Stacks flattened images into a `[n, H*W]` matrix.
pub fn images_to_tensor<'a, I>(images: I) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a Image>,
{
    let mut values = Vec::new();
    let mut rows = 0;
    let mut dim = None;
    for img in images {
        let n = img.pixels().len();
        if *dim.get_or_insert(n) != n {
            return Err(Error::dim("images_to_tensor", "images differ in size"));
        }
        values.extend_from_slice(img.pixels());
        rows += 1;
    }
    let dim = dim.ok_or_else(|| Error::invalid("no images"))?;
    Tensor::new(vec![rows, dim], values)
}

/// Plain-valued forward pass over frozen parameters.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub p_y: Tensor,
    pub p_aux: Tensor,
    pub head_dists: Tensor,
}

pub fn predict(params: &ModelParameters, images: &[&Image]) -> Result<Predictions> {
    let x = images_to_tensor(images.iter().copied())?;
    if x.shape()[1] != params.config.input_dim {
        return Err(Error::dim(
            "forward",
            format!("images have {} pixels, model expects {}", x.shape()[1], params.config.input_dim),
        ));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let xv = tape.leaf(&x, false);
    let out = vars.forward(&mut tape, xv)?;
    Ok(Predictions {
        p_y: tape.to_tensor(out.p_y),
        p_aux: tape.to_tensor(out.p_aux),
        head_dists: tape.to_tensor(out.head_dists),
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class decisions at test time. Rotation heads are never consulted.
pub fn test_predict(params: &ModelParameters, images: &[&Image], use_aux: bool) -> Result<Vec<usize>> {
    let pred = predict(params, images)?;
    let dist = if use_aux { &pred.p_aux } else { &pred.p_y };
    Ok((0..dist.rows()).map(|i| argmax(dist.row(i))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_dim: 16,
            backbone_widths: vec![12, 8],
            classes: 3,
            angles: 4,
            proj_dim: 4,
            head_hidden: 5,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias_and_bounded_weights() {
        let cfg = ModelConfig::new(256, 4);
        let a = ModelParameters::init(&cfg, 5).unwrap();
        let b = ModelParameters::init(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParameters::init(&cfg, 6).unwrap());
        for (name, t) in a.names().iter().zip(a.tensors()) {
            if name.ends_with(".bias") {
                assert!(t.values().iter().all(|&v| v == 0.0), "{name}");
            } else {
                let (fan_out, fan_in) = (t.shape()[0], t.shape()[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                assert!(t.values().iter().all(|v| v.abs() <= limit), "{name}");
            }
        }
    }

    #[test]
    fn rotation_branch_is_small_relative_to_backbone() {
        let p = ModelParameters::init(&ModelConfig::new(256, 4), 0).unwrap();
        assert_eq!(p.rotation_heads.len(), 4);
        assert!((p.rotation_branch_param_count() as f64) < 0.1 * p.backbone_param_count() as f64);
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.proj_dim = 9;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.backbone_widths = vec![];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.classes = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let cfg = small_config();
        let p = ModelParameters::init(&cfg, 1).unwrap();
        let imgs: Vec<Image> = (0..5)
            .map(|i| Image::new(4, 4, (0..16).map(|j| ((i * 16 + j) % 7) as f64 / 7.0).collect()).unwrap())
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let out = predict(&p, &refs).unwrap();
        assert_eq!(out.head_dists.shape(), &[5, 3, 4]);
        for t in [&out.p_y, &out.p_aux, &out.head_dists] {
            for r in 0..t.rows() {
                assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let again = predict(&p, &refs).unwrap();
        assert_eq!(out.p_y, again.p_y);
        assert_eq!(out.head_dists, again.head_dists);
    }

    #[test]
    fn zero_images_are_finite() {
        let p = ModelParameters::init(&small_config(), 2).unwrap();
        let z = Image::zeros(4, 4);
        let out = predict(&p, &[&z, &z]).unwrap();
        assert!(out.p_y.all_finite() && out.head_dists.all_finite());
    }

    #[test]
    fn forward_rejects_wrong_input_size() {
        let p = ModelParameters::init(&small_config(), 2).unwrap();
        let z = Image::zeros(5, 5);
        assert!(predict(&p, &[&z]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.1, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn test_predict_dispatches_on_aux() {
        let cfg = small_config();
        let mut p = ModelParameters::init(&cfg, 3).unwrap();
        // force the two classifiers to disagree: semantic favours class 2, aux class 1
        for (l, favoured) in [(&mut p.semantic, 2usize), (&mut p.aux, 1usize)] {
            l.weight.values_mut().iter_mut().for_each(|v| *v = 0.0);
            l.bias.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i == favoured { 1.0 } else { 0.0 });
        }
        let z = Image::zeros(4, 4);
        assert_eq!(test_predict(&p, &[&z], false).unwrap(), vec![2]);
        assert_eq!(test_predict(&p, &[&z], true).unwrap(), vec![1]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = small_config();
        let p = ModelParameters::init(&cfg, 4).unwrap();
        let text = p.to_checkpoint();
        assert_eq!(text.lines().count(), p.tensors().len());
        assert!(text.starts_with("backbone.0.weight 12x16 "));
        let q = ModelParameters::from_checkpoint(&cfg, &text, Path::new("mem")).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn checkpoint_rejects_shape_mismatch() {
        let cfg = small_config();
        let p = ModelParameters::init(&cfg, 4).unwrap();
        let mut other = cfg.clone();
        other.head_hidden = 6;
        assert!(ModelParameters::from_checkpoint(&other, &p.to_checkpoint(), Path::new("mem")).is_err());
    }
}
