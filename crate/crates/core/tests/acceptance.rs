//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crae_core::autodiff::{grad_check, Tape, Tensor, GRAD_CHECK_STEP};
use crae_core::data::{rotate90, DataConfig, Image};
use crae_core::experiment::{run, ExperimentSpec};
use crae_core::methods::{
    batch_losses, crae_batch_losses, craeplus_batch_losses, marginalize, sharpen, train, unlabeled_rotation_loss,
    BatchImages, Method, Phase, TrainConfig,
};
use crae_core::model::{argmax, ModelConfig, ModelParameters, ParamVars};
use crae_core::rng::stream;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Image {
    Image::new(n, n, (0..n * n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        input_dim: 16,
        backbone_widths: vec![6, 5],
        classes: 3,
        angles: 4,
        proj_dim: 3,
        head_hidden: 4,
    }
}

/// Initialized parameters with every entry jittered so biases are not all
/// zero and no structure is special.
fn jittered_params(cfg: &ModelConfig, seed: u64) -> ModelParameters {
    let mut p = ModelParameters::init(cfg, seed).unwrap();
    let mut rng = stream(seed, 1000);
    for t in p.tensors_mut() {
        for v in t.values_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    p
}

fn loss_total(
    tape: &mut Tape,
    leaves: &[crae_core::autodiff::Var],
    cfg: &ModelConfig,
    method: Method,
    phase: Phase,
    batch: &BatchImages,
    train_cfg: &TrainConfig,
) -> crae_core::Result<crae_core::autodiff::Var> {
    let vars = ParamVars::from_flat(cfg, leaves)?;
    let mut rng = stream(7, 0);
    batch_losses(tape, &vars, method, phase, batch, train_cfg, 0.5, &mut rng).map(|l| l.total)
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let cfg = small_model();
    let train_cfg = TrainConfig::default();
    let mut composites: Vec<(Method, Phase)> = Method::ALL.iter().map(|&m| (m, Phase::Main)).collect();
    composites.push((Method::FineTune, Phase::Pretext));
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut points = 0;
    for (method, phase) in composites {
        let mut seed = 0u64;
        let mut done = 0;
        while done < 5 {
            seed += 1;
            let params = jittered_params(&cfg, seed);
            let mut rng = stream(seed, 2000);
            let images: Vec<Image> = (0..6).map(|_| random_image(&mut rng, 4)).collect();
            let batch = BatchImages {
                labeled: images[..3].iter().collect(),
                labels: vec![0, 1, 2],
                unlabeled: images[3..].iter().collect(),
            };
            // stay clear of relu kinks so central differences are valid
            let mut probe = Tape::new();
            let leaves = params.register(&mut probe, true);
            loss_total(&mut probe, leaves.flat(), &cfg, method, phase, &batch, &train_cfg).unwrap();
            if probe.min_abs_relu_input().is_some_and(|m| m < 1e-3) {
                continue;
            }
            let point: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
            let err = grad_check(
                |tape, leaves| loss_total(tape, leaves, &cfg, method, phase, &batch, &train_cfg),
                &point,
                GRAD_CHECK_STEP,
            )
            .unwrap();
            if err > worst {
                worst = err;
                worst_at = format!("{method}/{phase:?} seed {seed}");
            }
            done += 1;
            points += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 120.0,
        format!("max relative error {worst:.2e} ({worst_at}) over {points} points, {secs:.1} s"),
    )
}

fn criterion_marginalize() -> Outcome {
    let mut rng = stream(2, 0);
    let (mut norm, mut avg) = (0.0f64, 0.0f64);
    let mut exact = true;
    for _ in 0..1000 {
        let c = rng.gen_range(2..8);
        let k = 4;
        let heads: Vec<f64> = (0..c).flat_map(|_| random_dist(&mut rng, k)).collect();
        let h = Tensor::new(vec![1, c, k], heads.clone()).unwrap();
        let w = Tensor::new(vec![1, c], random_dist(&mut rng, c)).unwrap();
        norm = norm.max((marginalize(&h, &w).unwrap().values().iter().sum::<f64>() - 1.0).abs());
        let j = rng.gen_range(0..c);
        let mut e = vec![0.0; c];
        e[j] = 1.0;
        let pick = marginalize(&h, &Tensor::new(vec![1, c], e).unwrap()).unwrap();
        exact &= pick.values() == &heads[j * k..(j + 1) * k];
        let uniform = marginalize(&h, &Tensor::new(vec![1, c], vec![1.0 / c as f64; c]).unwrap()).unwrap();
        for a in 0..k {
            let mean = (0..c).map(|i| heads[i * k + a]).sum::<f64>() / c as f64;
            avg = avg.max((uniform.values()[a] - mean).abs());
        }
    }
    outcome(
        norm < 1e-12 && exact && avg < 1e-12,
        format!("normalization {norm:.1e}, one-hot exact {exact}, uniform-vs-mean {avg:.1e}"),
    )
}

fn criterion_sharpen() -> Outcome {
    let mut rng = stream(3, 0);
    let (mut ident, mut argmax_ok, mut max_ok) = (0.0f64, true, true);
    for _ in 0..1000 {
        let n = rng.gen_range(2..10);
        let p = random_dist(&mut rng, n);
        let one = sharpen(&p, 1.0).unwrap();
        ident = ident.max(one.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let s = sharpen(&p, 0.5).unwrap();
        let top = argmax(&p);
        if p.iter().filter(|&&v| v == p[top]).count() == 1 {
            argmax_ok &= argmax(&s) == top;
        }
        max_ok &= s[argmax(&s)] >= p[top];
    }
    let hand = sharpen(&[0.6, 0.4], 0.5).unwrap();
    let hand_err = (hand[0] - 9.0 / 13.0).abs().max((hand[1] - 4.0 / 13.0).abs());
    outcome(
        ident < 1e-12 && argmax_ok && max_ok && hand_err < 1e-12,
        format!("T=1 identity {ident:.1e}, argmax kept {argmax_ok}, max non-decreasing {max_ok}, hand value {hand_err:.1e}"),
    )
}

fn criterion_rotation_group() -> Outcome {
    let mut rng = stream(4, 0);
    let mut ok = true;
    for _ in 0..100 {
        let img = random_image(&mut rng, 16);
        let mut r = img.clone();
        for _ in 0..4 {
            r = rotate90(&r, 1).unwrap();
        }
        ok &= r == img;
        for k1 in 0..4 {
            for k2 in 0..4 {
                let composed = rotate90(&rotate90(&img, k2).unwrap(), k1).unwrap();
                ok &= composed == rotate90(&img, (k1 + k2) % 4).unwrap();
            }
            let mut a = img.pixels().to_vec();
            let mut b = rotate90(&img, k1).unwrap().pixels().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            ok &= a == b;
        }
    }
    outcome(ok, "rot^4 = id, composition law and pixel multiset exact on 100 images")
}

fn criterion_gradient_flow() -> Outcome {
    let data = DataConfig::default();
    let cfg = ModelConfig::new(data.height * data.width, data.classes);
    let train_cfg = TrainConfig::default();
    let mut norms: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for seed in 0..10 {
        let params = ModelParameters::init(&cfg, 100 + seed).unwrap();
        let names = params.names();
        let sem: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("semantic."))
            .map(|(i, _)| i)
            .collect();
        let mut rng = stream(seed, 5000);
        let images: Vec<Image> = (0..8).map(|_| random_image(&mut rng, data.height)).collect();
        let refs: Vec<&Image> = images.iter().collect();
        for method in [Method::S4L, Method::CraeDetach, Method::Crae] {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let mut r = stream(seed, 6000);
            let loss = unlabeled_rotation_loss(&mut tape, &vars, method, &refs, &train_cfg, &mut r).unwrap();
            let grads = tape.backward(loss).unwrap();
            let norm = sem
                .iter()
                .flat_map(|&i| grads.get(vars.flat()[i]).unwrap().iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            let e = norms.entry(method.name()).or_insert((f64::INFINITY, 0.0));
            e.0 = e.0.min(norm);
            e.1 = e.1.max(norm);
        }
    }
    let (s4l, det, crae) = (norms["s4l"], norms["crae_detach"], norms["crae"]);
    outcome(
        s4l.1 == 0.0 && det.1 == 0.0 && crae.0 > 1e-8,
        format!(
            "semantic-head gradient norm: s4l max {:.1e}, crae_detach max {:.1e}, crae min {:.2e}",
            s4l.1, det.1, crae.0
        ),
    )
}

/// Final test error and diagonality curve of every run in the training
/// criteria, keyed by label.
struct SweepRuns {
    errors: BTreeMap<String, Vec<f64>>,
    first_diag: BTreeMap<String, Vec<f64>>,
    final_diag: BTreeMap<String, Vec<f64>>,
    secs: f64,
}

fn sweep() -> SweepRuns {
    let start = Instant::now();
    let data = DataConfig::default();
    let base = ModelConfig::new(data.height * data.width, data.classes);
    let wide = ModelConfig {
        proj_dim: 64,
        ..base.clone()
    };
    let mut runs = SweepRuns {
        errors: BTreeMap::new(),
        first_diag: BTreeMap::new(),
        final_diag: BTreeMap::new(),
        secs: 0.0,
    };
    let mut jobs: Vec<(String, Method, &ModelConfig)> = [
        Method::LabeledOnly,
        Method::S4L,
        Method::Crae,
        Method::CraePlus,
        Method::EnsembleRandom,
        Method::EnsembleIndependent,
        Method::CraeDetach,
    ]
    .into_iter()
    .map(|m| (m.name().to_string(), m, &base))
    .collect();
    jobs.push(("crae_d64".into(), Method::Crae, &wide));
    for seed in 0..5u64 {
        let split = data.build(seed).unwrap();
        for (label, method, model) in &jobs {
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let t = Instant::now();
            let out = train(*method, &split, model, &cfg).unwrap();
            let last = out.records.last().unwrap();
            println!(
                "    run {label:<22} seed {seed}: error {:.4}, diagonality {:.3} -> {:.3} ({:.1} s)",
                last.test_error,
                out.records[0].diagonality,
                last.diagonality,
                t.elapsed().as_secs_f64()
            );
            runs.errors.entry(label.clone()).or_default().push(last.test_error);
            runs.first_diag.entry(label.clone()).or_default().push(out.records[0].diagonality);
            runs.final_diag.entry(label.clone()).or_default().push(last.diagonality);
        }
    }
    runs.secs = start.elapsed().as_secs_f64();
    runs
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_ordering(s: &SweepRuns) -> Outcome {
    let e = |k: &str| mean(&s.errors[k]);
    let (crae, lo, s4l, er, ei, det, plus) = (
        e("crae"),
        e("labeled_only"),
        e("s4l"),
        e("ensemble_random"),
        e("ensemble_independent"),
        e("crae_detach"),
        e("crae_plus"),
    );
    let checks = [
        ("crae<labeled_only", crae < lo),
        ("s4l<labeled_only", s4l < lo),
        ("crae<ensemble_random", crae < er),
        ("crae<crae_detach|ensemble_independent", crae < det || crae < ei),
        ("crae_plus<=crae+0.01", plus <= crae + 0.01),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "mean error labeled_only {lo:.4} s4l {s4l:.4} crae {crae:.4} crae_plus {plus:.4} ensemble_random {er:.4} \
             ensemble_independent {ei:.4} crae_detach {det:.4}; sweep {:.0} s{}",
            s.secs,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; violated: {}", failed.join(", "))
            }
        ),
    )
}

fn criterion_specialization(s: &SweepRuns) -> Outcome {
    let first = mean(&s.first_diag["crae"]);
    let last = mean(&s.final_diag["crae"]);
    let plus = mean(&s.final_diag["crae_plus"]);
    outcome(
        last - first >= 0.05 && plus >= last - 0.02,
        format!("crae diagonality {first:.3} -> {last:.3}; crae_plus final {plus:.3}"),
    )
}

fn criterion_projection(s: &SweepRuns) -> Outcome {
    let (d16, d64) = (mean(&s.errors["crae"]), mean(&s.errors["crae_d64"]));
    outcome(
        (d16 - d64).abs() < 0.03,
        format!("crae mean error d=16 {d16:.4}, d=64 {d64:.4}"),
    )
}

fn criterion_determinism() -> Outcome {
    let spec = |dir: &std::path::Path| {
        let data = DataConfig {
            classes: 3,
            height: 8,
            width: 8,
            n_per_class: 40,
            n_labeled: 9,
            n_test: 30,
            ..Default::default()
        };
        ExperimentSpec {
            methods: vec![Method::Crae, Method::CraePlus, Method::EnsembleRandom],
            seeds: vec![0, 1],
            model: ModelConfig {
                backbone_widths: vec![16, 8],
                proj_dim: 4,
                ..ModelConfig::new(64, 3)
            },
            data,
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                ..Default::default()
            },
            out_dir: dir.to_path_buf(),
        }
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&spec(a.path())).unwrap();
    run(&spec(b.path())).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let same = names
        .iter()
        .all(|n| fs::read(a.path().join(n)).unwrap() == fs::read(b.path().join(n)).unwrap());
    outcome(same && names.len() == 13, format!("{} files compared byte for byte", names.len()))
}

fn criterion_degeneracy() -> Outcome {
    let cfg = small_model();
    let pinned = TrainConfig {
        alpha_min: 1.0,
        alpha_max: 1.0,
        temperature: 1.0,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let params = jittered_params(&cfg, seed);
        let mut rng = stream(seed, 3000);
        let images: Vec<Image> = (0..10).map(|_| random_image(&mut rng, 4)).collect();
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let batch = BatchImages {
            labeled: images[..4].iter().collect(),
            labels,
            unlabeled: images[4..].iter().collect(),
        };
        let mut t1 = Tape::new();
        let v1 = params.register(&mut t1, true);
        let a = crae_batch_losses(&mut t1, &v1, &batch, &pinned).unwrap();
        let mut t2 = Tape::new();
        let v2 = params.register(&mut t2, true);
        let b = craeplus_batch_losses(&mut t2, &v2, &batch, &pinned, 1.0, &mut rng).unwrap();
        worst = worst.max((a.breakdown.rotation_ce - b.breakdown.rotation_ce).abs());
    }
    outcome(worst < 1e-12, format!("max rotation-term gap {worst:.1e} over 100 batches"))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient suite", criterion_gradients());
    report(2, "marginalization algebra", criterion_marginalize());
    report(3, "sharpening algebra", criterion_sharpen());
    report(4, "rotation group", criterion_rotation_group());
    report(5, "gradient-flow contrast", criterion_gradient_flow());
    let runs = sweep();
    report(6, "method ordering", criterion_ordering(&runs));
    report(7, "head specialization", criterion_specialization(&runs));
    report(8, "projection dimension", criterion_projection(&runs));
    report(9, "determinism", criterion_determinism());
    report(10, "extension degeneracy", criterion_degeneracy());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
