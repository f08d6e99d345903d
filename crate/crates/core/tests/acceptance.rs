//! The ten acceptance criteria. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) before asserting.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use rand::Rng as _;

use cytosynth::cgan::{
    build_cgan_generator, build_patch_discriminator, cgan_d_loss, cgan_g_loss, cgan_generate, d_loss_and_grads,
    g_loss_and_grads, train_cgan, CganConfig, Norm,
};
use cytosynth::classify::{
    assemble_condition, audit_leakage, synthesize_gan_baseline, train_and_eval, train_gan_baseline, write_gan_baseline,
    AblationReport, AccuracyTable, ClassifyConfig, Condition, ImageBank, Ingredient,
};
use cytosynth::data::{split_corpus, SplitRatio, Subset};
use cytosynth::imaging::{
    adaptive_threshold, extract_mask, load_mask_png, resize_mask_nearest, BinaryMask, ExtractParams, GrayImage,
};
use cytosynth::maskgan::{
    gan_d_loss, gan_d_loss_and_grads, gan_g_loss, gan_g_loss_and_grads, generate_mask, maybe_flip, smooth_labels,
    train_maskgan, train_maskgan_traced, LatentSeed, MaskGanConfig, NoiseGanTrainer,
};
use cytosynth::nn::{Network, Tensor};
use cytosynth::rng::derive;
use cytosynth::synthesis::{n_per_class_for_ratio, synthesize_dataset, synthesize_sample, write_synthetic, MASK_DIR};
use cytosynth::ClassLabel;

fn verdict(n: u32, what: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[acceptance] criterion {n:>2} {tag}: {what} ({detail})"
    );
}

// ---------------------------------------------------------------- 1

fn oracle_bce(scores: &[f64], t: f64) -> f64 {
    let mut s = 0.0;
    for &p in scores {
        s -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    s / scores.len() as f64
}

fn oracle_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

#[test]
fn criterion_01_loss_oracles() {
    let mut rng = derive(1, "acceptance-losses", 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let scores = |rng: &mut cytosynth::rng::Rng| -> Vec<f64> {
            let n = rng.random_range(1..=32);
            (0..n).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect()
        };
        let real = scores(&mut rng);
        let fake = scores(&mut rng);
        let n = rng.random_range(1..=48);
        let gen: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let tgt: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let lambda = rng.random_range(0.0..200.0);
        let (rt, ft) = (rng.random_range(0.9..=1.0), rng.random_range(0.0..=0.1));

        let pairs = [
            (
                cgan_d_loss(&real, &fake).unwrap(),
                oracle_bce(&real, 1.0) + oracle_bce(&fake, 0.0),
            ),
            (
                cgan_g_loss(&fake, &gen, &tgt, lambda).unwrap(),
                oracle_bce(&fake, 1.0) + lambda * oracle_mse(&gen, &tgt),
            ),
            (
                gan_d_loss(&real, &fake, rt, ft).unwrap(),
                oracle_bce(&real, rt) + oracle_bce(&fake, ft),
            ),
            (gan_g_loss(&fake).unwrap(), oracle_bce(&fake, 1.0)),
        ];
        for (got, want) in pairs {
            worst = worst.max((got - want).abs());
        }
    }
    let ln2 = 2f64.ln();
    let half = [0.5];
    let closed = [
        (gan_g_loss(&half).unwrap(), -(0.5f64.ln())),
        (cgan_g_loss(&half, &[0.3], &[0.3], 100.0).unwrap(), -(0.5f64.ln())),
        (cgan_d_loss(&half, &half).unwrap(), 2.0 * ln2),
        (gan_d_loss(&half, &half, 1.0, 0.0).unwrap(), 2.0 * ln2),
    ];
    let closed_err = closed.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = worst < 1e-6 && closed_err < 1e-9;
    verdict(
        1,
        "loss formulas match scalar oracles",
        pass,
        &format!("max random err {worst:.2e}, closed-form err {closed_err:.2e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

/// Largest relative error between analytic and central-difference gradients
/// over every trainable scalar of `net`.
fn fd_max_rel<N: Network>(net: &mut N, loss: impl Fn(&N) -> (f64, Vec<Option<Tensor>>)) -> f64 {
    let h = 1e-6;
    let (_, analytic) = loss(net);
    let ids: Vec<_> = net.params().ids().collect();
    let mut worst = 0.0f64;
    for (i, id) in ids.into_iter().enumerate() {
        if !net.params().is_trainable(id) {
            continue;
        }
        let a = analytic[i]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(net.params().get(id).shape()));
        for j in 0..a.len() {
            let orig = net.params().get(id).data()[j];
            net.params_mut().get_mut(id).data_mut()[j] = orig + h;
            let up = loss(net).0;
            net.params_mut().get_mut(id).data_mut()[j] = orig - h;
            let down = loss(net).0;
            net.params_mut().get_mut(id).data_mut()[j] = orig;
            let num = (up - down) / (2.0 * h);
            let an = a.data()[j];
            worst = worst.max((an - num).abs() / an.abs().max(num.abs()).max(1e-6));
        }
    }
    worst
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, stream: u64) -> Tensor {
    let mut rng = derive(2, "acceptance-gradcheck", stream);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn criterion_02_gradient_checks() {
    let ccfg = CganConfig {
        image_size: 8,
        depth: 2,
        gen_channels: 2,
        max_channels: 4,
        disc_channels: 2,
        disc_layers: 1,
        ..Default::default()
    };
    let mut gen = build_cgan_generator(&ccfg).unwrap();
    let mut disc = build_patch_discriminator(&ccfg).unwrap();
    let masks = Tensor::from_vec(
        &[2, 1, 8, 8],
        random_tensor(&[128], 0.0, 1.0, 0)
            .data()
            .iter()
            .map(|v| v.round())
            .collect(),
    )
    .unwrap();
    let images = random_tensor(&[2, 3, 8, 8], 0.0, 1.0, 1);
    let fake = random_tensor(&[2, 3, 8, 8], 0.0, 1.0, 2);

    let mcfg = MaskGanConfig {
        latent_dim: 4,
        image_size: 8,
        gen_channels: 4,
        disc_channels: 2,
        disc_layers: 1,
        ..Default::default()
    };
    let (mut mgen, mut mdisc) = NoiseGanTrainer::new(&mcfg, 1).unwrap().into_parts();
    let real_masks = Tensor::from_vec(
        &[2, 1, 8, 8],
        random_tensor(&[128], 0.0, 1.0, 3)
            .data()
            .iter()
            .map(|v| v.round())
            .collect(),
    )
    .unwrap();
    let fake_maps = random_tensor(&[2, 1, 8, 8], 0.0, 1.0, 4);
    let z = random_tensor(&[2, 4], -2.0, 2.0, 5);

    let counts = [
        gen.param_count(),
        disc.param_count(),
        mgen.param_count(),
        mdisc.param_count(),
    ];
    assert!(
        counts.iter().all(|c| *c <= 1000),
        "miniature nets too large: {counts:?}"
    );

    let errs = [
        (
            "cgan D",
            fd_max_rel(&mut disc, |d| d_loss_and_grads(d, &masks, &images, &fake)),
        ),
        ("cgan G", {
            let d = disc.clone();
            fd_max_rel(&mut gen, |g| {
                let (l, gr) = g_loss_and_grads(g, &d, &masks, &images, 100.0);
                (l.total, gr)
            })
        }),
        (
            "gan D",
            fd_max_rel(&mut mdisc, |d| {
                gan_d_loss_and_grads(d, &real_masks, &fake_maps, 0.93, 0.04)
            }),
        ),
        ("gan G", {
            let d = mdisc.clone();
            fd_max_rel(&mut mgen, |g| gan_g_loss_and_grads(g, &d, &z))
        }),
    ];
    let pass = errs.iter().all(|(_, e)| *e < 1e-3);
    let detail = errs
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        2,
        "analytic gradients match finite differences",
        pass,
        &format!("{detail}; params {counts:?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn brute_threshold(g: &GrayImage, window: usize, offset: f64) -> Vec<u8> {
    let (h, w) = (g.height() as isize, g.width() as isize);
    let r = (window / 2) as isize;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0f64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sy = (y + dy).clamp(0, h - 1) as usize;
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    sum += f64::from(g.get(sy, sx));
                }
            }
            let mean = sum / (window * window) as f64;
            out.push(u8::from(f64::from(g.get(y as usize, x as usize)) < mean - offset));
        }
    }
    out
}

#[test]
fn criterion_03_segmentation_oracle() {
    let mut rng = derive(3, "acceptance-threshold", 0);
    let mut exact = 0;
    for _ in 0..100 {
        let data: Vec<f32> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = GrayImage::new(16, 16, data).unwrap();
        let window = [3, 5, 7, 15][rng.random_range(0..4)];
        let offset = rng.random_range(0.0..0.1);
        let got = adaptive_threshold(&g, window, offset).unwrap();
        exact += usize::from(got.as_slice() == brute_threshold(&g, window, offset).as_slice());
    }
    let (imgs, masks) = common::toy(25, 64);
    let ious: Vec<f64> = imgs
        .iter()
        .zip(&masks)
        .map(|(i, m)| {
            extract_mask(&i.image, &ExtractParams::default())
                .unwrap()
                .iou(m)
                .unwrap()
        })
        .collect();
    let min = ious.iter().cloned().fold(1.0, f64::min);
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    let pass = exact == 100 && ious.len() == 50 && min >= 0.8;
    verdict(
        3,
        "thresholding is exact and extraction recovers nuclei",
        pass,
        &format!(
            "{exact}/100 bit-exact, IoU min {min:.3} mean {mean:.3} over {}",
            ious.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_cgan_overfit() {
    let (imgs, masks) = common::toy(2, 64);
    let pairs = common::pairs(&imgs, &masks);
    let cfg = CganConfig {
        image_size: 64,
        depth: 5,
        gen_channels: 16,
        max_channels: 128,
        disc_channels: 16,
        max_epochs: 300,
        ..Default::default()
    };
    let ckpt = train_cgan(&pairs, &pairs, &cfg).unwrap();
    let mse = pairs
        .iter()
        .map(|(m, x)| cgan_generate(&ckpt, m).unwrap().mse(x).unwrap())
        .sum::<f64>()
        / pairs.len() as f64;
    let mut running = f64::INFINITY;
    let mut monotone = true;
    for (prev, l) in std::iter::once(None).chain(ckpt.log.iter().map(Some)).zip(&ckpt.log) {
        running = running.min(l.criterion);
        monotone &= l.best_criterion == running;
        if let Some(p) = prev {
            monotone &= l.best_criterion <= p.best_criterion;
        }
    }
    let best = ckpt.log.iter().map(|l| l.criterion).fold(f64::INFINITY, f64::min);
    let pass = mse < 0.02 && monotone && ckpt.criterion == best && ckpt.log.len() == 300;
    verdict(
        4,
        "conditional generator overfits four pairs",
        pass,
        &format!(
            "best epoch {}, reconstruction MSE {mse:.4}, running minimum ok: {monotone}",
            ckpt.epoch
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

struct MaskGanRun {
    label: ClassLabel,
    first10: f64,
    last: f64,
    gen_frac: f64,
    train_frac: f64,
}

/// One 400-epoch run per class on 8 toy masks, shared by 5a and 5b.
fn mask_gan_runs() -> &'static [MaskGanRun] {
    static RUNS: OnceLock<Vec<MaskGanRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let (imgs, masks) = common::toy(8, 64);
        ClassLabel::ALL
            .iter()
            .map(|&label| {
                let lm = common::labeled_masks(&imgs, &masks, label);
                assert_eq!(lm.len(), 8);
                let mut cfg = MaskGanConfig {
                    image_size: 64,
                    latent_dim: 128,
                    gen_channels: 64,
                    gen_norm: Norm::Instance,
                    disc_channels: 8,
                    disc_layers: 2,
                    disc_lr_scale: 0.5,
                    max_epochs: 400,
                    batch_size: 1,
                    class_label: label,
                    ..Default::default()
                };
                cfg.adam.lr = 1e-4;
                let ckpt = train_maskgan(&lm, &cfg).unwrap();
                let gen_frac = (0..100)
                    .map(|i| {
                        let z = LatentSeed::derive(77, i, cfg.latent_dim).unwrap();
                        generate_mask(&ckpt, &z).unwrap().foreground_fraction()
                    })
                    .sum::<f64>()
                    / 100.0;
                MaskGanRun {
                    label,
                    first10: ckpt.log[..10].iter().map(|l| l.g_loss).sum::<f64>() / 10.0,
                    last: ckpt.log.last().unwrap().g_loss,
                    gen_frac,
                    train_frac: lm.iter().map(|m| m.mask.foreground_fraction()).sum::<f64>() / 8.0,
                }
            })
            .collect()
    })
}

#[test]
fn criterion_05a_mask_gan_generator_loss_falls() {
    let runs = mask_gan_runs();
    let pass = runs.iter().all(|r| r.last < r.first10);
    let detail = runs
        .iter()
        .map(|r| format!("{}: first-10 mean {:.3}, final {:.3}", r.label, r.first10, r.last))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        5,
        "(a) final mask generator loss below its first-10-epoch mean",
        pass,
        &detail,
    );
    assert!(pass, "{detail}");
}

#[test]
fn criterion_05b_mask_gan_foreground_fraction() {
    let runs = mask_gan_runs();
    let pass = runs.iter().all(|r| (r.gen_frac - r.train_frac).abs() <= 0.15);
    let detail = runs
        .iter()
        .map(|r| format!("{}: generated {:.3}, training {:.3}", r.label, r.gen_frac, r.train_frac))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        5,
        "(b) generated foreground fraction within 0.15 of the training masks",
        pass,
        &detail,
    );
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_composition_identity() {
    let (cgan, b, m) = common::tiny_models();
    let dir = tempfile::tempdir().unwrap();
    let mut same = 0;
    for seed in 0..20u64 {
        let (label, mg) = if seed % 2 == 0 {
            (ClassLabel::Benign, &b)
        } else {
            (ClassLabel::Malignant, &m)
        };
        let z = LatentSeed::derive(seed, 0, mg.config.latent_dim).unwrap();
        let s = synthesize_sample(&cgan, mg, label, &z).unwrap();
        let sub = dir.path().join(seed.to_string());
        let manifest = write_synthetic(&sub, std::slice::from_ref(&s), 1, seed, None, false).unwrap();
        let stored = load_mask_png(&sub.join(MASK_DIR).join(&manifest.samples[0].id)).unwrap();
        let again = cgan_generate(&cgan, &stored).unwrap();
        let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let ok = stored == s.mask
            && bits(again.as_slice()) == bits(s.image.as_slice())
            && generate_mask(mg, &z).unwrap() == s.mask;
        same += usize::from(ok);
    }
    verdict(
        6,
        "synthetic image equals the image generator applied to its stored mask",
        same == 20,
        &format!("{same}/20 seeds bitwise equal"),
    );
    assert_eq!(same, 20);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_protocol_arithmetic() {
    let (imgs, _) = common::toy(75, 16);
    let mut shapes = BTreeSet::new();
    for seed in [0u64, 1, 42, 2026] {
        let s = split_corpus(&imgs, SplitRatio::default(), seed).unwrap();
        let per_class: Vec<_> = ClassLabel::ALL
            .iter()
            .map(|l| [Subset::Train, Subset::Val, Subset::Test].map(|sub| s.ids_of(sub, *l).len()))
            .collect();
        shapes.insert((s.train.len(), s.val.len(), s.test.len(), per_class));
    }
    let split = split_corpus(&imgs, SplitRatio::default(), 0).unwrap();
    let train_counts: Vec<usize> = ClassLabel::ALL
        .iter()
        .map(|l| split.ids_of(Subset::Train, *l).len())
        .collect();
    let n = n_per_class_for_ratio(&train_counts, 2);
    let (cgan, b, m) = common::tiny_models();
    let samples = synthesize_dataset(&cgan, &[&b, &m], n, 0).unwrap();
    let benign = samples.iter().filter(|s| s.label == ClassLabel::Benign).count();
    let want = (90, 30, 30, vec![[45, 15, 15], [45, 15, 15]]);
    let pass = shapes.len() == 1 && shapes.contains(&want) && n == 90 && benign == 90 && samples.len() == 180;
    verdict(
        7,
        "split and synthesis counts",
        pass,
        &format!(
            "splits {shapes:?}, synthetic {benign}/{} per class, {} total",
            samples.len() - benign,
            samples.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_leakage_audit() {
    let (imgs, _) = common::toy(10, 16);
    let split = split_corpus(&imgs, SplitRatio::default(), 5).unwrap();
    let (cgan, b, m) = common::tiny_models();
    let dir = tempfile::tempdir().unwrap();
    let prop_dir = dir.path().join("prop");
    let prop = write_synthetic(
        &prop_dir,
        &synthesize_dataset(&cgan, &[&b, &m], 4, 5).unwrap(),
        4,
        5,
        None,
        false,
    )
    .unwrap();
    let gcfg = MaskGanConfig {
        latent_dim: 8,
        image_size: 16,
        gen_channels: 8,
        disc_channels: 4,
        disc_layers: 1,
        max_epochs: 1,
        batch_size: 4,
        ..Default::default()
    };
    let baseline: Vec<_> = ClassLabel::ALL
        .iter()
        .map(|l| {
            let own: Vec<_> = imgs
                .iter()
                .filter(|i| i.label == *l && split.subset_of(&i.id) == Some(Subset::Train))
                .cloned()
                .collect();
            train_gan_baseline(
                &own,
                &MaskGanConfig {
                    class_label: *l,
                    ..gcfg.clone()
                },
            )
            .unwrap()
        })
        .collect();
    let gan_dir = dir.path().join("gan");
    let refs: Vec<_> = baseline.iter().collect();
    let gan = write_gan_baseline(
        &gan_dir,
        &synthesize_gan_baseline(&refs, 4, 5).unwrap(),
        4,
        5,
        None,
        false,
    )
    .unwrap();

    let held_out: BTreeSet<&str> = split.val.iter().chain(&split.test).map(String::as_str).collect();
    let train: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
    let names = ["orig", "orig+prop", "orig+trad", "orig+trad+prop", "orig+gan"];
    let mut sets = Vec::new();
    let mut leaks = 0;
    for name in names {
        let set = assemble_condition(&split, &Condition::parse(name).unwrap(), Some(&prop), Some(&gan)).unwrap();
        audit_leakage(&split, &set).unwrap();
        for it in &set.items {
            let bad = held_out.contains(it.id.as_str())
                || (it.source == Ingredient::Orig && !train.contains(it.id.as_str()))
                || (it.source != Ingredient::Orig && (it.transform || train.contains(it.id.as_str())));
            leaks += usize::from(bad);
        }
        sets.push(set);
    }

    let mut bank = ImageBank::from_corpus(&imgs);
    bank.add_synthetic(Ingredient::Prop, &prop_dir, &prop).unwrap();
    bank.add_synthetic(Ingredient::Gan, &gan_dir, &gan).unwrap();
    let cfg = ClassifyConfig {
        input_size: 16,
        width: 4,
        epochs: 1,
        batch_size: 8,
        ..Default::default()
    };
    let results = train_and_eval("small-cnn", &sets, &split, &bank, &cfg).unwrap();
    let test_ids: Vec<&str> = split.test.iter().map(String::as_str).collect();
    let shared = results
        .iter()
        .all(|r| r.predictions.iter().map(|p| p.id.as_str()).collect::<Vec<_>>() == test_ids);
    let rerun = train_and_eval("small-cnn", &sets[..1], &split, &bank, &cfg).unwrap();
    let same_seed = rerun[0] == results[0];
    let pass = leaks == 0 && shared && same_seed && results.len() == 5;
    verdict(
        8,
        "no synthetic or transformed ids reach val/test",
        pass,
        &format!("{leaks} leaked ids across 5 conditions, shared test set: {shared}, reproducible: {same_seed}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_end_to_end_smoke() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_cytosynth"))
            .args(args)
            .arg("--config")
            .arg(&config)
            .arg("--output-root")
            .arg(root)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let start = std::time::Instant::now();
    run(&["make-toy-corpus", "--out", "corpus"]);
    run(&["split", "--root", "corpus", "--out", "split.json"]);
    run(&["extract-masks", "--in", "corpus", "--out", "masks"]);
    run(&[
        "train-cgan",
        "--masks",
        "masks",
        "--val-split",
        "split.json",
        "--out",
        "ckpt/cgan.bin",
    ]);
    run(&[
        "train-maskgan",
        "--masks",
        "masks",
        "--class",
        "benign",
        "--split",
        "split.json",
        "--out",
        "ckpt/mg-benign.bin",
    ]);
    run(&[
        "train-maskgan",
        "--masks",
        "masks",
        "--class",
        "malignant",
        "--split",
        "split.json",
        "--out",
        "ckpt/mg-malignant.bin",
    ]);
    run(&["train-gan-baseline", "--split", "split.json", "--out", "ganbase"]);
    run(&[
        "synthesize",
        "--cgan",
        "ckpt/cgan.bin",
        "--maskgan-benign",
        "ckpt/mg-benign.bin",
        "--maskgan-malignant",
        "ckpt/mg-malignant.bin",
        "--train-manifest",
        "split.json",
        "--out",
        "synthetic",
    ]);
    run(&[
        "ablate",
        "--split",
        "split.json",
        "--synthetic",
        "synthetic",
        "--gan-baseline",
        "ganbase",
        "--out",
        "results.csv",
    ]);
    run(&[
        "report",
        "--results",
        "results.json",
        "--corpus",
        "corpus",
        "--masks",
        "masks",
        "--synthetic",
        "synthetic",
        "--checkpoint",
        "ckpt/cgan.bin",
        "--checkpoint",
        "ckpt/mg-benign.bin",
        "--out",
        "report",
    ]);
    let table = AccuracyTable::from_csv(&std::fs::read_to_string(root.join("results.csv")).unwrap()).unwrap();
    let report = AblationReport::load(&root.join("results.json")).unwrap();
    report.verify().unwrap();
    let conditions = ["orig", "orig+prop", "orig+trad", "orig+trad+prop", "orig+gan"];
    let cells: Vec<Option<f64>> = conditions.iter().map(|c| table.get("small-cnn", c)).collect();
    let orig = cells[0].unwrap_or(0.0);
    let pass = cells.iter().all(Option::is_some) && orig >= 95.0;
    let shown = conditions
        .iter()
        .zip(&cells)
        .map(|(c, v)| format!("{c} {}", v.map_or("missing".into(), |v| format!("{v:.1}"))))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        9,
        "toy pipeline completes and small-cnn learns the originals",
        pass,
        &format!("{shown}; {:.0}s", start.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_stabilizer_statistics() {
    let in_real = |t: f64| (0.9..=1.0).contains(&t);
    let in_fake = |t: f64| (0.0..=0.1).contains(&t);
    let mut ranges_ok = true;
    let mut rates = Vec::new();
    for (k, p) in [0.05, 0.2, 0.5].into_iter().enumerate() {
        let mut rng = derive(10, "acceptance-stabilizer", k as u64);
        let mut flips = 0;
        for _ in 0..10_000 {
            let (r, f) = (smooth_labels(true, &mut rng), smooth_labels(false, &mut rng));
            ranges_ok &= in_real(r) && in_fake(f);
            let (r2, f2) = maybe_flip(r, f, p, &mut rng);
            flips += usize::from((r2, f2) == (f, r));
        }
        rates.push((p, flips as f64 / 1e4));
    }

    // The same statistics as they occur inside training: 8 masks, batch 1,
    // 1250 epochs = 10^4 discriminator updates.
    let (imgs, masks) = common::toy(8, 64);
    let small: Vec<BinaryMask> = masks.iter().map(|m| resize_mask_nearest(m, 8, 8)).collect();
    let lm = common::labeled_masks(&imgs, &small, ClassLabel::Malignant);
    let cfg = MaskGanConfig {
        latent_dim: 4,
        image_size: 8,
        gen_channels: 4,
        disc_channels: 2,
        disc_layers: 1,
        max_epochs: 1250,
        batch_size: 1,
        flip_probability: 0.05,
        class_label: ClassLabel::Malignant,
        ..Default::default()
    };
    let (_, trace) = train_maskgan_traced(&lm, &cfg).unwrap();
    let n = trace.d_targets.len();
    let mut trained_ok = n == 10_000 && trace.flipped.len() == n && trace.g_targets.iter().all(|t| *t == 1.0);
    for ((r, f), flipped) in trace.d_targets.iter().zip(&trace.flipped) {
        let (r, f) = if *flipped { (*f, *r) } else { (*r, *f) };
        trained_ok &= in_real(r) && in_fake(f);
    }
    let train_rate = trace.flipped.iter().filter(|f| **f).count() as f64 / n as f64;
    rates.push((cfg.flip_probability, train_rate));
    let rates_ok = rates.iter().all(|(p, r)| (p - r).abs() <= 0.01);
    let pass = ranges_ok && trained_ok && rates_ok;
    let shown = rates
        .iter()
        .map(|(p, r)| format!("p {p}: {r:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        10,
        "smoothed targets stay in range and flips occur at rate p",
        pass,
        &format!("{shown} ({n} training batches)"),
    );
    assert!(pass);
}
