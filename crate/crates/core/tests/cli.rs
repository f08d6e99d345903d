use std::path::Path;
use std::process::{Command, Output};

use cytosynth::classify::{AblationReport, AccuracyTable};
use cytosynth::data::{SplitManifest, Subset};
use cytosynth::synthesis::SynthManifest;
use cytosynth::ClassLabel;

const MINI: &str = r#"
seed = 3

[data.toy]
n_per_class = 10
image_size = 16

[cgan]
image_size = 16
depth = 3
gen_channels = 4
max_channels = 8
disc_channels = 4
disc_layers = 1
max_epochs = 2
batch_size = 4

[maskgan]
image_size = 16
latent_dim = 8
gen_channels = 16
disc_channels = 4
disc_layers = 1
max_epochs = 2
batch_size = 4

[gan_baseline]
image_size = 16
latent_dim = 8
gen_channels = 16
disc_channels = 4
disc_layers = 1
max_epochs = 2
batch_size = 4

[classify]
input_size = 16
width = 4
epochs = 2
batch_size = 8
"#;

fn cytosynth(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cytosynth"))
        .args(args)
        .arg("--output-root")
        .arg(root)
        .env_remove("CYTOSYNTH_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) {
    let out = cytosynth(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cytosynth(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "make-toy-corpus",
        "split",
        "extract-masks",
        "train-cgan",
        "train-maskgan",
        "synthesize",
        "ablate",
        "report",
    ] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(cytosynth(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cytosynth(dir.path(), &["split", "--bogus"]).status.code(), Some(2));
    assert_eq!(cytosynth(dir.path(), &["frobnicate"]).status.code(), Some(2));
    let out = cytosynth(
        dir.path(),
        &["train-maskgan", "--masks", "m", "--class", "weird", "--out", "x.bin"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_failures_exit_one_with_the_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = cytosynth(dir.path(), &["split", "--root", "missing", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [split]:"));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[cgan]\nwings = 2\n").unwrap();
    let out = cytosynth(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "make-toy-corpus", "--out", "c"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn existing_outputs_need_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "make-toy-corpus",
        "--out",
        "c",
        "--n-per-class",
        "2",
        "--image-size",
        "16",
    ];
    ok(dir.path(), &args);
    let again = cytosynth(dir.path(), &args);
    assert_eq!(again.status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--overwrite");
    ok(dir.path(), &forced);
}

#[test]
fn output_root_comes_from_the_environment_when_no_flag_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cytosynth"))
        .args([
            "make-toy-corpus",
            "--out",
            "c",
            "--n-per-class",
            "2",
            "--image-size",
            "16",
        ])
        .env("CYTOSYNTH_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("c/benign").is_dir());
}

#[test]
fn miniature_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("mini.toml");
    std::fs::write(&cfg, MINI).unwrap();
    let c = cfg.to_str().unwrap();
    ok(root, &["--config", c, "make-toy-corpus", "--out", "corpus"]);
    ok(
        root,
        &["--config", c, "split", "--root", "corpus", "--out", "split.json"],
    );
    ok(
        root,
        &["--config", c, "extract-masks", "--in", "corpus", "--out", "masks"],
    );
    ok(
        root,
        &[
            "--config",
            c,
            "train-cgan",
            "--masks",
            "masks",
            "--val-split",
            "split.json",
            "--out",
            "ckpt/cgan.bin",
        ],
    );
    for class in ["benign", "malignant"] {
        let out = format!("ckpt/mg-{class}.bin");
        ok(
            root,
            &[
                "--config",
                c,
                "train-maskgan",
                "--masks",
                "masks",
                "--class",
                class,
                "--split",
                "split.json",
                "--out",
                &out,
            ],
        );
    }
    ok(
        root,
        &[
            "--config",
            c,
            "train-gan-baseline",
            "--split",
            "split.json",
            "--out",
            "ganbase",
        ],
    );
    ok(
        root,
        &[
            "--config",
            c,
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
        ],
    );
    ok(
        root,
        &[
            "--config",
            c,
            "ablate",
            "--split",
            "split.json",
            "--synthetic",
            "synthetic",
            "--gan-baseline",
            "ganbase",
            "--out",
            "results.csv",
        ],
    );
    ok(
        root,
        &[
            "--config",
            c,
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
            "--out",
            "report",
        ],
    );

    let split = SplitManifest::load(&root.join("split.json")).unwrap();
    assert_eq!(split.seed, 3);
    for label in ClassLabel::ALL {
        assert_eq!(split.ids_of(Subset::Train, label).len(), 6);
        assert_eq!(split.ids_of(Subset::Val, label).len(), 2);
        assert_eq!(split.ids_of(Subset::Test, label).len(), 2);
    }
    let synth = SynthManifest::load(&root.join("synthetic")).unwrap();
    assert_eq!(synth.count(ClassLabel::Benign), 12);
    assert_eq!(synth.count(ClassLabel::Malignant), 12);
    synth.verify(&root.join("synthetic")).unwrap();

    let table = AccuracyTable::from_csv(&std::fs::read_to_string(root.join("results.csv")).unwrap()).unwrap();
    assert_eq!(table.conditions.len(), 5);
    for cond in &table.conditions {
        assert!(table.get("small-cnn", cond).is_some());
    }
    AblationReport::load(&root.join("results.json"))
        .unwrap()
        .verify()
        .unwrap();
    for f in ["accuracy.csv", "image_mask_grid.png", "report.json"] {
        assert!(root.join("report").join(f).is_file(), "report lacks {f}");
    }

    // Rerunning a stage without --overwrite refuses to clobber its output.
    let out = cytosynth(
        root,
        &["--config", c, "split", "--root", "corpus", "--out", "split.json"],
    );
    assert_eq!(out.status.code(), Some(1));
}
