use super::*;
use crate::data::{generate_toy_corpus, split_corpus, SplitRatio, ToyCorpusConfig};
use crate::loss::softmax;
use crate::nn::Tensor;
use crate::synthesis::{SynthEntry, SynthManifest};

fn cfg(input: usize) -> ClassifyConfig {
    ClassifyConfig {
        input_size: input,
        width: 4,
        epochs: 2,
        batch_size: 4,
        ..ClassifyConfig::default()
    }
}

// Reference parameter totals of the standard 1000-class ImageNet models.
#[test]
fn full_backbones_have_reference_parameter_counts() {
    let c = |a: &str, aux: bool| {
        let cfg = ClassifyConfig {
            input_size: 299,
            aux_logits: aux,
            ..ClassifyConfig::default()
        };
        build_classifier(a, 1000, &cfg).unwrap().param_count()
    };
    assert_eq!(c("resnet152", true), 60_192_808);
    assert_eq!(c("densenet161", true), 28_681_000);
    assert_eq!(c("inceptionv3", true), 27_161_264);
    assert_eq!(c("inceptionv3", false), 23_834_568);
}

#[test]
fn every_arch_maps_a_batch_to_two_logits() {
    for (arch, size) in [
        ("small-cnn", 64),
        ("resnet152", 32),
        ("densenet161", 32),
        ("inceptionv3", 75),
    ] {
        let net = build_classifier(arch, 2, &cfg(size)).unwrap();
        let out = net.infer(Tensor::full(&[2, 3, size, size], 0.5));
        assert_eq!(out.shape(), &[2, 2], "{arch}");
        assert!(out.all_finite(), "{arch}");
        let p = softmax(out.data(), 2);
        for row in p.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn registry_rejects_unknown_names_and_small_inputs() {
    assert!(matches!(
        build_classifier("vgg16", 2, &cfg(64)),
        Err(Error::UnknownArch(_))
    ));
    assert!(build_classifier("inceptionv3", 2, &cfg(64)).is_err());
    assert!(build_classifier("small-cnn", 1, &cfg(64)).is_err());
}

#[test]
fn same_seed_same_init_across_builds() {
    let a = build_classifier("small-cnn", 2, &cfg(32)).unwrap();
    let b = build_classifier("small-cnn", 2, &cfg(32)).unwrap();
    assert_eq!(a.params().digest(), b.params().digest());
}

#[test]
fn pretrained_blob_seeds_matching_entries() {
    let dir = tempfile::tempdir().unwrap();
    let donor = build_classifier("small-cnn", 5, &ClassifyConfig { seed: 9, ..cfg(32) }).unwrap();
    let path = dir.path().join("donor.bin");
    crate::checkpoint::save_blob(&path, &[donor.params()]).unwrap();
    let mut net = build_classifier("small-cnn", 2, &cfg(32)).unwrap();
    let skipped = load_pretrained(&mut net, &path).unwrap();
    // Only the 5-way head differs in shape.
    assert_eq!(skipped, vec!["fc.weight".to_string(), "fc.bias".to_string()]);
    let other = build_classifier("resnet152", 5, &cfg(32)).unwrap();
    let p2 = dir.path().join("resnet.bin");
    crate::checkpoint::save_blob(&p2, &[other.params()]).unwrap();
    assert!(load_pretrained(&mut net, &p2).is_err());
}

#[test]
fn condition_parsing() {
    let c = Condition::parse("orig+trad+prop").unwrap();
    assert!(c.has(Ingredient::Orig) && c.has(Ingredient::Trad) && c.has(Ingredient::Prop));
    assert!(!c.has(Ingredient::Gan));
    assert!(Condition::parse("trad+prop").is_err());
    assert!(Condition::parse("").is_err());
    assert!(Condition::parse("orig+flip").is_err());
}

fn fake_manifest(kind: &str, n: usize) -> SynthManifest {
    let samples = crate::label::ClassLabel::ALL
        .into_iter()
        .flat_map(|l| {
            (0..n).map(move |i| SynthEntry {
                id: crate::synthesis::sample_id(l, i),
                label: l,
                draw_index: (l.index() * n + i) as u64,
                image_sha256: String::new(),
                mask_sha256: None,
            })
        })
        .collect();
    SynthManifest {
        kind: kind.into(),
        master_seed: 0,
        n_per_class: n,
        checkpoints: Default::default(),
        config_digest: None,
        samples,
    }
}

#[test]
fn assembled_sets_have_expected_sizes_and_pass_the_audit() {
    let (corpus, _) = generate_toy_corpus(&ToyCorpusConfig {
        n_per_class: 75,
        image_size: 16,
        ..Default::default()
    })
    .unwrap();
    let split = split_corpus(&corpus, SplitRatio::default(), 4).unwrap();
    let prop = fake_manifest("proposed", 90);
    let gan = fake_manifest("gan-baseline", 90);
    for (name, n) in [
        ("orig", 90),
        ("orig+prop", 270),
        ("orig+trad", 90),
        ("orig+trad+prop", 270),
        ("orig+gan", 270),
    ] {
        let set = assemble_condition(&split, &Condition::parse(name).unwrap(), Some(&prop), Some(&gan)).unwrap();
        assert_eq!(set.len(), n, "{name}");
        audit_leakage(&split, &set).unwrap();
        assert_eq!(
            set.items.iter().filter(|i| i.transform).count(),
            if name.contains("trad") { 90 } else { 0 }
        );
    }
    let missing = assemble_condition(&split, &Condition::parse("orig+prop").unwrap(), None, None);
    assert!(matches!(missing, Err(Error::Load(_))));

    let mut bad = assemble_condition(&split, &Condition::parse("orig").unwrap(), None, None).unwrap();
    bad.items[0].id = split.test[0].clone();
    assert!(audit_leakage(&split, &bad).is_err());
}

#[test]
fn table_csv_round_trip_and_completeness() {
    let mk = |arch: &str, cond: &str, acc: f64| CellResult {
        arch: arch.into(),
        condition: cond.into(),
        train_size: 1,
        best_epoch: 0,
        val_accuracy: 0.0,
        test_accuracy: acc,
        predictions: vec![],
        log: vec![],
    };
    let meta = TableMeta { seed: 3, epochs: 7 };
    let rows = vec![
        mk("a", "orig", 73.33333333333333),
        mk("a", "orig+prop", 100.0),
        mk("b", "orig", 0.1),
        mk("b", "orig+prop", 50.0),
    ];
    let t = AccuracyTable::from_results(&rows, meta.clone()).unwrap();
    assert_eq!(AccuracyTable::from_csv(&t.to_csv().unwrap()).unwrap(), t);
    assert!(t.to_text().contains("73.33"));
    assert!(AccuracyTable::from_csv("# seed=3 epochs=7\narch,orig\na,1,2\n").is_err());
    assert!(AccuracyTable::from_results(&rows[..3], meta.clone()).is_err());
    assert!(AccuracyTable::from_results(&[mk("a", "orig", 101.0)], meta).is_err());
}

#[test]
fn training_is_deterministic_and_reports_recomputable_accuracy() {
    let (corpus, _) = generate_toy_corpus(&ToyCorpusConfig {
        n_per_class: 10,
        image_size: 16,
        ..Default::default()
    })
    .unwrap();
    let split = split_corpus(&corpus, SplitRatio::default(), 1).unwrap();
    let bank = ImageBank::from_corpus(&corpus);
    let set = assemble_condition(&split, &Condition::parse("orig+trad").unwrap(), None, None).unwrap();
    let c = cfg(16);
    let a = train_cell("small-cnn", &set, &split, &bank, &c).unwrap();
    let b = train_cell("small-cnn", &set, &split, &bank, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.test_accuracy, accuracy(&a.predictions));
    assert_eq!(a.predictions.len(), split.test.len());
    assert_eq!(a.log.len(), 2);
    let best = a.log.iter().map(|l| l.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.val_accuracy, best);
}
