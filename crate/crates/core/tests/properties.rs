use std::collections::BTreeSet;

use cytosynth::cgan::cgan_d_loss;
use cytosynth::data::{split_corpus, LabeledImage, SplitRatio, Subset};
use cytosynth::imaging::{resize_mask_nearest, BinaryMask, RgbImage};
use cytosynth::maskgan::{gan_d_loss, LatentSeed};
use cytosynth::synthesis::n_per_class_for_ratio;
use cytosynth::ClassLabel;
use proptest::prelude::*;

fn corpus(benign: usize, malignant: usize) -> Vec<LabeledImage> {
    let px = RgbImage::filled(1, 1, [0.5; 3]);
    let mk = |label: ClassLabel, i: usize| LabeledImage {
        id: format!("{label}/{i:04}.png"),
        label,
        image: px.clone(),
    };
    (0..benign)
        .map(|i| mk(ClassLabel::Benign, i))
        .chain((0..malignant).map(|i| mk(ClassLabel::Malignant, i)))
        .collect()
}

fn mask(h: usize, w: usize, bits: &[bool]) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| bits[(y * w + x) % bits.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_stratified_partition(b in 5usize..60, m in 5usize..60, seed in any::<u64>()) {
        let c = corpus(b, m);
        let s = split_corpus(&c, SplitRatio::default(), seed).unwrap();
        let all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        let uniq: BTreeSet<&String> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), b + m);
        prop_assert_eq!(uniq.len(), b + m);
        for (label, n) in [(ClassLabel::Benign, b), (ClassLabel::Malignant, m)] {
            let want = SplitRatio::default().allocate(n);
            prop_assert_eq!(s.ids_of(Subset::Train, label).len(), n * 3 / 5);
            prop_assert_eq!(s.ids_of(Subset::Val, label).len(), n / 5);
            prop_assert_eq!(s.ids_of(Subset::Test, label).len(), want.test);
        }
        prop_assert_eq!(&split_corpus(&c, SplitRatio::default(), seed).unwrap(), &s);
        s.validate().unwrap();
    }

    #[test]
    fn synthetic_count_scales_with_ratio(b in 0usize..500, m in 0usize..500, r in 1usize..5) {
        let n = n_per_class_for_ratio(&[b, m], r);
        prop_assert_eq!(n, r * ((b + m) / 2));
        prop_assert_eq!(n_per_class_for_ratio(&[m, b], r), n);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        h in 1usize..12,
        w in 1usize..12,
        a in proptest::collection::vec(any::<bool>(), 1..50),
        b in proptest::collection::vec(any::<bool>(), 1..50),
    ) {
        let (ma, mb) = (mask(h, w, &a), mask(h, w, &b));
        let ab = ma.iou(&mb).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, mb.iou(&ma).unwrap());
        prop_assert_eq!(ma.iou(&ma).unwrap(), 1.0);
        prop_assert_eq!(resize_mask_nearest(&ma, h, w), ma);
    }

    #[test]
    fn unsmoothed_targets_reduce_to_the_conditional_loss(
        real in proptest::collection::vec(0.001f64..0.999, 1..20),
        fake in proptest::collection::vec(0.001f64..0.999, 1..20),
    ) {
        let a = gan_d_loss(&real, &fake, 1.0, 0.0).unwrap();
        let b = cgan_d_loss(&real, &fake).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0);
    }

    #[test]
    fn latents_are_reproducible_and_distinct(seed in any::<u64>(), i in 0u64..10_000, d in 1usize..64) {
        let z = LatentSeed::derive(seed, i, d).unwrap();
        prop_assert_eq!(z.dim(), d);
        prop_assert_eq!(LatentSeed::derive(seed, i, d).unwrap(), z.clone());
        prop_assert_ne!(LatentSeed::derive(seed, i + 1, d).unwrap(), z);
    }
}
