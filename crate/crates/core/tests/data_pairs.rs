use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use absgen::data::idx::{self, IdxImages};
use absgen::data::pgm::{self, encode_pgm};
use absgen::data::{
    enumerate_pair_counts, load_idx, load_pgm_tree, pair_counts, sample_episode, sample_pairs, EpisodeSpec,
    LabeledDataset, Manifest, PairOptions, Split,
};
use absgen::nn::PairLabel;
use absgen::rng;
use absgen::{Error, Tensor};
use proptest::prelude::*;

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-sample")
}

/// Dataset whose samples are 1-element tensors holding their own index.
fn toy(counts: &[usize]) -> LabeledDataset {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            samples.push(Tensor::from_vec(vec![samples.len() as f64]));
            labels.push(c);
        }
    }
    let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
    LabeledDataset::new(samples, labels, names, Split::Train).unwrap()
}

fn label_of(ds: &LabeledDataset, t: &Tensor) -> usize {
    ds.labels()[t.data()[0] as usize]
}

#[test]
fn mnist_sample_loads_with_expected_shape() {
    let dir = mnist_dir();
    let ds = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        Split::Train,
    )
    .unwrap();
    assert_eq!(ds.len(), 7996);
    assert_eq!(ds.sample_shape(), Some(&[1, 28, 28][..]));
    assert_eq!(ds.n_classes(), 10);
    assert!(ds.samples().iter().all(|s| s.data().iter().all(|v| (0.0..=1.0).contains(v))));
    let mx = ds.samples().iter().flat_map(|s| s.data()).cloned().fold(0.0, f64::max);
    assert_eq!(mx, 1.0);
}

#[test]
fn idx_round_trip_is_byte_exact() {
    let dir = mnist_dir();
    let img_path = dir.join("probe-images-idx3-ubyte");
    let lbl_path = dir.join("probe-labels-idx1-ubyte");
    let ds = load_idx(&img_path, &lbl_path, Split::Probe).unwrap();
    let (images, labels) = idx::to_raw(&ds).unwrap();
    assert_eq!(idx::encode_images(&images), std::fs::read(&img_path).unwrap());
    assert_eq!(idx::encode_labels(&labels), std::fs::read(&lbl_path).unwrap());
}

#[test]
fn idx_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let images = IdxImages {
        rows: 2,
        cols: 2,
        pixels: vec![0, 255, 128, 1, 9, 9, 9, 9],
    };
    let img = tmp.path().join("img");
    let lbl = tmp.path().join("lbl");
    std::fs::write(&img, idx::encode_images(&images)).unwrap();
    std::fs::write(&lbl, idx::encode_labels(&[3, 1])).unwrap();
    let ds = load_idx(&img, &lbl, Split::Train).unwrap();
    assert_eq!(ds.sample(0).data()[1], 1.0);
    assert_eq!(ds.labels(), &[3, 1]);

    let bytes = idx::encode_images(&images);
    std::fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_idx(&img, &lbl, Split::Train), Err(Error::Format { .. })));

    std::fs::write(&img, idx::encode_labels(&[1])).unwrap();
    let err = load_idx(&img, &lbl, Split::Train).unwrap_err();
    assert!(err.to_string().contains("0x00000801"), "{err}");

    std::fs::write(&img, idx::encode_images(&images)).unwrap();
    std::fs::write(&lbl, idx::encode_labels(&[1, 2, 3])).unwrap();
    assert!(matches!(load_idx(&img, &lbl, Split::Train), Err(Error::Consistency(_))));

    assert!(matches!(
        load_idx(&tmp.path().join("nope"), &lbl, Split::Train),
        Err(Error::Io { .. })
    ));
}

fn write_pgm_bytes(path: &Path, w: usize, h: usize, maxval: u8, px: &[u8]) {
    let mut bytes = format!("P5\n# comment\n{w} {h}\n{maxval}\n").into_bytes();
    bytes.extend_from_slice(px);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn pgm_tree_loading() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_pgm_bytes(&root.join("s1/1.pgm"), 2, 2, 255, &[0, 255, 51, 102]);
    write_pgm_bytes(&root.join("s1/2.pgm"), 2, 2, 15, &[15, 0, 3, 0]);
    write_pgm_bytes(&root.join("s2/1.pgm"), 2, 2, 255, &[1, 2, 3, 4]);
    let ds = load_pgm_tree(root, None, Split::Train).unwrap();
    assert_eq!(ds.class_names(), &["s1", "s2"]);
    assert_eq!(ds.counts(), vec![2, 1]);
    assert_eq!(ds.sample(0).data(), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(ds.sample(1).data(), &[1.0, 0.0, 0.2, 0.0]);

    let resized = load_pgm_tree(root, Some((4, 4)), Split::Train).unwrap();
    assert_eq!(resized.sample_shape(), Some(&[1, 4, 4][..]));
    assert_eq!(&resized.sample(0).data()[..4], &[0.0, 0.0, 1.0, 1.0]);

    let single = tmp.path().join("one");
    write_pgm_bytes(&single.join("only/a.pgm"), 3, 1, 255, &[1, 2, 3]);
    assert_eq!(load_pgm_tree(&single, None, Split::Probe).unwrap().len(), 1);

    std::fs::create_dir_all(root.join("s3")).unwrap();
    assert!(matches!(load_pgm_tree(root, None, Split::Train), Err(Error::Consistency(_))));

    let bad = tmp.path().join("bad");
    std::fs::create_dir_all(bad.join("c")).unwrap();
    std::fs::write(bad.join("c/x.pgm"), b"P2\n1 1\n255\n0\n").unwrap();
    assert!(matches!(load_pgm_tree(&bad, None, Split::Train), Err(Error::Format { .. })));
}

#[test]
fn nested_class_directories_are_named_by_path() {
    let tmp = tempfile::tempdir().unwrap();
    for (a, c) in [("Greek", "character01"), ("Greek", "character02"), ("Latin", "character01")] {
        write_pgm_bytes(&tmp.path().join(a).join(c).join("x.pgm"), 1, 1, 255, &[0]);
    }
    let ds = load_pgm_tree(tmp.path(), None, Split::Train).unwrap();
    assert_eq!(
        ds.class_names(),
        &["Greek/character01", "Greek/character02", "Latin/character01"]
    );
}

#[test]
fn pgm_round_trip() {
    let img = Tensor::new(vec![1, 2, 3], vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
    let back = pgm::parse_pgm(&encode_pgm(&img).unwrap(), Path::new("mem")).unwrap();
    assert_eq!(back, img);
}

#[test]
fn filter_classes_relabels_in_keep_order() {
    let ds = toy(&[2, 3, 4]);
    let f = ds.filter_classes(&["c2", "c0"]).unwrap();
    assert_eq!(f.class_names(), &["c2", "c0"]);
    assert_eq!(f.counts(), vec![4, 2]);
    let all = ds.filter_classes(&["c0", "c1", "c2"]).unwrap();
    assert_eq!(all, ds);
    assert!(matches!(ds.filter_classes::<&str>(&[]), Err(Error::Contract(_))));
    assert!(matches!(ds.filter_classes(&["c9"]), Err(Error::Contract(_))));
}

#[test]
fn pair_count_examples() {
    let c = enumerate_pair_counts(&toy(&[2, 3])).unwrap();
    assert_eq!((c.identical, c.different), (13, 6));
    let c = enumerate_pair_counts(&toy(&[1, 1])).unwrap();
    assert_eq!((c.identical, c.different), (2, 1));
    assert!(matches!(enumerate_pair_counts(&toy(&[0, 3])), Err(Error::Contract(_))));
    assert!(matches!(pair_counts(&[4]), Err(Error::Contract(_))));
}

#[test]
fn pair_counts_closed_form_matches_enumeration_exhaustively() {
    for n0 in 0..=6 {
        for n1 in 0..=6 {
            let enumerated = enumerate_pair_counts(&toy(&[n0, n1]));
            let closed = pair_counts(&[n0, n1]);
            match (enumerated, closed) {
                (Ok(e), Ok(c)) => {
                    assert_eq!(e, c, "n = ({n0}, {n1})");
                    assert_eq!(c.identical, (n0 * n0 + n1 * n1) as u64);
                    assert_eq!(c.different, (n0 * n1) as u64);
                }
                (Err(_), Err(_)) => assert!(n0 == 0 || n1 == 0),
                other => panic!("disagreement at ({n0}, {n1}): {other:?}"),
            }
        }
    }
}

#[test]
fn sample_pairs_split_is_exact() {
    let ds = toy(&[10, 10, 10]);
    let mut r = rng::seeded(1);
    let pairs = sample_pairs(&ds, 660, &PairOptions::default(), &mut r).unwrap();
    let iden = pairs.iter().filter(|p| p.label == PairLabel::Identical).count();
    assert_eq!((iden, pairs.len() - iden), (330, 330));
    for bad in [0.0, 1.0, 1.5, f64::NAN] {
        let opts = PairOptions {
            balance: bad,
            ..PairOptions::default()
        };
        assert!(matches!(sample_pairs(&ds, 10, &opts, &mut r), Err(Error::Contract(_))));
    }
}

#[test]
fn sample_pairs_is_deterministic() {
    let ds = toy(&[5, 7]);
    let a = sample_pairs(&ds, 100, &PairOptions::default(), &mut rng::seeded(4)).unwrap();
    let b = sample_pairs(&ds, 100, &PairOptions::default(), &mut rng::seeded(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_sampling_without_self_pairs() {
    let ds = toy(&[1, 3]);
    let opts = PairOptions {
        allow_self: false,
        ..PairOptions::default()
    };
    let pairs = sample_pairs(&ds, 400, &opts, &mut rng::seeded(2)).unwrap();
    for p in pairs.iter().filter(|p| p.label == PairLabel::Identical) {
        assert_ne!(p.a, p.b);
        assert_eq!(label_of(&ds, &p.a), 1);
    }
    let singletons = toy(&[1, 1]);
    assert!(sample_pairs(&singletons, 4, &opts, &mut rng::seeded(2)).is_err());
}

#[test]
fn pair_sampling_is_uniform_over_pair_sets() {
    // n = (1, 2): 5 identical ordered pairs and 2 different pairs
    let ds = toy(&[1, 2]);
    let n = 14_000;
    let pairs = sample_pairs(&ds, n, &PairOptions::default(), &mut rng::seeded(3)).unwrap();
    let mut freq: BTreeMap<(u8, usize, usize), usize> = BTreeMap::new();
    for p in &pairs {
        let key = (p.label as u8, p.a.data()[0] as usize, p.b.data()[0] as usize);
        *freq.entry(key).or_default() += 1;
    }
    let iden: Vec<_> = freq.iter().filter(|(k, _)| k.0 == 0).collect();
    let diff: Vec<_> = freq.iter().filter(|(k, _)| k.0 == 1).collect();
    assert_eq!(iden.len(), 5);
    assert_eq!(diff.len(), 2);
    for (group, size) in [(iden, 5.0), (diff, 2.0)] {
        let trials = n as f64 / 2.0;
        let p = 1.0 / size;
        let sd = (trials * p * (1.0 - p)).sqrt();
        for (k, &c) in group {
            assert!((c as f64 - trials * p).abs() < 4.0 * sd, "{k:?}: {c}");
        }
    }
}

#[test]
fn swap_order_produces_both_orderings() {
    let ds = toy(&[3, 3]);
    let opts = PairOptions {
        swap_order: true,
        ..PairOptions::default()
    };
    let pairs = sample_pairs(&ds, 200, &opts, &mut rng::seeded(5)).unwrap();
    let firsts: HashSet<usize> = pairs
        .iter()
        .filter(|p| p.label == PairLabel::Different)
        .map(|p| label_of(&ds, &p.a))
        .collect();
    assert_eq!(firsts.len(), 2);
    let plain = sample_pairs(&ds, 200, &PairOptions::default(), &mut rng::seeded(5)).unwrap();
    assert!(plain
        .iter()
        .filter(|p| p.label == PairLabel::Different)
        .all(|p| label_of(&ds, &p.a) == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pair_labels_agree_with_classes(counts in prop::collection::vec(1usize..6, 2..5), count in 1usize..200, seed: u64, swap: bool) {
        let ds = toy(&counts);
        let opts = PairOptions { swap_order: swap, ..PairOptions::default() };
        let pairs = sample_pairs(&ds, count, &opts, &mut rng::seeded(seed)).unwrap();
        prop_assert_eq!(pairs.len(), count);
        let iden = pairs.iter().filter(|p| p.label == PairLabel::Identical).count();
        prop_assert_eq!(iden, (count as f64 * 0.5).round() as usize);
        for p in &pairs {
            let same = label_of(&ds, &p.a) == label_of(&ds, &p.b);
            prop_assert_eq!(same, p.label == PairLabel::Identical);
        }
    }

    #[test]
    fn closed_form_matches_enumeration(counts in prop::collection::vec(1usize..8, 2..5)) {
        prop_assert_eq!(enumerate_pair_counts(&toy(&counts)).unwrap(), pair_counts(&counts).unwrap());
    }

    #[test]
    fn episodes_are_disjoint_and_distinct(seed: u64, n_way in 2usize..6) {
        let ds = toy(&[3, 4, 5, 3, 6, 2]);
        let spec = EpisodeSpec::new(n_way, 2);
        let ep = sample_episode(&ds, &spec, &mut rng::seeded(seed)).unwrap();
        let classes: HashSet<_> = ep.classes.iter().collect();
        prop_assert_eq!(classes.len(), n_way);
        let support: HashSet<_> = ep.support.iter().collect();
        prop_assert!(ep.queries.iter().all(|(q, _)| !support.contains(q)));
        for (q, way) in &ep.queries {
            prop_assert_eq!(ds.labels()[*q], ep.classes[*way]);
        }
        for (s, c) in ep.support.iter().zip(&ep.classes) {
            prop_assert_eq!(ds.labels()[*s], *c);
        }
        prop_assert_eq!(ep.queries.len(), n_way * 2);
    }
}

#[test]
fn episode_examples() {
    let ten = toy(&[3; 10]);
    let ep = sample_episode(&ten, &EpisodeSpec::new(5, 1), &mut rng::seeded(0)).unwrap();
    assert_eq!(ep.classes.iter().collect::<HashSet<_>>().len(), 5);
    let ep = sample_episode(&ten, &EpisodeSpec::new(10, 2), &mut rng::seeded(0)).unwrap();
    assert_eq!(ep.classes.iter().collect::<HashSet<_>>().len(), 10);
    let twenty = toy(&[2; 20]);
    assert!(matches!(
        sample_episode(&twenty, &EpisodeSpec::new(21, 1), &mut rng::seeded(0)),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        sample_episode(&twenty, &EpisodeSpec::new(5, 2), &mut rng::seeded(0)),
        Err(Error::Contract(_))
    ));
}

#[test]
fn shipped_manifest_validates() {
    let m = Manifest::load(&mnist_dir().join("manifest.json")).unwrap();
    let check = m.check().unwrap();
    assert_eq!(check.verified.len(), 4);
    assert!(check.unverified.is_empty());
    let probe = m.load_split(Split::Probe, None).unwrap();
    assert_eq!(probe.len(), 2004);
}

#[test]
fn manifest_detects_tampering_and_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let src = mnist_dir();
    for f in ["probe-images-idx3-ubyte", "probe-labels-idx1-ubyte", "manifest.json"] {
        std::fs::copy(src.join(f), tmp.path().join(f)).unwrap();
    }
    let path = tmp.path().join("manifest.json");
    let m = Manifest::load(&path).unwrap();
    assert!(matches!(m.check(), Err(Error::Io { .. })));

    let mut text: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    text["splits"]["train"] = serde_json::json!(["probe-images-idx3-ubyte", "probe-labels-idx1-ubyte"]);
    std::fs::write(&path, text.to_string()).unwrap();
    let m = Manifest::load(&path).unwrap();
    assert!(matches!(m.check(), Err(Error::Io { .. })));

    text["sha256"].as_object_mut().unwrap().retain(|k, _| k.starts_with("probe"));
    std::fs::write(&path, text.to_string()).unwrap();
    Manifest::load(&path).unwrap().check().unwrap();

    let lbl = tmp.path().join("probe-labels-idx1-ubyte");
    let mut bytes = std::fs::read(&lbl).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&lbl, bytes).unwrap();
    assert!(matches!(Manifest::load(&path).unwrap().check(), Err(Error::Checksum { .. })));

    std::fs::write(&path, "{\"name\": 3}").unwrap();
    assert!(matches!(Manifest::load(&path), Err(Error::Format { .. })));
}
