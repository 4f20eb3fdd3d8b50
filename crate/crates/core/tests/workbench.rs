use std::path::Path;

use interact_core::compose::AnnulusMode;
use interact_core::motion::representation_width;
use interact_core::workbench::{
    generate_toy_dataset, generate_toy_samples, load_motion, save_motion, DatasetManifest, NormStats, RunConfig,
    Split, ToyConfig,
};
use interact_core::{Error, Provenance};
use proptest::prelude::*;

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn is_corrupt<T: std::fmt::Debug>(r: interact_core::Result<T>) -> bool {
    matches!(r, Err(Error::CorruptFile { .. }))
}

#[test]
fn motion_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_toy_samples(5, 8, &ToyConfig::default()).unwrap();
    let path = dir.path().join("a.t2imot");
    for s in &samples {
        save_motion(&path, &[&s.agents[0], &s.agents[1]]).unwrap();
        let back = load_motion(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&s.agents) {
            assert_eq!(a.to_representation(), b.to_representation());
            assert_eq!(a.fps(), b.fps());
        }
    }
}

#[test]
fn damaged_motion_files_are_reported_as_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let s = &generate_toy_samples(5, 8, &ToyConfig::default()).unwrap()[0];
    let good = dir.path().join("good.t2imot");
    save_motion(&good, &[&s.agents[0], &s.agents[1]]).unwrap();
    let bytes = std::fs::read(&good).unwrap();
    let bad = dir.path().join("bad.t2imot");
    let mut cases: Vec<Vec<u8>> = Vec::new();
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    cases.push(magic);
    cases.push(bytes[..bytes.len() - 3].to_vec());
    cases.push(bytes[..10].to_vec());
    let mut version = bytes.clone();
    version[7] = 9;
    cases.push(version);
    let mut layout = bytes.clone();
    layout[18] = 7;
    cases.push(layout);
    let mut nan = bytes.clone();
    let at = nan.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
    cases.push(nan);
    for (i, c) in cases.into_iter().enumerate() {
        std::fs::write(&bad, c).unwrap();
        assert!(is_corrupt(load_motion(&bad)), "case {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn normalisation_round_trips(seed in 0u64..500) {
        let samples = generate_toy_samples(seed, 8, &ToyConfig::default()).unwrap();
        let stats = NormStats::from_samples(&samples).unwrap();
        for s in &samples {
            let x = stats.normalize(&s.agents[0]).unwrap();
            let back = stats.denormalize(&x, 22, s.fps()).unwrap();
            let d = (&back.to_representation() - &s.agents[0].to_representation())
                .iter()
                .fold(0.0f32, |m, v| m.max(v.abs()));
            prop_assert!(d < 1e-4, "{d}");
        }
    }
}

#[test]
fn normalised_train_data_is_standardised() {
    let samples = generate_toy_samples(1, 64, &ToyConfig::default()).unwrap();
    let stats = NormStats::from_samples(&samples).unwrap();
    let w = representation_width(22);
    let mut sum = vec![0.0; w];
    let mut rows = 0.0;
    for s in &samples {
        for a in &s.agents {
            let x = stats.normalize(a).unwrap();
            for r in x.rows() {
                for (k, v) in r.iter().enumerate() {
                    sum[k] += v;
                }
                rows += 1.0;
            }
        }
    }
    assert!(sum.iter().all(|s| (s / rows).abs() < 1e-6));
}

#[test]
fn toy_corpus_is_deterministic() {
    let cfg = ToyConfig::default();
    let a = generate_toy_samples(11, 256, &cfg).unwrap();
    let b = generate_toy_samples(11, 256, &cfg).unwrap();
    let c = generate_toy_samples(12, 256, &cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for s in &a {
        assert!((cfg.min_frames..=cfg.max_frames).contains(&s.frames()));
        assert_eq!(s.joint_count(), 22);
        assert_eq!(s.provenance, Provenance::Real);
    }
    assert!(generate_toy_samples(0, 7, &cfg).is_err());
}

#[test]
fn toy_dataset_writes_a_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let written = generate_toy_dataset(dir.path(), 3, 32, &ToyConfig::default()).unwrap();
    let (m, root) = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(m, written);
    assert_eq!(m.count(Split::Test), 4);
    assert_eq!(m.count(Split::Heldout), 4);
    assert_eq!(m.count(Split::Train), 24);
    let train = m.load_split(&root, Split::Train).unwrap();
    assert_eq!(NormStats::from_samples(&train).unwrap(), m.normalization);
    let again = generate_toy_samples(3, 32, &ToyConfig::default()).unwrap();
    let first = m.entries.iter().position(|e| e.split == Split::Train).unwrap();
    assert_eq!(m.load_entry(&root, &m.entries[first]).unwrap().captions, again[first].captions);
}

#[test]
fn shipped_configs_parse() {
    let toy = RunConfig::load(&configs_dir().join("toy.toml")).unwrap();
    assert_eq!(toy.model.joints, 22);
    let full = RunConfig::load(&configs_dir().join("full.toml")).unwrap();
    assert_eq!(full.model.block_pairs, 12);
    assert_eq!(full.model.model_width, 512);
    assert_eq!(full.sampler.ddim_steps, 50);
    assert_eq!(full.sampler.guidance_weight, 3.5);
    assert_eq!(full.train.p_uncond, 0.1);
    assert_eq!(full.filter.cosine_threshold, 0.58);
    assert_eq!(full.filter.k_neighbors, 20);
    assert_eq!((full.filter.r_min, full.filter.r_max), (0.35, 0.6));
    assert_eq!(full.filter.mode, AnnulusMode::MeanDistance);
    assert_eq!(full.loss.epsilon, 0.1);
}

#[test]
fn configs_survive_a_toml_round_trip() {
    let toy = RunConfig::load(&configs_dir().join("toy.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&toy.to_toml().unwrap()).unwrap(), toy);
}

#[test]
fn unknown_or_invalid_config_fields_are_rejected() {
    assert!(matches!(RunConfig::from_toml("[model]\nbogus = 1\n"), Err(Error::Config(_))));
    assert!(RunConfig::from_toml("[filter]\ncosine_threshold = 0.5\nk_neighbors = 0\nr_min = 0.1\nr_max = 0.2\n").is_err());
    assert!(RunConfig::from_toml("").is_ok());
}
