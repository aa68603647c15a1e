use std::fs;
use std::path::Path;

use metagen::dataset::{generate, Dataset, DatasetMeta, SplitSpec, DEFAULT_SPLIT};
use metagen::diffusion::{list_checkpoints, train, ArchSpec, TrainOptions, TrainSettings, TrainedModel};
use metagen::geometry::GridSpec;
use metagen::scattering::{AngleGrid, Illumination};

fn dataset(count: usize, seed: u64) -> Dataset {
    let (grid, angles, ill) = (GridSpec::default(), AngleGrid::default(), Illumination::default());
    let records = generate(count, seed, &grid, &angles, &ill).unwrap();
    let split = SplitSpec {
        fractions: DEFAULT_SPLIT.to_vec(),
        seed,
    };
    let meta = DatasetMeta::build(&records, seed, grid, angles, ill, split).unwrap();
    Dataset { meta, records }
}

fn small_settings() -> TrainSettings {
    TrainSettings {
        timesteps: 50,
        lr: 1e-3,
        epochs: 3,
        checkpoint_interval: 5,
        seed: 9,
        arch: ArchSpec {
            channels: vec![8, 16, 16, 8],
            downsample_at: vec![1],
            time_dim: 16,
            cond_embed_dim: 16,
            film_hidden: 16,
            ..ArchSpec::default()
        },
        ..TrainSettings::default()
    }
}

fn newest(dir: &Path) -> (u64, Vec<u8>) {
    let (step, path) = list_checkpoints(dir).unwrap().pop().unwrap();
    (step, fs::read(path).unwrap())
}

#[test]
fn training_is_deterministic() {
    let ds = dataset(64, 1);
    let s = small_settings();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&ds, &s, a.path(), &TrainOptions::default()).unwrap();
    train(&ds, &s, b.path(), &TrainOptions::default()).unwrap();
    assert_eq!(newest(a.path()), newest(b.path()));
    assert_eq!(
        fs::read(a.path().join("train_log.csv")).unwrap(),
        fs::read(b.path().join("train_log.csv")).unwrap()
    );
}

#[test]
fn resume_is_bit_exact() {
    let ds = dataset(64, 2);
    let s = small_settings();
    let whole = tempfile::tempdir().unwrap();
    let summary = train(&ds, &s, whole.path(), &TrainOptions::default()).unwrap();
    assert_eq!(summary.final_step, 12);

    let split = tempfile::tempdir().unwrap();
    let stop = TrainOptions {
        resume: false,
        stop_after: Some(7),
    };
    let partial = train(&ds, &s, split.path(), &stop).unwrap();
    assert_eq!(partial.final_step, 7);
    assert_eq!(newest(split.path()).0, 5);
    let resume = TrainOptions {
        resume: true,
        stop_after: None,
    };
    let resumed = train(&ds, &s, split.path(), &resume).unwrap();
    assert_eq!((resumed.start_step, resumed.final_step), (5, 12));

    assert_eq!(newest(whole.path()), newest(split.path()));
    assert_eq!(
        fs::read(whole.path().join("train_log.csv")).unwrap(),
        fs::read(split.path().join("train_log.csv")).unwrap()
    );
}

#[test]
fn resume_rejects_changed_settings() {
    let ds = dataset(64, 3);
    let s = small_settings();
    let dir = tempfile::tempdir().unwrap();
    let stop = TrainOptions {
        resume: false,
        stop_after: Some(6),
    };
    train(&ds, &s, dir.path(), &stop).unwrap();
    let other = TrainSettings { lr: 2e-3, ..s };
    let resume = TrainOptions {
        resume: true,
        stop_after: None,
    };
    assert!(train(&ds, &other, dir.path(), &resume).is_err());
}

#[test]
fn trained_model_samples_are_distinct_and_valid() {
    let ds = dataset(64, 4);
    let s = TrainSettings {
        epochs: 10,
        ..small_settings()
    };
    let dir = tempfile::tempdir().unwrap();
    train(&ds, &s, dir.path(), &TrainOptions::default()).unwrap();
    let (_, path) = list_checkpoints(dir.path()).unwrap().pop().unwrap();
    let model = TrainedModel::load(&path).unwrap();
    let target = &ds.records[0].dscs;
    let samples = model.sample(target, 40, 11).unwrap();
    assert_eq!(samples.len(), 40);
    for (i, a) in samples.iter().enumerate() {
        assert!(a.values().iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(samples[i + 1..].iter().all(|b| a != b), "sample {i} repeated");
    }
    assert_eq!(samples, model.sample(target, 40, 11).unwrap());
    assert_ne!(samples, model.sample(target, 40, 12).unwrap());
}

#[test]
fn loss_falls_when_overfitting_a_tiny_set() {
    let ds = dataset(24, 5);
    let s = TrainSettings {
        epochs: 150,
        checkpoint_interval: 1000,
        batch_size: 8,
        ..small_settings()
    };
    let dir = tempfile::tempdir().unwrap();
    train(&ds, &s, dir.path(), &TrainOptions::default()).unwrap();
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (head, tail) = (mean(&losses[..30]), mean(&losses[losses.len() - 30..]));
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
}
