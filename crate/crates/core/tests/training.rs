use dwn_core::datahar::{load_split, write_split, Split};
use dwn_core::infer::{freeze, FrozenModel};
use dwn_core::model::{load_checkpoint, save_checkpoint};
use dwn_core::synth::har_like;
use dwn_core::train::{evaluate, train, TrainConfig};

fn config() -> TrainConfig {
    TrainConfig {
        seed: 3,
        epochs: 6,
        batch_size: 25,
        num_luts: 300,
        pool_size: 64,
        bits_per_value: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_falls_and_beats_chance_on_synthetic_data() {
    let train_ds = har_like(40, 6, 1);
    let test_ds = har_like(15, 6, 2);
    let out = train(&train_ds, &config(), Some(&test_ds), |_| {}).unwrap();
    let first = out.log.first().unwrap();
    let last = out.log.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{} -> {}", first.train_loss, last.train_loss);
    let acc = last.eval.as_ref().unwrap().accuracy;
    assert!(acc > 0.5, "accuracy {acc}");
    assert_eq!(out.log.len(), 6);
    assert_eq!(first.batches, 240 / 25 + 1);
}

#[test]
fn saved_models_reproduce_logged_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let train_ds = har_like(20, 6, 5);
    let test_ds = har_like(10, 6, 6);
    let cfg = TrainConfig { epochs: 2, ..config() };
    let out = train(&train_ds, &cfg, Some(&test_ds), |_| {}).unwrap();
    let logged = out.log.last().unwrap().eval.as_ref().unwrap().accuracy;

    let ckpt = dir.path().join("m.dwnc");
    save_checkpoint(&out.model, &ckpt).unwrap();
    let back = load_checkpoint(&ckpt).unwrap();
    assert!((evaluate(&back, &test_ds).unwrap().accuracy - logged).abs() < 1e-6);

    let frozen_path = dir.path().join("m.dwnm");
    freeze(&back).save(&frozen_path).unwrap();
    let frozen = FrozenModel::load(&frozen_path).unwrap();
    let correct = test_ds
        .samples
        .iter()
        .filter(|s| frozen.predict(&s.window).unwrap().label == s.class())
        .count();
    assert!((correct as f64 / test_ds.len() as f64 - logged).abs() < 1e-6);
}

#[test]
fn written_splits_load_back_through_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let ds = har_like(3, 6, 9);
    write_split(dir.path(), Split::Test, &ds.samples).unwrap();
    let a = load_split(dir.path(), Split::Test).unwrap();
    let b = load_split(dir.path(), Split::Test).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.len(), ds.len());
    for (x, y) in a.samples.iter().zip(&ds.samples) {
        assert_eq!((x.label, x.subject), (y.label, y.subject));
    }
}
