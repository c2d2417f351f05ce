//! Trainer-level integration checks: checkpoint resume, run
//! reproducibility, and the bundled iris file.

use std::path::Path;

use packtrain_core::checkpoint;
use packtrain_core::iris;
use packtrain_core::nn::{self, Hyperparams, TrainOptions};
use packtrain_core::plain::PlainNetwork;
use packtrain_core::{EngineContext, Layout};

fn iris_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/iris.csv"))
}

#[test]
fn bundled_iris_file_loads_and_splits_120_30() {
    let data = iris::load_iris(iris_path(), 1).unwrap();
    assert_eq!(data.len(), 150);
    assert_eq!(data.train_idx.len(), 120);
    assert_eq!(data.test_idx.len(), 30);
    // 50 of each species
    for class in 0..iris::CLASSES {
        let count = data.labels.iter().filter(|l| l[class] == 1.0).count();
        assert_eq!(count, 50, "class {class}");
    }
    // normalization clamps each feature to [0, 1] with both ends attained
    for col in 0..iris::FEATURES {
        let lo = data
            .features
            .iter()
            .map(|r| r[col])
            .fold(f64::INFINITY, f64::min);
        let hi = data
            .features
            .iter()
            .map(|r| r[col])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0), "feature {col}");
    }
}

#[test]
fn identical_configs_reproduce_identical_metrics() {
    let run = || {
        let data = iris::load_iris(iris_path(), 5).unwrap().split();
        let hyper = Hyperparams {
            learning_rate: 0.1,
            batch_size: 20,
            epochs: 5,
        };
        let ctx = EngineContext::new(9, 1e-6, 5);
        let mut net = nn::init_network(&[4, 10, 3], Layout::Diagonal, hyper, 0.1, 5, &ctx).unwrap();
        nn::train(&mut net, &data, &TrainOptions::default(), &ctx)
            .unwrap()
            .to_csv()
    };
    assert_eq!(run(), run(), "same config must give byte-identical metrics");
}

#[test]
fn checkpoint_resume_matches_a_continuous_run() {
    let data = iris::load_iris(iris_path(), 9).unwrap().split();
    let hyper = |epochs| Hyperparams {
        learning_rate: 0.1,
        batch_size: 20,
        epochs,
    };

    // continuous: 6 epochs straight through
    let ctx = EngineContext::exact(9);
    let mut full = nn::init_network(&[4, 10, 3], Layout::Diagonal, hyper(6), 0.1, 9, &ctx).unwrap();
    let full_metrics = nn::train(&mut full, &data, &TrainOptions::default(), &ctx).unwrap();

    // split: 3 epochs, checkpoint, reload, 3 more
    let ctx_a = EngineContext::exact(9);
    let mut head =
        nn::init_network(&[4, 10, 3], Layout::Diagonal, hyper(3), 0.1, 9, &ctx_a).unwrap();
    nn::train(&mut head, &data, &TrainOptions::default(), &ctx_a).unwrap();
    let json = checkpoint::to_json(&head, 3, &ctx_a).unwrap();

    let ctx_b = EngineContext::exact(9);
    let (mut tail, done) = checkpoint::from_json(&json, &ctx_b).unwrap();
    assert_eq!(done, 3);
    tail.hyper.epochs = 3;
    let opts = TrainOptions {
        start_epoch: done,
        ..TrainOptions::default()
    };
    let tail_metrics = nn::train(&mut tail, &data, &opts, &ctx_b).unwrap();

    for (a, b) in full_metrics.epochs[3..].iter().zip(&tail_metrics.epochs) {
        assert_eq!(a.epoch, b.epoch);
        assert!(
            (a.train_loss - b.train_loss).abs() < 1e-12,
            "epoch {}: {} vs {}",
            a.epoch,
            a.train_loss,
            b.train_loss
        );
        assert!((a.test_loss - b.test_loss).abs() < 1e-12);
    }
    // and the weights themselves agree
    for (la, lb) in full.layers.iter().zip(&tail.layers) {
        for (pa, pb) in la.weights.parts().iter().zip(lb.weights.parts()) {
            for (x, y) in pa.slots().iter().zip(pb.slots()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn row_layout_also_tracks_the_reference_trainer() {
    let data = iris::load_iris(iris_path(), 2).unwrap().split();
    let hyper = Hyperparams {
        learning_rate: 0.1,
        batch_size: 20,
        epochs: 5,
    };
    let ctx = EngineContext::exact(12);
    let mut net = nn::init_network(&[4, 10, 3], Layout::Row, hyper, 0.1, 2, &ctx).unwrap();
    let packed = nn::train(&mut net, &data, &TrainOptions::default(), &ctx).unwrap();
    let mut plain = PlainNetwork::new(nn::gaussian_init(&[4, 10, 3], 0.1, 2).unwrap(), hyper, 2);
    let reference = plain.train(&data, 5, 0).unwrap();
    for (a, b) in packed.epochs.iter().zip(&reference.epochs) {
        assert!(
            (a.train_loss - b.train_loss).abs() <= 1e-6,
            "epoch {}: {} vs {}",
            a.epoch,
            a.train_loss,
            b.train_loss
        );
    }
}

#[test]
fn noisy_training_diverges_but_stays_close() {
    let data = iris::load_iris(iris_path(), 4).unwrap().split();
    let hyper = Hyperparams {
        learning_rate: 0.1,
        batch_size: 20,
        epochs: 10,
    };
    let run = |noise: f64| {
        let ctx = EngineContext::new(9, noise, 4);
        let mut net = nn::init_network(&[4, 10, 3], Layout::Diagonal, hyper, 0.1, 4, &ctx).unwrap();
        nn::train(&mut net, &data, &TrainOptions::default(), &ctx).unwrap()
    };
    let exact = run(0.0);
    let noisy = run(2.0f64.powi(-20));
    let last_exact = exact.epochs.last().unwrap().train_loss;
    let last_noisy = noisy.epochs.last().unwrap().train_loss;
    assert_ne!(last_exact, last_noisy, "noise must actually perturb");
    assert!(
        (last_exact - last_noisy).abs() < 1e-3,
        "tiny noise must stay tiny: {last_exact} vs {last_noisy}"
    );
}
