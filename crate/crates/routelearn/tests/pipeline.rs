//! End-to-end integration: generation, file round trips through the
//! experiment layer, training behavior, and checkpoint reuse.

use routelearn::datagen::{generate, load_dataset, save_dataset, GenManifest};
use routelearn::experiment::{run_method, split, Method};
use routelearn::model::{
    load_checkpoint, predict, save_checkpoint, train, Optimizer, TrainConfig,
};
use routelearn::roadnet::is_valid_path;

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("routelearn-it-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn training_halves_the_loss_quickly() {
    // 200 synthetic samples, 50 epochs, lr 0.05, H = 32: the train loss must
    // drop by at least half from its starting value.
    let manifest = GenManifest {
        route_count: 200,
        t_total: 8,
        ..GenManifest::new(3)
    };
    let dataset = generate(&manifest).unwrap();
    let split = split(dataset.routes.len(), 3).unwrap();
    let config = TrainConfig {
        learning_rate: 0.05,
        epochs: 50,
        batch_size: 16,
        seed: 3,
        hidden_width: 32,
        optimizer: Optimizer::Momentum { momentum: 0.9 },
    };
    let (_, stats) = train(
        &config,
        &dataset.routes,
        &split.train,
        &split.val,
        &dataset.net,
        &dataset.traffic,
    )
    .unwrap();
    let final_loss = *stats.train_loss.last().unwrap();
    assert!(
        final_loss <= 0.5 * stats.initial_train_loss,
        "loss only went {} -> {final_loss}",
        stats.initial_train_loss
    );
}

#[test]
fn trained_model_round_trips_through_checkpoint() {
    let manifest = GenManifest {
        route_count: 80,
        t_total: 4,
        ..GenManifest::new(41)
    };
    let dataset = generate(&manifest).unwrap();
    let split = split(dataset.routes.len(), 41).unwrap();
    let config = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let (params, _) = train(
        &config,
        &dataset.routes,
        &split.train,
        &split.val,
        &dataset.net,
        &dataset.traffic,
    )
    .unwrap();

    let dir = temp_dir("ckpt");
    let path = dir.join("model.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let reloaded = load_checkpoint(&path, &dataset.net).unwrap();
    assert_eq!(params, reloaded);

    // Predictions from the reloaded model are identical and always valid.
    for &i in split.test.iter().take(10) {
        let query = dataset.routes[i].query;
        let a = predict(&params, &query, &dataset.traffic, &dataset.net).unwrap();
        let b = predict(&reloaded, &query, &dataset.traffic, &dataset.net).unwrap();
        assert_eq!(a.edges, b.edges);
        assert!(is_valid_path(&dataset.net, &a).unwrap());
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn saved_dataset_reproduces_method_reports() {
    let manifest = GenManifest {
        route_count: 60,
        t_total: 4,
        ..GenManifest::new(55)
    };
    let dataset = generate(&manifest).unwrap();
    let dir = temp_dir("dataset");
    save_dataset(&dataset, &dir).unwrap();
    let reloaded = load_dataset(&dir).unwrap();

    let sp = split(dataset.routes.len(), 5).unwrap();
    let config = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    for method in [Method::DiDis, Method::AStar, Method::Nn] {
        let a = run_method(method, &dataset, &sp, &config).unwrap();
        let b = run_method(method, &reloaded, &sp, &config).unwrap();
        assert_eq!(a.report, b.report, "{method} differs after reload");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn every_method_emits_valid_paths() {
    let manifest = GenManifest {
        route_count: 60,
        t_total: 4,
        ..GenManifest::new(19)
    };
    let dataset = generate(&manifest).unwrap();
    let sp = split(dataset.routes.len(), 19).unwrap();
    let config = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    for method in Method::ALL {
        let run = run_method(method, &dataset, &sp, &config).unwrap();
        assert_eq!(run.predictions.len(), sp.test.len());
        for p in &run.predictions {
            assert!(is_valid_path(&dataset.net, p).unwrap(), "{method} emitted invalid path");
        }
        for r in [
            run.report.precision,
            run.report.recall,
            run.report.f1,
            run.report.match_distance,
            run.report.match90,
        ] {
            assert!((0.0..=1.0).contains(&r));
        }
    }
}
