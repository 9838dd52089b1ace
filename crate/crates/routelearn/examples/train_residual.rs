//! Train the residual model on synthetic trips and compare its held-out
//! routes against the A* routes it corrects.
//!
//! Run with: cargo run --release --example train_residual

use routelearn::datagen::{generate, GenManifest};
use routelearn::experiment::{predict_with_residual, prepare, split};
use routelearn::metrics::evaluate_pairs;
use routelearn::model::{train_on_samples, TrainConfig};
use routelearn::roadnet::Route;

fn main() {
    let dataset = generate(&GenManifest::new(11)).unwrap();
    let sp = split(dataset.routes.len(), 11).unwrap();
    let prepared = prepare(&dataset).unwrap();
    println!(
        "dataset: {} routes -> {} train / {} val / {} test",
        dataset.routes.len(),
        sp.train.len(),
        sp.val.len(),
        sp.test.len()
    );

    let pick = |idx: &[usize]| -> Vec<_> { idx.iter().map(|&i| prepared.samples[i].clone()).collect() };
    let config = TrainConfig {
        epochs: 300,
        ..TrainConfig::default()
    };
    let (params, stats) = train_on_samples(&config, &prepared.inputs, &pick(&sp.train), &pick(&sp.val)).unwrap();
    println!(
        "trained {} epochs: train loss {:.4} -> {:.4}, best validation at epoch {}",
        config.epochs,
        stats.initial_train_loss,
        stats.train_loss.last().unwrap(),
        stats.best_epoch
    );

    let test_samples = pick(&sp.test);
    let truths: Vec<Route> = sp.test.iter().map(|&i| dataset.routes[i].clone()).collect();
    let predictions = predict_with_residual(&params, &dataset, &prepared.inputs, &test_samples).unwrap();
    let report = evaluate_pairs(&dataset.net, &predictions, &truths).unwrap();
    println!(
        "residual model on test: P {:.3}  R {:.3}  F1 {:.3}  match-dist {:.3}  90%-match {:.3}",
        report.precision, report.recall, report.f1, report.match_distance, report.match90
    );

    // The theory routes are cached on the samples; score them as-is.
    let theory: Vec<Route> = test_samples
        .iter()
        .map(|s| {
            let ids: Vec<usize> = s
                .theory
                .iter()
                .enumerate()
                .filter_map(|(e, &on)| (on == 1.0).then_some(e))
                .collect();
            Route::from_edge_ids(s.query, &ids, dataset.net.segment_count()).unwrap()
        })
        .collect();
    let theory_report = evaluate_pairs(&dataset.net, &theory, &truths).unwrap();
    println!(
        "A* alone on test:       P {:.3}  R {:.3}  F1 {:.3}  match-dist {:.3}  90%-match {:.3}",
        theory_report.precision,
        theory_report.recall,
        theory_report.f1,
        theory_report.match_distance,
        theory_report.match90
    );
}
