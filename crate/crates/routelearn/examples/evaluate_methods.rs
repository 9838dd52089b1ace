//! Run every routing method on one synthetic dataset and print the metric
//! report table.
//!
//! Run with: cargo run --release --example evaluate_methods

use routelearn::datagen::{generate, GenManifest};
use routelearn::experiment::{reports_to_csv, run_method, split, Method};
use routelearn::model::TrainConfig;

fn main() {
    let dataset = generate(&GenManifest {
        route_count: 400,
        ..GenManifest::new(11)
    })
    .unwrap();
    let sp = split(dataset.routes.len(), 11).unwrap();
    let config = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };

    let mut rows = Vec::new();
    for method in Method::ALL {
        let run = run_method(method, &dataset, &sp, &config).unwrap();
        rows.push((method, run.report));
    }
    print!("{}", reports_to_csv(&rows));
}
