//! The data-sparsity study: retrain the learned methods on shrinking
//! fractions of the train split and watch which ones keep their accuracy.
//! Theory baselines need no data and stay flat by construction.
//!
//! Run with: cargo run --release --example sparsity_sweep

use routelearn::datagen::{generate, GenManifest};
use routelearn::experiment::{sparsity_sweep, Method, DEFAULT_FRACTIONS};
use routelearn::model::TrainConfig;

fn main() {
    let dataset = generate(&GenManifest::new(11)).unwrap();
    let methods = [
        Method::DiDis,
        Method::DiTime,
        Method::AStar,
        Method::Nn,
        Method::Lfd,
        Method::L2r,
    ];
    let config = TrainConfig {
        epochs: 300,
        ..TrainConfig::default()
    };
    let table = sparsity_sweep(&dataset, &DEFAULT_FRACTIONS, &methods, &config, 11).unwrap();
    print!("{}", table.to_csv());

    let dir = std::env::temp_dir().join("routelearn-example-sweep");
    routelearn::experiment::save_sweep_outputs(&table, &dir).unwrap();
    println!("full reports (sweep.csv, long.csv, summary.json) in {}", dir.display());
}
