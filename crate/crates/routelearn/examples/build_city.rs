//! Generate a synthetic city with traffic and trips, save it, and print a
//! summary.
//!
//! Run with: cargo run --example build_city

use routelearn::datagen::{generate, save_dataset, GenManifest};

fn main() {
    let manifest = GenManifest {
        route_count: 300,
        ..GenManifest::new(7)
    };
    let dataset = generate(&manifest).unwrap();

    let net = &dataset.net;
    let arterials = net
        .segments()
        .iter()
        .filter(|s| s.speed_limit == net.max_speed_limit())
        .count();
    println!(
        "city: {} intersections, {} segments ({} arterial)",
        net.intersection_count(),
        net.segment_count(),
        arterials
    );
    println!(
        "traffic: {} intervals of {} s, speeds {:.1}..{:.1} m/s",
        dataset.traffic.t_total(),
        dataset.traffic.interval_seconds,
        (0..net.segment_count())
            .flat_map(|j| (0..dataset.traffic.t_total()).map(move |t| (j, t)))
            .map(|(j, t)| dataset.traffic.speed(j, t))
            .fold(f64::MAX, f64::min),
        dataset.traffic.max_speed(),
    );
    let hops: usize = dataset.routes.iter().map(|r| r.selected_count()).sum();
    println!(
        "trips: {} routes, {:.2} segments on average",
        dataset.routes.len(),
        hops as f64 / dataset.routes.len() as f64
    );

    let dir = std::env::temp_dir().join("routelearn-example-city");
    save_dataset(&dataset, &dir).unwrap();
    println!("saved to {}", dir.display());
}
