//! Edge probabilities straight out of a model are often not a path: the
//! high-probability edges may not even connect. The validator projects them
//! onto the valid path with the highest total preference by running shortest
//! path over the complement weights 1 - p.
//!
//! Run with: cargo run --example project_soft_route

use routelearn::datagen::gen_grid_city;
use routelearn::model::SoftRoute;
use routelearn::roadnet::{is_valid_path, RouteQuery};
use routelearn::validator::project;

fn main() {
    let net = gen_grid_city(3, 3, 200.0, 2).unwrap();
    let seg_between = |a: usize, b: usize| {
        net.outgoing(a)
            .iter()
            .copied()
            .find(|&e| net.segments()[e].to == b)
            .unwrap()
    };

    // High preference on fragments that do not chain into a path.
    let mut probs = vec![0.15; net.segment_count()];
    for (a, b) in [(0, 1), (2, 5), (4, 7), (7, 8)] {
        probs[seg_between(a, b)] = 0.9;
    }
    let query = RouteQuery {
        origin: 0,
        destination: 8,
        departure_interval: 0,
    };

    let favored: Vec<usize> = probs
        .iter()
        .enumerate()
        .filter_map(|(e, &p)| (p > 0.5).then_some(e))
        .collect();
    println!("favored edges (p = 0.9): {favored:?}");
    let as_route = routelearn::roadnet::Route::from_edge_ids(query, &favored, net.segment_count()).unwrap();
    println!(
        "do they form a path on their own? {}",
        is_valid_path(&net, &as_route).unwrap()
    );

    let soft = SoftRoute::new(probs).unwrap();
    let projected = project(&net, &soft, query).unwrap();
    println!("projected route: {:?}", projected.edge_ids());
    println!(
        "valid path from {} to {}: {}",
        query.origin,
        query.destination,
        is_valid_path(&net, &projected).unwrap()
    );
}
