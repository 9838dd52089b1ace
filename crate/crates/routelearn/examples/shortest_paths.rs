//! Compare the three classical routers on a congested corner-to-corner trip:
//! Dijkstra by distance ignores traffic, Dijkstra by time and A* react to
//! it, and A* finds the same cost with a heuristic search.
//!
//! Run with: cargo run --example shortest_paths

use routelearn::datagen::{gen_grid_city, gen_traffic};
use routelearn::roadnet::RouteQuery;
use routelearn::router::{astar, route_di_dis, route_di_time};

fn main() {
    let net = gen_grid_city(3, 3, 200.0, 11).unwrap();
    let traffic = gen_traffic(&net, 16, 12);

    let query = RouteQuery {
        origin: 0,
        destination: 8,
        departure_interval: 5,
    };

    let by_distance = route_di_dis(&net, query).unwrap();
    println!(
        "di-dis : {:7.1} m   via edges {:?}",
        by_distance.total_cost, by_distance.edge_sequence
    );

    let by_time = route_di_time(&net, &traffic, query).unwrap();
    println!(
        "di-time: {:7.1} s   via edges {:?}",
        by_time.total_cost, by_time.edge_sequence
    );

    let fast = astar(&net, &traffic, query).unwrap();
    println!(
        "astar  : {:7.1} s   via edges {:?}",
        fast.total_cost, fast.edge_sequence
    );

    assert_eq!(fast.total_cost, by_time.total_cost);
    println!("A* matches the Dijkstra-by-time cost exactly.");

    // The same trip at every departure interval: travel time moves with the
    // traffic, and the chosen route moves with it.
    println!("\ninterval  travel time  route");
    for t in 0..traffic.t_total() {
        let q = RouteQuery { departure_interval: t, ..query };
        let route = astar(&net, &traffic, q).unwrap();
        println!("{t:8}  {:10.1}s  {:?}", route.total_cost, route.edge_sequence);
    }
}
