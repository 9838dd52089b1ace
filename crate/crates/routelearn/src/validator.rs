//! Path validator: projects per-edge selection probabilities onto the set of
//! valid paths by running shortest path over the complement weights `1 - p`.

use crate::error::Result;
use crate::model::SoftRoute;
use crate::roadnet::{RoadNetwork, Route, RouteQuery};
use crate::router::dijkstra;

/// Additive floor keeping complement weights strictly positive where p = 1.
pub const PROJECTION_EPSILON: f64 = 1e-6;

/// Returns the valid path with the highest total preference: the shortest
/// path under edge weights `(1 - p) + epsilon`.
///
/// Minimizing the complement sum is not the same as maximizing the raw
/// probability sum when path lengths differ; shorter paths win at equal
/// average preference. No probability threshold is applied anywhere.
pub fn project(net: &RoadNetwork, soft: &SoftRoute, query: RouteQuery) -> Result<Route> {
    let weights: Vec<f64> = soft
        .probs()
        .iter()
        .map(|&p| (1.0 - p) + PROJECTION_EPSILON)
        .collect();
    Ok(dijkstra(net, &weights, query)?.to_route())
}
