//! Classical shortest-path engines: Dijkstra over arbitrary positive edge
//! weights, distance and travel-time wrappers, and A* with an admissible
//! travel-time heuristic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::roadnet::{euclidean_distance, RoadNetwork, Route, RouteQuery};
use crate::traffic::{speeds_at, travel_time, TrafficTensor};

/// A binary route produced by a shortest-path engine, with the path order
/// preserved so the cost can be re-derived edge by edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRoute {
    pub query: RouteQuery,
    /// Binary edge-incidence vector of length M.
    pub edges: Vec<bool>,
    /// Selected segment ids in traversal order, origin to destination.
    pub edge_sequence: Vec<usize>,
    /// Sum of edge costs along the path, accumulated in traversal order.
    pub total_cost: f64,
}

impl TheoryRoute {
    pub fn to_route(&self) -> Route {
        Route {
            query: self.query,
            edges: self.edges.clone(),
        }
    }
}

/// Frontier entry. The ordering is the documented tie-break: smaller key
/// first, then smaller node id, then smaller predecessor id, then smaller
/// edge id. `BinaryHeap` is a max-heap, so comparisons are reversed.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    /// Pop priority: plain cost for Dijkstra, cost-plus-heuristic for A*.
    key: f64,
    /// Cost from the origin, used for the stale-entry check.
    cost: f64,
    node: usize,
    pred: usize,
    edge: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.pred.cmp(&self.pred))
            .then_with(|| other.edge.cmp(&self.edge))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NO_EDGE: usize = usize::MAX;

struct SearchState {
    cost: Vec<f64>,
    pred_node: Vec<usize>,
    pred_edge: Vec<usize>,
}

impl SearchState {
    fn new(n: usize, origin: usize) -> Self {
        let mut state = SearchState {
            cost: vec![f64::INFINITY; n],
            pred_node: vec![usize::MAX; n],
            pred_edge: vec![NO_EDGE; n],
        };
        state.cost[origin] = 0.0;
        state
    }

    /// Relaxes one edge. Strict improvements update the cost; exact ties keep
    /// the lexicographically smaller (predecessor id, edge id).
    fn relax(&mut self, to: usize, new_cost: f64, pred: usize, edge: usize) -> bool {
        if new_cost < self.cost[to] {
            self.cost[to] = new_cost;
            self.pred_node[to] = pred;
            self.pred_edge[to] = edge;
            true
        } else {
            if new_cost == self.cost[to]
                && (pred, edge) < (self.pred_node[to], self.pred_edge[to])
            {
                self.pred_node[to] = pred;
                self.pred_edge[to] = edge;
            }
            false
        }
    }

    fn reconstruct(&self, net: &RoadNetwork, query: RouteQuery) -> TheoryRoute {
        let mut sequence = Vec::new();
        let mut node = query.destination;
        while node != query.origin {
            let edge = self.pred_edge[node];
            sequence.push(edge);
            node = net.segments()[edge].from;
        }
        sequence.reverse();
        let mut edges = vec![false; net.segment_count()];
        for &e in &sequence {
            edges[e] = true;
        }
        TheoryRoute {
            query,
            edges,
            edge_sequence: sequence,
            total_cost: self.cost[query.destination],
        }
    }
}

fn check_weights(net: &RoadNetwork, weights: &[f64]) -> Result<()> {
    if weights.len() != net.segment_count() {
        return Err(Error::Dimension {
            expected: net.segment_count(),
            got: weights.len(),
            context: "edge weights",
        });
    }
    for (e, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::Domain(format!("weight {w} on segment {e} not positive")));
        }
    }
    Ok(())
}

fn check_endpoints(net: &RoadNetwork, query: &RouteQuery) -> Result<()> {
    net.intersection(query.origin)?;
    net.intersection(query.destination)?;
    if query.origin == query.destination {
        return Err(Error::Domain(format!(
            "query origin and destination are both {}",
            query.origin
        )));
    }
    Ok(())
}

/// Minimum-total-weight simple path under arbitrary positive edge weights.
///
/// Equal-cost ties are resolved per node toward the smaller predecessor
/// intersection id, then the smaller segment id, which makes the returned
/// edge vector a pure function of the inputs. Stale frontier entries
/// (superseded by a cheaper relaxation) are skipped on pop, before any
/// tie-break comparison.
pub fn dijkstra(net: &RoadNetwork, weights: &[f64], query: RouteQuery) -> Result<TheoryRoute> {
    check_weights(net, weights)?;
    check_endpoints(net, &query)?;

    let mut state = SearchState::new(net.intersection_count(), query.origin);
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        key: 0.0,
        cost: 0.0,
        node: query.origin,
        pred: query.origin,
        edge: NO_EDGE,
    });

    // Run to exhaustion so every optimal-cost relaxation participates in the
    // tie-break, not just those seen before the destination settles.
    while let Some(entry) = heap.pop() {
        if entry.cost > state.cost[entry.node] {
            continue; // stale
        }
        for &e in net.outgoing(entry.node) {
            let seg = &net.segments()[e];
            let next_cost = entry.cost + weights[e];
            if state.relax(seg.to, next_cost, entry.node, e) {
                heap.push(Frontier {
                    key: next_cost,
                    cost: next_cost,
                    node: seg.to,
                    pred: entry.node,
                    edge: e,
                });
            }
        }
    }

    if state.cost[query.destination].is_infinite() {
        return Err(Error::NoPath { query });
    }
    Ok(state.reconstruct(net, query))
}

/// Fastest path under the departure interval's speeds, searched with the
/// heuristic `straight-line distance / fastest speed anywhere`.
///
/// The heuristic never overestimates the remaining travel time (segment
/// lengths are at least the straight-line distance between their endpoints),
/// so the returned cost equals the Dijkstra-by-time cost.
pub fn astar(net: &RoadNetwork, traffic: &TrafficTensor, query: RouteQuery) -> Result<TheoryRoute> {
    net.validate_query(&query, traffic.t_total())?;
    let speeds = speeds_at(traffic, query.departure_interval)?;
    let weights = time_weights(net, &speeds)?;

    // Observed speeds may legitimately exceed the posted limit, so the
    // divisor covers both; anything slower would break admissibility.
    let v_max = net
        .max_speed_limit()
        .max(speeds.iter().copied().fold(f64::MIN, f64::max));
    let heuristic = |node: usize| -> f64 {
        euclidean_distance(net, node, query.destination).expect("validated ids") / v_max
    };

    let mut state = SearchState::new(net.intersection_count(), query.origin);
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        key: heuristic(query.origin),
        cost: 0.0,
        node: query.origin,
        pred: query.origin,
        edge: NO_EDGE,
    });

    while let Some(entry) = heap.pop() {
        if entry.cost > state.cost[entry.node] {
            continue; // stale
        }
        if entry.node == query.destination {
            return Ok(state.reconstruct(net, query));
        }
        for &e in net.outgoing(entry.node) {
            let seg = &net.segments()[e];
            let next_cost = entry.cost + weights[e];
            if state.relax(seg.to, next_cost, entry.node, e) {
                heap.push(Frontier {
                    key: next_cost + heuristic(seg.to),
                    cost: next_cost,
                    node: seg.to,
                    pred: entry.node,
                    edge: e,
                });
            }
        }
    }
    Err(Error::NoPath { query })
}

/// Per-segment travel times for one interval's speeds.
pub fn time_weights(net: &RoadNetwork, speeds: &[f64]) -> Result<Vec<f64>> {
    if speeds.len() != net.segment_count() {
        return Err(Error::Dimension {
            expected: net.segment_count(),
            got: speeds.len(),
            context: "speed vector",
        });
    }
    net.segments()
        .iter()
        .map(|seg| travel_time(seg, speeds[seg.id]))
        .collect()
}

/// Shortest path by driving distance.
pub fn route_di_dis(net: &RoadNetwork, query: RouteQuery) -> Result<TheoryRoute> {
    let weights: Vec<f64> = net.segments().iter().map(|s| s.length).collect();
    dijkstra(net, &weights, query)
}

/// Fastest path by travel time at the departure interval.
pub fn route_di_time(
    net: &RoadNetwork,
    traffic: &TrafficTensor,
    query: RouteQuery,
) -> Result<TheoryRoute> {
    net.validate_query(&query, traffic.t_total())?;
    let speeds = speeds_at(traffic, query.departure_interval)?;
    let weights = time_weights(net, &speeds)?;
    dijkstra(net, &weights, query)
}
