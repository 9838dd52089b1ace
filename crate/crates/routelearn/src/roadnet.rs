//! Road-network substrate: intersections, directed road segments, static
//! drivable-condition features, route representation, and path validity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed width of the per-segment condition feature vector.
pub const CONDITION_WIDTH: usize = 100;

/// Indices of the named condition features. Entries past `BUS_LINES`
/// are zero padding.
pub mod condition_feature {
    pub const SPEED_LIMIT: usize = 0;
    pub const LANE_COUNT: usize = 1;
    pub const ROAD_LEVEL: usize = 2;
    pub const LANE_WIDTH: usize = 3;
    pub const BUS_LINES: usize = 4;
}

/// Static per-road features, normalized to `[0, 1]`, fixed width 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionVector(Vec<f64>);

impl ConditionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != CONDITION_WIDTH {
            return Err(Error::Dimension {
                expected: CONDITION_WIDTH,
                got: values.len(),
                context: "condition vector width",
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "condition feature {i} = {v} outside [0, 1]"
                )));
            }
        }
        Ok(ConditionVector(values))
    }

    /// Builds a vector from the five named features, zero-padded to width 100.
    pub fn from_named(
        speed_limit: f64,
        lane_count: f64,
        road_level: f64,
        lane_width: f64,
        bus_lines: f64,
    ) -> Result<Self> {
        let mut values = vec![0.0; CONDITION_WIDTH];
        values[condition_feature::SPEED_LIMIT] = speed_limit;
        values[condition_feature::LANE_COUNT] = lane_count;
        values[condition_feature::ROAD_LEVEL] = road_level;
        values[condition_feature::LANE_WIDTH] = lane_width;
        values[condition_feature::BUS_LINES] = bus_lines;
        ConditionVector::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A graph node with planar coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// A directed road segment. Two-way streets are represented as two segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    /// Driving length in meters. May exceed the straight-line endpoint
    /// distance (curvy roads) by up to 10x.
    pub length: f64,
    /// Legal limit in meters per second.
    pub speed_limit: f64,
    pub condition: ConditionVector,
}

/// Origin, destination, and departure time-interval of one trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteQuery {
    pub origin: usize,
    pub destination: usize,
    pub departure_interval: usize,
}

/// A route: its query plus a binary edge-incidence vector of length M.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub query: RouteQuery,
    pub edges: Vec<bool>,
}

impl Route {
    pub fn from_edge_ids(query: RouteQuery, ids: &[usize], segment_count: usize) -> Result<Self> {
        let mut edges = vec![false; segment_count];
        for &id in ids {
            if id >= segment_count {
                return Err(Error::UnknownId {
                    entity: "segment",
                    id,
                });
            }
            edges[id] = true;
        }
        Ok(Route { query, edges })
    }

    /// Selected segment ids in ascending order.
    pub fn edge_ids(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect()
    }

    pub fn selected_count(&self) -> usize {
        self.edges.iter().filter(|&&on| on).count()
    }
}

/// Immutable road network. Adjacency lists are derived at construction and
/// hold outgoing segment ids per intersection in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    intersections: Vec<Intersection>,
    segments: Vec<RoadSegment>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RoadnetFile {
    intersections: Vec<Intersection>,
    segments: Vec<RoadSegment>,
}

impl RoadNetwork {
    /// Validates all invariants and builds adjacency.
    pub fn new(intersections: Vec<Intersection>, segments: Vec<RoadSegment>) -> Result<Self> {
        let n = intersections.len();
        if n == 0 {
            return Err(Error::Validation {
                entity: "network",
                id: 0,
                reason: "no intersections".into(),
            });
        }
        for (i, node) in intersections.iter().enumerate() {
            if node.id != i {
                return Err(Error::Validation {
                    entity: "intersection",
                    id: node.id,
                    reason: format!("id not dense: expected {i}"),
                });
            }
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(Error::Validation {
                    entity: "intersection",
                    id: node.id,
                    reason: "non-finite coordinates".into(),
                });
            }
        }
        for (j, seg) in segments.iter().enumerate() {
            if seg.id != j {
                return Err(Error::Validation {
                    entity: "segment",
                    id: seg.id,
                    reason: format!("id not dense: expected {j}"),
                });
            }
            if seg.from >= n || seg.to >= n {
                return Err(Error::Validation {
                    entity: "segment",
                    id: seg.id,
                    reason: format!("endpoint {} does not exist", seg.from.max(seg.to)),
                });
            }
            if seg.from == seg.to {
                return Err(Error::Validation {
                    entity: "segment",
                    id: seg.id,
                    reason: "from equals to".into(),
                });
            }
            if !seg.length.is_finite() || seg.length <= 0.0 {
                return Err(Error::Validation {
                    entity: "segment",
                    id: seg.id,
                    reason: format!("length {} not positive", seg.length),
                });
            }
            if !seg.speed_limit.is_finite() || seg.speed_limit <= 0.0 {
                return Err(Error::Validation {
                    entity: "segment",
                    id: seg.id,
                    reason: format!("speed limit {} not positive", seg.speed_limit),
                });
            }
            let a = &intersections[seg.from];
            let b = &intersections[seg.to];
            let straight = (a.x - b.x).hypot(a.y - b.y);
            // A segment cannot be shorter than the straight line between its
            // endpoints, and more than 10x longer is treated as bad data.
            if seg.length + 1e-6 < straight || seg.length > 10.0 * straight {
                return Err(Error::Validation {
                    entity: "segment",
                    id: seg.id,
                    reason: format!(
                        "length {} inconsistent with endpoint distance {straight}",
                        seg.length
                    ),
                });
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for seg in &segments {
            adjacency[seg.from].push(seg.id);
        }
        Ok(RoadNetwork {
            intersections,
            segments,
            adjacency,
        })
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, id: usize) -> Result<&RoadSegment> {
        self.segments.get(id).ok_or(Error::UnknownId {
            entity: "segment",
            id,
        })
    }

    pub fn intersection(&self, id: usize) -> Result<&Intersection> {
        self.intersections.get(id).ok_or(Error::UnknownId {
            entity: "intersection",
            id,
        })
    }

    pub fn intersection_count(&self) -> usize {
        self.intersections.len()
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Outgoing segment ids of an intersection, ascending.
    pub fn outgoing(&self, intersection: usize) -> &[usize] {
        &self.adjacency[intersection]
    }

    /// Largest speed limit over all segments.
    pub fn max_speed_limit(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.speed_limit)
            .fold(f64::MIN, f64::max)
    }

    /// Bounding box of all intersection coordinates: (min_x, min_y, max_x, max_y).
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let mut bb = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for node in &self.intersections {
            bb.0 = bb.0.min(node.x);
            bb.1 = bb.1.min(node.y);
            bb.2 = bb.2.max(node.x);
            bb.3 = bb.3.max(node.y);
        }
        bb
    }

    /// Checks a query against this network: distinct endpoints that exist,
    /// and a departure interval below `t_total`.
    pub fn validate_query(&self, query: &RouteQuery, t_total: usize) -> Result<()> {
        self.intersection(query.origin)?;
        self.intersection(query.destination)?;
        if query.origin == query.destination {
            return Err(Error::Domain(format!(
                "query origin and destination are both {}",
                query.origin
            )));
        }
        if query.departure_interval >= t_total {
            return Err(Error::IndexOutOfRange {
                what: "departure interval",
                index: query.departure_interval,
                len: t_total,
            });
        }
        Ok(())
    }

    /// Canonical JSON form; `load_roadnet(save_roadnet(net))` is bit-exact.
    pub fn to_json(&self) -> String {
        let file = RoadnetFile {
            intersections: self.intersections.clone(),
            segments: self.segments.clone(),
        };
        let mut s = serde_json::to_string(&file).expect("roadnet serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RoadnetFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            detail: e.to_string(),
        })?;
        RoadNetwork::new(file.intersections, file.segments)
    }
}

/// Straight-line distance in meters between two intersections.
pub fn euclidean_distance(net: &RoadNetwork, a: usize, b: usize) -> Result<f64> {
    let pa = net.intersection(a)?;
    let pb = net.intersection(b)?;
    Ok((pa.x - pb.x).hypot(pa.y - pb.y))
}

/// True iff the route's selected edges form exactly one simple directed path
/// from its origin to its destination: no branches, cycles, or fragments.
///
/// Only the selected entries and the query are inspected, so the result is
/// invariant under any rearrangement of unselected edges.
pub fn is_valid_path(net: &RoadNetwork, route: &Route) -> Result<bool> {
    let m = net.segment_count();
    if route.edges.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: route.edges.len(),
            context: "route edge vector",
        });
    }
    let n = net.intersection_count();
    let q = &route.query;
    if q.origin >= n || q.destination >= n || q.origin == q.destination {
        return Ok(false);
    }

    let selected = route.edge_ids();
    if selected.is_empty() {
        return Ok(false);
    }
    // A node with two selected outgoing edges is a branch.
    let mut out: Vec<Option<usize>> = vec![None; n];
    for &e in &selected {
        let from = net.segments[e].from;
        if out[from].is_some() {
            return Ok(false);
        }
        out[from] = Some(e);
    }

    // Walk the unique chain from the origin.
    let mut visited = vec![false; n];
    visited[q.origin] = true;
    let mut current = q.origin;
    let mut used = 0usize;
    while current != q.destination {
        let Some(e) = out[current] else {
            return Ok(false); // dead end before reaching the destination
        };
        current = net.segments[e].to;
        used += 1;
        if visited[current] {
            return Ok(false); // revisited an intersection
        }
        visited[current] = true;
    }
    // Edges not consumed by the walk are disconnected fragments or stubs.
    Ok(used == selected.len())
}

pub fn load_roadnet(path: &Path) -> Result<RoadNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RoadnetFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    RoadNetwork::new(file.intersections, file.segments)
}

pub fn save_roadnet(net: &RoadNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, net.to_json()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_grid_city;

    fn grid2x2() -> RoadNetwork {
        gen_grid_city(2, 2, 100.0, 7).unwrap()
    }

    /// Finds the segment id from `a` to `b`, panicking if absent.
    fn seg_between(net: &RoadNetwork, a: usize, b: usize) -> usize {
        net.outgoing(a)
            .iter()
            .copied()
            .find(|&e| net.segments()[e].to == b)
            .unwrap()
    }

    #[test]
    fn grid_counts() {
        let net = grid2x2();
        assert_eq!(net.intersection_count(), 4);
        assert_eq!(net.segment_count(), 8);
        let net3 = gen_grid_city(3, 3, 100.0, 7).unwrap();
        assert_eq!(net3.intersection_count(), 9);
        assert_eq!(net3.segment_count(), 24);
    }

    #[test]
    fn valid_two_edge_path() {
        let net = grid2x2();
        // 2x2 row-major layout: 0-1 top row, 2-3 bottom row; 0 -> 1 -> 3.
        let ids = [seg_between(&net, 0, 1), seg_between(&net, 1, 3)];
        let query = RouteQuery {
            origin: 0,
            destination: 3,
            departure_interval: 0,
        };
        let route = Route::from_edge_ids(query, &ids, net.segment_count()).unwrap();
        assert!(is_valid_path(&net, &route).unwrap());
    }

    #[test]
    fn disjoint_edges_invalid() {
        let net = grid2x2();
        let ids = [seg_between(&net, 0, 1), seg_between(&net, 2, 3)];
        let query = RouteQuery {
            origin: 0,
            destination: 3,
            departure_interval: 0,
        };
        let route = Route::from_edge_ids(query, &ids, net.segment_count()).unwrap();
        assert!(!is_valid_path(&net, &route).unwrap());
    }

    #[test]
    fn high_probability_edges_not_chaining_invalid() {
        // Edges that each look individually likely but do not connect.
        let net = gen_grid_city(3, 3, 100.0, 7).unwrap();
        let ids = [
            seg_between(&net, 0, 1),
            seg_between(&net, 2, 5),
            seg_between(&net, 7, 8),
        ];
        let query = RouteQuery {
            origin: 0,
            destination: 8,
            departure_interval: 0,
        };
        let route = Route::from_edge_ids(query, &ids, net.segment_count()).unwrap();
        assert!(!is_valid_path(&net, &route).unwrap());
    }

    #[test]
    fn branch_and_cycle_invalid() {
        let net = gen_grid_city(3, 3, 100.0, 7).unwrap();
        let query = RouteQuery {
            origin: 0,
            destination: 8,
            departure_interval: 0,
        };
        // Branch: two outgoing edges at node 1.
        let ids = [
            seg_between(&net, 0, 1),
            seg_between(&net, 1, 2),
            seg_between(&net, 1, 4),
        ];
        let route = Route::from_edge_ids(query, &ids, net.segment_count()).unwrap();
        assert!(!is_valid_path(&net, &route).unwrap());
        // Cycle appended to a path.
        let ids = [
            seg_between(&net, 0, 1),
            seg_between(&net, 1, 4),
            seg_between(&net, 4, 3),
            seg_between(&net, 3, 0),
        ];
        let route = Route::from_edge_ids(query, &ids, net.segment_count()).unwrap();
        assert!(!is_valid_path(&net, &route).unwrap());
    }

    #[test]
    fn empty_selection_invalid() {
        let net = grid2x2();
        let query = RouteQuery {
            origin: 0,
            destination: 3,
            departure_interval: 0,
        };
        let route = Route::from_edge_ids(query, &[], net.segment_count()).unwrap();
        assert!(!is_valid_path(&net, &route).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let net = grid2x2();
        let query = RouteQuery {
            origin: 0,
            destination: 3,
            departure_interval: 0,
        };
        let route = Route {
            query,
            edges: vec![false; 5],
        };
        assert!(matches!(
            is_valid_path(&net, &route),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn euclidean_identity_and_triangle() {
        let net = grid2x2();
        assert_eq!(euclidean_distance(&net, 2, 2).unwrap(), 0.0);
        // Nodes at (0,0) and (300,400) scaled from a custom net.
        let intersections = vec![
            Intersection { id: 0, x: 0.0, y: 0.0 },
            Intersection { id: 1, x: 3.0, y: 4.0 },
        ];
        let segments = vec![RoadSegment {
            id: 0,
            from: 0,
            to: 1,
            length: 5.0,
            speed_limit: 10.0,
            condition: ConditionVector::new(vec![0.0; CONDITION_WIDTH]).unwrap(),
        }];
        let net = RoadNetwork::new(intersections, segments).unwrap();
        assert_eq!(euclidean_distance(&net, 0, 1).unwrap(), 5.0);
    }

    #[test]
    fn euclidean_matches_hypotenuse_recomputation() {
        let net = gen_grid_city(3, 4, 150.0, 11).unwrap();
        for (a, b) in [(0usize, 11usize), (2, 9), (5, 6)] {
            let pa = net.intersection(a).unwrap();
            let pb = net.intersection(b).unwrap();
            let expected = ((pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2)).sqrt();
            let got = euclidean_distance(&net, a, b).unwrap();
            assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        }
        assert!(matches!(
            euclidean_distance(&net, 0, 99),
            Err(Error::UnknownId { .. })
        ));
    }

    #[test]
    fn dangling_segment_reference_rejected() {
        let net = gen_grid_city(3, 3, 100.0, 7).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&net.to_json()).unwrap();
        json["segments"][0]["to"] = serde_json::json!(99);
        let err = RoadNetwork::from_json(&json.to_string()).unwrap_err();
        assert!(matches!(err, Error::Validation { entity: "segment", .. }), "{err}");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let err = RoadNetwork::from_json("{\"intersections\": [").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn save_load_save_is_bit_exact() {
        let net = gen_grid_city(3, 3, 123.456, 42).unwrap();
        let first = net.to_json();
        let reloaded = RoadNetwork::from_json(&first).unwrap();
        assert_eq!(first, reloaded.to_json());
    }

    #[test]
    fn geometry_slack_enforced() {
        let intersections = vec![
            Intersection { id: 0, x: 0.0, y: 0.0 },
            Intersection { id: 1, x: 100.0, y: 0.0 },
        ];
        let seg = |length: f64| {
            vec![RoadSegment {
                id: 0,
                from: 0,
                to: 1,
                length,
                speed_limit: 10.0,
                condition: ConditionVector::new(vec![0.0; CONDITION_WIDTH]).unwrap(),
            }]
        };
        // Shorter than the straight line: impossible geometry.
        assert!(RoadNetwork::new(intersections.clone(), seg(50.0)).is_err());
        // Within the 10x slack: a curvy road.
        assert!(RoadNetwork::new(intersections.clone(), seg(900.0)).is_ok());
        assert!(RoadNetwork::new(intersections, seg(1100.0)).is_err());
    }
}
