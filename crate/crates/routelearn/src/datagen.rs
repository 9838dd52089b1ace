//! Synthetic data: grid cities with two road classes, diurnal traffic with
//! congestion events, and trip generation from a transparent driver-preference
//! model, all reproducible from a manifest.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roadnet::{
    condition_feature, is_valid_path, ConditionVector, Intersection, RoadNetwork, RoadSegment,
    Route, RouteQuery,
};
use crate::router::dijkstra;
use crate::traffic::{load_traffic, save_traffic, speeds_at, travel_time, TrafficTensor};

/// Feature templates for the two road classes. Raw values are normalized by
/// fixed constants: speed limit / 32 m/s, lanes / 8, lane width / 4 m,
/// bus lines / 8; road level is already a rank in [0, 1].
const ARTERIAL_SPEED_LIMIT: f64 = 16.0;
const LOCAL_SPEED_LIMIT: f64 = 12.0;
const ARTERIAL_FEATURES: [f64; 5] = [0.5, 0.5, 1.0, 0.875, 0.375];
const LOCAL_FEATURES: [f64; 5] = [0.375, 0.25, 0.5, 0.75, 0.0];

/// Fraction of grid lines (rows + columns) promoted to arterials.
const ARTERIAL_LINE_FRACTION: f64 = 0.25;

/// Free-flow speeds sit at this share of the limit.
const FREE_FLOW_FACTOR: f64 = 0.7;

/// Floor applied to perceived edge costs after noise, keeping them positive.
const WEIGHT_FLOOR: f64 = 1e-6;

const RESAMPLE_LIMIT: usize = 1000;

/// How a simulated driver scores a road segment: a weighted sum of travel
/// time and condition disutility plus Gumbel-distributed taste shocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverModel {
    pub alpha_time: f64,
    pub alpha_cond: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for DriverModel {
    fn default() -> Self {
        DriverModel {
            alpha_time: 1.0,
            alpha_cond: 60.0,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficOptions {
    /// Relative amplitude of the sinusoidal diurnal speed modulation.
    pub diurnal_amplitude: f64,
    /// Probability that a segment takes part in the congestion event.
    pub congestion_fraction: f64,
    /// Congested speed as a share of the limit.
    pub congestion_factor: f64,
    /// Length of the congestion window as a share of the day.
    pub congestion_window: f64,
}

impl Default for TrafficOptions {
    fn default() -> Self {
        TrafficOptions {
            diurnal_amplitude: 0.65,
            congestion_fraction: 0.6,
            congestion_factor: 0.15,
            congestion_window: 0.3,
        }
    }
}

/// Everything needed to regenerate a dataset bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub rows: usize,
    pub cols: usize,
    pub block_m: f64,
    pub net_seed: u64,
    pub t_total: usize,
    pub traffic_seed: u64,
    pub traffic: TrafficOptions,
    pub driver: DriverModel,
    pub route_count: usize,
    pub route_seed: u64,
    /// Trips are sampled uniformly over origin-destination pairs at least
    /// this many hops apart (capped at each origin's eccentricity), so
    /// queries describe journeys across the network rather than single-block
    /// moves.
    pub min_od_hops: usize,
}

impl GenManifest {
    /// Small default city: a 3x3 grid with 16 intervals and cross-city trips.
    pub fn new(seed: u64) -> Self {
        GenManifest {
            rows: 3,
            cols: 3,
            block_m: 200.0,
            net_seed: seed,
            t_total: 96,
            traffic_seed: seed.wrapping_add(1),
            traffic: TrafficOptions::default(),
            driver: DriverModel {
                seed: seed.wrapping_add(2),
                ..DriverModel::default()
            },
            route_count: 1200,
            route_seed: seed.wrapping_add(3),
            min_od_hops: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub net: RoadNetwork,
    pub traffic: TrafficTensor,
    pub routes: Vec<Route>,
    pub manifest: GenManifest,
}

/// Builds a rows x cols grid city at `block_m` spacing with bidirectional
/// segments. A seeded subset of full rows and columns becomes arterials
/// (high limit, more lanes); the rest are local streets.
pub fn gen_grid_city(rows: usize, cols: usize, block_m: f64, seed: u64) -> Result<RoadNetwork> {
    if rows < 2 || cols < 2 {
        return Err(Error::Config(format!(
            "grid needs at least 2x2 intersections, got {rows}x{cols}"
        )));
    }
    if !block_m.is_finite() || block_m <= 0.0 {
        return Err(Error::Config(format!("block size {block_m} not positive")));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Lines 0..rows are rows, rows..rows+cols are columns. Promoting a fixed
    // count after a shuffle guarantees both classes exist.
    let line_count = rows + cols;
    let mut lines: Vec<usize> = (0..line_count).collect();
    lines.shuffle(&mut rng);
    let arterial_count = ((line_count as f64 * ARTERIAL_LINE_FRACTION).ceil() as usize)
        .clamp(1, line_count - 1);
    let mut arterial_line = vec![false; line_count];
    for &line in lines.iter().take(arterial_count) {
        arterial_line[line] = true;
    }

    let intersections: Vec<Intersection> = (0..rows * cols)
        .map(|id| Intersection {
            id,
            x: (id % cols) as f64 * block_m,
            y: (id / cols) as f64 * block_m,
        })
        .collect();

    let mut segments = Vec::new();
    let push_pair = |segments: &mut Vec<RoadSegment>, a: usize, b: usize, arterial: bool| {
        let (limit, features) = if arterial {
            (ARTERIAL_SPEED_LIMIT, ARTERIAL_FEATURES)
        } else {
            (LOCAL_SPEED_LIMIT, LOCAL_FEATURES)
        };
        for (from, to) in [(a, b), (b, a)] {
            segments.push(RoadSegment {
                id: segments.len(),
                from,
                to,
                length: block_m,
                speed_limit: limit,
                condition: ConditionVector::from_named(
                    features[0], features[1], features[2], features[3], features[4],
                )
                .expect("class features are normalized"),
            });
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let node = r * cols + c;
            if c + 1 < cols {
                push_pair(&mut segments, node, node + 1, arterial_line[r]);
            }
            if r + 1 < rows {
                push_pair(&mut segments, node, node + cols, arterial_line[rows + c]);
            }
        }
    }

    RoadNetwork::new(intersections, segments)
}

pub fn gen_traffic(net: &RoadNetwork, t_total: usize, seed: u64) -> TrafficTensor {
    gen_traffic_with(net, t_total, seed, &TrafficOptions::default())
}

/// Per segment: free-flow base speed modulated by a smooth diurnal factor
/// with a seeded per-segment phase, plus a seeded subset of segments
/// dropping to the congestion speed during one contiguous interval window.
/// At interval 0 every segment sits exactly at the free-flow base speed.
pub fn gen_traffic_with(
    net: &RoadNetwork,
    t_total: usize,
    seed: u64,
    opts: &TrafficOptions,
) -> TrafficTensor {
    assert!(t_total >= 1, "traffic tensor needs at least one interval");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let congested: Vec<bool> = (0..net.segment_count())
        .map(|_| rng.gen::<f64>() < opts.congestion_fraction)
        .collect();
    let window_start = rng.gen_range(0..t_total);
    let window_len = ((t_total as f64 * opts.congestion_window) as usize).max(1);
    let window = window_start..(window_start + window_len).min(t_total);
    let phases: Vec<(f64, f64, f64)> = (0..net.segment_count())
        .map(|_| {
            let phase1 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let phase2 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let amplitude = opts.diurnal_amplitude * rng.gen_range(0.5..1.0);
            (phase1, phase2, amplitude)
        })
        .collect();

    let mut speeds = Vec::with_capacity(net.segment_count() * t_total);
    for seg in net.segments() {
        for t in 0..t_total {
            let speed = if congested[seg.id] && window.contains(&t) {
                opts.congestion_factor * seg.speed_limit
            } else {
                let (phase1, phase2, amplitude) = phases[seg.id];
                let angle = 2.0 * std::f64::consts::PI * t as f64 / t_total as f64;
                // Two-harmonic profile with per-segment phases, rescaled so
                // the wave sits in [-1, 1] and vanishes at t = 0.
                let profile =
                    |a: f64| 0.6 * (a + phase1).sin() + 0.4 * (2.0 * a + phase2).sin();
                let wave = (profile(angle) - profile(0.0)) / 2.0;
                FREE_FLOW_FACTOR * seg.speed_limit * (1.0 + amplitude * wave)
            };
            speeds.push(speed);
        }
    }
    TrafficTensor::new(speeds, net.segment_count(), t_total)
        .expect("generated speeds are positive")
}

/// Fully-equipped roads score this mean over the five named features; the
/// disutility is measured relative to it so top-class roads carry no
/// per-edge penalty at all.
const BEST_CLASS_FEATURE_MEAN: f64 = 0.65;

/// The documented condition disutility: the shortfall of the mean of the
/// five named features below the best-class mean. Zero for the arterial
/// template, 0.3 for the local template, so only worse-equipped roads pay a
/// penalty and a driver will detour along several arterial segments to skip
/// one local segment.
pub fn condition_disutility(condition: &ConditionVector) -> f64 {
    let v = condition.values();
    let mean = (v[condition_feature::SPEED_LIMIT]
        + v[condition_feature::LANE_COUNT]
        + v[condition_feature::ROAD_LEVEL]
        + v[condition_feature::LANE_WIDTH]
        + v[condition_feature::BUS_LINES])
        / 5.0;
    BEST_CLASS_FEATURE_MEAN - mean
}

/// Unweighted hop distances from one origin over the directed graph.
fn hop_distances(net: &RoadNetwork, origin: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; net.intersection_count()];
    dist[origin] = 0;
    let mut queue = std::collections::VecDeque::from([origin]);
    while let Some(node) = queue.pop_front() {
        for &e in net.outgoing(node) {
            let to = net.segments()[e].to;
            if dist[to] == usize::MAX {
                dist[to] = dist[node] + 1;
                queue.push_back(to);
            }
        }
    }
    dist
}

/// Samples `count` trips with endpoints drawn uniformly over all pairs
/// (origin != destination).
pub fn gen_routes(
    net: &RoadNetwork,
    traffic: &TrafficTensor,
    driver: &DriverModel,
    count: usize,
    seed: u64,
) -> Result<Vec<Route>> {
    gen_routes_spanning(net, traffic, driver, count, seed, 0)
}

/// Samples `count` trips. Each ground-truth route is the cheapest path under
/// the driver's perceived cost
/// `alpha_time * travel_time + alpha_cond * disutility + Gumbel(noise_scale)`,
/// with fresh noise per trip. Query endpoints are drawn uniformly over pairs
/// at least `min_od_hops` apart (capped at the origin's eccentricity). Query
/// sampling streams from `seed`, noise from `driver.seed`.
pub fn gen_routes_spanning(
    net: &RoadNetwork,
    traffic: &TrafficTensor,
    driver: &DriverModel,
    count: usize,
    seed: u64,
    min_od_hops: usize,
) -> Result<Vec<Route>> {
    if count == 0 {
        return Err(Error::Config("route count must be at least 1".into()));
    }
    if driver.alpha_time <= 0.0 || driver.alpha_cond < 0.0 || driver.noise_scale < 0.0 {
        return Err(Error::Config(format!(
            "driver model out of range: alpha_time {}, alpha_cond {}, noise_scale {}",
            driver.alpha_time, driver.alpha_cond, driver.noise_scale
        )));
    }
    let mut query_rng = ChaCha20Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha20Rng::seed_from_u64(driver.seed);
    let n = net.intersection_count();
    let m = net.segment_count();
    let disutility: Vec<f64> = net
        .segments()
        .iter()
        .map(|s| driver.alpha_cond * condition_disutility(&s.condition))
        .collect();
    let hops: Vec<Vec<usize>> = (0..n).map(|o| hop_distances(net, o)).collect();
    // Per-origin distance requirement, capped so every origin keeps at least
    // one admissible destination.
    let thresholds: Vec<usize> = hops
        .iter()
        .map(|row| {
            let eccentricity = row.iter().copied().filter(|&d| d != usize::MAX).max().unwrap_or(0);
            min_od_hops.min(eccentricity)
        })
        .collect();

    let mut routes = Vec::with_capacity(count);
    while routes.len() < count {
        let mut attempts = 0;
        let route = loop {
            let origin = query_rng.gen_range(0..n);
            let destination = query_rng.gen_range(0..n);
            let interval = query_rng.gen_range(0..traffic.t_total());
            if origin == destination
                || hops[origin][destination] == usize::MAX
                || hops[origin][destination] < thresholds[origin].max(1)
            {
                continue;
            }
            let query = RouteQuery {
                origin,
                destination,
                departure_interval: interval,
            };
            let speeds = speeds_at(traffic, interval)?;
            let mut weights = Vec::with_capacity(m);
            for seg in net.segments() {
                let tt = travel_time(seg, speeds[seg.id])?;
                let gumbel = -(-noise_rng.gen_range(f64::EPSILON..1.0).ln()).ln();
                let w = driver.alpha_time * tt
                    + disutility[seg.id]
                    + driver.noise_scale * gumbel;
                weights.push(w.max(WEIGHT_FLOOR));
            }
            match dijkstra(net, &weights, query) {
                Ok(theory) => break theory.to_route(),
                Err(Error::NoPath { .. }) => {
                    attempts += 1;
                    if attempts >= RESAMPLE_LIMIT {
                        return Err(Error::Domain(format!(
                            "no reachable query found after {RESAMPLE_LIMIT} attempts"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        debug_assert!(is_valid_path(net, &route).unwrap_or(false));
        routes.push(route);
    }
    Ok(routes)
}

/// Full pipeline from a manifest. Calling this twice with the same manifest
/// produces bit-identical datasets.
pub fn generate(manifest: &GenManifest) -> Result<SyntheticDataset> {
    let net = gen_grid_city(manifest.rows, manifest.cols, manifest.block_m, manifest.net_seed)?;
    if manifest.t_total == 0 {
        return Err(Error::Config("t_total must be at least 1".into()));
    }
    let traffic = gen_traffic_with(&net, manifest.t_total, manifest.traffic_seed, &manifest.traffic);
    let routes = gen_routes_spanning(
        &net,
        &traffic,
        &manifest.driver,
        manifest.route_count,
        manifest.route_seed,
        manifest.min_od_hops,
    )?;
    Ok(SyntheticDataset {
        net,
        traffic,
        routes,
        manifest: manifest.clone(),
    })
}

/// Indices of a seeded uniform subsample without replacement, rounded up to
/// at least one element, returned in ascending order. For a fixed seed the
/// result for a smaller fraction is a subset of any larger fraction's.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    let mut picked: Vec<usize> = order.into_iter().take(take).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Subsamples the dataset's routes (used on the train split; nested across
/// fractions for a fixed seed). The manifest still describes the parent
/// generation.
pub fn subsample(dataset: &SyntheticDataset, fraction: f64, seed: u64) -> Result<SyntheticDataset> {
    let picked = subsample_indices(dataset.routes.len(), fraction, seed)?;
    Ok(SyntheticDataset {
        net: dataset.net.clone(),
        traffic: dataset.traffic.clone(),
        routes: picked.iter().map(|&i| dataset.routes[i].clone()).collect(),
        manifest: dataset.manifest.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct RouteLine {
    origin: usize,
    destination: usize,
    interval: usize,
    edges: Vec<usize>,
}

/// One JSON object per line: `{"origin", "destination", "interval", "edges"}`
/// with selected segment ids ascending.
pub fn save_routes(routes: &[Route], path: &Path) -> Result<()> {
    let mut out = String::new();
    for route in routes {
        let line = RouteLine {
            origin: route.query.origin,
            destination: route.query.destination,
            interval: route.query.departure_interval,
            edges: route.edge_ids(),
        };
        out.push_str(&serde_json::to_string(&line).expect("route serialization cannot fail"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_routes(path: &Path, net: &RoadNetwork, t_total: usize) -> Result<Vec<Route>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut routes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RouteLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: format!("{}:{}", path.display(), i + 1),
            detail: e.to_string(),
        })?;
        let query = RouteQuery {
            origin: parsed.origin,
            destination: parsed.destination,
            departure_interval: parsed.interval,
        };
        net.validate_query(&query, t_total)?;
        let route = Route::from_edge_ids(query, &parsed.edges, net.segment_count())?;
        if !is_valid_path(net, &route)? {
            return Err(Error::Validation {
                entity: "route",
                id: i,
                reason: "selected edges do not form a simple origin-destination path".into(),
            });
        }
        routes.push(route);
    }
    Ok(routes)
}

pub const ROADNET_FILE: &str = "roadnet.json";
pub const TRAFFIC_FILE: &str = "traffic.csv";
pub const ROUTES_FILE: &str = "routes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_dataset(dataset: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::roadnet::save_roadnet(&dataset.net, &dir.join(ROADNET_FILE))?;
    save_traffic(&dataset.traffic, &dir.join(TRAFFIC_FILE))?;
    save_routes(&dataset.routes, &dir.join(ROUTES_FILE))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&dataset.manifest)
        .expect("manifest serialization cannot fail");
    text.push('\n');
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: GenManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.display().to_string(),
        detail: e.to_string(),
    })?;
    let net = crate::roadnet::load_roadnet(&dir.join(ROADNET_FILE))?;
    let traffic = load_traffic(&dir.join(TRAFFIC_FILE), &net)?;
    let routes = load_routes(&dir.join(ROUTES_FILE), &net, traffic.t_total())?;
    Ok(SyntheticDataset {
        net,
        traffic,
        routes,
        manifest,
    })
}
