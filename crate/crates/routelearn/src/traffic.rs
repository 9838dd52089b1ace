//! Real-time traffic: per-road, per-interval average speeds.

use std::path::Path;

use crate::error::{Error, Result};
use crate::roadnet::{RoadNetwork, RoadSegment};

/// Default length of one time interval in seconds (15-minute bins).
pub const DEFAULT_INTERVAL_SECONDS: f64 = 900.0;

/// Observed speeds may exceed the posted limit by this factor before the
/// tensor is rejected as implausible.
pub const SPEED_LIMIT_TOLERANCE: f64 = 1.2;

/// M x T matrix of average speeds in meters per second, immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTensor {
    /// Row-major: `speeds[segment * t_total + interval]`.
    speeds: Vec<f64>,
    segment_count: usize,
    t_total: usize,
    pub interval_seconds: f64,
}

impl TrafficTensor {
    pub fn new(speeds: Vec<f64>, segment_count: usize, t_total: usize) -> Result<Self> {
        if t_total == 0 {
            return Err(Error::Domain("traffic tensor needs at least one interval".into()));
        }
        if speeds.len() != segment_count * t_total {
            return Err(Error::Dimension {
                expected: segment_count * t_total,
                got: speeds.len(),
                context: "traffic tensor cells",
            });
        }
        for (idx, &v) in speeds.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Domain(format!(
                    "speed {} for segment {} interval {} not positive",
                    v,
                    idx / t_total,
                    idx % t_total
                )));
            }
        }
        Ok(TrafficTensor {
            speeds,
            segment_count,
            t_total,
            interval_seconds: DEFAULT_INTERVAL_SECONDS,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn speed(&self, segment: usize, interval: usize) -> f64 {
        self.speeds[segment * self.t_total + interval]
    }

    /// Checks every observed speed against its segment's limit with the
    /// measurement-noise tolerance.
    pub fn validate_against(&self, net: &RoadNetwork) -> Result<()> {
        if self.segment_count != net.segment_count() {
            return Err(Error::Dimension {
                expected: net.segment_count(),
                got: self.segment_count,
                context: "traffic tensor segments",
            });
        }
        for (j, seg) in net.segments().iter().enumerate() {
            for t in 0..self.t_total {
                let v = self.speed(j, t);
                if v > seg.speed_limit * SPEED_LIMIT_TOLERANCE {
                    return Err(Error::Validation {
                        entity: "segment",
                        id: j,
                        reason: format!(
                            "speed {v} at interval {t} exceeds limit {} by more than {}x",
                            seg.speed_limit, SPEED_LIMIT_TOLERANCE
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest speed anywhere in the tensor.
    pub fn max_speed(&self) -> f64 {
        self.speeds.iter().copied().fold(f64::MIN, f64::max)
    }
}

/// Column `t` of the tensor: one speed per segment. Repeated calls return
/// equal vectors; the tensor is never mutated.
pub fn speeds_at(traffic: &TrafficTensor, interval: usize) -> Result<Vec<f64>> {
    if interval >= traffic.t_total {
        return Err(Error::IndexOutOfRange {
            what: "interval",
            index: interval,
            len: traffic.t_total,
        });
    }
    Ok((0..traffic.segment_count)
        .map(|j| traffic.speed(j, interval))
        .collect())
}

/// Seconds to traverse a segment at the given speed.
pub fn travel_time(segment: &RoadSegment, speed: f64) -> Result<f64> {
    if !speed.is_finite() || speed <= 0.0 {
        return Err(Error::Domain(format!(
            "speed {speed} not positive for segment {}",
            segment.id
        )));
    }
    Ok(segment.length / speed)
}

/// Reads the `segment_id,interval,speed_mps` CSV. Every cell of the M x T
/// tensor must be present exactly once.
pub fn load_traffic(path: &Path, net: &RoadNetwork) -> Result<TrafficTensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: format!("{}:{}", path.display(), line),
        detail,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "segment_id,interval,speed_mps" => {}
        Some((_, header)) => {
            return Err(parse_err(1, format!("unexpected header {header:?}")));
        }
        None => return Err(parse_err(1, "empty file".into())),
    }

    let m = net.segment_count();
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    let mut t_total = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| parse_err(i + 1, format!("missing field {name}")))
        };
        let segment: usize = next("segment_id")?
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("segment_id: {e}")))?;
        let interval: usize = next("interval")?
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("interval: {e}")))?;
        let speed: f64 = next("speed_mps")?
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("speed_mps: {e}")))?;
        if segment >= m {
            return Err(parse_err(i + 1, format!("segment_id {segment} out of range 0..{m}")));
        }
        t_total = t_total.max(interval + 1);
        cells.push((segment, interval, speed));
    }
    if t_total == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }

    let mut speeds = vec![f64::NAN; m * t_total];
    for (segment, interval, speed) in cells {
        let idx = segment * t_total + interval;
        if !speeds[idx].is_nan() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: format!("duplicate cell for segment {segment} interval {interval}"),
            });
        }
        speeds[idx] = speed;
    }
    if let Some(missing) = speeds.iter().position(|v| v.is_nan()) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            detail: format!(
                "missing cell for segment {} interval {}",
                missing / t_total,
                missing % t_total
            ),
        });
    }

    let tensor = TrafficTensor::new(speeds, m, t_total)?;
    tensor.validate_against(net)?;
    Ok(tensor)
}

pub fn save_traffic(traffic: &TrafficTensor, path: &Path) -> Result<()> {
    let mut out = String::from("segment_id,interval,speed_mps\n");
    for j in 0..traffic.segment_count() {
        for t in 0..traffic.t_total() {
            out.push_str(&format!("{j},{t},{}\n", traffic.speed(j, t)));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
