//! Route-overlap evaluation: precision, recall, F1, match distance ratio,
//! and the 90%-match fraction.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::roadnet::{RoadNetwork, Route};

/// Aggregated scores for one method over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub match_distance: f64,
    pub match90: f64,
}

fn check_lengths(pred: &Route, truth: &Route) -> Result<()> {
    if pred.edges.len() != truth.edges.len() {
        return Err(Error::Dimension {
            expected: truth.edges.len(),
            got: pred.edges.len(),
            context: "prediction vs truth edge vectors",
        });
    }
    Ok(())
}

fn overlap_count(pred: &Route, truth: &Route) -> usize {
    pred.edges
        .iter()
        .zip(&truth.edges)
        .filter(|&(&p, &t)| p && t)
        .count()
}

/// Precision, recall, and F1 of the predicted edge set against the real one.
/// Precision is 0 for an empty prediction; F1 is 0 when P + R = 0.
pub fn precision_recall_f1(pred: &Route, truth: &Route) -> Result<(f64, f64, f64)> {
    check_lengths(pred, truth)?;
    let hit = overlap_count(pred, truth) as f64;
    let pred_total = pred.selected_count() as f64;
    let truth_total = truth.selected_count() as f64;
    let precision = if pred_total > 0.0 { hit / pred_total } else { 0.0 };
    let recall = if truth_total > 0.0 { hit / truth_total } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

/// Length of correctly predicted roads divided by the real route's length.
pub fn match_distance_ratio(net: &RoadNetwork, pred: &Route, truth: &Route) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.edges.len() != net.segment_count() {
        return Err(Error::Dimension {
            expected: net.segment_count(),
            got: pred.edges.len(),
            context: "edge vectors vs network",
        });
    }
    let mut hit_len = 0.0;
    let mut truth_len = 0.0;
    for (e, (&p, &t)) in pred.edges.iter().zip(&truth.edges).enumerate() {
        if t {
            truth_len += net.segments()[e].length;
            if p {
                hit_len += net.segments()[e].length;
            }
        }
    }
    if truth_len == 0.0 {
        return Err(Error::Domain("real route selects no edges".into()));
    }
    Ok(hit_len / truth_len)
}

/// Fraction of aligned (prediction, truth) pairs whose match distance ratio
/// reaches at least 0.9.
pub fn ninety_percent_match(net: &RoadNetwork, preds: &[Route], truths: &[Route]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            got: preds.len(),
            context: "prediction vs truth lists",
        });
    }
    if preds.is_empty() {
        return Err(Error::Domain("empty evaluation set".into()));
    }
    let mut hits = 0usize;
    for (pred, truth) in preds.iter().zip(truths) {
        if match_distance_ratio(net, pred, truth)? >= 0.9 {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean of every metric over aligned pairs: the full evaluation suite for
/// one method.
pub fn evaluate_pairs(net: &RoadNetwork, preds: &[Route], truths: &[Route]) -> Result<MetricReport> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::Domain(format!(
            "need equal nonempty lists, got {} predictions and {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut sum = (0.0, 0.0, 0.0, 0.0);
    for (pred, truth) in preds.iter().zip(truths) {
        let (p, r, f1) = precision_recall_f1(pred, truth)?;
        sum.0 += p;
        sum.1 += r;
        sum.2 += f1;
        sum.3 += match_distance_ratio(net, pred, truth)?;
    }
    let count = preds.len() as f64;
    Ok(MetricReport {
        precision: sum.0 / count,
        recall: sum.1 / count,
        f1: sum.2 / count,
        match_distance: sum.3 / count,
        match90: ninety_percent_match(net, preds, truths)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_grid_city;
    use crate::roadnet::RouteQuery;

    fn route(ids: &[usize], m: usize) -> Route {
        let query = RouteQuery { origin: 0, destination: 1, departure_interval: 0 };
        Route::from_edge_ids(query, ids, m).unwrap()
    }

    #[test]
    fn identical_routes_score_one() {
        let r = route(&[0, 1, 2, 3, 4], 24);
        assert_eq!(precision_recall_f1(&r, &r).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_routes_score_zero() {
        let pred = route(&[0, 1], 24);
        let truth = route(&[2, 3], 24);
        assert_eq!(precision_recall_f1(&pred, &truth).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_derived_overlap_fixture() {
        // 4 predicted, 5 real, 3 shared: P = 3/4, R = 3/5.
        let pred = route(&[0, 1, 2, 10], 24);
        let truth = route(&[0, 1, 2, 3, 4], 24);
        let (p, r, f1) = precision_recall_f1(&pred, &truth).unwrap();
        assert_eq!(p, 0.75);
        assert_eq!(r, 0.60);
        assert_eq!(f1, 2.0 * 0.75 * 0.60 / (0.75 + 0.60));
        assert!((f1 - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn empty_prediction_gets_zero_precision() {
        let pred = route(&[], 24);
        let truth = route(&[1, 2], 24);
        assert_eq!(precision_recall_f1(&pred, &truth).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn harmonic_mean_identity() {
        let m = 24;
        for (pred_ids, truth_ids) in [
            (vec![0usize, 1, 2], vec![1usize, 2, 3, 4]),
            (vec![5, 6], vec![5, 6, 7]),
            (vec![0], vec![0]),
        ] {
            let (p, r, f1) = precision_recall_f1(&route(&pred_ids, m), &route(&truth_ids, m)).unwrap();
            assert!((f1 * (p + r) - 2.0 * p * r).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_pred_and_truth_swaps_p_and_r() {
        let a = route(&[0, 1, 2], 24);
        let b = route(&[1, 2, 3, 4], 24);
        let (p1, r1, f1a) = precision_recall_f1(&a, &b).unwrap();
        let (p2, r2, f1b) = precision_recall_f1(&b, &a).unwrap();
        assert_eq!((p1, r1), (r2, p2));
        assert_eq!(f1a, f1b);
    }

    #[test]
    fn match_distance_uses_lengths() {
        let net = gen_grid_city(2, 2, 100.0, 1).unwrap();
        let m = net.segment_count();
        let truth = route(&[0, 1, 2], m);
        assert_eq!(match_distance_ratio(&net, &truth, &truth).unwrap(), 1.0);
        // Uniform 100 m segments: overlapping 1 of 3 edges is 1/3 by length.
        let pred = route(&[0, 5], m);
        let got = match_distance_ratio(&net, &pred, &truth).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(match_distance_ratio(&net, &route(&[4, 5], m), &truth).unwrap(), 0.0);
        assert!(match_distance_ratio(&net, &pred, &route(&[], m)).is_err());
    }

    #[test]
    fn fractional_length_overlap() {
        // Truth spans 1000 m over several edges; the prediction covers only
        // the 300 m edge, so the ratio is 0.3 by length, not edge count.
        use crate::roadnet::{ConditionVector, Intersection, RoadNetwork, RoadSegment, CONDITION_WIDTH};
        let intersections = vec![
            Intersection { id: 0, x: 0.0, y: 0.0 },
            Intersection { id: 1, x: 300.0, y: 0.0 },
            Intersection { id: 2, x: 650.0, y: 0.0 },
            Intersection { id: 3, x: 1000.0, y: 0.0 },
        ];
        let seg = |id: usize, from: usize, to: usize, length: f64| RoadSegment {
            id,
            from,
            to,
            length,
            speed_limit: 10.0,
            condition: ConditionVector::new(vec![0.0; CONDITION_WIDTH]).unwrap(),
        };
        let net = RoadNetwork::new(
            intersections,
            vec![seg(0, 0, 1, 300.0), seg(1, 1, 2, 350.0), seg(2, 2, 3, 350.0)],
        )
        .unwrap();
        let truth = route(&[0, 1, 2], 3);
        let pred = route(&[0], 3);
        assert!((match_distance_ratio(&net, &pred, &truth).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ninety_percent_match_counts() {
        let net = gen_grid_city(2, 2, 100.0, 1).unwrap();
        let m = net.segment_count();
        let full = route(&[0, 1], m);
        let half = route(&[0], m);
        // 4 perfect pairs and 6 at ratio 0.5.
        let preds: Vec<Route> = (0..10).map(|i| if i < 4 { full.clone() } else { half.clone() }).collect();
        let truths = vec![full.clone(); 10];
        assert_eq!(ninety_percent_match(&net, &preds, &truths).unwrap(), 0.4);
        assert_eq!(ninety_percent_match(&net, &truths, &truths).unwrap(), 1.0);
        let disjoint = vec![route(&[4, 5], m); 10];
        assert_eq!(ninety_percent_match(&net, &disjoint, &truths).unwrap(), 0.0);
        assert!(ninety_percent_match(&net, &[], &[]).is_err());
    }

    #[test]
    fn mismatched_lengths_are_structural_errors() {
        let pred = route(&[0], 8);
        let truth = route(&[0], 24);
        assert!(matches!(
            precision_recall_f1(&pred, &truth),
            Err(Error::Dimension { .. })
        ));
    }
}
