//! Across-trial summaries on the scaled-query axis.

use serde::{Deserialize, Serialize};

/// One checkpoint of an aggregate curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub scaled_queries: u64,
    pub mean_norm: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub n_trials: usize,
}

/// Each trial's last logged value at or before every query count seen by
/// any trial. Trials with no value yet are left out of that point.
pub fn carried_forward(trials: &[Vec<(u64, f64)>]) -> Vec<(u64, Vec<f64>)> {
    let mut grid: Vec<u64> = trials.iter().flatten().map(|p| p.0).collect();
    grid.sort_unstable();
    grid.dedup();
    let mut cursor = vec![0usize; trials.len()];
    grid.into_iter()
        .map(|q| {
            let vals = trials
                .iter()
                .enumerate()
                .filter_map(|(t, pts)| {
                    while cursor[t] < pts.len() && pts[cursor[t]].0 <= q {
                        cursor[t] += 1;
                    }
                    (cursor[t] > 0).then(|| pts[cursor[t] - 1].1)
                })
                .collect();
            (q, vals)
        })
        .collect()
}

/// Mean, min and max over trials on the union query grid.
pub fn aggregate(trials: &[Vec<(u64, f64)>]) -> Vec<AggregatePoint> {
    carried_forward(trials)
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(q, v)| AggregatePoint {
            scaled_queries: q,
            mean_norm: v.iter().sum::<f64>() / v.len() as f64,
            min_norm: v.iter().copied().fold(f64::INFINITY, f64::min),
            max_norm: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n_trials: v.len(),
        })
        .collect()
}

/// Median over trials on the union query grid.
pub fn median_curve(trials: &[Vec<(u64, f64)>]) -> Vec<(u64, f64)> {
    carried_forward(trials)
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(q, v)| (q, median(&v)))
        .collect()
}

/// First query count whose value is at or below `threshold`.
pub fn queries_to_threshold(points: &[(u64, f64)], threshold: f64) -> Option<u64> {
    points.iter().find(|p| p.1 <= threshold).map(|p| p.0)
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_single_point() {
        let a = aggregate(&[vec![(0, 2.0)]]);
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].min_norm, a[0].mean_norm, a[0].max_norm, a[0].n_trials), (2.0, 2.0, 2.0, 1));
    }

    #[test]
    fn carries_last_value_forward_on_union_grid() {
        let a = aggregate(&[vec![(0, 4.0), (10, 2.0), (20, 1.0)], vec![(0, 2.0), (10, 1.0)]]);
        let q: Vec<u64> = a.iter().map(|p| p.scaled_queries).collect();
        assert_eq!(q, vec![0, 10, 20]);
        assert_eq!(a[0].mean_norm, 3.0);
        assert_eq!(a[2].mean_norm, 1.0);
        assert_eq!((a[2].min_norm, a[2].max_norm), (1.0, 1.0));
        for p in &a {
            assert!(p.min_norm <= p.mean_norm && p.mean_norm <= p.max_norm);
        }
    }

    #[test]
    fn late_starting_trial_is_skipped_until_it_has_data() {
        let a = aggregate(&[vec![(0, 1.0)], vec![(5, 3.0)]]);
        assert_eq!(a[0].n_trials, 1);
        assert_eq!(a[1].n_trials, 2);
    }

    #[test]
    fn median_curve_on_union_grid() {
        let m = median_curve(&[vec![(0, 1.0), (10, 0.5)], vec![(0, 3.0)], vec![(0, 2.0), (5, 0.1)]]);
        assert_eq!(m, vec![(0, 2.0), (5, 1.0), (10, 0.5)]);
    }

    #[test]
    fn threshold_and_median() {
        assert_eq!(queries_to_threshold(&[(0, 3.0), (4, 1.0), (9, 0.5)], 1.0), Some(4));
        assert_eq!(queries_to_threshold(&[(0, 3.0)], 1.0), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
