//! Coarsening of a continuous instrument into `M` values.

use crate::error::{Error, Result};

/// Right-continuous (type-1) sample quantile of already sorted data:
/// `Q(t) = x_(ceil(n t))` with `Q(0) = x_(1)`.
pub fn empirical_quantile(sorted: &[f64], t: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "empirical quantile of an empty sample");
    let rank = (n as f64 * t).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn check_input(values: &[f64], bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::InvalidInput(
            "number of bins must be at least 1".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "cannot discretize an empty vector".into(),
        ));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite instrument value {v}"
        )));
    }
    Ok(())
}

/// Maps each value to the midpoint of the bin it falls into. `edges` has
/// `bins + 1` nondecreasing entries; bins are `[edges[m], edges[m+1])` and the
/// sample maximum goes to the top bin.
fn assign_midpoints(values: &[f64], edges: &[f64], max: f64) -> Vec<f64> {
    let bins = edges.len() - 1;
    let mid = |m: usize| edges[m] + 0.5 * (edges[m + 1] - edges[m]);
    values
        .iter()
        .map(|&z| {
            if z == max {
                return mid(bins - 1);
            }
            // Last edge that is <= z; half-open bins make it unique.
            let m = edges[1..bins].partition_point(|e| *e <= z);
            mid(m)
        })
        .collect()
}

/// Equal-probability bins from sample quantiles at `t_m = m / M`.
pub fn discretize_design1(values: &[f64], bins: usize) -> Result<Vec<f64>> {
    check_input(values, bins)?;
    let sorted = sorted_copy(values);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if bins > distinct.len() {
        return Err(Error::DegenerateBins(format!(
            "{bins} bins requested but the instrument has only {} distinct values",
            distinct.len()
        )));
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|m| empirical_quantile(&sorted, m as f64 / bins as f64))
        .collect();
    Ok(assign_midpoints(values, &edges, sorted[sorted.len() - 1]))
}

/// Equal-width bins between the sample minimum and maximum.
pub fn discretize_design2(values: &[f64], bins: usize) -> Result<Vec<f64>> {
    check_input(values, bins)?;
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if max <= min {
        return Err(Error::DegenerateRange(format!(
            "instrument is constant at {min}; equal-width bins need max > min"
        )));
    }
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|m| {
            if m == bins {
                max
            } else {
                min + m as f64 * width
            }
        })
        .collect();
    Ok(assign_midpoints(values, &edges, max))
}
