//! Covariate windows and neighborhood block averages.
//!
//! A window is a closed infinity-norm ball around each point, expressed
//! either as a rectangular kernel with a bandwidth (`|b|/h <= 1/2`) or as a
//! plain radius (`|b| <= r`). For scalar covariates the windows are found by
//! binary search over the sorted points; otherwise by a linear scan.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{CovariateSet, ObservedDataset};
use crate::kernel::rect_kernel_between;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    /// Rectangular kernel with this bandwidth.
    Kernel(f64),
    /// Closed infinity-norm ball with this radius.
    Radius(f64),
}

impl Window {
    pub fn contains(&self, a: &[f64], b: &[f64]) -> bool {
        match *self {
            Window::Kernel(h) => rect_kernel_between(a, b, h),
            Window::Radius(r) => a.iter().zip(b).all(|(x, y)| (x - y).abs() <= r),
        }
    }
}

/// For every point `i`, the ascending list of points inside its window.
pub fn windows(cov: &CovariateSet, window: Window) -> Vec<Vec<usize>> {
    let len = cov.len();
    if cov.dim() != 1 {
        return (0..len)
            .into_par_iter()
            .map(|i| {
                (0..len)
                    .filter(|&j| window.contains(cov.point(i), cov.point(j)))
                    .collect()
            })
            .collect();
    }
    let xs = cov.as_slice();
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; len];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    (0..len)
        .into_par_iter()
        .map(|i| {
            let inside = |j: &usize| window.contains(&xs[i..=i], &xs[*j..=*j]);
            // membership is contiguous in sorted order and contains i itself
            let lo = order[..rank[i]].partition_point(|j| !inside(j));
            let hi = rank[i] + order[rank[i]..].partition_point(inside);
            let mut members = order[lo..hi].to_vec();
            members.sort_unstable();
            members
        })
        .collect()
}

/// Average of observed values over `row_sets[u] x col_sets[i]` for every
/// cell. Empty blocks fall back to the row's observed mean, then to the
/// global observed mean.
pub(crate) fn block_average(
    ds: &ObservedDataset,
    row_sets: &[Vec<usize>],
    col_sets: &[Vec<usize>],
) -> Array2<f64> {
    let (n, m) = (ds.n(), ds.m());
    let global = ds.global_mean();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut col_sum = vec![0.0; m];
            let mut col_cnt = vec![0u32; m];
            for &v in &row_sets[u] {
                let (cols, vals) = ds.row(v);
                for (&j, &x) in cols.iter().zip(vals) {
                    col_sum[j] += x;
                    col_cnt[j] += 1;
                }
            }
            let fallback = ds.row_mean(u).unwrap_or(global);
            (0..m)
                .map(|i| {
                    let (mut s, mut c) = (0.0, 0u64);
                    for &j in &col_sets[i] {
                        if col_cnt[j] > 0 {
                            s += col_sum[j];
                            c += col_cnt[j] as u64;
                        }
                    }
                    if c > 0 {
                        s / c as f64
                    } else {
                        fallback
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n, m));
    for (u, row) in rows.into_iter().enumerate() {
        for (i, x) in row.into_iter().enumerate() {
            out[[u, i]] = x;
        }
    }
    out
}
