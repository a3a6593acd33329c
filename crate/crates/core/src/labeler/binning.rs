//! Quantile binning of feature columns for histogram split search.
//!
//! Each feature gets at most [`MAX_CUTS`] sorted cut points. A value `x`
//! falls in bin `#{cuts <= x}`, so "bin <= s" is exactly "x < cuts[s]" and a
//! split found on bins can be stored and applied as a raw threshold.

use crate::features::FeatureMatrix;

pub(crate) const MAX_CUTS: usize = 254;
pub(crate) const MISSING_BIN: u8 = 255;

#[derive(Debug, Clone)]
pub(crate) struct BinnedMatrix {
    pub n_rows: usize,
    /// Feature-major: `bins[f * n_rows + r]`.
    pub bins: Vec<u8>,
    pub cuts: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn build(x: &FeatureMatrix) -> Self {
        let n_rows = x.n_rows();
        let n_features = x.n_cols();
        let per_feature = crate::par::map_range(0..n_features, |f| {
            let column: Vec<f64> = (0..n_rows).map(|r| x.row(r)[f]).collect();
            let cuts = compute_cuts(&column);
            let bins: Vec<u8> = column.iter().map(|&v| bin_of(&cuts, v)).collect();
            (cuts, bins)
        });
        let mut bins = Vec::with_capacity(n_rows * n_features);
        let mut cuts = Vec::with_capacity(n_features);
        for (c, b) in per_feature {
            cuts.push(c);
            bins.extend(b);
        }
        BinnedMatrix {
            n_rows,
            bins,
            cuts,
        }
    }

    #[inline]
    pub fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_rows..(f + 1) * self.n_rows]
    }
}

#[inline]
pub(crate) fn bin_of(cuts: &[f64], v: f64) -> u8 {
    if v.is_nan() {
        MISSING_BIN
    } else {
        cuts.partition_point(|c| *c <= v) as u8
    }
}

/// A threshold strictly above `lo` and at most `hi`.
fn separator(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid.is_finite() {
        mid
    } else {
        hi
    }
}

fn compute_cuts(column: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = column.iter().copied().filter(|v| !v.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= MAX_CUTS + 1 {
        return distinct.windows(2).map(|w| separator(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..=MAX_CUTS)
        .filter_map(|k| {
            let q = sorted[k * n / (MAX_CUTS + 1)];
            let next = distinct.partition_point(|d| *d <= q);
            distinct.get(next).map(|&hi| separator(q, hi))
        })
        .collect();
    cuts.dedup();
    cuts
}
