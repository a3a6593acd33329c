//! Probabilistic retweet attribution under a marked Hawkes kernel.
//!
//! Twitter attributes every retweet to the original tweet, so the real
//! who-retweeted-whom tree is unobserved. Each event `j` is instead assigned
//! a distribution over earlier events `i < j`, proportional to the kernel
//! intensity `phi(m_i, t_j - t_i)` that `i` contributes at `t_j`. From those
//! parent probabilities we derive:
//!
//! * pairwise influence `r[i][j]`, the probability that `i` is an ancestor
//!   (or `i == j`) of `j` in the random branching tree;
//! * tweet influence, the row sum `sum_k r[i][k]` (self included);
//! * user influence, the mean tweet influence over a user's (re)tweets.
//!
//! Dense matrices are available for inspection and testing. Production
//! influence uses the identity `phi = (I - P)^-1 1`, solved by back
//! substitution in O(n) memory (and O(n) time for the exponential kernel).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Cascade;
use crate::par;

/// Default decay rate, tuned on a large collection of real retweet cascades.
pub const DEFAULT_THETA: f64 = 6.8e-4;

/// Largest cascade for which dense `P`/`R` matrices are materialized.
pub const DENSE_EVENT_LIMIT: usize = 50_000;

#[derive(Debug, Error, PartialEq)]
pub enum InfluenceError {
    #[error("invalid kernel parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("kernel input must be finite and non-negative, got dt = {0}")]
    InvalidDelay(f64),
    #[error("cascade has {events} events; dense matrices are capped at {limit}")]
    TooLarge { events: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// `kappa * theta * e^(-theta dt)`
    Exponential,
    /// `kappa * (dt + c)^-(1 + theta)`
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub kind: KernelKind,
    pub kappa: f64,
    pub theta: f64,
    /// Exponent applied to the follower-count mark.
    pub beta: f64,
    /// Power-law time offset; ignored by the exponential kernel.
    pub c: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            kind: KernelKind::Exponential,
            kappa: 1.0 / DEFAULT_THETA,
            theta: DEFAULT_THETA,
            beta: 1.0,
            c: 1.0,
        }
    }
}

impl KernelParams {
    pub fn exponential(kappa: f64, theta: f64, beta: f64) -> Self {
        KernelParams {
            kind: KernelKind::Exponential,
            kappa,
            theta,
            beta,
            c: 1.0,
        }
    }

    pub fn power_law(kappa: f64, theta: f64, beta: f64, c: f64) -> Self {
        KernelParams {
            kind: KernelKind::PowerLaw,
            kappa,
            theta,
            beta,
            c,
        }
    }

    pub fn validate(&self) -> Result<(), InfluenceError> {
        let check = |name, value: f64, ok: bool, reason| {
            if value.is_finite() && ok {
                Ok(())
            } else {
                Err(InfluenceError::InvalidParam {
                    name,
                    value,
                    reason,
                })
            }
        };
        check("kappa", self.kappa, self.kappa > 0.0, "must be > 0")?;
        check("theta", self.theta, self.theta > 0.0, "must be > 0")?;
        check("beta", self.beta, self.beta >= 0.0, "must be >= 0")?;
        if self.kind == KernelKind::PowerLaw {
            check("c", self.c, self.c > 0.0, "must be > 0")?;
        }
        Ok(())
    }

    /// Log of the kernel with the event-independent scale (`kappa`, and
    /// `theta` for the exponential form) dropped. Parent probabilities are
    /// ratios of kernels, so the scale cancels exactly.
    #[inline]
    fn log_weight(&self, mark: u64, dt: f64) -> f64 {
        let m = self.beta * log_mark(mark);
        match self.kind {
            KernelKind::Exponential => m - self.theta * dt,
            KernelKind::PowerLaw => m - (1.0 + self.theta) * (dt + self.c).ln(),
        }
    }
}

/// Marks below one are floored to one.
#[inline]
fn log_mark(mark: u64) -> f64 {
    (mark.max(1) as f64).ln()
}

/// Marked kernel value `max(mark, 1)^beta * phi(dt)`.
pub fn kernel_phi(mark: u64, dt: f64, params: &KernelParams) -> Result<f64, InfluenceError> {
    params.validate()?;
    if !dt.is_finite() || dt < 0.0 {
        return Err(InfluenceError::InvalidDelay(dt));
    }
    let scale = (mark.max(1) as f64).powf(params.beta);
    let base = match params.kind {
        KernelKind::Exponential => params.kappa * params.theta * (-params.theta * dt).exp(),
        KernelKind::PowerLaw => params.kappa * (dt + params.c).powf(-(1.0 + params.theta)),
    };
    Ok(scale * base)
}

/// Conditional intensity at `t` given the events of `cascade` strictly before
/// `t`. There is no background rate: every retweet descends from the root.
pub fn event_intensity(
    t: f64,
    cascade: &Cascade,
    params: &KernelParams,
) -> Result<f64, InfluenceError> {
    let mut total = 0.0;
    for e in cascade.events.iter().filter(|e| e.rel_time < t) {
        total += kernel_phi(e.mark, t - e.rel_time, params)?;
    }
    Ok(total)
}

/// Strictly lower-triangular parent probabilities, packed by column:
/// column `j` holds `p[0][j] .. p[j-1][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentProbabilityMatrix {
    n: usize,
    data: Vec<f64>,
}

#[inline]
fn col_offset(j: usize) -> usize {
    j * j.saturating_sub(1) / 2
}

impl ParentProbabilityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Probability that event `j` directly retweets event `i`; zero unless `i < j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < j && j < self.n {
            self.data[col_offset(j) + i]
        } else {
            0.0
        }
    }

    /// Parent distribution of event `j` (empty for the root).
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[col_offset(j)..col_offset(j) + j]
    }

    /// Builds a matrix from explicit columns; column `j` must have `j`
    /// entries. No normalization is checked.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let n = columns.len();
        let mut data = Vec::with_capacity(col_offset(n));
        for (j, col) in columns.into_iter().enumerate() {
            assert_eq!(col.len(), j, "column {j} must have {j} entries");
            data.extend(col);
        }
        ParentProbabilityMatrix { n, data }
    }
}

/// Normalizes `logs` in place into probabilities with a max shift, returning
/// the log normalizer and the index of the (first) largest entry.
fn softmax_in_place(logs: &mut [f64]) -> (f64, usize) {
    let mut best = 0;
    for (i, &l) in logs.iter().enumerate() {
        if l > logs[best] {
            best = i;
        }
    }
    let max = logs[best];
    let mut sum = 0.0;
    for l in logs.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logs.iter_mut() {
        *l /= sum;
    }
    (max + sum.ln(), best)
}

/// Dense parent probabilities for a cascade (events sorted by time).
pub fn parent_probabilities(
    cascade: &Cascade,
    params: &KernelParams,
) -> Result<ParentProbabilityMatrix, InfluenceError> {
    parent_probabilities_capped(cascade, params, DENSE_EVENT_LIMIT)
}

pub fn parent_probabilities_capped(
    cascade: &Cascade,
    params: &KernelParams,
    limit: usize,
) -> Result<ParentProbabilityMatrix, InfluenceError> {
    params.validate()?;
    let n = cascade.len();
    if n > limit {
        return Err(InfluenceError::TooLarge { events: n, limit });
    }
    let times = cascade.times();
    let marks = cascade.marks();
    let columns = par::map_range(0..n, |j| {
        let mut col: Vec<f64> = (0..j)
            .map(|i| params.log_weight(marks[i], (times[j] - times[i]).max(0.0)))
            .collect();
        if j > 0 {
            softmax_in_place(&mut col);
        }
        col
    });
    Ok(ParentProbabilityMatrix::from_columns(columns))
}

/// Upper-triangular pairwise influence, packed by row: row `i` holds
/// `r[i][i] .. r[i][n-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    n: usize,
    rows: Vec<Vec<f64>>,
}

impl InfluenceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Probability that event `i` directly or indirectly generated `j`
    /// (one on the diagonal, zero below it).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i <= j && j < self.n {
            self.rows[i][j - i]
        } else {
            0.0
        }
    }

    /// Tweet influence `sum_{k >= i} r[i][k]` for every event.
    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Pairwise influence via `r[i][j] = sum_{k=i}^{j-1} r[i][k] p[k][j]`.
/// Rows are independent and computed in parallel; O(n^3) time overall.
pub fn pairwise_influence(p: &ParentProbabilityMatrix) -> InfluenceMatrix {
    let n = p.n();
    let rows = par::map_range(0..n, |i| {
        let mut row = vec![0.0; n - i];
        row[0] = 1.0;
        if i == 0 {
            // every event descends from the root
            row.iter_mut().for_each(|r| *r = 1.0);
            return row;
        }
        for j in i + 1..n {
            let col = &p.column(j)[i..j];
            row[j - i] = row[..j - i].iter().zip(col).map(|(r, p)| r * p).sum();
        }
        row
    });
    InfluenceMatrix { n, rows }
}

/// Most likely parent of every event; ties go to the earliest candidate.
pub fn expected_parents(p: &ParentProbabilityMatrix) -> Vec<Option<usize>> {
    (0..p.n())
        .map(|j| {
            let col = p.column(j);
            let mut best: Option<usize> = None;
            for (i, &v) in col.iter().enumerate() {
                if best.is_none_or(|b| v > col[b]) {
                    best = Some(i);
                }
            }
            best
        })
        .collect()
}

/// Per-event results for one cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeInfluence {
    /// `phi(v_i) = sum_{k >= i} r[i][k]`, self term included.
    pub tweet_influence: Vec<f64>,
    pub expected_parent: Vec<Option<usize>>,
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Tweet influence and expected parents without materializing `P` or `R`.
///
/// Solves `(I - P) phi = 1` from the last event backwards:
/// `phi_i = 1 + sum_{j > i} p[i][j] phi_j`.
pub fn cascade_influence(
    cascade: &Cascade,
    params: &KernelParams,
) -> Result<CascadeInfluence, InfluenceError> {
    params.validate()?;
    Ok(match params.kind {
        KernelKind::Exponential => exponential_influence(cascade, params),
        KernelKind::PowerLaw => streaming_influence(cascade, params),
    })
}

/// With the exponential kernel `log p[i][j] = a_i - A_j` where
/// `a_i = beta ln m_i + theta t_i` and `A_j = logsumexp_{i<j} a_i`, so both
/// the normalizers and the back substitution reduce to prefix/suffix sums.
fn exponential_influence(cascade: &Cascade, params: &KernelParams) -> CascadeInfluence {
    let n = cascade.len();
    let a: Vec<f64> = cascade
        .events
        .iter()
        .map(|e| params.beta * log_mark(e.mark) + params.theta * e.rel_time)
        .collect();

    let mut prefix = vec![f64::NEG_INFINITY; n];
    let mut expected_parent = vec![None; n];
    let mut acc = f64::NEG_INFINITY;
    let mut best = 0usize;
    for j in 0..n {
        prefix[j] = acc;
        if j > 0 {
            expected_parent[j] = Some(best);
        }
        acc = log_add(acc, a[j]);
        if a[j] > a[best] {
            best = j;
        }
    }

    let mut phi = vec![1.0; n];
    let mut suffix = f64::NEG_INFINITY;
    for i in (0..n).rev() {
        phi[i] = 1.0 + (a[i] + suffix).exp();
        suffix = log_add(suffix, phi[i].ln() - prefix[i]);
    }
    CascadeInfluence {
        tweet_influence: phi,
        expected_parent,
    }
}

/// General kernel: one pass computes every column's log normalizer and
/// argmax, a second pass back-substitutes. O(n^2) time, O(n) memory.
fn streaming_influence(cascade: &Cascade, params: &KernelParams) -> CascadeInfluence {
    let n = cascade.len();
    let times = cascade.times();
    let marks = cascade.marks();
    let log_w = |i: usize, j: usize| params.log_weight(marks[i], (times[j] - times[i]).max(0.0));

    let columns = par::map_range(0..n, |j| {
        if j == 0 {
            return (f64::NEG_INFINITY, None);
        }
        let mut best = 0;
        let mut max = f64::NEG_INFINITY;
        for i in 0..j {
            let l = log_w(i, j);
            if l > max {
                max = l;
                best = i;
            }
        }
        let sum: f64 = (0..j).map(|i| (log_w(i, j) - max).exp()).sum();
        (max + sum.ln(), Some(best))
    });

    let mut phi = vec![1.0; n];
    for i in (0..n).rev() {
        let mut s = 0.0;
        for j in i + 1..n {
            s += (log_w(i, j) - columns[j].0).exp() * phi[j];
        }
        phi[i] = 1.0 + s;
    }
    CascadeInfluence {
        tweet_influence: phi,
        expected_parent: columns.into_iter().map(|c| c.1).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserInfluence {
    /// Mean tweet influence over the user's events.
    pub influence: f64,
    pub events: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InfluenceReport {
    /// One entry per input cascade, same order.
    pub cascades: Vec<CascadeInfluence>,
    /// Users that appear in at least one cascade.
    pub users: BTreeMap<String, UserInfluence>,
}

/// Influence for every cascade (in parallel) and the per-user averages.
pub fn influence_report(
    cascades: &[Cascade],
    params: &KernelParams,
) -> Result<InfluenceReport, InfluenceError> {
    params.validate()?;
    let per_cascade = par::map_slice(cascades, |c| {
        cascade_influence(c, params).expect("params validated above")
    });

    // merge in cascade order so sums are reproducible for any thread count
    let mut sums: BTreeMap<String, (f64, u32)> = BTreeMap::new();
    for (c, inf) in cascades.iter().zip(&per_cascade) {
        for (e, phi) in c.events.iter().zip(&inf.tweet_influence) {
            let s = sums.entry(e.user_id.clone()).or_insert((0.0, 0));
            s.0 += phi;
            s.1 += 1;
        }
    }
    let users = sums
        .into_iter()
        .map(|(u, (sum, k))| {
            (
                u,
                UserInfluence {
                    influence: sum / k as f64,
                    events: k,
                },
            )
        })
        .collect();
    Ok(InfluenceReport {
        cascades: per_cascade,
        users,
    })
}
