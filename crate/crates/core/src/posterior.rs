//! Point estimates, prevailing-probability matrices and ranking distributions
//! computed from sampler draws.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;

use crate::error::{BtmeError, Result};
use crate::model::{prevail_pair, sigmoid};
use crate::sampler::PosteriorDraws;

/// Default number of orders kept in reports.
pub const DEFAULT_TOP_ORDERS: usize = 15;

/// Posterior means `(d_hat, w_hat)`, `w_hat` row-major `K x M`.
pub fn estimate(draws: &PosteriorDraws) -> (Vec<f64>, Vec<f64>) {
    let s = draws.num_samples();
    let k = draws.num_treatments;
    let km = k * draws.num_features;
    let mut d_hat = vec![0.0; k];
    let mut w_hat = vec![0.0; km];
    for i in 0..s {
        d_hat.iter_mut().zip(draws.d(i)).for_each(|(a, x)| *a += x);
        w_hat.iter_mut().zip(draws.w(i)).for_each(|(a, x)| *a += x);
    }
    let n = s as f64;
    d_hat.iter_mut().for_each(|x| *x /= n);
    w_hat.iter_mut().for_each(|x| *x /= n);
    (d_hat, w_hat)
}

/// Treatments from strongest to weakest; equal values keep index order.
pub fn order_of(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedOrder {
    /// Treatment indexes, best first.
    pub order: Vec<usize>,
    pub count: u64,
    pub probability: f64,
}

/// Posterior frequencies of the realized total orders, most probable first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingDistribution {
    pub entries: Vec<RankedOrder>,
    pub samples: u64,
}

impl RankingDistribution {
    fn from_orders<I: IntoIterator<Item = Vec<usize>>>(orders: I) -> Self {
        let mut tally: HashMap<Vec<usize>, u64> = HashMap::new();
        let mut samples = 0;
        for order in orders {
            *tally.entry(order).or_default() += 1;
            samples += 1;
        }
        let mut entries: Vec<RankedOrder> = tally
            .into_iter()
            .map(|(order, count)| RankedOrder {
                order,
                count,
                probability: count as f64 / samples as f64,
            })
            .collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.order.cmp(&b.order)));
        Self { entries, samples }
    }

    pub fn map_order(&self) -> Option<&RankedOrder> {
        self.entries.first()
    }

    /// Probability that each treatment is ranked first.
    pub fn first_position_marginals(&self, num_treatments: usize) -> Vec<f64> {
        let mut out = vec![0u64; num_treatments];
        for e in &self.entries {
            out[e.order[0]] += e.count;
        }
        out.into_iter().map(|c| c as f64 / self.samples as f64).collect()
    }
}

pub fn ranking_distribution(draws: &PosteriorDraws) -> RankingDistribution {
    RankingDistribution::from_orders((0..draws.num_samples()).map(|i| order_of(draws.d(i))))
}

/// Ranking by the sub-indexes `d_k * w_kj` of a single feature.
pub fn feature_ranking_distribution(draws: &PosteriorDraws, feature: usize) -> RankingDistribution {
    let m = draws.num_features;
    RankingDistribution::from_orders((0..draws.num_samples()).map(|i| {
        let d = draws.d(i);
        let w = draws.w(i);
        let sub: Vec<f64> = d.iter().enumerate().map(|(k, dk)| dk * w[k * m + feature]).collect();
        order_of(&sub)
    }))
}

/// Fraction of draws in which each treatment has the largest index.
pub fn marginal_best(draws: &PosteriorDraws) -> Vec<f64> {
    let k = draws.num_treatments;
    let mut wins = vec![0u64; k];
    for i in 0..draws.num_samples() {
        wins[order_of(draws.d(i))[0]] += 1;
    }
    wins.into_iter()
        .map(|c| c as f64 / draws.num_samples() as f64)
        .collect()
}

/// `P[r][s]`: posterior mean probability that `r` beats `s` on `feature`.
pub fn prevailing_matrix(draws: &PosteriorDraws, feature: usize) -> Vec<Vec<f64>> {
    let k = draws.num_treatments;
    let m = draws.num_features;
    let mut p = vec![vec![0.5; k]; k];
    let s = draws.num_samples() as f64;
    for r in 0..k {
        for t in (r + 1)..k {
            let total: f64 = (0..draws.num_samples())
                .map(|i| {
                    let (d, w) = (draws.d(i), draws.w(i));
                    sigmoid(d[r] * w[r * m + feature] - d[t] * w[t * m + feature])
                })
                .sum();
            let (upper, lower) = complement(total / s);
            p[r][t] = upper;
            p[t][r] = lower;
        }
    }
    p
}

#[inline]
fn complement(p: f64) -> (f64, f64) {
    (p, 1.0 - p)
}

/// Prevailing matrix at a single parameter point, e.g. the posterior means.
pub fn prevailing_at(d: &[f64], w: &[f64], num_features: usize, feature: usize) -> Vec<Vec<f64>> {
    let k = d.len();
    let mut p = vec![vec![0.5; k]; k];
    for r in 0..k {
        for s in (r + 1)..k {
            let (a, b) = prevail_pair(d[r], w[r * num_features + feature], d[s], w[s * num_features + feature]);
            p[r][s] = a;
            p[s][r] = b;
        }
    }
    p
}

/// Ranks with ties sharing their average position (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &pos in &idx[i..=j] {
            ranks[pos] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BtmeError::Shape(format!(
            "spearman: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(BtmeError::Statistic("spearman: need at least two values".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(BtmeError::Statistic("spearman: zero rank variance".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl Quantiles {
    fn of(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self {
            q025: quantile_sorted(&values, 0.025),
            q50: quantile_sorted(&values, 0.5),
            q975: quantile_sorted(&values, 0.975),
        }
    }
}

/// Everything a report needs, in treatment-index form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub d_hat: Vec<f64>,
    /// `K` rows of `M` weights.
    pub w_hat: Vec<Vec<f64>>,
    /// One `K x K` matrix per feature.
    pub prevailing: Vec<Vec<Vec<f64>>>,
    pub ranking: RankingDistribution,
    pub feature_rankings: Vec<RankingDistribution>,
    pub marginal_best: Vec<f64>,
    pub d_quantiles: Vec<Quantiles>,
    pub w_quantiles: Vec<Vec<Quantiles>>,
}

impl PosteriorSummary {
    pub fn from_draws(draws: &PosteriorDraws) -> Self {
        let k = draws.num_treatments;
        let m = draws.num_features;
        let s = draws.num_samples();
        let (d_hat, w_flat) = estimate(draws);
        let w_hat = w_flat.chunks(m).map(<[f64]>::to_vec).collect();
        let d_quantiles = (0..k)
            .map(|t| Quantiles::of((0..s).map(|i| draws.d(i)[t]).collect()))
            .collect();
        let w_quantiles = (0..k)
            .map(|t| {
                (0..m)
                    .map(|j| Quantiles::of((0..s).map(|i| draws.w(i)[t * m + j]).collect()))
                    .collect()
            })
            .collect();
        Self {
            d_hat,
            w_hat,
            prevailing: (0..m).map(|j| prevailing_matrix(draws, j)).collect(),
            ranking: ranking_distribution(draws),
            feature_rankings: (0..m).map(|j| feature_ranking_distribution(draws, j)).collect(),
            marginal_best: marginal_best(draws),
            d_quantiles,
            w_quantiles,
        }
    }
}
