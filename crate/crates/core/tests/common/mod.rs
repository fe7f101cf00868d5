#![allow(dead_code)]

use btme::data::ComparisonArray;
use btme::model::{ln_binomial, log_sigmoid};

/// Two treatments, one feature, `n x n` units, treatment 0 winning `wins`
/// pairs and treatment 1 the rest.
pub fn two_treatment_counts(n: usize, wins: u64) -> ComparisonArray {
    let mut y = ComparisonArray::zeros(1, vec![n, n]);
    let trials = (n * n) as u64;
    y.set(0, 0, 1, wins);
    y.set(0, 1, 0, trials - wins);
    y
}

/// Posterior mean of `d0 - d1` and of `|d0 - d1|` for the single-feature
/// two-treatment model with a uniform prior on `[0, hi]^2`, by midpoint
/// quadrature on a `grid x grid` lattice.
pub fn quadrature_means(y: &ComparisonArray, hi: f64, grid: usize) -> (f64, f64) {
    let trials = y.trials(0, 1);
    let wins = y.get(0, 0, 1);
    let lnc = ln_binomial(trials, wins);
    let h = hi / grid as f64;
    // the integrand depends on d0 - d1 only; lattice difference i*h occurs
    // grid - |i| times among the grid^2 midpoint pairs
    let g = grid as i64;
    let terms: Vec<(f64, f64, f64)> = (1 - g..g)
        .map(|i| {
            let delta = i as f64 * h;
            let ll = lnc + wins as f64 * log_sigmoid(delta) + (trials - wins) as f64 * log_sigmoid(-delta);
            (delta, ll, (g - i.abs()) as f64)
        })
        .collect();
    let max = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut signed, mut abs) = (0.0, 0.0, 0.0);
    for &(delta, ll, mult) in &terms {
        let p = mult * (ll - max).exp();
        z += p;
        signed += p * delta;
        abs += p * delta.abs();
    }
    (signed / z, abs / z)
}

/// Monte-Carlo standard error of the mean by non-overlapping batch means.
pub fn batch_means_mcse(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}
