//! The BTME probability core.
//!
//! A treatment `k` has a global dominance index `d[k]` and a weight row `w[k]`
//! on the simplex. Its strength on feature `j` is the sub-index `d[k] * w[k][j]`,
//! and the chance that an individual of `r` beats one of `s` on that feature is
//! `sigmoid(d[r] w[r][j] - d[s] w[s][j])`. Comparison counts are binomial in the
//! `n_r * n_s` individual pairs, independently over features and over `r < s`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::ComparisonArray;
use crate::error::{BtmeError, Result};

/// Global dominance indexes and the row-stochastic `K x M` weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: Vec<f64>,
    /// Row-major `K x M`.
    pub w: Vec<f64>,
    pub num_features: usize,
}

impl ModelParams {
    /// Uniform weights for every treatment.
    pub fn with_uniform_weights(d: Vec<f64>, num_features: usize) -> Self {
        let w = vec![1.0 / num_features as f64; d.len() * num_features];
        Self { d, w, num_features }
    }

    pub fn from_rows(d: Vec<f64>, rows: &[Vec<f64>]) -> Self {
        let num_features = rows.first().map_or(1, Vec::len);
        Self {
            d,
            w: rows.concat(),
            num_features,
        }
    }

    pub fn num_treatments(&self) -> usize {
        self.d.len()
    }

    pub fn w_row(&self, k: usize) -> &[f64] {
        &self.w[k * self.num_features..(k + 1) * self.num_features]
    }

    pub fn w_rows(&self) -> Vec<Vec<f64>> {
        self.w.chunks(self.num_features).map(<[f64]>::to_vec).collect()
    }

    pub fn sub_index(&self, k: usize, j: usize) -> f64 {
        sub_index(self.d[k], self.w[k * self.num_features + j])
    }
}

/// How new weight rows are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightProposal {
    /// Independence proposal from the Dirichlet prior.
    #[default]
    Prior,
    /// `Dirichlet(c * w_current)`, centred on the current row.
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Upper bound of each per-feature sub-index; global indexes live in `[0, u*M]`.
    pub u: f64,
    pub alphas: Vec<f64>,
    pub importances: Vec<f64>,
    /// Standard deviation of the truncated-normal index proposal.
    pub proposal_sd: f64,
    pub samples: usize,
    pub seed: u64,
    pub weight_proposal: WeightProposal,
    pub dirichlet_proposal_concentration: f64,
    /// Unshifted starting indexes; defaults to `u*M/2` for every treatment.
    pub initial_d: Option<Vec<f64>>,
    /// Random stream of the chain, see [`crate::sampler::chain_rng`].
    pub stream: u64,
}

pub const DEFAULT_U: f64 = 10.0;
pub const DEFAULT_PROPOSAL_SD: f64 = 0.5;
pub const DEFAULT_SAMPLES: usize = 200_000;
pub const DEFAULT_PROPOSAL_CONCENTRATION: f64 = 50.0;

impl ModelConfig {
    pub fn new(num_features: usize) -> Self {
        Self {
            u: DEFAULT_U,
            alphas: vec![1.0; num_features],
            importances: vec![1.0; num_features],
            proposal_sd: DEFAULT_PROPOSAL_SD,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            weight_proposal: WeightProposal::Prior,
            dirichlet_proposal_concentration: DEFAULT_PROPOSAL_CONCENTRATION,
            initial_d: None,
            stream: 0,
        }
    }

    pub fn num_features(&self) -> usize {
        self.alphas.len()
    }

    /// Upper bound of the global index box.
    pub fn d_max(&self) -> f64 {
        self.u * self.alphas.len() as f64
    }

    pub fn validate(&self, num_treatments: usize) -> Result<()> {
        let mut problems = Vec::new();
        let m = self.alphas.len();
        if m == 0 {
            problems.push("alphas: need one entry per feature".to_string());
        }
        if !(self.u.is_finite() && self.u > 0.0) {
            problems.push(format!("u must be > 0 (got {})", self.u));
        }
        if !(self.proposal_sd.is_finite() && self.proposal_sd > 0.0) {
            problems.push(format!("proposal_sd must be > 0 (got {})", self.proposal_sd));
        }
        if self.samples == 0 {
            problems.push("samples must be >= 1".to_string());
        }
        if self.importances.len() != m {
            problems.push(format!(
                "importances: {} entries for {m} features",
                self.importances.len()
            ));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            problems.push("alphas must all be > 0".to_string());
        }
        if self.importances.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            problems.push("importances must all be > 0".to_string());
        }
        if !(self.dirichlet_proposal_concentration.is_finite() && self.dirichlet_proposal_concentration > 0.0) {
            problems.push("dirichlet_proposal_concentration must be > 0".to_string());
        }
        if let Some(init) = &self.initial_d {
            if init.len() != num_treatments {
                problems.push(format!(
                    "initial_d: {} entries for {num_treatments} treatments",
                    init.len()
                ));
            } else if init.iter().any(|&x| !(x > 0.0 && x < self.d_max())) {
                problems.push(format!("initial_d entries must lie in (0, {})", self.d_max()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BtmeError::Config(problems.join("; ")))
        }
    }
}

#[inline]
pub fn sub_index(d_k: f64, w_kj: f64) -> f64 {
    d_k * w_kj
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x) = -softplus(-x)`, finite for any finite `x`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that `r` prevails over `s` on one feature.
#[inline]
pub fn prevail_prob(d_r: f64, w_rj: f64, d_s: f64, w_sj: f64) -> f64 {
    sigmoid(sub_index(d_r, w_rj) - sub_index(d_s, w_sj))
}

/// Both directions at once; the second is derived from the first so the pair
/// always sums to one.
#[inline]
pub fn prevail_pair(d_r: f64, w_rj: f64, d_s: f64, w_sj: f64) -> (f64, f64) {
    let p = prevail_prob(d_r, w_rj, d_s, w_sj);
    (p, 1.0 - p)
}

/// `ln C(n, k)`; exact integer arithmetic while it fits, log-gamma beyond.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    let k = k.min(n - k);
    if n <= 60 {
        let mut c: u64 = 1;
        for i in 0..k {
            c = c * (n - i) / (i + 1);
        }
        (c as f64).ln()
    } else {
        ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
    }
}

/// Number of `(j, r<s)` likelihood terms: `M * K(K-1)/2`.
pub fn complexity_probe(num_treatments: usize, num_features: usize) -> usize {
    num_features * num_treatments * num_treatments.saturating_sub(1) / 2
}

/// Anything the sampler can target: a log-likelihood over `(d, w)` that can
/// also report the part contributed by a single treatment.
pub trait LogLikelihood: Sync {
    fn num_treatments(&self) -> usize;
    fn num_features(&self) -> usize;
    fn log_likelihood(&self, d: &[f64], w: &[f64]) -> f64;
    /// Sum of the terms that involve treatment `k`.
    fn treatment_log_likelihood(&self, k: usize, d: &[f64], w: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    feature: usize,
    r: usize,
    s: usize,
    wins: f64,
    losses: f64,
    ln_binom: f64,
}

/// BTME log-likelihood with the binomial coefficients and term layout
/// precomputed once per data set.
#[derive(Debug, Clone)]
pub struct BtmeLikelihood {
    num_treatments: usize,
    num_features: usize,
    importances: Vec<f64>,
    terms: Vec<PairTerm>,
    by_treatment: Vec<Vec<usize>>,
}

impl BtmeLikelihood {
    pub fn new(y: &ComparisonArray, importances: &[f64]) -> Result<Self> {
        let k = y.num_treatments();
        let m = y.num_features();
        if importances.len() != m {
            return Err(BtmeError::Shape(format!(
                "{} importances for {m} features",
                importances.len()
            )));
        }
        let mut terms = Vec::with_capacity(complexity_probe(k, m));
        let mut by_treatment = vec![Vec::new(); k];
        for j in 0..m {
            for r in 0..k {
                for s in (r + 1)..k {
                    let n = y.trials(r, s);
                    let wins = y.get(j, r, s);
                    if wins > n {
                        return Err(BtmeError::Validation(vec![format!(
                            "feature {j}: y[{r}][{s}] = {wins} exceeds {n} trials"
                        )]));
                    }
                    by_treatment[r].push(terms.len());
                    by_treatment[s].push(terms.len());
                    terms.push(PairTerm {
                        feature: j,
                        r,
                        s,
                        wins: wins as f64,
                        losses: (n - wins) as f64,
                        ln_binom: ln_binomial(n, wins),
                    });
                }
            }
        }
        Ok(Self {
            num_treatments: k,
            num_features: m,
            importances: importances.to_vec(),
            terms,
            by_treatment,
        })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    #[inline]
    fn delta(&self, t: &PairTerm, d: &[f64], w: &[f64]) -> f64 {
        let m = self.num_features;
        sub_index(d[t.r], w[t.r * m + t.feature]) - sub_index(d[t.s], w[t.s * m + t.feature])
    }

    #[inline]
    fn term(&self, t: &PairTerm, d: &[f64], w: &[f64]) -> f64 {
        let delta = self.delta(t, d, w);
        self.importances[t.feature] * (t.ln_binom + t.wins * log_sigmoid(delta) + t.losses * log_sigmoid(-delta))
    }

    /// Analytic gradient of the log-likelihood with respect to `d`.
    pub fn grad_d(&self, d: &[f64], w: &[f64]) -> Vec<f64> {
        let m = self.num_features;
        let mut grad = vec![0.0; self.num_treatments];
        for t in &self.terms {
            let p = sigmoid(self.delta(t, d, w));
            let residual = self.importances[t.feature] * (t.wins - (t.wins + t.losses) * p);
            grad[t.r] += residual * w[t.r * m + t.feature];
            grad[t.s] -= residual * w[t.s * m + t.feature];
        }
        grad
    }
}

impl LogLikelihood for BtmeLikelihood {
    fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    fn num_features(&self) -> usize {
        self.num_features
    }

    fn log_likelihood(&self, d: &[f64], w: &[f64]) -> f64 {
        self.terms.iter().map(|t| self.term(t, d, w)).sum()
    }

    fn treatment_log_likelihood(&self, k: usize, d: &[f64], w: &[f64]) -> f64 {
        self.by_treatment[k]
            .iter()
            .map(|&i| self.term(&self.terms[i], d, w))
            .sum()
    }
}

/// A likelihood that ignores the data; the chain then samples the prior.
#[derive(Debug, Clone, Copy)]
pub struct FlatLikelihood {
    pub num_treatments: usize,
    pub num_features: usize,
}

impl LogLikelihood for FlatLikelihood {
    fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    fn num_features(&self) -> usize {
        self.num_features
    }

    fn log_likelihood(&self, _d: &[f64], _w: &[f64]) -> f64 {
        0.0
    }

    fn treatment_log_likelihood(&self, _k: usize, _d: &[f64], _w: &[f64]) -> f64 {
        0.0
    }
}

/// BTME log-likelihood of `y` at `params`, importance-weighted per feature.
pub fn log_likelihood(y: &ComparisonArray, params: &ModelParams, cfg: &ModelConfig) -> Result<f64> {
    if params.num_treatments() != y.num_treatments() || params.num_features != y.num_features() {
        return Err(BtmeError::Shape(format!(
            "params are {}x{}, data {}x{}",
            params.num_treatments(),
            params.num_features,
            y.num_treatments(),
            y.num_features()
        )));
    }
    Ok(BtmeLikelihood::new(y, &cfg.importances)?.log_likelihood(&params.d, &params.w))
}

/// Uniform box prior on the global indexes, constant dropped.
pub fn log_prior_d(d: &[f64], cfg: &ModelConfig) -> f64 {
    let hi = cfg.d_max();
    if d.iter().all(|&x| (0.0..=hi).contains(&x)) {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

const SIMPLEX_TOL: f64 = 1e-9;

/// Dirichlet log-density, normalizing constant included.
pub fn log_prior_w(w_k: &[f64], alphas: &[f64]) -> f64 {
    if w_k.len() != alphas.len() {
        return f64::NEG_INFINITY;
    }
    if w_k.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (w_k.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
        return f64::NEG_INFINITY;
    }
    if w_k.len() == 1 {
        return 0.0;
    }
    dirichlet_ln_pdf(w_k, alphas)
}

/// Dirichlet log-density for a point already known to be on the simplex.
pub(crate) fn dirichlet_ln_pdf(x: &[f64], alphas: &[f64]) -> f64 {
    let total: f64 = alphas.iter().sum();
    let mut lp = ln_gamma(total);
    for (&xi, &a) in x.iter().zip(alphas) {
        lp -= ln_gamma(a);
        if a != 1.0 {
            lp += (a - 1.0) * xi.ln();
        }
    }
    lp
}
