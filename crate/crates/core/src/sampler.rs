//! Metropolis–Hastings sampler for the joint posterior of `(d, w)`.
//!
//! One sweep updates every global index in turn and then every weight row.
//!
//! Index updates walk an unshifted "anchor" vector inside the box `[0, u*M]^K`
//! with truncated-normal proposals. Before the acceptance test the proposed
//! vector is shifted so its minimum is zero, and the likelihood and prior are
//! evaluated on that shifted vector. Stored draws are always shifted. The walk
//! itself keeps the unshifted coordinates, which keeps the kernel reversible:
//! the stored draws then follow the min-zero image of the box posterior.
//!
//! Weight rows are proposed either from the Dirichlet prior (an independence
//! proposal whose prior and proposal terms cancel) or from a Dirichlet centred
//! on the current row, with the full asymmetric correction.
//!
//! Randomness comes from ChaCha20. A chain seeded with `(seed, stream)` uses
//! `ChaCha20Rng::seed_from_u64(seed)` switched to stream `stream`, so chains of
//! one run share a seed and differ only in their stream number.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;
use statrs::function::erf::{erfc, erfc_inv};

use crate::data::ComparisonArray;
use crate::error::{BtmeError, Result};
use crate::model::{dirichlet_ln_pdf, log_prior_d, BtmeLikelihood, LogLikelihood, ModelConfig, WeightProposal};

pub fn chain_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal upper tail `P(Z > x)`.
fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `P(lo < X < hi)` for `X ~ N(mean, sd)`, computed in the tail that keeps
/// precision.
fn normal_interval_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    if a > 0.0 {
        normal_sf(a) - normal_sf(b)
    } else {
        normal_sf(-b) - normal_sf(-a)
    }
}

pub fn truncated_normal_logpdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if !(x > lo && x < hi) {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    -0.5 * z * z - LN_SQRT_2PI - sd.ln() - normal_interval_mass(mean, sd, lo, hi).ln()
}

/// Draws from `N(mean, sd)` conditioned on `(lo, hi)`.
///
/// Plain rejection while the interval holds a reasonable share of the mass,
/// inverse-CDF otherwise.
pub fn truncated_normal_sample<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    const MAX_REJECTIONS: usize = 32;
    for _ in 0..MAX_REJECTIONS {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if x > lo && x < hi {
            return x;
        }
    }
    // Interval far in a tail: invert the CDF on whichever side is more precise.
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let u: f64 = rng.random();
    let x = if a > 0.0 {
        let (sa, sb) = (normal_sf(a), normal_sf(b));
        let p = sa - u * (sa - sb);
        mean + sd * SQRT_2 * erfc_inv(2.0 * p)
    } else {
        let (sa, sb) = (normal_sf(-b), normal_sf(-a));
        let p = sa + u * (sb - sa);
        mean - sd * SQRT_2 * erfc_inv(2.0 * p)
    };
    x.clamp(lo.next_up(), hi.next_down())
}

/// Receives one `(d, w)` draw per iteration. `d` is already min-zero shifted.
pub trait DrawSink {
    fn record(&mut self, d: &[f64], w: &[f64], log_lik: f64);
}

/// Every retained draw of a chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorDraws {
    pub num_treatments: usize,
    pub num_features: usize,
    /// `S x K`, row-major.
    pub d_draws: Vec<f64>,
    /// `S x K x M`, row-major.
    pub w_draws: Vec<f64>,
    pub accept_rate_d: Vec<f64>,
    /// `None` when the weights are fixed (`M = 1`).
    pub accept_rate_w: Option<Vec<f64>>,
    pub log_lik_trace: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl PosteriorDraws {
    pub fn new(num_treatments: usize, num_features: usize, seed: u64, stream: u64) -> Self {
        Self {
            num_treatments,
            num_features,
            d_draws: Vec::new(),
            w_draws: Vec::new(),
            accept_rate_d: vec![0.0; num_treatments],
            accept_rate_w: None,
            log_lik_trace: Vec::new(),
            seed,
            stream,
        }
    }

    /// Builds draws directly from per-iteration vectors, mostly for tests and
    /// post-processing of externally produced samples.
    pub fn from_samples(d: &[Vec<f64>], w: &[Vec<f64>], num_features: usize) -> Self {
        let k = d.first().map_or(0, Vec::len);
        let mut draws = Self::new(k, num_features, 0, 0);
        for (di, wi) in d.iter().zip(w) {
            draws.record(di, wi, 0.0);
        }
        draws
    }

    pub fn num_samples(&self) -> usize {
        self.log_lik_trace.len()
    }

    pub fn d(&self, i: usize) -> &[f64] {
        let k = self.num_treatments;
        &self.d_draws[i * k..(i + 1) * k]
    }

    pub fn w(&self, i: usize) -> &[f64] {
        let km = self.num_treatments * self.num_features;
        &self.w_draws[i * km..(i + 1) * km]
    }

    /// Drops the first `burn_in` draws and keeps every `thin`-th of the rest.
    pub fn slice(&self, burn_in: usize, thin: usize) -> Self {
        let thin = thin.max(1);
        let mut out = Self::new(self.num_treatments, self.num_features, self.seed, self.stream);
        out.accept_rate_d = self.accept_rate_d.clone();
        out.accept_rate_w = self.accept_rate_w.clone();
        for i in (burn_in..self.num_samples()).step_by(thin) {
            out.record(self.d(i), self.w(i), self.log_lik_trace[i]);
        }
        out
    }

    /// Flat `iter,param,index,value` export; weight indexes are written `k:j`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,param,index,value\n");
        for i in 0..self.num_samples() {
            for (k, v) in self.d(i).iter().enumerate() {
                out.push_str(&format!("{},d,{k},{v}\n", i + 1));
            }
            for (idx, v) in self.w(i).iter().enumerate() {
                let (k, j) = (idx / self.num_features, idx % self.num_features);
                out.push_str(&format!("{},w,{k}:{j},{v}\n", i + 1));
            }
        }
        out
    }
}

impl DrawSink for PosteriorDraws {
    fn record(&mut self, d: &[f64], w: &[f64], log_lik: f64) {
        self.d_draws.extend_from_slice(d);
        self.w_draws.extend_from_slice(w);
        self.log_lik_trace.push(log_lik);
    }
}

/// Running means of `d` and `w`, for long chains whose draws need not be kept.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMeans {
    pub count: usize,
    d_sum: Vec<f64>,
    w_sum: Vec<f64>,
}

impl RunningMeans {
    pub fn new(num_treatments: usize, num_features: usize) -> Self {
        Self {
            count: 0,
            d_sum: vec![0.0; num_treatments],
            w_sum: vec![0.0; num_treatments * num_features],
        }
    }

    pub fn d_mean(&self) -> Vec<f64> {
        self.d_sum.iter().map(|s| s / self.count as f64).collect()
    }

    pub fn w_mean(&self) -> Vec<f64> {
        self.w_sum.iter().map(|s| s / self.count as f64).collect()
    }
}

impl DrawSink for RunningMeans {
    fn record(&mut self, d: &[f64], w: &[f64], _log_lik: f64) {
        self.count += 1;
        self.d_sum.iter_mut().zip(d).for_each(|(s, x)| *s += x);
        self.w_sum.iter_mut().zip(w).for_each(|(s, x)| *s += x);
    }
}

/// Acceptance bookkeeping returned by [`run_chain_with`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub accept_rate_d: Vec<f64>,
    pub accept_rate_w: Option<Vec<f64>>,
}

/// Current position of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Unshifted walk coordinates, strictly inside `(0, u*M)`.
    anchor: Vec<f64>,
    /// `anchor - min(anchor)`: the identified indexes.
    d: Vec<f64>,
    w: Vec<f64>,
    log_lik: f64,
}

impl ChainState {
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn log_lik(&self) -> f64 {
        self.log_lik
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn shift_into(anchor: &[f64], out: &mut [f64]) -> f64 {
    let lo = min_of(anchor);
    out.iter_mut().zip(anchor).for_each(|(o, a)| *o = a - lo);
    lo
}

fn dirichlet_sample<R: Rng + ?Sized>(gammas: &[Gamma<f64>], out: &mut [f64], rng: &mut R) {
    let mut total = 0.0;
    for (o, g) in out.iter_mut().zip(gammas) {
        *o = g.sample(rng);
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// One Metropolis–Hastings chain over a fixed likelihood and configuration.
pub struct Sampler<'a, L: LogLikelihood> {
    lik: &'a L,
    cfg: &'a ModelConfig,
    prior_gammas: Vec<Gamma<f64>>,
    accepted_d: Vec<u64>,
    accepted_w: Vec<u64>,
    sweeps: u64,
    // scratch
    cand_anchor: Vec<f64>,
    cand_d: Vec<f64>,
    cand_row: Vec<f64>,
}

impl<'a, L: LogLikelihood> Sampler<'a, L> {
    pub fn new(lik: &'a L, cfg: &'a ModelConfig) -> Result<Self> {
        let k = lik.num_treatments();
        let m = lik.num_features();
        if cfg.num_features() != m {
            return Err(BtmeError::Config(format!(
                "configuration has {} features, data has {m}",
                cfg.num_features()
            )));
        }
        cfg.validate(k)?;
        let prior_gammas = cfg
            .alphas
            .iter()
            .map(|&a| Gamma::new(a, 1.0).map_err(|e| BtmeError::Config(format!("alpha {a}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            lik,
            cfg,
            prior_gammas,
            accepted_d: vec![0; k],
            accepted_w: vec![0; k],
            sweeps: 0,
            cand_anchor: vec![0.0; k],
            cand_d: vec![0.0; k],
            cand_row: vec![0.0; m],
        })
    }

    /// Deterministic starting point: anchor at `u*M/2` unless configured,
    /// uniform weight rows.
    pub fn initial_state(&self) -> ChainState {
        let k = self.lik.num_treatments();
        let m = self.lik.num_features();
        let anchor = self
            .cfg
            .initial_d
            .clone()
            .unwrap_or_else(|| vec![self.cfg.d_max() / 2.0; k]);
        let mut d = vec![0.0; k];
        shift_into(&anchor, &mut d);
        let w = vec![1.0 / m as f64; k * m];
        let log_lik = self.lik.log_likelihood(&d, &w);
        ChainState { anchor, d, w, log_lik }
    }

    /// Sequential truncated-normal updates of each global index.
    pub fn update_d<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) {
        let hi = self.cfg.d_max();
        let sd = self.cfg.proposal_sd;
        let mut current_prior = log_prior_d(&state.d, self.cfg);
        for k in 0..state.anchor.len() {
            let old = state.anchor[k];
            let proposal = truncated_normal_sample(old, sd, 0.0, hi, rng);

            self.cand_anchor.copy_from_slice(&state.anchor);
            self.cand_anchor[k] = proposal;
            let old_min = min_of(&state.anchor);
            let new_min = shift_into(&self.cand_anchor, &mut self.cand_d);

            let cand_prior = log_prior_d(&self.cand_d, self.cfg);
            let cand_lik = if cand_prior == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else if new_min == old_min {
                // only entry k moved
                state.log_lik - self.lik.treatment_log_likelihood(k, &state.d, &state.w)
                    + self.lik.treatment_log_likelihood(k, &self.cand_d, &state.w)
            } else {
                self.lik.log_likelihood(&self.cand_d, &state.w)
            };

            let log_q_ratio = truncated_normal_logpdf(old, proposal, sd, 0.0, hi)
                - truncated_normal_logpdf(proposal, old, sd, 0.0, hi);
            let log_alpha = cand_lik + cand_prior - state.log_lik - current_prior + log_q_ratio;

            if accept(log_alpha, rng) {
                state.anchor.copy_from_slice(&self.cand_anchor);
                state.d.copy_from_slice(&self.cand_d);
                state.log_lik = cand_lik;
                current_prior = cand_prior;
                self.accepted_d[k] += 1;
            }
        }
    }

    /// Simplex proposals for each weight row. Does nothing when `M = 1`.
    pub fn update_w<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) {
        let m = self.lik.num_features();
        if m < 2 {
            return;
        }
        let alphas = &self.cfg.alphas;
        for k in 0..state.d.len() {
            let row = k * m..(k + 1) * m;
            let current: Vec<f64> = state.w[row.clone()].to_vec();

            let log_correction = match self.cfg.weight_proposal {
                WeightProposal::Prior => {
                    dirichlet_sample(&self.prior_gammas, &mut self.cand_row, rng);
                    // prior and proposal densities cancel
                    0.0
                }
                WeightProposal::Local => {
                    let c = self.cfg.dirichlet_proposal_concentration;
                    let forward: Vec<f64> = current.iter().map(|x| c * x).collect();
                    let Some(gammas) = forward
                        .iter()
                        .map(|&a| Gamma::new(a, 1.0).ok())
                        .collect::<Option<Vec<_>>>()
                    else {
                        continue;
                    };
                    dirichlet_sample(&gammas, &mut self.cand_row, rng);
                    let backward: Vec<f64> = self.cand_row.iter().map(|x| c * x).collect();
                    dirichlet_ln_pdf(&self.cand_row, alphas) - dirichlet_ln_pdf(&current, alphas)
                        + dirichlet_ln_pdf(&current, &backward)
                        - dirichlet_ln_pdf(&self.cand_row, &forward)
                }
            };
            if self.cand_row.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                continue;
            }

            let old_part = self.lik.treatment_log_likelihood(k, &state.d, &state.w);
            state.w[row.clone()].copy_from_slice(&self.cand_row);
            let new_part = self.lik.treatment_log_likelihood(k, &state.d, &state.w);
            let log_alpha = new_part - old_part + log_correction;

            if accept(log_alpha, rng) {
                state.log_lik += new_part - old_part;
                self.accepted_w[k] += 1;
            } else {
                state.w[row].copy_from_slice(&current);
            }
        }
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) {
        self.update_d(state, rng);
        self.update_w(state, rng);
        self.sweeps += 1;
    }

    pub fn stats(&self) -> ChainStats {
        let rate = |n: &u64| {
            if self.sweeps == 0 {
                0.0
            } else {
                *n as f64 / self.sweeps as f64
            }
        };
        ChainStats {
            accept_rate_d: self.accepted_d.iter().map(rate).collect(),
            accept_rate_w: (self.lik.num_features() > 1).then(|| self.accepted_w.iter().map(rate).collect()),
        }
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_alpha
}

/// Runs `cfg.samples` iterations, feeding every state to `sink`. The first
/// draw is the deterministic initial state.
pub fn run_chain_with<L: LogLikelihood, S: DrawSink>(lik: &L, cfg: &ModelConfig, sink: &mut S) -> Result<ChainStats> {
    let mut sampler = Sampler::new(lik, cfg)?;
    let mut rng = chain_rng(cfg.seed, cfg.stream);
    let mut state = sampler.initial_state();
    sink.record(&state.d, &state.w, state.log_lik);
    for _ in 1..cfg.samples {
        sampler.sweep(&mut state, &mut rng);
        sink.record(&state.d, &state.w, state.log_lik);
    }
    Ok(sampler.stats())
}

/// Fits the BTME posterior to `y`, keeping every draw.
pub fn run_chain(y: &ComparisonArray, cfg: &ModelConfig) -> Result<PosteriorDraws> {
    y.validate()?;
    let lik = BtmeLikelihood::new(y, &cfg.importances)?;
    run_chain_on(&lik, cfg)
}

pub fn run_chain_on<L: LogLikelihood>(lik: &L, cfg: &ModelConfig) -> Result<PosteriorDraws> {
    let mut draws = PosteriorDraws::new(lik.num_treatments(), lik.num_features(), cfg.seed, cfg.stream);
    let stats = run_chain_with(lik, cfg, &mut draws)?;
    draws.accept_rate_d = stats.accept_rate_d;
    draws.accept_rate_w = stats.accept_rate_w;
    Ok(draws)
}
