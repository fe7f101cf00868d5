//! Synthetic data from the generative model and the reconstruction study.
//!
//! Stream layout: every `(scenario, replicate)` cell of a study gets two
//! ChaCha streams under the study seed, `cell << 1` for simulating data and
//! `cell << 1 | 1` for the chain, where `cell = scenario << 24 | replicate`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ComparisonArray;
use crate::error::{BtmeError, Result};
use crate::model::{prevail_prob, BtmeLikelihood, ModelConfig, ModelParams, WeightProposal};
use crate::posterior::{quantile_sorted, spearman};
use crate::sampler::{chain_rng, run_chain_with, RunningMeans};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub params: ModelParams,
    pub y: ComparisonArray,
}

/// Draws `y` given fixed parameters: for each feature and `r < s`,
/// `y[j][r][s] ~ Binomial(n_r n_s, sigmoid(d_r w_rj - d_s w_sj))` and the
/// reverse count is the complement.
pub fn sample_comparisons<R: Rng + ?Sized>(
    params: &ModelParams,
    sample_sizes: &[usize],
    rng: &mut R,
) -> Result<ComparisonArray> {
    let k = params.num_treatments();
    let m = params.num_features;
    if sample_sizes.len() != k {
        return Err(BtmeError::Shape(format!(
            "{} sample sizes for {k} treatments",
            sample_sizes.len()
        )));
    }
    let mut y = ComparisonArray::zeros(m, sample_sizes.to_vec());
    for j in 0..m {
        for r in 0..k {
            for s in (r + 1)..k {
                let n = y.trials(r, s);
                let p = prevail_prob(params.d[r], params.w[r * m + j], params.d[s], params.w[s * m + j]);
                let wins = Binomial::new(n, p)
                    .map_err(|e| BtmeError::Statistic(format!("binomial({n}, {p}): {e}")))?
                    .sample(rng);
                y.set(j, r, s, wins);
                y.set(j, s, r, n - wins);
            }
        }
    }
    Ok(y)
}

/// Draws `(d, w)` from the prior and then `y` from the model.
pub fn simulate_generative_with<R: Rng + ?Sized>(
    sample_sizes: &[usize],
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<SimulatedData> {
    let k = sample_sizes.len();
    let m = cfg.num_features();
    if k < 2 || m < 1 {
        return Err(BtmeError::Config(format!("need K >= 2 and M >= 1 (got K={k}, M={m})")));
    }
    if sample_sizes.contains(&0) {
        return Err(BtmeError::Config("sample sizes must be >= 1".into()));
    }
    cfg.validate(k)?;
    let index = Uniform::new(0.0, cfg.d_max()).map_err(|e| BtmeError::Config(e.to_string()))?;
    let d: Vec<f64> = (0..k).map(|_| index.sample(rng)).collect();
    let gammas: Vec<Gamma<f64>> = cfg
        .alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| BtmeError::Config(e.to_string())))
        .collect::<Result<_>>()?;
    let mut w = Vec::with_capacity(k * m);
    for _ in 0..k {
        let row: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = row.iter().sum();
        w.extend(row.into_iter().map(|x| x / total));
    }
    let params = ModelParams { d, w, num_features: m };
    let y = sample_comparisons(&params, sample_sizes, rng)?;
    Ok(SimulatedData { params, y })
}

pub fn simulate_generative(sample_sizes: &[usize], cfg: &ModelConfig, seed: u64) -> Result<SimulatedData> {
    simulate_generative_with(sample_sizes, cfg, &mut chain_rng(seed, 0))
}

/// Shifts indexes so the smallest is zero.
pub fn identified(d: &[f64]) -> Vec<f64> {
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    d.iter().map(|x| x - lo).collect()
}

/// Default scenario grid of the recovery study.
pub const FULL_GRID_K: [usize; 5] = [2, 4, 6, 8, 10];
pub const FULL_GRID_M: [usize; 5] = [1, 2, 3, 5, 10];
pub const FULL_SCALE_SAMPLES: usize = 1_000_000;
pub const DEFAULT_REPLICATES: usize = 20;
pub const DEFAULT_UNITS_PER_TREATMENT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub k: usize,
    pub m: usize,
}

pub fn full_grid() -> Vec<Scenario> {
    FULL_GRID_M
        .iter()
        .flat_map(|&m| FULL_GRID_K.iter().map(move |&k| Scenario { k, m }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub grid: Vec<Scenario>,
    pub units_per_treatment: usize,
    pub replicates: usize,
    pub samples: usize,
    pub u: f64,
    pub alpha: f64,
    pub proposal_sd: f64,
    pub weight_proposal: WeightProposal,
    pub dirichlet_proposal_concentration: f64,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let base = ModelConfig::new(1);
        Self {
            grid: full_grid(),
            units_per_treatment: DEFAULT_UNITS_PER_TREATMENT,
            replicates: DEFAULT_REPLICATES,
            samples: base.samples,
            u: base.u,
            alpha: 1.0,
            proposal_sd: base.proposal_sd,
            weight_proposal: base.weight_proposal,
            dirichlet_proposal_concentration: base.dirichlet_proposal_concentration,
            seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn model_config(&self, m: usize) -> ModelConfig {
        ModelConfig {
            u: self.u,
            alphas: vec![self.alpha; m],
            importances: vec![1.0; m],
            proposal_sd: self.proposal_sd,
            samples: self.samples,
            seed: self.seed,
            weight_proposal: self.weight_proposal,
            dirichlet_proposal_concentration: self.dirichlet_proposal_concentration,
            initial_d: None,
            stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(BtmeError::Config("replicates must be >= 1".into()));
        }
        if self.units_per_treatment == 0 {
            return Err(BtmeError::Config("units per treatment must be >= 1".into()));
        }
        for sc in &self.grid {
            if sc.k < 2 || sc.m < 1 {
                return Err(BtmeError::Config(format!("invalid scenario K={} M={}", sc.k, sc.m)));
            }
            self.model_config(sc.m).validate(sc.k)?;
        }
        Ok(())
    }
}

fn cell_streams(scenario: usize, replicate: usize) -> (u64, u64) {
    let cell = ((scenario as u64) << 24) | replicate as u64;
    (cell << 1, (cell << 1) | 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub k: usize,
    pub m: usize,
    pub replicate: usize,
    /// Generating indexes after the min-zero shift.
    pub true_d: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub true_w: Vec<f64>,
    pub w_hat: Vec<f64>,
    /// `None` when a rank vector is constant.
    pub spearman: Option<f64>,
    pub d_errors: Vec<f64>,
    pub w_errors: Vec<f64>,
    pub accept_rate_d: Vec<f64>,
}

/// Summary of a metric; statistics of an empty set are NaN (`null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    #[serde(with = "nan_as_null")]
    pub min: f64,
    #[serde(with = "nan_as_null")]
    pub q1: f64,
    #[serde(with = "nan_as_null")]
    pub median: f64,
    #[serde(with = "nan_as_null")]
    pub q3: f64,
    #[serde(with = "nan_as_null")]
    pub max: f64,
    pub count: usize,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        Self {
            min: v.first().copied().unwrap_or(f64::NAN),
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v.last().copied().unwrap_or(f64::NAN),
            count: v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub k: usize,
    pub m: usize,
    pub spearman: FiveNumber,
    pub d_error: FiveNumber,
    pub w_error: FiveNumber,
    pub terms_per_likelihood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub scenarios: Vec<ScenarioSummary>,
    pub replicates: Vec<ReplicateResult>,
}

fn run_replicate(
    study: &StudyConfig,
    scenario_index: usize,
    sc: Scenario,
    replicate: usize,
) -> Result<ReplicateResult> {
    let (sim_stream, chain_stream) = cell_streams(scenario_index, replicate);
    let mut cfg = study.model_config(sc.m);
    let sizes = vec![study.units_per_treatment; sc.k];
    let sim = simulate_generative_with(&sizes, &cfg, &mut chain_rng(study.seed, sim_stream))?;

    cfg.stream = chain_stream;
    let lik = BtmeLikelihood::new(&sim.y, &cfg.importances)?;
    let mut means = RunningMeans::new(sc.k, sc.m);
    let stats = run_chain_with(&lik, &cfg, &mut means)?;

    let true_d = identified(&sim.params.d);
    let d_hat = means.d_mean();
    let w_hat = means.w_mean();
    let d_errors = true_d.iter().zip(&d_hat).map(|(t, e)| t - e).collect();
    let w_errors = sim.params.w.iter().zip(&w_hat).map(|(t, e)| t - e).collect();
    Ok(ReplicateResult {
        k: sc.k,
        m: sc.m,
        replicate,
        spearman: spearman(&true_d, &d_hat).ok(),
        true_d,
        d_hat,
        true_w: sim.params.w,
        w_hat,
        d_errors,
        w_errors,
        accept_rate_d: stats.accept_rate_d,
    })
}

/// Simulates, refits and scores every `(scenario, replicate)` cell. Cells run
/// in parallel on the current rayon pool; results are ordered by scenario,
/// then replicate.
pub fn run_reconstruction_study(study: &StudyConfig) -> Result<StudyReport> {
    study.validate()?;
    let cells: Vec<(usize, Scenario, usize)> = study
        .grid
        .iter()
        .enumerate()
        .flat_map(|(i, &sc)| (0..study.replicates).map(move |r| (i, sc, r)))
        .collect();
    let replicates = cells
        .par_iter()
        .map(|&(i, sc, r)| run_replicate(study, i, sc, r))
        .collect::<Result<Vec<_>>>()?;

    let scenarios = study
        .grid
        .iter()
        .map(|sc| {
            let rows: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.k == sc.k && r.m == sc.m).collect();
            let spear: Vec<f64> = rows.iter().map(|r| r.spearman.unwrap_or(f64::NAN)).collect();
            let d_err: Vec<f64> = rows.iter().flat_map(|r| r.d_errors.iter().copied()).collect();
            let w_err: Vec<f64> = rows.iter().flat_map(|r| r.w_errors.iter().copied()).collect();
            ScenarioSummary {
                k: sc.k,
                m: sc.m,
                spearman: FiveNumber::of(&spear),
                d_error: FiveNumber::of(&d_err),
                w_error: FiveNumber::of(&w_err),
                terms_per_likelihood: crate::model::complexity_probe(sc.k, sc.m),
            }
        })
        .collect();
    Ok(StudyReport {
        config: study.clone(),
        scenarios,
        replicates,
    })
}

/// One line of the long study CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub k: usize,
    pub m: usize,
    pub replicate: usize,
    pub metric: String,
    pub values: Vec<f64>,
}

pub const STUDY_METRICS: [&str; 3] = ["spearman", "d_error", "w_error"];
pub const STUDY_CSV_HEADER: &str = "k,m,replicate,metric,count,values";

pub fn study_rows(report: &StudyReport) -> Vec<StudyRow> {
    let mut rows = Vec::with_capacity(report.replicates.len() * STUDY_METRICS.len());
    for r in &report.replicates {
        let row = |metric: &str, values: Vec<f64>| StudyRow {
            k: r.k,
            m: r.m,
            replicate: r.replicate,
            metric: metric.to_string(),
            values,
        };
        rows.push(row("spearman", vec![r.spearman.unwrap_or(f64::NAN)]));
        rows.push(row("d_error", r.d_errors.clone()));
        rows.push(row("w_error", r.w_errors.clone()));
    }
    rows
}

/// Serializes a study as `(study.json, study.csv)`.
///
/// The CSV has one row per scenario, replicate and metric; `values` holds the
/// metric's numbers joined by `;` (one for `spearman`, `K` for `d_error`,
/// `K*M` for `w_error`, row-major).
pub fn study_report_export(report: &StudyReport) -> Result<(String, String)> {
    let json = serde_json::to_string_pretty(report)?;
    let mut csv = String::from(STUDY_CSV_HEADER);
    csv.push('\n');
    for row in study_rows(report) {
        let values: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.k,
            row.m,
            row.replicate,
            row.metric,
            row.values.len(),
            values.join(";")
        ));
    }
    Ok((json, csv))
}

pub fn parse_study_csv(text: &str) -> Result<Vec<StudyRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == STUDY_CSV_HEADER => {}
        other => {
            return Err(BtmeError::Parse {
                line: 1,
                message: format!("expected header `{STUDY_CSV_HEADER}`, found `{}`", other.unwrap_or("")),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i as u64 + 2;
        let bad = |message: String| BtmeError::Parse { line: lineno, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer `{s}`")));
        let values = if fields[5].is_empty() {
            Vec::new()
        } else {
            fields[5]
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad number `{v}`"))))
                .collect::<Result<Vec<_>>>()?
        };
        if values.len() != int(fields[4])? {
            return Err(bad("value count does not match `count`".into()));
        }
        rows.push(StudyRow {
            k: int(fields[0])?,
            m: int(fields[1])?,
            replicate: int(fields[2])?,
            metric: fields[3].to_string(),
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generative_draws_respect_bounds() {
        let mut cfg = ModelConfig::new(3);
        cfg.alphas = vec![0.5, 1.0, 2.0];
        let sim = simulate_generative(&[4, 5, 6, 7], &cfg, 11).unwrap();
        assert!(sim.params.d.iter().all(|&x| (0.0..=30.0).contains(&x)));
        for row in sim.params.w_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        sim.y.validate().unwrap();
        for j in 0..3 {
            for r in 0..4 {
                for s in (r + 1)..4 {
                    assert_eq!(sim.y.ties(j, r, s), 0);
                }
            }
        }
        assert_eq!(simulate_generative(&[4, 5, 6, 7], &cfg, 11).unwrap(), sim);
    }

    #[test]
    fn generative_rejects_bad_sizes() {
        let cfg = ModelConfig::new(1);
        assert!(simulate_generative(&[10], &cfg, 0).is_err());
        assert!(simulate_generative(&[10, 0], &cfg, 0).is_err());
    }

    #[test]
    fn equal_parameters_give_fair_coin_counts() {
        let params = ModelParams::with_uniform_weights(vec![3.0, 3.0], 1);
        let mut rng = chain_rng(5, 0);
        let reps = 10_000;
        let total: u64 = (0..reps)
            .map(|_| sample_comparisons(&params, &[10, 10], &mut rng).unwrap().get(0, 0, 1))
            .sum();
        let mean = total as f64 / reps as f64;
        assert!((mean - 50.0).abs() < 1.0, "{mean}");
    }

    #[test]
    fn lopsided_parameters_give_near_zero_wins() {
        // E[y] = 100 * sigmoid(-10) ~ 0.0045
        let params = ModelParams::with_uniform_weights(vec![0.0, 10.0], 1);
        let mut rng = chain_rng(6, 0);
        let reps = 20_000;
        let total: u64 = (0..reps)
            .map(|_| sample_comparisons(&params, &[10, 10], &mut rng).unwrap().get(0, 0, 1))
            .sum();
        let mean = total as f64 / reps as f64;
        let expected = 100.0 * crate::model::sigmoid(-10.0);
        assert!((mean - expected).abs() < 0.003, "{mean} vs {expected}");
    }

    #[test]
    fn full_grid_shape() {
        let grid = full_grid();
        assert_eq!(grid.len(), 25);
        assert_eq!(grid[0], Scenario { k: 2, m: 1 });
        assert_eq!(grid[24], Scenario { k: 10, m: 10 });
    }

    #[test]
    fn streams_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..30 {
            for r in 0..50 {
                let (a, b) = cell_streams(s, r);
                assert!(seen.insert(a) && seen.insert(b));
            }
        }
    }

    #[test]
    fn empty_grid_exports_valid_files() {
        let study = StudyConfig {
            grid: vec![],
            ..Default::default()
        };
        let report = run_reconstruction_study(&study).unwrap();
        let (json, csv) = study_report_export(&report).unwrap();
        assert_eq!(csv, format!("{STUDY_CSV_HEADER}\n"));
        let back: StudyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(parse_study_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn small_study_round_trip() {
        let study = StudyConfig {
            grid: vec![Scenario { k: 2, m: 1 }, Scenario { k: 3, m: 2 }],
            replicates: 2,
            samples: 500,
            seed: 3,
            ..Default::default()
        };
        let report = run_reconstruction_study(&study).unwrap();
        let (json, csv) = study_report_export(&report).unwrap();
        let rows = parse_study_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2 * 2 * STUDY_METRICS.len());
        assert_eq!(rows, study_rows(&report));
        let back: StudyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.replicates.len(), 4);
        assert_eq!(back.scenarios, report.scenarios);
        assert_eq!(run_reconstruction_study(&study).unwrap(), report);
    }
}
