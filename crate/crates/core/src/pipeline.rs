//! Run configuration and the end-to-end ranking pipeline:
//! CSV -> ideal profile -> deviations -> comparison counts -> chains -> reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{parse_experiment_csv, ComparisonArray, DeviationMode, ExperimentTable, FeatureSpec, Goal};
use crate::deviations::{build_ideal_profile, compute_deviations, count_comparisons, tie_counts};
use crate::error::{BtmeError, Result};
use crate::model::{
    ModelConfig, WeightProposal, DEFAULT_PROPOSAL_CONCENTRATION, DEFAULT_PROPOSAL_SD, DEFAULT_SAMPLES, DEFAULT_U,
};
use crate::posterior::{PosteriorSummary, Quantiles, RankingDistribution, DEFAULT_TOP_ORDERS};
use crate::sampler::{run_chain, PosteriorDraws};

/// Reference for every configuration key, shown by `btme rank --help`.
pub const CONFIG_KEYS_HELP: &str = "\
Configuration file (TOML):
  seed = 0                      master seed; chain i uses stream i
  samples = 200000              iterations per chain (the initial state is draw 1)
  chains = 1                    independent chains, pooled in the summary
  u = 10.0                      per-feature index bound; indexes live in [0, u*M]
  proposal_sd = 0.5             sd of the truncated-normal index proposal
  weight_proposal = \"prior\"     \"prior\" (Dirichlet(alpha)) or \"local\" (Dirichlet(c*w))
  dirichlet_proposal_concentration = 50.0   c for the local weight proposal
  burn_in = 0                   draws dropped from the start of each chain
  thin = 1                      keep every thin-th draw after burn-in
  top_orders = 15               orders listed in the ranking report

  [[features]]                  one table per feature to evaluate (required)
  name = \"dry_weight\"           must match the `feature` column
  goal = \"max\"                  \"max\", \"min\" or \"range\"
  range = [2.0, 4.0]            required when goal = \"range\"; ideal is the midpoint
  importance = 1.0              likelihood power for this feature
  alpha = 1.0                   Dirichlet concentration for this feature's weight
  deviation = \"symmetric\"       \"symmetric\", \"below\" (only shortfall counts)
                                or \"above\" (only excess counts)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    Max,
    Min,
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationKind {
    #[default]
    Symmetric,
    Below,
    Above,
}

impl From<DeviationKind> for DeviationMode {
    fn from(kind: DeviationKind) -> Self {
        match kind {
            DeviationKind::Symmetric => DeviationMode::Symmetric,
            DeviationKind::Below => DeviationMode::PenalizeBelowOnly,
            DeviationKind::Above => DeviationMode::PenalizeAboveOnly,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub name: String,
    pub goal: GoalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default = "one")]
    pub importance: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub deviation: DeviationKind,
}

impl FeatureEntry {
    pub fn to_spec(&self) -> Result<FeatureSpec> {
        let goal = match (self.goal, self.range) {
            (GoalKind::Max, _) => Goal::Maximize,
            (GoalKind::Min, _) => Goal::Minimize,
            (GoalKind::Range, Some([a, b])) => Goal::Range { a, b },
            (GoalKind::Range, None) => {
                return Err(BtmeError::Config(format!(
                    "missing key `range` for feature `{}` with goal \"range\"",
                    self.name
                )))
            }
        };
        let spec = FeatureSpec {
            name: self.name.clone(),
            goal,
            importance: self.importance,
            alpha: self.alpha,
            deviation: self.deviation.into(),
        };
        spec.validate().map_err(|e| BtmeError::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_u")]
    pub u: f64,
    #[serde(default = "default_proposal_sd")]
    pub proposal_sd: f64,
    #[serde(default)]
    pub weight_proposal: WeightProposal,
    #[serde(default = "default_concentration")]
    pub dirichlet_proposal_concentration: f64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_top_orders")]
    pub top_orders: usize,
    pub features: Vec<FeatureEntry>,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_chains() -> usize {
    1
}
fn default_u() -> f64 {
    DEFAULT_U
}
fn default_proposal_sd() -> f64 {
    DEFAULT_PROPOSAL_SD
}
fn default_concentration() -> f64 {
    DEFAULT_PROPOSAL_CONCENTRATION
}
fn default_thin() -> usize {
    1
}
fn default_top_orders() -> usize {
    DEFAULT_TOP_ORDERS
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BtmeError::Config(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Minimal configuration ranking every listed feature with default settings.
    pub fn for_features(features: &[(String, GoalKind)]) -> Self {
        Self {
            seed: 0,
            samples: DEFAULT_SAMPLES,
            chains: 1,
            u: DEFAULT_U,
            proposal_sd: DEFAULT_PROPOSAL_SD,
            weight_proposal: WeightProposal::Prior,
            dirichlet_proposal_concentration: DEFAULT_PROPOSAL_CONCENTRATION,
            burn_in: 0,
            thin: 1,
            top_orders: DEFAULT_TOP_ORDERS,
            features: features
                .iter()
                .map(|(name, goal)| FeatureEntry {
                    name: name.clone(),
                    goal: *goal,
                    range: None,
                    importance: 1.0,
                    alpha: 1.0,
                    deviation: DeviationKind::Symmetric,
                })
                .collect(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(BtmeError::Config(
                "key `features` must list at least one feature".into(),
            ));
        }
        if self.chains == 0 {
            return Err(BtmeError::Config("key `chains` must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(BtmeError::Config("key `thin` must be >= 1".into()));
        }
        if self.burn_in >= self.samples {
            return Err(BtmeError::Config(format!(
                "key `burn_in` ({}) must be smaller than `samples` ({})",
                self.burn_in, self.samples
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(BtmeError::Config(format!("feature `{}` listed twice", f.name)));
            }
            f.to_spec()?;
        }
        self.model_config(0).validate(2)
    }

    pub fn feature_specs(&self) -> Result<Vec<FeatureSpec>> {
        self.features.iter().map(FeatureEntry::to_spec).collect()
    }

    /// Model configuration for chain `stream`.
    pub fn model_config(&self, stream: u64) -> ModelConfig {
        ModelConfig {
            u: self.u,
            alphas: self.features.iter().map(|f| f.alpha).collect(),
            importances: self.features.iter().map(|f| f.importance).collect(),
            proposal_sd: self.proposal_sd,
            samples: self.samples,
            seed: self.seed,
            weight_proposal: self.weight_proposal,
            dirichlet_proposal_concentration: self.dirichlet_proposal_concentration,
            initial_d: None,
            stream,
        }
    }
}

/// Keeps only the configured features, in configuration order.
pub fn select_features(table: &ExperimentTable, cfg: &RunConfig) -> Result<ExperimentTable> {
    let mut columns = Vec::with_capacity(cfg.features.len());
    for f in &cfg.features {
        let j = table
            .features
            .iter()
            .position(|n| n == &f.name)
            .ok_or_else(|| BtmeError::Config(format!("feature `{}` is not present in the data", f.name)))?;
        columns.push(j);
    }
    let treatments = table
        .treatments
        .iter()
        .map(|t| crate::data::TreatmentBlock {
            label: t.label.clone(),
            individuals: t.individuals.clone(),
            values: t
                .values
                .iter()
                .map(|row| columns.iter().map(|&j| row[j]).collect())
                .collect(),
        })
        .collect();
    Ok(ExperimentTable {
        features: cfg.features.iter().map(|f| f.name.clone()).collect(),
        treatments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub order: Vec<String>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMatrix {
    pub feature: String,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureRanking {
    pub feature: String,
    pub ranking: Vec<OrderReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Acceptance {
    pub d: Vec<f64>,
    pub w: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TieEntry {
    pub feature: String,
    pub r: String,
    pub s: String,
    pub ties: u64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub stream: u64,
    pub d_hat: Vec<f64>,
    pub w_hat: Vec<Vec<f64>>,
    pub map_order: Vec<String>,
    pub map_prob: f64,
    pub acceptance: Acceptance,
}

/// The `summary.json` document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub treatments: Vec<String>,
    pub features: Vec<String>,
    pub ideal_profile: Option<Vec<f64>>,
    pub samples: usize,
    pub d_hat: Vec<f64>,
    pub w_hat: Vec<Vec<f64>>,
    pub d_quantiles: Vec<Quantiles>,
    pub w_quantiles: Vec<Vec<Quantiles>>,
    pub prevailing: Vec<FeatureMatrix>,
    pub ranking: Vec<OrderReport>,
    pub ranking_orders_realized: usize,
    pub feature_rankings: Vec<FeatureRanking>,
    pub marginal_best: Vec<f64>,
    pub log_likelihood_mean: f64,
    pub acceptance: Acceptance,
    pub chains: Vec<ChainReport>,
    pub tie_counts: Vec<TieEntry>,
    pub config_echo: RunConfig,
}

/// The `tie_report.json` document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TieReport {
    pub treatments: Vec<String>,
    pub features: Vec<String>,
    pub total_ties: u64,
    pub total_trials: u64,
    pub entries: Vec<TieEntry>,
}

pub struct RankOutput {
    pub summary: SummaryReport,
    pub ties: TieReport,
    /// Retained draws per chain, after burn-in and thinning.
    pub draws: Vec<PosteriorDraws>,
}

fn labelled(dist: &RankingDistribution, labels: &[String], top: usize) -> Vec<OrderReport> {
    dist.entries
        .iter()
        .take(top)
        .map(|e| OrderReport {
            order: e.order.iter().map(|&k| labels[k].clone()).collect(),
            prob: e.probability,
        })
        .collect()
}

fn mean_rates(rates: &[&[f64]]) -> Vec<f64> {
    let n = rates.len() as f64;
    let k = rates.first().map_or(0, |r| r.len());
    (0..k).map(|i| rates.iter().map(|r| r[i]).sum::<f64>() / n).collect()
}

fn pool(chains: &[PosteriorDraws]) -> PosteriorDraws {
    let first = &chains[0];
    let mut pooled = PosteriorDraws::new(first.num_treatments, first.num_features, first.seed, 0);
    for c in chains {
        pooled.d_draws.extend_from_slice(&c.d_draws);
        pooled.w_draws.extend_from_slice(&c.w_draws);
        pooled.log_lik_trace.extend_from_slice(&c.log_lik_trace);
    }
    pooled
}

fn acceptance_of(chains: &[PosteriorDraws]) -> Acceptance {
    let d: Vec<&[f64]> = chains.iter().map(|c| c.accept_rate_d.as_slice()).collect();
    let w: Option<Vec<&[f64]>> = chains.iter().map(|c| c.accept_rate_w.as_deref()).collect();
    Acceptance {
        d: mean_rates(&d),
        w: w.map(|w| mean_rates(&w)),
    }
}

/// Runs the configured chains on comparison counts and assembles the reports.
pub fn rank_comparisons(
    y: &ComparisonArray,
    treatments: &[String],
    cfg: &RunConfig,
    ideal_profile: Option<Vec<f64>>,
) -> Result<RankOutput> {
    cfg.check()?;
    y.validate()?;
    let features: Vec<String> = cfg.features.iter().map(|f| f.name.clone()).collect();
    if y.num_features() != features.len() || y.num_treatments() != treatments.len() {
        return Err(BtmeError::Shape(format!(
            "counts are {} features x {} treatments, labels are {} x {}",
            y.num_features(),
            y.num_treatments(),
            features.len(),
            treatments.len()
        )));
    }

    let draws = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|stream| run_chain(y, &cfg.model_config(stream)).map(|d| d.slice(cfg.burn_in, cfg.thin)))
        .collect::<Result<Vec<_>>>()?;

    let pooled = pool(&draws);
    let summary = PosteriorSummary::from_draws(&pooled);
    let tie_entries: Vec<TieEntry> = tie_counts(y)
        .into_iter()
        .map(|t| TieEntry {
            feature: features[t.feature].clone(),
            r: treatments[t.r].clone(),
            s: treatments[t.s].clone(),
            ties: t.ties,
            trials: t.trials,
        })
        .collect();

    let chains = draws
        .iter()
        .map(|c| {
            let s = PosteriorSummary::from_draws(c);
            let map = s.ranking.map_order().cloned();
            ChainReport {
                stream: c.stream,
                d_hat: s.d_hat,
                w_hat: s.w_hat,
                map_order: map
                    .as_ref()
                    .map(|e| e.order.iter().map(|&k| treatments[k].clone()).collect())
                    .unwrap_or_default(),
                map_prob: map.map_or(0.0, |e| e.probability),
                acceptance: acceptance_of(std::slice::from_ref(c)),
            }
        })
        .collect();

    let report = SummaryReport {
        treatments: treatments.to_vec(),
        features: features.clone(),
        ideal_profile,
        samples: pooled.num_samples(),
        d_hat: summary.d_hat.clone(),
        w_hat: summary.w_hat.clone(),
        d_quantiles: summary.d_quantiles.clone(),
        w_quantiles: summary.w_quantiles.clone(),
        prevailing: features
            .iter()
            .zip(&summary.prevailing)
            .map(|(f, m)| FeatureMatrix {
                feature: f.clone(),
                matrix: m.clone(),
            })
            .collect(),
        ranking: labelled(&summary.ranking, treatments, cfg.top_orders),
        ranking_orders_realized: summary.ranking.entries.len(),
        feature_rankings: features
            .iter()
            .zip(&summary.feature_rankings)
            .map(|(f, dist)| FeatureRanking {
                feature: f.clone(),
                ranking: labelled(dist, treatments, cfg.top_orders),
            })
            .collect(),
        marginal_best: summary.marginal_best.clone(),
        log_likelihood_mean: pooled.log_lik_trace.iter().sum::<f64>() / pooled.num_samples() as f64,
        acceptance: acceptance_of(&draws),
        chains,
        tie_counts: tie_entries.clone(),
        config_echo: cfg.clone(),
    };
    let ties = TieReport {
        treatments: treatments.to_vec(),
        features,
        total_ties: tie_entries.iter().map(|t| t.ties).sum(),
        total_trials: tie_entries.iter().map(|t| t.trials).sum(),
        entries: tie_entries,
    };
    Ok(RankOutput {
        summary: report,
        ties,
        draws,
    })
}

/// Full pipeline from a parsed table.
pub fn rank_table(table: &ExperimentTable, cfg: &RunConfig) -> Result<RankOutput> {
    cfg.check()?;
    let table = select_features(table, cfg)?;
    table.validate()?;
    let specs = cfg.feature_specs()?;
    let profile = build_ideal_profile(&table, &specs)?;
    let modes: Vec<DeviationMode> = specs.iter().map(|s| s.deviation).collect();
    let dev = compute_deviations(&table, &profile, &modes)?;
    let y = count_comparisons(&dev);
    rank_comparisons(&y, &table.treatment_labels(), cfg, Some(profile.ideal))
}

/// Full pipeline from CSV and TOML text.
pub fn rank_csv(csv_text: &str, config_toml: &str) -> Result<RankOutput> {
    let cfg = RunConfig::from_toml(config_toml)?;
    let table = parse_experiment_csv(csv_text)?;
    rank_table(&table, &cfg)
}

/// Long CSV of comparison counts: one row per feature and ordered pair.
pub const COMPARISONS_CSV_HEADER: &str = "feature,r,s,n_r,n_s,count";

pub fn comparisons_to_csv(y: &ComparisonArray, treatments: &[String], features: &[String]) -> String {
    let n = y.sample_sizes();
    let mut out = format!("{COMPARISONS_CSV_HEADER}\n");
    for (j, f) in features.iter().enumerate() {
        for r in 0..y.num_treatments() {
            for s in 0..y.num_treatments() {
                if r != s {
                    out.push_str(&format!(
                        "{f},{},{},{},{},{}\n",
                        treatments[r],
                        treatments[s],
                        n[r],
                        n[s],
                        y.get(j, r, s)
                    ));
                }
            }
        }
    }
    out
}

/// Parses [`comparisons_to_csv`] output back into counts plus labels.
pub fn parse_comparisons_csv(text: &str) -> Result<(ComparisonArray, Vec<String>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != COMPARISONS_CSV_HEADER {
        return Err(BtmeError::Parse {
            line: 1,
            message: format!("expected header `{COMPARISONS_CSV_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    let mut features: Vec<String> = Vec::new();
    let mut treatments: Vec<String> = Vec::new();
    let mut sizes: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            rec[i].parse::<u64>().map_err(|_| BtmeError::Parse {
                line,
                message: format!("bad integer `{}`", &rec[i]),
            })
        };
        let (f, r, s) = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
        for (label, n) in [(&r, num(3)? as usize), (&s, num(4)? as usize)] {
            if let Some(&prev) = sizes.get(label) {
                if prev != n {
                    return Err(BtmeError::Parse {
                        line,
                        message: format!("inconsistent size for `{label}`"),
                    });
                }
            } else {
                sizes.insert(label.clone(), n);
                treatments.push(label.clone());
            }
        }
        if !features.contains(&f) {
            features.push(f.clone());
        }
        rows.push((f, r, s, num(5)?));
    }
    let n: Vec<usize> = treatments.iter().map(|t| sizes[t]).collect();
    let mut y = ComparisonArray::zeros(features.len(), n);
    for (f, r, s, c) in rows {
        let j = features.iter().position(|x| *x == f).unwrap_or_default();
        let ri = treatments.iter().position(|x| *x == r).unwrap_or_default();
        let si = treatments.iter().position(|x| *x == s).unwrap_or_default();
        if ri == si {
            return Err(BtmeError::Validation(vec![format!("self-comparison for `{r}`")]));
        }
        y.set(j, ri, si, c);
    }
    y.validate()?;
    Ok((y, treatments, features))
}
