//! Bayesian ranking of experiment treatments against an ideal multi-feature
//! outcome profile.
//!
//! Measurements are turned into deviations from an ideal profile, deviations
//! are compared across treatments to give pairwise win counts, and a
//! Bradley–Terry model with per-feature sub-indexes is fitted to those counts
//! by Metropolis–Hastings. The posterior yields dominance indexes, feature
//! weights, prevailing-probability matrices and a distribution over rankings.
//!
//! ```no_run
//! let csv = std::fs::read_to_string("fixtures/synthetic_8x10x4.csv").unwrap();
//! let cfg = std::fs::read_to_string("fixtures/synthetic_8x10x4.toml").unwrap();
//! let out = btme::pipeline::rank_csv(&csv, &cfg).unwrap();
//! println!("{:?}", out.summary.ranking[0]);
//! ```

pub mod data;
pub mod deviations;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod posterior;
pub mod sampler;
pub mod simulation;

pub use data::{
    parse_experiment_csv, ComparisonArray, DeviationMode, DeviationTable, ExperimentTable, FeatureSpec, Goal,
    IdealProfile,
};
pub use deviations::{build_ideal_profile, compute_deviations, count_comparisons};
pub use error::{BtmeError, Result};
pub use model::{BtmeLikelihood, LogLikelihood, ModelConfig, ModelParams, WeightProposal};
pub use pipeline::{rank_csv, RunConfig};
pub use posterior::{PosteriorSummary, RankingDistribution};
pub use sampler::{run_chain, PosteriorDraws};
pub use simulation::{run_reconstruction_study, StudyConfig, StudyReport};
