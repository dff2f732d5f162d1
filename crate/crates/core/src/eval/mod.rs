//! The evaluation battery.
//!
//! One [`ExperimentPlan`] fixes a modality and every simulation and training
//! setting. For each seed a [`World`] is built: a database, a training
//! population whose exploration pages train the feature spaces, exemplars
//! (each training user's favorite explored behavior) and an evaluation
//! population that answers ranking queries. All objectives see the same
//! world; only the feature map differs.
//!
//! | criterion        | metric                                              |
//! |------------------|-----------------------------------------------------|
//! | completeness     | held-out top-choice accuracy of a reward net (TPA)  |
//! | simplicity       | mean alignment over 100 comparisons, every dim      |
//! | minimality       | the same at the smallest dim                        |
//! | explainability   | cosine of the favorite to its nearest exemplar      |
//! | noise            | final alignment with perturbed features             |
//! | weighting        | uniform against time-linear triplet weights         |
//! | direct           | reward net on raw payloads against CLEA+AE features |

pub mod metrics;
pub mod queries;
mod report;
mod run;
mod world;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behaviors::{BehaviorId, DatabaseError, GeneratorConfig, Modality};
use crate::exploration::{ExplorationError, PopulationConfig};
use crate::features::{FeatureError, Hyper, Objective};
use crate::reward::{MhConfig, RewardError, RewardNetConfig};

pub use queries::{nearest, neighbors, plackett_luce, simulate_rankings, QueryGenerator, RankingSchedule};
pub use report::{
    Aggregate, CellRow, CriteriaReport, CurveRow, NoiseRow, ReferencePoint, Study, Summary, TrendCheck, WeightingWins,
};
pub use run::{
    alignment_curve, explainability, final_alignment, run_alignment_curve, run_completeness, run_explainability,
    run_noise_robustness, run_plan, run_seed, run_weighting_ablation, test_preference_accuracy, Elicitation,
    SeedOutcome,
};
pub use world::{train_spaces, TrainedSpace, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Completeness,
    Simplicity,
    Minimality,
    Explainability,
    Noise,
    Weighting,
    Direct,
}

impl Criterion {
    pub const ALL: [Criterion; 7] = [
        Criterion::Completeness,
        Criterion::Simplicity,
        Criterion::Minimality,
        Criterion::Explainability,
        Criterion::Noise,
        Criterion::Weighting,
        Criterion::Direct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Completeness => "completeness",
            Criterion::Simplicity => "simplicity",
            Criterion::Minimality => "minimality",
            Criterion::Explainability => "explainability",
            Criterion::Noise => "noise",
            Criterion::Weighting => "weighting",
            Criterion::Direct => "direct",
        }
    }

    /// Parses a comma-separated list; `all` selects every criterion.
    pub fn parse_list(s: &str) -> Result<BTreeSet<Criterion>, String> {
        let mut out = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Criterion::ALL);
            } else {
                out.insert(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err("no criteria selected".into());
        }
        Ok(out)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown criterion `{s}`"))
    }
}

/// Everything an evaluation run depends on besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub modality: Modality,
    pub objectives: Vec<Objective>,
    /// Feature dims for the simplicity sweep; the smallest is used for
    /// minimality and noise.
    pub dims: Vec<usize>,
    /// Feature dim for completeness, explainability, weighting and direct.
    pub primary_dim: usize,
    /// Fraction of each user's rankings used to train reward nets.
    pub split: f64,
    pub seeds: Vec<u64>,
    pub train_users: usize,
    pub eval_users: usize,
    pub pages_per_user: usize,
    pub page_size: usize,
    pub rankings_per_user: usize,
    pub query_size: usize,
    pub super_every: usize,
    pub alignment_queries: usize,
    /// Evaluation users taking part in the alignment and noise studies, the
    /// first ones of the population; `None` uses all of them.
    pub alignment_users: Option<usize>,
    pub encoder_hidden: Vec<usize>,
    pub generator: GeneratorConfig,
    pub population: PopulationConfig,
    pub hyper: Hyper,
    pub reward: RewardNetConfig,
    pub mh: MhConfig,
    pub noise_eps: Vec<f64>,
    pub noise_trials: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self::for_modality(Modality::Visual)
    }
}

/// Perturbation scales for the noise study.
pub const NOISE_GRID: [f64; 6] = [0.0, 0.01, 0.05, 0.1, 0.2, 0.3];

impl ExperimentPlan {
    pub fn for_modality(modality: Modality) -> Self {
        Self {
            modality,
            objectives: Objective::ALL.to_vec(),
            dims: vec![2, 4, 8, 16, 32],
            primary_dim: 4,
            split: 0.7,
            seeds: (0..20).collect(),
            train_users: 25,
            eval_users: 42,
            pages_per_user: 8,
            page_size: 100,
            rankings_per_user: 10,
            query_size: 5,
            super_every: 5,
            alignment_queries: 100,
            alignment_users: None,
            encoder_hidden: vec![64, 64],
            generator: GeneratorConfig::for_modality(modality),
            population: PopulationConfig::default(),
            hyper: Hyper::for_modality(modality),
            reward: RewardNetConfig {
                hidden: vec![64, 64],
                ..RewardNetConfig::default()
            },
            mh: MhConfig::default(),
            noise_eps: NOISE_GRID.to_vec(),
            noise_trials: 60,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidPlan(m.to_string()));
        if self.generator.modality != self.modality {
            return bad("generator.modality differs from modality");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie in (0, 1)");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.objectives.is_empty() || self.dims.is_empty() || self.dims.contains(&0) || self.primary_dim == 0 {
            return bad("objectives and positive dims are required");
        }
        if self.train_users == 0 || self.eval_users == 0 || self.pages_per_user == 0 {
            return bad("populations and pages must be nonempty");
        }
        if self.query_size < 2 || self.rankings_per_user < 2 {
            return bad("need at least two rankings of at least two items");
        }
        let train = self.train_rankings();
        if train == 0 || train >= self.rankings_per_user {
            return bad("split leaves an empty train or test set");
        }
        if self.alignment_users == Some(0) {
            return bad("alignment_users must be positive");
        }
        if self.noise_eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("noise scales must be finite and non-negative");
        }
        self.generator.validate()?;
        Ok(())
    }

    pub fn smallest_dim(&self) -> usize {
        *self.dims.iter().min().expect("validated dims")
    }

    pub fn train_rankings(&self) -> usize {
        (self.split * self.rankings_per_user as f64).round() as usize
    }

    pub fn schedule(&self) -> RankingSchedule {
        RankingSchedule {
            rankings: self.rankings_per_user,
            query_size: self.query_size,
            super_every: self.super_every,
        }
    }

    /// Hex SHA-256 prefix of the plan's JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("feature space `{0}` maps every behavior to the same point")]
    DegenerateSpace(String),
    #[error("no exemplars or spaces to generate queries from")]
    NoExemplars,
    #[error("cannot draw {size} distinct query items from {distinct} candidates")]
    TooFewCandidates { size: usize, distinct: usize },
    #[error("behavior {0} not in database")]
    UnknownBehavior(BehaviorId),
    #[error("empty test split")]
    EmptyTestSplit,
    #[error(transparent)]
    Database(#[from] DatabaseError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    /// Whether the failure is numerical (divergence) rather than about data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            EvalError::Feature(FeatureError::Diverged { .. })
                | EvalError::Feature(FeatureError::Autodiff(_))
                | EvalError::Reward(RewardError::Diverged { .. })
                | EvalError::Reward(RewardError::Autodiff(_))
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_parse() {
        let c = Criterion::parse_list("completeness, noise").unwrap();
        assert_eq!(c.into_iter().collect::<Vec<_>>(), vec![Criterion::Completeness, Criterion::Noise]);
        assert_eq!(Criterion::parse_list("all").unwrap().len(), 7);
        assert!(Criterion::parse_list("speed").is_err());
    }

    #[test]
    fn default_plan_is_valid_and_hash_is_stable() {
        for m in [Modality::Visual, Modality::Auditory, Modality::Kinetic] {
            let p = ExperimentPlan::for_modality(m);
            p.validate().unwrap();
            assert_eq!(p.train_rankings(), 7);
            assert_eq!(p.config_hash(), p.clone().config_hash());
        }
        let mut p = ExperimentPlan::default();
        let h = p.config_hash();
        p.mh.samples = 50;
        assert_ne!(h, p.config_hash());
        p.split = 1.0;
        assert!(p.validate().is_err());
    }
}
