//! Reward learning from rankings.
//!
//! A ranking of a query `Q` is read as the `|Q|(|Q|−1)/2` pairwise
//! comparisons it implies. Each comparison is scored with the Bradley–Terry
//! model `P(ξⱼ ≻ ξᵢ) = e^{rⱼ} / (e^{rᵢ} + e^{rⱼ})`, either through a small
//! neural reward ([`RewardNet`]) or through a linear reward `ω·Φ(ξ)` with a
//! sampled posterior over the unit ball ([`LinearRewardPosterior`]).

mod linear;
mod net;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::softplus;
use crate::behaviors::BehaviorId;

pub use linear::{alignment, cosine, Alignment, LinearRewardPosterior, MhConfig, PosteriorDump};
pub use net::{pair_loss, train_reward_net, RewardMode, RewardNet, RewardNetConfig, RewardTraining};

/// A query and the user's ordering of it, worst to best: `query[sigma[0]]` is
/// the least favorite.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub query: Vec<BehaviorId>,
    pub sigma: Vec<usize>,
    #[serde(default)]
    pub is_super: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub loser: BehaviorId,
    pub winner: BehaviorId,
}

impl RankingRecord {
    pub fn new(query: Vec<BehaviorId>, sigma: Vec<usize>, is_super: bool) -> Result<Self, RewardError> {
        let record = Self { query, sigma, is_super };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let n = self.query.len();
        let mut seen = vec![false; n];
        if self.sigma.len() != n {
            return Err(RewardError::InvalidPermutation(self.sigma.clone()));
        }
        for &s in &self.sigma {
            if s >= n || seen[s] {
                return Err(RewardError::InvalidPermutation(self.sigma.clone()));
            }
            seen[s] = true;
        }
        Ok(())
    }

    /// The user's favorite.
    pub fn best(&self) -> BehaviorId {
        self.query[*self.sigma.last().expect("nonempty ranking")]
    }

    /// Behaviors in ranked order, worst first.
    pub fn ordered(&self) -> Vec<BehaviorId> {
        self.sigma.iter().map(|&s| self.query[s]).collect()
    }
}

/// Every pair `(σ(i) ≺ σ(k))` for `i < k`.
pub fn decompose_ranking(r: &RankingRecord) -> Result<Vec<PairwiseComparison>, RewardError> {
    r.validate()?;
    let ordered = r.ordered();
    let mut out = Vec::with_capacity(ordered.len() * ordered.len().saturating_sub(1) / 2);
    for i in 0..ordered.len() {
        for k in i + 1..ordered.len() {
            out.push(PairwiseComparison {
                loser: ordered[i],
                winner: ordered[k],
            });
        }
    }
    Ok(out)
}

/// Probability that the item with reward `r_j` is chosen over `r_i`.
pub fn bt_probability(r_i: f64, r_j: f64) -> f64 {
    (-softplus(r_i - r_j)).exp()
}

/// `−ln P(winner)` for a pair.
pub fn bt_nll(r_loser: f64, r_winner: f64) -> f64 {
    softplus(r_loser - r_winner)
}

/// Choice probabilities over a query: a softmax of the rewards.
pub fn choice_probabilities(rewards: &[f64]) -> Vec<f64> {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rewards.iter().map(|r| (r - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn write_rankings<W: Write>(rankings: &[RankingRecord], mut out: W) -> Result<(), RewardError> {
    for r in rankings {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_rankings<R: BufRead>(input: R) -> Result<Vec<RankingRecord>, RewardError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RankingRecord = serde_json::from_str(&line).map_err(|e| RewardError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("sigma {0:?} is not a permutation of the query positions")]
    InvalidPermutation(Vec<usize>),
    #[error("alignment target has zero norm")]
    ZeroTarget,
    #[error("no comparisons to train on")]
    NoComparisons,
    #[error("behavior {0} has no feature row")]
    UnknownBehavior(BehaviorId),
    #[error("feature dims differ: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("reward training diverged at epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        source: crate::autodiff::AutodiffError,
    },
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
