use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::softplus;
use crate::exploration::dot;
use crate::features::FeatureTable;
use crate::rng;

use super::{PairwiseComparison, RewardError};

/// Metropolis–Hastings settings for the linear reward posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhConfig {
    /// Retained samples `M`.
    pub samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Per-coordinate standard deviation of the Gaussian proposal.
    pub proposal_std: f64,
    /// Multiplier on `ω·Φ` inside the Bradley–Terry likelihood.
    pub rationality: f64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            burn_in: 200,
            thinning: 5,
            proposal_std: 0.1,
            rationality: 1.0,
        }
    }
}

/// Posterior over linear reward weights `ω` with `‖ω‖ ≤ 1`, uniform prior on
/// the ball and a Bradley–Terry likelihood per observed comparison. Samples
/// are redrawn from scratch after every observation, seeded by the number of
/// observations so far.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRewardPosterior {
    pub dim: usize,
    pub config: MhConfig,
    seed: u64,
    samples: Vec<Vec<f64>>,
    comparisons: Vec<PairwiseComparison>,
    /// `Φ(winner) − Φ(loser)` per comparison.
    diffs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDump {
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
    pub comparisons: Vec<PairwiseComparison>,
}

impl LinearRewardPosterior {
    pub fn new(dim: usize, config: MhConfig, seed: u64) -> Self {
        assert!(dim >= 1 && config.samples >= 1, "posterior needs dim ≥ 1 and M ≥ 1");
        let mut p = Self {
            dim,
            config,
            seed,
            samples: vec![],
            comparisons: vec![],
            diffs: vec![],
        };
        p.refresh();
        p
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn comparisons(&self) -> &[PairwiseComparison] {
        &self.comparisons
    }

    /// Records a comparison through its feature vectors and resamples.
    pub fn observe(&mut self, c: PairwiseComparison, loser: &[f64], winner: &[f64]) -> Result<(), RewardError> {
        self.push(c, loser, winner)?;
        self.refresh();
        Ok(())
    }

    fn push(&mut self, c: PairwiseComparison, loser: &[f64], winner: &[f64]) -> Result<(), RewardError> {
        for got in [loser.len(), winner.len()] {
            if got != self.dim {
                return Err(RewardError::DimMismatch { expected: self.dim, got });
            }
        }
        self.comparisons.push(c);
        self.diffs.push(winner.iter().zip(loser).map(|(w, l)| w - l).collect());
        Ok(())
    }

    /// Records a comparison looking up both behaviors in `features`.
    pub fn posterior_update(&mut self, c: PairwiseComparison, features: &FeatureTable) -> Result<(), RewardError> {
        let loser = features.get(c.loser).ok_or(RewardError::UnknownBehavior(c.loser))?;
        let winner = features.get(c.winner).ok_or(RewardError::UnknownBehavior(c.winner))?;
        self.observe(c, loser, winner)
    }

    /// Records several comparisons and resamples once.
    pub fn observe_all(&mut self, cs: &[PairwiseComparison], features: &FeatureTable) -> Result<(), RewardError> {
        for &c in cs {
            let loser = features.get(c.loser).ok_or(RewardError::UnknownBehavior(c.loser))?;
            let winner = features.get(c.winner).ok_or(RewardError::UnknownBehavior(c.winner))?;
            self.push(c, loser, winner)?;
        }
        self.refresh();
        Ok(())
    }

    fn log_likelihood(&self, w: &[f64]) -> f64 {
        let beta = self.config.rationality;
        self.diffs.iter().map(|d| -softplus(-beta * dot(w, d))).sum()
    }

    fn refresh(&mut self) {
        let cfg = &self.config;
        let mut r = rng::stream(self.seed, "mh", self.comparisons.len() as u64);
        let mut current = vec![0.0; self.dim];
        let mut current_ll = self.log_likelihood(&current);
        let total = cfg.burn_in + cfg.samples * cfg.thinning.max(1);
        let mut samples = Vec::with_capacity(cfg.samples);
        let mut proposal = vec![0.0; self.dim];
        for step in 1..=total {
            for (p, c) in proposal.iter_mut().zip(&current) {
                *p = c + cfg.proposal_std * r.sample::<f64, _>(StandardNormal);
            }
            if dot(&proposal, &proposal) <= 1.0 {
                let ll = self.log_likelihood(&proposal);
                let u: f64 = r.random();
                if u.ln() < ll - current_ll {
                    current.copy_from_slice(&proposal);
                    current_ll = ll;
                }
            }
            if step > cfg.burn_in && (step - cfg.burn_in) % cfg.thinning.max(1) == 0 {
                samples.push(current.clone());
            }
        }
        self.samples = samples;
    }

    pub fn mean(&self) -> Vec<f64> {
        let m = self.samples.len() as f64;
        let mut out = vec![0.0; self.dim];
        for s in &self.samples {
            for (o, v) in out.iter_mut().zip(s) {
                *o += v / m;
            }
        }
        out
    }

    /// Root mean squared distance of the samples from their mean.
    pub fn spread(&self) -> f64 {
        let mean = self.mean();
        let ms = self
            .samples
            .iter()
            .map(|s| s.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / self.samples.len() as f64;
        ms.sqrt()
    }

    pub fn dump(&self) -> PosteriorDump {
        PosteriorDump {
            dim: self.dim,
            samples: self.samples.clone(),
            comparisons: self.comparisons.clone(),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub value: f64,
    /// Zero-norm samples left out of the mean.
    pub excluded: usize,
}

/// Mean cosine similarity between `omega_true` and each sample.
pub fn alignment(samples: &[Vec<f64>], omega_true: &[f64]) -> Result<Alignment, RewardError> {
    if dot(omega_true, omega_true) == 0.0 {
        return Err(RewardError::ZeroTarget);
    }
    let mut sum = 0.0;
    let mut used = 0;
    for s in samples {
        if let Some(c) = cosine(s, omega_true) {
            sum += c;
            used += 1;
        }
    }
    Ok(Alignment {
        value: if used == 0 { 0.0 } else { sum / used as f64 },
        excluded: samples.len() - used,
    })
}
