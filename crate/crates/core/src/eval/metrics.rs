//! Scalar metrics and win counting.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Whether the highest predicted reward picks `choice`. Ties within 1e-12
/// of the maximum are broken uniformly at random.
pub fn top_choice_hit<R: Rng + ?Sized>(predicted: &[f64], choice: usize, rng: &mut R) -> bool {
    let max = predicted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..predicted.len()).filter(|&i| predicted[i] >= max - 1e-12).collect();
    tied[rng.random_range(0..tied.len())] == choice
}

/// Mean of an alignment sequence.
pub fn auc(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().sum::<f64>() / curve.len() as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    auc(xs)
}

/// Standard error of the mean (sample standard deviation over √n).
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Paired comparison of `a` against `b` over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinCount {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub trials: usize,
    /// Two-sided exact binomial p-value of wins against losses at 1/2 (ties
    /// dropped).
    pub p_value: f64,
}

impl WinCount {
    pub fn from_pairs(a: &[f64], b: &[f64]) -> Self {
        let mut wins = 0;
        let mut losses = 0;
        let mut ties = 0;
        for (x, y) in a.iter().zip(b) {
            if x > y {
                wins += 1;
            } else if x < y {
                losses += 1;
            } else {
                ties += 1;
            }
        }
        Self {
            wins,
            losses,
            ties,
            trials: a.len().min(b.len()),
            p_value: binomial_two_sided(wins, wins + losses),
        }
    }

    pub fn win_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.wins as f64 / self.trials as f64
        }
    }
}

/// Exact two-sided binomial test at p = 1/2: the total probability of
/// outcomes no more likely than `k` successes out of `n`.
pub fn binomial_two_sided(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = vec![0.0; n + 1];
    for i in 1..=n {
        ln_choose[i] = ln_choose[i - 1] + ((n - i + 1) as f64).ln() - (i as f64).ln();
    }
    let pmf = |i: usize| (ln_choose[i] + ln_half_n).exp();
    let observed = pmf(k);
    let p: f64 = (0..=n).map(pmf).filter(|&q| q <= observed * (1.0 + 1e-9)).sum();
    p.min(1.0)
}
