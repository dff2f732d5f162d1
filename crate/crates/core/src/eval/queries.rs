//! Nearest-neighbor lookups, exemplar-seeded query generation and simulated
//! rankings.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::behaviors::{BehaviorDatabase, BehaviorId};
use crate::exploration::SimUser;
use crate::features::FeatureTable;
use crate::reward::{cosine, RankingRecord};

use super::EvalError;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean nearest row to `point` among ids not rejected by `skip`. Ties go
/// to the lower id.
pub fn nearest(table: &FeatureTable, point: &[f64], skip: impl Fn(BehaviorId) -> bool) -> Option<(BehaviorId, f64)> {
    let mut best: Option<(BehaviorId, f64)> = None;
    for (i, row) in table.rows().enumerate() {
        let id = BehaviorId(i);
        if skip(id) {
            continue;
        }
        let d = squared_distance(row, point);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((id, d));
        }
    }
    best.map(|(id, d)| (id, d.sqrt()))
}

/// The `k` most cosine-similar behaviors to `id`, itself excluded, most
/// similar first. Zero-norm rows are skipped.
pub fn neighbors(table: &FeatureTable, id: BehaviorId, k: usize) -> Result<Vec<(BehaviorId, f64)>, EvalError> {
    let query = table.get(id).ok_or(EvalError::UnknownBehavior(id))?;
    if k == 0 {
        return Ok(vec![]);
    }
    let mut scored: Vec<(BehaviorId, f64)> = table
        .rows()
        .enumerate()
        .filter(|&(i, _)| i != id.0)
        .filter_map(|(i, row)| cosine(query, row).map(|c| (BehaviorId(i), c)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

pub(crate) fn is_degenerate(table: &FeatureTable) -> bool {
    let first = match table.rows().next() {
        Some(r) => r,
        None => return true,
    };
    table.rows().all(|r| r == first)
}

/// Draws query items by choosing an exemplar and a feature space uniformly
/// and taking the nearest non-exemplar behavior in that space.
#[derive(Clone, Debug)]
pub struct QueryGenerator {
    /// `candidates[s][e]`: neighbor of exemplar `e` in space `s`.
    candidates: Vec<Vec<BehaviorId>>,
    distinct: usize,
}

impl QueryGenerator {
    pub fn new(exemplars: &[BehaviorId], spaces: &[(&str, &FeatureTable)]) -> Result<Self, EvalError> {
        if exemplars.is_empty() || spaces.is_empty() {
            return Err(EvalError::NoExemplars);
        }
        let excluded: BTreeSet<BehaviorId> = exemplars.iter().copied().collect();
        let mut candidates = Vec::with_capacity(spaces.len());
        for (name, table) in spaces {
            if is_degenerate(table) {
                return Err(EvalError::DegenerateSpace(name.to_string()));
            }
            let row: Result<Vec<BehaviorId>, EvalError> = exemplars
                .iter()
                .map(|&e| {
                    let point = table.get(e).ok_or(EvalError::UnknownBehavior(e))?;
                    nearest(table, point, |id| excluded.contains(&id))
                        .map(|(id, _)| id)
                        .ok_or(EvalError::NoExemplars)
                })
                .collect();
            candidates.push(row?);
        }
        let distinct = candidates.iter().flatten().collect::<BTreeSet<_>>().len();
        Ok(Self { candidates, distinct })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BehaviorId {
        let space = self.candidates.choose(rng).expect("nonempty");
        *space.choose(rng).expect("nonempty")
    }

    /// `size` distinct behaviors, skipping any in `taken`.
    pub fn query<R: Rng + ?Sized>(&self, size: usize, taken: &[BehaviorId], rng: &mut R) -> Result<Vec<BehaviorId>, EvalError> {
        if size > self.distinct {
            return Err(EvalError::TooFewCandidates { size, distinct: self.distinct });
        }
        let mut out = Vec::with_capacity(size);
        let mut attempts = 0;
        while out.len() < size {
            let id = self.draw(rng);
            if !out.contains(&id) && !taken.contains(&id) {
                out.push(id);
            }
            attempts += 1;
            if attempts > 10_000 * size {
                return Err(EvalError::TooFewCandidates { size, distinct: self.distinct });
            }
        }
        Ok(out)
    }

    pub fn distinct_candidates(&self) -> usize {
        self.distinct
    }
}

/// Plackett–Luce ranking of `utilities` at temperature `temp`, returned worst
/// to best. Sampled as a sort of `u/temp + Gumbel` scores; `temp = 0` sorts
/// by utility.
pub fn plackett_luce<R: Rng + ?Sized>(utilities: &[f64], temp: f64, rng: &mut R) -> Vec<usize> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let mut scored: Vec<(f64, usize)> = utilities
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let s = if temp > 0.0 { u / temp + gumbel.sample(rng) } else { u };
            (s, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Shape of one user's ranking session.
#[derive(Clone, Copy, Debug)]
pub struct RankingSchedule {
    pub rankings: usize,
    pub query_size: usize,
    /// Every `super_every`-th ranking ranks earlier winners.
    pub super_every: usize,
}

/// Simulates a ranking session. A super ranking collects the winners of the
/// rankings since the previous super ranking plus that super ranking's
/// winner, topped up with generated items when fewer than `query_size`.
pub fn simulate_rankings<R: Rng + ?Sized>(
    user: &SimUser,
    db: &BehaviorDatabase,
    generator: &QueryGenerator,
    schedule: RankingSchedule,
    rng: &mut R,
) -> Result<Vec<RankingRecord>, EvalError> {
    let mut out = Vec::with_capacity(schedule.rankings);
    let mut winners: Vec<BehaviorId> = Vec::new();
    let mut last_super: Option<BehaviorId> = None;
    for position in 1..=schedule.rankings {
        let is_super = schedule.super_every > 0 && position % schedule.super_every == 0;
        let query = if is_super {
            let mut q: Vec<BehaviorId> = Vec::new();
            for id in last_super.iter().chain(winners.iter()) {
                if !q.contains(id) {
                    q.push(*id);
                }
            }
            q.truncate(schedule.query_size);
            let fill = generator.query(schedule.query_size - q.len(), &q, rng)?;
            q.extend(fill);
            q
        } else {
            generator.query(schedule.query_size, &[], rng)?
        };
        let utilities: Vec<f64> = query.iter().map(|&id| user.utility(db, id)).collect();
        let sigma = plackett_luce(&utilities, user.rank_temp, rng);
        let record = RankingRecord::new(query, sigma, is_super)?;
        if is_super {
            last_super = Some(record.best());
            winners.clear();
        } else {
            winners.push(record.best());
        }
        out.push(record);
    }
    Ok(out)
}
