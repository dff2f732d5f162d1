//! Exploratory search: page presentation, the explore/ignore decision,
//! partitioning, triplet sampling, and session logs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::behaviors::{BehaviorDatabase, BehaviorId};
use crate::rng;

/// A simulated user whose ground-truth utility is linear in the latent
/// factors: `R*(ξ) = ω*·z(ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimUser {
    pub name: String,
    omega_star: Vec<f64>,
    /// Scale of the Gumbel noise added to utilities when deciding what to
    /// explore; 0 gives an exact top-q rule.
    pub explore_temp: f64,
    pub explore_frac: f64,
    /// Plackett–Luce temperature when ranking; 0 ranks by exact utility.
    pub rank_temp: f64,
    pub seed: u64,
}

impl SimUser {
    pub fn new(name: impl Into<String>, omega: Vec<f64>, seed: u64) -> Result<Self, ExplorationError> {
        let norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(ExplorationError::InvalidUser("omega must be a finite nonzero vector".into()));
        }
        Ok(Self {
            name: name.into(),
            omega_star: omega.into_iter().map(|v| v / norm).collect(),
            explore_temp: 0.5,
            explore_frac: 0.2,
            rank_temp: 0.3,
            seed,
        })
    }

    pub fn omega_star(&self) -> &[f64] {
        &self.omega_star
    }

    pub fn utility(&self, db: &BehaviorDatabase, id: BehaviorId) -> f64 {
        dot(&self.omega_star, db.latent(id))
    }

    fn validate(&self) -> Result<(), ExplorationError> {
        if !(self.explore_temp >= 0.0 && self.rank_temp >= 0.0) {
            return Err(ExplorationError::InvalidUser("temperatures must be non-negative".into()));
        }
        if !(self.explore_frac > 0.0 && self.explore_frac < 1.0) {
            return Err(ExplorationError::InvalidUser("explore_frac must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How the preferences of a simulated population are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    /// Leading latent factors that preferences concentrate on.
    pub focus_dims: usize,
    /// Standard deviation of preference weight on the other factors, relative
    /// to unit-normal weights on the focus factors.
    pub off_focus_weight: f64,
    pub explore_temp: f64,
    pub explore_frac: f64,
    pub rank_temp: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            focus_dims: 2,
            off_focus_weight: 0.1,
            explore_temp: 0.1,
            explore_frac: 0.2,
            rank_temp: 0.3,
        }
    }
}

/// Draws `count` users over a `latent_dim`-dimensional latent space.
pub fn sample_population(cfg: &PopulationConfig, latent_dim: usize, count: usize, seed: u64, label: &str) -> Vec<SimUser> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, label, i as u64);
            let omega: Vec<f64> = (0..latent_dim)
                .map(|j| {
                    let g: f64 = r.sample(StandardNormal);
                    if j < cfg.focus_dims {
                        g
                    } else {
                        cfg.off_focus_weight * g
                    }
                })
                .collect();
            let mut u = SimUser::new(format!("{label}-{i:03}"), omega, rng::derive_seed(seed, label, i as u64))
                .expect("gaussian draw is nonzero");
            u.explore_temp = cfg.explore_temp;
            u.explore_frac = cfg.explore_frac;
            u.rank_temp = cfg.rank_temp;
            u
        })
        .collect()
}

/// One presented page and its explored/ignored partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationPage {
    pub page_id: String,
    pub session: String,
    /// 1-based chronological position of the page within its session.
    pub position: usize,
    pub presented: Vec<BehaviorId>,
    /// Sorted.
    pub explored: Vec<BehaviorId>,
    /// Sorted; `presented \ explored`.
    pub ignored: Vec<BehaviorId>,
    /// Explored behaviors in the order they were explored.
    pub explore_order: Vec<BehaviorId>,
}

impl ExplorationPage {
    /// Builds a page from what was presented and explored; everything else is
    /// ignored.
    pub fn from_actions(
        page_id: impl Into<String>,
        session: impl Into<String>,
        position: usize,
        presented: Vec<BehaviorId>,
        explore_order: Vec<BehaviorId>,
    ) -> Result<Self, ExplorationError> {
        let page_id = page_id.into();
        let shown: BTreeSet<BehaviorId> = presented.iter().copied().collect();
        if shown.len() != presented.len() {
            return Err(ExplorationError::Partition { page: page_id, reason: "duplicate presented id".into() });
        }
        let explored: BTreeSet<BehaviorId> = explore_order.iter().copied().collect();
        if explored.len() != explore_order.len() {
            return Err(ExplorationError::Partition { page: page_id, reason: "behavior explored twice".into() });
        }
        if let Some(id) = explored.iter().find(|id| !shown.contains(id)) {
            return Err(ExplorationError::Partition { page: page_id, reason: format!("explored {id} was not presented") });
        }
        let ignored = shown.difference(&explored).copied().collect();
        Ok(Self {
            page_id,
            session: session.into(),
            position,
            presented,
            explored: explored.into_iter().collect(),
            ignored,
            explore_order,
        })
    }

    /// Both cells nonempty and at least one holds two behaviors, so a triplet
    /// can be drawn.
    pub fn is_contrastive(&self) -> bool {
        !self.explored.is_empty() && !self.ignored.is_empty() && (self.explored.len() >= 2 || self.ignored.len() >= 2)
    }

    /// `explored ∪ ignored == presented` and the cells are disjoint.
    pub fn partition_holds(&self) -> bool {
        let ex: BTreeSet<_> = self.explored.iter().collect();
        let ig: BTreeSet<_> = self.ignored.iter().collect();
        let pr: BTreeSet<_> = self.presented.iter().collect();
        ex.is_disjoint(&ig) && ex.union(&ig).copied().collect::<BTreeSet<_>>() == pr && pr.len() == self.presented.len()
    }
}

/// Simulates `pages` pages of exploratory search for one user.
///
/// Each page shows `page_size` behaviors drawn uniformly without replacement.
/// The user explores exactly `round(explore_frac · page_size)` of them: those
/// with the highest `ω*·z + explore_temp·G`, `G ~ Gumbel(0, 1)`.
pub fn simulate_session(
    user: &SimUser,
    db: &BehaviorDatabase,
    pages: usize,
    page_size: usize,
) -> Result<Vec<ExplorationPage>, ExplorationError> {
    user.validate()?;
    if page_size == 0 || page_size > db.len() {
        return Err(ExplorationError::PageSize { page_size, db_size: db.len() });
    }
    let mut r = rng::stream(user.seed, "session", 0);
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let explore_count = ((user.explore_frac * page_size as f64).round() as usize).min(page_size);
    let all: Vec<BehaviorId> = db.ids().collect();

    (0..pages)
        .map(|p| {
            let presented: Vec<BehaviorId> = all.choose_multiple(&mut r, page_size).copied().collect();
            let mut scored: Vec<(f64, BehaviorId)> = presented
                .iter()
                .map(|&id| {
                    let noise = if user.explore_temp > 0.0 { user.explore_temp * gumbel.sample(&mut r) } else { 0.0 };
                    (user.utility(db, id) + noise, id)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut order: Vec<BehaviorId> = scored[..explore_count].iter().map(|&(_, id)| id).collect();
            order.shuffle(&mut r);
            ExplorationPage::from_actions(format!("{}-p{:03}", user.name, p), user.name.clone(), p + 1, presented, order)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// `w(i) = i / N` for the `i`-th of `N` pages of a session.
    TimeLinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub anchor: BehaviorId,
    pub positive: BehaviorId,
    pub negative: BehaviorId,
    pub page_id: String,
    pub weight: f64,
}

/// Precomputed contrastive pages and their weights.
pub struct TripletSampler<'a> {
    pages: Vec<(&'a ExplorationPage, f64)>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(pages: &'a [ExplorationPage], weighting: Weighting) -> Result<Self, ExplorationError> {
        let mut session_len: BTreeMap<&str, usize> = BTreeMap::new();
        for p in pages {
            let n = session_len.entry(p.session.as_str()).or_default();
            *n = (*n).max(p.position);
        }
        let pages: Vec<_> = pages
            .iter()
            .filter(|p| p.is_contrastive())
            .map(|p| {
                let w = match weighting {
                    Weighting::Uniform => 1.0,
                    Weighting::TimeLinear => p.position as f64 / session_len[p.session.as_str()] as f64,
                };
                (p, w)
            })
            .collect();
        if pages.is_empty() {
            return Err(ExplorationError::NoContrastivePages);
        }
        Ok(Self { pages })
    }

    pub fn contrastive_pages(&self) -> usize {
        self.pages.len()
    }

    /// One triplet: a page uniformly, then the explored-anchor branch or the
    /// ignored-anchor branch with probability 1/2 each. A branch whose cell has
    /// fewer than two behaviors falls through to the other branch.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Triplet {
        let &(page, weight) = self.pages.choose(rng).expect("nonempty");
        let explored_branch = rng.random::<f64>() < 0.5;
        let explored_branch = match (explored_branch, page.explored.len() >= 2, page.ignored.len() >= 2) {
            (true, false, _) => false,
            (false, _, false) => true,
            (b, _, _) => b,
        };
        let (same, other) = if explored_branch { (&page.explored, &page.ignored) } else { (&page.ignored, &page.explored) };
        let pair: Vec<BehaviorId> = same.choose_multiple(rng, 2).copied().collect();
        let negative = *other.choose(rng).expect("nonempty cell");
        Triplet {
            anchor: pair[0],
            positive: pair[1],
            negative,
            page_id: page.page_id.clone(),
            weight,
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Triplet> {
        (0..batch).map(|_| self.sample(rng)).collect()
    }
}

pub fn sample_triplets<R: Rng + ?Sized>(
    pages: &[ExplorationPage],
    batch: usize,
    rng: &mut R,
    weighting: Weighting,
) -> Result<Vec<Triplet>, ExplorationError> {
    Ok(TripletSampler::new(pages, weighting)?.sample_batch(batch, rng))
}

/// One line of a session log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub page_id: String,
    pub presented: Vec<BehaviorId>,
    pub explored: Vec<BehaviorId>,
    pub explore_order: Vec<BehaviorId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignored: Option<Vec<BehaviorId>>,
}

pub fn write_session_log<W: Write>(pages: &[ExplorationPage], mut out: W) -> Result<(), ExplorationError> {
    for p in pages {
        let rec = LogRecord {
            page_id: p.page_id.clone(),
            presented: p.presented.clone(),
            explored: p.explored.clone(),
            explore_order: p.explore_order.clone(),
            session: Some(p.session.clone()),
            ignored: None,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a JSON-lines session log, resolving every id against `db`.
/// Records without a `session` field belong to `default_session`; page
/// positions follow file order within each session.
pub fn parse_session_log<R: BufRead>(
    input: R,
    db: &BehaviorDatabase,
    default_session: &str,
) -> Result<Vec<ExplorationPage>, ExplorationError> {
    let mut pages = Vec::new();
    let mut positions: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord =
            serde_json::from_str(&line).map_err(|e| ExplorationError::Parse { line: line_no, message: e.to_string() })?;
        for &id in rec.presented.iter().chain(&rec.explored).chain(&rec.explore_order).chain(rec.ignored.iter().flatten()) {
            if !db.contains(id) {
                return Err(ExplorationError::UnknownBehavior { id, line: line_no });
            }
        }
        let explored: BTreeSet<_> = rec.explored.iter().copied().collect();
        if let Some(ignored) = &rec.ignored {
            if let Some(&id) = ignored.iter().find(|id| explored.contains(id)) {
                return Err(ExplorationError::Overlap { id, line: line_no });
            }
            if ignored.len() + explored.len() != rec.presented.len() {
                return Err(ExplorationError::Parse { line: line_no, message: "explored ∪ ignored != presented".into() });
            }
        }
        let order: BTreeSet<_> = rec.explore_order.iter().copied().collect();
        if order != explored || order.len() != rec.explore_order.len() || explored.len() != rec.explored.len() {
            return Err(ExplorationError::Parse {
                line: line_no,
                message: "explore_order must list each explored behavior once".into(),
            });
        }
        if !seen_ids.insert(rec.page_id.clone()) {
            return Err(ExplorationError::Parse { line: line_no, message: format!("duplicate page_id {}", rec.page_id) });
        }
        let session = rec.session.unwrap_or_else(|| default_session.to_string());
        let pos = positions.entry(session.clone()).or_default();
        *pos += 1;
        let page = ExplorationPage::from_actions(rec.page_id, session, *pos, rec.presented, rec.explore_order)
            .map_err(|e| ExplorationError::Parse { line: line_no, message: e.to_string() })?;
        pages.push(page);
    }
    Ok(pages)
}

pub fn ingest_session_log(path: &Path, db: &BehaviorDatabase) -> Result<Vec<ExplorationPage>, ExplorationError> {
    let file = std::fs::File::open(path)?;
    let session = path.file_stem().and_then(|s| s.to_str()).unwrap_or("session");
    parse_session_log(std::io::BufReader::new(file), db, session)
}

#[derive(Debug, thiserror::Error)]
pub enum ExplorationError {
    #[error("invalid simulated user: {0}")]
    InvalidUser(String),
    #[error("page size {page_size} exceeds database size {db_size}")]
    PageSize { page_size: usize, db_size: usize },
    #[error("page {page}: {reason}")]
    Partition { page: String, reason: String },
    #[error("no contrastive pages to sample triplets from")]
    NoContrastivePages,
    #[error("session log line {line}: unknown behavior id {id}")]
    UnknownBehavior { id: BehaviorId, line: usize },
    #[error("session log line {line}: behavior {id} is both explored and ignored")]
    Overlap { id: BehaviorId, line: usize },
    #[error("session log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("session log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log json: {0}")]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behaviors::{generate_database, Modality};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[usize]) -> Vec<BehaviorId> {
        v.iter().map(|&i| BehaviorId(i)).collect()
    }

    fn user(db_k: usize, seed: u64) -> SimUser {
        let mut omega = vec![0.0; db_k];
        omega[0] = 1.0;
        omega[1] = 0.5;
        SimUser::new("u", omega, seed).unwrap()
    }

    #[test]
    fn quantile_rule_explores_exact_count() {
        let db = generate_database(Modality::Visual, 300, 4, 3).unwrap();
        let pages = simulate_session(&user(4, 1), &db, 5, 100).unwrap();
        for p in &pages {
            assert_eq!(p.presented.len(), 100);
            assert_eq!(p.explored.len(), 20);
            assert!(p.partition_holds());
        }
    }

    #[test]
    fn noiseless_limit_is_top_utility() {
        let db = generate_database(Modality::Visual, 300, 4, 3).unwrap();
        let mut u = user(4, 9);
        u.explore_temp = 0.0;
        let pages = simulate_session(&u, &db, 3, 100).unwrap();
        for p in &pages {
            let mut by_util = p.presented.clone();
            by_util.sort_by(|a, b| u.utility(&db, *b).total_cmp(&u.utility(&db, *a)));
            let mut top: Vec<_> = by_util[..20].to_vec();
            top.sort();
            assert_eq!(top, p.explored);
        }
        assert_eq!(pages, simulate_session(&u, &db, 3, 100).unwrap());
    }

    #[test]
    fn explored_items_have_higher_utility() {
        let db = generate_database(Modality::Auditory, 400, 6, 2).unwrap();
        let u = user(6, 7);
        let pages = simulate_session(&u, &db, 10, 100).unwrap();
        let mean = |v: &[BehaviorId]| v.iter().map(|&id| u.utility(&db, id)).sum::<f64>() / v.len() as f64;
        let explored: Vec<_> = pages.iter().flat_map(|p| p.explored.clone()).collect();
        let ignored: Vec<_> = pages.iter().flat_map(|p| p.ignored.clone()).collect();
        assert!(mean(&explored) - mean(&ignored) > 0.0);
    }

    #[test]
    fn oversized_page_is_rejected() {
        let db = generate_database(Modality::Visual, 10, 3, 0).unwrap();
        assert!(matches!(simulate_session(&user(3, 0), &db, 1, 11), Err(ExplorationError::PageSize { .. })));
    }

    #[test]
    fn small_page_enumerates_its_triplets() {
        let page = ExplorationPage::from_actions("p", "s", 1, ids(&[0, 1, 2]), ids(&[0, 1])).unwrap();
        let sampler = TripletSampler::new(std::slice::from_ref(&page), Weighting::Uniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            let t = sampler.sample(&mut rng);
            assert_ne!(t.anchor, t.positive);
            seen.insert((t.anchor.0, t.positive.0, t.negative.0));
        }
        // Ignored cell has one behavior, so only the explored branch applies.
        assert_eq!(seen, BTreeSet::from([(0, 1, 2), (1, 0, 2)]));
    }

    #[test]
    fn time_linear_weights_follow_page_position() {
        let pages: Vec<_> = (1..=4)
            .map(|i| ExplorationPage::from_actions(format!("p{i}"), "s", i, ids(&[0, 1, 2, 3]), ids(&[0, 1])).unwrap())
            .collect();
        let sampler = TripletSampler::new(&pages, Weighting::TimeLinear).unwrap();
        let w: BTreeMap<_, _> = sampler.pages.iter().map(|(p, w)| (p.position, *w)).collect();
        assert_eq!(w[&4], 1.0);
        assert_eq!(w[&1], 0.25);
    }

    #[test]
    fn pages_are_selected_uniformly() {
        let pages = vec![
            ExplorationPage::from_actions("a", "s", 1, ids(&[0, 1, 2]), ids(&[0])).unwrap(),
            ExplorationPage::from_actions("b", "s", 2, ids(&[3, 4, 5, 6]), ids(&[3, 4])).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let triplets = sample_triplets(&pages, 10_000, &mut rng, Weighting::Uniform).unwrap();
        let a = triplets.iter().filter(|t| t.page_id == "a").count() as f64 / 10_000.0;
        assert!((0.49..=0.51).contains(&a), "{a}");
    }

    #[test]
    fn non_contrastive_logs_cannot_yield_triplets() {
        let page = ExplorationPage::from_actions("p", "s", 1, ids(&[0, 1]), vec![]).unwrap();
        assert!(!page.is_contrastive());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_triplets(&[page], 4, &mut rng, Weighting::Uniform),
            Err(ExplorationError::NoContrastivePages)
        ));
    }

    #[test]
    fn empty_log_is_empty() {
        let db = generate_database(Modality::Visual, 5, 3, 0).unwrap();
        assert!(parse_session_log(&b""[..], &db, "s").unwrap().is_empty());
    }

    #[test]
    fn log_round_trip() {
        let db = generate_database(Modality::Kinetic, 200, 4, 1).unwrap();
        let pages = simulate_session(&user(4, 3), &db, 4, 50).unwrap();
        let mut buf = Vec::new();
        write_session_log(&pages, &mut buf).unwrap();
        assert_eq!(parse_session_log(&buf[..], &db, "ignored-default").unwrap(), pages);
    }

    #[test]
    fn unknown_id_names_id_and_line() {
        let db = generate_database(Modality::Visual, 5, 3, 0).unwrap();
        let log = "{\"page_id\":\"a\",\"presented\":[0,1],\"explored\":[0],\"explore_order\":[0]}\n\
                   {\"page_id\":\"b\",\"presented\":[0,9],\"explored\":[0],\"explore_order\":[0]}\n";
        let err = parse_session_log(log.as_bytes(), &db, "s").unwrap_err();
        assert!(matches!(err, ExplorationError::UnknownBehavior { id: BehaviorId(9), line: 2 }));
        assert!(err.to_string().contains('9') && err.to_string().contains("line 2"));
    }

    #[test]
    fn overlapping_cells_are_rejected() {
        let db = generate_database(Modality::Visual, 5, 3, 0).unwrap();
        let log = "{\"page_id\":\"a\",\"presented\":[0,1],\"explored\":[0],\"explore_order\":[0],\"ignored\":[0]}\n";
        assert!(matches!(
            parse_session_log(log.as_bytes(), &db, "s"),
            Err(ExplorationError::Overlap { id: BehaviorId(0), line: 1 })
        ));
    }
}
