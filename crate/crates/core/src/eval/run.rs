use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::behaviors::BehaviorId;
use crate::exploration::Weighting;
use crate::features::{FeatureTable, Objective};
use crate::reward::{
    alignment, cosine, decompose_ranking, train_reward_net, LinearRewardPosterior, MhConfig, PairwiseComparison,
    RankingRecord, RewardMode,
};
use crate::rng::{derive_seed, stream};

use super::metrics::{auc, top_choice_hit};
use super::queries::{nearest, simulate_rankings, QueryGenerator};
use super::report::{CellRow, CriteriaReport, CurveRow, NoiseRow, Study};
use super::world::{train_spaces, TrainedSpace, World};
use super::{Criterion, EvalError, ExperimentPlan};

fn user_seed(seed: u64, label: &str, dim: usize, user: usize) -> u64 {
    derive_seed(derive_seed(seed, label, dim as u64), "user", user as u64)
}

/// Rankings of every evaluation user at one feature dim, with the
/// train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Elicitation {
    pub seed: u64,
    pub dim: usize,
    pub rankings: Vec<Vec<RankingRecord>>,
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl Elicitation {
    pub fn simulate(plan: &ExperimentPlan, world: &World, generator: &QueryGenerator, dim: usize) -> Result<Self, EvalError> {
        let n_train = plan.train_rankings();
        let mut rankings = Vec::with_capacity(world.eval_users.len());
        let mut train = Vec::with_capacity(world.eval_users.len());
        let mut test = Vec::with_capacity(world.eval_users.len());
        for (u, user) in world.eval_users.iter().enumerate() {
            let mut r = stream(user_seed(world.seed, "rankings", dim, u), "queries", 0);
            rankings.push(simulate_rankings(user, &world.db, generator, plan.schedule(), &mut r)?);
            let mut idx: Vec<usize> = (0..plan.rankings_per_user).collect();
            idx.shuffle(&mut stream(user_seed(world.seed, "split", dim, u), "split", 0));
            let (a, b) = idx.split_at(n_train);
            let (mut a, mut b) = (a.to_vec(), b.to_vec());
            a.sort_unstable();
            b.sort_unstable();
            train.push(a);
            test.push(b);
        }
        Ok(Self {
            seed: world.seed,
            dim,
            rankings,
            train,
            test,
        })
    }

    pub fn users(&self) -> usize {
        self.rankings.len()
    }

    /// The overall favorite: winner of the last super ranking, or of the last
    /// ranking when there are none.
    pub fn favorite(&self, user: usize) -> BehaviorId {
        let rs = &self.rankings[user];
        rs.iter().rev().find(|r| r.is_super).unwrap_or(rs.last().expect("rankings")).best()
    }

    pub fn train_comparisons(&self, user: usize) -> Vec<PairwiseComparison> {
        self.train[user]
            .iter()
            .flat_map(|&i| decompose_ranking(&self.rankings[user][i]).expect("valid ranking"))
            .collect()
    }

    /// The first `n` comparisons of the user's rankings in order; when there
    /// are fewer, reshuffled copies are appended and the flag is set.
    pub fn comparison_stream(&self, user: usize, n: usize) -> (Vec<PairwiseComparison>, bool) {
        let base: Vec<PairwiseComparison> = self.rankings[user]
            .iter()
            .flat_map(|r| decompose_ranking(r).expect("valid ranking"))
            .collect();
        if base.len() >= n {
            return (base[..n].to_vec(), false);
        }
        let mut out = base.clone();
        let mut r = stream(user_seed(self.seed, "pad", self.dim, user), "pad", 0);
        while out.len() < n {
            let mut copy = base.clone();
            copy.shuffle(&mut r);
            out.extend(copy);
        }
        out.truncate(n);
        (out, true)
    }
}

/// Pooled held-out top-choice accuracy of per-user reward nets trained on
/// `inputs` (one row of `input_dim` per behavior).
pub fn test_preference_accuracy(
    plan: &ExperimentPlan,
    elicitation: &Elicitation,
    inputs: &[f64],
    input_dim: usize,
    mode: &RewardMode,
) -> Result<f64, EvalError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for u in 0..elicitation.users() {
        let comparisons = elicitation.train_comparisons(u);
        let seed = user_seed(elicitation.seed, "reward", elicitation.dim, u);
        let net = train_reward_net(inputs, input_dim, mode, &comparisons, &plan.reward, seed)?.net;
        let mut ties = stream(seed, "ties", 0);
        for &i in &elicitation.test[u] {
            let r = &elicitation.rankings[u][i];
            let predicted = net.predict(inputs, &r.query)?;
            let choice = *r.sigma.last().expect("nonempty");
            hits += top_choice_hit(&predicted, choice, &mut ties) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyTestSplit);
    }
    Ok(hits as f64 / total as f64)
}

fn mh_seed(elicitation: &Elicitation, user: usize) -> u64 {
    user_seed(elicitation.seed, "mh", elicitation.dim, user)
}

/// Alignment after each of the first `n` comparisons, the likelihood reading
/// `features` and the target read from `clean`. `None` when the favorite
/// embeds at the origin.
pub fn alignment_curve(
    elicitation: &Elicitation,
    user: usize,
    features: &FeatureTable,
    clean: &FeatureTable,
    mh: &MhConfig,
    n: usize,
) -> Result<Option<(Vec<f64>, bool)>, EvalError> {
    let target = clean.row(elicitation.favorite(user));
    if target.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let (comparisons, padded) = elicitation.comparison_stream(user, n);
    let mut posterior = LinearRewardPosterior::new(features.dim, mh.clone(), mh_seed(elicitation, user));
    let mut curve = Vec::with_capacity(n);
    for c in comparisons {
        posterior.posterior_update(c, features)?;
        curve.push(alignment(posterior.samples(), target)?.value);
    }
    Ok(Some((curve, padded)))
}

/// Alignment after all `n` comparisons; equal to the last entry of
/// [`alignment_curve`] since each refresh depends only on the comparison set
/// and its size.
pub fn final_alignment(
    elicitation: &Elicitation,
    user: usize,
    features: &FeatureTable,
    clean: &FeatureTable,
    mh: &MhConfig,
    n: usize,
) -> Result<Option<f64>, EvalError> {
    let target = clean.row(elicitation.favorite(user));
    if target.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let (comparisons, _) = elicitation.comparison_stream(user, n);
    let mut posterior = LinearRewardPosterior::new(features.dim, mh.clone(), mh_seed(elicitation, user));
    posterior.observe_all(&comparisons, features)?;
    Ok(Some(alignment(posterior.samples(), target)?.value))
}

/// Cosine between the user's favorite and the nearest exemplar to it.
pub fn explainability(world: &World, elicitation: &Elicitation, user: usize, table: &FeatureTable) -> Option<f64> {
    let top = table.row(elicitation.favorite(user));
    let exemplars: BTreeSet<BehaviorId> = world.exemplars.iter().copied().collect();
    let (nearest_exemplar, _) = nearest(table, top, |id| !exemplars.contains(&id))?;
    cosine(top, table.row(nearest_exemplar))
}

fn alignment_users(plan: &ExperimentPlan, el: &Elicitation) -> usize {
    plan.alignment_users.map_or(el.users(), |n| n.min(el.users()))
}

#[derive(Clone, Copy, Default)]
struct Want {
    tpa: bool,
    curve: bool,
    explain: bool,
}

/// All rows produced for one seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedOutcome {
    pub rows: Vec<CellRow>,
    pub noise: Vec<NoiseRow>,
    pub curves: Vec<CurveRow>,
    pub warnings: Vec<String>,
}

struct Cell<'a> {
    plan: &'a ExperimentPlan,
    world: &'a World,
    elicitation: &'a Elicitation,
    hash: &'a str,
}

impl Cell<'_> {
    fn row(&self, study: Study, method: &str, weighting: Weighting) -> CellRow {
        CellRow {
            seed: self.world.seed,
            modality: self.plan.modality,
            study,
            objective: method.to_string(),
            dim: self.elicitation.dim,
            weighting,
            tpa: None,
            auc_alignment: None,
            final_alignment: None,
            explainability: None,
            padded: false,
            margin_violation_rate: None,
            config_hash: self.hash.to_string(),
        }
    }

    fn evaluate(&self, study: Study, ts: &TrainedSpace, want: Want, out: &mut SeedOutcome) -> Result<CellRow, EvalError> {
        let (plan, el) = (self.plan, self.elicitation);
        let mut row = self.row(study, ts.objective.as_str(), ts.weighting);
        row.margin_violation_rate = ts.report.margin_violation_rate;
        if want.tpa {
            row.tpa = Some(test_preference_accuracy(plan, el, ts.table.flat(), el.dim, &RewardMode::Features)?);
        }
        if want.curve {
            let n = plan.alignment_queries;
            let mut mean_curve = vec![0.0; n];
            let (mut aucs, mut finals) = (Vec::new(), Vec::new());
            for u in 0..alignment_users(plan, el) {
                match alignment_curve(el, u, &ts.table, &ts.table, &plan.mh, n)? {
                    Some((curve, padded)) => {
                        row.padded |= padded;
                        aucs.push(auc(&curve));
                        finals.push(*curve.last().unwrap_or(&0.0));
                        for (m, c) in mean_curve.iter_mut().zip(&curve) {
                            *m += c;
                        }
                    }
                    None => out.warnings.push(format!(
                        "seed {} {} dim {}: favorite of user {u} embeds at the origin",
                        el.seed, ts.objective, el.dim
                    )),
                }
            }
            if !aucs.is_empty() {
                row.auc_alignment = Some(auc(&aucs));
                row.final_alignment = Some(auc(&finals));
                if study == Study::Main {
                    let users = aucs.len() as f64;
                    out.curves.extend(mean_curve.iter().enumerate().map(|(i, m)| CurveRow {
                        seed: el.seed,
                        objective: ts.objective.as_str().to_string(),
                        dim: el.dim,
                        step: i + 1,
                        alignment: m / users,
                    }));
                }
            }
        }
        if want.explain {
            let values: Vec<f64> = (0..el.users())
                .filter_map(|u| explainability(self.world, el, u, &ts.table))
                .collect();
            if values.len() < el.users() {
                out.warnings.push(format!(
                    "seed {} {} dim {}: {} zero embeddings excluded from explainability",
                    el.seed,
                    ts.objective,
                    el.dim,
                    el.users() - values.len()
                ));
            }
            if !values.is_empty() {
                row.explainability = Some(auc(&values));
            }
        }
        Ok(row)
    }

    fn noise(&self, spaces: &[TrainedSpace], out: &mut SeedOutcome) -> Result<(), EvalError> {
        let (plan, el) = (self.plan, self.elicitation);
        let n = plan.alignment_queries;
        let rows_n = self.world.payloads.len();
        let dim = el.dim;
        let mut sums = vec![vec![(0.0, 0usize); plan.noise_eps.len()]; spaces.len()];
        for trial in 0..plan.noise_trials {
            // Shared by every objective in this trial.
            let mut r = stream(derive_seed(el.seed, "noise", dim as u64), "trial", trial as u64);
            let draws: Vec<f64> = (0..rows_n * dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            for (e, &eps) in plan.noise_eps.iter().enumerate() {
                for (s, ts) in spaces.iter().enumerate() {
                    let noisy = FeatureTable::new(
                        dim,
                        ts.table.flat().iter().zip(&draws).map(|(v, z)| v + eps * z).collect(),
                    );
                    for u in 0..alignment_users(plan, el) {
                        if let Some(a) = final_alignment(el, u, &noisy, &ts.table, &plan.mh, n)? {
                            sums[s][e].0 += a;
                            sums[s][e].1 += 1;
                        }
                    }
                }
            }
        }
        for (s, ts) in spaces.iter().enumerate() {
            for (e, &eps) in plan.noise_eps.iter().enumerate() {
                let (sum, count) = sums[s][e];
                out.noise.push(NoiseRow {
                    seed: el.seed,
                    modality: plan.modality,
                    objective: ts.objective.as_str().to_string(),
                    dim,
                    eps,
                    final_alignment: if count == 0 { 0.0 } else { sum / count as f64 },
                    trials: plan.noise_trials,
                    config_hash: self.hash.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Runs the selected criteria for one seed.
pub fn run_seed(plan: &ExperimentPlan, seed: u64, criteria: &BTreeSet<Criterion>) -> Result<SeedOutcome, EvalError> {
    let hash = plan.config_hash();
    let world = World::build(plan, seed)?;
    let has = |c: Criterion| criteria.contains(&c);
    let smallest = plan.smallest_dim();
    let primary = plan.primary_dim;
    let mut dims = BTreeSet::new();
    if [Criterion::Completeness, Criterion::Explainability, Criterion::Weighting, Criterion::Direct]
        .iter()
        .any(|&c| has(c))
    {
        dims.insert(primary);
    }
    if has(Criterion::Simplicity) {
        dims.extend(plan.dims.iter().copied());
    }
    if has(Criterion::Minimality) || has(Criterion::Noise) {
        dims.insert(smallest);
    }

    let mut out = SeedOutcome::default();
    for dim in dims {
        let spaces = train_spaces(plan, &world, dim, &plan.objectives, Weighting::Uniform)?;
        let named: Vec<(&str, &FeatureTable)> = spaces.iter().map(|s| (s.objective.as_str(), &s.table)).collect();
        let generator = QueryGenerator::new(&world.exemplars, &named)?;
        let elicitation = Elicitation::simulate(plan, &world, &generator, dim)?;
        let cell = Cell {
            plan,
            world: &world,
            elicitation: &elicitation,
            hash: &hash,
        };
        let want = Want {
            tpa: dim == primary && has(Criterion::Completeness),
            curve: has(Criterion::Simplicity) || (dim == smallest && has(Criterion::Minimality)),
            explain: dim == primary && has(Criterion::Explainability),
        };
        if want.tpa || want.curve || want.explain {
            for ts in &spaces {
                let row = cell.evaluate(Study::Main, ts, want, &mut out)?;
                out.rows.push(row);
            }
        }
        if dim == smallest && has(Criterion::Noise) {
            cell.noise(&spaces, &mut out)?;
        }
        if dim == primary && has(Criterion::Weighting) {
            let family: Vec<Objective> = plan.objectives.iter().copied().filter(|o| o.is_clea_family()).collect();
            let weighted = train_spaces(plan, &world, dim, &family, Weighting::TimeLinear)?;
            let all = Want {
                tpa: true,
                curve: true,
                explain: true,
            };
            for ts in spaces.iter().filter(|s| s.objective.is_clea_family()).chain(&weighted) {
                let row = cell.evaluate(Study::Weighting, ts, all, &mut out)?;
                out.rows.push(row);
            }
        }
        if dim == primary && has(Criterion::Direct) {
            let mode = RewardMode::Direct {
                hidden_dims: plan.encoder_hidden.clone(),
                feature_dim: dim,
            };
            let mut row = cell.row(Study::Direct, "direct", Weighting::Uniform);
            row.tpa = Some(test_preference_accuracy(
                plan,
                &elicitation,
                world.payloads.flat(),
                world.payloads.dim,
                &mode,
            )?);
            out.rows.push(row);
            if let Some(ts) = spaces.iter().find(|s| s.objective == Objective::CleaAe) {
                let tpa_only = Want {
                    tpa: true,
                    ..Want::default()
                };
                let row = cell.evaluate(Study::Direct, ts, tpa_only, &mut out)?;
                out.rows.push(row);
            }
        }
    }
    Ok(out)
}

/// Runs the selected criteria over every seed of the plan.
pub fn run_plan(plan: &ExperimentPlan, criteria: &BTreeSet<Criterion>) -> Result<CriteriaReport, EvalError> {
    plan.validate()?;
    let mut outcomes = Vec::with_capacity(plan.seeds.len());
    for &seed in &plan.seeds {
        outcomes.push(run_seed(plan, seed, criteria)?);
    }
    Ok(CriteriaReport::assemble(plan, criteria, outcomes))
}

fn only(c: Criterion) -> BTreeSet<Criterion> {
    BTreeSet::from([c])
}

pub fn run_completeness(plan: &ExperimentPlan) -> Result<CriteriaReport, EvalError> {
    run_plan(plan, &only(Criterion::Completeness))
}

/// Alignment curves and AUC at one dim.
pub fn run_alignment_curve(plan: &ExperimentPlan, dim: usize) -> Result<CriteriaReport, EvalError> {
    let plan = ExperimentPlan {
        dims: vec![dim],
        ..plan.clone()
    };
    run_plan(&plan, &only(Criterion::Simplicity))
}

pub fn run_explainability(plan: &ExperimentPlan) -> Result<CriteriaReport, EvalError> {
    run_plan(plan, &only(Criterion::Explainability))
}

/// Final alignment over the plan's noise grid at the smallest dim.
pub fn run_noise_robustness(plan: &ExperimentPlan) -> Result<CriteriaReport, EvalError> {
    run_plan(plan, &only(Criterion::Noise))
}

pub fn run_weighting_ablation(plan: &ExperimentPlan) -> Result<CriteriaReport, EvalError> {
    run_plan(plan, &only(Criterion::Weighting))
}
