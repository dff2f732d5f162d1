use crate::behaviors::{BehaviorDatabase, BehaviorId, GeneratorConfig, PayloadTable};
use crate::exploration::{sample_population, simulate_session, ExplorationPage, SimUser, Weighting};
use crate::features::{train_feature_space, FeatureSpace, FeatureTable, Hyper, LossReport, Objective, TrainData};
use crate::rng::derive_seed;

use super::{EvalError, ExperimentPlan};

/// Simulated ground truth shared by every objective for one seed.
#[derive(Clone, Debug)]
pub struct World {
    pub seed: u64,
    pub db: BehaviorDatabase,
    pub payloads: PayloadTable,
    /// Another sample of the same payload map, for the pretrained baseline.
    pub auxiliary: PayloadTable,
    pub train_users: Vec<SimUser>,
    pub pages: Vec<ExplorationPage>,
    pub exemplars: Vec<BehaviorId>,
    pub eval_users: Vec<SimUser>,
}

impl World {
    pub fn build(plan: &ExperimentPlan, seed: u64) -> Result<Self, EvalError> {
        plan.validate()?;
        let gen = GeneratorConfig {
            seed,
            map_seed: None,
            ..plan.generator.clone()
        };
        let db = BehaviorDatabase::generate(&gen)?;
        let aux = BehaviorDatabase::generate(&GeneratorConfig {
            seed: derive_seed(seed, "auxiliary-db", 0),
            map_seed: Some(seed),
            ..gen.clone()
        })?;
        let k = gen.latent_dim;
        let train_users = sample_population(&plan.population, k, plan.train_users, derive_seed(seed, "population", 0), "train");
        let eval_users = sample_population(&plan.population, k, plan.eval_users, derive_seed(seed, "population", 1), "eval");

        let mut pages = Vec::new();
        let mut exemplars = Vec::new();
        for user in &train_users {
            let session = simulate_session(user, &db, plan.pages_per_user, plan.page_size)?;
            let favorite = session
                .iter()
                .flat_map(|p| p.explored.iter().copied())
                .max_by(|&a, &b| user.utility(&db, a).total_cmp(&user.utility(&db, b)).then(b.cmp(&a)));
            if let Some(f) = favorite {
                if !exemplars.contains(&f) {
                    exemplars.push(f);
                }
            }
            pages.extend(session);
        }
        Ok(Self {
            seed,
            payloads: db.payloads(),
            auxiliary: aux.payloads(),
            db,
            train_users,
            pages,
            exemplars,
            eval_users,
        })
    }
}

/// A feature space and its standardized embedding of the world's database.
#[derive(Clone, Debug)]
pub struct TrainedSpace {
    pub objective: Objective,
    pub weighting: Weighting,
    pub space: FeatureSpace,
    pub table: FeatureTable,
    pub report: LossReport,
}

/// Trains every objective at `dim` from the same seed.
pub fn train_spaces(
    plan: &ExperimentPlan,
    world: &World,
    dim: usize,
    objectives: &[Objective],
    weighting: Weighting,
) -> Result<Vec<TrainedSpace>, EvalError> {
    let hyper = Hyper {
        weighting,
        ..plan.hyper.clone()
    };
    let data = TrainData {
        payloads: &world.payloads,
        pages: &world.pages,
        auxiliary: Some(&world.auxiliary),
    };
    let seed = derive_seed(world.seed, "space", dim as u64);
    objectives
        .iter()
        .map(|&objective| {
            let (space, report) = train_feature_space(objective, &plan.encoder_hidden, dim, data, &hyper, seed)?;
            let table = space.embed(&world.payloads)?.standardized();
            Ok(TrainedSpace {
                objective,
                weighting,
                space,
                table,
                report,
            })
        })
        .collect()
}
