//! Feature spaces for behaviors and the objectives that train them.
//!
//! | objective          | trained on                         | loss                              |
//! |--------------------|------------------------------------|-----------------------------------|
//! | `random`           | nothing                            | none, frozen initialization       |
//! | `pretrained_frozen`| another database, then frozen      | reconstruction                    |
//! | `ae`               | payloads                           | reconstruction                    |
//! | `vae`              | payloads                           | reconstruction + β·KL             |
//! | `clea`             | exploration pages                  | symmetric triplet                 |
//! | `clea_ae`          | exploration pages                  | symmetric triplet + reconstruction|
//! | `clea_vae`         | exploration pages                  | symmetric triplet + recon + β·KL  |

mod encoder;
pub mod losses;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Bound, CheckpointError, Graph, ParamStore, Tensor, Var};
use crate::behaviors::{BehaviorId, Modality, PayloadTable};
use crate::exploration::{ExplorationError, ExplorationPage, Triplet, TripletSampler, Weighting};
use crate::rng;

pub use encoder::{linear, EncoderOutput, EncoderSpec};
pub use losses::{symmetric_triplet_loss, triplet_loss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Random,
    #[serde(rename = "pretrained_frozen", alias = "pretrained")]
    Pretrained,
    Ae,
    Vae,
    Clea,
    CleaAe,
    CleaVae,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::Random,
        Objective::Pretrained,
        Objective::Ae,
        Objective::Vae,
        Objective::Clea,
        Objective::CleaAe,
        Objective::CleaVae,
    ];
    pub const CLEA_FAMILY: [Objective; 3] = [Objective::Clea, Objective::CleaAe, Objective::CleaVae];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Random => "random",
            Objective::Pretrained => "pretrained_frozen",
            Objective::Ae => "ae",
            Objective::Vae => "vae",
            Objective::Clea => "clea",
            Objective::CleaAe => "clea_ae",
            Objective::CleaVae => "clea_vae",
        }
    }

    pub fn uses_triplets(self) -> bool {
        matches!(self, Objective::Clea | Objective::CleaAe | Objective::CleaVae)
    }

    pub fn reconstructs(self) -> bool {
        matches!(
            self,
            Objective::Pretrained | Objective::Ae | Objective::Vae | Objective::CleaAe | Objective::CleaVae
        )
    }

    pub fn variational(self) -> bool {
        matches!(self, Objective::Vae | Objective::CleaVae)
    }

    pub fn is_clea_family(self) -> bool {
        self.uses_triplets()
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretrained" => Ok(Objective::Pretrained),
            _ => Objective::ALL
                .into_iter()
                .find(|o| o.as_str() == s)
                .ok_or_else(|| format!("unknown objective `{s}`")),
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    /// Triplet margin.
    pub alpha: f64,
    /// KL weight for variational objectives.
    pub beta: f64,
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub weighting: Weighting,
    /// Stop once the epoch loss improved by less than this fraction over
    /// `plateau_window` epochs.
    pub plateau_tol: f64,
    pub plateau_window: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self::for_modality(Modality::Visual)
    }
}

impl Hyper {
    /// Margins and KL weights selected per modality by validation sweeps.
    pub fn for_modality(modality: Modality) -> Self {
        let (alpha, beta) = match modality {
            Modality::Visual => (0.1, 1.0),
            Modality::Auditory => (0.1, 10.0),
            Modality::Kinetic => (2.0, 10.0),
        };
        Self {
            alpha,
            beta,
            adam: AdamConfig::default(),
            batch: 128,
            epochs: 50,
            steps_per_epoch: 10,
            weighting: Weighting::Uniform,
            plateau_tol: 1e-4,
            plateau_window: 5,
        }
    }
}

/// Sweep grid used to pick `alpha` and `beta`.
pub const SWEEP_GRID: [f64; 7] = [0.01, 0.1, 0.5, 0.9, 2.0, 5.0, 10.0];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub database: Option<String>,
    pub sessions: Vec<String>,
    pub seed: u64,
}

/// A trained (or frozen) encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpace {
    pub spec: EncoderSpec,
    pub params: ParamStore,
    pub objective: Objective,
    pub hyper: Hyper,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceMetadata {
    objective: Objective,
    feature_dim: usize,
    spec: EncoderSpec,
    hyper: Hyper,
    provenance: Provenance,
}

/// Embeddings of every behavior of a database, row `i` for `BehaviorId(i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub dim: usize,
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "feature table shape");
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, id: BehaviorId) -> &[f64] {
        &self.data[id.0 * self.dim..(id.0 + 1) * self.dim]
    }

    pub fn get(&self, id: BehaviorId) -> Option<&[f64]> {
        (id.0 < self.len()).then(|| self.row(id))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    /// Centers every column and rescales so the mean squared row norm is 1.
    /// Degenerate (constant) tables are returned centered only.
    pub fn standardized(&self) -> FeatureTable {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut data: Vec<f64> = self
            .rows()
            .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
            .collect();
        let ms = data.iter().map(|v| v * v).sum::<f64>() / n;
        if ms > 1e-24 {
            let s = ms.sqrt();
            data.iter_mut().for_each(|v| *v /= s);
        }
        FeatureTable { dim: self.dim, data }
    }
}

impl FeatureSpace {
    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    /// Deterministic embedding (the mean head for variational encoders) of
    /// `n` flattened payload rows.
    pub fn embed_rows(&self, rows: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let dim = self.spec.input_dim;
        let n = rows.len() / dim;
        let mut out = Vec::with_capacity(n * self.spec.feature_dim);
        for chunk in rows.chunks(512 * dim) {
            let mut g = Graph::new();
            let bound = self.params.bind_frozen(&mut g);
            let x = g.constant(Tensor::new(vec![chunk.len() / dim, dim], chunk.to_vec())?);
            let enc = self.spec.encode(&mut g, &bound, x)?;
            out.extend_from_slice(g.value(enc.mean).data());
        }
        Ok(out)
    }

    pub fn embed(&self, payloads: &PayloadTable) -> Result<FeatureTable, FeatureError> {
        if payloads.dim != self.spec.input_dim {
            return Err(FeatureError::Autodiff(AutodiffError::ShapeMismatch {
                op: "embed",
                left: vec![payloads.dim],
                right: vec![self.spec.input_dim],
            }));
        }
        Ok(FeatureTable::new(self.spec.feature_dim, self.embed_rows(payloads.flat())?))
    }

    /// Writes `{stem}.ckpt.json` (parameters) and `{stem}.meta.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), FeatureError> {
        std::fs::create_dir_all(dir).map_err(CheckpointError::from)?;
        self.params.save(&dir.join(format!("{stem}.ckpt.json")))?;
        let meta = SpaceMetadata {
            objective: self.objective,
            feature_dim: self.spec.feature_dim,
            spec: self.spec.clone(),
            hyper: self.hyper.clone(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(CheckpointError::from)?;
        std::fs::write(dir.join(format!("{stem}.meta.json")), json).map_err(CheckpointError::from)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, FeatureError> {
        let params = ParamStore::load(&dir.join(format!("{stem}.ckpt.json")))?;
        let meta_text = std::fs::read_to_string(dir.join(format!("{stem}.meta.json"))).map_err(CheckpointError::from)?;
        let meta: SpaceMetadata = serde_json::from_str(&meta_text).map_err(CheckpointError::from)?;
        Ok(Self {
            spec: meta.spec,
            params,
            objective: meta.objective,
            hyper: meta.hyper,
            provenance: meta.provenance,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub triplet: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epochs: Vec<EpochLoss>,
    /// Fraction of fresh triplets on which either hinge is active.
    pub margin_violation_rate: Option<f64>,
    pub stopped_early: bool,
}

/// One optimization batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[rows, input_dim]`; for triplet objectives rows are anchors,
    /// positives, negatives in three equal blocks.
    pub inputs: Tensor,
    /// Per-triplet weights, when the batch carries triplets.
    pub weights: Option<Vec<f64>>,
    /// Reparameterization noise `[rows, d]` for variational objectives.
    pub eps: Option<Tensor>,
}

/// Graph handles for the loss components of one batch.
pub struct LossTerms {
    pub total: Var,
    pub triplet: Option<Var>,
    pub reconstruction: Option<Var>,
    pub kl: Option<Var>,
}

/// Builds the loss of `objective` on `batch`. Component weights: triplet 1,
/// reconstruction 1, KL β.
pub fn objective_loss(
    g: &mut Graph,
    objective: Objective,
    spec: &EncoderSpec,
    params: &Bound,
    batch: &Batch,
    hyper: &Hyper,
) -> Result<LossTerms, AutodiffError> {
    let x = g.constant(batch.inputs.clone());
    let enc = spec.encode(g, params, x)?;
    let triplet = match (&batch.weights, objective.uses_triplets()) {
        (Some(w), true) => Some(losses::weighted_clea_loss(g, enc.mean, w, hyper.alpha)?),
        _ => None,
    };
    let mut reconstruction = None;
    let mut kl = None;
    if objective.reconstructs() {
        let z = match (enc.logvar, &batch.eps, objective.variational()) {
            (Some(logvar), Some(eps), true) => {
                let half = g.scale(logvar, 0.5)?;
                let std = g.exp(half)?;
                let e = g.constant(eps.clone());
                let noise = g.mul(std, e)?;
                g.add(enc.mean, noise)?
            }
            _ => enc.mean,
        };
        let recon = spec.decode(g, params, z)?;
        reconstruction = Some(losses::reconstruction_loss(g, recon, x)?);
        if objective.variational() {
            let logvar = enc.logvar.expect("variational encoder");
            kl = Some(losses::kl_loss(g, enc.mean, logvar)?);
        }
    }

    let mut total: Option<Var> = None;
    let mut acc = |g: &mut Graph, term: Var| -> Result<(), AutodiffError> {
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
        Ok(())
    };
    if let Some(t) = triplet {
        acc(g, t)?;
    }
    if let Some(r) = reconstruction {
        acc(g, r)?;
    }
    if let Some(k) = kl {
        let weighted = g.scale(k, hyper.beta)?;
        acc(g, weighted)?;
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok(LossTerms {
        total,
        triplet,
        reconstruction,
        kl,
    })
}

/// Symmetric triplet loss of `triplets` through the encoder, averaged with
/// the triplets' weights.
pub fn clea_batch_loss(
    g: &mut Graph,
    spec: &EncoderSpec,
    params: &Bound,
    triplets: &[Triplet],
    payloads: &PayloadTable,
    alpha: f64,
) -> Result<Var, FeatureError> {
    if triplets.is_empty() {
        return Err(FeatureError::EmptyBatch);
    }
    let inputs = triplet_inputs(triplets, payloads)?;
    let x = g.constant(inputs);
    let enc = spec.encode(g, params, x)?;
    let weights: Vec<f64> = triplets.iter().map(|t| t.weight).collect();
    Ok(losses::weighted_clea_loss(g, enc.mean, &weights, alpha)?)
}

fn triplet_inputs(triplets: &[Triplet], payloads: &PayloadTable) -> Result<Tensor, FeatureError> {
    let ids: Vec<BehaviorId> = triplets
        .iter()
        .map(|t| t.anchor)
        .chain(triplets.iter().map(|t| t.positive))
        .chain(triplets.iter().map(|t| t.negative))
        .collect();
    let data = payloads.gather(&ids).map_err(FeatureError::UnknownBehavior)?;
    Ok(Tensor::new(vec![ids.len(), payloads.dim], data)?)
}

/// Inputs to feature training. Learners see payloads and partitions only.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub payloads: &'a PayloadTable,
    pub pages: &'a [ExplorationPage],
    /// Payloads of a different database, used by the pretrained baseline.
    pub auxiliary: Option<&'a PayloadTable>,
}

fn gaussian_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

/// Trains a feature space of width `feature_dim` with MLP hidden widths
/// `hidden_dims`. Deterministic given `seed`.
pub fn train_feature_space(
    objective: Objective,
    hidden_dims: &[usize],
    feature_dim: usize,
    data: TrainData<'_>,
    hyper: &Hyper,
    seed: u64,
) -> Result<(FeatureSpace, LossReport), FeatureError> {
    let spec = EncoderSpec::new(data.payloads.dim, hidden_dims.to_vec(), feature_dim, objective.variational());
    let mut init_rng = rng::stream(seed, "init", 0);
    let mut params = spec.init_encoder(&mut init_rng);
    let sessions: BTreeSet<String> = data.pages.iter().map(|p| p.session.clone()).collect();
    let provenance = Provenance {
        database: None,
        sessions: if objective.uses_triplets() { sessions.into_iter().collect() } else { vec![] },
        seed,
    };
    let mut report = LossReport::default();

    if objective != Objective::Random {
        if objective.reconstructs() {
            params.extend(spec.init_decoder(&mut init_rng));
        }
        let source = match objective {
            Objective::Pretrained => data.auxiliary.ok_or(FeatureError::MissingAuxiliary)?,
            _ => data.payloads,
        };
        let sampler = if objective.uses_triplets() {
            Some(TripletSampler::new(data.pages, hyper.weighting)?)
        } else {
            None
        };
        let mut train_rng = rng::stream(seed, "batches", 0);
        let all_ids: Vec<BehaviorId> = (0..source.len()).map(BehaviorId).collect();
        let mut adam = AdamState::new(hyper.adam);

        for epoch in 0..hyper.epochs {
            let mut sums = EpochLoss::default();
            for _ in 0..hyper.steps_per_epoch {
                let (inputs, weights) = match &sampler {
                    Some(s) => {
                        let triplets = s.sample_batch(hyper.batch, &mut train_rng);
                        let w: Vec<f64> = triplets.iter().map(|t| t.weight).collect();
                        (triplet_inputs(&triplets, source)?, Some(w))
                    }
                    None => {
                        let ids: Vec<BehaviorId> = (0..hyper.batch).map(|_| *all_ids.choose(&mut train_rng).expect("nonempty")).collect();
                        let rows = source.gather(&ids).map_err(FeatureError::UnknownBehavior)?;
                        (Tensor::new(vec![ids.len(), source.dim], rows)?, None)
                    }
                };
                let eps = objective
                    .variational()
                    .then(|| gaussian_tensor(&mut train_rng, inputs.shape()[0], feature_dim));
                let batch = Batch { inputs, weights, eps };

                let mut g = Graph::new();
                let bound = params.bind(&mut g);
                let terms = objective_loss(&mut g, objective, &spec, &bound, &batch, hyper)
                    .map_err(|e| FeatureError::Diverged { epoch, source: e })?;
                let value = |v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
                sums.total += g.value(terms.total).item();
                sums.triplet += value(terms.triplet);
                sums.reconstruction += value(terms.reconstruction);
                sums.kl += value(terms.kl);
                let grads = g.backward(terms.total)?.by_name();
                adam.update(&mut params, &grads).map_err(|e| FeatureError::Diverged { epoch, source: e })?;
            }
            let n = hyper.steps_per_epoch.max(1) as f64;
            report.epochs.push(EpochLoss {
                total: sums.total / n,
                triplet: sums.triplet / n,
                reconstruction: sums.reconstruction / n,
                kl: sums.kl / n,
            });
            if plateaued(&report.epochs, hyper) {
                report.stopped_early = epoch + 1 < hyper.epochs;
                break;
            }
        }
    }

    let space = FeatureSpace {
        params: params.with_prefix("enc."),
        spec,
        objective,
        hyper: hyper.clone(),
        provenance,
    };
    report.margin_violation_rate = match TripletSampler::new(data.pages, Weighting::Uniform) {
        Ok(sampler) => {
            let mut check_rng = rng::stream(seed, "margin-check", 0);
            Some(margin_violation_rate(&space, &sampler.sample_batch(512, &mut check_rng), data.payloads, hyper.alpha)?)
        }
        Err(_) => None,
    };
    Ok((space, report))
}

fn plateaued(epochs: &[EpochLoss], hyper: &Hyper) -> bool {
    let w = hyper.plateau_window;
    if w == 0 || epochs.len() <= w {
        return false;
    }
    let then = epochs[epochs.len() - 1 - w].total;
    let now = epochs[epochs.len() - 1].total;
    if then <= 0.0 {
        return true;
    }
    (then - now) / then.abs() < hyper.plateau_tol
}

/// Fraction of triplets with a nonzero symmetric hinge in `space`.
pub fn margin_violation_rate(
    space: &FeatureSpace,
    triplets: &[Triplet],
    payloads: &PayloadTable,
    alpha: f64,
) -> Result<f64, FeatureError> {
    let inputs = triplet_inputs(triplets, payloads)?;
    let f = space.embed_rows(inputs.data())?;
    let d = space.feature_dim();
    let b = triplets.len();
    let row = |i: usize| &f[i * d..(i + 1) * d];
    let mut violations = 0;
    for i in 0..b {
        if symmetric_triplet_loss(row(i), row(b + i), row(2 * b + i), alpha)? > 0.0 {
            violations += 1;
        }
    }
    Ok(violations as f64 / b as f64)
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature dims differ: anchor {anchor}, positive {positive}, negative {negative}")]
    DimMismatch { anchor: usize, positive: usize, negative: usize },
    #[error("empty triplet batch")]
    EmptyBatch,
    #[error("behavior {0} not in payload table")]
    UnknownBehavior(BehaviorId),
    #[error("pretrained objective needs an auxiliary database")]
    MissingAuxiliary,
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: AutodiffError },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
