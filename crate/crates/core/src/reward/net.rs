use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Bound, Graph, ParamStore, Tensor, Var};
use crate::behaviors::BehaviorId;
use crate::features::{linear, EncoderSpec};
use crate::rng;

use super::{PairwiseComparison, RewardError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardNetConfig {
    pub hidden: Vec<usize>,
    /// Weight of the mean squared predicted reward.
    pub output_l2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
}

impl Default for RewardNetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            output_l2: 0.01,
            epochs: 60,
            batch: 16,
            adam: AdamConfig::default(),
        }
    }
}

/// What the reward network reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RewardMode {
    /// Rows of a feature table.
    Features,
    /// Raw payloads through an encoder trained jointly with the head.
    Direct { hidden_dims: Vec<usize>, feature_dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub encoder: Option<EncoderSpec>,
    pub params: ParamStore,
}

pub struct RewardTraining {
    pub net: RewardNet,
    pub epoch_losses: Vec<f64>,
    /// Epochs whose mean training loss rose by more than 1e-6.
    pub non_monotone_epochs: usize,
}

impl RewardNet {
    pub fn init(input_dim: usize, hidden: &[usize], mode: &RewardMode, seed: u64) -> Self {
        let mut r = rng::stream(seed, "reward-init", 0);
        let mut params = ParamStore::new();
        let encoder = match mode {
            RewardMode::Features => None,
            RewardMode::Direct { hidden_dims, feature_dim } => {
                let spec = EncoderSpec::new(input_dim, hidden_dims.clone(), *feature_dim, false);
                params.extend(spec.init_encoder(&mut r));
                Some(spec)
            }
        };
        let mut width = encoder.as_ref().map_or(input_dim, |e| e.feature_dim);
        for (i, &h) in hidden.iter().enumerate() {
            params.init_linear(&format!("rew.{i}"), width, h, &mut r);
            width = h;
        }
        params.init_linear("rew.out", width, 1, &mut r);
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            encoder,
            params,
        }
    }

    /// Rewards `[n, 1]` for input rows `[n, input_dim]`.
    pub fn forward(&self, g: &mut Graph, params: &Bound, x: Var) -> Result<Var, AutodiffError> {
        let mut h = match &self.encoder {
            Some(spec) => spec.encode(g, params, x)?.mean,
            None => x,
        };
        for i in 0..self.hidden.len() {
            h = linear(g, params, &format!("rew.{i}"), h)?;
            h = g.relu(h)?;
        }
        linear(g, params, "rew.out", h)
    }

    /// Rewards of flattened input rows.
    pub fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>, RewardError> {
        let mut out = Vec::with_capacity(rows.len() / self.input_dim);
        for chunk in rows.chunks(512 * self.input_dim) {
            let mut g = Graph::new();
            let bound = self.params.bind_frozen(&mut g);
            let x = g.constant(Tensor::new(vec![chunk.len() / self.input_dim, self.input_dim], chunk.to_vec())?);
            let r = self.forward(&mut g, &bound, x)?;
            out.extend_from_slice(g.value(r).data());
        }
        Ok(out)
    }

    /// Rewards of `ids`, reading rows of `inputs` (row `i` for behavior `i`).
    pub fn predict(&self, inputs: &[f64], ids: &[BehaviorId]) -> Result<Vec<f64>, RewardError> {
        self.predict_rows(&gather(inputs, self.input_dim, ids)?)
    }
}

fn gather(inputs: &[f64], dim: usize, ids: &[BehaviorId]) -> Result<Vec<f64>, RewardError> {
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        let row = inputs.get(id.0 * dim..(id.0 + 1) * dim).ok_or(RewardError::UnknownBehavior(id))?;
        out.extend_from_slice(row);
    }
    Ok(out)
}

/// Minimizes the mean of `−ln P(winner)` over minibatches of comparisons plus
/// `output_l2 · mean(r²)`. `inputs` holds one row of `input_dim` values per
/// behavior id.
pub fn train_reward_net(
    inputs: &[f64],
    input_dim: usize,
    mode: &RewardMode,
    comparisons: &[PairwiseComparison],
    cfg: &RewardNetConfig,
    seed: u64,
) -> Result<RewardTraining, RewardError> {
    if comparisons.is_empty() {
        return Err(RewardError::NoComparisons);
    }
    if input_dim == 0 || inputs.len() % input_dim != 0 {
        return Err(RewardError::DimMismatch {
            expected: input_dim,
            got: inputs.len(),
        });
    }
    let mut net = RewardNet::init(input_dim, &cfg.hidden, mode, seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut order: Vec<usize> = (0..comparisons.len()).collect();
    let mut shuffle_rng = rng::stream(seed, "reward-batches", 0);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let ids: Vec<BehaviorId> = chunk
                .iter()
                .map(|&i| comparisons[i].winner)
                .chain(chunk.iter().map(|&i| comparisons[i].loser))
                .collect();
            let rows = gather(inputs, input_dim, &ids)?;
            let mut g = Graph::new();
            let bound = net.params.bind(&mut g);
            let loss = pair_loss(&mut g, &net, &bound, rows, chunk.len(), cfg.output_l2)
                .map_err(|source| RewardError::Diverged { epoch, source })?;
            total += g.value(loss).item() * chunk.len() as f64;
            let grads = g.backward(loss)?.by_name();
            adam.update(&mut net.params, &grads)
                .map_err(|source| RewardError::Diverged { epoch, source })?;
        }
        epoch_losses.push(total / comparisons.len() as f64);
    }
    let non_monotone_epochs = epoch_losses.windows(2).filter(|w| w[1] > w[0] + 1e-6).count();
    Ok(RewardTraining {
        net,
        epoch_losses,
        non_monotone_epochs,
    })
}

/// Ranking loss of one batch; `rows` stacks `b` winners then `b` losers.
pub fn pair_loss(
    g: &mut Graph,
    net: &RewardNet,
    params: &Bound,
    rows: Vec<f64>,
    b: usize,
    output_l2: f64,
) -> Result<Var, AutodiffError> {
    let x = g.constant(Tensor::new(vec![2 * b, net.input_dim], rows)?);
    let r = net.forward(g, params, x)?;
    let r_w = g.slice_rows(r, 0, b)?;
    let r_l = g.slice_rows(r, b, 2 * b)?;
    let gap = g.sub(r_l, r_w)?;
    let nll = g.softplus(gap)?;
    let nll = g.mean(nll)?;
    let sq = g.square(r)?;
    let reg = g.mean(sq)?;
    let reg = g.scale(reg, output_l2)?;
    g.add(nll, reg)
}
