//! Request and response bodies.

use clea::features::LossReport;
use clea::BehaviorId;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub db: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub db: String,
    pub modality: String,
    pub behaviors: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatabaseInfo {
    pub name: String,
    pub modality: String,
    pub behaviors: usize,
    pub population_pages: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageParams {
    pub size: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Item {
    pub id: BehaviorId,
    pub summary: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PageItem {
    pub id: BehaviorId,
    pub summary: Vec<f64>,
    pub explored: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PageView {
    pub page_id: String,
    pub position: usize,
    pub behaviors: Vec<PageItem>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explore {
    pub behavior_id: BehaviorId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Explored {
    pub page_id: String,
    pub explore_order: Vec<BehaviorId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PageClosed {
    pub page_id: String,
    pub position: usize,
    pub explored: Vec<BehaviorId>,
    pub ignored: Vec<BehaviorId>,
    pub contrastive: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Train {
    pub objective: String,
    pub dim: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Add the database's population pages to this session's own.
    #[serde(default = "yes")]
    pub pool_population: bool,
    /// Block until training finishes instead of answering 202 at once.
    #[serde(default)]
    pub wait: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainState {
    Idle,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossSummary {
    pub epochs: usize,
    pub final_total: f64,
    pub final_triplet: f64,
    pub final_reconstruction: f64,
    pub final_kl: f64,
    pub margin_violation_rate: Option<f64>,
    pub stopped_early: bool,
}

impl LossSummary {
    pub fn of(report: &LossReport) -> Self {
        let last = report.epochs.last().copied().unwrap_or_default();
        Self {
            epochs: report.epochs.len(),
            final_total: last.total,
            final_triplet: last.triplet,
            final_reconstruction: last.reconstruction,
            final_kl: last.kl,
            margin_violation_rate: report.margin_violation_rate,
            stopped_early: report.stopped_early,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainStatus {
    pub state: TrainState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Pages the job trained on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pages: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrainStatus {
    pub fn idle() -> Self {
        Self {
            state: TrainState::Idle,
            objective: None,
            dim: None,
            pages: None,
            loss: None,
            error: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankQuery {
    pub behaviors: Vec<Item>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rank {
    /// Worst to best, as indices into the query.
    pub sigma: Vec<usize>,
    /// Defaults to the last query handed out.
    pub query: Option<Vec<BehaviorId>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorView {
    pub mean: Vec<f64>,
    pub spread: f64,
    pub comparisons: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: BehaviorId,
    /// Reward under the posterior mean weights.
    pub reward: f64,
    pub summary: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ranked {
    pub posterior: PosteriorView,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub db: String,
    pub pages: usize,
    pub open_page: Option<String>,
    pub training: TrainStatus,
    pub comparisons: usize,
}
