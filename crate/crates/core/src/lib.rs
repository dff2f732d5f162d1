//! Contrastive learning from exploratory actions.
//!
//! Users browsing a large database of behaviors explore a few items on each
//! page and ignore the rest. Those explore/ignore partitions are the only
//! supervision needed to learn a low-dimensional feature space in which the
//! population's preferences are easy to model: a symmetric triplet objective
//! pulls same-cell items together and pushes cross-cell items apart.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: reverse-mode tensors and Adam.
//! - [`behaviors`]: synthetic behavior databases with hidden latent factors.
//! - [`exploration`]: simulated exploratory search, session logs, triplets.
//! - [`features`]: encoders and the seven feature-learning objectives.
//! - [`reward`]: Bradley–Terry reward networks and a Bayesian linear reward.
//! - [`eval`]: completeness, simplicity, minimality and explainability
//!   criteria plus the noise, weighting and direct-reward studies.

pub mod autodiff;
pub mod behaviors;
pub mod eval;
pub mod exploration;
pub mod features;
pub mod reward;
pub mod rng;

pub use behaviors::{Behavior, BehaviorDatabase, BehaviorId, GeneratorConfig, Modality, PayloadTable};
pub use exploration::{ExplorationPage, SimUser, Triplet, Weighting};
pub use features::{FeatureSpace, Hyper, Objective};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/exploration.md")]
    mod exploration {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/reward.md")]
    mod reward {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
