//! Synthetic behavior databases.
//!
//! Each behavior is generated from a hidden latent vector `z` drawn from a
//! mixture of Gaussian clusters. The learner only ever sees the payload
//! `x = tanh(W2 · tanh(W1 · s ⊙ z)) + σ·ε`, where `W1`, `W2` are frozen random
//! matrices and `s` scales each latent factor. The first `weak_dims` factors
//! are rendered at unit scale while the remaining factors are amplified by
//! `strong_scale`, so most payload variance comes from factors that simulated
//! users do not care about.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;

/// Dense database index, `0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorId(pub usize);

impl fmt::Display for BehaviorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Auditory,
    Kinetic,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Auditory, Modality::Kinetic];

    /// Payload grid `(rows, cols)`; all modalities flatten to 64 values.
    pub fn grid(self) -> (usize, usize) {
        match self {
            Modality::Visual => (8, 8),
            Modality::Auditory => (16, 4),
            Modality::Kinetic => (32, 2),
        }
    }

    pub fn payload_dim(self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Auditory => "auditory",
            Modality::Kinetic => "kinetic",
        }
    }

    /// Observation noise level of the default generator for this modality.
    /// Head-motion traces are the noisiest.
    pub fn default_obs_noise(self) -> f64 {
        match self {
            Modality::Visual => 0.05,
            Modality::Auditory => 0.08,
            Modality::Kinetic => 0.25,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual" => Ok(Modality::Visual),
            "auditory" => Ok(Modality::Auditory),
            "kinetic" => Ok(Modality::Kinetic),
            other => Err(format!("unknown modality `{other}` (visual|auditory|kinetic)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub modality: Modality,
    pub n: usize,
    pub latent_dim: usize,
    pub clusters: usize,
    /// Standard deviation of cluster centers.
    pub center_spread: f64,
    /// Within-cluster standard deviation of the leading `weak_dims` factors.
    pub cluster_std: f64,
    /// Within-cluster standard deviation of the remaining factors.
    pub nuisance_std: f64,
    /// Leading latent factors kept at unit scale.
    pub weak_dims: usize,
    /// Scale applied to the remaining latent factors.
    pub strong_scale: f64,
    pub hidden_width: usize,
    /// Gain on the frozen output projection.
    pub render_gain: f64,
    pub obs_noise: f64,
    pub seed: u64,
    /// Seed of the frozen payload map; `None` shares `seed`. Two databases with
    /// the same map seed are different samples of the same "physics".
    pub map_seed: Option<u64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::for_modality(Modality::Visual)
    }
}

impl GeneratorConfig {
    pub fn for_modality(modality: Modality) -> Self {
        Self {
            modality,
            n: 600,
            latent_dim: 6,
            clusters: 8,
            center_spread: 1.5,
            cluster_std: 0.3,
            nuisance_std: 0.6,
            weak_dims: 2,
            strong_scale: 2.5,
            hidden_width: 32,
            render_gain: 1.5,
            obs_noise: modality.default_obs_noise(),
            seed: 0,
            map_seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), DatabaseError> {
        let bad = |msg: &str| Err(DatabaseError::InvalidConfig(msg.to_string()));
        if self.n < 1 {
            return bad("n must be at least 1");
        }
        if self.latent_dim < 2 {
            return bad("latent_dim must be at least 2");
        }
        if self.clusters < 1 || self.hidden_width < 1 {
            return bad("clusters and hidden_width must be positive");
        }
        if self.weak_dims > self.latent_dim {
            return bad("weak_dims exceeds latent_dim");
        }
        if !(self.obs_noise >= 0.0 && self.cluster_std >= 0.0 && self.nuisance_std >= 0.0 && self.center_spread >= 0.0) {
            return bad("noise and spread parameters must be non-negative");
        }
        Ok(())
    }

    fn latent_scale(&self, j: usize) -> f64 {
        if j < self.weak_dims {
            1.0
        } else {
            self.strong_scale
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Behavior {
    pub id: BehaviorId,
    pub modality: Modality,
    pub payload: Vec<f64>,
    pub summary: Vec<f64>,
    latent: Option<Vec<f64>>,
    cluster: Option<usize>,
}

impl Behavior {
    /// Ground-truth latent factors. Simulation code only: nothing that learns
    /// a feature space can reach this (learners take a [`PayloadTable`]).
    pub fn latent(&self) -> Option<&[f64]> {
        self.latent.as_deref()
    }

    pub fn cluster(&self) -> Option<usize> {
        self.cluster
    }
}

/// Frozen two-layer random map from latent factors to payloads.
struct PayloadMap {
    w1: Vec<f64>, // [hidden, k]
    w2: Vec<f64>, // [dim, hidden]
    hidden: usize,
    k: usize,
    dim: usize,
}

impl PayloadMap {
    fn new(cfg: &GeneratorConfig) -> Self {
        let mut r = rng::stream(cfg.map_seed.unwrap_or(cfg.seed), cfg.modality.as_str(), 0xa11);
        let (k, hidden, dim) = (cfg.latent_dim, cfg.hidden_width, cfg.modality.payload_dim());
        let s1 = 1.0 / (k as f64).sqrt();
        let s2 = cfg.render_gain / (hidden as f64).sqrt();
        let w1 = (0..hidden * k).map(|_| s1 * r.sample::<f64, _>(StandardNormal)).collect();
        let w2 = (0..dim * hidden).map(|_| s2 * r.sample::<f64, _>(StandardNormal)).collect();
        Self { w1, w2, hidden, k, dim }
    }

    fn render(&self, z: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = (0..self.hidden)
            .map(|i| {
                let row = &self.w1[i * self.k..(i + 1) * self.k];
                row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>().tanh()
            })
            .collect();
        (0..self.dim)
            .map(|i| {
                let row = &self.w2[i * self.hidden..(i + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>().tanh()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorDatabase {
    pub modality: Modality,
    pub behaviors: Vec<Behavior>,
    /// Present when the database was generated rather than imported.
    pub config: Option<GeneratorConfig>,
}

/// Generates `n` behaviors with a `k`-dimensional latent space for `modality`
/// under the default generator settings.
pub fn generate_database(modality: Modality, n: usize, k: usize, seed: u64) -> Result<BehaviorDatabase, DatabaseError> {
    BehaviorDatabase::generate(&GeneratorConfig {
        n,
        latent_dim: k,
        seed,
        ..GeneratorConfig::for_modality(modality)
    })
}

impl BehaviorDatabase {
    pub fn generate(cfg: &GeneratorConfig) -> Result<Self, DatabaseError> {
        cfg.validate()?;
        let map = PayloadMap::new(cfg);
        let mut r = rng::stream(cfg.seed, "latents", 0);
        let k = cfg.latent_dim;
        let centers: Vec<Vec<f64>> = (0..cfg.clusters)
            .map(|_| (0..k).map(|_| cfg.center_spread * r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let noise = Normal::new(0.0, cfg.obs_noise.max(f64::MIN_POSITIVE)).expect("std");

        let behaviors = (0..cfg.n)
            .map(|i| {
                let c = r.random_range(0..cfg.clusters);
                let latent: Vec<f64> = (0..k)
                    .map(|j| {
                        let std = if j < cfg.weak_dims { cfg.cluster_std } else { cfg.nuisance_std };
                        centers[c][j] + std * r.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                let scaled: Vec<f64> = latent.iter().enumerate().map(|(j, v)| v * cfg.latent_scale(j)).collect();
                let mut payload = map.render(&scaled);
                if cfg.obs_noise > 0.0 {
                    for p in &mut payload {
                        *p += noise.sample(&mut r);
                    }
                }
                let summary = render_summary_of(cfg.modality, &payload);
                Behavior {
                    id: BehaviorId(i),
                    modality: cfg.modality,
                    payload,
                    summary,
                    latent: Some(latent),
                    cluster: Some(c),
                }
            })
            .collect();
        Ok(Self {
            modality: cfg.modality,
            behaviors,
            config: Some(cfg.clone()),
        })
    }

    /// Builds a database from payloads known only through the map (used in tests
    /// and for constructed toy domains).
    pub fn from_parts(modality: Modality, payloads: Vec<Vec<f64>>, latents: Option<Vec<Vec<f64>>>) -> Self {
        let latents: Vec<Option<Vec<f64>>> = match latents {
            Some(l) => l.into_iter().map(Some).collect(),
            None => vec![None; payloads.len()],
        };
        let behaviors = payloads
            .into_iter()
            .zip(latents)
            .enumerate()
            .map(|(i, (payload, latent))| Behavior {
                id: BehaviorId(i),
                modality,
                summary: render_summary_of(modality, &payload),
                payload,
                latent,
                cluster: None,
            })
            .collect();
        Self {
            modality,
            behaviors,
            config: None,
        }
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }

    pub fn get(&self, id: BehaviorId) -> Option<&Behavior> {
        self.behaviors.get(id.0)
    }

    pub fn contains(&self, id: BehaviorId) -> bool {
        id.0 < self.behaviors.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = BehaviorId> + '_ {
        self.behaviors.iter().map(|b| b.id)
    }

    pub fn has_ground_truth(&self) -> bool {
        self.behaviors.iter().all(|b| b.latent.is_some())
    }

    /// Ground-truth latent of `id`. Panics on databases imported without
    /// ground truth; simulation requires it.
    pub fn latent(&self, id: BehaviorId) -> &[f64] {
        self.behaviors[id.0]
            .latent()
            .expect("simulation requires a database with ground-truth latents")
    }

    /// The learner-facing view: payloads only.
    pub fn payloads(&self) -> PayloadTable {
        let dim = self.modality.payload_dim();
        let data = self.behaviors.iter().flat_map(|b| b.payload.iter().copied()).collect();
        PayloadTable {
            modality: self.modality,
            dim,
            data,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W, with_ground_truth: bool) -> Result<(), DatabaseError> {
        for b in &self.behaviors {
            let rec = BehaviorRecord {
                id: b.id,
                modality: b.modality,
                payload: b.payload.clone(),
                summary: b.summary.clone(),
                latent: if with_ground_truth { b.latent.clone() } else { None },
                cluster: if with_ground_truth { b.cluster } else { None },
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, DatabaseError> {
        let mut behaviors = Vec::new();
        let mut modality = None;
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: BehaviorRecord =
                serde_json::from_str(&line).map_err(|e| DatabaseError::Parse { line: line_no, message: e.to_string() })?;
            if rec.id.0 != behaviors.len() {
                return Err(DatabaseError::Parse {
                    line: line_no,
                    message: format!("expected id {}, found {}", behaviors.len(), rec.id),
                });
            }
            if *modality.get_or_insert(rec.modality) != rec.modality || rec.payload.len() != rec.modality.payload_dim() {
                return Err(DatabaseError::Parse {
                    line: line_no,
                    message: "inconsistent modality or payload size".into(),
                });
            }
            if rec.payload.iter().any(|v| !v.is_finite()) {
                return Err(DatabaseError::Parse { line: line_no, message: "non-finite payload".into() });
            }
            behaviors.push(Behavior {
                id: rec.id,
                modality: rec.modality,
                payload: rec.payload,
                summary: rec.summary,
                latent: rec.latent,
                cluster: rec.cluster,
            });
        }
        let modality = modality.ok_or(DatabaseError::Empty)?;
        Ok(Self {
            modality,
            behaviors,
            config: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BehaviorRecord {
    id: BehaviorId,
    modality: Modality,
    payload: Vec<f64>,
    summary: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cluster: Option<usize>,
}

/// Payload matrix indexed by [`BehaviorId`]. This is everything a feature
/// learner is given about the database.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayloadTable {
    pub modality: Modality,
    pub dim: usize,
    data: Vec<f64>,
}

impl PayloadTable {
    pub fn new(modality: Modality, dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        Self { modality, dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, id: BehaviorId) -> Option<&[f64]> {
        (id.0 < self.len()).then(|| &self.data[id.0 * self.dim..(id.0 + 1) * self.dim])
    }

    pub fn row(&self, id: BehaviorId) -> &[f64] {
        self.get(id).expect("behavior id in range")
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    /// Gathers the rows for `ids` into one flat buffer.
    pub fn gather(&self, ids: &[BehaviorId]) -> Result<Vec<f64>, BehaviorId> {
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            out.extend_from_slice(self.get(id).ok_or(id)?);
        }
        Ok(out)
    }
}

/// Pooled preview of a behavior for gallery display.
pub fn render_summary(behavior: &Behavior) -> Vec<f64> {
    render_summary_of(behavior.modality, &behavior.payload)
}

fn render_summary_of(modality: Modality, payload: &[f64]) -> Vec<f64> {
    let (rows, cols) = modality.grid();
    match modality {
        // 8x8 -> 4x4 mean over 2x2 blocks; 16x4 -> 4x2 mean over 4x2 blocks.
        Modality::Visual => pool(payload, rows, cols, 2, 2),
        Modality::Auditory => pool(payload, rows, cols, 4, 2),
        // Every fourth time step of both joint traces: 8 points per joint.
        Modality::Kinetic => (0..rows).step_by(4).flat_map(|t| payload[t * cols..(t + 1) * cols].to_vec()).collect(),
    }
}

fn pool(payload: &[f64], rows: usize, cols: usize, bh: usize, bw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((rows / bh) * (cols / bw));
    for br in 0..rows / bh {
        for bc in 0..cols / bw {
            let mut s = 0.0;
            for r in br * bh..(br + 1) * bh {
                for c in bc * bw..(bc + 1) * bw {
                    s += payload[r * cols + c];
                }
            }
            out.push(s / (bh * bw) as f64);
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum DatabaseError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("database line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("database file contains no behaviors")]
    Empty,
    #[error("database io: {0}")]
    Io(#[from] std::io::Error),
    #[error("database json: {0}")]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_database(Modality::Auditory, 50, 4, 11).unwrap();
        let b = generate_database(Modality::Auditory, 50, 4, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_database(Modality::Auditory, 50, 4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_payload_is_a_function_of_latent() {
        let cfg = GeneratorConfig {
            n: 200,
            clusters: 1,
            cluster_std: 0.0,
            nuisance_std: 0.0,
            obs_noise: 0.0,
            ..GeneratorConfig::for_modality(Modality::Kinetic)
        };
        let db = BehaviorDatabase::generate(&cfg).unwrap();
        // One zero-width cluster: every latent is the center, so payloads match.
        assert_eq!(db.behaviors[0].latent(), db.behaviors[1].latent());
        assert_eq!(db.behaviors[0].payload, db.behaviors[1].payload);
    }

    #[test]
    fn argument_validation() {
        assert!(generate_database(Modality::Visual, 0, 4, 0).is_err());
        assert!(generate_database(Modality::Visual, 10, 1, 0).is_err());
    }

    #[test]
    fn constant_payload_gives_constant_summary() {
        for m in Modality::ALL {
            let db = BehaviorDatabase::from_parts(m, vec![vec![0.25; 64]], None);
            let s = render_summary(&db.behaviors[0]);
            assert!(s.iter().all(|&v| (v - 0.25).abs() < 1e-15), "{m}");
        }
    }

    #[test]
    fn visual_summary_is_2x2_block_mean() {
        let payload: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let db = BehaviorDatabase::from_parts(Modality::Visual, vec![payload.clone()], None);
        let s = render_summary(&db.behaviors[0]);
        assert_eq!(s.len(), 16);
        // Brute force: each output cell averages its four source pixels.
        for (cell, &v) in s.iter().enumerate() {
            let (br, bc) = (cell / 4, cell % 4);
            let mut acc = Vec::new();
            for r in 0..8 {
                for c in 0..8 {
                    if r / 2 == br && c / 2 == bc {
                        acc.push(payload[r * 8 + c]);
                    }
                }
            }
            let mean = acc.iter().sum::<f64>() / acc.len() as f64;
            assert!((mean - v).abs() < 1e-15);
        }
        assert_eq!(summary_len(Modality::Auditory), 8);
        assert_eq!(summary_len(Modality::Kinetic), 16);
    }

    fn summary_len(m: Modality) -> usize {
        render_summary(&BehaviorDatabase::from_parts(m, vec![vec![0.0; 64]], None).behaviors[0]).len()
    }

    #[test]
    fn jsonl_round_trip_and_ground_truth_flag() {
        let db = generate_database(Modality::Visual, 12, 3, 5).unwrap();
        let mut with = Vec::new();
        db.write_jsonl(&mut with, true).unwrap();
        let back = BehaviorDatabase::read_jsonl(&with[..]).unwrap();
        assert_eq!(back.behaviors, db.behaviors);

        let mut without = Vec::new();
        db.write_jsonl(&mut without, false).unwrap();
        assert!(!String::from_utf8(without.clone()).unwrap().contains("latent"));
        let shipped = BehaviorDatabase::read_jsonl(&without[..]).unwrap();
        assert!(!shipped.has_ground_truth());
        assert_eq!(shipped.payloads(), db.payloads());
    }

    #[test]
    fn payload_table_never_serializes_latents() {
        let db = generate_database(Modality::Kinetic, 5, 3, 1).unwrap();
        let json = serde_json::to_string(&db.payloads()).unwrap();
        assert!(!json.contains("latent"));
    }
}
