//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the library routine it is checking.
#![allow(dead_code)]

use clea::autodiff::{grad_check, AutodiffError, Bound, GradCheck, Graph, ParamStore, Tensor, Var};
use clea::eval::{metrics, nearest};
use clea::features::{losses, EncoderSpec, FeatureTable};
use clea::reward::{
    bt_probability, decompose_ranking, pair_loss, LinearRewardPosterior, MhConfig, PairwiseComparison, RankingRecord,
    RewardMode, RewardNet,
};
use clea::rng::stream;
use clea::BehaviorId;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-6;
pub const KINK_GUARD: f64 = 1e-4;

fn gaussian(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Redraws the instance until no hinge sits within `KINK_GUARD` of its kink.
fn checked(
    name: &str,
    seed: u64,
    build: impl Fn(&mut ChaCha8Rng) -> (ParamStore, Box<dyn Fn(&mut Graph, &Bound) -> Result<Var, AutodiffError>>),
) -> (String, GradCheck) {
    for attempt in 0..50 {
        let mut r = stream(seed, name, attempt);
        let (params, loss) = build(&mut r);
        let check = grad_check(|g: &mut Graph, b: &Bound| loss(g, b), &params, H).unwrap();
        if check.kink_margin > KINK_GUARD {
            return (name.to_string(), check);
        }
    }
    panic!("{name}: every draw landed on a kink");
}

fn hinge_rows(g: &mut Graph, a: Var, p: Var, n: Var, alpha: f64) -> Result<Var, AutodiffError> {
    let dap = g.sub(a, p)?;
    let dap = g.square(dap)?;
    let dap = g.sum_rows(dap)?;
    let dan = g.sub(a, n)?;
    let dan = g.square(dan)?;
    let dan = g.sum_rows(dan)?;
    let gap = g.sub(dap, dan)?;
    let gap = g.add_scalar(gap, alpha)?;
    g.max_const(gap, 0.0)
}

/// Finite-difference checks of every training loss and the reward-net
/// forward pass.
pub fn gradient_suite(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let (b, d, input) = (6, 3, 8);

    out.push(checked("triplet", seed, |r| {
        let mut p = ParamStore::new();
        for k in ["a", "p", "n"] {
            p.insert(k, gaussian(r, &[b, d], 1.0));
        }
        (p, Box::new(|g, bd| {
            let h = hinge_rows(g, bd.get("a"), bd.get("p"), bd.get("n"), 0.9)?;
            g.sum(h)
        }))
    }));
    out.push(checked("symmetric_triplet", seed, |r| {
        let mut p = ParamStore::new();
        for k in ["a", "p", "n"] {
            p.insert(k, gaussian(r, &[b, d], 1.0));
        }
        (p, Box::new(|g, bd| {
            let h = losses::symmetric_triplet_rows(g, bd.get("a"), bd.get("p"), bd.get("n"), 0.9)?;
            g.sum(h)
        }))
    }));
    out.push(checked("clea_batch", seed, |r| {
        let spec = EncoderSpec::new(input, vec![5], d, false);
        let params = spec.init_encoder(r);
        let x = gaussian(r, &[3 * b, input], 1.0);
        let w: Vec<f64> = (0..b).map(|_| r.random_range(0.1..1.0)).collect();
        (params, Box::new(move |g, bd| {
            let xv = g.constant(x.clone());
            let f = spec.encode(g, bd, xv)?.mean;
            losses::weighted_clea_loss(g, f, &w, 0.5)
        }))
    }));
    out.push(checked("reconstruction", seed, |r| {
        let spec = EncoderSpec::new(input, vec![5], d, false);
        let mut params = spec.init_encoder(r);
        params.extend(spec.init_decoder(r));
        let x = gaussian(r, &[b, input], 1.0);
        (params, Box::new(move |g, bd| {
            let xv = g.constant(x.clone());
            let z = spec.encode(g, bd, xv)?.mean;
            let y = spec.decode(g, bd, z)?;
            losses::reconstruction_loss(g, y, xv)
        }))
    }));
    out.push(checked("kl", seed, |r| {
        let mut p = ParamStore::new();
        p.insert("mean", gaussian(r, &[b, d], 1.0));
        p.insert("logvar", gaussian(r, &[b, d], 0.5));
        (p, Box::new(|g, bd| losses::kl_loss(g, bd.get("mean"), bd.get("logvar"))))
    }));
    out.push(checked("ranking_loss", seed, |r| {
        let net = RewardNet::init(d, &[7, 5], &RewardMode::Features, r.random());
        let rows: Vec<f64> = (0..2 * b * d).map(|_| r.sample(StandardNormal)).collect();
        let params = net.params.clone();
        (params, Box::new(move |g, bd| pair_loss(g, &net, bd, rows.clone(), b, 0.01)))
    }));
    out.push(checked("reward_forward", seed, |r| {
        let mode = RewardMode::Direct {
            hidden_dims: vec![6],
            feature_dim: d,
        };
        let net = RewardNet::init(input, &[5], &mode, r.random());
        let x = gaussian(r, &[b, input], 1.0);
        let probe = gaussian(r, &[b, 1], 1.0);
        let params = net.params.clone();
        (params, Box::new(move |g, bd| {
            let xv = g.constant(x.clone());
            let y = net.forward(g, bd, xv)?;
            let w = g.constant(probe.clone());
            let s = g.mul(y, w)?;
            g.sum(s)
        }))
    }));
    out
}

// ---- brute-force re-implementations ----

/// Every (loser, winner) pair implied by a worst-to-best ranking.
pub fn brute_pairs(r: &RankingRecord) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..r.sigma.len() {
        for b in 0..r.sigma.len() {
            if a < b {
                out.push((r.query[r.sigma[a]].0, r.query[r.sigma[b]].0));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Logistic form, independent of the softplus route in the library.
pub fn brute_bt(r_i: f64, r_j: f64) -> f64 {
    1.0 / (1.0 + (r_i - r_j).exp())
}

pub fn brute_triplet(a: &[f64], p: &[f64], n: &[f64], alpha: f64) -> f64 {
    let mut dap = 0.0;
    let mut dan = 0.0;
    for i in 0..a.len() {
        dap += (a[i] - p[i]).powi(2);
        dan += (a[i] - n[i]).powi(2);
    }
    let l = dap - dan + alpha;
    if l > 0.0 {
        l
    } else {
        0.0
    }
}

pub fn brute_nearest(rows: &[Vec<f64>], point: &[f64], skip: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        let d: f64 = row.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Left Riemann sum of a unit-step curve over its length.
pub fn brute_auc(curve: &[f64]) -> f64 {
    let mut area = 0.0;
    for &c in curve {
        area += c;
    }
    area / curve.len() as f64
}

#[derive(Debug)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub instances: usize,
    /// Largest absolute difference for numeric oracles; mismatches for
    /// combinatorial ones.
    pub max_err: f64,
    pub mismatches: usize,
}

impl OracleOutcome {
    pub fn pass(&self) -> bool {
        self.mismatches == 0 && self.max_err <= 1e-9
    }
}

pub fn oracle_suite(seed: u64, instances: usize) -> Vec<OracleOutcome> {
    let mut r = stream(seed, "oracles", 0);
    let mut out = Vec::new();

    let mut mism = 0;
    for _ in 0..instances {
        let k = r.random_range(2..8);
        let mut ids: Vec<usize> = (0..40).collect();
        ids.shuffle(&mut r);
        let query: Vec<BehaviorId> = ids[..k].iter().map(|&i| BehaviorId(i)).collect();
        let mut sigma: Vec<usize> = (0..k).collect();
        sigma.shuffle(&mut r);
        let rec = RankingRecord::new(query, sigma, false).unwrap();
        let mut got: Vec<(usize, usize)> = decompose_ranking(&rec).unwrap().iter().map(|c| (c.loser.0, c.winner.0)).collect();
        got.sort_unstable();
        mism += (got != brute_pairs(&rec)) as usize;
    }
    out.push(OracleOutcome { name: "ranking_decomposition", instances, max_err: 0.0, mismatches: mism });

    let mut err: f64 = 0.0;
    for _ in 0..instances {
        let (a, b) = (r.random_range(-30.0..30.0), r.random_range(-30.0..30.0));
        err = err.max((bt_probability(a, b) - brute_bt(a, b)).abs());
    }
    out.push(OracleOutcome { name: "bradley_terry", instances, max_err: err, mismatches: 0 });

    let mut err: f64 = 0.0;
    for _ in 0..instances {
        let d = r.random_range(1..6);
        let v = |r: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| r.random_range(-2.0..2.0)).collect() };
        let (a, p, n) = (v(&mut r), v(&mut r), v(&mut r));
        let alpha = r.random_range(0.0..3.0);
        err = err.max((clea::features::triplet_loss(&a, &p, &n, alpha).unwrap() - brute_triplet(&a, &p, &n, alpha)).abs());
        let sym = brute_triplet(&a, &p, &n, alpha) + brute_triplet(&p, &a, &n, alpha);
        err = err.max((clea::features::symmetric_triplet_loss(&a, &p, &n, alpha).unwrap() - sym).abs());
    }
    out.push(OracleOutcome { name: "triplet_losses", instances, max_err: err, mismatches: 0 });

    let mut mism = 0;
    for _ in 0..instances {
        let (n, d) = (r.random_range(2..30), r.random_range(1..5));
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let point: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let skip: Vec<usize> = (0..n).filter(|_| r.random_bool(0.3)).collect();
        let table = FeatureTable::from_rows(&rows);
        let got = nearest(&table, &point, |id| skip.contains(&id.0)).map(|(id, _)| id.0);
        mism += (got != brute_nearest(&rows, &point, &skip)) as usize;
    }
    out.push(OracleOutcome { name: "nearest_neighbor", instances, max_err: 0.0, mismatches: mism });

    let mut err: f64 = 0.0;
    for _ in 0..instances {
        let curve: Vec<f64> = (0..r.random_range(1..200)).map(|_| r.random_range(-1.0..1.0)).collect();
        err = err.max((metrics::auc(&curve) - brute_auc(&curve)).abs());
    }
    out.push(OracleOutcome { name: "auc", instances, max_err: err, mismatches: 0 });
    out
}

// ---- posterior oracle ----

pub const GRID: usize = 64;
/// Grid cells per side of a total-variation bin.
pub const BLOCK: usize = 8;

pub struct PosteriorCase {
    pub diffs: Vec<[f64; 2]>,
    pub tv: f64,
}

fn cell_center(i: usize) -> f64 {
    -1.0 + (i as f64 + 0.5) * 2.0 / GRID as f64
}

/// Dense-grid posterior over the unit disk, binned into `BLOCK × BLOCK`
/// blocks of cells.
pub fn grid_posterior(diffs: &[[f64; 2]], rationality: f64) -> Vec<f64> {
    let bins = GRID / BLOCK;
    let mut mass = vec![0.0; bins * bins];
    let mut total = 0.0;
    for i in 0..GRID {
        for j in 0..GRID {
            let w = [cell_center(i), cell_center(j)];
            if w[0] * w[0] + w[1] * w[1] > 1.0 {
                continue;
            }
            let mut ll = 0.0;
            for d in diffs {
                let s = rationality * (w[0] * d[0] + w[1] * d[1]);
                ll += -(1.0 + (-s).exp()).ln();
            }
            let p = ll.exp();
            mass[(i / BLOCK) * bins + j / BLOCK] += p;
            total += p;
        }
    }
    mass.iter().map(|m| m / total).collect()
}

fn bin_of(x: f64) -> usize {
    (((x + 1.0) / 2.0 * GRID as f64).floor().clamp(0.0, GRID as f64 - 1.0) as usize) / BLOCK
}

pub fn oracle_mh() -> MhConfig {
    MhConfig {
        samples: 40_000,
        burn_in: 2_000,
        thinning: 2,
        proposal_std: 0.3,
        rationality: 3.0,
    }
}

/// Total variation between MH samples and the grid posterior for `sets`
/// random comparison sets of at most 20 pairs.
pub fn posterior_suite(seed: u64, sets: usize) -> Vec<PosteriorCase> {
    let cfg = oracle_mh();
    (0..sets)
        .map(|s| {
            let mut r = stream(seed, "posterior-set", s as u64);
            let n = r.random_range(1..=20);
            let mut post = LinearRewardPosterior::new(2, cfg.clone(), r.random());
            let mut diffs = Vec::new();
            for k in 0..n {
                let l = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
                let w = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
                let c = PairwiseComparison {
                    loser: BehaviorId(2 * k),
                    winner: BehaviorId(2 * k + 1),
                };
                post.observe(c, &l, &w).unwrap();
                diffs.push([w[0] - l[0], w[1] - l[1]]);
            }
            let oracle = grid_posterior(&diffs, cfg.rationality);
            let bins = GRID / BLOCK;
            let mut hist = vec![0.0; bins * bins];
            for sample in post.samples() {
                hist[bin_of(sample[0]) * bins + bin_of(sample[1])] += 1.0 / post.samples().len() as f64;
            }
            let tv = 0.5 * hist.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum::<f64>();
            PosteriorCase { diffs, tv }
        })
        .collect()
}

/// Mean sample norm of the prior-only chain.
pub fn prior_mean_norm(dim: usize, seed: u64) -> f64 {
    let cfg = MhConfig {
        samples: 40_000,
        burn_in: 2_000,
        thinning: 2,
        proposal_std: 0.5,
        rationality: 1.0,
    };
    let post = LinearRewardPosterior::new(dim, cfg, seed);
    post.samples().iter().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / post.samples().len() as f64
}

// ---- convergence with oracle features ----

/// Sharper likelihood and a longer chain for the noiseless convergence
/// check.
pub fn convergence_mh() -> MhConfig {
    MhConfig {
        samples: 100,
        burn_in: 1_000,
        thinning: 5,
        proposal_std: 0.05,
        rationality: 20.0,
    }
}

/// Final alignment with `ω*` after `queries` noiseless comparisons of random
/// pairs of behaviors, the feature table being the latent factors.
pub fn oracle_convergence(seed: u64, queries: usize) -> f64 {
    let db = clea::behaviors::BehaviorDatabase::generate(&clea::GeneratorConfig {
        seed,
        ..clea::GeneratorConfig::for_modality(clea::Modality::Visual)
    })
    .unwrap();
    let k = db.config.as_ref().unwrap().latent_dim;
    let rows: Vec<Vec<f64>> = db.ids().map(|id| db.latent(id).to_vec()).collect();
    let table = FeatureTable::from_rows(&rows);
    let mut r = stream(seed, "convergence", 0);
    let omega: Vec<f64> = {
        let g: Vec<f64> = (0..k).map(|_| r.sample(StandardNormal)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        g.iter().map(|v| v / n).collect()
    };
    let utility = |id: BehaviorId| -> f64 { omega.iter().zip(table.row(id)).map(|(a, b)| a * b).sum() };
    let mut comparisons = Vec::with_capacity(queries);
    while comparisons.len() < queries {
        let a = BehaviorId(r.random_range(0..db.len()));
        let b = BehaviorId(r.random_range(0..db.len()));
        if a == b {
            continue;
        }
        let (loser, winner) = if utility(a) < utility(b) { (a, b) } else { (b, a) };
        comparisons.push(PairwiseComparison { loser, winner });
    }
    let mut post = LinearRewardPosterior::new(k, convergence_mh(), seed);
    post.observe_all(&comparisons, &table).unwrap();
    clea::reward::alignment(post.samples(), &omega).unwrap().value
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let sum_cells: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let sum_a: f64 = table.iter().map(|row| c2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|row| row[j]).sum())).sum();
    let expected = sum_a * sum_b / c2(a.len() as u64);
    let max = 0.5 * (sum_a + sum_b);
    (sum_cells - expected) / (max - expected)
}

/// Lloyd's k-means with k-means++ seeding; returns labels.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64, iters: usize) -> Vec<usize> {
    let mut r = stream(seed, "kmeans", 0);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rows[r.random_range(0..rows.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = rows.iter().map(|x| centers.iter().map(|c| sq(x, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let mut t = r.random_range(0.0..total);
        let mut pick = rows.len() - 1;
        for (i, di) in d.iter().enumerate() {
            if t < *di {
                pick = i;
                break;
            }
            t -= di;
        }
        centers.push(rows[pick].clone());
    }
    let mut labels = vec![0; rows.len()];
    for _ in 0..iters {
        for (i, x) in rows.iter().enumerate() {
            labels[i] = (0..k).min_by(|&a, &b| sq(x, &centers[a]).total_cmp(&sq(x, &centers[b]))).unwrap();
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..center.len() {
                center[j] = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    labels
}
