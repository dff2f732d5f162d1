mod common;

use clea::autodiff::{Graph, Tensor};
use clea::behaviors::BehaviorDatabase;
use clea::exploration::{ExplorationPage, TripletSampler};
use clea::features::{objective_loss, train_feature_space, Batch, EncoderSpec, TrainData};
use clea::rng::stream;
use clea::{BehaviorId, GeneratorConfig, Hyper, Modality, Objective, Weighting};
use rand::Rng;

#[test]
fn library_matches_brute_force() {
    for o in common::oracle_suite(7, 500) {
        assert!(o.pass(), "{o:?}");
    }
}

#[test]
fn mh_matches_grid_posterior() {
    for (i, case) in common::posterior_suite(11, 10).iter().enumerate() {
        assert!(case.tv < 0.1, "set {i} ({} pairs): tv {}", case.diffs.len(), case.tv);
    }
}

#[test]
fn prior_norm_matches_ball_moment() {
    for d in [2, 3, 6] {
        let m = common::prior_mean_norm(d, 5);
        let expected = d as f64 / (d as f64 + 1.0);
        assert!((m - expected).abs() < 0.02, "d={d}: {m} vs {expected}");
    }
}

#[test]
fn grid_oracle_is_uniform_without_data() {
    let p = common::grid_posterior(&[], 1.0);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // Symmetric blocks carry equal mass.
    let bins = common::GRID / common::BLOCK;
    assert!((p[0] - p[bins * bins - 1]).abs() < 1e-12);
}

#[test]
fn payloads_retain_cluster_structure() {
    let db = BehaviorDatabase::generate(&GeneratorConfig {
        n: 1000,
        latent_dim: 6,
        clusters: 8,
        seed: 3,
        ..GeneratorConfig::for_modality(Modality::Visual)
    })
    .unwrap();
    let rows: Vec<Vec<f64>> = db.behaviors.iter().map(|b| b.payload.clone()).collect();
    let truth: Vec<usize> = db.behaviors.iter().map(|b| b.cluster().unwrap()).collect();
    let best = (0..5)
        .map(|s| common::adjusted_rand(&common::kmeans(&rows, 8, s, 50), &truth))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(best > 0.5, "adjusted rand {best}");
}

#[test]
fn adjusted_rand_examples() {
    assert!((common::adjusted_rand(&[0, 0, 1, 1], &[1, 1, 0, 0]) - 1.0).abs() < 1e-12);
    assert!(common::adjusted_rand(&[0, 1, 0, 1, 0, 1], &[0, 0, 0, 1, 1, 1]) < 0.0);
}

#[test]
fn visual_summary_is_block_mean() {
    let db = clea::behaviors::generate_database(Modality::Visual, 5, 3, 1).unwrap();
    for b in &db.behaviors {
        for bi in 0..4 {
            for bj in 0..4 {
                let mut s = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        s += b.payload[(2 * bi + i) * 8 + 2 * bj + j];
                    }
                }
                assert!((b.summary[bi * 4 + bj] - s / 4.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn learners_only_see_payloads() {
    let db = clea::behaviors::generate_database(Modality::Kinetic, 50, 4, 2).unwrap();
    let payloads = db.payloads();
    // The training input type carries payload values and nothing else.
    let json = serde_json::to_value(&payloads).unwrap();
    let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["data", "dim", "modality"]);
    assert_eq!(payloads.flat().len(), 50 * 64);
    let _ = TrainData {
        payloads: &payloads,
        pages: &[],
        auxiliary: None,
    };
}

/// Two payload clusters; every page explores cluster one only.
fn toy_log(seed: u64) -> (clea::PayloadTable, Vec<ExplorationPage>) {
    let mut r = stream(seed, "toy", 0);
    let center: Vec<Vec<f64>> = (0..2).map(|_| (0..64).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|i| center[i % 2].iter().map(|c| c + 0.1 * r.random_range(-1.0..1.0)).collect())
        .collect();
    let db = BehaviorDatabase::from_parts(Modality::Visual, rows, None);
    let pages = (0..10)
        .map(|p| {
            let presented: Vec<BehaviorId> = (0..20).map(|i| BehaviorId((p * 7 + i * 3) % 100)).collect();
            let explored = presented.iter().copied().filter(|id| id.0 % 2 == 0).collect();
            ExplorationPage::from_actions(format!("p{p}"), "toy", p + 1, presented, explored).unwrap()
        })
        .collect();
    (db.payloads(), pages)
}

#[test]
fn clea_separates_a_separable_log() {
    let (payloads, pages) = toy_log(1);
    let hyper = Hyper {
        alpha: 1.0,
        epochs: 40,
        ..Hyper::default()
    };
    let data = TrainData {
        payloads: &payloads,
        pages: &pages,
        auxiliary: None,
    };
    let (_, report) = train_feature_space(Objective::Clea, &[16], 2, data, &hyper, 3).unwrap();
    let rate = report.margin_violation_rate.unwrap();
    assert!(rate < 0.05, "margin violation rate {rate}");
}

#[test]
fn clea_ae_is_clea_plus_reconstruction() {
    let (payloads, pages) = toy_log(2);
    let sampler = TripletSampler::new(&pages, Weighting::TimeLinear).unwrap();
    let triplets = sampler.sample_batch(12, &mut stream(4, "b", 0));
    let ids: Vec<BehaviorId> = triplets
        .iter()
        .map(|t| t.anchor)
        .chain(triplets.iter().map(|t| t.positive))
        .chain(triplets.iter().map(|t| t.negative))
        .collect();
    let inputs = Tensor::new(vec![ids.len(), 64], payloads.gather(&ids).unwrap()).unwrap();
    let batch = Batch {
        inputs,
        weights: Some(triplets.iter().map(|t| t.weight).collect()),
        eps: None,
    };
    let spec = EncoderSpec::new(64, vec![8], 3, false);
    let mut r = stream(5, "init", 0);
    let mut params = spec.init_encoder(&mut r);
    params.extend(spec.init_decoder(&mut r));
    // A margin wide enough that some hinges are active.
    let hyper = Hyper {
        alpha: 50.0,
        ..Hyper::default()
    };
    let value = |o: Objective| {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let t = objective_loss(&mut g, o, &spec, &b, &batch, &hyper).unwrap();
        g.value(t.total).item()
    };
    let (both, clea, ae) = (value(Objective::CleaAe), value(Objective::Clea), value(Objective::Ae));
    assert!((both - (clea + ae)).abs() < 1e-9, "{both} vs {clea} + {ae}");
    assert!(clea > 0.0 && ae > 0.0);
}

#[test]
fn noiseless_oracle_features_converge() {
    // A cheap subset; the acceptance harness runs all twenty seeds.
    for seed in 0..3 {
        let a = common::oracle_convergence(seed, 100);
        assert!(a > 0.9, "seed {seed}: {a}");
    }
}
