mod common;

use clea::autodiff::{grad_check, Bound, Graph, ParamStore, Tensor};
use proptest::prelude::*;

#[test]
fn every_loss_passes_finite_differences() {
    for seed in 0..3 {
        for (name, check) in common::gradient_suite(seed) {
            assert!(check.max_rel_err < 1e-4, "{name} seed {seed}: {:?}", check);
        }
    }
}

#[derive(Clone, Debug)]
enum Step {
    Tanh,
    Exp,
    Square,
    Softplus,
    Scale(f64),
    AddScalar(f64),
    MulParam,
    MatmulParam,
    Relu,
    Softmax,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::Tanh),
        Just(Step::Exp),
        Just(Step::Square),
        Just(Step::Softplus),
        (-2.0..2.0f64).prop_map(Step::Scale),
        (-1.0..1.0f64).prop_map(Step::AddScalar),
        Just(Step::MulParam),
        Just(Step::MatmulParam),
        Just(Step::Relu),
        Just(Step::Softmax),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Random op chains over a [3, 4] input: reverse mode agrees with central
    // differences away from kinks.
    #[test]
    fn random_graphs_match_finite_differences(
        steps in prop::collection::vec(step(), 1..7),
        x in prop::collection::vec(-1.0..1.0f64, 12),
        w in prop::collection::vec(-1.0..1.0f64, 16),
        m in prop::collection::vec(-1.0..1.0f64, 12),
    ) {
        let mut params = ParamStore::new();
        params.insert("x", Tensor::new(vec![3, 4], x).unwrap());
        params.insert("w", Tensor::new(vec![4, 4], w).unwrap());
        params.insert("m", Tensor::new(vec![3, 4], m).unwrap());
        let loss = |g: &mut Graph, b: &Bound| {
            let mut v = b.get("x");
            for s in &steps {
                v = match s {
                    Step::Tanh => g.tanh(v)?,
                    // Bounded first so long chains stay finite.
                    Step::Exp => { let t = g.tanh(v)?; g.exp(t)? }
                    Step::Square => g.square(v)?,
                    Step::Softplus => g.softplus(v)?,
                    Step::Scale(c) => g.scale(v, *c)?,
                    Step::AddScalar(c) => g.add_scalar(v, *c)?,
                    Step::MulParam => g.mul(v, b.get("m"))?,
                    Step::MatmulParam => g.matmul(v, b.get("w"))?,
                    Step::Relu => g.relu(v)?,
                    Step::Softmax => g.softmax(v)?,
                };
            }
            let t = g.tanh(v)?;
            g.sum(t)
        };
        let check = grad_check(loss, &params, 1e-6).unwrap();
        prop_assume!(check.kink_margin > 1e-4);
        prop_assert!(check.max_rel_err < 1e-4, "{:?} {:?}", steps, check);
    }
}
