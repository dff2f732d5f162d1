use super::{AutodiffError, Graph, ParamStore, Tensor, Var};

use super::params::Bound;

/// Builds a scalar loss from bound parameters.
pub trait LossFn: Fn(&mut Graph, &Bound) -> Result<Var, AutodiffError> {}
impl<F: Fn(&mut Graph, &Bound) -> Result<Var, AutodiffError>> LossFn for F {}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Smallest distance of a hinge input to its kink at the evaluation point.
    pub kink_margin: f64,
}

/// Relative error with a floor on the denominator, so coordinates whose true
/// gradient is ~0 are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

fn eval(f: &impl LossFn, params: &ParamStore) -> Result<f64, AutodiffError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let root = f(&mut g, &bound)?;
    Ok(g.value(root).item())
}

/// Compares reverse-mode gradients against central differences with step `h`
/// over every scalar of every parameter; returns the maximum relative error.
pub fn grad_check(f: impl LossFn, params: &ParamStore, h: f64) -> Result<GradCheck, AutodiffError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let root = f(&mut g, &bound)?;
    let kink_margin = g.kink_margin();
    let analytic = g.backward(root)?.by_name();

    let mut max_rel_err: f64 = 0.0;
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let grad = &analytic[name];
        for i in 0..tensor.len() {
            let base = tensor.data()[i];
            set(&mut probe, name, i, base + h);
            let plus = eval(&f, &probe)?;
            set(&mut probe, name, i, base - h);
            let minus = eval(&f, &probe)?;
            set(&mut probe, name, i, base);
            let numeric = (plus - minus) / (2.0 * h);
            max_rel_err = max_rel_err.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(GradCheck { max_rel_err, kink_margin })
}

fn set(store: &mut ParamStore, name: &str, i: usize, v: f64) {
    let t: &mut Tensor = store.get_mut(name).expect("probe param");
    t.data_mut()[i] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector((0..8).map(|_| rng.random_range(-2.0..2.0)).collect()));
        let check = grad_check(
            |g: &mut Graph, b: &Bound| {
                let s = g.square(b.get("x"))?;
                g.sum(s)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_err < 1e-6, "{}", check.max_rel_err);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![0.5, -1.0]));
        let check = grad_check(
            |g: &mut Graph, b: &Bound| {
                let z = g.scale(b.get("x"), 0.0)?;
                let s = g.sum(z)?;
                g.add_scalar(s, 4.0)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert_eq!(check.max_rel_err, 0.0);

        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let z = g.scale(bound.get("x"), 0.0).unwrap();
        let s = g.sum(z).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(bound.get("x")).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_relu_matmul_two_by_two() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_rows(&[[0.7, -0.4], [0.3, 1.1]]).unwrap());
        let x = Tensor::from_rows(&[[1.5, -0.5], [0.2, 0.9]]).unwrap();
        let check = grad_check(
            |g: &mut Graph, b: &Bound| {
                let x = g.constant(x.clone());
                let wx = g.matmul(b.get("w"), x)?;
                let r = g.relu(wx)?;
                g.mean(r)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(check.kink_margin > 1e-3);
        assert!(check.max_rel_err < 1e-5);
    }
}
