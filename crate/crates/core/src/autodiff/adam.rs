use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient. Parameters absent
    /// from `grads` keep their value and moments.
    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<(), AutodiffError> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient { param: name.clone() });
            }
            let p = params
                .get(name)
                .ok_or_else(|| AutodiffError::UnknownParam { param: name.clone() })?;
            if p.shape() != g.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form: `(params, grads, state) -> (params', state')`.
pub fn adam_step(
    params: &ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &AdamState,
) -> Result<(ParamStore, AdamState), AutodiffError> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.update(&mut params, grads)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::scalar(v));
        s
    }

    fn grad(name: &str, v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let params = single("w", 0.7);
        let state = AdamState::new(AdamConfig::default());
        let (p, s) = adam_step(&params, &grad("w", 0.0), &state).unwrap();
        assert_eq!(p, params);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Hand recurrence: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1, Δ = lr·1/(1 + eps).
        let expected = -1e-3 / (1.0 + 1e-8);
        let (p, _) = adam_step(&single("w", 0.0), &grad("w", 1.0), &AdamState::new(AdamConfig::default())).unwrap();
        let got = p.get("w").unwrap().item();
        assert!((got - expected).abs() < 1e-15, "{got}");
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::vector(vec![0.3, -0.1]));
        params.insert("b", Tensor::vector(vec![0.3, -0.1]));
        let mut state = AdamState::new(AdamConfig::default());
        for k in 0..50 {
            let g = Tensor::vector(vec![(k as f64).sin(), (k as f64 * 0.3).cos()]);
            let grads = BTreeMap::from([("a".to_string(), g.clone()), ("b".to_string(), g)]);
            state.update(&mut params, &grads).unwrap();
        }
        assert_eq!(params.get("a"), params.get("b"));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let err = adam_step(&single("enc.0.w", 0.0), &grad("enc.0.w", f64::NAN), &AdamState::new(AdamConfig::default()))
            .unwrap_err();
        assert!(err.to_string().contains("enc.0.w"));
    }
}
