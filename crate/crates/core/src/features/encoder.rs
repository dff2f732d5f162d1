use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Bound, Graph, ParamStore, Var};

/// MLP encoder `payload -> ℝ^d` with leaky-ReLU hidden layers. Variational
/// encoders carry an extra log-variance head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub variational: bool,
}

pub struct EncoderOutput {
    pub mean: Var,
    pub logvar: Option<Var>,
}

impl EncoderSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, feature_dim: usize, variational: bool) -> Self {
        assert!(feature_dim >= 1 && input_dim >= 1, "encoder dims must be positive");
        Self {
            input_dim,
            hidden_dims,
            feature_dim,
            variational,
        }
    }

    fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim).chain(self.hidden_dims.iter().copied()).collect()
    }

    /// Encoder parameters under the `enc.` prefix.
    pub fn init_encoder<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut p = ParamStore::new();
        let widths = self.widths();
        for (i, pair) in widths.windows(2).enumerate() {
            p.init_linear(&format!("enc.{i}"), pair[0], pair[1], rng);
        }
        let last = *widths.last().expect("input width");
        p.init_linear("enc.mean", last, self.feature_dim, rng);
        if self.variational {
            p.init_linear("enc.logvar", last, self.feature_dim, rng);
        }
        p
    }

    /// Decoder with the transposed widths, under the `dec.` prefix. The output
    /// layer is linear.
    pub fn init_decoder<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut p = ParamStore::new();
        let mut widths = self.widths();
        widths.push(self.feature_dim);
        widths.reverse();
        for (i, pair) in widths.windows(2).enumerate() {
            p.init_linear(&format!("dec.{i}"), pair[0], pair[1], rng);
        }
        p
    }

    pub fn encode(&self, g: &mut Graph, params: &Bound, input: Var) -> Result<EncoderOutput, AutodiffError> {
        let mut h = input;
        for i in 0..self.hidden_dims.len() {
            h = linear(g, params, &format!("enc.{i}"), h)?;
            h = g.leaky_relu(h)?;
        }
        let mean = linear(g, params, "enc.mean", h)?;
        let logvar = if self.variational { Some(linear(g, params, "enc.logvar", h)?) } else { None };
        Ok(EncoderOutput { mean, logvar })
    }

    pub fn decode(&self, g: &mut Graph, params: &Bound, z: Var) -> Result<Var, AutodiffError> {
        let layers = self.hidden_dims.len() + 1;
        let mut h = z;
        for i in 0..layers {
            h = linear(g, params, &format!("dec.{i}"), h)?;
            if i + 1 < layers {
                h = g.leaky_relu(h)?;
            }
        }
        Ok(h)
    }
}

/// `x · W + b`.
pub fn linear(g: &mut Graph, params: &Bound, prefix: &str, x: Var) -> Result<Var, AutodiffError> {
    let w = params.get(&format!("{prefix}.w"));
    let b = params.get(&format!("{prefix}.b"));
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}
