//! Multilayer perceptrons recorded on the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{DiffError, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        let ok = self.input_dim >= 1 && self.output_dim >= 1 && self.hidden_dims.iter().all(|&h| h >= 1);
        if ok {
            Ok(())
        } else {
            Err(DiffError::Domain {
                op: "mlp_spec",
                detail: format!("all dims must be >= 1, got {self:?}"),
            })
        }
    }

    /// (fan_in, fan_out) of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}layer{layer}.weight")
    }

    pub fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}layer{layer}.bias")
    }
}

/// Glorot-uniform weight in `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Appends an affine layer `name.weight` (fan_in x fan_out) and `name.bias`.
pub fn add_affine(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let limit = glorot_limit(fan_in, fan_out);
    store.add_group(&format!("{name}.weight"), fan_in, fan_out, || {
        rng.random_range(-limit..=limit)
    });
    store.add_group(&format!("{name}.bias"), 1, fan_out, || 0.0);
}

/// Adds the layers of `spec` under `prefix` to `store`.
pub fn add_mlp_params(store: &mut ParamStore, spec: &MlpSpec, prefix: &str, rng: &mut impl Rng) {
    for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        add_affine(store, &format!("{prefix}layer{layer}"), fan_in, fan_out, rng);
    }
}

/// Fresh parameters for `spec` plus a zero `logZ` group.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    add_mlp_params(&mut store, spec, "", &mut rng);
    store.add_group("logZ", 1, 1, || 0.0);
    store
}

/// Records `x W + b` for one affine layer.
pub fn affine(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var, DiffError> {
    let w = tape.param(store, &format!("{name}.weight"));
    let b = tape.param(store, &format!("{name}.bias"));
    let xw = tape.matmul(x, w)?;
    tape.add_row_bias(xw, b)
}

pub fn activate(tape: &mut Tape, act: Activation, x: Var) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Forward pass over a batch: `input` is n x input_dim, the result n x output_dim
/// raw logits (no activation after the last layer).
pub fn mlp_forward(
    tape: &mut Tape,
    spec: &MlpSpec,
    store: &ParamStore,
    prefix: &str,
    input: Var,
) -> Result<Var, DiffError> {
    let shape = tape.value(input).shape();
    if shape.1 != spec.input_dim {
        return Err(DiffError::ShapeMismatch {
            op: "mlp_forward",
            left: shape,
            right: (shape.0, spec.input_dim),
        });
    }
    let n_layers = spec.hidden_dims.len() + 1;
    let mut h = input;
    for layer in 0..n_layers {
        h = affine(tape, store, &format!("{prefix}layer{layer}"), h)?;
        if layer + 1 < n_layers {
            h = activate(tape, spec.activation, h);
        }
    }
    Ok(h)
}

/// Tape-free evaluation of the same network.
pub fn mlp_eval(spec: &MlpSpec, store: &ParamStore, prefix: &str, input: &Matrix) -> Result<Matrix, DiffError> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = mlp_forward(&mut tape, spec, store, prefix, x)?;
    Ok(tape.value(y).clone())
}
