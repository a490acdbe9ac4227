//! Named parameter tensors and their binding onto a [`Graph`].

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Graph, Tensor, Var};

/// Ordered map of parameter name to tensor. Iteration order is the sorted name order,
/// which every serialisation and optimizer pass relies on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.dim())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rounds every element to the nearest `f32`, the storage precision of checkpoints.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Inserts every parameter as a trainable leaf.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|(k, v)| (k.clone(), g.param(v))).collect(),
        }
    }
}

/// Parameter name to graph node.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Panics on an unknown name: parameter sets are validated on construction and load.
    pub fn p(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Seeded initialiser used by every module's parameter constructor.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor {
        Tensor::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            z * std
        })
    }

    /// Weight for a `fan_in -> fan_out` linear map, std `1/sqrt(fan_in)`.
    pub fn linear(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.normal(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::zeros((rows, cols))
    }

    pub fn ones(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::ones((rows, cols))
    }
}

/// Registers a `fan_in -> fan_out` affine layer as `{prefix}.w` and `{prefix}.b`.
pub fn add_linear(store: &mut ParamStore, init: &mut Init, prefix: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{prefix}.w"), init.linear(fan_in, fan_out));
    store.insert(format!("{prefix}.b"), init.zeros(1, fan_out));
}

/// `x · W + b` for a layer registered with [`add_linear`].
pub fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Var {
    let w = p.p(&format!("{prefix}.w"));
    let b = p.p(&format!("{prefix}.b"));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

pub fn add_layer_norm(store: &mut ParamStore, init: &mut Init, prefix: &str, dim: usize) {
    store.insert(format!("{prefix}.g"), init.ones(1, dim));
    store.insert(format!("{prefix}.b"), init.zeros(1, dim));
}

pub const LN_EPS: f64 = 1e-5;

pub fn layer_norm(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Var {
    let gamma = p.p(&format!("{prefix}.g"));
    let beta = p.p(&format!("{prefix}.b"));
    let n = g.layer_norm(x, LN_EPS);
    let n = g.mul_row(n, gamma);
    g.add_row(n, beta)
}
