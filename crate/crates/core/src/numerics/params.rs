//! Named parameter sets and gradient extraction.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tape::Tape;
use super::tensor::Tensor;

/// Ordered map from parameter name to tensor. Iteration order is insertion
/// order, which keeps optimizer updates and serialization deterministic.
#[derive(Clone, Default, Serialize, Deserialize)]
pub struct Params {
    map: IndexMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        assert!(self.map.contains_key(name), "unknown parameter {name:?}");
        self.map.insert(name.to_string(), t);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Watched copy: every tensor becomes a leaf on `tape`.
    pub fn watched(&self, tape: &Tape) -> Params {
        Params { map: self.map.iter().map(|(k, v)| (k.clone(), tape.watch(v))).collect() }
    }

    /// Detached copy of every tensor.
    pub fn detached(&self) -> Params {
        Params { map: self.map.iter().map(|(k, v)| (k.clone(), v.detach())).collect() }
    }

    pub fn total_len(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }
}

impl std::fmt::Debug for Params {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.map.iter().map(|(k, v)| (k, v.shape()))).finish()
    }
}

/// Named gradients plus a flag marking a fully detached output, in which case
/// every gradient is zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub values: Params,
    pub detached_output: bool,
}

impl Gradients {
    pub fn zeros_like(params: &Params) -> Gradients {
        let mut values = Params::new();
        for (k, v) in params.iter() {
            values.insert(k.clone(), Tensor::zeros(v.shape().to_vec()));
        }
        Gradients { values, detached_output: false }
    }

    /// Elementwise `self += other`, matching by name.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (k, g) in other.values.iter() {
            let cur = self.values.get(k);
            let sum: Vec<f64> = cur.data().iter().zip(g.data()).map(|(a, b)| a + b).collect();
            let shape = cur.shape().to_vec();
            self.values.set(k, Tensor::from_vec(shape, sum));
        }
    }

    pub fn scale(&mut self, c: f64) {
        let names: Vec<String> = self.values.names().cloned().collect();
        for k in names {
            let cur = self.values.get(&k);
            let t = Tensor::from_vec(cur.shape().to_vec(), cur.data().iter().map(|x| x * c).collect());
            self.values.set(&k, t);
        }
    }

    /// Euclidean norm over all entries.
    pub fn global_norm(&self) -> f64 {
        self.values.iter().flat_map(|(_, t)| t.data().iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Scales so the global norm does not exceed `max`; returns the original.
    pub fn clip_global_norm(&mut self, max: f64) -> f64 {
        assert!(max > 0.0, "clip threshold must be positive");
        let norm = self.global_norm();
        if norm > max {
            self.scale(max / norm);
        }
        norm
    }
}

/// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
///
/// Parameters that did not participate in the computation receive zero
/// gradients; a detached `output` yields all zeros and sets the warning flag.
pub fn grad(output: &Tensor, wrt: &Params) -> Gradients {
    match output.node() {
        Some((tape, _)) => {
            let refs: Vec<&Tensor> = wrt.iter().map(|(_, t)| t).collect();
            let (gs, detached) = tape.grad(output, &refs);
            let mut values = Params::new();
            for ((k, _), g) in wrt.iter().zip(gs) {
                values.insert(k.clone(), g);
            }
            Gradients { values, detached_output: detached }
        }
        None => {
            assert_eq!(output.len(), 1, "grad requires a scalar output");
            let mut g = Gradients::zeros_like(wrt);
            g.detached_output = true;
            g
        }
    }
}
