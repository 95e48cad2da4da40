//! Dense 64-bit float tensors with value-immutable, cheaply clonable storage.
//!
//! A tensor optionally carries a reference to the tape node that produced it;
//! see [`crate::numerics::tape`] for the recording machinery.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};

/// Dense array of `f64` values. Rank 0 (empty shape) is a scalar.
///
/// Values are immutable once created; clones share storage. Arithmetic lives
/// in [`crate::numerics::ops`].
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<(Tape, NodeId)>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, data.len(), "shape {shape:?} does not match {} values", data.len());
        Tensor { shape, data: Arc::new(data), node: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(vec![], vec![v])
    }

    /// 1-D tensor, shape `[data.len()]`.
    pub fn column(data: Vec<f64>) -> Self {
        Tensor::from_vec(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; len]), node: None }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![v; len]), node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// Extracts the value of a single-element tensor.
    pub fn value(&self) -> f64 {
        assert_eq!(self.len(), 1, "value() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same values, no tape link.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    pub fn is_on_tape(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&(Tape, NodeId)> {
        self.node.as_ref()
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Arc<Vec<f64>>, node: Option<(Tape, NodeId)>) -> Self {
        Tensor { shape, data, node }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.shape);
        if self.len() <= 8 {
            d.field("data", &self.data);
        } else {
            d.field("data[..4]", &&self.data[..4]).field("len", &self.len());
        }
        d.field("on_tape", &self.node.is_some()).finish()
    }
}

impl Serialize for Tensor {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            shape: &'a [usize],
            data: &'a [f64],
        }
        Repr { shape: &self.shape, data: &self.data }.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            shape: Vec<usize>,
            data: Vec<f64>,
        }
        let r = Repr::deserialize(de)?;
        let len: usize = r.shape.iter().product();
        if len != r.data.len() {
            return Err(serde::de::Error::custom("tensor shape/data length mismatch"));
        }
        Ok(Tensor::from_vec(r.shape, r.data))
    }
}
