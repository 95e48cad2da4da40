//! Reverse-mode tape: an append-only arena of primitive-operation records.
//!
//! Tensors produced by ops on watched inputs carry a node id; `Tape::grad`
//! replays adjoints over the arena in reverse topological order (which is
//! simply reverse insertion order, since inputs always precede consumers).

use std::sync::Arc;

use parking_lot::Mutex;

use super::ops::Op;
use super::tensor::Tensor;

pub type NodeId = usize;

/// One recorded primitive operation together with its saved output value.
pub(crate) struct Node {
    pub op: Op,
    pub srcs: Vec<Src>,
    pub value: Arc<Vec<f64>>,
    pub shape: Vec<usize>,
}

/// An operation input: either an earlier node or a detached constant.
/// Constants save their values because backward rules may need them,
/// but they never receive adjoints.
pub(crate) enum Src {
    Node(NodeId),
    Const(Arc<Vec<f64>>, Vec<usize>),
}

#[derive(Clone)]
pub struct Tape {
    inner: Arc<Mutex<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { inner: Arc::new(Mutex::new(Vec::new())) }
    }

    pub fn same_tape(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `t` as a differentiable leaf and returns the watched copy.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let id = self.push(Node {
            op: Op::Leaf,
            srcs: vec![],
            value: t.data_arc(),
            shape: t.shape().to_vec(),
        });
        Tensor::with_node(t.shape().to_vec(), t.data_arc(), Some((self.clone(), id)))
    }

    pub(crate) fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.inner.lock();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(crate) fn src_of(&self, t: &Tensor) -> Src {
        match t.node() {
            Some((tape, id)) => {
                assert!(self.same_tape(tape), "tensor belongs to a different tape");
                Src::Node(*id)
            }
            None => Src::Const(t.data_arc(), t.shape().to_vec()),
        }
    }

    /// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
    ///
    /// Returns one tensor per entry of `wrt` (zeros for tensors that did not
    /// participate) plus a flag that is true when `output` is detached from
    /// this tape entirely, in which case all gradients are zero.
    pub fn grad(&self, output: &Tensor, wrt: &[&Tensor]) -> (Vec<Tensor>, bool) {
        assert_eq!(output.len(), 1, "grad requires a scalar output, got shape {:?}", output.shape());
        let zero = |t: &Tensor| Tensor::zeros(t.shape().to_vec());
        let (tape, out_id) = match output.node() {
            Some((tape, id)) => {
                assert!(self.same_tape(tape), "output recorded on a different tape");
                (tape, *id)
            }
            None => return (wrt.iter().map(|t| zero(t)).collect(), true),
        };
        let nodes = tape.inner.lock();
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; out_id + 1];
        adjoints[out_id] = Some(vec![1.0]);
        for id in (0..=out_id).rev() {
            let Some(adj) = adjoints[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                adjoints[id] = Some(adj);
                continue;
            }
            let src_grads = node.op.backward(&adj, node, &nodes);
            debug_assert_eq!(src_grads.len(), node.srcs.len());
            for (src, g) in node.srcs.iter().zip(src_grads) {
                if let (Src::Node(sid), Some(g)) = (src, g) {
                    match &mut adjoints[*sid] {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += b;
                            }
                        }
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        let grads = wrt
            .iter()
            .map(|t| match t.node() {
                Some((tp, id)) if tape.same_tape(tp) && *id <= out_id => match &adjoints[*id] {
                    Some(g) => Tensor::from_vec(t.shape().to_vec(), g.clone()),
                    None => zero(t),
                },
                _ => zero(t),
            })
            .collect();
        (grads, false)
    }
}

pub(crate) fn src_value<'a>(src: &'a Src, nodes: &'a [Node]) -> (&'a [f64], &'a [usize]) {
    match src {
        Src::Node(id) => (&nodes[*id].value, &nodes[*id].shape),
        Src::Const(data, shape) => (data, shape),
    }
}
