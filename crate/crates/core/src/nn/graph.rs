//! Reverse-mode autodiff over a per-step tape.
//!
//! A [`Graph`] is built fresh for every training step: leaves are inserted
//! for parameters and inputs, ops append nodes in topological order, and
//! [`Graph::backward`] walks the tape in reverse. Gradients accumulate into
//! per-node slots and are read back by leaf id afterwards.
//!
//! Ops that need forward context for their backward pass (softmax output,
//! attention probabilities, layer-norm statistics) save it inside their op
//! record at construction time.

use crate::error::{Error, Result};
use crate::nn::scalar::Real;
use crate::nn::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Key-padding mask for attention: `padded[row * len + t]` marks key
/// positions that must be skipped entirely (their content can never reach
/// the output, bit for bit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadMask {
    pub rows: usize,
    pub len: usize,
    padded: Vec<bool>,
}

impl PadMask {
    pub fn new(rows: usize, len: usize, padded: Vec<bool>) -> Result<Self> {
        if padded.len() != rows * len {
            return Err(Error::shape("PadMask::new", &[rows, len], &[padded.len()]));
        }
        Ok(PadMask { rows, len, padded })
    }

    /// Builds the mask from per-frame validity (true = real frame).
    pub fn from_frame_valid(batch: usize, len: usize, frame_valid: &[bool]) -> Result<Self> {
        if frame_valid.len() != batch * len {
            return Err(Error::shape(
                "PadMask::from_frame_valid",
                &[batch, len],
                &[frame_valid.len()],
            ));
        }
        Ok(PadMask {
            rows: batch,
            len,
            padded: frame_valid.iter().map(|&v| !v).collect(),
        })
    }

    /// Repeats every row `times` in place-order: row `b` becomes rows
    /// `b*times .. (b+1)*times`. Matches the head-split batch layout.
    pub fn repeat_rows(&self, times: usize) -> Self {
        let mut padded = Vec::with_capacity(self.padded.len() * times);
        for r in 0..self.rows {
            for _ in 0..times {
                padded.extend_from_slice(&self.padded[r * self.len..(r + 1) * self.len]);
            }
        }
        PadMask {
            rows: self.rows * times,
            len: self.len,
            padded,
        }
    }

    #[inline]
    pub(crate) fn row(&self, r: usize) -> &[bool] {
        &self.padded[r * self.len..(r + 1) * self.len]
    }
}

pub(crate) enum Op<F: Real> {
    Leaf,
    /// y = x @ w + b over the last axis of x.
    Linear { x: NodeId, w: NodeId, b: NodeId },
    /// Numerically stable softmax along `axis`; the node value is the saved output.
    Softmax { x: NodeId, axis: usize },
    /// y = gain * xhat + shift over the last axis; saves normalized input and 1/std.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        xhat: Tensor<F>,
        inv_std: Vec<F>,
    },
    /// Fused scaled dot-product attention batched over axis 0; saves probabilities.
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<PadMask>,
        probs: Tensor<F>,
    },
    /// [B, T, d] -> [B*heads, T, d/heads]
    SplitHeads { x: NodeId, heads: usize },
    /// [B*heads, T, d/heads] -> [B, T, d]
    MergeHeads { x: NodeId, heads: usize },
    /// 1-D convolution over the last axis with zero same-padding (odd kernel).
    Conv1d { x: NodeId, w: NodeId, b: NodeId },
    Gelu { x: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Adds a constant table to every index of axis 0 (positional terms).
    /// The table needs no saved copy: the backward pass is the identity.
    AddRows { x: NodeId },
    Permute { x: NodeId, perm: Vec<usize> },
    Reshape { x: NodeId },
    /// Mean squared error over selected (b, t, j) positions, all channels.
    MaskedMse {
        pred: NodeId,
        target: Tensor<F>,
        selected: Vec<bool>,
        inv_denom: F,
    },
    /// Mean negative log-likelihood over the batch; saves softmax probabilities.
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor<F>,
    },
    /// Average over valid frames per clip: [B, T, d] -> [B, d].
    MeanValidFrames {
        x: NodeId,
        valid: Vec<bool>,
        inv_counts: Vec<F>,
    },
}

pub(crate) struct Node<F: Real> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) needs_grad: bool,
}

/// Append-only computation tape.
pub struct Graph<F: Real> {
    pub(crate) nodes: Vec<Node<F>>,
    pub(crate) grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated for `id` by the last [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Runs reverse-mode accumulation from a scalar node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let seed = &self.nodes[loss.0];
        if seed.value.numel() != 1 {
            return Err(Error::shape("backward seed", seed.value.shape(), &[1]));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::filled(seed.value.shape().to_vec(), F::ONE));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            // Take the slot so node values and remaining grads can be
            // borrowed independently while this node propagates.
            let Some(gout) = self.grads[idx].take() else {
                continue;
            };
            crate::nn::ops::propagate(&self.nodes, idx, &gout, &mut self.grads)?;
            self.grads[idx] = Some(gout);
        }
        Ok(())
    }
}

/// Adds `delta` into the gradient slot for `id`, allocating on first touch.
pub(crate) fn accumulate<F: Real>(
    grads: &mut [Option<Tensor<F>>],
    id: NodeId,
    shape: &[usize],
    delta: Vec<F>,
) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (g, d) in existing.data_mut().iter_mut().zip(delta) {
                *g += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape"));
        }
    }
}
