//! Eager computation graph with reverse-mode differentiation.
//!
//! Nodes are appended during the forward pass and hold their computed value,
//! so the graph is acyclic by construction (parents always have smaller ids).
//! [`Graph::backward`] sweeps the tape once in reverse, visiting each node
//! exactly once, and returns gradients for every node that requires them.

use super::{format_shape, ops, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Primitive operation kinds. Attributes that must not receive gradients
/// (scale factors, channel weights, labels) live inside the variant.
#[derive(Debug, Clone)]
pub enum Op<E> {
    Add,
    Sub,
    Mul,
    Scale(E),
    Relu,
    Conv2d { stride: usize, padding: usize },
    DepthwiseConv2d { stride: usize, padding: usize },
    Dense,
    GlobalAvgPool,
    SpatialMean,
    BilinearUpsample { out_h: usize, out_w: usize },
    Softmax,
    SumSquares,
    Select { index: usize },
    ChannelWeightedSum { weights: Vec<E> },
    CrossEntropy { labels: Vec<usize> },
}

impl<E> Op<E> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "elementwise-multiply",
            Op::Scale(_) => "scalar-scale",
            Op::Relu => "relu",
            Op::Conv2d { .. } => "conv2d",
            Op::DepthwiseConv2d { .. } => "depthwise-conv2d",
            Op::Dense => "dense",
            Op::GlobalAvgPool => "global-average-pool",
            Op::SpatialMean => "spatial-mean",
            Op::BilinearUpsample { .. } => "bilinear-upsample",
            Op::Softmax => "softmax",
            Op::SumSquares => "reduce-sum-of-squares",
            Op::Select { .. } => "select",
            Op::ChannelWeightedSum { .. } => "channel-weighted-sum",
            Op::CrossEntropy { .. } => "cross-entropy",
        }
    }
}

enum NodeKind<E> {
    /// Leaf tensor; `param` marks it as receiving gradients.
    Leaf { param: bool },
    Interior { op: Op<E>, parents: Vec<NodeId> },
}

struct Node<E> {
    kind: NodeKind<E>,
    value: Tensor<E>,
    requires_grad: bool,
}

pub struct Graph<E> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that does not receive a gradient (inputs, constants).
    pub fn input(&mut self, value: Tensor<E>) -> NodeId {
        self.push(Node { kind: NodeKind::Leaf { param: false }, value, requires_grad: false })
    }

    /// Leaf that receives a gradient during [`Graph::backward`].
    pub fn parameter(&mut self, value: Tensor<E>) -> NodeId {
        self.push(Node { kind: NodeKind::Leaf { param: true }, value, requires_grad: true })
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        match &self.nodes[id.0].kind {
            NodeKind::Leaf { .. } => &[],
            NodeKind::Interior { parents, .. } => parents,
        }
    }

    pub fn is_parameter(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].kind, NodeKind::Leaf { param: true })
    }

    fn push(&mut self, node: Node<E>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// Evaluate `op` on `parents` and record the result. All graph-building
    /// methods funnel through here so forward rules live in one place.
    pub fn apply(&mut self, op: Op<E>, parents: &[NodeId]) -> Result<NodeId, TensorError> {
        let inputs: Vec<&Tensor<E>> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = ops::eval(&op, &inputs)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(Node {
            kind: NodeKind::Interior { op, parents: parents.to_vec() },
            value,
            requires_grad,
        }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: E) -> Result<NodeId, TensorError> {
        self.apply(Op::Scale(factor), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::Relu, &[a])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let mut parents = vec![x, w];
        parents.extend(bias);
        self.apply(Op::Conv2d { stride, padding }, &parents)
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let mut parents = vec![x, w];
        parents.extend(bias);
        self.apply(Op::DepthwiseConv2d { stride, padding }, &parents)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId, TensorError> {
        let mut parents = vec![x, w];
        parents.extend(bias);
        self.apply(Op::Dense, &parents)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::GlobalAvgPool, &[x])
    }

    pub fn spatial_mean(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::SpatialMean, &[x])
    }

    pub fn bilinear_upsample(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId, TensorError> {
        self.apply(Op::BilinearUpsample { out_h, out_w }, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(Op::SumSquares, &[x])
    }

    pub fn select(&mut self, x: NodeId, index: usize) -> Result<NodeId, TensorError> {
        self.apply(Op::Select { index }, &[x])
    }

    pub fn channel_weighted_sum(&mut self, x: NodeId, weights: Vec<E>) -> Result<NodeId, TensorError> {
        self.apply(Op::ChannelWeightedSum { weights }, &[x])
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, TensorError> {
        self.apply(Op::CrossEntropy { labels: labels.to_vec() }, &[logits])
    }

    /// Reverse sweep from a scalar `loss` node. Returns an adjoint for every
    /// node on the path from parameters to the loss; plain input leaves get
    /// none. The graph itself is untouched, so construction may continue
    /// afterwards.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>, TensorError> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: format_shape(loss_value.shape()) });
        }
        let mut adjoints: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::full(loss_value.shape(), E::one()));

        for id in (0..=loss.0).rev() {
            if adjoints[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let (op, parents) = match &self.nodes[id].kind {
                NodeKind::Leaf { .. } => continue,
                NodeKind::Interior { op, parents } => (op, parents),
            };
            let inputs: Vec<&Tensor<E>> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let grad = adjoints[id].as_ref().expect("checked above");
            let parent_grads = ops::backward(op, &inputs, &self.nodes[id].value, grad)?;
            for (parent, pg) in parents.iter().zip(parent_grads) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                if let Some(pg) = pg {
                    adjoints[parent.0] = Some(match adjoints[parent.0].take() {
                        None => pg,
                        Some(acc) => ops::eval(&Op::Add, &[&acc, &pg])?,
                    });
                }
            }
        }
        Ok(Gradients { grads: adjoints })
    }

    /// Recompute a node's value from its parents' stored values. Used to
    /// verify that values saved on the graph match a fresh evaluation.
    pub fn recompute(&self, id: NodeId) -> Result<Tensor<E>, TensorError> {
        match &self.nodes[id.0].kind {
            NodeKind::Leaf { .. } => Ok(self.nodes[id.0].value.clone()),
            NodeKind::Interior { op, parents } => {
                let inputs: Vec<&Tensor<E>> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
                ops::eval(op, &inputs)
            }
        }
    }
}

/// Result of a backward sweep, indexed by [`NodeId`].
pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut g = Graph::new();
        let p = g.parameter(Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap());
        let loss = g.sum_squares(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn dense_gradient_wrt_weight_is_input() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::new(&[1, 3], vec![3.0, -1.0, 2.0]).unwrap());
        let w = g.parameter(Tensor::<f64>::zeros(&[1, 3]));
        let y = g.dense(x, w, None).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[3.0, -1.0, 2.0]);
        assert!(grads.get(x).is_none(), "plain inputs receive no gradient");
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let p = g.parameter(Tensor::<f64>::zeros(&[2, 2]));
        let y = g.relu(p).unwrap();
        assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn gradient_accumulates_over_reused_node() {
        // loss = sum_squares(p + p) = 4 * sum_squares(p) => grad = 8p
        let mut g = Graph::new();
        let p = g.parameter(Tensor::<f64>::new(&[1], vec![3.0]).unwrap());
        let s = g.add(p, p).unwrap();
        let loss = g.sum_squares(s).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[24.0]);
    }

    #[test]
    fn graph_replay_matches_saved_values() {
        let mut rng = SplitMix64::new(5);
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::from_fn(&[1, 2, 4, 4], |_| rng.uniform(-1.0, 1.0)));
        let w = g.parameter(Tensor::<f64>::from_fn(&[3, 2, 3, 3], |_| rng.uniform(-1.0, 1.0)));
        let c = g.conv2d(x, w, None, 1, 1).unwrap();
        let r = g.relu(c).unwrap();
        let pool = g.global_avg_pool(r).unwrap();
        let loss = g.sum_squares(pool).unwrap();
        for id in [c, r, pool, loss] {
            assert_eq!(g.recompute(id).unwrap(), *g.value(id));
        }
    }

    #[test]
    fn backward_continues_after_graph_extension() {
        let mut g = Graph::new();
        let p = g.parameter(Tensor::<f64>::new(&[1], vec![2.0]).unwrap());
        let l1 = g.sum_squares(p).unwrap();
        let g1 = g.backward(l1).unwrap();
        assert_eq!(g1.get(p).unwrap().data(), &[4.0]);
        // extend and differentiate again
        let s = g.scale(p, 3.0).unwrap();
        let l2 = g.sum_squares(s).unwrap();
        let g2 = g.backward(l2).unwrap();
        assert_eq!(g2.get(p).unwrap().data(), &[36.0]);
    }
}
