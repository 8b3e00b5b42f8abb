//! Define-by-run reverse-mode graph over [`Tensor`] values.
//!
//! Nodes live on an append-only tape, so tape order is already a topological
//! order and backward is a single reverse sweep. Gradients accumulate
//! additively at fan-out nodes. A graph is single-use: a second `backward`
//! without `reset_grads` is rejected.

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    PixelShuffle {
        input: NodeId,
        scale: usize,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f32,
    },
    Sum {
        input: NodeId,
    },
    /// Mean absolute difference; `target` is a grad-less leaf.
    L1Loss {
        pred: NodeId,
        target: NodeId,
    },
    /// Mean squared difference; `target` is a grad-less leaf.
    L2Loss {
        pred: NodeId,
        target: NodeId,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input: participates in forward only.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable input: receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient populated by `backward`; `None` if the node was not reached
    /// or does not require one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::conv2d_fwd(
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
        )?;
        let rg = self.requires(input) || self.requires(kernel) || self.requires(bias);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
        ))
    }

    /// Elementwise max(x, 0). The subgradient at exactly 0 is fixed to 0.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rg = self.requires(input);
        self.push(out, rg, Op::Relu { input })
    }

    pub fn pixel_shuffle(&mut self, input: NodeId, scale: usize) -> Result<NodeId> {
        let out = ops::pixel_shuffle_fwd(&self.nodes[input.0].value, scale)?;
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::PixelShuffle { input, scale }))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (&self.nodes[lhs.0].value, &self.nodes[rhs.0].value);
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = a.clone();
        for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
            *o += v;
        }
        let rg = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(out, rg, Op::Add { lhs, rhs }))
    }

    pub fn scale(&mut self, input: NodeId, factor: f32) -> NodeId {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            *v *= factor;
        }
        let rg = self.requires(input);
        self.push(out, rg, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.nodes[input.0]
            .value
            .data()
            .iter()
            .map(|&v| v as f64)
            .sum();
        let rg = self.requires(input);
        self.push(Tensor::scalar(total as f32), rg, Op::Sum { input })
    }

    pub fn l1_loss(&mut self, pred: NodeId, target: Tensor) -> Result<NodeId> {
        self.loss_common(pred, target, true)
    }

    pub fn l2_loss(&mut self, pred: NodeId, target: Tensor) -> Result<NodeId> {
        self.loss_common(pred, target, false)
    }

    fn loss_common(&mut self, pred: NodeId, target: Tensor, l1: bool) -> Result<NodeId> {
        let p = &self.nodes[pred.0].value;
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch(format!(
                "loss: pred {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let n = p.numel() as f64;
        let mut acc = 0.0f64;
        if l1 {
            for (a, b) in p.data().iter().zip(target.data()) {
                acc += (*a as f64 - *b as f64).abs();
            }
        } else {
            for (a, b) in p.data().iter().zip(target.data()) {
                let d = *a as f64 - *b as f64;
                acc += d * d;
            }
        }
        let value = Tensor::scalar((acc / n) as f32);
        let rg = self.requires(pred);
        let target_id = self.leaf(target);
        let op = if l1 {
            Op::L1Loss {
                pred,
                target: target_id,
            }
        } else {
            Op::L2Loss {
                pred,
                target: target_id,
            }
        };
        Ok(self.push(value, rg, op))
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += dv;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    /// Clears all gradients so the graph can run backward again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar root. Populates `grad` on every reachable
    /// node that requires one.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Graph(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if self.backward_done {
            return Err(Error::Graph(
                "backward already ran on this graph; call reset_grads first".into(),
            ));
        }
        self.backward_done = true;
        if !self.requires(root) {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op;
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            match op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                } => {
                    let (gi, gk, gb) = ops::conv2d_bwd(
                        &self.nodes[input.0].value,
                        &self.nodes[kernel.0].value,
                        &self.nodes[bias.0].value,
                        &grad_out,
                        self.requires(input),
                        self.requires(kernel),
                        self.requires(bias),
                    );
                    if let Some(g) = gi {
                        self.accumulate(input, g);
                    }
                    if let Some(g) = gk {
                        self.accumulate(kernel, g);
                    }
                    if let Some(g) = gb {
                        self.accumulate(bias, g);
                    }
                }
                Op::Relu { input } => {
                    if self.requires(input) {
                        let mut g = grad_out.clone();
                        for (gv, xv) in g
                            .data_mut()
                            .iter_mut()
                            .zip(self.nodes[input.0].value.data())
                        {
                            if *xv <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                        self.accumulate(input, g);
                    }
                }
                Op::PixelShuffle { input, scale } => {
                    if self.requires(input) {
                        let g = ops::pixel_shuffle_bwd(
                            &grad_out,
                            scale,
                            self.nodes[input.0].value.shape(),
                        );
                        self.accumulate(input, g);
                    }
                }
                Op::Add { lhs, rhs } => {
                    if self.requires(lhs) {
                        self.accumulate(lhs, grad_out.clone());
                    }
                    if self.requires(rhs) {
                        self.accumulate(rhs, grad_out.clone());
                    }
                }
                Op::Scale { input, factor } => {
                    if self.requires(input) {
                        let mut g = grad_out.clone();
                        for v in g.data_mut() {
                            *v *= factor;
                        }
                        self.accumulate(input, g);
                    }
                }
                Op::Sum { input } => {
                    if self.requires(input) {
                        let up = grad_out.item();
                        let shape = self.nodes[input.0].value.shape().to_vec();
                        let mut g = Tensor::zeros(&shape);
                        g.data_mut().fill(up);
                        self.accumulate(input, g);
                    }
                }
                Op::L1Loss { pred, target } => {
                    if self.requires(pred) {
                        let up = grad_out.item();
                        let p = &self.nodes[pred.0].value;
                        let t = &self.nodes[target.0].value;
                        let scale = up / p.numel() as f32;
                        let mut g = Tensor::zeros(p.shape());
                        for ((gv, a), b) in g.data_mut().iter_mut().zip(p.data()).zip(t.data()) {
                            let d = a - b;
                            // subgradient at 0 fixed to 0
                            *gv = if d > 0.0 {
                                scale
                            } else if d < 0.0 {
                                -scale
                            } else {
                                0.0
                            };
                        }
                        self.accumulate(pred, g);
                    }
                }
                Op::L2Loss { pred, target } => {
                    if self.requires(pred) {
                        let up = grad_out.item();
                        let p = &self.nodes[pred.0].value;
                        let t = &self.nodes[target.0].value;
                        let scale = 2.0 * up / p.numel() as f32;
                        let mut g = Tensor::zeros(p.shape());
                        for ((gv, a), b) in g.data_mut().iter_mut().zip(p.data()).zip(t.data()) {
                            *gv = scale * (a - b);
                        }
                        self.accumulate(pred, g);
                    }
                }
            }
            self.nodes[i].grad = Some(grad_out);
        }
        Ok(())
    }

    /// Values feeding each ReLU node, in tape order. Used by linearity
    /// probes to confirm no activation sits on its kink.
    pub fn relu_input_values(&self) -> Vec<&Tensor> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { input } => Some(&self.nodes[input.0].value),
                _ => None,
            })
            .collect()
    }
}
