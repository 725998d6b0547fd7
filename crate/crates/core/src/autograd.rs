//! Tape-based reverse-mode differentiation over batched tensors.
//!
//! A [`Graph`] records every operation as it is applied; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients for every node that
//! depends on a trainable leaf.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom, Padding};
use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Real> {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    Upsample {
        input: Var,
        factor: usize,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Bce {
        pred: Var,
        target: Var,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (out, geom, cols) =
            ops::conv2d_batched(self.value(input), self.value(kernels), self.value(bias), stride, padding)?;
        let rg = self.needs(&[input, kernels, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = ops::dense_batched(self.value(input), self.value(weights), self.value(bias))?;
        let rg = self.needs(&[input, weights, bias]);
        Ok(self.push(
            out,
            Op::Dense {
                input,
                weights,
                bias,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.needs(&[input]);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = ops::sigmoid(self.value(input));
        let rg = self.needs(&[input]);
        self.push(out, Op::Sigmoid(input), rg)
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool_batched(self.value(input))?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool(input), rg))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_batched(self.value(input), factor)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Upsample { input, factor }, rg))
    }

    /// Inverted dropout; an identity node when not training.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        let x = self.value(input);
        let mask = if training && rate > 0.0 {
            ops::dropout_mask(x.numel(), rate, rng)?
        } else {
            vec![T::ONE; x.numel()]
        };
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Dropout { input, mask }, rg))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::mse_loss(self.value(pred), self.value(target))?;
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, rg))
    }

    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::bce_loss(self.value(pred), self.value(target))?;
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { pred, target }, rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::ONE));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let acc = |v: Var, d: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d {
                    input,
                    kernels,
                    bias,
                    geom,
                    cols,
                } => {
                    let need_input = self.nodes[input.0].requires_grad;
                    let (dx, dk, db) =
                        ops::conv2d_backward(geom, cols, self.value(*kernels), &g, need_input);
                    if let Some(dx) = dx {
                        acc(*input, dx, &mut grads);
                    }
                    acc(*kernels, dk, &mut grads);
                    acc(*bias, db, &mut grads);
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let need_input = self.nodes[input.0].requires_grad;
                    let (dx, dw, db) =
                        ops::dense_backward(self.value(*input), self.value(*weights), &g, need_input);
                    if let Some(dx) = dx {
                        acc(*input, dx, &mut grads);
                    }
                    acc(*weights, dw, &mut grads);
                    acc(*bias, db, &mut grads);
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &d)| if v > T::ZERO { d } else { T::ZERO })
                        .collect();
                    acc(*input, Tensor::new(x.shape().to_vec(), data)?, &mut grads);
                }
                Op::Sigmoid(input) => {
                    let y = &node.value;
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&s, &d)| d * s * (T::ONE - s))
                        .collect();
                    acc(*input, Tensor::new(y.shape().to_vec(), data)?, &mut grads);
                }
                Op::GlobalAvgPool(input) => {
                    let dx = ops::global_avg_pool_backward(self.value(*input).shape(), &g);
                    acc(*input, dx, &mut grads);
                }
                Op::Upsample { input, factor } => {
                    let dx = ops::upsample_backward(self.value(*input).shape(), *factor, &g);
                    acc(*input, dx, &mut grads);
                }
                Op::Dropout { input, mask } => {
                    let data = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    acc(*input, Tensor::new(g.shape().to_vec(), data)?, &mut grads);
                }
                Op::Mse { pred, target } => {
                    let up = g.item()?;
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let dp = ops::mse_backward(p, t, up);
                    acc(*target, dp.map(|v| -v), &mut grads);
                    acc(*pred, dp, &mut grads);
                }
                Op::Bce { pred, target } => {
                    let up = g.item()?;
                    let dp = ops::bce_backward(self.value(*pred), self.value(*target), up);
                    acc(*pred, dp, &mut grads);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    /// Moves the gradient out, if one was accumulated.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}
