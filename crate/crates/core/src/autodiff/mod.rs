//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is built, so node indices are
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse, summing the contributions of every consumer into each node's
//! gradient. A graph is single-use: a second backward pass is an error.

pub mod kernels;
mod params;

pub use params::{GradBuffer, ParamId, ParamStore, Sgd, SgdConfig};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvGeom;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Upsample(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    Scale {
        input: Var,
        factor: Var,
    },
    MulConst(Var, f64),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` lies on a
    /// differentiable path to the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.per_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds `scale` times every parameter gradient into `buffer`.
    pub fn accumulate_into(&self, buffer: &mut GradBuffer, scale: f64) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.per_node[node] {
                buffer.add_scaled(pid, g, scale);
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound_params: HashMap<ParamId, Var>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A free leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A trainable parameter; its gradient is routed back by
    /// [`Gradients::accumulate_into`]. Each parameter is bound once per graph
    /// and later calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound_params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.bound_params.insert(id, v);
        v
    }

    pub fn conv3x3(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        const OP: &str = "conv3x3";
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidShape {
                op: OP,
                detail: format!("stride must be 1 or 2, got {stride}"),
            });
        }
        let (c_in, h, w) = self.value(input).chw()?;
        let (c_out, wc_in) = match self.value(weight).shape() {
            &[co, ci, 3, 3] => (co, ci),
            other => {
                return Err(Error::InvalidShape {
                    op: OP,
                    detail: format!("weight must be (c_out, c_in, 3, 3), got {other:?}"),
                })
            }
        };
        if wc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "input channels",
                expected: wc_in,
                got: c_in,
            });
        }
        if self.value(bias).numel() != c_out {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "bias length",
                expected: c_out,
                got: self.value(bias).numel(),
            });
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            h,
            w,
            stride,
        };
        let out = kernels::conv3x3_forward(
            geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::from_chw(c_out, geom.ho(), geom.wo(), out)?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            },
            needs,
        ))
    }

    /// Nearest-neighbour upsampling by 2.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let out = kernels::upsample2x_forward(c, h, w, self.value(input).data());
        let value = Tensor::from_chw(c, 2 * h, 2 * w, out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Upsample(input), needs))
    }

    /// 2x2 max pooling with stride 2.
    pub fn downsample2x(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "downsample2x",
                detail: format!("spatial dims must be even, got {h}x{w}"),
            });
        }
        let (out, argmax) = kernels::maxpool2x2_forward(c, h, w, self.value(input).data());
        let value = Tensor::from_chw(c, h / 2, w / 2, out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::MaxPool { input, argmax }, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != sb.len() {
            return Err(Error::ShapeMismatch {
                op,
                dim: "rank",
                expected: sa.len(),
                got: sb.len(),
            });
        }
        const DIMS: [&str; 4] = ["channels", "height", "width", "kernel"];
        for (i, (&x, &y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(Error::ShapeMismatch {
                    op,
                    dim: DIMS.get(i).copied().unwrap_or("trailing"),
                    expected: x,
                    got: y,
                });
            }
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    /// Concatenates along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if ha != hb {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "height",
                expected: ha,
                got: hb,
            });
        }
        if wa != wb {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "width",
                expected: wa,
                got: wb,
            });
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::from_chw(ca + cb, ha, wa, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat(a, b), needs))
    }

    /// Multiplies `input` by the scalar node `factor`.
    pub fn scale(&mut self, input: Var, factor: Var) -> Result<Var> {
        if !self.value(factor).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "scale",
                dim: "factor element count",
                expected: 1,
                got: self.value(factor).numel(),
            });
        }
        let s = self.value(factor).data()[0];
        let value = self.value(input).map(|v| v * s);
        let needs = self.needs(input) || self.needs(factor);
        Ok(self.push(value, Op::Scale { input, factor }, needs))
    }

    pub fn mul_const(&mut self, input: Var, c: f64) -> Var {
        let value = self.value(input).map(|v| v * c);
        let needs = self.needs(input);
        self.push(value, Op::MulConst(input, c), needs)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        let needs = self.needs(input);
        self.push(value, Op::Relu(input), needs)
    }

    /// Elementwise absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, input: Var) -> Var {
        let value = self.value(input).map(f64::abs);
        let needs = self.needs(input);
        self.push(value, Op::Abs(input), needs)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let needs = self.needs(input);
        self.push(value, Op::Sum(input), needs)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        let needs = self.needs(input);
        self.push(value, Op::Mean(input), needs)
    }

    /// Sums a non-empty list of same-shaped nodes left to right.
    pub fn add_all(&mut self, items: &[Var]) -> Result<Var> {
        let (&first, rest) = items.split_first().ok_or_else(|| Error::InvalidShape {
            op: "add_all",
            detail: "empty operand list".into(),
        })?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Mean of `(pred - target)^2` over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Runs reverse-mode differentiation from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(pid) => Some((pid, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            per_node: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, contrib: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
        };
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            } => {
                let (gi, gw, gb) = kernels::conv3x3_backward(
                    *geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                );
                send(*input, like(*input, gi));
                send(*weight, like(*weight, gw));
                send(*bias, like(*bias, gb));
            }
            Op::Upsample(input) => {
                let (c, h, w) = self.value(*input).chw().expect("rank-3");
                let gi = kernels::upsample2x_backward(c, h, w, g.data());
                send(*input, like(*input, gi));
            }
            Op::MaxPool { input, argmax } => {
                let gi = kernels::maxpool2x2_backward(self.value(*input).numel(), argmax, g.data());
                send(*input, like(*input, gi));
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                send(*a, like(*a, ga));
                send(*b, like(*b, gb));
            }
            Op::Concat(a, b) => {
                let split = self.value(*a).numel();
                send(*a, like(*a, g.data()[..split].to_vec()));
                send(*b, like(*b, g.data()[split..].to_vec()));
            }
            Op::Scale { input, factor } => {
                let s = self.value(*factor).data()[0];
                send(*input, g.map(|v| v * s));
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(*input).data())
                    .map(|(x, y)| x * y)
                    .sum();
                send(*factor, like(*factor, vec![ds]));
            }
            Op::MulConst(input, c) => send(*input, g.map(|v| v * c)),
            Op::Relu(input) => {
                let gi = g
                    .data()
                    .iter()
                    .zip(self.value(*input).data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                send(*input, like(*input, gi));
            }
            Op::Abs(input) => {
                let gi = g
                    .data()
                    .iter()
                    .zip(self.value(*input).data())
                    .map(|(&gv, &x)| {
                        if x > 0.0 {
                            gv
                        } else if x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*input, like(*input, gi));
            }
            Op::Sum(input) => {
                let n = self.value(*input).numel();
                send(*input, like(*input, vec![g.data()[0]; n]));
            }
            Op::Mean(input) => {
                let n = self.value(*input).numel();
                send(*input, like(*input, vec![g.data()[0] / n as f64; n]));
            }
        }
    }
}
