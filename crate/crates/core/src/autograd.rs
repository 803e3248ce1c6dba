//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Backward rules are expressed with the same differentiable ops as the
//! forward pass, so a gradient computed with `create_graph = true` can itself
//! be differentiated. The gradient penalty of the critic relies on this.
//!
//! Graph recording is controlled by a thread-local flag: inside [`no_grad`]
//! every op produces an untracked constant.

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::{self, Shape, Tensor};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

struct GradModeGuard(bool);

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

fn set_grad_enabled(enabled: bool) -> GradModeGuard {
    GradModeGuard(GRAD_ENABLED.with(|g| g.replace(enabled)))
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = set_grad_enabled(false);
    f()
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Pow(Var, f64),
    Tanh(Var),
    Masked(Var, Rc<Tensor>),
    SumTo(Var),
    BroadcastTo(Var),
    Window { x: Var, top: isize, left: isize },
    Conv(Var, Var),
    ConvInputGrad { g: Var, w: Var },
    ConvWeightGrad { x: Var, g: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tensor-valued node of the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({:?}, grad={})", self.0.value, self.0.requires_grad)
    }
}

fn pow_kernel(v: f64, p: f64) -> f64 {
    if v == 0.0 && p < 0.0 {
        // Keeps sqrt-style derivatives finite at the origin.
        return 0.0;
    }
    if p == 2.0 {
        v * v
    } else if p == 0.5 {
        v.sqrt()
    } else if p == -0.5 {
        1.0 / v.sqrt()
    } else if p == 1.0 {
        v
    } else if p == 0.0 {
        1.0
    } else {
        v.powf(p)
    }
}

impl Var {
    pub fn leaf(value: Tensor, requires_grad: bool) -> Var {
        Var(Rc::new(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        }))
    }

    pub fn constant(value: Tensor) -> Var {
        Var::leaf(value, false)
    }

    pub fn param(value: Tensor) -> Var {
        Var::leaf(value, true)
    }

    fn from_op(value: Tensor, op: Op, parents_need_grad: bool) -> Var {
        if parents_need_grad && is_grad_enabled() {
            Var(Rc::new(Node {
                value,
                op,
                requires_grad: true,
            }))
        } else {
            Var::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Untracked copy of the value.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub fn add(&self, other: &Var) -> Var {
        let v = self.value().zip_with(other.value(), |a, b| a + b);
        let rg = self.requires_grad() || other.requires_grad();
        Var::from_op(v, Op::Add(self.clone(), other.clone()), rg)
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = self.value().zip_with(other.value(), |a, b| a - b);
        let rg = self.requires_grad() || other.requires_grad();
        Var::from_op(v, Op::Sub(self.clone(), other.clone()), rg)
    }

    pub fn mul(&self, other: &Var) -> Var {
        let v = self.value().zip_with(other.value(), |a, b| a * b);
        let rg = self.requires_grad() || other.requires_grad();
        Var::from_op(v, Op::Mul(self.clone(), other.clone()), rg)
    }

    pub fn scale(&self, s: f64) -> Var {
        let v = self.value().map(|a| a * s);
        Var::from_op(v, Op::Scale(self.clone(), s), self.requires_grad())
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> Var {
        let v = self.value().map(|a| a + s);
        Var::from_op(v, Op::Offset(self.clone()), self.requires_grad())
    }

    /// Elementwise power; `0^p` is taken as 0 for negative `p`.
    pub fn pow(&self, p: f64) -> Var {
        let v = self.value().map(|a| pow_kernel(a, p));
        Var::from_op(v, Op::Pow(self.clone(), p), self.requires_grad())
    }

    pub fn sqrt(&self) -> Var {
        self.pow(0.5)
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn tanh(&self) -> Var {
        let v = self.value().map(f64::tanh);
        Var::from_op(v, Op::Tanh(self.clone()), self.requires_grad())
    }

    /// Multiplies by a constant tensor of the same shape.
    pub fn masked(&self, mask: Rc<Tensor>) -> Var {
        let v = self.value().zip_with(&mask, |a, m| a * m);
        Var::from_op(v, Op::Masked(self.clone(), mask), self.requires_grad())
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().map(|a| if a > 0.0 { 1.0 } else { slope });
        self.masked(Rc::new(mask))
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn abs(&self) -> Var {
        let sign = self.value().map(|a| {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.masked(Rc::new(sign))
    }

    pub fn sum_to(&self, target: Shape) -> Var {
        if target == self.shape() {
            return self.clone();
        }
        let v = self.value().sum_to(target);
        Var::from_op(v, Op::SumTo(self.clone()), self.requires_grad())
    }

    pub fn broadcast_to(&self, target: Shape) -> Var {
        if target == self.shape() {
            return self.clone();
        }
        let v = self.value().broadcast_to(target);
        Var::from_op(v, Op::BroadcastTo(self.clone()), self.requires_grad())
    }

    pub fn sum_all(&self) -> Var {
        self.sum_to([1, 1, 1, 1])
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Per-sample spatial mean of every channel: `[n, c, h, w] -> [n, c, 1, 1]`.
    pub fn spatial_mean(&self) -> Var {
        let [n, c, h, w] = self.shape();
        self.sum_to([n, c, 1, 1]).scale(1.0 / (h * w) as f64)
    }

    /// Zero-filled spatial window; see [`Tensor::window`].
    pub fn window(&self, top: isize, left: isize, h: usize, w: usize) -> Var {
        let [_, _, sh, sw] = self.shape();
        if top == 0 && left == 0 && h == sh && w == sw {
            return self.clone();
        }
        let v = self.value().window(top, left, h, w);
        Var::from_op(
            v,
            Op::Window {
                x: self.clone(),
                top,
                left,
            },
            self.requires_grad(),
        )
    }

    /// Central `h × w` region.
    pub fn center_crop(&self, h: usize, w: usize) -> Var {
        let [_, _, sh, sw] = self.shape();
        assert!(sh >= h && sw >= w && (sh - h) % 2 == 0 && (sw - w) % 2 == 0);
        self.window(((sh - h) / 2) as isize, ((sw - w) / 2) as isize, h, w)
    }

    pub fn conv2d(&self, weight: &Var) -> Var {
        let v = tensor::conv2d(self.value(), weight.value());
        let rg = self.requires_grad() || weight.requires_grad();
        Var::from_op(v, Op::Conv(self.clone(), weight.clone()), rg)
    }

    fn conv_input_grad(g: &Var, w: &Var, in_hw: (usize, usize)) -> Var {
        let v = tensor::conv2d_input_grad(g.value(), w.value(), in_hw);
        let rg = g.requires_grad() || w.requires_grad();
        Var::from_op(
            v,
            Op::ConvInputGrad {
                g: g.clone(),
                w: w.clone(),
            },
            rg,
        )
    }

    fn conv_weight_grad(x: &Var, g: &Var, k: (usize, usize)) -> Var {
        let v = tensor::conv2d_weight_grad(x.value(), g.value(), k);
        let rg = x.requires_grad() || g.requires_grad();
        Var::from_op(
            v,
            Op::ConvWeightGrad {
                x: x.clone(),
                g: g.clone(),
            },
            rg,
        )
    }

    fn parents(&self) -> Vec<&Var> {
        match &self.0.op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Conv(a, b) => vec![a, b],
            Op::ConvInputGrad { g, w } => vec![g, w],
            Op::ConvWeightGrad { x, g } => vec![x, g],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Pow(a, _)
            | Op::Tanh(a)
            | Op::Masked(a, _)
            | Op::SumTo(a)
            | Op::BroadcastTo(a)
            | Op::Window { x: a, .. } => vec![a],
        }
    }

    /// Gradient contributions for each parent, given this node's gradient `g`.
    fn backward_step(&self, g: &Var) -> Vec<(Var, Var)> {
        let mut out = Vec::new();
        let mut push = |p: &Var, grad: Var| {
            if p.requires_grad() {
                out.push((p.clone(), grad));
            }
        };
        match &self.0.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                push(a, g.sum_to(a.shape()));
                push(b, g.sum_to(b.shape()));
            }
            Op::Sub(a, b) => {
                push(a, g.sum_to(a.shape()));
                if b.requires_grad() {
                    push(b, g.sum_to(b.shape()).neg());
                }
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    push(a, g.mul(b).sum_to(a.shape()));
                }
                if b.requires_grad() {
                    push(b, g.mul(a).sum_to(b.shape()));
                }
            }
            Op::Scale(a, s) => push(a, g.scale(*s)),
            Op::Offset(a) => push(a, g.clone()),
            Op::Pow(a, p) => {
                let d = a.pow(p - 1.0).scale(*p);
                push(a, g.mul(&d));
            }
            Op::Tanh(a) => {
                let d = self.square().neg().add_scalar(1.0);
                push(a, g.mul(&d));
            }
            Op::Masked(a, m) => push(a, g.masked(m.clone())),
            Op::SumTo(a) => push(a, g.broadcast_to(a.shape())),
            Op::BroadcastTo(a) => push(a, g.sum_to(a.shape())),
            Op::Window { x, top, left } => {
                let [_, _, h, w] = x.shape();
                push(x, g.window(-top, -left, h, w));
            }
            Op::Conv(x, w) => {
                let [_, _, h, wd] = x.shape();
                let [_, _, kh, kw] = w.shape();
                if x.requires_grad() {
                    push(x, Var::conv_input_grad(g, w, (h, wd)));
                }
                if w.requires_grad() {
                    push(w, Var::conv_weight_grad(x, g, (kh, kw)));
                }
            }
            Op::ConvInputGrad { g: g0, w } => {
                let [_, _, kh, kw] = w.shape();
                if g0.requires_grad() {
                    push(g0, g.conv2d(w));
                }
                if w.requires_grad() {
                    push(w, Var::conv_weight_grad(g, g0, (kh, kw)));
                }
            }
            Op::ConvWeightGrad { x, g: g0 } => {
                let [_, _, h, wd] = x.shape();
                if x.requires_grad() {
                    push(x, Var::conv_input_grad(g0, g, (h, wd)));
                }
                if g0.requires_grad() {
                    push(g0, x.conv2d(g));
                }
            }
        }
        out
    }
}

/// Gradients of `output` (summed over its elements) with respect to `inputs`.
///
/// Inputs that `output` does not depend on get a zero gradient. With
/// `create_graph` the returned gradients are themselves differentiable.
pub fn grad(output: &Var, inputs: &[&Var], create_graph: bool) -> Vec<Var> {
    let _guard = set_grad_enabled(create_graph);

    // Post-order DFS over nodes that require grad.
    let mut order: Vec<Var> = Vec::new();
    let mut seen: HashMap<usize, ()> = HashMap::new();
    if output.requires_grad() {
        let mut stack: Vec<(Var, bool)> = vec![(output.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if seen.insert(v.id(), ()).is_some() {
                continue;
            }
            stack.push((v.clone(), true));
            for p in v.parents() {
                if p.requires_grad() && !seen.contains_key(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }

    let wanted: HashMap<usize, ()> = inputs.iter().map(|v| (v.id(), ())).collect();
    let mut grads: HashMap<usize, Var> = HashMap::new();
    let mut results: HashMap<usize, Var> = HashMap::new();
    if output.requires_grad() {
        grads.insert(
            output.id(),
            Var::constant(Tensor::full(output.shape(), 1.0)),
        );
    }
    for node in order.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        if wanted.contains_key(&node.id()) {
            results.insert(node.id(), g.clone());
        }
        for (parent, contrib) in node.backward_step(&g) {
            let id = parent.id();
            let acc = match grads.remove(&id) {
                Some(prev) => prev.add(&contrib),
                None => contrib,
            };
            grads.insert(id, acc);
        }
    }

    inputs
        .iter()
        .map(|v| {
            results
                .remove(&v.id())
                .unwrap_or_else(|| Var::constant(Tensor::zeros(v.shape())))
        })
        .collect()
}
