//! Define-by-run reverse-mode differentiation over [`Array2`] values.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation computes
//! its value eagerly and appends a node; nodes only ever reference earlier
//! nodes, so the tape is always in topological order and [`Tape::backward`]
//! is a single reverse sweep.

pub mod kernels;

use std::ops::Index;

use crate::array::Array2;
use crate::error::{shape_err, Error, Result};
use crate::parallel::Exec;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { w: Var, z: Var },
    MatMulAdd { w: Var, z: Var, b: Var },
    Add { a: Var, b: Var },
    TanhScaled { h: Var, omega0: f64 },
    // The sin and cos blocks of one feature expansion point at each other:
    // the partial of sin(kx) is k cos(kx) and vice versa.
    SinFeatures { x: Var, k_max: usize, partner: Var },
    CosFeatures { x: Var, k_max: usize, partner: Var },
    L2Loss { pred: Var, target: Var },
    Scale { a: Var, c: f64 },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node {
    value: Array2,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Array2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Array2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `W z`.
    pub fn matmul(&mut self, w: Var, z: Var) -> Result<Var> {
        let (wv, zv) = (self.value(w), self.value(z));
        if wv.cols() != zv.rows() {
            return Err(shape_err(
                "matmul",
                format!("z with {} rows", wv.cols()),
                format!(
                    "{}x{} times {}x{}",
                    wv.rows(),
                    wv.cols(),
                    zv.rows(),
                    zv.cols()
                ),
            ));
        }
        let value = kernels::matmul(self.exec, wv, zv, None);
        let rg = self.rg(w) || self.rg(z);
        Ok(self.push(value, Op::MatMul { w, z }, rg))
    }

    /// `W z + b`, with `b` a column broadcast over the batch.
    pub fn matmul_add(&mut self, w: Var, z: Var, b: Var) -> Result<Var> {
        let (wv, zv, bv) = (self.value(w), self.value(z), self.value(b));
        if wv.cols() != zv.rows() {
            return Err(shape_err(
                "matmul_add",
                format!("z with {} rows", wv.cols()),
                format!(
                    "{}x{} times {}x{}",
                    wv.rows(),
                    wv.cols(),
                    zv.rows(),
                    zv.cols()
                ),
            ));
        }
        if bv.shape() != (wv.rows(), 1) {
            return Err(shape_err(
                "matmul_add",
                format!("bias {}x1", wv.rows()),
                format!("bias {}x{}", bv.rows(), bv.cols()),
            ));
        }
        let value = kernels::matmul(self.exec, wv, zv, Some(bv));
        let rg = self.rg(w) || self.rg(z) || self.rg(b);
        Ok(self.push(value, Op::MatMulAdd { w, z, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                "add",
                format!("{}x{}", av.rows(), av.cols()),
                format!("{}x{}", bv.rows(), bv.cols()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Array2::from_vec(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Elementwise `tanh(omega0 * h)`.
    pub fn tanh_scaled(&mut self, h: Var, omega0: f64) -> Result<Var> {
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "omega0 must be positive and finite, got {omega0}"
            )));
        }
        let value = kernels::tanh_scaled(self.exec, self.value(h), omega0);
        let rg = self.rg(h);
        Ok(self.push(value, Op::TanhScaled { h, omega0 }, rg))
    }

    /// Expands `x` (`[d x n]`) into `sin(kx)` and `cos(kx)` blocks, each
    /// `[d*K x n]` with row `m*K + (k-1)` for coordinate `m` and frequency `k`.
    pub fn sin_cos_features(&mut self, x: Var, k_max: usize) -> Result<(Var, Var)> {
        if k_max == 0 {
            return Err(Error::InvalidArgument(
                "number of frequencies K must be at least 1".into(),
            ));
        }
        let (s, c) = kernels::sin_cos_features(self.exec, self.value(x), k_max);
        let rg = self.rg(x);
        let sin_idx = Var(self.nodes.len());
        let cos_idx = Var(self.nodes.len() + 1);
        self.push(
            s,
            Op::SinFeatures {
                x,
                k_max,
                partner: cos_idx,
            },
            rg,
        );
        self.push(
            c,
            Op::CosFeatures {
                x,
                k_max,
                partner: sin_idx,
            },
            rg,
        );
        Ok((sin_idx, cos_idx))
    }

    /// Mean over the batch (columns) of `||pred_n - target_n||^2`.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(shape_err(
                "l2_loss",
                format!("{}x{}", pv.rows(), pv.cols()),
                format!("{}x{}", tv.rows(), tv.cols()),
            ));
        }
        if pv.cols() == 0 {
            return Err(Error::InvalidArgument("l2_loss on an empty batch".into()));
        }
        let value = Array2::scalar(kernels::l2_loss(pv, tv));
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(value, Op::L2Loss { pred, target }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(value, Op::Scale { a, c }, rg)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum { a }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every differentiable leaf on the tape gets an entry in the result;
    /// leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(shape_err(
                "backward",
                "scalar (1x1) loss",
                format!("{}x{}", lv.rows(), lv.cols()),
            ));
        }
        let exec = self.exec;
        let mut grads: Vec<Option<Array2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            // Sin and cos blocks are handled together when the sin node is visited.
            if let Op::CosFeatures { partner, .. } = node.op {
                if partner.0 < idx {
                    continue;
                }
            }
            let g = match &node.op {
                Op::Leaf => continue,
                Op::SinFeatures { .. } | Op::CosFeatures { .. } => grads[idx].take(),
                _ => match grads[idx].take() {
                    Some(g) => Some(g),
                    None => continue,
                },
            };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { w, z } => {
                    let g = g.unwrap();
                    if self.rg(w) {
                        accumulate(&mut grads, w, kernels::matmul_nt(exec, &g, self.value(z)));
                    }
                    if self.rg(z) {
                        accumulate(&mut grads, z, kernels::matmul_tn(exec, self.value(w), &g));
                    }
                }
                Op::MatMulAdd { w, z, b } => {
                    let g = g.unwrap();
                    if self.rg(w) {
                        accumulate(&mut grads, w, kernels::matmul_nt(exec, &g, self.value(z)));
                    }
                    if self.rg(z) {
                        accumulate(&mut grads, z, kernels::matmul_tn(exec, self.value(w), &g));
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, kernels::row_sums(&g));
                    }
                }
                Op::Add { a, b } => {
                    let g = g.unwrap();
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::TanhScaled { h, omega0 } => {
                    let g = g.unwrap();
                    let dh = kernels::tanh_scaled_backward(exec, &node.value, &g, omega0);
                    accumulate(&mut grads, h, dh);
                }
                Op::SinFeatures { x, k_max, partner } => {
                    let g_cos = grads[partner.0].take();
                    if g.is_none() && g_cos.is_none() {
                        continue;
                    }
                    let dx = kernels::sin_cos_backward(
                        exec,
                        k_max,
                        &node.value,
                        self.value(partner),
                        g.as_ref(),
                        g_cos.as_ref(),
                    );
                    accumulate(&mut grads, x, dx);
                }
                Op::CosFeatures { x, k_max, partner } => {
                    // Only reached if the cos block was pushed before its sin
                    // partner, which `sin_cos_features` never does.
                    let g_sin = grads[partner.0].take();
                    if g.is_none() && g_sin.is_none() {
                        continue;
                    }
                    let dx = kernels::sin_cos_backward(
                        exec,
                        k_max,
                        self.value(partner),
                        &node.value,
                        g_sin.as_ref(),
                        g.as_ref(),
                    );
                    accumulate(&mut grads, x, dx);
                }
                Op::L2Loss { pred, target } => {
                    let g = g.unwrap().data()[0];
                    let (pv, tv) = (self.value(pred), self.value(target));
                    let coef = 2.0 * g / pv.cols() as f64;
                    let mut d = pv.clone();
                    for (dv, &t) in d.data_mut().iter_mut().zip(tv.data()) {
                        *dv = coef * (*dv - t);
                    }
                    if self.rg(target) {
                        accumulate(&mut grads, target, d.map(|v| -v));
                    }
                    if self.rg(pred) {
                        accumulate(&mut grads, pred, d);
                    }
                }
                Op::Scale { a, c } => {
                    let g = g.unwrap();
                    accumulate(&mut grads, a, g.map(|v| c * v));
                }
                Op::Sum { a } => {
                    let g = g.unwrap().data()[0];
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut grads, a, Array2::filled(r, c, g));
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => {
                    Some(g.unwrap_or_else(|| Array2::zeros(node.value.rows(), node.value.cols())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Array2>], v: Var, contribution: Array2) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Gradients of one backward pass, keyed by leaf [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2>>,
}

impl Gradients {
    /// Gradient of a differentiable leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Array2> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Index<Var> for Gradients {
    type Output = Array2;

    fn index(&self, v: Var) -> &Array2 {
        self.get(v).expect("no gradient recorded for this node")
    }
}
