//! Reverse-mode differentiation over a linear op record.
//!
//! A [`Tape`] is built fresh for every loss evaluation. Leaves are either
//! parameters (gradients requested) or constants. Every op evaluates eagerly,
//! stores its output, and remembers its inputs; [`Tape::backward`] walks the
//! record in reverse and accumulates vector-Jacobian products. Nodes that do
//! not depend on any parameter are skipped.

use crate::error::{Error, Result};
use crate::math::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `[r, c] + [1, c]`
    AddRow(Var, Var),
    /// `[r, c] * [1, c]`
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Min(Var, Var),
    Clamp(Var, f64, f64),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = broadcast_row(self.value(a), self.value(row), "add_row", |x, r| x + r)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = broadcast_row(self.value(a), self.value(row), "mul_row", |x, r| x * r)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::MulRow(a, row), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(out, Op::Shift(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(out, Op::Square(a), ng)
    }

    /// Row-wise log-softmax, stabilized by the row maximum.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut data = Vec::with_capacity(x.len());
        for i in 0..x.rows() {
            let row = x.row_slice(i);
            let lse = crate::math::dist::log_sum_exp(row);
            data.extend(row.iter().map(|v| v - lse));
        }
        let out = Tensor::new(vec![x.rows(), c], data).expect("shape preserved");
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Picks column `idx[i]` from row `i`, giving `[rows, 1]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows() {
            return Err(Error::dimension(format!(
                "gather: {} indices for {} rows",
                idx.len(),
                x.rows()
            )));
        }
        let c = x.cols();
        let mut data = Vec::with_capacity(idx.len());
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(Error::contract(format!("gather: index {j} >= width {c}")));
            }
            data.push(x.row_slice(i)[j]);
        }
        let out = Tensor::column(&data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Gather(a, idx.to_vec()), ng))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), f64::min)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Min(a, b), ng))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    /// Row sums, giving `[rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let sums: Vec<f64> = (0..x.rows()).map(|i| x.row_slice(i).iter().sum()).collect();
        let out = Tensor::column(&sums);
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::scalar(x.sum() / x.len().max(1) as f64);
        let ng = self.ng(a);
        self.push(out, Op::Mean(a), ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, d: Tensor| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?);
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                if self.ng(*r) {
                    acc(*r, g.sum_rows());
                }
            }
            Op::MulRow(a, r) => {
                let rv = self.value(*r);
                if self.ng(*a) {
                    acc(*a, broadcast_row(g, rv, "mul_row'", |x, y| x * y)?);
                }
                if self.ng(*r) {
                    acc(*r, g.zip_map(self.value(*a), |x, y| x * y)?.sum_rows());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::Shift(a) => acc(*a, g.clone()),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y))?),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y)?),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y)?),
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for i in 0..y.rows() {
                    let gr = g.row_slice(i);
                    let yr = y.row_slice(i);
                    let total: f64 = gr.iter().sum();
                    d.extend(gr.iter().zip(yr).map(|(gi, yi)| gi - yi.exp() * total));
                }
                acc(*a, Tensor::new(vec![y.rows(), c], d)?);
            }
            Op::Gather(a, idx) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut d = Tensor::zeros(x.shape());
                for (i, &j) in idx.iter().enumerate() {
                    d.data_mut()[i * c + j] = g.data()[i];
                }
                acc(*a, d);
            }
            Op::Min(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut da = Tensor::zeros(av.shape());
                let mut db = Tensor::zeros(bv.shape());
                for i in 0..g.len() {
                    if av.data()[i] <= bv.data()[i] {
                        da.data_mut()[i] = g.data()[i];
                    } else {
                        db.data_mut()[i] = g.data()[i];
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let d = g.zip_map(x, |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 })?;
                acc(*a, d);
            }
            Op::SumCols(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut d = Vec::with_capacity(x.len());
                for &gi in g.data() {
                    d.extend(std::iter::repeat_n(gi, c));
                }
                acc(*a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), g.item()));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), g.item() / x.len().max(1) as f64));
            }
        }
        Ok(())
    }
}

fn broadcast_row(
    a: &Tensor,
    row: &Tensor,
    op: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(Error::dimension(format!(
            "{op}: cannot broadcast {:?} over {:?}",
            row.shape(),
            a.shape()
        )));
    }
    let c = a.cols();
    let r = row.data();
    let data: Vec<f64> = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, r[i % c]))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}
