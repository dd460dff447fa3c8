//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Trainable weights
//! live in a [`ParamSet`] borrowed by the tape, so recording a step never
//! copies parameters. [`Tape::backward`] accumulates parameter gradients into
//! a [`Grads`] buffer laid out like the parameter set.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Index of a parameter tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// All scalars, tensor by tensor in column-major order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut at = 0;
        for m in &mut self.values {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Reads one scalar by flat index.
    pub fn scalar(&self, flat_index: usize) -> f64 {
        let (t, i) = self.locate(flat_index);
        self.values[t].as_slice()[i]
    }

    pub fn set_scalar(&mut self, flat_index: usize, v: f64) {
        let (t, i) = self.locate(flat_index);
        self.values[t].as_mut_slice()[i] = v;
    }

    fn locate(&self, mut flat_index: usize) -> (usize, usize) {
        for (t, m) in self.values.iter().enumerate() {
            if flat_index < m.len() {
                return (t, flat_index);
            }
            flat_index -= m.len();
        }
        panic!("parameter index out of range");
    }
}

/// Gradient buffers shaped like a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    values: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads {
            values: params
                .values
                .iter()
                .map(|m| Mat::zeros(m.nrows(), m.ncols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.values {
            *a *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|m| m.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// `a (r×c) + b^T` broadcast over rows, `b` is `c×1`.
    AddRow(Var, Var),
    MeanCols(Var),
    Transpose(Var),
    VStack(Vec<Var>),
    HStack(Vec<Var>),
    Reshape(Var),
    /// Entries replaced by the floor are recorded so their gradient is blocked.
    ClampMin(Var, Vec<bool>),
    SmoothL1Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Mat>,
    op: Op,
}

/// One recorded forward pass.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant with no gradient path.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn column(&mut self, values: &[f64]) -> Var {
        self.leaf(Mat::from_column_slice(values.len(), 1, values))
    }

    /// The node for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id.0),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params.values[*i],
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    /// Same value, cut from the gradient graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.leaf(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a) * self.value(b);
        self.push(m, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a) + self.value(b);
        self.push(m, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a) - self.value(b);
        self.push(m, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).component_mul(self.value(b));
        self.push(m, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a) * s;
        self.push(m, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a).add_scalar(s);
        self.push(m, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::tanh);
        self.push(m, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let m = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(m, Op::Sigmoid(a))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.ncols(), bv.nrows(), "add_row shape mismatch");
        let mut m = av.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col.add_scalar_mut(bv[j]);
        }
        self.push(m, Op::AddRow(a, b))
    }

    /// Row-wise mean over columns, giving an `r×1` column.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.column_mean();
        let m = Mat::from_column_slice(av.nrows(), 1, m.as_slice());
        self.push(m, Op::MeanCols(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let m = self.value(a).transpose();
        self.push(m, Op::Transpose(a))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut m = Mat::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.ncols(), cols, "vstack column mismatch");
            m.rows_mut(at, pv.nrows()).copy_from(pv);
            at += pv.nrows();
        }
        self.push(m, Op::VStack(parts.to_vec()))
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut m = Mat::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.nrows(), rows, "hstack row mismatch");
            m.columns_mut(at, pv.ncols()).copy_from(pv);
            at += pv.ncols();
        }
        self.push(m, Op::HStack(parts.to_vec()))
    }

    /// Reinterprets the column-major storage with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "reshape size mismatch");
        let m = Mat::from_column_slice(rows, cols, av.as_slice());
        self.push(m, Op::Reshape(a))
    }

    /// Floors the listed rows of a column at `min`.
    pub fn clamp_rows_min(&mut self, a: Var, rows: &[usize], min: f64) -> Var {
        let mut m = self.value(a).clone();
        let mut mask = vec![false; m.len()];
        for &r in rows {
            if m[(r, 0)] <= 0.0 {
                m[(r, 0)] = min;
                mask[r] = true;
            }
        }
        self.push(m, Op::ClampMin(a, mask))
    }

    /// `sum_i smoothl1(a_i)` as a `1×1` value.
    pub fn smooth_l1_sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|e| smooth_l1(*e)).sum();
        self.push(Mat::from_element(1, 1, s), Op::SmoothL1Sum(a))
    }

    /// Backpropagates from the scalar `loss`, adding `seed * d loss / d param`
    /// into `grads`.
    pub fn backward(&self, loss: Var, seed: f64, grads: &mut Grads) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut adj: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Mat::from_element(1, 1, seed));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Mat| match &mut adj[v.0] {
                Some(a) => *a += d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => grads.values[*p] += &g,
                Op::MatMul(a, b) => {
                    acc(*a, &g * self.value(*b).transpose());
                    acc(*b, self.value(*a).transpose() * &g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.component_mul(self.value(*b)));
                    acc(*b, g.component_mul(self.value(*a)));
                }
                Op::Scale(a, s) => acc(*a, g * *s),
                Op::AddScalar(a) => acc(*a, g),
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, g.zip_map(y, |g, y| g * (1.0 - y * y)));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, g.zip_map(y, |g, y| g * y * (1.0 - y)));
                }
                Op::AddRow(a, b) => {
                    let gb = Mat::from_fn(g.ncols(), 1, |c, _| g.column(c).sum());
                    acc(*a, g);
                    acc(*b, gb);
                }
                Op::MeanCols(a) => {
                    let c = self.value(*a).ncols();
                    let d = Mat::from_fn(g.nrows(), c, |r, _| g[(r, 0)] / c as f64);
                    acc(*a, d);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::VStack(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        acc(*p, g.rows(at, n).into_owned());
                        at += n;
                    }
                }
                Op::HStack(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let n = self.value(*p).ncols();
                        acc(*p, g.columns(at, n).into_owned());
                        at += n;
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, Mat::from_column_slice(r, c, g.as_slice()));
                }
                Op::ClampMin(a, mask) => {
                    let mut d = g;
                    for (v, m) in d.as_mut_slice().iter_mut().zip(mask) {
                        if *m {
                            *v = 0.0;
                        }
                    }
                    acc(*a, d);
                }
                Op::SmoothL1Sum(a) => {
                    let s = g[(0, 0)];
                    acc(*a, self.value(*a).map(|e| s * smooth_l1_grad(e)));
                }
            }
        }
    }
}

/// `0.5 e^2` for `|e| < 1`, `|e| - 0.5` otherwise.
pub fn smooth_l1(e: f64) -> f64 {
    if e.abs() < 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

pub fn smooth_l1_grad(e: f64) -> f64 {
    if e.abs() < 1.0 {
        e
    } else {
        e.signum()
    }
}
