//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! Nodes are appended in evaluation order, so node indices are already a
//! topological order and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Options for the binary focal loss node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalSpec {
    pub gamma: f64,
    /// Positive-class weight; `None` disables class balancing.
    pub alpha: Option<f64>,
}

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Exp(Var),
    Pow(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Std(Var),
    RowNormalize(Var),
    GatherRows(Var, Vec<usize>),
    PairSum(Var, Var),
    Reshape(Var),
    /// Elementwise map driven by two scalar parameters; the partials of every
    /// output entry with respect to each scalar are stored at forward time.
    ScalarParamMap {
        a: Var,
        b: Var,
        da: Matrix,
        db: Matrix,
    },
    Focal {
        input: Var,
        targets: Matrix,
        weights: Matrix,
        spec: FocalSpec,
        norm: f64,
    },
    L1 {
        input: Var,
        target: Matrix,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    param: Option<ParamId>,
}

/// Single-writer recording of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    /// Gradient with respect to a recorded value; zeros if unreachable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Matrix {
        self.nodes[v.0].clone().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
    }

    /// Gradient for a parameter, summed over every use on the tape.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    /// Gradient for a parameter, zeros shaped like the stored value when unused.
    pub fn param_or_zero(&self, store: &ParamStore, id: ParamId) -> Matrix {
        self.params.get(&id).cloned().unwrap_or_else(|| {
            let (r, c) = store.get(id).shape();
            Matrix::zeros(r, c)
        })
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Matrix> {
        &self.params
    }

    /// Add another gradient set (for batch accumulation).
    pub fn accumulate_params(into: &mut BTreeMap<ParamId, Matrix>, other: &Gradients) {
        for (id, g) in &other.params {
            match into.get_mut(id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    into.insert(*id, g.clone());
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check(op: &'static str, m: Matrix) -> Result<Matrix> {
    match m.first_non_finite() {
        Some((row, col)) => Err(Error::NonFinite { op, row, col }),
        None => Ok(m),
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn focal_terms(p: f64, y: f64, spec: FocalSpec) -> (f64, f64) {
    // Returns (loss, dloss/dp) for one entry.
    let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let inside = clamped == p;
    let pt = y * clamped + (1.0 - y) * (1.0 - clamped);
    let at = match spec.alpha {
        Some(a) => y * a + (1.0 - y) * (1.0 - a),
        None => 1.0,
    };
    let one_m = 1.0 - pt;
    let mod_factor = one_m.powf(spec.gamma);
    let loss = -at * mod_factor * pt.ln();
    let dpt = if spec.gamma == 0.0 {
        -1.0 / pt
    } else {
        spec.gamma * one_m.powf(spec.gamma - 1.0) * pt.ln() - mod_factor / pt
    };
    let grad = if inside { at * dpt * (2.0 * y - 1.0) } else { 0.0 };
    (loss, grad)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Matrix) -> Result<Var> {
        let m = check("constant", m)?;
        Ok(self.push(m, Op::Leaf))
    }

    /// Record a parameter leaf; its gradient is reported under `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Smallest absolute pre-activation over every ReLU on the tape.
    pub fn min_relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = check("matmul", self.value(a).matmul(self.value(b))?)?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = check("add", self.value(a).zip_map(self.value(b), |x, y| x + y))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = check("sub", self.value(a).zip_map(self.value(b), |x, y| x - y))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// `a + 1·b` with `b` a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let v = Matrix::from_fn(am.rows(), am.cols(), |i, j| am.get(i, j) + bm.get(0, j));
        let v = check("add_row", v)?;
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = check("mul", self.value(a).zip_map(self.value(b), |x, y| x * y))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = check("scale", self.value(a).map(|x| x * s))?;
        Ok(self.push(v, Op::Scale(a, s)))
    }

    /// `s · a` with `s` a 1x1 value on the tape.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sm = self.value(s);
        if sm.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "scale_by",
                left: self.value(a).shape(),
                right: sm.shape(),
            });
        }
        let k = sm.item();
        let v = check("scale_by", self.value(a).map(|x| x * k))?;
        Ok(self.push(v, Op::ScaleBy(a, s)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = check("exp", self.value(a).map(f64::exp))?;
        Ok(self.push(v, Op::Exp(a)))
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        let v = check("pow", self.value(a).map(|x| x.powf(p)))?;
        Ok(self.push(v, Op::Pow(a, p)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = check("sigmoid", self.value(a).map(sigmoid))?;
        Ok(self.push(v, Op::Sigmoid(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = check("sum", Matrix::scalar(self.value(a).sum()))?;
        Ok(self.push(v, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let n = (m.rows() * m.cols()).max(1) as f64;
        let v = check("mean", Matrix::scalar(m.sum() / n))?;
        Ok(self.push(v, Op::Mean(a)))
    }

    /// Population standard deviation over all entries.
    pub fn std(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let n = (m.rows() * m.cols()).max(1) as f64;
        let mean = m.sum() / n;
        let var = m.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let v = check("std", Matrix::scalar(var.sqrt()))?;
        Ok(self.push(v, Op::Std(a)))
    }

    /// Divide each row by `max(row_sum, 1)`.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut out = m.clone();
        for i in 0..m.rows() {
            let s: f64 = m.row(i).iter().sum();
            let d = s.max(1.0);
            for j in 0..m.cols() {
                out.set(i, j, m.get(i, j) / d);
            }
        }
        let v = check("row_normalize", out)?;
        Ok(self.push(v, Op::RowNormalize(a)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::Invalid(format!(
                "gather index {bad} out of range for {} rows",
                m.rows()
            )));
        }
        let v = Matrix::from_fn(idx.len(), m.cols(), |k, j| m.get(idx[k], j));
        Ok(self.push(v, Op::GatherRows(a, idx.to_vec())))
    }

    /// Row `i * m + j` of the result is `a[i] + b[j]`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() {
            return Err(Error::Shape {
                op: "pair_sum",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let (n, m, c) = (am.rows(), bm.rows(), am.cols());
        let v = Matrix::from_fn(n * m, c, |r, k| am.get(r / m, k) + bm.get(r % m, k));
        let v = check("pair_sum", v)?;
        Ok(self.push(v, Op::PairSum(a, b)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let m = self.value(a);
        if m.rows() * m.cols() != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                left: m.shape(),
                right: (rows, cols),
            });
        }
        let v = Matrix::new(rows, cols, m.data().to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Record an elementwise map `value = f(x; a, b)` with precomputed partials.
    pub fn scalar_param_map(
        &mut self,
        op: &'static str,
        value: Matrix,
        a: Var,
        da: Matrix,
        b: Var,
        db: Matrix,
    ) -> Result<Var> {
        for s in [a, b] {
            if self.value(s).shape() != (1, 1) {
                return Err(Error::Shape {
                    op,
                    left: value.shape(),
                    right: self.value(s).shape(),
                });
            }
        }
        same_shape(op, &value, &da)?;
        same_shape(op, &value, &db)?;
        let value = check(op, value)?;
        let da = check(op, da)?;
        let db = check(op, db)?;
        Ok(self.push(value, Op::ScalarParamMap { a, b, da, db }))
    }

    /// Weighted binary focal loss over probabilities, normalized by the weight sum.
    pub fn focal(
        &mut self,
        probs: Var,
        targets: Matrix,
        weights: Matrix,
        spec: FocalSpec,
    ) -> Result<Var> {
        let p = self.value(probs);
        same_shape("focal", p, &targets)?;
        same_shape("focal", p, &weights)?;
        let norm = weights.sum();
        let mut total = 0.0;
        if norm > 0.0 {
            for ((&pv, &y), &w) in p.data().iter().zip(targets.data()).zip(weights.data()) {
                if w != 0.0 {
                    total += w * focal_terms(pv, y, spec).0;
                }
            }
            total /= norm;
        }
        let v = check("focal", Matrix::scalar(total))?;
        Ok(self.push(
            v,
            Op::Focal {
                input: probs,
                targets,
                weights,
                spec,
                norm,
            },
        ))
    }

    /// Mean absolute difference against a constant target.
    pub fn l1(&mut self, input: Var, target: Matrix) -> Result<Var> {
        let m = self.value(input);
        same_shape("l1", m, &target)?;
        let n = (m.rows() * m.cols()).max(1) as f64;
        let total: f64 = m
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let v = check("l1", Matrix::scalar(total / n))?;
        Ok(self.push(v, Op::L1 { input, target }))
    }

    /// Gradients of a scalar node with respect to everything recorded before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.matmul(&bv.transpose())?);
                    acc(&mut grads, *b, av.transpose().matmul(&g)?);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut gb = Matrix::zeros(1, cols);
                    for i in 0..g.rows() {
                        for j in 0..cols {
                            gb.data_mut()[j] += g.get(i, j);
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.zip_map(bv, |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(av, |x, y| x * y));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).item();
                    let av = self.value(*a);
                    let gs: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                    acc(&mut grads, *a, g.map(|x| x * k));
                    acc(&mut grads, *s, Matrix::scalar(gs));
                }
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(&node.value, |x, y| x * y)),
                Op::Pow(a, p) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(av, |x, y| x * p * y.powf(p - 1.0)));
                }
                Op::Sigmoid(a) => {
                    acc(&mut grads, *a, g.zip_map(&node.value, |x, s| x * s * (1.0 - s)))
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(av, |x, y| if y > 0.0 { x } else { 0.0 }));
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let n = (r * c).max(1) as f64;
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item() / n));
                }
                Op::Std(a) => {
                    let av = self.value(*a);
                    let n = (av.rows() * av.cols()).max(1) as f64;
                    let sd = node.value.item();
                    let gd = if sd > 0.0 {
                        let mean = av.sum() / n;
                        let k = g.item() / (n * sd);
                        av.map(|x| k * (x - mean))
                    } else {
                        Matrix::zeros(av.rows(), av.cols())
                    };
                    acc(&mut grads, *a, gd);
                }
                Op::RowNormalize(a) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let s: f64 = av.row(i).iter().sum();
                        if s > 1.0 {
                            let dot: f64 = g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum();
                            for k in 0..av.cols() {
                                ga.set(i, k, g.get(i, k) / s - dot / (s * s));
                            }
                        } else {
                            for k in 0..av.cols() {
                                ga.set(i, k, g.get(i, k));
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            let cur = ga.get(src, j);
                            ga.set(src, j, cur + g.get(k, j));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::PairSum(a, b) => {
                    let (n, c) = self.value(*a).shape();
                    let m = self.value(*b).rows();
                    let mut ga = Matrix::zeros(n, c);
                    let mut gb = Matrix::zeros(m, c);
                    for r in 0..n * m {
                        let (i, j) = (r / m, r % m);
                        for k in 0..c {
                            let x = g.get(r, k);
                            ga.set(i, k, ga.get(i, k) + x);
                            gb.set(j, k, gb.get(j, k) + x);
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::new(r, c, g.data().to_vec())?);
                }
                Op::ScalarParamMap { a, b, da, db } => {
                    let ga: f64 = g.data().iter().zip(da.data()).map(|(x, y)| x * y).sum();
                    let gb: f64 = g.data().iter().zip(db.data()).map(|(x, y)| x * y).sum();
                    acc(&mut grads, *a, Matrix::scalar(ga));
                    acc(&mut grads, *b, Matrix::scalar(gb));
                }
                Op::Focal {
                    input,
                    targets,
                    weights,
                    spec,
                    norm,
                } => {
                    let p = self.value(*input);
                    let k = g.item();
                    let mut gp = Matrix::zeros(p.rows(), p.cols());
                    if *norm > 0.0 {
                        for (e, ((&pv, &y), &w)) in p
                            .data()
                            .iter()
                            .zip(targets.data())
                            .zip(weights.data())
                            .enumerate()
                        {
                            if w != 0.0 {
                                gp.data_mut()[e] = k * w * focal_terms(pv, y, *spec).1 / norm;
                            }
                        }
                    }
                    acc(&mut grads, *input, gp);
                }
                Op::L1 { input, target } => {
                    let m = self.value(*input);
                    let n = (m.rows() * m.cols()).max(1) as f64;
                    let k = g.item() / n;
                    let gi = m.zip_map(target, |a, b| {
                        let d = a - b;
                        if d > 0.0 {
                            k
                        } else if d < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *input, gi);
                }
            }
            grads[idx] = Some(g);
        }
        if let Some((row, col)) = grads.iter().flatten().find_map(|m| m.first_non_finite()) {
            return Err(Error::NonFinite {
                op: "backward",
                row,
                col,
            });
        }

        let mut params: BTreeMap<ParamId, Matrix> = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                match params.get_mut(&id) {
                    Some(existing) => existing.add_assign(g),
                    None => {
                        params.insert(id, g.clone());
                    }
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

/// Focal loss value for a single probability, with the same clamping as the tape node.
pub fn focal_value(p: f64, label: f64, spec: FocalSpec) -> f64 {
    focal_terms(p, label, spec).0
}
