use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to predicted probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Tolerance on row sums when an op requires probability-vector inputs.
pub const DIST_TOL: f64 = 1e-6;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        w: Var,
        x: Var,
        b: Var,
        batch: usize,
        inputs: usize,
        outputs: usize,
    },
    Relu(Var),
    Softmax {
        input: Var,
        cols: usize,
    },
    Log(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        pred: Var,
        target: Var,
        cols: usize,
    },
    Marginalize {
        heads: Var,
        weights: Var,
        classes: usize,
        angles: usize,
    },
    Stack {
        parts: Vec<Var>,
        cols: usize,
    },
    GatherRows {
        input: Var,
        rows: Vec<usize>,
        cols: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run record of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] walks it once in reverse.
///
/// Values produced by [`Tape::detach`] are logged in call order. A tape built
/// with [`Tape::replaying`] substitutes a previously logged sequence instead,
/// which lets finite-difference checks hold stop-gradient quantities fixed.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    detached: Vec<Vec<f64>>,
    replay: Option<Rc<Vec<Vec<f64>>>>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn rows_of(len: usize, cols: usize) -> usize {
    len / cols
}

fn check_distribution_rows(op: &'static str, values: &[f64], cols: usize) -> Result<()> {
    for (row, chunk) in values.chunks(cols).enumerate() {
        let sum: f64 = chunk.iter().sum();
        if chunk.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > DIST_TOL {
            return Err(Error::NotDistribution { op, row, sum });
        }
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose `detach` calls return the given values in order.
    pub fn replaying(detached: Rc<Vec<Vec<f64>>>) -> Self {
        Tape {
            replay: Some(detached),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), requires_grad, Op::Leaf)
    }

    pub fn tensor(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t, requires_grad))
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        self.tensor(shape, values, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite")
    }

    fn last_dim(&self, v: Var) -> usize {
        *self.node(v).shape.last().unwrap()
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.node(v).shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Stop-gradient copy of `x`.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let shape = self.node(x).shape.clone();
        let value = match &self.replay {
            Some(log) => {
                let v = log.get(self.detached.len()).ok_or_else(|| {
                    Error::invalid("replayed tape has fewer detached values than calls")
                })?;
                if v.len() != self.node(x).value.len() {
                    return Err(Error::dim("detach", "replayed value has a different length"));
                }
                v.clone()
            }
            None => self.node(x).value.clone(),
        };
        self.detached.push(value.clone());
        Ok(self.push(shape, value, false, Op::Leaf))
    }

    /// Values produced by `detach`, in call order.
    pub fn detached_values(&self) -> &[Vec<f64>] {
        &self.detached
    }

    /// Smallest |input| over all relu nodes, used to keep finite-difference
    /// probes away from kinks.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => self.nodes[x.0]
                    .value
                    .iter()
                    .map(|v| v.abs())
                    .reduce(f64::min),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// `out[i, j] = sum_k w[j, k] * x[i, k] + b[j]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (outputs, inputs) = self.matrix_dims("affine", w)?;
        let (batch, x_cols) = self.matrix_dims("affine", x)?;
        if x_cols != inputs {
            return Err(Error::dim(
                "affine",
                format!("weight is {outputs}x{inputs} but input has {x_cols} columns"),
            ));
        }
        if self.node(b).shape != [outputs] {
            return Err(Error::dim(
                "affine",
                format!("bias shape {:?}, expected [{outputs}]", self.node(b).shape),
            ));
        }
        let bias = &self.node(b).value;
        let mut out = Vec::with_capacity(batch * outputs);
        for _ in 0..batch {
            out.extend_from_slice(bias);
        }
        {
            let wv = ArrayView2::from_shape((outputs, inputs), &self.node(w).value).unwrap();
            let xv = ArrayView2::from_shape((batch, inputs), &self.node(x).value).unwrap();
            let mut ov = ArrayViewMut2::from_shape((batch, outputs), &mut out).unwrap();
            general_mat_mul(1.0, &xv, &wv.t(), 1.0, &mut ov);
        }
        let rg = self.node(w).requires_grad || self.node(x).requires_grad || self.node(b).requires_grad;
        Ok(self.push(
            vec![batch, outputs],
            out,
            rg,
            Op::Affine {
                w,
                x,
                b,
                batch,
                inputs,
                outputs,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(shape, out, rg, Op::Relu(x))
    }

    /// Softmax over the last axis, with the row maximum subtracted first.
    pub fn softmax(&mut self, x: Var) -> Var {
        let cols = self.last_dim(x);
        let n = self.node(x);
        let mut out = n.value.clone();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(shape, out, rg, Op::Softmax { input: x, cols })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x);
        if let Some((index, &value)) = n.value.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(Error::NonPositiveLog { index, value });
        }
        let out = n.value.iter().map(|v| v.ln()).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        Ok(self.push(shape, out, rg, Op::Log(x)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (na, nb) = (self.node(a), self.node(b));
        let out = na.value.iter().zip(&nb.value).map(|(x, y)| x + y).collect();
        let (shape, rg) = (na.shape.clone(), na.requires_grad || nb.requires_grad);
        Ok(self.push(shape, out, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (na, nb) = (self.node(a), self.node(b));
        let out = na.value.iter().zip(&nb.value).map(|(x, y)| x * y).collect();
        let (shape, rg) = (na.shape.clone(), na.requires_grad || nb.requires_grad);
        Ok(self.push(shape, out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let n = self.node(a);
        let out = n.value.iter().map(|v| v * c).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(shape, out, rg, Op::Scale(a, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let s = n.value.iter().sum();
        let rg = n.requires_grad;
        self.push(vec![1], vec![s], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let s = n.value.iter().sum::<f64>() / n.value.len() as f64;
        let rg = n.requires_grad;
        self.push(vec![1], vec![s], rg, Op::Mean(x))
    }

    /// Mean over rows of `-sum_j target[j] * ln(max(pred[j], PROB_EPS))`.
    pub fn cross_entropy(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("cross_entropy", pred, target)?;
        let cols = self.last_dim(pred);
        let (np, nt) = (self.node(pred), self.node(target));
        check_distribution_rows("cross_entropy", &np.value, cols)?;
        check_distribution_rows("cross_entropy", &nt.value, cols)?;
        let rows = rows_of(np.value.len(), cols);
        let total: f64 = np
            .value
            .iter()
            .zip(&nt.value)
            .map(|(&p, &t)| if t == 0.0 { 0.0 } else { -t * p.max(PROB_EPS).ln() })
            .sum();
        let rg = np.requires_grad || nt.requires_grad;
        Ok(self.push(
            vec![1],
            vec![total / rows as f64],
            rg,
            Op::CrossEntropy { pred, target, cols },
        ))
    }

    /// `out[r, a] = sum_c weights[r, c] * heads[r, c, a]`.
    pub fn marginalize(&mut self, heads: Var, weights: Var) -> Result<Var> {
        let (rows, classes, angles) = match self.node(heads).shape.as_slice() {
            &[r, c, k] => (r, c, k),
            s => return Err(Error::dim("marginalize", format!("heads shape {s:?}, expected 3 axes"))),
        };
        if self.node(weights).shape != [rows, classes] {
            return Err(Error::dim(
                "marginalize",
                format!(
                    "weights shape {:?}, expected [{rows}, {classes}]",
                    self.node(weights).shape
                ),
            ));
        }
        let (nh, nw) = (self.node(heads), self.node(weights));
        check_distribution_rows("marginalize", &nh.value, angles)?;
        check_distribution_rows("marginalize", &nw.value, classes)?;
        let mut out = vec![0.0; rows * angles];
        for r in 0..rows {
            let o = &mut out[r * angles..(r + 1) * angles];
            for c in 0..classes {
                let wt = nw.value[r * classes + c];
                let h = &nh.value[(r * classes + c) * angles..(r * classes + c + 1) * angles];
                for (dst, &p) in o.iter_mut().zip(h) {
                    *dst += wt * p;
                }
            }
        }
        let rg = nh.requires_grad || nw.requires_grad;
        Ok(self.push(
            vec![rows, angles],
            out,
            rg,
            Op::Marginalize {
                heads,
                weights,
                classes,
                angles,
            },
        ))
    }

    /// Stacks `C` matrices of shape `[R, K]` into `[R, C, K]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("stack", "no inputs"))?;
        let (rows, cols) = self.matrix_dims("stack", first)?;
        for &p in parts {
            self.same_shape("stack", first, p)?;
        }
        let c = parts.len();
        let mut out = vec![0.0; rows * c * cols];
        for (ci, &p) in parts.iter().enumerate() {
            let v = &self.node(p).value;
            for r in 0..rows {
                out[(r * c + ci) * cols..(r * c + ci + 1) * cols]
                    .copy_from_slice(&v[r * cols..(r + 1) * cols]);
            }
        }
        let rg = parts.iter().any(|&p| self.node(p).requires_grad);
        Ok(self.push(
            vec![rows, c, cols],
            out,
            rg,
            Op::Stack {
                parts: parts.to_vec(),
                cols,
            },
        ))
    }

    pub fn gather_rows(&mut self, input: Var, rows: &[usize]) -> Result<Var> {
        let (n_rows, cols) = self.matrix_dims("gather_rows", input)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of {n_rows}")));
        }
        if rows.is_empty() {
            return Err(Error::dim("gather_rows", "empty row selection"));
        }
        let v = &self.node(input).value;
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(&v[r * cols..(r + 1) * cols]);
        }
        let rg = self.node(input).requires_grad;
        Ok(self.push(
            vec![rows.len(), cols],
            out,
            rg,
            Op::GatherRows {
                input,
                rows: rows.to_vec(),
                cols,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let (_, cols) = self.matrix_dims("concat_rows", first)?;
        let mut total = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_rows", p)?;
            if c != cols {
                return Err(Error::dim("concat_rows", format!("{c} columns, expected {cols}")));
            }
            total += r;
            out.extend_from_slice(&self.node(p).value);
        }
        let rg = parts.iter().any(|&p| self.node(p).requires_grad);
        Ok(self.push(
            vec![total, cols],
            out,
            rg,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar. Every leaf that requires a gradient gets
    /// one, zero when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got shape {:?}", ln.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if ln.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Affine {
                    w,
                    x,
                    b,
                    batch,
                    inputs,
                    outputs,
                } => {
                    let (batch, inputs, outputs) = (*batch, *inputs, *outputs);
                    let gv = ArrayView2::from_shape((batch, outputs), &g).unwrap();
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        let wv = ArrayView2::from_shape((outputs, inputs), &self.node(*w).value).unwrap();
                        let mut dxv = ArrayViewMut2::from_shape((batch, inputs), dx.as_mut_slice()).unwrap();
                        general_mat_mul(1.0, &gv, &wv, 1.0, &mut dxv);
                    }
                    if let Some(dw) = self.grad_slot(&mut grads, *w) {
                        let xv = ArrayView2::from_shape((batch, inputs), &self.node(*x).value).unwrap();
                        let mut dwv = ArrayViewMut2::from_shape((outputs, inputs), dw.as_mut_slice()).unwrap();
                        general_mat_mul(1.0, &gv.t(), &xv, 1.0, &mut dwv);
                    }
                    if let Some(db) = self.grad_slot(&mut grads, *b) {
                        for row in g.chunks(outputs) {
                            add_into(db, row);
                        }
                    }
                }
                Op::Relu(x) => {
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        for ((d, &gi), &o) in dx.iter_mut().zip(&g).zip(&node.value) {
                            if o > 0.0 {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::Softmax { input, cols } => {
                    if let Some(dx) = self.grad_slot(&mut grads, *input) {
                        for ((dr, gr), yr) in dx
                            .chunks_mut(*cols)
                            .zip(g.chunks(*cols))
                            .zip(node.value.chunks(*cols))
                        {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += yi * (gi - dot);
                            }
                        }
                    }
                }
                Op::Log(x) => {
                    let xv = &self.node(*x).value;
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        for ((d, &gi), &v) in dx.iter_mut().zip(&g).zip(xv) {
                            *d += gi / v;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = self.grad_slot(&mut grads, v) {
                            add_into(d, &g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        let ov = &self.node(other).value;
                        if let Some(d) = self.grad_slot(&mut grads, v) {
                            for ((di, &gi), &o) in d.iter_mut().zip(&g).zip(ov) {
                                *di += gi * o;
                            }
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(d) = self.grad_slot(&mut grads, *a) {
                        for (di, &gi) in d.iter_mut().zip(&g) {
                            *di += c * gi;
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(d) = self.grad_slot(&mut grads, *x) {
                        for di in d.iter_mut() {
                            *di += g[0];
                        }
                    }
                }
                Op::Mean(x) => {
                    if let Some(d) = self.grad_slot(&mut grads, *x) {
                        let s = g[0] / d.len() as f64;
                        for di in d.iter_mut() {
                            *di += s;
                        }
                    }
                }
                Op::CrossEntropy { pred, target, cols } => {
                    let pv = &self.node(*pred).value;
                    let tv = &self.node(*target).value;
                    let s = g[0] / rows_of(pv.len(), *cols) as f64;
                    if let Some(dp) = self.grad_slot(&mut grads, *pred) {
                        for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(tv) {
                            if p > PROB_EPS {
                                *d -= s * t / p;
                            }
                        }
                    }
                    if let Some(dt) = self.grad_slot(&mut grads, *target) {
                        for (d, &p) in dt.iter_mut().zip(pv) {
                            *d -= s * p.max(PROB_EPS).ln();
                        }
                    }
                }
                Op::Marginalize {
                    heads,
                    weights,
                    classes,
                    angles,
                } => {
                    let (classes, angles) = (*classes, *angles);
                    let hv = &self.node(*heads).value;
                    let wv = &self.node(*weights).value;
                    if let Some(dh) = self.grad_slot(&mut grads, *heads) {
                        for (r, gr) in g.chunks(angles).enumerate() {
                            for c in 0..classes {
                                let wt = wv[r * classes + c];
                                let base = (r * classes + c) * angles;
                                for (d, &gi) in dh[base..base + angles].iter_mut().zip(gr) {
                                    *d += gi * wt;
                                }
                            }
                        }
                    }
                    if let Some(dw) = self.grad_slot(&mut grads, *weights) {
                        for (r, gr) in g.chunks(angles).enumerate() {
                            for c in 0..classes {
                                let base = (r * classes + c) * angles;
                                let dot: f64 = hv[base..base + angles].iter().zip(gr).map(|(h, gi)| h * gi).sum();
                                dw[r * classes + c] += dot;
                            }
                        }
                    }
                }
                Op::Stack { parts, cols } => {
                    let c = parts.len();
                    for (ci, &p) in parts.iter().enumerate() {
                        if let Some(d) = self.grad_slot(&mut grads, p) {
                            for (r, dr) in d.chunks_mut(*cols).enumerate() {
                                add_into(dr, &g[(r * c + ci) * cols..(r * c + ci + 1) * cols]);
                            }
                        }
                    }
                }
                Op::GatherRows { input, rows, cols } => {
                    if let Some(d) = self.grad_slot(&mut grads, *input) {
                        for (i, &r) in rows.iter().enumerate() {
                            add_into(&mut d[r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols]);
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.node(p).value.len();
                        if let Some(d) = self.grad_slot(&mut grads, p) {
                            add_into(d, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = self.node(v);
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }
}
