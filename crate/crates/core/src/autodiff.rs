//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation applied to its values in topological order. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and stores exact gradients on every
//! value that requires them. The record can also be replayed after swapping leaf data, which
//! re-runs the forward computation without rebuilding the graph.
//!
//! Reductions across a row (softmax normalizer, row sums, pair inner products and the
//! input-gradient of an affine layer) sum their terms in sorted order. This makes every result
//! bit-identical under a permutation of the summed axis, which the output-node symmetry of the
//! pairwise losses relies on.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::ParameterVector;

/// Dense row-major tensor of rank 0, 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::contract(format!("rank {} tensors are not supported", shape.len())));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Scalar value; panics if the tensor holds more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::contract(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    fn len1(&self, what: &str) -> Result<usize> {
        match self.shape.as_slice() {
            [n] => Ok(*n),
            s => Err(Error::contract(format!("{what}: expected a vector, got shape {s:?}"))),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Softmax(Var),
    Log(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64, f64),
    Clamp(Var, f64, f64),
    Gather(Var, Arc<[usize]>),
    Pick(Var, Arc<[usize]>),
    RowSum(Var),
    PairDot(Var, Var, Arc<[(usize, usize)]>),
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Arc<[f64]>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Sum that does not depend on the order of its terms: the terms are added in ascending
/// order. May reorder `terms`.
#[inline]
pub(crate) fn order_free_sum(terms: &mut [f64]) -> f64 {
    // Compare-and-select keeps the network branch-free. Equal keys (or -0 against +0, or a
    // NaN) never change the sum, whichever way they end up.
    #[inline(always)]
    fn cx(t: &mut [f64], i: usize, j: usize) {
        let (a, b) = (t[i], t[j]);
        let swap = a > b;
        t[i] = if swap { b } else { a };
        t[j] = if swap { a } else { b };
    }
    match terms.len() {
        0 | 1 => {}
        2 => cx(terms, 0, 1),
        3 => {
            cx(terms, 0, 1);
            cx(terms, 1, 2);
            cx(terms, 0, 1);
        }
        4 => {
            cx(terms, 0, 1);
            cx(terms, 2, 3);
            cx(terms, 0, 2);
            cx(terms, 1, 3);
            cx(terms, 1, 2);
        }
        _ => terms.sort_unstable_by(f64::total_cmp),
    }
    terms.iter().sum()
}

/// Order-free inner product.
#[inline]
pub(crate) fn order_free_dot(p: &[f64], q: &[f64]) -> f64 {
    let mut buf = [0.0; 8];
    if p.len() <= buf.len() {
        let terms = &mut buf[..p.len()];
        for ((t, a), b) in terms.iter_mut().zip(p).zip(q) {
            *t = a * b;
        }
        order_free_sum(terms)
    } else {
        let mut terms: Vec<f64> = p.iter().zip(q).map(|(a, b)| a * b).collect();
        order_free_sum(&mut terms)
    }
}

fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
    }
    let mut scratch = out.to_vec();
    let total = order_free_sum(&mut scratch);
    out.iter_mut().for_each(|o| *o /= total);
}

/// Numerically stable softmax of a single logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::domain("softmax input contains a non-finite logit"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_row(logits, &mut out);
    Ok(out)
}

/// Record of operations plus the values and gradients they produced.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// One differentiable leaf per group, in group order.
    pub fn params_from(&mut self, params: &ParameterVector) -> Vec<Var> {
        params
            .groups()
            .iter()
            .map(|g| {
                let t = Tensor {
                    shape: g.shape().to_vec(),
                    data: g.data().to_vec(),
                };
                self.param(t)
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradients of a group of parameter leaves packed with the structure of `template`.
    pub fn grads_as(&self, vars: &[Var], template: &ParameterVector) -> Result<ParameterVector> {
        if vars.len() != template.groups().len() {
            return Err(Error::contract("one variable per parameter group expected"));
        }
        let mut out = template.zeros_like();
        for (g, v) in out.groups_mut().iter_mut().zip(vars) {
            if let Some(grad) = self.grad(*v) {
                if grad.len() != g.len() {
                    return Err(Error::contract("gradient length differs from group length"));
                }
                g.data_mut().copy_from_slice(grad);
            }
        }
        Ok(out)
    }

    /// Clears gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Replaces the data of a leaf. Call [`Tape::replay`] to refresh downstream values.
    pub fn set_leaf(&mut self, v: Var, data: &[f64]) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::contract("set_leaf on a non-leaf value"));
        }
        if node.value.data.len() != data.len() {
            return Err(Error::contract("set_leaf with a different element count"));
        }
        node.value.data.copy_from_slice(data);
        Ok(())
    }

    /// Recomputes every non-leaf value in record order and clears gradients.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = self.compute(&op)?;
        }
        self.zero_grad();
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.compute(&op)?;
        let requires_grad = operands(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            return Err(Error::contract(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let map = |v: &Var, f: &dyn Fn(f64) -> f64| Tensor {
            shape: val(v).shape.clone(),
            data: val(v).data.iter().map(|x| f(*x)).collect(),
        };
        let zip = |a: &Var, b: &Var, f: &dyn Fn(f64, f64) -> f64| Tensor {
            shape: val(a).shape.clone(),
            data: val(a).data.iter().zip(&val(b).data).map(|(x, y)| f(*x, *y)).collect(),
        };
        Ok(match op {
            Op::Leaf => unreachable!("leaves are never recomputed"),
            Op::MatMulT(a, w) => {
                let (n, d) = val(a).dims2("matmul input")?;
                let (o, dw) = val(w).dims2("matmul weight")?;
                if d != dw {
                    return Err(Error::contract(format!(
                        "matmul: input width {d} differs from weight width {dw}"
                    )));
                }
                let (x, wd) = (&val(a).data, &val(w).data);
                let mut out = vec![0.0; n * o];
                for r in 0..n {
                    let xr = &x[r * d..(r + 1) * d];
                    for k in 0..o {
                        let wr = &wd[k * d..(k + 1) * d];
                        out[r * o + k] = xr.iter().zip(wr).map(|(p, q)| p * q).sum();
                    }
                }
                Tensor {
                    shape: vec![n, o],
                    data: out,
                }
            }
            Op::AddBias(a, b) => {
                let (n, o) = val(a).dims2("add_bias input")?;
                let ob = val(b).len1("add_bias bias")?;
                if o != ob {
                    return Err(Error::contract("add_bias: bias length differs from width"));
                }
                let bias = &val(b).data;
                let mut data = val(a).data.clone();
                for r in 0..n {
                    for k in 0..o {
                        data[r * o + k] += bias[k];
                    }
                }
                Tensor {
                    shape: vec![n, o],
                    data,
                }
            }
            Op::Relu(a) => map(a, &|x| if x > 0.0 { x } else { 0.0 }),
            Op::Softmax(a) => {
                let (n, k) = val(a).dims2("softmax")?;
                if val(a).data.iter().any(|z| !z.is_finite()) {
                    return Err(Error::domain("softmax input contains a non-finite logit"));
                }
                let mut data = vec![0.0; n * k];
                for r in 0..n {
                    softmax_row(&val(a).data[r * k..(r + 1) * k], &mut data[r * k..(r + 1) * k]);
                }
                Tensor {
                    shape: vec![n, k],
                    data,
                }
            }
            Op::Log(a) => {
                if val(a).data.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                    return Err(Error::domain("log of a non-positive or non-finite value"));
                }
                map(a, &f64::ln)
            }
            Op::Exp(a) => {
                let t = map(a, &f64::exp);
                if t.data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::domain("exp overflow"));
                }
                t
            }
            Op::Add(a, b) => zip(a, b, &|x, y| x + y),
            Op::Sub(a, b) => zip(a, b, &|x, y| x - y),
            Op::Mul(a, b) => zip(a, b, &|x, y| x * y),
            Op::Div(a, b) => {
                if val(b).data.contains(&0.0) {
                    return Err(Error::domain("division by zero"));
                }
                zip(a, b, &|x, y| x / y)
            }
            Op::Affine(a, s, t) => map(a, &|x| s * x + t),
            Op::Clamp(a, lo, hi) => map(a, &|x| x.clamp(*lo, *hi)),
            Op::Gather(a, idx) => {
                let n = val(a).len1("gather")?;
                if let Some(bad) = idx.iter().find(|i| **i >= n) {
                    return Err(Error::contract(format!("gather index {bad} out of range {n}")));
                }
                Tensor::vector(idx.iter().map(|i| val(a).data[*i]).collect())
            }
            Op::Pick(a, idx) => {
                let (n, k) = val(a).dims2("pick")?;
                if idx.len() != n {
                    return Err(Error::contract("pick: one column index per row expected"));
                }
                if let Some(bad) = idx.iter().find(|c| **c >= k) {
                    return Err(Error::contract(format!("pick column {bad} out of range {k}")));
                }
                Tensor::vector(idx.iter().enumerate().map(|(r, c)| val(a).data[r * k + c]).collect())
            }
            Op::RowSum(a) => {
                let (n, k) = val(a).dims2("row_sum")?;
                let mut scratch = vec![0.0; k];
                Tensor::vector(
                    (0..n)
                        .map(|r| {
                            scratch.copy_from_slice(&val(a).data[r * k..(r + 1) * k]);
                            order_free_sum(&mut scratch)
                        })
                        .collect(),
                )
            }
            Op::PairDot(a, b, pairs) => {
                let (n, k) = val(a).dims2("pair_dot")?;
                if val(b).dims2("pair_dot")? != (n, k) {
                    return Err(Error::contract("pair_dot: operands differ in shape"));
                }
                if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= n || *j >= n) {
                    return Err(Error::contract(format!("pair ({i},{j}) out of range {n}")));
                }
                let (x, y) = (&val(a).data, &val(b).data);
                let mut scratch = vec![0.0; k];
                Tensor::vector(
                    pairs
                        .iter()
                        .map(|&(i, j)| {
                            for (c, s) in scratch.iter_mut().enumerate() {
                                *s = x[i * k + c] * y[j * k + c];
                            }
                            order_free_sum(&mut scratch)
                        })
                        .collect(),
                )
            }
            Op::Sum(a) => Tensor::scalar(val(a).data.iter().sum()),
            Op::Mean(a) => {
                let n = val(a).data.len();
                if n == 0 {
                    return Err(Error::contract("mean of an empty tensor"));
                }
                Tensor::scalar(val(a).data.iter().sum::<f64>() / n as f64)
            }
            Op::WeightedSum(a, w) => {
                let n = val(a).len1("weighted_sum")?;
                if w.len() != n {
                    return Err(Error::contract("weighted_sum: weight length differs"));
                }
                Tensor::scalar(val(a).data.iter().zip(w.iter()).map(|(x, w)| x * w).sum())
            }
        })
    }

    // ---- recorded operations ------------------------------------------------------------

    /// `a · wᵀ` for `a: [n, d]`, `w: [o, d]`.
    pub fn matmul_t(&mut self, a: Var, w: Var) -> Result<Var> {
        self.push(Op::MatMulT(a, w))
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::AddBias(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    /// `max(0, a)`; identical to `relu` and kept as a separate name for margin losses.
    pub fn hinge(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    /// Row-wise softmax of a `[n, k]` matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softmax(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        self.push(Op::Div(a, b))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.push(Op::Affine(a, scale, shift))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient passes only where `lo <= a <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::contract("clamp: lo must not exceed hi"));
        }
        self.push(Op::Clamp(a, lo, hi))
    }

    /// `out[m] = a[idx[m]]` for a vector `a`.
    pub fn gather(&mut self, a: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        self.push(Op::Gather(a, idx.into()))
    }

    /// `out[r] = a[r, cols[r]]` for a matrix `a`.
    pub fn pick(&mut self, a: Var, cols: impl Into<Arc<[usize]>>) -> Result<Var> {
        self.push(Op::Pick(a, cols.into()))
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::RowSum(a))
    }

    /// `out[m] = Σ_k a[i_m, k] · b[j_m, k]` for every pair `(i_m, j_m)`.
    pub fn pair_dot(&mut self, a: Var, b: Var, pairs: impl Into<Arc<[(usize, usize)]>>) -> Result<Var> {
        self.push(Op::PairDot(a, b, pairs.into()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a))
    }

    /// `Σ w_i a_i` with constant weights, summed in index order.
    pub fn weighted_sum(&mut self, a: Var, w: impl Into<Arc<[f64]>>) -> Result<Var> {
        self.push(Op::WeightedSum(a, w.into()))
    }

    // ---- reverse pass -------------------------------------------------------------------

    /// Populates gradients of `loss` with respect to every value that requires them.
    ///
    /// Calling this twice without [`Tape::zero_grad`] in between is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract("backward already ran; call zero_grad first"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            self.nodes[i].grad = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: &Var, contrib: Vec<f64>| {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };

        match op {
            Op::Leaf => {}
            Op::MatMulT(a, w) => {
                let (n, d) = val(a).dims2("matmul")?;
                let (o, _) = val(w).dims2("matmul")?;
                let (x, wd) = (&val(a).data, &val(w).data);
                if wants(a) {
                    let mut ga = vec![0.0; n * d];
                    let mut scratch = vec![0.0; o];
                    for r in 0..n {
                        for c in 0..d {
                            for (k, s) in scratch.iter_mut().enumerate() {
                                *s = g[r * o + k] * wd[k * d + c];
                            }
                            ga[r * d + c] = order_free_sum(&mut scratch);
                        }
                    }
                    acc(a, ga);
                }
                if wants(w) {
                    let mut gw = vec![0.0; o * d];
                    for r in 0..n {
                        for k in 0..o {
                            let gk = g[r * o + k];
                            for c in 0..d {
                                gw[k * d + c] += gk * x[r * d + c];
                            }
                        }
                    }
                    acc(w, gw);
                }
            }
            Op::AddBias(a, b) => {
                let (n, o) = val(a).dims2("add_bias")?;
                if wants(a) {
                    acc(a, g.to_vec());
                }
                if wants(b) {
                    let mut gb = vec![0.0; o];
                    for r in 0..n {
                        for k in 0..o {
                            gb[k] += g[r * o + k];
                        }
                    }
                    acc(b, gb);
                }
            }
            Op::Relu(a) => {
                if wants(a) {
                    // Subgradient 0 at the kink.
                    let ga = val(a).data.iter().zip(g).map(|(x, gi)| if *x > 0.0 { *gi } else { 0.0 });
                    acc(a, ga.collect());
                }
            }
            Op::Softmax(a) => {
                if wants(a) {
                    let (n, k) = out.dims2("softmax")?;
                    let p = &out.data;
                    let mut ga = vec![0.0; n * k];
                    let mut scratch = vec![0.0; k];
                    for r in 0..n {
                        let row = r * k..(r + 1) * k;
                        for (s, (gi, pi)) in scratch.iter_mut().zip(g[row.clone()].iter().zip(&p[row.clone()])) {
                            *s = gi * pi;
                        }
                        let dot = order_free_sum(&mut scratch);
                        for c in row {
                            ga[c] = p[c] * (g[c] - dot);
                        }
                    }
                    acc(a, ga);
                }
            }
            Op::Log(a) => {
                if wants(a) {
                    acc(a, val(a).data.iter().zip(g).map(|(x, gi)| gi / x).collect());
                }
            }
            Op::Exp(a) => {
                if wants(a) {
                    acc(a, out.data.iter().zip(g).map(|(y, gi)| gi * y).collect());
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    acc(a, g.to_vec());
                }
                if wants(b) {
                    acc(b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    acc(a, g.to_vec());
                }
                if wants(b) {
                    acc(b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    acc(a, g.iter().zip(&val(b).data).map(|(gi, y)| gi * y).collect());
                }
                if wants(b) {
                    acc(b, g.iter().zip(&val(a).data).map(|(gi, x)| gi * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (x, y) = (&val(a).data, &val(b).data);
                if wants(a) {
                    acc(a, g.iter().zip(y).map(|(gi, yi)| gi / yi).collect());
                }
                if wants(b) {
                    let gb = g.iter().zip(x.iter().zip(y)).map(|(gi, (xi, yi))| -gi * xi / (yi * yi));
                    acc(b, gb.collect());
                }
            }
            Op::Affine(a, s, _) => {
                if wants(a) {
                    acc(a, g.iter().map(|gi| gi * s).collect());
                }
            }
            Op::Clamp(a, lo, hi) => {
                if wants(a) {
                    let ga = val(a)
                        .data
                        .iter()
                        .zip(g)
                        .map(|(x, gi)| if *x >= *lo && *x <= *hi { *gi } else { 0.0 });
                    acc(a, ga.collect());
                }
            }
            Op::Gather(a, idx) => {
                if wants(a) {
                    let mut ga = vec![0.0; val(a).data.len()];
                    for (m, i) in idx.iter().enumerate() {
                        ga[*i] += g[m];
                    }
                    acc(a, ga);
                }
            }
            Op::Pick(a, cols) => {
                if wants(a) {
                    let (_, k) = val(a).dims2("pick")?;
                    let mut ga = vec![0.0; val(a).data.len()];
                    for (r, c) in cols.iter().enumerate() {
                        ga[r * k + c] += g[r];
                    }
                    acc(a, ga);
                }
            }
            Op::RowSum(a) => {
                if wants(a) {
                    let (n, k) = val(a).dims2("row_sum")?;
                    let mut ga = vec![0.0; n * k];
                    for r in 0..n {
                        ga[r * k..(r + 1) * k].iter_mut().for_each(|x| *x = g[r]);
                    }
                    acc(a, ga);
                }
            }
            Op::PairDot(a, b, pairs) => {
                let (_, k) = val(a).dims2("pair_dot")?;
                let (x, y) = (&val(a).data, &val(b).data);
                if wants(a) {
                    let mut ga = vec![0.0; x.len()];
                    for (m, &(i, j)) in pairs.iter().enumerate() {
                        for c in 0..k {
                            ga[i * k + c] += g[m] * y[j * k + c];
                        }
                    }
                    acc(a, ga);
                }
                if wants(b) {
                    let mut gb = vec![0.0; y.len()];
                    for (m, &(i, j)) in pairs.iter().enumerate() {
                        for c in 0..k {
                            gb[j * k + c] += g[m] * x[i * k + c];
                        }
                    }
                    acc(b, gb);
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    acc(a, vec![g[0]; val(a).data.len()]);
                }
            }
            Op::Mean(a) => {
                if wants(a) {
                    let n = val(a).data.len();
                    acc(a, vec![g[0] / n as f64; n]);
                }
            }
            Op::WeightedSum(a, w) => {
                if wants(a) {
                    acc(a, w.iter().map(|wi| wi * g[0]).collect());
                }
            }
        }
        Ok(())
    }
}

fn operands(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMulT(a, b)
        | Op::AddBias(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::PairDot(a, b, _) => vec![*a, *b],
        Op::Relu(a)
        | Op::Softmax(a)
        | Op::Log(a)
        | Op::Exp(a)
        | Op::Affine(a, _, _)
        | Op::Clamp(a, _, _)
        | Op::Gather(a, _)
        | Op::Pick(a, _)
        | Op::RowSum(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::WeightedSum(a, _) => vec![*a],
    }
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and one leaf per parameter group and must return a scalar.
/// The result is the maximum over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_difference_check<F>(params: &ParameterVector, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let vars = tape.params_from(params);
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic = tape.grads_as(&vars, params)?.flatten();

    let eval = |flat: &[f64]| -> Result<f64> {
        let p = params.with_flat(flat)?;
        let mut t = Tape::new();
        let vs = t.params_from(&p);
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let base = params.flatten();
    let mut worst: f64 = 0.0;
    let mut probe = base.clone();
    for (i, a) in analytic.iter().enumerate() {
        probe[i] = base[i] + eps;
        let up = eval(&probe)?;
        probe[i] = base[i] - eps;
        let down = eval(&probe)?;
        probe[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
