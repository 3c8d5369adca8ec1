//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass together with the
//! values backward needs. Parameters are read straight from a borrowed
//! [`ParamStore`]; gradients come back as a [`Gradients`] map which the caller
//! folds into the store once the tape is dropped. Frozen parameters never
//! request gradients, so work on their weight gradients is skipped entirely.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU32, Ordering};

use super::matrix::{gemm_nt, gemm_tn, Matrix, Scalar};
use super::param::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

static NEXT_TAPE: AtomicU32 = AtomicU32::new(0);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

enum Value<F> {
    Owned(Matrix<F>),
    Param(ParamId),
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Sum(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix<F>,
        rstd: Vec<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Matrix<F>>,
    },
    Gather {
        table: Var,
        ids: Vec<Option<usize>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        scale: F,
        probs: Matrix<F>,
    },
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Tape<'s, F: Scalar = f32> {
    id: u32,
    store: &'s ParamStore<F>,
    nodes: Vec<Node<F>>,
    reads: BTreeSet<ParamId>,
}

impl<'s, F: Scalar> Tape<'s, F> {
    pub fn new(store: &'s ParamStore<F>) -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            store,
            nodes: Vec::new(),
            reads: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters read by any operation on this tape.
    pub fn params_read(&self) -> &BTreeSet<ParamId> {
        &self.reads
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        debug_assert_eq!(v.tape, self.id, "variable from another tape");
        match &self.nodes[v.index].value {
            Value::Owned(m) => m,
            Value::Param(id) => &self.store.get(*id).value,
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.index].needs_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::contract("variable does not belong to this tape"));
        }
        Ok(())
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn constant(&mut self, value: Matrix<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.reads.insert(id);
        let needs_grad = self.store.get(id).trainable();
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).add(self.value(b))?;
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// `x + 1ᵀ·row`: adds a 1×n row to every row of x.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check(x)?;
        self.check(row)?;
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("row {:?} for matrix {:?}", rv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o = *o + b;
            }
        }
        let ng = self.needs_grad(x) || self.needs_grad(row);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    pub fn scale(&mut self, x: Var, k: F) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).scale(k);
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Scale(x, k), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = Matrix::scalar(self.value(x).sum());
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Sum(x), ng))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(gelu);
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Gelu(x), ng))
    }

    /// Softmax over the last axis (each row).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Per-row normalization with learned 1×d gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.shape() != (1, d) || bv.shape() != (1, d) {
            return Err(Error::shape(
                "layer_norm",
                format!("gain {:?}, bias {:?} for width {d}", gv.shape(), bv.shape()),
            ));
        }
        let eps = F::of(LAYER_NORM_EPS);
        let n = F::of(d as f64);
        let mut xhat = Matrix::zeros(xv.rows(), d);
        let mut out = Matrix::zeros(xv.rows(), d);
        let mut rstd = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().fold(F::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd.push(rs);
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat.set(r, c, h);
                out.set(r, c, h * gv.data()[c] + bv.data()[c]);
            }
        }
        let ng = self.needs_grad(x) || self.needs_grad(gain) || self.needs_grad(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention with a causal mask.
    /// `q`, `k`, `v` are n×d; heads split the d columns evenly.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.check(q)?;
        self.check(k)?;
        self.check(v)?;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        if kv.shape() != (n, d) || vv.shape() != (n, d) {
            return Err(Error::shape(
                "causal_attention",
                format!("q {:?}, k {:?}, v {:?}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(
                "causal_attention",
                format!("{heads} heads do not divide width {d}"),
            ));
        }
        let dh = d / heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let mut out = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut p = Matrix::zeros(n, n);
            for i in 0..n {
                let qi = &qv.row(i)[off..off + dh];
                let pr = &mut p.row_mut(i)[..=i];
                for (j, s) in pr.iter_mut().enumerate() {
                    let kj = &kv.row(j)[off..off + dh];
                    *s = dot(qi, kj) * scale;
                }
                softmax_in_place(pr);
                let orow = &mut out.row_mut(i)[off..off + dh];
                for (j, &pij) in p.row(i)[..=i].iter().enumerate() {
                    let vj = &vv.row(j)[off..off + dh];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o = *o + pij * x;
                    }
                }
            }
            probs.push(p);
        }
        let ng = self.needs_grad(q) || self.needs_grad(k) || self.needs_grad(v);
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }, ng))
    }

    /// Row lookup; `None` yields a zero row.
    pub fn gather(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        self.check(table)?;
        let tv = self.value(table);
        let mut out = Matrix::zeros(ids.len(), tv.cols());
        for (r, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= tv.rows() {
                    return Err(Error::contract(format!(
                        "index {id} out of range for table with {} rows",
                        tv.rows()
                    )));
                }
                out.row_mut(r).copy_from_slice(tv.row(id));
            }
        }
        let ng = self.needs_grad(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean cross-entropy over rows with a target; rows with `None` are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::NoSupervisedPositions);
        }
        self.cross_entropy_scaled(logits, targets, F::one() / F::of(count as f64))
    }

    /// `scale · Σ CE` over rows with a target.
    pub fn cross_entropy_scaled(&mut self, logits: Var, targets: &[Option<usize>], scale: F) -> Result<Var> {
        self.check(logits)?;
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {} rows", targets.len(), lv.rows()),
            ));
        }
        if targets.iter().all(Option::is_none) {
            return Err(Error::NoSupervisedPositions);
        }
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = F::zero();
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= lv.cols() {
                return Err(Error::contract(format!(
                    "target {t} out of range for {} classes",
                    lv.cols()
                )));
            }
            let row = lv.row(r);
            let (lse, _) = log_sum_exp(row);
            total = total + (lse - row[t]);
            let pr = probs.row_mut(r);
            for (p, &x) in pr.iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let out = Matrix::scalar(total * scale);
        let ng = self.needs_grad(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                scale,
                probs,
            },
            ng,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward called before any forward operation"));
        }
        self.check(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::contract("backward requires a scalar loss"));
        }
        let mut out = Gradients::default();
        if !self.needs_grad(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Matrix<F>>> = Vec::with_capacity(loss.index + 1);
        grads.resize_with(loss.index + 1, || None);
        grads[loss.index] = Some(Matrix::scalar(F::one()));

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.add(*id, g)?,
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.needs_grad(*a) {
                        let mut da = Matrix::zeros(m, k);
                        gemm_nt(g.data(), bv.data(), da.data_mut(), m, n, k);
                        acc(&mut grads, *a, da)?;
                    }
                    if self.needs_grad(*b) {
                        let mut db = Matrix::zeros(k, n);
                        gemm_tn(av.data(), g.data(), db.data_mut(), m, k, n);
                        acc(&mut grads, *b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs_grad(*b) {
                        acc(&mut grads, *b, g.clone())?;
                    }
                    if self.needs_grad(*a) {
                        acc(&mut grads, *a, g)?;
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs_grad(*row) {
                        let mut dr = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, &x) in dr.data_mut().iter_mut().zip(g.row(r)) {
                                *d = *d + x;
                            }
                        }
                        acc(&mut grads, *row, dr)?;
                    }
                    if self.needs_grad(*x) {
                        acc(&mut grads, *x, g)?;
                    }
                }
                Op::Scale(x, k) => acc(&mut grads, *x, g.scale(*k))?,
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, Matrix::filled(xv.rows(), xv.cols(), g.data()[0]))?;
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &x) in dx.data_mut().iter_mut().zip(xv.data()) {
                        *d = *d * gelu_grad(x);
                    }
                    acc(&mut grads, *x, dx)?;
                }
                Op::Softmax(x) => {
                    let p = match &node.value {
                        Value::Owned(m) => m,
                        Value::Param(_) => unreachable!(),
                    };
                    let mut dx = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let (pr, gr) = (p.row(r), g.row(r));
                        let dotp = dot(pr, gr);
                        for ((d, &pv), &gv) in dx.row_mut(r).iter_mut().zip(pr).zip(gr) {
                            *d = pv * (gv - dotp);
                        }
                    }
                    acc(&mut grads, *x, dx)?;
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain);
                    let d = xhat.cols();
                    if self.needs_grad(*gain) || self.needs_grad(*bias) {
                        let mut dg = Matrix::zeros(1, d);
                        let mut db = Matrix::zeros(1, d);
                        for r in 0..g.rows() {
                            for c in 0..d {
                                let gv = g.get(r, c);
                                dg.data_mut()[c] = dg.data()[c] + gv * xhat.get(r, c);
                                db.data_mut()[c] = db.data()[c] + gv;
                            }
                        }
                        if self.needs_grad(*gain) {
                            acc(&mut grads, *gain, dg)?;
                        }
                        if self.needs_grad(*bias) {
                            acc(&mut grads, *bias, db)?;
                        }
                    }
                    if self.needs_grad(*x) {
                        let n = F::of(d as f64);
                        let mut dx = Matrix::zeros(g.rows(), d);
                        for r in 0..g.rows() {
                            let mut sum_dh = F::zero();
                            let mut sum_dh_h = F::zero();
                            for c in 0..d {
                                let dh = g.get(r, c) * gv.data()[c];
                                sum_dh = sum_dh + dh;
                                sum_dh_h = sum_dh_h + dh * xhat.get(r, c);
                            }
                            let (m1, m2) = (sum_dh / n, sum_dh_h / n);
                            for c in 0..d {
                                let dh = g.get(r, c) * gv.data()[c];
                                dx.set(r, c, rstd[r] * (dh - m1 - xhat.get(r, c) * m2));
                            }
                        }
                        acc(&mut grads, *x, dx)?;
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (dq, dk, dv) =
                        attention_backward(self.value(*q), self.value(*k), self.value(*v), *heads, probs, &g);
                    if self.needs_grad(*q) {
                        acc(&mut grads, *q, dq)?;
                    }
                    if self.needs_grad(*k) {
                        acc(&mut grads, *k, dk)?;
                    }
                    if self.needs_grad(*v) {
                        acc(&mut grads, *v, dv)?;
                    }
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(id) = *id {
                            for (d, &x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                                *d = *d + x;
                            }
                        }
                    }
                    acc(&mut grads, *table, dt)?;
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    scale,
                    probs,
                } => {
                    let k = g.data()[0] * *scale;
                    let mut dl = Matrix::zeros(probs.rows(), probs.cols());
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for (d, &p) in dl.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *d = p * k;
                        }
                        let cur = dl.get(r, t);
                        dl.set(r, t, cur - k);
                    }
                    acc(&mut grads, *logits, dl)?;
                }
            }
        }
        Ok(out)
    }
}

fn acc<F: Scalar>(grads: &mut [Option<Matrix<F>>], v: Var, g: Matrix<F>) -> Result<()> {
    match &mut grads[v.index] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn attention_backward<F: Scalar>(
    q: &Matrix<F>,
    k: &Matrix<F>,
    v: &Matrix<F>,
    heads: usize,
    probs: &[Matrix<F>],
    g: &Matrix<F>,
) -> (Matrix<F>, Matrix<F>, Matrix<F>) {
    let (n, d) = q.shape();
    let dh = d / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    let mut dp = vec![F::zero(); n];
    for (h, p) in probs.iter().enumerate() {
        let off = h * dh;
        for i in 0..n {
            let gi = &g.row(i)[off..off + dh];
            let pi = &p.row(i)[..=i];
            for (j, &pij) in pi.iter().enumerate() {
                let vj = &v.row(j)[off..off + dh];
                dp[j] = dot(gi, vj);
                let dvj = &mut dv.row_mut(j)[off..off + dh];
                for (d, &x) in dvj.iter_mut().zip(gi) {
                    *d = *d + pij * x;
                }
            }
            let weighted = pi.iter().zip(&dp[..=i]).fold(F::zero(), |a, (&pv, &dv)| a + pv * dv);
            for (j, &pij) in pi.iter().enumerate() {
                let ds = pij * (dp[j] - weighted) * scale;
                if ds == F::zero() {
                    continue;
                }
                let kj = &k.row(j)[off..off + dh];
                let dqi = &mut dq.row_mut(i)[off..off + dh];
                for (d, &x) in dqi.iter_mut().zip(kj) {
                    *d = *d + ds * x;
                }
                let qi = &q.row(i)[off..off + dh];
                let dkj = &mut dk.row_mut(j)[off..off + dh];
                for (d, &x) in dkj.iter_mut().zip(qi) {
                    *d = *d + ds * x;
                }
            }
        }
    }
    (dq, dk, dv)
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Returns `(log Σ exp(x), max x)`.
pub(crate) fn log_sum_exp<F: Scalar>(row: &[F]) -> (F, F) {
    let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let s = row.iter().fold(F::zero(), |a, &x| a + (x - m).exp());
    (m + s.ln(), m)
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let mut s = F::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s = s + *x;
    }
    for x in row.iter_mut() {
        *x = *x / s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let t = (F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x)).tanh();
    half * x * (F::one() + t)
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let inner = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = F::of(GELU_C) * (F::one() + F::of(3.0 * GELU_A) * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * dinner
}

/// Row-wise softmax of a plain matrix, outside any tape.
pub fn softmax_rows<F: Scalar>(m: &Matrix<F>) -> Matrix<F> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Row-wise log-softmax of a plain matrix, outside any tape.
pub fn log_softmax_rows<F: Scalar>(m: &Matrix<F>) -> Matrix<F> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let (lse, _) = log_sum_exp(m.row(r));
        for x in out.row_mut(r) {
            *x = *x - lse;
        }
    }
    out
}
