//! Pre-norm transformer blocks and output heads shared by every model variant.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamGroup, ParamId, ParamStore, Rng, Scalar, Tape, Var};

pub(crate) const INIT_STD: f64 = 0.02;

/// Tensor names inside one block, relative to its prefix.
pub(crate) const BLOCK_TENSORS: [&str; 12] = [
    "ln1.g", "ln1.b", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.g", "ln2.b", "mlp.w1", "mlp.b1", "mlp.w2",
    "mlp.b2",
];

pub(crate) const HEAD_TENSORS: [&str; 3] = ["ln.g", "ln.b", "w"];

#[derive(Clone, Debug)]
pub(crate) struct BlockParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct HeadParams {
    ln_g: ParamId,
    ln_b: ParamId,
    w: ParamId,
}

pub(crate) fn normal_matrix<F: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix<F> {
    Matrix::from_fn(rows, cols, |_, _| F::of(rng.normal() * std))
}

/// Fresh value for a tensor, chosen by the last segment of its name:
/// gains are ones, biases zeros, everything else N(0, 0.02).
pub(crate) fn fresh_value<F: Scalar>(name: &str, rows: usize, cols: usize, rng: &mut Rng) -> Matrix<F> {
    match name.rsplit('.').next().unwrap_or(name) {
        "g" => Matrix::filled(rows, cols, F::one()),
        "b" | "b1" | "b2" => Matrix::zeros(rows, cols),
        _ => normal_matrix(rows, cols, INIT_STD, rng),
    }
}

/// Source of tensor values during model assembly: `(name, rows, cols)`.
pub(crate) type ValueSource<'a, F> = dyn FnMut(&str, usize, usize) -> Result<Matrix<F>> + 'a;

pub(crate) fn block_shapes(d: usize, d_ff: usize) -> [(usize, usize); 12] {
    [
        (1, d),
        (1, d),
        (d, d),
        (d, d),
        (d, d),
        (d, d),
        (1, d),
        (1, d),
        (d, d_ff),
        (1, d_ff),
        (d_ff, d),
        (1, d),
    ]
}

/// Inserts one tensor, pulling its value from `source` and checking its shape.
pub(crate) fn insert_from<F: Scalar>(
    store: &mut ParamStore<F>,
    source: &mut ValueSource<'_, F>,
    name: &str,
    group: ParamGroup,
    shape: (usize, usize),
) -> Result<ParamId> {
    let value = source(name, shape.0, shape.1)?;
    if value.shape() != shape {
        return Err(Error::contract(format!(
            "tensor {name} is {}x{}, expected {}x{}",
            value.rows(),
            value.cols(),
            shape.0,
            shape.1
        )));
    }
    store.insert(name, group, value)
}

impl BlockParams {
    pub(crate) fn insert<F: Scalar>(
        store: &mut ParamStore<F>,
        source: &mut ValueSource<'_, F>,
        prefix: &str,
        group: ParamGroup,
        d: usize,
        d_ff: usize,
    ) -> Result<Self> {
        let shapes = block_shapes(d, d_ff);
        let ids = BLOCK_TENSORS
            .iter()
            .zip(shapes)
            .map(|(n, shape)| insert_from(store, source, &format!("{prefix}.{n}"), group, shape))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockParams {
            ln1_g: ids[0],
            ln1_b: ids[1],
            wq: ids[2],
            wk: ids[3],
            wv: ids[4],
            wo: ids[5],
            ln2_g: ids[6],
            ln2_b: ids[7],
            w1: ids[8],
            b1: ids[9],
            w2: ids[10],
            b2: ids[11],
        })
    }

    /// `x + attn(ln1(x))`, then `h + mlp(ln2(h))`.
    pub(crate) fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: Var, heads: usize) -> Result<Var> {
        let (g1, b1n) = (tape.param(self.ln1_g), tape.param(self.ln1_b));
        let a = tape.layer_norm(x, g1, b1n)?;
        let (wq, wk, wv, wo) = (
            tape.param(self.wq),
            tape.param(self.wk),
            tape.param(self.wv),
            tape.param(self.wo),
        );
        let q = tape.matmul(a, wq)?;
        let k = tape.matmul(a, wk)?;
        let v = tape.matmul(a, wv)?;
        let att = tape.causal_attention(q, k, v, heads)?;
        let proj = tape.matmul(att, wo)?;
        let h = tape.add(x, proj)?;

        let (g2, b2n) = (tape.param(self.ln2_g), tape.param(self.ln2_b));
        let m = tape.layer_norm(h, g2, b2n)?;
        let (w1, b1, w2, b2) = (
            tape.param(self.w1),
            tape.param(self.b1),
            tape.param(self.w2),
            tape.param(self.b2),
        );
        let f = tape.matmul(m, w1)?;
        let f = tape.add_row(f, b1)?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, b2)?;
        tape.add(h, f)
    }
}

impl HeadParams {
    pub(crate) fn insert<F: Scalar>(
        store: &mut ParamStore<F>,
        source: &mut ValueSource<'_, F>,
        prefix: &str,
        group: ParamGroup,
        d: usize,
        vocab: usize,
    ) -> Result<Self> {
        let shapes = [(1, d), (1, d), (d, vocab)];
        let ids = HEAD_TENSORS
            .iter()
            .zip(shapes)
            .map(|(n, shape)| insert_from(store, source, &format!("{prefix}.{n}"), group, shape))
            .collect::<Result<Vec<_>>>()?;
        Ok(HeadParams {
            ln_g: ids[0],
            ln_b: ids[1],
            w: ids[2],
        })
    }

    /// Final normalization and projection to vocabulary logits.
    pub(crate) fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let (g, b) = (tape.param(self.ln_g), tape.param(self.ln_b));
        let h = tape.layer_norm(x, g, b)?;
        let w = tape.param(self.w);
        tape.matmul(h, w)
    }
}

/// Token embeddings plus learned positions. Tables whose ids are all `None`
/// are never read, which keeps text-only inputs off the speech tensors.
pub(crate) fn embed<F: Scalar>(
    tape: &mut Tape<'_, F>,
    tables: &[(ParamId, Vec<Option<usize>>)],
    pos: ParamId,
    len: usize,
) -> Result<Var> {
    let mut x: Option<Var> = None;
    for (table, ids) in tables {
        if ids.iter().all(Option::is_none) {
            continue;
        }
        let t = tape.param(*table);
        let e = tape.gather(t, ids)?;
        x = Some(match x {
            Some(prev) => tape.add(prev, e)?,
            None => e,
        });
    }
    let x = x.ok_or_else(|| Error::contract("empty token sequence"))?;
    let p = tape.param(pos);
    let positions: Vec<Option<usize>> = (0..len).map(Some).collect();
    let pe = tape.gather(p, &positions)?;
    tape.add(x, pe)
}
