//! Central finite differences against tape gradients, in f64.

use splitlm::model::{
    batch_loss, LanguageModel, ModelConfig, PlainConfig, PlainTransformer, Sequence, SplitTransformer, Token,
};
use splitlm::numerics::{Gradients, Matrix, ParamGroup, ParamId, ParamStore, Rng, Tape, Var};
use splitlm::Result;

pub const EPS: f64 = 1e-5;
/// Denominator floor, so that near-zero gradients are compared absolutely.
pub const FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error over every entry of every trainable tensor.
/// `eval` returns the loss and, when asked, its gradients.
pub fn max_rel_error<T>(
    target: &mut T,
    store: fn(&mut T) -> &mut ParamStore<f64>,
    eval: impl Fn(&T, bool) -> Result<(f64, Option<Gradients<f64>>)>,
) -> Result<f64> {
    let (_, grads) = eval(target, true)?;
    let grads = grads.expect("gradients requested");
    let ids: Vec<(ParamId, usize)> = store(target)
        .iter()
        .filter(|(_, t)| t.trainable())
        .map(|(id, t)| (id, t.value.len()))
        .collect();
    let mut worst = 0.0f64;
    for (id, len) in ids {
        let analytic: Vec<f64> = match grads.get(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; len],
        };
        for k in 0..len {
            let orig = store(target).get(id).value.data()[k];
            store(target).get_mut(id).value.data_mut()[k] = orig + EPS;
            let (up, _) = eval(target, false)?;
            store(target).get_mut(id).value.data_mut()[k] = orig - EPS;
            let (down, _) = eval(target, false)?;
            store(target).get_mut(id).value.data_mut()[k] = orig;
            worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * EPS)));
        }
    }
    Ok(worst)
}

pub fn normal(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

type Build = fn(&mut Tape<'_, f64>, &[Var], &mut Rng) -> Result<Var>;

/// Error of one op on random inputs of the given shapes. Non-scalar outputs
/// are reduced to `l · out · r` with fixed random `l` and `r`.
fn op_error(seed: u64, shapes: &[(usize, usize)], scale: f64, build: Build) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::<f64>::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.insert(format!("x{i}"), ParamGroup::SpeechNew, normal(r, c, scale, &mut rng)))
        .collect::<Result<Vec<ParamId>>>()?;
    store.set_all_trainable(true);
    let op_seed = rng.next_u64();
    let eval = |s: &ParamStore<f64>, grads: bool| -> Result<(f64, Option<_>)> {
        let mut tape = Tape::new(s);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let mut op_rng = Rng::new(op_seed);
        let out = build(&mut tape, &vars, &mut op_rng)?;
        let (r, c) = tape.value(out).shape();
        let loss = if (r, c) == (1, 1) {
            out
        } else {
            let l = tape.constant(normal(1, r, 1.0, &mut op_rng));
            let rr = tape.constant(normal(c, 1, 1.0, &mut op_rng));
            let lo = tape.matmul(l, out)?;
            tape.matmul(lo, rr)?
        };
        let value = tape.value(loss).item()?;
        Ok((value, if grads { Some(tape.backward(loss)?) } else { None }))
    };
    max_rel_error(&mut store, |s| s, eval)
}

fn tiny_split() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        n_shared: 1,
        n_branch: 1,
        text_vocab: 6,
        speech_vocab: 7,
        max_seq: 8,
    }
}

fn mixed_sequence(rng: &mut Rng, cfg: &ModelConfig, sft: bool) -> Sequence {
    let mut tokens = vec![Token::text(0)];
    for _ in 0..6 {
        tokens.push(if rng.bernoulli(0.5) {
            Token::speech(3 + rng.below(cfg.speech_vocab - 3) as u32)
        } else {
            Token::text(3 + rng.below(cfg.text_vocab - 3) as u32)
        });
    }
    let n = tokens.len();
    let mask = (0..n).map(|p| p + 1 < n && (!sft || p >= 3)).collect();
    Sequence::new(tokens, mask).unwrap()
}

/// Larger initial weights than training uses, so every path carries signal.
fn perturb<M: LanguageModel<f64>>(model: &mut M, rng: &mut Rng) {
    for t in model.params_mut().iter_mut() {
        for x in t.value.data_mut() {
            *x += 0.3 * rng.normal();
        }
    }
    model.params_mut().set_all_trainable(true);
}

fn model_error<M: LanguageModel<f64>>(model: &mut M, batch: &[Sequence]) -> Result<f64> {
    max_rel_error(
        model,
        |m| m.params_mut(),
        |m: &M, grads: bool| {
            let out = batch_loss(m, batch, grads)?;
            Ok((out.loss, grads.then_some(out.grads)))
        },
    )
}

fn split_model(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let cfg = tiny_split();
    let mut model = SplitTransformer::<f64>::new(cfg, &mut rng)?;
    perturb(&mut model, &mut rng);
    let batch = vec![
        mixed_sequence(&mut rng, &cfg, false),
        mixed_sequence(&mut rng, &cfg, seed.is_multiple_of(2)),
    ];
    model_error(&mut model, &batch)
}

fn merged_model(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(1000 + seed);
    let cfg = PlainConfig {
        n_layers: 2,
        ..tiny_split().base()
    };
    let mut model = PlainTransformer::<f64>::new(cfg, &mut rng)?.with_speech_vocab(7, &mut rng)?;
    perturb(&mut model, &mut rng);
    let batch = vec![mixed_sequence(&mut rng, &tiny_split(), false)];
    model_error(&mut model, &batch)
}

/// A named check; maps a seed to the worst relative error of that trial.
pub type Case = (&'static str, fn(u64) -> Result<f64>);

pub const CASES: &[Case] = &[
    ("matmul", |s| {
        op_error(s, &[(3, 4), (4, 2)], 1.0, |t, v, _| t.matmul(v[0], v[1]))
    }),
    ("add", |s| {
        op_error(s, &[(3, 4), (3, 4)], 1.0, |t, v, _| t.add(v[0], v[1]))
    }),
    ("add_row", |s| {
        op_error(s, &[(3, 4), (1, 4)], 1.0, |t, v, _| t.add_row(v[0], v[1]))
    }),
    ("scale", |s| {
        op_error(s, &[(2, 3)], 1.0, |t, v, rng| t.scale(v[0], rng.normal()))
    }),
    ("sum", |s| op_error(s, &[(3, 3)], 1.0, |t, v, _| t.sum(v[0]))),
    ("gelu", |s| op_error(s, &[(4, 5)], 2.0, |t, v, _| t.gelu(v[0]))),
    ("softmax", |s| op_error(s, &[(3, 6)], 1.5, |t, v, _| t.softmax(v[0]))),
    ("layer_norm", |s| {
        op_error(s, &[(3, 5), (1, 5), (1, 5)], 1.0, |t, v, _| {
            t.layer_norm(v[0], v[1], v[2])
        })
    }),
    ("causal_attention", |s| {
        op_error(s, &[(5, 6), (5, 6), (5, 6)], 1.0, |t, v, _| {
            t.causal_attention(v[0], v[1], v[2], 2)
        })
    }),
    ("gather", |s| {
        op_error(s, &[(5, 3)], 1.0, |t, v, _| {
            t.gather(v[0], &[Some(1), None, Some(1), Some(4)])
        })
    }),
    ("cross_entropy", |s| {
        op_error(s, &[(4, 5)], 1.5, |t, v, _| {
            t.cross_entropy(v[0], &[Some(2), None, Some(0), Some(4)])
        })
    }),
    ("cross_entropy_scaled", |s| {
        op_error(s, &[(3, 4)], 1.5, |t, v, _| {
            t.cross_entropy_scaled(v[0], &[Some(3), Some(3), None], 0.37)
        })
    }),
    ("split_model", split_model),
    ("merged_model", merged_model),
];

/// Worst error of `case` over seeds `0..seeds`.
pub fn worst(case: &Case, seeds: u64) -> Result<f64> {
    (0..seeds).try_fold(0.0f64, |w, s| Ok(w.max((case.1)(s)?)))
}
