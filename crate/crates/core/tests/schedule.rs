use proptest::prelude::*;
use splitlm::model::{LanguageModel, ModelConfig, SplitTransformer};
use splitlm::numerics::{AdamW, Matrix, ParamGroup, Rng};
use splitlm::schedule::{apply_plan, CosineScheduleParams, FreezePlan, LayerwiseScheduleParams, Stage};
use splitlm::Error;

/// Second transcription of the delayed warmup-cosine formula, written
/// directly in floating point from the piecewise definition.
fn oracle(n: f64, k: f64, w: f64, t: f64, eta_max: f64, i: f64, s: f64) -> f64 {
    let eta_min = 0.1 * eta_max;
    let d_i = (n - 1.0 - i) * k;
    let big_d = t - d_i - w;
    let u = s - d_i;
    if u < 0.0 {
        0.0
    } else if u < w {
        eta_max * u / w
    } else if u <= w + big_d {
        eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (std::f64::consts::PI * (u - w) / big_d).cos())
    } else {
        eta_min
    }
}

#[test]
fn small_table_matches_the_oracle() {
    let p = LayerwiseScheduleParams::new(4, 10, 4, 50, 1.0).unwrap();
    for i in 0..4 {
        for s in 0..=60 {
            let got = p.lr(i, s).unwrap();
            let want = oracle(4.0, 10.0, 4.0, 50.0, 1.0, i as f64, s as f64);
            assert!((got - want).abs() <= 1e-12, "i={i} s={s}: {got} vs {want}");
        }
    }
}

#[test]
fn later_layers_start_first() {
    let p = LayerwiseScheduleParams::new(8, 7, 3, 100, 1.0).unwrap();
    for i in 1..8 {
        assert!(p.delay(i) < p.delay(i - 1));
    }
    assert_eq!(p.delay(7), 0);
}

fn params() -> impl Strategy<Value = LayerwiseScheduleParams> {
    (1usize..12, 1u64..50, 1u64..30, 1u64..200, 1e-6f64..1.0).prop_map(|(n, k, w, extra, eta)| {
        let t = (n as u64 - 1) * k + w + extra;
        LayerwiseScheduleParams::new(n, k, w, t, eta).unwrap()
    })
}

proptest! {
    #[test]
    fn agrees_with_oracle_everywhere(p in params(), i_frac in 0.0f64..1.0, s in 0u64..2000) {
        let i = ((p.n as f64 * i_frac) as usize).min(p.n - 1);
        let want = oracle(p.n as f64, p.k as f64, p.w as f64, p.t as f64, p.eta_max, i as f64, s as f64);
        prop_assert!((p.lr(i, s).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn stays_in_range_and_never_rises_after_warmup(p in params(), s in 0u64..2000) {
        for i in 0..p.n {
            let a = p.lr(i, s).unwrap();
            prop_assert!((0.0..=p.eta_max).contains(&a));
            if s >= p.delay(i) + p.w {
                prop_assert!(p.lr(i, s + 1).unwrap() <= a);
            }
        }
    }

    #[test]
    fn continuous_at_branch_boundaries(p in params()) {
        for i in 0..p.n {
            let (d, w, big_d) = (p.delay(i) as f64, p.w as f64, p.decay_len(i) as f64);
            let at = |u: f64| oracle(p.n as f64, p.k as f64, p.w as f64, p.t as f64, p.eta_max, i as f64, d + u);
            let eps = 1e-9;
            prop_assert!((at(w - eps) - p.eta_max).abs() < 1e-6 * p.eta_max.max(1.0));
            prop_assert!((at(w + big_d + eps) - p.eta_min()).abs() <= 1e-12);
            prop_assert_eq!(p.lr(i, p.delay(i) + p.w).unwrap(), p.eta_max);
            prop_assert_eq!(p.lr(i, p.delay(i) + p.w + p.decay_len(i)).unwrap(), p.eta_min());
        }
    }
}

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        n_shared: 3,
        n_branch: 1,
        text_vocab: 8,
        speech_vocab: 10,
        max_seq: 8,
    }
}

fn global() -> CosineScheduleParams {
    CosineScheduleParams::new(1e-3, 1e-4, 0, 100).unwrap()
}

fn trainable_names(m: &SplitTransformer) -> Vec<String> {
    m.params()
        .iter()
        .filter(|(_, t)| t.trainable())
        .map(|(_, t)| t.name().to_string())
        .collect()
}

#[test]
fn stage1_trains_exactly_the_speech_tensors() {
    let mut m = SplitTransformer::<f32>::new(tiny(), &mut Rng::new(1)).unwrap();
    m.params_mut().set_all_trainable(true);
    apply_plan(m.params_mut(), &FreezePlan::new(Stage::Stage1, global()), 0).unwrap();
    for (_, t) in m.params().iter() {
        let speech = t.name() == "speech_embed"
            || t.name().starts_with("speech_branch.")
            || t.name().starts_with("speech_head.");
        assert_eq!(t.trainable(), speech, "{}", t.name());
        assert_eq!(t.trainable(), t.group() == ParamGroup::SpeechNew);
        assert_eq!(t.optimizer_state().is_some(), t.trainable());
    }
}

#[test]
fn stage2_shared_keeps_text_embeddings_branch_and_head_frozen() {
    let mut m = SplitTransformer::<f32>::new(tiny(), &mut Rng::new(2)).unwrap();
    apply_plan(m.params_mut(), &FreezePlan::new(Stage::Stage2Shared, global()), 5).unwrap();
    for name in trainable_names(&m) {
        assert!(!name.starts_with("text_") && name != "pos_embed", "{name}");
    }
    assert!(m.params().by_name("shared.0.mlp.w1").unwrap().trainable());
    assert!(!m.params().by_name("text_branch.0.mlp.w1").unwrap().trainable());
}

#[test]
fn full_stage_trains_everything() {
    let mut m = SplitTransformer::<f32>::new(tiny(), &mut Rng::new(3)).unwrap();
    let lrs = apply_plan(m.params_mut(), &FreezePlan::new(Stage::Stage2Full, global()), 50).unwrap();
    assert_eq!(trainable_names(&m).len(), m.params().len());
    assert!(lrs.iter().all(|r| r.lr == global().lr(50)));
}

#[test]
fn layerwise_step_zero_only_warms_the_last_shared_block() {
    let lw = LayerwiseScheduleParams::new(3, 10, 5, 60, 1e-3).unwrap();
    let plan = FreezePlan::layerwise(global(), lw);
    let mut m = SplitTransformer::<f32>::new(tiny(), &mut Rng::new(4)).unwrap();
    let lrs = apply_plan(m.params_mut(), &plan, 0).unwrap();
    for ((_, t), r) in m.params().iter().zip(&lrs) {
        if t.name().starts_with("shared.") {
            assert_eq!(r.lr, 0.0);
            assert_eq!(r.trainable, t.name().starts_with("shared.2."), "{}", t.name());
        }
    }
    let lrs = apply_plan(m.params_mut(), &plan, 1).unwrap();
    let names: Vec<String> = m.params().names().map(str::to_string).collect();
    let nonzero: Vec<&String> = names
        .iter()
        .filter(|n| n.starts_with("shared."))
        .filter(|n| lrs[m.params().id(n).unwrap().index()].lr > 0.0)
        .collect();
    assert!(!nonzero.is_empty());
    assert!(nonzero.iter().all(|n| n.starts_with("shared.2.")));
    assert!(!m.params().by_name("text_head.w").unwrap().trainable());
    assert!(m.params().by_name("speech_head.w").unwrap().trainable());
}

#[test]
fn layerwise_schedule_must_cover_the_trunk() {
    let lw = LayerwiseScheduleParams::new(2, 10, 5, 60, 1e-3).unwrap();
    let mut m = SplitTransformer::<f32>::new(tiny(), &mut Rng::new(5)).unwrap();
    assert!(apply_plan(m.params_mut(), &FreezePlan::layerwise(global(), lw), 0).is_err());
}

#[test]
fn unknown_tensors_abort_the_plan() {
    let mut store = splitlm::numerics::ParamStore::<f32>::new();
    store
        .insert("text_embed", ParamGroup::TextBackbone, Matrix::zeros(2, 2))
        .unwrap();
    store
        .insert("adapter.w", ParamGroup::SpeechNew, Matrix::zeros(2, 2))
        .unwrap();
    let err = apply_plan(&mut store, &FreezePlan::new(Stage::Nf, global()), 0).unwrap_err();
    assert!(matches!(err, Error::UnknownTensor(ref n) if n == "adapter.w"));
    assert!(!store.by_name("text_embed").unwrap().trainable());
}

#[test]
fn freezing_and_zero_rate_are_equivalent() {
    let mut rng = Rng::new(6);
    let mut frozen = SplitTransformer::<f32>::new(tiny(), &mut rng).unwrap();
    let mut zero_lr = frozen.clone();
    zero_lr.params_mut().set_all_trainable(true);
    let opt = AdamW::default();
    for step in 0..5 {
        for m in [&mut frozen, &mut zero_lr] {
            for t in m.params_mut().iter_mut() {
                t.grad = Matrix::from_fn(t.value.rows(), t.value.cols(), |r, c| ((r + c + step) % 3) as f32 - 1.0);
            }
        }
        opt.step(frozen.params_mut(), 1e-3).unwrap();
        opt.step(zero_lr.params_mut(), 0.0).unwrap();
    }
    assert!(frozen.params().values_bit_eq(zero_lr.params()));
    for (_, t) in zero_lr.params().iter() {
        let s = t.optimizer_state().unwrap();
        assert_eq!(s.step, 0);
        assert!(s.m.data().iter().all(|&x| x == 0.0));
    }
    // Switching on later starts from the same fresh state either way.
    frozen.params_mut().set_all_trainable(true);
    for ((_, a), (_, b)) in frozen.params().iter().zip(zero_lr.params().iter()) {
        assert_eq!(a.optimizer_state().unwrap().step, b.optimizer_state().unwrap().step);
        assert!(a.optimizer_state().unwrap().v.bit_eq(&b.optimizer_state().unwrap().v));
    }
}
