use std::collections::HashMap;

use splitlm::data::{generate, CorpusSpec, Dataset, DatasetSpec, EvalItem, Record};
use splitlm::model::{
    build_split_model, Heads, LanguageModel, LossTerms, ModalityLogits, ModelConfig, PlainTransformer, Sequence,
    SplitTransformer, Token,
};
use splitlm::numerics::{Matrix, ParamGroup, ParamStore, Rng, Tape};
use splitlm::schedule::{CosineScheduleParams, FreezePlan, LayerwiseScheduleParams, Stage};
use splitlm::trainer::{
    ablation_csv, ablation_table, continuation_logprob, eval_preservation, eval_ranked, initial_model,
    pretrain_text_base, run_ablation, run_stage, AblationConfig, AblationSetup, MetricsLog, PretrainSchedule,
    StageData, TrainOptions,
};
use splitlm::Error;

fn cfg() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        n_shared: 2,
        n_branch: 1,
        text_vocab: 16,
        speech_vocab: 32,
        max_seq: 40,
    }
}

fn dataset() -> Dataset {
    let corpus = CorpusSpec {
        text_vocab: 16,
        speech_vocab: 32,
        markov_order: 1,
        temperature: 0.35,
        noise_prob: 0.02,
        seed: 21,
    };
    let spec = DatasetSpec {
        text_records: 200,
        interleaved_records: 100,
        unsup_records: 50,
        sft_records: 20,
        min_words: 6,
        max_words: 10,
        chunk_min: 2,
        chunk_max: 4,
        eval_items: 1000,
        probes: 20,
        ..DatasetSpec::default()
    };
    generate(&corpus, &spec).unwrap()
}

fn opts(seed: u64) -> TrainOptions {
    TrainOptions {
        batch_size: 4,
        seed,
        ..TrainOptions::default()
    }
}

fn cosine(start: f64, total: u64) -> CosineScheduleParams {
    CosineScheduleParams::with_default_warmup(start, start / 10.0, total).unwrap()
}

fn base(ds: &Dataset, steps: u64, seed: u64) -> (PlainTransformer, MetricsLog) {
    let mut log = MetricsLog::default();
    let m = pretrain_text_base(
        cfg().base(),
        &ds.text,
        steps,
        cosine(3e-3, steps),
        &opts(seed),
        &mut log,
    )
    .unwrap();
    (m, log)
}

fn split(base: &PlainTransformer) -> SplitTransformer {
    build_split_model(base, cfg(), &mut Rng::new(9)).unwrap()
}

fn speech_corpus(ds: &Dataset) -> Vec<Record> {
    ds.interleaved.iter().chain(&ds.unsup).cloned().collect()
}

#[test]
fn base_pretraining_learns_and_beats_uniform() {
    let ds = dataset();
    let (model, log) = base(&ds, 500, 1);
    let first = log.rows[..20].iter().filter_map(|r| r.loss_text).sum::<f64>() / 20.0;
    let last = log.recent_loss(20, false).unwrap();
    assert!(last < first, "{first} -> {last}");
    let ppl = splitlm::trainer::text_perplexity(&model, &ds.probes).unwrap();
    assert!(ppl < cfg().text_vocab as f64, "perplexity {ppl}");
    assert_eq!(log.rows.len(), 500);
    assert!(log
        .rows
        .iter()
        .all(|r| r.group == "base.text" && r.loss_speech.is_none()));
}

#[test]
fn base_pretraining_is_reproducible() {
    let ds = dataset();
    let (a, la) = base(&ds, 30, 4);
    let (b, lb) = base(&ds, 30, 4);
    assert_eq!(
        a.to_checkpoint().to_bytes().unwrap(),
        b.to_checkpoint().to_bytes().unwrap()
    );
    assert_eq!(la.csv(), lb.csv());
    let (c, _) = base(&ds, 30, 5);
    assert_ne!(a.to_checkpoint(), c.to_checkpoint());
}

#[test]
fn base_pretraining_rejects_speech() {
    let ds = dataset();
    let mut log = MetricsLog::default();
    let r = pretrain_text_base(cfg().base(), &ds.interleaved, 5, cosine(1e-3, 5), &opts(0), &mut log);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn stage1_keeps_text_backbone_and_logits_exact() {
    let ds = dataset();
    let (b, _) = base(&ds, 50, 1);
    let mut m = split(&b);
    let before = m.params().clone();
    let speech = speech_corpus(&ds);
    let mut log = MetricsLog::default();
    let plan = FreezePlan::new(Stage::Stage1, cosine(3e-3, 60));
    run_stage(
        &mut m,
        &plan,
        60,
        &StageData::only(&speech, "speech"),
        &opts(2),
        &mut log,
    )
    .unwrap();
    let mut changed = 0;
    for ((_, x), (_, y)) in before.iter().zip(m.params().iter()) {
        let same = x.value.bit_eq(&y.value);
        match x.group() {
            ParamGroup::TextBackbone => assert!(same, "{} moved", x.name()),
            ParamGroup::SpeechNew => changed += usize::from(!same),
        }
    }
    assert!(changed > 0);
    let p = eval_preservation(&m, &b, &ds.probes).unwrap();
    assert_eq!(p.max_abs_logit_diff, 0.0);
    assert_eq!(p.ppl_model, p.ppl_base);
    assert!(log.rows.iter().all(|r| r.group == "stage1.speech"));
}

#[test]
fn layerwise_stage_holds_first_block_until_its_delay() {
    let ds = dataset();
    let (b, _) = base(&ds, 20, 1);
    let mut m = split(&b);
    let lw = LayerwiseScheduleParams::new(2, 6, 2, 20, 3e-3).unwrap();
    assert_eq!(lw.delay(0), 6);
    let plan = FreezePlan::layerwise(cosine(3e-3, 20), lw);
    let speech = speech_corpus(&ds);
    let data = StageData {
        main: &speech,
        main_name: "speech",
        text: &ds.text,
        text_every: 10,
    };
    let block0 = |m: &SplitTransformer| m.params().by_name("shared.0.attn.wq").unwrap().value.clone();
    let block1 = |m: &SplitTransformer| m.params().by_name("shared.1.attn.wq").unwrap().value.clone();
    let (start0, start1) = (block0(&m), block1(&m));
    let mut log = MetricsLog::default();
    // Step 0 has zero rate for block 1 too (warmup starts at 0); by step 6 it has moved.
    run_stage(&mut m, &plan, 6, &data, &opts(3), &mut log).unwrap();
    assert!(block0(&m).bit_eq(&start0));
    assert!(!block1(&m).bit_eq(&start1));
    assert!(log.layer_lrs.iter().all(|(_, lrs)| lrs[0] == 0.0));
    assert!(log
        .layer_lr_csv()
        .unwrap()
        .starts_with("step,shared.0,shared.1\n0,0,0\n1,0,"));
}

#[test]
fn layerwise_block_moves_after_its_delay() {
    let ds = dataset();
    let (b, _) = base(&ds, 20, 1);
    let mut m = split(&b);
    let lw = LayerwiseScheduleParams::new(2, 6, 2, 20, 3e-3).unwrap();
    let plan = FreezePlan::layerwise(cosine(3e-3, 20), lw);
    let speech = speech_corpus(&ds);
    let start = m.params().by_name("shared.0.attn.wq").unwrap().value.clone();
    let mut log = MetricsLog::default();
    run_stage(
        &mut m,
        &plan,
        9,
        &StageData::only(&speech, "speech"),
        &opts(3),
        &mut log,
    )
    .unwrap();
    assert!(!m.params().by_name("shared.0.attn.wq").unwrap().value.bit_eq(&start));
    assert!(m
        .params()
        .by_name("text_head.w")
        .unwrap()
        .value
        .bit_eq(&b.params().by_name("text_head.w").unwrap().value));
}

#[test]
fn stage2_mixes_in_text_batches() {
    let ds = dataset();
    let (b, _) = base(&ds, 10, 1);
    let mut m = split(&b);
    let speech = speech_corpus(&ds);
    let data = StageData {
        main: &speech,
        main_name: "speech",
        text: &ds.text,
        text_every: 10,
    };
    let mut log = MetricsLog::default();
    run_stage(
        &mut m,
        &FreezePlan::new(Stage::Stage2Full, cosine(1e-3, 30)),
        30,
        &data,
        &opts(1),
        &mut log,
    )
    .unwrap();
    let text: Vec<u64> = log
        .rows
        .iter()
        .filter(|r| r.group.ends_with(".text"))
        .map(|r| r.step)
        .collect();
    assert_eq!(text, vec![9, 19, 29]);
    assert!(log
        .rows
        .iter()
        .filter(|r| r.group.ends_with(".text"))
        .all(|r| r.loss_speech.is_none()));
}

#[test]
fn exhausted_corpus_is_reshuffled_and_logged() {
    let ds = dataset();
    let (b, _) = base(&ds, 5, 1);
    let mut m = split(&b);
    let tiny = &ds.unsup[..6];
    let mut log = MetricsLog::default();
    let plan = FreezePlan::new(Stage::Stage1, cosine(1e-3, 7));
    run_stage(&mut m, &plan, 7, &StageData::only(tiny, "speech"), &opts(1), &mut log).unwrap();
    // 28 records drawn from 6: passes start at draws 6, 12, 18, 24.
    let epochs: Vec<(u64, u64)> = log.epochs.iter().map(|e| (e.step, e.epoch)).collect();
    assert_eq!(epochs, vec![(1, 1), (3, 2), (4, 3), (6, 4)]);
    assert!(log.epochs_csv().starts_with("step,group,epoch\n1,stage1.speech,1\n"));
}

#[test]
fn metrics_replay_byte_for_byte() {
    let ds = dataset();
    let (b, _) = base(&ds, 10, 1);
    let speech = speech_corpus(&ds);
    let run = || {
        let mut m = split(&b);
        let mut log = MetricsLog::default();
        let plan = FreezePlan::new(Stage::Stage1, cosine(1e-3, 15));
        run_stage(
            &mut m,
            &plan,
            15,
            &StageData::only(&speech, "speech"),
            &opts(8),
            &mut log,
        )
        .unwrap();
        let plan = FreezePlan::new(Stage::Stage2Full, cosine(1e-3, 15));
        run_stage(
            &mut m,
            &plan,
            15,
            &StageData::only(&speech, "speech"),
            &opts(8),
            &mut log,
        )
        .unwrap();
        (log.csv(), m.to_checkpoint().to_bytes().unwrap())
    };
    let (a, b2) = (run(), run());
    assert_eq!(a, b2);
    assert_eq!(a.0.lines().count(), 31);
    assert!(a.0.lines().nth(16).unwrap().starts_with("15,stage2_full.speech,"));
}

#[test]
fn non_finite_loss_aborts_with_the_step() {
    let ds = dataset();
    let (b, _) = base(&ds, 5, 1);
    let mut m = split(&b);
    m.params_mut()
        .by_name_mut("speech_head.w")
        .unwrap()
        .value
        .set(0, 0, f32::NAN);
    let speech = speech_corpus(&ds);
    let mut log = MetricsLog::default();
    let plan = FreezePlan::new(Stage::Stage1, cosine(1e-3, 5));
    let err = run_stage(
        &mut m,
        &plan,
        5,
        &StageData::only(&speech, "speech"),
        &opts(1),
        &mut log,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 0, .. }), "{err}");
}

#[test]
fn preservation_after_build_and_after_full_training() {
    let ds = dataset();
    let (b, _) = base(&ds, 30, 1);
    let mut m = split(&b);
    assert_eq!(eval_preservation(&m, &b, &ds.probes).unwrap().max_abs_logit_diff, 0.0);
    let speech = speech_corpus(&ds);
    let mut log = MetricsLog::default();
    run_stage(
        &mut m,
        &FreezePlan::new(Stage::Nf, cosine(3e-3, 10)),
        10,
        &StageData::only(&speech, "speech"),
        &opts(1),
        &mut log,
    )
    .unwrap();
    assert!(eval_preservation(&m, &b, &ds.probes).unwrap().max_abs_logit_diff > 0.0);
    let other = PlainTransformer::new(
        splitlm::model::PlainConfig {
            text_vocab: 20,
            ..cfg().base()
        },
        &mut Rng::new(1),
    )
    .unwrap();
    assert!(eval_preservation(&m, &other, &ds.probes).is_err());
}

#[test]
fn identical_continuations_rank_as_ties() {
    let ds = dataset();
    let model = SplitTransformer::<f32>::new(cfg(), &mut Rng::new(2)).unwrap();
    let items: Vec<EvalItem> = ds.eval_speech[..50]
        .iter()
        .map(|i| EvalItem {
            distractor: i.truth.clone(),
            ..i.clone()
        })
        .collect();
    assert_eq!(eval_ranked(&model, &items).unwrap().accuracy, 0.5);
}

#[test]
fn untrained_model_ranks_at_chance() {
    let ds = dataset();
    let model = SplitTransformer::<f32>::new(cfg(), &mut Rng::new(3)).unwrap();
    for items in [&ds.eval_speech, &ds.eval_text] {
        let acc = eval_ranked(&model, items).unwrap();
        assert_eq!(acc.scored, 1000);
        assert!((0.45..=0.55).contains(&acc.accuracy), "{acc:?}");
    }
}

#[test]
fn mismatched_items_are_skipped() {
    let ds = dataset();
    let model = SplitTransformer::<f32>::new(cfg(), &mut Rng::new(3)).unwrap();
    let mut items = ds.eval_text[..10].to_vec();
    items[0].distractor.pop();
    let acc = eval_ranked(&model, &items).unwrap();
    assert_eq!((acc.scored, acc.skipped), (9, 1));
}

/// Puts nearly all mass on the token that followed the same prefix in a
/// registered sequence.
struct Rigged {
    next: HashMap<Vec<Token>, u32>,
    store: ParamStore,
}

impl LanguageModel for Rigged {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn text_vocab(&self) -> usize {
        16
    }
    fn speech_vocab(&self) -> usize {
        32
    }
    fn max_seq(&self) -> usize {
        40
    }
    fn loss_terms<'s>(&'s self, _: &mut Tape<'s>, _: &Sequence, _: f32) -> splitlm::Result<LossTerms> {
        Err(Error::Contract("not trainable".into()))
    }
    fn logits(&self, tokens: &[Token], heads: Heads) -> splitlm::Result<ModalityLogits> {
        let make = |vocab: usize| {
            Matrix::from_fn(tokens.len(), vocab, |p, c| match self.next.get(&tokens[..=p]) {
                Some(&id) if id as usize == c => 30.0,
                _ => 0.0,
            })
        };
        Ok(ModalityLogits {
            text: heads.text.then(|| make(16)),
            speech: heads.speech.then(|| make(32)),
        })
    }
}

#[test]
fn rigged_model_ranks_perfectly() {
    let ds = dataset();
    let usable: Vec<&EvalItem> = ds
        .eval_speech
        .iter()
        .filter(|i| i.truth != i.distractor)
        .take(200)
        .collect();
    assert!(usable.len() >= 190);
    for item in usable {
        let mut next = HashMap::new();
        let mut toks = item.prefix_tokens();
        for t in item.continuation_tokens(false) {
            next.insert(toks.clone(), t.id);
            toks.push(t);
        }
        let rigged = Rigged {
            next,
            store: ParamStore::new(),
        };
        assert_eq!(eval_ranked(&rigged, std::slice::from_ref(item)).unwrap().accuracy, 1.0);
    }
}

#[test]
fn continuation_score_ignores_constant_logit_shifts() {
    let mut rng = Rng::new(4);
    let logits = Matrix::<f64>::from_fn(6, 10, |_, _| rng.normal());
    let ids = [3, 7, 1];
    let a = continuation_logprob(&logits, 2, &ids).unwrap();
    let shifted = logits.map(|x| x + 123.25);
    let b = continuation_logprob(&shifted, 2, &ids).unwrap();
    assert!((a - b).abs() <= 1e-12);
    let mut by_row = logits.clone();
    for r in 0..6 {
        for x in by_row.row_mut(r) {
            *x -= r as f64 * 3.5;
        }
    }
    assert!((a - continuation_logprob(&by_row, 2, &ids).unwrap()).abs() <= 1e-12);
    let direct: f64 = ids
        .iter()
        .enumerate()
        .map(|(j, &id)| {
            let row = logits.row(2 + j);
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            (row[id as usize].exp() / z).ln()
        })
        .sum::<f64>()
        / 3.0;
    assert!((a - direct).abs() <= 1e-12);
    assert!(continuation_logprob(&logits, 4, &ids).is_err());
}

fn setup<'a>(ds: &'a Dataset, b: &'a PlainTransformer, speech: &'a [Record], k: u64) -> AblationSetup<'a> {
    AblationSetup {
        base: b,
        split: cfg(),
        schedule: PretrainSchedule {
            stage1_steps: 10,
            stage1: cosine(3e-3, 10),
            stage2_steps: 12,
            stage2: cosine(1e-3, 12),
            layerwise: LayerwiseScheduleParams {
                n: 2,
                k,
                w: 2,
                t: 12,
                eta_max: 1e-3,
            },
            text_every: 10,
        },
        speech,
        text: &ds.text,
        eval_speech: &ds.eval_speech[..50],
        eval_text: &ds.eval_text[..50],
        probes: &ds.probes,
        opts: opts(6),
    }
}

#[test]
fn nosplit_baseline_has_one_merged_head_and_no_branches() {
    let ds = dataset();
    let (b, _) = base(&ds, 5, 1);
    let speech = speech_corpus(&ds);
    let m = initial_model(AblationConfig::NfNoSplit, &setup(&ds, &b, &speech, 3)).unwrap();
    let names: Vec<&str> = m.params().names().collect();
    assert!(names.iter().all(|n| !n.contains("branch") && !n.starts_with("speech_")));
    assert_eq!(m.params().by_name("text_head.w").unwrap().value.cols(), 16 + 32);
    assert_eq!(m.params().by_name("text_embed").unwrap().value.rows(), 16 + 32);
}

#[test]
fn ablation_subset_reports_rows_in_order() {
    let ds = dataset();
    let (b, _) = base(&ds, 20, 1);
    let speech = speech_corpus(&ds);
    let out = run_ablation(&AblationConfig::ALL, &setup(&ds, &b, &speech, 3));
    assert_eq!(out.len(), 5);
    for (row, log) in &out {
        assert_eq!(row.status, "ok");
        assert_eq!(log.rows.len(), 22);
        if row.config.frozen_first() {
            assert_eq!(row.delta_stage1, 0.0, "{:?}", row.config);
        } else {
            assert_ne!(row.delta_stage1, 0.0, "{:?}", row.config);
        }
    }
    let rows: Vec<_> = out.into_iter().map(|(r, _)| r).collect();
    let csv = ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().nth(1).unwrap().starts_with("fp-full,"));
    assert!(ablation_table(&rows).lines().all(|l| !l.contains(',')));
}

#[test]
fn failing_configuration_yields_a_partial_row() {
    let ds = dataset();
    let (b, _) = base(&ds, 5, 1);
    let speech = speech_corpus(&ds);
    // k = 20 makes T = 12 too short for the layerwise schedule.
    let out = run_ablation(
        &[AblationConfig::FpLayerwise, AblationConfig::Nf],
        &setup(&ds, &b, &speech, 20),
    );
    assert!(out[0].0.status.starts_with("failed:"));
    assert!(out[0].0.speech_acc.is_nan());
    assert_eq!(out[1].0.status, "ok");
    assert!(ablation_csv(&[out[0].0.clone()]).contains("fp-layerwise,,,"));
    assert!("fp-shared".parse::<AblationConfig>().is_ok());
    assert!("fp".parse::<AblationConfig>().is_err());
}
