use serde::{Deserialize, Serialize};

use super::batches::BatchStream;
use super::metrics::{EpochEvent, MetricRow, MetricsLog};
use crate::data::Record;
use crate::error::{Error, Result};
use crate::model::{batch_loss, LanguageModel, PlainConfig, PlainTransformer, Sequence};
use crate::numerics::{AdamW, Rng};
use crate::schedule::{apply_plan, CosineScheduleParams, FreezePlan, Stage};

/// Stream tags for derived seeds.
const INIT_STREAM: u64 = 0x1417;
const MAIN_STREAM: u64 = 0x3a1;
const TEXT_STREAM: u64 = 0x7e7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    /// Sequences per batch.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamW,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 32,
            seed: 0,
            optimizer: AdamW::default(),
        }
    }
}

/// Corpora of one stage. Every `text_every`-th step draws from `text`
/// instead of `main`; 0 never does.
#[derive(Clone, Copy, Debug)]
pub struct StageData<'a> {
    pub main: &'a [Record],
    pub main_name: &'a str,
    pub text: &'a [Record],
    pub text_every: u64,
}

impl<'a> StageData<'a> {
    pub fn only(main: &'a [Record], main_name: &'a str) -> Self {
        StageData {
            main,
            main_name,
            text: &[],
            text_every: 0,
        }
    }
}

/// Records whose stage step falls on the text share.
fn is_text_step(data: &StageData, step: u64) -> bool {
    data.text_every > 0 && (step + 1).is_multiple_of(data.text_every)
}

/// Trains `model` for `steps` optimizer steps under `plan`, appending one
/// metrics row per step to `log`.
pub fn run_stage<M: LanguageModel + ?Sized>(
    model: &mut M,
    plan: &FreezePlan,
    steps: u64,
    data: &StageData,
    opts: &TrainOptions,
    log: &mut MetricsLog,
) -> Result<()> {
    run_labeled(model, plan, plan.stage.label(), steps, data, opts, log)
}

fn run_labeled<M: LanguageModel + ?Sized>(
    model: &mut M,
    plan: &FreezePlan,
    stage: &str,
    steps: u64,
    data: &StageData,
    opts: &TrainOptions,
    log: &mut MetricsLog,
) -> Result<()> {
    plan.validate()?;
    if steps == 0 {
        return Err(Error::contract("a stage needs at least one step"));
    }
    if opts.batch_size == 0 {
        return Err(Error::contract("batch_size must be positive"));
    }
    if data.text_every > 0 && data.text.is_empty() {
        return Err(Error::contract(
            "stage mixes in text batches but the text corpus is empty",
        ));
    }
    let first = log.next_step();
    let stream_seed = |tag: u64| Rng::derive(opts.seed, tag ^ (first << 16)).next_u64();
    let mut main = BatchStream::new(data.main, stream_seed(MAIN_STREAM))?;
    let mut text = if data.text_every > 0 {
        Some(BatchStream::new(data.text, stream_seed(TEXT_STREAM))?)
    } else {
        None
    };
    let n_layers = plan.layerwise.map(|p| p.n);
    for s in 0..steps {
        let global = first + s;
        let lrs = apply_plan(model.params_mut(), plan, s)?;
        let (source, stream) = match (&mut text, is_text_step(data, s)) {
            (Some(t), true) => ("text", t),
            _ => (data.main_name, &mut main),
        };
        let (records, wrapped) = stream.next_batch(opts.batch_size);
        let group = format!("{stage}.{source}");
        if wrapped {
            log.epochs.push(EpochEvent {
                step: global,
                group: group.clone(),
                epoch: stream.epoch(),
            });
        }
        let batch = records
            .iter()
            .map(|r| r.to_sequence(model.max_seq()))
            .collect::<Result<Vec<Sequence>>>()?;
        let out = batch_loss(&*model, &batch, true)?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged {
                step: global as usize,
                detail: format!("loss {} on a {group} batch", out.loss),
            });
        }
        let store = model.params_mut();
        store.zero_grads();
        store.accumulate(&out.grads)?;
        let rates: Vec<f64> = lrs.iter().map(|r| r.lr).collect();
        opts.optimizer.step_per_tensor(store, &rates)?;
        log.rows.push(MetricRow {
            step: global,
            group,
            lr: plan.global.lr(s),
            loss_text: out.text_loss,
            loss_speech: out.speech_loss,
        });
        if let (Some(n), Some(p)) = (n_layers, plan.layerwise) {
            let layer = (0..n).map(|i| p.lr(i, s)).collect::<Result<Vec<_>>>()?;
            log.layer_lrs.push((global, layer));
        }
    }
    Ok(())
}

/// Stage 0: trains a fresh text model on a text-only corpus for a fixed
/// step budget.
pub fn pretrain_text_base(
    config: PlainConfig,
    corpus: &[Record],
    steps: u64,
    schedule: CosineScheduleParams,
    opts: &TrainOptions,
    log: &mut MetricsLog,
) -> Result<PlainTransformer> {
    if config.speech_vocab != 0 {
        return Err(Error::contract("the text base model has no speech vocabulary"));
    }
    if let Some(r) = corpus
        .iter()
        .find(|r| r.chunks.iter().any(|c| c.m != crate::model::Modality::Text))
    {
        return Err(Error::contract(format!(
            "record {} of the base corpus holds speech",
            r.id
        )));
    }
    let mut model = PlainTransformer::new(config, &mut Rng::derive(opts.seed, INIT_STREAM))?;
    let plan = FreezePlan::new(Stage::Nf, schedule);
    run_labeled(
        &mut model,
        &plan,
        "base",
        steps,
        &StageData::only(corpus, "text"),
        opts,
        log,
    )?;
    Ok(model)
}
