use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::eval::{eval_ranked, text_perplexity};
use super::metrics::MetricsLog;
use super::stage::{run_stage, StageData, TrainOptions};
use crate::data::{EvalItem, Record};
use crate::error::{Error, Result};
use crate::model::{build_split_model, AnyModel, ModelConfig, PlainTransformer};
use crate::numerics::Rng;
use crate::schedule::{CosineScheduleParams, FreezePlan, LayerwiseScheduleParams, Stage};

const SPLIT_STREAM: u64 = 0x5b1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationConfig {
    #[serde(rename = "fp-full")]
    FpFull,
    #[serde(rename = "fp-layerwise")]
    FpLayerwise,
    #[serde(rename = "fp-shared")]
    FpShared,
    #[serde(rename = "nf")]
    Nf,
    #[serde(rename = "nf-nosplit")]
    NfNoSplit,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 5] = [
        AblationConfig::FpFull,
        AblationConfig::FpLayerwise,
        AblationConfig::FpShared,
        AblationConfig::Nf,
        AblationConfig::NfNoSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationConfig::FpFull => "fp-full",
            AblationConfig::FpLayerwise => "fp-layerwise",
            AblationConfig::FpShared => "fp-shared",
            AblationConfig::Nf => "nf",
            AblationConfig::NfNoSplit => "nf-nosplit",
        }
    }

    /// Whether the first stage keeps the text backbone frozen.
    pub fn frozen_first(self) -> bool {
        !matches!(self, AblationConfig::Nf | AblationConfig::NfNoSplit)
    }
}

impl FromStr for AblationConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationConfig::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<&str> = AblationConfig::ALL.iter().map(|c| c.name()).collect();
            Error::contract(format!(
                "unknown ablation config `{s}`, expected one of {}",
                names.join(", ")
            ))
        })
    }
}

/// Step budgets and schedules of the two pre-training stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSchedule {
    pub stage1_steps: u64,
    pub stage1: CosineScheduleParams,
    pub stage2_steps: u64,
    pub stage2: CosineScheduleParams,
    /// Schedule of the shared blocks in the layerwise variant; `N` must
    /// equal the number of shared blocks.
    pub layerwise: LayerwiseScheduleParams,
    /// Every n-th Stage-2 batch is text-only.
    pub text_every: u64,
}

impl PretrainSchedule {
    pub fn stage1_plan(&self, config: AblationConfig) -> FreezePlan {
        let stage = if config.frozen_first() {
            Stage::Stage1
        } else {
            Stage::Nf
        };
        FreezePlan::new(stage, self.stage1)
    }

    pub fn stage2_plan(&self, config: AblationConfig, n_shared: usize) -> Result<FreezePlan> {
        Ok(match config {
            AblationConfig::FpLayerwise => {
                if self.layerwise.n != n_shared {
                    return Err(Error::contract(format!(
                        "layerwise schedule covers {} layers but the model has {n_shared} shared blocks",
                        self.layerwise.n
                    )));
                }
                self.layerwise.validate()?;
                FreezePlan::layerwise(self.stage2, self.layerwise)
            }
            AblationConfig::FpShared => FreezePlan::new(Stage::Stage2Shared, self.stage2),
            AblationConfig::FpFull => FreezePlan::new(Stage::Stage2Full, self.stage2),
            AblationConfig::Nf | AblationConfig::NfNoSplit => FreezePlan::new(Stage::Nf, self.stage2),
        })
    }
}

/// Everything the ablation configurations share.
#[derive(Clone, Copy, Debug)]
pub struct AblationSetup<'a> {
    pub base: &'a PlainTransformer,
    pub split: ModelConfig,
    pub schedule: PretrainSchedule,
    /// Stage-1 and Stage-2 speech corpora.
    pub speech: &'a [Record],
    pub text: &'a [Record],
    pub eval_speech: &'a [EvalItem],
    pub eval_text: &'a [EvalItem],
    pub probes: &'a [Record],
    pub opts: TrainOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub speech_acc: f64,
    pub text_acc: f64,
    pub ppl_base: f64,
    pub ppl_stage1: f64,
    pub delta_stage1: f64,
    pub ppl_final: f64,
    pub delta_final: f64,
    /// `ok`, or the reason the configuration failed.
    pub status: String,
}

/// Initial model of a configuration: the split model grown from the base,
/// or for the no-split baseline the base with speech ids appended.
pub fn initial_model(config: AblationConfig, setup: &AblationSetup) -> Result<AnyModel> {
    let mut rng = Rng::derive(setup.opts.seed, SPLIT_STREAM);
    Ok(match config {
        AblationConfig::NfNoSplit => AnyModel::Plain(setup.base.with_speech_vocab(setup.split.speech_vocab, &mut rng)?),
        _ => AnyModel::Split(build_split_model(setup.base, setup.split, &mut rng)?),
    })
}

/// Runs one configuration through both stages and evaluates it.
pub fn run_config(
    config: AblationConfig,
    setup: &AblationSetup,
    log: &mut MetricsLog,
) -> Result<(AblationRow, AnyModel)> {
    let s = &setup.schedule;
    let ppl_base = text_perplexity(setup.base, setup.probes)?;
    let mut model = initial_model(config, setup)?;
    run_stage(
        &mut model,
        &s.stage1_plan(config),
        s.stage1_steps,
        &StageData::only(setup.speech, "speech"),
        &setup.opts,
        log,
    )?;
    let ppl_stage1 = text_perplexity(&model, setup.probes)?;
    let data = StageData {
        main: setup.speech,
        main_name: "speech",
        text: setup.text,
        text_every: s.text_every,
    };
    let plan = s.stage2_plan(config, setup.split.n_shared)?;
    run_stage(&mut model, &plan, s.stage2_steps, &data, &setup.opts, log)?;
    let ppl_final = text_perplexity(&model, setup.probes)?;
    let row = AblationRow {
        config,
        speech_acc: eval_ranked(&model, setup.eval_speech)?.accuracy,
        text_acc: eval_ranked(&model, setup.eval_text)?.accuracy,
        ppl_base,
        ppl_stage1,
        delta_stage1: ppl_stage1 - ppl_base,
        ppl_final,
        delta_final: ppl_final - ppl_base,
        status: "ok".into(),
    };
    Ok((row, model))
}

/// One row per configuration, in the order given. A failing configuration
/// yields a row with NaN scores and the failure in `status`.
pub fn run_ablation(configs: &[AblationConfig], setup: &AblationSetup) -> Vec<(AblationRow, MetricsLog)> {
    configs
        .iter()
        .map(|&config| {
            let mut log = MetricsLog::default();
            let row = match run_config(config, setup, &mut log) {
                Ok((row, _)) => row,
                Err(e) => AblationRow {
                    config,
                    speech_acc: f64::NAN,
                    text_acc: f64::NAN,
                    ppl_base: f64::NAN,
                    ppl_stage1: f64::NAN,
                    delta_stage1: f64::NAN,
                    ppl_final: f64::NAN,
                    delta_final: f64::NAN,
                    status: format!("failed: {e}"),
                },
            };
            (row, log)
        })
        .collect()
}

fn cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.6}")
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("config,speech_acc,text_acc,ppl_base,ppl_stage1,delta_stage1,ppl_final,delta_final,status\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.config.name(),
            cell(r.speech_acc),
            cell(r.text_acc),
            cell(r.ppl_base),
            cell(r.ppl_stage1),
            cell(r.delta_stage1),
            cell(r.ppl_final),
            cell(r.delta_final),
            r.status.replace([',', '\n'], ";")
        );
    }
    out
}

/// The same table with padded columns, for terminals.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let csv = ablation_csv(rows);
    let grid: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = grid[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| grid.iter().map(|r| r.get(c).map_or(0, |x| x.len())).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &grid {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(x, &w)| format!("{x:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
