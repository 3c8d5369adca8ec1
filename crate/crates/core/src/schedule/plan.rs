use serde::{Deserialize, Serialize};

use super::lr::{CosineScheduleParams, LayerwiseScheduleParams};
use crate::error::{Error, Result};
use crate::numerics::{ParamGroup, ParamStore, Scalar};

/// Training stage, deciding which tensors learn and at what rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Speech embeddings, speech branch and speech head only.
    Stage1,
    Stage2Full,
    /// Speech tensors plus the shared trunk.
    Stage2Shared,
    /// Like `Stage2Shared`, but each shared block follows its own delayed schedule.
    Stage2Layerwise,
    Nf,
    Sft,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2Full => "stage2_full",
            Stage::Stage2Shared => "stage2_shared",
            Stage::Stage2Layerwise => "stage2_layerwise",
            Stage::Nf => "nf",
            Stage::Sft => "sft",
        }
    }
}

/// How one tensor is treated by a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Frozen,
    /// Follows the stage's global cosine schedule.
    Global,
    /// Follows the layerwise schedule for shared block `i`.
    Layer(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreezePlan {
    pub stage: Stage,
    pub global: CosineScheduleParams,
    /// Required for `Stage2Layerwise`, ignored otherwise.
    pub layerwise: Option<LayerwiseScheduleParams>,
}

/// Learning rate and trainable flag resolved for one tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TensorLr {
    pub trainable: bool,
    pub lr: f64,
}

enum Part {
    Embed(ParamGroup),
    Pos,
    Shared(usize),
    TextBranch,
    SpeechBranch,
    PlainBlock,
    TextHead,
    SpeechHead,
}

fn block_index(rest: &str) -> Option<usize> {
    match rest.split_once('.') {
        Some((i, tensor)) if !tensor.is_empty() => i.parse().ok(),
        _ => None,
    }
}

fn classify(name: &str) -> Result<Part> {
    let unknown = || Error::UnknownTensor(name.to_string());
    Ok(match name {
        "text_embed" => Part::Embed(ParamGroup::TextBackbone),
        "speech_embed" => Part::Embed(ParamGroup::SpeechNew),
        "pos_embed" => Part::Pos,
        _ => {
            let (prefix, rest) = name.split_once('.').ok_or_else(unknown)?;
            match prefix {
                "shared" => Part::Shared(block_index(rest).ok_or_else(unknown)?),
                "text_branch" | "speech_branch" | "blocks" => {
                    block_index(rest).ok_or_else(unknown)?;
                    match prefix {
                        "text_branch" => Part::TextBranch,
                        "speech_branch" => Part::SpeechBranch,
                        _ => Part::PlainBlock,
                    }
                }
                "text_head" => Part::TextHead,
                "speech_head" => Part::SpeechHead,
                _ => return Err(unknown()),
            }
        }
    })
}

impl FreezePlan {
    pub fn new(stage: Stage, global: CosineScheduleParams) -> Self {
        FreezePlan {
            stage,
            global,
            layerwise: None,
        }
    }

    pub fn layerwise(global: CosineScheduleParams, layerwise: LayerwiseScheduleParams) -> Self {
        FreezePlan {
            stage: Stage::Stage2Layerwise,
            global,
            layerwise: Some(layerwise),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.global.validate()?;
        match (self.stage, &self.layerwise) {
            (Stage::Stage2Layerwise, None) => {
                Err(Error::contract("layerwise stage needs layerwise schedule parameters"))
            }
            (Stage::Stage2Layerwise, Some(p)) => p.validate(),
            _ => Ok(()),
        }
    }

    /// How this plan treats the tensor `name`.
    pub fn rule(&self, name: &str) -> Result<Rule> {
        let part = classify(name)?;
        let speech = matches!(
            part,
            Part::Embed(ParamGroup::SpeechNew) | Part::SpeechBranch | Part::SpeechHead
        );
        Ok(match self.stage {
            Stage::Stage2Full | Stage::Nf | Stage::Sft => Rule::Global,
            _ if speech => Rule::Global,
            Stage::Stage1 => Rule::Frozen,
            Stage::Stage2Shared => match part {
                Part::Shared(_) => Rule::Global,
                Part::PlainBlock => return Err(Error::contract("shared-trunk plans need a split model")),
                _ => Rule::Frozen,
            },
            Stage::Stage2Layerwise => match part {
                Part::Shared(i) => {
                    let n = self.layerwise.map_or(0, |p| p.n);
                    if i >= n {
                        return Err(Error::contract(format!(
                            "shared block {i} outside the layerwise schedule of {n} layers"
                        )));
                    }
                    Rule::Layer(i)
                }
                Part::PlainBlock => return Err(Error::contract("shared-trunk plans need a split model")),
                _ => Rule::Frozen,
            },
        })
    }

    /// Learning rate and trainable flag for a tensor under `rule` at `step`
    /// (counted from the start of this stage).
    pub fn resolve(&self, rule: Rule, step: u64) -> Result<TensorLr> {
        Ok(match rule {
            Rule::Frozen => TensorLr {
                trainable: false,
                lr: 0.0,
            },
            Rule::Global => TensorLr {
                trainable: true,
                lr: self.global.lr(step),
            },
            Rule::Layer(i) => {
                let p = self
                    .layerwise
                    .ok_or_else(|| Error::contract("layerwise stage needs layerwise schedule parameters"))?;
                let lr = p.lr(i, step)?;
                // A block is only switched on once its own schedule starts.
                TensorLr {
                    trainable: step >= p.delay(i),
                    lr,
                }
            }
        })
    }
}

/// Sets every tensor's trainable flag for `step` and returns the learning
/// rate of each tensor, indexed like the store.
///
/// Frozen tensors get `trainable = false` (which drops their optimizer
/// moments) and rate 0. Unknown tensor names abort the whole call before any
/// flag changes.
pub fn apply_plan<F: Scalar>(store: &mut ParamStore<F>, plan: &FreezePlan, step: u64) -> Result<Vec<TensorLr>> {
    plan.validate()?;
    let resolved = store
        .iter()
        .map(|(_, t)| plan.rule(t.name()).and_then(|r| plan.resolve(r, step)))
        .collect::<Result<Vec<_>>>()?;
    for (t, r) in store.iter_mut().zip(&resolved) {
        t.set_trainable(r.trainable);
    }
    Ok(resolved)
}
