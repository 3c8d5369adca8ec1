use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use splitlm::data::{CorpusSpec, DatasetSpec};
use splitlm::model::ModelConfig;
use splitlm::numerics::AdamW;
use splitlm::schedule::{CosineScheduleParams, LayerwiseScheduleParams, Stage};
use splitlm::trainer::{PretrainSchedule, TrainOptions};
use splitlm::{Error, Result};

/// The synthetic language; its seed is the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub text_vocab: usize,
    pub speech_vocab: usize,
    pub markov_order: usize,
    pub temperature: f64,
    pub noise_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Steps {
    pub base: u64,
    pub stage1: u64,
    pub stage2: u64,
    pub sft: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    pub base: CosineScheduleParams,
    pub stage1: CosineScheduleParams,
    pub stage2: CosineScheduleParams,
    pub layerwise: LayerwiseScheduleParams,
    pub sft: CosineScheduleParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub optimizer: AdamW,
    /// Every n-th Stage-2 batch is text-only.
    pub text_every: u64,
    /// Stages run by `train`, in order.
    pub stages: Vec<Stage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftSection {
    pub wer_threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub samples: usize,
    pub words: usize,
}

/// Artifacts a subcommand reads.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Directory written by `gen-data`.
    pub data: Option<PathBuf>,
    /// Text base checkpoint.
    pub base: Option<PathBuf>,
    /// Checkpoint to train, fine-tune, evaluate or analyze.
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub seed: u64,
    pub threads: usize,
    pub corpus: CorpusSection,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub steps: Steps,
    pub schedule: Schedules,
    pub sft: SftSection,
    pub analysis: AnalysisSection,
    pub inputs: Inputs,
}

fn cosine(eta_start: f64, total: u64) -> CosineScheduleParams {
    CosineScheduleParams {
        eta_start,
        eta_end: eta_start / 10.0,
        warmup: total / 100,
        total,
    }
}

impl Default for CliConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let steps = Steps {
            base: 3000,
            stage1: 2000,
            stage2: 4000,
            sft: 1000,
        };
        CliConfig {
            seed: 0,
            threads: 1,
            corpus: CorpusSection {
                text_vocab: model.text_vocab,
                speech_vocab: model.speech_vocab,
                markov_order: 1,
                temperature: 0.5,
                noise_prob: 0.02,
            },
            dataset: DatasetSpec::default(),
            model,
            train: TrainSection {
                batch_size: 32,
                optimizer: AdamW::default(),
                text_every: 10,
                stages: vec![Stage::Stage1, Stage::Stage2Full],
            },
            steps,
            schedule: Schedules {
                base: cosine(1e-3, steps.base),
                stage1: cosine(4e-4, steps.stage1),
                stage2: cosine(6e-5, steps.stage2),
                layerwise: LayerwiseScheduleParams {
                    n: model.n_shared,
                    k: 400,
                    w: 200,
                    t: steps.stage2,
                    eta_max: 6e-5,
                },
                sft: cosine(1e-5, steps.sft),
            },
            sft: SftSection { wer_threshold: 0.2 },
            analysis: AnalysisSection { samples: 5, words: 12 },
            inputs: Inputs::default(),
        }
    }
}

impl CliConfig {
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            text_vocab: self.corpus.text_vocab,
            speech_vocab: self.corpus.speech_vocab,
            markov_order: self.corpus.markov_order,
            temperature: self.corpus.temperature,
            noise_prob: self.corpus.noise_prob,
            seed: self.seed,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.train.batch_size,
            seed: self.seed,
            optimizer: self.train.optimizer,
        }
    }

    pub fn pretrain_schedule(&self) -> PretrainSchedule {
        PretrainSchedule {
            stage1_steps: self.steps.stage1,
            stage1: self.schedule.stage1,
            stage2_steps: self.steps.stage2,
            stage2: self.schedule.stage2,
            layerwise: self.schedule.layerwise,
            text_every: self.train.text_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus_spec().validate()?;
        self.dataset.validate()?;
        self.model.validate()?;
        if (self.model.text_vocab, self.model.speech_vocab) != (self.corpus.text_vocab, self.corpus.speech_vocab) {
            return Err(Error::Contract(format!(
                "model vocabularies ({}, {}) differ from the corpus ({}, {})",
                self.model.text_vocab, self.model.speech_vocab, self.corpus.text_vocab, self.corpus.speech_vocab
            )));
        }
        if self.threads == 0 {
            return Err(Error::Contract("threads must be at least 1".into()));
        }
        for s in [
            self.schedule.base,
            self.schedule.stage1,
            self.schedule.stage2,
            self.schedule.sft,
        ] {
            s.validate()?;
        }
        if !(self.sft.wer_threshold > 0.0 && self.sft.wer_threshold <= 1.0) {
            return Err(Error::Contract("sft.wer_threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// `key` of `inputs`, or a named error when it is unset.
    pub fn input(&self, key: &str) -> Result<&Path> {
        let v = match key {
            "data" => &self.inputs.data,
            "base" => &self.inputs.base,
            "model" => &self.inputs.model,
            _ => unreachable!("unknown input {key}"),
        };
        v.as_deref()
            .ok_or_else(|| Error::Contract(format!("missing config key `inputs.{key}`")))
    }
}

/// Overlays `patch` onto `base`; every key of `patch` must already exist.
fn overlay(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| Error::Contract(format!("unknown config key `{key}`")))?;
                overlay(slot, v, &key)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Applies `key=value`; the value is read as JSON, falling back to a string.
fn apply_set(config: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Contract(format!("--set expects key=value, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for part in key.rsplit('.') {
        if part.is_empty() {
            return Err(Error::Contract(format!("malformed key `{key}`")));
        }
        let mut m = Map::new();
        m.insert(part.to_string(), patch);
        patch = Value::Object(m);
    }
    overlay(config, patch, "")
}

/// Defaults, then the config file, then `--set` overrides, then flags.
pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>, threads: Option<usize>) -> Result<CliConfig> {
    let mut value = serde_json::to_value(CliConfig::default()).expect("default config serializes");
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Contract(format!("{}: invalid JSON: {e}", path.display())))?;
        overlay(&mut value, patch, "")?;
    }
    for s in sets {
        apply_set(&mut value, s)?;
    }
    if let Some(seed) = seed {
        value["seed"] = seed.into();
    }
    if let Some(threads) = threads {
        value["threads"] = threads.into();
    }
    let config: CliConfig =
        serde_json::from_value(value).map_err(|e| Error::Contract(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}
