use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{gen_eval_item, EvalItem};
use super::interleave::chunk_interleave;
use super::io::write_jsonl;
use super::language::{sample_paired, CorpusSpec, Language};
use super::record::{Chunk, Record, RecordKind};
use super::sft::{build_sft, content_pool, SftMix};
use super::wer::Transcript;
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::numerics::Rng;

/// Sizes and shapes of every generated corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub text_records: usize,
    pub interleaved_records: usize,
    pub unsup_records: usize,
    pub sft_records: usize,
    /// Words per text, interleaved and unsupervised record.
    pub min_words: usize,
    pub max_words: usize,
    /// Words per interleaved chunk.
    pub chunk_min: usize,
    pub chunk_max: usize,
    pub sft_question_words: usize,
    pub sft_answer_words: usize,
    pub sft_mix: SftMix,
    /// Substitution noise of SFT speech sides, which the WER filter screens.
    pub sft_noise_prob: f64,
    /// Ranked-continuation items per modality.
    pub eval_items: usize,
    pub eval_prefix_words: usize,
    pub eval_continuation_words: usize,
    /// Held-out text records for preservation probes.
    pub probes: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            text_records: 2000,
            interleaved_records: 2000,
            unsup_records: 1000,
            sft_records: 1000,
            min_words: 24,
            max_words: 48,
            chunk_min: 6,
            chunk_max: 12,
            sft_question_words: 8,
            sft_answer_words: 8,
            sft_mix: SftMix::default(),
            sft_noise_prob: 0.3,
            eval_items: 1000,
            eval_prefix_words: 6,
            eval_continuation_words: 2,
            probes: 100,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::contract("need 0 < min_words <= max_words"));
        }
        if self.chunk_min == 0 || self.chunk_min > self.chunk_max {
            return Err(Error::contract("need 0 < chunk_min <= chunk_max"));
        }
        if self.sft_question_words == 0 || self.sft_answer_words == 0 {
            return Err(Error::contract("sft questions and answers need at least one word"));
        }
        if !(0.0..1.0).contains(&self.sft_noise_prob) {
            return Err(Error::contract("sft_noise_prob must lie in [0, 1)"));
        }
        self.sft_mix.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub language: Language,
    pub text: Vec<Record>,
    pub interleaved: Vec<Record>,
    pub unsup: Vec<Record>,
    pub sft: Vec<Record>,
    pub transcripts: Vec<Transcript>,
    pub probes: Vec<Record>,
    pub eval_text: Vec<EvalItem>,
    pub eval_speech: Vec<EvalItem>,
}

/// File names inside a data directory.
pub mod files {
    pub const LANGUAGE: &str = "language.json";
    pub const TEXT: &str = "text.jsonl";
    pub const INTERLEAVED: &str = "interleaved.jsonl";
    pub const UNSUP: &str = "unsup.jsonl";
    pub const SFT: &str = "sft.jsonl";
    pub const TRANSCRIPTS: &str = "sft_transcripts.jsonl";
    pub const PROBES: &str = "probes.jsonl";
    pub const EVAL_TEXT: &str = "eval_text.jsonl";
    pub const EVAL_SPEECH: &str = "eval_speech.jsonl";
}

fn words(spec: &DatasetSpec, rng: &mut Rng) -> usize {
    rng.range_inclusive(spec.min_words, spec.max_words)
}

fn text_record(lang: &Language, spec: &DatasetSpec, id: u64, seed: u64) -> Record {
    let mut rng = Rng::derive(seed, id);
    let n = words(spec, &mut rng);
    Record {
        id,
        kind: RecordKind::Text,
        chunks: vec![Chunk {
            m: Modality::Text,
            ids: lang.sample_text(n, None, &mut rng),
        }],
        pairs: vec![],
    }
}

/// Generates every corpus from `corpus.seed`. Record ids are unique across
/// corpora and each record draws from its own stream `seed ^ id`.
pub fn generate(corpus: &CorpusSpec, spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let lang = Language::from_spec(corpus)?;
    let seed = corpus.seed;
    let mut next_id = 1u64;
    let mut ids = |n: usize| {
        let start = next_id;
        next_id += n as u64;
        start..next_id
    };

    let text = ids(spec.text_records)
        .map(|id| text_record(&lang, spec, id, seed))
        .collect();
    let interleaved = ids(spec.interleaved_records)
        .map(|id| {
            let mut rng = Rng::derive(seed, id);
            let n = words(spec, &mut rng);
            let paired = sample_paired(&lang, n, &mut rng)?;
            chunk_interleave(id, &paired, spec.chunk_min, spec.chunk_max, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let unsup = ids(spec.unsup_records)
        .map(|id| {
            let mut rng = Rng::derive(seed, id);
            let n = words(spec, &mut rng);
            let paired = sample_paired(&lang, n, &mut rng)?;
            Ok(Record {
                id,
                kind: RecordKind::Unsup,
                chunks: vec![Chunk {
                    m: Modality::Speech,
                    ids: paired.speech,
                }],
                pairs: vec![],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let sft_ids = ids(spec.sft_records);
    let pool = content_pool(
        &lang,
        sft_ids.start,
        spec.sft_records,
        spec.sft_question_words,
        spec.sft_answer_words,
        seed,
    );
    // Configuration draws and speech rendering share one extra stream.
    let mut sft_rng = Rng::derive(seed, ids(1).start);
    let pairs = build_sft(&lang, &pool, &spec.sft_mix, spec.sft_noise_prob, &mut sft_rng)?;
    let sft = pairs.iter().map(|p| p.to_record()).collect();
    let transcripts = pairs.iter().filter_map(|p| p.transcript.clone()).collect();

    let probes = ids(spec.probes).map(|id| text_record(&lang, spec, id, seed)).collect();
    let mut eval = |m: Modality| {
        ids(spec.eval_items)
            .map(|id| {
                let mut rng = Rng::derive(seed, id);
                gen_eval_item(&lang, m, spec.eval_prefix_words, spec.eval_continuation_words, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    };
    let eval_text = eval(Modality::Text)?;
    let eval_speech = eval(Modality::Speech)?;
    Ok(Dataset {
        language: lang,
        text,
        interleaved,
        unsup,
        sft,
        transcripts,
        probes,
        eval_text,
        eval_speech,
    })
}

impl Dataset {
    /// Writes every corpus into `dir` and returns the paths written, in order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let lang_path = dir.join(files::LANGUAGE);
        let json = serde_json::to_string_pretty(&self.language.spec)
            .map_err(|e| Error::contract(format!("cannot encode corpus spec: {e}")))?;
        fs::write(&lang_path, json + "\n").map_err(|e| Error::io(&lang_path, e))?;
        written.push(lang_path);
        for (name, records) in [
            (files::TEXT, &self.text),
            (files::INTERLEAVED, &self.interleaved),
            (files::UNSUP, &self.unsup),
            (files::SFT, &self.sft),
            (files::PROBES, &self.probes),
        ] {
            let p = dir.join(name);
            write_jsonl(&p, records)?;
            written.push(p);
        }
        let p = dir.join(files::TRANSCRIPTS);
        write_jsonl(&p, &self.transcripts)?;
        written.push(p);
        for (name, items) in [
            (files::EVAL_TEXT, &self.eval_text),
            (files::EVAL_SPEECH, &self.eval_speech),
        ] {
            let p = dir.join(name);
            write_jsonl(&p, items)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Reads `language.json` from a data directory and regenerates the language.
pub fn load_language(dir: &Path) -> Result<Language> {
    let path = dir.join(files::LANGUAGE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let spec: CorpusSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    Language::from_spec(&spec)
}
