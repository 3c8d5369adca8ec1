//! Synthetic paired text/speech language, corpora, SFT data and WER filtering.

mod dataset;
mod eval;
mod interleave;
mod io;
mod language;
mod record;
mod sft;
mod wer;

pub use dataset::{files, generate, load_language, Dataset, DatasetSpec};
pub use eval::{gen_eval_item, EvalItem};
pub use interleave::{chunk_interleave, chunk_word_counts};
pub use io::{from_jsonl, load_corpus, read_jsonl, save_corpus, to_jsonl, write_jsonl};
pub use language::{gen_language, sample_paired, CorpusSpec, Language, Paired, MAX_EXPANSION, MIN_EXPANSION};
pub use record::{AlignmentPair, Chunk, Record, RecordKind};
pub use sft::{build_sft, content_pool, Content, SftConfig, SftMix, SftPair};
pub use wer::{filter_corpus, rejection_csv, wer, FilterOutcome, Transcript};
