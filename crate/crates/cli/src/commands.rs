use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use splitlm::analysis::{analyze, collect_states, emit};
use splitlm::data::{
    files, filter_corpus, generate, load_corpus, load_language, read_jsonl, rejection_csv, to_jsonl, EvalItem, Record,
    Transcript,
};
use splitlm::model::{
    build_split_model, AnyModel, ArchConfig, Checkpoint, LanguageModel, PlainConfig, PlainTransformer, SplitTransformer,
};
use splitlm::numerics::Rng;
use splitlm::schedule::{FreezePlan, Stage};
use splitlm::trainer::{
    ablation_csv, ablation_table, eval_preservation, eval_ranked, pretrain_text_base, run_ablation, run_stage,
    text_perplexity, AblationConfig, AblationSetup, MetricsLog, StageData,
};
use splitlm::{Error, Result};

use crate::config::CliConfig;
use crate::rundir::RunDir;

const SPLIT_STREAM: u64 = 0x5b1;
const ANALYSIS_STREAM: u64 = 0xa7a1;

fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

/// Corpora of a data directory, read on demand.
struct DataDir<'a> {
    dir: &'a Path,
}

impl DataDir<'_> {
    fn records(&self, name: &str) -> Result<Vec<Record>> {
        load_corpus(&self.dir.join(name))
    }

    fn speech(&self) -> Result<Vec<Record>> {
        let mut all = self.records(files::INTERLEAVED)?;
        all.extend(self.records(files::UNSUP)?);
        Ok(all)
    }

    fn eval(&self, name: &str) -> Result<Vec<EvalItem>> {
        read_jsonl(&self.dir.join(name))
    }

    /// Fails unless the data was generated for the configured vocabularies.
    fn check_vocab(&self, cfg: &CliConfig) -> Result<()> {
        let spec = load_language(self.dir)?.spec;
        let (t, s) = (cfg.model.text_vocab, cfg.model.speech_vocab);
        if (spec.text_vocab, spec.speech_vocab) != (t, s) {
            return Err(contract(format!(
                "data in {} uses vocabularies ({}, {}), the config expects ({t}, {s})",
                self.dir.display(),
                spec.text_vocab,
                spec.speech_vocab
            )));
        }
        Ok(())
    }
}

fn data_dir(cfg: &CliConfig) -> Result<DataDir<'_>> {
    let dir = cfg.input("data")?;
    let d = DataDir { dir };
    d.check_vocab(cfg)?;
    Ok(d)
}

fn load_base(cfg: &CliConfig) -> Result<PlainTransformer> {
    let path = cfg.input("base")?;
    let ck = Checkpoint::load(path)?;
    let want = cfg.model.base();
    match ck.arch {
        ArchConfig::Plain(c) if c == want => PlainTransformer::from_checkpoint(&ck),
        other => Err(contract(format!(
            "{} holds {other:?}, the config expects the text base {want:?}",
            path.display()
        ))),
    }
}

fn load_split(cfg: &CliConfig) -> Result<SplitTransformer> {
    let path = cfg.input("model")?;
    let ck = Checkpoint::load(path)?;
    match ck.arch {
        ArchConfig::Split(c) if c == cfg.model => SplitTransformer::from_checkpoint(&ck),
        other => Err(contract(format!(
            "{} holds {other:?}, the config expects the split model {:?}",
            path.display(),
            cfg.model
        ))),
    }
}

/// A split model of the configured shape, or a plain one of the matching
/// base shape with or without the merged speech vocabulary.
fn load_any(cfg: &CliConfig) -> Result<AnyModel> {
    let path = cfg.input("model")?;
    let ck = Checkpoint::load(path)?;
    let base = cfg.model.base();
    let ok = match ck.arch {
        ArchConfig::Split(c) => c == cfg.model,
        ArchConfig::Plain(c) => {
            let merged = PlainConfig {
                speech_vocab: cfg.model.speech_vocab,
                ..base
            };
            c == base || c == merged
        }
    };
    if !ok {
        return Err(contract(format!(
            "{} holds {:?}, which does not match the configured model",
            path.display(),
            ck.arch
        )));
    }
    AnyModel::from_checkpoint(&ck)
}

fn write_metrics(run: &mut RunDir, log: &MetricsLog, suffix: &str) -> Result<()> {
    run.write(&format!("metrics{suffix}.csv"), log.csv())?;
    run.write(&format!("epochs{suffix}.csv"), log.epochs_csv())?;
    if let Some(csv) = log.layer_lr_csv() {
        run.write(&format!("layer_lr{suffix}.csv"), csv)?;
    }
    Ok(())
}

fn save(run: &mut RunDir, name: &str, ck: &Checkpoint) -> Result<()> {
    run.write(name, ck.to_bytes()?)?;
    Ok(())
}

pub fn gen_data(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    let ds = generate(&cfg.corpus_spec(), &cfg.dataset)?;
    for p in ds.write(run.root())? {
        run.register(&p)?;
    }
    println!(
        "generated {} text, {} interleaved, {} unsupervised, {} sft records; {} + {} eval items",
        ds.text.len(),
        ds.interleaved.len(),
        ds.unsup.len(),
        ds.sft.len(),
        ds.eval_text.len(),
        ds.eval_speech.len()
    );
    Ok(())
}

pub fn pretrain_base(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    let data = data_dir(cfg)?;
    let text = data.records(files::TEXT)?;
    let probes = data.records(files::PROBES)?;
    let mut log = MetricsLog::default();
    let model = pretrain_text_base(
        cfg.model.base(),
        &text,
        cfg.steps.base,
        cfg.schedule.base,
        &cfg.train_options(),
        &mut log,
    )?;
    save(run, "base.ckpt", &model.to_checkpoint())?;
    write_metrics(run, &log, "")?;
    let ppl = text_perplexity(&model, &probes)?;
    run.write_json(
        "eval.json",
        &json!({ "ppl": ppl, "ppl_uniform": cfg.model.text_vocab as f64 }),
    )?;
    println!(
        "base model: {} steps, probe perplexity {ppl:.4} (uniform {})",
        cfg.steps.base, cfg.model.text_vocab
    );
    Ok(())
}

pub fn build_split(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    let base = load_base(cfg)?;
    let model = build_split_model(&base, cfg.model, &mut Rng::derive(cfg.seed, SPLIT_STREAM))?;
    save(run, "split.ckpt", &model.to_checkpoint())?;
    println!(
        "split model: {} shared + {} branch blocks, {} parameters",
        cfg.model.n_shared,
        cfg.model.n_branch,
        model.params().num_values()
    );
    Ok(())
}

/// Plan and step budget of one stage of `train`.
fn stage_plan(cfg: &CliConfig, stage: Stage) -> Result<(FreezePlan, u64)> {
    let sched = cfg.pretrain_schedule();
    Ok(match stage {
        Stage::Stage1 => (FreezePlan::new(Stage::Stage1, sched.stage1), sched.stage1_steps),
        Stage::Stage2Full => (
            sched.stage2_plan(AblationConfig::FpFull, cfg.model.n_shared)?,
            sched.stage2_steps,
        ),
        Stage::Stage2Shared => (
            sched.stage2_plan(AblationConfig::FpShared, cfg.model.n_shared)?,
            sched.stage2_steps,
        ),
        Stage::Stage2Layerwise => (
            sched.stage2_plan(AblationConfig::FpLayerwise, cfg.model.n_shared)?,
            sched.stage2_steps,
        ),
        Stage::Nf => (FreezePlan::new(Stage::Nf, sched.stage2), sched.stage2_steps),
        Stage::Sft => return Err(contract("fine-tuning runs through the sft subcommand, not train")),
    })
}

fn ranked(model: &dyn LanguageModel, items: &[EvalItem]) -> Result<Value> {
    let r = eval_ranked(model, items)?;
    Ok(json!({ "accuracy": r.accuracy, "scored": r.scored, "skipped": r.skipped }))
}

/// Ranked accuracies, probe perplexity and, given a base, preservation.
fn evaluation(cfg: &CliConfig, model: &dyn LanguageModel, data: &DataDir) -> Result<Value> {
    let probes = data.records(files::PROBES)?;
    let mut out = json!({
        "text": ranked(model, &data.eval(files::EVAL_TEXT)?)?,
        "ppl": text_perplexity(model, &probes)?,
    });
    if model.speech_vocab() > 0 {
        out["speech"] = ranked(model, &data.eval(files::EVAL_SPEECH)?)?;
    }
    if cfg.inputs.base.is_some() {
        let base = load_base(cfg)?;
        let p = eval_preservation(model, &base, &probes)?;
        out["preservation"] = json!({
            "max_abs_logit_diff": p.max_abs_logit_diff,
            "ppl_model": p.ppl_model,
            "ppl_base": p.ppl_base,
        });
    }
    Ok(out)
}

fn summary(eval: &Value) -> String {
    let acc = |k: &str| eval[k]["accuracy"].as_f64().map_or("-".into(), |a| format!("{a:.4}"));
    let mut s = format!(
        "text acc {}, speech acc {}, probe perplexity {:.4}",
        acc("text"),
        acc("speech"),
        eval["ppl"].as_f64().unwrap_or(f64::NAN)
    );
    if let Some(d) = eval["preservation"]["max_abs_logit_diff"].as_f64() {
        s += &format!(", max text-logit drift {d:e}");
    }
    s
}

pub fn train(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    if cfg.train.stages.is_empty() {
        return Err(contract("train.stages is empty"));
    }
    let plans = cfg
        .train
        .stages
        .iter()
        .map(|&s| stage_plan(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let mut model = load_split(cfg)?;
    if cfg.inputs.base.is_some() {
        load_base(cfg)?;
    }
    let data = data_dir(cfg)?;
    let speech = data.speech()?;
    let text = data.records(files::TEXT)?;
    let probes = data.records(files::PROBES)?;
    let opts = cfg.train_options();
    let mut log = MetricsLog::default();
    let mut stages = Vec::new();
    for (plan, steps) in &plans {
        let stage_data = match plan.stage {
            Stage::Stage1 => StageData::only(&speech, "speech"),
            _ => StageData {
                main: &speech,
                main_name: "speech",
                text: &text,
                text_every: cfg.train.text_every,
            },
        };
        run_stage(&mut model, plan, *steps, &stage_data, &opts, &mut log)?;
        let ppl = text_perplexity(&model, &probes)?;
        println!("{}: {steps} steps, probe perplexity {ppl:.4}", plan.stage.label());
        stages.push(json!({ "stage": plan.stage.label(), "steps": steps, "ppl": ppl }));
    }
    save(run, "model.ckpt", &model.to_checkpoint())?;
    write_metrics(run, &log, "")?;
    let mut eval = evaluation(cfg, &model, &data)?;
    eval["stages"] = Value::Array(stages);
    run.write_json("eval.json", &eval)?;
    println!("{}", summary(&eval));
    Ok(())
}

struct Filtered {
    kept: Vec<Record>,
    rejected: usize,
    errors: usize,
}

fn filter_into(cfg: &CliConfig, data: &DataDir, run: &mut RunDir) -> Result<Filtered> {
    let sft = data.records(files::SFT)?;
    let transcripts: BTreeMap<u64, Transcript> = read_jsonl::<Transcript>(&data.dir.join(files::TRANSCRIPTS))?
        .into_iter()
        .map(|t| (t.id, t))
        .collect();
    let out = filter_corpus(&sft, &transcripts, cfg.sft.wer_threshold)?;
    run.write("sft_filtered.jsonl", to_jsonl(&out.kept)?)?;
    run.write("rejected.csv", rejection_csv(&out.rejected))?;
    if !out.errors.is_empty() {
        let mut csv = String::from("record_id,error\n");
        for (id, e) in &out.errors {
            csv += &format!("{id},{}\n", e.replace([',', '\n'], ";"));
        }
        run.write("filter_errors.csv", csv)?;
    }
    println!(
        "wer filter at {}: kept {}, rejected {}, unscorable {}",
        cfg.sft.wer_threshold,
        out.kept.len(),
        out.rejected.len(),
        out.errors.len()
    );
    Ok(Filtered {
        rejected: out.rejected.len(),
        errors: out.errors.len(),
        kept: out.kept,
    })
}

pub fn filter(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    let data = DataDir {
        dir: cfg.input("data")?,
    };
    filter_into(cfg, &data, run)?;
    Ok(())
}

pub fn sft(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    let plan = FreezePlan::new(Stage::Sft, cfg.schedule.sft);
    let mut model = load_split(cfg)?;
    let data = data_dir(cfg)?;
    let f = filter_into(cfg, &data, run)?;
    if f.kept.is_empty() {
        return Err(contract("the WER filter rejected every SFT record"));
    }
    let mut log = MetricsLog::default();
    run_stage(
        &mut model,
        &plan,
        cfg.steps.sft,
        &StageData::only(&f.kept, "sft"),
        &cfg.train_options(),
        &mut log,
    )?;
    save(run, "model.ckpt", &model.to_checkpoint())?;
    write_metrics(run, &log, "")?;
    let mut eval = evaluation(cfg, &model, &data)?;
    eval["sft"] = json!({ "kept": f.kept.len(), "rejected": f.rejected, "errors": f.errors, "steps": cfg.steps.sft });
    run.write_json("eval.json", &eval)?;
    println!("{}", summary(&eval));
    Ok(())
}

pub fn ablate(cfg: &CliConfig, configs: &[AblationConfig], run: &mut RunDir) -> Result<()> {
    if configs.is_empty() {
        return Err(contract("no ablation configurations selected"));
    }
    let schedule = cfg.pretrain_schedule();
    if configs.contains(&AblationConfig::FpLayerwise) {
        schedule.stage2_plan(AblationConfig::FpLayerwise, cfg.model.n_shared)?;
    }
    let base = load_base(cfg)?;
    let data = data_dir(cfg)?;
    let speech = data.speech()?;
    let text = data.records(files::TEXT)?;
    let eval_speech = data.eval(files::EVAL_SPEECH)?;
    let eval_text = data.eval(files::EVAL_TEXT)?;
    let probes = data.records(files::PROBES)?;
    let setup = AblationSetup {
        base: &base,
        split: cfg.model,
        schedule,
        speech: &speech,
        text: &text,
        eval_speech: &eval_speech,
        eval_text: &eval_text,
        probes: &probes,
        opts: cfg.train_options(),
    };
    let results = run_ablation(configs, &setup);
    let rows: Vec<_> = results.iter().map(|(r, _)| r.clone()).collect();
    for (row, log) in &results {
        write_metrics(run, log, &format!("_{}", row.config.name()))?;
    }
    run.write("ablation.csv", ablation_csv(&rows))?;
    let table = ablation_table(&rows);
    run.write("ablation.txt", &table)?;
    print!("{table}");
    Ok(())
}

pub fn analyze_cmd(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    let model = load_split(cfg)?;
    let lang = load_language(cfg.input("data")?)?;
    if cfg.analysis.samples == 0 || cfg.analysis.words == 0 {
        return Err(contract("analysis needs at least one sample of at least one word"));
    }
    let states = (0..cfg.analysis.samples as u64)
        .map(|i| {
            let mut rng = Rng::derive(cfg.seed, ANALYSIS_STREAM ^ (i << 20));
            let text = lang.sample_text(cfg.analysis.words, None, &mut rng);
            let (speech, pairs) = lang.render_speech(&text, 0.0, &mut rng);
            collect_states(&model, i, &text, &speech, &pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = analyze(&states)?;
    for p in emit(&report, run.root())? {
        run.register(&p)?;
    }
    let curve: Vec<String> = report.mean_curve().iter().map(|x| format!("{x:.4}")).collect();
    println!("lambda {:.6}; mean SS by layer: {}", report.lambda, curve.join(" "));
    Ok(())
}

pub fn eval(cfg: &CliConfig, run: &mut RunDir) -> Result<()> {
    let model = load_any(cfg)?;
    if cfg.inputs.base.is_some() {
        load_base(cfg)?;
    }
    let data = data_dir(cfg)?;
    let eval = evaluation(cfg, &model, &data)?;
    run.write_json("eval.json", &eval)?;
    println!("{}", summary(&eval));
    Ok(())
}
