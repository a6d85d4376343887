use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use agdst::corpus::{generate_synthetic, load_canonical, load_multiwoz_like, load_woz_like, Corpus, DialogueRecord, SyntheticSpec};
use agdst::eval::{export_attention, AttentionDump, MetricsReport, PredictionRun};
use agdst::negsample::ValuePool;
use agdst::neural::{load_checkpoint, save_checkpoint, EmbeddingMode, ModelCheckpoint, Transformer};
use agdst::two_pass::{
    build_vocabulary, default_decode_budget, resolved_model_config, track_corpus, track_dialogue, train as train_model, EpochLog, PassContext, RunConfig, TrackMode,
    TrainObserver,
};
use agdst::vocab::Vocabulary;
use agdst::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::manifest::{beside, Manifest};
use crate::{CorpusArgs, CorpusFormat, SplitChoice};

const CHECKPOINT: &str = "model.ckpt";
const VOCAB: &str = "vocab.txt";
const RUN_CONFIG: &str = "run_config.json";
const TRAIN_LOG: &str = "train_log.jsonl";

pub enum PredictMode {
    Predicted,
    GoldConditioning,
    CorruptPrimitives { seed: u64 },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("value serializes"))
}

fn load_corpus(args: &CorpusArgs) -> Result<Corpus> {
    let corpus = match args.format {
        CorpusFormat::Canonical => load_canonical(&args.corpus)?,
        CorpusFormat::MultiwozLike => load_multiwoz_like(&args.corpus)?,
        CorpusFormat::WozLike => load_woz_like(&args.corpus)?,
    };
    corpus.validate()?;
    Ok(corpus)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), read_json)
}

pub fn gen_data(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec: SyntheticSpec = spec.map_or_else(|| Ok(SyntheticSpec::default()), read_json)?;
    let corpus = generate_synthetic(&spec)?;
    write_text(out, &corpus.to_json())?;
    let mut m = Manifest::new("gen-data");
    m.config_hash = Some(crate::manifest::sha256_hex(&serde_json::to_vec(&spec).expect("spec serializes")));
    m.output(out).write(&beside(out))?;
    log::info!("wrote {} dialogues to {}", corpus.dialogues.len(), out.display());
    Ok(())
}

/// Appends epoch events to the log file and keeps the best checkpoint on disk.
struct DiskObserver {
    log: BufWriter<File>,
    checkpoint: PathBuf,
}

impl TrainObserver for DiskObserver {
    fn on_epoch(&mut self, entry: &EpochLog) -> Result<()> {
        let mut line = serde_json::to_value(entry).expect("log serializes");
        line["event"] = "epoch".into();
        writeln!(self.log, "{line}").and_then(|_| self.log.flush()).map_err(|e| Error::io(TRAIN_LOG, e))
    }

    fn on_best(&mut self, checkpoint: &ModelCheckpoint) -> Result<()> {
        save_checkpoint(&self.checkpoint, checkpoint)
    }
}

/// Trains into `out` and returns the best validation JGA.
fn train_into(config: &RunConfig, corpus: &Corpus, corpus_path: &Path, out: &Path) -> Result<f64> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let schema = &corpus.schema;
    config.validate(schema)?;
    let splits = corpus.splits(config.split_ratios, config.split_seed)?;
    let vocab = build_vocabulary(&splits.train, schema, config.min_freq)?;
    let mut resolved = config.clone();
    resolved.model = resolved_model_config(config, &vocab);
    resolved.decode_budget = Some(config.decode_budget.unwrap_or_else(|| default_decode_budget(schema)));
    write_json(&out.join(RUN_CONFIG), &resolved)?;
    vocab.save(&out.join(VOCAB))?;

    let log_path = out.join(TRAIN_LOG);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut observer = DiskObserver {
        log: BufWriter::new(file),
        checkpoint: out.join(CHECKPOINT),
    };
    let outcome = train_model(&splits.train, &splits.valid, schema, &vocab, &resolved, &mut observer)?;
    let stop = serde_json::json!({
        "event": "stop",
        "reason": outcome.stop_reason,
        "best_epoch": outcome.best_epoch,
        "best_valid_jga": outcome.best_valid_jga,
    });
    writeln!(observer.log, "{stop}").and_then(|_| observer.log.flush()).map_err(|e| Error::io(&log_path, e))?;

    let mut m = Manifest::new("train");
    m.config_hash = Some(resolved.hash());
    m.input("corpus", corpus_path)?;
    for name in [CHECKPOINT, VOCAB, RUN_CONFIG, TRAIN_LOG] {
        m.output(&out.join(name));
    }
    m.write(&out.join("manifest.json"))?;
    Ok(outcome.best_valid_jga)
}

fn with_seed(config: &RunConfig, seed: u64) -> RunConfig {
    let mut c = config.clone();
    c.model.seed = seed;
    c.training.seed = seed;
    c.corruption.rng_seed = seed;
    c
}

pub fn train(config: Option<&Path>, corpus_args: &CorpusArgs, out: &Path, seeds: &[u64]) -> Result<()> {
    let config = load_config(config)?;
    let corpus = load_corpus(corpus_args)?;
    if seeds.is_empty() {
        let jga = train_into(&config, &corpus, &corpus_args.corpus, out)?;
        log::info!("best validation JGA {jga:.4}");
        return Ok(());
    }
    let mut per_seed = BTreeMap::new();
    for &seed in seeds {
        let jga = train_into(&with_seed(&config, seed), &corpus, &corpus_args.corpus, &out.join(format!("seed-{seed}")))?;
        per_seed.insert(seed.to_string(), jga);
    }
    let values: Vec<f64> = per_seed.values().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    write_json(
        &out.join("sweep.json"),
        &serde_json::json!({"best_valid_jga": per_seed, "mean": mean, "std": std}),
    )
}

struct TrainedModel {
    config: RunConfig,
    vocab: Vocabulary,
    model: Transformer<f32>,
}

impl TrainedModel {
    fn load(dir: &Path) -> Result<Self> {
        let config: RunConfig = read_json(&dir.join(RUN_CONFIG))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB))?;
        let ckpt = load_checkpoint(&dir.join(CHECKPOINT), &vocab.hash())?;
        let model = Transformer::from_parameters(&ckpt.config, ckpt.params)?;
        Ok(Self { config, vocab, model })
    }

    fn context<'a>(&'a self, corpus: &'a Corpus) -> Result<PassContext<'a>> {
        PassContext::new(&corpus.schema, &self.vocab, &self.config)
    }
}

fn select(corpus: &Corpus, config: &RunConfig, split: SplitChoice) -> Result<Vec<DialogueRecord>> {
    if let SplitChoice::All = split {
        return Ok(corpus.dialogues.clone());
    }
    let s = corpus.splits(config.split_ratios, config.split_seed)?;
    Ok(match split {
        SplitChoice::Train => s.train,
        SplitChoice::Valid => s.valid,
        _ => s.test,
    })
}

fn predict_run(trained: &TrainedModel, corpus: &Corpus, records: &[DialogueRecord], mode: &PredictMode) -> Result<PredictionRun> {
    let config = &trained.config;
    let ctx = trained.context(corpus)?;
    let mode = match mode {
        PredictMode::Predicted => TrackMode::Predicted,
        PredictMode::GoldConditioning => TrackMode::GoldConditioning,
        PredictMode::CorruptPrimitives { seed } => {
            let train = corpus.splits(config.split_ratios, config.split_seed)?.train;
            let pool = ValuePool::for_policy(&config.corruption, &corpus.schema, train.iter().flat_map(|r| r.turns.iter().map(|t| &t.state)));
            TrackMode::OracleCorruption {
                policy: config.corruption.clone(),
                pool,
                seed: *seed,
            }
        }
    };
    track_corpus(&trained.model, &ctx, config.amending, records, &mode)
}

pub fn predict(model_dir: &Path, corpus_args: &CorpusArgs, out: &Path, split: SplitChoice, mode: PredictMode) -> Result<()> {
    let trained = TrainedModel::load(model_dir)?;
    let corpus = load_corpus(corpus_args)?;
    let records = select(&corpus, &trained.config, split)?;
    let run = predict_run(&trained, &corpus, &records, &mode)?;
    write_text(out, &run.to_jsonl())?;
    let mut m = Manifest::new("predict");
    m.config_hash = Some(trained.config.hash());
    m.input("corpus", &corpus_args.corpus)?.input("checkpoint", &model_dir.join(CHECKPOINT))?;
    m.output(out).write(&beside(out))
}

/// Gold dialogues in the order the run lists them.
fn gold_for(run: &PredictionRun, corpus: &Corpus) -> Result<Vec<DialogueRecord>> {
    let by_id: BTreeMap<&str, &DialogueRecord> = corpus.dialogues.iter().map(|d| (d.id.as_str(), d)).collect();
    run.dialogues
        .iter()
        .map(|d| {
            by_id
                .get(d.id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| Error::structural(format!("dialogue {} is not in the corpus", d.id)))
        })
        .collect()
}

fn score(run: &PredictionRun, corpus: &Corpus, threshold: f64) -> Result<MetricsReport> {
    MetricsReport::compute(run, &gold_for(run, corpus)?, threshold)
}

pub fn eval(predictions: &Path, corpus_args: &CorpusArgs, out: &Path, threshold: f64) -> Result<()> {
    let corpus = load_corpus(corpus_args)?;
    let run = PredictionRun::load(predictions, &corpus.schema)?;
    let report = score(&run, &corpus, threshold)?;
    write_text(out, &report.to_json())?;
    let mut m = Manifest::new("eval");
    m.input("corpus", &corpus_args.corpus)?.input("predictions", predictions)?;
    m.output(out).write(&beside(out))
}

pub fn inspect_attention(model_dir: &Path, corpus_args: &CorpusArgs, dialogue: &str, out: &Path) -> Result<()> {
    let trained = TrainedModel::load(model_dir)?;
    let corpus = load_corpus(corpus_args)?;
    let record = corpus
        .dialogues
        .iter()
        .find(|d| d.id == dialogue)
        .ok_or_else(|| Error::config(format!("dialogue {dialogue} is not in the corpus")))?;
    let ctx = trained.context(&corpus)?;
    let outputs = track_dialogue(&trained.model, &ctx, trained.config.amending, record, &TrackMode::Predicted, true)?;
    let dump = AttentionDump {
        dialogue_id: record.id.clone(),
        turns: outputs.into_iter().filter_map(|o| o.attention).collect(),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    export_attention(&dump, out)?;
    let mut m = Manifest::new("inspect-attention");
    m.config_hash = Some(trained.config.hash());
    m.input("corpus", &corpus_args.corpus)?.input("checkpoint", &model_dir.join(CHECKPOINT))?;
    m.output(out).write(&beside(out))
}

/// The configuration under test plus one variant per ablation switch.
pub fn ablation_variants(base: &RunConfig, has_pairs: bool) -> Vec<(String, RunConfig)> {
    let mut out = vec![("base".to_string(), base.clone())];
    let mut push = |name: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        out.push((name.to_string(), c));
    };
    push("no_amending", &|c| c.amending = false);
    push("amending_without_ns", &|c| {
        c.amending = true;
        c.negative_sampling = "off".into();
    });
    push("ns", &|c| {
        c.amending = true;
        c.negative_sampling = "ns".into();
    });
    if has_pairs {
        push("ns_plus", &|c| {
            c.amending = true;
            c.negative_sampling = "ns_plus".into();
        });
    }
    push("full_history", &|c| c.structure = "full_history".into());
    push("history_only", &|c| c.structure = "history_only".into());
    push("no_name_tokens", &|c| c.toggles.no_name = true);
    push("no_utterance_tokens", &|c| c.toggles.no_utterance = true);
    push("no_state_tokens", &|c| c.toggles.no_state = true);
    push("token_position_embeddings", &|c| c.model.embedding_mode = EmbeddingMode::TokenPosition);
    let mut unique: Vec<(String, RunConfig)> = Vec::new();
    for (name, c) in out {
        if !unique.iter().any(|(_, u)| *u == c) {
            unique.push((name, c));
        }
    }
    unique
}

pub fn ablate(config: Option<&Path>, corpus_args: &CorpusArgs, out: &Path) -> Result<()> {
    let base = load_config(config)?;
    let corpus = load_corpus(corpus_args)?;
    let mut summary = BTreeMap::new();
    for (name, variant) in ablation_variants(&base, !corpus.schema.correlated_pairs().is_empty()) {
        log::info!("ablation variant {name}");
        let dir = out.join(&name);
        let best_valid_jga = train_into(&variant, &corpus, &corpus_args.corpus, &dir)?;
        let trained = TrainedModel::load(&dir)?;
        let test = select(&corpus, &variant, SplitChoice::Test)?;
        let run = predict_run(&trained, &corpus, &test, &PredictMode::Predicted)?;
        write_text(&dir.join("predictions.jsonl"), &run.to_jsonl())?;
        let report = score(&run, &corpus, agdst::eval::NEAR_MISS_THRESHOLD)?;
        write_text(&dir.join("report.json"), &report.to_json())?;
        let corrupted = predict_run(&trained, &corpus, &test, &PredictMode::CorruptPrimitives { seed: 0 })?;
        write_text(&dir.join("predictions_corrupted.jsonl"), &corrupted.to_jsonl())?;
        let corrupted_report = score(&corrupted, &corpus, agdst::eval::NEAR_MISS_THRESHOLD)?;
        write_text(&dir.join("report_corrupted.json"), &corrupted_report.to_json())?;
        summary.insert(
            name,
            serde_json::json!({
                "best_valid_jga": best_valid_jga,
                "test_jga": report.jga,
                "test_slot_acc": report.slot_acc_overall,
                "repair_rate": corrupted_report.repair_rate,
            }),
        );
    }
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    let mut m = Manifest::new("ablate");
    m.config_hash = Some(base.hash());
    m.input("corpus", &corpus_args.corpus)?;
    m.output(&summary_path).write(&out.join("manifest.json"))
}
