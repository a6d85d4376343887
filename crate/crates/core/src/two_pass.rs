//! The two-pass objective and tracking loop.
//!
//! Training sums the basic-pass loss (gold previous state in, gold state out)
//! and the amending-pass loss (sampled primitive in, gold state out) into one
//! update of a single parameter set. Tracking runs the basic pass on the
//! previous predicted state, then amends its output once.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{corpus_text, DialogueRecord};
use crate::error::{Error, Result};
use crate::eval::{joint_goal_accuracy, DialoguePrediction, PassAttention, PredictionRun, TurnAttention, TurnPrediction};
use crate::linearize::{append_target, build_pass_input, parse_state, serialize_state, LayoutOptions, PassKind, Role, Segment, TaggedSequence, TokenToggles};
use crate::negsample::{corrupt, CorruptionPolicy, ValuePool};
use crate::neural::{greedy_decode, AdamConfig, AttentionMaps, KvSession, Mode, ModelCheckpoint, ModelConfig, OptimizerState, Parameters, Schedule, Transformer};
use crate::state::{DialogueState, Schema};
use crate::strategy::{sampler_registry, structure_registry, InputStructure, PrimitiveSampler, SamplerArgs};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Turns per optimizer step.
    pub batch_size: usize,
    /// When set, batches are packed greedily in shuffled order up to this many
    /// sequence tokens instead of holding `batch_size` turns.
    pub batch_tokens: Option<usize>,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    /// Seeds the turn shuffle and dropout.
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            patience: 5,
            batch_size: 8,
            batch_tokens: None,
            schedule: Schedule {
                base_lr: 1e-3,
                warmup_steps: 100,
                decay_rate: 0.1,
                steps_per_epoch: 0,
            },
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Registered input structure name.
    pub structure: String,
    pub amending: bool,
    /// Registered negative-sampling strategy name; ignored without amending.
    pub negative_sampling: String,
    pub toggles: TokenToggles,
    pub model: ModelConfig,
    pub corruption: CorruptionPolicy,
    pub training: TrainingConfig,
    pub min_freq: usize,
    /// Generated tokens allowed per pass; derived from the schema when unset.
    pub decode_budget: Option<usize>,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            structure: "current_turn".into(),
            amending: true,
            negative_sampling: "ns".into(),
            toggles: TokenToggles::default(),
            model: ModelConfig::default(),
            corruption: CorruptionPolicy::default(),
            training: TrainingConfig::default(),
            min_freq: 1,
            decode_budget: None,
            split_ratios: (0.8, 0.1, 0.1),
            split_seed: 0,
        }
    }
}

impl RunConfig {
    /// Strategy actually used: `off` whenever amending is disabled.
    pub fn sampler_name(&self) -> &str {
        if self.amending {
            &self.negative_sampling
        } else {
            "off"
        }
    }

    pub fn structure(&self) -> Result<Box<dyn InputStructure>> {
        structure_registry().create(&self.structure, &())
    }

    pub fn sampler(&self, schema: &Schema, pool: ValuePool) -> Result<Box<dyn PrimitiveSampler>> {
        let args = SamplerArgs {
            schema: schema.clone(),
            policy: self.corruption.clone(),
            pool,
        };
        sampler_registry().create(self.sampler_name(), &args)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        self.structure()?;
        let samplers = sampler_registry();
        if !samplers.contains(&self.negative_sampling) {
            return Err(Error::config(format!(
                "unknown negative sampling strategy '{}'; registered: {}",
                self.negative_sampling,
                samplers.names().join(", ")
            )));
        }
        if self.amending && self.negative_sampling == "ns_plus" && schema.correlated_pairs().is_empty() {
            return Err(Error::config("ns_plus needs correlated slot pairs in the schema"));
        }
        self.corruption.validate(schema)?;
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 || t.batch_tokens == Some(0) {
            return Err(Error::config("training.epochs, training.batch_size and training.batch_tokens must be positive"));
        }
        if self.min_freq == 0 {
            return Err(Error::config("min_freq must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::config("model.dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable 64-bit seed derived from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

/// Longest state serialization the schema admits, plus the end token.
/// Slots without an ontology are assumed to take up to four words.
pub fn default_decode_budget(schema: &Schema) -> usize {
    let words: usize = (0..schema.len())
        .map(|i| {
            schema
                .ontology(i)
                .iter()
                .map(|v| v.split_whitespace().count())
                .max()
                .unwrap_or(4)
                .max(1)
        })
        .sum();
    3 + schema.len() + words
}

pub fn build_vocabulary(train: &[DialogueRecord], schema: &Schema, min_freq: usize) -> Result<Vocabulary> {
    Vocabulary::build(corpus_text(train, schema), schema, min_freq)
}

/// Everything needed to turn a dialogue turn into pass inputs.
pub struct PassContext<'a> {
    pub schema: &'a Schema,
    pub vocab: &'a Vocabulary,
    pub layout: LayoutOptions,
    pub max_positions: usize,
    pub decode_budget: usize,
}

impl<'a> PassContext<'a> {
    pub fn new(schema: &'a Schema, vocab: &'a Vocabulary, config: &RunConfig) -> Result<Self> {
        vocab.check_schema(schema)?;
        let budget = config.decode_budget.unwrap_or_else(|| default_decode_budget(schema));
        let max_positions = config.model.max_positions;
        if budget == 0 || budget >= max_positions {
            return Err(Error::config(format!(
                "decode budget {budget} must be positive and below max_positions {max_positions}"
            )));
        }
        Ok(Self {
            schema,
            vocab,
            layout: config.structure()?.layout(config.toggles, max_positions - budget),
            max_positions,
            decode_budget: budget,
        })
    }

    pub fn toggles(&self) -> &TokenToggles {
        &self.layout.toggles
    }

    pub fn stop_id(&self) -> u32 {
        self.vocab.special_id(self.layout.toggles.stop_token())
    }

    /// Input for `pass` at turn `t` of `record`, limited to `max_len` tokens.
    pub fn input_within(&self, pass: PassKind, record: &DialogueRecord, t: usize, conditioning: &DialogueState, max_len: usize) -> Result<(TaggedSequence, Vec<String>)> {
        let history: Vec<_> = record.turns[..t].iter().map(|r| r.turn.clone()).collect();
        let layout = LayoutOptions {
            max_len,
            ..self.layout.clone()
        };
        build_pass_input(pass, &record.turns[t].turn, conditioning, self.schema, &layout, &history, self.vocab)
    }

    pub fn input(&self, pass: PassKind, record: &DialogueRecord, t: usize, conditioning: &DialogueState) -> Result<(TaggedSequence, Vec<String>)> {
        self.input_within(pass, record, t, conditioning, self.layout.max_len)
    }

    /// Input followed by the gold target, sized to fit the model.
    pub fn training_sequence(&self, pass: PassKind, record: &DialogueRecord, t: usize, conditioning: &DialogueState) -> Result<TaggedSequence> {
        let gold = &record.turns[t].state;
        let target_len = serialize_state(gold, self.schema, self.toggles()).len() + 1;
        if target_len >= self.max_positions {
            return Err(Error::Contract(format!(
                "gold state of {} turn {t} needs {target_len} tokens",
                record.id
            )));
        }
        let (input, _) = self.input_within(pass, record, t, conditioning, self.max_positions - target_len)?;
        append_target(&input, gold, self.schema, self.toggles(), self.vocab)
    }
}

/// Basic and (when enabled) amending training sequences for one turn.
pub fn pass_sequences(
    ctx: &PassContext,
    sampler: &dyn PrimitiveSampler,
    amending: bool,
    record: &DialogueRecord,
    t: usize,
    rng: &mut dyn RngCore,
) -> Result<(TaggedSequence, Option<TaggedSequence>)> {
    let prev = record.previous_state(t, ctx.schema);
    let basic = ctx.training_sequence(PassKind::Basic, record, t, &prev)?;
    let amend = if amending {
        let primitive = sampler.sample(&prev, &record.turns[t].state, ctx.schema, rng)?;
        Some(ctx.training_sequence(PassKind::Amending, record, t, &primitive)?)
    } else {
        None
    };
    Ok((basic, amend))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub basic: f64,
    pub amending: Option<f64>,
}

impl StepLosses {
    pub fn total(&self) -> f64 {
        self.basic + self.amending.unwrap_or(0.0)
    }
}

/// Losses and summed gradient of both passes for one turn.
pub fn turn_objective(
    model: &Transformer<f32>,
    ctx: &PassContext,
    sampler: &dyn PrimitiveSampler,
    amending: bool,
    record: &DialogueRecord,
    t: usize,
    rng: &mut dyn RngCore,
    dropout_rng: &mut dyn RngCore,
) -> Result<(StepLosses, Parameters<f32>)> {
    let (basic, amend) = pass_sequences(ctx, sampler, amending, record, t, rng)?;
    let (lb, mut grads) = model.loss_and_grad(&basic, Some(&mut *dropout_rng))?;
    let la = match amend {
        Some(seq) => {
            let (la, ga) = model.loss_and_grad(&seq, Some(&mut *dropout_rng))?;
            grads.add_assign(&ga);
            Some(f64::from(la))
        }
        None => None,
    };
    Ok((
        StepLosses {
            basic: f64::from(lb),
            amending: la,
        },
        grads,
    ))
}

/// Randomness consumed by training: primitive sampling and dropout.
pub struct TrainRngs {
    pub sampling: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl TrainRngs {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            sampling: ChaCha8Rng::seed_from_u64(config.corruption.rng_seed),
            dropout: ChaCha8Rng::seed_from_u64(derive_seed(config.training.seed, "dropout")),
        }
    }
}

/// One optimizer step on the mean over `batch` of basic plus amending loss.
pub fn train_step(
    model: &mut Transformer<f32>,
    opt: &mut OptimizerState<f32>,
    ctx: &PassContext,
    sampler: &dyn PrimitiveSampler,
    amending: bool,
    batch: &[(&DialogueRecord, usize)],
    rngs: &mut TrainRngs,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Contract("train_step needs a nonempty batch".into()));
    }
    let mut sum: Option<Parameters<f32>> = None;
    let (mut basic, mut amend) = (0.0, 0.0);
    for &(record, t) in batch {
        let (losses, grads) = turn_objective(model, ctx, sampler, amending, record, t, &mut rngs.sampling, &mut rngs.dropout)?;
        if !losses.total().is_finite() {
            return Err(Error::numeric(format!("training loss on {} turn {t}", record.id)));
        }
        basic += losses.basic;
        amend += losses.amending.unwrap_or(0.0);
        match &mut sum {
            Some(s) => s.add_assign(&grads),
            None => sum = Some(grads),
        }
    }
    let mut grads = sum.expect("batch is nonempty");
    let n = batch.len() as f64;
    grads.scale(1.0 / n as f32);
    opt.step(model.params_mut(), &grads)?;
    Ok(StepLosses {
        basic: basic / n,
        amending: amending.then_some(amend / n),
    })
}

/// Anything that can greedily continue a prefix and expose its attention.
pub trait StateGenerator {
    /// Generated ids, ending with `stop` unless the budget ran out.
    fn generate(&self, prefix: &TaggedSequence, stop: u32, max_new: usize) -> Result<Vec<u32>>;

    fn attention(&self, seq: &TaggedSequence) -> Result<AttentionMaps<f32>>;
}

impl StateGenerator for Transformer<f32> {
    fn generate(&self, prefix: &TaggedSequence, stop: u32, max_new: usize) -> Result<Vec<u32>> {
        greedy_decode(&mut KvSession::new(self), prefix, stop, max_new)
    }

    fn attention(&self, seq: &TaggedSequence) -> Result<AttentionMaps<f32>> {
        self.forward(seq, Mode::Eval, None, true)?
            .attention
            .ok_or_else(|| Error::Contract("forward pass returned no attention".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrackMode {
    /// Each turn conditions on the previous turn's final prediction.
    Predicted,
    /// Each turn conditions on the gold previous state (diagnostics only).
    GoldConditioning,
    /// The basic pass is skipped; its output is replaced by a corrupted gold
    /// state and only the amending pass runs.
    OracleCorruption { policy: CorruptionPolicy, pool: ValuePool, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerOutput {
    pub primitive: DialogueState,
    /// Present exactly when amending is enabled.
    pub amended: Option<DialogueState>,
    pub basic_warnings: Vec<String>,
    pub amending_warnings: Vec<String>,
    pub corrupted: Option<Vec<usize>>,
    pub attention: Option<TurnAttention>,
}

impl TrackerOutput {
    pub fn final_state(&self) -> &DialogueState {
        self.amended.as_ref().unwrap_or(&self.primitive)
    }
}

struct PassResult {
    state: DialogueState,
    warnings: Vec<String>,
    attention: Option<PassAttention>,
}

fn run_pass(
    gen: &dyn StateGenerator,
    ctx: &PassContext,
    pass: PassKind,
    record: &DialogueRecord,
    t: usize,
    conditioning: &DialogueState,
    fallback: &DialogueState,
    capture: bool,
) -> Result<PassResult> {
    let (prefix, mut warnings) = ctx.input(pass, record, t, conditioning)?;
    let stop = ctx.stop_id();
    let budget = ctx.decode_budget.min(ctx.max_positions - prefix.len());
    let generated = gen.generate(&prefix, stop, budget)?;
    if generated.last() != Some(&stop) {
        warnings.push("generation ended before the stop token".into());
    }
    let tokens = ctx.vocab.decode(&generated)?;
    let (state, parse_warnings) = parse_state(&tokens, ctx.schema, fallback);
    warnings.extend(parse_warnings);
    let attention = if capture {
        let mut full = prefix.clone();
        for &id in &generated {
            full.push(id, Role::State, Segment::State, false);
        }
        let names = ctx.vocab.decode(full.token_ids())?;
        let label = match pass {
            PassKind::Basic => "basic",
            PassKind::Amending => "amending",
        };
        Some(PassAttention::from_maps(label, names, &gen.attention(&full)?)?)
    } else {
        None
    };
    Ok(PassResult {
        state,
        warnings,
        attention,
    })
}

/// Tracks one dialogue turn by turn.
pub fn track_dialogue(
    gen: &dyn StateGenerator,
    ctx: &PassContext,
    amending: bool,
    record: &DialogueRecord,
    mode: &TrackMode,
    capture_attention: bool,
) -> Result<Vec<TrackerOutput>> {
    let schema = ctx.schema;
    let mut oracle_rng = match mode {
        TrackMode::OracleCorruption { seed, .. } => Some(ChaCha8Rng::seed_from_u64(derive_seed(*seed, &record.id))),
        _ => None,
    };
    let mut outputs: Vec<TrackerOutput> = Vec::with_capacity(record.turns.len());
    for t in 0..record.turns.len() {
        let previous_final = outputs.last().map_or_else(|| schema.empty_state(), |o| o.final_state().clone());
        let mut passes = Vec::new();
        let (primitive, basic_warnings, corrupted) = match mode {
            TrackMode::OracleCorruption { policy, pool, .. } => {
                let gold = &record.turns[t].state;
                let rng = oracle_rng.as_mut().expect("seeded for oracle corruption");
                let primitive = corrupt(&record.previous_state(t, schema), gold, schema, policy, pool, rng)?;
                let slots = (0..schema.len()).filter(|&s| primitive.get(s) != gold.get(s)).collect();
                (primitive, Vec::new(), Some(slots))
            }
            _ => {
                let conditioning = match mode {
                    TrackMode::GoldConditioning => record.previous_state(t, schema),
                    _ => previous_final.clone(),
                };
                let r = run_pass(gen, ctx, PassKind::Basic, record, t, &conditioning, &previous_final, capture_attention)?;
                passes.extend(r.attention);
                (r.state, r.warnings, None)
            }
        };
        let (amended, amending_warnings) = if amending {
            let r = run_pass(gen, ctx, PassKind::Amending, record, t, &primitive, &previous_final, capture_attention)?;
            passes.extend(r.attention);
            (Some(r.state), r.warnings)
        } else {
            (None, Vec::new())
        };
        outputs.push(TrackerOutput {
            primitive,
            amended,
            basic_warnings,
            amending_warnings,
            corrupted,
            attention: capture_attention.then_some(TurnAttention { turn: t, passes }),
        });
    }
    Ok(outputs)
}

/// Tracks every dialogue and pairs the outputs with the gold states.
pub fn track_corpus(gen: &dyn StateGenerator, ctx: &PassContext, amending: bool, records: &[DialogueRecord], mode: &TrackMode) -> Result<PredictionRun> {
    let mut dialogues = Vec::with_capacity(records.len());
    for record in records {
        let outputs = track_dialogue(gen, ctx, amending, record, mode, false)?;
        let turns = outputs
            .into_iter()
            .zip(&record.turns)
            .map(|(o, gold)| {
                let mut warnings: Vec<String> = o.basic_warnings.iter().map(|w| format!("basic: {w}")).collect();
                warnings.extend(o.amending_warnings.iter().map(|w| format!("amending: {w}")));
                TurnPrediction {
                    gold: gold.state.clone(),
                    final_state: o.final_state().clone(),
                    primitive: o.primitive,
                    warnings,
                    corrupted: o.corrupted,
                }
            })
            .collect();
        dialogues.push(DialoguePrediction {
            id: record.id.clone(),
            turns,
        });
    }
    Ok(PredictionRun {
        schema: ctx.schema.clone(),
        dialogues,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub loss_basic: f64,
    pub loss_amending: Option<f64>,
    pub loss_total: f64,
    pub valid_jga: f64,
    pub lr: f64,
    pub improved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochCap,
    Patience,
}

/// Receives training progress; the best checkpoint is offered as soon as it exists.
pub trait TrainObserver {
    fn on_epoch(&mut self, _log: &EpochLog) -> Result<()> {
        Ok(())
    }

    fn on_best(&mut self, _checkpoint: &ModelCheckpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_jga: f64,
    pub stop_reason: StopReason,
}

/// Model configuration with the vocabulary-dependent sizes filled in.
pub fn resolved_model_config(config: &RunConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        role_count: Role::COUNT,
        segment_count: Segment::COUNT,
        ..config.model.clone()
    }
}

/// Splits `items` in order into runs whose summed size stays within `limit`;
/// an item larger than `limit` forms a run on its own.
pub fn pack_by_tokens<T>(items: &[T], size: impl Fn(&T) -> usize, limit: usize) -> Vec<&[T]> {
    let mut out = Vec::new();
    let (mut start, mut used) = (0, 0);
    for (i, item) in items.iter().enumerate() {
        let n = size(item);
        if i > start && used + n > limit {
            out.push(&items[start..i]);
            start = i;
            used = 0;
        }
        used += n;
    }
    if start < items.len() {
        out.push(&items[start..]);
    }
    out
}

/// Trains from scratch and keeps the parameters with the best validation JGA.
pub fn train(
    train_set: &[DialogueRecord],
    valid_set: &[DialogueRecord],
    schema: &Schema,
    vocab: &Vocabulary,
    config: &RunConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate(schema)?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::structural("training needs nonempty train and valid splits"));
    }
    for r in train_set.iter().chain(valid_set) {
        r.validate(schema)?;
    }
    let ctx = PassContext::new(schema, vocab, config)?;
    let pool = ValuePool::for_policy(&config.corruption, schema, train_set.iter().flat_map(|r| r.turns.iter().map(|t| &t.state)));
    let sampler = config.sampler(schema, pool)?;
    let model_config = resolved_model_config(config, vocab);
    let mut model = Transformer::<f32>::init(&model_config)?;

    let tc = &config.training;
    let mut examples: Vec<(usize, usize)> = train_set
        .iter()
        .enumerate()
        .flat_map(|(d, r)| (0..r.turns.len()).map(move |t| (d, t)))
        .collect();
    let passes = if config.amending { 2 } else { 1 };
    let mut tokens = Vec::with_capacity(train_set.len());
    for r in train_set {
        let mut lens = Vec::with_capacity(r.turns.len());
        for t in 0..r.turns.len() {
            let prev = r.previous_state(t, schema);
            lens.push(passes * ctx.training_sequence(PassKind::Basic, r, t, &prev)?.len());
        }
        tokens.push(lens);
    }
    let steps_per_epoch = match tc.batch_tokens {
        Some(limit) => tokens.iter().flatten().sum::<usize>().div_ceil(limit),
        None => examples.len().div_ceil(tc.batch_size),
    } as u64;
    let schedule = Schedule {
        steps_per_epoch,
        ..tc.schedule.clone()
    };
    let mut opt = OptimizerState::new(model.params(), schedule, tc.adam.clone());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, "shuffle"));
    let mut rngs = TrainRngs::new(config);

    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ModelCheckpoint)> = None;
    let mut stale = 0;
    let mut stop_reason = StopReason::EpochCap;
    for epoch in 1..=tc.epochs {
        examples.shuffle(&mut shuffle_rng);
        let (mut basic, mut amend, mut batches) = (0.0, 0.0, 0usize);
        let chunks: Vec<&[(usize, usize)]> = match tc.batch_tokens {
            Some(limit) => pack_by_tokens(&examples, |&(d, t)| tokens[d][t], limit),
            None => examples.chunks(tc.batch_size).collect(),
        };
        for chunk in chunks {
            let batch: Vec<(&DialogueRecord, usize)> = chunk.iter().map(|&(d, t)| (&train_set[d], t)).collect();
            let losses = train_step(&mut model, &mut opt, &ctx, sampler.as_ref(), config.amending, &batch, &mut rngs)?;
            basic += losses.basic;
            amend += losses.amending.unwrap_or(0.0);
            batches += 1;
        }
        let run = track_corpus(&model, &ctx, config.amending, valid_set, &TrackMode::Predicted)?;
        let valid_jga = joint_goal_accuracy(&run)?;
        let improved = best.as_ref().is_none_or(|b| valid_jga > b.1);
        let loss_basic = basic / batches as f64;
        let loss_amending = config.amending.then_some(amend / batches as f64);
        let entry = EpochLog {
            epoch,
            steps: opt.step,
            loss_basic,
            loss_amending,
            loss_total: loss_basic + loss_amending.unwrap_or(0.0),
            valid_jga,
            lr: opt.current_lr(),
            improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (basic {:.4}) valid JGA {:.4}",
            entry.loss_total,
            entry.loss_basic,
            valid_jga
        );
        observer.on_epoch(&entry)?;
        log.push(entry);
        if improved {
            let ckpt = ModelCheckpoint {
                config: model_config.clone(),
                params: model.params().clone(),
                optimizer: Some(opt.clone()),
                vocab_hash: vocab.hash(),
            };
            observer.on_best(&ckpt)?;
            best = Some((epoch, valid_jga, ckpt));
            stale = 0;
        } else {
            stale += 1;
            if stale > tc.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let (best_epoch, best_valid_jga, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
        best_valid_jga,
        stop_reason,
    })
}
