//! Scoring of tracked dialogues: joint goal and slot accuracy, update-gate
//! metrics, error categories, repair rate and attention export.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::DialogueRecord;
use crate::error::{Error, Result};
use crate::state::{DialogueState, Schema, SlotValue, StateOperation};

/// Default edit-distance ratio below which a wrong literal counts as a near miss.
pub const NEAR_MISS_THRESHOLD: f64 = 0.34;

#[derive(Clone, Debug, PartialEq)]
pub struct TurnPrediction {
    pub gold: DialogueState,
    pub primitive: DialogueState,
    pub final_state: DialogueState,
    pub warnings: Vec<String>,
    /// Slots whose primitive was corrupted on purpose, when evaluated that way.
    pub corrupted: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DialoguePrediction {
    pub id: String,
    pub turns: Vec<TurnPrediction>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRun {
    pub schema: Schema,
    pub dialogues: Vec<DialoguePrediction>,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    dialogue_id: String,
    turn: usize,
    gold: BTreeMap<String, String>,
    primitive: BTreeMap<String, String>,
    #[serde(rename = "final")]
    final_state: BTreeMap<String, String>,
    warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corrupted: Option<Vec<String>>,
}

impl PredictionRun {
    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn turns(&self) -> impl Iterator<Item = &TurnPrediction> {
        self.dialogues.iter().flat_map(|d| &d.turns)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.turn_count() == 0 {
            return Err(Error::structural("prediction run has no turns"));
        }
        for t in self.turns() {
            t.gold.check_schema(&self.schema)?;
            t.primitive.check_schema(&self.schema)?;
            t.final_state.check_schema(&self.schema)?;
        }
        Ok(())
    }

    /// Errors unless dialogue ids, turn counts and gold states match `records`.
    pub fn check_against(&self, records: &[DialogueRecord]) -> Result<()> {
        if records.len() != self.dialogues.len() {
            return Err(Error::structural(format!(
                "run has {} dialogues, gold corpus has {}",
                self.dialogues.len(),
                records.len()
            )));
        }
        for (d, r) in self.dialogues.iter().zip(records) {
            if d.id != r.id || d.turns.len() != r.turns.len() {
                return Err(Error::structural(format!(
                    "dialogue {} ({} turns) does not align with gold {} ({} turns)",
                    d.id,
                    d.turns.len(),
                    r.id,
                    r.turns.len()
                )));
            }
            if d.turns.iter().zip(&r.turns).any(|(p, g)| p.gold != g.state) {
                return Err(Error::structural(format!("gold states of dialogue {} differ from the corpus", d.id)));
            }
        }
        Ok(())
    }

    /// One JSON object per turn, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let schema = &self.schema;
        let mut out = String::new();
        for d in &self.dialogues {
            for (i, t) in d.turns.iter().enumerate() {
                let line = PredictionLine {
                    dialogue_id: d.id.clone(),
                    turn: i,
                    gold: schema.state_to_map(&t.gold),
                    primitive: schema.state_to_map(&t.primitive),
                    final_state: schema.state_to_map(&t.final_state),
                    warnings: t.warnings.clone(),
                    corrupted: t
                        .corrupted
                        .as_ref()
                        .map(|c| c.iter().map(|&s| schema.slot(s).to_string()).collect()),
                };
                out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_jsonl(text: &str, schema: &Schema) -> Result<Self> {
        let mut dialogues: Vec<DialoguePrediction> = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |m: String| Error::structural(format!("predictions line {}: {m}", n + 1));
            let p: PredictionLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let state = |m: &BTreeMap<String, String>| schema.state_from_map(m).map_err(|e| bad(e.to_string()));
            let corrupted = match &p.corrupted {
                None => None,
                Some(names) => Some(
                    names
                        .iter()
                        .map(|s| schema.require(&s.parse()?))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| bad(e.to_string()))?,
                ),
            };
            let turn = TurnPrediction {
                gold: state(&p.gold)?,
                primitive: state(&p.primitive)?,
                final_state: state(&p.final_state)?,
                warnings: p.warnings,
                corrupted,
            };
            match dialogues.last_mut() {
                Some(d) if d.id == p.dialogue_id => {
                    if p.turn != d.turns.len() {
                        return Err(bad(format!("turn {} out of order", p.turn)));
                    }
                    d.turns.push(turn);
                }
                _ => {
                    if p.turn != 0 {
                        return Err(bad(format!("dialogue {} starts at turn {}", p.dialogue_id, p.turn)));
                    }
                    dialogues.push(DialoguePrediction {
                        id: p.dialogue_id,
                        turns: vec![turn],
                    });
                }
            }
        }
        Ok(Self {
            schema: schema.clone(),
            dialogues,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, schema: &Schema) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, schema)
    }
}

/// Fraction of turns whose final state equals gold on every slot.
pub fn joint_goal_accuracy(run: &PredictionRun) -> Result<f64> {
    run.check_nonempty()?;
    let correct = run.turns().filter(|t| t.final_state == t.gold).count();
    Ok(correct as f64 / run.turn_count() as f64)
}

fn domain_slots(schema: &Schema, domain: Option<&str>) -> Result<Vec<usize>> {
    match domain {
        None => Ok((0..schema.len()).collect()),
        Some(d) => {
            if !schema.domains().contains(&d) {
                return Err(Error::structural(format!("unknown domain '{d}'")));
            }
            Ok((0..schema.len()).filter(|&i| schema.slot(i).domain() == d).collect())
        }
    }
}

/// Fraction of (turn, slot) pairs with the correct final value.
pub fn slot_accuracy(run: &PredictionRun, domain: Option<&str>) -> Result<f64> {
    run.check_nonempty()?;
    let slots = domain_slots(&run.schema, domain)?;
    let correct: usize = run
        .turns()
        .map(|t| slots.iter().filter(|&&s| t.final_state.get(s) == t.gold.get(s)).count())
        .sum();
    Ok(correct as f64 / (run.turn_count() * slots.len()) as f64)
}

/// Joint goal accuracy restricted to one domain's slots.
pub fn domain_joint_accuracy(run: &PredictionRun, domain: &str) -> Result<f64> {
    run.check_nonempty()?;
    let slots = domain_slots(&run.schema, Some(domain))?;
    let correct = run
        .turns()
        .filter(|t| slots.iter().all(|&s| t.final_state.get(s) == t.gold.get(s)))
        .count();
    Ok(correct as f64 / run.turn_count() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub accuracy: f64,
    pub value_f1: f64,
    pub true_positives: usize,
    pub gold_updates: usize,
    pub predicted_updates: usize,
}

/// Update-gate accuracy and value F1, both sides measured against the gold
/// previous state. F1 is `2·TP / (|gold| + |predicted|)`, 1.0 when both are empty.
pub fn update_gate_metrics(run: &PredictionRun, gold: &[DialogueRecord]) -> Result<GateMetrics> {
    run.check_nonempty()?;
    run.check_against(gold)?;
    let schema = &run.schema;
    let (mut agree, mut decisions, mut tp, mut g_total, mut p_total) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (d, record) in run.dialogues.iter().zip(gold) {
        for (t, turn) in d.turns.iter().enumerate() {
            let prev = record.previous_state(t, schema);
            for s in 0..schema.len() {
                let g = StateOperation::between(prev.get(s), turn.gold.get(s)) == StateOperation::Update;
                let p = StateOperation::between(prev.get(s), turn.final_state.get(s)) == StateOperation::Update;
                decisions += 1;
                agree += usize::from(g == p);
                g_total += usize::from(g);
                p_total += usize::from(p);
                tp += usize::from(g && p && turn.gold.get(s) == turn.final_state.get(s));
            }
        }
    }
    let value_f1 = if g_total + p_total == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (g_total + p_total) as f64
    };
    Ok(GateMetrics {
        accuracy: agree as f64 / decisions as f64,
        value_f1,
        true_positives: tp,
        gold_updates: g_total,
        predicted_updates: p_total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorType {
    NotUpdated,
    CorrelatedConfusion,
    GenerationMistake,
    Other,
}

impl ErrorType {
    pub const ALL: [ErrorType; 4] = [
        ErrorType::NotUpdated,
        ErrorType::CorrelatedConfusion,
        ErrorType::GenerationMistake,
        ErrorType::Other,
    ];
}

/// Normalized Levenshtein distance in [0, 1].
pub fn edit_ratio(a: &str, b: &str) -> f64 {
    1.0 - strsim::normalized_levenshtein(a, b)
}

/// Category of one wrong slot value.
pub fn classify_slot_error(
    schema: &Schema,
    slot: usize,
    predicted: &DialogueState,
    gold: &DialogueState,
    gold_prev: &DialogueState,
    threshold: f64,
) -> ErrorType {
    let p = predicted.get(slot);
    let g = gold.get(slot);
    if p == gold_prev.get(slot) && gold_prev.get(slot) != g {
        return ErrorType::NotUpdated;
    }
    if schema.partners(slot).any(|o| gold.get(o).is_literal() && gold.get(o) == p) {
        return ErrorType::CorrelatedConfusion;
    }
    if let (SlotValue::Literal(pv), SlotValue::Literal(gv)) = (p, g) {
        if edit_ratio(pv, gv) <= threshold {
            return ErrorType::GenerationMistake;
        }
    }
    ErrorType::Other
}

fn empty_counts() -> BTreeMap<ErrorType, usize> {
    ErrorType::ALL.iter().map(|&e| (e, 0)).collect()
}

/// Error categories of every wrong (turn, slot) in the states chosen by `pick`.
pub fn classify_errors_with(
    run: &PredictionRun,
    gold: &[DialogueRecord],
    threshold: f64,
    pick: impl Fn(&TurnPrediction) -> &DialogueState,
) -> Result<BTreeMap<ErrorType, usize>> {
    run.check_against(gold)?;
    let schema = &run.schema;
    let mut counts = empty_counts();
    for (d, record) in run.dialogues.iter().zip(gold) {
        for (t, turn) in d.turns.iter().enumerate() {
            let prev = record.previous_state(t, schema);
            let predicted = pick(turn);
            for s in 0..schema.len() {
                if predicted.get(s) != turn.gold.get(s) {
                    *counts.entry(classify_slot_error(schema, s, predicted, &turn.gold, &prev, threshold)).or_default() += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Error categories of the final states.
pub fn classify_errors(run: &PredictionRun, gold: &[DialogueRecord], threshold: f64) -> Result<BTreeMap<ErrorType, usize>> {
    classify_errors_with(run, gold, threshold, |t| &t.final_state)
}

/// Share of deliberately corrupted primitive slots whose final value is gold.
pub fn repair_rate(run: &PredictionRun) -> Result<f64> {
    let mut any_record = false;
    let (mut corrupted, mut repaired) = (0usize, 0usize);
    for t in run.turns() {
        if let Some(slots) = &t.corrupted {
            any_record = true;
            corrupted += slots.len();
            repaired += slots.iter().filter(|&&s| t.final_state.get(s) == t.gold.get(s)).count();
        }
    }
    if !any_record {
        return Err(Error::structural("run carries no corruption records"));
    }
    if corrupted == 0 {
        return Err(Error::structural("run has no corrupted slots"));
    }
    Ok(repaired as f64 / corrupted as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScores {
    pub jga: f64,
    pub slot_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub turns: usize,
    pub jga: f64,
    pub slot_acc_overall: f64,
    pub per_domain: BTreeMap<String, DomainScores>,
    pub update_gate_acc: f64,
    pub update_value_f1: f64,
    pub repair_rate: Option<f64>,
    pub error_type_counts: BTreeMap<ErrorType, usize>,
    pub primitive_error_type_counts: BTreeMap<ErrorType, usize>,
    pub near_miss_threshold: f64,
    pub warning_count: usize,
}

impl MetricsReport {
    pub fn compute(run: &PredictionRun, gold: &[DialogueRecord], threshold: f64) -> Result<Self> {
        run.check_nonempty()?;
        run.check_against(gold)?;
        let mut per_domain = BTreeMap::new();
        for d in run.schema.domains() {
            per_domain.insert(
                d.to_string(),
                DomainScores {
                    jga: domain_joint_accuracy(run, d)?,
                    slot_acc: slot_accuracy(run, Some(d))?,
                },
            );
        }
        let gate = update_gate_metrics(run, gold)?;
        let has_corruption = run.turns().any(|t| t.corrupted.is_some());
        Ok(Self {
            turns: run.turn_count(),
            jga: joint_goal_accuracy(run)?,
            slot_acc_overall: slot_accuracy(run, None)?,
            per_domain,
            update_gate_acc: gate.accuracy,
            update_value_f1: gate.value_f1,
            repair_rate: if has_corruption { repair_rate(run).ok() } else { None },
            error_type_counts: classify_errors(run, gold, threshold)?,
            primitive_error_type_counts: classify_errors_with(run, gold, threshold, |t| &t.primitive)?,
            near_miss_threshold: threshold,
            warning_count: run.turns().map(|t| t.warnings.len()).sum(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Attention of one pass: `layers[layer][head][row][col]` over `tokens`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassAttention {
    pub pass: String,
    pub tokens: Vec<String>,
    pub layers: Vec<Vec<Vec<Vec<f32>>>>,
}

impl PassAttention {
    /// Converts flat row-major `n×n` maps into nested rows.
    pub fn from_maps(pass: &str, tokens: Vec<String>, maps: &[Vec<Vec<f32>>]) -> Result<Self> {
        let n = tokens.len();
        let layers = maps
            .iter()
            .map(|heads| {
                heads
                    .iter()
                    .map(|m| {
                        if m.len() != n * n {
                            return Err(Error::structural(format!("attention map has {} entries for {n} tokens", m.len())));
                        }
                        Ok(m.chunks(n.max(1)).map(<[f32]>::to_vec).collect())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pass: pass.to_string(),
            tokens,
            layers,
        })
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flatten()
            .map(|row| (row.iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnAttention {
    pub turn: usize,
    pub passes: Vec<PassAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub dialogue_id: String,
    pub turns: Vec<TurnAttention>,
}

impl AttentionDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("attention dump serializes")
    }
}

pub fn export_attention(dump: &AttentionDump, path: &Path) -> Result<()> {
    std::fs::write(path, dump.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::structural(format!("{}: {e}", path.display())))
}
