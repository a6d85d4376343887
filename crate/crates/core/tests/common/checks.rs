//! Randomized suites shared by the property tests and the acceptance run.
//! Each returns the number of cases checked or a description of the first failure.

use std::collections::BTreeMap;

use agdst::corpus::DialogueRecord;
use agdst::eval::{joint_goal_accuracy, repair_rate, slot_accuracy, update_gate_metrics, PredictionRun};
use agdst::linearize::{parse_state, serialize_state, Role, Segment, TaggedSequence, TokenToggles};
use agdst::neural::{EmbeddingMode, Mode, ModelConfig, Parameters, Transformer};
use agdst::state::{apply_delta, classify_operations, diff_states, DialogueState, Schema, SlotValue, StateOperation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{perturb, random_run, random_schema, random_state, random_word};

pub const ROLES: [Role; 4] = [Role::System, Role::User, Role::State, Role::Marker];
pub const SEGMENTS: [Segment; 2] = [Segment::Context, Segment::State];

pub fn state_algebra(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schema = random_schema(&mut rng);
    for case in 0..cases {
        if case % 100 == 0 {
            schema = random_schema(&mut rng);
        }
        let prev = random_state(&mut rng, &schema);
        let curr = if rng.gen_bool(0.5) {
            perturb(&mut rng, &prev, 0.3)
        } else {
            random_state(&mut rng, &schema)
        };
        check_pair(&prev, &curr).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(cases)
}

pub fn check_pair(prev: &DialogueState, curr: &DialogueState) -> Result<(), String> {
    let delta = diff_states(prev, curr).map_err(|e| e.to_string())?;
    if apply_delta(prev, &delta).map_err(|e| e.to_string())? != *curr {
        return Err("apply(prev, diff(prev, curr)) != curr".into());
    }
    if !diff_states(curr, curr).map_err(|e| e.to_string())?.is_empty() {
        return Err("diff of a state with itself is not empty".into());
    }
    let ops = classify_operations(prev, curr).map_err(|e| e.to_string())?;
    if ops.len() != prev.len() {
        return Err("operations do not cover every slot".into());
    }
    for (i, op) in ops.iter().enumerate() {
        let (p, c) = (prev.get(i), curr.get(i));
        if delta.contains(i) != (p != c) {
            return Err(format!("slot {i}: delta membership disagrees with value change"));
        }
        if let Some(v) = delta.get(i) {
            if v != c {
                return Err(format!("slot {i}: delta value is not the current value"));
            }
        }
        let expected = match c {
            _ if p == c => StateOperation::Carryover,
            SlotValue::NotMentioned => StateOperation::Delete,
            SlotValue::DontCare => StateOperation::Dontcare,
            SlotValue::Literal(_) => StateOperation::Update,
        };
        if *op != expected {
            return Err(format!("slot {i}: {op:?} but expected {expected:?}"));
        }
    }
    Ok(())
}

pub fn serialization_round_trips(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schema = random_schema(&mut rng);
    for case in 0..cases {
        if case % 100 == 0 {
            schema = random_schema(&mut rng);
        }
        let state = random_state(&mut rng, &schema);
        let toggles = TokenToggles {
            no_state: rng.gen_bool(0.3),
            ..TokenToggles::default()
        };
        let tokens = serialize_state(&state, &schema, &toggles);
        let fallback = random_state(&mut rng, &schema);
        let (parsed, warnings) = parse_state(&tokens, &schema, &fallback);
        if parsed != state || !warnings.is_empty() {
            return Err(format!("case {case}: {tokens:?} parsed to {:?} with {warnings:?}", schema.state_to_map(&parsed)));
        }
    }
    Ok(cases)
}

#[derive(Clone, Copy, Debug)]
enum Damage {
    Truncate,
    DropSlot,
    DuplicateSlot,
    EmptyValue,
    MarkupInValue,
    Empty,
}

const DAMAGE: [Damage; 6] = [
    Damage::Truncate,
    Damage::DropSlot,
    Damage::DuplicateSlot,
    Damage::EmptyValue,
    Damage::MarkupInValue,
    Damage::Empty,
];

/// Token ranges `[start, end)` of each slot's token plus value in a serialization.
fn slot_segments(tokens: &[String], schema: &Schema) -> Vec<(usize, usize)> {
    let starts: Vec<usize> = (0..schema.len())
        .map(|i| tokens.iter().position(|t| *t == schema.slot(i).token()).expect("slot serialized"))
        .collect();
    let end = tokens.iter().position(|t| t == "</ds>").unwrap_or(tokens.len());
    (0..schema.len())
        .map(|i| (starts[i], starts.get(i + 1).copied().unwrap_or(end)))
        .collect()
}

/// Damaged serializations: each parse must stay total and follow the
/// documented fallback for its kind of damage.
pub fn malformed_sequences(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let schema = random_schema(&mut rng);
        let state = random_state(&mut rng, &schema);
        let fallback = random_state(&mut rng, &schema);
        let mut tokens = serialize_state(&state, &schema, &TokenToggles::default());
        let segments = slot_segments(&tokens, &schema);
        let damage = DAMAGE[case % DAMAGE.len()];
        let slot = rng.gen_range(0..schema.len());
        let (seg_start, seg_end) = segments[slot];
        let mut expected = state.clone();
        let must_warn = match damage {
            Damage::Truncate => {
                tokens.truncate(seg_start);
                for s in slot..schema.len() {
                    expected.set(s, fallback.get(s).clone());
                }
                "missing"
            }
            Damage::DropSlot => {
                tokens.drain(seg_start..seg_end);
                expected.set(slot, fallback.get(slot).clone());
                "missing"
            }
            Damage::DuplicateSlot => {
                let extra = vec![schema.slot(slot).token(), random_word(&mut rng)];
                expected.set(slot, SlotValue::literal(&extra[1]));
                let at = tokens.len() - 1;
                tokens.splice(at..at, extra);
                "more than once"
            }
            Damage::EmptyValue => {
                tokens.drain(seg_start + 1..seg_end);
                expected.set(slot, SlotValue::NotMentioned);
                "empty value"
            }
            Damage::MarkupInValue => {
                tokens.insert(seg_start + 1, "<gen/>".into());
                "markup"
            }
            Damage::Empty => {
                tokens.clear();
                expected = fallback.clone();
                "missing"
            }
        };
        let (parsed, warnings) = parse_state(&tokens, &schema, &fallback);
        if parsed.check_schema(&schema).is_err() || parsed.len() != schema.len() {
            return Err(format!("case {case} ({damage:?}): parse is not total"));
        }
        if parsed != expected {
            return Err(format!(
                "case {case} ({damage:?}): {tokens:?} parsed to {:?}, expected {:?}",
                schema.state_to_map(&parsed),
                schema.state_to_map(&expected)
            ));
        }
        if !warnings.iter().any(|x| x.contains(must_warn)) {
            return Err(format!("case {case} ({damage:?}): no '{must_warn}' warning in {warnings:?}"));
        }
    }
    Ok(cases)
}

/// Exact fraction of two counts, as a reference for the metric functions.
fn ratio(num: usize, den: usize) -> f64 {
    num as f64 / den as f64
}

fn as_map(schema: &Schema, s: &DialogueState) -> BTreeMap<String, String> {
    schema.state_to_map(s)
}

/// Recounts every metric from string maps and compares for exact equality.
pub fn metric_oracles(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (run, gold) = random_run(&mut rng);
        check_metrics(&run, &gold).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(cases)
}

pub fn check_metrics(run: &PredictionRun, gold: &[DialogueRecord]) -> Result<(), String> {
    let schema = &run.schema;
    let (mut turns, mut exact, mut slot_hits) = (0usize, 0usize, 0usize);
    let mut domain_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let (mut agree, mut decisions, mut tp, mut g_n, mut p_n) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let (mut corrupted, mut repaired, mut has_records) = (0usize, 0usize, false);
    for (d, record) in run.dialogues.iter().zip(gold) {
        let mut prev: BTreeMap<String, String> = as_map(schema, &schema.empty_state());
        for (t, turn) in d.turns.iter().enumerate() {
            let g = as_map(schema, &record.turns[t].state);
            let f = as_map(schema, &turn.final_state);
            turns += 1;
            exact += usize::from(g == f);
            for (k, gv) in &g {
                let hit = f[k] == *gv;
                slot_hits += usize::from(hit);
                let e = domain_hits.entry(k.split('-').next().unwrap().to_string()).or_default();
                e.0 += usize::from(hit);
                e.1 += 1;
            }
            let literal = |v: &str| v != "<nm>" && v != "<dc>";
            let gold_updates: BTreeMap<&String, &String> =
                g.iter().filter(|(k, v)| prev[*k] != **v && literal(v)).collect();
            let pred_updates: BTreeMap<&String, &String> =
                f.iter().filter(|(k, v)| prev[*k] != **v && literal(v)).collect();
            for k in g.keys() {
                decisions += 1;
                agree += usize::from(gold_updates.contains_key(k) == pred_updates.contains_key(k));
            }
            tp += gold_updates.iter().filter(|(k, v)| pred_updates.get(*k) == Some(v)).count();
            g_n += gold_updates.len();
            p_n += pred_updates.len();
            if let Some(slots) = &turn.corrupted {
                has_records = true;
                for &s in slots {
                    corrupted += 1;
                    let name = schema.slot(s).to_string();
                    repaired += usize::from(f[&name] == g[&name]);
                }
            }
            prev = g;
        }
    }
    let jga = joint_goal_accuracy(run).map_err(|e| e.to_string())?;
    let sa = slot_accuracy(run, None).map_err(|e| e.to_string())?;
    if jga != ratio(exact, turns) {
        return Err(format!("JGA {jga} vs recount {}", ratio(exact, turns)));
    }
    if sa != ratio(slot_hits, turns * schema.len()) {
        return Err(format!("slot accuracy {sa} vs recount"));
    }
    if jga > sa {
        return Err(format!("JGA {jga} exceeds slot accuracy {sa}"));
    }
    for (domain, (hits, total)) in &domain_hits {
        let v = slot_accuracy(run, Some(domain)).map_err(|e| e.to_string())?;
        if v != ratio(*hits, *total) {
            return Err(format!("{domain} slot accuracy {v} vs recount"));
        }
    }
    let gate = update_gate_metrics(run, gold).map_err(|e| e.to_string())?;
    if gate.accuracy != ratio(agree, decisions) {
        return Err(format!("gate accuracy {} vs recount {}", gate.accuracy, ratio(agree, decisions)));
    }
    // Harmonic mean of precision tp/p_n and recall tp/g_n, reduced to one fraction.
    let f1 = if g_n + p_n == 0 {
        1.0
    } else if tp == 0 {
        0.0
    } else {
        ratio(2 * tp, g_n + p_n)
    };
    if gate.value_f1 != f1 {
        return Err(format!("value F1 {} vs recount {f1}", gate.value_f1));
    }
    match (repair_rate(run), has_records && corrupted > 0) {
        (Ok(r), true) if r == ratio(repaired, corrupted) => {}
        (Err(_), false) => {}
        (got, _) => return Err(format!("repair rate {got:?} vs recount {repaired}/{corrupted}")),
    }
    Ok(())
}

pub fn tiny_config(mode: EmbeddingMode) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 8,
        ffn_multiplier: 2.0,
        vocab_size: 11,
        max_positions: 12,
        embedding_mode: mode,
        seed: 7,
        ..ModelConfig::default()
    }
}

pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize, vocab: usize, targets: bool) -> TaggedSequence {
    let mut seq = TaggedSequence::new();
    for i in 0..len {
        let target = targets && (i + 1 == len || (i > 0 && rng.gen_bool(0.6)));
        let segment = if target { Segment::State } else { SEGMENTS[rng.gen_range(0..2)] };
        seq.push(rng.gen_range(0..vocab as u32), ROLES[rng.gen_range(0..4)], segment, target);
    }
    seq
}

/// Replaces every parameter with a draw from U(-0.5, 0.5), gains around one.
pub fn scramble(params: &mut Parameters<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        let gain = t.name.ends_with(".gain");
        for x in &mut t.data {
            *x = rng.gen_range(-0.5..0.5) + if gain { 1.0 } else { 0.0 };
        }
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter of a tiny 64-bit model.
pub fn gradient_check(mode: EmbeddingMode, seed: u64) -> (f64, usize) {
    let cfg = tiny_config(mode);
    let mut model = Transformer::<f64>::init(&cfg).unwrap();
    scramble(model.params_mut(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let seq = random_sequence(&mut rng, 10, cfg.vocab_size, true);
    let (_, grads) = model.loss_and_grad(&seq, None).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for ti in 0..model.params().tensors().len() {
        for k in 0..model.params().get(ti).len() {
            let orig = model.params().get(ti)[k];
            model.params_mut().get_mut(ti)[k] = orig + h;
            let plus = model.loss(&seq).unwrap();
            model.params_mut().get_mut(ti)[k] = orig - h;
            let minus = model.loss(&seq).unwrap();
            model.params_mut().get_mut(ti)[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(ti)[k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    (worst, model.params().count())
}

/// Sequences checked; fails on the first position whose logits move when
/// only later tokens change.
pub fn causality(sequences: usize, seed: u64) -> Result<usize, String> {
    let cfg = tiny_config(EmbeddingMode::TokenPositionRoleSegment);
    let mut model = Transformer::<f64>::init(&cfg).unwrap();
    scramble(model.params_mut(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = cfg.vocab_size;
    for n in 0..sequences {
        let len = rng.gen_range(2..=cfg.max_positions);
        let seq = random_sequence(&mut rng, len, v, false);
        let base = model.forward(&seq, Mode::Eval, None, false).unwrap().logits;
        for cut in 1..len {
            let mut changed = seq.clone();
            for i in cut..len {
                changed.set_token(i, rng.gen_range(0..v as u32));
                changed.set_role(i, ROLES[rng.gen_range(0..4)]);
                changed.set_segment(i, SEGMENTS[rng.gen_range(0..2)]);
            }
            let other = model.forward(&changed, Mode::Eval, None, false).unwrap().logits;
            if base[..cut * v] != other[..cut * v] {
                return Err(format!("sequence {n}: positions before {cut} changed"));
            }
        }
    }
    Ok(sequences)
}

/// Largest |NLL − ln V| of an all-zero model over several vocabulary sizes.
pub fn zero_model_nll_error() -> f64 {
    let mut worst = 0.0f64;
    for vocab_size in [2usize, 11, 97] {
        let cfg = ModelConfig {
            vocab_size,
            ..tiny_config(EmbeddingMode::TokenPositionRoleSegment)
        };
        let model = Transformer::<f64>::zeros(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(vocab_size as u64);
        let seq = random_sequence(&mut rng, 9, vocab_size, true);
        worst = worst.max((model.loss(&seq).unwrap() - (vocab_size as f64).ln()).abs());
    }
    worst
}
