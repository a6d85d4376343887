#![allow(dead_code)]

use std::collections::BTreeMap;

pub mod checks;

use agdst::corpus::{DialogueRecord, TurnRecord};
use agdst::eval::{DialoguePrediction, PredictionRun, TurnPrediction};
use agdst::linearize::Turn;
use agdst::state::{DialogueState, Schema, SlotId, SlotValue};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const DOMAINS: [&str; 5] = ["hotel", "taxi", "train", "restaurant", "attraction"];
const SLOTS: [&str; 8] = ["area", "name", "day", "people", "departure", "destination", "leaveat", "food"];

pub fn random_word(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.1) {
        return format!("{:02}:{:02}", rng.gen_range(0..24), rng.gen_range(0..60));
    }
    let len = rng.gen_range(1..=8);
    (0..len)
        .map(|_| {
            let c = rng.gen_range(0..36u8);
            if c < 26 {
                (b'a' + c) as char
            } else {
                (b'0' + c - 26) as char
            }
        })
        .collect()
}

pub fn random_literal(rng: &mut ChaCha8Rng) -> SlotValue {
    let words: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| random_word(rng)).collect();
    SlotValue::literal(&words.join(" "))
}

pub fn random_value(rng: &mut ChaCha8Rng) -> SlotValue {
    match rng.gen_range(0..10) {
        0..=2 => SlotValue::NotMentioned,
        3 => SlotValue::DontCare,
        _ => random_literal(rng),
    }
}

/// 1-5 domains with 1-5 slots each, a small ontology and up to two correlated pairs.
pub fn random_schema(rng: &mut ChaCha8Rng) -> Schema {
    let mut slots = Vec::new();
    for d in DOMAINS.iter().take(rng.gen_range(1..=5)) {
        for s in SLOTS.iter().take(rng.gen_range(1..=5)) {
            slots.push(SlotId::new(d, s).unwrap());
        }
    }
    let ontology: BTreeMap<SlotId, Vec<String>> = slots
        .iter()
        .map(|s| (s.clone(), (0..4).map(|_| random_literal(rng).as_text().to_string()).collect()))
        .collect();
    let mut pairs = Vec::new();
    if slots.len() >= 2 {
        for _ in 0..rng.gen_range(0..=2) {
            let a = rng.gen_range(0..slots.len());
            let b = (a + rng.gen_range(1..slots.len())) % slots.len();
            pairs.push((slots[a].clone(), slots[b].clone()));
        }
    }
    Schema::new(slots).unwrap().with_ontology(ontology).unwrap().with_correlated_pairs(&pairs).unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng, schema: &Schema) -> DialogueState {
    schema.state_from_values((0..schema.len()).map(|_| random_value(rng)).collect()).unwrap()
}

/// Copy of `state` with each slot redrawn with probability `p`.
pub fn perturb(rng: &mut ChaCha8Rng, state: &DialogueState, p: f64) -> DialogueState {
    let mut out = state.clone();
    for i in 0..state.len() {
        if rng.gen_bool(p) {
            out.set(i, random_value(rng));
        }
    }
    out
}

/// A random dialogue corpus and a prediction run over it with some slots wrong.
pub fn random_run(rng: &mut ChaCha8Rng) -> (PredictionRun, Vec<DialogueRecord>) {
    let schema = random_schema(rng);
    let mut records = Vec::new();
    let mut dialogues = Vec::new();
    for d in 0..rng.gen_range(1..=4) {
        let mut state = schema.empty_state();
        let mut turns = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..rng.gen_range(1..=5) {
            state = perturb(rng, &state, 0.3);
            let p_err = [0.0, 0.05, 0.3][rng.gen_range(0..3)];
            let primitive = perturb(rng, &state, p_err);
            let final_state = if rng.gen_bool(0.2) {
                // Carry the previous gold over unchanged.
                turns.last().map_or_else(|| schema.empty_state(), |t: &TurnRecord| t.state.clone())
            } else {
                perturb(rng, &state, p_err)
            };
            let corrupted = rng.gen_bool(0.5).then(|| (0..schema.len()).filter(|&s| primitive.get(s) != state.get(s)).collect());
            preds.push(TurnPrediction {
                gold: state.clone(),
                primitive,
                final_state,
                warnings: vec![],
                corrupted,
            });
            turns.push(TurnRecord {
                turn: Turn::new("", "u").unwrap(),
                state: state.clone(),
            });
        }
        records.push(DialogueRecord {
            id: format!("d{d}"),
            split: None,
            turns,
        });
        dialogues.push(DialoguePrediction {
            id: format!("d{d}"),
            turns: preds,
        });
    }
    (PredictionRun { schema, dialogues }, records)
}
