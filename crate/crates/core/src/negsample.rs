//! Corrupted primitive states for training the amending pass.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{diff_states, DialogueState, Schema, SlotValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    ToNm,
    ToDc,
    ToWrongValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrongValueSource {
    /// Values declared in the schema ontology.
    Ontology,
    /// Literal values observed in the training states.
    CorpusValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplacementMix {
    pub to_nm: f64,
    pub to_dc: f64,
    pub to_wrong_value: f64,
}

impl Default for ReplacementMix {
    fn default() -> Self {
        Self {
            to_nm: 0.5,
            to_dc: 0.1,
            to_wrong_value: 0.4,
        }
    }
}

impl ReplacementMix {
    pub fn only(kind: Replacement) -> Self {
        let mut mix = Self {
            to_nm: 0.0,
            to_dc: 0.0,
            to_wrong_value: 0.0,
        };
        match kind {
            Replacement::ToNm => mix.to_nm = 1.0,
            Replacement::ToDc => mix.to_dc = 1.0,
            Replacement::ToWrongValue => mix.to_wrong_value = 1.0,
        }
        mix
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Replacement {
        let u: f64 = rng.gen();
        if u < self.to_nm {
            Replacement::ToNm
        } else if u < self.to_nm + self.to_dc {
            Replacement::ToDc
        } else {
            Replacement::ToWrongValue
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionPolicy {
    /// Probability that each changed slot is corrupted.
    pub corrupt_prob: f64,
    pub replacement_mix: ReplacementMix,
    pub wrong_value_source: WrongValueSource,
    /// Also exchange the values of declared correlated slot pairs.
    pub heuristic_plus: bool,
    pub swap_prob: f64,
    pub rng_seed: u64,
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        Self {
            corrupt_prob: 0.5,
            replacement_mix: ReplacementMix::default(),
            wrong_value_source: WrongValueSource::CorpusValues,
            heuristic_plus: false,
            swap_prob: 0.3,
            rng_seed: 0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} = {p} is not a probability")))
    }
}

impl CorruptionPolicy {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        check_prob("corrupt_prob", self.corrupt_prob)?;
        check_prob("swap_prob", self.swap_prob)?;
        let m = &self.replacement_mix;
        check_prob("replacement_mix.to_nm", m.to_nm)?;
        check_prob("replacement_mix.to_dc", m.to_dc)?;
        check_prob("replacement_mix.to_wrong_value", m.to_wrong_value)?;
        let sum = m.to_nm + m.to_dc + m.to_wrong_value;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("replacement_mix sums to {sum}, expected 1")));
        }
        if self.wrong_value_source == WrongValueSource::Ontology && m.to_wrong_value > 0.0 && !schema.has_ontology() {
            return Err(Error::config("wrong_value_source is ontology but the schema declares no ontology"));
        }
        if self.heuristic_plus && schema.correlated_pairs().is_empty() {
            return Err(Error::config("heuristic_plus needs correlated slot pairs in the schema"));
        }
        Ok(())
    }
}

/// Candidate wrong values per slot, in a fixed order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValuePool {
    per_slot: Vec<Vec<String>>,
}

impl ValuePool {
    pub fn from_ontology(schema: &Schema) -> Self {
        Self {
            per_slot: (0..schema.len()).map(|i| schema.ontology(i).to_vec()).collect(),
        }
    }

    /// Distinct literal values per slot across `states`, sorted.
    pub fn from_states<'a>(schema: &Schema, states: impl IntoIterator<Item = &'a DialogueState>) -> Self {
        let mut sets = vec![std::collections::BTreeSet::new(); schema.len()];
        for s in states {
            for (i, v) in s.values().iter().enumerate() {
                if let SlotValue::Literal(text) = v {
                    sets[i].insert(text.clone());
                }
            }
        }
        Self {
            per_slot: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn for_policy<'a>(policy: &CorruptionPolicy, schema: &Schema, states: impl IntoIterator<Item = &'a DialogueState>) -> Self {
        match policy.wrong_value_source {
            WrongValueSource::Ontology => Self::from_ontology(schema),
            WrongValueSource::CorpusValues => Self::from_states(schema, states),
        }
    }

    pub fn values(&self, slot: usize) -> &[String] {
        &self.per_slot[slot]
    }
}

/// The primitive state seen by the amending pass during training: the gold
/// current state with some changed slots replaced.
pub fn corrupt(
    gold_prev: &DialogueState,
    gold_curr: &DialogueState,
    schema: &Schema,
    policy: &CorruptionPolicy,
    pool: &ValuePool,
    rng: &mut dyn RngCore,
) -> Result<DialogueState> {
    gold_curr.check_schema(schema)?;
    let delta = diff_states(gold_prev, gold_curr)?;
    let mut out = gold_curr.clone();
    for slot in delta.slots() {
        if !rng.gen_bool(policy.corrupt_prob) {
            continue;
        }
        let value = match policy.replacement_mix.draw(rng) {
            Replacement::ToNm => SlotValue::NotMentioned,
            Replacement::ToDc => SlotValue::DontCare,
            Replacement::ToWrongValue => wrong_value(gold_curr.get(slot), pool.values(slot), rng),
        };
        out.set(slot, value);
    }
    Ok(out)
}

fn wrong_value(gold: &SlotValue, candidates: &[String], rng: &mut dyn RngCore) -> SlotValue {
    let others: Vec<&String> = candidates
        .iter()
        .filter(|c| !matches!(gold, SlotValue::Literal(g) if g == *c))
        .collect();
    if others.is_empty() {
        SlotValue::NotMentioned
    } else {
        SlotValue::Literal(others[rng.gen_range(0..others.len())].clone())
    }
}

/// Exchanges the values of each declared correlated pair with `swap_prob`.
/// Pairs whose members are both not mentioned are skipped without drawing.
pub fn heuristic_swap(state: &DialogueState, schema: &Schema, policy: &CorruptionPolicy, rng: &mut dyn RngCore) -> Result<DialogueState> {
    state.check_schema(schema)?;
    let mut out = state.clone();
    for &(a, b) in schema.correlated_pairs() {
        if out.get(a).is_not_mentioned() && out.get(b).is_not_mentioned() {
            continue;
        }
        if rng.gen_bool(policy.swap_prob) {
            swap_pair(&mut out, a, b);
        }
    }
    Ok(out)
}

pub fn swap_pair(state: &mut DialogueState, a: usize, b: usize) {
    let va = state.get(a).clone();
    let vb = state.get(b).clone();
    state.set(a, vb);
    state.set(b, va);
}
