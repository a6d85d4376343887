//! Dialogue-state value algebra.
//!
//! A [`DialogueState`] is a total assignment over the slots of a [`Schema`]:
//! absent user goals are the explicit [`SlotValue::NotMentioned`] sentinel,
//! so deletion is an ordinary value change and a turn delta is a plain
//! per-slot difference.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOT_MENTIONED: &str = "<nm>";
pub const DONT_CARE: &str = "<dc>";

/// Lowercase, trim, collapse internal whitespace and strip terminal punctuation.
pub fn normalize_value(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | '!' | '?' | ';' | ':'))
        .trim_end()
        .to_string()
}

/// A `domain-slot` pair such as `restaurant-area`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotId {
    domain: String,
    slot: String,
}

fn valid_ident(part: &str) -> bool {
    !part.is_empty()
        && part
            .chars()
            .all(|c| !c.is_whitespace() && !c.is_uppercase() && !matches!(c, '-' | '<' | '>' | '/'))
}

impl SlotId {
    pub fn new(domain: &str, slot: &str) -> Result<Self> {
        if !valid_ident(domain) || !valid_ident(slot) {
            return Err(Error::structural(format!(
                "invalid slot id {domain:?}-{slot:?}: parts must be nonempty lowercase identifiers without whitespace or hyphens"
            )));
        }
        Ok(Self {
            domain: domain.to_string(),
            slot: slot.to_string(),
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn slot(&self) -> &str {
        &self.slot
    }

    /// The special-token surface, e.g. `<restaurant-area>`.
    pub fn token(&self) -> String {
        format!("<{}-{}>", self.domain, self.slot)
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

impl FromStr for SlotId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (domain, slot) = s
            .split_once('-')
            .ok_or_else(|| Error::structural(format!("slot id {s:?} is not of the form domain-slot")))?;
        SlotId::new(domain, slot)
    }
}

impl Serialize for SlotId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlotId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    NotMentioned,
    DontCare,
    Literal(String),
}

impl SlotValue {
    /// Parses a surface value, normalizing literals. Empty text is `NotMentioned`.
    pub fn from_text(text: &str) -> Self {
        let norm = normalize_value(text);
        match norm.as_str() {
            "" | NOT_MENTIONED => SlotValue::NotMentioned,
            DONT_CARE | "dontcare" => SlotValue::DontCare,
            _ => SlotValue::Literal(norm),
        }
    }

    pub fn literal(text: &str) -> Self {
        Self::from_text(text)
    }

    pub fn as_text(&self) -> &str {
        match self {
            SlotValue::NotMentioned => NOT_MENTIONED,
            SlotValue::DontCare => DONT_CARE,
            SlotValue::Literal(s) => s,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, SlotValue::Literal(_))
    }

    pub fn is_not_mentioned(&self) -> bool {
        matches!(self, SlotValue::NotMentioned)
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_text())
    }
}

/// Ordered slot layout plus optional candidate values and correlated slot pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    slots: Vec<SlotId>,
    ontology: Vec<Vec<String>>,
    correlated_pairs: Vec<(usize, usize)>,
    key: u64,
}

impl Schema {
    pub fn new(slots: Vec<SlotId>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::structural("schema must contain at least one slot"));
        }
        for (i, s) in slots.iter().enumerate() {
            if slots[..i].contains(s) {
                return Err(Error::structural(format!("duplicate slot {s} in schema")));
            }
        }
        let key = schema_key(&slots);
        let ontology = vec![Vec::new(); slots.len()];
        Ok(Self {
            slots,
            ontology,
            correlated_pairs: Vec::new(),
            key,
        })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let slots = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<SlotId>>>()?;
        Self::new(slots)
    }

    pub fn with_ontology(mut self, ontology: BTreeMap<SlotId, Vec<String>>) -> Result<Self> {
        for (slot, values) in ontology {
            let idx = self.require(&slot)?;
            let mut normalized: Vec<String> = Vec::with_capacity(values.len());
            for v in values {
                let v = normalize_value(&v);
                if !v.is_empty() && !normalized.contains(&v) {
                    normalized.push(v);
                }
            }
            self.ontology[idx] = normalized;
        }
        Ok(self)
    }

    pub fn with_correlated_pairs(mut self, pairs: &[(SlotId, SlotId)]) -> Result<Self> {
        let mut resolved = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let ia = self.require(a)?;
            let ib = self.require(b)?;
            if ia == ib {
                return Err(Error::config(format!("correlated pair pairs {a} with itself")));
            }
            resolved.push((ia, ib));
        }
        self.correlated_pairs = resolved;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[SlotId] {
        &self.slots
    }

    pub fn slot(&self, idx: usize) -> &SlotId {
        &self.slots[idx]
    }

    pub fn index_of(&self, slot: &SlotId) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    pub fn require(&self, slot: &SlotId) -> Result<usize> {
        self.index_of(slot)
            .ok_or_else(|| Error::structural(format!("unknown slot {slot}")))
    }

    pub fn ontology(&self, idx: usize) -> &[String] {
        &self.ontology[idx]
    }

    pub fn has_ontology(&self) -> bool {
        self.ontology.iter().any(|v| !v.is_empty())
    }

    pub fn correlated_pairs(&self) -> &[(usize, usize)] {
        &self.correlated_pairs
    }

    /// Slot indices whose correlated partner list contains `idx`.
    pub fn partners(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.correlated_pairs.iter().filter_map(move |&(a, b)| {
            if a == idx {
                Some(b)
            } else if b == idx {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Distinct domains in first-appearance order.
    pub fn domains(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.slots {
            if !out.contains(&s.domain()) {
                out.push(s.domain());
            }
        }
        out
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn empty_state(&self) -> DialogueState {
        DialogueState {
            schema_key: self.key,
            values: vec![SlotValue::NotMentioned; self.slots.len()],
        }
    }

    pub fn state_from_values(&self, values: Vec<SlotValue>) -> Result<DialogueState> {
        if values.len() != self.slots.len() {
            return Err(Error::structural(format!(
                "state has {} values but schema has {} slots",
                values.len(),
                self.slots.len()
            )));
        }
        Ok(DialogueState {
            schema_key: self.key,
            values,
        })
    }

    /// Builds a state from a sparse map; missing slots become `NotMentioned`.
    pub fn state_from_map<K: AsRef<str>, V: AsRef<str>>(
        &self,
        map: impl IntoIterator<Item = (K, V)>,
    ) -> Result<DialogueState> {
        let mut state = self.empty_state();
        for (k, v) in map {
            let slot: SlotId = k.as_ref().parse()?;
            let idx = self.require(&slot)?;
            state.values[idx] = SlotValue::from_text(v.as_ref());
        }
        Ok(state)
    }

    pub fn state_to_map(&self, state: &DialogueState) -> BTreeMap<String, String> {
        self.slots
            .iter()
            .zip(&state.values)
            .map(|(s, v)| (s.to_string(), v.as_text().to_string()))
            .collect()
    }
}

fn schema_key(slots: &[SlotId]) -> u64 {
    // FNV-1a over the joined slot names; stable within and across runs.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in slots {
        for b in s.to_string().bytes().chain(std::iter::once(0u8)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Total slot → value assignment over one schema.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DialogueState {
    schema_key: u64,
    values: Vec<SlotValue>,
}

impl DialogueState {
    pub fn values(&self) -> &[SlotValue] {
        &self.values
    }

    pub fn get(&self, idx: usize) -> &SlotValue {
        &self.values[idx]
    }

    pub fn set(&mut self, idx: usize, value: SlotValue) {
        self.values[idx] = value;
    }

    pub fn schema_key(&self) -> u64 {
        self.schema_key
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_same_schema(&self, other: &DialogueState) -> Result<()> {
        if self.schema_key != other.schema_key || self.values.len() != other.values.len() {
            return Err(Error::structural("states belong to different schemas"));
        }
        Ok(())
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if self.schema_key != schema.key() {
            return Err(Error::structural("state does not belong to the given schema"));
        }
        Ok(())
    }
}

/// Slots whose value changed between two turns, mapped to the new value.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct StateDelta {
    changed: BTreeMap<usize, SlotValue>,
}

impl StateDelta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, slot_idx: usize, value: SlotValue) {
        self.changed.insert(slot_idx, value);
    }

    pub fn get(&self, slot_idx: usize) -> Option<&SlotValue> {
        self.changed.get(&slot_idx)
    }

    pub fn contains(&self, slot_idx: usize) -> bool {
        self.changed.contains_key(&slot_idx)
    }

    pub fn len(&self) -> usize {
        self.changed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &SlotValue)> {
        self.changed.iter().map(|(k, v)| (*k, v))
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.changed.keys().copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateOperation {
    Carryover,
    Update,
    Delete,
    Dontcare,
}

impl StateOperation {
    pub fn between(prev: &SlotValue, curr: &SlotValue) -> Self {
        match (prev, curr) {
            (p, c) if p == c => StateOperation::Carryover,
            (_, SlotValue::NotMentioned) => StateOperation::Delete,
            (_, SlotValue::DontCare) => StateOperation::Dontcare,
            (_, SlotValue::Literal(_)) => StateOperation::Update,
        }
    }
}

pub fn diff_states(prev: &DialogueState, curr: &DialogueState) -> Result<StateDelta> {
    prev.check_same_schema(curr)?;
    let mut delta = StateDelta::new();
    for (i, (p, c)) in prev.values.iter().zip(&curr.values).enumerate() {
        if p != c {
            delta.insert(i, c.clone());
        }
    }
    Ok(delta)
}

pub fn apply_delta(prev: &DialogueState, delta: &StateDelta) -> Result<DialogueState> {
    let mut next = prev.clone();
    for (idx, value) in delta.iter() {
        if idx >= next.values.len() {
            return Err(Error::structural(format!("delta references unknown slot index {idx}")));
        }
        next.values[idx] = value.clone();
    }
    Ok(next)
}

pub fn classify_operations(prev: &DialogueState, curr: &DialogueState) -> Result<Vec<StateOperation>> {
    prev.check_same_schema(curr)?;
    Ok(prev
        .values
        .iter()
        .zip(&curr.values)
        .map(|(p, c)| StateOperation::between(p, c))
        .collect())
}

/// Values are normalized at construction, so equality is exact.
pub fn states_equal(a: &DialogueState, b: &DialogueState) -> Result<bool> {
    a.check_same_schema(b)?;
    Ok(a.values == b.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::from_names(&["restaurant-area", "restaurant-food", "restaurant-people", "hotel-stay"]).unwrap()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_value("  The  Golden Curry. "), "the golden curry");
        assert_eq!(normalize_value("Centre!?"), "centre");
        assert_eq!(SlotValue::from_text("<NM>"), SlotValue::NotMentioned);
        assert_eq!(SlotValue::from_text("<dc>"), SlotValue::DontCare);
        assert_eq!(SlotValue::from_text(" "), SlotValue::NotMentioned);
    }

    #[test]
    fn slot_ids_are_validated() {
        assert!("restaurant-area".parse::<SlotId>().is_ok());
        assert!("Restaurant-area".parse::<SlotId>().is_err());
        assert!("restaurant".parse::<SlotId>().is_err());
        assert!("restaurant-book people".parse::<SlotId>().is_err());
        assert!(Schema::from_names(&["a-b", "a-b"]).is_err());
        assert!(Schema::from_names::<&str>(&[]).is_err());
        assert_eq!("taxi-leaveat".parse::<SlotId>().unwrap().token(), "<taxi-leaveat>");
    }

    #[test]
    fn diff_people_two_to_one() {
        let s = schema();
        let prev = s.state_from_map([("restaurant-people", "2")]).unwrap();
        let curr = s.state_from_map([("restaurant-people", "1")]).unwrap();
        let delta = diff_states(&prev, &curr).unwrap();
        assert_eq!(delta.len(), 1);
        assert_eq!(delta.get(2), Some(&SlotValue::literal("1")));
        assert!(diff_states(&curr, &curr).unwrap().is_empty());
    }

    #[test]
    fn apply_hotel_stay() {
        let s = schema();
        let prev = s.state_from_map([("hotel-stay", "2")]).unwrap();
        let mut delta = StateDelta::new();
        delta.insert(3, SlotValue::literal("3"));
        let next = apply_delta(&prev, &delta).unwrap();
        assert_eq!(next.get(3), &SlotValue::literal("3"));
        assert_eq!(apply_delta(&prev, &StateDelta::new()).unwrap(), prev);
        let mut bad = StateDelta::new();
        bad.insert(9, SlotValue::DontCare);
        assert!(apply_delta(&prev, &bad).is_err());
    }

    #[test]
    fn operation_labels() {
        let s = schema();
        let prev = s
            .state_from_map([("restaurant-food", "indian"), ("restaurant-people", "2")])
            .unwrap();
        let curr = s
            .state_from_map([("restaurant-area", "<dc>"), ("restaurant-people", "2"), ("hotel-stay", "3")])
            .unwrap();
        let ops = classify_operations(&prev, &curr).unwrap();
        assert_eq!(
            ops,
            vec![
                StateOperation::Dontcare,
                StateOperation::Delete,
                StateOperation::Carryover,
                StateOperation::Update
            ]
        );
    }

    #[test]
    fn equality_is_normalized() {
        let s = schema();
        let a = s.state_from_map([("restaurant-food", "Indian")]).unwrap();
        let b = s.state_from_map([("restaurant-food", "indian ")]).unwrap();
        assert!(states_equal(&a, &b).unwrap());
        let c = s.state_from_map([("restaurant-food", "<nm>")]).unwrap();
        let d = s.state_from_map([("restaurant-food", "<dc>")]).unwrap();
        assert!(!states_equal(&c, &d).unwrap());
    }

    #[test]
    fn schema_mismatch_is_structural() {
        let a = schema().empty_state();
        let b = Schema::from_names(&["taxi-departure"]).unwrap().empty_state();
        assert!(matches!(diff_states(&a, &b), Err(Error::Structural(_))));
        assert!(classify_operations(&a, &b).is_err());
        assert!(states_equal(&a, &b).is_err());
    }

    #[test]
    fn correlated_pairs_resolve() {
        let s = schema()
            .with_correlated_pairs(&[("restaurant-area".parse().unwrap(), "hotel-stay".parse().unwrap())])
            .unwrap();
        assert_eq!(s.partners(0).collect::<Vec<_>>(), vec![3]);
        assert_eq!(s.partners(3).collect::<Vec<_>>(), vec![0]);
        assert!(schema()
            .with_correlated_pairs(&[("restaurant-area".parse().unwrap(), "taxi-x".parse().unwrap())])
            .is_err());
    }
}
