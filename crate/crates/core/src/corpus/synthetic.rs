//! Seeded, template-driven dialogue generator.
//!
//! Each turn scripts one phenomenon (inform, update, delete, dontcare,
//! correlated confusion or coreference) as an explicit state delta and
//! renders a user utterance for it. Phenomena that cannot apply to the
//! current state are skipped by redrawing among the applicable ones.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DialogueRecord, SchemaSpec, SlotSpec, TurnRecord};
use crate::error::{Error, Result};
use crate::linearize::Turn;
use crate::state::{apply_delta, DialogueState, Schema, SlotId, SlotValue, StateDelta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phenomenon {
    Inform,
    Update,
    Delete,
    Dontcare,
    CorrelatedConfusion,
    Coreference,
}

impl Phenomenon {
    pub const ALL: [Phenomenon; 6] = [
        Phenomenon::Inform,
        Phenomenon::Update,
        Phenomenon::Delete,
        Phenomenon::Dontcare,
        Phenomenon::CorrelatedConfusion,
        Phenomenon::Coreference,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowMix {
    pub inform: f64,
    pub update: f64,
    pub delete: f64,
    pub dontcare: f64,
    pub correlated_confusion: f64,
    pub coreference: f64,
}

impl Default for FlowMix {
    fn default() -> Self {
        Self {
            inform: 0.4,
            update: 0.15,
            delete: 0.1,
            dontcare: 0.1,
            correlated_confusion: 0.1,
            coreference: 0.15,
        }
    }
}

impl FlowMix {
    pub fn only(p: Phenomenon) -> Self {
        let mut m = Self {
            inform: 0.0,
            update: 0.0,
            delete: 0.0,
            dontcare: 0.0,
            correlated_confusion: 0.0,
            coreference: 0.0,
        };
        *m.weight_mut(p) = 1.0;
        m
    }

    pub fn weight(&self, p: Phenomenon) -> f64 {
        match p {
            Phenomenon::Inform => self.inform,
            Phenomenon::Update => self.update,
            Phenomenon::Delete => self.delete,
            Phenomenon::Dontcare => self.dontcare,
            Phenomenon::CorrelatedConfusion => self.correlated_confusion,
            Phenomenon::Coreference => self.coreference,
        }
    }

    fn weight_mut(&mut self, p: Phenomenon) -> &mut f64 {
        match p {
            Phenomenon::Inform => &mut self.inform,
            Phenomenon::Update => &mut self.update,
            Phenomenon::Delete => &mut self.delete,
            Phenomenon::Dontcare => &mut self.dontcare,
            Phenomenon::CorrelatedConfusion => &mut self.correlated_confusion,
            Phenomenon::Coreference => &mut self.coreference,
        }
    }
}

/// User templates per phenomenon (`{value}` marks the value) and system
/// requests for one slot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlotTemplates {
    pub inform: Vec<String>,
    pub update: Vec<String>,
    pub delete: Vec<String>,
    pub dontcare: Vec<String>,
    pub request: Vec<String>,
}

/// Informs both slots of a correlated pair at once; `{first}` and `{second}`
/// mark the two values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTemplate {
    pub first: String,
    pub second: String,
    pub text: String,
}

/// Sets `target` to the current value of `source` without naming it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorefTemplate {
    pub source: String,
    pub target: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub schema: SchemaSpec,
    pub templates: BTreeMap<String, SlotTemplates>,
    pub confusion_templates: Vec<PairTemplate>,
    pub coreference_templates: Vec<CorefTemplate>,
    /// Generic system responses for turns after the first.
    pub system_responses: Vec<String>,
    /// Slots whose values are wrapped as candidate entity names.
    pub entity_slots: Vec<String>,
    pub flow_mix: FlowMix,
    pub rng_seed: u64,
    pub dialogue_count: usize,
    /// Inclusive range.
    pub turns_per_dialogue: (usize, usize),
    /// Probability that an inform turn mentions two slots.
    pub double_inform_prob: f64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn slot_templates(inform: &[&str], update: &[&str], delete: &[&str], dontcare: &[&str], request: &[&str]) -> SlotTemplates {
    SlotTemplates {
        inform: strings(inform),
        update: strings(update),
        delete: strings(delete),
        dontcare: strings(dontcare),
        request: strings(request),
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let places = [
            "camboats",
            "wandlebury country park",
            "kings college",
            "railway station",
            "city museum",
            "botanic garden",
            "grand arcade",
            "corn exchange",
        ];
        let values: [(&str, &str, Vec<&str>); 6] = [
            (
                "restaurant",
                "area",
                vec!["centre", "north", "south", "east", "west", "riverside", "old town", "market square"],
            ),
            (
                "restaurant",
                "food",
                vec!["italian", "chinese", "indian", "french", "thai", "british", "spanish", "korean"],
            ),
            (
                "restaurant",
                "name",
                vec![
                    "golden curry",
                    "pizza hut",
                    "copper kettle",
                    "bedouin",
                    "lucky star",
                    "royal spice",
                    "dojo noodle bar",
                    "cote",
                ],
            ),
            ("taxi", "departure", places.to_vec()),
            ("taxi", "destination", places.to_vec()),
            (
                "taxi",
                "leaveat",
                vec!["08:15", "09:30", "10:45", "12:00", "13:15", "14:30", "17:45", "19:00"],
            ),
        ];
        let schema = SchemaSpec {
            slots: values
                .iter()
                .map(|(d, s, _)| SlotSpec {
                    domain: d.to_string(),
                    slot: s.to_string(),
                })
                .collect(),
            ontology: values.iter().map(|(d, s, v)| (format!("{d}-{s}"), strings(v))).collect(),
            correlated_pairs: vec![("taxi-departure".into(), "taxi-destination".into())],
        };
        let mut templates = BTreeMap::new();
        templates.insert(
            "restaurant-area".to_string(),
            slot_templates(
                &["i want a place in the {value}", "somewhere in the {value} please", "it should be in the {value} area"],
                &["actually , make it the {value} instead", "a change in plans , i prefer the {value} area"],
                &["forget the area i mentioned", "please drop the area"],
                &["any area is fine", "i do not care about the area"],
                &["which area would you like ?"],
            ),
        );
        templates.insert(
            "restaurant-food".to_string(),
            slot_templates(
                &["i would like {value} food", "i am looking for a {value} restaurant", "they should serve {value} food"],
                &["a change in plans , i would rather have {value} food", "actually , make that {value} food"],
                &["forget the food type", "please drop the food type"],
                &["any type of food is fine", "i do not care about the food"],
                &["what type of food do you like ?"],
            ),
        );
        templates.insert(
            "restaurant-name".to_string(),
            slot_templates(
                &["i want to eat at {value}", "book a table at {value} please", "i have heard good things about {value}"],
                &["change the restaurant to {value}", "a change in plans , let us go to {value} instead"],
                &["forget the restaurant i picked", "please drop the restaurant name"],
                &["any restaurant is fine", "i do not care which restaurant"],
                &["do you have a restaurant in mind ?"],
            ),
        );
        templates.insert(
            "taxi-departure".to_string(),
            slot_templates(
                &["i need a taxi from {value}", "pick me up at {value}", "i will be leaving from {value}"],
                &["actually , pick me up from {value} instead", "change the pickup to {value}"],
                &["forget the pickup place", "please drop the pickup place"],
                &["i do not mind where i get picked up", "any pickup place is fine"],
                &["where will you leave from ?"],
            ),
        );
        templates.insert(
            "taxi-destination".to_string(),
            slot_templates(
                &["i need a taxi to {value}", "i am going to {value}", "drop me off at {value}"],
                &["change the destination to {value}", "a change in plans , take me to {value} instead"],
                &["forget the destination", "please drop the destination"],
                &["any destination is fine", "i do not care where i go"],
                &["where are you going ?"],
            ),
        );
        templates.insert(
            "taxi-leaveat".to_string(),
            slot_templates(
                &["i want to leave at {value}", "the taxi should leave at {value}", "pick me up at {value}"],
                &["a change in plans , leave at {value} instead", "make the departure time {value}"],
                &["forget the departure time", "please drop the departure time"],
                &["i can leave at any time", "any departure time is fine"],
                &["when would you like to leave ?"],
            ),
        );
        Self {
            schema,
            templates,
            confusion_templates: vec![
                PairTemplate {
                    first: "taxi-departure".into(),
                    second: "taxi-destination".into(),
                    text: "i am going to {second} , leaving from {first}".into(),
                },
                PairTemplate {
                    first: "taxi-departure".into(),
                    second: "taxi-destination".into(),
                    text: "take me to {second} from {first}".into(),
                },
            ],
            coreference_templates: vec![
                CorefTemplate {
                    source: "restaurant-name".into(),
                    target: "taxi-destination".into(),
                    text: "i also need a taxi to the restaurant".into(),
                },
                CorefTemplate {
                    source: "restaurant-name".into(),
                    target: "taxi-departure".into(),
                    text: "i need a taxi from the restaurant".into(),
                },
            ],
            system_responses: strings(&["ok .", "sure , anything else ?", "got it .", "what else do you need ?"]),
            entity_slots: strings(&["restaurant-name", "taxi-departure", "taxi-destination"]),
            flow_mix: FlowMix::default(),
            rng_seed: 7,
            dialogue_count: 400,
            turns_per_dialogue: (2, 6),
            double_inform_prob: 0.3,
        }
    }
}

/// Spec resolved against its schema.
struct Plan {
    schema: Schema,
    templates: Vec<SlotTemplates>,
    confusion: Vec<(usize, usize, String)>,
    coreference: Vec<(usize, usize, String)>,
    entity: Vec<bool>,
}

impl SyntheticSpec {
    fn resolve(&self) -> Result<Plan> {
        let schema = self.schema.to_schema()?;
        let fail = |m: String| Err(Error::config(m));
        let total: f64 = Phenomenon::ALL.iter().map(|&p| self.flow_mix.weight(p)).sum();
        if Phenomenon::ALL.iter().any(|&p| !(self.flow_mix.weight(p) >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return fail(format!("flow_mix must be nonnegative and sum to 1, got {total}"));
        }
        if self.flow_mix.inform + self.flow_mix.dontcare + self.flow_mix.correlated_confusion <= 0.0 {
            return fail("flow_mix leaves no phenomenon applicable to an empty state".into());
        }
        let (lo, hi) = self.turns_per_dialogue;
        if lo == 0 || lo > hi {
            return fail(format!("turns_per_dialogue ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
        }
        if self.dialogue_count == 0 {
            return fail("dialogue_count must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.double_inform_prob) {
            return fail("double_inform_prob must be a probability".into());
        }
        let index = |name: &str| -> Result<usize> { schema.require(&name.parse::<SlotId>()?) };
        for name in self.templates.keys() {
            index(name)?;
        }
        let mut templates = Vec::with_capacity(schema.len());
        for (i, slot) in schema.slots().iter().enumerate() {
            let t = self.templates.get(&slot.to_string()).cloned().unwrap_or_default();
            if schema.ontology(i).is_empty() {
                return fail(format!("slot {slot} has no ontology values"));
            }
            if !t.inform.iter().any(|x| x.contains("{value}")) {
                return fail(format!("slot {slot} has no inform template with {{value}}; its values are unreachable"));
            }
            if let Some(bad) = t.inform.iter().chain(&t.update).find(|x| !x.contains("{value}")) {
                return fail(format!("template '{bad}' for {slot} lacks {{value}}"));
            }
            templates.push(t);
        }
        let mut confusion = Vec::new();
        for p in &self.confusion_templates {
            if !p.text.contains("{first}") || !p.text.contains("{second}") {
                return fail(format!("pair template '{}' needs {{first}} and {{second}}", p.text));
            }
            confusion.push((index(&p.first)?, index(&p.second)?, p.text.clone()));
        }
        let mut coreference = Vec::new();
        for c in &self.coreference_templates {
            coreference.push((index(&c.source)?, index(&c.target)?, c.text.clone()));
        }
        let mut entity = vec![false; schema.len()];
        for name in &self.entity_slots {
            entity[index(name)?] = true;
        }
        if self.flow_mix.correlated_confusion > 0.0 && confusion.is_empty() {
            return fail("correlated_confusion has weight but no pair templates".into());
        }
        if self.flow_mix.coreference > 0.0 && coreference.is_empty() {
            return fail("coreference has weight but no coreference templates".into());
        }
        Ok(Plan {
            schema,
            templates,
            confusion,
            coreference,
            entity,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }
}

/// User text assembled from rendered clauses, with entity spans in chars.
#[derive(Default)]
struct Utterance {
    text: String,
    spans: Vec<(usize, usize)>,
}

impl Utterance {
    /// Appends `template` with each `{key}` replaced; spans cover entity fills.
    fn push_clause(&mut self, template: &str, fills: &[(&str, &str, bool)]) {
        if !self.text.is_empty() {
            self.text.push_str(" and ");
        }
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}').map(|c| open + c) else {
                break;
            };
            let key = &rest[open + 1..close];
            self.text.push_str(&rest[..open]);
            match fills.iter().find(|(k, _, _)| *k == key) {
                Some((_, value, entity)) => {
                    let start = self.text.chars().count();
                    self.text.push_str(value);
                    if *entity {
                        self.spans.push((start, start + value.chars().count()));
                    }
                }
                None => self.text.push_str(&rest[open..=close]),
            }
            rest = &rest[close + 1..];
        }
        self.text.push_str(rest);
    }
}

fn pick<'a, T>(items: &'a [T], rng: &mut ChaCha8Rng) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn value_other_than(candidates: &[String], avoid: &[&str], rng: &mut ChaCha8Rng) -> Option<String> {
    let pool: Vec<&String> = candidates.iter().filter(|c| !avoid.contains(&c.as_str())).collect();
    pool.choose(rng).map(|s| s.to_string())
}

/// Literal values of correlated partners, which a new value should not repeat.
fn partner_values<'a>(plan: &Plan, state: &'a DialogueState, slot: usize) -> Vec<&'a str> {
    plan.schema
        .partners(slot)
        .filter_map(|p| match state.get(p) {
            SlotValue::Literal(v) => Some(v.as_str()),
            _ => None,
        })
        .collect()
}

fn applicable(plan: &Plan, state: &DialogueState, p: Phenomenon) -> bool {
    let slots = 0..plan.schema.len();
    let t = &plan.templates;
    match p {
        Phenomenon::Inform => slots.clone().any(|i| state.get(i).is_not_mentioned()),
        Phenomenon::Update => slots.clone().any(|i| state.get(i).is_literal() && !t[i].update.is_empty()),
        Phenomenon::Delete => slots
            .clone()
            .any(|i| !state.get(i).is_not_mentioned() && !t[i].delete.is_empty()),
        Phenomenon::Dontcare => slots.clone().any(|i| state.get(i).is_not_mentioned() && !t[i].dontcare.is_empty()),
        Phenomenon::CorrelatedConfusion => plan
            .confusion
            .iter()
            .any(|&(a, b, _)| state.get(a).is_not_mentioned() && state.get(b).is_not_mentioned()),
        Phenomenon::Coreference => plan
            .coreference
            .iter()
            .any(|&(s, tg, _)| state.get(s).is_literal() && state.get(tg).is_not_mentioned()),
    }
}

/// Scripts one turn: the delta and its user utterance.
fn script(plan: &Plan, state: &DialogueState, p: Phenomenon, double_prob: f64, rng: &mut ChaCha8Rng) -> (StateDelta, Utterance) {
    let n = plan.schema.len();
    let t = &plan.templates;
    let mut delta = StateDelta::new();
    let mut utt = Utterance::default();
    let choose = |pred: &dyn Fn(usize) -> bool, rng: &mut ChaCha8Rng| -> usize {
        let eligible: Vec<usize> = (0..n).filter(|&i| pred(i)).collect();
        *pick(&eligible, rng)
    };
    match p {
        Phenomenon::Inform => {
            let first = choose(&|i| state.get(i).is_not_mentioned(), rng);
            let mut slots = vec![first];
            let domain = plan.schema.slot(first).domain();
            let second: Vec<usize> = (0..n)
                .filter(|&i| i != first && state.get(i).is_not_mentioned() && plan.schema.slot(i).domain() == domain)
                .collect();
            if !second.is_empty() && rng.gen_bool(double_prob) {
                slots.push(*pick(&second, rng));
            }
            let mut working = state.clone();
            for slot in slots {
                let avoid = partner_values(plan, &working, slot);
                let value = value_other_than(plan.schema.ontology(slot), &avoid, rng)
                    .unwrap_or_else(|| plan.schema.ontology(slot)[0].clone());
                let template: Vec<&String> = t[slot].inform.iter().filter(|x| x.contains("{value}")).collect();
                utt.push_clause(pick(&template, rng), &[("value", &value, plan.entity[slot])]);
                working.set(slot, SlotValue::literal(&value));
                delta.insert(slot, SlotValue::literal(&value));
            }
        }
        Phenomenon::Update => {
            let slot = choose(&|i| state.get(i).is_literal() && !t[i].update.is_empty(), rng);
            let mut avoid = partner_values(plan, state, slot);
            avoid.push(state.get(slot).as_text());
            match value_other_than(plan.schema.ontology(slot), &avoid, rng) {
                Some(value) => {
                    utt.push_clause(pick(&t[slot].update, rng), &[("value", &value, plan.entity[slot])]);
                    delta.insert(slot, SlotValue::literal(&value));
                }
                None => {
                    utt.push_clause(pick(&t[slot].delete, rng), &[]);
                    delta.insert(slot, SlotValue::NotMentioned);
                }
            }
        }
        Phenomenon::Delete => {
            let slot = choose(&|i| !state.get(i).is_not_mentioned() && !t[i].delete.is_empty(), rng);
            utt.push_clause(pick(&t[slot].delete, rng), &[]);
            delta.insert(slot, SlotValue::NotMentioned);
        }
        Phenomenon::Dontcare => {
            let slot = choose(&|i| state.get(i).is_not_mentioned() && !t[i].dontcare.is_empty(), rng);
            utt.push_clause(pick(&t[slot].dontcare, rng), &[]);
            delta.insert(slot, SlotValue::DontCare);
        }
        Phenomenon::CorrelatedConfusion => {
            let options: Vec<&(usize, usize, String)> = plan
                .confusion
                .iter()
                .filter(|(a, b, _)| state.get(*a).is_not_mentioned() && state.get(*b).is_not_mentioned())
                .collect();
            let &(a, b, ref text) = *pick(&options, rng);
            let va = pick(plan.schema.ontology(a), rng).clone();
            let vb = value_other_than(plan.schema.ontology(b), &[va.as_str()], rng).unwrap_or_else(|| va.clone());
            utt.push_clause(text, &[("first", &va, plan.entity[a]), ("second", &vb, plan.entity[b])]);
            delta.insert(a, SlotValue::literal(&va));
            delta.insert(b, SlotValue::literal(&vb));
        }
        Phenomenon::Coreference => {
            let options: Vec<&(usize, usize, String)> = plan
                .coreference
                .iter()
                .filter(|(s, tg, _)| state.get(*s).is_literal() && state.get(*tg).is_not_mentioned())
                .collect();
            let &(source, target, ref text) = *pick(&options, rng);
            utt.push_clause(text, &[]);
            delta.insert(target, state.get(source).clone());
        }
    }
    (delta, utt)
}

fn system_response(plan: &Plan, spec: &SyntheticSpec, state: &DialogueState, rng: &mut ChaCha8Rng) -> String {
    let open: Vec<usize> = (0..plan.schema.len())
        .filter(|&i| state.get(i).is_not_mentioned() && !plan.templates[i].request.is_empty())
        .collect();
    if !open.is_empty() && rng.gen_bool(0.5) {
        let slot = *pick(&open, rng);
        return pick(&plan.templates[slot].request, rng).clone();
    }
    if spec.system_responses.is_empty() {
        String::new()
    } else {
        pick(&spec.system_responses, rng).clone()
    }
}

/// One scripted turn as emitted: utterances, phenomenon and delta.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedTurn {
    pub phenomenon: Phenomenon,
    pub delta: StateDelta,
}

/// Dialogues plus the phenomenon and delta scripted for every turn.
pub fn generate_with_script(spec: &SyntheticSpec) -> Result<(Corpus, Vec<Vec<ScriptedTurn>>)> {
    let plan = spec.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (lo, hi) = spec.turns_per_dialogue;
    let mut dialogues = Vec::with_capacity(spec.dialogue_count);
    let mut scripts = Vec::with_capacity(spec.dialogue_count);
    for d in 0..spec.dialogue_count {
        let target_turns = rng.gen_range(lo..=hi);
        let mut state = plan.schema.empty_state();
        let mut turns = Vec::with_capacity(target_turns);
        let mut script_log = Vec::with_capacity(target_turns);
        for t in 0..target_turns {
            let options: Vec<(Phenomenon, f64)> = Phenomenon::ALL
                .iter()
                .map(|&p| (p, spec.flow_mix.weight(p)))
                .filter(|&(p, w)| w > 0.0 && applicable(&plan, &state, p))
                .collect();
            let Ok(&(phenomenon, _)) = options.choose_weighted(&mut rng, |o| o.1) else {
                break;
            };
            let system = if t == 0 {
                String::new()
            } else {
                system_response(&plan, spec, &state, &mut rng)
            };
            let (delta, utt) = script(&plan, &state, phenomenon, spec.double_inform_prob, &mut rng);
            let next = apply_delta(&state, &delta)?;
            let turn = Turn::new(&system, &utt.text)?.with_user_spans(utt.spans)?;
            turns.push(TurnRecord {
                turn,
                state: next.clone(),
            });
            script_log.push(ScriptedTurn { phenomenon, delta });
            state = next;
        }
        dialogues.push(DialogueRecord {
            id: format!("syn-{d:05}"),
            split: None,
            turns,
        });
        scripts.push(script_log);
    }
    Ok((
        Corpus {
            schema: plan.schema,
            dialogues,
        },
        scripts,
    ))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    generate_with_script(spec).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clauses_track_entity_spans() {
        let mut u = Utterance::default();
        u.push_clause("i need a taxi from {value}", &[("value", "kings college", true)]);
        u.push_clause("take me to {second} from {first}", &[("first", "a", false), ("second", "bé b", true)]);
        assert_eq!(u.text, "i need a taxi from kings college and take me to bé b from a");
        let spans: Vec<String> = u
            .spans
            .iter()
            .map(|&(s, e)| u.text.chars().skip(s).take(e - s).collect())
            .collect();
        assert_eq!(spans, ["kings college", "bé b"]);
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = SyntheticSpec::default();
        spec.validate().unwrap();
        let plan = spec.resolve().unwrap();
        assert_eq!(plan.schema.len(), 6);
        assert_eq!(plan.schema.domains(), ["restaurant", "taxi"]);
        assert!((0..6).all(|i| plan.schema.ontology(i).len() == 8));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = SyntheticSpec::default();
        s.flow_mix.inform = 0.9;
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::default();
        s.flow_mix = FlowMix::only(Phenomenon::Delete);
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::default();
        s.templates.get_mut("taxi-leaveat").unwrap().inform.clear();
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::default();
        s.turns_per_dialogue = (3, 2);
        assert!(s.validate().is_err());
    }
}
