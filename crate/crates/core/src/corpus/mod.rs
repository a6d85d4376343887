//! Dialogue corpora: the canonical JSON interchange format, dataset-shaped
//! loaders on top of it, seeded splitting, and a synthetic generator.
//!
//! Canonical JSON:
//!
//! ```text
//! {
//!   "schema": {"slots": [{"domain": "taxi", "slot": "departure"}, ...],
//!              "ontology": {"taxi-departure": ["camboats", ...]},
//!              "correlated_pairs": [["taxi-departure", "taxi-destination"]]},
//!   "dialogues": [{"id": "d1", "split": "train",
//!                  "turns": [{"system": "", "user": "...", "name_spans": [[0, 4]],
//!                             "state": {"taxi-departure": "camboats"}}]}]
//! }
//! ```
//!
//! `split` and per-turn `system_name_spans` are optional. Omitted slots are
//! not mentioned; `"<dc>"` / `"dontcare"` mean don't care.

mod loaders;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::Turn;
use crate::state::{DialogueState, Schema, SlotId};

pub use loaders::{load_canonical, load_multiwoz_like, load_woz_like, multiwoz_schema, parse_canonical, woz_schema};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct TurnRecord {
    pub turn: Turn,
    pub state: DialogueState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DialogueRecord {
    pub id: String,
    pub split: Option<String>,
    pub turns: Vec<TurnRecord>,
}

impl DialogueRecord {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::structural(format!("dialogue {} has no turns", self.id)));
        }
        for t in &self.turns {
            t.turn.validate()?;
            t.state.check_schema(schema)?;
        }
        Ok(())
    }

    /// Gold state before turn `t` (all not mentioned before the first turn).
    pub fn previous_state(&self, t: usize, schema: &Schema) -> DialogueState {
        if t == 0 {
            schema.empty_state()
        } else {
            self.turns[t - 1].state.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub schema: Schema,
    pub dialogues: Vec<DialogueRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub domain: String,
    pub slot: String,
}

/// Serialized schema: slots, optional ontology and correlated pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub slots: Vec<SlotSpec>,
    #[serde(default)]
    pub ontology: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub correlated_pairs: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RawTurn {
    #[serde(default)]
    pub system: String,
    pub user: String,
    #[serde(default)]
    pub name_spans: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub system_name_spans: Vec<(usize, usize)>,
    #[serde(default)]
    pub state: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RawDialogue {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domains: Vec<String>,
    pub turns: Vec<RawTurn>,
}

impl SchemaSpec {
    pub fn from_schema(schema: &Schema) -> Self {
        let slots = schema
            .slots()
            .iter()
            .map(|s| SlotSpec {
                domain: s.domain().to_string(),
                slot: s.slot().to_string(),
            })
            .collect();
        let ontology = (0..schema.len())
            .filter(|&i| !schema.ontology(i).is_empty())
            .map(|i| (schema.slot(i).to_string(), schema.ontology(i).to_vec()))
            .collect();
        let correlated_pairs = schema
            .correlated_pairs()
            .iter()
            .map(|&(a, b)| (schema.slot(a).to_string(), schema.slot(b).to_string()))
            .collect();
        Self {
            slots,
            ontology,
            correlated_pairs,
        }
    }

    pub fn to_schema(&self) -> Result<Schema> {
        let slots = self
            .slots
            .iter()
            .map(|s| SlotId::new(&s.domain, &s.slot))
            .collect::<Result<Vec<_>>>()?;
        let ontology = self
            .ontology
            .iter()
            .map(|(k, v)| Ok((k.parse::<SlotId>()?, v.clone())))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let pairs = self
            .correlated_pairs
            .iter()
            .map(|(a, b)| Ok((a.parse::<SlotId>()?, b.parse::<SlotId>()?)))
            .collect::<Result<Vec<_>>>()?;
        Schema::new(slots)?.with_ontology(ontology)?.with_correlated_pairs(&pairs)
    }
}

#[derive(Serialize, Deserialize)]
struct RawCorpus {
    schema: SchemaSpec,
    dialogues: Vec<RawDialogue>,
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        for d in &self.dialogues {
            d.validate(&self.schema)?;
        }
        Ok(())
    }

    /// Canonical JSON; byte-identical for equal corpora.
    pub fn to_json(&self) -> String {
        let schema = &self.schema;
        let dialogues = self
            .dialogues
            .iter()
            .map(|d| RawDialogue {
                id: d.id.clone(),
                split: d.split.clone(),
                domains: Vec::new(),
                turns: d
                    .turns
                    .iter()
                    .map(|t| RawTurn {
                        system: t.turn.system.clone(),
                        user: t.turn.user.clone(),
                        name_spans: t.turn.user_name_spans.clone(),
                        system_name_spans: t.turn.system_name_spans.clone(),
                        state: schema
                            .state_to_map(&t.state)
                            .into_iter()
                            .filter(|(_, v)| v != crate::state::NOT_MENTIONED)
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        let raw = RawCorpus {
            schema: SchemaSpec::from_schema(schema),
            dialogues,
        };
        serde_json::to_string_pretty(&raw).expect("corpus serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Dialogues whose declared split equals `name`.
    pub fn split_named(&self, name: &str) -> Vec<DialogueRecord> {
        self.dialogues
            .iter()
            .filter(|d| d.split.as_deref() == Some(name))
            .cloned()
            .collect()
    }

    /// Declared train/valid/test partition when every dialogue carries a
    /// split label, otherwise a seeded split with `ratios`.
    pub fn splits(&self, ratios: (f64, f64, f64), seed: u64) -> Result<Splits> {
        if !self.dialogues.is_empty() && self.dialogues.iter().all(|d| d.split.is_some()) {
            let s = Splits {
                train: self.split_named("train"),
                valid: self.split_named("valid"),
                test: self.split_named("test"),
            };
            let known = s.train.len() + s.valid.len() + s.test.len();
            if known != self.dialogues.len() {
                return Err(Error::structural("split labels must be train, valid or test"));
            }
            return Ok(s);
        }
        split(&self.dialogues, ratios, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<DialogueRecord>,
    pub valid: Vec<DialogueRecord>,
    pub test: Vec<DialogueRecord>,
}

/// Seeded partition of dialogues into train/valid/test.
///
/// Counts are `floor(ratio · n)` for valid and test (at least one each) and
/// the remainder for train; dialogues are assigned after a seeded shuffle.
pub fn split(records: &[DialogueRecord], ratios: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let n = records.len();
    if n < 3 {
        return Err(Error::structural(format!("{n} dialogues cannot fill three splits")));
    }
    let n_valid = ((b * n as f64 + 1e-9).floor() as usize).max(1);
    let n_test = ((c * n as f64 + 1e-9).floor() as usize).max(1);
    if n_valid + n_test >= n {
        return Err(Error::structural(format!("{n} dialogues leave no training data at ratios {ratios:?}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| records[x].id.cmp(&records[y].id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let n_train = n - n_valid - n_test;
    Ok(Splits {
        train: take(&order[..n_train]),
        valid: take(&order[n_train..n_train + n_valid]),
        test: take(&order[n_train + n_valid..]),
    })
}

/// Every utterance and state value, for building a vocabulary.
pub fn corpus_text(records: &[DialogueRecord], schema: &Schema) -> Vec<String> {
    let mut out = Vec::new();
    for d in records {
        for t in &d.turns {
            out.push(t.turn.system.clone());
            out.push(t.turn.user.clone());
            for v in t.state.values() {
                if v.is_literal() {
                    out.push(v.as_text().to_string());
                }
            }
        }
    }
    for i in 0..schema.len() {
        out.extend(schema.ontology(i).iter().cloned());
    }
    out
}
