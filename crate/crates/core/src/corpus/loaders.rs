use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::Value;

use super::{Corpus, DialogueRecord, RawDialogue, SchemaSpec, TurnRecord};
use crate::error::{Error, Result};
use crate::linearize::Turn;
use crate::state::{Schema, SlotId, SlotValue};

const MULTIWOZ_SLOTS: &[(&str, &[&str])] = &[
    ("attraction", &["area", "name", "type"]),
    (
        "hotel",
        &["area", "bookday", "bookpeople", "bookstay", "internet", "name", "parking", "pricerange", "stars", "type"],
    ),
    ("restaurant", &["area", "bookday", "bookpeople", "booktime", "food", "name", "pricerange"]),
    ("taxi", &["arriveby", "departure", "destination", "leaveat"]),
    ("train", &["arriveby", "bookpeople", "day", "departure", "destination", "leaveat"]),
];

const MULTIWOZ_PAIRS: &[(&str, &str)] = &[
    ("taxi-departure", "taxi-destination"),
    ("taxi-leaveat", "taxi-arriveby"),
    ("train-departure", "train-destination"),
    ("train-leaveat", "train-arriveby"),
    ("restaurant-area", "attraction-area"),
    ("hotel-area", "restaurant-area"),
];

const EXCLUDED_DOMAINS: &[&str] = &["hospital", "police"];

/// The 30-slot schema over attraction, hotel, restaurant, taxi and train.
pub fn multiwoz_schema() -> Schema {
    let names: Vec<String> = MULTIWOZ_SLOTS
        .iter()
        .flat_map(|(d, slots)| slots.iter().map(move |s| format!("{d}-{s}")))
        .collect();
    let pairs: Vec<(SlotId, SlotId)> = MULTIWOZ_PAIRS
        .iter()
        .map(|(a, b)| (a.parse().expect("valid slot"), b.parse().expect("valid slot")))
        .collect();
    Schema::from_names(&names)
        .and_then(|s| s.with_correlated_pairs(&pairs))
        .expect("static schema is valid")
}

/// Restaurant area, food and price range.
pub fn woz_schema() -> Schema {
    Schema::from_names(&["restaurant-area", "restaurant-food", "restaurant-pricerange"]).expect("static schema is valid")
}

/// `"Hotel-Book People"` → `"hotel-bookpeople"`; bare WOZ names get the restaurant domain.
fn normalize_slot_key(key: &str, bare_domain: Option<&str>) -> String {
    let key = key.trim().to_lowercase();
    let (domain, slot) = match key.split_once('-') {
        Some((d, s)) => (d.trim().to_string(), s.to_string()),
        None => match bare_domain {
            Some(d) => (d.to_string(), key.clone()),
            None => return key,
        },
    };
    let slot: String = slot.chars().filter(|c| !c.is_whitespace() && *c != '_').collect();
    format!("{domain}-{slot}")
}

fn domain_of(key: &str) -> &str {
    key.split_once('-').map_or(key, |(d, _)| d)
}

fn lowercase_with_spans(text: &str, spans: &[(usize, usize)]) -> (String, Vec<(usize, usize)>) {
    let mut out = String::with_capacity(text.len());
    // new_index[i] = char index in the output where input char i begins.
    let mut new_index = Vec::with_capacity(text.len() + 1);
    let mut count = 0;
    for c in text.chars() {
        new_index.push(count);
        for l in c.to_lowercase() {
            out.push(l);
            count += 1;
        }
    }
    new_index.push(count);
    let spans = spans
        .iter()
        .map(|&(s, e)| (new_index.get(s).copied().unwrap_or(s), new_index.get(e).copied().unwrap_or(e)))
        .collect();
    (out, spans)
}

/// How a loader maps file contents onto a schema.
struct Profile {
    /// Schema used when the file declares none, or the only admissible one.
    default_schema: Option<Schema>,
    /// Ignore any schema the file declares.
    fixed_schema: bool,
    /// File-declared slots outside these domains are dropped.
    allowed_domains: Option<&'static [&'static str]>,
    /// Dialogues touching these domains are excluded.
    excluded_domains: &'static [&'static str],
    bare_domain: Option<&'static str>,
}

fn ingest(path: &Path, text: &str, profile: &Profile) -> Result<Corpus> {
    let fail = |record: Option<&str>, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        record: record.map(str::to_string),
        message,
    };
    let root: Value = serde_json::from_str(text).map_err(|e| fail(None, format!("invalid JSON: {e}")))?;
    let declared = match root.get("schema") {
        Some(v) if !profile.fixed_schema => {
            let raw: SchemaSpec =
                serde_json::from_value(v.clone()).map_err(|e| fail(None, format!("invalid schema: {e}")))?;
            Some(raw)
        }
        _ => None,
    };
    let schema = match (declared, &profile.default_schema) {
        (Some(mut raw), default) => {
            if let Some(allowed) = profile.allowed_domains {
                raw.slots.retain(|s| allowed.contains(&s.domain.as_str()));
                raw.ontology.retain(|k, _| allowed.contains(&domain_of(k)));
                raw.correlated_pairs
                    .retain(|(a, b)| allowed.contains(&domain_of(a)) && allowed.contains(&domain_of(b)));
            }
            let schema = raw.to_schema().map_err(|e| fail(None, e.to_string()))?;
            if raw.correlated_pairs.is_empty() {
                if let Some(d) = default {
                    let pairs: Vec<(SlotId, SlotId)> = d
                        .correlated_pairs()
                        .iter()
                        .map(|&(a, b)| (d.slot(a).clone(), d.slot(b).clone()))
                        .filter(|(a, b)| schema.index_of(a).is_some() && schema.index_of(b).is_some())
                        .collect();
                    schema.with_correlated_pairs(&pairs).map_err(|e| fail(None, e.to_string()))?
                } else {
                    schema
                }
            } else {
                schema
            }
        }
        (None, Some(d)) => {
            let mut schema = d.clone();
            if let Some(onto) = root.get("schema").and_then(|s| s.get("ontology")) {
                let raw: BTreeMap<String, Vec<String>> =
                    serde_json::from_value(onto.clone()).map_err(|e| fail(None, format!("invalid ontology: {e}")))?;
                let mut ontology = BTreeMap::new();
                for (k, v) in raw {
                    let key = normalize_slot_key(&k, profile.bare_domain);
                    let slot: SlotId = key.parse().map_err(|e: Error| fail(None, e.to_string()))?;
                    if schema.index_of(&slot).is_some() {
                        ontology.insert(slot, v);
                    }
                }
                schema = schema.with_ontology(ontology).map_err(|e| fail(None, e.to_string()))?;
            }
            schema
        }
        (None, None) => return Err(fail(None, "file declares no schema".into())),
    };

    let dialogues = root
        .get("dialogues")
        .and_then(Value::as_array)
        .ok_or_else(|| fail(None, "missing \"dialogues\" array".into()))?;
    let mut out = Vec::with_capacity(dialogues.len());
    let mut excluded = 0usize;
    for (i, v) in dialogues.iter().enumerate() {
        let label = v
            .get("id")
            .and_then(Value::as_str)
            .map_or_else(|| format!("#{i}"), str::to_string);
        let raw: RawDialogue = serde_json::from_value(v.clone()).map_err(|e| fail(Some(&label), e.to_string()))?;
        let touches_excluded = raw.domains.iter().any(|d| profile.excluded_domains.contains(&d.to_lowercase().as_str()))
            || raw.turns.iter().any(|t| {
                t.state
                    .keys()
                    .any(|k| profile.excluded_domains.contains(&domain_of(&normalize_slot_key(k, profile.bare_domain))))
            });
        if touches_excluded {
            excluded += 1;
            continue;
        }
        if raw.turns.is_empty() {
            return Err(fail(Some(&label), "dialogue has no turns".into()));
        }
        let mut turns = Vec::with_capacity(raw.turns.len());
        for (ti, t) in raw.turns.into_iter().enumerate() {
            let (system, system_name_spans) = lowercase_with_spans(&t.system, &t.system_name_spans);
            let (user, user_name_spans) = lowercase_with_spans(&t.user, &t.name_spans);
            let turn = Turn {
                system,
                user,
                system_name_spans,
                user_name_spans,
            };
            turn.validate().map_err(|e| fail(Some(&label), format!("turn {ti}: {e}")))?;
            let mut state = schema.empty_state();
            let mut unknown = BTreeSet::new();
            for (k, value) in &t.state {
                let key = normalize_slot_key(k, profile.bare_domain);
                match key.parse::<SlotId>().ok().and_then(|s| schema.index_of(&s)) {
                    Some(idx) => {
                        let v = if value.trim().eq_ignore_ascii_case("none") {
                            SlotValue::NotMentioned
                        } else {
                            SlotValue::from_text(value)
                        };
                        state.set(idx, v);
                    }
                    None => {
                        unknown.insert(k.clone());
                    }
                }
            }
            if !unknown.is_empty() {
                let list: Vec<String> = unknown.into_iter().collect();
                return Err(fail(Some(&label), format!("turn {ti}: unknown slot(s) {}", list.join(", "))));
            }
            turns.push(TurnRecord { turn, state });
        }
        out.push(DialogueRecord {
            id: raw.id,
            split: raw.split,
            turns,
        });
    }
    if excluded > 0 {
        log::info!("{}: excluded {excluded} dialogue(s) touching {:?}", path.display(), profile.excluded_domains);
    }
    Ok(Corpus { schema, dialogues: out })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses canonical JSON text; `path` is used only in error messages.
pub fn parse_canonical(path: &Path, text: &str) -> Result<Corpus> {
    ingest(
        path,
        text,
        &Profile {
            default_schema: None,
            fixed_schema: false,
            allowed_domains: None,
            excluded_domains: &[],
            bare_domain: None,
        },
    )
}

/// Canonical JSON with its own schema.
pub fn load_canonical(path: &Path) -> Result<Corpus> {
    parse_canonical(path, &read(path)?)
}

/// Canonical JSON restricted to the five MultiWOZ domains. Dialogues that
/// touch hospital or police (in a state key or the optional per-dialogue
/// `domains` list) are dropped. Without a declared schema the 30-slot
/// default is used.
pub fn load_multiwoz_like(path: &Path) -> Result<Corpus> {
    ingest(
        path,
        &read(path)?,
        &Profile {
            default_schema: Some(multiwoz_schema()),
            fixed_schema: false,
            allowed_domains: Some(&["attraction", "hotel", "restaurant", "taxi", "train"]),
            excluded_domains: EXCLUDED_DOMAINS,
            bare_domain: None,
        },
    )
}

/// Canonical JSON over the 3-slot restaurant schema. State keys may omit
/// the domain (`"price range"`); any other slot is an error.
pub fn load_woz_like(path: &Path) -> Result<Corpus> {
    ingest(
        path,
        &read(path)?,
        &Profile {
            default_schema: Some(woz_schema()),
            fixed_schema: true,
            allowed_domains: None,
            excluded_domains: &[],
            bare_domain: Some("restaurant"),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_keys_normalize() {
        assert_eq!(normalize_slot_key("Hotel-Book People", None), "hotel-bookpeople");
        assert_eq!(normalize_slot_key("price range", Some("restaurant")), "restaurant-pricerange");
        assert_eq!(normalize_slot_key("taxi-leave_at", None), "taxi-leaveat");
    }

    #[test]
    fn default_schemas() {
        assert_eq!(multiwoz_schema().len(), 30);
        assert_eq!(multiwoz_schema().domains(), ["attraction", "hotel", "restaurant", "taxi", "train"]);
        assert_eq!(woz_schema().len(), 3);
    }

    #[test]
    fn lowercasing_keeps_spans_aligned() {
        let (t, s) = lowercase_with_spans("Go to Wandlebury Park", &[(6, 21)]);
        assert_eq!(t, "go to wandlebury park");
        assert_eq!(s, [(6, 21)]);
        // 'İ' lowercases to two chars.
        let (t, s) = lowercase_with_spans("İx Ab", &[(3, 5)]);
        assert_eq!(t.chars().skip(s[0].0).take(s[0].1 - s[0].0).collect::<String>(), "ab");
    }
}
