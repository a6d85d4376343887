use std::path::Path;

use agdst::corpus::synthetic::{generate_with_script, FlowMix, Phenomenon};
use agdst::corpus::{generate_synthetic, load_canonical, load_multiwoz_like, load_woz_like, parse_canonical, split, SyntheticSpec};
use agdst::state::{classify_operations, diff_states, SlotValue, StateOperation};
use agdst::Error;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        rng_seed: seed,
        dialogue_count: 120,
        ..SyntheticSpec::default()
    }
}

#[test]
fn same_seed_gives_identical_corpus() {
    let a = generate_synthetic(&small_spec(7)).unwrap().to_json();
    let b = generate_synthetic(&small_spec(7)).unwrap().to_json();
    assert_eq!(a, b);
    assert_ne!(a, generate_synthetic(&small_spec(8)).unwrap().to_json());
}

#[test]
fn default_corpus_shape() {
    let c = generate_synthetic(&SyntheticSpec::default()).unwrap();
    assert_eq!(c.dialogues.len(), 400);
    assert_eq!(c.schema.len(), 6);
    assert_eq!(c.schema.domains(), ["restaurant", "taxi"]);
    c.validate().unwrap();
    for d in &c.dialogues {
        assert!((1..=6).contains(&d.turns.len()));
        assert!(d.turns[0].turn.system.is_empty());
    }
    let words: std::collections::BTreeSet<&str> = c
        .dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .flat_map(|t| t.turn.system.split_whitespace().chain(t.turn.user.split_whitespace()))
        .collect();
    assert!((100..=400).contains(&words.len()), "{} distinct words", words.len());
}

#[test]
fn gold_states_follow_the_script() {
    let (corpus, scripts) = generate_with_script(&SyntheticSpec::default()).unwrap();
    let schema = &corpus.schema;
    let mut seen = std::collections::BTreeSet::new();
    for (d, script) in corpus.dialogues.iter().zip(&scripts) {
        assert_eq!(d.turns.len(), script.len());
        for (t, step) in script.iter().enumerate() {
            seen.insert(step.phenomenon);
            let prev = d.previous_state(t, schema);
            assert_eq!(diff_states(&prev, &d.turns[t].state).unwrap(), step.delta, "{} turn {t}", d.id);
            assert!(!step.delta.is_empty());
        }
    }
    assert_eq!(seen.len(), Phenomenon::ALL.len());
}

#[test]
fn updated_values_appear_in_the_utterance() {
    let (corpus, scripts) = generate_with_script(&SyntheticSpec::default()).unwrap();
    let schema = &corpus.schema;
    for (d, script) in corpus.dialogues.iter().zip(&scripts) {
        for (t, step) in script.iter().enumerate() {
            if step.phenomenon == Phenomenon::Coreference {
                continue;
            }
            let turn = &d.turns[t].turn;
            for (slot, value) in step.delta.iter() {
                if let SlotValue::Literal(v) = value {
                    assert!(turn.user.contains(v.as_str()), "{} turn {t}: '{v}' missing from '{}'", d.id, turn.user);
                    if ["restaurant-name", "taxi-departure", "taxi-destination"].contains(&schema.slot(slot).to_string().as_str()) {
                        let spans: Vec<String> = turn
                            .user_name_spans
                            .iter()
                            .map(|&(s, e)| turn.user.chars().skip(s).take(e - s).collect())
                            .collect();
                        assert!(spans.contains(v), "{} turn {t}: no name span for '{v}'", d.id);
                    }
                }
            }
        }
    }
}

#[test]
fn inform_only_flow_never_deletes() {
    let spec = SyntheticSpec {
        flow_mix: FlowMix::only(Phenomenon::Inform),
        ..small_spec(3)
    };
    let c = generate_synthetic(&spec).unwrap();
    for d in &c.dialogues {
        for t in 0..d.turns.len() {
            let ops = classify_operations(&d.previous_state(t, &c.schema), &d.turns[t].state).unwrap();
            assert!(ops.contains(&StateOperation::Update));
            assert!(!ops.contains(&StateOperation::Delete));
        }
    }
}

#[test]
fn coreference_resolves_to_an_earlier_entity() {
    let spec = SyntheticSpec {
        flow_mix: FlowMix {
            inform: 0.5,
            update: 0.0,
            delete: 0.0,
            dontcare: 0.0,
            correlated_confusion: 0.0,
            coreference: 0.5,
        },
        ..small_spec(11)
    };
    let (corpus, scripts) = generate_with_script(&spec).unwrap();
    let schema = &corpus.schema;
    let name = schema.require(&"restaurant-name".parse().unwrap()).unwrap();
    let mut checked = 0;
    for (d, script) in corpus.dialogues.iter().zip(&scripts) {
        for (t, step) in script.iter().enumerate() {
            if step.phenomenon != Phenomenon::Coreference {
                continue;
            }
            let (target, value) = step.delta.iter().next().unwrap();
            assert!(schema.slot(target).domain() == "taxi");
            let SlotValue::Literal(v) = value else { panic!("coreference set a non-literal") };
            assert!(!d.turns[t].turn.user.contains(v.as_str()));
            assert_eq!(d.previous_state(t, schema).get(name), value);
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn canonical_json_round_trips() {
    let c = generate_synthetic(&small_spec(5)).unwrap();
    let text = c.to_json();
    let back = parse_canonical(Path::new("mem.json"), &text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_json(), text);
}

#[test]
fn loading_twice_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    generate_synthetic(&small_spec(2)).unwrap().save(&path).unwrap();
    assert_eq!(load_canonical(&path).unwrap(), load_canonical(&path).unwrap());
}

#[test]
fn split_is_a_seeded_partition() {
    let c = generate_synthetic(&small_spec(1)).unwrap();
    let s = split(&c.dialogues, (0.8, 0.1, 0.1), 9).unwrap();
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (96, 12, 12));
    assert_eq!(split(&c.dialogues, (0.8, 0.1, 0.1), 9).unwrap(), s);
    assert_ne!(split(&c.dialogues, (0.8, 0.1, 0.1), 10).unwrap(), s);
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn multiwoz_like_drops_hospital_and_totalizes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "mw.json",
        r#"{"dialogues": [
            {"id": "a", "turns": [{"system": "", "user": "I need a Taxi to Camboats", "name_spans": [[17, 25]],
                                    "state": {"taxi-destination": "Camboats", "hotel-book people": "none"}}]},
            {"id": "b", "domains": ["hospital"], "turns": [{"user": "where is the hospital"}]},
            {"id": "c", "turns": [{"user": "call the police", "state": {"police-name": "x"}}]}
        ]}"#,
    );
    let c = load_multiwoz_like(&p).unwrap();
    assert_eq!(c.schema.len(), 30);
    assert_eq!(c.dialogues.len(), 1);
    let t = &c.dialogues[0].turns[0];
    assert_eq!(t.turn.user, "i need a taxi to camboats");
    assert_eq!(t.turn.user_name_spans, [(17, 25)]);
    let idx = c.schema.require(&"taxi-destination".parse().unwrap()).unwrap();
    assert_eq!(t.state.get(idx), &SlotValue::literal("camboats"));
    assert_eq!(t.state.values().iter().filter(|v| v.is_not_mentioned()).count(), 29);
}

#[test]
fn ingestion_errors_name_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", r#"{"dialogues": [{"id": "x1", "turns": [{"user": 5}]}]}"#);
    match load_multiwoz_like(&p) {
        Err(Error::Ingestion { path, record, .. }) => {
            assert_eq!(path, p);
            assert_eq!(record.as_deref(), Some("x1"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let p = write(dir.path(), "trunc.json", r#"{"dialogues": ["#);
    assert!(matches!(load_canonical(&p), Err(Error::Ingestion { .. })));

    let p = write(
        dir.path(),
        "woz.json",
        r#"{"dialogues": [{"id": "w", "turns": [{"user": "cheap please", "state": {"price range": "cheap", "parking": "yes"}}]}]}"#,
    );
    let err = load_woz_like(&p).unwrap_err().to_string();
    assert!(err.contains("parking") && err.contains("(record w)"), "{err}");
}

#[test]
fn woz_like_single_turn() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "woz.json",
        r#"{"dialogues": [{"id": "w", "turns": [{"user": "cheap food in the north", "state": {"price range": "cheap", "area": "north"}}]}]}"#,
    );
    let c = load_woz_like(&p).unwrap();
    assert_eq!(c.schema.len(), 3);
    assert_eq!(c.dialogues.len(), 1);
    assert_eq!(
        c.schema.state_to_map(&c.dialogues[0].turns[0].state)["restaurant-pricerange"],
        "cheap"
    );
}

#[test]
fn unsatisfiable_specs_are_rejected() {
    let spec = SyntheticSpec {
        flow_mix: FlowMix::only(Phenomenon::Update),
        ..SyntheticSpec::default()
    };
    assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
}
