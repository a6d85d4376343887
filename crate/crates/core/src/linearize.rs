//! Mapping between structured turns/states and model input sequences.
//!
//! An input is laid out as
//! `open-marker, <con/> <sys> R <usr> U </con> (per context turn), <ds/> slot value … </ds>, close-marker`,
//! and a training target (`<ds/> … </ds> <eos>`) is appended after the close marker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{DialogueState, Schema, SlotValue, DONT_CARE, NOT_MENTIONED};
use crate::vocab::{self, Vocabulary};

/// One exchange: the system response Rₜ followed by the user utterance Uₜ.
/// Name spans are half-open character ranges into the respective utterance.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Turn {
    pub system: String,
    pub user: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub system_name_spans: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_name_spans: Vec<(usize, usize)>,
}

impl Turn {
    pub fn new(system: &str, user: &str) -> Result<Self> {
        let t = Turn {
            system: system.to_string(),
            user: user.to_string(),
            ..Default::default()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_user_spans(mut self, spans: Vec<(usize, usize)>) -> Result<Self> {
        self.user_name_spans = spans;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.user.trim().is_empty() {
            return Err(Error::structural("user utterance must be nonempty"));
        }
        check_spans(&self.system, &self.system_name_spans)?;
        check_spans(&self.user, &self.user_name_spans)
    }
}

fn check_spans(text: &str, spans: &[(usize, usize)]) -> Result<()> {
    let len = text.chars().count();
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    let mut last_end = 0;
    for (i, &(start, end)) in sorted.iter().enumerate() {
        if start >= end || end > len {
            return Err(Error::structural(format!("name span [{start}, {end}) out of bounds for {len} chars")));
        }
        if i > 0 && start < last_end {
            return Err(Error::structural("name spans overlap"));
        }
        last_end = end;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    System,
    User,
    State,
    Marker,
}

impl Role {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Context,
    State,
}

impl Segment {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PassKind {
    Basic,
    Amending,
}

impl PassKind {
    pub fn markers(self) -> (&'static str, &'static str) {
        match self {
            PassKind::Basic => (vocab::GEN_OPEN, vocab::GEN_CLOSE),
            PassKind::Amending => (vocab::AMEND_OPEN, vocab::AMEND_CLOSE),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    CurrentTurn,
    FullHistory,
}

/// Special-token groups that can be switched off for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenToggles {
    /// Drop `<name/>` / `</name>` around candidate entity names.
    #[serde(default)]
    pub no_name: bool,
    /// Drop `<con/>`, `</con>`, `<sys>` and `<usr>`.
    #[serde(default)]
    pub no_utterance: bool,
    /// Drop `<ds/>` / `</ds>`.
    #[serde(default)]
    pub no_state: bool,
}

impl TokenToggles {
    /// The token that ends a generated state.
    pub fn stop_token(&self) -> &'static str {
        if self.no_state {
            vocab::EOS
        } else {
            vocab::DS_CLOSE
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutOptions {
    pub context_mode: ContextMode,
    /// When false the basic pass carries no conditioning state at all.
    pub state_memory: bool,
    pub toggles: TokenToggles,
    pub max_len: usize,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        Self {
            context_mode: ContextMode::CurrentTurn,
            state_memory: true,
            toggles: TokenToggles::default(),
            max_len: usize::MAX,
        }
    }
}

/// Token ids with aligned position, role, segment and loss-mask annotations.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TaggedSequence {
    token_ids: Vec<u32>,
    positions: Vec<usize>,
    roles: Vec<Role>,
    segments: Vec<Segment>,
    target_mask: Vec<bool>,
}

impl TaggedSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(token_ids: Vec<u32>, roles: Vec<Role>, segments: Vec<Segment>, target_mask: Vec<bool>) -> Result<Self> {
        let n = token_ids.len();
        if roles.len() != n || segments.len() != n || target_mask.len() != n {
            return Err(Error::structural("tagged sequence annotation lengths differ"));
        }
        if target_mask.iter().zip(&segments).any(|(&m, &s)| m && s != Segment::State) {
            return Err(Error::structural("target mask set outside the state segment"));
        }
        Ok(Self {
            token_ids,
            positions: (0..n).collect(),
            roles,
            segments,
            target_mask,
        })
    }

    pub fn push(&mut self, token: u32, role: Role, segment: Segment, target: bool) {
        debug_assert!(!target || segment == Segment::State);
        self.positions.push(self.token_ids.len());
        self.token_ids.push(token);
        self.roles.push(role);
        self.segments.push(segment);
        self.target_mask.push(target);
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn target_mask(&self) -> &[bool] {
        &self.target_mask
    }

    pub fn target_count(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }

    /// Replaces one token id; used by tests that perturb sequences.
    pub fn set_token(&mut self, idx: usize, token: u32) {
        self.token_ids[idx] = token;
    }

    pub fn set_role(&mut self, idx: usize, role: Role) {
        self.roles[idx] = role;
    }

    pub fn set_segment(&mut self, idx: usize, segment: Segment) {
        self.segments[idx] = segment;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Piece {
    token: String,
    role: Role,
    segment: Segment,
}

fn piece(token: &str, role: Role, segment: Segment) -> Piece {
    Piece {
        token: token.to_string(),
        role,
        segment,
    }
}

/// Inserts name markers around the given character spans.
fn mark_names(text: &str, spans: &[(usize, usize)]) -> String {
    if spans.is_empty() {
        return text.to_string();
    }
    let mut starts: Vec<usize> = spans.iter().map(|s| s.0).collect();
    let mut ends: Vec<usize> = spans.iter().map(|s| s.1).collect();
    starts.sort_unstable();
    ends.sort_unstable();
    let mut out = String::with_capacity(text.len() + spans.len() * 18);
    let chars: Vec<char> = text.chars().collect();
    for i in 0..=chars.len() {
        if ends.binary_search(&i).is_ok() {
            out.push_str(" </name> ");
        }
        if starts.binary_search(&i).is_ok() {
            out.push_str(" <name/> ");
        }
        if let Some(&c) = chars.get(i) {
            out.push(c);
        }
    }
    out
}

fn utterance_pieces<S: AsRef<str>>(text: &str, spans: &[(usize, usize)], role: Role, toggles: &TokenToggles, specials: &[S]) -> Vec<Piece> {
    let marked = if toggles.no_name { text.to_string() } else { mark_names(text, spans) };
    vocab::tokenize(&marked, specials)
        .into_iter()
        .filter(|t| !(toggles.no_name && (t == vocab::NAME_OPEN || t == vocab::NAME_CLOSE)))
        .map(|token| Piece {
            token,
            role,
            segment: Segment::Context,
        })
        .collect()
}

fn turn_pieces<S: AsRef<str>>(turn: &Turn, toggles: &TokenToggles, specials: &[S]) -> Vec<Piece> {
    let mut out = Vec::new();
    let marker = |t: &str| piece(t, Role::Marker, Segment::Context);
    if !toggles.no_utterance {
        out.push(marker(vocab::CON_OPEN));
        out.push(marker(vocab::SYS));
    }
    out.extend(utterance_pieces(&turn.system, &turn.system_name_spans, Role::System, toggles, specials));
    if !toggles.no_utterance {
        out.push(marker(vocab::USR));
    }
    out.extend(utterance_pieces(&turn.user, &turn.user_name_spans, Role::User, toggles, specials));
    if !toggles.no_utterance {
        out.push(marker(vocab::CON_CLOSE));
    }
    out
}

fn state_pieces(state: &DialogueState, schema: &Schema, toggles: &TokenToggles) -> Vec<Piece> {
    let mut out = Vec::with_capacity(2 + 2 * schema.len());
    if !toggles.no_state {
        out.push(piece(vocab::DS_OPEN, Role::Marker, Segment::State));
    }
    for (slot, value) in schema.slots().iter().zip(state.values()) {
        out.push(piece(&slot.token(), Role::State, Segment::State));
        match value {
            SlotValue::Literal(text) => {
                out.extend(text.split_whitespace().map(|w| piece(w, Role::State, Segment::State)));
            }
            other => out.push(piece(other.as_text(), Role::State, Segment::State)),
        }
    }
    if !toggles.no_state {
        out.push(piece(vocab::DS_CLOSE, Role::Marker, Segment::State));
    }
    out
}

/// `<con/> <sys> R <usr> U </con>` with `<name/> … </name>` around name spans.
pub fn serialize_turn(turn: &Turn, toggles: &TokenToggles) -> Vec<String> {
    let specials = [vocab::NAME_OPEN, vocab::NAME_CLOSE];
    turn_pieces(turn, toggles, &specials).into_iter().map(|p| p.token).collect()
}

/// `<ds/>`, then each slot token followed by its value tokens in schema order, then `</ds>`.
pub fn serialize_state(state: &DialogueState, schema: &Schema, toggles: &TokenToggles) -> Vec<String> {
    state_pieces(state, schema, toggles).into_iter().map(|p| p.token).collect()
}

fn is_markup(token: &str) -> bool {
    token.len() > 2 && token.starts_with('<') && token.ends_with('>')
}

/// Slot-token-anchored parse of a generated state. Total: every anomaly
/// becomes a warning and missing slots take the fallback's value.
pub fn parse_state<S: AsRef<str>>(tokens: &[S], schema: &Schema, fallback: &DialogueState) -> (DialogueState, Vec<String>) {
    let mut warnings = Vec::new();
    let slot_tokens: Vec<String> = schema.slots().iter().map(|s| s.token()).collect();
    let mut spans: Vec<Option<Vec<&str>>> = vec![None; schema.len()];
    let mut current: Option<usize> = None;
    let mut collected: Vec<&str> = Vec::new();

    fn flush<'a>(schema: &Schema, current: Option<usize>, collected: &mut Vec<&'a str>, spans: &mut [Option<Vec<&'a str>>], warnings: &mut Vec<String>) {
        if let Some(idx) = current {
            if spans[idx].is_some() {
                warnings.push(format!("slot {} generated more than once; last occurrence kept", schema.slot(idx)));
            }
            spans[idx] = Some(std::mem::take(collected));
        }
        collected.clear();
    }

    for tok in tokens.iter().map(AsRef::as_ref) {
        if tok == vocab::DS_CLOSE || tok == vocab::EOS {
            break;
        }
        if let Some(idx) = slot_tokens.iter().position(|s| s == tok) {
            flush(schema, current, &mut collected, &mut spans, &mut warnings);
            current = Some(idx);
        } else if current.is_some() {
            collected.push(tok);
        }
    }
    flush(schema, current, &mut collected, &mut spans, &mut warnings);

    let mut state = fallback.clone();
    for (idx, span) in spans.into_iter().enumerate() {
        let slot = schema.slot(idx);
        match span {
            None => warnings.push(format!("slot {slot} missing from generated state; fallback value used")),
            Some(words) => state.set(idx, parse_value(&words, slot, &mut warnings)),
        }
    }
    (state, warnings)
}

fn parse_value(words: &[&str], slot: &crate::state::SlotId, warnings: &mut Vec<String>) -> SlotValue {
    match words {
        [] => {
            warnings.push(format!("slot {slot} has an empty value; treated as not mentioned"));
            SlotValue::NotMentioned
        }
        [NOT_MENTIONED] => SlotValue::NotMentioned,
        [DONT_CARE] => SlotValue::DontCare,
        _ => {
            let plain: Vec<&str> = words.iter().copied().filter(|w| !is_markup(w)).collect();
            if plain.len() != words.len() {
                warnings.push(format!("slot {slot} value mixes markup with words; markup dropped"));
            }
            if plain.is_empty() {
                if words.contains(&DONT_CARE) {
                    SlotValue::DontCare
                } else {
                    SlotValue::NotMentioned
                }
            } else {
                SlotValue::from_text(&plain.join(" "))
            }
        }
    }
}

/// Builds the model input for one pass.
///
/// Returns the sequence and any truncation warnings. Oldest history turns
/// are dropped first; the current turn and conditioning state never are.
pub fn build_pass_input(
    pass: PassKind,
    turn: &Turn,
    conditioning_state: &DialogueState,
    schema: &Schema,
    options: &LayoutOptions,
    history: &[Turn],
    vocab: &Vocabulary,
) -> Result<(TaggedSequence, Vec<String>)> {
    conditioning_state.check_schema(schema)?;
    let specials = vocab.specials();
    let toggles = &options.toggles;

    let mut context: Vec<Vec<Piece>> = Vec::new();
    if options.context_mode == ContextMode::FullHistory {
        context.extend(history.iter().map(|t| turn_pieces(t, toggles, specials)));
    }
    context.push(turn_pieces(turn, toggles, specials));

    let include_state = pass == PassKind::Amending || options.state_memory;
    let state = if include_state {
        state_pieces(conditioning_state, schema, toggles)
    } else {
        Vec::new()
    };

    let mut warnings = Vec::new();
    let fixed = 2 + state.len();
    let mut total = fixed + context.iter().map(Vec::len).sum::<usize>();
    let mut first = 0;
    while total > options.max_len && first + 1 < context.len() {
        total -= context[first].len();
        first += 1;
        warnings.push("input exceeds max length; dropped oldest history turn".to_string());
    }
    if total > options.max_len {
        return Err(Error::Contract(format!(
            "current turn and conditioning state need {total} tokens, limit is {}",
            options.max_len
        )));
    }

    let (open, close) = pass.markers();
    let mut seq = TaggedSequence::new();
    let mut push = |p: &Piece| {
        let id = vocab.id(&p.token).unwrap_or(vocab.unk_id());
        seq.push(id, p.role, p.segment, false);
    };
    push(&piece(open, Role::Marker, Segment::Context));
    for p in context[first..].iter().flatten() {
        push(p);
    }
    for p in &state {
        push(p);
    }
    push(&piece(close, Role::Marker, Segment::Context));
    Ok((seq, warnings))
}

/// Appends `serialize_state(gold) <eos>` as the loss-bearing target.
pub fn append_target(input: &TaggedSequence, gold: &DialogueState, schema: &Schema, toggles: &TokenToggles, vocab: &Vocabulary) -> Result<TaggedSequence> {
    if input.target_mask.iter().any(|&m| m) {
        return Err(Error::Contract("append_target requires an input without target tokens".into()));
    }
    gold.check_schema(schema)?;
    let mut seq = input.clone();
    for tok in serialize_state(gold, schema, toggles) {
        seq.push(vocab.id(&tok).unwrap_or(vocab.unk_id()), Role::State, Segment::State, true);
    }
    seq.push(vocab.special_id(vocab::EOS), Role::State, Segment::State, true);
    Ok(seq)
}
