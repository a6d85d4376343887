//! Special-token registry, word tokenizer and token ↔ id mapping.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::state::{Schema, SlotId, DONT_CARE, NOT_MENTIONED};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const GEN_OPEN: &str = "<gen/>";
pub const GEN_CLOSE: &str = "</gen>";
pub const AMEND_OPEN: &str = "<amend/>";
pub const AMEND_CLOSE: &str = "</amend>";
pub const CON_OPEN: &str = "<con/>";
pub const CON_CLOSE: &str = "</con>";
pub const SYS: &str = "<sys>";
pub const USR: &str = "<usr>";
pub const DS_OPEN: &str = "<ds/>";
pub const DS_CLOSE: &str = "</ds>";
pub const NAME_OPEN: &str = "<name/>";
pub const NAME_CLOSE: &str = "</name>";

const VOCAB_HEADER: &str = "# agdst-vocab v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PassMarker {
    GenOpen,
    GenClose,
    AmendOpen,
    AmendClose,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SpecialKind {
    PassMarker(PassMarker),
    ContextBoundary,
    Role,
    StateBoundary,
    SlotName(SlotId),
    ValueSentinel,
    NameBoundary,
    Pad,
    EndOfSequence,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecialToken {
    pub surface: String,
    pub kind: SpecialKind,
}

/// The schema-independent leading block of the vocabulary, in id order.
pub fn fixed_specials() -> Vec<SpecialToken> {
    use SpecialKind::*;
    let entries: [(&str, SpecialKind); 16] = [
        (PAD, Pad),
        (EOS, EndOfSequence),
        (GEN_OPEN, PassMarker(self::PassMarker::GenOpen)),
        (GEN_CLOSE, PassMarker(self::PassMarker::GenClose)),
        (AMEND_OPEN, PassMarker(self::PassMarker::AmendOpen)),
        (AMEND_CLOSE, PassMarker(self::PassMarker::AmendClose)),
        (CON_OPEN, ContextBoundary),
        (CON_CLOSE, ContextBoundary),
        (SYS, Role),
        (USR, Role),
        (DS_OPEN, StateBoundary),
        (DS_CLOSE, StateBoundary),
        (NOT_MENTIONED, ValueSentinel),
        (DONT_CARE, ValueSentinel),
        (NAME_OPEN, NameBoundary),
        (NAME_CLOSE, NameBoundary),
    ];
    entries
        .into_iter()
        .map(|(surface, kind)| SpecialToken {
            surface: surface.to_string(),
            kind,
        })
        .collect()
}

/// Fixed specials followed by one `<domain-slot>` token per schema slot.
pub fn special_registry(schema: &Schema) -> Vec<SpecialToken> {
    let mut specials = fixed_specials();
    specials.extend(schema.slots().iter().map(|s| SpecialToken {
        surface: s.token(),
        kind: SpecialKind::SlotName(s.clone()),
    }));
    specials
}

/// Whitespace split; registered special surfaces are split out atomically,
/// even when glued to neighbouring text.
pub fn tokenize<S: AsRef<str>>(text: &str, specials: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if !chunk.contains('<') {
            out.push(chunk.to_string());
            continue;
        }
        let mut pending = String::new();
        let mut rest = chunk;
        while !rest.is_empty() {
            let matched = specials
                .iter()
                .map(AsRef::as_ref)
                .filter(|s| rest.starts_with(*s))
                .max_by_key(|s| s.len());
            if let Some(special) = matched {
                if !pending.is_empty() {
                    out.push(std::mem::take(&mut pending));
                }
                out.push(special.to_string());
                rest = &rest[special.len()..];
            } else {
                let c = rest.chars().next().expect("nonempty");
                pending.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
        if !pending.is_empty() {
            out.push(pending);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    special_count: usize,
    unk: u32,
}

impl Vocabulary {
    /// Specials, then `<unk>`, then every word with frequency ≥ `min_freq`
    /// ordered by descending frequency and then lexicographically.
    pub fn build<I, S>(corpus_text: I, schema: &Schema, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_freq == 0 {
            return Err(Error::config("min_freq must be at least 1"));
        }
        let specials: Vec<String> = special_registry(schema).into_iter().map(|s| s.surface).collect();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus_text {
            for tok in tokenize(text.as_ref(), &specials) {
                if tok != UNK && !specials.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = specials;
        let special_count = tokens.len();
        tokens.push(UNK.to_string());
        tokens.extend(words.into_iter().map(|(w, _)| w));
        Ok(Self::from_tokens(tokens, special_count))
    }

    fn from_tokens(tokens: Vec<String>, special_count: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            special_count,
            unk: special_count as u32,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of special tokens (fixed block plus slot tokens), excluding `<unk>`.
    pub fn special_count(&self) -> usize {
        self.special_count
    }

    pub fn specials(&self) -> &[String] {
        &self.tokens[..self.special_count]
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.special_count
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of a registered special; panics on an unregistered surface.
    pub fn special_id(&self, surface: &str) -> u32 {
        match self.index.get(surface) {
            Some(&id) if (id as usize) < self.special_count => id,
            _ => panic!("{surface} is not a registered special token"),
        }
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text, self.specials())
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(self.unk))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::structural(format!("token id {id} out of range (vocabulary size {})", self.len())))
            })
            .collect()
    }

    /// The vocabulary file: a version header, then one token per line (id = line index after the header).
    pub fn to_file_string(&self) -> String {
        let mut s = String::with_capacity(self.tokens.len() * 8);
        s.push_str(VOCAB_HEADER);
        s.push('\n');
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(VOCAB_HEADER) => {}
            other => {
                return Err(Error::structural(format!(
                    "vocabulary header {other:?} does not match {VOCAB_HEADER:?}"
                )))
            }
        }
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        let fixed = fixed_specials();
        if tokens.len() <= fixed.len() || tokens[..fixed.len()].iter().zip(&fixed).any(|(t, f)| *t != f.surface) {
            return Err(Error::structural("vocabulary file does not start with the special-token block"));
        }
        let unk = tokens
            .iter()
            .position(|t| t == UNK)
            .ok_or_else(|| Error::structural("vocabulary file has no <unk> token"))?;
        for t in &tokens[fixed.len()..unk] {
            let inner = t
                .strip_prefix('<')
                .and_then(|r| r.strip_suffix('>'))
                .ok_or_else(|| Error::structural(format!("{t:?} in the special block is not a slot token")))?;
            inner.parse::<SlotId>()?;
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = tokens.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(Error::structural(format!("duplicate token {dup:?} in vocabulary file")));
        }
        Ok(Self::from_tokens(tokens, unk))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }

    /// Hex SHA-256 of the vocabulary file contents.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that every slot token of `schema` is registered.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        for s in schema.slots() {
            match self.id(&s.token()) {
                Some(id) if self.is_special(id) => {}
                _ => return Err(Error::structural(format!("vocabulary lacks slot token for {s}"))),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::from_names(&["restaurant-area", "restaurant-people"]).unwrap()
    }

    #[test]
    fn registry_contents() {
        let reg = special_registry(&schema());
        assert_eq!(reg.len(), 16 + 2);
        let surfaces: Vec<&str> = reg.iter().map(|s| s.surface.as_str()).collect();
        for s in [
            "<gen/>", "</gen>", "<amend/>", "</amend>", "<con/>", "</con>", "<sys>", "<usr>", "<ds/>", "</ds>",
            "<nm>", "<dc>", "<name/>", "</name>", "<restaurant-area>", "<restaurant-people>",
        ] {
            assert!(surfaces.contains(&s), "{s} missing");
        }
        let mut uniq = surfaces.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), surfaces.len());
    }

    #[test]
    fn frequency_threshold() {
        let v = Vocabulary::build(["book a table", "a table for two"], &schema(), 2).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("table").is_some());
        assert!(v.id("book").is_none());
        assert_eq!(v.len(), v.special_count() + 1 + 2);
    }

    #[test]
    fn empty_corpus() {
        let v = Vocabulary::build(Vec::<String>::new(), &schema(), 1).unwrap();
        assert_eq!(v.len(), special_registry(&schema()).len() + 1);
        assert!(Vocabulary::build(["x"], &schema(), 0).is_err());
    }

    #[test]
    fn deterministic_ids() {
        let corpus = ["i want cheap food", "the food is cheap", "north please"];
        let a = Vocabulary::build(corpus, &schema(), 1).unwrap();
        let b = Vocabulary::build(corpus, &schema(), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn tokenizer_cases() {
        let v = Vocabulary::build(["x"], &schema(), 1).unwrap();
        assert_eq!(v.tokenize("i will be dining alone"), ["i", "will", "be", "dining", "alone"]);
        assert_eq!(v.tokenize("<name/> kettle's yard </name>"), ["<name/>", "kettle's", "yard", "</name>"]);
        assert_eq!(v.tokenize("<name/>kettle's yard</name>"), ["<name/>", "kettle's", "yard", "</name>"]);
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("a <b> c"), ["a", "<b>", "c"]);
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::build(["hello there"], &schema(), 1).unwrap();
        let toks = ["<ds/>", "<restaurant-area>", "hello", "</ds>"];
        let ids = v.encode(&toks);
        assert_eq!(v.decode(&ids).unwrap(), toks);
        assert_eq!(v.encode(&["zebra"]), vec![v.unk_id()]);
        assert!(v.decode(&[v.len() as u32]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(["hello there", "there"], &schema(), 1).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("# agdst-vocab v1\n<pad>\n"));
        let back = Vocabulary::from_file_string(&text).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_file_string("<pad>\n").is_err());
    }
}
