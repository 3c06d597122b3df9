//! Word-level vocabulary with reserved special and soft-prompt ids.
//!
//! Layout: `<unk> <s> </s> <mask>`, then the soft-prompt slots `<v1>..<vn>`,
//! then template tokens and lexical words in insertion order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const MASK: u32 = 3;
pub const SPECIAL_COUNT: usize = 4;
pub const SOFT_SLOT_BASE: u32 = SPECIAL_COUNT as u32;

const SPECIAL_TOKENS: [&str; SPECIAL_COUNT] = ["<unk>", "<s>", "</s>", "<mask>"];

/// Scaffold words used by the cloze templates.
pub const TEMPLATE_TOKENS: [&str; 5] = [".", "?", ":", "Question", "Answer"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
    soft_slots: usize,
}

impl Vocabulary {
    /// Template tokens are always added ahead of `words`; duplicates are ignored.
    pub fn build<I, S>(soft_slots: usize, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
            soft_slots,
        };
        for w in SPECIAL_TOKENS {
            vocab.push(w.to_owned());
        }
        for i in 0..soft_slots {
            vocab.push(format!("<v{}>", i + 1));
        }
        for w in TEMPLATE_TOKENS {
            vocab.push(w.to_owned());
        }
        for w in words {
            let w = w.as_ref();
            if !vocab.index.contains_key(w) {
                vocab.push(w.to_owned());
            }
        }
        vocab
    }

    fn push(&mut self, w: String) {
        self.index.insert(w.clone(), self.words.len() as u32);
        self.words.push(w);
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn soft_slots(&self) -> usize {
        self.soft_slots
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token_id(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Id of soft slot `i` (zero based).
    pub fn soft_slot_id(&self, i: usize) -> Option<u32> {
        (i < self.soft_slots).then(|| SOFT_SLOT_BASE + i as u32)
    }

    pub fn is_soft_slot(&self, id: u32) -> bool {
        id >= SOFT_SLOT_BASE && ((id - SOFT_SLOT_BASE) as usize) < self.soft_slots
    }

    /// First id after specials and soft slots.
    pub fn first_lexical_id(&self) -> u32 {
        (SPECIAL_COUNT + self.soft_slots) as u32
    }

    pub fn tokenize(&self, words: &[String]) -> Vec<u32> {
        tokenize(words, self)
    }

    pub fn detokenize(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.word(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]).to_owned())
            .collect()
    }

    /// One word per line, lexical part only; specials and slots are implied
    /// by the header line `soft_slots=<n>`.
    pub fn to_text(&self) -> String {
        let mut out = format!("soft_slots={}\n", self.soft_slots);
        let skip = SPECIAL_COUNT + self.soft_slots + TEMPLATE_TOKENS.len();
        for w in &self.words[skip..] {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let slots = header
            .strip_prefix("soft_slots=")
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("expected `soft_slots=<n>` header, got `{header}`"),
            })?;
        Ok(Vocabulary::build(slots, lines.filter(|l| !l.is_empty())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Vocabulary::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Whitespace-word lookup; unknown words map to `UNK`.
pub fn tokenize(words: &[String], vocab: &Vocabulary) -> Vec<u32> {
    words.iter().map(|w| vocab.token_id(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_words;

    #[test]
    fn lookups() {
        let v = Vocabulary::build(2, ["two", "men"]);
        let ids = v.tokenize(&split_words("two men"));
        assert_eq!(ids.len(), 2);
        assert_eq!(v.word(ids[0]), Some("two"));
        assert_eq!(v.tokenize(&split_words("zzz-unknown")), vec![UNK]);
        assert_eq!(v.detokenize(&ids), split_words("two men"));
    }

    #[test]
    fn reserved_layout() {
        let v = Vocabulary::build(3, ["a"]);
        assert_eq!(v.word(MASK), Some("<mask>"));
        assert_eq!(v.soft_slot_id(0), Some(4));
        assert_eq!(v.soft_slot_id(3), None);
        assert!(v.is_soft_slot(6));
        assert!(!v.is_soft_slot(7));
        assert_eq!(v.first_lexical_id(), 7);
        assert_eq!(v.id("?").map(|id| id >= v.first_lexical_id()), Some(true));
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::build(4, ["x", "y", "Männer"]);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("junk\n").is_err());
    }
}
