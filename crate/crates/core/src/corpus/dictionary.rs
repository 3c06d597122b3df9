use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Word-to-word translations from `source` into `target`.
///
/// Keys are stored lowercase and lookups lowercase the query; the stored
/// translation keeps its original casing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BilingualDictionary {
    pub source: String,
    pub target: String,
    entries: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct DictionaryLoad {
    pub dictionary: BilingualDictionary,
    pub loaded: usize,
    pub skipped: usize,
}

impl BilingualDictionary {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        BilingualDictionary {
            source: source.into(),
            target: target.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Builds from pairs; the first occurrence of a source word wins and
    /// pairs with an empty side are dropped.
    pub fn from_pairs<I, A, B>(source: &str, target: &str, pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut dict = BilingualDictionary::new(source, target);
        for (a, b) in pairs {
            dict.insert(a.as_ref(), b.as_ref());
        }
        dict
    }

    /// Returns false when the pair was rejected (empty side or duplicate key).
    pub fn insert(&mut self, word: &str, translation: &str) -> bool {
        let key = word.trim().to_lowercase();
        let value = translation.trim();
        if key.is_empty() || value.is_empty() || self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, value.to_owned());
        true
    }

    pub fn lookup(&self, word: &str) -> Option<&str> {
        self.entries.get(&word.to_lowercase()).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.lookup(word).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Word-for-word translation; untranslatable words are kept.
    pub fn translate_words(&self, words: &[String]) -> Vec<String> {
        words
            .iter()
            .map(|w| self.lookup(w).map_or_else(|| w.clone(), str::to_owned))
            .collect()
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.entries.values().all(|v| seen.insert(v.to_lowercase()))
    }

    /// Reverse direction; only meaningful for injective dictionaries.
    pub fn inverse(&self) -> BilingualDictionary {
        BilingualDictionary::from_pairs(
            &self.target,
            &self.source,
            self.entries.iter().map(|(k, v)| (v.as_str(), k.as_str())),
        )
    }

    /// MUSE-style `source<TAB>target` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('\t');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

pub fn parse_dictionary(text: &str, source: &str, target: &str) -> Result<DictionaryLoad> {
    if text.trim().is_empty() {
        return Err(Error::Invalid(format!(
            "dictionary {source}-{target} is empty"
        )));
    }
    let mut dictionary = BilingualDictionary::new(source, target);
    let mut loaded = 0;
    let mut skipped = 0;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if raw.contains('\t') {
            raw.split('\t').collect()
        } else {
            raw.split_whitespace().collect()
        };
        match fields.as_slice() {
            [a, b] if !a.trim().is_empty() && !b.trim().is_empty() => {
                if dictionary.insert(a, b) {
                    loaded += 1;
                }
            }
            _ => {
                warn!("dictionary {source}-{target}: skipping malformed line {}", i + 1);
                skipped += 1;
            }
        }
    }
    if loaded == 0 {
        return Err(Error::Invalid(format!(
            "dictionary {source}-{target} has no valid entries"
        )));
    }
    Ok(DictionaryLoad {
        dictionary,
        loaded,
        skipped,
    })
}

pub fn load_dictionary(path: impl AsRef<Path>, source: &str, target: &str) -> Result<DictionaryLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text, source, target)
}
