//! Label -> answer-word maps, one per language, and the reduction of a
//! mask-token distribution to class scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BilingualDictionary, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::Vocabulary;

pub const ENGLISH: &str = "en";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verbalizer {
    pub language: String,
    /// Answer-word ids indexed by `Label::index`.
    ids: [u32; 3],
}

impl Verbalizer {
    pub fn new(language: impl Into<String>, ids: [u32; 3], vocab_size: usize) -> Result<Self> {
        let language = language.into();
        if ids.iter().any(|&i| i as usize >= vocab_size) {
            return Err(Error::Config(format!(
                "verbalizer for `{language}` references ids outside the vocabulary"
            )));
        }
        if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
            return Err(Error::Config(format!(
                "verbalizer for `{language}` maps two labels to the same answer word"
            )));
        }
        Ok(Verbalizer { language, ids })
    }

    /// Resolves answer words (in label order) against the vocabulary.
    pub fn from_words(language: &str, words: [&str; 3], vocab: &Vocabulary) -> Result<Self> {
        let mut ids = [0u32; 3];
        for (slot, w) in ids.iter_mut().zip(words) {
            *slot = vocab.id(w).ok_or_else(|| {
                Error::Config(format!("answer word `{w}` for `{language}` is not in the vocabulary"))
            })?;
        }
        Verbalizer::new(language, ids, vocab.len())
    }

    pub fn index(&self, label: Label) -> u32 {
        self.ids[label.index()]
    }

    pub fn ids(&self) -> [u32; 3] {
        self.ids
    }
}

/// Entailment -> "yes", Contradiction -> "no", Neutral -> "maybe".
pub fn default_english(vocab: &Vocabulary) -> Result<Verbalizer> {
    default_verbalizer(ENGLISH, vocab)
}

pub fn default_verbalizer(language: &str, vocab: &Vocabulary) -> Result<Verbalizer> {
    Verbalizer::from_words(language, english_words(), vocab)
}

/// English answer words in label order.
pub fn english_words() -> [&'static str; 3] {
    let mut words = [""; 3];
    words[Label::Entailment.index()] = "yes";
    words[Label::Contradiction.index()] = "no";
    words[Label::Neutral.index()] = "maybe";
    words
}

/// Translates each answer word of `base` through `dict` and resolves it in
/// `vocab`. The result is tagged with the dictionary's target language.
pub fn translate_verbalizer(base: &Verbalizer, dict: &BilingualDictionary, vocab: &Vocabulary) -> Result<Verbalizer> {
    let mut ids = [0u32; 3];
    for label in Label::ALL {
        let word = vocab.word(base.index(label)).ok_or_else(|| {
            Error::Config(format!("base verbalizer id {} not in vocabulary", base.index(label)))
        })?;
        let translated = dict.lookup(word).ok_or_else(|| {
            Error::Config(format!(
                "dictionary {}-{} has no translation for answer word `{word}`",
                dict.source, dict.target
            ))
        })?;
        ids[label.index()] = vocab.id(translated).ok_or_else(|| {
            Error::Config(format!("translated answer word `{translated}` is not in the vocabulary"))
        })?;
    }
    Verbalizer::new(dict.target.clone(), ids, vocab.len())
}

/// Evaluation-time choice of verbalizers, resolved per test language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalScoring {
    #[default]
    AverageAllLanguages,
    /// The verbalizer of the question's language, or the pivot's when that
    /// language has none.
    TargetLanguage,
}

impl EvalScoring {
    pub fn resolve(self, language: &str, mv: &MultilingualVerbalizer) -> ClassScoreMode {
        match self {
            EvalScoring::AverageAllLanguages => ClassScoreMode::AverageAllLanguages,
            EvalScoring::TargetLanguage if mv.get(language).is_some() => {
                ClassScoreMode::SingleLanguage(language.to_owned())
            }
            EvalScoring::TargetLanguage => ClassScoreMode::SingleLanguage(mv.pivot.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultilingualVerbalizer {
    pub pivot: String,
    verbalizers: BTreeMap<String, Verbalizer>,
}

impl MultilingualVerbalizer {
    pub fn new(pivot: Verbalizer) -> Self {
        let mut verbalizers = BTreeMap::new();
        let name = pivot.language.clone();
        verbalizers.insert(name.clone(), pivot);
        MultilingualVerbalizer {
            pivot: name,
            verbalizers,
        }
    }

    /// Pivot verbalizer plus one translated verbalizer per dictionary.
    pub fn from_dictionaries(pivot: Verbalizer, dicts: &[BilingualDictionary], vocab: &Vocabulary) -> Result<Self> {
        let mut mv = MultilingualVerbalizer::new(pivot);
        for d in dicts {
            let v = translate_verbalizer(mv.pivot_verbalizer(), d, vocab)?;
            mv.insert(v);
        }
        Ok(mv)
    }

    pub fn insert(&mut self, v: Verbalizer) {
        self.verbalizers.insert(v.language.clone(), v);
    }

    /// Drops a non-pivot language; the pivot is always kept.
    pub fn remove(&mut self, language: &str) -> Option<Verbalizer> {
        if language == self.pivot {
            return None;
        }
        self.verbalizers.remove(language)
    }

    pub fn pivot_only(&self) -> MultilingualVerbalizer {
        MultilingualVerbalizer::new(self.pivot_verbalizer().clone())
    }

    pub fn pivot_verbalizer(&self) -> &Verbalizer {
        &self.verbalizers[&self.pivot]
    }

    pub fn get(&self, language: &str) -> Option<&Verbalizer> {
        self.verbalizers.get(language)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.verbalizers.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Verbalizer> {
        self.verbalizers.values()
    }

    pub fn len(&self) -> usize {
        self.verbalizers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbalizers.is_empty()
    }

    pub fn answer_index(&self, language: &str, label: Label) -> Result<u32> {
        self.get(language)
            .map(|v| v.index(label))
            .ok_or_else(|| Error::UnknownLanguage(language.to_owned()))
    }

    /// Every answer id across languages, sorted and deduplicated.
    pub fn answer_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.iter().flat_map(|v| v.ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn to_jsonl(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for v in self.iter() {
            let word = |l: Label| vocab.word(v.index(l)).unwrap_or_default().to_owned();
            let rec = VerbalizerRecord {
                language: v.language.clone(),
                entailment: word(Label::Entailment),
                neutral: word(Label::Neutral),
                contradiction: word(Label::Contradiction),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// One JSON record per language: `{language, entailment, neutral, contradiction}`.
    pub fn parse(text: &str, pivot: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut found = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let rec: VerbalizerRecord = serde_json::from_str(raw).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let mut words = [""; 3];
            words[Label::Entailment.index()] = &rec.entailment;
            words[Label::Neutral.index()] = &rec.neutral;
            words[Label::Contradiction.index()] = &rec.contradiction;
            found.push(Verbalizer::from_words(&rec.language, words, vocab)?);
        }
        let pos = found
            .iter()
            .position(|v| v.language == pivot)
            .ok_or_else(|| Error::Config(format!("verbalizer file has no entry for pivot `{pivot}`")))?;
        let mut mv = MultilingualVerbalizer::new(found.remove(pos));
        for v in found {
            mv.insert(v);
        }
        Ok(mv)
    }

    pub fn load(path: impl AsRef<Path>, pivot: &str, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MultilingualVerbalizer::parse(&text, pivot, vocab)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerbalizerRecord {
    language: String,
    entailment: String,
    neutral: String,
    contradiction: String,
}

/// Which verbalizers reduce a distribution to class scores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClassScoreMode {
    AverageAllLanguages,
    SingleLanguage(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores<T> {
    /// Indexed by `Label::index`.
    pub scores: [T; 3],
    pub predicted: Label,
}

/// First maximum in label order.
pub fn argmax_label<T: Scalar>(scores: &[T; 3]) -> Label {
    let mut best = 0;
    for i in 1..3 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Label::ALL[best]
}

pub fn class_scores<T: Scalar>(
    dist: &[T],
    mv: &MultilingualVerbalizer,
    mode: &ClassScoreMode,
) -> Result<ClassScores<T>> {
    let total: f64 = dist.iter().map(|p| p.to_f64_lossy()).sum();
    if (total - 1.0).abs() > 1e-6 || dist.iter().any(|p| *p < T::zero()) {
        return Err(Error::Invalid(format!(
            "class scores need a probability vector (sum {total})"
        )));
    }
    let pick = |v: &Verbalizer, label: Label| -> Result<T> {
        dist.get(v.index(label) as usize).copied().ok_or(Error::LengthMismatch {
            expected: v.index(label) as usize + 1,
            found: dist.len(),
        })
    };
    let mut scores = [T::zero(); 3];
    match mode {
        ClassScoreMode::AverageAllLanguages => {
            let n = T::of(mv.len() as f64);
            for label in Label::ALL {
                let mut acc = T::zero();
                for v in mv.iter() {
                    acc = acc + pick(v, label)?;
                }
                scores[label.index()] = acc / n;
            }
        }
        ClassScoreMode::SingleLanguage(lang) => {
            let v = mv
                .get(lang)
                .ok_or_else(|| Error::UnknownLanguage(lang.clone()))?;
            for label in Label::ALL {
                scores[label.index()] = pick(v, label)?;
            }
        }
    }
    Ok(ClassScores {
        predicted: argmax_label(&scores),
        scores,
    })
}
