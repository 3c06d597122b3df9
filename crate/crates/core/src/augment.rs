//! Code-switched substitution over bilingual dictionaries.
//!
//! For a sentence of `l` words, `n = round(alpha * l)` positions are
//! translated word-for-word. Positions are visited in a random order; a
//! position no configured dictionary covers is skipped and the next one is
//! tried, so fewer than `n` replacements only happen when the sentence runs
//! out of translatable words.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BilingualDictionary, NliExample};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Language tag carried by augmented examples.
pub const MIXED_LANGUAGE: &str = "mixed";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageStrategy {
    /// Each replaced word independently picks a language uniformly among the
    /// dictionaries that cover it.
    RandomPerWord,
    Fixed(String),
}

#[derive(Clone, Debug)]
pub struct CodeSwitchConfig {
    pub rate: f64,
    pub strategy: LanguageStrategy,
    pub dictionaries: Vec<BilingualDictionary>,
    pub salt: u64,
}

impl CodeSwitchConfig {
    pub fn new(
        rate: f64,
        strategy: LanguageStrategy,
        dictionaries: Vec<BilingualDictionary>,
        salt: u64,
    ) -> Result<Self> {
        let cfg = CodeSwitchConfig {
            rate,
            strategy,
            dictionaries,
            salt,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A configuration that never substitutes.
    pub fn disabled() -> Self {
        CodeSwitchConfig {
            rate: 0.0,
            strategy: LanguageStrategy::RandomPerWord,
            dictionaries: Vec::new(),
            salt: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) || self.rate.is_nan() {
            return Err(Error::Config(format!(
                "code-switch rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        if self.rate > 0.0 && self.dictionaries.is_empty() {
            return Err(Error::Config(
                "code-switch rate > 0 requires at least one dictionary".into(),
            ));
        }
        if let LanguageStrategy::Fixed(lang) = &self.strategy {
            if self.rate > 0.0 && !self.dictionaries.iter().any(|d| &d.target == lang) {
                return Err(Error::Config(format!(
                    "no dictionary translates into fixed language `{lang}`"
                )));
            }
        }
        Ok(())
    }

    fn candidates<'a>(&'a self, word: &str) -> Vec<&'a BilingualDictionary> {
        self.dictionaries
            .iter()
            .filter(|d| match &self.strategy {
                LanguageStrategy::RandomPerWord => true,
                LanguageStrategy::Fixed(lang) => &d.target == lang,
            })
            .filter(|d| d.contains(word))
            .collect()
    }
}

/// Number of targeted positions: `alpha * len`, rounded half up.
pub fn replacement_count(rate: f64, len: usize) -> usize {
    (rate * len as f64 + 0.5).floor().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchedWord {
    pub word: String,
    /// Target language of the dictionary that produced this word, if replaced.
    pub language: Option<String>,
}

pub fn code_switch_annotated<R: Rng + ?Sized>(
    words: &[String],
    cfg: &CodeSwitchConfig,
    rng: &mut R,
) -> Result<Vec<SwitchedWord>> {
    if words.is_empty() {
        return Err(Error::Invalid("cannot code-switch an empty sentence".into()));
    }
    cfg.validate()?;
    let mut out: Vec<SwitchedWord> = words
        .iter()
        .map(|w| SwitchedWord {
            word: w.clone(),
            language: None,
        })
        .collect();
    let target = replacement_count(cfg.rate, words.len());
    if target == 0 {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.shuffle(rng);
    let mut replaced = 0;
    for pos in order {
        if replaced == target {
            break;
        }
        let options = cfg.candidates(&words[pos]);
        let Some(dict) = options.choose(rng) else {
            continue;
        };
        let translation = dict.lookup(&words[pos]).expect("candidate covers word");
        out[pos] = SwitchedWord {
            word: translation.to_owned(),
            language: Some(dict.target.clone()),
        };
        replaced += 1;
    }
    Ok(out)
}

pub fn code_switch_sentence<R: Rng + ?Sized>(
    words: &[String],
    cfg: &CodeSwitchConfig,
    rng: &mut R,
) -> Result<Vec<String>> {
    Ok(code_switch_annotated(words, cfg, rng)?
        .into_iter()
        .map(|s| s.word)
        .collect())
}

/// Code-switches premise and hypothesis with independent streams derived
/// from `(seed, cfg.salt)`. The label is untouched.
pub fn augment_question(example: &NliExample, cfg: &CodeSwitchConfig, seed: u64) -> Result<NliExample> {
    let (premise, hypothesis) = augment_annotated(example, cfg, seed)?;
    Ok(NliExample {
        premise: premise.into_iter().map(|s| s.word).collect(),
        hypothesis: hypothesis.into_iter().map(|s| s.word).collect(),
        label: example.label,
        language: MIXED_LANGUAGE.to_owned(),
    })
}

pub fn augment_annotated(
    example: &NliExample,
    cfg: &CodeSwitchConfig,
    seed: u64,
) -> Result<(Vec<SwitchedWord>, Vec<SwitchedWord>)> {
    if let Some(d) = cfg.dictionaries.iter().find(|d| d.source != example.language) {
        return Err(Error::Config(format!(
            "dictionary {}-{} does not translate from example language `{}`",
            d.source, d.target, example.language
        )));
    }
    let premise = code_switch_annotated(&example.premise, cfg, &mut rng_for(seed, &[cfg.salt, 0]))?;
    let hypothesis =
        code_switch_annotated(&example.hypothesis, cfg, &mut rng_for(seed, &[cfg.salt, 1]))?;
    Ok((premise, hypothesis))
}

fn render(words: &[SwitchedWord]) -> String {
    words
        .iter()
        .map(|w| match &w.language {
            Some(lang) => format!("{}({})", w.word, lang.to_uppercase()),
            None => w.word.clone(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One debug line: original and augmented sentences, tab separated, with
/// replaced words tagged by language, e.g. `Männer(DE)`.
pub fn debug_dump_line(example: &NliExample, premise: &[SwitchedWord], hypothesis: &[SwitchedWord]) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        example.premise.join(" "),
        render(premise),
        example.hypothesis.join(" "),
        render(hypothesis)
    )
}
