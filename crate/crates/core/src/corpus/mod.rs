//! NLI records, dataset files, bilingual dictionaries, the synthetic
//! multilingual benchmark and the few-shot sampler.

mod dataset;
mod dictionary;
mod sampler;
mod synth;

pub use dataset::{load_dataset, parse_dataset, to_jsonl, write_dataset};
pub use dictionary::{load_dictionary, parse_dictionary, BilingualDictionary, DictionaryLoad};
pub use sampler::{sample_few_shot, sample_few_shot_with_dev};
pub use synth::{
    gen_synthetic_benchmark, SplitSizes, SplitSet, SynthLanguageSpec, SyntheticBenchmark,
    CLAUSE_MARKER, NEGATOR, PIVOT_LANGUAGE,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NLI class. The declaration order is the tie-break order used at argmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Neutral, Label::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    /// Lowercase form used in dataset files.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Neutral => "neutral",
            Label::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Entailment => "Entailment",
            Label::Neutral => "Neutral",
            Label::Contradiction => "Contradiction",
        };
        f.write_str(s)
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "entailment" => Ok(Label::Entailment),
            "neutral" => Ok(Label::Neutral),
            "contradiction" => Ok(Label::Contradiction),
            other => Err(Error::Invalid(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NliExample {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
    pub language: String,
}

impl NliExample {
    pub fn new(
        premise: Vec<String>,
        hypothesis: Vec<String>,
        label: Label,
        language: impl Into<String>,
    ) -> Result<Self> {
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(Error::Invalid(
                "premise and hypothesis must each contain at least one word".into(),
            ));
        }
        Ok(NliExample {
            premise,
            hypothesis,
            label,
            language: language.into(),
        })
    }

    /// Whitespace-splits both sentences.
    pub fn from_text(premise: &str, hypothesis: &str, label: Label, language: &str) -> Result<Self> {
        NliExample::new(split_words(premise), split_words(hypothesis), label, language)
    }
}

pub fn split_words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    pub split: Split,
    pub examples: Vec<NliExample>,
}

impl LabeledDataset {
    pub fn new(split: Split, examples: Vec<NliExample>) -> Self {
        LabeledDataset { split, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for ex in &self.examples {
            counts[ex.label.index()] += 1;
        }
        counts
    }
}
