//! Cloze question construction for discrete (DP), soft (SP) and mixed (MP)
//! templates:
//!
//! ```text
//! SP: <s> premise . </s> <s> hypothesis ? <v1>..<vn> <mask> </s>
//! DP: <s> premise . </s> <s> Question : hypothesis ? Answer : <mask> </s>
//! MP: <s> premise . </s> <s> Question : hypothesis ? <v1>..<vn> Answer : <mask> </s>
//! ```

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, NliExample};
use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, BOS, EOS, MASK};

pub use crate::vocab::tokenize;

pub const DEFAULT_MAX_LEN: usize = 256;
pub const DEFAULT_SOFT_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptMode {
    #[serde(rename = "dp")]
    Discrete,
    #[serde(rename = "sp")]
    Soft,
    #[serde(rename = "mp")]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub soft_len: usize,
    pub question_word: String,
    pub answer_word: String,
    pub max_len: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PromptMode::Soft,
            soft_len: DEFAULT_SOFT_LEN,
            question_word: "Question".into(),
            answer_word: "Answer".into(),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl PromptConfig {
    pub fn with_mode(mode: PromptMode, soft_len: usize) -> Self {
        PromptConfig {
            mode,
            soft_len,
            ..Default::default()
        }
    }

    /// Soft-slot count actually used; always 0 for discrete prompts.
    pub fn effective_soft_len(&self) -> usize {
        match self.mode {
            PromptMode::Discrete => 0,
            _ => self.soft_len,
        }
    }

    fn discrete(&self) -> bool {
        matches!(self.mode, PromptMode::Discrete | PromptMode::Mixed)
    }

    /// Number of template tokens around premise and hypothesis.
    pub fn overhead(&self) -> usize {
        // <s> . </s> <s> ? <mask> </s>
        7 + self.effective_soft_len() + if self.discrete() { 4 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.mode, PromptMode::Soft | PromptMode::Mixed) && self.soft_len == 0 {
            return Err(Error::Config("soft and mixed prompts need soft_len >= 1".into()));
        }
        if self.max_len < self.overhead() + 2 {
            return Err(Error::Config(format!(
                "max_len {} leaves no room for text (template uses {})",
                self.max_len,
                self.overhead()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClozeQuestion {
    pub token_ids: Vec<u32>,
    pub mask_position: usize,
    pub soft_positions: Vec<usize>,
    pub label: Label,
    pub language: String,
}

impl ClozeQuestion {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Shortens premise first, then hypothesis, keeping at least one word of each.
fn truncate(premise: &mut Vec<u32>, hypothesis: &mut Vec<u32>, budget: usize) {
    while premise.len() + hypothesis.len() > budget && premise.len() > 1 {
        premise.pop();
    }
    while premise.len() + hypothesis.len() > budget && hypothesis.len() > 1 {
        hypothesis.pop();
    }
}

pub fn build_cloze_question(example: &NliExample, cfg: &PromptConfig, vocab: &Vocabulary) -> Result<ClozeQuestion> {
    cfg.validate()?;
    let n = cfg.effective_soft_len();
    if n > vocab.soft_slots() {
        return Err(Error::Config(format!(
            "prompt uses {n} soft slots but the vocabulary reserves {}",
            vocab.soft_slots()
        )));
    }
    let mut premise = tokenize(&example.premise, vocab);
    let mut hypothesis = tokenize(&example.hypothesis, vocab);
    truncate(&mut premise, &mut hypothesis, cfg.max_len - cfg.overhead());

    let period = vocab.token_id(".");
    let qmark = vocab.token_id("?");
    let colon = vocab.token_id(":");
    let mut ids = Vec::with_capacity(premise.len() + hypothesis.len() + cfg.overhead());
    ids.push(BOS);
    ids.extend_from_slice(&premise);
    ids.extend([period, EOS, BOS]);
    if cfg.discrete() {
        ids.extend([vocab.token_id(&cfg.question_word), colon]);
    }
    ids.extend_from_slice(&hypothesis);
    ids.push(qmark);
    let mut soft_positions = Vec::with_capacity(n);
    for i in 0..n {
        soft_positions.push(ids.len());
        ids.push(vocab.soft_slot_id(i).expect("checked slot count"));
    }
    if cfg.discrete() {
        ids.extend([vocab.token_id(&cfg.answer_word), colon]);
    }
    let mask_position = ids.len();
    ids.push(MASK);
    ids.push(EOS);

    Ok(ClozeQuestion {
        token_ids: ids,
        mask_position,
        soft_positions,
        label: example.label,
        language: example.language.clone(),
    })
}

/// Human-readable rendering used by the `dump-questions` command.
pub fn render_question(q: &ClozeQuestion, vocab: &Vocabulary) -> String {
    vocab.detokenize(&q.token_ids).join(" ")
}
