//! Desk-scale masked-language encoder. All parameters live in one flat buffer
//! addressed through [`ParamLayout`]; the soft-prompt bank is the set of
//! embedding rows owned by the reserved soft-slot ids.

mod checkpoint;
mod encoder;
pub mod layout;
pub mod linalg;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_matching, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use encoder::ForwardCache;
pub use layout::{ParamLayout, Slot};

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::ClozeQuestion;
use crate::scalar::Scalar;
use crate::seed::rng_for;
use crate::vocab::{Vocabulary, SOFT_SLOT_BASE, SPECIAL_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HeadTying {
    #[default]
    TiedToEmbeddings,
    Untied,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PromptInit {
    /// Mean of the lexical embedding rows.
    #[default]
    VocabMean,
    /// Keep the random rows from `init_model`.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainScope {
    #[default]
    All,
    PromptsOnly,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub head_tying: HeadTying,
    /// Soft-prompt rows reserved right after the special tokens.
    pub soft_slots: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2000,
            d_model: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            max_seq_len: 256,
            head_tying: HeadTying::TiedToEmbeddings,
            soft_slots: 4,
        }
    }
}

impl ModelConfig {
    /// Takes vocabulary size and slot count from `vocab`.
    pub fn for_vocab(self, vocab: &Vocabulary) -> Self {
        ModelConfig {
            vocab_size: vocab.len(),
            soft_slots: vocab.soft_slots(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.ffn_dim == 0 || self.max_seq_len == 0 {
            return fail("model dimensions must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return fail(format!(
                "model width {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.vocab_size <= SPECIAL_COUNT + self.soft_slots {
            return fail(format!(
                "vocabulary of {} cannot hold {} specials, {} soft slots and any words",
                self.vocab_size, SPECIAL_COUNT, self.soft_slots
            ));
        }
        Ok(())
    }

    pub fn lexical_rows(&self) -> Range<usize> {
        SPECIAL_COUNT + self.soft_slots..self.vocab_size
    }

    pub fn soft_rows(&self) -> Range<usize> {
        SOFT_SLOT_BASE as usize..SOFT_SLOT_BASE as usize + self.soft_slots
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskDistribution<T> {
    pub probs: Vec<T>,
    /// Final-layer representation of the mask token.
    pub hidden: Vec<T>,
}

impl<T: Scalar> MaskDistribution<T> {
    /// Wraps a probability vector with no hidden state.
    pub fn from_probs(probs: Vec<T>) -> Self {
        MaskDistribution {
            probs,
            hidden: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub(crate) layout: ParamLayout,
    pub(crate) params: Vec<T>,
    /// Fixed sinusoidal encodings, `max_seq_len x d_model`.
    pub(crate) positions: Vec<T>,
    pub(crate) prompt_trainable: bool,
}

fn sinusoidal<T: Scalar>(len: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
            out.push(T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    out
}

/// Random initialization; LayerNorm gains start at one, biases at zero.
pub fn init_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelState<T>> {
    cfg.validate()?;
    let layout = ParamLayout::new(cfg);
    let mut params = vec![T::zero(); layout.total];
    let mut rng = rng_for(seed, &[0x1417]);
    let mut fill = |slot: Slot, bound: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        for p in &mut params[slot.range()] {
            *p = T::of(rng.gen_range(-bound..bound));
        }
    };
    fill(layout.embedding, 0.5, &mut rng);
    let d = cfg.d_model as f64;
    let fwd = cfg.ffn_dim as f64;
    for ls in &layout.layers {
        for w in [ls.wq, ls.wk, ls.wv, ls.wo, ls.w1] {
            fill(w, 1.0 / d.sqrt(), &mut rng);
        }
        fill(ls.w2, 1.0 / fwd.sqrt(), &mut rng);
    }
    if let Some(head) = layout.head {
        fill(head, 0.5, &mut rng);
    }
    for ls in &layout.layers {
        for g in [ls.ln1_g, ls.ln2_g] {
            params[g.range()].fill(T::one());
        }
    }
    params[layout.lnf_g.range()].fill(T::one());
    Ok(ModelState {
        positions: sinusoidal(cfg.max_seq_len, cfg.d_model),
        config: cfg.clone(),
        layout,
        params,
        prompt_trainable: true,
    })
}

/// Sets every soft-prompt row per `mode`.
pub fn init_soft_prompts<T: Scalar>(mut state: ModelState<T>, mode: PromptInit) -> ModelState<T> {
    state.init_soft_prompts(mode);
    state
}

pub fn set_prompt_trainable<T: Scalar>(mut state: ModelState<T>, flag: bool) -> ModelState<T> {
    state.prompt_trainable = flag;
    state
}

impl<T: Scalar> ModelState<T> {
    /// Builds a state from an explicit parameter buffer.
    pub fn from_params(cfg: &ModelConfig, params: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        if params.len() != layout.total {
            return Err(Error::LengthMismatch {
                expected: layout.total,
                found: params.len(),
            });
        }
        Ok(ModelState {
            positions: sinusoidal(cfg.max_seq_len, cfg.d_model),
            config: cfg.clone(),
            layout,
            params,
            prompt_trainable: true,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn prompt_trainable(&self) -> bool {
        self.prompt_trainable
    }

    pub fn set_prompt_trainable(&mut self, flag: bool) {
        self.prompt_trainable = flag;
    }

    pub fn is_soft_slot(&self, id: u32) -> bool {
        self.config.soft_rows().contains(&(id as usize))
    }

    pub fn embedding_row(&self, id: usize) -> &[T] {
        &self.params[self.layout.embedding.row(id)]
    }

    /// Parameter range of the soft-prompt bank.
    pub fn prompt_range(&self) -> Range<usize> {
        let rows = self.config.soft_rows();
        let e = self.layout.embedding;
        e.offset + rows.start * e.cols..e.offset + rows.end * e.cols
    }

    pub fn prompt_rows(&self) -> Vec<&[T]> {
        self.config.soft_rows().map(|r| self.embedding_row(r)).collect()
    }

    /// Mean over lexical rows, summed in row order.
    pub fn vocab_mean_embedding(&self) -> Vec<T> {
        let d = self.config.d_model;
        let rows = self.config.lexical_rows();
        let n = T::of(rows.len() as f64);
        let mut mean = vec![T::zero(); d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(self.embedding_row(r)) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        mean
    }

    pub fn init_soft_prompts(&mut self, mode: PromptInit) {
        if mode == PromptInit::Random {
            return;
        }
        let mean = self.vocab_mean_embedding();
        for r in self.config.soft_rows() {
            let range = self.layout.embedding.row(r);
            self.params[range].copy_from_slice(&mean);
        }
    }

    /// Parameter ranges an optimizer may update under `scope`. Prompt rows are
    /// excluded whenever prompts are frozen.
    pub fn update_ranges(&self, scope: TrainScope) -> Vec<Range<usize>> {
        let prompt = self.prompt_range();
        match (scope, self.prompt_trainable) {
            (TrainScope::All, true) => vec![0..self.layout.total],
            (TrainScope::All, false) => vec![0..prompt.start, prompt.end..self.layout.total],
            (TrainScope::PromptsOnly, true) => vec![prompt],
            (TrainScope::PromptsOnly, false) => Vec::new(),
        }
    }

    fn check_question(&self, tokens: &[u32], mask_position: usize) -> Result<()> {
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::Invalid(format!(
                "question of {} tokens exceeds max sequence length {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        if mask_position >= tokens.len() {
            return Err(Error::Invalid(format!(
                "mask position {mask_position} outside question of {} tokens",
                tokens.len()
            )));
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    pub fn forward(&self, q: &ClozeQuestion) -> Result<ForwardCache<T>> {
        self.check_question(&q.token_ids, q.mask_position)?;
        Ok(self.forward_unchecked(&q.token_ids, q.mask_position))
    }

    /// `softmax(W h_mask)` for one cloze question.
    pub fn mask_distribution(&self, q: &ClozeQuestion) -> Result<MaskDistribution<T>> {
        let cache = self.forward(q)?;
        Ok(MaskDistribution {
            probs: cache.probs,
            hidden: cache.hidden,
        })
    }

    /// Hash of the raw parameter bits and the prompt flag.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut buf = Vec::with_capacity(self.params.len() * T::BYTES);
        for &p in &self.params {
            p.write_le(&mut buf);
        }
        h.write(&buf);
        h.write_u8(self.prompt_trainable as u8);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            d_model: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            max_seq_len: 16,
            head_tying: HeadTying::TiedToEmbeddings,
            soft_slots: 2,
        }
    }

    fn question(ids: &[u32], mask: usize) -> ClozeQuestion {
        ClozeQuestion {
            token_ids: ids.to_vec(),
            mask_position: mask,
            soft_positions: vec![],
            label: Label::Entailment,
            language: "en".into(),
        }
    }

    #[test]
    fn deterministic_init() {
        let a: ModelState<f64> = init_model(&tiny_config(), 5).unwrap();
        let b: ModelState<f64> = init_model(&tiny_config(), 5).unwrap();
        let c: ModelState<f64> = init_model(&tiny_config(), 6).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = ModelConfig {
            d_model: 64,
            heads: 5,
            ..ModelConfig::default()
        };
        assert!(matches!(init_model::<f64>(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn distribution_normalized() {
        let m: ModelState<f64> = init_model(&tiny_config(), 1).unwrap();
        let dist = m.mask_distribution(&question(&[1, 7, 8, 4, 5, 3, 2], 5)).unwrap();
        let s: f64 = dist.probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(dist.probs.iter().all(|&p| p >= 0.0));
        assert_eq!(dist.hidden.len(), 8);
    }

    #[test]
    fn zero_parameters_give_uniform() {
        let cfg = tiny_config();
        let m = ModelState::<f64>::from_params(&cfg, vec![0.0; ParamLayout::new(&cfg).total]).unwrap();
        let dist = m.mask_distribution(&question(&[1, 9, 10, 11, 3, 2], 4)).unwrap();
        for p in dist.probs {
            assert!((p - 1.0 / 20.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_token_is_an_error() {
        let m: ModelState<f64> = init_model(&tiny_config(), 1).unwrap();
        assert!(matches!(
            m.mask_distribution(&question(&[1, 25, 3], 2)),
            Err(Error::TokenOutOfRange { id: 25, .. })
        ));
        assert!(m.mask_distribution(&question(&[1; 17], 2)).is_err());
    }

    #[test]
    fn prompt_init_mean() {
        // Two lexical rows [1,2] and [3,4] -> prompts [2,3].
        let cfg = ModelConfig {
            vocab_size: 8,
            d_model: 2,
            layers: 0,
            heads: 1,
            ffn_dim: 1,
            max_seq_len: 4,
            head_tying: HeadTying::TiedToEmbeddings,
            soft_slots: 2,
        };
        let mut m: ModelState<f64> = init_model(&cfg, 3).unwrap();
        let e = m.layout.embedding;
        m.params[e.row(6)].copy_from_slice(&[1.0, 2.0]);
        m.params[e.row(7)].copy_from_slice(&[3.0, 4.0]);
        let m = init_soft_prompts(m, PromptInit::VocabMean);
        for row in m.prompt_rows() {
            assert_eq!(row, &[2.0, 3.0]);
        }
    }

    #[test]
    fn random_prompt_rows_differ() {
        let m: ModelState<f64> = init_soft_prompts(init_model(&tiny_config(), 2).unwrap(), PromptInit::Random);
        let rows = m.prompt_rows();
        assert_ne!(rows[0], rows[1]);
    }

    #[test]
    fn update_ranges_respect_freezing() {
        let m: ModelState<f64> = init_model(&tiny_config(), 2).unwrap();
        let prompt = m.prompt_range();
        assert_eq!(prompt, 32..48);
        let frozen = set_prompt_trainable(m.clone(), false);
        let ranges = frozen.update_ranges(TrainScope::All);
        assert!(ranges.iter().all(|r| r.end <= prompt.start || r.start >= prompt.end));
        assert_eq!(m.update_ranges(TrainScope::PromptsOnly), vec![prompt]);
        assert!(frozen.update_ranges(TrainScope::PromptsOnly).is_empty());
        let back = set_prompt_trainable(set_prompt_trainable(frozen, true), false);
        assert!(!back.prompt_trainable());
    }
}
