//! Offsets of every named tensor inside the flat parameter buffer. The
//! declaration order here is also the checkpoint order.

use std::ops::Range;

use super::{HeadTying, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn row(&self, r: usize) -> Range<usize> {
        let start = self.offset + r * self.cols;
        start..start + self.cols
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub embedding: Slot,
    pub layers: Vec<LayerSlots>,
    pub lnf_g: Slot,
    pub lnf_b: Slot,
    /// Output projection; `None` when tied to the embedding table.
    pub head: Option<Slot>,
    pub total: usize,
    named: Vec<(String, Slot)>,
}

struct Builder {
    offset: usize,
    named: Vec<(String, Slot)>,
}

impl Builder {
    fn take(&mut self, name: String, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += slot.len();
        self.named.push((name, slot));
        slot
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_dim;
        let mut b = Builder {
            offset: 0,
            named: Vec::new(),
        };
        let embedding = b.take("embedding".into(), cfg.vocab_size, d);
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut t = |name: &str, rows, cols| b.take(format!("layer{l}.{name}"), rows, cols);
                LayerSlots {
                    ln1_g: t("ln1.gain", 1, d),
                    ln1_b: t("ln1.bias", 1, d),
                    wq: t("attn.wq", d, d),
                    bq: t("attn.bq", 1, d),
                    wk: t("attn.wk", d, d),
                    bk: t("attn.bk", 1, d),
                    wv: t("attn.wv", d, d),
                    bv: t("attn.bv", 1, d),
                    wo: t("attn.wo", d, d),
                    bo: t("attn.bo", 1, d),
                    ln2_g: t("ln2.gain", 1, d),
                    ln2_b: t("ln2.bias", 1, d),
                    w1: t("ffn.w1", d, f),
                    b1: t("ffn.b1", 1, f),
                    w2: t("ffn.w2", f, d),
                    b2: t("ffn.b2", 1, d),
                }
            })
            .collect();
        let lnf_g = b.take("final_ln.gain".into(), 1, d);
        let lnf_b = b.take("final_ln.bias".into(), 1, d);
        let head = match cfg.head_tying {
            HeadTying::TiedToEmbeddings => None,
            HeadTying::Untied => Some(b.take("mlm_head".into(), cfg.vocab_size, d)),
        };
        ParamLayout {
            embedding,
            layers,
            lnf_g,
            lnf_b,
            head,
            total: b.offset,
            named: b.named,
        }
    }

    /// Every tensor with its name, in declaration order.
    pub fn tensors(&self) -> &[(String, Slot)] {
        &self.named
    }

    /// The output projection, which is the embedding table when tied.
    pub fn output(&self) -> Slot {
        self.head.unwrap_or(self.embedding)
    }
}
