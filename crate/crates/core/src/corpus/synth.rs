//! Rule-generated multilingual NLI benchmark.
//!
//! The pivot language `en` owns a small lexicon of determiners, nouns,
//! adjectives, verbs grouped into antonym pairs, a negator and a clause
//! marker. Every other language is a bijective relabeling of that lexicon,
//! and every split is a word-for-word translation of the pivot split, so the
//! returned dictionaries are exact ground truth. Labels follow from the
//! construction:
//!
//! * entailment: the hypothesis drops one or two adjectives of the premise;
//! * contradiction: the hypothesis negates the verb or swaps it for its
//!   antonym, after dropping up to two adjectives;
//! * neutral: the hypothesis appends an unrelated clause, after dropping at
//!   most one adjective.
//!
//! Dropping adjectives never changes a label, and it keeps the length
//! difference between premise and hypothesis from giving the label away.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BilingualDictionary, Label, LabeledDataset, NliExample, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

pub const PIVOT_LANGUAGE: &str = "en";
pub const NEGATOR: &str = "not";
pub const CLAUSE_MARKER: &str = "while";
const DETERMINERS: [&str; 2] = ["a", "the"];
const ANSWER_WORDS: [&str; 3] = ["yes", "no", "maybe"];
const MIN_VOCAB: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        // 300 per class in train and dev covers the 256-shot setting.
        SplitSizes {
            train: 900,
            dev: 900,
            test: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthLanguageSpec {
    pub language: String,
    /// Pivot word -> surface word. Identity for the pivot itself.
    pub lexicon: BTreeMap<String, String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSet {
    pub train: LabeledDataset,
    pub dev: LabeledDataset,
    pub test: LabeledDataset,
}

impl SplitSet {
    pub fn get(&self, split: Split) -> &LabeledDataset {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticBenchmark {
    pub pivot: String,
    /// Pivot first, then the target languages in id order.
    pub languages: Vec<SynthLanguageSpec>,
    pub splits: BTreeMap<String, SplitSet>,
    /// Pivot -> target dictionaries, one per target language.
    pub dictionaries: Vec<BilingualDictionary>,
}

impl SyntheticBenchmark {
    pub fn language_ids(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.language.clone()).collect()
    }

    pub fn target_languages(&self) -> Vec<String> {
        self.languages
            .iter()
            .filter(|l| l.language != self.pivot)
            .map(|l| l.language.clone())
            .collect()
    }

    pub fn dictionary(&self, target: &str) -> Option<&BilingualDictionary> {
        self.dictionaries.iter().find(|d| d.target == target)
    }

    pub fn split(&self, language: &str, split: Split) -> Option<&LabeledDataset> {
        self.splits.get(language).map(|s| s.get(split))
    }

    /// Every surface word of every language, sorted.
    pub fn surface_words(&self) -> BTreeSet<String> {
        self.languages
            .iter()
            .flat_map(|l| l.lexicon.values().cloned())
            .collect()
    }
}

struct PivotLexicon {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    /// Consecutive pairs are antonyms.
    verbs: Vec<String>,
}

impl PivotLexicon {
    fn all_words(&self) -> Vec<String> {
        let mut words: Vec<String> = DETERMINERS
            .iter()
            .chain([NEGATOR, CLAUSE_MARKER].iter())
            .chain(ANSWER_WORDS.iter())
            .map(|w| w.to_string())
            .collect();
        words.extend(self.nouns.iter().cloned());
        words.extend(self.adjectives.iter().cloned());
        words.extend(self.verbs.iter().cloned());
        words
    }

    fn antonym(&self, verb: &str) -> &str {
        let i = self.verbs.iter().position(|v| v == verb).expect("known verb");
        &self.verbs[i ^ 1]
    }
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ei"];
const CODAS: [&str; 5] = ["", "", "n", "r", "s"];

fn pseudo_word(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

fn build_pivot(vocab_size: usize, rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> PivotLexicon {
    let fixed = DETERMINERS.len() + 2 + ANSWER_WORDS.len();
    let rest = vocab_size - fixed;
    let n_adj = rest / 4;
    let n_verb = (rest / 4) & !1;
    let n_noun = rest - n_adj - n_verb;
    let mut gen = |n: usize| (0..n).map(|_| pseudo_word(rng, taken)).collect::<Vec<_>>();
    PivotLexicon {
        nouns: gen(n_noun),
        adjectives: gen(n_adj),
        verbs: gen(n_verb),
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [String], exclude: &[&str]) -> &'a str {
    loop {
        let w = &pool[rng.gen_range(0..pool.len())];
        if !exclude.contains(&w.as_str()) {
            return w;
        }
    }
}

/// Noun phrase: det, up to two distinct adjectives, noun.
fn noun_phrase(lex: &PivotLexicon, noun: String, adjectives: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words = vec![DETERMINERS[rng.gen_range(0..2)].to_owned()];
    for _ in 0..adjectives {
        let prev: Vec<&str> = words.iter().map(String::as_str).collect();
        let adj = pick(rng, &lex.adjectives, &prev).to_owned();
        words.push(adj);
    }
    words.push(noun);
    words
}

/// Premise layout: det adj* noun verb det adj* noun, with one to four
/// adjectives in total.
fn premise(lex: &PivotLexicon, rng: &mut ChaCha8Rng) -> Vec<String> {
    let subj = pick(rng, &lex.nouns, &[]).to_owned();
    let obj = pick(rng, &lex.nouns, &[&subj]).to_owned();
    let verb = pick(rng, &lex.verbs, &[]).to_owned();
    let mut subj_adj = rng.gen_range(0..=2);
    let obj_adj = rng.gen_range(0..=2);
    if subj_adj + obj_adj == 0 {
        subj_adj = 1;
    }
    let mut words = noun_phrase(lex, subj, subj_adj, rng);
    words.push(verb);
    words.extend(noun_phrase(lex, obj, obj_adj, rng));
    words
}

/// Removes up to `n` randomly chosen adjectives.
fn drop_adjectives(lex: &PivotLexicon, words: &mut Vec<String>, n: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..n {
        let positions: Vec<usize> = words
            .iter()
            .enumerate()
            .filter(|(_, w)| lex.adjectives.contains(w))
            .map(|(i, _)| i)
            .collect();
        match positions.choose(rng) {
            Some(&pos) => {
                words.remove(pos);
            }
            None => return,
        }
    }
}

fn verb_position(lex: &PivotLexicon, words: &[String]) -> usize {
    words
        .iter()
        .position(|w| lex.verbs.contains(w))
        .expect("premise has a verb")
}

fn hypothesis(lex: &PivotLexicon, premise: &[String], label: Label, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut h = premise.to_vec();
    match label {
        Label::Entailment => {
            let n = rng.gen_range(1..=2);
            drop_adjectives(lex, &mut h, n, rng);
        }
        Label::Contradiction => {
            let n = rng.gen_range(0..=2);
            drop_adjectives(lex, &mut h, n, rng);
            let v = verb_position(lex, &h);
            if rng.gen_bool(0.5) {
                h.insert(v, NEGATOR.to_owned());
            } else {
                h[v] = lex.antonym(&h[v]).to_owned();
            }
        }
        Label::Neutral => {
            let n = rng.gen_range(0..=1);
            drop_adjectives(lex, &mut h, n, rng);
            let used: Vec<&str> = premise.iter().map(String::as_str).collect();
            let verb = &premise[verb_position(lex, premise)];
            let n1 = pick(rng, &lex.nouns, &used).to_owned();
            let mut used2 = used.clone();
            used2.push(&n1);
            let n2 = pick(rng, &lex.nouns, &used2).to_owned();
            let v2 = pick(rng, &lex.verbs, &[verb, lex.antonym(verb)]).to_owned();
            h.push(CLAUSE_MARKER.to_owned());
            h.push(DETERMINERS[rng.gen_range(0..2)].to_owned());
            h.push(n1);
            h.push(v2);
            h.push(DETERMINERS[rng.gen_range(0..2)].to_owned());
            h.push(n2);
        }
    }
    h
}

fn pivot_split(lex: &PivotLexicon, n: usize, split: Split, rng: &mut ChaCha8Rng) -> LabeledDataset {
    let mut labels: Vec<Label> = (0..n).map(|i| Label::ALL[i % 3]).collect();
    labels.shuffle(rng);
    let examples = labels
        .into_iter()
        .map(|label| {
            let p = premise(lex, rng);
            let h = hypothesis(lex, &p, label, rng);
            NliExample::new(p, h, label, PIVOT_LANGUAGE).expect("non-empty by construction")
        })
        .collect();
    LabeledDataset::new(split, examples)
}

fn translate_split(ds: &LabeledDataset, dict: &BilingualDictionary) -> LabeledDataset {
    let examples = ds
        .examples
        .iter()
        .map(|ex| NliExample {
            premise: dict.translate_words(&ex.premise),
            hypothesis: dict.translate_words(&ex.hypothesis),
            label: ex.label,
            language: dict.target.clone(),
        })
        .collect();
    LabeledDataset::new(ds.split, examples)
}

/// Generates `num_languages` parallel languages (pivot included) over a pivot
/// lexicon of `vocab_size` words.
pub fn gen_synthetic_benchmark(
    num_languages: usize,
    vocab_size: usize,
    sizes: SplitSizes,
    seed: u64,
) -> Result<SyntheticBenchmark> {
    if num_languages < 2 {
        return Err(Error::Config(format!(
            "synthetic benchmark needs at least 2 languages, got {num_languages}"
        )));
    }
    if vocab_size < MIN_VOCAB {
        return Err(Error::Config(format!(
            "vocabulary of {vocab_size} words cannot host the generation rules (minimum {MIN_VOCAB})"
        )));
    }

    let mut taken: BTreeSet<String> = DETERMINERS
        .iter()
        .chain([NEGATOR, CLAUSE_MARKER].iter())
        .chain(ANSWER_WORDS.iter())
        .map(|w| w.to_string())
        .collect();
    let mut lex_rng = rng_for(seed, &[0]);
    let pivot = build_pivot(vocab_size, &mut lex_rng, &mut taken);
    let pivot_words = pivot.all_words();

    let mut languages = vec![SynthLanguageSpec {
        language: PIVOT_LANGUAGE.to_owned(),
        lexicon: pivot_words.iter().map(|w| (w.clone(), w.clone())).collect(),
        seed: derive_seed(seed, &[2, 0]),
    }];
    let mut dictionaries = Vec::new();
    for li in 1..num_languages {
        let lang_seed = derive_seed(seed, &[2, li as u64]);
        let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(lang_seed);
        let lexicon: BTreeMap<String, String> = pivot_words
            .iter()
            .map(|w| (w.clone(), pseudo_word(&mut rng, &mut taken)))
            .collect();
        let id = format!("s{li}");
        dictionaries.push(BilingualDictionary::from_pairs(
            PIVOT_LANGUAGE,
            &id,
            lexicon.iter().map(|(k, v)| (k.as_str(), v.as_str())),
        ));
        languages.push(SynthLanguageSpec {
            language: id,
            lexicon,
            seed: lang_seed,
        });
    }

    let mut splits = BTreeMap::new();
    let pivot_sets: Vec<LabeledDataset> = [(Split::Train, sizes.train), (Split::Dev, sizes.dev), (Split::Test, sizes.test)]
        .into_iter()
        .enumerate()
        .map(|(i, (split, n))| pivot_split(&pivot, n, split, &mut rng_for(seed, &[1, i as u64])))
        .collect();
    for dict in &dictionaries {
        splits.insert(
            dict.target.clone(),
            SplitSet {
                train: translate_split(&pivot_sets[0], dict),
                dev: translate_split(&pivot_sets[1], dict),
                test: translate_split(&pivot_sets[2], dict),
            },
        );
    }
    let mut it = pivot_sets.into_iter();
    splits.insert(
        PIVOT_LANGUAGE.to_owned(),
        SplitSet {
            train: it.next().unwrap(),
            dev: it.next().unwrap(),
            test: it.next().unwrap(),
        },
    );

    Ok(SyntheticBenchmark {
        pivot: PIVOT_LANGUAGE.to_owned(),
        languages,
        splits,
        dictionaries,
    })
}
