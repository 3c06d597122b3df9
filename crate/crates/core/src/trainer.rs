//! Few-shot training loop, evaluation and seed aggregation.
//!
//! Each epoch visits every batch once. Batches are fixed chunks of a seeded
//! permutation of the training examples; only their order is reshuffled per
//! epoch. An augmented question travels with its original so the
//! consistency term always compares the two views of one example.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_question, CodeSwitchConfig};
use crate::corpus::{Label, LabeledDataset, NliExample};
use crate::error::{Error, Result};
use crate::model::{ModelState, TrainScope};
use crate::objective::{total_loss_with_grads, KlSupport, LossBreakdown, LossWeights};
use crate::optim::AdamW;
use crate::prompt::{build_cloze_question, ClozeQuestion, PromptConfig};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_for};
use crate::verbalizer::{class_scores, ClassScoreMode, EvalScoring, MultilingualVerbalizer};
use crate::vocab::Vocabulary;

/// Learning rate for a randomly initialized desk-scale encoder.
pub const DESK_LEARNING_RATE: f64 = 3e-3;

const STREAM_BATCHES: u64 = 0xBA7C;
const STREAM_AUGMENT: u64 = 0xA06;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of words code-switched in each augmented question.
    pub code_switch_rate: f64,
    pub loss_weights: LossWeights,
    pub kl_support: KlSupport,
    pub seed: u64,
    pub train_scope: TrainScope,
    /// Draw augmented questions once before training instead of every epoch.
    pub static_augmentation: bool,
    /// Measure training-set accuracy after every epoch.
    pub track_train_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 70,
            batch_size: 24,
            learning_rate: DESK_LEARNING_RATE,
            weight_decay: 0.01,
            code_switch_rate: 0.15,
            loss_weights: LossWeights::default(),
            kl_support: KlSupport::FullVocabulary,
            seed: 1,
            train_scope: TrainScope::All,
            static_augmentation: true,
            track_train_accuracy: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(0.0..=1.0).contains(&self.code_switch_rate) {
            return Err(Error::Config(format!(
                "code_switch_rate must lie in [0, 1], got {}",
                self.code_switch_rate
            )));
        }
        self.loss_weights.validate()
    }

    /// True when augmented questions are built and scored.
    pub fn uses_augmentation(&self) -> bool {
        !self.loss_weights.ignores_augmented()
    }
}

/// Everything needed to turn examples into scored questions.
#[derive(Clone, Debug)]
pub struct Task {
    pub vocab: Vocabulary,
    pub verbalizer: MultilingualVerbalizer,
    pub prompt: PromptConfig,
    pub scoring: EvalScoring,
}

impl Task {
    pub fn question(&self, example: &NliExample) -> Result<ClozeQuestion> {
        build_cloze_question(example, &self.prompt, &self.vocab)
    }

    pub fn score_mode(&self, language: &str) -> ClassScoreMode {
        self.scoring.resolve(language, &self.verbalizer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub original: f64,
    pub augmented: f64,
    pub consistency: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_accuracy: f64,
    pub train_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub selected_epoch: usize,
}

impl TrainingLog {
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,L_O,L_A,L_KLD,total\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.step, s.original, s.augmented, s.consistency, s.total
            ));
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,dev_accuracy,train_accuracy,selected\n");
        for e in &self.epochs {
            let train = e.train_accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.mean_loss,
                e.dev_accuracy,
                train,
                (e.epoch == self.selected_epoch) as u8
            ));
        }
        out
    }

    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.train_accuracy)
    }
}

/// Batches of epoch `epoch` (0-based): chunks of a seeded permutation of
/// `0..n`, visited in a per-epoch seeded order.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[STREAM_BATCHES]));
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
    batches.shuffle(&mut rng_for(seed, &[STREAM_BATCHES, epoch as u64 + 1]));
    batches
}

fn augmented_questions(
    data: &LabeledDataset,
    task: &Task,
    cs: &CodeSwitchConfig,
    seed: u64,
    round: u64,
) -> Result<Vec<ClozeQuestion>> {
    data.examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let aug = augment_question(ex, cs, derive_seed(seed, &[STREAM_AUGMENT, round, i as u64]))?;
            task.question(&aug)
        })
        .collect()
}

fn accuracy_on<T: Scalar>(
    model: &ModelState<T>,
    questions: &[ClozeQuestion],
    mv: &MultilingualVerbalizer,
    mode: &ClassScoreMode,
) -> Result<f64> {
    let mut correct = 0usize;
    for q in questions {
        let dist = model.mask_distribution(q)?;
        if class_scores(&dist.probs, mv, mode)?.predicted == q.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / questions.len() as f64)
}

fn dataset_language(data: &LabeledDataset) -> &str {
    data.examples.first().map(|e| e.language.as_str()).unwrap_or("")
}

/// Trains `model` on `data`, selecting the epoch with the best accuracy on
/// `dev` (earliest on ties). The returned state has its prompts frozen.
pub fn train<T: Scalar>(
    mut model: ModelState<T>,
    data: &LabeledDataset,
    dev: &LabeledDataset,
    task: &Task,
    cs: &CodeSwitchConfig,
    tc: &TrainConfig,
) -> Result<(ModelState<T>, TrainingLog)> {
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Invalid("development set is empty".into()));
    }
    let cs = CodeSwitchConfig {
        rate: tc.code_switch_rate,
        ..cs.clone()
    };
    let augment = tc.uses_augmentation();
    if augment {
        cs.validate()?;
    }
    model.set_prompt_trainable(true);
    if tc.train_scope == TrainScope::PromptsOnly && task.prompt.effective_soft_len() == 0 {
        return Err(Error::Config("prompts-only training needs soft prompt slots".into()));
    }

    let mv = &task.verbalizer;
    let originals: Vec<ClozeQuestion> = data.examples.iter().map(|e| task.question(e)).collect::<Result<_>>()?;
    let labels: Vec<Label> = data.examples.iter().map(|e| e.label).collect();
    let dev_questions: Vec<ClozeQuestion> = dev.examples.iter().map(|e| task.question(e)).collect::<Result<_>>()?;
    let dev_mode = task.score_mode(dataset_language(dev));
    let train_mode = task.score_mode(dataset_language(data));
    let mut augmented = if augment && tc.static_augmentation {
        Some(augmented_questions(data, task, &cs, tc.seed, 0)?)
    } else {
        None
    };

    let ranges = model.update_ranges(tc.train_scope);
    let mut opt = AdamW::<T>::new(model.num_params(), tc.learning_rate, tc.weight_decay);
    let mut grads = vec![T::zero(); model.num_params()];
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, Vec<T>)> = None;
    let mut step = 0usize;

    for epoch in 0..tc.epochs {
        if augment && !tc.static_augmentation {
            augmented = Some(augmented_questions(data, task, &cs, tc.seed, epoch as u64 + 1)?);
        }
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(data.len(), tc.batch_size, tc.seed, epoch);
        for batch in &batches {
            step += 1;
            let orig_caches = batch
                .iter()
                .map(|&i| model.forward(&originals[i]))
                .collect::<Result<Vec<_>>>()?;
            let aug_caches = match &augmented {
                Some(aug) => Some(batch.iter().map(|&i| model.forward(&aug[i])).collect::<Result<Vec<_>>>()?),
                None => None,
            };
            let o: Vec<&[T]> = orig_caches.iter().map(|c| c.probs.as_slice()).collect();
            let a: Option<Vec<&[T]>> = aug_caches.as_ref().map(|cs| cs.iter().map(|c| c.probs.as_slice()).collect());
            let batch_labels: Vec<Label> = batch.iter().map(|&i| labels[i]).collect();
            let lg = total_loss_with_grads(&o, a.as_deref(), &batch_labels, mv, &tc.loss_weights, tc.kl_support)?;
            let b = record(step, epoch + 1, &lg.breakdown);
            if !b.total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!(
                        "L_O={} L_A={} L_KLD={} total={}",
                        b.original, b.augmented, b.consistency, b.total
                    ),
                });
            }
            epoch_loss += b.total;
            log.steps.push(b);

            grads.fill(T::zero());
            for (cache, d) in orig_caches.iter().zip(&lg.original) {
                model.backward(cache, d, &mut grads);
            }
            if let Some(caches) = &aug_caches {
                for (cache, d) in caches.iter().zip(&lg.augmented) {
                    model.backward(cache, d, &mut grads);
                }
            }
            opt.step(model.params_mut(), &grads, &ranges);
        }

        let dev_accuracy = accuracy_on(&model, &dev_questions, mv, &dev_mode)?;
        let train_accuracy = if tc.track_train_accuracy {
            Some(accuracy_on(&model, &originals, mv, &train_mode)?)
        } else {
            None
        };
        log::debug!(
            "epoch {} loss {:.4} dev {:.4} train {:?}",
            epoch + 1,
            epoch_loss / batches.len() as f64,
            dev_accuracy,
            train_accuracy
        );
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss: epoch_loss / batches.len() as f64,
            dev_accuracy,
            train_accuracy,
        });
        if best.as_ref().map_or(true, |(acc, _, _)| dev_accuracy > *acc) {
            best = Some((dev_accuracy, epoch + 1, model.params().to_vec()));
        }
    }

    let (_, selected, params) = best.expect("at least one epoch ran");
    log.selected_epoch = selected;
    model.params_mut().copy_from_slice(&params);
    model.set_prompt_trainable(false);
    Ok((model, log))
}

fn record<T: Scalar>(step: usize, epoch: usize, b: &LossBreakdown<T>) -> StepRecord {
    StepRecord {
        step,
        epoch,
        original: b.original.to_f64_lossy(),
        augmented: b.augmented.to_f64_lossy(),
        consistency: b.consistency.to_f64_lossy(),
        total: b.total.to_f64_lossy(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: BTreeMap<String, f64>,
    pub average: f64,
    /// `None` for reports aggregated over seeds.
    pub seed: Option<u64>,
    pub shots: Option<usize>,
}

impl EvalReport {
    pub fn new(accuracies: BTreeMap<String, f64>) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::Invalid("a report needs at least one language".into()));
        }
        let average = accuracies.values().sum::<f64>() / accuracies.len() as f64;
        Ok(EvalReport {
            accuracies,
            average,
            seed: None,
            shots: None,
        })
    }

    pub fn tagged(mut self, seed: u64, shots: usize) -> Self {
        self.seed = Some(seed);
        self.shots = Some(shots);
        self
    }

    /// Mean accuracy over `languages`, skipping ones not in the report.
    pub fn mean_over<'a>(&self, languages: impl IntoIterator<Item = &'a str>) -> f64 {
        let vals: Vec<f64> = languages.into_iter().filter_map(|l| self.accuracies.get(l).copied()).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

/// Accuracy per language of `model`. Questions are never augmented here and
/// the model is only read.
pub fn evaluate<T: Scalar>(
    model: &ModelState<T>,
    test_sets: &BTreeMap<String, LabeledDataset>,
    task: &Task,
) -> Result<EvalReport> {
    let mut accuracies = BTreeMap::new();
    for (lang, data) in test_sets {
        if data.is_empty() {
            return Err(Error::EmptyTestSet(lang.clone()));
        }
        let questions: Vec<ClozeQuestion> = data.examples.iter().map(|e| task.question(e)).collect::<Result<_>>()?;
        let acc = accuracy_on(model, &questions, &task.verbalizer, &task.score_mode(lang))?;
        accuracies.insert(lang.clone(), acc);
    }
    EvalReport::new(accuracies)
}

pub fn predict_label<T: Scalar>(
    model: &ModelState<T>,
    example: &NliExample,
    task: &Task,
    mode: &ClassScoreMode,
) -> Result<Label> {
    let dist = model.mask_distribution(&task.question(example)?)?;
    Ok(class_scores(&dist.probs, &task.verbalizer, mode)?.predicted)
}

/// Element-wise mean of reports over the same languages.
pub fn mean_report(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Invalid("cannot average zero reports".into()))?;
    let mut sums: BTreeMap<String, f64> = first.accuracies.keys().map(|k| (k.clone(), 0.0)).collect();
    for r in reports {
        if r.accuracies.len() != sums.len() || !r.accuracies.keys().all(|k| sums.contains_key(k)) {
            return Err(Error::Invalid("reports cover different languages".into()));
        }
        for (k, v) in &r.accuracies {
            *sums.get_mut(k).expect("checked above") += v;
        }
    }
    let n = reports.len() as f64;
    let mut mean = EvalReport::new(sums.into_iter().map(|(k, v)| (k, v / n)).collect())?;
    if reports.iter().all(|r| r.shots == first.shots) {
        mean.shots = first.shots;
    }
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean: EvalReport,
    pub per_seed: Vec<EvalReport>,
}

/// Runs `run` once per seed, in order, and averages the reports.
pub fn run_seeds<F>(seeds: &[u64], mut run: F) -> Result<SeedSummary>
where
    F: FnMut(u64) -> Result<EvalReport>,
{
    if seeds.is_empty() {
        return Err(Error::Invalid("at least one seed is required".into()));
    }
    let per_seed = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    Ok(SeedSummary {
        mean: mean_report(&per_seed)?,
        per_seed,
    })
}
