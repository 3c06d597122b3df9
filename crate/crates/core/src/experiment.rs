//! Experiment harness: benchmark preparation, single runs, seed averaging,
//! ablations, sweeps and CSV reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{CodeSwitchConfig, LanguageStrategy};
use crate::corpus::{
    gen_synthetic_benchmark, load_dataset, load_dictionary, sample_few_shot, write_dataset, BilingualDictionary,
    LabeledDataset, Split, SplitSet, SplitSizes, SyntheticBenchmark, PIVOT_LANGUAGE,
};
use crate::error::{Error, Result};
use crate::model::{init_model, HeadTying, ModelConfig, ModelState, PromptInit};
use crate::prompt::{PromptConfig, PromptMode};
use crate::seed::derive_seed;
use crate::trainer::{evaluate, mean_report, train, EvalReport, Task, TrainConfig, TrainingLog};
use crate::verbalizer::{default_english, english_words, EvalScoring, MultilingualVerbalizer};
use crate::vocab::Vocabulary;

/// Shot counts of the few-shot grid.
pub const GRID_SHOTS: [usize; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];
/// Soft-prompt lengths of the length sweep.
pub const SWEEP_PROMPT_LENGTHS: [usize; 5] = [1, 2, 4, 8, 16];
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

const STREAM_TRAIN_SAMPLE: u64 = 0x5A;
const STREAM_DEV_SAMPLE: u64 = 0xDE;
const STREAM_MODEL: u64 = 0x30;

/// Labeled splits per language plus pivot-to-target dictionaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub pivot: String,
    /// Pivot first.
    pub languages: Vec<String>,
    pub splits: BTreeMap<String, SplitSet>,
    pub dictionaries: Vec<BilingualDictionary>,
}

impl From<SyntheticBenchmark> for Benchmark {
    fn from(b: SyntheticBenchmark) -> Self {
        Benchmark {
            languages: b.language_ids(),
            pivot: b.pivot,
            splits: b.splits,
            dictionaries: b.dictionaries,
        }
    }
}

impl Benchmark {
    pub fn targets(&self) -> Vec<String> {
        self.languages.iter().filter(|l| **l != self.pivot).cloned().collect()
    }

    pub fn split(&self, language: &str, split: Split) -> Result<&LabeledDataset> {
        self.splits
            .get(language)
            .map(|s| s.get(split))
            .ok_or_else(|| Error::UnknownLanguage(language.to_owned()))
    }

    pub fn test_sets(&self) -> BTreeMap<String, LabeledDataset> {
        self.splits.iter().map(|(l, s)| (l.clone(), s.test.clone())).collect()
    }

    /// Every word of every split and dictionary, plus the answer words.
    pub fn words(&self) -> BTreeSet<String> {
        let mut words: BTreeSet<String> = english_words().iter().map(|w| w.to_string()).collect();
        for set in self.splits.values() {
            for ds in [&set.train, &set.dev, &set.test] {
                for ex in &ds.examples {
                    words.extend(ex.premise.iter().cloned());
                    words.extend(ex.hypothesis.iter().cloned());
                }
            }
        }
        for d in &self.dictionaries {
            for (a, b) in d.iter() {
                words.insert(a.to_owned());
                words.insert(b.to_owned());
            }
        }
        words
    }

    /// Writes `<lang>/{train,dev,test}.jsonl`, `dict/<pivot>-<lang>.tsv` and
    /// a `languages.txt` listing the pivot first.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("dict")).map_err(|e| Error::io(dir, e))?;
        let list = dir.join("languages.txt");
        fs::write(&list, self.languages.join("\n") + "\n").map_err(|e| Error::io(&list, e))?;
        for (lang, set) in &self.splits {
            let ldir = dir.join(lang);
            fs::create_dir_all(&ldir).map_err(|e| Error::io(&ldir, e))?;
            for split in [Split::Train, Split::Dev, Split::Test] {
                write_dataset(set.get(split), ldir.join(format!("{}.jsonl", split.as_str())))?;
            }
        }
        for d in &self.dictionaries {
            let p = dir.join("dict").join(format!("{}-{}.tsv", d.source, d.target));
            fs::write(&p, d.to_tsv()).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let list = dir.join("languages.txt");
        let text = fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
        let languages: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        let pivot = languages
            .first()
            .cloned()
            .ok_or_else(|| Error::Format(format!("{} lists no languages", list.display())))?;
        let mut splits = BTreeMap::new();
        for lang in &languages {
            let ldir = dir.join(lang);
            splits.insert(
                lang.clone(),
                SplitSet {
                    train: load_dataset(ldir.join("train.jsonl"), Split::Train)?,
                    dev: load_dataset(ldir.join("dev.jsonl"), Split::Dev)?,
                    test: load_dataset(ldir.join("test.jsonl"), Split::Test)?,
                },
            );
        }
        let mut dictionaries = Vec::new();
        for lang in languages.iter().skip(1) {
            let p = dir.join("dict").join(format!("{pivot}-{lang}.tsv"));
            let loaded = load_dictionary(&p, &pivot, lang)?;
            if loaded.skipped > 0 {
                log::warn!("{}: skipped {} malformed lines", p.display(), loaded.skipped);
            }
            dictionaries.push(loaded.dictionary);
        }
        Ok(Benchmark {
            pivot,
            languages,
            splits,
            dictionaries,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Read a benchmark saved by `Benchmark::save_dir` instead of generating.
    pub dir: Option<PathBuf>,
    pub num_languages: usize,
    /// Pivot lexicon size of the generated benchmark.
    pub vocab_size: usize,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            num_languages: 4,
            vocab_size: 60,
            sizes: SplitSizes::default(),
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<Benchmark> {
        match &self.dir {
            Some(dir) => Benchmark::load_dir(dir),
            None => Ok(gen_synthetic_benchmark(self.num_languages, self.vocab_size, self.sizes, self.seed)?.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub head_tying: HeadTying,
    pub prompt_init: PromptInit,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSettings {
            d_model: m.d_model,
            layers: m.layers,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            max_seq_len: m.max_seq_len,
            head_tying: m.head_tying,
            prompt_init: PromptInit::VocabMean,
        }
    }
}

impl ModelSettings {
    pub fn config(&self, vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            head_tying: self.head_tying,
            ..ModelConfig::default()
        }
        .for_vocab(vocab)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeSwitchSettings {
    pub strategy: LanguageStrategy,
    pub salt: u64,
}

impl Default for CodeSwitchSettings {
    fn default() -> Self {
        CodeSwitchSettings {
            strategy: LanguageStrategy::RandomPerWord,
            salt: 0,
        }
    }
}

/// Every knob of a run. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Train and score with every language's verbalizer, or the pivot's only.
    pub multilingual_verbalizer: bool,
    pub scoring: EvalScoring,
    pub data: DataConfig,
    pub model: ModelSettings,
    pub prompt: PromptConfig,
    pub train: TrainConfig,
    pub code_switch: CodeSwitchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            shots: vec![8],
            seeds: DEFAULT_SEEDS.to_vec(),
            multilingual_verbalizer: true,
            scoring: EvalScoring::AverageAllLanguages,
            data: DataConfig::default(),
            model: ModelSettings::default(),
            prompt: PromptConfig::default(),
            train: TrainConfig::default(),
            code_switch: CodeSwitchSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::Config("shots must list at least one positive count".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        self.prompt.validate()?;
        self.train.validate()?;
        if self.model.d_model % self.model.heads.max(1) != 0 || self.model.heads == 0 {
            return Err(Error::Config(format!(
                "model width {} is not divisible by {} heads",
                self.model.d_model, self.model.heads
            )));
        }
        Ok(())
    }

    pub fn task(&self, bench: &Benchmark) -> Result<Task> {
        let vocab = Vocabulary::build(self.prompt.effective_soft_len(), bench.words());
        let pivot = default_english(&vocab)?;
        let mut verbalizer = MultilingualVerbalizer::from_dictionaries(pivot, &bench.dictionaries, &vocab)?;
        if !self.multilingual_verbalizer {
            verbalizer = verbalizer.pivot_only();
        }
        Ok(Task {
            vocab,
            verbalizer,
            prompt: self.prompt.clone(),
            scoring: self.scoring,
        })
    }

    pub fn code_switch(&self, bench: &Benchmark) -> CodeSwitchConfig {
        CodeSwitchConfig {
            rate: self.train.code_switch_rate,
            strategy: self.code_switch.strategy.clone(),
            dictionaries: bench.dictionaries.clone(),
            salt: self.code_switch.salt,
        }
    }
}

/// Few-shot train and dev samples of the pivot language.
pub fn few_shot_data(bench: &Benchmark, shots: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = sample_few_shot(
        bench.split(&bench.pivot, Split::Train)?,
        shots,
        derive_seed(seed, &[STREAM_TRAIN_SAMPLE, shots as u64]),
    )?;
    let dev = sample_few_shot(
        bench.split(&bench.pivot, Split::Dev)?,
        shots,
        derive_seed(seed, &[STREAM_DEV_SAMPLE, shots as u64]),
    )?;
    Ok((train, dev))
}

pub fn initial_model(cfg: &RunConfig, task: &Task, seed: u64) -> Result<ModelState<f64>> {
    let mc = cfg.model.config(&task.vocab);
    let mut model = init_model::<f64>(&mc, derive_seed(seed, &[STREAM_MODEL]))?;
    model.init_soft_prompts(cfg.model.prompt_init);
    Ok(model)
}

/// Output of one (config, shots, seed) run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub log: TrainingLog,
    pub model: ModelState<f64>,
}

pub fn run_single(cfg: &RunConfig, bench: &Benchmark, shots: usize, seed: u64) -> Result<RunOutcome> {
    let task = cfg.task(bench)?;
    let (train_set, dev_set) = few_shot_data(bench, shots, seed)?;
    let model = initial_model(cfg, &task, seed)?;
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, log) = train(model, &train_set, &dev_set, &task, &cfg.code_switch(bench), &tc)?;
    let report = evaluate(&model, &bench.test_sets(), &task)?.tagged(seed, shots);
    log::info!(
        "shots={shots} seed={seed} epoch={} avg={:.4}",
        log.selected_epoch,
        report.average
    );
    Ok(RunOutcome { report, log, model })
}

/// One named row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub mean: EvalReport,
    pub per_seed: Vec<EvalReport>,
}

impl ReportRow {
    pub fn from_reports(name: impl Into<String>, per_seed: Vec<EvalReport>) -> Result<Self> {
        Ok(ReportRow {
            name: name.into(),
            mean: mean_report(&per_seed)?,
            per_seed,
        })
    }
}

/// Runs every seed of `cfg` at `shots`.
pub fn run_row(name: &str, cfg: &RunConfig, bench: &Benchmark, shots: usize) -> Result<ReportRow> {
    let reports = cfg
        .seeds
        .iter()
        .map(|&s| run_single(cfg, bench, shots, s).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    ReportRow::from_reports(name, reports)
}

/// One row per shot count in `cfg.shots`.
pub fn few_shot_grid(cfg: &RunConfig, bench: &Benchmark) -> Result<Vec<ReportRow>> {
    cfg.shots
        .iter()
        .map(|&k| run_row(&k.to_string(), cfg, bench, k))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    WithoutCodeSwitch,
    WithoutConsistency,
    WithoutMultilingualVerbalizer,
    DiscretePrompts,
    MixedPrompts,
    RandomInitPrompts,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Full,
        Ablation::WithoutCodeSwitch,
        Ablation::WithoutConsistency,
        Ablation::WithoutMultilingualVerbalizer,
        Ablation::DiscretePrompts,
        Ablation::MixedPrompts,
        Ablation::RandomInitPrompts,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "Original",
            Ablation::WithoutCodeSwitch => "w/o code-switched",
            Ablation::WithoutConsistency => "w/o consistency loss",
            Ablation::WithoutMultilingualVerbalizer => "w/o multilingual verbalizer",
            Ablation::DiscretePrompts => "using discrete prompts",
            Ablation::MixedPrompts => "using mixed prompts",
            Ablation::RandomInitPrompts => "using randomly initialized prompts",
        }
    }

    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::WithoutCodeSwitch => {
                cfg.train.code_switch_rate = 0.0;
                cfg.train.loss_weights.augmented = 0.0;
                cfg.train.loss_weights.consistency = 0.0;
            }
            Ablation::WithoutConsistency => cfg.train.loss_weights.consistency = 0.0,
            Ablation::WithoutMultilingualVerbalizer => cfg.multilingual_verbalizer = false,
            Ablation::DiscretePrompts => cfg.prompt.mode = PromptMode::Discrete,
            Ablation::MixedPrompts => cfg.prompt.mode = PromptMode::Mixed,
            Ablation::RandomInitPrompts => cfg.model.prompt_init = PromptInit::Random,
        }
        cfg
    }
}

/// One row per ablation, all at the first shot count of `base`.
pub fn ablate(base: &RunConfig, bench: &Benchmark, which: &[Ablation]) -> Result<Vec<ReportRow>> {
    let shots = base.shots[0];
    which
        .iter()
        .map(|a| run_row(a.label(), &a.apply(base), bench, shots))
        .collect()
}

/// Soft prompts of each length in `lengths`, at the first shot count.
pub fn sweep_prompt_len(base: &RunConfig, bench: &Benchmark, lengths: &[usize]) -> Result<Vec<ReportRow>> {
    let shots = base.shots[0];
    lengths
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.prompt.mode = PromptMode::Soft;
            cfg.prompt.soft_len = n;
            run_row(&n.to_string(), &cfg, bench, shots)
        })
        .collect()
}

/// Random per-word language choice against every fixed target language.
pub fn sweep_cs_lang(base: &RunConfig, bench: &Benchmark) -> Result<Vec<ReportRow>> {
    let shots = base.shots[0];
    let mut strategies = vec![("random".to_owned(), LanguageStrategy::RandomPerWord)];
    strategies.extend(bench.targets().into_iter().map(|l| (l.clone(), LanguageStrategy::Fixed(l))));
    strategies
        .into_iter()
        .map(|(name, s)| {
            let mut cfg = base.clone();
            cfg.code_switch.strategy = s;
            run_row(&name, &cfg, bench, shots)
        })
        .collect()
}

fn header(first: &str, langs: &[String]) -> String {
    let mut cols = vec![first.to_owned()];
    cols.extend(langs.iter().map(|l| l.to_uppercase()));
    cols.push("AVG".into());
    cols.join(",")
}

fn values(r: &EvalReport, langs: &[String]) -> String {
    let mut cols: Vec<String> = langs.iter().map(|l| format!("{:.6}", r.accuracies[l])).collect();
    cols.push(format!("{:.6}", r.average));
    cols.join(",")
}

fn languages_of(rows: &[ReportRow], pivot: Option<&str>) -> Result<Vec<String>> {
    let first = rows.first().ok_or_else(|| Error::Invalid("no report rows to write".into()))?;
    let mut langs: Vec<String> = first.mean.accuracies.keys().cloned().collect();
    if let Some(p) = pivot {
        if let Some(i) = langs.iter().position(|l| l == p) {
            let l = langs.remove(i);
            langs.insert(0, l);
        }
    }
    for r in rows {
        if r.mean.accuracies.len() != langs.len() || langs.iter().any(|l| !r.mean.accuracies.contains_key(l)) {
            return Err(Error::Invalid(format!("row `{}` covers different languages", r.name)));
        }
    }
    Ok(langs)
}

/// Mean table: one row per configuration, language columns then AVG.
pub fn report_table(rows: &[ReportRow], first_column: &str) -> Result<String> {
    let langs = languages_of(rows, Some(PIVOT_LANGUAGE))?;
    let mut out = header(first_column, &langs) + "\n";
    for r in rows {
        out.push_str(&format!("{},{}\n", r.name, values(&r.mean, &langs)));
    }
    Ok(out)
}

/// Per-seed table of every row.
pub fn detail_table(rows: &[ReportRow], first_column: &str) -> Result<String> {
    let langs = languages_of(rows, Some(PIVOT_LANGUAGE))?;
    let mut out = header(&format!("{first_column},seed,shots"), &langs) + "\n";
    for r in rows {
        for s in &r.per_seed {
            let seed = s.seed.map(|v| v.to_string()).unwrap_or_default();
            let shots = s.shots.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{seed},{shots},{}\n", r.name, values(s, &langs)));
        }
    }
    Ok(out)
}

/// Path of the per-seed file written next to `path`.
pub fn detail_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_seeds.csv"))
}

/// Writes the mean table to `path`, the per-seed table to
/// [`detail_path`]`(path)` and every row as JSON next to them.
pub fn write_report(rows: &[ReportRow], first_column: &str, path: &Path) -> Result<()> {
    let table = report_table(rows, first_column)?;
    let detail = detail_table(rows, first_column)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, table).map_err(|e| Error::io(path, e))?;
    let dp = detail_path(path);
    fs::write(&dp, detail).map_err(|e| Error::io(&dp, e))?;
    let jp = path.with_extension("json");
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&jp, json + "\n").map_err(|e| Error::io(&jp, e))?;
    Ok(())
}
