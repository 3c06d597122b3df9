use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use softmv::augment::{augment_annotated, debug_dump_line};
use softmv::experiment::{
    ablate, few_shot_data, few_shot_grid, run_single, sweep_cs_lang, sweep_prompt_len, write_report, Ablation,
    Benchmark, RunConfig, SWEEP_PROMPT_LENGTHS,
};
use softmv::model::{load_checkpoint_matching, save_checkpoint, TrainScope};
use softmv::objective::KlSupport;
use softmv::prompt::{render_question, PromptMode};
use softmv::seed::derive_seed;
use softmv::trainer::evaluate;
use softmv::verbalizer::EvalScoring;
use softmv::Error;

/// Environment variable naming the default output root.
const OUTPUT_ROOT_ENV: &str = "SOFTMV_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "softmv", version, about = "Few-shot cross-lingual NLI with multilingual soft prompts")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multilingual benchmark into a directory.
    GenData(GenDataArgs),
    /// Train over every (shots, seed) pair and report test accuracy.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on every test language.
    Eval(EvalArgs),
    /// Compare the full method against its ablations.
    Ablate(AblateArgs),
    /// Accuracy against soft-prompt length.
    SweepPromptLen(SweepLenArgs),
    /// Compare code-switching language strategies.
    SweepCsLang(RunArgs),
    /// Print cloze questions and their code-switched views.
    DumpQuestions(DumpArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $SOFTMV_OUTPUT_ROOT/<command> or runs/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Benchmark directory written by gen-data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Shots per class, comma separated.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Code-switch rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Loss weights of original, augmented and consistency terms.
    #[arg(long, num_args = 3, value_names = ["O", "A", "KLD"])]
    lambda: Option<Vec<f64>>,
    /// Prompt style: sp, dp or mp.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PromptMode>,
    #[arg(long)]
    prompt_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    /// Train and score with the pivot verbalizer only.
    #[arg(long)]
    pivot_verbalizer: bool,
    /// Parameters updated during training: all or prompts-only.
    #[arg(long, value_parser = parse_scope)]
    train_scope: Option<TrainScope>,
    /// Draw new code-switched views every epoch.
    #[arg(long)]
    fresh_augmentation: bool,
    /// Restrict the consistency term to the verbalizer answer words.
    #[arg(long)]
    kl_on_answers: bool,
    /// Score each test language with its own verbalizer only.
    #[arg(long)]
    target_scoring: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    languages: usize,
    /// Pivot lexicon size.
    #[arg(long, default_value_t = 60)]
    vocab: usize,
    #[arg(long, default_value_t = 900)]
    train: usize,
    #[arg(long, default_value_t = 900)]
    dev: usize,
    #[arg(long, default_value_t = 300)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also save the model of every run as a checkpoint.
    #[arg(long)]
    save_model: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Subset of configurations, e.g. full,without-consistency.
    #[arg(long, value_delimiter = ',', value_parser = parse_ablation)]
    only: Option<Vec<Ablation>>,
}

#[derive(Args)]
struct SweepLenArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of training examples to show.
    #[arg(long, default_value_t = 10)]
    count: usize,
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    match s {
        "sp" => Ok(PromptMode::Soft),
        "dp" => Ok(PromptMode::Discrete),
        "mp" => Ok(PromptMode::Mixed),
        _ => Err(format!("unknown prompt mode `{s}` (expected sp, dp or mp)")),
    }
}

fn parse_scope(s: &str) -> Result<TrainScope, String> {
    match s {
        "all" => Ok(TrainScope::All),
        "prompts-only" => Ok(TrainScope::PromptsOnly),
        _ => Err(format!("unknown train scope `{s}` (expected all or prompts-only)")),
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    let names = [
        ("full", Ablation::Full),
        ("without-code-switch", Ablation::WithoutCodeSwitch),
        ("without-consistency", Ablation::WithoutConsistency),
        ("without-multilingual-verbalizer", Ablation::WithoutMultilingualVerbalizer),
        ("discrete-prompts", Ablation::DiscretePrompts),
        ("mixed-prompts", Ablation::MixedPrompts),
        ("random-init-prompts", Ablation::RandomInitPrompts),
    ];
    names
        .iter()
        .find(|(n, _)| *n == s)
        .map(|(_, a)| *a)
        .ok_or_else(|| {
            let all: Vec<&str> = names.iter().map(|(n, _)| *n).collect();
            format!("unknown ablation `{s}` (expected one of {})", all.join(", "))
        })
}

/// A bad configuration value, reported with the usage exit status.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| match e {
                Error::Config(m) => anyhow::Error::new(UsageError(format!("{}: {m}", p.display()))),
                other => other.into(),
            })?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data_dir {
            cfg.data.dir = Some(d.clone());
        }
        if let Some(v) = &self.shots {
            cfg.shots = v.clone();
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        let t = &mut cfg.train;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.learning_rate = self.lr.unwrap_or(t.learning_rate);
        t.weight_decay = self.weight_decay.unwrap_or(t.weight_decay);
        t.code_switch_rate = self.alpha.unwrap_or(t.code_switch_rate);
        if let Some(l) = &self.lambda {
            t.loss_weights.original = l[0];
            t.loss_weights.augmented = l[1];
            t.loss_weights.consistency = l[2];
        }
        let p = &mut cfg.prompt;
        p.mode = self.mode.unwrap_or(p.mode);
        p.soft_len = self.prompt_len.unwrap_or(p.soft_len);
        p.max_len = self.max_len.unwrap_or(p.max_len);
        let m = &mut cfg.model;
        m.d_model = self.d_model.unwrap_or(m.d_model);
        m.layers = self.layers.unwrap_or(m.layers);
        m.heads = self.heads.unwrap_or(m.heads);
        m.ffn_dim = self.ffn_dim.unwrap_or(m.ffn_dim);
        m.max_seq_len = m.max_seq_len.max(cfg.prompt.max_len);
        if self.pivot_verbalizer {
            cfg.multilingual_verbalizer = false;
        }
        if let Some(scope) = self.train_scope {
            cfg.train.train_scope = scope;
        }
        if self.fresh_augmentation {
            cfg.train.static_augmentation = false;
        }
        if self.kl_on_answers {
            cfg.train.kl_support = KlSupport::VerbalizerUnion;
        }
        if self.target_scoring {
            cfg.scoring = EvalScoring::TargetLanguage;
        }
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    fn out_dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
            root.join(command)
        })
    }
}

/// Creates `dir` and writes the effective configuration into it.
fn prepare(cfg: &RunConfig, dir: &Path) -> anyhow::Result<Benchmark> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).context("writing effective config")?;
    Ok(cfg.data.load()?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let sizes = softmv::corpus::SplitSizes {
                train: a.train,
                dev: a.dev,
                test: a.test,
            };
            let bench: Benchmark = softmv::corpus::gen_synthetic_benchmark(a.languages, a.vocab, sizes, a.seed)
                .map_err(|e| UsageError(e.to_string()))?
                .into();
            bench.save_dir(&a.out)?;
            println!("wrote {} languages to {}", bench.languages.len(), a.out.display());
        }
        Command::Train(a) => {
            let cfg = a.run.config()?;
            let dir = a.run.out_dir("train");
            let bench = prepare(&cfg, &dir)?;
            if a.save_model {
                fs::create_dir_all(dir.join("logs"))?;
                let mut rows = Vec::new();
                for &k in &cfg.shots {
                    let mut reports = Vec::new();
                    for &s in &cfg.seeds {
                        let out = run_single(&cfg, &bench, k, s)?;
                        let stem = dir.join("logs").join(format!("k{k}_seed{s}"));
                        fs::write(stem.with_extension("steps.csv"), out.log.steps_csv())?;
                        fs::write(stem.with_extension("epochs.csv"), out.log.epochs_csv())?;
                        save_checkpoint(&out.model, stem.with_extension("ckpt"))?;
                        reports.push(out.report);
                    }
                    rows.push(softmv::experiment::ReportRow::from_reports(k.to_string(), reports)?);
                }
                write_report(&rows, "shots", &dir.join("results.csv"))?;
            } else {
                let rows = few_shot_grid(&cfg, &bench)?;
                write_report(&rows, "shots", &dir.join("results.csv"))?;
            }
            println!("{}", fs::read_to_string(dir.join("results.csv"))?.trim_end());
        }
        Command::Eval(a) => {
            let cfg = a.run.config()?;
            let bench = cfg.data.load()?;
            let task = cfg.task(&bench)?;
            let model = load_checkpoint_matching::<f64>(&a.checkpoint, &cfg.model.config(&task.vocab))?;
            let report = evaluate(&model, &bench.test_sets(), &task)?;
            let row = softmv::experiment::ReportRow::from_reports("checkpoint", vec![report])?;
            let dir = a.run.out_dir("eval");
            write_report(&[row], "model", &dir.join("eval.csv"))?;
            println!("{}", fs::read_to_string(dir.join("eval.csv"))?.trim_end());
        }
        Command::Ablate(a) => {
            let cfg = a.run.config()?;
            let dir = a.run.out_dir("ablate");
            let bench = prepare(&cfg, &dir)?;
            let which = a.only.unwrap_or_else(|| Ablation::ALL.to_vec());
            let rows = ablate(&cfg, &bench, &which)?;
            write_report(&rows, "config", &dir.join("ablation.csv"))?;
            println!("{}", fs::read_to_string(dir.join("ablation.csv"))?.trim_end());
        }
        Command::SweepPromptLen(a) => {
            let cfg = a.run.config()?;
            let dir = a.run.out_dir("sweep-prompt-len");
            let bench = prepare(&cfg, &dir)?;
            let lengths = a.lengths.unwrap_or_else(|| SWEEP_PROMPT_LENGTHS.to_vec());
            if lengths.is_empty() || lengths.contains(&0) {
                bail!(UsageError("prompt lengths must be positive".into()));
            }
            let rows = sweep_prompt_len(&cfg, &bench, &lengths)?;
            write_report(&rows, "prompt_len", &dir.join("prompt_len.csv"))?;
            println!("{}", fs::read_to_string(dir.join("prompt_len.csv"))?.trim_end());
        }
        Command::SweepCsLang(a) => {
            let cfg = a.config()?;
            let dir = a.out_dir("sweep-cs-lang");
            let bench = prepare(&cfg, &dir)?;
            let rows = sweep_cs_lang(&cfg, &bench)?;
            write_report(&rows, "strategy", &dir.join("cs_lang.csv"))?;
            println!("{}", fs::read_to_string(dir.join("cs_lang.csv"))?.trim_end());
        }
        Command::DumpQuestions(a) => {
            let cfg = a.run.config()?;
            let bench = cfg.data.load()?;
            let task = cfg.task(&bench)?;
            let seed = cfg.seeds[0];
            let (train, _) = few_shot_data(&bench, cfg.shots[0], seed)?;
            let cs = cfg.code_switch(&bench);
            for (i, ex) in train.examples.iter().take(a.count).enumerate() {
                let q = task.question(ex)?;
                println!("{}\t{}", ex.label.as_str(), render_question(&q, &task.vocab));
                if cs.rate > 0.0 {
                    let (p, h) = augment_annotated(ex, &cs, derive_seed(seed, &[i as u64]))?;
                    println!("\t{}", debug_dump_line(ex, &p, &h));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
