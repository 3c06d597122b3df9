//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softmv::augment::{augment_question, CodeSwitchConfig, LanguageStrategy};
use softmv::corpus::{BilingualDictionary, Label, NliExample};
use softmv::experiment::{
    ablate, detail_table, few_shot_grid, report_table, run_single, sweep_prompt_len, Ablation, Benchmark, RunConfig,
    DEFAULT_SEEDS, GRID_SHOTS, SWEEP_PROMPT_LENGTHS,
};
use softmv::model::{init_model, HeadTying, MaskDistribution, ModelConfig, ModelState, PromptInit, TrainScope};
use softmv::objective::{batch_ce, instance_ce, kl_consistency, total_loss_with_grads, KlSupport, LossWeights};
use softmv::optim::AdamW;
use softmv::prompt::ClozeQuestion;
use softmv::verbalizer::{MultilingualVerbalizer, Verbalizer};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

fn tiny_config(head_tying: HeadTying) -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        d_model: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        max_seq_len: 16,
        head_tying,
        soft_slots: 2,
    }
}

fn question(ids: &[u32], mask: usize, label: Label) -> ClozeQuestion {
    ClozeQuestion {
        token_ids: ids.to_vec(),
        mask_position: mask,
        soft_positions: vec![],
        label,
        language: "en".into(),
    }
}

fn two_language_verbalizer(vocab_size: usize) -> MultilingualVerbalizer {
    let mut mv = MultilingualVerbalizer::new(Verbalizer::new("en", [11, 12, 13], vocab_size).unwrap());
    mv.insert(Verbalizer::new("s1", [14, 15, 16], vocab_size).unwrap());
    mv
}

/// Batch of two original/augmented pairs over the tiny vocabulary.
fn gradient_batch() -> (Vec<ClozeQuestion>, Vec<ClozeQuestion>, Vec<Label>) {
    let orig = vec![
        question(&[1, 7, 8, 9, 2, 1, 8, 10, 4, 5, 3, 2], 10, Label::Entailment),
        question(&[1, 17, 18, 2, 1, 18, 19, 7, 4, 5, 3, 2], 10, Label::Contradiction),
    ];
    let aug = vec![
        question(&[1, 7, 14, 9, 2, 1, 8, 16, 4, 5, 3, 2], 10, Label::Entailment),
        question(&[1, 12, 18, 2, 1, 18, 13, 7, 4, 5, 3, 2], 10, Label::Contradiction),
    ];
    let labels = orig.iter().map(|q| q.label).collect();
    (orig, aug, labels)
}

fn batch_loss(model: &ModelState<f64>, mv: &MultilingualVerbalizer, w: &LossWeights) -> f64 {
    let (orig, aug, labels) = gradient_batch();
    let o: Vec<Vec<f64>> = orig.iter().map(|q| model.forward(q).unwrap().probs).collect();
    let a: Vec<Vec<f64>> = aug.iter().map(|q| model.forward(q).unwrap().probs).collect();
    let or: Vec<&[f64]> = o.iter().map(|v| v.as_slice()).collect();
    let ar: Vec<&[f64]> = a.iter().map(|v| v.as_slice()).collect();
    total_loss_with_grads(&or, Some(&ar), &labels, mv, w, KlSupport::FullVocabulary)
        .unwrap()
        .breakdown
        .total
}

fn analytic_gradient(model: &ModelState<f64>, mv: &MultilingualVerbalizer, w: &LossWeights) -> Vec<f64> {
    let (orig, aug, labels) = gradient_batch();
    let oc: Vec<_> = orig.iter().map(|q| model.forward(q).unwrap()).collect();
    let ac: Vec<_> = aug.iter().map(|q| model.forward(q).unwrap()).collect();
    let or: Vec<&[f64]> = oc.iter().map(|c| c.probs.as_slice()).collect();
    let ar: Vec<&[f64]> = ac.iter().map(|c| c.probs.as_slice()).collect();
    let lg = total_loss_with_grads(&or, Some(&ar), &labels, mv, w, KlSupport::FullVocabulary).unwrap();
    let mut grads = vec![0.0; model.num_params()];
    for (c, d) in oc.iter().zip(&lg.original) {
        model.backward(c, d, &mut grads);
    }
    for (c, d) in ac.iter().zip(&lg.augmented) {
        model.backward(c, d, &mut grads);
    }
    grads
}

/// Worst per-tensor relative error `|a - n| / max(|a|, |n|)` with central
/// differences of step 1e-4.
fn gradient_check(head_tying: HeadTying) -> Result<(f64, usize), String> {
    let cfg = tiny_config(head_tying);
    let mut model: ModelState<f64> = init_model(&cfg, 11).map_err(|e| e.to_string())?;
    // move the prompt rows away from the mean so their gradient is generic
    model.init_soft_prompts(PromptInit::Random);
    let mv = two_language_verbalizer(cfg.vocab_size);
    let w = LossWeights::new(0.8, 1.1, 0.7).unwrap();
    let analytic = analytic_gradient(&model, &mv, &w);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let tensors = model.layout().tensors().to_vec();
    for (name, slot) in &tensors {
        let mut diff = 0.0;
        let mut a_norm = 0.0;
        let mut n_norm = 0.0;
        for i in slot.range() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let up = batch_loss(&model, &mv, &w);
            model.params_mut()[i] = orig - h;
            let down = batch_loss(&model, &mv, &w);
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff += (analytic[i] - numeric).powi(2);
            a_norm += analytic[i].powi(2);
            n_norm += numeric.powi(2);
        }
        let scale = a_norm.sqrt().max(n_norm.sqrt());
        // key biases cancel in the softmax, so their gradient is exactly zero
        let rel = if scale < 1e-8 { 0.0 } else { diff.sqrt() / scale };
        if rel > 1e-4 {
            return Err(format!("tensor {name}: relative error {rel:.3e}"));
        }
        worst = worst.max(rel);
    }
    Ok((worst, tensors.len()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (tied, groups) = gradient_check(HeadTying::TiedToEmbeddings)?;
    let (untied, _) = gradient_check(HeadTying::Untied)?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{groups} tensors, worst relative error {:.2e} tied / {untied:.2e} untied, {:.1}s",
        tied,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2. loss identities

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0f64).powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let p = random_distribution(&mut rng, 20);
        let q = random_distribution(&mut rng, 20);
        let pp = kl_consistency(&p, &p).unwrap();
        check(pp == 0.0, || format!("pair {i}: KL(p,p) = {pp}"))?;
        let pq = kl_consistency(&p, &q).unwrap();
        let qp = kl_consistency(&q, &p).unwrap();
        check(pq == qp && pq >= 0.0, || format!("pair {i}: {pq} vs {qp}"))?;
    }

    let mv = two_language_verbalizer(20);
    let mut probs = vec![0.5 / 18.0; 20];
    probs[11] = 0.4;
    probs[14] = 0.1;
    let ce = instance_ce(&MaskDistribution::from_probs(probs), Label::Entailment, &mv);
    let oracle = -(0.4f64.ln() + 0.1f64.ln()) / 2.0;
    check((ce - oracle).abs() <= 1e-4 && (ce - 1.6094).abs() <= 1e-4, || {
        format!("two-language case gave {ce}, oracle {oracle}")
    })?;

    let labels: Vec<Label> = (0..8).map(|i| Label::ALL[i % 3]).collect();
    let dists: Vec<MaskDistribution<f64>> = (0..8)
        .map(|_| MaskDistribution::from_probs(random_distribution(&mut rng, 20)))
        .collect();
    let got = batch_ce(&dists, &labels, &mv).unwrap();
    let mut sum = 0.0;
    for (d, &y) in dists.iter().zip(&labels) {
        let idx = [[11usize, 12, 13][y.index()], [14usize, 15, 16][y.index()]];
        let mut inner = 0.0;
        for j in 0..20 {
            if idx.contains(&j) {
                inner += d.probs[j].max(1e-12).ln();
            }
        }
        sum += -inner / 2.0;
    }
    let loop_oracle = sum / 8.0;
    check((got - loop_oracle).abs() <= 1e-12, || format!("batch_ce {got} vs loop {loop_oracle}"))?;
    Ok(format!(
        "1000 KL pairs exact, two-language CE {ce:.6}, batch CE diff {:.1e}",
        (got - loop_oracle).abs()
    ))
}

// ---------------------------------------------------------------------------
// 3. code-switch law

fn criterion_3() -> Outcome {
    let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let dict = |lang: &str| {
        BilingualDictionary::from_pairs("en", lang, words.iter().map(|w| (w.clone(), format!("{w}_{lang}"))))
    };
    let example = NliExample::new(words.clone(), words.clone(), Label::Neutral, "en").unwrap();
    let cfg = CodeSwitchConfig::new(
        0.3,
        LanguageStrategy::RandomPerWord,
        vec![dict("de"), dict("fr"), dict("tr")],
        0,
    )
    .unwrap();
    for seed in 0..1000u64 {
        let aug = augment_question(&example, &cfg, seed).unwrap();
        for sent in [&aug.premise, &aug.hypothesis] {
            check(sent.len() == 10, || format!("seed {seed}: length {}", sent.len()))?;
            let mut changed = 0;
            for (a, b) in sent.iter().zip(&words) {
                if a != b {
                    changed += 1;
                }
            }
            check(changed == 3, || format!("seed {seed}: {changed} replacements"))?;
        }
    }

    let zero = CodeSwitchConfig::new(0.0, LanguageStrategy::RandomPerWord, vec![dict("de")], 0).unwrap();
    for seed in 0..100u64 {
        let aug = augment_question(&example, &zero, seed).unwrap();
        check(aug.premise == words && aug.hypothesis == words, || format!("alpha=0 changed seed {seed}"))?;
    }

    let bij = dict("s1");
    let full = CodeSwitchConfig::new(1.0, LanguageStrategy::Fixed("s1".into()), vec![bij.clone()], 0).unwrap();
    for seed in 0..100u64 {
        let aug = augment_question(&example, &full, seed).unwrap();
        check(aug.premise == bij.translate_words(&words), || format!("alpha=1 seed {seed}"))?;
    }
    Ok("1000 seeds x 2 sentences: 3 of 10 replaced, length kept; alpha=0 identity; alpha=1 translation".into())
}

// ---------------------------------------------------------------------------
// 4. ablation direction

/// Desk-scale setting of the ablation comparison.
fn ablation_config() -> RunConfig {
    let mut cfg = RunConfig {
        shots: vec![64],
        seeds: DEFAULT_SEEDS.to_vec(),
        ..RunConfig::default()
    };
    cfg.model.d_model = 32;
    cfg.model.heads = 4;
    cfg.model.ffn_dim = 64;
    cfg.model.layers = 2;
    cfg.train.epochs = 30;
    cfg.train.track_train_accuracy = false;
    cfg
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let cfg = ablation_config();
    let bench = cfg.data.load().map_err(|e| e.to_string())?;
    let targets = bench.targets();
    let which = [
        Ablation::Full,
        Ablation::WithoutCodeSwitch,
        Ablation::WithoutConsistency,
        Ablation::WithoutMultilingualVerbalizer,
    ];
    let rows = ablate(&cfg, &bench, &which).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let target_mean = |i: usize| rows[i].mean.mean_over(targets.iter().map(String::as_str));
    let full = target_mean(0);
    let mut parts = vec![format!("full {full:.4}")];
    let mut failures = Vec::new();
    for (i, a) in which.iter().enumerate().skip(1) {
        let v = target_mean(i);
        parts.push(format!("{} {v:.4}", a.label()));
        if v > full {
            failures.push(format!("{} beats full ({v:.4} > {full:.4})", a.label()));
        }
    }
    if elapsed > Duration::from_secs(15 * 60) {
        failures.push(format!("took {:.0}s", elapsed.as_secs_f64()));
    }
    let summary = format!("{}, {:.0}s", parts.join(", "), elapsed.as_secs_f64());
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// 5. soft-prompt initialization and freezing

fn criterion_5() -> Outcome {
    let cfg = ModelConfig {
        vocab_size: 40,
        soft_slots: 4,
        ..tiny_config(HeadTying::TiedToEmbeddings)
    };
    let mut model: ModelState<f64> = init_model(&cfg, 5).map_err(|e| e.to_string())?;
    model.init_soft_prompts(PromptInit::VocabMean);

    let d = cfg.d_model;
    let mut oracle = vec![0.0f64; d];
    let lexical = (4 + cfg.soft_slots)..cfg.vocab_size;
    for r in lexical.clone() {
        for (o, v) in oracle.iter_mut().zip(model.embedding_row(r)) {
            *o += v;
        }
    }
    for o in &mut oracle {
        *o /= lexical.len() as f64;
    }
    for (i, row) in model.prompt_rows().iter().enumerate() {
        check(
            row.iter().zip(&oracle).all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("prompt row {i} differs from the vocabulary mean"),
        )?;
    }

    // frozen prompts survive evaluation and an optimizer step
    model.set_prompt_trainable(false);
    let before: Vec<Vec<u64>> = model.prompt_rows().iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
    let fp = model.fingerprint();
    let q = question(&[1, 20, 21, 2, 1, 22, 4, 5, 6, 7, 3, 2], 10, Label::Neutral);
    let mut probs = Vec::new();
    for _ in 0..3 {
        probs.push(model.mask_distribution(&q).map_err(|e| e.to_string())?.probs);
    }
    check(model.fingerprint() == fp, || "evaluation changed the model".into())?;

    let cache = model.forward(&q).map_err(|e| e.to_string())?;
    let mut grads = vec![0.0; model.num_params()];
    let dprobs: Vec<f64> = (0..cfg.vocab_size).map(|j| if j == 30 { -5.0 } else { 0.1 }).collect();
    model.backward(&cache, &dprobs, &mut grads);
    let ranges = model.update_ranges(TrainScope::All);
    let mut opt = AdamW::new(model.num_params(), 0.01, 0.01);
    opt.step(model.params_mut(), &grads, &ranges);
    let after: Vec<Vec<u64>> = model.prompt_rows().iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
    check(before == after, || "prompt rows moved while frozen".into())?;
    check(model.fingerprint() != fp, || "optimizer step changed nothing".into())?;
    Ok(format!("{} prompt rows equal the vocabulary mean bitwise; frozen rows unchanged", cfg.soft_slots))
}

// ---------------------------------------------------------------------------
// 6. few-shot grid

fn grid_config() -> RunConfig {
    let mut cfg = RunConfig {
        shots: GRID_SHOTS.to_vec(),
        seeds: DEFAULT_SEEDS.to_vec(),
        ..RunConfig::default()
    };
    cfg.model.d_model = 16;
    cfg.model.heads = 2;
    cfg.model.ffn_dim = 32;
    cfg.model.layers = 1;
    cfg.train.epochs = 3;
    cfg.train.track_train_accuracy = false;
    cfg
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = grid_config();
    let bench = cfg.data.load().map_err(|e| e.to_string())?;
    let rows = few_shot_grid(&cfg, &bench).map_err(|e| e.to_string())?;
    let table = report_table(&rows, "shots").map_err(|e| e.to_string())?;
    let detail = detail_table(&rows, "shots").map_err(|e| e.to_string())?;

    let lines: Vec<&str> = table.lines().collect();
    check(lines[0] == "shots,EN,S1,S2,S3,AVG", || format!("header `{}`", lines[0]))?;
    check(lines.len() == 1 + GRID_SHOTS.len(), || format!("{} table lines", lines.len()))?;
    for (line, k) in lines[1..].iter().zip(GRID_SHOTS) {
        let cols: Vec<&str> = line.split(',').collect();
        check(cols[0] == k.to_string() && cols.len() == 6, || format!("row `{line}`"))?;
    }
    check(detail.lines().count() == 1 + GRID_SHOTS.len() * 5, || "detail rows".into())?;
    for r in &rows {
        let seeds: Vec<u64> = r.per_seed.iter().filter_map(|s| s.seed).collect();
        check(seeds == DEFAULT_SEEDS, || format!("row {} seeds {seeds:?}", r.name))?;
    }

    let again = few_shot_grid(&cfg, &bench).map_err(|e| e.to_string())?;
    check(report_table(&again, "shots").unwrap() == table, || "rerun table differs".into())?;
    check(detail_table(&again, "shots").unwrap() == detail, || "rerun detail differs".into())?;
    Ok(format!(
        "{} shot counts x 5 seeds, {}-column table, rerun byte-identical, {:.0}s",
        GRID_SHOTS.len(),
        lines[0].split(',').count(),
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 7. overfit sanity

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default();
    check(cfg.train.epochs == 70 && cfg.shots == vec![8], || "default config changed".into())?;
    let bench: Benchmark = cfg.data.load().map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for &seed in &DEFAULT_SEEDS {
        let out = run_single(&cfg, &bench, 8, seed).map_err(|e| e.to_string())?;
        let first = out
            .log
            .epochs
            .iter()
            .find(|e| e.train_accuracy.unwrap_or(0.0) >= 0.99)
            .map(|e| e.epoch);
        match first {
            Some(epoch) => parts.push(format!("seed {seed}@{epoch}")),
            None => {
                let best = out.log.epochs.iter().filter_map(|e| e.train_accuracy).fold(0.0, f64::max);
                return Err(format!("seed {seed} peaked at {best:.3} train accuracy"));
            }
        }
    }
    Ok(format!(
        "99% train accuracy reached ({}), {:.0}s",
        parts.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 8. prompt-length sweep

fn sweep_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.d_model = 32;
    cfg.model.heads = 4;
    cfg.model.ffn_dim = 64;
    cfg.train.epochs = 20;
    cfg.train.track_train_accuracy = false;
    cfg
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = sweep_config();
    let bench = cfg.data.load().map_err(|e| e.to_string())?;
    let rows = sweep_prompt_len(&cfg, &bench, &SWEEP_PROMPT_LENGTHS).map_err(|e| e.to_string())?;
    let table = report_table(&rows, "prompt_len").map_err(|e| e.to_string())?;
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    check(names == ["1", "2", "4", "8", "16"], || format!("rows {names:?}"))?;
    for r in &rows {
        check(
            r.per_seed.len() == 5 && (0.0..=1.0).contains(&r.mean.average),
            || format!("row {}", r.name),
        )?;
    }
    let again = sweep_prompt_len(&cfg, &bench, &SWEEP_PROMPT_LENGTHS).map_err(|e| e.to_string())?;
    check(report_table(&again, "prompt_len").unwrap() == table, || "rerun differs".into())?;
    let avgs: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.name, r.mean.average)).collect();
    Ok(format!(
        "lengths {} completed twice identically, {:.0}s",
        avgs.join(" "),
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient correctness", criterion_1),
        ("2 loss identities", criterion_2),
        ("3 code-switch law", criterion_3),
        ("4 ablation direction", criterion_4),
        ("5 soft-prompt init and freezing", criterion_5),
        ("6 few-shot grid protocol", criterion_6),
        ("7 overfit sanity", criterion_7),
        ("8 prompt-length sweep", criterion_8),
    ];
    let mut failed = 0;
    let mut ran = BTreeMap::new();
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = f();
        match &outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
        ran.insert(name, outcome.is_ok());
    }
    println!("acceptance: {} passed, {failed} failed", ran.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
