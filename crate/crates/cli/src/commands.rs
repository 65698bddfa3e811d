//! Implementations of the CLI subcommands. Every command is reproducible
//! from its config and seeds alone and echoes the effective configuration
//! into its output directory; inputs are never mutated.

use std::path::{Path, PathBuf};
use std::time::Instant;

use qrewrite_core::data::{self, generate_corpus, io};
use qrewrite_core::encoder::{load_checkpoint, save_checkpoint, EncoderParams};
use qrewrite_core::eval;
use qrewrite_core::gradcheck;
use qrewrite_core::index::{self, CandidateIndex};
use qrewrite_core::textproc::{build_vocab, serialize_hypothesis, tokenize, Vocabulary};
use qrewrite_core::trainer::{self, run_ratio_sweep, TrainCorpus, TrainMode};
use qrewrite_core::types::{RewritePair, Session};

use crate::config::RunConfig;
use crate::{CommonArgs, Failure};

fn load_cfg(common: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.override_seeds(seed);
    }
    Ok(cfg)
}

fn prepare_out_dir(out: &Path, force: bool) -> Result<(), Failure> {
    if out.exists() {
        let non_empty = out
            .read_dir()
            .map_err(|e| Failure::runtime(format!("cannot inspect {}: {e}", out.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Failure::validation(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok(())
}

fn missing(path: &Path, what: &str) -> Failure {
    Failure::runtime(format!(
        "{what} not found at {}; generate or point --{what} at an existing file",
        path.display()
    ))
}

fn read_sessions_file(path: &Path) -> Result<Vec<Session>, Failure> {
    if !path.exists() {
        return Err(missing(path, "sessions"));
    }
    let (utterances, _) = io::read_utterances(path, true)?;
    let sessions = data::segment_sessions(&utterances);
    Ok(data::filter_sessions(sessions))
}

fn read_pairs_file(path: &Path) -> Result<Vec<RewritePair>, Failure> {
    if !path.exists() {
        return Err(missing(path, "pairs"));
    }
    let (pairs, _) = io::read_pairs(path, true)?;
    Ok(pairs.into_iter().map(|(p, _)| p).collect())
}

/// Vocabulary corpus for sessions: every turn text plus every serialized
/// hypothesis, so text and hypothesis modalities share tokens.
fn session_vocab_lines(sessions: &[Session]) -> Vec<String> {
    let mut lines = Vec::new();
    for s in sessions {
        for t in s.turns() {
            lines.push(t.text.clone());
            if let Some(h) = &t.nlu {
                if let Ok(ser) = serialize_hypothesis(h) {
                    lines.push(ser);
                }
            }
        }
    }
    lines
}

fn pair_vocab_lines(pairs: &[RewritePair]) -> Vec<String> {
    pairs
        .iter()
        .flat_map(|p| [p.source.text.clone(), p.target.text.clone()])
        .collect()
}

fn load_vocab_or(path: Option<&Path>, fallback_lines: &[String], min_count: u32) -> Result<Vocabulary, Failure> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(missing(p, "vocab"));
            }
            Ok(Vocabulary::load(p)?)
        }
        None => Ok(build_vocab(fallback_lines, min_count)?),
    }
}

fn load_model(checkpoint: &Path, vocab: Option<&Path>) -> Result<(EncoderParams, Vocabulary), Failure> {
    if !checkpoint.exists() {
        return Err(missing(checkpoint, "checkpoint"));
    }
    let (params, cfg) = load_checkpoint(checkpoint)?;
    let vocab_path = match vocab {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("vocab.txt"),
    };
    if !vocab_path.exists() {
        return Err(missing(&vocab_path, "vocab"));
    }
    let vocabulary = Vocabulary::load(&vocab_path)?;
    cfg.ensure_vocab(&vocabulary)?;
    Ok((params, vocabulary))
}

fn save_training_outputs(
    out: &Path,
    params: &EncoderParams,
    vocab: &Vocabulary,
    report: &trainer::TrainReport,
    cfg: &RunConfig,
) -> Result<(PathBuf, PathBuf), Failure> {
    let ckpt = out.join("checkpoint.bin");
    let vpath = out.join("vocab.txt");
    save_checkpoint(params, &ckpt)?;
    vocab.save(&vpath)?;
    std::fs::write(out.join("report.jsonl"), report.to_jsonl())
        .map_err(|e| Failure::runtime(format!("cannot write report: {e}")))?;
    cfg.echo_into(out)?;
    Ok((ckpt, vpath))
}

fn parse_pretrain_mode(mode: &str) -> Result<TrainMode, Failure> {
    match mode {
        "text" => Ok(TrainMode::PretrainText),
        "text_nlu" | "textnlu" => Ok(TrainMode::PretrainTextNlu),
        other => Err(Failure::validation(format!(
            "unknown pretrain mode {other:?}; expected text or text_nlu"
        ))),
    }
}

pub fn datagen(common: &CommonArgs, out: &Path, force: bool) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    prepare_out_dir(out, force)?;
    let started = Instant::now();
    let corpus = generate_corpus(&cfg.generator_config())?;
    io::write_utterances(&out.join("sessions.jsonl"), &corpus.utterances)?;
    io::write_pairs(&out.join("gold_pairs.tsv"), &corpus.gold_pairs)?;
    io::write_candidates(&out.join("candidates.jsonl"), &corpus.candidates)?;
    io::write_eval_cases(&out.join("eval_cases.jsonl"), &corpus.eval_cases)?;
    cfg.echo_into(out)?;
    println!(
        "datagen: {} utterances, {} gold pairs, {} candidates, {} eval cases in {:.1}s -> {}",
        corpus.utterances.len(),
        corpus.gold_pairs.len(),
        corpus.candidates.len(),
        corpus.eval_cases.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

pub fn pretrain(
    common: &CommonArgs,
    sessions_path: &Path,
    out: &Path,
    mode: &str,
    epochs: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    let mode = parse_pretrain_mode(mode)?;
    prepare_out_dir(out, true)?;
    let sessions = read_sessions_file(sessions_path)?;
    let vocab = build_vocab(&session_vocab_lines(&sessions), cfg.vocab.min_count)?;
    let enc_cfg = cfg.encoder_config(vocab.len());
    let mut tcfg = cfg.train_config(mode);
    if let Some(e) = epochs {
        tcfg.max_epochs = e;
    }
    let started = Instant::now();
    let (params, report) = trainer::train(
        &TrainCorpus::Sessions(sessions),
        &vocab,
        &enc_cfg,
        &tcfg,
        &cfg.similarity_config(),
        None,
    )?;
    let (ckpt, _) = save_training_outputs(out, &params, &vocab, &report, &cfg)?;
    println!(
        "pretrain[{mode}]: {} examples, best epoch {} of {}, {:.1}s -> {}",
        report.n_train,
        report.best_epoch,
        report.epochs.len(),
        started.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

pub fn train_baseline(
    common: &CommonArgs,
    pairs_path: &Path,
    out: &Path,
    vocab: Option<&Path>,
    ratio: Option<f64>,
    epochs: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    prepare_out_dir(out, true)?;
    let pairs = read_pairs_file(pairs_path)?;
    let vocabulary = load_vocab_or(vocab, &pair_vocab_lines(&pairs), cfg.vocab.min_count)?;
    let enc_cfg = cfg.encoder_config(vocabulary.len());
    let mut tcfg = cfg.train_config(TrainMode::Baseline);
    if let Some(r) = ratio {
        tcfg.finetune_ratio = r;
    }
    if let Some(e) = epochs {
        tcfg.max_epochs = e;
    }
    let started = Instant::now();
    let (params, report) = trainer::train(
        &TrainCorpus::Pairs(pairs),
        &vocabulary,
        &enc_cfg,
        &tcfg,
        &cfg.similarity_config(),
        None,
    )?;
    let (ckpt, _) = save_training_outputs(out, &params, &vocabulary, &report, &cfg)?;
    println!(
        "train-baseline: {} pairs, best epoch {} of {}, {:.1}s -> {}",
        report.n_train,
        report.best_epoch,
        report.epochs.len(),
        started.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

pub fn finetune(
    common: &CommonArgs,
    pairs_path: &Path,
    init_checkpoint: &Path,
    out: &Path,
    vocab: Option<&Path>,
    ratio: Option<f64>,
    epochs: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    prepare_out_dir(out, true)?;
    let pairs = read_pairs_file(pairs_path)?;
    let (init, vocabulary) = load_model(init_checkpoint, vocab)?;
    let enc_cfg = *init.cfg();
    let mut tcfg = cfg.train_config(TrainMode::Finetune);
    tcfg.max_epochs = epochs.unwrap_or(cfg.train.finetune_epochs);
    tcfg.patience = tcfg.max_epochs.max(1);
    if let Some(r) = ratio {
        tcfg.finetune_ratio = r;
    }
    let started = Instant::now();
    let (params, report) = trainer::train(
        &TrainCorpus::Pairs(pairs),
        &vocabulary,
        &enc_cfg,
        &tcfg,
        &cfg.similarity_config(),
        Some(init),
    )?;
    let (ckpt, _) = save_training_outputs(out, &params, &vocabulary, &report, &cfg)?;
    println!(
        "finetune: {} pairs (ratio {}), {} epochs, {:.1}s -> {}",
        report.n_train,
        tcfg.finetune_ratio,
        report.epochs.len(),
        started.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

pub fn build_index(
    common: &CommonArgs,
    candidates_path: &Path,
    checkpoint: &Path,
    vocab: Option<&Path>,
    out: &Path,
    partition: bool,
) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    if !candidates_path.exists() {
        return Err(missing(candidates_path, "candidates"));
    }
    let (records, _) = io::read_candidates(candidates_path, true)?;
    let (params, vocabulary) = load_model(checkpoint, vocab)?;
    let started = Instant::now();
    let mut idx = CandidateIndex::build(&records, &params, &vocabulary, &cfg.similarity_config())?;
    let mut partition_note = String::new();
    if partition {
        let n_list = if cfg.index.n_list == 0 {
            index::default_n_list(idx.len())
        } else {
            cfg.index.n_list
        };
        idx.build_partition(n_list, cfg.index.kmeans_iters, cfg.index.seed)?;
        partition_note = format!(", {n_list} lists");
    }
    idx.save(out)?;
    println!(
        "build-index: {} entries{partition_note}, {:.1}s -> {}",
        idx.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

pub fn query(
    common: &CommonArgs,
    index_path: &Path,
    checkpoint: &Path,
    vocab: Option<&Path>,
    text: &str,
    k: usize,
    probe: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    if !index_path.exists() {
        return Err(missing(index_path, "index"));
    }
    let idx = CandidateIndex::load(index_path)?;
    let (params, vocabulary) = load_model(checkpoint, vocab)?;
    idx.ensure_dim(params.cfg().d_out)?;
    let sim = cfg.similarity_config();
    let seq = tokenize(text, &vocabulary, params.cfg().max_len)?;
    let emb = qrewrite_core::encoder::encode_eval(&params, &seq)?;
    let qvec = index::project_query(&emb, &params, &sim);
    let hits = match probe {
        Some(n_probe) => idx.search_approx(&qvec, k, n_probe)?,
        None => idx.search_exact(&qvec, k),
    };
    for (rank, (entry, score)) in hits.iter().enumerate() {
        println!("{}\t{score:.4}\t{}", rank + 1, entry.text);
    }
    Ok(())
}

pub fn evaluate(
    common: &CommonArgs,
    cases_path: &Path,
    index_path: &Path,
    checkpoint: &Path,
    vocab: Option<&Path>,
    out: &Path,
    k: usize,
) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    if !cases_path.exists() {
        return Err(missing(cases_path, "cases"));
    }
    if !index_path.exists() {
        return Err(missing(index_path, "index"));
    }
    let (cases, _) = io::read_eval_cases(cases_path, true)?;
    let idx = CandidateIndex::load(index_path)?;
    let (params, vocabulary) = load_model(checkpoint, vocab)?;
    let started = Instant::now();
    let report = eval::evaluate(&cases, &idx, &params, &vocabulary, &cfg.similarity_config(), k)?;
    io::write_metrics(out, &report)?;
    println!(
        "evaluate: {} cases, p@1 {:.4}, p@5 {:.4}, p@20 {:.4}, mrr {:.4}, {:.1}s -> {}",
        report.n_cases,
        report.p_at_1,
        report.p_at_5,
        report.p_at_20,
        report.mrr,
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    common: &CommonArgs,
    pairs_path: &Path,
    sessions_path: &Path,
    cases_path: &Path,
    candidates_path: &Path,
    out: &Path,
    ratios: &str,
    mode: &str,
    k: usize,
) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    let pretrain_mode = parse_pretrain_mode(mode)?;
    prepare_out_dir(out, true)?;
    let pairs = read_pairs_file(pairs_path)?;
    let sessions = read_sessions_file(sessions_path)?;
    if !cases_path.exists() {
        return Err(missing(cases_path, "cases"));
    }
    let (cases, _) = io::read_eval_cases(cases_path, true)?;
    if !candidates_path.exists() {
        return Err(missing(candidates_path, "candidates"));
    }
    let (candidates, _) = io::read_candidates(candidates_path, true)?;

    let ratios: Vec<f64> = ratios
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::validation(format!("bad ratio {s:?}")))
        })
        .collect::<Result<_, _>>()?;

    // both arms share one vocabulary covering sessions, hypotheses, and pairs
    let mut lines = session_vocab_lines(&sessions);
    lines.extend(pair_vocab_lines(&pairs));
    lines.extend(candidates.iter().map(|c| c.text.clone()));
    let vocab = build_vocab(&lines, cfg.vocab.min_count)?;
    let enc_cfg = cfg.encoder_config(vocab.len());
    let tcfg = cfg.train_config(pretrain_mode);

    let started = Instant::now();
    let report = run_ratio_sweep(
        &pairs,
        &sessions,
        &cases,
        &candidates,
        &vocab,
        &ratios,
        &enc_cfg,
        &tcfg,
        &cfg.similarity_config(),
        k,
    )?;
    std::fs::write(out.join("sweep.jsonl"), report.to_jsonl())
        .map_err(|e| Failure::runtime(format!("cannot write sweep report: {e}")))?;
    cfg.echo_into(out)?;
    for row in &report.rows {
        println!(
            "ratio {:.2} {:?} n_train {} p@1 {:.4} p@5 {:.4} mrr {:.4}",
            row.ratio, row.arm, row.n_train, row.metrics.p_at_1, row.metrics.p_at_5, row.metrics.mrr
        );
    }
    println!(
        "sweep: {} rows in {:.1}s -> {}",
        report.rows.len(),
        started.elapsed().as_secs_f64(),
        out.join("sweep.jsonl").display()
    );
    Ok(())
}

pub fn gradcheck(common: &CommonArgs, eps: f64) -> Result<(), Failure> {
    let cfg = load_cfg(common)?;
    let sim = cfg.similarity_config();
    let mut worst_overall = 0.0f64;
    for (i, enc_cfg) in gradcheck::standard_check_configs().iter().enumerate() {
        let report = gradcheck::check_contrastive_gradients(enc_cfg, &sim, 3, enc_cfg.seed ^ 0xabc, eps)?;
        println!(
            "gradcheck config {}: {} params, max relative error {:.3e} (worst at {})",
            i + 1,
            report.n_params,
            report.max_rel_err,
            report.worst_param
        );
        worst_overall = worst_overall.max(report.max_rel_err);
    }
    if worst_overall > 1e-4 {
        return Err(Failure::check(format!(
            "gradient check failed: max relative error {worst_overall:.3e} exceeds 1e-4"
        )));
    }
    println!("gradcheck: all configurations within 1e-4");
    Ok(())
}
