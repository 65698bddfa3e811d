//! Ratio sweep: for each fraction of the rewrite-pair set, train a
//! from-scratch baseline and a fine-tuned model on the same seeded subset,
//! evaluate both against the same candidate index, and report paired
//! metrics.

use serde::Serialize;

use super::{train, TrainConfig, TrainCorpus, TrainMode};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalCase, MetricsReport};
use crate::index::CandidateIndex;
use crate::objective::SimilarityConfig;
use crate::textproc::Vocabulary;
use crate::types::{CandidateRecord, RewritePair, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepArm {
    Baseline,
    Finetuned,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub ratio: f64,
    pub arm: SweepArm,
    pub n_train: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// One JSON record per (ratio, arm) row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let arm = serde_json::to_value(r.arm).expect("serializable");
            let record = serde_json::json!({
                "ratio": r.ratio,
                "arm": arm,
                "n_train": r.n_train,
                "p@1": r.metrics.p_at_1,
                "p@5": r.metrics.p_at_5,
                "p@10": r.metrics.p_at_10,
                "p@20": r.metrics.p_at_20,
                "mrr": r.metrics.mrr,
                "mean_first_rank": r.metrics.mean_first_rank,
                "coverage": r.metrics.coverage,
            });
            out.push_str(&record.to_string());
            out.push('\n');
        }
        out
    }
}

fn train_and_evaluate(
    pairs: &[RewritePair],
    cases: &[EvalCase],
    candidates: &[CandidateRecord],
    vocab: &Vocabulary,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    sim: &SimilarityConfig,
    init: Option<crate::encoder::EncoderParams>,
    eval_k: usize,
) -> Result<(usize, MetricsReport)> {
    let corpus = TrainCorpus::Pairs(pairs.to_vec());
    let (params, report) = train(&corpus, vocab, enc_cfg, cfg, sim, init)?;
    let index = CandidateIndex::build(candidates, &params, vocab, sim)?;
    let metrics = evaluate(cases, &index, &params, vocab, sim, eval_k)?;
    Ok((report.n_train, metrics))
}

/// Pretrain once on the sessions, then for each ratio train the two arms on
/// the identical seeded pair subset and evaluate them on the fixed case set.
/// `train_cfg.mode` selects the pretraining flavor when it names one;
/// otherwise text-only pretraining is used.
#[allow(clippy::too_many_arguments)]
pub fn run_ratio_sweep(
    pairs: &[RewritePair],
    sessions: &[Session],
    cases: &[EvalCase],
    candidates: &[CandidateRecord],
    vocab: &Vocabulary,
    ratios: &[f64],
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    sim: &SimilarityConfig,
    eval_k: usize,
) -> Result<SweepReport> {
    if ratios.is_empty() {
        return Err(Error::validation("ratio sweep needs at least one ratio"));
    }
    for &r in ratios {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::validation(format!("ratio {r} outside (0, 1]")));
        }
    }

    let pretrain_mode = match train_cfg.mode {
        TrainMode::PretrainText | TrainMode::PretrainTextNlu => train_cfg.mode,
        _ => TrainMode::PretrainText,
    };
    let pretrain_cfg = TrainConfig {
        mode: pretrain_mode,
        ..*train_cfg
    };
    let (pretrained, _) = train(
        &TrainCorpus::Sessions(sessions.to_vec()),
        vocab,
        enc_cfg,
        &pretrain_cfg,
        sim,
        None,
    )?;

    let mut rows = Vec::with_capacity(ratios.len() * 2);
    for &ratio in ratios {
        let baseline_cfg = TrainConfig {
            mode: TrainMode::Baseline,
            finetune_ratio: ratio,
            ..*train_cfg
        };
        let (n_train, metrics) = train_and_evaluate(
            pairs, cases, candidates, vocab, enc_cfg, &baseline_cfg, sim, None, eval_k,
        )?;
        rows.push(SweepRow {
            ratio,
            arm: SweepArm::Baseline,
            n_train,
            metrics,
        });

        let finetune_cfg = TrainConfig {
            mode: TrainMode::Finetune,
            finetune_ratio: ratio,
            max_epochs: train_cfg.finetune_epochs,
            patience: train_cfg.finetune_epochs.max(1),
            ..*train_cfg
        };
        let (n_train, metrics) = train_and_evaluate(
            pairs,
            cases,
            candidates,
            vocab,
            enc_cfg,
            &finetune_cfg,
            sim,
            Some(pretrained.clone()),
            eval_k,
        )?;
        rows.push(SweepRow {
            ratio,
            arm: SweepArm::Finetuned,
            n_train,
            metrics,
        });
    }
    Ok(SweepReport { rows })
}
