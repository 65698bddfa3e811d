//! Optimization loop: Adam over the flat parameter buffer, deterministic
//! mini-batching with in-batch negatives, dropout control, a hash-based
//! validation split, and early stopping on validation loss.
//!
//! Determinism: one ChaCha stream drives shuffling and per-sequence dropout
//! seeds; batch gradients accumulate over a fixed number of chunks so the
//! floating-point summation order never depends on thread count.

mod sweep;

pub use sweep::{run_ratio_sweep, SweepReport, SweepRow};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::{
    backward_into, forward_cached, init_params, DropoutMode, EncoderConfig, EncoderParams,
    ParamGradients, SeqCache,
};
use crate::error::{Error, Result};
use crate::objective::{contrastive_from_embeddings, EmbeddingGrads, SimilarityConfig};
use crate::textproc::{serialize_hypothesis, tokenize, TokenSequence, Vocabulary};
use crate::types::{RewritePair, Session, Utterance};

/// Fixed gradient-accumulation fan-out; constant so the reduction order (and
/// therefore every bit of the result) is machine-independent.
const GRAD_CHUNKS: usize = 8;

/// Fraction of examples held out for validation, selected by text hash.
const VALIDATION_PERCENT: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Baseline,
    PretrainText,
    PretrainTextNlu,
    Finetune,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainMode::Baseline => "baseline",
            TrainMode::PretrainText => "pretrain_text",
            TrainMode::PretrainTextNlu => "pretrain_text_nlu",
            TrainMode::Finetune => "finetune",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Fraction of the training pool actually used (seeded sampling);
    /// applies to the pair modes.
    pub finetune_ratio: f64,
    /// Epoch budget of the fine-tuning arm in sweeps.
    pub finetune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 7,
            mode: TrainMode::Baseline,
            finetune_ratio: 1.0,
            finetune_epochs: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::validation("patience must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(self.finetune_ratio > 0.0 && self.finetune_ratio <= 1.0) {
            return Err(Error::validation(format!(
                "finetune_ratio {} outside (0, 1]",
                self.finetune_ratio
            )));
        }
        Ok(())
    }
}

/// First- and second-moment accumulators, mirroring the flat parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }
}

/// One Adam update. Non-finite gradients abort the step before any state or
/// parameter mutation.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &ParamGradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let g = grads.data();
    if g.len() != params.n_params() || state.m.len() != g.len() {
        return Err(Error::validation("gradient/state shape mismatch"));
    }
    if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient(grads.segment_name(bad)));
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_eps;
    let theta = params.data_mut();
    for i in 0..g.len() {
        let m = b1 * state.m[i] + (1.0 - b1) * g[i];
        let v = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum TrainCorpus {
    Pairs(Vec<RewritePair>),
    Sessions(Vec<Session>),
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub mode: String,
    pub n_train: usize,
    pub n_val: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    /// One JSON record per epoch, then a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "mode": self.mode,
                "n_train": self.n_train,
                "n_val": self.n_val,
                "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early,
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// Consecutive-turn (current, next) pairs of a session list, the
/// next-query-prediction training stream.
pub fn next_turn_pairs(sessions: &[Session]) -> Vec<(&Utterance, &Utterance)> {
    let mut out = Vec::new();
    for s in sessions {
        for w in s.turns().windows(2) {
            out.push((&w[0], &w[1]));
        }
    }
    out
}

struct PairExample {
    src: TokenSequence,
    tgt: TokenSequence,
    split_key: String,
}

struct QuadExample {
    u: TokenSequence,
    u_next: TokenSequence,
    h: TokenSequence,
    h_next: TokenSequence,
    split_key: String,
}

fn hash_ids(seq: &TokenSequence) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &id in seq.prefix() {
        for b in id.to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    hash
}

/// Conflict keys of an example: the in-batch softmax treats every target as
/// a candidate, so two rows with identical target token ids inside one
/// batch would split the positive probability mass. Keys are tagged by
/// target role so the query-target and hypothesis-target sets stay
/// independent.
fn conflict_keys(examples: &Examples) -> Vec<Vec<(u8, u64)>> {
    match examples {
        Examples::Pairs(v) => v.iter().map(|e| vec![(0u8, hash_ids(&e.tgt))]).collect(),
        Examples::Quads(v) => v
            .iter()
            .map(|e| vec![(0u8, hash_ids(&e.u_next)), (1u8, hash_ids(&e.h_next))])
            .collect(),
    }
}

/// Greedy first-fit batching that keeps target keys distinct within a batch
/// where possible; examples whose keys conflict with every open batch start
/// a new one. Undersized trailing buckets (duplicate-heavy leftovers) are
/// coalesced afterwards, accepting the residual duplicates rather than
/// training on fragments. Deterministic in the shuffled order.
fn build_batches(
    order: &[usize],
    batch_size: usize,
    keys: &[Vec<(u8, u64)>],
) -> Vec<Vec<usize>> {
    struct Bucket {
        idxs: Vec<usize>,
        seen: std::collections::HashSet<(u8, u64)>,
    }
    let mut buckets: Vec<Bucket> = Vec::new();
    'outer: for &i in order {
        for b in buckets.iter_mut() {
            if b.idxs.len() < batch_size && keys[i].iter().all(|k| !b.seen.contains(k)) {
                b.idxs.push(i);
                b.seen.extend(keys[i].iter().copied());
                continue 'outer;
            }
        }
        let mut seen = std::collections::HashSet::new();
        seen.extend(keys[i].iter().copied());
        buckets.push(Bucket {
            idxs: vec![i],
            seen,
        });
    }
    let mut full = Vec::new();
    let mut tail: Vec<usize> = Vec::new();
    for b in buckets {
        if b.idxs.len() * 2 >= batch_size {
            full.push(b.idxs);
        } else {
            tail.extend(b.idxs);
        }
    }
    for chunk in tail.chunks(batch_size) {
        full.push(chunk.to_vec());
    }
    full
}

enum Examples {
    Pairs(Vec<PairExample>),
    Quads(Vec<QuadExample>),
}

fn fnv1a64(seed: u64, text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in seed.to_le_bytes().iter().copied().chain(text.bytes()) {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn build_examples(
    corpus: &TrainCorpus,
    vocab: &Vocabulary,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<Examples> {
    let max_len = enc_cfg.max_len;
    match (cfg.mode, corpus) {
        (TrainMode::Baseline | TrainMode::Finetune, TrainCorpus::Pairs(pairs)) => {
            if pairs.is_empty() {
                return Err(Error::validation("empty pair corpus"));
            }
            let examples = pairs
                .iter()
                .map(|p| -> Result<PairExample> {
                    Ok(PairExample {
                        src: tokenize(&p.source.text, vocab, max_len)?,
                        tgt: tokenize(&p.target.text, vocab, max_len)?,
                        split_key: p.source.text.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Examples::Pairs(examples))
        }
        (TrainMode::PretrainText, TrainCorpus::Sessions(sessions)) => {
            let turns = next_turn_pairs(sessions);
            if turns.is_empty() {
                return Err(Error::validation(
                    "session corpus yields no consecutive-turn pairs",
                ));
            }
            let examples = turns
                .iter()
                .map(|(a, b)| -> Result<PairExample> {
                    Ok(PairExample {
                        src: tokenize(&a.text, vocab, max_len)?,
                        tgt: tokenize(&b.text, vocab, max_len)?,
                        split_key: a.text.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Examples::Pairs(examples))
        }
        (TrainMode::PretrainTextNlu, TrainCorpus::Sessions(sessions)) => {
            let mut quads = Vec::new();
            for (a, b) in next_turn_pairs(sessions) {
                let (Some(ha), Some(hb)) = (&a.nlu, &b.nlu) else {
                    continue;
                };
                quads.push(QuadExample {
                    u: tokenize(&a.text, vocab, max_len)?,
                    u_next: tokenize(&b.text, vocab, max_len)?,
                    h: tokenize(&serialize_hypothesis(ha)?, vocab, max_len)?,
                    h_next: tokenize(&serialize_hypothesis(hb)?, vocab, max_len)?,
                    split_key: a.text.clone(),
                });
            }
            if quads.is_empty() {
                return Err(Error::validation(
                    "joint pretraining needs sessions with NLU hypotheses on consecutive turns",
                ));
            }
            Ok(Examples::Quads(quads))
        }
        (mode, TrainCorpus::Pairs(_)) => Err(Error::validation(format!(
            "mode {mode} expects a session corpus"
        ))),
        (mode, TrainCorpus::Sessions(_)) => Err(Error::validation(format!(
            "mode {mode} expects a rewrite-pair corpus"
        ))),
    }
}

/// Split indices into (train pool, validation) by seeded hash of the source
/// text, then subsample the pool at `ratio`. The hash split depends only on
/// the seed and texts, so every mode and arm sharing a seed sees the same
/// validation set.
fn split_and_sample(
    keys: &[&str],
    seed: u64,
    ratio: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pool = Vec::new();
    let mut val = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        if fnv1a64(seed, key) % 100 < VALIDATION_PERCENT {
            val.push(i);
        } else {
            pool.push(i);
        }
    }
    if pool.is_empty() {
        return Err(Error::validation("validation split consumed every example"));
    }
    let train = if ratio < 1.0 {
        let k = ((ratio * pool.len() as f64).floor() as usize).max(0);
        if k == 0 {
            return Err(Error::validation(format!(
                "ratio {ratio} leaves zero training examples"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_5a5a_5a5a_5a5a);
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| pool[i]).collect()
    } else {
        pool
    };
    Ok((train, val))
}

/// Encode a list of sequences in parallel, each with its own pre-drawn
/// dropout seed (None in evaluation). Order-preserving.
fn encode_all(
    params: &EncoderParams,
    seqs: &[&TokenSequence],
    seeds: Option<&[u64]>,
) -> Result<Vec<(Array1<f64>, SeqCache)>> {
    seqs.par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let mode = match seeds {
                Some(s) => DropoutMode::Seeded(s[i]),
                None => DropoutMode::Off,
            };
            forward_cached(params, seq, mode)
        })
        .collect()
}

/// Backpropagate every (cache, upstream) pair, fanned out over a fixed
/// number of chunks, reduced in order.
fn accumulate_backward(
    params: &EncoderParams,
    items: Vec<(&SeqCache, &Array1<f64>)>,
    grads: &mut ParamGradients,
) {
    let chunk_size = items.len().div_ceil(GRAD_CHUNKS).max(1);
    let partials: Vec<ParamGradients> = items
        .par_chunks(chunk_size)
        .map(|chunk| {
            let mut local = ParamGradients::zeros(params.cfg());
            for (cache, upstream) in chunk {
                backward_into(params, cache, upstream, &mut local);
            }
            local
        })
        .collect();
    for p in partials {
        grads.add_assign(&p);
    }
}

fn apply_head_grads(grads: &mut ParamGradients, eg: &EmbeddingGrads) {
    grads.add_head_grads(&eg.d_lin1_w, &eg.d_lin1_b, &eg.d_lin2_w, &eg.d_lin2_b);
}

fn pairs_batch_step(
    params: &EncoderParams,
    batch: &[&PairExample],
    sim: &SimilarityConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParamGradients)> {
    let n = batch.len();
    let seeds: Vec<u64> = (0..2 * n).map(|_| rng.gen()).collect();
    let srcs: Vec<&TokenSequence> = batch.iter().map(|e| &e.src).collect();
    let tgts: Vec<&TokenSequence> = batch.iter().map(|e| &e.tgt).collect();
    let src_enc = encode_all(params, &srcs, Some(&seeds[..n]))?;
    let tgt_enc = encode_all(params, &tgts, Some(&seeds[n..]))?;
    let us: Vec<Array1<f64>> = src_enc.iter().map(|(y, _)| y.clone()).collect();
    let vs: Vec<Array1<f64>> = tgt_enc.iter().map(|(y, _)| y.clone()).collect();
    let (loss, eg) = contrastive_from_embeddings(&us, &vs, params, sim);
    let mut grads = ParamGradients::zeros(params.cfg());
    apply_head_grads(&mut grads, &eg);
    let items: Vec<(&SeqCache, &Array1<f64>)> = src_enc
        .iter()
        .zip(&eg.d_sources)
        .map(|((_, c), g)| (c, g))
        .chain(tgt_enc.iter().zip(&eg.d_targets).map(|((_, c), g)| (c, g)))
        .collect();
    accumulate_backward(params, items, &mut grads);
    Ok((loss, grads))
}

fn quads_batch_step(
    params: &EncoderParams,
    batch: &[&QuadExample],
    sim: &SimilarityConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParamGradients)> {
    let n = batch.len();
    let seeds: Vec<u64> = (0..4 * n).map(|_| rng.gen()).collect();
    let u: Vec<&TokenSequence> = batch.iter().map(|e| &e.u).collect();
    let un: Vec<&TokenSequence> = batch.iter().map(|e| &e.u_next).collect();
    let h: Vec<&TokenSequence> = batch.iter().map(|e| &e.h).collect();
    let hn: Vec<&TokenSequence> = batch.iter().map(|e| &e.h_next).collect();
    let u_enc = encode_all(params, &u, Some(&seeds[..n]))?;
    let un_enc = encode_all(params, &un, Some(&seeds[n..2 * n]))?;
    let h_enc = encode_all(params, &h, Some(&seeds[2 * n..3 * n]))?;
    let hn_enc = encode_all(params, &hn, Some(&seeds[3 * n..]))?;
    let emb = |v: &Vec<(Array1<f64>, SeqCache)>| -> Vec<Array1<f64>> {
        v.iter().map(|(y, _)| y.clone()).collect()
    };
    let (ue, une, he, hne) = (emb(&u_enc), emb(&un_enc), emb(&h_enc), emb(&hn_enc));

    // four prediction tasks: u->u', u->h', h->u', h->h'
    let (l1, g1) = contrastive_from_embeddings(&ue, &une, params, sim);
    let (l2, g2) = contrastive_from_embeddings(&ue, &hne, params, sim);
    let (l3, g3) = contrastive_from_embeddings(&he, &une, params, sim);
    let (l4, g4) = contrastive_from_embeddings(&he, &hne, params, sim);
    let loss = l1 + l2 + l3 + l4;

    let mut grads = ParamGradients::zeros(params.cfg());
    for eg in [&g1, &g2, &g3, &g4] {
        apply_head_grads(&mut grads, eg);
    }
    // each encoded sequence is shared by two tasks; sum its upstreams
    let add = |a: &[Array1<f64>], b: &[Array1<f64>]| -> Vec<Array1<f64>> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    };
    let du = add(&g1.d_sources, &g2.d_sources);
    let dun = add(&g1.d_targets, &g3.d_targets);
    let dh = add(&g3.d_sources, &g4.d_sources);
    let dhn = add(&g2.d_targets, &g4.d_targets);
    let items: Vec<(&SeqCache, &Array1<f64>)> = u_enc
        .iter()
        .zip(&du)
        .map(|((_, c), g)| (c, g))
        .chain(un_enc.iter().zip(&dun).map(|((_, c), g)| (c, g)))
        .chain(h_enc.iter().zip(&dh).map(|((_, c), g)| (c, g)))
        .chain(hn_enc.iter().zip(&dhn).map(|((_, c), g)| (c, g)))
        .collect();
    accumulate_backward(params, items, &mut grads);
    Ok((loss, grads))
}

fn pairs_eval_loss(
    params: &EncoderParams,
    examples: &[&PairExample],
    batch_size: usize,
    sim: &SimilarityConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size) {
        let srcs: Vec<&TokenSequence> = chunk.iter().map(|e| &e.src).collect();
        let tgts: Vec<&TokenSequence> = chunk.iter().map(|e| &e.tgt).collect();
        let us: Vec<Array1<f64>> = encode_all(params, &srcs, None)?
            .into_iter()
            .map(|(y, _)| y)
            .collect();
        let vs: Vec<Array1<f64>> = encode_all(params, &tgts, None)?
            .into_iter()
            .map(|(y, _)| y)
            .collect();
        let (loss, _) = contrastive_from_embeddings(&us, &vs, params, sim);
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

fn quads_eval_loss(
    params: &EncoderParams,
    examples: &[&QuadExample],
    batch_size: usize,
    sim: &SimilarityConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size) {
        let enc = |f: &dyn Fn(&QuadExample) -> &TokenSequence| -> Result<Vec<Array1<f64>>> {
            let seqs: Vec<&TokenSequence> = chunk.iter().map(|e| f(e)).collect();
            Ok(encode_all(params, &seqs, None)?
                .into_iter()
                .map(|(y, _)| y)
                .collect())
        };
        let ue = enc(&|e| &e.u)?;
        let une = enc(&|e| &e.u_next)?;
        let he = enc(&|e| &e.h)?;
        let hne = enc(&|e| &e.h_next)?;
        let mut loss = 0.0;
        for (s, t) in [(&ue, &une), (&ue, &hne), (&he, &une), (&he, &hne)] {
            loss += contrastive_from_embeddings(s, t, params, sim).0;
        }
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Train the encoder on the given corpus. `init` is required in finetune
/// mode (the pretrained checkpoint) and otherwise optional; without it,
/// parameters initialize from `enc_cfg.seed`. Returns the
/// best-validation-loss parameters together with the per-epoch report.
pub fn train(
    corpus: &TrainCorpus,
    vocab: &Vocabulary,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    sim: &SimilarityConfig,
    init: Option<EncoderParams>,
) -> Result<(EncoderParams, TrainReport)> {
    cfg.validate()?;
    enc_cfg.validate()?;
    sim.validate()?;
    enc_cfg.ensure_vocab(vocab)?;
    if cfg.mode == TrainMode::Finetune && init.is_none() {
        return Err(Error::validation(
            "finetune mode requires an initial checkpoint",
        ));
    }
    if let Some(p) = &init {
        if p.cfg() != enc_cfg {
            return Err(Error::validation(
                "initial checkpoint config disagrees with the encoder config",
            ));
        }
    }

    let examples = build_examples(corpus, vocab, enc_cfg, cfg)?;
    let ratio = match cfg.mode {
        TrainMode::Baseline | TrainMode::Finetune => cfg.finetune_ratio,
        _ => 1.0,
    };
    let keys: Vec<&str> = match &examples {
        Examples::Pairs(v) => v.iter().map(|e| e.split_key.as_str()).collect(),
        Examples::Quads(v) => v.iter().map(|e| e.split_key.as_str()).collect(),
    };
    let (train_idx, val_idx) = split_and_sample(&keys, cfg.seed, ratio)?;

    let mut params = match init {
        Some(p) => p,
        None => init_params(enc_cfg)?,
    };
    let mut state = AdamState::new(params.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let keys = conflict_keys(&examples);
    let mut order: Vec<usize> = train_idx.clone();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, EncoderParams, usize)> = None;
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in build_batches(&order, cfg.batch_size, &keys) {
            let (loss, grads) = match &examples {
                Examples::Pairs(v) => {
                    let batch: Vec<&PairExample> = chunk.iter().map(|&i| &v[i]).collect();
                    pairs_batch_step(&params, &batch, sim, &mut rng)?
                }
                Examples::Quads(v) => {
                    let batch: Vec<&QuadExample> = chunk.iter().map(|&i| &v[i]).collect();
                    quads_batch_step(&params, &batch, sim, &mut rng)?
                }
            };
            adam_step(&mut params, &grads, &mut state, cfg)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen.max(1) as f64;

        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(match &examples {
                Examples::Pairs(v) => {
                    let val: Vec<&PairExample> = val_idx.iter().map(|&i| &v[i]).collect();
                    pairs_eval_loss(&params, &val, cfg.batch_size, sim)?
                }
                Examples::Quads(v) => {
                    let val: Vec<&QuadExample> = val_idx.iter().map(|&i| &v[i]).collect();
                    quads_eval_loss(&params, &val, cfg.batch_size, sim)?
                }
            })
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        if let Some(val) = val_loss {
            let improved = best.as_ref().map_or(true, |(b, _, _)| val < *b);
            if improved {
                best = Some((val, params.clone(), epoch));
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (final_params, best_epoch) = match best {
        Some((_, p, e)) => (p, e),
        None => {
            let last = epochs.len();
            (params, last)
        }
    };
    let report = TrainReport {
        mode: cfg.mode.to_string(),
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        epochs,
        best_epoch,
        stopped_early,
    };
    Ok((final_params, report))
}

#[cfg(test)]
mod tests;
