use super::*;
use crate::textproc::build_vocab;
use crate::types::{NluHypothesis, Slot};

fn enc_cfg(vocab: &Vocabulary) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab.len(),
        d_emb: 8,
        d_hid: 8,
        n_heads: 2,
        d_head: 8,
        d_out: 12,
        max_len: 8,
        dropout_rate: 0.0,
        seed: 3,
    }
}

fn pair(src: &str, tgt: &str) -> RewritePair {
    RewritePair::new(
        Utterance::new("p", 0, src, None).unwrap(),
        Utterance::new("p", 0, tgt, None).unwrap(),
    )
    .unwrap()
}

fn toy_pairs() -> Vec<RewritePair> {
    vec![
        pair("play jaz", "play jazz music"),
        pair("play bluez", "play blues music"),
        pair("weather in ashfurd", "weather in ashford"),
        pair("set timur five", "set timer five minutes"),
        pair("turn on lite", "turn on the lights"),
        pair("play rok", "play rock music"),
        pair("play the vylvet foxes", "play the velvet foxes"),
        pair("weather in dunmure", "weather in dunmore"),
        pair("tune to smoth jazz", "tune to smooth jazz"),
        pair("play old town rode", "play old town road"),
    ]
}

fn pair_corpus_lines(pairs: &[RewritePair]) -> Vec<String> {
    pairs
        .iter()
        .flat_map(|p| [p.source.text.clone(), p.target.text.clone()])
        .collect()
}

#[test]
fn adam_zero_gradient_fresh_state_is_a_fixed_point() {
    let pairs = toy_pairs();
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let mut params = init_params(&cfg).unwrap();
    let before = params.data().to_vec();
    let grads = ParamGradients::zeros(&cfg);
    let mut state = AdamState::new(params.n_params());
    adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
    assert_eq!(params.data(), before.as_slice());
    assert_eq!(state.t, 1);
}

#[test]
fn adam_first_step_magnitude_matches_hand_evaluation() {
    let pairs = toy_pairs();
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let mut params = init_params(&cfg).unwrap();
    let before = params.data().to_vec();
    let mut grads = ParamGradients::zeros(&cfg);
    grads.data[0] = 1.0;
    let mut state = AdamState::new(params.n_params());
    let tcfg = TrainConfig {
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    adam_step(&mut params, &grads, &mut state, &tcfg).unwrap();
    // t=1: m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    let step = before[0] - params.data()[0];
    assert!((step - 0.1).abs() < 1e-8, "step {step}");
    for i in 1..params.n_params() {
        assert_eq!(params.data()[i], before[i]);
    }
}

#[test]
fn adam_rejects_non_finite_gradients_without_mutation() {
    let pairs = toy_pairs();
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let mut params = init_params(&cfg).unwrap();
    let before = params.data().to_vec();
    let mut grads = ParamGradients::zeros(&cfg);
    grads.data[3] = f64::NAN;
    let mut state = AdamState::new(params.n_params());
    let err = adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient(_)));
    assert_eq!(params.data(), before.as_slice());
    assert_eq!(state.t, 0);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let pairs = toy_pairs();
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let tcfg = TrainConfig {
        max_epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let corpus = TrainCorpus::Pairs(pairs);
    let sim = SimilarityConfig::default();
    let (p1, r1) = train(&corpus, &vocab, &cfg, &tcfg, &sim, None).unwrap();
    let (p2, r2) = train(&corpus, &vocab, &cfg, &tcfg, &sim, None).unwrap();
    assert_eq!(p1.data(), p2.data());
    assert_eq!(r1.to_jsonl(), r2.to_jsonl());
}

#[test]
fn training_reduces_loss_on_memorizable_pairs() {
    let pairs = toy_pairs();
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let tcfg = TrainConfig {
        max_epochs: 30,
        patience: 30,
        batch_size: 10,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let corpus = TrainCorpus::Pairs(pairs);
    let (_, report) = train(&corpus, &vocab, &cfg, &tcfg, &SimilarityConfig::default(), None).unwrap();
    let first = report.epochs.first().unwrap().train_loss;
    let last = report.epochs.last().unwrap().train_loss;
    assert!(
        last < first / 3.0,
        "loss did not drop: first {first}, last {last}"
    );
}

#[test]
fn finetune_ratio_selects_floor_of_pool() {
    let mut pairs = toy_pairs();
    // widen the corpus so the 5% validation hash split has material to grab
    for i in 0..30 {
        pairs.push(pair(
            &format!("noisy query number {i}"),
            &format!("clean query number {i}"),
        ));
    }
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let tcfg = TrainConfig {
        max_epochs: 1,
        mode: TrainMode::Finetune,
        finetune_ratio: 0.2,
        ..TrainConfig::default()
    };
    let init = init_params(&cfg).unwrap();
    let corpus = TrainCorpus::Pairs(pairs.clone());
    let (_, report) = train(
        &corpus,
        &vocab,
        &cfg,
        &tcfg,
        &SimilarityConfig::default(),
        Some(init),
    )
    .unwrap();
    let pool = pairs.len() - report.n_val;
    assert_eq!(report.n_train, (0.2 * pool as f64).floor() as usize);
}

#[test]
fn mode_corpus_mismatches_are_rejected() {
    let pairs = toy_pairs();
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let sim = SimilarityConfig::default();

    // pretrain mode over a pair corpus
    let tcfg = TrainConfig {
        mode: TrainMode::PretrainText,
        ..TrainConfig::default()
    };
    assert!(train(&TrainCorpus::Pairs(pairs.clone()), &vocab, &cfg, &tcfg, &sim, None).is_err());

    // finetune without an initial checkpoint
    let tcfg = TrainConfig {
        mode: TrainMode::Finetune,
        ..TrainConfig::default()
    };
    assert!(train(&TrainCorpus::Pairs(pairs.clone()), &vocab, &cfg, &tcfg, &sim, None).is_err());

    // empty corpus
    let tcfg = TrainConfig::default();
    assert!(train(&TrainCorpus::Pairs(vec![]), &vocab, &cfg, &tcfg, &sim, None).is_err());
}

fn session_of(texts: &[(&str, i64)], with_hyp: bool) -> Session {
    let turns: Vec<Utterance> = texts
        .iter()
        .map(|(t, ts)| {
            let nlu = with_hyp.then(|| {
                NluHypothesis::new("music", "playmusic", vec![Slot::new("songname", *t)]).unwrap()
            });
            Utterance::new("u", *ts, t, nlu).unwrap()
        })
        .collect();
    Session::new(turns).unwrap()
}

#[test]
fn next_turn_pairs_walks_consecutive_turns() {
    let sessions = [session_of(
        &[("play one", 0), ("play two", 1_000), ("play three", 2_000)],
        false,
    )];
    let pairs = next_turn_pairs(&sessions);
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].0.text, "play one");
    assert_eq!(pairs[0].1.text, "play two");
    assert_eq!(pairs[1].0.text, "play two");
    assert_eq!(pairs[1].1.text, "play three");
}

#[test]
fn joint_pretraining_requires_hypotheses() {
    let bare = session_of(&[("play one", 0), ("play two", 1_000)], false);
    let lines = vec!["play one".to_string(), "play two".to_string()];
    let vocab = build_vocab(&lines, 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let tcfg = TrainConfig {
        mode: TrainMode::PretrainTextNlu,
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let err = train(
        &TrainCorpus::Sessions(vec![bare]),
        &vocab,
        &cfg,
        &tcfg,
        &SimilarityConfig::default(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn joint_pretraining_runs_on_hypothesis_sessions() {
    let sessions: Vec<Session> = (0..6)
        .map(|i| {
            session_of(
                &[
                    (["play jazz", "play blues", "play rock"][i % 3], 0),
                    (["play folk", "play soul", "play funk"][i % 3], 2_000),
                ],
                true,
            )
        })
        .collect();
    let mut lines: Vec<String> = Vec::new();
    for s in &sessions {
        for t in s.turns() {
            lines.push(t.text.clone());
            lines.push(serialize_hypothesis(t.nlu.as_ref().unwrap()).unwrap());
        }
    }
    let vocab = build_vocab(&lines, 1).unwrap();
    let cfg = enc_cfg(&vocab);
    let tcfg = TrainConfig {
        mode: TrainMode::PretrainTextNlu,
        max_epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (_, report) = train(
        &TrainCorpus::Sessions(sessions),
        &vocab,
        &cfg,
        &tcfg,
        &SimilarityConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(report.mode, "pretrain_text_nlu");
    assert!(!report.epochs.is_empty());
    assert!(report.epochs[0].train_loss.is_finite());
}

#[test]
fn early_stopping_returns_the_best_epoch_parameters() {
    let mut pairs = toy_pairs();
    for i in 0..30 {
        pairs.push(pair(
            &format!("noisy query number {i}"),
            &format!("clean query number {i}"),
        ));
    }
    let vocab = build_vocab(&pair_corpus_lines(&pairs), 1).unwrap();
    let cfg = enc_cfg(&vocab);
    // a destructive learning rate guarantees validation regress
    let tcfg = TrainConfig {
        max_epochs: 10,
        patience: 1,
        learning_rate: 0.5,
        batch_size: 4,
        seed: 91,
        ..TrainConfig::default()
    };
    let corpus = TrainCorpus::Pairs(pairs);
    let sim = SimilarityConfig::default();
    let (returned, report) = train(&corpus, &vocab, &cfg, &tcfg, &sim, None).unwrap();
    assert!(report.n_val > 0, "validation split is empty");
    assert!(report.stopped_early);

    // best_epoch is the argmin of recorded validation losses
    let best_val = report.epochs[report.best_epoch - 1].val_loss.unwrap();
    for e in &report.epochs {
        assert!(best_val <= e.val_loss.unwrap() + 1e-15);
    }
    // stopping happened exactly `patience` epochs after the best
    assert_eq!(report.epochs.len(), report.best_epoch + tcfg.patience);

    // rerunning with max_epochs = best_epoch reproduces the returned params
    // bit for bit (identical seeded trajectory, no early stop)
    let replay_cfg = TrainConfig {
        max_epochs: report.best_epoch,
        patience: report.best_epoch + 1,
        ..tcfg
    };
    let (replayed, _) = train(&corpus, &vocab, &cfg, &replay_cfg, &sim, None).unwrap();
    assert_eq!(returned.data(), replayed.data());
}
