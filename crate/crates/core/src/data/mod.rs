//! Session segmentation and filtering, rephrase-pair mining, synthetic
//! corpus generation, and file I/O.

pub mod generator;
pub mod io;

pub use generator::{
    default_templates, generate_corpus, Catalog, GeneratedCorpus, GeneratorConfig, NoiseModel,
    Template,
};

use std::collections::{BTreeMap, HashSet};

use crate::types::{RewritePair, Session, Utterance, MAX_GAP_MS};

/// Intents whose presence on a final turn marks an unsuccessful session.
pub const UNSUCCESSFUL_INTENTS: [&str; 2] = ["cancelintent", "stopintent"];

/// A mined rephrase pair with its lexical-overlap confidence score.
#[derive(Debug, Clone)]
pub struct MinedPair {
    pub pair: RewritePair,
    pub score: f64,
}

/// Partition utterances into sessions: per user, sort by timestamp and
/// split wherever the gap exceeds 45 seconds (a gap of exactly 45 s stays
/// in one session). Every input utterance lands in exactly one session;
/// output is ordered by user id, then time.
pub fn segment_sessions(utterances: &[Utterance]) -> Vec<Session> {
    let mut by_user: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in utterances {
        by_user.entry(&u.user_id).or_default().push(u);
    }
    let mut sessions = Vec::new();
    for (_, mut turns) in by_user {
        turns.sort_by_key(|u| u.ts_ms);
        let mut current: Vec<Utterance> = Vec::new();
        for u in turns {
            if let Some(last) = current.last() {
                if u.ts_ms - last.ts_ms > MAX_GAP_MS {
                    sessions.push(Session::new(std::mem::take(&mut current)).expect("valid run"));
                }
            }
            current.push(u.clone());
        }
        if !current.is_empty() {
            sessions.push(Session::new(current).expect("valid run"));
        }
    }
    sessions
}

/// Keep only sessions usable for pretraining: at least two turns, and a
/// final-turn intent that is not CancelIntent/StopIntent. Turns without a
/// hypothesis pass the intent check.
pub fn filter_sessions(sessions: Vec<Session>) -> Vec<Session> {
    sessions
        .into_iter()
        .filter(|s| {
            if s.len() < 2 {
                return false;
            }
            match s.turns().last().and_then(|t| t.nlu.as_ref()) {
                Some(h) => !UNSUCCESSFUL_INTENTS.contains(&h.intent.as_str()),
                None => true,
            }
        })
        .collect()
}

/// Token-set Jaccard similarity of two normalized texts.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: HashSet<&str> = a.split_whitespace().collect();
    let sb: HashSet<&str> = b.split_whitespace().collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// Mine rephrase candidates: every consecutive in-session turn pair with
/// differing normalized texts and token Jaccard at or above `threshold`,
/// oriented earlier -> later.
pub fn mine_pairs(sessions: &[Session], threshold: f64) -> Vec<MinedPair> {
    let mut out = Vec::new();
    for s in sessions {
        for w in s.turns().windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.text == b.text {
                continue;
            }
            let score = jaccard(&a.text, &b.text);
            if score >= threshold {
                let pair = RewritePair::new(a.clone(), b.clone()).expect("texts differ");
                out.push(MinedPair { pair, score });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NluHypothesis;

    fn utt(user: &str, ts: i64, text: &str) -> Utterance {
        Utterance::new(user, ts, text, None).unwrap()
    }

    fn utt_intent(user: &str, ts: i64, text: &str, intent: &str) -> Utterance {
        let h = NluHypothesis::new("music", intent, vec![]).unwrap();
        Utterance::new(user, ts, text, Some(h)).unwrap()
    }

    #[test]
    fn segmentation_boundaries() {
        // singleton
        let one = segment_sessions(&[utt("u", 0, "a")]);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 1);

        // 30s then 44s gaps: one session of three turns
        let joined = segment_sessions(&[
            utt("u", 0, "a"),
            utt("u", 30_000, "b"),
            utt("u", 74_000, "c"),
        ]);
        assert_eq!(joined.len(), 1);
        assert_eq!(joined[0].len(), 3);

        // exactly 45s stays joined
        let edge = segment_sessions(&[utt("u", 0, "a"), utt("u", 45_000, "b")]);
        assert_eq!(edge.len(), 1);

        // 46s splits
        let split = segment_sessions(&[utt("u", 0, "a"), utt("u", 46_000, "b")]);
        assert_eq!(split.len(), 2);
    }

    #[test]
    fn segmentation_is_a_partition() {
        let utts: Vec<Utterance> = (0..40)
            .map(|i| {
                let user = format!("u{}", i % 3);
                Utterance::new(user, (i as i64) * 31_000, &format!("query {i}"), None).unwrap()
            })
            .collect();
        let sessions = segment_sessions(&utts);
        let total: usize = sessions.iter().map(|s| s.len()).sum();
        assert_eq!(total, utts.len());
        // within-session order
        for s in &sessions {
            for w in s.turns().windows(2) {
                assert!(w[0].ts_ms <= w[1].ts_ms);
            }
        }
    }

    #[test]
    fn filter_drops_short_and_unsuccessful_sessions() {
        let keep = Session::new(vec![
            utt_intent("u", 0, "play jazz", "playmusic"),
            utt_intent("u", 1_000, "play blues", "playmusic"),
        ])
        .unwrap();
        let stop = Session::new(vec![
            utt_intent("u", 0, "play jazz", "playmusic"),
            utt_intent("u", 1_000, "stop", "StopIntent"),
        ])
        .unwrap();
        let cancel = Session::new(vec![
            utt_intent("u", 0, "play jazz", "playmusic"),
            utt_intent("u", 1_000, "cancel", "CancelIntent"),
        ])
        .unwrap();
        let single = Session::new(vec![utt_intent("u", 0, "play jazz", "playmusic")]).unwrap();
        // mid-session cancel with a successful ending is kept
        let mid_cancel = Session::new(vec![
            utt_intent("u", 0, "cancel", "CancelIntent"),
            utt_intent("u", 1_000, "play blues", "playmusic"),
        ])
        .unwrap();

        let kept = filter_sessions(vec![keep.clone(), stop, cancel, single, mid_cancel.clone()]);
        assert_eq!(kept, vec![keep, mid_cancel]);
    }

    #[test]
    fn jaccard_known_values() {
        // fig-style rephrase: 3 shared of 10 distinct tokens
        let a = "play lonely eyes old time road";
        let b = "play lil nas x. old town road";
        assert!((jaccard(a, b) - 0.3).abs() < 1e-12);
        assert_eq!(jaccard("what time is it", "play jazz"), 0.0);
        assert_eq!(jaccard("play jazz", "play jazz"), 1.0);
    }

    #[test]
    fn mining_thresholds_and_orientation() {
        let s = Session::new(vec![
            utt("u", 0, "play lonely eyes old time road"),
            utt("u", 5_000, "play lil nas x. old town road"),
            utt("u", 10_000, "play lil nas x. old town road"),
        ])
        .unwrap();
        // identical consecutive texts never mined
        let mined = mine_pairs(&[s.clone()], 0.25);
        assert_eq!(mined.len(), 1);
        assert_eq!(mined[0].pair.source.text, "play lonely eyes old time road");
        assert_eq!(mined[0].pair.target.text, "play lil nas x. old town road");
        assert!((mined[0].score - 0.3).abs() < 1e-12);

        // raising the threshold above the score drops the pair
        assert!(mine_pairs(&[s.clone()], 0.5).is_empty());

        // disjoint texts score zero and never pass a positive threshold
        let disjoint = Session::new(vec![
            utt("u", 0, "what time is it"),
            utt("u", 1_000, "play jazz"),
        ])
        .unwrap();
        assert!(mine_pairs(&[disjoint], 0.5).is_empty());

        // session order does not change the result set
        let other = Session::new(vec![
            utt("v", 0, "turn on the lights"),
            utt("v", 2_000, "turn off the lights"),
        ])
        .unwrap();
        let ab = mine_pairs(&[s.clone(), other.clone()], 0.2);
        let ba = mine_pairs(&[other, s], 0.2);
        let key = |m: &MinedPair| (m.pair.source.text.clone(), m.pair.target.text.clone());
        let mut ka: Vec<_> = ab.iter().map(key).collect();
        let mut kb: Vec<_> = ba.iter().map(key).collect();
        ka.sort();
        kb.sort();
        assert_eq!(ka, kb);
    }
}
