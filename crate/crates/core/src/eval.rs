//! Retrieval-quality metrics: p@n for n in {1, 5, 10, 20}, mean reciprocal
//! rank, mean first-correct rank, and top-k coverage, judged by
//! NLU-hypothesis match.

use rayon::prelude::*;

use crate::encoder::{encode_eval, EncoderParams};
use crate::error::{Error, Result};
use crate::index::{project_query, CandidateEntry, CandidateIndex};
use crate::objective::SimilarityConfig;
use crate::textproc::{serialize_hypothesis, tokenize, Vocabulary};
use crate::types::Utterance;

pub const P_AT_NS: [usize; 4] = [1, 5, 10, 20];

/// A query with the gold rewrite whose hypothesis defines success.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub query: Utterance,
    pub gold: Utterance,
}

impl EvalCase {
    pub fn new(query: Utterance, gold: Utterance) -> Result<Self> {
        if gold.nlu.is_none() {
            return Err(Error::validation("eval case gold lacks an NLU hypothesis"));
        }
        Ok(EvalCase { query, gold })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub p_at_1: f64,
    pub p_at_5: f64,
    pub p_at_10: f64,
    pub p_at_20: f64,
    pub mrr: f64,
    /// Mean first-correct rank over matched cases only; 0 when nothing
    /// matched.
    pub mean_first_rank: f64,
    /// Fraction of cases with any match in the retrieved list.
    pub coverage: f64,
    pub n_cases: usize,
}

impl MetricsReport {
    pub fn p_at(&self, n: usize) -> f64 {
        match n {
            1 => self.p_at_1,
            5 => self.p_at_5,
            10 => self.p_at_10,
            20 => self.p_at_20,
            _ => panic!("p@{n} is not tracked"),
        }
    }

    /// Exact serialization used for metrics.json: fixed key order, floats
    /// with six decimals.
    pub fn to_json(&self) -> String {
        format!(
            concat!(
                "{{\"p@1\":{:.6},\"p@5\":{:.6},\"p@10\":{:.6},\"p@20\":{:.6},",
                "\"mrr\":{:.6},\"mean_first_rank\":{:.6},\"coverage\":{:.6},\"n_cases\":{}}}"
            ),
            self.p_at_1,
            self.p_at_5,
            self.p_at_10,
            self.p_at_20,
            self.mrr,
            self.mean_first_rank,
            self.coverage,
            self.n_cases
        )
    }
}

/// 1-based rank of the first retrieved entry whose canonical hypothesis
/// equals the gold's; entries without hypotheses never match.
pub fn judge(retrieved: &[(&CandidateEntry, f64)], gold: &Utterance) -> Option<usize> {
    let gold_hyp = gold.nlu.as_ref()?;
    let gold_key = serialize_hypothesis(gold_hyp).ok()?;
    for (rank0, (entry, _)) in retrieved.iter().enumerate() {
        if let Some(h) = &entry.hypothesis {
            if let Ok(key) = serialize_hypothesis(h) {
                if key == gold_key {
                    return Some(rank0 + 1);
                }
            }
        }
    }
    None
}

/// Fold first-correct ranks into a report. `k` is the retrieval depth the
/// ranks were computed at.
pub fn aggregate(ranks: &[Option<usize>], k: usize) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::validation("cannot aggregate zero eval cases"));
    }
    let n = ranks.len() as f64;
    let p_at = |cut: usize| -> f64 {
        ranks
            .iter()
            .filter(|r| matches!(r, Some(rank) if *rank <= cut))
            .count() as f64
            / n
    };
    let mrr = ranks
        .iter()
        .map(|r| r.map_or(0.0, |rank| 1.0 / rank as f64))
        .sum::<f64>()
        / n;
    let matched: Vec<usize> = ranks.iter().flatten().copied().collect();
    let mean_first_rank = if matched.is_empty() {
        0.0
    } else {
        matched.iter().sum::<usize>() as f64 / matched.len() as f64
    };
    Ok(MetricsReport {
        p_at_1: p_at(1),
        p_at_5: p_at(5.min(k)),
        p_at_10: p_at(10.min(k)),
        p_at_20: p_at(20.min(k)),
        mrr,
        mean_first_rank,
        coverage: matched.len() as f64 / n,
        n_cases: ranks.len(),
    })
}

/// Retrieve `k` rewrites per case from the index and judge them against the
/// gold hypotheses.
pub fn evaluate(
    cases: &[EvalCase],
    index: &CandidateIndex,
    params: &EncoderParams,
    vocab: &Vocabulary,
    sim: &SimilarityConfig,
    k: usize,
) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::validation("cannot evaluate zero cases"));
    }
    params.cfg().ensure_vocab(vocab)?;
    index.ensure_dim(params.cfg().d_out)?;
    let ranks: Vec<Option<usize>> = cases
        .par_iter()
        .map(|case| -> Result<Option<usize>> {
            let seq = tokenize(&case.query.text, vocab, params.cfg().max_len)?;
            let emb = encode_eval(params, &seq)?;
            let q = project_query(&emb, params, sim);
            let hits = index.search_exact(&q, k);
            Ok(judge(&hits, &case.gold))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&ranks, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{NluHypothesis, Slot};

    fn hyp(intent: &str, value: &str) -> NluHypothesis {
        NluHypothesis::new("music", intent, vec![Slot::new("songname", value)]).unwrap()
    }

    fn entry(id: u32, h: Option<NluHypothesis>) -> CandidateEntry {
        CandidateEntry {
            id,
            text: format!("candidate {id}"),
            hypothesis: h,
            vector: vec![1.0, 0.0],
            frequency: 1,
        }
    }

    fn gold(h: NluHypothesis) -> Utterance {
        Utterance::new("u", 0, "gold text", Some(h)).unwrap()
    }

    #[test]
    fn judge_finds_first_matching_rank() {
        let target = hyp("playmusic", "old town road");
        let e1 = entry(0, Some(hyp("playmusic", "something else")));
        let e2 = entry(1, None);
        let e3 = entry(2, Some(target.clone()));
        let retrieved: Vec<(&CandidateEntry, f64)> =
            vec![(&e1, 3.0), (&e2, 2.0), (&e3, 1.0)];
        assert_eq!(judge(&retrieved, &gold(target.clone())), Some(3));

        let top = entry(9, Some(target.clone()));
        let first: Vec<(&CandidateEntry, f64)> = vec![(&top, 5.0)];
        assert_eq!(judge(&first, &gold(target.clone())), Some(1));

        let miss = entry(3, Some(hyp("playstation", "jazz")));
        let none: Vec<(&CandidateEntry, f64)> = vec![(&miss, 1.0)];
        assert_eq!(judge(&none, &gold(target)), None);
    }

    #[test]
    fn aggregate_known_two_case_values() {
        let report = aggregate(&[Some(2), Some(5)], 20).unwrap();
        assert!((report.mrr - 0.35).abs() < 1e-12); // (1/2 + 1/5) / 2
        assert_eq!(report.p_at_1, 0.0);
        assert_eq!(report.p_at_5, 1.0);
        assert_eq!(report.p_at_10, 1.0);
        assert_eq!(report.mean_first_rank, 3.5);
        assert_eq!(report.coverage, 1.0);
    }

    #[test]
    fn aggregate_perfect_and_empty() {
        let perfect = aggregate(&[Some(1), Some(1), Some(1)], 20).unwrap();
        assert_eq!(perfect.p_at_1, 1.0);
        assert_eq!(perfect.p_at_20, 1.0);
        assert_eq!(perfect.mrr, 1.0);

        assert!(aggregate(&[], 20).is_err());

        let nothing = aggregate(&[None, None], 20).unwrap();
        assert_eq!(nothing.mrr, 0.0);
        assert_eq!(nothing.coverage, 0.0);
        assert_eq!(nothing.mean_first_rank, 0.0);
    }

    #[test]
    fn monotonicity_and_mrr_bound_hold() {
        let ranks = vec![Some(1), Some(3), None, Some(7), Some(20), None, Some(2)];
        let r = aggregate(&ranks, 20).unwrap();
        assert!(r.p_at_1 <= r.p_at_5);
        assert!(r.p_at_5 <= r.p_at_10);
        assert!(r.p_at_10 <= r.p_at_20);
        assert!(r.mrr >= 0.0 && r.mrr <= 1.0);
        // ranks >= 2 contribute at most 1/2
        assert!(r.mrr <= r.p_at_1 + (1.0 - r.p_at_1) * 0.5 + 1e-12);
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let a = aggregate(&[Some(4), None, Some(1)], 20).unwrap();
        let b = aggregate(&[Some(1), Some(4), None], 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_serialization_has_exact_shape() {
        let r = aggregate(&[Some(1), Some(2)], 20).unwrap();
        let json = r.to_json();
        assert!(json.starts_with("{\"p@1\":0.500000,"));
        assert!(json.contains("\"mrr\":0.750000"));
        assert!(json.ends_with("\"n_cases\":2}"));
        // valid JSON
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["n_cases"], 2);
    }

    #[test]
    fn eval_case_requires_gold_hypothesis() {
        let q = Utterance::new("u", 0, "some query", None).unwrap();
        let g_no = Utterance::new("u", 1, "gold", None).unwrap();
        assert!(EvalCase::new(q.clone(), g_no).is_err());
        let g_ok = Utterance::new("u", 1, "gold", Some(hyp("playmusic", "x"))).unwrap();
        assert!(EvalCase::new(q, g_ok).is_ok());
    }
}
