//! Shared domain records: utterances, NLU hypotheses, sessions, rewrite pairs.
//!
//! Everything here is immutable after construction; constructors enforce the
//! invariants so downstream modules can rely on them without re-checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum gap between consecutive turns of one session, in milliseconds.
/// A gap of exactly this value still belongs to the same session.
pub const MAX_GAP_MS: i64 = 45_000;

/// Lowercase, collapse internal whitespace runs to single spaces, trim ends.
/// Idempotent; all-whitespace input yields the empty string.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for tok in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in tok.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// One slot of an NLU hypothesis: an entity type and its surface value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    #[serde(rename = "type")]
    pub slot_type: String,
    pub value: String,
}

impl Slot {
    pub fn new(slot_type: impl Into<String>, value: impl Into<String>) -> Self {
        Slot {
            slot_type: slot_type.into(),
            value: value.into(),
        }
    }
}

/// The structured interpretation of a query: domain, intent, and slots.
///
/// Constructed values are canonical: all fields normalized, slots sorted
/// ascending by (type, value). Equality of two canonical hypotheses is the
/// hypothesis-match relation used by evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NluHypothesis {
    pub domain: String,
    pub intent: String,
    pub slots: Vec<Slot>,
}

impl NluHypothesis {
    pub fn new(
        domain: impl Into<String>,
        intent: impl Into<String>,
        slots: Vec<Slot>,
    ) -> Result<Self> {
        canonical_hypothesis(&NluHypothesis {
            domain: domain.into(),
            intent: intent.into(),
            slots,
        })
    }
}

/// Canonical form: domain/intent/slot fields normalized, slots sorted
/// ascending by (type, value). Idempotent. Errors on empty domain or intent
/// and on any empty slot type.
pub fn canonical_hypothesis(h: &NluHypothesis) -> Result<NluHypothesis> {
    let domain = normalize_text(&h.domain);
    let intent = normalize_text(&h.intent);
    if domain.is_empty() {
        return Err(Error::validation("hypothesis domain is empty"));
    }
    if intent.is_empty() {
        return Err(Error::validation("hypothesis intent is empty"));
    }
    let mut slots = Vec::with_capacity(h.slots.len());
    for s in &h.slots {
        let slot_type = normalize_text(&s.slot_type);
        if slot_type.is_empty() {
            return Err(Error::validation("slot type is empty"));
        }
        slots.push(Slot {
            slot_type,
            value: normalize_text(&s.value),
        });
    }
    slots.sort();
    Ok(NluHypothesis {
        domain,
        intent,
        slots,
    })
}

/// One user query: who said it, when, the (normalized) text, and the NLU
/// hypothesis when one is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub user_id: String,
    pub ts_ms: i64,
    pub text: String,
    pub nlu: Option<NluHypothesis>,
}

impl Utterance {
    pub fn new(
        user_id: impl Into<String>,
        ts_ms: i64,
        text: &str,
        nlu: Option<NluHypothesis>,
    ) -> Result<Self> {
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(Error::validation("utterance text is empty after normalization"));
        }
        if ts_ms < 0 {
            return Err(Error::validation(format!("negative timestamp {ts_ms}")));
        }
        let nlu = match nlu {
            Some(h) => Some(canonical_hypothesis(&h)?),
            None => None,
        };
        Ok(Utterance {
            user_id: user_id.into(),
            ts_ms,
            text,
            nlu,
        })
    }
}

/// A maximal run of one user's utterances with inter-turn gaps of at most
/// [`MAX_GAP_MS`], ordered by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    user_id: String,
    turns: Vec<Utterance>,
}

impl Session {
    pub fn new(turns: Vec<Utterance>) -> Result<Self> {
        let first = turns
            .first()
            .ok_or_else(|| Error::validation("session has no turns"))?;
        let user_id = first.user_id.clone();
        for pair in turns.windows(2) {
            if pair[1].user_id != user_id {
                return Err(Error::validation(format!(
                    "session mixes users {:?} and {:?}",
                    user_id, pair[1].user_id
                )));
            }
            let gap = pair[1].ts_ms - pair[0].ts_ms;
            if gap < 0 {
                return Err(Error::validation("session turns not sorted by timestamp"));
            }
            if gap > MAX_GAP_MS {
                return Err(Error::validation(format!(
                    "gap of {gap} ms exceeds session limit of {MAX_GAP_MS} ms"
                )));
            }
        }
        Ok(Session { user_id, turns })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn into_turns(self) -> Vec<Utterance> {
        self.turns
    }
}

/// An (original query, rewrite) pair. The two sides always differ after
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RewritePair {
    pub source: Utterance,
    pub target: Utterance,
}

impl RewritePair {
    pub fn new(source: Utterance, target: Utterance) -> Result<Self> {
        if source.text == target.text {
            return Err(Error::validation(format!(
                "rewrite pair with identical normalized text {:?}",
                source.text
            )));
        }
        Ok(RewritePair { source, target })
    }
}

/// A rewrite candidate before encoding: text, optional hypothesis, and how
/// often it occurred in the corpus it was collected from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlu: Option<NluHypothesis>,
    pub freq: u32,
}
