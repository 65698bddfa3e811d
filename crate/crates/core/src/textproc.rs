//! Tokenization, vocabulary management, and hypothesis serialization.
//!
//! Word-level whitespace tokenization over normalized text. Serialized NLU
//! hypotheses go through the same tokenizer as query text, so both
//! modalities share one vocabulary.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{canonical_hypothesis, normalize_text, NluHypothesis};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

const VOCAB_MAGIC: &str = "qrv1";

/// A frozen token ↔ id mapping with reserved PAD=0 and UNK=1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    /// Id for a token, or UNK when unknown.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Write as a line-delimited file: header `qrv1 <size>`, then
    /// `token<TAB>id` lines in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        buf.push_str(&format!("{} {}\n", VOCAB_MAGIC, self.len()));
        for (id, tok) in self.id_to_token.iter().enumerate() {
            buf.push_str(&format!("{tok}\t{id}\n"));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Corrupt(format!("{}: empty vocabulary file", path.display())))?;
        let mut parts = header.split_whitespace();
        let magic = parts.next().unwrap_or("");
        if magic != VOCAB_MAGIC {
            return Err(Error::VersionMismatch {
                expected: VOCAB_MAGIC.to_string(),
                found: magic.to_string(),
            });
        }
        let size: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Corrupt("vocabulary header lacks a size".into()))?;
        let mut id_to_token = vec![String::new(); size];
        let mut seen = 0usize;
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: "expected token<TAB>id".into(),
            })?;
            let id: usize = id.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad id {id:?}"),
            })?;
            if id >= size {
                return Err(Error::Corrupt(format!("vocabulary id {id} out of range {size}")));
            }
            id_to_token[id] = tok.to_string();
            seen += 1;
        }
        if seen != size {
            return Err(Error::Corrupt(format!(
                "vocabulary lists {seen} entries, header says {size}"
            )));
        }
        if id_to_token.first().map(String::as_str) != Some(PAD_TOKEN)
            || id_to_token.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::Corrupt("vocabulary lacks reserved PAD/UNK entries".into()));
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }
}

/// Build a vocabulary over every whitespace token (of the normalized lines)
/// with count ≥ `min_count`. Ids are assigned by descending count, then
/// ascending token, starting after the reserved entries — deterministic and
/// independent of corpus line order.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: u32) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot build a vocabulary from an empty corpus"));
    }
    let mut counts: HashMap<String, u32> = HashMap::new();
    for line in corpus {
        for tok in normalize_text(line.as_ref()).split_whitespace() {
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, u32)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut id_to_token = Vec::with_capacity(kept.len() + 2);
    id_to_token.push(PAD_TOKEN.to_string());
    id_to_token.push(UNK_TOKEN.to_string());
    id_to_token.extend(kept.into_iter().map(|(t, _)| t));
    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(Vocabulary {
        token_to_id,
        id_to_token,
    })
}

/// A fixed-width id sequence: `ids.len() == max_len`, positions at and past
/// `length` are PAD.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub length: usize,
}

impl TokenSequence {
    /// The unpadded prefix.
    pub fn prefix(&self) -> &[u32] {
        &self.ids[..self.length]
    }
}

/// Map normalized text to ids (OOV → UNK), truncate to `max_len`, pad with
/// PAD. Text that normalizes to empty is an error.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    let normalized = normalize_text(text);
    if normalized.is_empty() {
        return Err(Error::validation("cannot tokenize empty text"));
    }
    let mut ids: Vec<u32> = normalized
        .split_whitespace()
        .take(max_len)
        .map(|t| vocab.id(t))
        .collect();
    let length = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSequence { ids, length })
}

/// Serialize a hypothesis into a word sequence: domain, intent, then for
/// each slot in canonical order the slot type followed by the value tokens.
pub fn serialize_hypothesis(h: &NluHypothesis) -> Result<String> {
    let c = canonical_hypothesis(h)?;
    let mut out = String::new();
    out.push_str(&c.domain);
    out.push(' ');
    out.push_str(&c.intent);
    for s in &c.slots {
        out.push(' ');
        out.push_str(&s.slot_type);
        if !s.value.is_empty() {
            out.push(' ');
            out.push_str(&s.value);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Slot;
    use proptest::prelude::*;

    #[test]
    fn vocab_counts_and_threshold() {
        let v = build_vocab(&["a b", "a"], 1).unwrap();
        assert_eq!(v.len(), 4); // pad, unk, a, b
        assert!(v.id("a") < v.id("b")); // a has higher count
        assert_eq!(v.id("a"), 2);

        let v2 = build_vocab(&["a b", "a"], 2).unwrap();
        assert_eq!(v2.len(), 3); // pad, unk, a
        assert_eq!(v2.id("b"), UNK_ID);
    }

    #[test]
    fn vocab_is_deterministic_and_order_independent() {
        let v1 = build_vocab(&["x y", "z x"], 1).unwrap();
        let v2 = build_vocab(&["z x", "x y"], 1).unwrap();
        assert_eq!(v1, v2);
        assert!(build_vocab::<&str>(&[], 1).is_err());
    }

    #[test]
    fn tokenize_maps_pads_and_truncates() {
        let v = build_vocab(&["play envy me"], 1).unwrap();
        let t = tokenize("play envy me", &v, 5).unwrap();
        assert_eq!(t.length, 3);
        assert_eq!(t.ids, vec![v.id("play"), v.id("envy"), v.id("me"), PAD_ID, PAD_ID]);

        let t2 = tokenize("play unknownword me", &v, 5).unwrap();
        assert_eq!(t2.ids[1], UNK_ID);

        let long = (0..30).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let t3 = tokenize(&long, &v, 25).unwrap();
        assert_eq!(t3.length, 25);
        assert_eq!(t3.ids.len(), 25);

        assert!(tokenize("   ", &v, 5).is_err());
    }

    #[test]
    fn serialize_hypothesis_joins_fields() {
        let h = NluHypothesis::new(
            "Music",
            "PlayMusic",
            vec![
                Slot::new("songname", "old town road"),
                Slot::new("artistname", "lil nas x."),
            ],
        )
        .unwrap();
        assert_eq!(
            serialize_hypothesis(&h).unwrap(),
            "music playmusic artistname lil nas x. songname old town road"
        );

        let h2 = NluHypothesis::new("Music", "PlayMusic", vec![]).unwrap();
        assert_eq!(serialize_hypothesis(&h2).unwrap(), "music playmusic");
        // determinism
        assert_eq!(
            serialize_hypothesis(&h).unwrap(),
            serialize_hypothesis(&h).unwrap()
        );
    }

    #[test]
    fn serialization_equality_matches_canonical_equality() {
        let a = NluHypothesis::new(
            "music",
            "playmusic",
            vec![Slot::new("b", "2"), Slot::new("a", "1")],
        )
        .unwrap();
        let b = NluHypothesis::new(
            "Music",
            "PLAYMUSIC",
            vec![Slot::new("A", "1"), Slot::new("B", "2")],
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(serialize_hypothesis(&a).unwrap(), serialize_hypothesis(&b).unwrap());
    }

    #[test]
    fn vocab_roundtrip_via_file() {
        let v = build_vocab(&["play envy me", "play jazz"], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(v, loaded);

        // corrupt header
        std::fs::write(&path, "nope 3\n<pad>\t0\n").unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(Error::VersionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn tokenize_ids_in_range_and_bounded(
            words in prop::collection::vec("[a-z]{1,6}", 1..40),
            max_len in 1usize..30,
        ) {
            let corpus = vec![words[..words.len() / 2 + 1].join(" ")];
            let v = build_vocab(&corpus, 1).unwrap();
            let t = tokenize(&words.join(" "), &v, max_len).unwrap();
            prop_assert!(t.length >= 1 && t.length <= max_len);
            prop_assert_eq!(t.ids.len(), max_len);
            for &id in &t.ids {
                prop_assert!((id as usize) < v.len());
            }
            for &id in &t.ids[t.length..] {
                prop_assert_eq!(id, PAD_ID);
            }
        }
    }
}
