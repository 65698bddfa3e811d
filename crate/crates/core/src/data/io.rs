//! Line-delimited persistence for utterances, pairs, candidates, eval
//! cases, and metrics.
//!
//! Formats: `sessions.jsonl` holds one utterance record per line with
//! fields `user`, `ts_ms`, `text`, and optional `nlu {domain, intent,
//! slots: [{type, value}]}`; pairs files are tab-separated
//! `source<TAB>target[<TAB>score]`; candidates and eval cases are JSON
//! lines. Malformed lines are reported with their 1-based line number and
//! either skipped or, in strict mode, turned into the first fatal error.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MinedPair;
use crate::error::{Error, Result};
use crate::eval::{EvalCase, MetricsReport};
use crate::types::{CandidateRecord, NluHypothesis, RewritePair, Slot, Utterance};

/// A skipped input line and why.
#[derive(Debug, Clone)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
struct SlotRec {
    #[serde(rename = "type")]
    slot_type: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct NluRec {
    domain: String,
    intent: String,
    slots: Vec<SlotRec>,
}

#[derive(Serialize, Deserialize)]
struct UttRec {
    user: String,
    ts_ms: i64,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nlu: Option<NluRec>,
}

#[derive(Serialize, Deserialize)]
struct EvalCaseRec {
    query: UttRec,
    gold: UttRec,
}

impl From<&Utterance> for UttRec {
    fn from(u: &Utterance) -> Self {
        UttRec {
            user: u.user_id.clone(),
            ts_ms: u.ts_ms,
            text: u.text.clone(),
            nlu: u.nlu.as_ref().map(|h| NluRec {
                domain: h.domain.clone(),
                intent: h.intent.clone(),
                slots: h
                    .slots
                    .iter()
                    .map(|s| SlotRec {
                        slot_type: s.slot_type.clone(),
                        value: s.value.clone(),
                    })
                    .collect(),
            }),
        }
    }
}

impl UttRec {
    fn into_utterance(self) -> Result<Utterance> {
        let nlu = match self.nlu {
            Some(n) => Some(NluHypothesis::new(
                n.domain,
                n.intent,
                n.slots
                    .into_iter()
                    .map(|s| Slot::new(s.slot_type, s.value))
                    .collect(),
            )?),
            None => None,
        };
        Utterance::new(self.user, self.ts_ms, &self.text, nlu)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_jsonl<T, F, R>(path: &Path, strict: bool, convert: F) -> Result<(Vec<R>, Vec<ParseIssue>)>
where
    T: for<'de> Deserialize<'de>,
    F: Fn(T) -> Result<R>,
{
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parsed: std::result::Result<T, _> = serde_json::from_str(line);
        let record = match parsed {
            Ok(r) => convert(r),
            Err(e) => Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: e.to_string(),
            }),
        };
        match record {
            Ok(r) => out.push(r),
            Err(e) => {
                let message = e.to_string();
                if strict {
                    return Err(match e {
                        Error::Parse { .. } => e,
                        other => Error::Parse {
                            path: path.display().to_string(),
                            line: lineno,
                            message: other.to_string(),
                        },
                    });
                }
                issues.push(ParseIssue {
                    line: lineno,
                    message,
                });
            }
        }
    }
    Ok((out, issues))
}

pub fn write_utterances(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let mut buf = String::new();
    for u in utterances {
        buf.push_str(&serde_json::to_string(&UttRec::from(u)).expect("serializable"));
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes())
}

pub fn read_utterances(path: &Path, strict: bool) -> Result<(Vec<Utterance>, Vec<ParseIssue>)> {
    read_jsonl(path, strict, |r: UttRec| r.into_utterance())
}

pub fn write_candidates(path: &Path, candidates: &[CandidateRecord]) -> Result<()> {
    let mut buf = String::new();
    for c in candidates {
        buf.push_str(&serde_json::to_string(c).expect("serializable"));
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes())
}

pub fn read_candidates(path: &Path, strict: bool) -> Result<(Vec<CandidateRecord>, Vec<ParseIssue>)> {
    read_jsonl(path, strict, |mut c: CandidateRecord| {
        c.text = crate::types::normalize_text(&c.text);
        if c.text.is_empty() {
            return Err(Error::validation("candidate text empty"));
        }
        c.nlu = match c.nlu {
            Some(h) => Some(crate::types::canonical_hypothesis(&h)?),
            None => None,
        };
        Ok(c)
    })
}

pub fn write_eval_cases(path: &Path, cases: &[EvalCase]) -> Result<()> {
    let mut buf = String::new();
    for c in cases {
        let rec = EvalCaseRec {
            query: UttRec::from(&c.query),
            gold: UttRec::from(&c.gold),
        };
        buf.push_str(&serde_json::to_string(&rec).expect("serializable"));
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes())
}

pub fn read_eval_cases(path: &Path, strict: bool) -> Result<(Vec<EvalCase>, Vec<ParseIssue>)> {
    read_jsonl(path, strict, |r: EvalCaseRec| {
        EvalCase::new(r.query.into_utterance()?, r.gold.into_utterance()?)
    })
}

/// Tab-separated pairs: `source<TAB>target`, plus a third score column for
/// mined pairs. Normalized text never contains tabs, so no escaping is
/// needed.
pub fn write_pairs(path: &Path, pairs: &[RewritePair]) -> Result<()> {
    let mut buf = String::new();
    for p in pairs {
        buf.push_str(&p.source.text);
        buf.push('\t');
        buf.push_str(&p.target.text);
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes())
}

pub fn write_mined_pairs(path: &Path, pairs: &[MinedPair]) -> Result<()> {
    let mut buf = String::new();
    for m in pairs {
        buf.push_str(&m.pair.source.text);
        buf.push('\t');
        buf.push_str(&m.pair.target.text);
        buf.push('\t');
        buf.push_str(&format!("{:.9}", m.score));
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes())
}

/// Read a pairs file; sides become placeholder utterances (training only
/// consumes the texts). Returns each pair with its optional score.
pub fn read_pairs(
    path: &Path,
    strict: bool,
) -> Result<(Vec<(RewritePair, Option<f64>)>, Vec<ParseIssue>)> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parse = || -> Result<(RewritePair, Option<f64>)> {
            let mut cols = line.split('\t');
            let source = cols.next().unwrap_or("");
            let target = cols
                .next()
                .ok_or_else(|| Error::validation("missing target column"))?;
            let score = match cols.next() {
                Some(s) => Some(
                    s.parse::<f64>()
                        .map_err(|_| Error::validation(format!("bad score {s:?}")))?,
                ),
                None => None,
            };
            let pair = RewritePair::new(
                Utterance::new("pair", 0, source, None)?,
                Utterance::new("pair", 0, target, None)?,
            )?;
            Ok((pair, score))
        };
        match parse() {
            Ok(p) => out.push(p),
            Err(e) => {
                if strict {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno,
                        message: e.to_string(),
                    });
                }
                issues.push(ParseIssue {
                    line: lineno,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((out, issues))
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    atomic_write(path, format!("{}\n", report.to_json()).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{NluHypothesis, Slot};

    fn sample_utterances() -> Vec<Utterance> {
        let h = NluHypothesis::new(
            "music",
            "playmusic",
            vec![Slot::new("songname", "envy me")],
        )
        .unwrap();
        vec![
            Utterance::new("u1", 0, "play envy me", Some(h)).unwrap(),
            Utterance::new("u1", 9_000, "play jazz", None).unwrap(),
        ]
    }

    #[test]
    fn utterance_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let original = sample_utterances();
        write_utterances(&path, &original).unwrap();
        let (read, issues) = read_utterances(&path, true).unwrap();
        assert!(issues.is_empty());
        assert_eq!(read, original);
    }

    #[test]
    fn empty_file_reads_as_empty_collection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        std::fs::write(&path, "").unwrap();
        let (read, issues) = read_utterances(&path, true).unwrap();
        assert!(read.is_empty());
        assert!(issues.is_empty());
    }

    #[test]
    fn malformed_line_strict_vs_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        std::fs::write(
            &path,
            "{\"user\":\"u\",\"ts_ms\":1,\"text\":\"ok line\"}\n{\"user\":\"u\",\"ts_ms\":2}\n",
        )
        .unwrap();
        // strict: fatal, names the line
        let err = read_utterances(&path, true).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
        // lenient: skips and reports
        let (read, issues) = read_utterances(&path, false).unwrap();
        assert_eq!(read.len(), 1);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].line, 2);
    }

    #[test]
    fn pairs_roundtrip_with_and_without_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        let pairs = vec![
            RewritePair::new(
                Utterance::new("p", 0, "play ambient mean", None).unwrap(),
                Utterance::new("p", 0, "play envy me", None).unwrap(),
            )
            .unwrap(),
            RewritePair::new(
                Utterance::new("p", 0, "play blues radio news", None).unwrap(),
                Utterance::new("p", 0, "play blue news radio", None).unwrap(),
            )
            .unwrap(),
        ];
        write_pairs(&path, &pairs).unwrap();
        let (read, issues) = read_pairs(&path, true).unwrap();
        assert!(issues.is_empty());
        assert_eq!(read.len(), 2);
        // the TSV stores texts only
        assert_eq!(read[0].0.source.text, pairs[0].source.text);
        assert_eq!(read[0].0.target.text, pairs[0].target.text);
        assert_eq!(read[0].1, None);

        let mined = vec![MinedPair {
            pair: pairs[0].clone(),
            score: 1.0 / 3.0,
        }];
        write_mined_pairs(&path, &mined).unwrap();
        let (read, _) = read_pairs(&path, true).unwrap();
        let score = read[0].1.unwrap();
        assert!((score - 1.0 / 3.0).abs() < 1e-9);

        // a line with only one column is a parse error in strict mode
        std::fs::write(&path, "only source\n").unwrap();
        assert!(matches!(read_pairs(&path, true), Err(Error::Parse { .. })));
    }

    #[test]
    fn candidates_and_eval_cases_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cpath = dir.path().join("candidates.jsonl");
        let h = NluHypothesis::new("music", "playmusic", vec![Slot::new("songname", "x")]).unwrap();
        let cands = vec![
            CandidateRecord {
                text: "play x".into(),
                nlu: Some(h.clone()),
                freq: 3,
            },
            CandidateRecord {
                text: "play jazz".into(),
                nlu: None,
                freq: 1,
            },
        ];
        write_candidates(&cpath, &cands).unwrap();
        let (read, _) = read_candidates(&cpath, true).unwrap();
        assert_eq!(read, cands);

        let epath = dir.path().join("cases.jsonl");
        let case = EvalCase::new(
            Utterance::new("u", 0, "play ex", None).unwrap(),
            Utterance::new("u", 1, "play x", Some(h)).unwrap(),
        )
        .unwrap();
        write_eval_cases(&epath, &[case.clone()]).unwrap();
        let (read, _) = read_eval_cases(&epath, true).unwrap();
        assert_eq!(read, vec![case]);
    }
}
