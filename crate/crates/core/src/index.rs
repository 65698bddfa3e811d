//! Rewrite-candidate store: offline-encoded vectors, exact top-k search,
//! and an optional coarse-quantized (inverted-list) approximate variant.
//!
//! Candidate vectors are pre-projected through the second similarity head
//! and unit-normalized, so the query-time score `alpha * <q_hat, v>` with
//! `q_hat = alpha-scaled normalized linear1(query embedding)` reproduces the
//! scaled cosine exactly. Vectors are stored in 32-bit floats; dot products
//! accumulate in 64-bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{encode_eval, EncoderParams};
use crate::error::{Error, Result};
use crate::objective::{project1, project2, SimilarityConfig};
use crate::textproc::{tokenize, Vocabulary};
use crate::types::{canonical_hypothesis, normalize_text, CandidateRecord, NluHypothesis, Slot};

const MAGIC: &[u8; 6] = b"qridx1";

/// One indexed rewrite candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEntry {
    pub id: u32,
    pub text: String,
    pub hypothesis: Option<NluHypothesis>,
    /// linear2-projected, unit-normalized embedding (f32 storage).
    pub vector: Vec<f32>,
    pub frequency: u32,
}

/// Inverted-list coarse quantizer over the entry vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePartition {
    pub centroids: Vec<Vec<f32>>,
    pub lists: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct CandidateIndex {
    d_out: usize,
    entries: Vec<CandidateEntry>,
    partition: Option<CoarsePartition>,
}

/// Desk default for the number of inverted lists.
pub fn default_n_list(n_entries: usize) -> usize {
    (n_entries as f64).sqrt().ceil() as usize
}

/// Desk default for the number of probed lists.
pub fn default_n_probe(n_list: usize) -> usize {
    (n_list / 8).max(1)
}

/// Project a query embedding for retrieval: `alpha * normalize(linear1(u))`.
/// Dotted against a stored candidate vector this equals the scaled cosine.
pub fn project_query(
    embedding: &Array1<f64>,
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> Vec<f64> {
    let a = project1(params, embedding);
    let norm = a.dot(&a).sqrt().max(sim.epsilon);
    a.iter().map(|&v| sim.alpha * v / norm).collect()
}

fn project_candidate(
    embedding: &Array1<f64>,
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> Vec<f32> {
    let b = project2(params, embedding);
    let norm = b.dot(&b).sqrt().max(sim.epsilon);
    b.iter().map(|&v| (v / norm) as f32).collect()
}

fn dot_f32(q: &[f64], v: &[f32]) -> f64 {
    q.iter().zip(v).map(|(&a, &b)| a * b as f64).sum()
}

fn l2_sq(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y as f64;
            d * d
        })
        .sum()
}

impl CandidateIndex {
    /// Encode and index a candidate set with frozen parameters. Candidates
    /// deduplicate by normalized text (frequencies summed, first-seen
    /// hypothesis kept) and receive dense ids in first-seen order.
    pub fn build(
        candidates: &[CandidateRecord],
        params: &EncoderParams,
        vocab: &Vocabulary,
        sim: &SimilarityConfig,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::validation("cannot index an empty candidate set"));
        }
        params.cfg().ensure_vocab(vocab)?;
        sim.validate()?;

        let mut order: Vec<(String, Option<NluHypothesis>, u32)> = Vec::new();
        let mut by_text: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
        for c in candidates {
            let text = normalize_text(&c.text);
            if text.is_empty() {
                return Err(Error::validation("candidate with empty text"));
            }
            let freq = c.freq.max(1);
            match by_text.get(&text) {
                Some(&slot) => order[slot].2 += freq,
                None => {
                    let hyp = match &c.nlu {
                        Some(h) => Some(canonical_hypothesis(h)?),
                        None => None,
                    };
                    by_text.insert(text.clone(), order.len());
                    order.push((text, hyp, freq));
                }
            }
        }

        let max_len = params.cfg().max_len;
        let vectors: Vec<Vec<f32>> = order
            .par_iter()
            .map(|(text, _, _)| -> Result<Vec<f32>> {
                let seq = tokenize(text, vocab, max_len)?;
                let emb = encode_eval(params, &seq)?;
                Ok(project_candidate(&emb, params, sim))
            })
            .collect::<Result<Vec<_>>>()?;

        let entries = order
            .into_iter()
            .zip(vectors)
            .enumerate()
            .map(|(id, ((text, hypothesis, frequency), vector))| CandidateEntry {
                id: id as u32,
                text,
                hypothesis,
                vector,
                frequency,
            })
            .collect();
        Ok(CandidateIndex {
            d_out: params.cfg().d_out,
            entries,
            partition: None,
        })
    }

    /// Assemble an index from prebuilt entries (tests, synthetic data).
    /// Validates dimension agreement, unit norms, and text uniqueness; ids
    /// are rewritten to positions.
    pub fn from_entries(d_out: usize, mut entries: Vec<CandidateEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::validation("cannot index an empty candidate set"));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, e) in entries.iter_mut().enumerate() {
            e.id = i as u32;
            if e.vector.len() != d_out {
                return Err(Error::DimensionMismatch {
                    expected: d_out,
                    found: e.vector.len(),
                });
            }
            let norm: f64 = e.vector.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "entry {i} vector norm {norm} is not unit"
                )));
            }
            if !seen.insert(normalize_text(&e.text)) {
                return Err(Error::validation(format!("duplicate candidate text {:?}", e.text)));
            }
        }
        Ok(CandidateIndex {
            d_out,
            entries,
            partition: None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn entries(&self) -> &[CandidateEntry] {
        &self.entries
    }

    pub fn partition(&self) -> Option<&CoarsePartition> {
        self.partition.as_ref()
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.d_out != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.d_out,
            });
        }
        Ok(())
    }

    fn rank(&self, mut scored: Vec<(u32, f64)>, k: usize) -> Vec<(&CandidateEntry, f64)> {
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(id, s)| (&self.entries[id as usize], s))
            .collect()
    }

    /// Exhaustive top-k scan. Scores descend; ties break toward the lower
    /// entry id; `k` larger than the index returns everything.
    pub fn search_exact(&self, query: &[f64], k: usize) -> Vec<(&CandidateEntry, f64)> {
        let scored: Vec<(u32, f64)> = self
            .entries
            .iter()
            .map(|e| (e.id, dot_f32(query, &e.vector)))
            .collect();
        self.rank(scored, k)
    }

    /// Scan only the entries in the `n_probe` nearest inverted lists.
    /// Scores are exact; the approximation only limits which entries are
    /// visited.
    pub fn search_approx(
        &self,
        query: &[f64],
        k: usize,
        n_probe: usize,
    ) -> Result<Vec<(&CandidateEntry, f64)>> {
        let part = self
            .partition
            .as_ref()
            .ok_or_else(|| Error::validation("index has no coarse partition; build one first"))?;
        let n_list = part.centroids.len();
        if n_probe == 0 || n_probe > n_list {
            return Err(Error::validation(format!(
                "n_probe {n_probe} outside 1..={n_list}"
            )));
        }
        // probe the centroids nearest to the query direction
        let qnorm: f64 = query.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
        let unit: Vec<f64> = query.iter().map(|v| v / qnorm).collect();
        let mut by_dist: Vec<(usize, f64)> = part
            .centroids
            .iter()
            .enumerate()
            .map(|(ci, c)| (ci, l2_sq(&unit, c)))
            .collect();
        by_dist.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        let mut scored = Vec::new();
        for &(ci, _) in by_dist.iter().take(n_probe) {
            for &id in &part.lists[ci] {
                let e = &self.entries[id as usize];
                scored.push((e.id, dot_f32(query, &e.vector)));
            }
        }
        Ok(self.rank(scored, k))
    }

    /// Lloyd's k-means over the stored vectors: seeded initialization from
    /// distinct entries, a fixed iteration count, empty clusters reseeded
    /// from the farthest point. Stores (and returns) the partition.
    pub fn build_partition(
        &mut self,
        n_list: usize,
        kmeans_iters: usize,
        seed: u64,
    ) -> Result<&CoarsePartition> {
        let n = self.entries.len();
        if n_list == 0 || n_list > n {
            return Err(Error::validation(format!(
                "n_list {n_list} outside 1..={n}"
            )));
        }
        let d = self.d_out;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, n, n_list);
        let mut centroids: Vec<Vec<f64>> = picks
            .iter()
            .map(|i| self.entries[i].vector.iter().map(|&v| v as f64).collect())
            .collect();

        let mut assign = vec![0usize; n];
        for _iter in 0..kmeans_iters {
            // assignment
            assign
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, slot)| {
                    let v = &self.entries[i].vector;
                    let mut best = f64::INFINITY;
                    let mut best_c = 0usize;
                    for (ci, c) in centroids.iter().enumerate() {
                        let dist: f64 = c
                            .iter()
                            .zip(v.iter())
                            .map(|(&a, &b)| {
                                let d = a - b as f64;
                                d * d
                            })
                            .sum();
                        if dist < best {
                            best = dist;
                            best_c = ci;
                        }
                    }
                    *slot = best_c;
                });
            // update
            let mut sums = vec![vec![0.0f64; d]; n_list];
            let mut counts = vec![0usize; n_list];
            for (i, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, &v) in sums[c].iter_mut().zip(&self.entries[i].vector) {
                    *s += v as f64;
                }
            }
            let mut taken: Vec<usize> = Vec::new();
            for c in 0..n_list {
                if counts[c] == 0 {
                    // reseed at the farthest point from its centroid
                    let mut far_i = 0usize;
                    let mut far_d = -1.0;
                    for i in 0..n {
                        if taken.contains(&i) {
                            continue;
                        }
                        let dist: f64 = centroids[assign[i]]
                            .iter()
                            .zip(&self.entries[i].vector)
                            .map(|(&a, &b)| {
                                let d = a - b as f64;
                                d * d
                            })
                            .sum();
                        if dist > far_d {
                            far_d = dist;
                            far_i = i;
                        }
                    }
                    taken.push(far_i);
                    centroids[c] = self.entries[far_i]
                        .vector
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                } else {
                    for (k, s) in sums[c].iter().enumerate() {
                        centroids[c][k] = s / counts[c] as f64;
                    }
                }
            }
        }
        // final assignment into inverted lists
        let final_assign: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                let v = &self.entries[i].vector;
                let mut best = f64::INFINITY;
                let mut best_c = 0usize;
                for (ci, c) in centroids.iter().enumerate() {
                    let dist: f64 = c
                        .iter()
                        .zip(v.iter())
                        .map(|(&a, &b)| {
                            let d = a - b as f64;
                            d * d
                        })
                        .sum();
                    if dist < best {
                        best = dist;
                        best_c = ci;
                    }
                }
                best_c
            })
            .collect();
        let mut lists = vec![Vec::new(); n_list];
        for (i, &c) in final_assign.iter().enumerate() {
            lists[c].push(i as u32);
        }
        self.partition = Some(CoarsePartition {
            centroids: centroids
                .into_iter()
                .map(|c| c.into_iter().map(|v| v as f32).collect())
                .collect(),
            lists,
        });
        Ok(self.partition.as_ref().unwrap())
    }

    /// K-means objective (sum of squared distances to assigned centroids)
    /// for a given set of centroids — used to observe Lloyd monotonicity.
    pub fn kmeans_objective(&self, centroids: &[Vec<f32>]) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                centroids
                    .iter()
                    .map(|c| {
                        c.iter()
                            .zip(&e.vector)
                            .map(|(&a, &b)| {
                                let d = a as f64 - b as f64;
                                d * d
                            })
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }

    /// Binary persistence. Layout (little-endian): magic `qridx1`, u32
    /// d_out, u32 entry count, per entry (u32 id, u32 frequency, text as u32
    /// length + UTF-8 bytes, hypothesis flag byte then domain/intent/slots
    /// strings, d_out f32 vector), then a partition flag byte and, when set,
    /// u32 n_list, centroids, and the id lists.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.d_out as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let put_str = |buf: &mut Vec<u8>, s: &str| {
            buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
        };
        for e in &self.entries {
            buf.extend_from_slice(&e.id.to_le_bytes());
            buf.extend_from_slice(&e.frequency.to_le_bytes());
            put_str(&mut buf, &e.text);
            match &e.hypothesis {
                None => buf.push(0),
                Some(h) => {
                    buf.push(1);
                    put_str(&mut buf, &h.domain);
                    put_str(&mut buf, &h.intent);
                    buf.extend_from_slice(&(h.slots.len() as u32).to_le_bytes());
                    for s in &h.slots {
                        put_str(&mut buf, &s.slot_type);
                        put_str(&mut buf, &s.value);
                    }
                }
            }
            for &v in &e.vector {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &self.partition {
            None => buf.push(0),
            Some(p) => {
                buf.push(1);
                buf.extend_from_slice(&(p.centroids.len() as u32).to_le_bytes());
                for c in &p.centroids {
                    for &v in c {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                for list in &p.lists {
                    buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
                    for &id in list {
                        buf.extend_from_slice(&id.to_le_bytes());
                    }
                }
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        fs::File::open(path)?.read_to_end(&mut data)?;
        let mut r = ByteReader {
            data: &data,
            at: 0,
            path: path.display().to_string(),
        };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(Error::VersionMismatch {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let d_out = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u32()?;
            let frequency = r.u32()?;
            let text = r.string()?;
            let hypothesis = match r.byte()? {
                0 => None,
                1 => {
                    let domain = r.string()?;
                    let intent = r.string()?;
                    let n_slots = r.u32()? as usize;
                    let mut slots = Vec::with_capacity(n_slots);
                    for _ in 0..n_slots {
                        let slot_type = r.string()?;
                        let value = r.string()?;
                        slots.push(Slot { slot_type, value });
                    }
                    Some(NluHypothesis {
                        domain,
                        intent,
                        slots,
                    })
                }
                b => {
                    return Err(Error::Corrupt(format!(
                        "{}: bad hypothesis flag {b}",
                        path.display()
                    )))
                }
            };
            let mut vector = Vec::with_capacity(d_out);
            for _ in 0..d_out {
                vector.push(r.f32()?);
            }
            entries.push(CandidateEntry {
                id,
                text,
                hypothesis,
                vector,
                frequency,
            });
        }
        let partition = match r.byte()? {
            0 => None,
            1 => {
                let n_list = r.u32()? as usize;
                let mut centroids = Vec::with_capacity(n_list);
                for _ in 0..n_list {
                    let mut c = Vec::with_capacity(d_out);
                    for _ in 0..d_out {
                        c.push(r.f32()?);
                    }
                    centroids.push(c);
                }
                let mut lists = Vec::with_capacity(n_list);
                for _ in 0..n_list {
                    let len = r.u32()? as usize;
                    let mut list = Vec::with_capacity(len);
                    for _ in 0..len {
                        list.push(r.u32()?);
                    }
                    lists.push(list);
                }
                Some(CoarsePartition { centroids, lists })
            }
            b => {
                return Err(Error::Corrupt(format!(
                    "{}: bad partition flag {b}",
                    path.display()
                )))
            }
        };
        if r.at != data.len() {
            return Err(Error::Corrupt(format!(
                "{}: {} trailing bytes",
                path.display(),
                data.len() - r.at
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Corrupt(format!(
                    "{}: entry {i} carries id {}",
                    path.display(),
                    e.id
                )));
            }
        }
        Ok(CandidateIndex {
            d_out,
            entries,
            partition,
        })
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    at: usize,
    path: String,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(Error::Corrupt(format!(
                "{}: truncated at byte {}",
                self.path, self.at
            )));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > self.data.len() {
            return Err(Error::Corrupt(format!("{}: absurd string length {len}", self.path)));
        }
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Corrupt(format!("{}: invalid UTF-8 string", self.path)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig};
    use crate::objective::scaled_cosine;
    use crate::textproc::build_vocab;
    use rand::Rng;

    fn tiny_cfg(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_emb: 5,
            d_hid: 4,
            n_heads: 2,
            d_head: 4,
            d_out: 6,
            max_len: 6,
            dropout_rate: 0.0,
            seed: 31,
        }
    }

    fn rec(text: &str) -> CandidateRecord {
        CandidateRecord {
            text: text.into(),
            nlu: None,
            freq: 1,
        }
    }

    #[test]
    fn build_dedupes_and_normalizes_vectors() {
        let corpus = ["play jazz", "play blues", "tune the radio"];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let cfg = tiny_cfg(vocab.len());
        let params = init_params(&cfg).unwrap();
        let sim = SimilarityConfig::default();
        let cands = vec![rec("play jazz"), rec("Play  Jazz"), rec("play blues")];
        let idx = CandidateIndex::build(&cands, &params, &vocab, &sim).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.entries()[0].frequency, 2);
        for e in idx.entries() {
            let norm: f64 = e
                .vector
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        assert!(CandidateIndex::build(&[], &params, &vocab, &sim).is_err());
    }

    #[test]
    fn stored_score_equals_direct_scaled_cosine() {
        let corpus = ["play jazz radio", "tune the blues station", "what time is it"];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let cfg = tiny_cfg(vocab.len());
        let params = init_params(&cfg).unwrap();
        let sim = SimilarityConfig::default();
        let cands: Vec<CandidateRecord> = corpus.iter().map(|t| rec(t)).collect();
        let idx = CandidateIndex::build(&cands, &params, &vocab, &sim).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let qtext = corpus[rng.gen_range(0..corpus.len())];
            let seq = tokenize(qtext, &vocab, cfg.max_len).unwrap();
            let emb = encode_eval(&params, &seq).unwrap();
            let q = project_query(&emb, &params, &sim);
            for e in idx.entries() {
                let stored = dot_f32(&q, &e.vector);
                let cseq = tokenize(&e.text, &vocab, cfg.max_len).unwrap();
                let cemb = encode_eval(&params, &cseq).unwrap();
                let direct = scaled_cosine(&emb, &cemb, &params, &sim);
                assert!(
                    (stored - direct).abs() < 1e-5,
                    "stored {stored} vs direct {direct}"
                );
            }
        }
    }

    fn unit_entry(id: usize, text: String, v: Vec<f32>) -> CandidateEntry {
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        CandidateEntry {
            id: id as u32,
            text,
            hypothesis: None,
            vector: v.into_iter().map(|x| x / norm).collect(),
            frequency: 1,
        }
    }

    fn random_unit_index(n: usize, d: usize, seed: u64) -> CandidateIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<CandidateEntry> = (0..n)
            .map(|i| {
                let v: Vec<f32> = (0..d).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
                unit_entry(i, format!("cand {i}"), v)
            })
            .collect();
        CandidateIndex::from_entries(d, entries).unwrap()
    }

    #[test]
    fn exact_search_orders_scores_with_id_ties() {
        let d = 4;
        let entries = vec![
            unit_entry(0, "a".into(), vec![1.0, 0.0, 0.0, 0.0]),
            unit_entry(1, "b".into(), vec![0.0, 1.0, 0.0, 0.0]),
            unit_entry(2, "c".into(), vec![1.0, 0.0, 0.0, 0.0]),
        ];
        let idx = CandidateIndex::from_entries(d, entries).unwrap();
        let q = vec![16.0, 0.0, 0.0, 0.0];
        let hits = idx.search_exact(&q, 2);
        // entries 0 and 2 tie at 16; lower id first
        assert_eq!(hits[0].0.id, 0);
        assert_eq!(hits[1].0.id, 2);
        assert!((hits[0].1 - 16.0).abs() < 1e-5);

        // k exceeding the index returns all entries
        assert_eq!(idx.search_exact(&q, 10).len(), 3);
    }

    #[test]
    fn brute_force_oracle_agrees_with_search_exact() {
        let idx = random_unit_index(500, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let got = idx.search_exact(&q, 10);
            // independent oracle: recompute every score, stable sort
            let mut all: Vec<(u32, f64)> = idx
                .entries()
                .iter()
                .map(|e| {
                    let s: f64 = q.iter().zip(&e.vector).map(|(&a, &b)| a * b as f64).sum();
                    (e.id, s)
                })
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (g, w) in got.iter().zip(all.iter().take(10)) {
                assert_eq!(g.0.id, w.0);
                assert_eq!(g.1, w.1);
            }
        }
    }

    #[test]
    fn approx_with_full_probe_or_single_list_matches_exact() {
        let mut idx = random_unit_index(300, 6, 5);
        idx.build_partition(10, 15, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let exact = idx.search_exact(&q, 10);
            let approx = idx.search_approx(&q, 10, 10).unwrap();
            assert_eq!(exact.len(), approx.len());
            for (a, b) in exact.iter().zip(&approx) {
                assert_eq!(a.0.id, b.0.id);
                assert_eq!(a.1, b.1);
            }
        }

        let mut single = random_unit_index(50, 6, 7);
        single.build_partition(1, 5, 1).unwrap();
        let q: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let exact = single.search_exact(&q, 5);
        let approx = single.search_approx(&q, 5, 1).unwrap();
        assert_eq!(
            exact.iter().map(|e| e.0.id).collect::<Vec<_>>(),
            approx.iter().map(|e| e.0.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn approx_without_partition_is_an_error() {
        let idx = random_unit_index(10, 4, 8);
        assert!(idx.search_approx(&[1.0, 0.0, 0.0, 0.0], 3, 1).is_err());
    }

    #[test]
    fn partition_covers_every_entry_once_and_is_deterministic() {
        let mut idx = random_unit_index(200, 5, 9);
        idx.build_partition(8, 10, 42).unwrap();
        let p = idx.partition().unwrap().clone();
        let mut seen = vec![0usize; idx.len()];
        for list in &p.lists {
            for &id in list {
                seen[id as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));

        let mut idx2 = random_unit_index(200, 5, 9);
        idx2.build_partition(8, 10, 42).unwrap();
        assert_eq!(&p, idx2.partition().unwrap());

        // n_list > entries rejected
        let mut small = random_unit_index(5, 5, 10);
        assert!(small.build_partition(6, 5, 1).is_err());
    }

    #[test]
    fn kmeans_objective_non_increasing() {
        let idx = {
            // two well-separated clusters
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let entries: Vec<CandidateEntry> = (0..100)
                .map(|i| {
                    let base = if i % 2 == 0 { 1.0f32 } else { -1.0 };
                    let v: Vec<f32> = (0..4)
                        .map(|k| base * (1.0 + 0.05 * rng.gen::<f32>()) * if k == 0 { 1.0 } else { 0.1 })
                        .collect();
                    unit_entry(i, format!("e{i}"), v)
                })
                .collect();
            CandidateIndex::from_entries(4, entries).unwrap()
        };
        let mut objectives = Vec::new();
        for iters in 1..6 {
            let mut probe = idx.clone();
            probe.build_partition(2, iters, 3).unwrap();
            objectives.push(probe.kmeans_objective(&probe.partition().unwrap().centroids));
        }
        for w in objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "objective increased: {objectives:?}");
        }

        // the two generator clusters separate perfectly
        let mut probe = idx.clone();
        probe.build_partition(2, 10, 3).unwrap();
        let lists = &probe.partition().unwrap().lists;
        for list in lists {
            let parities: std::collections::HashSet<u32> = list.iter().map(|id| id % 2).collect();
            assert_eq!(parities.len(), 1, "cluster mixes the two generators");
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_search() {
        let mut idx = random_unit_index(120, 6, 12);
        idx.build_partition(6, 8, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        idx.save(&path).unwrap();

        // magic at byte 0
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"qridx1");

        let loaded = CandidateIndex::load(&path).unwrap();
        assert_eq!(loaded.len(), idx.len());
        assert_eq!(loaded.partition(), idx.partition());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let a = idx.search_exact(&q, 7);
            let b = loaded.search_exact(&q, 7);
            assert_eq!(
                a.iter().map(|e| (e.0.id, e.1)).collect::<Vec<_>>(),
                b.iter().map(|e| (e.0.id, e.1)).collect::<Vec<_>>()
            );
        }

        // dimension guard
        assert!(loaded.ensure_dim(6).is_ok());
        assert!(matches!(
            loaded.ensure_dim(8),
            Err(Error::DimensionMismatch { .. })
        ));

        // corruption and version errors are distinct
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(CandidateIndex::load(&path), Err(Error::Corrupt(_))));
        std::fs::write(&path, b"zzzzzz rest").unwrap();
        assert!(matches!(
            CandidateIndex::load(&path),
            Err(Error::VersionMismatch { .. })
        ));
    }
}
