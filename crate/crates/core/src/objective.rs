//! Similarity scoring and training losses.
//!
//! The score between a query embedding `u` and a candidate embedding `v` is
//! the scaled cosine `alpha * cos(linear1(u), linear2(v))` with asymmetric
//! projection heads. Training turns a batch of aligned (source, target)
//! pairs into a row-wise softmax over all in-batch targets and takes the
//! cross entropy of the diagonal; next-turn session prediction and the
//! four-task joint objective reuse the same computation.

use ndarray::{Array1, Array2};
use crate::encoder::{encode_eval, EncoderParams};
use crate::error::{Error, Result};
use crate::textproc::TokenSequence;

/// Scaling constant and norm guard of the similarity function.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SimilarityConfig {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            alpha: 16.0,
            epsilon: 1e-8,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::validation("alpha must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Which surface form a batch side carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Hypothesis,
}

/// Aligned (source, target) token sequences; index i of each side forms the
/// positive pair, every other target is an in-batch negative.
#[derive(Debug, Clone)]
pub struct Batch {
    pub sources: Vec<TokenSequence>,
    pub targets: Vec<TokenSequence>,
    pub source_kind: Modality,
    pub target_kind: Modality,
}

impl Batch {
    pub fn new(
        sources: Vec<TokenSequence>,
        targets: Vec<TokenSequence>,
        source_kind: Modality,
        target_kind: Modality,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::validation("batch is empty"));
        }
        if sources.len() != targets.len() {
            return Err(Error::validation(format!(
                "batch has {} sources but {} targets",
                sources.len(),
                targets.len()
            )));
        }
        Ok(Batch {
            sources,
            targets,
            source_kind,
            target_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

pub(crate) fn project1(params: &EncoderParams, u: &Array1<f64>) -> Array1<f64> {
    u.dot(&params.lin1_w()) + &params.lin1_b()
}

pub(crate) fn project2(params: &EncoderParams, v: &Array1<f64>) -> Array1<f64> {
    v.dot(&params.lin2_w()) + &params.lin2_b()
}

fn guarded_norm(x: &Array1<f64>, epsilon: f64) -> f64 {
    x.dot(x).sqrt().max(epsilon)
}

/// `alpha * cos(linear1(u), linear2(v))`, clamped into [-alpha, alpha].
/// Norms are clamped below at epsilon, so degenerate inputs score 0-ish
/// rather than erroring.
pub fn scaled_cosine(
    u: &Array1<f64>,
    v: &Array1<f64>,
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> f64 {
    let a = project1(params, u);
    let b = project2(params, v);
    let cos = a.dot(&b) / (guarded_norm(&a, sim.epsilon) * guarded_norm(&b, sim.epsilon));
    sim.alpha * cos.clamp(-1.0, 1.0)
}

/// The N x N matrix of scaled-cosine logits: row i = source i against every
/// target.
fn logit_matrix(
    us: &[Array1<f64>],
    vs: &[Array1<f64>],
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> (Array2<f64>, Vec<Array1<f64>>, Vec<Array1<f64>>, Vec<f64>, Vec<f64>) {
    let n = us.len();
    let a: Vec<Array1<f64>> = us.iter().map(|u| project1(params, u)).collect();
    let b: Vec<Array1<f64>> = vs.iter().map(|v| project2(params, v)).collect();
    let na: Vec<f64> = a.iter().map(|x| guarded_norm(x, sim.epsilon)).collect();
    let nb: Vec<f64> = b.iter().map(|x| guarded_norm(x, sim.epsilon)).collect();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let cos = (a[i].dot(&b[j]) / (na[i] * nb[j])).clamp(-1.0, 1.0);
            s[[i, j]] = sim.alpha * cos;
        }
    }
    (s, a, b, na, nb)
}

fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let n = s.nrows();
    let mut p = Array2::zeros(s.raw_dim());
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..n {
            denom += (row[j] - max).exp();
        }
        for j in 0..n {
            p[[i, j]] = (row[j] - max).exp() / denom;
        }
    }
    p
}

/// Row-stochastic in-batch probabilities over precomputed embeddings.
pub fn in_batch_probs_from_embeddings(
    us: &[Array1<f64>],
    vs: &[Array1<f64>],
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> Array2<f64> {
    let (s, ..) = logit_matrix(us, vs, params, sim);
    softmax_rows(&s)
}

fn encode_batch(batch: &Batch, params: &EncoderParams) -> Result<(Vec<Array1<f64>>, Vec<Array1<f64>>)> {
    let us = batch
        .sources
        .iter()
        .map(|s| encode_eval(params, s))
        .collect::<Result<Vec<_>>>()?;
    let vs = batch
        .targets
        .iter()
        .map(|s| encode_eval(params, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((us, vs))
}

/// Encode the batch (without dropout) and return the in-batch probability
/// matrix; row i is the softmax over all targets for source i.
pub fn in_batch_probs(
    batch: &Batch,
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> Result<Array2<f64>> {
    let (us, vs) = encode_batch(batch, params)?;
    Ok(in_batch_probs_from_embeddings(&us, &vs, params, sim))
}

/// Gradients of the in-batch cross-entropy loss with respect to the
/// pre-projection embeddings and the two projection heads.
#[derive(Debug, Clone)]
pub struct EmbeddingGrads {
    pub d_sources: Vec<Array1<f64>>,
    pub d_targets: Vec<Array1<f64>>,
    pub d_lin1_w: Array2<f64>,
    pub d_lin1_b: Array1<f64>,
    pub d_lin2_w: Array2<f64>,
    pub d_lin2_b: Array1<f64>,
}

/// Loss and exact gradients over precomputed embeddings.
///
/// loss = -(1/N) sum_i log softmax_i(alpha cos(linear1(u_i), linear2(v_j)))[i]
pub fn contrastive_from_embeddings(
    us: &[Array1<f64>],
    vs: &[Array1<f64>],
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> (f64, EmbeddingGrads) {
    let n = us.len();
    let d = params.cfg().d_out;
    let nf = n as f64;
    let (s, a, b, na, nb) = logit_matrix(us, vs, params, sim);

    // loss via log-sum-exp
    let mut loss = 0.0;
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..n {
            denom += (row[j] - max).exp();
        }
        loss -= (s[[i, i]] - max) - denom.ln();
    }
    loss /= nf;

    let p = softmax_rows(&s);

    // dL/ds_ij = (p_ij - delta_ij) / N
    // s_ij = alpha * <a_i, b_j> / (na_i * nb_j)
    let mut da: Vec<Array1<f64>> = (0..n).map(|_| Array1::zeros(d)).collect();
    let mut db: Vec<Array1<f64>> = (0..n).map(|_| Array1::zeros(d)).collect();
    for i in 0..n {
        for j in 0..n {
            let g = (p[[i, j]] - if i == j { 1.0 } else { 0.0 }) / nf;
            if g == 0.0 {
                continue;
            }
            let dot = a[i].dot(&b[j]);
            let coeff = sim.alpha * g / (na[i] * nb[j]);
            // d/da: b_j / (na nb) - dot * a_i / (na^3 nb); the norm term
            // vanishes where the epsilon clamp is active.
            {
                let da_i = &mut da[i];
                let norm_term = if na[i] > sim.epsilon { dot / (na[i] * na[i]) } else { 0.0 };
                for k in 0..d {
                    da_i[k] += coeff * (b[j][k] - norm_term * a[i][k]);
                }
            }
            {
                let db_j = &mut db[j];
                let norm_term = if nb[j] > sim.epsilon { dot / (nb[j] * nb[j]) } else { 0.0 };
                for k in 0..d {
                    db_j[k] += coeff * (a[i][k] - norm_term * b[j][k]);
                }
            }
        }
    }

    // back through the heads: a = u . W1 + b1, b = v . W2 + b2
    let mut d_lin1_w = Array2::zeros((d, d));
    let mut d_lin1_b = Array1::zeros(d);
    let mut d_lin2_w = Array2::zeros((d, d));
    let mut d_lin2_b = Array1::zeros(d);
    let w1 = params.lin1_w();
    let w2 = params.lin2_w();
    let mut d_sources = Vec::with_capacity(n);
    let mut d_targets = Vec::with_capacity(n);
    for i in 0..n {
        for r in 0..d {
            let ur = us[i][r];
            let vr = vs[i][r];
            for c in 0..d {
                d_lin1_w[[r, c]] += ur * da[i][c];
                d_lin2_w[[r, c]] += vr * db[i][c];
            }
        }
        d_lin1_b += &da[i];
        d_lin2_b += &db[i];
        d_sources.push(w1.dot(&da[i]));
        d_targets.push(w2.dot(&db[i]));
    }

    (
        loss,
        EmbeddingGrads {
            d_sources,
            d_targets,
            d_lin1_w,
            d_lin1_b,
            d_lin2_w,
            d_lin2_b,
        },
    )
}

/// In-batch cross-entropy loss of a batch, with gradients with respect to
/// the (pre-projection) embeddings and the projection heads. Encoding runs
/// without dropout; the trainer drives its own dropout-aware path.
pub fn contrastive_loss(
    batch: &Batch,
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> Result<(f64, EmbeddingGrads)> {
    let (us, vs) = encode_batch(batch, params)?;
    Ok(contrastive_from_embeddings(&us, &vs, params, sim))
}

/// Next-turn prediction loss: identical computation to [`contrastive_loss`]
/// with (current, next) session queries as the (source, target) pairs.
pub fn session_lm_loss(
    pairs: &Batch,
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> Result<f64> {
    contrastive_loss(pairs, params, sim).map(|(loss, _)| loss)
}

/// Four-task joint loss: next query and next hypothesis predicted from the
/// current query and from the current hypothesis, summed without weights.
/// All four batches must align turn-for-turn.
pub fn joint_loss(
    u_pairs: &Batch,
    hu_pairs: &Batch,
    uh_pairs: &Batch,
    hh_pairs: &Batch,
    params: &EncoderParams,
    sim: &SimilarityConfig,
) -> Result<f64> {
    let n = u_pairs.len();
    for (name, b) in [
        ("hypothesis-from-query", hu_pairs),
        ("query-from-hypothesis", uh_pairs),
        ("hypothesis-from-hypothesis", hh_pairs),
    ] {
        if b.len() != n {
            return Err(Error::validation(format!(
                "joint batch {name} has {} rows, expected {n}",
                b.len()
            )));
        }
    }
    let mut total = 0.0;
    for b in [u_pairs, hu_pairs, uh_pairs, hh_pairs] {
        total += session_lm_loss(b, params, sim)?;
    }
    Ok(total)
}
