//! Forward pass of the embedder, with the per-sequence cache the backward
//! pass consumes.
//!
//! Pipeline per sequence: embed the unpadded prefix; run a GRU over it in
//! both directions and concatenate the per-position states into `X`
//! (len x 2H); per head project `S = X W`, take row-wise max of the scaled
//! logit matrix `S S^T / sqrt(d_head)`, softmax those maxima into position
//! weights, and pool `sum_i w_i S_i`; concatenate heads and apply the output
//! projection. Inverted dropout on the pooled vector during training.
//! The similarity projection heads are *not* applied here.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EncoderParams;
use crate::error::{Error, Result};
use crate::textproc::TokenSequence;

#[derive(Debug, Clone, Copy)]
pub(crate) enum DropoutMode {
    Off,
    /// Inverted dropout with the configured rate, mask drawn from a ChaCha
    /// stream seeded with this value. A per-sequence seed keeps parallel
    /// batch encoding deterministic.
    Seeded(u64),
}

pub(crate) struct GruCache {
    /// States in processing order; `h[0]` is the zero initial state and
    /// `h[t+1]` the state after consuming step `t`.
    pub h: Vec<Array1<f64>>,
    pub r: Vec<Array1<f64>>,
    pub z: Vec<Array1<f64>>,
    pub n: Vec<Array1<f64>>,
    /// Pre-gate hidden contribution to the candidate, needed for the reset
    /// gate's gradient.
    pub ghn: Vec<Array1<f64>>,
}

pub(crate) struct HeadCache {
    /// Projected sequence, len x d_head.
    pub s: Array2<f64>,
    /// Per query position, the key index attaining the row max.
    pub argmax: Vec<usize>,
    /// Softmax weights over positions.
    pub w: Array1<f64>,
}

pub(crate) struct SeqCache {
    pub len: usize,
    pub ids: Vec<u32>,
    /// Embedded tokens, len x d_emb.
    pub xs: Array2<f64>,
    pub fwd: GruCache,
    pub bwd: GruCache,
    /// Concatenated direction states, len x 2H.
    pub xcat: Array2<f64>,
    pub heads: Vec<HeadCache>,
    /// Concatenated head outputs (2H), input of the output projection.
    pub pooled: Array1<f64>,
    /// Per-dimension dropout scale (0 or 1/(1-rate)); None when not applied.
    pub drop_scale: Option<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU direction over `xs` rows taken in `order`. The input half of the
/// gate pre-activations is one GEMM over the whole sequence; only the
/// recurrent half runs step by step.
fn run_gru(params: &EncoderParams, xs: &Array2<f64>, order: &[usize], fwd: bool) -> GruCache {
    let h_dim = params.cfg().d_hid;
    let w_hh = params.gru_w_hh(fwd);
    let b_hh = params.gru_b_hh(fwd);
    let gi_all = xs.dot(&params.gru_w_ih(fwd)) + &params.gru_b_ih(fwd); // len x 3H

    let mut cache = GruCache {
        h: Vec::with_capacity(order.len() + 1),
        r: Vec::with_capacity(order.len()),
        z: Vec::with_capacity(order.len()),
        n: Vec::with_capacity(order.len()),
        ghn: Vec::with_capacity(order.len()),
    };
    cache.h.push(Array1::zeros(h_dim));
    for &pos in order {
        let gi = gi_all.row(pos);
        let h_prev = cache.h.last().unwrap();
        let gh = h_prev.dot(&w_hh) + &b_hh; // 3H
        let mut r = Array1::zeros(h_dim);
        let mut z = Array1::zeros(h_dim);
        let mut n = Array1::zeros(h_dim);
        let mut ghn = Array1::zeros(h_dim);
        for k in 0..h_dim {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[h_dim + k] + gh[h_dim + k]);
            ghn[k] = gh[2 * h_dim + k];
            n[k] = (gi[2 * h_dim + k] + r[k] * ghn[k]).tanh();
        }
        let mut h = Array1::zeros(h_dim);
        for k in 0..h_dim {
            h[k] = (1.0 - z[k]) * n[k] + z[k] * h_prev[k];
        }
        cache.h.push(h);
        cache.r.push(r);
        cache.z.push(z);
        cache.n.push(n);
        cache.ghn.push(ghn);
    }
    cache
}

/// Forward pass over the unpadded prefix of `seq`. Returns the final
/// embedding (d_out) and the cache for backpropagation.
pub(crate) fn forward_cached(
    params: &EncoderParams,
    seq: &TokenSequence,
    dropout: DropoutMode,
) -> Result<(Array1<f64>, SeqCache)> {
    let cfg = params.cfg();
    if seq.length == 0 {
        return Err(Error::validation("cannot encode a zero-length sequence"));
    }
    let len = seq.length.min(cfg.max_len);
    let ids: Vec<u32> = seq.ids[..len].to_vec();
    let emb = params.emb();
    for &id in &ids {
        if id as usize >= cfg.vocab_size {
            return Err(Error::validation(format!(
                "token id {id} out of range for vocab of {}",
                cfg.vocab_size
            )));
        }
    }

    // 1. embed
    let mut xs = Array2::zeros((len, cfg.d_emb));
    for (t, &id) in ids.iter().enumerate() {
        xs.row_mut(t).assign(&emb.row(id as usize));
    }

    // 2. bidirectional GRU
    let fwd_order: Vec<usize> = (0..len).collect();
    let bwd_order: Vec<usize> = (0..len).rev().collect();
    let fwd = run_gru(params, &xs, &fwd_order, true);
    let bwd = run_gru(params, &xs, &bwd_order, false);
    let h = cfg.d_hid;
    let mut xcat = Array2::zeros((len, 2 * h));
    for t in 0..len {
        // forward state after step t; backward state after processing down to t
        let fh = &fwd.h[t + 1];
        let bh = &bwd.h[len - t];
        for k in 0..h {
            xcat[[t, k]] = fh[k];
            xcat[[t, h + k]] = bh[k];
        }
    }

    // 3. per-head max-pooled scaled dot-product attention
    let scale = 1.0 / (cfg.d_head as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut pooled = Array1::zeros(2 * h);
    for hi in 0..cfg.n_heads {
        let s = xcat.dot(&params.head(hi)); // len x d_head
        let logits = s.dot(&s.t()); // len x len, scaled below
        let mut m = Array1::zeros(len);
        let mut argmax = vec![0usize; len];
        for i in 0..len {
            let row = logits.row(i);
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0usize;
            for (j, &raw) in row.iter().enumerate() {
                let logit = raw * scale;
                if logit > best {
                    best = logit;
                    best_j = j;
                }
            }
            m[i] = best;
            argmax[i] = best_j;
        }
        // softmax over positions, max-subtracted
        let mmax = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w = m.mapv(|v| (v - mmax).exp());
        let wsum = w.sum();
        w.mapv_inplace(|v| v / wsum);
        // pooled head output
        let out = s.t().dot(&w); // d_head
        pooled
            .slice_mut(ndarray::s![hi * cfg.d_head..(hi + 1) * cfg.d_head])
            .assign(&out);
        heads.push(HeadCache { s, argmax, w });
    }

    // 4. output projection
    let mut y = pooled.dot(&params.pool_out()); // d_out

    // 5. inverted dropout before the projection heads
    let drop_scale = match dropout {
        DropoutMode::Seeded(seed) if cfg.dropout_rate > 0.0 => {
            let keep = 1.0 - cfg.dropout_rate;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale: Vec<f64> = (0..cfg.d_out)
                .map(|_| {
                    if rng.gen::<f64>() < cfg.dropout_rate {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect();
            for (v, &sc) in y.iter_mut().zip(&scale) {
                *v *= sc;
            }
            Some(scale)
        }
        _ => None,
    };

    let cache = SeqCache {
        len,
        ids,
        xs,
        fwd,
        bwd,
        xcat,
        heads,
        pooled,
        drop_scale,
    };
    Ok((y, cache))
}

/// Encode one token sequence into its d_out embedding. With `training` set
/// and a nonzero dropout rate, draws an inverted-dropout mask seed from
/// `rng`; otherwise the pass is deterministic in the parameters alone.
pub fn encode(
    params: &EncoderParams,
    seq: &TokenSequence,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    let mode = if training && params.cfg().dropout_rate > 0.0 {
        DropoutMode::Seeded(rng.gen())
    } else {
        DropoutMode::Off
    };
    forward_cached(params, seq, mode).map(|(y, _)| y)
}

/// [`encode`] in evaluation mode: no dropout, no randomness.
pub fn encode_eval(params: &EncoderParams, seq: &TokenSequence) -> Result<Array1<f64>> {
    forward_cached(params, seq, DropoutMode::Off).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::encoder::tests::tiny_cfg;
    use crate::textproc::PAD_ID;

    fn seq(ids: &[u32], max_len: usize) -> TokenSequence {
        let mut v = ids.to_vec();
        let length = v.len();
        v.resize(max_len, PAD_ID);
        TokenSequence { ids: v, length }
    }

    #[test]
    fn encode_shape_and_determinism() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg).unwrap();
        let s = seq(&[2, 3, 4], cfg.max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = encode(&p, &s, false, &mut rng).unwrap();
        let b = encode(&p, &s, false, &mut rng).unwrap();
        assert_eq!(a.len(), cfg.d_out);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, b);
    }

    #[test]
    fn encode_rejects_empty_sequence() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg).unwrap();
        let s = TokenSequence {
            ids: vec![PAD_ID; cfg.max_len],
            length: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(encode(&p, &s, false, &mut rng).is_err());
    }

    #[test]
    fn length_one_attention_weight_is_one() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg).unwrap();
        let s = seq(&[5], cfg.max_len);
        let (_, cache) = forward_cached(&p, &s, DropoutMode::Off).unwrap();
        for head in &cache.heads {
            assert_eq!(head.w.len(), 1);
            assert_eq!(head.w[0], 1.0);
        }
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg).unwrap();
        let s = seq(&[2, 7, 3, 9, 4], cfg.max_len);
        let (_, cache) = forward_cached(&p, &s, DropoutMode::Off).unwrap();
        for head in &cache.heads {
            let sum: f64 = head.w.sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(head.w.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn pad_positions_do_not_affect_output() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = encode(&p, &seq(&[2, 3], cfg.max_len), false, &mut rng).unwrap();
        // tamper with the padding region
        let mut tampered = seq(&[2, 3], cfg.max_len);
        for slot in tampered.ids[2..].iter_mut() {
            *slot = 9;
        }
        let b = encode(&p, &tampered, false, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_zero_rate_matches_eval_mode() {
        let cfg = tiny_cfg(); // dropout_rate 0.0
        let p = init_params(&cfg).unwrap();
        let s = seq(&[2, 3, 4], cfg.max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train = encode(&p, &s, true, &mut rng).unwrap();
        let eval = encode(&p, &s, false, &mut rng).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn dropout_masks_dimensions() {
        let mut cfg = tiny_cfg();
        cfg.dropout_rate = 0.5;
        let p = init_params(&cfg).unwrap();
        let s = seq(&[2, 3, 4], cfg.max_len);
        let (y, cache) = forward_cached(&p, &s, DropoutMode::Seeded(99)).unwrap();
        let scale = cache.drop_scale.as_ref().unwrap();
        assert!(scale.iter().any(|&v| v == 0.0) || scale.iter().all(|&v| v != 0.0));
        for (v, &sc) in y.iter().zip(scale) {
            if sc == 0.0 {
                assert_eq!(*v, 0.0);
            }
        }
        // same seed, same mask
        let (y2, _) = forward_cached(&p, &s, DropoutMode::Seeded(99)).unwrap();
        assert_eq!(y, y2);
    }
}
