//! Finite-difference verification of the analytic gradients.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of the backward implementation it checks.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{backward, init_params, EncoderConfig, EncoderParams, ParamGradients};
use crate::error::Result;
use crate::objective::{contrastive_from_embeddings, SimilarityConfig};
use crate::textproc::{TokenSequence, PAD_ID};

/// Relative disagreement between an analytic and a numeric derivative.
/// Values whose magnitudes both sit below the finite-difference noise floor
/// compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-7;
    if analytic.abs() < FLOOR && numeric.abs() < FLOOR {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Relative error with a flat denominator floor: entries below `floor` are
/// effectively compared at the absolute tolerance `threshold * floor`.
pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub n_params: usize,
    pub loss: f64,
}

fn random_sequences(cfg: &EncoderConfig, n: usize, rng: &mut impl Rng) -> Vec<TokenSequence> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=cfg.max_len);
            let mut ids: Vec<u32> = (0..len)
                .map(|_| rng.gen_range(2..cfg.vocab_size as u32))
                .collect();
            let length = ids.len();
            ids.resize(cfg.max_len, PAD_ID);
            TokenSequence { ids, length }
        })
        .collect()
}

fn full_loss(
    params: &EncoderParams,
    sources: &[TokenSequence],
    targets: &[TokenSequence],
    sim: &SimilarityConfig,
) -> Result<f64> {
    let us: Vec<Array1<f64>> = sources
        .iter()
        .map(|s| crate::encoder::encode_eval(params, s))
        .collect::<Result<_>>()?;
    let vs: Vec<Array1<f64>> = targets
        .iter()
        .map(|s| crate::encoder::encode_eval(params, s))
        .collect::<Result<_>>()?;
    Ok(contrastive_from_embeddings(&us, &vs, params, sim).0)
}

fn analytic_full_gradients(
    params: &EncoderParams,
    sources: &[TokenSequence],
    targets: &[TokenSequence],
    sim: &SimilarityConfig,
) -> Result<(f64, ParamGradients)> {
    let us: Vec<Array1<f64>> = sources
        .iter()
        .map(|s| crate::encoder::encode_eval(params, s))
        .collect::<Result<_>>()?;
    let vs: Vec<Array1<f64>> = targets
        .iter()
        .map(|s| crate::encoder::encode_eval(params, s))
        .collect::<Result<_>>()?;
    let (loss, emb_grads) = contrastive_from_embeddings(&us, &vs, params, sim);
    let mut grads = backward(params, sources, &emb_grads.d_sources)?;
    let tgt_grads = backward(params, targets, &emb_grads.d_targets)?;
    grads.add_assign(&tgt_grads);
    grads.add_head_grads(
        &emb_grads.d_lin1_w,
        &emb_grads.d_lin1_b,
        &emb_grads.d_lin2_w,
        &emb_grads.d_lin2_b,
    );
    Ok((loss, grads))
}

/// Check the analytic gradient of the full in-batch contrastive loss —
/// through the projection heads, pooling, GRU, and embeddings — against
/// central finite differences over *every* parameter.
pub fn check_contrastive_gradients(
    cfg: &EncoderConfig,
    sim: &SimilarityConfig,
    n_pairs: usize,
    data_seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    sim.validate()?;
    let params = init_params(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let sources = random_sequences(cfg, n_pairs, &mut rng);
    let targets = random_sequences(cfg, n_pairs, &mut rng);

    let (loss, analytic) = analytic_full_gradients(&params, &sources, &targets, sim)?;

    let mut probe = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = 0usize;
    for i in 0..probe.n_params() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = full_loss(&probe, &sources, &targets, sim)?;
        probe.data_mut()[i] = orig - eps;
        let down = full_loss(&probe, &sources, &targets, sim)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = relative_error(analytic.data()[i], numeric);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = i;
        }
    }
    let worst_param = params.layout.segment_name(cfg, worst);
    Ok(GradCheckReport {
        max_rel_err,
        worst_param,
        n_params: params.n_params(),
        loss,
    })
}

/// The three small fixed configurations the `gradcheck` command and the
/// acceptance suite sweep.
pub fn standard_check_configs() -> Vec<EncoderConfig> {
    vec![
        EncoderConfig {
            vocab_size: 12,
            d_emb: 6,
            d_hid: 5,
            n_heads: 2,
            d_head: 5,
            d_out: 8,
            max_len: 6,
            dropout_rate: 0.0,
            seed: 101,
        },
        EncoderConfig {
            vocab_size: 9,
            d_emb: 4,
            d_hid: 6,
            n_heads: 3,
            d_head: 4,
            d_out: 10,
            max_len: 5,
            dropout_rate: 0.0,
            seed: 102,
        },
        EncoderConfig {
            vocab_size: 16,
            d_emb: 8,
            d_hid: 8,
            n_heads: 4,
            d_head: 4,
            d_out: 32,
            max_len: 6,
            dropout_rate: 0.0,
            seed: 103,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_handles_zeros() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-9, -1e-9), 0.0); // both under the noise floor
        assert!(relative_error(1.0, 1.0001) < 1.1e-4);
        assert_eq!(relative_error(2.0, 0.0), 1.0);
    }

    #[test]
    fn full_contrastive_gradcheck_passes_on_one_tiny_config() {
        let cfg = EncoderConfig {
            vocab_size: 10,
            d_emb: 4,
            d_hid: 3,
            n_heads: 2,
            d_head: 3,
            d_out: 5,
            max_len: 4,
            dropout_rate: 0.0,
            seed: 55,
        };
        let report =
            check_contrastive_gradients(&cfg, &SimilarityConfig::default(), 3, 7, 1e-5).unwrap();
        assert!(
            report.max_rel_err <= 1e-4,
            "max rel err {:.3e} at {}",
            report.max_rel_err,
            report.worst_param
        );
        assert!(report.loss > 0.0);
    }
}
