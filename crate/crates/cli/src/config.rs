//! Run configuration: a sectioned TOML file with defaults, command-line
//! overrides, and an environment seed override. Unknown keys are fatal.
//! The effective merged config is echoed into every output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use qrewrite_core::data::{GeneratorConfig, NoiseModel};
use qrewrite_core::encoder::EncoderConfig;
use qrewrite_core::objective::SimilarityConfig;
use qrewrite_core::trainer::{TrainConfig, TrainMode};

use crate::Failure;

pub const SEED_ENV: &str = "QREWRITE_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub seed: u64,
    pub n_users: usize,
    pub n_sessions: usize,
    pub p_fail: f64,
    pub p_cancel: f64,
    pub eval_fraction: f64,
    pub max_rephrases: usize,
    pub confusion_p: f64,
    pub word_drop_p: f64,
    pub word_swap_p: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        GeneratorSection {
            seed: g.seed,
            n_users: g.n_users,
            n_sessions: g.n_sessions,
            p_fail: g.p_fail,
            p_cancel: g.p_cancel,
            eval_fraction: g.eval_fraction,
            max_rephrases: g.max_rephrases,
            confusion_p: g.noise.confusion_p,
            word_drop_p: g.noise.word_drop_p,
            word_swap_p: g.noise.word_swap_p,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub min_count: u32,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection { min_count: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub seed: u64,
    pub d_emb: usize,
    pub d_hid: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_out: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::desk(2);
        EncoderSection {
            seed: e.seed,
            d_emb: e.d_emb,
            d_hid: e.d_hid,
            n_heads: e.n_heads,
            d_head: e.d_head,
            d_out: e.d_out,
            max_len: e.max_len,
            dropout_rate: e.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub finetune_ratio: f64,
    pub finetune_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            seed: t.seed,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            finetune_ratio: t.finetune_ratio,
            finetune_epochs: t.finetune_epochs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilaritySection {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        let s = SimilarityConfig::default();
        SimilaritySection {
            alpha: s.alpha,
            epsilon: s.epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    /// 0 selects ceil(sqrt(N)) at build time.
    pub n_list: usize,
    /// 0 selects max(1, n_list / 8) at query time.
    pub n_probe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection {
            n_list: 0,
            n_probe: 0,
            kmeans_iters: 25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorSection,
    pub vocab: VocabSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub similarity: SimilaritySection,
    pub index: IndexSection,
}

impl RunConfig {
    /// Load the config file (or defaults), then apply the QREWRITE_SEED
    /// environment override to every seed.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::runtime(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Failure::validation(format!("bad config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            let seed: u64 = seed.parse().map_err(|_| {
                Failure::validation(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}"))
            })?;
            cfg.override_seeds(seed);
        }
        Ok(cfg)
    }

    pub fn override_seeds(&mut self, seed: u64) {
        self.generator.seed = seed;
        self.encoder.seed = seed;
        self.train.seed = seed;
        self.index.seed = seed;
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            seed: g.seed,
            n_users: g.n_users,
            n_sessions: g.n_sessions,
            p_fail: g.p_fail,
            p_cancel: g.p_cancel,
            eval_fraction: g.eval_fraction,
            max_rephrases: g.max_rephrases,
            noise: NoiseModel {
                confusion_p: g.confusion_p,
                word_drop_p: g.word_drop_p,
                word_swap_p: g.word_swap_p,
                ..NoiseModel::default()
            },
            ..GeneratorConfig::default()
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            vocab_size,
            d_emb: e.d_emb,
            d_hid: e.d_hid,
            n_heads: e.n_heads,
            d_head: e.d_head,
            d_out: e.d_out,
            max_len: e.max_len,
            dropout_rate: e.dropout_rate,
            seed: e.seed,
        }
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            seed: t.seed,
            mode,
            finetune_ratio: t.finetune_ratio,
            finetune_epochs: t.finetune_epochs,
        }
    }

    pub fn similarity_config(&self) -> SimilarityConfig {
        SimilarityConfig {
            alpha: self.similarity.alpha,
            epsilon: self.similarity.epsilon,
        }
    }

    /// Persist the effective config next to a command's outputs.
    pub fn echo_into(&self, dir: &Path) -> Result<(), Failure> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Failure::runtime(format!("cannot serialize config: {e}")))?;
        std::fs::write(dir.join("run_config.toml"), text)
            .map_err(|e| Failure::runtime(format!("cannot write config echo: {e}")))?;
        Ok(())
    }
}
