use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TaskMode};
use crate::error::{Error, Result};

/// Which part of the architecture to disable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    #[default]
    Full,
    /// Adjacency from global embeddings only.
    NoShortTerm,
    /// Adjacency from node-state attention only.
    NoLongTerm,
    /// No message passing; readout sees the updated node states directly.
    NoInterSeries,
    /// Masked mean of observation embeddings in place of the transformer.
    NoIntraSeries,
    /// Sinusoidal grid-position encoding in place of Time2Vec.
    NoTemporalEncoding,
    /// Uniform weights over observed positions in place of decay weights.
    NoDecayRate,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::Full,
        AblationVariant::NoShortTerm,
        AblationVariant::NoLongTerm,
        AblationVariant::NoInterSeries,
        AblationVariant::NoIntraSeries,
        AblationVariant::NoTemporalEncoding,
        AblationVariant::NoDecayRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoShortTerm => "no_short_term",
            AblationVariant::NoLongTerm => "no_long_term",
            AblationVariant::NoInterSeries => "no_inter_series",
            AblationVariant::NoIntraSeries => "no_intra_series",
            AblationVariant::NoTemporalEncoding => "no_temporal_encoding",
            AblationVariant::NoDecayRate => "no_decay_rate",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown variant `{s}`")))
    }
}

/// Architecture hyperparameters plus the data dimensions they bind to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub n_classes: usize,
    pub static_dim: usize,
    pub task_mode: TaskMode,
    /// Node-state width `M`.
    pub embed_dim: usize,
    /// Time2Vec width.
    pub time_dim: usize,
    pub enc_heads: usize,
    pub enc_layers: usize,
    /// Transformer feed-forward width; 0 means `2 * embed_dim`.
    pub ff_dim: usize,
    pub adj_heads: usize,
    pub gcn_layers: usize,
    /// Graph-level embedding width `l`; 0 means `embed_dim`.
    pub readout_dim: usize,
    /// Hidden width of the static-feature MLP; 0 means `embed_dim`.
    pub static_hidden: usize,
    /// Percentage of adjacency entries zeroed, in `[0, 100)`.
    pub sparsity_k: f64,
    pub layer_norm_eps: f64,
    /// Initial decay rate.
    pub eta_init: f64,
    pub variant: AblationVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_sensors: 1,
            n_classes: 2,
            static_dim: 0,
            task_mode: TaskMode::Multiclass,
            embed_dim: 16,
            time_dim: 8,
            enc_heads: 2,
            enc_layers: 1,
            ff_dim: 0,
            adj_heads: 2,
            gcn_layers: 2,
            readout_dim: 0,
            static_hidden: 0,
            sparsity_k: 50.0,
            layer_norm_eps: 1e-5,
            eta_init: 0.1,
            variant: AblationVariant::Full,
        }
    }
}

impl ModelConfig {
    /// Copies the data dimensions of `dataset` into the config.
    pub fn bind_dataset(mut self, dataset: &Dataset) -> Self {
        self.n_sensors = dataset.n_sensors;
        self.n_classes = dataset.n_classes;
        self.static_dim = dataset.static_dim;
        self.task_mode = dataset.task_mode;
        self
    }

    pub fn ff(&self) -> usize {
        if self.ff_dim == 0 {
            2 * self.embed_dim
        } else {
            self.ff_dim
        }
    }

    pub fn readout(&self) -> usize {
        if self.readout_dim == 0 {
            self.embed_dim
        } else {
            self.readout_dim
        }
    }

    pub fn hidden_static(&self) -> usize {
        if self.static_hidden == 0 {
            self.embed_dim
        } else {
            self.static_hidden
        }
    }

    pub fn enc_head_dim(&self) -> usize {
        self.embed_dim / self.enc_heads
    }

    pub fn adj_head_dim(&self) -> usize {
        self.embed_dim / self.adj_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_sensors == 0 || self.n_classes == 0 {
            return fail("n_sensors and n_classes must be positive".into());
        }
        if self.embed_dim == 0 || self.time_dim == 0 {
            return fail("embed_dim and time_dim must be positive".into());
        }
        if self.enc_heads == 0 || self.embed_dim % self.enc_heads != 0 {
            return fail(format!(
                "embed_dim {} must be divisible by enc_heads {}",
                self.embed_dim, self.enc_heads
            ));
        }
        if self.adj_heads == 0 || self.embed_dim % self.adj_heads != 0 {
            return fail(format!(
                "embed_dim {} must be divisible by adj_heads {}",
                self.embed_dim, self.adj_heads
            ));
        }
        if !(0.0..100.0).contains(&self.sparsity_k) {
            return fail(format!("sparsity_k must lie in [0, 100), got {}", self.sparsity_k));
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        if !(self.eta_init > 0.0 && self.eta_init.is_finite()) {
            return fail("eta_init must be positive".into());
        }
        Ok(())
    }
}
