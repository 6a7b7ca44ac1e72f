//! Onset, feature and frame stacks with local additive attention, plus the
//! ablation variants built from them.

mod attention;
mod checkpoint;
mod network;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::frontend::N_MELS;

pub use attention::{attended_classify, local_attention, AttentionMap, AttentionParams};
pub use checkpoint::{config_hash, Checkpoint, TensorKind};
pub use network::{BatchOutputs, Model, StackOutputs};
pub use params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoOnsetStack,
    NoBilstm,
    LinearProbe,
    ConvProbe,
}

impl Variant {
    pub fn is_probe(self) -> bool {
        matches!(self, Variant::LinearProbe | Variant::ConvProbe)
    }

    pub fn has_onset_stack(self) -> bool {
        matches!(self, Variant::Full | Variant::NoBilstm)
    }
}

/// Sequence the frame classifier attends over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionTarget {
    None,
    Spec,
    Onset,
    Feat,
}

impl std::fmt::Display for AttentionTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionTarget::None => "none",
            AttentionTarget::Spec => "spec",
            AttentionTarget::Onset => "onset",
            AttentionTarget::Feat => "feat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub attention_target: AttentionTarget,
    /// Half-width of the attention window; the window spans `2D + 1` frames.
    pub window_d: usize,
    /// Input bins per frame.
    pub n_bins: usize,
    /// Output channels of the three convolutional blocks.
    pub conv_channels: Vec<usize>,
    /// Width of the fully connected layer closing the onset stack's
    /// convolutional front end.
    pub fc_width: usize,
    /// Width of the feature stack output.
    pub n_feat: usize,
    /// Hidden size of the attention scoring layer.
    pub attention_dim: usize,
    /// Output channels of the probe's 1x3 frequency convolution.
    pub probe_channels: usize,
    /// Block onset activations from the frame-stack gradient.
    pub stop_onset_gradient: bool,
    /// Initial activation rate of the sigmoid heads. When set, their
    /// biases start at `logit(p)` so early steps need not spend the whole
    /// schedule pushing sparse outputs towards zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_prior: Option<f64>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            attention_target: AttentionTarget::None,
            window_d: 0,
            n_bins: N_MELS,
            conv_channels: vec![48, 48, 96],
            fc_width: 768,
            n_feat: 88,
            attention_dim: 64,
            probe_channels: 8,
            stop_onset_gradient: true,
            output_prior: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Reduced widths for CPU-scale experiments.
    pub fn desk() -> Self {
        Self {
            conv_channels: vec![8, 8, 16],
            fc_width: 64,
            n_feat: 88,
            attention_dim: 32,
            probe_channels: 4,
            output_prior: Some(0.01),
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_attention(mut self, target: AttentionTarget, d: usize) -> Self {
        self.attention_target = target;
        self.window_d = d;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn attention_enabled(&self) -> bool {
        self.attention_target != AttentionTarget::None
    }

    /// Width of the frame-stack input, `88 + N_feat` or `N_feat` without an
    /// onset stack.
    pub fn frame_input_width(&self) -> usize {
        if self.variant.has_onset_stack() {
            crate::dataio::N_PITCHES + self.n_feat
        } else {
            self.n_feat
        }
    }

    /// Frequency bins left after the pooling in the convolutional front end.
    pub fn pooled_bins(&self) -> usize {
        let pools = self.conv_channels.len().saturating_sub(1) as u32;
        self.n_bins / 2usize.pow(pools)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(config("n_bins must be positive"));
        }
        if let Some(p) = self.output_prior {
            if !(p > 0.0 && p < 1.0) {
                return Err(config(format!("output_prior must lie in (0, 1), got {p}")));
            }
        }
        if self.variant.is_probe() {
            if !matches!(self.attention_target, AttentionTarget::None | AttentionTarget::Spec) {
                return Err(config(format!(
                    "probes attend over the spectrogram only, not `{}`",
                    self.attention_target
                )));
            }
            if self.variant == Variant::ConvProbe && self.probe_channels == 0 {
                return Err(config("probe_channels must be positive"));
            }
            return Ok(());
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(config("conv_channels must be a non-empty list of positive widths"));
        }
        if self.pooled_bins() == 0 {
            return Err(config(format!(
                "{} bins cannot survive {} frequency poolings",
                self.n_bins,
                self.conv_channels.len() - 1
            )));
        }
        if self.fc_width == 0 || !self.fc_width.is_multiple_of(2) {
            return Err(config("fc_width must be positive and even"));
        }
        if self.n_feat == 0 || !self.n_feat.is_multiple_of(2) {
            return Err(config("n_feat must be positive and even"));
        }
        if self.attention_target == AttentionTarget::Onset && !self.variant.has_onset_stack() {
            return Err(config("attention over onsets requires an onset stack"));
        }
        if self.attention_enabled() && self.attention_dim == 0 {
            return Err(config("attention_dim must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inconsistent_combinations_are_rejected() {
        let bad = [
            ModelConfig::desk()
                .with_variant(Variant::NoOnsetStack)
                .with_attention(AttentionTarget::Onset, 2),
            ModelConfig::desk()
                .with_variant(Variant::LinearProbe)
                .with_attention(AttentionTarget::Feat, 2),
            ModelConfig { n_feat: 7, ..ModelConfig::desk() },
            ModelConfig { n_bins: 3, ..ModelConfig::desk() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(crate::Error::Config(_))), "{c:?}");
        }
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::desk().with_attention(AttentionTarget::Feat, 5);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), c);
    }
}
