use serde::{Deserialize, Serialize};

use crate::audio_io::FrameGeometry;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerConfig {
    /// G
    pub groups: usize,
    /// V
    pub entries_per_group: usize,
    /// Width of each codeword before concatenation.
    pub d_code: usize,
    pub temperature_start: f64,
    pub temperature_floor: f64,
    pub temperature_decay: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            groups: 2,
            entries_per_group: 16,
            d_code: 32,
            temperature_start: 2.0,
            temperature_floor: 0.5,
            temperature_decay: 0.999,
        }
    }
}

impl QuantizerConfig {
    /// Codebook entries over all groups, `G·V`.
    pub fn codebook_count(&self) -> usize {
        self.groups * self.entries_per_group
    }

    /// Distinct codes a frame can take, `V^G` (saturating).
    pub fn combinations(&self) -> u128 {
        (self.entries_per_group as u128).saturating_pow(self.groups as u32)
    }

    /// Gumbel temperature after `step` updates:
    /// `max(start · decay^step, floor)`.
    pub fn temperature(&self, step: usize) -> f64 {
        (self.temperature_start * self.temperature_decay.powi(step as i32)).max(self.temperature_floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub p_start: f64,
    pub span_length: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            p_start: 0.065,
            span_length: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_channels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub encoder_kernel_widths: Vec<usize>,
    /// Must equal the last encoder channel count.
    pub d_latent: usize,
    pub d_context: usize,
    pub n_transformer_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Odd kernel width of the convolutional positional layer.
    pub pos_conv_kernel: usize,
    pub quantizer: QuantizerConfig,
    pub mask: MaskConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_channels: vec![32, 32, 64],
            encoder_strides: vec![10, 4, 8],
            encoder_kernel_widths: vec![50, 8, 8],
            d_latent: 64,
            d_context: 64,
            n_transformer_layers: 2,
            n_heads: 4,
            d_ff: 128,
            pos_conv_kernel: 7,
            quantizer: QuantizerConfig::default(),
            mask: MaskConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry {
            kernels: self.encoder_kernel_widths.clone(),
            strides: self.encoder_strides.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let n = self.encoder_channels.len();
        if n == 0 || self.encoder_strides.len() != n || self.encoder_kernel_widths.len() != n {
            return bad("encoder channels, strides and kernel widths must be non-empty and equally long");
        }
        if self.encoder_channels.iter().chain(&self.encoder_strides).chain(&self.encoder_kernel_widths).any(|v| *v == 0) {
            return bad("encoder dimensions must be positive");
        }
        if self.encoder_channels[n - 1] != self.d_latent {
            return bad("d_latent must equal the last encoder channel count");
        }
        if [self.d_latent, self.d_context, self.n_heads, self.d_ff].contains(&0) {
            return bad("model dimensions must be positive");
        }
        if !self.d_context.is_multiple_of(self.n_heads) {
            return bad("d_context must be divisible by n_heads");
        }
        if self.pos_conv_kernel.is_multiple_of(2) {
            return bad("pos_conv_kernel must be odd");
        }
        let q = &self.quantizer;
        if q.groups < 1 || q.entries_per_group < 2 || q.d_code == 0 {
            return bad("quantizer needs G >= 1, V >= 2, d_code >= 1");
        }
        if !(q.temperature_floor > 0.0 && q.temperature_start >= q.temperature_floor) {
            return Err(Error::NonPositiveTemperature(q.temperature_floor));
        }
        if !(q.temperature_decay > 0.0 && q.temperature_decay <= 1.0) {
            return bad("temperature_decay must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mask.p_start) || self.mask.span_length == 0 {
            return bad("mask needs p_start in [0, 1] and span_length >= 1");
        }
        Ok(())
    }
}
