//! Toy-scale masked speech encoder: convolutional feature encoder, span
//! masking, Gumbel product quantizer and a pre-norm transformer context
//! network, run over an original and an augmented view with shared masks.

mod config;
mod forward;
mod mask;
mod params;

pub use config::{MaskConfig, ModelConfig, QuantizerConfig};
pub use forward::{
    context_network, feature_encoder, forward_pair, gumbel_noise, quantize, EncoderOutputs, QuantizerMode,
    Quantized, UtteranceOutputs,
};
pub use mask::{mask_batch, sample_mask};
pub use params::{init_params, layout, Bound, Params};

#[cfg(test)]
mod tests;
