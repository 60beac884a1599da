//! Miniature text-to-text transformer.
//!
//! Teacher and student share this architecture: a pre-norm encoder-decoder
//! with learned absolute positions, GELU feed-forward blocks, a token
//! embedding shared between encoder and decoder, and an lm head tied to that
//! embedding. The decoder's cross-attention takes an explicit visibility mask
//! over encoder positions, which is where the rationale bottleneck lives.

mod config;
mod transformer;

pub use config::ModelConfig;
pub use transformer::{
    build_bottleneck_mask, CrossAttnMask, DecoderOutput, EncoderOutput, Forward, Segment,
    TransformerModel,
};
