//! Miniature T5-style encoder-decoder whose encoder self-attention accepts
//! externally supplied key/value prefixes.
//!
//! Pre-norm residual blocks with RMS normalization and no biases. Positions
//! are learned absolute embeddings; prefixes receive none.

mod config;
mod decode;
mod model;
mod network;

pub use config::{Mode, ModelConfig};
pub use decode::{argmax, greedy_decode};
pub use model::{
    layout, AttnIds, DecoderLayerIds, EncoderLayerIds, FfnIds, GeneratorIds, Init, Model, ModelIds, PrompterIds,
};
pub use network::{
    decoder_forward, embed, encode_embedded, encoder_forward, prefixed_self_attention, Attention, EncoderOutput,
    LayerPrefix, Stack,
};
