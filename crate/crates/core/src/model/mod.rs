mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, ARCHIVE_MAGIC};
pub use config::{LatentMode, ModelConfig, Pooling, DEFAULT_GLOBAL_LATENTS, MASK_BIAS, NORM_EPS};
pub use forward::{argmax, attend, forward_on_tape, softmax, LatentState, Model, ModelInput};
pub use params::{
    init_params, is_norm_or_bias, param_shapes, AttentionBlock, FeedForward, Head, Layer, Linear, ModelParams, Norm,
    ParamTree, INIT_STD,
};
