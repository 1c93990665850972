//! Dense neural-network substrate shared by the on- and off-policy agents:
//! forward/backward passes, the adaptive-moment optimizer, Gaussian policy
//! heads, streaming input normalization, action scaling, and checkpoints.

pub mod checkpoint;
pub mod gaussian;
pub mod mlp;
pub mod normalizer;
pub mod optimizer;

pub use checkpoint::{
    load_adam, load_mlp, load_normalizer, store_adam, store_mlp, store_normalizer, Checkpoint,
};
pub use gaussian::{
    clip_action, diag_gaussian_log_prob, sample_diag_gaussian, sample_squashed_gaussian,
    scale_action, squash_deterministic, squash_with_noise, squashed_log_prob, SquashedSample,
};
pub use mlp::{ForwardCache, MlpGradient, MlpParams, MlpSpec, OutputActivation, SOFTPLUS_FLOOR};
pub use normalizer::RunningNormalizer;
pub use optimizer::{AdamState, AdamVector};
