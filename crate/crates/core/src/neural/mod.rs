//! Small dense networks with hand-written backpropagation, Adam, and
//! Gumbel-softmax heads. Everything is `f64`.

mod adam;
mod gumbel;
mod mlp;
mod serial;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use gumbel::{
    greedy_batch, greedy_select, group_indices, gumbel_soft_batch, gumbel_softmax,
    gumbel_softmax_with_noise, sample_gumbel_noise, softmax_backward_batch, GumbelSample,
    LogitGroups,
};
pub use mlp::{Dense, ForwardCache, MlpGrads, MlpParams, MlpShape};
pub use serial::{
    decode_params, encode_params, read_payload, write_payload, ParamsHeader, PARAMS_FORMAT_VERSION,
};
