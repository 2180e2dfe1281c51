//! Dense matrices, MLPs with exact backpropagation, and first-order optimizers.

mod matrix;
mod mlp;
mod optim;

pub use matrix::{axpy, dot, sq_dist, Matrix};
pub use mlp::{
    backward_lagrangian, backward_with_input, forward, grad_tensors, init_dual_head, init_params,
    sigmoid, softplus, Activation, Dense, Forward, ForwardCache, LayerGrads, Mlp, MlpArchitecture,
    MlpCache, ModelParams, ParamGrads,
};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`. Distinct streams of one seed
/// are independent, so callers can split randomness by purpose.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
