//! Dense tensors, a reverse-mode tape with hand-written backward rules, Adam
//! and a finite-difference gradient verifier.

mod gradcheck;
mod graph;
mod ops;
mod optim;
mod param;
mod tensor;

pub use gradcheck::{grad_check, rel_err, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{BackCtx, BackwardFn, Graph, Var};
pub use ops::{
    dense_forward, dropout_forward, gcn_forward, gcn_normalize, layer_norm_forward, prelu_forward,
    LAYER_NORM_EPS,
};
pub use optim::{adam_step, Adam, AdamState};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Seeded random stream used throughout; ChaCha keeps streams identical
/// across platforms.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Derives an independent child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fresh generator for `seed`.
pub fn rng_from_seed(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
