//! Dense arrays, reverse-mode differentiation, the encoder, losses and the
//! optimizer shared by both stages.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{forward_encoder, init_encoder, linear, EncoderConfig, EncoderShape};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Graph, Var, XentTargets};
pub use loss::{binary_cross_entropy, cross_entropy, kl_divergence, ClassDistribution};
pub use optim::optimizer_step;
pub use params::{derive_seed, rng_from_seed, Gradients, ParameterStore, SeededRng};
pub use tensor::NdArray;
