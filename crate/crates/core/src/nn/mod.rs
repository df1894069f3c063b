//! Deterministic CPU neural network stack.
//!
//! [`store`] holds named parameters behind schemas, [`ops`] supplies the
//! differentiable building blocks, and [`generator`] / [`discriminator`]
//! assemble them into the two U-Net generators and the patch discriminator.
//! Forwards are pure functions of `(params, input, noise_seed)`; all
//! mutation (gradient steps, batch-norm running statistics) happens
//! explicitly in the training engine.

pub mod discriminator;
pub mod generator;
pub mod ops;
pub mod store;

pub use discriminator::{DiscTape, DiscriminatorConfig, PatchDiscriminator};
pub use generator::{GenTape, GeneratorConfig, HeadKind, UNetGenerator};
pub use ops::Scalar;
pub use store::{Init, ParamStore, Schema, VarId, VarSpec};

/// Forward-pass statistics mode for batch normalization. Dropout noise is
/// active in both modes (it realizes the generators' hidden condition).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with the current batch's statistics.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}
