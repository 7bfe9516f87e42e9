//! Minimal dense numeric kernel: matrices, a reverse-mode gradient tape,
//! dense layers, the binary focal loss, AdamW updates, and finite-difference
//! verification. Everything is 64-bit; sizes stay desk-scale.

mod adamw;
mod dense;
mod focal;
mod gradcheck;
mod matrix;
mod tape;

pub use adamw::{adamw_step, AdamWState};
pub use dense::{activation_apply, dense_apply, Activation, DenseLayer, DenseStack, DenseStackVars, DenseVars};
pub use focal::{focal_loss, FOCAL_CLAMP_EPS};
pub use gradcheck::grad_check;
pub use matrix::{Matrix, Param};
pub use tape::{Tape, VarId};
