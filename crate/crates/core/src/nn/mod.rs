//! Small fully-connected networks with reverse-mode differentiation.

mod adam;
mod matrix;
mod mlp;
mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use mlp::{BoundMlp, ByteReader, Mlp};
pub use tape::{CustomOp, Gradients, Tape, Var};
