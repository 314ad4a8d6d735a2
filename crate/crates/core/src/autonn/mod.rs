//! Dense matrices, the MLP scorer with batch norm, hand-written backprop and
//! SGD.
//!
//! All arithmetic is `f64`; KDE and trapezoid sums downstream are
//! tolerance-sensitive.

mod matrix;
mod network;
mod optim;

pub use matrix::Matrix;
pub use network::{
    param_change_norm, Activation, BatchNormState, ForwardCache, GradientSet, Mode, Parameters,
    ScorerNetwork,
};
pub use optim::OptimizerState;
