//! Trainable one-step neural operators on Neumann-cosine or padded
//! Fourier spectral layers.
//!
//! Layers are generic over the float type: training runs in `f32` for
//! throughput, gradient checks and exactness tests in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

pub mod model;
pub mod rollout;
pub mod spectral;
pub mod train;

pub use model::{input_channels, read_model, read_model_tagged, write_model, write_model_tagged, OperatorConfig, OperatorModel, DT_SCALE};
pub use rollout::{relative_l2, rollout, RolloutMetrics};
pub use spectral::{BasisKind, SpectralConv};
pub use train::{train_onestep, LossCurve, LossRow, OneStepData, SampleLoss};

/// Floating-point element type of the operator layers.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Send
    + Sync
{
    fn of(x: f64) -> Self;
    fn widen(self) -> f64;
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }

    fn widen(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }

    fn widen(self) -> f64 {
        f64::from(self)
    }
}
