//! A small CPU tensor engine: the layer primitives used by the backbones,
//! each with a hand-written backward pass.
//!
//! Everything is generic over [`Real`] so the same network can run in `f32`
//! for training and in `f64` for finite-difference gradient checks.

pub mod ops;

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

pub trait Real: NdFloat + FromPrimitive + Sum + Default + Debug {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
