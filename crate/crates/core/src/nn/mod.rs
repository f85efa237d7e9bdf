//! Minimal neural-network toolkit with explicit forward tapes and backward passes.
//!
//! Layers do not own their weights: all parameters live in a [`ParamStore`]
//! under stable names, and layers refer to them by [`ParamId`]. Backward passes
//! accumulate into a [`Grads`] buffer whose slots can be switched off, which is
//! how encoder/decoder steps freeze the other network.

mod conv;
mod linear;
mod optim;
mod params;

pub use conv::{col2im, im2col, Conv2d, Conv2dTape, ConvGeometry, ConvTranspose2d, ConvTranspose2dTape};
pub use linear::Linear;
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, Param, ParamId, ParamStore};

use ndarray::{Array, Dimension, NdFloat};
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point element type of the toolkit (`f32` for training, `f64` for
/// gradient checking).
pub trait Real: NdFloat + FromPrimitive + ToPrimitive + std::iter::Sum + Default {
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable constant")
    }

    fn f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite conversion")
    }

    fn of_f32(v: f32) -> Self {
        <Self as FromPrimitive>::from_f32(v).expect("representable constant")
    }

    fn as_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize, schemars::JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Relu,
}

impl Activation {
    pub fn forward<F: Real, D: Dimension>(self, x: &mut Array<F, D>) {
        match self {
            Activation::LeakyRelu { slope } => {
                let slope = F::c(slope);
                x.mapv_inplace(|v| if v > F::zero() { v } else { v * slope });
            }
            Activation::Relu => x.mapv_inplace(|v| v.max(F::zero())),
        }
    }

    /// Gradient through the activation given its *output* `y`.
    pub fn backward<F: Real, D: Dimension>(self, y: &Array<F, D>, dy: &mut Array<F, D>) {
        match self {
            Activation::LeakyRelu { slope } => {
                let slope = F::c(slope);
                dy.zip_mut_with(y, |g, &v| {
                    if v <= F::zero() {
                        *g = *g * slope
                    }
                });
            }
            Activation::Relu => dy.zip_mut_with(y, |g, &v| {
                if v <= F::zero() {
                    *g = F::zero()
                }
            }),
        }
    }
}

pub fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows<F: Real>(logits: &ndarray::Array2<F>) -> ndarray::Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
