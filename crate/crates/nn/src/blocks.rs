//! Composite layers recorded on a [`Tape`].

use crate::error::{shape_err, Result};
use crate::ops::{ConvSpec, NORM_EPS};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// A convolution's bound parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub spec: ConvSpec,
    pub weight: Var,
    pub bias: Option<Var>,
}

impl ConvVars {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d(x, &self.spec, self.weight, self.bias)
    }
}

/// Normalization used inside a residual block.
#[derive(Clone, Copy, Debug)]
pub enum ResidualNorm {
    Instance,
    /// AdaIN statistics for the first and second normalization, each `(1|B, C, 1, 1)`.
    Adaptive {
        gamma1: Var,
        beta1: Var,
        gamma2: Var,
        beta2: Var,
    },
}

/// `x + f(x)` with `f = conv → norm → relu → conv → norm`.
pub fn residual_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    conv1: &ConvVars,
    conv2: &ConvVars,
    norm: &ResidualNorm,
) -> Result<Var> {
    let c = tape.try_value(x)?.channels();
    for spec in [&conv1.spec, &conv2.spec] {
        if spec.in_channels != c
            || spec.out_channels != c
            || spec.stride != 1
            || spec.kernel_size != 2 * spec.padding + 1
        {
            return Err(shape_err(
                "residual_block",
                format!("block of width {c} cannot use {spec:?}"),
            ));
        }
    }
    let eps = T::from_f64c(NORM_EPS);
    let h = conv1.apply(tape, x)?;
    let h = match norm {
        ResidualNorm::Instance => tape.instance_norm(h, eps)?,
        ResidualNorm::Adaptive { gamma1, beta1, .. } => tape.adain(h, *gamma1, *beta1, eps)?,
    };
    let h = tape.relu(h)?;
    let h = conv2.apply(tape, h)?;
    let h = match norm {
        ResidualNorm::Instance => tape.instance_norm(h, eps)?,
        ResidualNorm::Adaptive { gamma2, beta2, .. } => tape.adain(h, *gamma2, *beta2, eps)?,
    };
    tape.add(x, h)
}
