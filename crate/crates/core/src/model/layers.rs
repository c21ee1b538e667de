use rand_chacha::ChaCha8Rng;
use remic_nn::{residual_block, ConvSpec, ConvVars, ResidualNorm, Scalar, Tensor, Var};

use crate::error::Result;
use crate::params::{kaiming, Graph, ParamId, ParamStore};

/// Gain for layers followed by a rectifier.
pub(crate) const RELU_GAIN: f64 = 2.0;
/// Gain for output layers.
pub(crate) const LINEAR_GAIN: f64 = 1.0;

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub spec: ConvSpec,
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Conv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        spec: ConvSpec,
        gain: f64,
    ) -> Self {
        let fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size;
        let w = store.add(format!("{name}/w"), kaiming(rng, spec.weight_shape(), fan_in, gain));
        let b = spec.has_bias.then(|| store.add(format!("{name}/b"), Tensor::zeros(spec.bias_shape())));
        Self { spec, w, b }
    }

    pub fn vars<T: Scalar>(&self, g: &mut Graph<T>) -> ConvVars {
        ConvVars { spec: self.spec, weight: g.param(self.w), bias: self.b.map(|b| g.param(b)) }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let cv = self.vars(g);
        Ok(cv.apply(&mut g.tape, x)?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
    ) -> Self {
        let w = store.add(format!("{name}/w"), kaiming(rng, [out_dim, in_dim, 1, 1], in_dim, gain));
        let b = store.add(format!("{name}/b"), Tensor::zeros([1, out_dim, 1, 1]));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        Ok(g.tape.linear(x, w, Some(b))?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Residual {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl Residual {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
    ) -> Self {
        let spec = ConvSpec::same(width, width, 3);
        Self {
            conv1: Conv::new(store, rng, &format!("{name}/conv1"), spec, RELU_GAIN),
            conv2: Conv::new(store, rng, &format!("{name}/conv2"), spec, LINEAR_GAIN),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, norm: ResidualNorm) -> Result<Var> {
        let c1 = self.conv1.vars(g);
        let c2 = self.conv2.vars(g);
        Ok(residual_block(&mut g.tape, x, &c1, &c2, &norm)?)
    }
}
