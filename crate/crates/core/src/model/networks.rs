use rand_chacha::ChaCha8Rng;
use remic_nn::{ConvSpec, ResidualNorm, Scalar, Var, LEAKY_SLOPE, NORM_EPS};

use super::layers::{Conv, Linear, Residual, LINEAR_GAIN, RELU_GAIN};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::params::{Graph, ParamStore};

fn eps<T: Scalar>() -> T {
    T::from_f64c(NORM_EPS)
}

/// Output of a content encoder: the code plus activations reused by the segmentor.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ContentOut {
    pub code: Var,
    /// Full-resolution and half-resolution encoder activations.
    pub skips: [Var; 2],
}

#[derive(Clone, Debug)]
pub(crate) struct ContentEncoder {
    convs: [Conv; 3],
    res: Vec<Residual>,
}

impl ContentEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> Self {
        let (b, cc) = (cfg.base_channels(), cfg.content_channels);
        let convs = [
            Conv::new(store, rng, &format!("{prefix}/conv0"), ConvSpec::same(cfg.num_domains, b, 7), RELU_GAIN),
            Conv::new(store, rng, &format!("{prefix}/conv1"), ConvSpec::down(b, 2 * b), RELU_GAIN),
            Conv::new(store, rng, &format!("{prefix}/conv2"), ConvSpec::down(2 * b, cc), RELU_GAIN),
        ];
        let res = (0..cfg.res_blocks).map(|r| Residual::new(store, rng, &format!("{prefix}/res{r}"), cc)).collect();
        Self { convs, res }
    }

    /// `x` is the `(B, N, H, W)` zero-filled stack in network range.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<ContentOut> {
        let mut h = x;
        let mut skips = Vec::with_capacity(2);
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, h)?;
            h = g.tape.instance_norm(h, eps())?;
            h = g.tape.relu(h)?;
            if i < 2 {
                skips.push(h);
            }
        }
        for block in &self.res {
            h = block.forward(g, h, ResidualNorm::Instance)?;
        }
        Ok(ContentOut { code: h, skips: [skips[0], skips[1]] })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct StyleEncoder {
    convs: Vec<Conv>,
    fc: Linear,
}

impl StyleEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> Self {
        let (b, cc) = (cfg.base_channels(), cfg.content_channels);
        let specs = [
            ConvSpec::same(1, b, 7),
            ConvSpec::down(b, 2 * b),
            ConvSpec::down(2 * b, cc),
            ConvSpec::down(cc, cc),
            ConvSpec::down(cc, cc),
        ];
        let convs = specs
            .iter()
            .enumerate()
            .map(|(i, &s)| Conv::new(store, rng, &format!("{prefix}/conv{i}"), s, RELU_GAIN))
            .collect();
        let fc = Linear::new(store, rng, &format!("{prefix}/fc"), cc, cfg.style_dim, LINEAR_GAIN);
        Self { convs, fc }
    }

    /// `(B, 1, H, W)` image to a `(B, style_dim, 1, 1)` code.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.tape.relu(h)?;
        }
        let pooled = g.tape.global_avg_pool(h)?;
        self.fc.forward(g, pooled)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Generator {
    mlp: [Linear; 3],
    res: Vec<Residual>,
    up: [Conv; 2],
    out: Conv,
    width: usize,
}

impl Generator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> Self {
        let cc = cfg.content_channels;
        let affine = 4 * cfg.res_blocks * cc;
        let mlp = [
            Linear::new(store, rng, &format!("{prefix}/mlp0"), cfg.style_dim, cfg.mlp_hidden, RELU_GAIN),
            Linear::new(store, rng, &format!("{prefix}/mlp1"), cfg.mlp_hidden, cfg.mlp_hidden, RELU_GAIN),
            Linear::new(store, rng, &format!("{prefix}/mlp2"), cfg.mlp_hidden, affine, LINEAR_GAIN),
        ];
        let res = (0..cfg.res_blocks).map(|r| Residual::new(store, rng, &format!("{prefix}/res{r}"), cc)).collect();
        let up = [
            Conv::new(store, rng, &format!("{prefix}/up0"), ConvSpec::same(cc, cc / 2, 5), RELU_GAIN),
            Conv::new(store, rng, &format!("{prefix}/up1"), ConvSpec::same(cc / 2, cc / 4, 5), RELU_GAIN),
        ];
        let out = Conv::new(store, rng, &format!("{prefix}/out"), ConvSpec::same(cc / 4, 1, 7), LINEAR_GAIN);
        Self { mlp, res, up, out, width: cc }
    }

    /// Style code to the flat `(B, 4·R·C, 1, 1)` vector of AdaIN statistics.
    pub fn affine<T: Scalar>(&self, g: &mut Graph<T>, style: Var) -> Result<Var> {
        let mut h = self.mlp[0].forward(g, style)?;
        h = g.tape.relu(h)?;
        h = self.mlp[1].forward(g, h)?;
        h = g.tape.relu(h)?;
        self.mlp[2].forward(g, h)
    }

    /// Content `(B, C, H/4, W/4)` and style `(B, S, 1, 1)` to an image in `[-1, 1]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, content: Var, style: Var) -> Result<Var> {
        let stats = self.affine(g, style)?;
        let c = self.width;
        let mut h = content;
        for (r, block) in self.res.iter().enumerate() {
            let off = 4 * r * c;
            let g1 = g.tape.slice_channels(stats, off, c)?;
            let gamma1 = g.tape.add_scalar(g1, T::one())?;
            let beta1 = g.tape.slice_channels(stats, off + c, c)?;
            let g2 = g.tape.slice_channels(stats, off + 2 * c, c)?;
            let gamma2 = g.tape.add_scalar(g2, T::one())?;
            let beta2 = g.tape.slice_channels(stats, off + 3 * c, c)?;
            h = block.forward(g, h, ResidualNorm::Adaptive { gamma1, beta1, gamma2, beta2 })?;
        }
        for conv in &self.up {
            h = g.tape.upsample2x(h)?;
            h = conv.forward(g, h)?;
            h = g.tape.relu(h)?;
        }
        h = self.out.forward(g, h)?;
        Ok(g.tape.tanh(h)?)
    }
}

#[derive(Clone, Debug)]
struct PatchNet {
    convs: Vec<Conv>,
    head: Conv,
}

#[derive(Clone, Debug)]
pub(crate) struct Discriminator {
    scales: Vec<PatchNet>,
}

impl Discriminator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> Self {
        let b = cfg.base_channels();
        let widths = [1, b, 2 * b, 4 * b, 8 * b];
        let scales = (0..cfg.disc_scales)
            .map(|s| PatchNet {
                convs: (0..4)
                    .map(|i| {
                        let spec = ConvSpec::down(widths[i], widths[i + 1]);
                        Conv::new(store, rng, &format!("{prefix}/s{s}/conv{i}"), spec, RELU_GAIN)
                    })
                    .collect(),
                head: Conv::new(store, rng, &format!("{prefix}/s{s}/head"), ConvSpec::same(8 * b, 1, 1), LINEAR_GAIN),
            })
            .collect();
        Self { scales }
    }

    /// One score map per scale, finest first.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let mut input = x;
        let mut out = Vec::with_capacity(self.scales.len());
        for (s, net) in self.scales.iter().enumerate() {
            if s > 0 {
                input = g.tape.downsample2x(input)?;
            }
            let mut h = input;
            for conv in &net.convs {
                h = conv.forward(g, h)?;
                h = g.tape.leaky_relu(h, slope)?;
            }
            out.push(net.head.forward(g, h)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Segmentor {
    up: [Conv; 2],
    out: Conv,
    classes: usize,
}

impl Segmentor {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> Self {
        let (b, cc) = (cfg.base_channels(), cfg.content_channels);
        let up = [
            Conv::new(store, rng, &format!("{prefix}/up0"), ConvSpec::same(cc + 2 * b, 2 * b, 5), RELU_GAIN),
            Conv::new(store, rng, &format!("{prefix}/up1"), ConvSpec::same(3 * b, b, 5), RELU_GAIN),
        ];
        let out = Conv::new(store, rng, &format!("{prefix}/out"), ConvSpec::same(b, cfg.num_classes, 7), LINEAR_GAIN);
        Self { up, out, classes: cfg.num_classes }
    }

    /// Class probabilities `(B, L, H, W)`: softmax over classes, or a sigmoid map when `L = 1`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, content: &ContentOut) -> Result<Var> {
        let mut h = content.code;
        for (conv, &skip) in self.up.iter().zip(content.skips.iter().rev()) {
            h = g.tape.upsample2x(h)?;
            h = g.tape.concat_channels(&[h, skip])?;
            h = conv.forward(g, h)?;
            h = g.tape.instance_norm(h, eps())?;
            h = g.tape.relu(h)?;
        }
        let logits = self.out.forward(g, h)?;
        if self.classes == 1 {
            Ok(g.tape.sigmoid(logits)?)
        } else {
            Ok(g.tape.softmax_channels(logits)?)
        }
    }
}
