//! The ReMIC networks: unified content encoder, per-domain style encoders, AdaIN generators,
//! multi-scale discriminators and the segmentation head.

mod layers;
pub(crate) mod networks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use remic_nn::{Scalar, Tensor, Var};

use crate::config::{ModelConfig, SegInput, SegMode};
use crate::error::{input, Result};
use crate::image::{Image, Sample, VisibilityMask};
use crate::params::{standard_normal, Graph, ParamStore};
use networks::{ContentEncoder, ContentOut, Discriminator, Generator, Segmentor, StyleEncoder};

/// Style value used for every dimension at evaluation time.
pub const EVAL_STYLE: f64 = 0.5;

/// Domain-shared code at quarter resolution, with the encoder activations the segmentor needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentCode<T> {
    pub features: Tensor<T>,
    pub skips: Option<[Tensor<T>; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> StyleCode<T> {
    pub fn constant(dim: usize, v: f64) -> Self {
        Self { values: vec![T::from_f64c(v); dim] }
    }

    fn tensor(&self) -> Tensor<T> {
        Tensor::vector(self.values.clone()).expect("style code is non-empty")
    }
}

/// How `complete_missing` chooses each domain's style.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StylePolicy {
    /// Every dimension set to the given value.
    Fixed(f64),
    /// Drawn from the standard normal prior with a seeded generator.
    Sample(u64),
    /// Encoded from the domain's own image; every domain must be visible.
    Encoded,
}

impl Default for StylePolicy {
    fn default() -> Self {
        StylePolicy::Fixed(EVAL_STYLE)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Networks {
    pub content: ContentEncoder,
    pub seg_content: Option<ContentEncoder>,
    pub style: Vec<StyleEncoder>,
    pub gens: Vec<Generator>,
    pub discs: Vec<Discriminator>,
    pub seg: Option<Segmentor>,
}

pub const CONTENT_GROUP: &str = "content";
pub const SEG_CONTENT_GROUP: &str = "segenc";
pub const SEG_GROUP: &str = "seg";

pub fn style_group(i: usize) -> String {
    format!("style{i}")
}

pub fn gen_group(i: usize) -> String {
    format!("gen{i}")
}

pub fn disc_group(i: usize) -> String {
    format!("disc{i}")
}

pub fn is_disc_group(g: &str) -> bool {
    g.starts_with("disc")
}

#[derive(Clone, Debug)]
pub struct Remic<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    pub(crate) nets: Networks,
}

impl<T: Scalar> Remic<T> {
    /// Builds the networks with freshly initialized weights drawn from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let cfg = &config;
        let content = ContentEncoder::new(&mut store, &mut rng, CONTENT_GROUP, cfg);
        let n = cfg.num_domains;
        let style = (0..n).map(|i| StyleEncoder::new(&mut store, &mut rng, &style_group(i), cfg)).collect();
        let gens = (0..n).map(|i| Generator::new(&mut store, &mut rng, &gen_group(i), cfg)).collect();
        let discs = (0..n).map(|i| Discriminator::new(&mut store, &mut rng, &disc_group(i), cfg)).collect();
        let seg_content = (cfg.seg_mode == SegMode::Separate)
            .then(|| ContentEncoder::new(&mut store, &mut rng, SEG_CONTENT_GROUP, cfg));
        let seg = (cfg.seg_mode != SegMode::Off).then(|| Segmentor::new(&mut store, &mut rng, SEG_GROUP, cfg));
        let nets = Networks { content, seg_content, style, gens, discs, seg };
        Ok(Self { config, params: store, nets })
    }

    /// Rebuilds the model structure around an existing parameter store.
    pub fn with_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config)?;
        model.params.copy_from(&params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.count_scalars(|_| true)
    }

    pub fn cast<U: Scalar>(&self) -> Remic<U> {
        Remic { config: self.config.clone(), params: self.params.cast(), nets: self.nets.clone() }
    }

    fn check_domain(&self, domain: usize) -> Result<()> {
        if domain >= self.config.num_domains {
            return Err(input(format!(
                "domain {domain} out of range for {} domains",
                self.config.num_domains
            )));
        }
        Ok(())
    }

    fn check_image(&self, im: &Image) -> Result<()> {
        if (im.height, im.width) != (self.config.height, self.config.width) {
            return Err(input(format!(
                "image is {}x{}, model expects {}x{}",
                im.height, im.width, self.config.height, self.config.width
            )));
        }
        Ok(())
    }

    pub(crate) fn check_sample(&self, sample: &Sample) -> Result<()> {
        sample.validate()?;
        if sample.num_domains() != self.config.num_domains {
            return Err(input(format!(
                "sample {} has {} domains, model expects {}",
                sample.id,
                sample.num_domains(),
                self.config.num_domains
            )));
        }
        self.check_image(&sample.images[0])
    }

    /// Zero-filled `(1, N, H, W)` encoder input in network range.
    pub fn content_input(&self, images: &[Image], visibility: &VisibilityMask) -> Result<Tensor<T>> {
        let (h, w) = (self.config.height, self.config.width);
        let n = self.config.num_domains;
        if images.len() != n || visibility.len() != n {
            return Err(input(format!("expected {n} domain images and flags")));
        }
        let mut data = Vec::with_capacity(n * h * w);
        for (i, im) in images.iter().enumerate() {
            self.check_image(im)?;
            if visibility.is_visible(i) {
                data.extend(im.pixels.iter().map(|&p| T::from_f64c(2.0 * p as f64 - 1.0)));
            } else {
                data.extend(std::iter::repeat_n(-T::one(), h * w));
            }
        }
        Ok(Tensor::from_vec([1, n, h, w], data)?)
    }

    pub(crate) fn content_graph(&self, g: &mut Graph<T>, x: Var) -> Result<ContentOut> {
        self.nets.content.forward(g, x)
    }

    /// Encoder feeding the segmentor: the shared one, or the separate copy.
    pub(crate) fn seg_content_graph(&self, g: &mut Graph<T>, x: Var) -> Result<ContentOut> {
        match &self.nets.seg_content {
            Some(enc) => enc.forward(g, x),
            None => self.nets.content.forward(g, x),
        }
    }

    pub(crate) fn style_graph(&self, g: &mut Graph<T>, x: Var, domain: usize) -> Result<Var> {
        self.nets.style[domain].forward(g, x)
    }

    pub(crate) fn gen_graph(&self, g: &mut Graph<T>, c: Var, s: Var, domain: usize) -> Result<Var> {
        self.nets.gens[domain].forward(g, c, s)
    }

    pub(crate) fn disc_graph(&self, g: &mut Graph<T>, x: Var, domain: usize) -> Result<Vec<Var>> {
        self.nets.discs[domain].forward(g, x)
    }

    pub(crate) fn seg_graph(&self, g: &mut Graph<T>, c: &ContentOut) -> Result<Var> {
        match &self.nets.seg {
            Some(seg) => seg.forward(g, c),
            None => Err(input("model was built without a segmentation head")),
        }
    }

    fn content_code(g: &Graph<T>, out: &ContentOut) -> ContentCode<T> {
        ContentCode {
            features: g.value(out.code).clone(),
            skips: Some([g.value(out.skips[0]).clone(), g.value(out.skips[1]).clone()]),
        }
    }

    pub fn encode_content(&self, sample: &Sample) -> Result<ContentCode<T>> {
        self.check_sample(sample)?;
        let mut g = Graph::frozen(&self.params);
        let x = g.tape.constant(self.content_input(&sample.images, &sample.visibility)?);
        let out = self.content_graph(&mut g, x)?;
        Ok(Self::content_code(&g, &out))
    }

    pub fn encode_style(&self, image: &Image, domain: usize) -> Result<StyleCode<T>> {
        self.check_domain(domain)?;
        self.check_image(image)?;
        let mut g = Graph::frozen(&self.params);
        let x = g.tape.constant(image.to_network());
        let s = self.style_graph(&mut g, x, domain)?;
        Ok(StyleCode { values: g.value(s).data().to_vec() })
    }

    fn check_content(&self, content: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let want = [1, c.content_channels, c.height / 4, c.width / 4];
        if content.shape() != want {
            return Err(input(format!(
                "content code has shape {:?}, expected {want:?}",
                content.shape()
            )));
        }
        Ok(())
    }

    fn check_style(&self, style: &StyleCode<T>) -> Result<()> {
        if style.values.len() != self.config.style_dim {
            return Err(input(format!(
                "style code has {} values, expected {}",
                style.values.len(),
                self.config.style_dim
            )));
        }
        Ok(())
    }

    pub fn generate(&self, content: &ContentCode<T>, style: &StyleCode<T>, domain: usize) -> Result<Image> {
        self.check_domain(domain)?;
        self.check_content(&content.features)?;
        self.check_style(style)?;
        let mut g = Graph::frozen(&self.params);
        let c = g.tape.constant(content.features.clone());
        let s = g.tape.constant(style.tensor());
        let y = self.gen_graph(&mut g, c, s, domain)?;
        Ok(Image::from_network(g.value(y), 0, 0))
    }

    /// Score maps for each discriminator scale, finest first.
    pub fn discriminate(&self, image: &Image, domain: usize) -> Result<Vec<Tensor<T>>> {
        self.check_domain(domain)?;
        let min = self.config.min_disc_size();
        if image.height < min || image.width < min {
            return Err(input(format!(
                "image {}x{} is too small for {} discriminator scale(s); minimum is {min}x{min}",
                image.height, image.width, self.config.disc_scales
            )));
        }
        let mut g = Graph::frozen(&self.params);
        let x = g.tape.constant(image.to_network());
        let maps = self.disc_graph(&mut g, x, domain)?;
        Ok(maps.into_iter().map(|m| g.value(m).clone()).collect())
    }

    /// Per-class probability maps `(1, L, H, W)` from a content code and its skip activations.
    pub fn segment(&self, content: &ContentCode<T>) -> Result<Tensor<T>> {
        self.check_content(&content.features)?;
        let skips = content
            .skips
            .as_ref()
            .ok_or_else(|| input("content code carries no skip features for the segmentor"))?;
        let mut g = Graph::frozen(&self.params);
        let out = ContentOut {
            code: g.tape.constant(content.features.clone()),
            skips: [g.tape.constant(skips[0].clone()), g.tape.constant(skips[1].clone())],
        };
        let p = self.seg_graph(&mut g, &out)?;
        Ok(g.value(p).clone())
    }

    fn styles(&self, sample: &Sample, policy: StylePolicy) -> Result<Vec<Tensor<T>>> {
        let n = self.config.num_domains;
        let dim = self.config.style_dim;
        match policy {
            StylePolicy::Fixed(v) => Ok(vec![StyleCode::<T>::constant(dim, v).tensor(); n]),
            StylePolicy::Sample(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..n)
                    .map(|_| Tensor::vector(standard_normal(&mut rng, dim)).expect("non-empty"))
                    .collect())
            }
            StylePolicy::Encoded => (0..n)
                .map(|i| {
                    if !sample.visibility.is_visible(i) {
                        return Err(input(format!(
                            "encoded style requested for missing domain {i}"
                        )));
                    }
                    Ok(self.encode_style(&sample.images[i], i)?.tensor())
                })
                .collect(),
        }
    }

    /// Generates all `N` domains from the sample's visible domains in one pass.
    pub fn complete_missing(&self, sample: &Sample, policy: StylePolicy) -> Result<Vec<Image>> {
        self.check_sample(sample)?;
        let styles = self.styles(sample, policy)?;
        let mut g = Graph::frozen(&self.params);
        let x = g.tape.constant(self.content_input(&sample.images, &sample.visibility)?);
        let c = self.content_graph(&mut g, x)?.code;
        let mut out = Vec::with_capacity(styles.len());
        for (i, s) in styles.into_iter().enumerate() {
            let s = g.tape.constant(s);
            let y = self.gen_graph(&mut g, c, s, i)?;
            out.push(Image::from_network(g.value(y), 0, 0));
        }
        Ok(out)
    }

    /// Completed sample: visible domains kept, missing ones generated with the evaluation style.
    pub fn complete_sample(&self, sample: &Sample) -> Result<Sample> {
        let generated = self.complete_missing(sample, StylePolicy::default())?;
        let images = sample
            .images
            .iter()
            .zip(generated)
            .enumerate()
            .map(|(i, (real, fake))| if sample.visibility.is_visible(i) { real.clone() } else { fake })
            .collect();
        Ok(Sample {
            id: sample.id.clone(),
            images,
            seg_mask: sample.seg_mask.clone(),
            visibility: VisibilityMask::all(sample.num_domains()),
        })
    }

    /// Segmentation of a possibly incomplete sample, routed according to the configured input.
    pub fn segment_sample(&self, sample: &Sample) -> Result<Tensor<T>> {
        self.check_sample(sample)?;
        let prepared = match self.config.seg_input {
            SegInput::Completed if sample.visibility.count_visible() < sample.num_domains() => {
                self.complete_sample(sample)?
            }
            _ => sample.clone(),
        };
        self.segment_images(&prepared.images, &prepared.visibility)
    }

    /// Segmentation of the given images as-is, missing domains zero-filled.
    pub fn segment_images(&self, images: &[Image], visibility: &VisibilityMask) -> Result<Tensor<T>> {
        let mut g = Graph::frozen(&self.params);
        let x = g.tape.constant(self.content_input(images, visibility)?);
        let c = self.seg_content_graph(&mut g, x)?;
        let p = self.seg_graph(&mut g, &c)?;
        Ok(g.value(p).clone())
    }
}

/// Hard labels by per-pixel argmax (threshold 0.5 for a single sigmoid map).
pub fn argmax_labels<T: Scalar>(probs: &Tensor<T>) -> Vec<u32> {
    let (l, plane) = (probs.channels(), probs.plane());
    (0..plane)
        .map(|p| {
            if l == 1 {
                return u32::from(probs.data()[p] >= T::from_f64c(0.5));
            }
            let mut best = 0;
            for c in 1..l {
                if probs.data()[c * plane + p] > probs.data()[best * plane + p] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}
