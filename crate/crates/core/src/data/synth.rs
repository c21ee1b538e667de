//! Procedural phantoms: one shared geometry rendered through per-domain intensity transforms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, input, Result};
use crate::image::{Image, LabelMap, Sample, VisibilityMask};

/// Intensity transform that gives one domain its appearance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainStyle {
    pub gamma: f64,
    pub invert: bool,
    /// Amplitude of an additive band pattern inside the organ.
    pub texture: f64,
    /// Weight of the gradient-magnitude term.
    pub edge: f64,
}

const STYLE_TABLE: [DomainStyle; 4] = [
    DomainStyle { gamma: 1.0, invert: false, texture: 0.0, edge: 0.0 },
    DomainStyle { gamma: 0.6, invert: true, texture: 0.06, edge: 0.0 },
    DomainStyle { gamma: 1.6, invert: false, texture: 0.0, edge: 0.8 },
    DomainStyle { gamma: 0.8, invert: true, texture: 0.08, edge: 0.5 },
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_domains: usize,
    pub image_size: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub styles: Vec<DomainStyle>,
}

impl SynthConfig {
    /// Uses the built-in style table, cycling when there are more than four domains.
    pub fn new(num_domains: usize, image_size: usize, num_train: usize, num_test: usize, num_classes: usize, seed: u64) -> Self {
        let styles = (0..num_domains).map(|i| STYLE_TABLE[i % STYLE_TABLE.len()]).collect();
        Self { num_domains, image_size, num_train, num_test, num_classes, seed, styles }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 2 {
            return Err(config("synthetic data needs at least 2 domains"));
        }
        if self.image_size < 8 || !self.image_size.is_multiple_of(4) {
            return Err(config(format!("image size {} must be a multiple of 4 and at least 8", self.image_size)));
        }
        if !(2..=4).contains(&self.num_classes) {
            return Err(config(format!("num_classes {} outside 2..=4", self.num_classes)));
        }
        if self.styles.len() != self.num_domains {
            return Err(config("one style per domain required"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.num_train + self.num_test
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalized radius: below 1 inside.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        (u * u + v * v).sqrt()
    }

    /// Smooth indicator with roughly one pixel of transition.
    fn soft(&self, x: f64, y: f64) -> f64 {
        let d = (1.0 - self.radius(x, y)) * self.rx.min(self.ry);
        1.0 / (1.0 + (-2.5 * d).exp())
    }

    /// A random ellipse fully inside `self`.
    fn nested(&self, rng: &mut ChaCha8Rng, scale: (f64, f64)) -> Ellipse {
        let r = self.rx.min(self.ry);
        let rx = r * rng.random_range(scale.0..scale.1);
        let ry = r * rng.random_range(scale.0..scale.1);
        let room = (r - rx.max(ry)).max(0.0) * 0.8;
        let t = rng.random_range(0.0..2.0 * PI);
        let d = room * rng.random_range(0.0..1.0f64).sqrt();
        Ellipse { cx: self.cx + d * t.cos(), cy: self.cy + d * t.sin(), rx, ry, angle: rng.random_range(0.0..PI) }
    }
}

/// Domain-independent geometry: anatomy intensity in `[0, 1]` and the label map.
fn scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u32>, Vec<f64>) {
    let s = cfg.image_size as f64;
    let organ = Ellipse {
        cx: s * (0.5 + rng.random_range(-0.08..0.08)),
        cy: s * (0.5 + rng.random_range(-0.08..0.08)),
        rx: s * rng.random_range(0.28..0.4),
        ry: s * rng.random_range(0.28..0.4),
        angle: rng.random_range(0.0..PI),
    };
    let mut lesions = Vec::with_capacity(cfg.num_classes - 1);
    let mut parent = organ;
    for l in 0..cfg.num_classes - 1 {
        let e = if l == 0 { parent.nested(rng, (0.3, 0.5)) } else { parent.nested(rng, (0.45, 0.65)) };
        lesions.push(e);
        parent = e;
    }
    let fx = rng.random_range(1.5..3.0) * 2.0 * PI / s;
    let fy = rng.random_range(1.5..3.0) * 2.0 * PI / s;
    let phase = rng.random_range(0.0..2.0 * PI);

    let n = cfg.image_size;
    let mut anatomy = Vec::with_capacity(n * n);
    let mut labels = Vec::with_capacity(n * n);
    let mut organ_mask = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let o = organ.soft(px, py);
            let pattern = 0.08 * ((fx * px + phase).sin() * (fy * py).cos());
            let mut v = 0.08 + o * (0.42 + pattern);
            let mut label = 0;
            for (l, e) in lesions.iter().enumerate() {
                let w = e.soft(px, py);
                v += w * 0.16;
                if e.radius(px, py) < 1.0 {
                    label = l as u32 + 1;
                }
            }
            anatomy.push(v.clamp(0.0, 1.0));
            labels.push(label);
            organ_mask.push(o);
        }
    }
    (anatomy, labels, organ_mask)
}

fn render(anatomy: &[f64], organ: &[f64], n: usize, style: &DomainStyle, domain: usize) -> Image {
    let band = 2.0 * PI * (2.0 + domain as f64) / n as f64;
    let mut pixels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let mut v = anatomy[i].powf(style.gamma);
            if style.invert {
                v = 1.0 - v;
            }
            v += style.texture * organ[i] * (band * (x as f64 + 0.5 * y as f64)).sin();
            if style.edge > 0.0 {
                let at = |xx: usize, yy: usize| anatomy[yy * n + xx];
                let gx = at((x + 1).min(n - 1), y) - at(x.saturating_sub(1), y);
                let gy = at(x, (y + 1).min(n - 1)) - at(x, y.saturating_sub(1));
                v += style.edge * (gx * gx + gy * gy).sqrt();
            }
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Image { height: n, width: n, pixels }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Deterministic sample `index` of the dataset described by `cfg`.
pub fn generate_synthetic_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    if index >= cfg.len() {
        return Err(input(format!("sample index {index} outside 0..{}", cfg.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (anatomy, labels, organ) = scene(cfg, &mut rng);
    let n = cfg.image_size;
    let images = cfg.styles.iter().enumerate().map(|(d, st)| render(&anatomy, &organ, n, st, d)).collect();
    Sample::new(
        sample_id(index),
        images,
        Some(LabelMap { height: n, width: n, labels }),
        VisibilityMask::all(cfg.num_domains),
    )
}

/// Train and test splits; test samples follow the training indices.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    cfg.validate()?;
    let train = (0..cfg.num_train).map(|i| generate_synthetic_sample(cfg, i)).collect::<Result<_>>()?;
    let test = (cfg.num_train..cfg.len()).map(|i| generate_synthetic_sample(cfg, i)).collect::<Result<_>>()?;
    Ok((train, test))
}
