//! Discriminator and generator objectives for one iteration, recorded on a tape.

use remic_nn::{Scalar, Tensor, Var};

use crate::config::{SegInput, SegMode};
use crate::error::{input, Result};
use crate::image::{LabelMap, Sample, VisibilityMask};
use crate::losses::{graph as lg, DomainTerms, LossTerms, LossWeights};
use crate::model::Remic;
use crate::params::Graph;

/// Everything random about one iteration, drawn before any graph is built.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationInputs<T> {
    pub samples: Vec<Sample>,
    pub visibility: Vec<VisibilityMask>,
    /// Prior style codes, `[sample][domain]`, each `(1, style_dim, 1, 1)`.
    pub prior: Vec<Vec<Tensor<T>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainLoss {
    /// Number of samples in which the domain was visible.
    pub visible: usize,
    pub adv: f64,
    pub x_cyc: Option<f64>,
    pub s_cyc: f64,
    pub rec: f64,
}

/// Loss values of one iteration, averaged over the samples involved.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub total: f64,
    pub d_loss: Option<f64>,
    pub domains: Vec<DomainLoss>,
    pub c_cyc: f64,
    pub seg: Option<f64>,
    /// Style-swap terms per domain: first sample with the second's style, and the reverse.
    pub cross: Option<Vec<[Option<f64>; 2]>>,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        let mut vals = vec![self.total, self.c_cyc];
        vals.extend(self.d_loss);
        vals.extend(self.seg);
        for d in &self.domains {
            vals.extend([d.adv, d.s_cyc, d.rec]);
            vals.extend(d.x_cyc);
        }
        for c in self.cross.iter().flatten() {
            vals.extend(c.iter().flatten());
        }
        vals.iter().all(|v| v.is_finite())
    }

    pub fn mean_rec(&self) -> f64 {
        self.domains.iter().map(|d| d.rec).sum::<f64>() / self.domains.len() as f64
    }

    pub fn breakdown(&self) -> String {
        let mut parts = vec![format!("total={}", self.total), format!("c_cyc={}", self.c_cyc)];
        for (i, d) in self.domains.iter().enumerate() {
            parts.push(format!("adv{i}={} s_cyc{i}={} rec{i}={}", d.adv, d.s_cyc, d.rec));
            if let Some(x) = d.x_cyc {
                parts.push(format!("x_cyc{i}={x}"));
            }
        }
        if let Some(s) = self.seg {
            parts.push(format!("seg={s}"));
        }
        parts.join(" ")
    }
}

/// Segmentation target: one-hot for `L >= 2`, a foreground map for `L = 1`.
pub fn seg_target<T: Scalar>(mask: &LabelMap, num_classes: usize) -> Result<Tensor<T>> {
    if num_classes == 1 {
        let data = mask.labels.iter().map(|&l| if l > 0 { T::one() } else { T::zero() }).collect();
        return Ok(Tensor::from_vec([1, 1, mask.height, mask.width], data)?);
    }
    mask.one_hot(num_classes)
}

fn real_images<T: Scalar>(g: &mut Graph<T>, sample: &Sample) -> Vec<Var> {
    sample.images.iter().map(|im| g.tape.constant(im.to_network())).collect()
}

/// LSGAN discriminator loss summed over domains and averaged over samples.
pub fn discriminator_objective<T: Scalar>(model: &Remic<T>, g: &mut Graph<T>, inputs: &IterationInputs<T>) -> Result<Var> {
    let mut per_sample = Vec::with_capacity(inputs.samples.len());
    let k = T::one() / T::from_usize(inputs.samples.len()).unwrap();
    for ((sample, vis), prior) in inputs.samples.iter().zip(&inputs.visibility).zip(&inputs.prior) {
        let x = g.tape.constant(model.content_input(&sample.images, vis)?);
        let c = model.content_graph(g, x)?.code;
        let reals = real_images(g, sample);
        let mut terms = Vec::with_capacity(reals.len());
        for (i, &real) in reals.iter().enumerate() {
            let z = g.tape.constant(prior[i].clone());
            let fake = model.gen_graph(g, c, z, i)?;
            let fake = g.tape.detach(fake)?;
            let rs = model.disc_graph(g, real, i)?;
            let fs = model.disc_graph(g, fake, i)?;
            terms.push((lg::adversarial_d(&mut g.tape, &rs, &fs)?, T::one()));
        }
        let d = g.tape.weighted_sum(&terms)?;
        per_sample.push((d, k));
    }
    Ok(g.tape.weighted_sum(&per_sample)?)
}

struct SampleVars {
    terms: LossTerms<Var>,
    content: Var,
    styles: Vec<Option<Var>>,
    reals: Vec<Var>,
}

fn sample_terms<T: Scalar>(
    model: &Remic<T>,
    g: &mut Graph<T>,
    sample: &Sample,
    vis: &VisibilityMask,
    prior: &[Tensor<T>],
) -> Result<SampleVars> {
    let cfg = model.config();
    let n = cfg.num_domains;
    let x = g.tape.constant(model.content_input(&sample.images, vis)?);
    let content = model.content_graph(g, x)?;
    let c = content.code;
    let reals = real_images(g, sample);

    let mut styles = vec![None; n];
    let mut fakes = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    for i in 0..n {
        let x_cyc = if vis.is_visible(i) {
            let s = model.style_graph(g, reals[i], i)?;
            styles[i] = Some(s);
            let recon = model.gen_graph(g, c, s, i)?;
            Some(lg::l1(&mut g.tape, recon, reals[i])?)
        } else {
            None
        };
        let z = g.tape.constant(prior[i].clone());
        let fake = model.gen_graph(g, c, z, i)?;
        let rec = lg::l1(&mut g.tape, fake, reals[i])?;
        let s_back = model.style_graph(g, fake, i)?;
        let s_cyc = lg::l1(&mut g.tape, s_back, z)?;
        let scores = model.disc_graph(g, fake, i)?;
        let adv = lg::adversarial_g(&mut g.tape, &scores)?;
        fakes.push(fake);
        domains.push(DomainTerms { adv, x_cyc, s_cyc, rec });
    }
    let stack = g.tape.concat_channels(&fakes)?;
    let c_back = model.content_graph(g, stack)?.code;
    let c_cyc = lg::l1(&mut g.tape, c_back, c)?;

    let seg = match (cfg.seg_mode, &sample.seg_mask) {
        (SegMode::Off, _) => None,
        (_, None) => return Err(input(format!("sample {} has no mask but segmentation is enabled", sample.id))),
        (mode, Some(mask)) => {
            let seg_content = match cfg.seg_input {
                SegInput::Completed => {
                    let parts: Vec<Var> = (0..n).map(|i| if vis.is_visible(i) { reals[i] } else { fakes[i] }).collect();
                    let completed = g.tape.concat_channels(&parts)?;
                    model.seg_content_graph(g, completed)?
                }
                SegInput::ZeroFilled if mode == SegMode::Joint => content,
                SegInput::ZeroFilled => model.seg_content_graph(g, x)?,
            };
            let pred = model.seg_graph(g, &seg_content)?;
            let target = g.tape.constant(seg_target(mask, cfg.num_classes)?);
            Some(lg::dice(&mut g.tape, pred, target)?)
        }
    };
    Ok(SampleVars { terms: LossTerms { domains, c_cyc, seg }, content: c, styles, reals })
}

fn scalar<T: Scalar>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().to_f64c()
}

fn record_from<T: Scalar>(g: &Graph<T>, all: &[LossTerms<Var>], total: Var) -> LossRecord {
    let k = all.len() as f64;
    let n = all[0].domains.len();
    let domains = (0..n)
        .map(|i| {
            let xs: Vec<f64> = all.iter().filter_map(|t| t.domains[i].x_cyc).map(|v| scalar(g, v)).collect();
            let mean = |f: &dyn Fn(&DomainTerms<Var>) -> Var| all.iter().map(|t| scalar(g, f(&t.domains[i]))).sum::<f64>() / k;
            DomainLoss {
                visible: xs.len(),
                adv: mean(&|d| d.adv),
                x_cyc: (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
                s_cyc: mean(&|d| d.s_cyc),
                rec: mean(&|d| d.rec),
            }
        })
        .collect();
    let segs: Vec<f64> = all.iter().filter_map(|t| t.seg).map(|v| scalar(g, v)).collect();
    LossRecord {
        iteration: 0,
        total: scalar(g, total),
        d_loss: None,
        domains,
        c_cyc: all.iter().map(|t| scalar(g, t.c_cyc)).sum::<f64>() / k,
        seg: (!segs.is_empty()).then(|| segs.iter().sum::<f64>() / segs.len() as f64),
        cross: None,
    }
}

/// Generator-side objective averaged over the batch.
///
/// With `multi_sample` the batch must hold two samples; each domain visible in both is also
/// reconstructed from its own content and the other sample's encoded style, and those terms are
/// added with the image-consistency weight.
pub fn generator_objective<T: Scalar>(
    model: &Remic<T>,
    g: &mut Graph<T>,
    inputs: &IterationInputs<T>,
    weights: &LossWeights,
    multi_sample: bool,
) -> Result<(Var, LossRecord)> {
    let b = inputs.samples.len();
    if b == 0 || inputs.visibility.len() != b || inputs.prior.len() != b {
        return Err(input("iteration inputs are empty or inconsistent"));
    }
    if multi_sample && b != 2 {
        return Err(input(format!("style-swap training needs exactly 2 samples, got {b}")));
    }
    let include_seg = model.config().seg_mode != SegMode::Off;
    let mut vars = Vec::with_capacity(b);
    for ((sample, vis), prior) in inputs.samples.iter().zip(&inputs.visibility).zip(&inputs.prior) {
        vars.push(sample_terms(model, g, sample, vis, prior)?);
    }
    let kb = T::one() / T::from_usize(b).unwrap();
    let mut totals = Vec::with_capacity(b + 1);
    for v in &vars {
        totals.push((lg::total(&mut g.tape, &v.terms, weights, include_seg)?, kb));
    }

    let mut cross = None;
    if multi_sample {
        let n = model.config().num_domains;
        let mut pairs = vec![[None, None]; n];
        let mut cross_terms = Vec::new();
        let half = T::from_f64c(0.5 * weights.x_cyc);
        for (i, pair) in pairs.iter_mut().enumerate() {
            let (Some(sa), Some(sb)) = (vars[0].styles[i], vars[1].styles[i]) else { continue };
            for (own, style) in [(0usize, sb), (1, sa)] {
                let y = model.gen_graph(g, vars[own].content, style, i)?;
                let l = lg::l1(&mut g.tape, y, vars[own].reals[i])?;
                pair[own] = Some(scalar(g, l));
                cross_terms.push((l, half));
            }
        }
        if !cross_terms.is_empty() {
            totals.push((g.tape.weighted_sum(&cross_terms)?, T::one()));
        }
        cross = Some(pairs);
    }
    let total = g.tape.weighted_sum(&totals)?;
    let all: Vec<LossTerms<Var>> = vars.into_iter().map(|v| v.terms).collect();
    let mut record = record_from(g, &all, total);
    record.cross = cross;
    Ok((total, record))
}
