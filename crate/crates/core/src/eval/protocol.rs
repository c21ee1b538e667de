//! Evaluation protocols: one fixed missing domain, or `k` random visible domains.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::impute::{Completer, Segmenter};
use super::metrics::{dice_score, ImageMetrics};
use crate::data::visibility::random_subset;
use crate::error::{input, RemicError, Result};
use crate::image::{Sample, VisibilityMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    SingleMissing(usize),
    /// `k` visible domains per sample: one seeded draw, or every `k`-subset when `exhaustive`.
    RandomK { k: usize, seed: u64, exhaustive: bool },
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::SingleMissing(i) => write!(f, "single-missing:{i}"),
            Protocol::RandomK { k, seed, exhaustive: false } => write!(f, "random-k:{k}:{seed}"),
            Protocol::RandomK { k, exhaustive: true, .. } => write!(f, "random-k:{k}:all"),
        }
    }
}

impl FromStr for Protocol {
    type Err = RemicError;

    /// `single-missing:I`, `random-k:K[:SEED]` or `random-k:K:all`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<u64>().map_err(|_| input(format!("bad number `{t}` in protocol `{s}`")));
        match parts.as_slice() {
            [name, i] if name.replace('_', "-") == "single-missing" => Ok(Protocol::SingleMissing(num(i)? as usize)),
            [name, k, rest @ ..] if name.replace('_', "-") == "random-k" && rest.len() <= 1 => {
                let k = num(k)? as usize;
                match rest {
                    [] => Ok(Protocol::RandomK { k, seed: 0, exhaustive: false }),
                    ["all"] => Ok(Protocol::RandomK { k, seed: 0, exhaustive: true }),
                    [seed] => Ok(Protocol::RandomK { k, seed: num(seed)?, exhaustive: false }),
                    _ => unreachable!(),
                }
            }
            _ => Err(input(format!(
                "unknown protocol `{s}` (expected single-missing:I, random-k:K[:SEED] or random-k:K:all)"
            ))),
        }
    }
}

/// Means of the image metrics for one domain column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainMetrics {
    pub mae: f64,
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiceSummary {
    pub per_class: Vec<f64>,
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub protocol: Protocol,
    pub config: String,
    pub num_samples: usize,
    /// `None` for domains the protocol never evaluates.
    pub domains: Vec<Option<DomainMetrics>>,
    pub dice: Option<DiceSummary>,
}

impl MetricsReport {
    /// Mean NRMSE over evaluated domains.
    pub fn mean_nrmse(&self) -> f64 {
        let v: Vec<f64> = self.domains.iter().flatten().map(|d| d.nrmse).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Default, Clone)]
struct Acc {
    sums: [f64; 4],
    count: usize,
}

impl Acc {
    fn add(&mut self, m: &ImageMetrics) {
        for (s, v) in self.sums.iter_mut().zip([m.mae, m.nrmse, m.psnr, m.ssim]) {
            *s += v;
        }
        self.count += 1;
    }

    fn finish(&self) -> Option<DomainMetrics> {
        (self.count > 0).then(|| {
            let k = self.count as f64;
            DomainMetrics {
                mae: self.sums[0] / k,
                nrmse: self.sums[1] / k,
                psnr: self.sums[2] / k,
                ssim: self.sums[3] / k,
                count: self.count,
            }
        })
    }
}

/// Lexicographic `k`-subsets of `0..n` as visibility masks.
pub fn all_subsets(n: usize, k: usize) -> Result<Vec<VisibilityMask>> {
    if k == 0 || k > n {
        return Err(input(format!("k = {k} outside 1..={n}")));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut flags = vec![false; n];
        idx.iter().for_each(|&i| flags[i] = true);
        out.push(VisibilityMask::new(flags)?);
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < n - k + p) else { break };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    Ok(out)
}

fn evaluate(
    completer: &dyn Completer,
    segmenter: Option<&dyn Segmenter>,
    cases: &[(&Sample, VisibilityMask)],
    protocol: Protocol,
    num_samples: usize,
) -> Result<MetricsReport> {
    let n = cases.first().map(|c| c.0.num_domains()).ok_or_else(|| input("empty test set"))?;
    let mut accs = vec![Acc::default(); n];
    let mut dice_sum: Option<(Vec<f64>, f64, usize)> = None;
    for (sample, vis) in cases {
        let masked = sample.with_visibility(vis.clone())?;
        let completed = completer.complete(&masked)?;
        if completed.len() != n {
            return Err(input(format!("{} returned {} images for {n} domains", completer.name(), completed.len())));
        }
        for i in vis.missing() {
            accs[i].add(&ImageMetrics::compute(&completed[i], &sample.images[i])?);
        }
        if let (Some(seg), Some(mask)) = (segmenter, &sample.seg_mask) {
            let pred = seg.segment(&completed, vis)?;
            let d = dice_score(&pred, &mask.labels, seg.num_classes())?;
            let e = dice_sum.get_or_insert_with(|| (vec![0.0; d.per_class.len()], 0.0, 0));
            e.0.iter_mut().zip(&d.per_class).for_each(|(s, v)| *s += v);
            e.1 += d.mean;
            e.2 += 1;
        }
    }
    let dice = dice_sum.map(|(pc, m, c)| DiceSummary {
        per_class: pc.iter().map(|v| v / c as f64).collect(),
        mean: m / c as f64,
        count: c,
    });
    Ok(MetricsReport {
        method: completer.name(),
        protocol,
        config: String::new(),
        num_samples,
        domains: accs.iter().map(Acc::finish).collect(),
        dice,
    })
}

/// Masks domain `missing` in every test sample and scores the completion of that domain.
pub fn run_protocol_single_missing(
    completer: &dyn Completer,
    test: &[Sample],
    missing: usize,
    segmenter: Option<&dyn Segmenter>,
) -> Result<MetricsReport> {
    let first = test.first().ok_or_else(|| input("empty test set"))?;
    let mask = VisibilityMask::single_missing(first.num_domains(), missing)?;
    let cases: Vec<(&Sample, VisibilityMask)> = test.iter().map(|s| (s, mask.clone())).collect();
    evaluate(completer, segmenter, &cases, Protocol::SingleMissing(missing), test.len())
}

/// `k` visible domains per sample; metrics are taken on the domains that were hidden.
pub fn run_protocol_random_k(
    completer: &dyn Completer,
    test: &[Sample],
    k: usize,
    seed: u64,
    exhaustive: bool,
    segmenter: Option<&dyn Segmenter>,
) -> Result<MetricsReport> {
    let n = test.first().ok_or_else(|| input("empty test set"))?.num_domains();
    if k == 0 || k >= n {
        return Err(input(format!("k = {k} outside 1..={}", n - 1)));
    }
    let mut cases = Vec::new();
    if exhaustive {
        let subsets = all_subsets(n, k)?;
        for s in test {
            cases.extend(subsets.iter().map(|m| (s, m.clone())));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in test {
            cases.push((s, random_subset(n, k, &mut rng)?));
        }
    }
    evaluate(completer, segmenter, &cases, Protocol::RandomK { k, seed, exhaustive }, test.len())
}

pub fn run_protocol(
    completer: &dyn Completer,
    test: &[Sample],
    protocol: Protocol,
    segmenter: Option<&dyn Segmenter>,
) -> Result<MetricsReport> {
    match protocol {
        Protocol::SingleMissing(i) => run_protocol_single_missing(completer, test, i, segmenter),
        Protocol::RandomK { k, seed, exhaustive } => run_protocol_random_k(completer, test, k, seed, exhaustive, segmenter),
    }
}
