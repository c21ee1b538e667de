//! Training objectives. Every loss exists as a plain value function and as a tape node.
//!
//! All L1 terms use mean reduction so the weights do not depend on resolution.

use remic_nn::{ops, Scalar, Tape, Tensor, Var};

use crate::error::{config, input, Result};

/// Smoothing constant in the Dice denominator.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub adv: f64,
    pub x_cyc: f64,
    pub c_cyc: f64,
    pub s_cyc: f64,
    pub rec: f64,
    pub seg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adv: 1.0, x_cyc: 10.0, c_cyc: 1.0, s_cyc: 1.0, rec: 20.0, seg: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.adv, self.x_cyc, self.c_cyc, self.s_cyc, self.rec, self.seg];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Per-domain terms of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainTerms<V> {
    pub adv: V,
    /// Image consistency; absent when the domain is hidden.
    pub x_cyc: Option<V>,
    pub s_cyc: V,
    pub rec: V,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms<V> {
    pub domains: Vec<DomainTerms<V>>,
    pub c_cyc: V,
    pub seg: Option<V>,
}

pub fn image_consistency_loss<T: Scalar>(reconstructed: &Tensor<T>, real: &Tensor<T>) -> Result<T> {
    Ok(ops::l1_mean(reconstructed, real)?)
}

pub fn content_consistency_loss<T: Scalar>(re_encoded: &Tensor<T>, content: &Tensor<T>) -> Result<T> {
    Ok(ops::l1_mean(re_encoded, content)?)
}

pub fn style_consistency_loss<T: Scalar>(re_encoded: &Tensor<T>, style: &Tensor<T>) -> Result<T> {
    Ok(ops::l1_mean(re_encoded, style)?)
}

pub fn reconstruction_loss<T: Scalar>(generated: &Tensor<T>, real: &Tensor<T>) -> Result<T> {
    Ok(ops::l1_mean(generated, real)?)
}

/// Least-squares discriminator loss averaged over scales.
pub fn adversarial_loss_d<T: Scalar>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Result<T> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(input(format!("need matching non-empty score lists, got {} and {}", real.len(), fake.len())));
    }
    let s: T = real
        .iter()
        .zip(fake)
        .map(|(r, f)| ops::sq_err_mean(r, T::one()) + ops::sq_err_mean(f, T::zero()))
        .sum();
    Ok(s / T::from_usize(real.len()).unwrap())
}

/// Least-squares generator loss averaged over scales.
pub fn adversarial_loss_g<T: Scalar>(fake: &[Tensor<T>]) -> Result<T> {
    if fake.is_empty() {
        return Err(input("empty score list"));
    }
    let s: T = fake.iter().map(|f| ops::sq_err_mean(f, T::one())).sum();
    Ok(s / T::from_usize(fake.len()).unwrap())
}

pub fn dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.channels() == 0 {
        return Err(input("dice loss needs at least one class"));
    }
    Ok(ops::dice_loss(pred, target, T::from_f64c(DICE_EPS))?)
}

fn total_pairs<V: Copy>(terms: &LossTerms<V>, w: &LossWeights, include_seg: bool) -> Result<Vec<(V, f64)>> {
    w.validate()?;
    let mut out = Vec::new();
    for d in &terms.domains {
        out.push((d.adv, w.adv));
        if let Some(x) = d.x_cyc {
            out.push((x, w.x_cyc));
        }
        out.push((d.s_cyc, w.s_cyc));
        out.push((d.rec, w.rec));
    }
    out.push((terms.c_cyc, w.c_cyc));
    if include_seg {
        let seg = terms.seg.ok_or_else(|| input("segmentation term requested but not computed"))?;
        out.push((seg, w.seg));
    }
    Ok(out)
}

/// Weighted generator objective over all domains plus the content term (and Dice if included).
pub fn total_loss(terms: &LossTerms<f64>, w: &LossWeights, include_seg: bool) -> Result<f64> {
    Ok(total_pairs(terms, w, include_seg)?.iter().map(|(v, k)| v * k).sum())
}

/// Tape versions of the objectives.
pub mod graph {
    use super::*;

    pub fn l1<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
        Ok(tape.l1_mean(a, b)?)
    }

    pub fn adversarial_d<T: Scalar>(tape: &mut Tape<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
        if real.is_empty() || real.len() != fake.len() {
            return Err(input("need matching non-empty score lists"));
        }
        let k = T::one() / T::from_usize(real.len()).unwrap();
        let mut terms = Vec::with_capacity(2 * real.len());
        for (&r, &f) in real.iter().zip(fake) {
            terms.push((tape.sq_err_mean(r, T::one())?, k));
            terms.push((tape.sq_err_mean(f, T::zero())?, k));
        }
        Ok(tape.weighted_sum(&terms)?)
    }

    pub fn adversarial_g<T: Scalar>(tape: &mut Tape<T>, fake: &[Var]) -> Result<Var> {
        if fake.is_empty() {
            return Err(input("empty score list"));
        }
        let k = T::one() / T::from_usize(fake.len()).unwrap();
        let terms = fake
            .iter()
            .map(|&f| Ok((tape.sq_err_mean(f, T::one())?, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.weighted_sum(&terms)?)
    }

    pub fn dice<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
        Ok(tape.dice_loss(pred, target, T::from_f64c(DICE_EPS))?)
    }

    pub fn total<T: Scalar>(
        tape: &mut Tape<T>,
        terms: &LossTerms<Var>,
        w: &LossWeights,
        include_seg: bool,
    ) -> Result<Var> {
        let pairs: Vec<(Var, T)> = total_pairs(terms, w, include_seg)?
            .into_iter()
            .map(|(v, k)| (v, T::from_f64c(k)))
            .collect();
        Ok(tape.weighted_sum(&pairs)?)
    }
}
