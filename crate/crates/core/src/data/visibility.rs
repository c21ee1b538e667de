use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{config, input, RemicError, Result};
use crate::image::VisibilityMask;

/// How training and evaluation choose which domains are observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// `k` uniform in `1..=N`, then a uniform `k`-subset.
    UniformK,
    /// A uniform subset of exactly `k` visible domains.
    FixedK(usize),
    /// Everything visible except the given domain.
    SingleMissing(usize),
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskMode::UniformK => write!(f, "uniform_k"),
            MaskMode::FixedK(k) => write!(f, "fixed_k:{k}"),
            MaskMode::SingleMissing(i) => write!(f, "single_missing:{i}"),
        }
    }
}

impl FromStr for MaskMode {
    type Err = RemicError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<usize> {
            a.and_then(|a| a.trim().parse().ok())
                .ok_or_else(|| config(format!("mask mode `{s}` needs a non-negative integer argument")))
        };
        match name.trim().replace('-', "_").as_str() {
            "uniform_k" if arg.is_none() => Ok(MaskMode::UniformK),
            "fixed_k" => Ok(MaskMode::FixedK(num(arg)?)),
            "single_missing" => Ok(MaskMode::SingleMissing(num(arg)?)),
            _ => Err(config(format!(
                "unknown mask mode `{s}` (expected uniform_k, fixed_k:K or single_missing:I)"
            ))),
        }
    }
}

impl MaskMode {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            MaskMode::FixedK(k) if k == 0 || k > n => {
                Err(input(format!("k = {k} outside 1..={n}")))
            }
            MaskMode::SingleMissing(i) if i >= n => {
                Err(input(format!("domain {i} out of range for {n} domains")))
            }
            MaskMode::SingleMissing(_) if n < 2 => Err(input("single_missing needs at least 2 domains")),
            _ => Ok(()),
        }
    }
}

/// A uniformly drawn subset of exactly `k` visible domains.
pub fn random_subset(n: usize, k: usize, rng: &mut impl Rng) -> Result<VisibilityMask> {
    if k == 0 || k > n {
        return Err(input(format!("k = {k} outside 1..={n}")));
    }
    let mut flags = vec![false; n];
    for i in index::sample(rng, n, k) {
        flags[i] = true;
    }
    VisibilityMask::new(flags)
}

pub fn sample_visibility(n: usize, mode: MaskMode, rng: &mut impl Rng) -> Result<VisibilityMask> {
    if n == 0 {
        return Err(input("no domains"));
    }
    mode.validate(n)?;
    match mode {
        MaskMode::UniformK => {
            let k = rng.random_range(1..=n);
            random_subset(n, k, rng)
        }
        MaskMode::FixedK(k) => random_subset(n, k, rng),
        MaskMode::SingleMissing(i) => VisibilityMask::single_missing(n, i),
    }
}
