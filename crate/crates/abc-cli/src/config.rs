//! Run configuration read from a single JSON file.

use std::path::PathBuf;

use abc_core::geometry::Rational;
use abc_core::scheduler::{Enforcement, SchedulerConfig};
use anyhow::{anyhow, bail, Context, Result};
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

/// Parses "p/q", "p" or "10^k".
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().with_context(|| format!("bad numerator in {s:?}"))?;
        let d: BigInt = d.trim().parse().with_context(|| format!("bad denominator in {s:?}"))?;
        if d == BigInt::from(0) {
            bail!("zero denominator in {s:?}");
        }
        return Ok(Rational::new(n, d));
    }
    Ok(Rational::from_integer(parse_integer(s)?))
}

pub fn parse_integer(s: &str) -> Result<BigInt> {
    let s = s.trim();
    if let Some((b, e)) = s.split_once('^') {
        let b: BigInt = b.trim().parse().with_context(|| format!("bad base in {s:?}"))?;
        let e: usize = e.trim().parse().with_context(|| format!("bad exponent in {s:?}"))?;
        return Ok(num_traits::pow(b, e));
    }
    s.parse().map_err(|_| anyhow!("not an integer: {s:?}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HCheck {
    /// perimeter-Lipschitz bound during scheduling
    #[default]
    Bound,
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub samples: u64,
    pub confidence: f64,
    pub strict: bool,
}

impl Default for McSection {
    fn default() -> Self {
        McSection { samples: 2000, confidence: 0.99, strict: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbarSection {
    pub alphas: Vec<String>,
    pub r: String,
    pub quadruples: usize,
    pub epsilons: Vec<String>,
    pub probe_pairs: usize,
    /// coarse partition block count for the probe
    pub blocks: u64,
}

impl Default for FbarSection {
    fn default() -> Self {
        FbarSection {
            alphas: vec!["1/16".into(), "1/64".into()],
            r: "1/4".into(),
            quadruples: 200,
            epsilons: vec!["1/2".into()],
            probe_pairs: 40,
            blocks: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: u32,
    pub alpha1: String,
    pub alpha1_prime: String,
    pub target: [String; 2],
    pub eps_global: String,
    pub n_max: u64,
    pub k_ceiling: String,
    pub enforce_g: bool,
    pub closeness: Enforcement,
    pub h_check: HCheck,
    pub l_seq: Option<Vec<String>>,
    pub mc: McSection,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// level boxes per tower drawn in the towers figure
    pub svg_levels: u64,
    pub fbar: FbarSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 2,
            alpha1: "2/3".into(),
            alpha1_prime: "1/5".into(),
            target: ["2/3".into(), "1/5".into()],
            eps_global: "1/10".into(),
            n_max: 2,
            k_ceiling: "10^400".into(),
            enforce_g: true,
            closeness: Enforcement::Report,
            h_check: HCheck::Bound,
            l_seq: None,
            mc: McSection::default(),
            seed: 1,
            out_dir: PathBuf::from("out"),
            svg_levels: 120,
            fbar: FbarSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid config")
    }

    /// Reduced fractions are kept as written so that a non-reduced seed is reported, not fixed.
    fn seed_fraction(s: &str) -> Result<(BigInt, BigInt)> {
        match s.split_once('/') {
            Some((p, q)) => Ok((parse_integer(p)?, parse_integer(q)?)),
            None => bail!("seed rotation {s:?} must be written p/q"),
        }
    }

    pub fn scheduler(&self) -> Result<SchedulerConfig> {
        let (p1, q1) = Self::seed_fraction(&self.alpha1)?;
        let (pp, qp) = Self::seed_fraction(&self.alpha1_prime)?;
        let l_seq = match &self.l_seq {
            Some(v) => Some(v.iter().map(|s| parse_integer(s)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(SchedulerConfig {
            d: self.d,
            p1,
            q1,
            p1_prime: pp,
            q1_prime: qp,
            target: (parse_rational(&self.target[0])?, parse_rational(&self.target[1])?),
            eps_global: parse_rational(&self.eps_global)?,
            n_max: self.n_max,
            k_ceiling: parse_integer(&self.k_ceiling)?,
            enforce_g: self.enforce_g,
            closeness: self.closeness,
            l_seq,
            norm_override: None,
        })
    }

    pub fn fbar_alphas(&self) -> Result<Vec<Rational>> {
        self.fbar.alphas.iter().map(|s| parse_rational(s)).collect()
    }

    pub fn fbar_epsilons(&self) -> Result<Vec<Rational>> {
        self.fbar.epsilons.iter().map(|s| parse_rational(s)).collect()
    }
}
