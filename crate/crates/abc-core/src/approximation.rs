//! Approximation speed of the (h, h+1) towers, rigidity, the translation
//! condition (H) and the genericity neighbourhood predicate.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::combinatorics::StageParams;
use crate::conjugations::{hn_forward, hn_inverse, stage_norm_bound};
use crate::error::{Error, Result};
use crate::geometry::{frac, int, to_f64, Box, BoxUnion, CircleInterval, Interval, Point, Rational};
use crate::scheduler::{HVerdict, Inequality};
use crate::towers::{c_box, rotation, TowerPair};

/// The constant in the speed bound: ceil(6 (q q')^2 m (m-1) / (q_{n+1} qbar')) = 6 at every stage.
pub fn a_constant(stage: &StageParams) -> BigInt {
    let lam = stage.lambda_q();
    let m = int(stage.m.clone());
    let v = int(6) * &lam * &lam * &m * (&m - Rational::one()) / (int(stage.q_next.clone()) * int(stage.qbar_next.clone()));
    v.ceil().to_integer()
}

#[derive(Clone, Debug, Serialize)]
pub struct SpeedReport {
    pub n: u64,
    /// mu(T_n(top) delta base) for the two towers
    #[serde(serialize_with = "crate::serial::rational_vec")]
    pub tower_terms: Vec<Rational>,
    #[serde(serialize_with = "crate::serial::rational")]
    pub exact_wraparound_term: Rational,
    /// 2 (qq')^2/(q_{n+1} qbar') (1-2eps)^(d-2) and 4 (qq')^2/(q_{n+1} qbar')
    #[serde(serialize_with = "crate::serial::rational_vec")]
    pub tower_bounds: Vec<Rational>,
    pub tower_bounds_hold: Vec<bool>,
    #[serde(serialize_with = "crate::serial::rational")]
    pub bound_error1: Rational,
    pub within_bound: bool,
    /// exact term times m_n (m_n - 1)
    #[serde(serialize_with = "crate::serial::rational")]
    pub ratio: Rational,
    pub ratio_in_range: bool,
    /// eps_{n+1} m_n (m_n - 1) against 1/(2 (n+1) (qq')^2)
    #[serde(serialize_with = "crate::serial::rational")]
    pub eps_next_ratio: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub eps_next_bound: Rational,
    pub eps_next_holds: bool,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub a_constant: BigInt,
    /// the same term from the full base unions, when they are materialized
    pub union_cross_check: Option<bool>,
    pub pass: bool,
}

fn box_sym_diff(a: &Box, b: &Box) -> Rational {
    a.measure() + b.measure() - int(2) * a.intersection_measure(b)
}

/// eps_{n+1} = 2/((n+1) q_{n+1} q'_{n+1}).
pub fn eps_next(stage: &StageParams) -> Rational {
    let qp_next = stage.alpha_prime_next().denom().clone();
    BigRational::new(BigInt::from(2), BigInt::from(stage.n + 1) * &stage.q_next * qp_next)
}

/// Exact sum over the partition of mu(T_n(c) delta sigma_n(c)). Only the two top
/// levels contribute, and upstairs they reduce to R^{m-1} C^(1)_{qq'-1} against
/// C^(1)_0 and R^m C^(2)_{qq'-1} against C^(2)_0.
pub fn speed_exact(pair: &TowerPair) -> Result<SpeedReport> {
    let st = &pair.stage;
    let lam = st.lambda();
    let lam_r = st.lambda_q();
    let (a, b) = rotation(st);
    let last = &lam - 1;
    let mut terms = Vec::new();
    for s in [1u8, 2] {
        let h = int(pair.height(s).clone());
        let top = c_box(st, s, &last)?.translate(&frac(&(&h * &a)), &frac(&(&h * &b)));
        terms.push(box_sym_diff(&top, &pair.c0(s)));
    }
    let total = &terms[0] + &terms[1];
    let qn = int(st.q_next.clone());
    let qbar = int(st.qbar_next.clone());
    let core = &lam_r * &lam_r / (&qn * &qbar);
    let fib = num_traits::pow(Rational::one() - int(2) * &st.eps, (st.d - 2) as usize);
    let bounds = vec![int(2) * &core * &fib, int(4) * &core];
    let bounds_hold: Vec<bool> = terms.iter().zip(&bounds).map(|(t, b)| t <= b).collect();
    let bound = int(6) * &core;
    let m = int(st.m.clone());
    let mm = &m * (&m - Rational::one());
    let ratio = &total * &mm;
    let six = int(6);
    let ratio_in_range = ratio.is_positive() && ratio <= six;
    let eps_next_ratio = eps_next(st) * &mm;
    let eps_next_bound = Rational::one() / (int(2 * (st.n + 1)) * &lam_r * &lam_r);
    let eps_next_holds = eps_next_ratio < eps_next_bound;
    let union_cross_check = match (pair.base(1), pair.base(2)) {
        (Some(u1), Some(u2)) => {
            let mut ok = true;
            for (s, u) in [(1u8, u1), (2u8, u2)] {
                let h = int(pair.height(s).clone());
                let moved = u.translate(&frac(&(&h * &a)), &frac(&(&h * &b)));
                let v = crate::geometry::symmetric_difference_measure(&moved, &u);
                ok &= v == terms[(s - 1) as usize];
            }
            Some(ok)
        }
        _ => None,
    };
    let within_bound = total <= bound;
    let pass = within_bound
        && ratio_in_range
        && eps_next_holds
        && bounds_hold.iter().all(|x| *x)
        && union_cross_check != Some(false);
    Ok(SpeedReport {
        n: st.n,
        tower_terms: terms,
        exact_wraparound_term: total,
        tower_bounds: bounds,
        tower_bounds_hold: bounds_hold,
        bound_error1: bound,
        within_bound,
        ratio,
        ratio_in_range,
        eps_next_ratio,
        eps_next_bound,
        eps_next_holds,
        a_constant: a_constant(st),
        union_cross_check,
        pass,
    })
}

pub fn speed_ratio(report: &SpeedReport) -> Rational {
    report.ratio.clone()
}

#[derive(Clone, Debug, Serialize)]
pub struct RigidityReport {
    pub n: u64,
    /// q_{n+1} q'_{n+1}
    #[serde(serialize_with = "crate::serial::bigint")]
    pub period: BigInt,
    pub alpha_integral: bool,
    pub alpha_prime_integral: bool,
    /// d_0(T^m, T_n^m) budget for m up to the period
    #[serde(serialize_with = "crate::serial::rational")]
    pub budget: Rational,
    pub pass: bool,
}

/// T_n^{q_{n+1} q'_{n+1}} = id: both rotation numbers become integers after that many steps.
pub fn rigidity_check(stage: &StageParams) -> RigidityReport {
    let a = stage.alpha_next();
    let ap = stage.alpha_prime_next();
    let period = a.denom() * ap.denom();
    let p = int(period.clone());
    let alpha_integral = (&p * &a).is_integer();
    let alpha_prime_integral = (&p * &ap).is_integer();
    RigidityReport {
        n: stage.n,
        period,
        alpha_integral,
        alpha_prime_integral,
        budget: &stage.eps / int(4),
        pass: alpha_integral && alpha_prime_integral && a.denom() == &stage.q_next,
    }
}

/// (d-1)-dimensional boundary measure of a box.
pub fn surface(b: &Box) -> Rational {
    let mut sides = vec![b.theta1.len.clone(), b.theta2.len.clone()];
    sides.extend(b.fiber.iter().map(|f| f.len()));
    let mut total = Rational::zero();
    for i in 0..sides.len() {
        let face = sides.iter().enumerate().filter(|(j, _)| *j != i).fold(Rational::one(), |acc, (_, x)| acc * x);
        total += face;
    }
    int(2) * total
}

/// Upper bound on the Euclidean Lipschitz constant of h_l o ... o h_{n+1}: each
/// row-sum bound N_j gives ||Dh_j||_2 <= sqrt(d) N_j <= d N_j.
pub fn chain_lipschitz(chain: &[StageParams]) -> Rational {
    chain.iter().fold(Rational::one(), |acc, st| acc * int(st.d) * stage_norm_bound(st))
}

/// Rotation increment alpha_{l+1} - alpha_l for a proposed stage l.
pub fn increment(stage: &StageParams) -> (Rational, Rational) {
    (
        BigRational::new(BigInt::one(), stage.q_next.clone()),
        BigRational::new(BigInt::one(), stage.qbar_next.clone()) + &stage.d_n,
    )
}

/// Condition (H) through the boundary bound
/// mu(R_delta Y delta Y) <= |delta| H^{d-1}(dY), Y = h_l o ... o h_{n+1}(B~^(n)_{i,s}),
/// with H^{d-1}(dY) <= Lip^(d-1) H^{d-1}(dB~). Every level has the perimeter and
/// measure of the base, so one inequality per (n, s) covers all of xi_n.
pub fn h_bound_check(prev: &[StageParams], proposed: &StageParams) -> Result<HVerdict> {
    let (d1, d2) = increment(proposed);
    let step = &d1 + &d2;
    let budget_eps = &proposed.eps;
    let mut entries = Vec::new();
    let mut worst_tau: Option<Rational> = None;
    for (idx, st) in prev.iter().enumerate() {
        let mut chain: Vec<StageParams> = prev[idx + 1..].to_vec();
        chain.push(proposed.clone());
        let lip = chain_lipschitz(&chain);
        let lip_pow = num_traits::pow(lip, (st.d - 1) as usize);
        for s in [1u8, 2] {
            let c0 = c_box(st, s, &BigInt::zero())?;
            let lam = st.lambda_q();
            let per = &lam * surface(&c0);
            let mu = &lam * c0.measure();
            let lhs = &step * &per * &lip_pow;
            let rhs = budget_eps * &mu;
            let tau = &rhs / (&per * &lip_pow);
            worst_tau = Some(match worst_tau {
                Some(t) if t <= tau => t,
                _ => tau,
            });
            entries.push(Inequality::new(
                proposed.n,
                &format!("H: |delta| Per Lip^(d-1) <= eps_l mu (n = {}, s = {s})", st.n),
                lhs,
                "<=",
                rhs,
                true,
            ));
        }
    }
    if entries.iter().all(|e| e.holds) {
        return Ok(HVerdict::Pass(entries));
    }
    // |delta|_1 < 2/q_{l+1} + D_l < 3/q_{l+1}
    let tau = worst_tau.expect("a failing entry exists");
    let q_min = (int(3) / tau).ceil().to_integer();
    Ok(HVerdict::Raise { q_min, reason: "translation bound".into() })
}

/// Membership oracle for a set queried by the Monte Carlo estimators.
pub trait Indicator: Sync {
    fn contains(&self, p: &Point) -> Result<bool>;
}

impl Indicator for BoxUnion {
    fn contains(&self, p: &Point) -> Result<bool> {
        Ok(self.contains_point(p))
    }
}

impl Indicator for Box {
    fn contains(&self, p: &Point) -> Result<bool> {
        Ok(self.contains_point(p))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub confidence: f64,
    /// fail on a sample outside every good-domain piece instead of counting it as a mismatch
    pub strict: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { samples: 100_000, seed: 0, confidence: 0.99, strict: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum McVerdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub half_width: f64,
    pub confidence: f64,
    #[serde(serialize_with = "crate::serial::rational")]
    pub region_measure: Rational,
    pub samples: u64,
    pub mismatches: u64,
    pub undefined: u64,
    #[serde(serialize_with = "crate::serial::rational_opt")]
    pub budget: Option<Rational>,
    pub verdict: McVerdict,
}

const CHUNK: u64 = 1024;

fn uniform(rng: &mut ChaCha8Rng, lo: &Rational, len: &Rational) -> Rational {
    let u: u64 = rng.gen::<u64>() >> 11;
    lo + len * BigRational::new(BigInt::from(u), BigInt::from(1u64 << 53))
}

fn sample_in(rng: &mut ChaCha8Rng, region: &[Box], cumulative: &[f64]) -> Point {
    let total = *cumulative.last().expect("nonempty region");
    let x = rng.gen::<f64>() * total;
    let idx = cumulative.partition_point(|c| *c <= x).min(region.len() - 1);
    let b = &region[idx];
    let t1 = uniform(rng, b.theta1.lo.value(), &b.theta1.len);
    let t2 = uniform(rng, b.theta2.lo.value(), &b.theta2.len);
    let fiber = b.fiber.iter().map(|f| uniform(rng, &f.lo, &f.len())).collect();
    Point::new(frac(&t1), frac(&t2), fiber)
}

/// Uniform sampling over `region` (pairwise disjoint boxes) counting points where
/// `mismatch` holds; the estimate is region measure times the hit fraction with a
/// two-sided Hoeffding half-width. Chunks of samples use their own ChaCha stream,
/// so the result does not depend on the thread count.
pub fn mc_region<F>(region: &BoxUnion, budget: Option<&Rational>, cfg: &McConfig, mismatch: F) -> Result<McEstimate>
where
    F: Fn(&Point) -> Result<bool> + Sync,
{
    if cfg.samples == 0 || !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::ParameterRange(format!("samples {} confidence {}", cfg.samples, cfg.confidence)));
    }
    if region.is_empty() {
        return Err(Error::ParameterRange("empty sampling region".into()));
    }
    let boxes = region.boxes();
    let mut cumulative = Vec::with_capacity(boxes.len());
    let mut acc = 0.0;
    for b in boxes {
        acc += to_f64(&b.measure());
        cumulative.push(acc);
    }
    let chunks = cfg.samples.div_ceil(CHUNK);
    let per_chunk: Vec<Result<(u64, u64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c);
            let n = CHUNK.min(cfg.samples - c * CHUNK);
            let (mut hits, mut undefined) = (0u64, 0u64);
            for _ in 0..n {
                let p = sample_in(&mut rng, boxes, &cumulative);
                match mismatch(&p) {
                    Ok(true) => hits += 1,
                    Ok(false) => {}
                    Err(e) => {
                        if cfg.strict {
                            return Err(Error::IndicatorUndefined(e.to_string()));
                        }
                        hits += 1;
                        undefined += 1;
                    }
                }
            }
            Ok((hits, undefined))
        })
        .collect();
    let (mut hits, mut undefined) = (0u64, 0u64);
    for r in per_chunk {
        let (h, u) = r?;
        hits += h;
        undefined += u;
    }
    let region_measure = region.measure();
    let rm = to_f64(&region_measure);
    let n = cfg.samples as f64;
    let estimate = rm * hits as f64 / n;
    let half_width = rm * ((2.0 / (1.0 - cfg.confidence)).ln() / (2.0 * n)).sqrt();
    let verdict = match budget {
        None => McVerdict::Inconclusive,
        Some(b) => {
            let b = to_f64(b);
            if estimate + half_width < b {
                McVerdict::Pass
            } else if estimate - half_width > b {
                McVerdict::Fail
            } else {
                McVerdict::Inconclusive
            }
        }
    };
    Ok(McEstimate {
        estimate,
        half_width,
        confidence: cfg.confidence,
        region_measure,
        samples: cfg.samples,
        mismatches: hits,
        undefined,
        budget: budget.cloned(),
        verdict,
    })
}

/// Monte Carlo estimate of mu(R_delta X delta X). `region` must cover X delta R_delta X.
pub fn translation_continuity_mc<I: Indicator>(
    x: &I,
    delta: (&Rational, &Rational),
    region: &BoxUnion,
    budget: Option<&Rational>,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if frac(delta.0).is_zero() && frac(delta.1).is_zero() {
        let verdict = match budget {
            Some(b) if !b.is_negative() => McVerdict::Pass,
            Some(_) => McVerdict::Fail,
            None => McVerdict::Inconclusive,
        };
        return Ok(McEstimate {
            estimate: 0.0,
            half_width: 0.0,
            confidence: 1.0,
            region_measure: region.measure(),
            samples: 0,
            mismatches: 0,
            undefined: 0,
            budget: budget.cloned(),
            verdict,
        });
    }
    let (a, b) = (-delta.0.clone(), -delta.1.clone());
    mc_region(region, budget, cfg, |p| Ok(x.contains(p)? != x.contains(&p.translate(&a, &b))?))
}

/// Exact mu(R_delta X delta X) for a box union.
pub fn exact_translation_measure(x: &BoxUnion, delta: (&Rational, &Rational)) -> Rational {
    crate::geometry::symmetric_difference_measure(&x.translate(delta.0, delta.1), x)
}

fn bounds(b: &Box) -> Vec<(Rational, Rational)> {
    let mut v = vec![
        (b.theta1.lo.value().clone(), b.theta1.lo.value() + &b.theta1.len),
        (b.theta2.lo.value().clone(), b.theta2.lo.value() + &b.theta2.len),
    ];
    v.extend(b.fiber.iter().map(|f| (f.lo.clone(), f.hi.clone())));
    v
}

fn from_bounds(v: &[(Rational, Rational)]) -> Result<Box> {
    Box::new(
        CircleInterval::new(v[0].0.clone(), &v[0].1 - &v[0].0)?,
        CircleInterval::new(v[1].0.clone(), &v[1].1 - &v[1].0)?,
        v[2..].iter().map(|(lo, hi)| Interval { lo: lo.clone(), hi: hi.clone() }).collect(),
    )
}

/// Disjoint boxes covering every point within sup-distance t of the boundary of `b`
/// (grown box minus shrunk box; fiber coordinates are clipped to [0, 1]).
pub fn boundary_shell(b: &Box, t: &Rational) -> Result<Vec<Box>> {
    let inner = bounds(b);
    let grown: Vec<(Rational, Rational)> = inner
        .iter()
        .enumerate()
        .map(|(i, (lo, hi))| {
            if i < 2 {
                (lo - t, hi + t)
            } else {
                let lo = lo - t;
                let hi = hi + t;
                (if lo.is_negative() { Rational::zero() } else { lo }, if hi > Rational::one() { Rational::one() } else { hi })
            }
        })
        .collect();
    if grown[..2].iter().any(|(lo, hi)| hi - lo >= Rational::one()) {
        return Err(Error::InvalidGeometry("boundary layer wraps around the circle".into()));
    }
    let shrunk: Vec<(Rational, Rational)> = inner.iter().map(|(lo, hi)| (lo + t, hi - t)).collect();
    if shrunk.iter().any(|(lo, hi)| lo >= hi) {
        return Ok(vec![from_bounds(&grown)?]);
    }
    let mut out = Vec::new();
    for i in 0..inner.len() {
        for slab in [(grown[i].0.clone(), shrunk[i].0.clone()), (shrunk[i].1.clone(), grown[i].1.clone())] {
            if slab.0 >= slab.1 {
                continue;
            }
            let v: Vec<(Rational, Rational)> = (0..inner.len())
                .map(|j| match j.cmp(&i) {
                    std::cmp::Ordering::Less => shrunk[j].clone(),
                    std::cmp::Ordering::Equal => slab.clone(),
                    std::cmp::Ordering::Greater => grown[j].clone(),
                })
                .collect();
            out.push(from_bounds(&v)?);
        }
    }
    Ok(out)
}

/// Monte Carlo form of (H) for a level of stage n pushed through h_{n+1}, ..., h_l.
/// Points are drawn upstairs from the Lip |delta|-shell of the level boxes; by
/// measure preservation mu(R_delta Y delta Y) is the measure of the x there with
/// x in B~ differing from H^{-1}(H(x) - delta) in B~.
pub fn h_condition_mc(
    level: &BoxUnion,
    chain: &[StageParams],
    delta: (&Rational, &Rational),
    budget: &Rational,
    cfg: &McConfig,
) -> Result<McEstimate> {
    let lip = chain_lipschitz(chain);
    let t = lip * (delta.0.abs() + delta.1.abs());
    let mut shell = Vec::new();
    for b in level.boxes() {
        shell.extend(boundary_shell(b, &t)?);
    }
    let region = BoxUnion::new(shell)?;
    let (a, b) = (-delta.0.clone(), -delta.1.clone());
    mc_region(&region, Some(budget), cfg, |x| {
        let mut y = x.clone();
        for st in chain {
            y = hn_forward(st, &y)?;
        }
        let mut z = y.translate(&a, &b);
        for st in chain.iter().rev() {
            z = hn_inverse(st, &z)?;
        }
        Ok(level.contains_point(x) != level.contains_point(&z))
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateMetrics {
    /// d_{l_{n+1}} distance to the stage map
    #[serde(serialize_with = "crate::serial::rational")]
    pub d_l: Rational,
    /// d_0(T^{q_{n+1} q'_{n+1}}, id)
    #[serde(serialize_with = "crate::serial::rational")]
    pub rigidity: Rational,
    /// approximation speed
    #[serde(serialize_with = "crate::serial::rational")]
    pub speed: Rational,
}

/// Membership in U_{A,B,k,n}: d_l < 2/l_{n+1}, rigidity < eps_n and
/// speed < (A+1)/(m_n (m_n - 1)), all strict.
pub fn neighborhood_predicate(metrics: &CandidateMetrics, stage: &StageParams, l_next: &BigInt, a: &BigInt) -> bool {
    let m = int(stage.m.clone());
    let speed_cap = int(a + 1) / (&m * (&m - Rational::one()));
    metrics.d_l < int(2) / int(l_next.clone()) && metrics.rigidity < stage.eps && metrics.speed < speed_cap
}

/// Telescoped (H) bound on the distance to the limit: sum_{k>=0} eps_{n+k+1} <= 2 eps_{n+1}.
pub fn error3_bound(stage: &StageParams) -> Rational {
    int(2) * eps_next(stage)
}
