//! Parameter ladder: chooses q_{n+1}, D_n and alpha'_{n+1} stage by stage and
//! records every inequality the convergence argument needs as an exact
//! comparison.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::combinatorics::{derive_stage, StageParams};
use crate::conjugations::stage_norm_bound;
use crate::error::{Error, Result};
use crate::geometry::{frac, int, rat, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Enforcement {
    Enforce,
    #[default]
    Report,
}

#[derive(Clone, Debug)]
pub struct SchedulerConfig {
    pub d: u32,
    pub p1: BigInt,
    pub q1: BigInt,
    pub p1_prime: BigInt,
    pub q1_prime: BigInt,
    pub target: (Rational, Rational),
    pub eps_global: Rational,
    pub n_max: u64,
    pub k_ceiling: BigInt,
    pub enforce_g: bool,
    pub closeness: Enforcement,
    /// Explicit (l_n); the default rule is used when absent.
    pub l_seq: Option<Vec<BigInt>>,
    /// Overrides the certified bound on |||H_n||| used in the closeness condition.
    pub norm_override: Option<Rational>,
}

impl SchedulerConfig {
    pub fn desk() -> Self {
        SchedulerConfig {
            d: 2,
            p1: 2.into(),
            q1: 3.into(),
            p1_prime: 1.into(),
            q1_prime: 5.into(),
            target: (rat(2, 3), rat(1, 5)),
            eps_global: rat(1, 10),
            n_max: 2,
            k_ceiling: num_traits::pow(BigInt::from(10), 400),
            enforce_g: true,
            closeness: Enforcement::Report,
            l_seq: None,
            norm_override: None,
        }
    }
}

/// One recorded comparison `lhs relation rhs`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Inequality {
    pub stage: u64,
    pub condition: String,
    #[serde(serialize_with = "crate::serial::rational")]
    pub lhs: Rational,
    pub relation: String,
    #[serde(serialize_with = "crate::serial::rational")]
    pub rhs: Rational,
    pub holds: bool,
    pub enforced: bool,
}

impl Inequality {
    pub fn new(stage: u64, condition: &str, lhs: Rational, relation: &str, rhs: Rational, enforced: bool) -> Self {
        let holds = match relation {
            "<" => lhs < rhs,
            "<=" => lhs <= rhs,
            ">" => lhs > rhs,
            ">=" => lhs >= rhs,
            "=" => lhs == rhs,
            _ => false,
        };
        Inequality { stage, condition: condition.to_string(), lhs, relation: relation.to_string(), rhs, holds, enforced }
    }

    pub fn flag(stage: u64, condition: &str, ok: bool, enforced: bool) -> Self {
        let v = if ok { Rational::one() } else { Rational::zero() };
        Inequality::new(stage, condition, v, "=", Rational::one(), enforced)
    }

    pub fn failed(&self) -> bool {
        self.enforced && !self.holds
    }
}

/// Outcome of the (H) surrogate for a proposed stage.
#[derive(Clone, Debug)]
pub enum HVerdict {
    Pass(Vec<Inequality>),
    Fail(String),
    /// fails, and no q_{n+1} below `q_min` can pass
    Raise { q_min: BigInt, reason: String },
    Inconclusive(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct Ladder {
    pub d: u32,
    pub stages: Vec<StageParams>,
    #[serde(serialize_with = "crate::serial::rational_vec")]
    pub target: Vec<Rational>,
    #[serde(serialize_with = "crate::serial::rational")]
    pub eps_global: Rational,
    #[serde(serialize_with = "crate::serial::bigint_vec")]
    pub l_seq: Vec<BigInt>,
    pub enforce_g: bool,
    pub closeness: Enforcement,
    #[serde(serialize_with = "crate::serial::rational_vec")]
    pub norm_bounds: Vec<Rational>,
    pub h_checks: Vec<Inequality>,
    pub cert: Vec<Inequality>,
}

impl Serialize for StageParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        use crate::serial::rational_json as rj;
        let mut st = s.serialize_struct("StageParams", 16)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("d", &self.d)?;
        st.serialize_field("p", &self.p.to_string())?;
        st.serialize_field("q", &self.q.to_string())?;
        st.serialize_field("p_prime", &self.p_prime.to_string())?;
        st.serialize_field("q_prime", &self.q_prime.to_string())?;
        st.serialize_field("q_next", &self.q_next.to_string())?;
        st.serialize_field("qbar_next", &self.qbar_next.to_string())?;
        st.serialize_field("D", &rj(&self.d_n))?;
        st.serialize_field("eps", &rj(&self.eps))?;
        st.serialize_field("m", &self.m.to_string())?;
        st.serialize_field("r", &self.r.to_string())?;
        st.serialize_field("r_prime", &self.r_prime.to_string())?;
        st.serialize_field("Delta", &rj(&self.delta))?;
        st.serialize_field("l", &self.l_n.to_string())?;
        st.end()
    }
}

/// C_k = (d+k-1)!/(d-1)!
pub fn constant_c(k: u64, d: u32) -> BigInt {
    let mut c = BigInt::one();
    for t in d as u64..(d as u64 + k) {
        c *= t;
    }
    c
}

fn ceil_div(a: &Rational) -> BigInt {
    a.ceil().to_integer()
}

/// Default l_i given eps_global and eps_1..eps_{i-1}.
pub fn default_l(i: u64, eps_global: &Rational, eps_prev: &[Rational]) -> BigInt {
    let two = BigInt::from(2);
    let mut l = BigInt::from(i * i);
    l = l.max(ceil_div(&(int(num_traits::pow(two.clone(), (i + 2) as usize)) / eps_global)));
    for (idx, e) in eps_prev.iter().enumerate() {
        let n = idx as u64 + 1;
        if n < i {
            l = l.max(ceil_div(&(int(num_traits::pow(two.clone(), (i - n + 1) as usize)) / e)));
        }
    }
    l
}

/// Finite-sum checks of sum 1/l_i < eps and sum_{i>n} 1/l_i < eps_n.
pub fn validate_l_seq(l_seq: &[BigInt], eps_global: &Rational, eps: &[Rational]) -> Result<()> {
    if l_seq.windows(2).any(|w| w[0] >= w[1]) || l_seq.iter().any(|l| !l.is_positive()) {
        return Err(Error::ParameterRange("l_n must be positive and increasing".into()));
    }
    let inv: Vec<Rational> = l_seq.iter().map(|l| BigRational::new(BigInt::one(), l.clone())).collect();
    let total: Rational = inv.iter().sum();
    if &total >= eps_global {
        return Err(Error::violation(0, "l-sum", format!("sum 1/l_i = {total} >= {eps_global}")));
    }
    for (idx, e) in eps.iter().enumerate() {
        let tail: Rational = inv.iter().skip(idx + 1).sum();
        if &tail >= e {
            return Err(Error::violation(idx as u64 + 1, "l-tail", format!("sum_(i>{}) 1/l_i = {tail} >= eps = {e}", idx + 1)));
        }
    }
    Ok(())
}

fn isqrt_ceil(x: &BigInt) -> BigInt {
    let r = x.sqrt();
    if &(&r * &r) < x {
        r + 1
    } else {
        r
    }
}

/// Smallest k with (k lambda)^2 > bound (bound rational).
fn min_k_square(lambda: &BigInt, bound: &Rational) -> BigInt {
    let lam2 = int(lambda * lambda);
    let t = ceil_div(&(bound / lam2));
    let mut k = isqrt_ceil(&t.max(BigInt::zero()));
    let holds = |k: &BigInt| int(num_traits::pow(k * lambda, 2)) > *bound;
    while !holds(&k) {
        k += 1;
    }
    while k > BigInt::one() && holds(&(&k - 1)) {
        k -= 1;
    }
    k.max(BigInt::one())
}

/// alpha'_{n+1} = p'/Q with Q the least integer > 4 n qbar^{d+1} coprime to
/// q_{n+1} and to p' = floor(Q beta) + 1, where beta = alpha'_n + 1/qbar.
pub fn choose_d(n: u64, d: u32, alpha_prime: &Rational, q_next: &BigInt, qbar: &BigInt) -> (Rational, Rational) {
    let beta = alpha_prime + BigRational::new(BigInt::one(), qbar.clone());
    let mut q: BigInt = BigInt::from(4 * n) * num_traits::pow(qbar.clone(), (d + 1) as usize) + 1;
    loop {
        if q.gcd(q_next).is_one() {
            let p: BigInt = (int(q.clone()) * &beta).floor().to_integer() + 1;
            if p.gcd(&q).is_one() {
                let a = BigRational::new(p, q);
                let dn = &a - &beta;
                return (a, dn);
            }
        }
        q += 1;
    }
}

fn reduced_alpha_ok(p: &BigInt, q: &BigInt, q_next: &BigInt) -> bool {
    // alpha_{n+1} = p/q + 1/q_next must have denominator exactly q_next
    let a = BigRational::new(p.clone(), q.clone()) + BigRational::new(BigInt::one(), q_next.clone());
    a.denom() == q_next
}

fn circle_dist(a: &Rational, b: &Rational) -> Rational {
    let t = frac(&(a - b));
    let u = Rational::one() - &t;
    if t < u {
        t
    } else {
        u
    }
}

/// Right-hand side of the closeness condition with factor `f` (8 or 4).
fn closeness_rhs(f: u64, stage: &StageParams, l: &BigInt, norm: &Rational) -> Rational {
    let lu: u64 = l.try_into().unwrap_or(u64::MAX);
    let c = constant_c(lu, stage.d);
    let pow = num_traits::pow(norm.clone(), lu as usize + 1);
    Rational::one() / (int(BigInt::from(f) * l * c * stage.lambda()) * pow)
}

/// Every checkable inequality for one stage, given its H_n bound and l_n.
pub fn stage_inequalities(stage: &StageParams, h_norm_n: &Rational, enforce_g: bool, closeness: Enforcement) -> Vec<Inequality> {
    let n = stage.n;
    let d = stage.d;
    let lam = stage.lambda();
    let lam_r = int(lam.clone());
    let qn = int(stage.q_next.clone());
    let qbar = int(stage.qbar_next.clone());
    let a_next = stage.alpha_next();
    let ap_next = stage.alpha_prime_next();
    let q_prime_next = int(ap_next.denom().clone());
    let mut v = Vec::new();
    v.push(Inequality::flag(n, "A: q q' | q_{n+1}", (&stage.q_next % &lam).is_zero(), true));
    v.push(Inequality::flag(n, "B: gcd(q, q') = 1", stage.q.gcd(&stage.q_prime).is_one(), true));
    v.push(Inequality::new(n, "C: qbar' = q_{n+1} + q q'", qbar.clone(), "=", &qn + &lam_r, true));
    v.push(Inequality::new(n, "D: D_n > 0", stage.d_n.clone(), ">", Rational::zero(), true));
    let d_bound = Rational::one() / (int(4 * n) * num_traits::pow(qbar.clone(), (d + 1) as usize));
    v.push(Inequality::new(n, "D: D_n < 1/(4n qbar'^(d+1))", stage.d_n.clone(), "<", d_bound, true));
    v.push(Inequality::new(n, "E: q'_{n+1} > qbar'", q_prime_next.clone(), ">", qbar.clone(), true));
    v.push(Inequality::new(n, "E: qbar' > q_{n+1}", qbar.clone(), ">", qn.clone(), true));
    let e_bound = int(BigInt::from(4) * num_traits::pow(BigInt::from(n), (d - 1) as usize) * num_traits::pow(lam.clone(), (d + 1) as usize));
    v.push(Inequality::new(n, "E: q_{n+1} > 4 n^(d-1) (q q')^(d+1)", qn.clone(), ">", e_bound, true));
    v.push(Inequality::new(n, "F: q'_{n+1} > 4 qbar'", q_prime_next.clone(), ">", int(4) * &qbar, true));
    let g_rhs = int(4 * d as u64 * (n + 1).pow(4)) * h_norm_n * h_norm_n;
    v.push(Inequality::new(n, "G: q_{n+1}^2 > 4 d (n+1)^4 |DH_n|^2", &qn * &qn, ">", g_rhs, enforce_g));
    v.push(Inequality::flag(n, "gcd(p_{n+1}, q_{n+1}) = 1", a_next.denom() == &stage.q_next, true));
    v.push(Inequality::flag(n, "gcd(q'_{n+1}, q_{n+1}) = 1", ap_next.denom().gcd(&stage.q_next).is_one(), true));
    let inc = &lam_r * (Rational::one() / &qn - Rational::one() / &qbar - &stage.d_n);
    v.push(Inequality::new(n, "increment > 0", inc.clone(), ">", Rational::zero(), true));
    let m = int(stage.m.clone());
    v.push(Inequality::new(n, "increment < eps~/(8 m q q')", inc, "<", stage.eps_tilde() / (int(8) * &m * &lam_r), true));
    v.push(Inequality::new(n, "m^2 D < eps/(2 qbar')", &m * &m * &stage.d_n, "<", &stage.eps / (int(2) * &qbar), true));
    v.push(Inequality::new(n, "Delta > 0", stage.delta.clone(), ">", Rational::zero(), true));
    for (name, ok) in stage.identities() {
        v.push(Inequality::flag(n, &format!("identity {name}"), ok, true));
    }
    let enforce = closeness == Enforcement::Enforce;
    v.push(Inequality::new(
        n,
        "closeness: |alpha_{n+1} - alpha_n| <= 1/(8 l C_l q q' N^(l+1))",
        Rational::one() / &qn,
        "<=",
        closeness_rhs(8, stage, &stage.l_n, h_norm_n),
        enforce,
    ));
    v.push(Inequality::new(
        n,
        "closeness: |alpha'_{n+1} - alpha'_n| <= 1/(4 l C_l q q' N^(l+1))",
        &ap_next - stage.alpha_prime(),
        "<=",
        closeness_rhs(4, stage, &stage.l_n, h_norm_n),
        enforce,
    ));
    v
}

impl Ladder {
    /// Recomputes every per-stage inequality and the l-sequence sums.
    pub fn audit(&self) -> Vec<Inequality> {
        let mut out = Vec::new();
        for (idx, st) in self.stages.iter().enumerate() {
            out.extend(stage_inequalities(st, &self.norm_bounds[idx], self.enforce_g, self.closeness));
        }
        let inv: Vec<Rational> = self.l_seq.iter().map(|l| BigRational::new(BigInt::one(), l.clone())).collect();
        let total: Rational = inv.iter().sum();
        out.push(Inequality::new(0, "sum 1/l_i < eps", total, "<", self.eps_global.clone(), true));
        for (idx, st) in self.stages.iter().enumerate() {
            let tail: Rational = inv.iter().skip(idx + 1).sum();
            out.push(Inequality::new(st.n, "sum_(i>n) 1/l_i < eps_n", tail, "<", st.eps.clone(), true));
        }
        out.extend(self.h_checks.iter().cloned());
        out
    }

    pub fn passes(&self) -> bool {
        self.audit().iter().all(|i| !i.failed())
    }

    pub fn first_failure(&self) -> Option<Inequality> {
        self.audit().into_iter().find(|i| i.failed())
    }
}

/// Builds the ladder. `verify_h` is called for every proposed stage with the
/// previously committed stages; a failing verdict bumps k_n.
pub fn build_ladder<F>(cfg: &SchedulerConfig, mut verify_h: F) -> Result<Ladder>
where
    F: FnMut(&[StageParams], &StageParams) -> Result<HVerdict>,
{
    if cfg.d < 2 || cfg.n_max == 0 {
        return Err(Error::ParameterRange(format!("d = {}, n_max = {}", cfg.d, cfg.n_max)));
    }
    if !cfg.q1.gcd(&cfg.q1_prime).is_one() {
        return Err(Error::violation(1, "B", format!("gcd({}, {}) != 1", cfg.q1, cfg.q1_prime)));
    }
    for (p, q, what) in [(&cfg.p1, &cfg.q1, "alpha_1"), (&cfg.p1_prime, &cfg.q1_prime, "alpha'_1")] {
        if !q.is_positive() || !p.gcd(q).is_one() {
            return Err(Error::violation(1, "reduced seed", format!("{what} = {p}/{q}")));
        }
    }
    let mut stages: Vec<StageParams> = Vec::new();
    let mut norms: Vec<Rational> = Vec::new();
    let mut h_checks = Vec::new();
    let mut l_seq = Vec::new();
    let (mut p, mut q, mut pp, mut qp) = (cfg.p1.clone(), cfg.q1.clone(), cfg.p1_prime.clone(), cfg.q1_prime.clone());
    for n in 1..=cfg.n_max {
        let lam = &q * &qp;
        let eps_prev: Vec<Rational> = stages.iter().map(|s| s.eps.clone()).collect();
        let l_n = match &cfg.l_seq {
            Some(seq) => seq
                .get(n as usize - 1)
                .cloned()
                .ok_or_else(|| Error::ParameterRange(format!("l_seq has no entry for stage {n}")))?,
            None => default_l(n, &cfg.eps_global, &eps_prev),
        };
        // H_n = h_n o ... o h_1 does not depend on q_{n+1}: probe with a dummy next stage
        let probe = derive_stage(n, cfg.d, p.clone(), q.clone(), pp.clone(), qp.clone(), lam.clone(), Rational::zero())?;
        let norm_n = match &cfg.norm_override {
            Some(v) => v.clone(),
            None => norms.last().cloned().unwrap_or_else(Rational::one) * stage_norm_bound(&probe),
        };

        let e_bound = BigInt::from(4) * num_traits::pow(BigInt::from(n), (cfg.d - 1) as usize) * num_traits::pow(lam.clone(), cfg.d as usize);
        let mut k: BigInt = e_bound + 1;
        if cfg.enforce_g {
            let g_rhs = int(4 * cfg.d as u64 * (n + 1).pow(4)) * &norm_n * &norm_n;
            k = k.max(min_k_square(&lam, &g_rhs));
        }
        if cfg.closeness == Enforcement::Enforce {
            let mut dummy = probe.clone();
            dummy.l_n = l_n.clone();
            let rhs = closeness_rhs(8, &dummy, &l_n, &norm_n);
            k = k.max(ceil_div(&(Rational::one() / (rhs * int(lam.clone())))));
        }
        let stage = loop {
            if k > cfg.k_ceiling {
                return Err(Error::NoAdmissibleStage(format!("stage {n}: k_n exceeds the ceiling {}", cfg.k_ceiling)));
            }
            let q_next = &k * &lam;
            if !reduced_alpha_ok(&p, &q, &q_next) {
                k += 1;
                continue;
            }
            let qbar = &q_next + &lam;
            let (ap_next, dn) = choose_d(n, cfg.d, &BigRational::new(pp.clone(), qp.clone()), &q_next, &qbar);
            let mut st = derive_stage(n, cfg.d, p.clone(), q.clone(), pp.clone(), qp.clone(), q_next, dn)?;
            st.l_n = l_n.clone();
            debug_assert_eq!(st.alpha_prime_next(), ap_next);
            match verify_h(&stages, &st)? {
                HVerdict::Pass(entries) => {
                    h_checks.extend(entries);
                    break st;
                }
                HVerdict::Fail(_) => {
                    k += 1;
                }
                HVerdict::Raise { q_min, .. } => {
                    let (kq, r) = q_min.div_rem(&lam);
                    let kq: BigInt = if r.is_zero() { kq } else { kq + 1 };
                    k = (k + 1u32).max(kq);
                }
                HVerdict::Inconclusive(why) => {
                    return Err(Error::IndicatorUndefined(format!("stage {n}: (H) surrogate inconclusive: {why}")));
                }
            }
        };
        let a = stage.alpha_next();
        let ap = stage.alpha_prime_next();
        p = a.numer().clone();
        q = a.denom().clone();
        pp = ap.numer().clone();
        qp = ap.denom().clone();
        norms.push(norm_n);
        l_seq.push(l_n);
        stages.push(stage);
    }
    let eps: Vec<Rational> = stages.iter().map(|s| s.eps.clone()).collect();
    if cfg.l_seq.is_some() {
        validate_l_seq(&l_seq, &cfg.eps_global, &eps)?;
    }
    let mut ladder = Ladder {
        d: cfg.d,
        stages,
        target: vec![cfg.target.0.clone(), cfg.target.1.clone()],
        eps_global: cfg.eps_global.clone(),
        l_seq,
        enforce_g: cfg.enforce_g,
        closeness: cfg.closeness,
        norm_bounds: norms,
        h_checks,
        cert: Vec::new(),
    };
    ladder.cert = ladder.audit();
    if let Some(f) = ladder.first_failure() {
        return Err(Error::violation(f.stage, &f.condition, format!("{} {} {} fails", f.lhs, f.relation, f.rhs)));
    }
    Ok(ladder)
}

/// Accepts every proposal; for runs that skip the (H) surrogate.
pub fn no_h_check(_: &[StageParams], _: &StageParams) -> Result<HVerdict> {
    Ok(HVerdict::Pass(Vec::new()))
}

#[derive(Clone, Debug, Serialize)]
pub struct RotationDistanceReport {
    #[serde(serialize_with = "crate::serial::rational")]
    pub seed_distance: Rational,
    pub seed_ok: bool,
    #[serde(serialize_with = "crate::serial::rational_vec")]
    pub increments: Vec<Rational>,
    /// increment of stage n below 1/(4 l_n), the per-stage d_k budget
    pub increments_ok: Vec<bool>,
    #[serde(serialize_with = "crate::serial::rational")]
    pub telescoped: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub bound: Rational,
    pub closeness_enforced: bool,
    pub pass: bool,
}

/// max(|A - alpha_1|, |B - alpha'_1|) < eps and the per-stage increments.
pub fn check_rotation_distance(ladder: &Ladder) -> RotationDistanceReport {
    let first = &ladder.stages[0];
    let seed = std::cmp::max(circle_dist(&ladder.target[0], &first.alpha()), circle_dist(&ladder.target[1], &first.alpha_prime()));
    let seed_ok = seed < ladder.eps_global;
    let mut increments = Vec::new();
    let mut oks = Vec::new();
    for (st, l) in ladder.stages.iter().zip(&ladder.l_seq) {
        let da = st.alpha_next() - st.alpha();
        let dap = st.alpha_prime_next() - st.alpha_prime();
        let inc = std::cmp::max(da, dap);
        oks.push(inc < BigRational::new(BigInt::one(), BigInt::from(4) * l));
        increments.push(inc);
    }
    let telescoped = int(2) * &seed + ladder.l_seq.iter().map(|l| BigRational::new(BigInt::from(2), l.clone())).sum::<Rational>();
    let bound = int(4) * &ladder.eps_global;
    let pass = seed_ok && oks.iter().all(|x| *x) && telescoped < bound;
    RotationDistanceReport {
        seed_distance: seed,
        seed_ok,
        increments,
        increments_ok: oks,
        telescoped,
        bound,
        closeness_enforced: ladder.closeness == Enforcement::Enforce,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert_eq!(constant_c(0, 2), BigInt::one());
        assert_eq!(constant_c(1, 2), BigInt::from(2));
        assert_eq!(constant_c(2, 3), BigInt::from(12));
    }

    #[test]
    fn first_l() {
        assert_eq!(default_l(1, &rat(1, 10), &[]), BigInt::from(80));
    }
}
