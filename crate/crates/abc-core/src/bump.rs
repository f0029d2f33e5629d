//! Smooth cut-off profiles sigma_delta and beta~_rho.
//!
//! Both are built from the transition S(t) = f(t) / (f(t) + f(1-t)) with
//! f(t) = exp(-1/t). S vanishes to infinite order at 0, equals 1 from t = 1 on,
//! and sup S' = S'(1/2) = 2.

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::geometry::{int, rat, to_f64, Rational};

/// S(t); exact 0 for t <= 0 and exact 1 for t >= 1.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let z = 1.0 / t - 1.0 / (1.0 - t);
        1.0 / (1.0 + z.exp())
    }
}

/// ln S(t) for 0 < t < 1, finite even where S underflows.
pub fn ln_smooth_step(t: f64) -> f64 {
    if t >= 1.0 {
        return 0.0;
    }
    if t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = 1.0 / t - 1.0 / (1.0 - t);
    // -ln(1 + e^z)
    if z > 0.0 {
        -(z + (-z).exp().ln_1p())
    } else {
        -(z.exp().ln_1p())
    }
}

pub fn smooth_step_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let s = smooth_step(t);
    s * (1.0 - s) * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BumpProfile {
    pub rho: Rational,
    pub delta: Rational,
}

impl BumpProfile {
    pub fn new(rho: Rational, delta: Rational) -> Self {
        BumpProfile { rho, delta }
    }

    fn r(&self) -> f64 {
        to_f64(&self.rho)
    }

    fn d(&self) -> f64 {
        to_f64(&self.delta)
    }

    /// Exact value of sigma_delta where it is constant.
    pub fn sigma_exact(&self, x: &Rational) -> Option<Rational> {
        let half_d = &self.delta / int(2);
        let one = Rational::one();
        if x <= &half_d || x >= &(&one - &half_d) {
            Some(Rational::zero())
        } else if x >= &self.delta && x <= &(&one - &self.delta) {
            Some(one)
        } else {
            None
        }
    }

    pub fn sigma(&self, x: f64) -> f64 {
        let d = self.d();
        let x = if x > 0.5 { 1.0 - x } else { x };
        smooth_step((x - d / 2.0) / (d / 2.0))
    }

    pub fn sigma_deriv(&self, x: f64) -> f64 {
        let d = self.d();
        if x > 0.5 {
            -smooth_step_deriv((1.0 - x - d / 2.0) / (d / 2.0)) * 2.0 / d
        } else {
            smooth_step_deriv((x - d / 2.0) / (d / 2.0)) * 2.0 / d
        }
    }

    /// Exact value of beta~_rho on its zero and linear pieces.
    pub fn beta_exact(&self, x: &Rational) -> Option<Rational> {
        let half = rat(1, 2);
        let one = Rational::one();
        if x <= &half || x >= &(&one - &self.rho / int(4)) {
            Some(Rational::zero())
        } else if x >= &((&one + &self.rho) / int(2)) && x <= &(&one - &self.rho / int(2)) {
            Some(x - half)
        } else {
            None
        }
    }

    pub fn beta(&self, x: f64) -> f64 {
        let r = self.r();
        let t = x - 0.5;
        if x <= 0.5 || x >= 1.0 - r / 4.0 {
            0.0
        } else if x <= (1.0 + r) / 2.0 {
            t * smooth_step(t / (r / 2.0))
        } else if x <= 1.0 - r / 2.0 {
            t
        } else {
            t * (1.0 - smooth_step((x - (1.0 - r / 2.0)) / (r / 4.0)))
        }
    }

    pub fn beta_deriv(&self, x: f64) -> f64 {
        let r = self.r();
        let t = x - 0.5;
        if x <= 0.5 || x >= 1.0 - r / 4.0 {
            0.0
        } else if x <= (1.0 + r) / 2.0 {
            let u = t / (r / 2.0);
            smooth_step(u) + u * smooth_step_deriv(u)
        } else if x <= 1.0 - r / 2.0 {
            1.0
        } else {
            let v = (x - (1.0 - r / 2.0)) / (r / 4.0);
            (1.0 - smooth_step(v)) - t * smooth_step_deriv(v) * 4.0 / r
        }
    }

    /// ln of (x - 1/2) - beta~(x) on the descending piece.
    pub fn beta_deficit_ln(&self, x: f64) -> f64 {
        let r = self.r();
        let v = (x - (1.0 - r / 2.0)) / (r / 4.0);
        (x - 0.5).ln() + ln_smooth_step(v)
    }

    /// sigma at a rational point; the local coordinate is formed exactly so
    /// that plateaus survive for delta below the f64 resolution near 1.
    pub fn sigma_at(&self, x: &Rational) -> f64 {
        let one = Rational::one();
        let y = if x > &rat(1, 2) { &one - x } else { x.clone() };
        let h = &self.delta / int(2);
        smooth_step(to_f64(&((y - &h) / &h)))
    }

    /// beta~ and its derivative at a rational point, pieces chosen exactly.
    pub fn beta_at(&self, x: &Rational) -> (f64, f64) {
        let one = Rational::one();
        let r = &self.rho;
        let t = x - rat(1, 2);
        let tf = to_f64(&t);
        if !t.is_positive() || x >= &(&one - r / int(4)) {
            (0.0, 0.0)
        } else if x <= &((&one + r) / int(2)) {
            let u = to_f64(&(&t / (r / int(2))));
            (tf * smooth_step(u), smooth_step(u) + u * smooth_step_deriv(u))
        } else if x <= &(&one - r / int(2)) {
            (tf, 1.0)
        } else {
            let v = to_f64(&((x - (&one - r / int(2))) / (r / int(4))));
            (tf * (1.0 - smooth_step(v)), (1.0 - smooth_step(v)) - tf * smooth_step_deriv(v) * 4.0 / to_f64(r))
        }
    }

    /// 1 + 4/rho bounds |beta~'|.
    pub fn beta_deriv_bound(&self) -> Rational {
        Rational::one() + int(4) / &self.rho
    }

    /// (2 - rho)/4 bounds beta~ from above (strictly).
    pub fn beta_bound(&self) -> Rational {
        (int(2) - &self.rho) / int(4)
    }

    /// 4/delta bounds |sigma'|.
    pub fn sigma_deriv_bound(&self) -> Rational {
        int(4) / &self.delta
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditItem {
    pub name: String,
    pub points: usize,
    pub violations: usize,
    pub first_violation: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BumpAudit {
    pub rho: String,
    pub delta: String,
    pub grid: u64,
    pub items: Vec<AuditItem>,
    pub pass: bool,
}

struct Tally {
    item: AuditItem,
}

impl Tally {
    fn new(name: &str) -> Self {
        Tally { item: AuditItem { name: name.to_string(), points: 0, violations: 0, first_violation: None } }
    }

    fn record(&mut self, ok: bool, x: &Rational) {
        self.item.points += 1;
        if !ok {
            self.item.violations += 1;
            if self.item.first_violation.is_none() {
                self.item.first_violation = Some(x.to_string());
            }
        }
    }
}

/// Checks the three sigma plateau identities and the six beta~ constraints on
/// a uniform rational grid plus the breakpoints.
pub fn bump_audit(p: &BumpProfile, grid: u64) -> BumpAudit {
    let one = Rational::one();
    let rho = &p.rho;
    let delta = &p.delta;
    let mut xs: Vec<Rational> = (0..=grid).map(|i| Rational::new(i.into(), grid.into())).collect();
    for b in [
        delta / int(2),
        delta.clone(),
        &one - delta,
        &one - delta / int(2),
        rat(1, 2),
        (&one + rho) / int(2),
        &one - rho / int(2),
        &one - rho / int(4),
        (int(2) + rho) / int(4),
    ] {
        xs.push(b);
    }
    xs.sort();
    xs.dedup();

    let mut s1 = Tally::new("sigma = 0 for x <= delta/2");
    let mut s2 = Tally::new("sigma = 1 on [delta, 1-delta]");
    let mut s3 = Tally::new("sigma = 0 for x >= 1-delta/2");
    let mut b1 = Tally::new("beta = 0 for x <= 1/2");
    let mut b2 = Tally::new("beta = x - 1/2 on [(1+rho)/2, 1-rho/2]");
    let mut b3 = Tally::new("beta = 0 for x >= 1-rho/4");
    let mut b4 = Tally::new("beta' >= 0 on [1/2, (1+rho)/2]");
    let mut b5 = Tally::new("beta < x - 1/2 on (1-rho/2, 1-rho/4]");
    let mut b6 = Tally::new("beta((2+rho)/4 + x) > x on [0, rho/4]");
    let mut range = Tally::new("0 <= beta < (2-rho)/4");

    let bmax = p.beta_bound();
    for x in &xs {
        let xf = to_f64(x);
        let t = to_f64(&(x - rat(1, 2)));
        let (bx, dbx) = p.beta_at(x);
        if x <= &(delta / int(2)) {
            s1.record(p.sigma_exact(x) == Some(Rational::zero()) && p.sigma_at(x) == 0.0, x);
        }
        if x >= delta && x <= &(&one - delta) {
            s2.record(p.sigma_exact(x) == Some(one.clone()) && p.sigma_at(x) == 1.0, x);
        }
        if x >= &(&one - delta / int(2)) {
            s3.record(p.sigma_exact(x) == Some(Rational::zero()) && p.sigma_at(x) == 0.0, x);
        }
        if x <= &rat(1, 2) {
            b1.record(p.beta_exact(x) == Some(Rational::zero()) && bx == 0.0, x);
        }
        if x >= &((&one + rho) / int(2)) && x <= &(&one - rho / int(2)) {
            b2.record(p.beta_exact(x) == Some(x - rat(1, 2)), x);
        }
        if x >= &(&one - rho / int(4)) {
            b3.record(p.beta_exact(x) == Some(Rational::zero()) && bx == 0.0, x);
        }
        if x >= &rat(1, 2) && x <= &((&one + rho) / int(2)) {
            b4.record(dbx >= 0.0, x);
        }
        if x > &(&one - rho / int(2)) && x <= &(&one - rho / int(4)) {
            // the deficit (x - 1/2)(S(v)) is positive; its log stays finite
            let v = to_f64(&((x - (&one - rho / int(2))) / (rho / int(4))));
            b5.record((t.ln() + ln_smooth_step(v)).is_finite() && bx <= t, x);
        }
        let shift = (int(2) + rho) / int(4);
        if x <= &(rho / int(4)) {
            let (v, _) = p.beta_at(&(&shift + x));
            b6.record(v > xf || (x.is_zero() && v > 0.0), x);
        }
        // exact on the constant and linear pieces; elsewhere 0 <= beta <= x - 1/2 < bound
        let in_range = match p.beta_exact(x) {
            Some(v) => !v.is_negative() && v < bmax,
            None => bx >= 0.0 && bx <= t && x - rat(1, 2) < bmax,
        };
        range.record(in_range && !x.is_negative(), x);
    }
    let items: Vec<AuditItem> = [s1, s2, s3, b1, b2, b3, b4, b5, b6, range].into_iter().map(|t| t.item).collect();
    let pass = items.iter().all(|i| i.violations == 0 && i.points > 0);
    BumpAudit { rho: rho.to_string(), delta: delta.to_string(), grid, items, pass }
}
