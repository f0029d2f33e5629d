//! Exact rational geometry on T^2 x [0,1]^(d-2).
//!
//! Angles live on the circle R/Z and are stored as reduced fractions in [0,1).
//! Circle intervals are (lo, len) pairs and get split at the seam before any
//! interval algebra, so everything below works on plain closed intervals.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn rat(n: i64, d: i64) -> Rational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int<T: Into<BigInt>>(n: T) -> Rational {
    BigRational::from_integer(n.into())
}

pub fn frac(x: &Rational) -> Rational {
    x - x.floor()
}

pub fn rmin(a: &Rational, b: &Rational) -> Rational {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn rmax(a: &Rational, b: &Rational) -> Rational {
    if a >= b {
        a.clone()
    } else {
        b.clone()
    }
}

/// Lossy conversion for plotting and diagnostics only.
pub fn to_f64(x: &Rational) -> f64 {
    match (x.numer().to_f64(), x.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // scale both down so the quotient survives
            let shift = x.denom().bits().max(x.numer().bits()).saturating_sub(1000);
            let n = (x.numer() >> shift).to_f64().unwrap_or(f64::NAN);
            let d = (x.denom() >> shift).to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

/// Point of the circle, canonical representative in [0,1).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CircleValue(Rational);

impl CircleValue {
    pub fn new(x: Rational) -> Self {
        CircleValue(frac(&x))
    }

    pub fn zero() -> Self {
        CircleValue(Rational::zero())
    }

    pub fn value(&self) -> &Rational {
        &self.0
    }

    pub fn add(&self, x: &Rational) -> Self {
        CircleValue::new(&self.0 + x)
    }
}

impl fmt::Display for CircleValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    pub lo: Rational,
    pub hi: Rational,
}

impl Interval {
    pub fn new(lo: Rational, hi: Rational) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidGeometry(format!("interval [{lo}, {hi}] is reversed")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn len(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn overlap(&self, other: &Interval) -> Rational {
        let lo = rmax(&self.lo, &other.lo);
        let hi = rmin(&self.hi, &other.hi);
        if hi > lo {
            hi - lo
        } else {
            Rational::zero()
        }
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn contains_value(&self, x: &Rational) -> bool {
        &self.lo <= x && x <= &self.hi
    }
}

/// Closed arc `lo + [0, len]` of the circle, `0 < len <= 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CircleInterval {
    pub lo: CircleValue,
    pub len: Rational,
}

impl CircleInterval {
    pub fn new(lo: Rational, len: Rational) -> Result<Self> {
        if !len.is_positive() || len > Rational::one() {
            return Err(Error::InvalidGeometry(format!("arc length {len} not in (0,1]")));
        }
        Ok(CircleInterval { lo: CircleValue::new(lo), len })
    }

    pub fn from_bounds(lo: Rational, hi: Rational) -> Result<Self> {
        let len = &hi - &lo;
        Self::new(lo, len)
    }

    pub fn full() -> Self {
        CircleInterval { lo: CircleValue::zero(), len: Rational::one() }
    }

    /// Plain intervals inside [0,1] covering the arc.
    pub fn pieces(&self) -> Vec<Interval> {
        let lo = self.lo.value().clone();
        let hi = &lo + &self.len;
        let one = Rational::one();
        if hi <= one {
            vec![Interval { lo, hi }]
        } else {
            vec![
                Interval { lo, hi: one.clone() },
                Interval { lo: Rational::zero(), hi: hi - one },
            ]
        }
    }

    pub fn overlap(&self, other: &CircleInterval) -> Rational {
        let mut total = Rational::zero();
        for a in self.pieces() {
            for b in other.pieces() {
                total += a.overlap(&b);
            }
        }
        total
    }

    pub fn shift(&self, x: &Rational) -> Self {
        CircleInterval { lo: self.lo.add(x), len: self.len.clone() }
    }

    pub fn contains(&self, other: &CircleInterval) -> bool {
        if self.len.is_one() {
            return true;
        }
        let offset = frac(&(other.lo.value() - self.lo.value()));
        offset + &other.len <= self.len
    }

    pub fn contains_value(&self, x: &CircleValue) -> bool {
        frac(&(x.value() - self.lo.value())) <= self.len
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Point {
    pub theta1: CircleValue,
    pub theta2: CircleValue,
    pub fiber: Vec<Rational>,
}

impl Point {
    pub fn new(theta1: Rational, theta2: Rational, fiber: Vec<Rational>) -> Self {
        Point { theta1: CircleValue::new(theta1), theta2: CircleValue::new(theta2), fiber }
    }

    pub fn translate(&self, a: &Rational, b: &Rational) -> Self {
        Point { theta1: self.theta1.add(a), theta2: self.theta2.add(b), fiber: self.fiber.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Box {
    pub theta1: CircleInterval,
    pub theta2: CircleInterval,
    pub fiber: Vec<Interval>,
}

impl Box {
    pub fn new(theta1: CircleInterval, theta2: CircleInterval, fiber: Vec<Interval>) -> Result<Self> {
        for f in &fiber {
            if f.lo.is_negative() || f.hi > Rational::one() {
                return Err(Error::InvalidGeometry(format!("fiber interval [{}, {}] leaves [0,1]", f.lo, f.hi)));
            }
        }
        Ok(Box { theta1, theta2, fiber })
    }

    /// `[lo1, hi1] x [lo2, hi2] x fiber`, bounds taken on the universal cover.
    pub fn from_bounds(
        lo1: Rational,
        hi1: Rational,
        lo2: Rational,
        hi2: Rational,
        fiber: Vec<Interval>,
    ) -> Result<Self> {
        Box::new(CircleInterval::from_bounds(lo1, hi1)?, CircleInterval::from_bounds(lo2, hi2)?, fiber)
    }

    pub fn dim(&self) -> usize {
        2 + self.fiber.len()
    }

    pub fn fiber_measure(&self) -> Rational {
        self.fiber.iter().fold(Rational::one(), |acc, f| acc * f.len())
    }

    pub fn measure(&self) -> Rational {
        &self.theta1.len * &self.theta2.len * self.fiber_measure()
    }

    pub fn intersection_measure(&self, other: &Box) -> Rational {
        let a = self.theta1.overlap(&other.theta1);
        if a.is_zero() {
            return a;
        }
        let b = self.theta2.overlap(&other.theta2);
        if b.is_zero() {
            return b;
        }
        let mut m = a * b;
        for (f, g) in self.fiber.iter().zip(&other.fiber) {
            m *= f.overlap(g);
            if m.is_zero() {
                break;
            }
        }
        m
    }

    pub fn translate(&self, a: &Rational, b: &Rational) -> Box {
        Box { theta1: self.theta1.shift(a), theta2: self.theta2.shift(b), fiber: self.fiber.clone() }
    }

    pub fn contains_box(&self, other: &Box) -> bool {
        self.theta1.contains(&other.theta1)
            && self.theta2.contains(&other.theta2)
            && self.fiber.iter().zip(&other.fiber).all(|(f, g)| f.contains(g))
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        self.theta1.contains_value(&p.theta1)
            && self.theta2.contains_value(&p.theta2)
            && self.fiber.iter().zip(&p.fiber).all(|(f, x)| f.contains_value(x))
    }

    /// Seam-free pieces as plain boxes `[a1,b1] x [a2,b2] x fiber`.
    pub fn plain_pieces(&self) -> Vec<PlainBox> {
        let mut out = Vec::new();
        for a in self.theta1.pieces() {
            for b in self.theta2.pieces() {
                out.push(PlainBox { t1: a.clone(), t2: b, fiber: self.fiber.clone() });
            }
        }
        out
    }

    fn sort_key(&self) -> (&Rational, &Rational, &Rational, &Rational, &Vec<Interval>) {
        (self.theta1.lo.value(), self.theta2.lo.value(), &self.theta1.len, &self.theta2.len, &self.fiber)
    }
}

impl PartialOrd for Box {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Box {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainBox {
    pub t1: Interval,
    pub t2: Interval,
    pub fiber: Vec<Interval>,
}

impl PlainBox {
    pub fn overlaps(&self, other: &PlainBox) -> bool {
        self.t1.overlap(&other.t1).is_positive()
            && self.t2.overlap(&other.t2).is_positive()
            && self.fiber.iter().zip(&other.fiber).all(|(f, g)| f.overlap(g).is_positive())
    }

    pub fn intersection_measure(&self, other: &PlainBox) -> Rational {
        let mut m = self.t1.overlap(&other.t1) * self.t2.overlap(&other.t2);
        for (f, g) in self.fiber.iter().zip(&other.fiber) {
            if m.is_zero() {
                break;
            }
            m *= f.overlap(g);
        }
        m
    }
}

/// R_{a,b}^power applied to a box.
pub fn rotate(b: &Box, alpha: &CircleValue, alpha_prime: &CircleValue, power: &BigInt) -> Box {
    let p = int(power.clone());
    b.translate(&(alpha.value() * &p), &(alpha_prime.value() * &p))
}

/// Sweep over theta1, visiting every pair of pieces from different boxes whose
/// theta1 ranges overlap. The visitor returns false to stop.
fn sweep<F: FnMut(usize, usize, &PlainBox, &PlainBox) -> bool>(boxes: &[&Box], mut visit: F) {
    let mut pieces: Vec<(usize, PlainBox)> = Vec::with_capacity(boxes.len() * 2);
    for (idx, b) in boxes.iter().enumerate() {
        for p in b.plain_pieces() {
            pieces.push((idx, p));
        }
    }
    pieces.sort_by(|a, b| a.1.t1.lo.cmp(&b.1.t1.lo).then(a.0.cmp(&b.0)));
    let mut active: Vec<usize> = Vec::new();
    for cur in 0..pieces.len() {
        let lo = pieces[cur].1.t1.lo.clone();
        active.retain(|&a| pieces[a].1.t1.hi > lo);
        for &a in &active {
            if pieces[a].0 != pieces[cur].0 && !visit(pieces[a].0, pieces[cur].0, &pieces[a].1, &pieces[cur].1) {
                return;
            }
        }
        active.push(cur);
    }
}

/// First pair of boxes overlapping in positive measure, if any.
pub fn find_overlap(boxes: &[Box]) -> Option<(usize, usize)> {
    let refs: Vec<&Box> = boxes.iter().collect();
    let mut found = None;
    sweep(&refs, |i, j, p, q| {
        if p.overlaps(q) {
            found = Some((i.min(j), i.max(j)));
            false
        } else {
            true
        }
    });
    found
}

/// Finite union of pairwise disjoint boxes.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BoxUnion {
    boxes: Vec<Box>,
}

impl BoxUnion {
    pub fn empty() -> Self {
        BoxUnion { boxes: Vec::new() }
    }

    /// Sorts, merges theta1-abutting boxes with identical cross-sections and
    /// rejects positive-measure overlaps.
    pub fn new(boxes: Vec<Box>) -> Result<Self> {
        let boxes = canonicalize(boxes);
        if let Some((i, j)) = find_overlap(&boxes) {
            return Err(Error::Overlap(i, j));
        }
        Ok(BoxUnion { boxes })
    }

    pub fn boxes(&self) -> &[Box] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn measure(&self) -> Rational {
        self.boxes.iter().fold(Rational::zero(), |acc, b| acc + b.measure())
    }

    pub fn rotate(&self, alpha: &CircleValue, alpha_prime: &CircleValue, power: &BigInt) -> BoxUnion {
        // translations preserve disjointness; only the order needs restoring
        let mut boxes: Vec<Box> = self.boxes.iter().map(|b| rotate(b, alpha, alpha_prime, power)).collect();
        boxes.sort();
        BoxUnion { boxes }
    }

    pub fn translate(&self, a: &Rational, b: &Rational) -> BoxUnion {
        let mut boxes: Vec<Box> = self.boxes.iter().map(|x| x.translate(a, b)).collect();
        boxes.sort();
        BoxUnion { boxes }
    }

    pub fn intersection_measure(&self, other: &BoxUnion) -> Rational {
        let n = self.boxes.len();
        let refs: Vec<&Box> = self.boxes.iter().chain(other.boxes.iter()).collect();
        let mut total = Rational::zero();
        sweep(&refs, |i, j, p, q| {
            if (i < n) != (j < n) {
                total += p.intersection_measure(q);
            }
            true
        });
        total
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        self.boxes.iter().any(|b| b.contains_point(p))
    }
}

fn canonicalize(mut boxes: Vec<Box>) -> Vec<Box> {
    boxes.sort_by(|a, b| {
        (&a.theta2, &a.fiber, a.theta1.lo.value())
            .cmp(&(&b.theta2, &b.fiber, b.theta1.lo.value()))
            .then(a.theta1.len.cmp(&b.theta1.len))
    });
    let mut out: Vec<Box> = Vec::with_capacity(boxes.len());
    for b in boxes {
        if let Some(last) = out.last_mut() {
            let end = frac(&(last.theta1.lo.value() + &last.theta1.len));
            let total = &last.theta1.len + &b.theta1.len;
            if last.theta2 == b.theta2
                && last.fiber == b.fiber
                && &end == b.theta1.lo.value()
                && last.theta1.len < Rational::one()
                && total <= Rational::one()
            {
                last.theta1.len = total;
                continue;
            }
        }
        out.push(b);
    }
    out.sort();
    out
}

/// Exact measure of `a Δ b`.
pub fn symmetric_difference_measure(a: &BoxUnion, b: &BoxUnion) -> Rational {
    a.measure() + b.measure() - a.intersection_measure(b) * int(2)
}

/// Slope-one strip P^{(kind)}_{j1,j2,eps} times the fiber cube [fiber_eps, 1-fiber_eps]^(d-2).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parallelogram {
    pub kind: u8,
    pub j1: BigInt,
    pub j2: BigInt,
    pub eps: Rational,
    pub q: BigInt,
    pub q_prime: BigInt,
    pub fiber_eps: Rational,
}

/// Where a box sits inside a strip: slack to the lower and upper boundary lines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StripMargins {
    pub lower: Rational,
    pub upper: Rational,
}

impl Parallelogram {
    pub fn new(kind: u8, j1: BigInt, j2: BigInt, eps: Rational, q: BigInt, q_prime: BigInt, fiber_eps: Rational) -> Result<Self> {
        if kind != 1 && kind != 2 {
            return Err(Error::ParameterRange(format!("parallelogram kind {kind}")));
        }
        if j1.is_negative() || j1 >= q || j2.is_negative() || j2 >= q_prime {
            return Err(Error::ParameterRange(format!("indices ({j1},{j2}) outside {q} x {q_prime}")));
        }
        if eps.is_negative() || eps >= rat(1, 4) {
            return Err(Error::ParameterRange(format!("eps {eps} not in [0,1/4)")));
        }
        Ok(Parallelogram { kind, j1, j2, eps, q, q_prime, fiber_eps })
    }

    fn lambda(&self) -> Rational {
        int(&self.q * &self.q_prime)
    }

    /// Offset of the strip coordinate (theta2-theta1 for kind 1, theta1-theta2 for kind 2).
    pub fn offset(&self) -> Rational {
        let a = BigRational::new(self.j2.clone(), self.q_prime.clone());
        let b = BigRational::new(self.j1.clone(), self.q.clone());
        if self.kind == 1 {
            a - b
        } else {
            b - a
        }
    }

    pub fn lower_edge(&self) -> Rational {
        self.offset() + &self.eps / (int(2) * self.lambda())
    }

    pub fn width(&self) -> Rational {
        (Rational::one() - &self.eps * int(2)) / (int(2) * self.lambda())
    }

    /// Minimum of the strip coordinate over the box and its total spread.
    pub fn strip_range(&self, b: &Box) -> (Rational, Rational) {
        let spread = &b.theta1.len + &b.theta2.len;
        let lo = if self.kind == 1 {
            b.theta2.lo.value() - b.theta1.lo.value() - &b.theta1.len
        } else {
            b.theta1.lo.value() - b.theta2.lo.value() - &b.theta2.len
        };
        (lo, spread)
    }

    /// Signed slack of the box inside the open strip, measured mod 1 from the lower line.
    pub fn margins(&self, b: &Box) -> StripMargins {
        let (lo, spread) = self.strip_range(b);
        let t = frac(&(lo - self.lower_edge()));
        let upper = self.width() - &t - spread;
        StripMargins { lower: t, upper }
    }

    pub fn fiber_ok(&self, b: &Box) -> bool {
        let lo = self.fiber_eps.clone();
        let hi = Rational::one() - &self.fiber_eps;
        b.fiber.iter().all(|f| f.lo >= lo && f.hi <= hi)
    }

    /// True iff the closed box lies in the open strip (all corners strictly inside).
    pub fn contains(&self, b: &Box) -> bool {
        let m = self.margins(b);
        m.lower.is_positive() && m.upper.is_positive() && self.fiber_ok(b)
    }
}
