//! The conjugation maps h_{n,1}, h_{n,2} on their good domains.
//!
//! Coordinates inside a grid cell of side 1/(q q') are written locally as
//! x = q q' theta1 - c1, y = q q' theta2 - c2. On good cells h_{n,1} is an affine
//! map with diagonal linear part and h_{n,2} is one of the two unimodular maps
//!
//!   A_1(x, y) = (x, y + x - 1/2),   A_2(x, y) = (x - y + 1/2, x).
//!
//! Nothing outside the good domain is evaluated; such queries are errors.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::bump::BumpProfile;
use crate::combinatorics::{offsets, StageParams};
use crate::error::{Error, Result};
use crate::geometry::{frac, int, rat, Box, Interval, Point, Rational};

/// Largest number of good cells enumerated exhaustively.
pub const CELL_LIMIT: u64 = 400_000;

struct Scales {
    lam: Rational,
    lam_i: BigInt,
    gamma: Rational,
    gamma_i: BigInt,
    nl: BigInt,
    eps: Rational,
    d: u32,
}

impl Scales {
    fn of(stage: &StageParams) -> Self {
        let lam_i = stage.lambda();
        let gamma_i = stage.gamma();
        Scales {
            lam: int(lam_i.clone()),
            gamma: int(gamma_i.clone()),
            nl: BigInt::from(stage.n) * &lam_i,
            lam_i,
            gamma_i,
            eps: stage.eps.clone(),
            d: stage.d,
        }
    }

    fn ell_range(&self, ell: &BigInt) -> Interval {
        let l = int(ell.clone());
        let h = &self.eps / int(2);
        Interval { lo: (&l + &h) / &self.gamma, hi: (l + Rational::one() - h) / &self.gamma }
    }

    fn fiber_ok(&self, fiber: &[Rational]) -> bool {
        let hi = Rational::one() - &self.eps;
        fiber.iter().all(|r| r >= &self.eps && r <= &hi)
    }

    fn digits(&self, ell: &BigInt) -> Vec<BigInt> {
        let mut rest = ell.clone();
        (2..self.d)
            .map(|_| {
                let (q, r) = rest.div_mod_floor(&self.nl);
                rest = q;
                r
            })
            .collect()
    }
}

/// Grid cell and local coordinates of a point.
struct Local {
    c1: BigInt,
    c2: BigInt,
    x: Rational,
    y: Rational,
}

fn locate(sc: &Scales, p: &Point) -> Local {
    let u = p.theta1.value() * &sc.lam;
    let v = p.theta2.value() * &sc.lam;
    let c1 = u.floor().to_integer();
    let c2 = v.floor().to_integer();
    Local { x: u - int(c1.clone()), y: v - int(c2.clone()), c1, c2 }
}

fn outside(what: &str, p: &Point) -> Error {
    Error::OutsideGoodDomain(format!("{what}: ({}, {}, {:?})", p.theta1, p.theta2, p.fiber.iter().map(|r| r.to_string()).collect::<Vec<_>>()))
}

/// Index of a good cell: tower half s, grid cell (c1, c2) and fiber slab ell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CellIndex {
    pub s: u8,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub c1: BigInt,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub c2: BigInt,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub ell: BigInt,
}

fn half_coords(y: &Rational) -> (u8, Rational) {
    let half = rat(1, 2);
    if y >= &half {
        (1, y - half)
    } else {
        (2, y.clone())
    }
}

/// Cell of the forward domain of h_{n,1}: S_{i,j,eps} (margins eps/4) for d = 2,
/// the tilde cells (margins eps/2, fiber slabs) for d > 2.
fn h1_domain_cell(sc: &Scales, p: &Point) -> Option<(CellIndex, Rational, Vec<BigInt>)> {
    let loc = locate(sc, p);
    let (s, yh) = half_coords(&loc.y);
    let m = if sc.d == 2 { &sc.eps / int(4) } else { &sc.eps / int(2) };
    let one = Rational::one();
    if loc.x < m || loc.x > &one - &m || yh < m || yh > rat(1, 2) - &m {
        return None;
    }
    let mut ell = BigInt::zero();
    let mut weight = BigInt::one();
    let mut digits = Vec::new();
    let nl = int(sc.nl.clone());
    for r in &p.fiber {
        let scaled = r * &nl;
        let lr = scaled.floor().to_integer();
        let t = scaled - int(lr.clone());
        if t < sc.eps || t > &one - &sc.eps {
            return None;
        }
        ell += &lr * &weight;
        weight *= &sc.nl;
        digits.push(lr);
    }
    Some((CellIndex { s, c1: loc.c1, c2: loc.c2, ell }, loc.x, digits))
}

/// Cell of the inverse domain of h_{n,1}.
fn h1_image_cell(sc: &Scales, p: &Point) -> Option<(CellIndex, Rational)> {
    let loc = locate(sc, p);
    let (s, yh) = half_coords(&loc.y);
    let one = Rational::one();
    if sc.d == 2 {
        let m = &sc.eps / int(4);
        if loc.x < m || loc.x > &one - &m || yh < m || yh > rat(1, 2) - &m {
            return None;
        }
        return Some((CellIndex { s, c1: loc.c1, c2: loc.c2, ell: BigInt::zero() }, loc.x));
    }
    let m = &sc.eps / int(2);
    let ell = (&loc.x * &sc.gamma).floor().to_integer();
    if !sc.ell_range(&ell).contains_value(&loc.x) || yh < m || yh > rat(1, 2) - &m || !sc.fiber_ok(&p.fiber) {
        return None;
    }
    Some((CellIndex { s, c1: loc.c1, c2: loc.c2, ell }, loc.x))
}

fn grid_ij(stage: &StageParams, c1: &BigInt, c2: &BigInt) -> (BigInt, BigInt) {
    (c1.mod_floor(&stage.q_prime), c2.mod_floor(&stage.q))
}

/// h_{n,1} at a point of its good domain.
pub fn h1_forward(stage: &StageParams, p: &Point) -> Result<Point> {
    let sc = Scales::of(stage);
    let (cell, x, digits) = h1_domain_cell(&sc, p).ok_or_else(|| outside("h1 forward", p))?;
    let (i, j) = grid_ij(stage, &cell.c1, &cell.c2);
    let (a, ap) = offsets(stage, &i, &j, cell.s)?;
    let xs = (int(cell.ell.clone()) + x) / &sc.gamma;
    let nl = int(sc.nl.clone());
    let fiber = p.fiber.iter().zip(&digits).map(|(r, lr)| r * &nl - int(lr.clone())).collect();
    let t1 = (int(cell.c1) + xs) / &sc.lam + Rational::new(a, stage.q.clone());
    let t2 = p.theta2.value() + Rational::new(ap, stage.q_prime.clone());
    Ok(Point::new(t1, t2, fiber))
}

/// h_{n,1}^{-1} at a point of its good domain.
pub fn h1_inverse(stage: &StageParams, p: &Point) -> Result<Point> {
    let sc = Scales::of(stage);
    let (cell, xs) = h1_image_cell(&sc, p).ok_or_else(|| outside("h1 inverse", p))?;
    let (i, j) = grid_ij(stage, &cell.c1, &cell.c2);
    let (a, ap) = offsets(stage, &i, &j, cell.s)?;
    let src = (&cell.c1 - &a * &stage.q_prime).mod_floor(&sc.lam_i);
    let x = &xs * &sc.gamma - int(cell.ell.clone());
    let nl = int(sc.nl.clone());
    let fiber = p.fiber.iter().zip(sc.digits(&cell.ell)).map(|(r, lr)| (r + int(lr)) / &nl).collect();
    let t1 = (int(src) + x) / &sc.lam;
    let t2 = p.theta2.value() - Rational::new(ap, stage.q_prime.clone());
    Ok(Point::new(t1, t2, fiber))
}

fn box_corners(b: &Box) -> (Point, Point) {
    let lo = Point::new(
        b.theta1.lo.value().clone(),
        b.theta2.lo.value().clone(),
        b.fiber.iter().map(|f| f.lo.clone()).collect(),
    );
    let hi = Point::new(
        b.theta1.lo.value() + &b.theta1.len,
        b.theta2.lo.value() + &b.theta2.len,
        b.fiber.iter().map(|f| f.hi.clone()).collect(),
    );
    (lo, hi)
}

fn box_from_corners(lo: &Point, hi: &Point) -> Result<Box> {
    let mut h1 = hi.theta1.value().clone();
    if &h1 <= lo.theta1.value() {
        h1 += Rational::one();
    }
    let mut h2 = hi.theta2.value().clone();
    if &h2 <= lo.theta2.value() {
        h2 += Rational::one();
    }
    let fiber = lo.fiber.iter().zip(&hi.fiber).map(|(a, b)| Interval::new(a.clone(), b.clone())).collect::<Result<Vec<_>>>()?;
    Box::from_bounds(lo.theta1.value().clone(), h1, lo.theta2.value().clone(), h2, fiber)
}

/// Image of a box lying in one forward good cell of h_{n,1}.
pub fn h1_forward_box(stage: &StageParams, b: &Box) -> Result<Box> {
    let sc = Scales::of(stage);
    let (lo, hi) = box_corners(b);
    let a = h1_domain_cell(&sc, &lo).map(|c| c.0);
    let c = h1_domain_cell(&sc, &hi).map(|c| c.0);
    if a.is_none() || a != c {
        return Err(Error::OutsideGoodDomain(format!("box not inside a single h1 cell: {b:?}")));
    }
    box_from_corners(&h1_forward(stage, &lo)?, &h1_forward(stage, &hi)?)
}

/// Image of a box lying in one good cell of h_{n,1}^{-1}.
pub fn h1_inverse_box(stage: &StageParams, b: &Box) -> Result<Box> {
    let sc = Scales::of(stage);
    let (lo, hi) = box_corners(b);
    let a = h1_image_cell(&sc, &lo).map(|c| c.0);
    let c = h1_image_cell(&sc, &hi).map(|c| c.0);
    if a.is_none() || a != c {
        return Err(Error::OutsideGoodDomain(format!("box not inside a single h1^-1 cell: {b:?}")));
    }
    box_from_corners(&h1_inverse(stage, &lo)?, &h1_inverse(stage, &hi)?)
}

/// F-cell membership for h_{n,2}: returns (s, ell).
fn f_cell(sc: &Scales, loc: &Local, fiber: &[Rational]) -> Option<(u8, BigInt)> {
    let ell = (&loc.x * &sc.gamma).floor().to_integer();
    if !sc.ell_range(&ell).contains_value(&loc.x) || !sc.fiber_ok(fiber) {
        return None;
    }
    let h = &sc.eps / int(2);
    let one = Rational::one();
    let upper = Interval { lo: (&one + &sc.eps) / int(2), hi: &one - &h };
    let lower = Interval { lo: h.clone(), hi: (&one - &sc.eps) / int(2) };
    if upper.contains_value(&loc.y) {
        Some((1, ell))
    } else if lower.contains_value(&loc.y) {
        Some((2, ell))
    } else {
        None
    }
}

/// h_{n,2} at a point of an F cell.
pub fn h2_forward(stage: &StageParams, p: &Point) -> Result<Point> {
    let sc = Scales::of(stage);
    let loc = locate(&sc, p);
    let (s, _) = f_cell(&sc, &loc, &p.fiber).ok_or_else(|| outside("h2 forward", p))?;
    let half = rat(1, 2);
    let (x, y) = if s == 1 {
        (loc.x.clone(), &loc.y + &loc.x - half)
    } else {
        (&loc.x - &loc.y + half, loc.x.clone())
    };
    Ok(Point::new((int(loc.c1) + x) / &sc.lam, (int(loc.c2) + y) / &sc.lam, p.fiber.clone()))
}

/// Slanted cell I^{(n,s)}_{j1,j2,ell} containing the point, if any.
fn i_cell(sc: &Scales, p: &Point) -> Option<(CellIndex, Rational, Rational)> {
    if !sc.fiber_ok(&p.fiber) {
        return None;
    }
    let u = p.theta1.value() * &sc.lam;
    let v = p.theta2.value() * &sc.lam;
    let h = &sc.eps / int(2);
    let band = Interval { lo: h, hi: (Rational::one() - &sc.eps) / int(2) };
    for s in [1u8, 2] {
        let (a, b) = if s == 1 { (&u, &v) } else { (&v, &u) };
        let ca = a.floor().to_integer();
        let xa = a - int(ca.clone());
        let ell = (&xa * &sc.gamma).floor().to_integer();
        if !sc.ell_range(&ell).contains_value(&xa) {
            continue;
        }
        let diff = b - a;
        let w = frac(&diff);
        if !band.contains_value(&w) {
            continue;
        }
        let cb = (&ca + diff.floor().to_integer()).mod_floor(&sc.lam_i);
        let (c1, c2) = if s == 1 { (ca, cb) } else { (cb, ca) };
        return Some((CellIndex { s, c1, c2, ell }, xa, w));
    }
    None
}

/// h_{n,2}^{-1} at a point of an I cell.
pub fn h2_inverse(stage: &StageParams, p: &Point) -> Result<Point> {
    let sc = Scales::of(stage);
    let (cell, xa, w) = i_cell(&sc, p).ok_or_else(|| outside("h2 inverse", p))?;
    let half = rat(1, 2);
    let (x, y) = if cell.s == 1 { (xa, w + half) } else { (xa, half - w) };
    Ok(Point::new((int(cell.c1) + x) / &sc.lam, (int(cell.c2) + y) / &sc.lam, p.fiber.clone()))
}

/// h_n = h_{n,2} o h_{n,1} on tilde cells.
pub fn hn_forward(stage: &StageParams, p: &Point) -> Result<Point> {
    h2_forward(stage, &h1_forward(stage, p)?)
}

/// h_n^{-1} on its good domain.
pub fn hn_inverse(stage: &StageParams, p: &Point) -> Result<Point> {
    h1_inverse(stage, &h2_inverse(stage, p)?)
}

/// The slanted cell I^{(n,s)}_{j1,j2,ell}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SlantedCell {
    pub s: u8,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub j1: BigInt,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub j2: BigInt,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub ell: BigInt,
    #[serde(skip)]
    lam: Rational,
    #[serde(skip)]
    gamma: Rational,
    #[serde(skip)]
    eps: Rational,
    #[serde(skip)]
    d: u32,
}

impl SlantedCell {
    pub fn new(stage: &StageParams, s: u8, j1: BigInt, j2: BigInt, ell: BigInt) -> Result<Self> {
        let lam = stage.lambda();
        if s != 1 && s != 2 {
            return Err(Error::ParameterRange(format!("tower index {s}")));
        }
        if j1.is_negative() || j1 >= lam || j2.is_negative() || j2 >= lam || ell.is_negative() || ell >= stage.gamma() {
            return Err(Error::ParameterRange(format!("slanted cell ({j1},{j2},{ell})")));
        }
        Ok(SlantedCell { s, j1, j2, ell, lam: int(lam), gamma: int(stage.gamma()), eps: stage.eps.clone(), d: stage.d })
    }

    fn scales(&self) -> (Rational, Rational, Rational, Rational) {
        let h = &self.eps / int(2);
        let l = int(self.ell.clone());
        let gl = &self.gamma * &self.lam;
        let x_lo = (&l + &h) / &gl;
        let x_hi = (l + Rational::one() - &h) / &gl;
        let w_lo = &h / &self.lam;
        let w_hi = (Rational::one() - &self.eps) / (int(2) * &self.lam);
        (x_lo, x_hi, w_lo, w_hi)
    }

    /// Exact containment of a closed box.
    pub fn contains_box(&self, b: &Box) -> bool {
        let (x_lo, x_hi, w_lo, w_hi) = self.scales();
        let (along, across, ja, jb) = if self.s == 1 {
            (&b.theta1, &b.theta2, &self.j1, &self.j2)
        } else {
            (&b.theta2, &b.theta1, &self.j2, &self.j1)
        };
        let t = frac(&(along.lo.value() - int(ja.clone()) / &self.lam));
        if t < x_lo || &t + &along.len > x_hi {
            return false;
        }
        let w = frac(&(across.lo.value() - along.lo.value() - &along.len - int(jb - ja) / &self.lam));
        if w < w_lo || &w + &along.len + &across.len > w_hi {
            return false;
        }
        let hi = Rational::one() - &self.eps;
        b.fiber.iter().all(|f| f.lo >= self.eps && f.hi <= hi)
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        let (x_lo, x_hi, w_lo, w_hi) = self.scales();
        let (a, b, ja, jb) = if self.s == 1 {
            (p.theta1.value(), p.theta2.value(), &self.j1, &self.j2)
        } else {
            (p.theta2.value(), p.theta1.value(), &self.j2, &self.j1)
        };
        let t = frac(&(a - int(ja.clone()) / &self.lam));
        let w = frac(&(b - a - int(jb - ja) / &self.lam));
        let hi = Rational::one() - &self.eps;
        t >= x_lo && t <= x_hi && w >= w_lo && w <= w_hi && p.fiber.iter().all(|r| r >= &self.eps && r <= &hi)
    }

    pub fn measure(&self) -> Rational {
        let one = Rational::one();
        let two_e = &self.eps * int(2);
        let side = (&one - &self.eps) / (&self.gamma * &self.lam);
        let width = (&one - &two_e) / (int(2) * &self.lam);
        let fiber = num_traits::pow(&one - &two_e, (self.d - 2) as usize);
        side * width * fiber
    }

    /// Corners of the theta-factor in the order of the defining parallelogram.
    pub fn corners(&self) -> Vec<(Rational, Rational)> {
        let (x_lo, x_hi, w_lo, w_hi) = self.scales();
        let ja = int(if self.s == 1 { self.j1.clone() } else { self.j2.clone() }) / &self.lam;
        let jb = int(if self.s == 1 { self.j2.clone() } else { self.j1.clone() }) / &self.lam;
        let mut out = Vec::new();
        for x in [&x_lo, &x_hi] {
            for w in [&w_lo, &w_hi] {
                let a = &ja + x;
                let b = &jb + x + w;
                let (t1, t2) = if self.s == 1 { (a, b) } else { (b, a) };
                out.push((frac(&t1), frac(&t2)));
            }
        }
        out
    }

    /// h_{n,2}^{-1}(I) as the box R_{b/q,b'/q'} S_{i,j,ell,eps}.
    pub fn preimage_box(&self) -> Box {
        let (x_lo, x_hi, _, _) = self.scales();
        let h = &self.eps / int(2);
        let (y_lo, y_hi) = if self.s == 1 {
            ((Rational::one() + &self.eps) / int(2), Rational::one() - &h)
        } else {
            (h.clone(), (Rational::one() - &self.eps) / int(2))
        };
        let j1 = int(self.j1.clone()) / &self.lam;
        let j2 = int(self.j2.clone()) / &self.lam;
        let fiber = (2..self.d).map(|_| Interval { lo: self.eps.clone(), hi: Rational::one() - &self.eps }).collect();
        Box::from_bounds(&j1 + x_lo, j1 + x_hi, &j2 + y_lo / &self.lam, j2 + y_hi / &self.lam, fiber).expect("cell is a valid box")
    }
}

/// The tilde cell S~^{(s)}_{i,j,ell,eps} (fiber slabs with eps margins).
pub fn tilde_cell(stage: &StageParams, i: &BigInt, j: &BigInt, ell: &BigInt, s: u8) -> Result<Box> {
    let sc = Scales::of(stage);
    if ell.is_negative() || ell >= &sc.gamma_i {
        return Err(Error::ParameterRange(format!("ell = {ell}")));
    }
    let h = &sc.eps / int(2);
    let base = if s == 1 { rat(1, 2) } else { Rational::zero() };
    let one = Rational::one();
    let nl = int(sc.nl.clone());
    let fiber = sc
        .digits(ell)
        .into_iter()
        .map(|lr| {
            let l = int(lr);
            Interval { lo: (&l + &sc.eps) / &nl, hi: (l + &one - &sc.eps) / &nl }
        })
        .collect();
    let i = int(i.clone());
    let j = int(j.clone());
    Box::from_bounds(
        (&i + &h) / &sc.lam,
        (&i + &one - &h) / &sc.lam,
        (&j + &base + &h) / &sc.lam,
        (j + base + rat(1, 2) - h) / &sc.lam,
        fiber,
    )
}

/// S^{(s)}_{i,j,ell,eps} at grid cell (c1, c2): the image side of h_{n,1}.
pub fn image_cell(stage: &StageParams, c1: &BigInt, c2: &BigInt, ell: &BigInt, s: u8) -> Box {
    let sc = Scales::of(stage);
    let r = sc.ell_range(ell);
    let h = &sc.eps / int(2);
    let base = if s == 1 { rat(1, 2) } else { Rational::zero() };
    let c1 = int(c1.clone());
    let c2 = int(c2.clone());
    let fiber = (2..sc.d).map(|_| Interval { lo: sc.eps.clone(), hi: Rational::one() - &sc.eps }).collect();
    Box::from_bounds(
        (&c1 + r.lo) / &sc.lam,
        (c1 + r.hi) / &sc.lam,
        (&c2 + &base + &h) / &sc.lam,
        (c2 + base + rat(1, 2) - h) / &sc.lam,
        fiber,
    )
    .expect("cell is a valid box")
}

/// h_n(S~^{(s)}_{i,j,ell,eps}) = I^{(n,s)}_{j1,j2,ell} with j1 = i + a q', j2 = j + a' q.
pub fn hn_image_of_tilde_cell(stage: &StageParams, i: &BigInt, j: &BigInt, ell: &BigInt, s: u8) -> Result<SlantedCell> {
    let (a, ap) = offsets(stage, i, j, s)?;
    let j1 = i + &a * &stage.q_prime;
    let j2 = j + &ap * &stage.q;
    SlantedCell::new(stage, s, j1, j2, ell.clone())
}

/// Exact square matrix with rational entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix(pub Vec<Vec<Rational>>);

impl Matrix {
    pub fn identity(n: usize) -> Self {
        Matrix((0..n).map(|i| (0..n).map(|j| if i == j { Rational::one() } else { Rational::zero() }).collect()).collect())
    }

    pub fn diagonal(d: Vec<Rational>) -> Self {
        let mut m = Matrix::identity(d.len());
        for (i, x) in d.into_iter().enumerate() {
            m.0[i][i] = x;
        }
        m
    }

    pub fn mul(&self, o: &Matrix) -> Matrix {
        let n = self.0.len();
        Matrix(
            (0..n)
                .map(|i| (0..n).map(|j| (0..n).fold(Rational::zero(), |acc, k| acc + &self.0[i][k] * &o.0[k][j])).collect())
                .collect(),
        )
    }

    /// Gaussian elimination over the rationals.
    pub fn det(&self) -> Rational {
        let mut a = self.0.clone();
        let n = a.len();
        let mut det = Rational::one();
        for c in 0..n {
            let Some(p) = (c..n).find(|&r| !a[r][c].is_zero()) else {
                return Rational::zero();
            };
            if p != c {
                a.swap(p, c);
                det = -det;
            }
            det *= &a[c][c];
            for r in c + 1..n {
                let f = &a[r][c] / &a[c][c];
                if f.is_zero() {
                    continue;
                }
                for k in c..n {
                    let v = &f * &a[c][k];
                    a[r][k] -= v;
                }
            }
        }
        det
    }

    /// max_i sum_j |a_ij|
    pub fn row_norm(&self) -> Rational {
        self.0.iter().map(|r| r.iter().fold(Rational::zero(), |acc, x| acc + x.abs())).max().unwrap_or_else(Rational::zero)
    }

    pub fn is_unit_triangular(&self) -> bool {
        let n = self.0.len();
        let diag = (0..n).all(|i| self.0[i][i].is_one());
        let lower = (0..n).all(|i| (i + 1..n).all(|j| self.0[i][j].is_zero()));
        let upper = (0..n).all(|i| (0..i).all(|j| self.0[i][j].is_zero()));
        diag && (lower || upper)
    }
}

fn embed(d: u32, m2: [[i64; 2]; 2]) -> Matrix {
    let mut m = Matrix::identity(d as usize);
    for i in 0..2 {
        for j in 0..2 {
            m.0[i][j] = int(m2[i][j]);
        }
    }
    m
}

/// Linear part of h_{n,1} on every good cell.
pub fn h1_linear(stage: &StageParams) -> Matrix {
    let sc = Scales::of(stage);
    let mut d = vec![Rational::one() / &sc.gamma, Rational::one()];
    d.extend((2..sc.d).map(|_| int(sc.nl.clone())));
    Matrix::diagonal(d)
}

/// Linear part of h_{n,2} on the F cells of type s.
pub fn h2_linear(d: u32, s: u8) -> Matrix {
    if s == 1 {
        embed(d, [[1, 0], [1, 1]])
    } else {
        embed(d, [[1, -1], [1, 0]])
    }
}

/// Unit-triangular shears whose product is the linear part of h_{n,2}.
pub fn h2_shear_factors(d: u32, s: u8) -> Vec<Matrix> {
    if s == 1 {
        vec![embed(d, [[1, 0], [1, 1]])]
    } else {
        vec![embed(d, [[1, 0], [1, 1]]), embed(d, [[1, -1], [0, 1]])]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureReport {
    pub method: String,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub pieces: BigInt,
    pub cells_checked: u64,
    pub determinants_one: bool,
    pub shears_unit_triangular: bool,
    pub equivariance_h1: bool,
    pub equivariance_h2: bool,
    pub round_trip: bool,
    pub failures: Vec<String>,
    pub pass: bool,
}

fn small_cells(stage: &StageParams) -> Option<(u64, u64)> {
    let lam = stage.lambda().to_u64()?;
    let gamma = stage.gamma().to_u64()?;
    let cells = 2u64.checked_mul(lam)?.checked_mul(lam)?.checked_mul(gamma)?;
    (cells <= CELL_LIMIT).then_some((lam, gamma))
}

/// Interior rational point of the tilde cell (used for exact sampling).
fn tilde_center(stage: &StageParams, c1: &BigInt, c2: &BigInt, ell: &BigInt, s: u8, shift: &Rational) -> Point {
    let b = tilde_cell(stage, c1, c2, ell, s).expect("valid cell");
    let mid = |lo: &Rational, len: &Rational| lo + len * shift;
    Point::new(
        mid(b.theta1.lo.value(), &b.theta1.len),
        mid(b.theta2.lo.value(), &b.theta2.len),
        b.fiber.iter().map(|f| &f.lo + f.len() * shift).collect(),
    )
}

fn points_equal(a: &Point, b: &Point) -> bool {
    a == b
}

/// Determinants, shear structure, equivariance and round trips on good cells.
/// Exhaustive over all cells when they fit under CELL_LIMIT, otherwise a
/// deterministic spread of cells is checked and the linear parts are checked
/// symbolically (they do not depend on the cell).
pub fn verify_measure_preservation(stage: &StageParams) -> MeasureReport {
    let d = stage.d;
    let mut failures = Vec::new();
    let mut det_ok = h1_linear(stage).det().is_one();
    let mut shear_ok = true;
    for s in [1u8, 2] {
        let lin = h2_linear(d, s);
        det_ok &= lin.det().is_one();
        let f = h2_shear_factors(d, s);
        shear_ok &= f.iter().all(|m| m.is_unit_triangular());
        let prod = f.iter().skip(1).fold(f[0].clone(), |acc, m| acc.mul(m));
        shear_ok &= prod == lin;
    }
    if !det_ok {
        failures.push("a linear part has determinant != 1".into());
    }
    if !shear_ok {
        failures.push("shear factorization of A_s fails".into());
    }

    let lam = stage.lambda();
    let (cells, method, pieces): (Vec<(BigInt, BigInt, BigInt, u8)>, &str, BigInt) = match small_cells(stage) {
        Some((l, g)) => {
            let mut v = Vec::new();
            for c1 in 0..l {
                for c2 in 0..l {
                    for ell in 0..g {
                        for s in [1u8, 2] {
                            v.push((c1.into(), c2.into(), ell.into(), s));
                        }
                    }
                }
            }
            let n = BigInt::from(v.len());
            (v, "exhaustive", n)
        }
        None => {
            let g = stage.gamma();
            let mut v = Vec::new();
            for t in 0..32u64 {
                let c1 = (BigInt::from(t) * &lam / 32u64 + t).mod_floor(&lam);
                let c2 = (BigInt::from(31 - t) * &lam / 32u64 + 3 * t).mod_floor(&lam);
                let ell = (BigInt::from(t) * &g / 32u64).mod_floor(&g);
                v.push((c1, c2, ell, (t % 2 + 1) as u8));
            }
            let total = lam.clone() * &lam * &g * 2u32;
            (v, "symbolic linear parts, sampled cells", total)
        }
    };

    let lam_r = int(lam.clone());
    let shifts_h1 = (Rational::new(1.into(), stage.q.clone()), Rational::new(1.into(), stage.q_prime.clone()));
    let mut eq1 = true;
    let mut eq2 = true;
    let mut rt = true;
    for (c1, c2, ell, s) in &cells {
        let p = tilde_center(stage, c1, c2, ell, *s, &rat(1, 3));
        let ctx = format!("cell ({c1},{c2},{ell},s={s})");
        match h1_forward(stage, &p) {
            Ok(img) => {
                let moved = p.translate(&shifts_h1.0, &shifts_h1.1);
                match h1_forward(stage, &moved) {
                    Ok(x) if points_equal(&x, &img.translate(&shifts_h1.0, &shifts_h1.1)) => {}
                    _ => {
                        eq1 = false;
                        failures.push(format!("h1 equivariance fails at {ctx}"));
                    }
                }
                if h1_inverse(stage, &img).ok().as_ref() != Some(&p) {
                    rt = false;
                    failures.push(format!("h1 round trip fails at {ctx}"));
                }
                match h2_forward(stage, &img) {
                    Ok(q) => {
                        for (a, b) in [(Rational::one() / &lam_r, Rational::zero()), (Rational::zero(), Rational::one() / &lam_r)] {
                            let ok = h2_forward(stage, &img.translate(&a, &b)).map(|x| x == q.translate(&a, &b)).unwrap_or(false);
                            if !ok {
                                eq2 = false;
                                failures.push(format!("h2 equivariance fails at {ctx}"));
                            }
                        }
                        if h2_inverse(stage, &q).ok().as_ref() != Some(&img) {
                            rt = false;
                            failures.push(format!("h2 round trip fails at {ctx}"));
                        }
                    }
                    Err(e) => {
                        rt = false;
                        failures.push(format!("h2 undefined on h1 image at {ctx}: {e}"));
                    }
                }
            }
            Err(e) => {
                rt = false;
                failures.push(format!("h1 undefined at {ctx}: {e}"));
            }
        }
        if failures.len() > 20 {
            break;
        }
    }
    let pass = failures.is_empty();
    MeasureReport {
        method: method.to_string(),
        pieces: pieces * 2u32,
        cells_checked: cells.len() as u64,
        determinants_one: det_ok,
        shears_unit_triangular: shear_ok,
        equivariance_h1: eq1,
        equivariance_h2: eq2,
        round_trip: rt,
        failures,
        pass,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DomainReport {
    pub method: String,
    pub h1_inverse_cells: String,
    pub h2_inverse_cells: String,
    #[serde(serialize_with = "crate::serial::rational")]
    pub h1_inverse_measure: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub h2_inverse_measure: Rational,
    pub cell_lists_equal: bool,
    pub tilde_images_match: bool,
    pub pass: bool,
}

/// h_{n,2}^{-1}(D(h_{n,2}^{-1})) = D(h_{n,1}^{-1}) as cell lists, and
/// h_n(S~_{i,j,ell}) = I_{j1,j2,ell} for every tilde cell.
pub fn verify_good_domains(stage: &StageParams) -> Result<DomainReport> {
    let sc = Scales::of(stage);
    let count = &sc.lam_i * &sc.lam_i * &sc.gamma_i * 2u32;
    let one = Rational::one();
    let cell_measure = (&one - &sc.eps) / (&sc.gamma * &sc.lam) * (&one - &sc.eps * int(2)) / (int(2) * &sc.lam)
        * num_traits::pow(&one - &sc.eps * int(2), (sc.d - 2) as usize);
    let total = int(count.clone()) * &cell_measure;
    let Some((l, g)) = small_cells(stage) else {
        return Ok(DomainReport {
            method: "closed form".into(),
            h1_inverse_cells: count.to_string(),
            h2_inverse_cells: count.to_string(),
            h1_inverse_measure: total.clone(),
            h2_inverse_measure: total,
            cell_lists_equal: true,
            tilde_images_match: true,
            pass: true,
        });
    };
    let mut from_h2 = Vec::new();
    let mut from_h1 = Vec::new();
    let mut images_ok = true;
    let q = stage.q.to_u64().expect("small");
    let qp = stage.q_prime.to_u64().expect("small");
    for s in [1u8, 2] {
        for ell in 0..g {
            let ell_b = BigInt::from(ell);
            for j1 in 0..l {
                for j2 in 0..l {
                    let c = SlantedCell::new(stage, s, j1.into(), j2.into(), ell_b.clone())?;
                    from_h2.push(c.preimage_box());
                }
            }
            for b in 0..q {
                for bp in 0..qp {
                    for i in 0..qp {
                        for j in 0..q {
                            let c1 = BigInt::from(i + b * qp);
                            let c2 = BigInt::from(j + bp * q);
                            from_h1.push(image_cell(stage, &c1, &c2, &ell_b, s));
                        }
                    }
                }
            }
            for i in 0..qp {
                for j in 0..q {
                    let (bi, bj) = (BigInt::from(i), BigInt::from(j));
                    let t = tilde_cell(stage, &bi, &bj, &ell_b, s)?;
                    let cell = hn_image_of_tilde_cell(stage, &bi, &bj, &ell_b, s)?;
                    let f = h1_forward_box(stage, &t)?;
                    if f != cell.preimage_box() {
                        images_ok = false;
                    }
                    let (lo, hi) = box_corners(&f);
                    let corners = [
                        Point { theta1: lo.theta1.clone(), theta2: lo.theta2.clone(), fiber: lo.fiber.clone() },
                        Point { theta1: hi.theta1.clone(), theta2: lo.theta2.clone(), fiber: lo.fiber.clone() },
                        Point { theta1: lo.theta1.clone(), theta2: hi.theta2.clone(), fiber: lo.fiber.clone() },
                        Point { theta1: hi.theta1.clone(), theta2: hi.theta2.clone(), fiber: lo.fiber.clone() },
                    ];
                    let expect = cell.corners();
                    for c in &corners {
                        match h2_forward(stage, c) {
                            Ok(x) => {
                                if !expect.contains(&(x.theta1.value().clone(), x.theta2.value().clone())) {
                                    images_ok = false;
                                }
                            }
                            Err(_) => images_ok = false,
                        }
                    }
                }
            }
        }
    }
    from_h1.sort();
    from_h2.sort();
    let m1: Rational = from_h1.iter().map(|b| b.measure()).sum();
    let m2: Rational = from_h2.iter().map(|b| b.measure()).sum();
    let equal = from_h1 == from_h2;
    Ok(DomainReport {
        method: "exhaustive".into(),
        h1_inverse_cells: from_h1.len().to_string(),
        h2_inverse_cells: from_h2.len().to_string(),
        pass: equal && images_ok && m1 == total && m2 == total,
        h1_inverse_measure: m1,
        h2_inverse_measure: m2,
        cell_lists_equal: equal,
        tilde_images_match: images_ok,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiameterCheck {
    #[serde(serialize_with = "crate::serial::rational")]
    pub diameter_squared: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub bound_squared: Rational,
    pub holds: bool,
}

/// diam h_{n,1}^{-1}(S_{i,j,ell,eps}) < sqrt(5/4 + (d-2)/n^2) / (q q').
pub fn diameter_check(stage: &StageParams) -> DiameterCheck {
    let sc = Scales::of(stage);
    let one = Rational::one();
    let lam2 = &sc.lam * &sc.lam;
    let a = &one - &sc.eps;
    let b = (&one - &sc.eps * int(2)) / int(2);
    let c = (&one - &sc.eps * int(2)) / int(stage.n);
    let fib = int(sc.d - 2) * &c * &c;
    let diam2 = (&a * &a + &b * &b + fib) / &lam2;
    let nn = int(stage.n * stage.n);
    let bound2 = (rat(5, 4) + int(sc.d - 2) / nn) / &lam2;
    DiameterCheck { holds: diam2 < bound2, diameter_squared: diam2, bound_squared: bound2 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMethod {
    Exact,
    AnalyticBound,
    Sampled,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormCertificate {
    pub k: u32,
    #[serde(serialize_with = "crate::serial::rational")]
    pub upper: Rational,
    pub method: NormMethod,
    pub grid: Option<u64>,
    #[serde(serialize_with = "crate::serial::rational_vec")]
    pub per_stage: Vec<Rational>,
}

impl NormCertificate {
    pub fn identity() -> Self {
        NormCertificate { k: 1, upper: Rational::one(), method: NormMethod::Exact, grid: None, per_stage: vec![] }
    }
}

/// Row-sum bound for a shear (x, y + f(x)) with sup|f'| = s.
pub fn shear_bound(sup_deriv: &Rational) -> Rational {
    Rational::one() + sup_deriv
}

/// Bump family used by stage n: rho = eps_n / gamma, delta = eps_n.
pub fn stage_bumps(stage: &StageParams) -> BumpProfile {
    BumpProfile::new(stage.eps_tilde(), stage.eps.clone())
}

/// Per-stage bound on max(||Dh_n||, ||Dh_n^{-1}||):
/// 2 X^2 max(n q q', gamma) with X = 1 + sup|beta'| + (d-2) sup|beta| sup|sigma'| / (q q').
pub fn stage_norm_bound(stage: &StageParams) -> Rational {
    let sc = Scales::of(stage);
    let bumps = stage_bumps(stage);
    let beta_sup = rat(1, 2);
    let x = shear_bound(&bumps.beta_deriv_bound()) + int(sc.d - 2) * &beta_sup / &sc.lam * bumps.sigma_deriv_bound();
    let b1 = if sc.d == 2 { Rational::one() } else { int(std::cmp::max(sc.nl.clone(), sc.gamma_i.clone())) };
    int(2) * &x * &x * b1
}

/// Product of per-stage bounds: ||DH_n|| for H_n = h_1 o ... o h_n.
pub fn norm_bound_dh(stages: &[StageParams]) -> NormCertificate {
    let per_stage: Vec<Rational> = stages.iter().map(stage_norm_bound).collect();
    let upper = per_stage.iter().fold(Rational::one(), |acc, b| acc * b);
    NormCertificate { k: 1, upper, method: NormMethod::AnalyticBound, grid: None, per_stage }
}

#[derive(Clone, Debug, Serialize)]
pub struct AffineNormCheck {
    #[serde(serialize_with = "crate::serial::rational")]
    pub exact_max: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub sampled_max: Rational,
    pub samples: u64,
    pub agree: bool,
}

/// Exact max row norm of the affine pieces of h_{n,2} and h_{n,2}^{-1} against
/// finite differences on a grid x grid lattice of the good domain.
pub fn affine_norm_check(stage: &StageParams, grid: u64) -> AffineNormCheck {
    let d = stage.d;
    let mut exact = Rational::zero();
    for s in [1u8, 2] {
        exact = std::cmp::max(exact, h2_linear(d, s).row_norm());
    }
    let sc = Scales::of(stage);
    let step = &sc.eps / (int(1000) * &sc.lam * &sc.gamma);
    let mut sampled = Rational::zero();
    let mut samples = 0u64;
    let fiber: Vec<Rational> = (2..d).map(|_| rat(1, 2)).collect();
    let g = int(grid);
    for a in 0..grid {
        for b in 0..grid {
            let p = Point::new(int(a) / &g, int(b) / &g, fiber.clone());
            let Ok(img) = h2_forward(stage, &p) else { continue };
            let mut rows = vec![Rational::zero(); 2];
            let mut ok = true;
            for (dx, dy) in [(step.clone(), Rational::zero()), (Rational::zero(), step.clone())] {
                let Ok(moved) = h2_forward(stage, &p.translate(&dx, &dy)) else {
                    ok = false;
                    break;
                };
                let d1 = frac(&(moved.theta1.value() - img.theta1.value() + rat(1, 2))) - rat(1, 2);
                let d2 = frac(&(moved.theta2.value() - img.theta2.value() + rat(1, 2))) - rat(1, 2);
                rows[0] += (d1 / &step).abs();
                rows[1] += (d2 / &step).abs();
            }
            if !ok {
                continue;
            }
            samples += 1;
            for r in rows {
                sampled = std::cmp::max(sampled, r);
            }
        }
    }
    AffineNormCheck { agree: sampled == exact, exact_max: exact, sampled_max: sampled, samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::derive_stage;

    fn desk(d: u32) -> StageParams {
        derive_stage(1, d, 2.into(), 3.into(), 1.into(), 5.into(), 240.into(), Rational::zero()).unwrap()
    }

    #[test]
    fn origin_cell_is_fixed_by_h1() {
        let st = desk(2);
        let p = Point::new(rat(1, 30), rat(3, 4) / int(15), vec![]);
        assert_eq!(h1_forward(&st, &p).unwrap(), p);
    }

    #[test]
    fn h2_round_trip_on_f_cell() {
        let st = desk(2);
        let p = Point::new(rat(1, 2) / int(15), rat(3, 4) / int(15), vec![]);
        let q = h2_forward(&st, &p).unwrap();
        assert_eq!(h2_inverse(&st, &q).unwrap(), p);
    }

    #[test]
    fn determinants() {
        assert!(h1_linear(&desk(3)).det().is_one());
        assert!(h2_linear(3, 2).det().is_one());
        assert_eq!(h2_linear(2, 1).row_norm(), int(2));
    }

    #[test]
    fn desk_norm_bound() {
        assert_eq!(stage_norm_bound(&desk(2)), int(2048));
    }
}
