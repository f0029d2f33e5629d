//! The f-bar distance on names, names of the periodic process sigma_n, the
//! aligned-block construction for quadruples with close levels, and a finite
//! Katok-Sataev style probe.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::approximation::SpeedReport;
use crate::error::{Error, Result};
use crate::geometry::{int, rmin, Rational};
use crate::towers::{ColumnReport, TowerMeasures, TowerPair};

/// Symbol that matches nothing, itself included.
pub const JUNK: u64 = u64::MAX;

/// Largest n*n handled by the quadratic table.
pub const DP_LIMIT: usize = 4_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SymbolName(pub Vec<u64>);

impl SymbolName {
    pub fn new(symbols: Vec<u64>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::ParameterRange("empty name".into()));
        }
        Ok(SymbolName(symbols))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MatchWitness {
    pub k_indices: Vec<usize>,
    pub l_indices: Vec<usize>,
}

impl MatchWitness {
    /// Strictly increasing on both sides and matching symbols pairwise.
    pub fn is_valid(&self, a: &SymbolName, b: &SymbolName) -> bool {
        self.k_indices.len() == self.l_indices.len()
            && self.k_indices.windows(2).all(|w| w[0] < w[1])
            && self.l_indices.windows(2).all(|w| w[0] < w[1])
            && self.k_indices.last().map_or(true, |k| *k < a.len())
            && self.l_indices.last().map_or(true, |l| *l < b.len())
            && self.k_indices.iter().zip(&self.l_indices).all(|(k, l)| a.0[*k] == b.0[*l] && a.0[*k] != JUNK)
    }

    pub fn len(&self) -> usize {
        self.k_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_indices.is_empty()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Fbar {
    #[serde(serialize_with = "crate::serial::rational")]
    pub value: Rational,
    pub matched: usize,
    pub len: usize,
    pub witness: MatchWitness,
}

fn same_len(a: &SymbolName, b: &SymbolName) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::ParameterRange("empty name".into()));
    }
    Ok(a.len())
}

fn result(n: usize, witness: MatchWitness) -> Fbar {
    let matched = witness.len();
    Fbar {
        value: Rational::one() - BigRational::new(BigInt::from(matched), BigInt::from(n)),
        matched,
        len: n,
        witness,
    }
}

/// 1 - m/n with m the longest common subsequence, using the quadratic table
/// when it fits and the Hunt-Szymanski reduction to increasing subsequences otherwise.
pub fn fbar_distance(a: &SymbolName, b: &SymbolName) -> Result<Fbar> {
    let n = same_len(a, b)?;
    if n.saturating_mul(n) <= DP_LIMIT {
        fbar_dp(a, b)
    } else {
        fbar_hs(a, b)
    }
}

pub fn fbar_dp(a: &SymbolName, b: &SymbolName) -> Result<Fbar> {
    let n = same_len(a, b)?;
    let w = n + 1;
    let mut t = vec![0u32; w * w];
    for i in (0..n).rev() {
        for j in (0..n).rev() {
            t[i * w + j] = if a.0[i] == b.0[j] && a.0[i] != JUNK {
                t[(i + 1) * w + j + 1] + 1
            } else {
                t[(i + 1) * w + j].max(t[i * w + j + 1])
            };
        }
    }
    let mut wit = MatchWitness::default();
    let (mut i, mut j) = (0, 0);
    while i < n && j < n {
        if a.0[i] == b.0[j] && a.0[i] != JUNK && t[i * w + j] == t[(i + 1) * w + j + 1] + 1 {
            wit.k_indices.push(i);
            wit.l_indices.push(j);
            i += 1;
            j += 1;
        } else if t[(i + 1) * w + j] >= t[i * w + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(result(n, wit))
}

/// Exact longest common subsequence through the strictly increasing subsequences
/// of match positions; O((n + r) log n) for r matching pairs.
pub fn fbar_hs(a: &SymbolName, b: &SymbolName) -> Result<Fbar> {
    let n = same_len(a, b)?;
    let mut pos: Vec<(u64, usize)> = b.0.iter().copied().enumerate().filter(|(_, s)| *s != JUNK).map(|(j, s)| (s, j)).collect();
    pos.sort_unstable();
    if pos.windows(2).all(|w| w[0].0 != w[1].0) {
        return Ok(result(n, lis_unique(a, &pos)));
    }
    // tails[len] = node with the smallest end position among chains of length len+1
    let mut tails: Vec<usize> = Vec::new();
    let mut nodes: Vec<(usize, usize, usize)> = Vec::new(); // (i, j, parent)
    const NONE: usize = usize::MAX;
    for (i, s) in a.0.iter().enumerate() {
        if *s == JUNK {
            continue;
        }
        let lo = pos.partition_point(|p| p.0 < *s);
        let hi = lo + pos[lo..].partition_point(|p| p.0 == *s);
        for &(_, j) in pos[lo..hi].iter().rev() {
            let k = tails.partition_point(|&nd| nodes[nd].1 < j);
            let parent = if k == 0 { NONE } else { tails[k - 1] };
            nodes.push((i, j, parent));
            let id = nodes.len() - 1;
            if k == tails.len() {
                tails.push(id);
            } else {
                tails[k] = id;
            }
        }
    }
    let mut wit = MatchWitness::default();
    let mut cur = tails.last().copied().unwrap_or(NONE);
    while cur != NONE {
        let (i, j, p) = nodes[cur];
        wit.k_indices.push(i);
        wit.l_indices.push(j);
        cur = p;
    }
    wit.k_indices.reverse();
    wit.l_indices.reverse();
    Ok(result(n, wit))
}

/// Every symbol of b occurs once: each i has at most one partner and the
/// matching is a longest strictly increasing run of partners.
fn lis_unique(a: &SymbolName, pos: &[(u64, usize)]) -> MatchWitness {
    const NONE: usize = usize::MAX;
    let mut order: Vec<(u64, usize)> = a.0.iter().copied().enumerate().filter(|(_, s)| *s != JUNK).map(|(i, s)| (s, i)).collect();
    order.sort_unstable();
    let mut partner = vec![NONE; a.len()];
    let mut k = 0;
    for (s, i) in order {
        while k < pos.len() && pos[k].0 < s {
            k += 1;
        }
        if k < pos.len() && pos[k].0 == s {
            partner[i] = pos[k].1;
        }
    }
    let mut tail_j: Vec<usize> = Vec::new();
    let mut tail_i: Vec<usize> = Vec::new();
    let mut parent = vec![NONE; a.len()];
    for (i, &j) in partner.iter().enumerate() {
        if j == NONE {
            continue;
        }
        let k = tail_j.partition_point(|&t| t < j);
        parent[i] = if k == 0 { NONE } else { tail_i[k - 1] };
        if k == tail_j.len() {
            tail_j.push(j);
            tail_i.push(i);
        } else {
            tail_j[k] = j;
            tail_i[k] = i;
        }
    }
    let mut wit = MatchWitness::default();
    let mut cur = tail_i.last().copied().unwrap_or(NONE);
    while cur != NONE {
        wit.k_indices.push(cur);
        wit.l_indices.push(partner[cur]);
        cur = parent[cur];
    }
    wit.k_indices.reverse();
    wit.l_indices.reverse();
    wit
}

/// Combinatorial model of the periodic process: towers of heights m-1 and m,
/// each split into columns that sigma_n keeps invariant. The first `junk[s]`
/// columns carry E_n on their top level.
#[derive(Clone, Debug, Serialize)]
pub struct ProcessShape {
    pub heights: [u64; 2],
    pub columns: [u64; 2],
    pub junk: [u64; 2],
    #[serde(serialize_with = "crate::serial::rational_vec")]
    pub tower_measure: Vec<Rational>,
    /// d(xi_n, T_n, sigma_n) m_n^2
    #[serde(serialize_with = "crate::serial::rational")]
    pub c1: Rational,
}

impl ProcessShape {
    /// E_n of measure d/2 split between the towers as the exact wraparound
    /// terms, rounded up to whole columns.
    pub fn from_reports(pair: &TowerPair, speed: &SpeedReport, cols: &ColumnReport, meas: &TowerMeasures) -> Result<Self> {
        let h1 = pair.heights[0].to_u64().ok_or_else(|| Error::ParameterRange("tower height exceeds u64".into()))?;
        let h2 = pair.heights[1].to_u64().ok_or_else(|| Error::ParameterRange("tower height exceeds u64".into()))?;
        let c = |x: &BigInt| x.to_u64().ok_or_else(|| Error::ParameterRange("column count exceeds u64".into()));
        let columns = [c(&cols.columns[0])?, c(&cols.columns[1])?];
        let mut junk = [0u64; 2];
        for s in 0..2 {
            let mass = &speed.tower_terms[s] / int(2);
            let per_column = &meas.level[s] / int(columns[s]);
            junk[s] = (mass / per_column).ceil().to_integer().to_u64().unwrap_or(u64::MAX).min(columns[s]);
        }
        let m = int(pair.heights[1].clone());
        Ok(ProcessShape {
            heights: [h1, h2],
            columns,
            junk,
            tower_measure: meas.tower.clone(),
            c1: &speed.exact_wraparound_term * &m * &m,
        })
    }

    pub fn m(&self) -> u64 {
        self.heights[1]
    }

    fn symbol(&self, tower: u8, level: u64) -> u64 {
        if tower == 1 {
            level
        } else {
            self.heights[0] + level
        }
    }

    pub fn is_junk_column(&self, tower: u8, column: u64) -> bool {
        column < self.junk[(tower - 1) as usize]
    }

    /// mu(F_n cap t_s): the tower without its junk columns.
    pub fn good_measure(&self, tower: u8) -> Rational {
        let s = (tower - 1) as usize;
        &self.tower_measure[s] * BigRational::new(BigInt::from(self.columns[s] - self.junk[s]), BigInt::from(self.columns[s]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PointDesc {
    pub tower: u8,
    pub level: u64,
    pub column: u64,
}

/// Name of a point under the realization of sigma_n: level ids advance
/// cyclically; in a junk column the orbit leaves the model at the first top
/// level, and every later symbol is JUNK.
pub fn names_from_towers(shape: &ProcessShape, p: &PointDesc, len: usize) -> Result<SymbolName> {
    if p.tower != 1 && p.tower != 2 {
        return Err(Error::ParameterRange(format!("tower {}", p.tower)));
    }
    let h = shape.heights[(p.tower - 1) as usize];
    if p.level >= h || p.column >= shape.columns[(p.tower - 1) as usize] {
        return Err(Error::ParameterRange(format!("point {p:?}")));
    }
    let junk = shape.is_junk_column(p.tower, p.column);
    let mut out = Vec::with_capacity(len);
    let mut lost = false;
    let mut level = p.level;
    for _ in 0..len {
        out.push(if lost { JUNK } else { shape.symbol(p.tower, level) });
        if junk && level == h - 1 {
            lost = true;
        }
        level = if level + 1 == h { 0 } else { level + 1 };
    }
    SymbolName::new(out)
}

/// Names of (x, y) in the product partition.
pub fn product_name(shape: &ProcessShape, a: &SymbolName, b: &SymbolName) -> Result<SymbolName> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let base = shape.heights[0] + shape.heights[1];
    SymbolName::new(a.0.iter().zip(&b.0).map(|(x, y)| if *x == JUNK || *y == JUNK { JUNK } else { x * base + y }).collect())
}

/// ceil(sqrt(x)) for rational x >= 0.
pub fn ceil_sqrt(x: &Rational) -> BigInt {
    let mut c = x.ceil().to_integer().sqrt();
    while int(&c * &c) < *x {
        c += 1;
    }
    while c.is_positive() && int((&c - 1) * (&c - 1)) >= *x {
        c -= 1;
    }
    c
}

/// N = m ceil(sqrt(alpha) m).
pub fn block_length(m: u64, alpha: &Rational) -> BigInt {
    let m = BigInt::from(m);
    ceil_sqrt(&(alpha * int(&m * &m))) * m
}

/// ceil(alpha (m-1)/r^4).
pub fn max_offset(m: u64, alpha: &Rational, r: &Rational) -> BigInt {
    (alpha * int(m - 1) / num_traits::pow(r.clone(), 4)).ceil().to_integer()
}

/// alpha_0 = min(r^4/4, (r/20)^2/c1^2).
pub fn alpha0(r: &Rational, c1: &Rational) -> Rational {
    let a = num_traits::pow(r.clone(), 4) / int(4);
    let b = (r / int(20)) * (r / int(20)) / (c1 * c1);
    rmin(&a, &b)
}

#[derive(Clone, Debug, Serialize)]
pub struct AlignmentBound {
    /// (k+1) m/(m ceil(sqrt(alpha) m))
    #[serde(serialize_with = "crate::serial::rational")]
    pub explicit: Rational,
    /// 2/r^4
    #[serde(serialize_with = "crate::serial::rational")]
    pub c2_tilde: Rational,
    /// explicit <= c2~ sqrt(alpha), compared through squares
    pub within_simplified: bool,
    /// (alpha m^2/r^4 + 2m)/(sqrt(alpha) m^2) >= explicit, compared through squares
    pub within_chain: bool,
}

pub fn alignment_bound(m: u64, alpha: &Rational, r: &Rational, k: &BigInt) -> Result<AlignmentBound> {
    if m < 2 || !alpha.is_positive() || alpha >= &Rational::one() || !r.is_positive() {
        return Err(Error::ParameterRange(format!("m = {m}, alpha = {alpha}, r = {r}")));
    }
    let kmax = max_offset(m, alpha, r);
    if k.is_negative() || k > &kmax {
        return Err(Error::ParameterRange(format!("offset {k} outside [0, {kmax}]")));
    }
    let mm = int(m);
    let n = block_length(m, alpha);
    let explicit = int(k + 1) * &mm / int(n);
    let c2 = int(2) / num_traits::pow(r.clone(), 4);
    let within_simplified = &explicit * &explicit <= &c2 * &c2 * alpha;
    let r4 = num_traits::pow(r.clone(), 4);
    let chain_num = alpha * &mm * &mm / &r4 + int(2) * &mm;
    // chain = chain_num/(sqrt(alpha) m^2) >= explicit iff chain_num^2 >= explicit^2 alpha m^4
    let within_chain = &chain_num * &chain_num >= &explicit * &explicit * alpha * num_traits::pow(mm, 4);
    Ok(AlignmentBound { explicit, c2_tilde: c2, within_simplified, within_chain })
}

#[derive(Clone, Debug, Serialize)]
pub struct Quadruple {
    pub x: PointDesc,
    pub y: PointDesc,
    pub x_tilde: PointDesc,
    pub y_tilde: PointDesc,
    pub s: u64,
    pub s_tilde: u64,
    /// signed level offset of sigma^s(x) over sigma^s~(x~), |k| <= max offset
    pub k: i64,
}

/// Steps until y reaches the first level of the second tower.
fn steps_to_base(shape: &ProcessShape, y: &PointDesc) -> u64 {
    let h = shape.heights[1];
    (h - y.level) % h
}

/// Level offset of the quadruple as the residue of least absolute value mod m-1.
pub fn level_offset(shape: &ProcessShape, x: &PointDesc, y: &PointDesc, xt: &PointDesc, yt: &PointDesc) -> (u64, u64, i64) {
    let h1 = shape.heights[0];
    let s = steps_to_base(shape, y);
    let st = steps_to_base(shape, yt);
    let a = (x.level + s) % h1;
    let b = (xt.level + st) % h1;
    let d = ((a as i64 - b as i64).rem_euclid(h1 as i64)) as u64;
    let k = if 2 * d > h1 { d as i64 - h1 as i64 } else { d as i64 };
    (s, st, k)
}

/// The aligned block from the proof: names of (x, y) from time s match names of
/// (x~, y~) from time s~ + k m (k > 0; the roles swap for k < 0).
pub fn constructed_alignment(shape: &ProcessShape, q: &Quadruple, n: usize) -> MatchWitness {
    let m = shape.m() as i64;
    let (start_a, start_b) = if q.k >= 0 {
        (q.s as i64, q.s_tilde as i64 + q.k * m)
    } else {
        (q.s as i64 - q.k * m, q.s_tilde as i64)
    };
    let n = n as i64;
    let mut w = MatchWitness::default();
    let mut i = start_a;
    let mut j = start_b;
    while i < n && j < n {
        w.k_indices.push(i as usize);
        w.l_indices.push(j as usize);
        i += 1;
        j += 1;
    }
    w
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadrupleCheck {
    pub k: i64,
    #[serde(serialize_with = "crate::serial::rational")]
    pub exact: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub constructed: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub bound: Rational,
    pub witness_valid: bool,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MatchLemmaReport {
    #[serde(serialize_with = "crate::serial::rational")]
    pub alpha: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub r: Rational,
    #[serde(serialize_with = "crate::serial::rational")]
    pub alpha0: Rational,
    pub alpha_below_alpha0: bool,
    /// mu(t_s) > r for both towers
    pub r_is_substantiality_constant: bool,
    /// mu(F_n cap t_s) >= r - c1 sqrt(alpha)
    pub good_set_bounds: Vec<bool>,
    pub name_length: u64,
    #[serde(serialize_with = "crate::serial::bigint")]
    pub max_offset: BigInt,
    /// fraction of uniformly drawn quadruples in F_n^4 meeting the level condition
    pub close_fraction: f64,
    #[serde(serialize_with = "crate::serial::rational")]
    pub close_fraction_floor: Rational,
    pub quadruples: Vec<QuadrupleCheck>,
    pub violations: usize,
    /// zero-offset quadruples: exact f-bar <= 1/ceil(sqrt(alpha) m)
    pub zero_offset_ok: bool,
    pub pass: bool,
}

fn draw_point(rng: &mut ChaCha8Rng, shape: &ProcessShape, tower: u8, good_only: bool) -> PointDesc {
    let s = (tower - 1) as usize;
    let level = rng.gen_range(0..shape.heights[s]);
    let lo = if good_only { shape.junk[s] } else { 0 };
    let column = rng.gen_range(lo..shape.columns[s]);
    PointDesc { tower, level, column }
}

fn draw_quadruple(rng: &mut ChaCha8Rng, shape: &ProcessShape, kmax: i64, good_only: bool) -> (Quadruple, u64) {
    let mut tries = 0;
    loop {
        tries += 1;
        let x = draw_point(rng, shape, 1, good_only);
        let y = draw_point(rng, shape, 2, good_only);
        let xt = draw_point(rng, shape, 1, good_only);
        let yt = draw_point(rng, shape, 2, good_only);
        let (s, st, k) = level_offset(shape, &x, &y, &xt, &yt);
        if k.abs() <= kmax {
            return (Quadruple { x, y, x_tilde: xt, y_tilde: yt, s, s_tilde: st, k }, tries);
        }
    }
}

fn pair_name(shape: &ProcessShape, x: &PointDesc, y: &PointDesc, n: usize) -> Result<SymbolName> {
    product_name(shape, &names_from_towers(shape, x, n)?, &names_from_towers(shape, y, n)?)
}

fn check_quadruple(shape: &ProcessShape, q: &Quadruple, n: usize, alpha: &Rational, r: &Rational) -> Result<QuadrupleCheck> {
    let a = pair_name(shape, &q.x, &q.y, n)?;
    let b = pair_name(shape, &q.x_tilde, &q.y_tilde, n)?;
    let exact = fbar_distance(&a, &b)?;
    let w = constructed_alignment(shape, q, n);
    let witness_valid = w.is_valid(&a, &b) && exact.witness.is_valid(&a, &b);
    let constructed = Rational::one() - BigRational::new(BigInt::from(w.len()), BigInt::from(n));
    let ab = alignment_bound(shape.m(), alpha, r, &BigInt::from(q.k.unsigned_abs()))?;
    let bound = ab.explicit;
    let ok = witness_valid && exact.value <= constructed && constructed < bound && ab.within_simplified && ab.within_chain;
    Ok(QuadrupleCheck { k: q.k, exact: exact.value, constructed, bound, witness_valid, ok })
}

/// Samples quadruples from F_n^4 with close levels and checks
/// exact f-bar <= constructed alignment < (|k|+1) m/(m ceil(sqrt(alpha) m)).
pub fn verify_match_lemma(shape: &ProcessShape, alpha: &Rational, r: &Rational, trials: usize, seed: u64) -> Result<MatchLemmaReport> {
    let m = shape.m();
    let n_big = block_length(m, alpha);
    let n = n_big.to_usize().ok_or_else(|| Error::ParameterRange("name length exceeds usize".into()))?;
    let kmax_big = max_offset(m, alpha, r);
    let h1 = shape.heights[0] as i64;
    let kmax = kmax_big.to_i64().unwrap_or(i64::MAX).min(h1);
    let results: Vec<Result<(QuadrupleCheck, u64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let (q, tries) = draw_quadruple(&mut rng, shape, kmax, true);
            Ok((check_quadruple(shape, &q, n, alpha, r)?, tries))
        })
        .collect();
    let mut quadruples = Vec::with_capacity(trials);
    let mut draws = 0u64;
    for r in results {
        let (c, t) = r?;
        draws += t;
        quadruples.push(c);
    }
    // a zero-offset quadruple: aligned levels, y and y~ at the same height
    let zero = {
        let x = PointDesc { tower: 1, level: 0, column: shape.junk[0] };
        let y = PointDesc { tower: 2, level: 0, column: shape.junk[1] };
        let q = Quadruple { x, y, x_tilde: x, y_tilde: PointDesc { level: 0, ..y }, s: 0, s_tilde: 0, k: 0 };
        let c = check_quadruple(shape, &q, n, alpha, r)?;
        c.ok && c.exact <= BigRational::new(BigInt::one(), ceil_sqrt(&(alpha * int(m) * int(m))))
    };
    let violations = quadruples.iter().filter(|c| !c.ok).count();
    let c1 = &shape.c1;
    let a0 = alpha0(r, c1);
    let good_set_bounds: Vec<bool> = [1u8, 2]
        .iter()
        .map(|&s| {
            let gap = r - shape.good_measure(s);
            !gap.is_positive() || c1 * c1 * alpha >= &gap * &gap
        })
        .collect();
    let floor = rmin(&Rational::one(), &(int(2 * kmax_big.clone() + 1) / int(m - 1)));
    Ok(MatchLemmaReport {
        alpha: alpha.clone(),
        r: r.clone(),
        alpha_below_alpha0: alpha < &a0,
        alpha0: a0,
        r_is_substantiality_constant: shape.tower_measure.iter().all(|t| t > r),
        good_set_bounds,
        name_length: n as u64,
        max_offset: kmax_big,
        close_fraction: trials as f64 / draws.max(1) as f64,
        close_fraction_floor: floor,
        quadruples,
        violations,
        zero_offset_ok: zero,
        pass: violations == 0 && zero,
    })
}

/// Coarsenings of xi_n x xi_n used as test partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestPartition {
    /// xi_n x xi_n itself
    Levels,
    /// levels grouped into `blocks` consecutive runs per tower
    Blocks(u64),
    /// xi_n x xi_n with points drawn from all columns, junk ones included
    JunkRefining,
}

fn coarsen(shape: &ProcessShape, name: &SymbolName, part: TestPartition) -> SymbolName {
    match part {
        TestPartition::Levels | TestPartition::JunkRefining => name.clone(),
        TestPartition::Blocks(b) => {
            let base = shape.heights[0] + shape.heights[1];
            let block = |v: u64| -> u64 {
                if v < shape.heights[0] {
                    v * b / shape.heights[0]
                } else {
                    b + (v - shape.heights[0]) * b / shape.heights[1]
                }
            };
            SymbolName(name.0.iter().map(|&s| if s == JUNK { JUNK } else { block(s / base) * 2 * b + block(s % base) }).collect())
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KsRow {
    #[serde(serialize_with = "crate::serial::rational")]
    pub epsilon: Rational,
    pub partition: TestPartition,
    #[serde(serialize_with = "crate::serial::rational")]
    pub alpha: Rational,
    pub name_length: u64,
    pub pairs: usize,
    #[serde(serialize_with = "crate::serial::rational")]
    pub max_fbar: Rational,
    pub failures: usize,
    pub failure_fraction: f64,
    /// f(a, b) <= f(a, o) + f(o, b) through the anchor point o
    pub triangle_ok: bool,
    /// alpha m >= 2 r^4, needed to pass from the explicit bound to c2~ sqrt(alpha)
    pub simplification_applies: bool,
    pub pass: bool,
}

/// For each epsilon: alpha = min(alpha_0, eps^2/(4 c2^2)) with c2 = 2/r^4 + 2,
/// an anchor (x0, y0), points of K_n drawn with close levels to the anchor, and
/// the largest f-bar over sampled pairs of K_n. A diagnostic, not a proof.
pub fn ks_criterion_probe(
    shape: &ProcessShape,
    r: &Rational,
    schedule: &[Rational],
    partitions: &[TestPartition],
    pairs: usize,
    seed: u64,
) -> Result<Vec<KsRow>> {
    let c2 = int(2) / num_traits::pow(r.clone(), 4) + int(2);
    let a0 = alpha0(r, &shape.c1);
    let m = shape.m();
    let mut rows = Vec::new();
    for (ei, eps) in schedule.iter().enumerate() {
        let alpha = rmin(&a0, &(eps * eps / (int(4) * &c2 * &c2)));
        let n = block_length(m, &alpha).to_usize().ok_or_else(|| Error::ParameterRange("name length".into()))?;
        let kmax = max_offset(m, &alpha, r).to_i64().unwrap_or(i64::MAX).min(shape.heights[0] as i64);
        for (pi, &part) in partitions.iter().enumerate() {
            let good_only = part != TestPartition::JunkRefining;
            let stream = ((ei as u64) << 32) | ((pi as u64) << 24);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let x0 = draw_point(&mut rng, shape, 1, true);
            let y0 = draw_point(&mut rng, shape, 2, true);
            let anchor = coarsen(shape, &pair_name(shape, &x0, &y0, n)?, part);
            // K_n: both halves close to the anchor, so any two differ by at most 2 kmax
            let member = |rng: &mut ChaCha8Rng| -> (PointDesc, PointDesc) {
                loop {
                    let x = draw_point(rng, shape, 1, good_only);
                    let y = draw_point(rng, shape, 2, good_only);
                    let (_, _, k) = level_offset(shape, &x0, &y0, &x, &y);
                    if k.abs() <= kmax {
                        return (x, y);
                    }
                }
            };
            let sampled: Vec<Result<(Rational, bool)>> = (0..pairs)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(stream + 1 + t as u64);
                    let (x, y) = member(&mut rng);
                    let (xt, yt) = member(&mut rng);
                    let a = coarsen(shape, &pair_name(shape, &x, &y, n)?, part);
                    let b = coarsen(shape, &pair_name(shape, &xt, &yt, n)?, part);
                    let f = fbar_distance(&a, &b)?.value;
                    let tri = f <= fbar_distance(&a, &anchor)?.value + fbar_distance(&anchor, &b)?.value;
                    Ok((f, tri))
                })
                .collect();
            let mut max_fbar = Rational::zero();
            let mut failures = 0;
            let mut triangle_ok = true;
            for s in sampled {
                let (f, tri) = s?;
                if &f >= eps {
                    failures += 1;
                }
                triangle_ok &= tri;
                if f > max_fbar {
                    max_fbar = f;
                }
            }
            rows.push(KsRow {
                epsilon: eps.clone(),
                partition: part,
                alpha: alpha.clone(),
                name_length: n as u64,
                pairs,
                max_fbar,
                failures,
                failure_fraction: if pairs == 0 { 0.0 } else { failures as f64 / pairs as f64 },
                triangle_ok,
                simplification_applies: &alpha * int(m) >= int(2) * num_traits::pow(r.clone(), 4),
                pass: failures == 0 && triangle_ok,
            });
        }
    }
    Ok(rows)
}
