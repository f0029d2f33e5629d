//! Stage-n skeleton: m_n, r_n, r'_n, Delta_n, the CRT cell assignment k(i,j),
//! translation offsets and the rectangle families S^(1), S^(2).

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{frac, int, Box, Rational};

/// Largest q_n q'_n for which per-cell tables are materialized.
pub const TABLE_LIMIT: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageParams {
    pub n: u64,
    pub d: u32,
    pub p: BigInt,
    pub q: BigInt,
    pub p_prime: BigInt,
    pub q_prime: BigInt,
    pub q_next: BigInt,
    pub qbar_next: BigInt,
    pub d_n: Rational,
    pub eps: Rational,
    pub m: BigInt,
    pub r: BigInt,
    pub r_prime: BigInt,
    pub delta: Rational,
    pub l_n: BigInt,
}

impl StageParams {
    pub fn lambda(&self) -> BigInt {
        &self.q * &self.q_prime
    }

    pub fn lambda_q(&self) -> Rational {
        int(self.lambda())
    }

    pub fn alpha(&self) -> Rational {
        BigRational::new(self.p.clone(), self.q.clone())
    }

    pub fn alpha_prime(&self) -> Rational {
        BigRational::new(self.p_prime.clone(), self.q_prime.clone())
    }

    pub fn alpha_next(&self) -> Rational {
        self.alpha() + BigRational::new(BigInt::one(), self.q_next.clone())
    }

    pub fn alpha_prime_next(&self) -> Rational {
        self.alpha_prime() + BigRational::new(BigInt::one(), self.qbar_next.clone()) + &self.d_n
    }

    /// (n q q')^(d-2)
    pub fn gamma(&self) -> BigInt {
        num_traits::pow(BigInt::from(self.n) * self.lambda(), (self.d - 2) as usize)
    }

    /// eps_n (n q q')^(2-d)
    pub fn eps_tilde(&self) -> Rational {
        &self.eps / int(self.gamma())
    }

    /// Generator of the approximating rotation for tower s.
    pub fn generator(&self, s: u8) -> (Rational, Rational) {
        let l = BigRational::new(BigInt::one(), self.lambda());
        let (a, b) = if s == 1 {
            (self.r.clone(), self.r_prime.clone())
        } else {
            (&self.r + &self.p, &self.r_prime + &self.p_prime)
        };
        (
            BigRational::new(a, self.q.clone()) + &l,
            BigRational::new(b, self.q_prime.clone()) + &l,
        )
    }

    /// Exact check of the four rotation identities mod 1.
    pub fn identities(&self) -> Vec<(&'static str, bool)> {
        let lam = self.lambda_q();
        let inv_l = Rational::one() / &lam;
        let m = int(self.m.clone());
        let m1 = &m - Rational::one();
        let a = self.alpha_next();
        let ap = self.alpha_prime_next();
        let q = int(self.q.clone());
        let qp = int(self.q_prime.clone());
        let r = int(self.r.clone());
        let rp = int(self.r_prime.clone());
        let same = |x: Rational, y: Rational| frac(&(x - y)).is_zero();
        vec![
            ("a1", same(&m1 * &a, &r / &q + &inv_l)),
            ("a2", same(&m1 * &ap, &rp / &qp + &inv_l - &self.delta)),
            (
                "a3",
                same(
                    &m * &a,
                    (&r + int(self.p.clone())) / &q + &inv_l + Rational::one() / int(self.q_next.clone()),
                ),
            ),
            ("a4", same(&m * &ap, (&rp + int(self.p_prime.clone())) / &qp + &inv_l + &m * &self.d_n)),
        ]
    }
}

fn gcd_check(a: &BigInt, b: &BigInt, what: &str, stage: u64) -> Result<()> {
    if !a.gcd(b).is_one() {
        return Err(Error::violation(stage, what, format!("gcd({a}, {b}) = {} != 1", a.gcd(b))));
    }
    Ok(())
}

/// Builds a stage from its seed fractions, q_{n+1} and D_n and checks (A)-(C),
/// Delta_n > 0 and the rotation identities.
#[allow(clippy::too_many_arguments)]
pub fn derive_stage(
    n: u64,
    d: u32,
    p: BigInt,
    q: BigInt,
    p_prime: BigInt,
    q_prime: BigInt,
    q_next: BigInt,
    d_n: Rational,
) -> Result<StageParams> {
    if n == 0 || d < 2 {
        return Err(Error::ParameterRange(format!("n = {n}, d = {d}")));
    }
    if !q.is_positive() || !q_prime.is_positive() {
        return Err(Error::ParameterRange("denominators must be positive".into()));
    }
    gcd_check(&q, &q_prime, "B", n)?;
    gcd_check(&p, &q, "reduced alpha", n)?;
    gcd_check(&p_prime, &q_prime, "reduced alpha'", n)?;
    let lambda = &q * &q_prime;
    if !q_next.is_positive() || !(&q_next % &lambda).is_zero() {
        return Err(Error::violation(n, "A", format!("{lambda} does not divide q_next = {q_next}")));
    }
    if d_n.is_negative() {
        return Err(Error::ParameterRange(format!("D_n = {d_n} < 0")));
    }
    let qbar_next = &q_next + &lambda;
    let m = &q_next / &lambda + BigInt::one();
    let m1 = &m - BigInt::one();
    let r = (&m1 * &p).mod_floor(&q);
    let r_prime = (&m1 * &p_prime).mod_floor(&q_prime);
    let delta = BigRational::new(BigInt::one(), qbar_next.clone()) - int(m1.clone()) * &d_n;
    if !delta.is_positive() {
        return Err(Error::violation(n, "Delta", format!("Delta_n = {delta} <= 0")));
    }
    let eps = BigRational::new(BigInt::from(2), BigInt::from(n) * &lambda);
    let stage = StageParams {
        n,
        d,
        p,
        q,
        p_prime,
        q_prime,
        q_next,
        qbar_next,
        d_n,
        eps,
        m,
        r,
        r_prime,
        delta,
        l_n: BigInt::zero(),
    };
    if let Some((name, _)) = stage.identities().into_iter().find(|(_, ok)| !ok) {
        return Err(Error::violation(n, name, "rotation identity fails mod 1".to_string()));
    }
    Ok(stage)
}

/// Unique 0 <= k < q q' with k = i mod q' and k = j mod q.
pub fn crt_index(i: &BigInt, j: &BigInt, q: &BigInt, q_prime: &BigInt) -> Result<BigInt> {
    if !q.gcd(q_prime).is_one() {
        return Err(Error::NotCoprime(q.to_string(), q_prime.to_string()));
    }
    if i.is_negative() || i >= q_prime || j.is_negative() || j >= q {
        return Err(Error::ParameterRange(format!("(i,j) = ({i},{j}) outside {q_prime} x {q}")));
    }
    // k = i + q' t with q' t = j - i mod q
    let e = q_prime.extended_gcd(q);
    let inv = e.x.mod_floor(q);
    let t = ((j - i) * inv).mod_floor(q);
    Ok(i + q_prime * t)
}

/// (a_{n,s}(i,j), a'_{n,s}(i,j)) with S^(s)_{k(i,j)} = R_{a/q, a'/q'} S^(s)_{i,j}.
pub fn offsets(stage: &StageParams, i: &BigInt, j: &BigInt, s: u8) -> Result<(BigInt, BigInt)> {
    let k = crt_index(i, j, &stage.q, &stage.q_prime)?;
    let (v1, v2) = stage.generator(s);
    let lam = stage.lambda_q();
    let kk = int(k);
    let x = frac(&(&kk * &v1 - int(i.clone()) / &lam)) * int(stage.q.clone());
    let y = frac(&(&kk * &v2 - int(j.clone()) / &lam)) * int(stage.q_prime.clone());
    if !x.is_integer() || !y.is_integer() {
        return Err(Error::violation(stage.n, "combidisj", format!("non-integral offset at ({i},{j})")));
    }
    Ok((x.to_integer(), y.to_integer()))
}

/// S^(s)_{i,j} as a box (fiber [0,1]^(d-2)).
pub fn s_rect(stage: &StageParams, i: &BigInt, j: &BigInt, s: u8) -> Box {
    let lam = stage.lambda_q();
    let half = Rational::new(1.into(), 2.into());
    let lo2 = if s == 1 { int(j.clone()) + &half } else { int(j.clone()) };
    let fiber = unit_fiber(stage.d);
    Box::from_bounds(
        int(i.clone()) / &lam,
        (int(i.clone()) + Rational::one()) / &lam,
        &lo2 / &lam,
        (lo2 + half) / &lam,
        fiber,
    )
    .expect("cell is a valid box")
}

pub fn unit_fiber(d: u32) -> Vec<crate::geometry::Interval> {
    (2..d)
        .map(|_| crate::geometry::Interval { lo: Rational::zero(), hi: Rational::one() })
        .collect()
}

fn small_lambda(stage: &StageParams) -> Result<u64> {
    match stage.lambda().to_u64() {
        Some(l) if l <= TABLE_LIMIT => Ok(l),
        _ => Err(Error::ParameterRange(format!(
            "q q' = {} exceeds the table limit {TABLE_LIMIT}",
            stage.lambda()
        ))),
    }
}

/// Iterates S^(s)_k = R^k_{v_s}(S^(s)_{0,0}), 0 <= k < q q'.
pub fn rectangles(stage: &StageParams, s: u8) -> Result<Vec<Box>> {
    let l = small_lambda(stage)?;
    let (v1, v2) = stage.generator(s);
    let base = s_rect(stage, &BigInt::zero(), &BigInt::zero(), s);
    Ok((0..l)
        .map(|k| {
            let kk = int(k);
            base.translate(&(&kk * &v1), &(&kk * &v2))
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct CellAssignment {
    pub q: u64,
    pub q_prime: u64,
    /// k_of[i][j], 0 <= i < q', 0 <= j < q
    pub k_of: Vec<Vec<u64>>,
    /// offsets[s-1][i][j] = (a, a')
    pub offsets: [Vec<Vec<(u64, u64)>>; 2],
}

impl CellAssignment {
    pub fn build(stage: &StageParams) -> Result<Self> {
        small_lambda(stage)?;
        let q = stage.q.to_u64().expect("small");
        let qp = stage.q_prime.to_u64().expect("small");
        let mut k_of = vec![vec![0u64; q as usize]; qp as usize];
        let mut off = [vec![vec![(0u64, 0u64); q as usize]; qp as usize], vec![vec![(0u64, 0u64); q as usize]; qp as usize]];
        for i in 0..qp {
            for j in 0..q {
                let (bi, bj) = (BigInt::from(i), BigInt::from(j));
                k_of[i as usize][j as usize] = crt_index(&bi, &bj, &stage.q, &stage.q_prime)?.to_u64().expect("small");
                for s in [1u8, 2] {
                    let (a, b) = offsets(stage, &bi, &bj, s)?;
                    off[(s - 1) as usize][i as usize][j as usize] = (a.to_u64().expect("small"), b.to_u64().expect("small"));
                }
            }
        }
        Ok(CellAssignment { q, q_prime: qp, k_of, offsets: off })
    }

    pub fn k(&self, i: u64, j: u64) -> u64 {
        self.k_of[i as usize][j as usize]
    }

    pub fn offset(&self, i: u64, j: u64, s: u8) -> (u64, u64) {
        self.offsets[(s - 1) as usize][i as usize][j as usize]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CombiReport {
    pub pass: bool,
    pub cells: u64,
    pub identities: Vec<(String, bool)>,
    pub witnesses: Vec<String>,
}

/// Position of a rectangle mod (1/q, 1/q') as a grid cell (i, j), i < q', j < q.
fn cell_position(stage: &StageParams, b: &Box, s: u8) -> (BigInt, BigInt) {
    let lam = stage.lambda_q();
    let half = if s == 1 { Rational::new(1.into(), 2.into()) / &lam } else { Rational::zero() };
    let x = frac(&(b.theta1.lo.value() * int(stage.q.clone()))) * int(stage.q_prime.clone());
    let y = frac(&((b.theta2.lo.value() - half) * int(stage.q_prime.clone()))) * int(stage.q.clone());
    (x.floor().to_integer(), y.floor().to_integer())
}

/// Exhaustive check that k -> position of S^(s)_k mod (1/q,1/q') is a bijection
/// with k = i mod q', k = j mod q and integral offsets. Corners are tracked as
/// integers in units of 1/(2 q q').
pub fn verify_combidisj(stage: &StageParams) -> Result<CombiReport> {
    let l = small_lambda(stage)?;
    let q = stage.q.to_u64().expect("small");
    let qp = stage.q_prime.to_u64().expect("small");
    let m = 2 * l;
    let red = |x: &BigInt, d: u64| x.mod_floor(&BigInt::from(d)).to_u64().expect("small");
    let mut witnesses = Vec::new();
    for s in [1u8, 2] {
        let (a, b) = if s == 1 {
            (red(&stage.r, q), red(&stage.r_prime, qp))
        } else {
            (red(&(&stage.r + &stage.p), q), red(&(&stage.r_prime + &stage.p_prime), qp))
        };
        // a/q + 1/(qq') and b/q' + 1/(qq')
        let v1 = (2 * (a * qp + 1)) % m;
        let v2 = (2 * (b * q + 1)) % m;
        let y0: u64 = if s == 1 { 1 } else { 0 };
        let mut seen: Vec<Option<u64>> = vec![None; l as usize];
        for k in 0..l {
            let x = (k as u128 * v1 as u128 % m as u128) as u64;
            let y = ((y0 as u128 + k as u128 * v2 as u128) % m as u128) as u64;
            let dy = (y + m - y0) % m;
            if x % 2 != 0 || dy % 2 != 0 {
                witnesses.push(format!("s={s} k={k}: S_k off the 1/(qq') grid"));
                continue;
            }
            let i = (x % (2 * qp)) / 2;
            let j = (dy % (2 * q)) / 2;
            let slot = (i * q + j) as usize;
            if let Some(prev) = seen[slot] {
                witnesses.push(format!("s={s}: S_{prev} and S_{k} share cell ({i},{j})"));
            }
            seen[slot] = Some(k);
            if k % qp != i || k % q != j {
                witnesses.push(format!("s={s}: S_{k} sits at ({i},{j}), which is not its CRT cell"));
            }
        }
        if seen.iter().any(|x| x.is_none()) {
            witnesses.push(format!("s={s}: some cell is not hit"));
        }
    }
    let identities: Vec<(String, bool)> = stage.identities().into_iter().map(|(n, b)| (n.to_string(), b)).collect();
    let pass = witnesses.is_empty() && identities.iter().all(|x| x.1);
    Ok(CombiReport { pass, cells: l, identities, witnesses })
}

/// verify_combidisj carried out on the boxes themselves: every S^(s)_k is built
/// by rational translation and compared with the offset translate of S_(i,j).
pub fn verify_combidisj_boxes(stage: &StageParams) -> Result<CombiReport> {
    let l = small_lambda(stage)?;
    let mut witnesses = Vec::new();
    for s in [1u8, 2] {
        let rects = rectangles(stage, s)?;
        let mut seen: Vec<Option<u64>> = vec![None; l as usize];
        for (k, b) in rects.iter().enumerate() {
            let (i, j) = cell_position(stage, b, s);
            if !(b.theta1.lo.value() * stage.lambda_q()).is_integer() {
                witnesses.push(format!("s={s} k={k}: S_k off the 1/(qq') grid"));
                continue;
            }
            let slot = (i.to_u64().unwrap() * stage.q.to_u64().unwrap() + j.to_u64().unwrap()) as usize;
            if let Some(prev) = seen[slot] {
                witnesses.push(format!("s={s}: S_{prev} and S_{k} share cell ({i},{j})"));
            }
            seen[slot] = Some(k as u64);
            let kk = crt_index(&i, &j, &stage.q, &stage.q_prime)?;
            if kk != BigInt::from(k) {
                witnesses.push(format!("s={s}: S_{k} sits at ({i},{j}) but k(i,j) = {kk}"));
            }
            let (a, ap) = offsets(stage, &i, &j, s)?;
            let moved = s_rect(stage, &i, &j, s).translate(
                &BigRational::new(a, stage.q.clone()),
                &BigRational::new(ap, stage.q_prime.clone()),
            );
            if &moved != b {
                witnesses.push(format!("s={s}: offset translate of S_({i},{j}) differs from S_{k}"));
            }
        }
        if seen.iter().any(|x| x.is_none()) {
            witnesses.push(format!("s={s}: some cell is not hit"));
        }
    }
    let identities: Vec<(String, bool)> = stage.identities().into_iter().map(|(n, b)| (n.to_string(), b)).collect();
    let pass = witnesses.is_empty() && identities.iter().all(|x| x.1);
    Ok(CombiReport { pass, cells: l, identities, witnesses })
}

/// Lattice Lambda_n and the subgroups Gamma^(s)_n, stored as numerators over q q'.
#[derive(Clone, Debug)]
pub struct LatticeGroups {
    pub lambda: u64,
    pub gamma: [Vec<(u64, u64)>; 2],
}

impl LatticeGroups {
    pub fn build(stage: &StageParams) -> Result<Self> {
        let l = small_lambda(stage)?;
        let lam = stage.lambda_q();
        let gamma = [1u8, 2].map(|s| {
            let (v1, v2) = stage.generator(s);
            let mut g: Vec<(u64, u64)> = (0..l)
                .map(|k| {
                    let kk = int(k);
                    let a = frac(&(&kk * &v1)) * &lam;
                    let b = frac(&(&kk * &v2)) * &lam;
                    (a.to_integer().to_u64().unwrap(), b.to_integer().to_u64().unwrap())
                })
                .collect();
            g.sort_unstable();
            g.dedup();
            g
        });
        Ok(LatticeGroups { lambda: l, gamma })
    }

    /// Cosets Gamma^(s) + (i1/q, i2/q') partition Lambda_n.
    pub fn cosets_partition(&self, q: u64, q_prime: u64, s: u8) -> bool {
        let l = self.lambda;
        let g = &self.gamma[(s - 1) as usize];
        if g.len() as u64 != l {
            return false;
        }
        let mut hit = vec![false; (l * l) as usize];
        for i1 in 0..q {
            for i2 in 0..q_prime {
                for &(a, b) in g {
                    let x = (a + i1 * q_prime) % l;
                    let y = (b + i2 * q) % l;
                    let idx = (x * l + y) as usize;
                    if hit[idx] {
                        return false;
                    }
                    hit[idx] = true;
                }
            }
        }
        hit.into_iter().all(|h| h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rat;

    fn b(x: i64) -> BigInt {
        BigInt::from(x)
    }

    #[test]
    fn crt_brute_force() {
        for i in 0..5 {
            for j in 0..3 {
                let k = crt_index(&b(i), &b(j), &b(3), &b(5)).unwrap();
                let brute = (0..15).find(|k| k % 5 == i && k % 3 == j).unwrap();
                assert_eq!(k, b(brute));
            }
        }
        assert_eq!(crt_index(&b(1), &b(0), &b(3), &b(5)).unwrap(), b(6));
        assert_eq!(crt_index(&b(2), &b(1), &b(3), &b(5)).unwrap(), b(7));
        assert!(crt_index(&b(0), &b(0), &b(2), &b(4)).is_err());
    }

    #[test]
    fn fifteen_cell_stage() {
        let st = derive_stage(1, 2, b(2), b(3), b(1), b(5), b(240), rat(0, 1)).unwrap();
        assert_eq!(st.m, b(17));
        assert_eq!(st.r, b(2));
        assert_eq!(st.r_prime, b(1));
    }

    #[test]
    fn minimal_multiple() {
        let st = derive_stage(1, 2, b(1), b(2), b(1), b(3), b(6), rat(0, 1)).unwrap();
        assert_eq!(st.m, b(2));
        assert_eq!(st.delta, rat(1, 12));
    }

    #[test]
    fn condition_a() {
        let e = derive_stage(1, 2, b(2), b(3), b(1), b(5), b(20), rat(0, 1)).unwrap_err();
        assert!(matches!(e, Error::ConditionViolation { ref condition, .. } if condition == "A"));
    }

    #[test]
    fn first_rectangle() {
        let st = derive_stage(1, 2, b(2), b(3), b(1), b(5), b(240), rat(0, 1)).unwrap();
        let r = rectangles(&st, 1).unwrap();
        assert_eq!(r[0], Box::from_bounds(rat(0, 1), rat(1, 15), rat(1, 30), rat(1, 15), vec![]).unwrap());
    }
}
