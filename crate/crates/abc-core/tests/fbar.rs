use abc_core::approximation::speed_exact;
use abc_core::fbar::*;
use abc_core::geometry::{int, rat, Rational};
use abc_core::scheduler::{build_ladder, no_h_check, SchedulerConfig};
use abc_core::towers::{build_bases, build_columns, measures};
use abc_core::Error;
use num_bigint::BigInt;
use num_traits::{One, Zero};
use proptest::prelude::*;

fn name(s: &str) -> SymbolName {
    SymbolName::new(s.bytes().map(u64::from).collect()).unwrap()
}

// longest common subsequence by trying every subset of positions of `a`
fn brute_lcs(a: &[u64], b: &[u64]) -> usize {
    let n = a.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        let ones = mask.count_ones() as usize;
        if ones <= best {
            continue;
        }
        let mut j = 0;
        let mut ok = true;
        for (i, s) in a.iter().enumerate() {
            if mask >> i & 1 == 1 {
                while j < b.len() && b[j] != *s {
                    j += 1;
                }
                if j == b.len() {
                    ok = false;
                    break;
                }
                j += 1;
            }
        }
        if ok {
            best = ones;
        }
    }
    best
}

fn desk_shape() -> ProcessShape {
    let mut cfg = SchedulerConfig::desk();
    cfg.n_max = 1;
    let st = build_ladder(&cfg, no_h_check).unwrap().stages.remove(0);
    let pair = build_bases(&st).unwrap();
    let speed = speed_exact(&pair).unwrap();
    let cols = build_columns(&pair).unwrap();
    let meas = measures(&pair);
    ProcessShape::from_reports(&pair, &speed, &cols, &meas).unwrap()
}

#[test]
fn small_distances() {
    let f = fbar_distance(&name("aab"), &name("aba")).unwrap();
    assert_eq!(f.value, rat(1, 3));
    assert!(f.witness.is_valid(&name("aab"), &name("aba")));
    assert_eq!(fbar_distance(&name("abcab"), &name("abcab")).unwrap().value, Rational::zero());
    assert_eq!(fbar_distance(&name("aaaa"), &name("bbbb")).unwrap().value, Rational::one());
    assert!(matches!(fbar_distance(&name("ab"), &name("abc")), Err(Error::LengthMismatch(2, 3))));
    assert!(SymbolName::new(vec![]).is_err());
}

#[test]
fn junk_matches_nothing() {
    let a = SymbolName::new(vec![JUNK, 1, JUNK]).unwrap();
    assert_eq!(fbar_distance(&a, &a).unwrap().value, rat(2, 3));
    assert_eq!(fbar_hs(&a, &a).unwrap().value, rat(2, 3));
}

#[test]
fn desk_names_follow_the_levels() {
    let shape = desk_shape();
    assert_eq!(shape.heights, [1545, 1546]);
    assert_eq!(shape.columns[0], 360);
    let good = PointDesc { tower: 2, level: 0, column: shape.junk[1] };
    let n = names_from_towers(&shape, &good, 1546).unwrap();
    assert_eq!(n.0, (0..1546).map(|j| 1545 + j).collect::<Vec<_>>());
    let x = PointDesc { tower: 1, level: 0, column: shape.junk[0] };
    let n = names_from_towers(&shape, &x, 2 * 1545).unwrap();
    let once: Vec<u64> = (0..1545).collect();
    assert_eq!(&n.0[..1545], &once[..]);
    assert_eq!(&n.0[1545..], &once[..]);
    // a junk column leaves the model after its first top level
    assert!(shape.junk[0] >= 1);
    let bad = PointDesc { tower: 1, level: 1540, column: 0 };
    let n = names_from_towers(&shape, &bad, 10).unwrap();
    assert_eq!(&n.0[..5], &[1540, 1541, 1542, 1543, 1544]);
    assert!(n.0[5..].iter().all(|s| *s == JUNK));
    assert!(names_from_towers(&shape, &PointDesc { tower: 1, level: 1545, column: 0 }, 3).is_err());
}

#[test]
fn alignment_bound_examples() {
    let r = rat(1, 1);
    let b = alignment_bound(10, &rat(1, 4), &r, &BigInt::one()).unwrap();
    assert_eq!(b.explicit, rat(2, 5));
    assert_eq!(b.c2_tilde, int(2));
    assert!(b.within_simplified && b.within_chain);
    let b0 = alignment_bound(10, &rat(1, 4), &r, &BigInt::zero()).unwrap();
    assert_eq!(b0.explicit, rat(1, 5));
    assert!(alignment_bound(10, &rat(1, 4), &r, &BigInt::from(4)).is_err());
    assert!(alignment_bound(10, &Rational::zero(), &r, &BigInt::zero()).is_err());
    assert_eq!(ceil_sqrt(&rat(9, 4)), BigInt::from(2));
    assert_eq!(ceil_sqrt(&rat(4, 1)), BigInt::from(2));
    assert_eq!(ceil_sqrt(&rat(1546 * 1546, 16)), BigInt::from(387));
}

#[test]
fn desk_match_lemma_holds_on_sampled_quadruples() {
    let shape = desk_shape();
    for alpha in [rat(1, 16), rat(1, 64)] {
        let rep = verify_match_lemma(&shape, &alpha, &rat(1, 4), 40, 3).unwrap();
        assert_eq!(rep.violations, 0, "{:?}", rep.quadruples.iter().find(|q| !q.ok));
        assert!(rep.zero_offset_ok);
        assert!(rep.pass);
        assert!(!rep.alpha_below_alpha0);
        assert_eq!(rep.name_length, 1546 * ceil_sqrt(&(&alpha * int(1546 * 1546))).to_string().parse::<u64>().unwrap());
    }
}

#[test]
fn constructed_alignment_is_a_matching() {
    let shape = desk_shape();
    let n = 1546 * 20;
    let x = PointDesc { tower: 1, level: 100, column: shape.junk[0] };
    let y = PointDesc { tower: 2, level: 7, column: shape.junk[1] + 3 };
    let xt = PointDesc { tower: 1, level: 1000, column: shape.junk[0] + 1 };
    let yt = PointDesc { tower: 2, level: 900, column: shape.junk[1] };
    let (s, st, k) = level_offset(&shape, &x, &y, &xt, &yt);
    let q = Quadruple { x, y, x_tilde: xt, y_tilde: yt, s, s_tilde: st, k };
    let a = product_name(&shape, &names_from_towers(&shape, &x, n).unwrap(), &names_from_towers(&shape, &y, n).unwrap()).unwrap();
    let b = product_name(&shape, &names_from_towers(&shape, &xt, n).unwrap(), &names_from_towers(&shape, &yt, n).unwrap()).unwrap();
    let w = constructed_alignment(&shape, &q, n);
    assert!(w.is_valid(&a, &b));
    assert!(!w.is_empty());
    let exact = fbar_distance(&a, &b).unwrap();
    assert!(exact.matched >= w.len());
}

#[test]
fn probe_rows_are_reported() {
    let shape = desk_shape();
    let rows = ks_criterion_probe(&shape, &rat(1, 4), &[rat(1, 2)], &[TestPartition::Levels, TestPartition::Blocks(4), TestPartition::JunkRefining], 20, 5).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.triangle_ok);
        assert!(r.max_fbar <= Rational::one());
    }
    // coarser partitions can only shrink the distance
    assert!(rows[1].max_fbar <= rows[0].max_fbar);
}

fn small_names(max_len: usize, alphabet: u64) -> impl Strategy<Value = (Vec<u64>, Vec<u64>)> {
    (1..=max_len).prop_flat_map(move |n| (prop::collection::vec(0..alphabet, n), prop::collection::vec(0..alphabet, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]
    #[test]
    fn table_matches_exhaustive_search((a, b) in small_names(10, 4)) {
        let (na, nb) = (SymbolName::new(a.clone()).unwrap(), SymbolName::new(b.clone()).unwrap());
        let f = fbar_dp(&na, &nb).unwrap();
        prop_assert_eq!(f.matched, brute_lcs(&a, &b));
        prop_assert!(f.witness.is_valid(&na, &nb));
        let h = fbar_hs(&na, &nb).unwrap();
        prop_assert_eq!(h.matched, f.matched);
        prop_assert!(h.witness.is_valid(&na, &nb));
    }

    #[test]
    fn distinct_symbols_take_the_increasing_run_path(a in prop::collection::vec(0u64..30, 1..40), keys in prop::collection::vec(any::<u64>(), 40)) {
        // b: a permutation of distinct symbols drawn from the same range
        let n = a.len();
        let mut b: Vec<u64> = (0..30).collect();
        b.sort_by_key(|x| keys[*x as usize % 40] ^ *x);
        b.truncate(n.min(30));
        while b.len() < n {
            b.push(100 + b.len() as u64);
        }
        let (na, nb) = (SymbolName::new(a).unwrap(), SymbolName::new(b).unwrap());
        let h = fbar_hs(&na, &nb).unwrap();
        prop_assert_eq!(h.matched, fbar_dp(&na, &nb).unwrap().matched);
        prop_assert!(h.witness.is_valid(&na, &nb));
        let h2 = fbar_hs(&nb, &na).unwrap();
        prop_assert_eq!(h2.matched, h.matched);
    }

    #[test]
    fn fbar_is_a_pseudometric(n in 1usize..50, seed in prop::collection::vec(0u64..5, 150)) {
        let a = SymbolName::new(seed[..n].to_vec()).unwrap();
        let b = SymbolName::new(seed[50..50 + n].to_vec()).unwrap();
        let c = SymbolName::new(seed[100..100 + n].to_vec()).unwrap();
        let d = |x: &SymbolName, y: &SymbolName| fbar_distance(x, y).unwrap().value;
        prop_assert_eq!(d(&a, &a), Rational::zero());
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
    }
}
