use abc_core::combinatorics::{crt_index, derive_stage, offsets, StageParams};
use abc_core::conjugations::*;
use abc_core::geometry::{int, rat, Point, Rational};
use num_bigint::BigInt;
use num_traits::{One, Zero};
use proptest::prelude::*;

fn stage(d: u32, q_next: i64) -> StageParams {
    derive_stage(1, d, 2.into(), 3.into(), 1.into(), 5.into(), q_next.into(), Rational::zero()).unwrap()
}

fn b(x: i64) -> BigInt {
    BigInt::from(x)
}

#[test]
fn cell_zero_translation_is_trivial() {
    let st = stage(2, 13515);
    assert_eq!(offsets(&st, &b(0), &b(0), 1).unwrap(), (b(0), b(0)));
    let p = Point::new(rat(1, 40), rat(2, 45), vec![]);
    assert_eq!(h1_forward(&st, &p).unwrap(), p);
}

#[test]
fn cell_one_zero_lands_on_k6() {
    // S^(1)_6 = 6 v^1 + S^(1)_{0,0}; its grid cell mod (1/3,1/5) is (1, 0)
    let st = stage(2, 13515);
    assert_eq!(crt_index(&b(1), &b(0), &b(3), &b(5)).unwrap(), b(6));
    let (v1, v2) = st.generator(1);
    let (a, ap) = offsets(&st, &b(1), &b(0), 1).unwrap();
    let lam = rat(1, 15);
    let target1 = abc_core::geometry::frac(&(int(6) * &v1));
    let moved1 = abc_core::geometry::frac(&(&lam + Rational::new(a.clone(), b(3))));
    assert_eq!(target1, moved1);
    let target2 = abc_core::geometry::frac(&(int(6) * &v2));
    let moved2 = abc_core::geometry::frac(&Rational::new(ap.clone(), b(5)));
    assert_eq!(target2, moved2);
    let p = Point::new(rat(3, 2) / int(15), rat(3, 4) / int(15), vec![]);
    let img = h1_forward(&st, &p).unwrap();
    assert_eq!(img, p.translate(&Rational::new(a, b(3)), &Rational::new(ap, b(5))));
}

#[test]
fn slanted_cell_preimages_match_stated_boxes() {
    let st = stage(2, 13515);
    let eps = st.eps.clone();
    let lam = int(15);
    let c = SlantedCell::new(&st, 1, b(0), b(0), b(0)).unwrap();
    let f = c.preimage_box();
    assert_eq!(f.theta2.lo.value(), &((Rational::one() + &eps) / (int(2) * &lam)));
    assert_eq!(f.theta2.len, (int(2) - &eps) / (int(2) * &lam) - (Rational::one() + &eps) / (int(2) * &lam));
    let c2 = SlantedCell::new(&st, 2, b(0), b(0), b(0)).unwrap();
    let g = c2.preimage_box();
    assert_eq!(g.theta2.lo.value(), &(&eps / (int(2) * &lam)));
    assert_eq!(g.theta2.len, (Rational::one() - &eps * int(2)) / (int(2) * &lam));
}

#[test]
fn tilde_image_indices() {
    let st = stage(2, 13515);
    let cell = hn_image_of_tilde_cell(&st, &b(0), &b(0), &b(0), 1).unwrap();
    assert_eq!((cell.j1.clone(), cell.j2.clone()), (b(0), b(0)));
    let (a, ap) = offsets(&st, &b(1), &b(0), 1).unwrap();
    let cell = hn_image_of_tilde_cell(&st, &b(1), &b(0), &b(0), 1).unwrap();
    assert_eq!(cell.j1, b(1) + a * 5);
    assert_eq!(cell.j2, ap * 3);
    let t = tilde_cell(&st, &b(1), &b(0), &b(0), 1).unwrap();
    assert_eq!(t.measure(), cell.measure());
}

#[test]
fn desk_stage_pieces_preserve_measure() {
    for d in [2, 3] {
        let r = verify_measure_preservation(&stage(d, 240));
        assert!(r.pass, "d = {d}: {:?}", r.failures);
        assert_eq!(r.method, "exhaustive");
    }
}

#[test]
fn good_domains_correspond() {
    for d in [2, 3] {
        let r = verify_good_domains(&stage(d, 240)).unwrap();
        assert!(r.cell_lists_equal && r.tilde_images_match, "d = {d}");
        assert!(r.pass);
    }
}

#[test]
fn diameter_bound_holds() {
    for d in 2..6 {
        assert!(diameter_check(&stage(d, 240)).holds);
    }
}

#[test]
fn norm_certificates() {
    assert_eq!(NormCertificate::identity().upper, Rational::one());
    assert_eq!(shear_bound(&int(7)), int(8));
    let c = norm_bound_dh(&[stage(2, 13515)]);
    assert_eq!(c.upper, int(2048));
    assert_eq!(c.method, NormMethod::AnalyticBound);
}

#[test]
fn finite_differences_match_affine_max() {
    let r = affine_norm_check(&stage(2, 13515), 100);
    assert!(r.samples > 1000);
    assert_eq!(r.exact_max, int(2));
    assert!(r.agree);
}

#[test]
fn points_off_the_good_domain_are_rejected() {
    let st = stage(2, 240);
    let p = Point::new(Rational::zero(), Rational::zero(), vec![]);
    assert!(h1_forward(&st, &p).is_err());
    assert!(h2_forward(&st, &p).is_err());
    assert!(h2_inverse(&st, &p).is_err());
}

proptest! {
    #[test]
    fn hn_round_trip(c1 in 0i64..15, c2 in 0i64..15, s in 1u8..3, ell in 0i64..15, a in 1i64..99, bb in 1i64..99, f in 1i64..99) {
        let st = stage(3, 240);
        let cell = tilde_cell(&st, &b(c1), &b(c2), &b(ell), s).unwrap();
        let pick = |lo: &Rational, len: &Rational, t: i64| lo + len * rat(t, 100);
        let p = Point::new(
            pick(cell.theta1.lo.value(), &cell.theta1.len, a),
            pick(cell.theta2.lo.value(), &cell.theta2.len, bb),
            vec![pick(&cell.fiber[0].lo, &cell.fiber[0].len(), f)],
        );
        let img = hn_forward(&st, &p).unwrap();
        prop_assert_eq!(hn_inverse(&st, &img).unwrap(), p.clone());
        let (i, j) = (b(c1 % 5), b(c2 % 3));
        let slanted = hn_image_of_tilde_cell(&st, &i, &j, &b(ell), s).unwrap();
        // cells are equivariant under (1/3, 1/5), so compare modulo that lattice
        let back = p.translate(&Rational::new(b(-(c1 / 5)), b(3)), &Rational::new(b(-(c2 / 3)), b(5)));
        let img0 = hn_forward(&st, &back).unwrap();
        prop_assert!(slanted.contains_point(&img0));
    }
}
