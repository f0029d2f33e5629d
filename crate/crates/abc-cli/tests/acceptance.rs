//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::path::PathBuf;
use std::time::Instant;

use abc_cli::pipeline::{run, Command};
use abc_cli::RunConfig;
use abc_core::approximation::{exact_translation_measure, h_bound_check, rigidity_check, speed_exact, translation_continuity_mc, McConfig};
use abc_core::bump::{bump_audit, BumpProfile};
use abc_core::combinatorics::{derive_stage, verify_combidisj};
use abc_core::conjugations::verify_measure_preservation;
use abc_core::fbar::{fbar_dp, verify_match_lemma, ProcessShape, SymbolName};
use abc_core::geometry::{int, rat, Box, BoxUnion, Rational};
use abc_core::scheduler::{build_ladder, Ladder, SchedulerConfig};
use abc_core::towers::{build_bases, build_columns, measures, verify_disjointness, CheckMethod};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_ladder() -> Ladder {
    build_ladder(&SchedulerConfig::desk(), h_bound_check).expect("desk ladder")
}

fn combinatorics_exactness() -> Outcome {
    let mut stages = 0u64;
    let mut bad = Vec::new();
    for q in 1i64..=200 {
        for qp in 1i64..=200 / q {
            if q.gcd(&qp) != 1 {
                continue;
            }
            let lam = q * qp;
            for p in (0..q).filter(|p| p.gcd(&q) == 1) {
                for pp in (0..qp).filter(|pp| pp.gcd(&qp) == 1) {
                    // vary m_n - 1 over residues mod q q'
                    let t = 1 + (3 * p + 7 * pp + q) % lam;
                    let st = match derive_stage(1, 2, p.into(), q.into(), pp.into(), qp.into(), (lam * t).into(), Rational::zero()) {
                        Ok(st) => st,
                        Err(e) => {
                            bad.push(format!("({p}/{q}, {pp}/{qp}): {e}"));
                            continue;
                        }
                    };
                    match verify_combidisj(&st) {
                        Ok(rep) if rep.pass && rep.identities.len() == 4 => stages += 1,
                        Ok(rep) => bad.push(format!("({p}/{q}, {pp}/{qp}): {:?}", rep.witnesses.first())),
                        Err(e) => bad.push(format!("({p}/{q}, {pp}/{qp}): {e}")),
                    }
                }
            }
        }
    }
    check(bad.is_empty(), format!("{stages} stages, {} failures {:?}", bad.len(), bad.first()))
}

fn fifteen_cell_example() -> Outcome {
    let mut seen = 0;
    for k in 0..40i64 {
        let m1 = 1 + 15 * k;
        let st = derive_stage(1, 2, 2.into(), 3.into(), 1.into(), 5.into(), (15 * m1).into(), Rational::zero()).map_err(|e| e.to_string())?;
        if st.r != BigInt::from(2) || st.r_prime != BigInt::from(1) {
            return Err(format!("m-1 = {m1}: r = {}, r' = {}", st.r, st.r_prime));
        }
        seen += 1;
    }
    Ok(format!("r = 2, r' = 1 for {seen} choices of q_(n+1)"))
}

fn tower_disjointness(ladder: &Ladder) -> Outcome {
    let st = &ladder.stages[0];
    if st.q_next < BigInt::from(13515) {
        return Err(format!("q_2 = {}", st.q_next));
    }
    let pair = build_bases(st).map_err(|e| e.to_string())?;
    let rep = verify_disjointness(&pair);
    let lam = st.lambda();
    let expected = (&st.m - BigInt::one()) * &lam + &st.m * &lam;
    let slack1 = int(3) * &st.eps / (int(8) * st.lambda_q());
    let margins_ok = rep.margins.iter().all(|m| m.corner_formula_equal && m.slack_holds && m.holds && m.min_margin_observed.as_ref() == Some(&m.min_margin_formula));
    let ok = rep.pass
        && rep.method == CheckMethod::Exhaustive
        && rep.boxes == expected
        && rep.witness.is_none()
        && margins_ok
        && rep.margins[0].slack == slack1;
    check(ok, format!("q_2 = {}, {} boxes exhaustively, margins equal the closed forms: {margins_ok}", st.q_next, rep.boxes))
}

fn tower_measures(ladder: &Ladder) -> Outcome {
    let mut out = Vec::new();
    for st in &ladder.stages {
        let pair = build_bases(st).map_err(|e| e.to_string())?;
        let me = measures(&pair);
        let one = Rational::one();
        let b = &one - int(4) * &st.eps;
        let ok1 = me.tower[0] == &b / int(2);
        let ok2 = me.tower[1] > &b * &b / int(2);
        if !(ok1 && ok2 && me.enumerated_match != Some(false)) {
            return Err(format!("stage {}: tower 1 {} tower 2 {}", st.n, me.tower[0], me.tower[1]));
        }
        out.push(format!("n={}: mu1 = {}", st.n, me.tower[0]));
    }
    Ok(out.join(", "))
}

fn speed(ladder: &Ladder) -> Outcome {
    let mut out = Vec::new();
    for st in &ladder.stages {
        let rep = speed_exact(&build_bases(st).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let bound = int(6) * num_traits::pow(st.lambda_q(), 2) / int(&st.q_next * &st.qbar_next);
        let ok = rep.exact_wraparound_term <= bound && rep.ratio > Rational::zero() && rep.ratio <= int(6) && rep.pass;
        if !ok {
            return Err(format!("stage {}: term {} bound {bound} ratio {}", st.n, rep.exact_wraparound_term, rep.ratio));
        }
        out.push(format!("n={}: ratio {:.4}", st.n, abc_core::geometry::to_f64(&rep.ratio)));
    }
    Ok(out.join(", "))
}

fn rigidity(ladder: &Ladder) -> Outcome {
    for st in &ladder.stages {
        let rep = rigidity_check(st);
        let qp_next = st.alpha_prime_next().denom().clone();
        let period = int(&st.q_next * &qp_next);
        let direct = (&period * st.alpha_next()).is_integer() && (&period * st.alpha_prime_next()).is_integer();
        if !(rep.pass && direct && rep.period == &st.q_next * &qp_next) {
            return Err(format!("stage {}", st.n));
        }
    }
    Ok(format!("{} stages", ladder.stages.len()))
}

// longest common subsequence by trying every subset of positions of `a`
fn brute_lcs(a: &[u64], b: &[u64]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let ones = mask.count_ones() as usize;
        if ones <= best {
            continue;
        }
        let mut j = 0;
        let fits = a.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).all(|(_, s)| {
            while j < b.len() && b[j] != *s {
                j += 1;
            }
            let hit = j < b.len();
            j += 1;
            hit
        });
        if fits {
            best = ones;
        }
    }
    best
}

fn fbar_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs = 100_000;
    for i in 0..pairs {
        let n = rng.gen_range(1..=10usize);
        let alphabet = rng.gen_range(1..=4u64);
        let a: Vec<u64> = (0..n).map(|_| rng.gen_range(0..alphabet)).collect();
        let b: Vec<u64> = (0..n).map(|_| rng.gen_range(0..alphabet)).collect();
        let (na, nb) = (SymbolName::new(a.clone()).unwrap(), SymbolName::new(b.clone()).unwrap());
        let f = fbar_dp(&na, &nb).map_err(|e| e.to_string())?;
        let exact = Rational::one() - Rational::new(BigInt::from(brute_lcs(&a, &b)), BigInt::from(n));
        if f.value != exact || !f.witness.is_valid(&na, &nb) {
            return Err(format!("pair {i}: {a:?} {b:?} table {} exhaustive {exact}", f.value));
        }
    }
    Ok(format!("{pairs} pairs agree"))
}

fn match_lemma(ladder: &Ladder) -> Outcome {
    let st = &ladder.stages[0];
    let pair = build_bases(st).map_err(|e| e.to_string())?;
    let shape = ProcessShape::from_reports(
        &pair,
        &speed_exact(&pair).map_err(|e| e.to_string())?,
        &build_columns(&pair).map_err(|e| e.to_string())?,
        &measures(&pair),
    )
    .map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for (i, alpha) in [rat(1, 16), rat(1, 64)].into_iter().enumerate() {
        let rep = verify_match_lemma(&shape, &alpha, &rat(1, 4), 1000, 11 + i as u64).map_err(|e| e.to_string())?;
        let ok = rep.pass && rep.violations == 0 && rep.quadruples.len() >= 1000 && rep.quadruples.iter().all(|q| q.ok && q.exact <= q.bound);
        if !ok {
            return Err(format!("alpha {alpha}: {} violations", rep.violations));
        }
        out.push(format!("alpha {alpha}: {} quadruples, 0 violations", rep.quadruples.len()));
    }
    Ok(out.join(", "))
}

fn measure_preservation(ladder: &Ladder) -> Outcome {
    let mut out = Vec::new();
    for st in &ladder.stages {
        let rep = verify_measure_preservation(st);
        if !rep.pass {
            return Err(format!("stage {}: {:?}", st.n, rep.failures.first()));
        }
        out.push(format!("n={}: {} pieces ({})", st.n, rep.pieces, rep.method));
    }
    Ok(out.join(", "))
}

fn bumps() -> Outcome {
    let mut out = Vec::new();
    for rho in [rat(1, 10), rat(1, 100)] {
        for delta in [rat(1, 10), rat(1, 100)] {
            let a = bump_audit(&BumpProfile::new(rho.clone(), delta.clone()), 10_000);
            // three sigma plateaus and six beta constraints, plus the range check
            if !a.pass || a.items.len() < 9 || a.items.iter().any(|i| i.points == 0) {
                let first = a.items.iter().find(|i| i.violations > 0).map(|i| i.name.clone());
                return Err(format!("rho {rho} delta {delta}: {first:?}"));
            }
            out.push(format!("({rho},{delta})"));
        }
    }
    Ok(format!("nine constraints hold for {}", out.join(" ")))
}

fn mc_soundness() -> Outcome {
    let d = rat(1, 1000);
    let b = Box::from_bounds(rat(1, 10), rat(3, 10), rat(1, 5), rat(7, 10), vec![]).unwrap();
    let x = BoxUnion::new(vec![b]).unwrap();
    let exact = abc_core::geometry::to_f64(&exact_translation_measure(&x, (&d, &Rational::zero())));
    let region = BoxUnion::new(vec![Box::from_bounds(rat(1, 10), rat(3, 10) + &d, rat(1, 5), rat(7, 10), vec![]).unwrap()]).unwrap();
    let mut covered = 0;
    for seed in 0..100u64 {
        let cfg = McConfig { samples: 4000, seed: 1000 + seed, confidence: 0.99, strict: true };
        let est = translation_continuity_mc(&x, (&d, &Rational::zero()), &region, None, &cfg).map_err(|e| e.to_string())?;
        if (est.estimate - exact).abs() <= est.half_width {
            covered += 1;
        }
    }
    check(covered >= 99, format!("{covered}/100 intervals cover the exact value"))
}

fn determinism() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.mc.samples = 400;
    cfg.fbar.quadruples = 6;
    cfg.fbar.probe_pairs = 6;
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let mut dirs = Vec::new();
    for threads in [1usize, 4] {
        let dir = base.join(format!("threads{threads}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let result = pool.install(|| run(&cfg, Command::All, None)).map_err(|e| e.to_string())?;
        result.write(&dir).map_err(|e| e.to_string())?;
        dirs.push(dir);
    }
    let mut names: Vec<_> = std::fs::read_dir(&dirs[0]).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        let a = std::fs::read(dirs[0].join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].join(name)).map_err(|e| format!("{name:?}: {e}"))?;
        if a != b {
            return Err(format!("{name:?} differs between 1 and 4 threads"));
        }
    }
    let other = std::fs::read_dir(&dirs[1]).map_err(|e| e.to_string())?.count();
    check(other == names.len(), format!("{} files byte-identical under 1 and 4 threads", names.len()))
}

fn main() {
    let ladder = desk_ladder();
    let criteria: Vec<(&str, std::boxed::Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("combinatorics exactness", std::boxed::Box::new(combinatorics_exactness)),
        ("fifteen-cell example", std::boxed::Box::new(fifteen_cell_example)),
        ("tower disjointness", std::boxed::Box::new(|| tower_disjointness(&ladder))),
        ("tower measures", std::boxed::Box::new(|| tower_measures(&ladder))),
        ("speed bound", std::boxed::Box::new(|| speed(&ladder))),
        ("rigidity", std::boxed::Box::new(|| rigidity(&ladder))),
        ("fbar oracle equivalence", std::boxed::Box::new(fbar_oracle)),
        ("match lemma bound", std::boxed::Box::new(|| match_lemma(&ladder))),
        ("measure preservation", std::boxed::Box::new(|| measure_preservation(&ladder))),
        ("bump audit", std::boxed::Box::new(bumps)),
        ("mc soundness", std::boxed::Box::new(mc_soundness)),
        ("determinism", std::boxed::Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1)
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
