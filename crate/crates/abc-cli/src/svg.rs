//! Schematic figures. Coordinates are printed with six decimals; the exact
//! values live in the JSON reports.

use std::fmt::Write;

use abc_core::combinatorics::{rectangles, StageParams};
use abc_core::geometry::{frac, int, to_f64, Box, Rational};
use abc_core::towers::TowerPair;
use num_bigint::BigInt;
use num_traits::Zero;

fn num(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn open(w: f64, h: f64, px: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" width=\"{}\" height=\"{}\">\n",
        num(w),
        num(h),
        num(px),
        num(px * h / w)
    )
}

/// One labelled rectangle per S^(s)_k reduced mod (1/q, 1/q'), grey for s = 1
/// and black for s = 2, in units where the fundamental domain has width 1.
pub fn combinatorics(stage: Option<&StageParams>) -> String {
    let Some(st) = stage else {
        return format!("{}</svg>\n", open(1.0, 1.0, 600.0));
    };
    let q = int(st.q.clone());
    let qp = int(st.q_prime.clone());
    let height = to_f64(&(&q / &qp));
    let mut out = open(1.0, height, 600.0);
    let _ = writeln!(out, "<defs><clipPath id=\"fd\"><rect x=\"0\" y=\"0\" width=\"1\" height=\"{}\"/></clipPath></defs>", num(height));
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"1\" height=\"{}\" fill=\"none\" stroke=\"#000\" stroke-width=\"0.002\"/>", num(height));
    let font = 0.35 / to_f64(&st.lambda_q()).max(1.0);
    let mut g = String::from("<g clip-path=\"url(#fd)\">\n");
    for (s, fill, ink) in [(1u8, "#bbb", "#000"), (2u8, "#000", "#fff")] {
        let Ok(rects) = rectangles(st, s) else { continue };
        for (k, b) in rects.iter().enumerate() {
            // reduce the corner into [0,1/q) x [0,1/q') and rescale by q
            let x = frac(&(b.theta1.lo.value() * &q));
            let y = frac(&(b.theta2.lo.value() * &qp)) * &q / &qp;
            let w = &b.theta1.len * &q;
            let h = &b.theta2.len * &q;
            let flip = |v: &Rational, len: &Rational| height - to_f64(&(v + len));
            let _ = writeln!(
                g,
                "<rect class=\"s{s}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
                num(to_f64(&x)),
                num(flip(&y, &h)),
                num(to_f64(&w)),
                num(to_f64(&h))
            );
            let cx = to_f64(&x) + to_f64(&w) / 2.0;
            let cy = flip(&y, &h) + to_f64(&h) / 2.0;
            let _ = writeln!(
                g,
                "<text x=\"{}\" y=\"{}\" font-size=\"{}\" fill=\"{ink}\" text-anchor=\"middle\" dominant-baseline=\"middle\">{k}</text>",
                num(cx),
                num(cy),
                num(font)
            );
        }
    }
    g.push_str("</g>\n");
    out.push_str(&g);
    out.push_str("</svg>\n");
    out
}

fn strip_polygon(kind: u8, lower: f64, width: f64, shift: f64) -> String {
    let c = lower + shift;
    let pts: [(f64, f64); 4] = if kind == 1 {
        // theta2 - theta1 in [c, c + width]
        [(0.0, c), (1.0, c + 1.0), (1.0, c + width + 1.0), (0.0, c + width)]
    } else {
        [(c, 0.0), (c + 1.0, 1.0), (c + width + 1.0, 1.0), (c + width, 0.0)]
    };
    pts.iter().map(|(x, y)| format!("{},{}", num(*x), num(1.0 - y))).collect::<Vec<_>>().join(" ")
}

fn box_rects(b: &Box, class: &str, fill: &str, out: &mut String) {
    for p in b.plain_pieces() {
        let _ = writeln!(
            out,
            "<rect class=\"{class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
            num(to_f64(&p.t1.lo)),
            num(1.0 - to_f64(&p.t2.hi)),
            num(to_f64(&p.t1.len())),
            num(to_f64(&p.t2.len()))
        );
    }
}

/// The strips P^(1)_{0,0} and P^(2)_{0,0} on the unit torus with the first
/// `per_tower` level boxes of each tower that lie in them.
pub fn towers(pair: Option<&TowerPair>, per_tower: u64) -> String {
    let mut out = open(1.0, 1.0, 800.0);
    let Some(pair) = pair else {
        out.push_str("</svg>\n");
        return out;
    };
    let st = &pair.stage;
    let lam = st.lambda_q();
    let eps = &st.eps;
    let lower = to_f64(&(eps / (int(2) * &lam)));
    let width = to_f64(&((Rational::from_integer(1.into()) - eps * int(2)) / (int(2) * &lam)));
    out.push_str("<defs><clipPath id=\"torus\"><rect x=\"0\" y=\"0\" width=\"1\" height=\"1\"/></clipPath></defs>\n");
    out.push_str("<rect x=\"0\" y=\"0\" width=\"1\" height=\"1\" fill=\"#fff\" stroke=\"#000\" stroke-width=\"0.002\"/>\n");
    out.push_str("<g clip-path=\"url(#torus)\">\n");
    for (kind, stroke) in [(1u8, "#888"), (2u8, "#000")] {
        for shift in [-1.0, 0.0] {
            let _ = writeln!(
                out,
                "<polygon class=\"strip{kind}\" points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"0.0015\"/>",
                strip_polygon(kind, lower, width, shift)
            );
        }
    }
    let lam_i = pair.lambda();
    for (s, fill) in [(1u8, "#999"), (2u8, "#000")] {
        let total = pair.height(s) * &lam_i;
        let mut e = BigInt::zero();
        let mut drawn = 0;
        while e < total && drawn < per_tower {
            box_rects(&pair.level_box(s, &e), &format!("level{s}"), fill, &mut out);
            e += &lam_i;
            drawn += 1;
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}
