//! Serde helpers: rationals as {"num": "...", "den": "..."}, big integers as
//! decimal strings.

use num_bigint::BigInt;
use serde::ser::{SerializeSeq, SerializeStruct};
use serde::Serializer;

use crate::geometry::Rational;

pub fn rational<S: Serializer>(x: &Rational, s: S) -> Result<S::Ok, S::Error> {
    let mut st = s.serialize_struct("Rational", 2)?;
    st.serialize_field("num", &x.numer().to_string())?;
    st.serialize_field("den", &x.denom().to_string())?;
    st.end()
}

struct R<'a>(&'a Rational);

impl serde::Serialize for R<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        rational(self.0, s)
    }
}

pub fn rational_vec<S: Serializer>(xs: &[Rational], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&R(x))?;
    }
    seq.end()
}

pub fn rational_opt<S: Serializer>(x: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(x) => rational(x, s),
        None => s.serialize_none(),
    }
}

pub fn bigint<S: Serializer>(x: &BigInt, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

pub fn bigint_vec<S: Serializer>(xs: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&x.to_string())?;
    }
    seq.end()
}

/// JSON value of a rational.
pub fn rational_json(x: &Rational) -> serde_json::Value {
    serde_json::json!({ "num": x.numer().to_string(), "den": x.denom().to_string() })
}
