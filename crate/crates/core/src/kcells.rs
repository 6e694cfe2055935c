//! K-cells with rational centers and their Haar measures in `A_q`, under
//! the normalization `μ(Z_p) = 1`.
//!
//! A cell is `{t : α < ord(t-c) < β, ord(t-c) ≡ k mod N, ac_M(t-c) = ξ}`. For a
//! unit `ξ` it is the disjoint union over admissible `v` of the balls
//! `c + p^v(ξ + p^M Z_p)`, each of measure `q^-(v+M)`. A zero `ξ` encodes the
//! single point `{c}`.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::aqring::AqElem;
use crate::error::{Error, Result};
use crate::padic::{
    ac_rational, ord_rational, parse_rational, unit_residues, AngularResidue, ExtendedInteger, PAdicPoint, Prime,
    Rational,
};
use crate::presburger::{geom_sum, GammaCell};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct KCell {
    center: Rational,
    valuation: GammaCell,
    ac: AngularResidue,
    prime: Prime,
}

impl KCell {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        center: Rational,
        lower: Option<i64>,
        upper: Option<i64>,
        modulus: i64,
        residue: i64,
        ac_depth: u32,
        ac_value: impl Into<BigInt>,
        prime: Prime,
    ) -> Result<Self> {
        let valuation = GammaCell::new(lower, upper, modulus, residue)?;
        let ac = AngularResidue::new(ac_depth, ac_value, prime)?;
        Ok(KCell {
            center,
            valuation,
            ac,
            prime,
        })
    }

    /// The point cell `{c}`.
    pub fn point(center: Rational, prime: Prime) -> Self {
        KCell {
            center,
            valuation: GammaCell::everything(),
            ac: AngularResidue::new(1, 0, prime).expect("zero residue is valid"),
            prime,
        }
    }

    pub fn center(&self) -> &Rational {
        &self.center
    }

    /// The admissible values of `ord(t - c)`.
    pub fn valuation_cell(&self) -> &GammaCell {
        &self.valuation
    }

    pub fn ac(&self) -> &AngularResidue {
        &self.ac
    }

    pub fn ac_depth(&self) -> u32 {
        self.ac.depth()
    }

    pub fn prime(&self) -> Prime {
        self.prime
    }

    pub fn is_point(&self) -> bool {
        self.ac.is_zero()
    }

    /// Same cell moved to another center.
    pub fn with_center(&self, center: Rational) -> KCell {
        KCell {
            center,
            ..self.clone()
        }
    }

    pub fn contains(&self, t: &PAdicPoint) -> bool {
        if t.prime() != self.prime {
            return false;
        }
        self.contains_value(t.value())
    }

    pub fn contains_value(&self, t: &Rational) -> bool {
        let d = t - &self.center;
        if self.is_point() {
            return d.is_zero();
        }
        match ord_rational(&d, self.prime) {
            ExtendedInteger::Infinity => false,
            ExtendedInteger::Finite(v) => {
                self.valuation.contains(v) && ac_rational(&d, self.prime, self.ac.depth()) == *self.ac.residue()
            }
        }
    }

    /// `μ({t in cell : ord(t-c) = v})` for an admissible `v`.
    pub fn fiber_measure(&self, v: i64) -> AqElem {
        AqElem::q_pow(-(v + self.ac.depth() as i64))
    }

    pub fn measure(&self) -> Result<AqElem> {
        if self.is_point() {
            return Ok(AqElem::zero());
        }
        if self.valuation.lower().is_none() {
            return Err(Error::InfiniteMeasure);
        }
        let shift = self.valuation.residue() + self.ac.depth() as i64;
        Ok(&AqElem::q_pow(-shift) * &geom_sum(&self.valuation, self.valuation.modulus())?)
    }
}

impl fmt::Display for KCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_point() {
            return write!(f, "{{{}}}", self.center);
        }
        let v = &self.valuation;
        write!(f, "{{t : ")?;
        if let Some(a) = v.lower() {
            write!(f, "{a} < ")?;
        }
        write!(f, "ord(t - {})", self.center)?;
        if let Some(b) = v.upper() {
            write!(f, " < {b}")?;
        }
        write!(
            f,
            ", ≡ {} mod {}, ac_{} = {}}}",
            v.residue(),
            v.modulus(),
            self.ac.depth(),
            self.ac.residue()
        )
    }
}

pub fn kcell_contains(t: &PAdicPoint, cell: &KCell) -> bool {
    cell.contains(t)
}

pub fn kcell_measure(cell: &KCell) -> Result<AqElem> {
    cell.measure()
}

/// `ord(δ + p^v1·ξ1 - p^v2·ξ2) >= r`: the balls `c1 + p^v1(ξ1 + p^M1 Z_p)` and
/// `c2 + p^v2(ξ2 + p^M2 Z_p)` meet, with `δ = c1 - c2`, `r = min(v1+M1, v2+M2)`.
fn balls_meet(prime: Prime, delta: &Rational, v1: i64, xi1: &BigInt, m1: u32, v2: i64, xi2: &BigInt, m2: u32) -> bool {
    let lift = |v: i64, xi: &BigInt| prime.rational_pow(v) * Rational::from_integer(xi.clone());
    let d = delta + lift(v1, xi1) - lift(v2, xi2);
    let r = (v1 + m1 as i64).min(v2 + m2 as i64);
    ord_rational(&d, prime) >= ExtendedInteger::Finite(r)
}

fn has_member_at_most(c: &GammaCell, x: i64) -> bool {
    c.last_member_to(x).is_some()
}

fn has_member_at_least(c: &GammaCell, x: i64) -> bool {
    c.first_member_from(x).is_some()
}

/// Decides exactly whether two cells over the same prime share a point.
///
/// Panics if the primes differ.
pub fn kcells_disjoint(c1: &KCell, c2: &KCell) -> bool {
    assert_eq!(c1.prime, c2.prime, "cells over different primes");
    let prime = c1.prime;
    match (c1.is_point(), c2.is_point()) {
        (true, true) => return c1.center != c2.center,
        (true, false) => return !c2.contains_value(&c1.center),
        (false, true) => return !c1.contains_value(&c2.center),
        (false, false) => {}
    }
    let (r1, r2) = (&c1.valuation, &c2.valuation);
    let (m1, m2) = (c1.ac.depth(), c2.ac.depth());
    let (xi1, xi2) = (c1.ac.residue(), c2.ac.residue());
    let mu = m1.min(m2);
    let residues_agree = ((xi1 - xi2) % prime.pow(mu)).is_zero();
    let delta = &c1.center - &c2.center;
    let e = match ord_rational(&delta, prime) {
        ExtendedInteger::Infinity => {
            // same center: only equal valuations can meet
            return !(residues_agree && r1.intersect(r2).is_some());
        }
        ExtendedInteger::Finite(e) => e,
    };
    let meet = |v1: i64, v2: i64| balls_meet(prime, &delta, v1, xi1, m1, v2, xi2, m2);

    // v1 = v2 = v <= e
    if let Some(common) = r1.intersect(r2) {
        let cutoff = e - mu as i64;
        if residues_agree && has_member_at_most(&common, cutoff) {
            return false;
        }
        if common.members_in(cutoff + 1, e).any(|v| meet(v, v)) {
            return false;
        }
    }
    // v1 = e, v2 > e
    if r1.contains(e) {
        let far = e + m1 as i64;
        // for v2 >= e + M1 the condition no longer depends on v2
        if has_member_at_least(r2, far) && meet(e, far) {
            return false;
        }
        if r2.members_in(e + 1, far - 1).any(|v2| meet(e, v2)) {
            return false;
        }
    }
    // v2 = e, v1 > e
    if r2.contains(e) {
        let far = e + m2 as i64;
        if has_member_at_least(r1, far) && meet(far, e) {
            return false;
        }
        if r1.members_in(e + 1, far - 1).any(|v1| meet(v1, e)) {
            return false;
        }
    }
    true
}

/// Cells `{t : -1 < ord t, ord t ≡ k mod N, ac_M(t) = ξ}` over all `k < N` and
/// unit residues `ξ mod p^M`; with `{0}` they partition `Z_p`.
pub fn partition_unit_ball(m: u32, n: i64, prime: Prime) -> Result<Vec<KCell>> {
    if m == 0 || n < 1 {
        return Err(Error::InvalidCell("partition needs M >= 1 and N >= 1".into()));
    }
    let mut out = Vec::new();
    for k in 0..n {
        for xi in unit_residues(prime, m) {
            out.push(KCell {
                center: Rational::zero(),
                valuation: GammaCell::new(Some(-1), None, n, k)?,
                ac: xi,
                prime,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct KCellRepr {
    #[serde(serialize_with = "ser_rational", deserialize_with = "de_rational")]
    center: Rational,
    lower: Option<i64>,
    upper: Option<i64>,
    #[serde(rename = "mod")]
    modulus: i64,
    #[serde(rename = "res")]
    residue: i64,
    ac_depth: u32,
    ac_value: u64,
    p: u64,
}

pub(crate) fn ser_rational<S: Serializer>(x: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

pub(crate) fn de_rational<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rational, D::Error> {
    use serde::de::Error as _;
    let v = serde_json::Value::deserialize(d)?;
    let text = match &v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) if n.is_i64() => n.to_string(),
        _ => return Err(D::Error::custom("expected a rational as \"a/b\" or an integer")),
    };
    parse_rational(&text).ok_or_else(|| D::Error::custom(format!("invalid rational `{text}`")))
}

impl Serialize for KCell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KCellRepr {
            center: self.center.clone(),
            lower: self.valuation.lower(),
            upper: self.valuation.upper(),
            modulus: self.valuation.modulus(),
            residue: self.valuation.residue(),
            ac_depth: self.ac.depth(),
            ac_value: self.ac.residue().to_u64().unwrap_or(u64::MAX),
            p: self.prime.get(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KCell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = KCellRepr::deserialize(d)?;
        let prime = Prime::new(r.p).map_err(D::Error::custom)?;
        KCell::new(
            r.center,
            r.lower,
            r.upper,
            r.modulus,
            r.residue,
            r.ac_depth,
            r.ac_value,
            prime,
        )
        .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn p(n: u64) -> Prime {
        Prime::new(n).unwrap()
    }

    fn rat(a: i64, b: i64) -> Rational {
        Rational::new(a.into(), b.into())
    }

    fn zero_cell(lower: Option<i64>, upper: Option<i64>, n: i64, k: i64, m: u32, xi: u64, prime: Prime) -> KCell {
        KCell::new(Rational::zero(), lower, upper, n, k, m, xi, prime).unwrap()
    }

    #[test]
    fn membership_examples() {
        let c = zero_cell(Some(-1), None, 1, 0, 1, 1, p(2));
        assert!(c.contains(&PAdicPoint::from_int(3, p(2))));
        assert!(!c.contains(&PAdicPoint::from_int(0, p(2))));
        let c = zero_cell(Some(2), Some(4), 1, 0, 1, 2, p(3));
        assert!(c.contains(&PAdicPoint::from_int(54, p(3))));
        assert!(!c.contains(&PAdicPoint::from_int(27, p(3))));
    }

    #[test]
    fn measure_examples() {
        let c = zero_cell(Some(-1), None, 1, 0, 1, 1, p(2));
        let m = c.measure().unwrap();
        assert_eq!(m, &AqElem::q_pow(-1) * &AqElem::inv_one_minus(1, 1));
        assert!(m.eval(p(2)).is_one());
        let c = zero_cell(Some(2), Some(4), 1, 0, 1, 2, p(3));
        assert_eq!(c.measure().unwrap(), AqElem::q_pow(-4));
        assert_eq!(c.measure().unwrap().eval(p(3)), rat(1, 81));
        assert!(KCell::point(rat(1, 3), p(5)).measure().unwrap().is_zero());
        let unbounded = zero_cell(None, Some(3), 1, 0, 1, 1, p(2));
        assert_eq!(unbounded.measure(), Err(Error::InfiniteMeasure));
    }

    #[test]
    fn disjointness_examples() {
        let even = zero_cell(Some(-1), None, 2, 0, 1, 1, p(3));
        let odd = zero_cell(Some(-1), None, 2, 1, 1, 1, p(3));
        assert!(kcells_disjoint(&even, &odd));
        let one = zero_cell(Some(-1), None, 1, 0, 1, 1, p(3));
        let two = zero_cell(Some(-1), None, 1, 0, 1, 2, p(3));
        assert!(kcells_disjoint(&one, &two));
        let deep0 = zero_cell(Some(5), None, 1, 0, 1, 1, p(2));
        let deep1 = deep0.with_center(Rational::one());
        assert!(kcells_disjoint(&deep0, &deep1));
        assert!(!kcells_disjoint(&one, &one));
    }

    #[test]
    fn unit_ball_partitions() {
        let cells = partition_unit_ball(1, 1, p(3)).unwrap();
        assert_eq!(cells.len(), 2);
        let total: AqElem = cells.iter().map(|c| c.measure().unwrap()).sum();
        assert!(total.eval(p(3)).is_one());

        let cells = partition_unit_ball(1, 2, p(2)).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].measure().unwrap(), &AqElem::q_pow(-1) * &AqElem::inv_one_minus(2, 1));
        assert_eq!(cells[1].measure().unwrap(), &AqElem::q_pow(-2) * &AqElem::inv_one_minus(2, 1));
        let total: AqElem = cells.iter().map(|c| c.measure().unwrap()).sum();
        assert!(total.eval(p(2)).is_one());

        let cells = partition_unit_ball(2, 1, p(2)).unwrap();
        let residues: Vec<_> = cells.iter().map(|c| c.ac().residue().clone()).collect();
        assert_eq!(residues, vec![BigInt::from(1), BigInt::from(3)]);
    }

    #[test]
    fn json_schema() {
        let text = r#"{"center":"1/3","lower":-1,"upper":null,"mod":2,"res":1,"acDepth":1,"acValue":2,"p":3}"#;
        let c: KCell = serde_json::from_str(text).unwrap();
        assert_eq!(c.center(), &rat(1, 3));
        assert_eq!(serde_json::to_string(&c).unwrap(), text);
        let bad = r#"{"center":"0","lower":-1,"upper":null,"mod":1,"res":0,"acDepth":1,"acValue":3,"p":3}"#;
        assert!(serde_json::from_str::<KCell>(bad).is_err());
        let int_center = r#"{"center":5,"lower":-1,"upper":null,"mod":1,"res":0,"acDepth":1,"acValue":1,"p":2}"#;
        assert!(serde_json::from_str::<KCell>(int_center).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cell_strategy() -> impl Strategy<Value = KCell> {
            (prop::sample::select(vec![2u64, 3]), -1i64..3, 1i64..4, 1i64..4, 1u32..3, 0i64..40)
                .prop_flat_map(|(q, lower, len, n, m, c)| {
                    let units = unit_residues(p(q), m).len();
                    (Just((q, lower, len, n, m, c)), 0..n, 0..units)
                })
                .prop_map(|((q, lower, len, n, m, c), k, xi)| {
                    let prime = p(q);
                    let xi = unit_residues(prime, m)[xi].residue().clone();
                    KCell::new(rat(c, 1), Some(lower), Some(lower + 1 + len), n, k, m, xi, prime).unwrap()
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // Membership of an integer t is decided by t mod p^D once D
            // reaches the last digit ac_M can look at inside the cell.
            #[test]
            fn measure_matches_residue_count(c in cell_strategy()) {
                let prime = c.prime();
                let upper = c.valuation_cell().upper().unwrap();
                let depth = (upper + c.ac_depth() as i64 - 1) as u32;
                let modulus = prime.checked_pow(depth).unwrap() as i64;
                let count = (0..modulus).filter(|t| c.contains_value(&rat(*t, 1))).count() as i64;
                prop_assert_eq!(c.measure().unwrap().eval(prime), rat(count, modulus));
            }

            #[test]
            fn measure_is_translation_invariant(c in cell_strategy(), a in -50i64..50, b in 1i64..30) {
                let moved = c.with_center(rat(a, b));
                prop_assert_eq!(moved.measure().unwrap(), c.measure().unwrap());
            }

            #[test]
            fn disjointness_agrees_with_counting(c1 in cell_strategy(), c2 in cell_strategy()) {
                prop_assume!(c1.prime() == c2.prime());
                let prime = c1.prime();
                let top = |c: &KCell| c.valuation_cell().upper().unwrap() + c.ac_depth() as i64 - 1;
                let depth = top(&c1).max(top(&c2)) as u32;
                let modulus = prime.checked_pow(depth).unwrap() as i64;
                let shared = (0..modulus).any(|t| c1.contains_value(&rat(t, 1)) && c2.contains_value(&rat(t, 1)));
                prop_assert_eq!(kcells_disjoint(&c1, &c2), !shared);
            }
        }
    }
}
