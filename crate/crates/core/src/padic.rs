//! Exact p-adic valuation and angular components of rational points, plus
//! enumeration of residue tuples modulo `p^m`.
//!
//! Field elements are exact rationals viewed inside `Q_p`; the uniformizer is
//! the integer `p`. Angular components are the unit part of `x` reduced modulo
//! `p^m`, computed with a modular inverse of the (unit) denominator.

use std::fmt;
use std::ops::Add;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Default guardrail on the number of enumerated residue tuples.
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// A rational prime `p`; plays the role of both the residue field size and
/// the uniformizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Prime(u64);

impl Prime {
    pub fn new(p: u64) -> Result<Self> {
        if is_prime(p) {
            Ok(Prime(p))
        } else {
            Err(Error::NotPrime(p))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn to_bigint(self) -> BigInt {
        BigInt::from(self.0)
    }

    pub fn pow(self, e: u32) -> BigInt {
        num_traits::pow(self.to_bigint(), e as usize)
    }

    /// `p^e` as a machine integer, if it fits.
    pub fn checked_pow(self, e: u32) -> Option<u64> {
        self.0.checked_pow(e)
    }

    /// `p^e` for any integer exponent, as an exact rational.
    pub fn rational_pow(self, e: i64) -> Rational {
        let base = self.pow(e.unsigned_abs() as u32);
        if e >= 0 {
            Rational::from_integer(base)
        } else {
            Rational::new(BigInt::one(), base)
        }
    }
}

impl TryFrom<u64> for Prime {
    type Error = Error;
    fn try_from(p: u64) -> Result<Self> {
        Prime::new(p)
    }
}

impl From<Prime> for u64 {
    fn from(p: Prime) -> u64 {
        p.0
    }
}

impl fmt::Display for Prime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// An integer or `+infinity`; the codomain of the valuation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExtendedInteger {
    Finite(i64),
    Infinity,
}

impl ExtendedInteger {
    pub fn finite(self) -> Option<i64> {
        match self {
            ExtendedInteger::Finite(v) => Some(v),
            ExtendedInteger::Infinity => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtendedInteger::Infinity)
    }
}

impl Add for ExtendedInteger {
    type Output = ExtendedInteger;
    fn add(self, rhs: ExtendedInteger) -> ExtendedInteger {
        match (self, rhs) {
            (ExtendedInteger::Finite(a), ExtendedInteger::Finite(b)) => ExtendedInteger::Finite(a + b),
            _ => ExtendedInteger::Infinity,
        }
    }
}

impl Add<i64> for ExtendedInteger {
    type Output = ExtendedInteger;
    fn add(self, rhs: i64) -> ExtendedInteger {
        self + ExtendedInteger::Finite(rhs)
    }
}

impl From<i64> for ExtendedInteger {
    fn from(v: i64) -> Self {
        ExtendedInteger::Finite(v)
    }
}

impl fmt::Display for ExtendedInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedInteger::Finite(v) => write!(f, "{v}"),
            ExtendedInteger::Infinity => write!(f, "INFINITY"),
        }
    }
}

/// A residue `r` modulo `p^m` that is either 0 or a unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AngularResidue {
    depth: u32,
    residue: BigInt,
}

impl AngularResidue {
    pub fn new(depth: u32, residue: impl Into<BigInt>, prime: Prime) -> Result<Self> {
        let residue = residue.into();
        if depth == 0 {
            return Err(Error::InvalidCell("angular depth must be at least 1".into()));
        }
        let modulus = prime.pow(depth);
        if residue.is_negative() || residue >= modulus {
            return Err(Error::InvalidCell(format!(
                "angular residue {residue} outside 0..{modulus}"
            )));
        }
        if !residue.is_zero() && (&residue % prime.to_bigint()).is_zero() {
            return Err(Error::InvalidCell(format!(
                "angular residue {residue} is not a unit mod {prime}"
            )));
        }
        Ok(AngularResidue { depth, residue })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn residue(&self) -> &BigInt {
        &self.residue
    }

    pub fn is_zero(&self) -> bool {
        self.residue.is_zero()
    }
}

impl fmt::Display for AngularResidue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.residue)
    }
}

/// All unit residues modulo `p^depth`, ascending.
pub fn unit_residues(prime: Prime, depth: u32) -> Vec<AngularResidue> {
    let modulus = prime.pow(depth);
    let p = prime.to_bigint();
    let mut out = Vec::new();
    let mut r = BigInt::one();
    while r < modulus {
        if !(&r % &p).is_zero() {
            out.push(AngularResidue {
                depth,
                residue: r.clone(),
            });
        }
        r += 1;
    }
    out
}

/// An exact rational regarded as a point of `Q_p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PAdicPoint {
    value: Rational,
    prime: Prime,
}

impl PAdicPoint {
    pub fn new(value: Rational, prime: Prime) -> Self {
        PAdicPoint { value, prime }
    }

    pub fn from_int(value: i64, prime: Prime) -> Self {
        PAdicPoint::new(Rational::from_integer(value.into()), prime)
    }

    pub fn value(&self) -> &Rational {
        &self.value
    }

    pub fn prime(&self) -> Prime {
        self.prime
    }

    pub fn ord(&self) -> ExtendedInteger {
        ord_rational(&self.value, self.prime)
    }

    pub fn ac(&self, m: u32) -> AngularResidue {
        AngularResidue {
            depth: m,
            residue: ac_rational(&self.value, self.prime, m),
        }
    }
}

/// `v_p(n)` for a nonzero integer.
pub fn int_valuation(n: &BigInt, prime: Prime) -> i64 {
    debug_assert!(!n.is_zero());
    let p = prime.to_bigint();
    let mut n = n.clone();
    let mut v = 0;
    loop {
        let (q, r) = n.div_rem(&p);
        if !r.is_zero() {
            return v;
        }
        n = q;
        v += 1;
    }
}

pub fn ord_rational(x: &Rational, prime: Prime) -> ExtendedInteger {
    if x.is_zero() {
        return ExtendedInteger::Infinity;
    }
    ExtendedInteger::Finite(int_valuation(x.numer(), prime) - int_valuation(x.denom(), prime))
}

/// Splits a nonzero `x` as `p^v * u` with `u` a p-adic unit.
pub fn unit_part(x: &Rational, prime: Prime) -> (i64, Rational) {
    let v = ord_rational(x, prime)
        .finite()
        .expect("unit_part of zero");
    (v, x / prime.rational_pow(v))
}

/// Residue of the p-adic integer `x` (denominator prime to `p`) modulo `modulus`.
pub fn reduce_integral(x: &Rational, modulus: &BigInt) -> BigInt {
    let inv = mod_inverse(x.denom(), modulus).expect("denominator must be a unit");
    (x.numer() * inv).mod_floor(modulus)
}

pub fn mod_inverse(a: &BigInt, modulus: &BigInt) -> Option<BigInt> {
    if modulus.is_one() {
        return Some(BigInt::zero());
    }
    let e = a.mod_floor(modulus).extended_gcd(modulus);
    if e.gcd.is_one() {
        Some(e.x.mod_floor(modulus))
    } else {
        None
    }
}

pub fn ac_rational(x: &Rational, prime: Prime, m: u32) -> BigInt {
    if x.is_zero() {
        return BigInt::zero();
    }
    let (_, u) = unit_part(x, prime);
    reduce_integral(&u, &prime.pow(m))
}

pub fn ord(x: &PAdicPoint) -> ExtendedInteger {
    x.ord()
}

pub fn ac(x: &PAdicPoint, m: u32) -> AngularResidue {
    x.ac(m)
}

/// Number of tuples in `(Z/p^m)^n`, or `None` on overflow.
pub fn point_count(prime: Prime, n: usize, m: u32) -> Option<u64> {
    let e = (n as u32).checked_mul(m)?;
    prime.checked_pow(e)
}

pub fn check_budget(prime: Prime, n: usize, m: u32, budget: u64) -> Result<u64> {
    match point_count(prime, n, m) {
        Some(c) if c <= budget => Ok(c),
        _ => Err(Error::BudgetExceeded {
            needed: format!("{prime}^{}", n as u64 * m as u64),
            budget,
        }),
    }
}

/// Lexicographic odometer over `{0, .., p^m - 1}^n`.
#[derive(Clone, Debug)]
pub struct ResidueIter {
    modulus: u64,
    current: Vec<u64>,
    done: bool,
}

impl Iterator for ResidueIter {
    type Item = Vec<u64>;

    fn next(&mut self) -> Option<Vec<u64>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        self.done = !advance(&mut self.current, self.modulus);
        Some(out)
    }
}

/// Steps an odometer; returns false once it wraps around.
pub(crate) fn advance(digits: &mut [u64], modulus: u64) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < modulus {
            return true;
        }
        *d = 0;
    }
    false
}

pub fn enumerate_residues(n: usize, m: u32, prime: Prime, budget: u64) -> Result<ResidueIter> {
    check_budget(prime, n, m, budget)?;
    let modulus = prime.checked_pow(m).expect("checked by budget");
    Ok(ResidueIter {
        modulus,
        current: vec![0; n],
        done: false,
    })
}

/// Parses `"a"` or `"a/b"` into an exact rational.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    let r = match s.split_once('/') {
        Some((a, b)) => {
            let a: BigInt = a.trim().parse().ok()?;
            let b: BigInt = b.trim().parse().ok()?;
            if b.is_zero() {
                return None;
            }
            Rational::new(a, b)
        }
        None => Rational::from_integer(s.parse().ok()?),
    };
    Some(r)
}

pub fn rational_to_i64(x: &Rational) -> Option<i64> {
    if x.is_integer() {
        x.numer().to_i64()
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(a: i64, b: i64) -> Rational {
        Rational::new(a.into(), b.into())
    }

    fn p(n: u64) -> Prime {
        Prime::new(n).unwrap()
    }

    #[test]
    fn primes_are_checked() {
        assert!(Prime::new(2).is_ok());
        assert!(Prime::new(97).is_ok());
        assert_eq!(Prime::new(1), Err(Error::NotPrime(1)));
        assert_eq!(Prime::new(91), Err(Error::NotPrime(91)));
    }

    #[test]
    fn ord_examples() {
        assert_eq!(PAdicPoint::from_int(12, p(2)).ord(), ExtendedInteger::Finite(2));
        assert_eq!(PAdicPoint::from_int(0, p(7)).ord(), ExtendedInteger::Infinity);
        assert_eq!(PAdicPoint::new(rat(8, 3), p(2)).ord(), ExtendedInteger::Finite(3));
        assert_eq!(PAdicPoint::new(rat(5, 12), p(2)).ord(), ExtendedInteger::Finite(-2));
    }

    #[test]
    fn infinity_is_absorbing_and_largest() {
        assert!(ExtendedInteger::Infinity > ExtendedInteger::Finite(i64::MAX));
        assert_eq!(ExtendedInteger::Infinity + 5, ExtendedInteger::Infinity);
    }

    #[test]
    fn ac_examples() {
        assert_eq!(*PAdicPoint::from_int(12, p(2)).ac(2).residue(), BigInt::from(3));
        assert_eq!(*PAdicPoint::from_int(0, p(5)).ac(3).residue(), BigInt::from(0));
        // unit part 1/3; brute-force the inverse of 3 mod 4
        let inv = (0..4).find(|r| (3 * r) % 4 == 1).unwrap();
        assert_eq!(*PAdicPoint::new(rat(8, 3), p(2)).ac(2).residue(), BigInt::from(inv));
        assert_eq!(inv, 3);
    }

    #[test]
    fn angular_residue_validation() {
        assert!(AngularResidue::new(1, 2, p(3)).is_ok());
        assert!(AngularResidue::new(2, 3, p(3)).is_err());
        assert!(AngularResidue::new(1, 3, p(3)).is_err());
        assert!(AngularResidue::new(0, 1, p(3)).is_err());
        assert_eq!(unit_residues(p(2), 2).len(), 2);
        assert_eq!(unit_residues(p(3), 2).len(), 6);
    }

    #[test]
    fn enumeration_examples() {
        let all: Vec<_> = enumerate_residues(1, 1, p(2), DEFAULT_BUDGET).unwrap().collect();
        assert_eq!(all, vec![vec![0], vec![1]]);
        let all: Vec<_> = enumerate_residues(2, 1, p(2), DEFAULT_BUDGET).unwrap().collect();
        assert_eq!(all, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let all: Vec<_> = enumerate_residues(1, 0, p(3), DEFAULT_BUDGET).unwrap().collect();
        assert_eq!(all, vec![vec![0]]);
        assert!(matches!(
            enumerate_residues(3, 10, p(5), DEFAULT_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn parse_rationals() {
        assert_eq!(parse_rational("8/3"), Some(rat(8, 3)));
        assert_eq!(parse_rational("-4/6"), Some(rat(-2, 3)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("x"), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonzero_rat() -> impl Strategy<Value = Rational> {
            (-2000i64..2000, 1i64..500)
                .prop_filter("nonzero", |(a, _)| *a != 0)
                .prop_map(|(a, b)| rat(a, b))
        }

        proptest! {
            #[test]
            fn ord_is_a_valuation(x in nonzero_rat(), y in nonzero_rat(), pi in 0usize..3) {
                let prime = p([2, 3, 5][pi]);
                let (ox, oy) = (ord_rational(&x, prime), ord_rational(&y, prime));
                prop_assert_eq!(ord_rational(&(&x * &y), prime), ox + oy);
                prop_assert!(ord_rational(&(&x + &y), prime) >= ox.min(oy));
            }

            #[test]
            fn ac_is_multiplicative(x in nonzero_rat(), y in nonzero_rat(), pi in 0usize..3, m in 1u32..4) {
                let prime = p([2, 3, 5][pi]);
                let modulus = prime.pow(m);
                let lhs = ac_rational(&(&x * &y), prime, m);
                let rhs = (ac_rational(&x, prime, m) * ac_rational(&y, prime, m)).mod_floor(&modulus);
                prop_assert_eq!(lhs, rhs);
            }

            #[test]
            fn ord_and_ac_determine_the_ball(x in -5000i64..5000, pi in 0usize..3, m in 1u32..4) {
                prop_assume!(x != 0);
                let prime = p([2, 3, 5][pi]);
                let point = PAdicPoint::from_int(x, prime);
                let v = point.ord().finite().unwrap();
                let r = point.ac(m).residue().clone();
                // x = p^v * (r + p^m * z) for some integer z
                let pv = prime.pow(v as u32);
                let diff = BigInt::from(x) - &pv * &r;
                prop_assert!((diff % (pv * prime.pow(m))).is_zero());
            }

            #[test]
            fn ac1_is_one_at_two(x in nonzero_rat()) {
                prop_assert!(ac_rational(&x, p(2), 1).is_one());
            }
        }
    }
}
