//! The coefficient ring `A_q = Z[q, q^-1, 1/(1 - q^-i)]` (with rational
//! numerator coefficients), held as a Laurent polynomial over a product of
//! `(1 - q^-i)^e` factors.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{One, Signed, Zero};

use crate::padic::{Prime, Rational};

/// Laurent polynomial in `q` with rational coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Laurent {
    coeffs: BTreeMap<i64, Rational>,
}

impl Laurent {
    pub fn zero() -> Self {
        Laurent::default()
    }

    pub fn monomial(c: Rational, e: i64) -> Self {
        let mut l = Laurent::zero();
        l.add_term(e, c);
        l
    }

    fn add_term(&mut self, e: i64, c: Rational) {
        if c.is_zero() {
            return;
        }
        let entry = self.coeffs.entry(e).or_insert_with(Rational::zero);
        *entry += c;
        if entry.is_zero() {
            self.coeffs.remove(&e);
        }
    }

    /// `1 - q^-i`.
    fn one_minus(i: u32) -> Self {
        let mut l = Laurent::monomial(Rational::one(), 0);
        l.add_term(-(i as i64), -Rational::one());
        l
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, &Rational)> {
        self.coeffs.iter().map(|(e, c)| (*e, c))
    }

    pub fn eval(&self, q: &Rational) -> Rational {
        let mut total = Rational::zero();
        for (e, c) in &self.coeffs {
            total += c * pow_rational(q, *e);
        }
        total
    }

    /// Exact quotient by `1 - q^-i`, if it divides.
    fn div_one_minus(&self, i: u32) -> Option<Laurent> {
        if self.is_zero() {
            return Some(Laurent::zero());
        }
        let lo = *self.coeffs.keys().next().unwrap();
        let hi = *self.coeffs.keys().next_back().unwrap();
        let d = (hi - lo) as usize;
        let i = i as usize;
        if d < i {
            return None;
        }
        let mut rem = vec![Rational::zero(); d + 1];
        for (e, c) in &self.coeffs {
            rem[(e - lo) as usize] = c.clone();
        }
        let mut quot = vec![Rational::zero(); d - i + 1];
        for t in (i..=d).rev() {
            let c = std::mem::replace(&mut rem[t], Rational::zero());
            if !c.is_zero() {
                quot[t - i] += &c;
                rem[t - i] += c;
            }
        }
        if rem.iter().any(|c| !c.is_zero()) {
            return None;
        }
        let mut out = Laurent::zero();
        for (t, c) in quot.into_iter().enumerate() {
            out.add_term(t as i64 + lo + i as i64, c);
        }
        Some(out)
    }

    fn fmt_terms(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (k, (e, c)) in self.coeffs.iter().rev().enumerate() {
            let negative = c.is_negative();
            let mag = c.abs();
            match (k, negative) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            match (*e, mag.is_one()) {
                (0, _) => write!(f, "{mag}")?,
                (1, true) => write!(f, "q")?,
                (1, false) => write!(f, "{mag}*q")?,
                (e, true) => write!(f, "q^{e}")?,
                (e, false) => write!(f, "{mag}*q^{e}")?,
            }
        }
        Ok(())
    }
}

impl Add for &Laurent {
    type Output = Laurent;
    fn add(self, rhs: &Laurent) -> Laurent {
        let mut out = self.clone();
        for (e, c) in &rhs.coeffs {
            out.add_term(*e, c.clone());
        }
        out
    }
}

impl Mul for &Laurent {
    type Output = Laurent;
    fn mul(self, rhs: &Laurent) -> Laurent {
        let mut out = Laurent::zero();
        for (ea, ca) in &self.coeffs {
            for (eb, cb) in &rhs.coeffs {
                out.add_term(ea + eb, ca * cb);
            }
        }
        out
    }
}

impl fmt::Display for Laurent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_terms(f)
    }
}

pub(crate) fn pow_rational(q: &Rational, e: i64) -> Rational {
    let p = num_traits::pow(q.clone(), e.unsigned_abs() as usize);
    if e >= 0 {
        p
    } else {
        p.recip()
    }
}

/// An element of `A_q`: `numerator / prod (1 - q^-i)^e`.
#[derive(Clone, Debug, Default)]
pub struct AqElem {
    num: Laurent,
    den: BTreeMap<u32, u32>,
}

impl AqElem {
    pub fn zero() -> Self {
        AqElem::default()
    }

    pub fn one() -> Self {
        AqElem::from_rational(Rational::one())
    }

    pub fn from_int(n: i64) -> Self {
        AqElem::from_rational(Rational::from_integer(n.into()))
    }

    pub fn from_rational(c: Rational) -> Self {
        AqElem {
            num: Laurent::monomial(c, 0),
            den: BTreeMap::new(),
        }
    }

    /// `q^e`.
    pub fn q_pow(e: i64) -> Self {
        AqElem {
            num: Laurent::monomial(Rational::one(), e),
            den: BTreeMap::new(),
        }
    }

    /// `1 / (1 - q^-i)^e`.
    pub fn inv_one_minus(i: u32, e: u32) -> Self {
        assert!(i >= 1, "denominator factors need i >= 1");
        let mut den = BTreeMap::new();
        if e > 0 {
            den.insert(i, e);
        }
        AqElem {
            num: Laurent::monomial(Rational::one(), 0),
            den,
        }
    }

    /// Builds and canonicalizes `num / prod (1 - q^-i)^e`.
    pub fn from_parts(num: Laurent, den: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut d = BTreeMap::new();
        for (i, e) in den {
            assert!(i >= 1, "denominator factors need i >= 1");
            if e > 0 {
                *d.entry(i).or_insert(0) += e;
            }
        }
        AqElem { num, den: d }.canonical()
    }

    pub fn numerator(&self) -> &Laurent {
        &self.num
    }

    /// Denominator factors `(i, e)` sorted by `i`.
    pub fn denominator(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.den.iter().map(|(i, e)| (*i, *e))
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// Cancels every denominator factor that divides the numerator.
    pub fn canonical(mut self) -> Self {
        if self.num.is_zero() {
            self.den.clear();
            return self;
        }
        let keys: Vec<u32> = self.den.keys().rev().copied().collect();
        for i in keys {
            let mut e = self.den[&i];
            while e > 0 {
                match self.num.div_one_minus(i) {
                    Some(q) => {
                        self.num = q;
                        e -= 1;
                    }
                    None => break,
                }
            }
            if e == 0 {
                self.den.remove(&i);
            } else {
                self.den.insert(i, e);
            }
        }
        self
    }

    fn den_poly(den: &BTreeMap<u32, u32>) -> Laurent {
        let mut out = Laurent::monomial(Rational::one(), 0);
        for (i, e) in den {
            let f = Laurent::one_minus(*i);
            for _ in 0..*e {
                out = &out * &f;
            }
        }
        out
    }

    /// Rewrites the element over the denominator `target`, which must
    /// contain this element's denominator.
    fn lift_numerator(&self, target: &BTreeMap<u32, u32>) -> Laurent {
        let mut extra = BTreeMap::new();
        for (i, e) in target {
            let have = self.den.get(i).copied().unwrap_or(0);
            if *e > have {
                extra.insert(*i, e - have);
            }
        }
        &self.num * &AqElem::den_poly(&extra)
    }

    pub fn scale(&self, c: &Rational) -> AqElem {
        let mut out = self.clone();
        out.num = &out.num * &Laurent::monomial(c.clone(), 0);
        out.canonical()
    }

    pub fn pow(&self, e: u32) -> AqElem {
        let mut out = AqElem::one();
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    /// Exact value at `q = p`.
    pub fn eval_at(&self, q: &Rational) -> Rational {
        let num = self.num.eval(q);
        let den = AqElem::den_poly(&self.den).eval(q);
        num / den
    }

    pub fn eval(&self, prime: Prime) -> Rational {
        self.eval_at(&Rational::from_integer(prime.to_bigint()))
    }
}

impl PartialEq for AqElem {
    fn eq(&self, other: &AqElem) -> bool {
        let lhs = &self.num * &AqElem::den_poly(&other.den);
        let rhs = &other.num * &AqElem::den_poly(&self.den);
        lhs == rhs
    }
}

impl Eq for AqElem {}

impl Add for &AqElem {
    type Output = AqElem;
    fn add(self, rhs: &AqElem) -> AqElem {
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        let mut den = self.den.clone();
        for (i, e) in &rhs.den {
            let entry = den.entry(*i).or_insert(0);
            *entry = (*entry).max(*e);
        }
        let num = &self.lift_numerator(&den) + &rhs.lift_numerator(&den);
        AqElem { num, den }.canonical()
    }
}

impl Neg for &AqElem {
    type Output = AqElem;
    fn neg(self) -> AqElem {
        self.scale(&-Rational::one())
    }
}

impl Sub for &AqElem {
    type Output = AqElem;
    fn sub(self, rhs: &AqElem) -> AqElem {
        self + &(-rhs)
    }
}

impl Mul for &AqElem {
    type Output = AqElem;
    fn mul(self, rhs: &AqElem) -> AqElem {
        if self.is_zero() || rhs.is_zero() {
            return AqElem::zero();
        }
        let mut den = self.den.clone();
        for (i, e) in &rhs.den {
            *den.entry(*i).or_insert(0) += e;
        }
        AqElem {
            num: &self.num * &rhs.num,
            den,
        }
        .canonical()
    }
}

impl std::iter::Sum for AqElem {
    fn sum<I: Iterator<Item = AqElem>>(iter: I) -> AqElem {
        iter.fold(AqElem::zero(), |acc, x| &acc + &x)
    }
}

impl fmt::Display for AqElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_empty() {
            return write!(f, "{}", self.num);
        }
        if self.num.coeffs.len() > 1 {
            write!(f, "({})", self.num)?;
        } else {
            write!(f, "{}", self.num)?;
        }
        let factors: Vec<String> = self
            .den
            .iter()
            .map(|(i, e)| {
                if *e == 1 {
                    format!("(1 - q^-{i})")
                } else {
                    format!("(1 - q^-{i})^{e}")
                }
            })
            .collect();
        if factors.len() == 1 {
            write!(f, "/{}", factors[0])
        } else {
            write!(f, "/({})", factors.join("*"))
        }
    }
}
