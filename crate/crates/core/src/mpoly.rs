//! Sparse multivariate polynomials and affine forms with rational
//! coefficients, used as the symbolic carriers of the integration engine.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{One, Zero};

use crate::padic::Rational;

type Monomial = Vec<u32>;

fn trim(mut m: Monomial) -> Monomial {
    while m.last() == Some(&0) {
        m.pop();
    }
    m
}

fn mono_mul(a: &[u32], b: &[u32]) -> Monomial {
    let mut out = vec![0; a.len().max(b.len())];
    for (i, e) in a.iter().enumerate() {
        out[i] += e;
    }
    for (i, e) in b.iter().enumerate() {
        out[i] += e;
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct MPoly {
    terms: BTreeMap<Monomial, Rational>,
}

impl MPoly {
    pub fn zero() -> Self {
        MPoly::default()
    }

    pub fn one() -> Self {
        MPoly::constant(Rational::one())
    }

    pub fn constant(c: Rational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Vec::new(), c);
        }
        MPoly { terms }
    }

    pub fn var(i: usize) -> Self {
        let mut m = vec![0; i + 1];
        m[i] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(m, Rational::one());
        MPoly { terms }
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Vec<u32>, Rational)>) -> Self {
        let mut p = MPoly::zero();
        for (m, c) in terms {
            p.add_term(trim(m), c);
        }
        p
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            Entry::Vacant(e) => {
                e.insert(c);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], &Rational)> {
        self.terms.iter().map(|(m, c)| (m.as_slice(), c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant_value(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => self.terms.get(&Vec::new()).cloned(),
            _ => None,
        }
    }

    pub fn degree_in(&self, i: usize) -> u32 {
        self.terms.keys().map(|m| m.get(i).copied().unwrap_or(0)).max().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.iter().sum()).max().unwrap_or(0)
    }

    pub fn uses_var(&self, i: usize) -> bool {
        self.degree_in(i) > 0
    }

    pub fn num_vars(&self) -> usize {
        self.terms.keys().map(|m| m.len()).max().unwrap_or(0)
    }

    pub fn scale(&self, c: &Rational) -> MPoly {
        if c.is_zero() {
            return MPoly::zero();
        }
        MPoly {
            terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn pow(&self, e: u32) -> MPoly {
        let mut out = MPoly::one();
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    /// Replaces variable `i` by `replacement`.
    pub fn substitute(&self, i: usize, replacement: &MPoly) -> MPoly {
        if !self.uses_var(i) {
            return self.clone();
        }
        let mut powers = vec![MPoly::one()];
        let mut out = MPoly::zero();
        for (m, c) in &self.terms {
            let e = m.get(i).copied().unwrap_or(0) as usize;
            while powers.len() <= e {
                let next = powers.last().unwrap() * replacement;
                powers.push(next);
            }
            let mut rest = m.clone();
            if e > 0 {
                rest[i] = 0;
            }
            let rest = MPoly::from_terms([(rest, c.clone())]);
            out = &out + &(&rest * &powers[e]);
        }
        out
    }

    /// Evaluates the variables present in `values`, leaving the others symbolic.
    pub fn partial_eval(&self, values: &BTreeMap<usize, Rational>) -> MPoly {
        let mut out = MPoly::zero();
        for (m, c) in &self.terms {
            let mut coeff = c.clone();
            let mut rest = m.clone();
            for (i, e) in m.iter().enumerate() {
                if *e > 0 {
                    if let Some(v) = values.get(&i) {
                        coeff *= num_traits::pow(v.clone(), *e as usize);
                        rest[i] = 0;
                    }
                }
            }
            out.add_term(trim(rest), coeff);
        }
        out
    }

    pub fn eval(&self, values: &[Rational]) -> Rational {
        let mut total = Rational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (i, e) in m.iter().enumerate() {
                if *e > 0 {
                    t *= num_traits::pow(values[i].clone(), *e as usize);
                }
            }
            total += t;
        }
        total
    }

    /// `P(x_i + 1) - P(x_i)`.
    pub fn forward_difference(&self, i: usize) -> MPoly {
        let shifted = self.substitute(i, &(&MPoly::var(i) + &MPoly::one()));
        &shifted - self
    }

    /// Renders with the given variable names.
    pub fn render(&self, name: &dyn Fn(usize) -> String) -> String {
        struct Shown<'a>(&'a MPoly, &'a dyn Fn(usize) -> String);
        impl fmt::Display for Shown<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt_with(f, self.1)
            }
        }
        Shown(self, name).to_string()
    }

    /// Renames variable `i` to `map[i]`.
    pub fn rename(&self, map: &[usize]) -> MPoly {
        MPoly::from_terms(self.terms.iter().map(|(m, c)| {
            let width = m.iter().enumerate().filter(|(_, e)| **e > 0).map(|(i, _)| map[i] + 1).max().unwrap_or(0);
            let mut out = vec![0; width];
            for (i, e) in m.iter().enumerate() {
                if *e > 0 {
                    out[map[i]] += e;
                }
            }
            (out, c.clone())
        }))
    }

    /// Coefficient of the monomial with exponents `m`.
    pub fn coeff(&self, m: &[u32]) -> Rational {
        self.terms.get(&trim(m.to_vec())).cloned().unwrap_or_else(Rational::zero)
    }

    /// Variables with a positive exponent somewhere, ascending.
    pub fn vars(&self) -> Vec<usize> {
        let width = self.num_vars();
        (0..width).filter(|i| self.uses_var(*i)).collect()
    }

    pub fn fmt_with(&self, f: &mut fmt::Formatter<'_>, name: &dyn Fn(usize) -> String) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            let negative = c < &Rational::zero();
            let mag = if negative { -c.clone() } else { c.clone() };
            if k == 0 {
                if negative {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if negative { " - " } else { " + " })?;
            }
            let factors: Vec<String> = m
                .iter()
                .enumerate()
                .filter(|(_, e)| **e > 0)
                .map(|(i, e)| if *e == 1 { name(i) } else { format!("{}^{}", name(i), e) })
                .collect();
            if factors.is_empty() {
                write!(f, "{mag}")?;
            } else if mag.is_one() {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{}*{}", mag, factors.join("*"))?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for MPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_with(f, &|i| format!("v{i}"))
    }
}

impl Add for &MPoly {
    type Output = MPoly;
    fn add(self, rhs: &MPoly) -> MPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &MPoly {
    type Output = MPoly;
    fn sub(self, rhs: &MPoly) -> MPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &MPoly {
    type Output = MPoly;
    fn neg(self) -> MPoly {
        self.scale(&-Rational::one())
    }
}

impl Mul for &MPoly {
    type Output = MPoly;
    fn mul(self, rhs: &MPoly) -> MPoly {
        let mut out = MPoly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(trim(mono_mul(ma, mb)), ca * cb);
            }
        }
        out
    }
}

/// `constant + sum coeffs[i] * v_i`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Affine {
    constant: Rational,
    coeffs: BTreeMap<usize, Rational>,
}

impl Affine {
    pub fn constant(c: Rational) -> Self {
        Affine {
            constant: c,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_int(c: i64) -> Self {
        Affine::constant(Rational::from_integer(c.into()))
    }

    pub fn var(i: usize) -> Self {
        Affine::term(i, Rational::one())
    }

    pub fn term(i: usize, c: Rational) -> Self {
        let mut a = Affine::default();
        if !c.is_zero() {
            a.coeffs.insert(i, c);
        }
        a
    }

    pub fn constant_part(&self) -> &Rational {
        &self.constant
    }

    pub fn coeff(&self, i: usize) -> Rational {
        self.coeffs.get(&i).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (usize, &Rational)> {
        self.coeffs.iter().map(|(i, c)| (*i, c))
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scale(&self, c: &Rational) -> Affine {
        let mut out = Affine::constant(&self.constant * c);
        for (i, v) in &self.coeffs {
            let nv = v * c;
            if !nv.is_zero() {
                out.coeffs.insert(*i, nv);
            }
        }
        out
    }

    pub fn add_constant(&self, c: &Rational) -> Affine {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    /// The same form with variable `i` removed.
    pub fn without(&self, i: usize) -> Affine {
        let mut out = self.clone();
        out.coeffs.remove(&i);
        out
    }

    pub fn substitute(&self, i: usize, replacement: &Affine) -> Affine {
        match self.coeffs.get(&i) {
            None => self.clone(),
            Some(c) => &self.without(i) + &replacement.scale(c),
        }
    }

    pub fn to_mpoly(&self) -> MPoly {
        let mut p = MPoly::constant(self.constant.clone());
        for (i, c) in &self.coeffs {
            p = &p + &MPoly::var(*i).scale(c);
        }
        p
    }

    pub fn eval(&self, values: &[Rational]) -> Rational {
        let mut total = self.constant.clone();
        for (i, c) in &self.coeffs {
            total += c * &values[*i];
        }
        total
    }
}

impl Add for &Affine {
    type Output = Affine;
    fn add(self, rhs: &Affine) -> Affine {
        let mut out = self.clone();
        out.constant += &rhs.constant;
        for (i, c) in &rhs.coeffs {
            let e = out.coeffs.entry(*i).or_insert_with(Rational::zero);
            *e += c;
            if e.is_zero() {
                out.coeffs.remove(i);
            }
        }
        out
    }
}

impl Sub for &Affine {
    type Output = Affine;
    fn sub(self, rhs: &Affine) -> Affine {
        self + &rhs.scale(&-Rational::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(a: i64) -> Rational {
        Rational::from_integer(a.into())
    }

    #[test]
    fn substitution_and_difference() {
        // p = v0^2 + 3 v1
        let p = &MPoly::var(0).pow(2) + &MPoly::var(1).scale(&r(3));
        let q = p.substitute(0, &(&MPoly::var(1) + &MPoly::one()));
        // (v1 + 1)^2 + 3 v1 = v1^2 + 5 v1 + 1
        let expected = &(&MPoly::var(1).pow(2) + &MPoly::var(1).scale(&r(5))) + &MPoly::one();
        assert_eq!(q, expected);
        let d = MPoly::var(0).pow(2).forward_difference(0);
        assert_eq!(d, &MPoly::var(0).scale(&r(2)) + &MPoly::one());
    }

    #[test]
    fn cancellation_leaves_zero() {
        let p = MPoly::var(2);
        assert!((&p - &p).is_zero());
        assert_eq!((&p - &p).constant_value(), Some(r(0)));
    }

    #[test]
    fn affine_substitution() {
        let a = &Affine::var(0).scale(&r(2)) + &Affine::from_int(1);
        let b = a.substitute(0, &(&Affine::var(1) + &Affine::from_int(3)));
        assert_eq!(b.coeff(1), r(2));
        assert_eq!(*b.constant_part(), r(7));
        assert_eq!(b.to_mpoly().eval(&[r(0), r(1)]), r(9));
    }
}
