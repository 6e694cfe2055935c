//! Counts `N_m = #{x mod p^m : f(x) ≡ 0 mod p^m}`, exact recurrence
//! detection, and the rational Poincaré series `Σ N_m T^m` with a certified
//! denominator of the form `Π (1 - p^-m_i T^N_i)`.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde_json::{json, Value as Json};

use crate::aqring::AqElem;
use crate::error::{Error, Result};
use crate::integrate::{integrate, ConstructibleExpr, Domain, DomainVar, Region, Sort, Term, VarDecl};
use crate::kcells::KCell;
use crate::mpoly::MPoly;
use crate::padic::{advance, check_budget, ord_rational, unit_residues, Prime, Rational};

/// A polynomial with integer coefficients in `x1..xn`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, BigInt>,
}

impl Polynomial {
    /// Builds from `(exponents, coefficient)` pairs; `exponents[i]` belongs to
    /// `x(i+1)`. `nvars` is at least the number of variables mentioned.
    pub fn new(nvars: usize, terms: impl IntoIterator<Item = (Vec<u32>, BigInt)>) -> Result<Self> {
        let mut map: BTreeMap<Vec<u32>, BigInt> = BTreeMap::new();
        for (mut m, c) in terms {
            while m.last() == Some(&0) {
                m.pop();
            }
            if m.len() > nvars {
                return Err(Error::domain(format!("monomial mentions x{} but n = {nvars}", m.len())));
            }
            *map.entry(m).or_insert_with(BigInt::zero) += c;
        }
        map.retain(|_, c| !c.is_zero());
        if nvars == 0 {
            return Err(Error::domain("a polynomial needs at least one variable"));
        }
        Ok(Polynomial { nvars, terms: map })
    }

    pub fn from_mpoly(p: &MPoly, nvars: usize) -> Result<Self> {
        let mut terms = Vec::new();
        for (m, c) in p.terms() {
            if !c.is_integer() {
                return Err(Error::domain(format!("coefficient {c} is not an integer")));
            }
            terms.push((m.to_vec(), c.to_integer()));
        }
        Polynomial::new(nvars.max(p.num_vars()).max(1), terms)
    }

    pub fn to_mpoly(&self) -> MPoly {
        MPoly::from_terms(self.terms.iter().map(|(m, c)| (m.clone(), Rational::from_integer(c.clone()))))
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], &BigInt)> {
        self.terms.iter().map(|(m, c)| (m.as_slice(), c))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|m| m.iter().sum()).max().unwrap_or(0)
    }

    pub fn is_monomial(&self) -> bool {
        self.terms.len() == 1
    }

    /// `f(x) mod modulus` for residues `x`.
    pub fn eval_mod(&self, x: &[u64], modulus: u64) -> u64 {
        let md = modulus as u128;
        let mut total: u128 = 0;
        for (m, c) in &self.terms {
            let c = c % BigInt::from(modulus);
            let c = if c.is_negative() { c + BigInt::from(modulus) } else { c };
            let mut t = c.to_u128().expect("reduced");
            for (i, e) in m.iter().enumerate() {
                for _ in 0..*e {
                    t = t * (x[i] as u128 % md) % md;
                }
            }
            total = (total + t) % md;
        }
        total as u64
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.to_mpoly().render(&|i| format!("x{}", i + 1));
        f.write_str(&s)
    }
}

fn shard<T: Send>(modulus: u64, n: usize, per: impl Fn(&[u64]) -> T + Sync, fold: impl Fn(T, T) -> T + Sync + Send, zero: impl Fn() -> T + Sync + Send) -> T {
    (0..modulus)
        .into_par_iter()
        .map(|x0| {
            let mut acc = zero();
            let mut x = vec![0u64; n];
            x[0] = x0;
            loop {
                acc = fold(acc, per(&x));
                if !advance(&mut x[1..], modulus) {
                    break;
                }
            }
            acc
        })
        .reduce(&zero, &fold)
}

/// `N_m` by enumerating every residue tuple mod `p^m`.
pub fn count_nm(f: &Polynomial, prime: Prime, m: u32, budget: u64) -> Result<u64> {
    check_budget(prime, f.nvars, m, budget)?;
    if m == 0 {
        return Ok(1);
    }
    let modulus = prime.checked_pow(m).expect("within budget");
    Ok(shard(
        modulus,
        f.nvars,
        |x| u64::from(f.eval_mod(x, modulus) == 0),
        |a, b| a + b,
        || 0,
    ))
}

/// `N_0..N_mmax` by lifting solutions digit by digit: a solution mod
/// `p^(m+1)` reduces to a solution mod `p^m`. `budget` caps the number of
/// candidate lifts examined.
pub fn lifting_counts(f: &Polynomial, prime: Prime, mmax: u32, budget: u64) -> Result<Vec<u64>> {
    let p = prime.get();
    let n = f.nvars;
    let children = p
        .checked_pow(n as u32)
        .ok_or_else(|| Error::BudgetExceeded {
            needed: format!("{p}^{n} lifts per node"),
            budget,
        })?;
    let mut level: Vec<Vec<u64>> = vec![vec![0; n]];
    let mut counts = vec![1u64];
    let mut work: u64 = 0;
    let mut scale: u64 = 1;
    for m in 0..mmax {
        work = work.saturating_add((level.len() as u64).saturating_mul(children));
        if work > budget {
            return Err(Error::BudgetExceeded {
                needed: format!("{work} lifts to reach m = {}", m + 1),
                budget,
            });
        }
        let next_modulus = scale.checked_mul(p).ok_or_else(|| Error::BudgetExceeded {
            needed: format!("{p}^{} exceeds 64 bits", m + 1),
            budget,
        })?;
        level = level
            .par_iter()
            .flat_map_iter(|x| {
                let mut digits = vec![0u64; n];
                let mut out = Vec::new();
                loop {
                    let y: Vec<u64> = x.iter().zip(&digits).map(|(a, d)| a + scale * d).collect();
                    if f.eval_mod(&y, next_modulus) == 0 {
                        out.push(y);
                    }
                    if !advance(&mut digits, p) {
                        break;
                    }
                }
                out
            })
            .collect();
        scale = next_modulus;
        counts.push(level.len() as u64);
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeriesTable {
    pub prime: Prime,
    pub f: Polynomial,
    pub counts: Vec<u64>,
}

impl SeriesTable {
    pub fn compute(f: &Polynomial, prime: Prime, mmax: u32, budget: u64) -> Result<Self> {
        Ok(SeriesTable {
            prime,
            f: f.clone(),
            counts: lifting_counts(f, prime, mmax, budget)?,
        })
    }

    /// A table from given counts, e.g. for refitting a prefix.
    pub fn from_counts(f: &Polynomial, prime: Prime, counts: Vec<u64>) -> Self {
        SeriesTable {
            prime,
            f: f.clone(),
            counts,
        }
    }

    /// `N_{m+1} <= p^n N_m` throughout.
    pub fn lifting_bound_holds(&self) -> bool {
        let lifts = (self.prime.get() as u128).pow(self.f.nvars as u32);
        self.counts.windows(2).all(|w| (w[1] as u128) <= lifts * w[0] as u128)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityCheck {
    pub m: u32,
    /// `N_m` from the table.
    pub table: u64,
    /// Direct enumeration agrees with the table; `None` when over budget.
    pub counting: Option<bool>,
    /// `p^(nm)·μ({ord f >= m})` from the integration engine agrees; only
    /// for monomials.
    pub symbolic: Option<bool>,
}

impl IdentityCheck {
    pub fn holds(&self) -> bool {
        self.counting != Some(false) && self.symbolic != Some(false)
    }

    fn to_json(&self) -> Json {
        json!({
            "m": self.m.to_string(),
            "N": self.table.to_string(),
            "counting": self.counting,
            "symbolic": self.symbolic,
        })
    }
}

fn level_cells(prime: Prime, lower: i64, upper: Option<i64>) -> Result<Vec<KCell>> {
    unit_residues(prime, 1)
        .into_iter()
        .map(|xi| {
            KCell::new(
                Rational::zero(),
                Some(lower),
                upper,
                1,
                0,
                1,
                xi.residue().clone(),
                prime,
            )
        })
        .collect()
}

/// `μ({x in Z_p^n : ord f(x) >= m})` for a monomial `f`, as a sum of
/// integrals of 1 over products of valuation shells.
pub fn monomial_measure(f: &Polynomial, prime: Prime, m: u32) -> Result<AqElem> {
    if !f.is_monomial() {
        return Err(Error::NotFiberReducible(format!("{f} is not a monomial")));
    }
    let (exps, lambda) = f.terms().next().expect("one term");
    let base = ord_rational(&Rational::from_integer(lambda.clone()), prime)
        .finite()
        .expect("nonzero coefficient");
    let n = f.nvars;
    let exps: Vec<i64> = (0..n).map(|i| exps.get(i).copied().unwrap_or(0) as i64).collect();
    let active: Vec<usize> = (0..n).filter(|i| exps[*i] > 0).collect();
    let vars: Vec<VarDecl> = (0..n).map(|i| VarDecl::new(format!("x{}", i + 1), Sort::K)).collect();
    let one = ConstructibleExpr::from_terms(vars, vec![Term::constant(AqElem::one())])?;
    let need = m as i64 - base;
    let mut total = AqElem::zero();
    // regions[i] for each chosen shell; free variables keep the unit ball
    let mut stack: Vec<(usize, i64, Vec<Region>)> = vec![(0, need, vec![Region::UnitBall; n])];
    while let Some((k, need, regions)) = stack.pop() {
        if need <= 0 || k == active.len() {
            if need > 0 {
                continue;
            }
            let domain = Domain::new(
                regions
                    .into_iter()
                    .enumerate()
                    .map(|(i, region)| DomainVar {
                        name: format!("x{}", i + 1),
                        sort: Sort::K,
                        region,
                    })
                    .collect(),
            )?
            .with_prime(prime)?;
            total = &total + &integrate(&one, &domain)?;
            continue;
        }
        let i = active[k];
        let e = exps[i];
        let threshold = (need + e - 1) / e;
        // ord x_i >= threshold settles the condition
        let mut r = regions.clone();
        r[i] = Region::KCells(level_cells(prime, threshold - 1, None)?);
        stack.push((active.len(), 0, r));
        for v in 0..threshold {
            let mut r = regions.clone();
            r[i] = Region::KCells(level_cells(prime, v - 1, Some(v + 1))?);
            stack.push((k + 1, need - e * v, r));
        }
    }
    Ok(total)
}

/// Compares `N_m` from the table with direct enumeration and, for
/// monomials, with `p^(nm)` times the symbolic measure of `{ord f >= m}`.
pub fn measure_identity_check(t: &SeriesTable, m: u32, budget: u64) -> Result<IdentityCheck> {
    let table = *t
        .counts
        .get(m as usize)
        .ok_or_else(|| Error::domain(format!("table stops before m = {m}")))?;
    let counting = match count_nm(&t.f, t.prime, m, budget) {
        Ok(c) => Some(c == table),
        Err(Error::BudgetExceeded { .. }) => None,
        Err(e) => return Err(e),
    };
    let symbolic = if t.f.is_monomial() {
        let mu = monomial_measure(&t.f, t.prime, m)?.eval(t.prime);
        let scaled = mu * t.prime.rational_pow((t.f.nvars as i64) * m as i64);
        Some(scaled == Rational::from_integer(table.into()))
    } else {
        None
    };
    Ok(IdentityCheck {
        m,
        table,
        counting,
        symbolic,
    })
}

/// Dense polynomial in `T` with rational coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TPoly(Vec<Rational>);

impl TPoly {
    pub fn new(mut c: Vec<Rational>) -> Self {
        while c.last().is_some_and(Zero::is_zero) {
            c.pop();
        }
        TPoly(c)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    fn coeff(&self, i: usize) -> Rational {
        self.0.get(i).cloned().unwrap_or_else(Rational::zero)
    }

    fn mul(&self, o: &TPoly) -> TPoly {
        if self.is_zero() || o.is_zero() {
            return TPoly(Vec::new());
        }
        let mut out = vec![Rational::zero(); self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        TPoly::new(out)
    }

    fn truncate(&self, n: usize) -> TPoly {
        TPoly::new(self.0.iter().take(n).cloned().collect())
    }

    fn divrem(&self, d: &TPoly) -> (TPoly, TPoly) {
        let mut rem = self.0.clone();
        let dl = d.0.last().expect("nonzero divisor").clone();
        let dd = d.degree();
        if self.0.len() < d.0.len() {
            return (TPoly(Vec::new()), self.clone());
        }
        let mut quot = vec![Rational::zero(); self.0.len() - d.0.len() + 1];
        for k in (0..quot.len()).rev() {
            let c = &rem[k + dd] / &dl;
            if !c.is_zero() {
                for (j, dj) in d.0.iter().enumerate() {
                    rem[k + j] -= &c * dj;
                }
            }
            quot[k] = c;
        }
        (TPoly::new(quot), TPoly::new(rem))
    }

    fn monic(&self) -> TPoly {
        match self.0.last() {
            None => self.clone(),
            Some(l) => TPoly(self.0.iter().map(|c| c / l).collect()),
        }
    }

    fn gcd(&self, o: &TPoly) -> TPoly {
        let (mut a, mut b) = (self.clone(), o.clone());
        while !b.is_zero() {
            let r = a.divrem(&b).1;
            a = b;
            b = r;
        }
        a.monic()
    }

    /// Taylor coefficients of `self / den` up to `T^(len-1)`; needs `den(0) != 0`.
    fn series_div(&self, den: &TPoly, len: usize) -> Vec<Rational> {
        let d0 = den.coeff(0);
        let mut out: Vec<Rational> = Vec::with_capacity(len);
        for i in 0..len {
            let mut acc = self.coeff(i);
            for j in 1..=i.min(den.degree()) {
                acc -= den.coeff(j) * &out[i - j];
            }
            out.push(acc / &d0);
        }
        out
    }

    fn render(&self) -> String {
        if self.0.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        let mut first = true;
        for (i, c) in self.0.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let neg = c.is_negative();
            let mag = c.abs();
            if first {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            first = false;
            let var = match i {
                0 => String::new(),
                1 => "T".into(),
                _ => format!("T^{i}"),
            };
            match (var.is_empty(), mag.is_one()) {
                (true, _) => out.push_str(&mag.to_string()),
                (false, true) => out.push_str(&var),
                (false, false) => out.push_str(&format!("{mag}*{var}")),
            }
        }
        out
    }
}

/// The factor `1 - p^-m T^N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShapeFactor {
    pub n: u32,
    pub m: i64,
}

impl ShapeFactor {
    fn poly(&self, prime: Prime) -> TPoly {
        let mut c = vec![Rational::zero(); self.n as usize + 1];
        c[0] = Rational::one();
        c[self.n as usize] = -prime.rational_pow(-self.m);
        TPoly::new(c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Denominator {
    Shape(Vec<ShapeFactor>),
    Generic(TPoly),
}

/// `numerator / denominator` with `q` specialized to `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalFunctionT {
    pub prime: Prime,
    pub numerator: TPoly,
    pub denominator: Denominator,
}

impl RationalFunctionT {
    pub fn denominator_poly(&self) -> TPoly {
        match &self.denominator {
            Denominator::Generic(p) => p.clone(),
            Denominator::Shape(fs) => fs
                .iter()
                .fold(TPoly::new(vec![Rational::one()]), |acc, f| acc.mul(&f.poly(self.prime))),
        }
    }

    pub fn expand(&self, len: usize) -> Vec<Rational> {
        self.numerator.series_div(&self.denominator_poly(), len)
    }

    pub fn reproduces(&self, counts: &[u64]) -> bool {
        let e = self.expand(counts.len());
        e.iter().zip(counts).all(|(a, b)| *a == Rational::from_integer((*b).into()))
    }

    pub fn shape(&self) -> Option<&[ShapeFactor]> {
        match &self.denominator {
            Denominator::Shape(s) => Some(s),
            Denominator::Generic(_) => None,
        }
    }

    pub fn numerator_text(&self) -> String {
        self.numerator.render()
    }

    pub fn denominator_text(&self) -> String {
        match &self.denominator {
            Denominator::Generic(p) => format!("({})", p.render()),
            Denominator::Shape(fs) => {
                let mut parts: Vec<(ShapeFactor, u32)> = Vec::new();
                for f in fs {
                    match parts.iter_mut().find(|(g, _)| g == f) {
                        Some((_, k)) => *k += 1,
                        None => parts.push((*f, 1)),
                    }
                }
                let shown: Vec<String> = parts
                    .iter()
                    .map(|(f, k)| {
                        let base = format!("({})", f.poly(self.prime).render());
                        if *k == 1 {
                            base
                        } else {
                            format!("{base}^{k}")
                        }
                    })
                    .collect();
                if shown.is_empty() {
                    "1".into()
                } else {
                    shown.join("*")
                }
            }
        }
    }
}

impl fmt::Display for RationalFunctionT {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = self.numerator_text();
        let several = self.numerator.0.iter().filter(|c| !c.is_zero()).count() > 1;
        let num = if several { format!("({num})") } else { num };
        let den = self.denominator_text();
        if den.contains(")*(") {
            write!(f, "{num}/({den})")
        } else {
            write!(f, "{num}/{den}")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Fit {
    Rational(RationalFunctionT),
    Undetermined(String),
}

impl Fit {
    pub fn rational(&self) -> Option<&RationalFunctionT> {
        match self {
            Fit::Rational(r) => Some(r),
            Fit::Undetermined(_) => None,
        }
    }
}

/// Shortest linear recurrence of `s` over `Q`: connection polynomial
/// `1 + c_1 T + .. ` and its length `L`.
pub fn berlekamp_massey(s: &[Rational]) -> (TPoly, usize) {
    let mut c = vec![Rational::one()];
    let mut b = vec![Rational::one()];
    let mut l = 0usize;
    let mut shift = 1usize;
    let mut last = Rational::one();
    for n in 0..s.len() {
        let mut d = s[n].clone();
        for i in 1..=l.min(c.len() - 1) {
            d += &c[i] * &s[n - i];
        }
        if d.is_zero() {
            shift += 1;
            continue;
        }
        let factor = &d / &last;
        let mut next = c.clone();
        if next.len() < b.len() + shift {
            next.resize(b.len() + shift, Rational::zero());
        }
        for (i, bi) in b.iter().enumerate() {
            next[i + shift] -= &factor * bi;
        }
        if 2 * l <= n {
            b = c;
            l = n + 1 - l;
            last = d;
            shift = 1;
        } else {
            shift += 1;
        }
        c = next;
    }
    (TPoly::new(c), l)
}

/// Smallest product of factors `1 - p^-m T^N` (with `N <= max_n`,
/// `|m| <= n_vars·N`) divisible by `den`, as a list of factors.
fn find_shape(den: &TPoly, prime: Prime, n_vars: usize) -> Option<Vec<ShapeFactor>> {
    let max_n = den.degree() as u32;
    let mut candidates = Vec::new();
    for n in 1..=max_n {
        let w = (n_vars as i64) * n as i64;
        for m in -w..=w {
            let f = ShapeFactor { n, m };
            candidates.push((f, f.poly(prime)));
        }
    }
    let target = den.monic();
    // iterative deepening on the total degree
    for budget in den.degree()..=2 * den.degree() {
        let mut chosen = Vec::new();
        if dfs(&target, &candidates, 0, budget, &mut chosen) {
            return Some(chosen);
        }
    }
    None
}

fn dfs(rest: &TPoly, cands: &[(ShapeFactor, TPoly)], from: usize, budget: usize, chosen: &mut Vec<ShapeFactor>) -> bool {
    if rest.degree() == 0 {
        return true;
    }
    for (k, (f, p)) in cands.iter().enumerate().skip(from) {
        let n = f.n as usize;
        if n > budget {
            continue;
        }
        let g = rest.gcd(p);
        if g.degree() == 0 {
            continue;
        }
        chosen.push(*f);
        if dfs(&rest.divrem(&g).0.monic(), cands, k, budget - n, chosen) {
            return true;
        }
        chosen.pop();
    }
    false
}

/// Fits a rational generating function to the table: the shortest linear
/// recurrence on all but the last `guard` entries, confirmed on the whole
/// table.
pub fn fit_rational(t: &SeriesTable, guard: usize) -> Fit {
    let len = t.counts.len();
    if guard < 1 || len <= guard {
        return Fit::Undetermined(format!("{len} terms leave nothing to fit beyond {guard} guard terms"));
    }
    let s: Vec<Rational> = t.counts.iter().map(|c| Rational::from_integer((*c).into())).collect();
    let prefix = len - guard;
    let (conn, l) = berlekamp_massey(&s[..prefix]);
    if l == 0 || 2 * l > prefix {
        return Fit::Undetermined(format!(
            "shortest recurrence on {prefix} terms has order {l}, too long to trust"
        ));
    }
    for i in l..len {
        let mut acc = Rational::zero();
        for j in 0..=conn.degree().min(i) {
            acc += conn.coeff(j) * &s[i - j];
        }
        if !acc.is_zero() {
            return Fit::Undetermined(format!("order-{l} recurrence fails at m = {i}"));
        }
    }
    let series = TPoly::new(s.clone());
    let numerator = series.mul(&conn).truncate(l);
    let generic = RationalFunctionT {
        prime: t.prime,
        numerator: numerator.clone(),
        denominator: Denominator::Generic(conn.clone()),
    };
    let fit = match find_shape(&conn, t.prime, t.f.nvars) {
        Some(shape) => {
            let full = generic_with_shape(&generic, &conn, shape);
            full.unwrap_or(generic)
        }
        None => generic,
    };
    if fit.reproduces(&t.counts) {
        Fit::Rational(fit)
    } else {
        Fit::Undetermined("reconstructed function does not reproduce the table".into())
    }
}

fn generic_with_shape(g: &RationalFunctionT, conn: &TPoly, shape: Vec<ShapeFactor>) -> Option<RationalFunctionT> {
    let mut shape = shape;
    shape.sort();
    let candidate = RationalFunctionT {
        prime: g.prime,
        numerator: TPoly::new(vec![]),
        denominator: Denominator::Shape(shape),
    };
    let (cofactor, rem) = candidate.denominator_poly().divrem(conn);
    if !rem.is_zero() {
        return None;
    }
    Some(RationalFunctionT {
        numerator: g.numerator.mul(&cofactor),
        ..candidate
    })
}

pub const DEFAULT_GUARD: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoincareReport {
    pub table: SeriesTable,
    pub fit: Fit,
    pub checks: Vec<IdentityCheck>,
    pub guard: usize,
}

impl PoincareReport {
    pub fn all_checks_hold(&self) -> bool {
        self.checks.iter().all(IdentityCheck::holds)
    }

    pub fn to_json(&self) -> Json {
        let rational = match &self.fit {
            Fit::Rational(r) => json!({
                "num": r.numerator_text(),
                "den": r.denominator_text(),
                "text": r.to_string(),
            }),
            Fit::Undetermined(_) => Json::Null,
        };
        let shape = match self.fit.rational().and_then(RationalFunctionT::shape) {
            Some(fs) => Json::Array(
                fs.iter()
                    .map(|f| json!({"N": f.n.to_string(), "m": f.m.to_string(), "negative": f.m < 0}))
                    .collect(),
            ),
            None => Json::Null,
        };
        let mut out = json!({
            "f": self.table.f.to_string(),
            "p": self.table.prime.get().to_string(),
            "counts": self.table.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "rational": rational,
            "shape": shape,
            "checks": self.checks.iter().map(IdentityCheck::to_json).collect::<Vec<_>>(),
            "guard": self.guard.to_string(),
        });
        if let Fit::Undetermined(why) = &self.fit {
            out["undetermined"] = Json::String(why.clone());
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("f = {}, p = {}\n", self.table.f, self.table.prime));
        let counts: Vec<String> = self.table.counts.iter().map(u64::to_string).collect();
        out.push_str(&format!("N_0..N_{}: {}\n", counts.len() - 1, counts.join(", ")));
        match &self.fit {
            Fit::Rational(r) => {
                out.push_str(&format!("P(T) = {r}\n"));
                match r.shape() {
                    Some(fs) => {
                        let shown: Vec<String> = fs.iter().map(|f| format!("(N={}, m={})", f.n, f.m)).collect();
                        out.push_str(&format!("shape: {}\n", shown.join(" ")));
                    }
                    None => out.push_str("shape: none found\n"),
                }
            }
            Fit::Undetermined(why) => out.push_str(&format!("P(T) undetermined: {why}\n")),
        }
        out.push_str(&format!("verified on the last {} terms\n", self.guard));
        for c in &self.checks {
            let show = |b: Option<bool>| match b {
                None => "skipped",
                Some(true) => "ok",
                Some(false) => "MISMATCH",
            };
            out.push_str(&format!(
                "m = {}: N = {}, counting {}, symbolic {}\n",
                c.m,
                c.table,
                show(c.counting),
                show(c.symbolic)
            ));
        }
        out
    }
}

/// Table, fit and identity checks for `m <= mmax`.
pub fn poincare_report(f: &Polynomial, prime: Prime, mmax: u32, guard: usize, budget: u64) -> Result<PoincareReport> {
    let table = SeriesTable::compute(f, prime, mmax, budget)?;
    let fit = fit_rational(&table, guard);
    let checks = (0..=mmax)
        .map(|m| measure_identity_check(&table, m, budget))
        .collect::<Result<Vec<_>>>()?;
    Ok(PoincareReport {
        table,
        fit,
        checks,
        guard,
    })
}
