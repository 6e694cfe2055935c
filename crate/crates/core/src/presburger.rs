//! Γ-cells (congruence-constrained integer intervals), prepared linear
//! functions, closed-form sums of `poly(τ)·q^(-Nτ)` over cells, and the
//! definable well-order `0 ◁ 1 ◁ -1 ◁ 2 ◁ -2 ◁ …`.

use std::cmp::Ordering;
use std::fmt;

use num_integer::Integer;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::aqring::AqElem;
use crate::error::{Error, Result};
use crate::mpoly::{Affine, MPoly};
use crate::padic::{rational_to_i64, ExtendedInteger, Rational};

/// `{γ : lower < γ < upper, γ ≡ residue mod modulus}`; absent bounds impose
/// no condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GammaCellRepr", into = "GammaCellRepr")]
pub struct GammaCell {
    lower: Option<i64>,
    upper: Option<i64>,
    modulus: i64,
    residue: i64,
}

#[derive(Serialize, Deserialize)]
struct GammaCellRepr {
    lower: Option<i64>,
    upper: Option<i64>,
    #[serde(rename = "mod")]
    modulus: i64,
    #[serde(rename = "res")]
    residue: i64,
}

impl TryFrom<GammaCellRepr> for GammaCell {
    type Error = Error;
    fn try_from(r: GammaCellRepr) -> Result<Self> {
        GammaCell::new(r.lower, r.upper, r.modulus, r.residue)
    }
}

impl From<GammaCell> for GammaCellRepr {
    fn from(c: GammaCell) -> Self {
        GammaCellRepr {
            lower: c.lower,
            upper: c.upper,
            modulus: c.modulus,
            residue: c.residue,
        }
    }
}

impl GammaCell {
    pub fn new(lower: Option<i64>, upper: Option<i64>, modulus: i64, residue: i64) -> Result<Self> {
        if modulus < 1 {
            return Err(Error::InvalidCell(format!("modulus {modulus} must be at least 1")));
        }
        if !(0..modulus).contains(&residue) {
            return Err(Error::InvalidCell(format!(
                "residue {residue} must lie in 0..{modulus}"
            )));
        }
        Ok(GammaCell {
            lower,
            upper,
            modulus,
            residue,
        })
    }

    /// Like [`GammaCell::new`] but reduces any residue modulo `modulus`.
    pub fn congruent(lower: Option<i64>, upper: Option<i64>, modulus: i64, residue: i64) -> Result<Self> {
        if modulus < 1 {
            return Err(Error::InvalidCell(format!("modulus {modulus} must be at least 1")));
        }
        GammaCell::new(lower, upper, modulus, residue.mod_floor(&modulus))
    }

    /// All of `Z`.
    pub fn everything() -> Self {
        GammaCell {
            lower: None,
            upper: None,
            modulus: 1,
            residue: 0,
        }
    }

    pub fn lower(&self) -> Option<i64> {
        self.lower
    }

    pub fn upper(&self) -> Option<i64> {
        self.upper
    }

    pub fn modulus(&self) -> i64 {
        self.modulus
    }

    pub fn residue(&self) -> i64 {
        self.residue
    }

    pub fn contains(&self, g: i64) -> bool {
        self.lower.map_or(true, |a| a < g)
            && self.upper.map_or(true, |b| g < b)
            && (g - self.residue).mod_floor(&self.modulus) == 0
    }

    /// First index `τ` with `residue + modulus·τ` in the cell, if bounded below.
    pub fn first_index(&self) -> Option<i64> {
        self.lower.map(|a| Integer::div_floor(&(a - self.residue), &self.modulus) + 1)
    }

    /// Last index `τ` with `residue + modulus·τ` in the cell, if bounded above.
    pub fn last_index(&self) -> Option<i64> {
        self.upper.map(|b| ceil_div(b - self.residue, self.modulus) - 1)
    }

    pub fn is_empty(&self) -> bool {
        match (self.first_index(), self.last_index()) {
            (Some(a), Some(b)) => a > b,
            _ => false,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_some() && self.upper.is_some()
    }

    pub fn member_at(&self, tau: i64) -> i64 {
        self.residue + self.modulus * tau
    }

    /// Smallest member `>= x`.
    pub fn first_member_from(&self, x: i64) -> Option<i64> {
        let from = match self.lower {
            Some(a) => x.max(a + 1),
            None => x,
        };
        let tau = ceil_div(from - self.residue, self.modulus);
        let g = self.member_at(tau);
        self.upper.map_or(true, |b| g < b).then_some(g)
    }

    /// Largest member `<= x`.
    pub fn last_member_to(&self, x: i64) -> Option<i64> {
        let to = match self.upper {
            Some(b) => x.min(b - 1),
            None => x,
        };
        let tau = Integer::div_floor(&(to - self.residue), &self.modulus);
        let g = self.member_at(tau);
        self.lower.map_or(true, |a| a < g).then_some(g)
    }

    /// Members inside `[lo, hi]`.
    pub fn members_in(&self, lo: i64, hi: i64) -> impl Iterator<Item = i64> + '_ {
        let start = self.first_member_from(lo);
        let step = self.modulus as usize;
        start
            .into_iter()
            .flat_map(move |s| (s..=hi).step_by(step))
            .filter(move |g| self.contains(*g))
    }

    pub fn intersect(&self, other: &GammaCell) -> Option<GammaCell> {
        let (residue, modulus) = crt(self.residue, self.modulus, other.residue, other.modulus)?;
        let lower = max_opt(self.lower, other.lower);
        let upper = match (self.upper, other.upper) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let cell = GammaCell {
            lower,
            upper,
            modulus,
            residue,
        };
        (!cell.is_empty()).then_some(cell)
    }
}

impl fmt::Display for GammaCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(a) = self.lower {
            write!(f, "{a} < ")?;
        }
        write!(f, "γ")?;
        if let Some(b) = self.upper {
            write!(f, " < {b}")?;
        }
        write!(f, ", γ ≡ {} mod {}", self.residue, self.modulus)
    }
}

fn max_opt(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

pub(crate) fn ceil_div(a: i64, b: i64) -> i64 {
    -Integer::div_floor(&-a, &b)
}

/// Solves `x ≡ k1 mod n1, x ≡ k2 mod n2`; returns `(residue, lcm)`.
pub(crate) fn crt(k1: i64, n1: i64, k2: i64, n2: i64) -> Option<(i64, i64)> {
    let (k1, n1, k2, n2) = (k1 as i128, n1 as i128, k2 as i128, n2 as i128);
    let e = n1.extended_gcd(&n2);
    let g = e.gcd;
    if (k2 - k1).mod_floor(&g) != 0 {
        return None;
    }
    let lcm = n1 / g * n2;
    let t = ((k2 - k1) / g * e.x).mod_floor(&(n2 / g));
    let x = (k1 + n1 * t).mod_floor(&lcm);
    Some((i64::try_from(x).ok()?, i64::try_from(lcm).ok()?))
}

pub fn cell_cardinality(c: &GammaCell) -> ExtendedInteger {
    if c.is_empty() {
        return ExtendedInteger::Finite(0);
    }
    match (c.first_index(), c.last_index()) {
        (Some(a), Some(b)) => ExtendedInteger::Finite(b - a + 1),
        _ => ExtendedInteger::Infinity,
    }
}

pub fn cells_disjoint(c1: &GammaCell, c2: &GammaCell) -> bool {
    c1.intersect(c2).is_none()
}

/// A finite list of pairwise disjoint Γ-cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GammaCell>", into = "Vec<GammaCell>")]
pub struct GammaCellUnion {
    cells: Vec<GammaCell>,
}

impl GammaCellUnion {
    pub fn new(cells: Vec<GammaCell>) -> Result<Self> {
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                if !cells_disjoint(a, b) {
                    return Err(Error::InvalidCell(format!("cells `{a}` and `{b}` overlap")));
                }
            }
        }
        Ok(GammaCellUnion { cells })
    }

    pub fn cells(&self) -> &[GammaCell] {
        &self.cells
    }

    pub fn contains(&self, g: i64) -> bool {
        self.cells.iter().any(|c| c.contains(g))
    }
}

impl TryFrom<Vec<GammaCell>> for GammaCellUnion {
    type Error = Error;
    fn try_from(cells: Vec<GammaCell>) -> Result<Self> {
        GammaCellUnion::new(cells)
    }
}

impl From<GammaCellUnion> for Vec<GammaCell> {
    fn from(u: GammaCellUnion) -> Self {
        u.cells
    }
}

/// `a·(γ - k)/n + delta`, defined on `γ ≡ k mod n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreparedLinear {
    pub a: i64,
    pub k: i64,
    pub n: i64,
    pub delta: i64,
}

impl PreparedLinear {
    pub fn new(a: i64, k: i64, n: i64, delta: i64) -> Result<Self> {
        if n < 1 || k < 0 {
            return Err(Error::domain(format!("prepared form needs n >= 1 and k >= 0 (got n={n}, k={k})")));
        }
        Ok(PreparedLinear { a, k, n, delta })
    }

    pub fn identity() -> Self {
        PreparedLinear {
            a: 1,
            k: 0,
            n: 1,
            delta: 0,
        }
    }

    pub fn eval(&self, g: i64) -> Result<i64> {
        let shifted = g - self.k;
        if shifted.mod_floor(&self.n) != 0 {
            return Err(Error::domain(format!(
                "{g} is not congruent to {} mod {}",
                self.k, self.n
            )));
        }
        Ok(self.a * (shifted / self.n) + self.delta)
    }

    /// Whether every member of `cell` lies in the domain `γ ≡ k mod n`.
    pub fn defined_on(&self, cell: &GammaCell) -> bool {
        cell.modulus() % self.n == 0 && (cell.residue() - self.k).mod_floor(&self.n) == 0
    }

    /// The form as an affine function of variable `var`.
    pub fn to_affine(&self, var: usize) -> Affine {
        let slope = Rational::new(self.a.into(), self.n.into());
        let constant = Rational::from_integer(self.delta.into()) - &slope * Rational::from_integer(self.k.into());
        &Affine::term(var, slope) + &Affine::constant(constant)
    }
}

impl fmt::Display for PreparedLinear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lin({},{},{},{})", self.a, self.k, self.n, self.delta)
    }
}

pub fn prepared_eval(f: &PreparedLinear, g: i64) -> Result<i64> {
    f.eval(g)
}

/// One summand `coeff · q^exponent · poly` of a symbolic sum, where the
/// exponent and the polynomial may still mention outer variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymTerm {
    pub coeff: AqElem,
    pub exponent: Affine,
    pub poly: MPoly,
}

impl SymTerm {
    /// Collapses a term without free variables into `A_q`.
    pub fn to_aq(&self) -> Result<AqElem> {
        let c = self
            .poly
            .constant_value()
            .ok_or_else(|| Error::domain("term still depends on a variable"))?;
        if !self.exponent.is_constant() {
            return Err(Error::domain("exponent still depends on a variable"));
        }
        let e = rational_to_i64(self.exponent.constant_part())
            .ok_or_else(|| Error::domain(format!("non-integral exponent {}", self.exponent.constant_part())))?;
        Ok(&self.coeff.scale(&c) * &AqElem::q_pow(e))
    }
}

fn binomial_poly(y: &MPoly, k: u32) -> MPoly {
    let mut out = MPoly::one();
    let mut fact = Rational::one();
    for i in 0..k {
        out = &out * &(y - &MPoly::constant(Rational::from_integer(i.into())));
        fact *= Rational::from_integer((i + 1).into());
    }
    out.scale(&fact.recip())
}

/// Closed form of `Σ_{τ = first}^{last} P(τ)·q^(step·τ)` where `τ` is variable
/// `var` of `p`, and the bounds may be affine in other variables.
///
/// The caller guarantees `first <= last + 1` wherever the bounds are
/// parametric; a missing bound means the range is unbounded on that side.
pub(crate) fn range_sum(
    p: &MPoly,
    var: usize,
    step: i64,
    first: Option<&Affine>,
    last: Option<&Affine>,
) -> Result<Vec<SymTerm>> {
    if p.is_zero() {
        return Ok(Vec::new());
    }
    match step.cmp(&0) {
        Ordering::Greater => {
            let reflected = p.substitute(var, &-&MPoly::var(var));
            let minus = |a: &Affine| a.scale(&-Rational::one());
            let new_first = last.map(minus);
            let new_last = first.map(minus);
            range_sum(&reflected, var, -step, new_first.as_ref(), new_last.as_ref())
        }
        Ordering::Less => {
            let first = first.ok_or_else(|| {
                Error::DivergentSum("sum of q^(-Nτ) over indices unbounded below".into())
            })?;
            let n = (-step) as u32;
            let mut diffs = vec![p.clone()];
            while !diffs.last().unwrap().is_zero() {
                let d = diffs.last().unwrap().forward_difference(var);
                diffs.push(d);
            }
            diffs.pop();
            // Σ_{τ≥a} P(τ) x^τ = x^a Σ_j (Δ^j P)(a) x^j / (1-x)^(j+1)
            let tail = |a: &Affine, sign: i64| -> Vec<SymTerm> {
                diffs
                    .iter()
                    .enumerate()
                    .map(|(j, d)| SymTerm {
                        coeff: (&AqElem::q_pow(step * j as i64) * &AqElem::inv_one_minus(n, j as u32 + 1))
                            .scale(&Rational::from_integer(sign.into())),
                        exponent: a.scale(&Rational::from_integer(step.into())),
                        poly: d.substitute(var, &a.to_mpoly()),
                    })
                    .collect()
            };
            let mut out = tail(first, 1);
            if let Some(b) = last {
                out.extend(tail(&b.add_constant(&Rational::one()), -1));
            }
            Ok(out)
        }
        Ordering::Equal => {
            let (first, last) = match (first, last) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::DivergentSum(
                        "sum without geometric decay over an infinite index set".into(),
                    ))
                }
            };
            // P(τ) = Σ_j c_j C(τ, j), so Σ_{τ=a}^{b} P = Σ_j c_j (C(b+1, j+1) - C(a, j+1))
            let zero = MPoly::zero();
            let mut d = p.clone();
            let mut j = 0u32;
            let upper = last.add_constant(&Rational::one()).to_mpoly();
            let lower = first.to_mpoly();
            let mut poly = MPoly::zero();
            while !d.is_zero() {
                let c = d.substitute(var, &zero);
                let diff = &binomial_poly(&upper, j + 1) - &binomial_poly(&lower, j + 1);
                poly = &poly + &(&c * &diff);
                d = d.forward_difference(var);
                j += 1;
            }
            Ok(vec![SymTerm {
                coeff: AqElem::one(),
                exponent: Affine::default(),
                poly,
            }])
        }
    }
}

fn terms_to_aq(terms: &[SymTerm]) -> Result<AqElem> {
    terms.iter().map(SymTerm::to_aq).sum()
}

fn index_bounds(c: &GammaCell) -> (Option<Affine>, Option<Affine>) {
    (
        c.first_index().map(Affine::from_int),
        c.last_index().map(Affine::from_int),
    )
}

/// `Σ_{γ ∈ c} (q^-N)^τ` with `γ = residue + modulus·τ`.
pub fn geom_sum(c: &GammaCell, n: i64) -> Result<AqElem> {
    weighted_sum(c, &[Rational::one()], n)
}

/// `Σ_{γ ∈ c} poly(τ)·(q^-N)^τ` with `γ = residue + modulus·τ`; `poly` holds
/// the coefficients in ascending degree.
///
/// Converges for `N >= 1` on cells bounded below, for `N <= -1` on cells
/// bounded above, and for `N = 0` on finite cells; anything else is
/// [`Error::DivergentSum`].
pub fn weighted_sum(c: &GammaCell, poly: &[Rational], n: i64) -> Result<AqElem> {
    if c.is_empty() {
        return Ok(AqElem::zero());
    }
    let p = MPoly::from_terms(
        poly.iter()
            .enumerate()
            .map(|(i, coeff)| (vec![i as u32], coeff.clone())),
    );
    let (first, last) = index_bounds(c);
    let terms = range_sum(&p, 0, -n, first.as_ref(), last.as_ref())?;
    terms_to_aq(&terms)
}

fn wellorder_key(x: i64) -> (u64, bool) {
    (x.unsigned_abs(), x < 0)
}

/// `x ◁ y` in the order `0, 1, -1, 2, -2, 3, -3, …`.
pub fn wellorder_less(x: i64, y: i64) -> bool {
    wellorder_key(x) < wellorder_key(y)
}

pub fn wellorder_cmp(x: i64, y: i64) -> Ordering {
    wellorder_key(x).cmp(&wellorder_key(y))
}

/// ◁-least member of one cell: the least nonnegative member or the greatest
/// negative member, whichever comes first.
fn cell_min(c: &GammaCell) -> Option<i64> {
    if c.is_empty() {
        return None;
    }
    let candidates = [c.first_member_from(0), c.last_member_to(-1)];
    candidates.into_iter().flatten().min_by(|a, b| wellorder_cmp(*a, *b))
}

fn min_over(cells: &[GammaCell]) -> Option<i64> {
    cells.iter().filter_map(cell_min).min_by(|a, b| wellorder_cmp(*a, *b))
}

pub fn wellorder_min(u: &GammaCellUnion) -> Result<i64> {
    min_over(u.cells()).ok_or(Error::EmptySet)
}

/// ◁-least tuple (lexicographic) of a finite union of product cells; every
/// product must have the same number of factors.
pub fn wellorder_min_product(products: &[Vec<GammaCell>]) -> Result<Vec<i64>> {
    let live: Vec<&[GammaCell]> = products
        .iter()
        .filter(|p| p.iter().all(|c| !c.is_empty()))
        .map(|p| p.as_slice())
        .collect();
    let dims = match live.first() {
        None => return Err(Error::EmptySet),
        Some(p) => p.len(),
    };
    if live.iter().any(|p| p.len() != dims) {
        return Err(Error::domain("product cells have different dimensions"));
    }
    let mut current = live;
    let mut out = Vec::with_capacity(dims);
    for axis in 0..dims {
        let heads: Vec<GammaCell> = current.iter().map(|p| p[axis]).collect();
        let m = min_over(&heads).ok_or(Error::EmptySet)?;
        current.retain(|p| p[axis].contains(m));
        out.push(m);
    }
    Ok(out)
}
