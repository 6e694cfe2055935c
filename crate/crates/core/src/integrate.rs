//! Constructible functions over cell-presented domains.
//!
//! A function is a finite sum of terms `c · q^L · Π z_j` where `c` lies in
//! `A_q` and `L`, `z_j` are integer combinations of prepared linear forms in
//! Γ-variables and of `ord(g)` for integer polynomials `g` in K-variables.
//! [`integrate`] works innermost variable first: a K-variable on a cell with
//! center `c` becomes the Γ-variable `v = ord(t - c)` with weight
//! `q^-(v+M)`, and every Γ-sum is done in closed form. [`brute_force_integrate`]
//! is the independent residue-enumeration check.

use std::collections::HashMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde_json::Value as Json;

use crate::aqring::AqElem;
use crate::error::{Error, Result};
use crate::kcells::{kcells_disjoint, KCell};
use crate::mpoly::{Affine, MPoly};
use crate::padic::{check_budget, ord_rational, ExtendedInteger, Prime, Rational};
use crate::presburger::{ceil_div, range_sum, weighted_sum, GammaCell, PreparedLinear, SymTerm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sort {
    K,
    Gamma,
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::K => "K",
            Sort::Gamma => "Gamma",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VarDecl {
    pub name: String,
    pub sort: Sort,
}

impl VarDecl {
    pub fn new(name: impl Into<String>, sort: Sort) -> Self {
        VarDecl {
            name: name.into(),
            sort,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Atom {
    /// A prepared linear form in the Γ-variable with this index.
    Lin { var: usize, form: PreparedLinear },
    /// `ord(g)` for an integer polynomial in K-variables.
    Ord(MPoly),
}

/// `constant + Σ c_i · atom_i`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ZExpr {
    constant: i64,
    atoms: Vec<(i64, Atom)>,
}

impl ZExpr {
    pub fn constant(c: i64) -> Self {
        ZExpr {
            constant: c,
            atoms: Vec::new(),
        }
    }

    pub fn atom(a: Atom) -> Self {
        ZExpr {
            constant: 0,
            atoms: vec![(1, a)],
        }
    }

    pub fn gamma(var: usize) -> Self {
        ZExpr::atom(Atom::Lin {
            var,
            form: PreparedLinear::identity(),
        })
    }

    pub fn lin(var: usize, form: PreparedLinear) -> Self {
        ZExpr::atom(Atom::Lin { var, form })
    }

    /// `ord(g)`; `g` must have integer coefficients.
    pub fn ord(g: MPoly) -> Result<Self> {
        if g.terms().any(|(_, c)| !c.is_integer()) {
            return Err(Error::domain(format!("ord argument {g} has non-integer coefficients")));
        }
        Ok(ZExpr::atom(Atom::Ord(g)))
    }

    pub fn constant_part(&self) -> i64 {
        self.constant
    }

    pub fn atoms(&self) -> &[(i64, Atom)] {
        &self.atoms
    }

    pub fn is_constant(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn scale(&self, c: i64) -> ZExpr {
        if c == 0 {
            return ZExpr::constant(0);
        }
        ZExpr {
            constant: self.constant * c,
            atoms: self.atoms.iter().map(|(k, a)| (k * c, a.clone())).collect(),
        }
    }

    pub fn plus(&self, other: &ZExpr) -> ZExpr {
        let mut atoms = self.atoms.clone();
        for (c, a) in &other.atoms {
            match atoms.iter_mut().find(|(_, b)| b == a) {
                Some(slot) => slot.0 += c,
                None => atoms.push((*c, a.clone())),
            }
        }
        atoms.retain(|(c, _)| *c != 0);
        ZExpr {
            constant: self.constant + other.constant,
            atoms,
        }
    }

    fn render(&self, vars: &[VarDecl]) -> String {
        let name = |i: usize| vars.get(i).map_or_else(|| format!("v{i}"), |v| v.name.clone());
        let mut parts: Vec<(i64, String)> = Vec::new();
        for (c, a) in &self.atoms {
            let s = match a {
                Atom::Lin { var, form } if *form == PreparedLinear::identity() => name(*var),
                Atom::Lin { var, form } => {
                    format!("lin({},{},{},{};{})", form.a, form.k, form.n, form.delta, name(*var))
                }
                Atom::Ord(g) => format!("ord({})", g.render(&name)),
            };
            parts.push((*c, s));
        }
        if self.constant != 0 || parts.is_empty() {
            parts.push((self.constant, String::new()));
        }
        let mut out = String::new();
        for (k, (c, s)) in parts.iter().enumerate() {
            let mag = c.unsigned_abs();
            if k == 0 {
                if *c < 0 {
                    out.push('-');
                }
            } else {
                out.push_str(if *c < 0 { " - " } else { " + " });
            }
            match (s.is_empty(), mag) {
                (true, _) => out.push_str(&mag.to_string()),
                (false, 1) => out.push_str(s),
                (false, _) => out.push_str(&format!("{mag}*{s}")),
            }
        }
        out
    }
}

/// `coeff · q^exponent · Π factors`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Term {
    pub coeff: AqElem,
    pub exponent: ZExpr,
    pub factors: Vec<ZExpr>,
}

impl Term {
    pub fn constant(c: AqElem) -> Self {
        Term {
            coeff: c,
            exponent: ZExpr::default(),
            factors: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstructibleExpr {
    vars: Vec<VarDecl>,
    terms: Vec<Term>,
}

impl ConstructibleExpr {
    pub fn zero(vars: Vec<VarDecl>) -> Result<Self> {
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::domain(format!("variable {} declared twice", v.name)));
            }
        }
        Ok(ConstructibleExpr {
            vars,
            terms: Vec::new(),
        })
    }

    pub fn from_terms(vars: Vec<VarDecl>, terms: Vec<Term>) -> Result<Self> {
        let mut f = ConstructibleExpr::zero(vars)?;
        for t in terms {
            f.push(t)?;
        }
        Ok(f)
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    fn check_zexpr(&self, z: &ZExpr) -> Result<()> {
        for (_, a) in &z.atoms {
            let (vars, want) = match a {
                Atom::Lin { var, .. } => (vec![*var], Sort::Gamma),
                Atom::Ord(g) => (g.vars(), Sort::K),
            };
            for v in vars {
                match self.vars.get(v) {
                    None => return Err(Error::domain(format!("variable index {v} is not declared"))),
                    Some(d) if d.sort != want => {
                        return Err(Error::domain(format!("{} has sort {}, expected {want}", d.name, d.sort)))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn push(&mut self, t: Term) -> Result<()> {
        self.check_zexpr(&t.exponent)?;
        for z in &t.factors {
            self.check_zexpr(z)?;
        }
        if !t.coeff.is_zero() {
            self.terms.push(t);
        }
        Ok(())
    }

    fn same_vars(&self, other: &ConstructibleExpr) -> Result<()> {
        if self.vars != other.vars {
            return Err(Error::domain("expressions declare different variables"));
        }
        Ok(())
    }

    pub fn plus(&self, other: &ConstructibleExpr) -> Result<ConstructibleExpr> {
        self.same_vars(other)?;
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        Ok(out)
    }

    pub fn times(&self, other: &ConstructibleExpr) -> Result<ConstructibleExpr> {
        self.same_vars(other)?;
        let mut terms = Vec::new();
        for a in &self.terms {
            for b in &other.terms {
                let mut factors = a.factors.clone();
                factors.extend(b.factors.iter().cloned());
                let coeff = &a.coeff * &b.coeff;
                if !coeff.is_zero() {
                    terms.push(Term {
                        coeff,
                        exponent: a.exponent.plus(&b.exponent),
                        factors,
                    });
                }
            }
        }
        Ok(ConstructibleExpr {
            vars: self.vars.clone(),
            terms,
        })
    }

    pub fn scale(&self, c: &AqElem) -> ConstructibleExpr {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                coeff: &t.coeff * c,
                ..t.clone()
            })
            .filter(|t| !t.coeff.is_zero())
            .collect();
        ConstructibleExpr {
            vars: self.vars.clone(),
            terms,
        }
    }

    fn ord_atoms(&self) -> Vec<&MPoly> {
        let mut out: Vec<&MPoly> = Vec::new();
        for t in &self.terms {
            for z in std::iter::once(&t.exponent).chain(&t.factors) {
                for (_, a) in &z.atoms {
                    if let Atom::Ord(g) = a {
                        if !out.contains(&g) {
                            out.push(g);
                        }
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for ConstructibleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            let mut parts = Vec::new();
            if t.coeff != AqElem::one() || (t.exponent == ZExpr::default() && t.factors.is_empty()) {
                parts.push(format!("({})", t.coeff));
            }
            if t.exponent != ZExpr::default() {
                parts.push(format!("q^({})", t.exponent.render(&self.vars)));
            }
            for z in &t.factors {
                parts.push(format!("({})", z.render(&self.vars)));
            }
            write!(f, "{}", parts.join("*"))?;
        }
        Ok(())
    }
}

/// A coordinate of a point: a field element or a value-group element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    K(Rational),
    Gamma(i64),
}

enum ZValue {
    Finite(i64),
    Undefined(String),
}

fn eval_zexpr(z: &ZExpr, point: &[Value], vars: &[VarDecl], prime: Prime) -> Result<ZValue> {
    let mut total = z.constant;
    for (c, a) in &z.atoms {
        let v = match a {
            Atom::Lin { var, form } => match &point[*var] {
                Value::Gamma(g) => form.eval(*g)?,
                Value::K(_) => return Err(Error::domain(format!("{} is not a Γ-variable", vars[*var].name))),
            },
            Atom::Ord(g) => {
                let mut args = vec![Rational::zero(); g.num_vars()];
                for i in g.vars() {
                    args[i] = match &point[i] {
                        Value::K(x) => x.clone(),
                        Value::Gamma(_) => {
                            return Err(Error::domain(format!("{} is not a K-variable", vars[i].name)))
                        }
                    };
                }
                match ord_rational(&g.eval(&args), prime) {
                    ExtendedInteger::Finite(v) => v,
                    ExtendedInteger::Infinity => {
                        let name = |i: usize| vars[i].name.clone();
                        return Ok(ZValue::Undefined(format!("ord({}) is infinite", g.render(&name))));
                    }
                }
            }
        };
        total += c * v;
    }
    Ok(ZValue::Finite(total))
}

/// Exact value at a point with `q = p`.
pub fn eval_constructible(f: &ConstructibleExpr, point: &[Value], prime: Prime) -> Result<Rational> {
    if point.len() != f.vars.len() {
        return Err(Error::domain(format!(
            "point has {} coordinates, expected {}",
            point.len(),
            f.vars.len()
        )));
    }
    for (v, x) in f.vars.iter().zip(point) {
        let ok = matches!((v.sort, x), (Sort::K, Value::K(_)) | (Sort::Gamma, Value::Gamma(_)));
        if !ok {
            return Err(Error::domain(format!("coordinate for {} has the wrong sort", v.name)));
        }
    }
    let mut total = Rational::zero();
    for t in &f.terms {
        let c = t.coeff.eval(prime);
        if c.is_zero() {
            continue;
        }
        let mut value = c;
        for (k, z) in std::iter::once(&t.exponent).chain(&t.factors).enumerate() {
            match eval_zexpr(z, point, &f.vars, prime)? {
                ZValue::Undefined(why) => return Err(Error::UndefinedAtPoint(why)),
                ZValue::Finite(v) if k == 0 => value *= prime.rational_pow(v),
                ZValue::Finite(v) => value *= Rational::from_integer(v.into()),
            }
        }
        total += value;
    }
    Ok(total)
}

/// A strict bound on a Γ-variable: a constant or a prepared linear form in an
/// earlier Γ-variable of the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Const(i64),
    Lin { var: usize, form: PreparedLinear },
}

impl Bound {
    fn eval(&self, values: &[i64]) -> Result<i64> {
        match self {
            Bound::Const(c) => Ok(*c),
            Bound::Lin { var, form } => form.eval(values[*var]),
        }
    }
}

/// A Γ-cell whose bounds may depend on earlier Γ-variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCell {
    pub lower: Option<Bound>,
    pub upper: Option<Bound>,
    pub modulus: i64,
    pub residue: i64,
}

impl ParamCell {
    pub fn new(lower: Option<Bound>, upper: Option<Bound>, modulus: i64, residue: i64) -> Result<Self> {
        GammaCell::new(None, None, modulus, residue)?;
        Ok(ParamCell {
            lower,
            upper,
            modulus,
            residue,
        })
    }

    pub fn from_cell(c: &GammaCell) -> Self {
        ParamCell {
            lower: c.lower().map(Bound::Const),
            upper: c.upper().map(Bound::Const),
            modulus: c.modulus(),
            residue: c.residue(),
        }
    }

    fn as_constant(&self) -> Option<GammaCell> {
        let get = |b: Option<Bound>| match b {
            None => Some(None),
            Some(Bound::Const(c)) => Some(Some(c)),
            Some(Bound::Lin { .. }) => None,
        };
        let cell = GammaCell::new(get(self.lower)?, get(self.upper)?, self.modulus, self.residue);
        cell.ok()
    }

    fn instantiate(&self, values: &[i64]) -> Result<GammaCell> {
        let lower = self.lower.map(|b| b.eval(values)).transpose()?;
        let upper = self.upper.map(|b| b.eval(values)).transpose()?;
        GammaCell::new(lower, upper, self.modulus, self.residue)
    }

    fn bounds(&self) -> impl Iterator<Item = &Bound> {
        self.lower.iter().chain(self.upper.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Region {
    /// `Z_p`, i.e. the partition into `{ord t >= 0, ac_1 t = ξ}` plus `{0}`.
    UnitBall,
    KCells(Vec<KCell>),
    Gamma(Vec<ParamCell>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainVar {
    pub name: String,
    pub sort: Sort,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domain {
    vars: Vec<DomainVar>,
    prime: Option<Prime>,
}

/// Whether the two cells cannot share a member for any value of the
/// variables their bounds refer to.
fn param_cells_disjoint(a: &ParamCell, b: &ParamCell) -> bool {
    if crate::presburger::crt(a.residue, a.modulus, b.residue, b.modulus).is_none() {
        return true;
    }
    if let (Some(x), Some(y)) = (a.as_constant(), b.as_constant()) {
        return x.intersect(&y).is_none();
    }
    // γ < f and γ > g with g >= f - 1 pointwise
    let split = |lo: &ParamCell, hi: &ParamCell| match (lo.upper, hi.lower) {
        (Some(Bound::Const(u)), Some(Bound::Const(l))) => l >= u - 1,
        (Some(Bound::Lin { var: v1, form: f1 }), Some(Bound::Lin { var: v2, form: f2 })) => {
            v1 == v2 && f1.a == f2.a && f1.k == f2.k && f1.n == f2.n && f2.delta >= f1.delta - 1
        }
        _ => false,
    };
    split(a, b) || split(b, a)
}

impl Domain {
    pub fn new(vars: Vec<DomainVar>) -> Result<Self> {
        let mut prime: Option<Prime> = None;
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::domain(format!("variable {} declared twice", v.name)));
            }
            match (&v.region, v.sort) {
                (Region::UnitBall, Sort::K) => {}
                (Region::KCells(cells), Sort::K) => {
                    for (a, c) in cells.iter().enumerate() {
                        match prime {
                            None => prime = Some(c.prime()),
                            Some(p) if p != c.prime() => {
                                return Err(Error::InvalidCell("cells over different primes".into()))
                            }
                            _ => {}
                        }
                        if let Some(d) = cells[..a].iter().find(|d| !kcells_disjoint(c, d)) {
                            return Err(Error::InvalidCell(format!("cells `{c}` and `{d}` overlap")));
                        }
                    }
                }
                (Region::Gamma(cells), Sort::Gamma) => {
                    for (a, c) in cells.iter().enumerate() {
                        for b in c.bounds() {
                            if let Bound::Lin { var, form } = b {
                                PreparedLinear::new(form.a, form.k, form.n, form.delta)?;
                                if *var >= i || vars[*var].sort != Sort::Gamma {
                                    return Err(Error::InvalidCell(format!(
                                        "a bound of {} refers to a variable that is not an earlier Γ-variable",
                                        v.name
                                    )));
                                }
                            }
                        }
                        if let Some(d) = cells[..a].iter().find(|d| !param_cells_disjoint(c, d)) {
                            return Err(Error::InvalidCell(format!(
                                "cannot show that two cells of {} are disjoint ({:?} and {:?})",
                                v.name, c, d
                            )));
                        }
                    }
                }
                _ => {
                    return Err(Error::InvalidCell(format!(
                        "region of {} does not match its sort {}",
                        v.name, v.sort
                    )))
                }
            }
        }
        Ok(Domain { vars, prime })
    }

    /// Fixes the prime; needed for `ord` of constants other than `±1` and by
    /// the oracle when the domain has no explicit K-cells.
    pub fn with_prime(mut self, prime: Prime) -> Result<Self> {
        if let Some(p) = self.prime {
            if p != prime {
                return Err(Error::domain(format!("domain cells live over {p}, not {prime}")));
            }
        }
        self.prime = Some(prime);
        Ok(self)
    }

    pub fn vars(&self) -> &[DomainVar] {
        &self.vars
    }

    pub fn prime(&self) -> Option<Prime> {
        self.prime
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    /// Parses the JSON form
    /// `{"vars": [{"name", "sort": "K"|"Gamma", "region"}]}` where a K-region
    /// is `"unit_ball"` or a list of K-cells and a Γ-region is a list of
    /// `{"lower", "upper", "mod", "res"}` whose bounds are integers, `null`, or
    /// `{"lin": [a, k, n, delta], "var": name}`.
    pub fn from_json(v: &Json) -> Result<Self> {
        let bad = |msg: String| Error::domain(format!("domain JSON: {msg}"));
        let list = v
            .get("vars")
            .and_then(Json::as_array)
            .ok_or_else(|| bad("missing \"vars\" array".into()))?;
        let mut vars: Vec<DomainVar> = Vec::new();
        for item in list {
            let name = item
                .get("name")
                .and_then(Json::as_str)
                .ok_or_else(|| bad("variable without a name".into()))?
                .to_string();
            let sort = match item.get("sort").and_then(Json::as_str) {
                Some("K") => Sort::K,
                Some("Gamma") | Some("Γ") => Sort::Gamma,
                other => return Err(bad(format!("unknown sort {other:?} for {name}"))),
            };
            let region = item.get("region").ok_or_else(|| bad(format!("{name} has no region")))?;
            let region = match (sort, region) {
                (Sort::K, Json::String(s)) if s == "unit_ball" => Region::UnitBall,
                (Sort::K, Json::Array(_)) => Region::KCells(
                    serde_json::from_value(region.clone()).map_err(|e| bad(format!("cells of {name}: {e}")))?,
                ),
                (Sort::Gamma, Json::Array(cells)) => {
                    let mut out = Vec::new();
                    for c in cells {
                        let bound = |key: &str| -> Result<Option<Bound>> {
                            match c.get(key) {
                                None | Some(Json::Null) => Ok(None),
                                Some(Json::Number(n)) => n
                                    .as_i64()
                                    .map(|x| Some(Bound::Const(x)))
                                    .ok_or_else(|| bad(format!("bound {n} is not an integer"))),
                                Some(Json::String(s)) => s
                                    .parse()
                                    .map(|x| Some(Bound::Const(x)))
                                    .map_err(|_| bad(format!("bound {s:?} is not an integer"))),
                                Some(obj) => {
                                    let coeffs: Vec<i64> = obj
                                        .get("lin")
                                        .and_then(|l| serde_json::from_value(l.clone()).ok())
                                        .filter(|l: &Vec<i64>| l.len() == 4)
                                        .ok_or_else(|| bad("\"lin\" needs [a, k, n, delta]".into()))?;
                                    let target = obj
                                        .get("var")
                                        .and_then(Json::as_str)
                                        .ok_or_else(|| bad("\"lin\" bound without \"var\"".into()))?;
                                    let var = vars
                                        .iter()
                                        .position(|w| w.name == target)
                                        .ok_or_else(|| bad(format!("{target} is not an earlier variable")))?;
                                    let form = PreparedLinear::new(coeffs[0], coeffs[1], coeffs[2], coeffs[3])?;
                                    Ok(Some(Bound::Lin { var, form }))
                                }
                            }
                        };
                        let int = |key: &str, default: i64| -> Result<i64> {
                            match c.get(key) {
                                None => Ok(default),
                                Some(x) => x.as_i64().ok_or_else(|| bad(format!("\"{key}\" must be an integer"))),
                            }
                        };
                        out.push(ParamCell::new(bound("lower")?, bound("upper")?, int("mod", 1)?, int("res", 0)?)?);
                    }
                    Region::Gamma(out)
                }
                _ => return Err(bad(format!("region of {name} does not fit sort {sort}"))),
            };
            vars.push(DomainVar { name, sort, region });
        }
        Domain::new(vars)
    }
}

/// K-cells that differ only in their angular residue, merged.
#[derive(Clone, Debug)]
struct KGroup {
    center: Rational,
    valuation: GammaCell,
    depth: u32,
    mult: AqElem,
}

/// `q^M (1 - q^-1)`, the number of unit residues mod `p^M` as an element of `A_q`.
fn unit_count(depth: u32) -> AqElem {
    &AqElem::q_pow(depth as i64) - &AqElem::q_pow(depth as i64 - 1)
}

fn k_groups(region: &Region) -> Vec<KGroup> {
    match region {
        Region::UnitBall => vec![KGroup {
            center: Rational::zero(),
            valuation: GammaCell::new(Some(-1), None, 1, 0).expect("valid cell"),
            depth: 1,
            mult: unit_count(1),
        }],
        Region::KCells(cells) => {
            let mut groups: Vec<(KGroup, u64)> = Vec::new();
            for c in cells.iter().filter(|c| !c.is_point()) {
                let found = groups.iter_mut().find(|(g, _)| {
                    g.center == *c.center() && g.valuation == *c.valuation_cell() && g.depth == c.ac_depth()
                });
                match found {
                    Some((_, n)) => *n += 1,
                    None => groups.push((
                        KGroup {
                            center: c.center().clone(),
                            valuation: *c.valuation_cell(),
                            depth: c.ac_depth(),
                            mult: AqElem::zero(),
                        },
                        1,
                    )),
                }
            }
            let prime = cells.first().map(|c| c.prime());
            groups
                .into_iter()
                .map(|(mut g, n)| {
                    let p = prime.expect("nonempty").get();
                    let units = p.pow(g.depth - 1) * (p - 1);
                    g.mult = if n == units {
                        unit_count(g.depth)
                    } else {
                        AqElem::from_int(n as i64)
                    };
                    g
                })
                .collect()
        }
        Region::Gamma(_) => Vec::new(),
    }
}

#[derive(Clone, Debug)]
enum Choice {
    Gamma(ParamCell),
    K(KGroup),
}

fn choices(d: &Domain) -> Vec<Vec<Choice>> {
    d.vars
        .iter()
        .map(|v| match &v.region {
            Region::Gamma(cells) => cells.iter().copied().map(Choice::Gamma).collect(),
            other => k_groups(other).into_iter().map(Choice::K).collect(),
        })
        .collect()
}

/// Maps each expression variable to its domain position, checking sorts.
fn bind(f: &ConstructibleExpr, d: &Domain) -> Result<Vec<usize>> {
    f.vars
        .iter()
        .map(|v| {
            let i = d
                .index(&v.name)
                .ok_or_else(|| Error::domain(format!("{} is not a domain variable", v.name)))?;
            if d.vars[i].sort != v.sort {
                return Err(Error::domain(format!("{} has different sorts in integrand and domain", v.name)));
            }
            Ok(i)
        })
        .collect()
}

fn rat(x: i64) -> Rational {
    Rational::from_integer(x.into())
}

fn floor_rat(x: &Rational) -> i64 {
    let f = x.floor();
    i64::try_from(f.to_integer()).expect("bound fits i64")
}

fn ceil_rat(x: &Rational) -> i64 {
    let c = x.ceil();
    i64::try_from(c.to_integer()).expect("bound fits i64")
}

fn lcm(a: i64, b: i64) -> i64 {
    a.lcm(&b)
}

/// `ord(g)` on a product of cells, as an affine form in the valuations
/// `v_i = ord(x_i - c_i)`.
fn ord_affine(g: &MPoly, centers: &[Option<Rational>], prime: Option<Prime>, names: &dyn Fn(usize) -> String) -> Result<Affine> {
    let used = g.vars();
    let mut exps = vec![0u32; g.num_vars()];
    let mut product = MPoly::one();
    for &i in &used {
        let c = centers[i].clone().expect("K-variable has a center");
        let e = g.degree_in(i);
        exps[i] = e;
        product = &product * &(&MPoly::var(i) - &MPoly::constant(c)).pow(e);
    }
    let lambda = g.coeff(&exps);
    if lambda.is_zero() {
        if g.is_zero() {
            return Err(Error::UndefinedAtPoint("ord(0) is infinite".into()));
        }
        return Err(Error::NotFiberReducible(format!(
            "ord({}) is not a monomial in the cell coordinates",
            g.render(names)
        )));
    }
    if &product.scale(&lambda) != g {
        let shifted: Vec<String> = used
            .iter()
            .map(|&i| format!("{} - {}", names(i), centers[i].clone().unwrap_or_default()))
            .collect();
        return Err(Error::NotFiberReducible(format!(
            "ord({}) is not a constant times a product of powers of ({})",
            g.render(names),
            shifted.join("), (")
        )));
    }
    let base = if lambda.abs().is_one() {
        0
    } else {
        let p = prime.ok_or_else(|| {
            Error::Unsupported(format!("ord of the constant {lambda} needs a fixed prime"))
        })?;
        ord_rational(&lambda, p).finite().expect("nonzero")
    };
    let mut out = Affine::from_int(base);
    for &i in &used {
        out = &out + &Affine::term(i, rat(exps[i] as i64));
    }
    Ok(out)
}

struct Context<'a> {
    f: &'a ConstructibleExpr,
    map: &'a [usize],
    domain: &'a Domain,
}

impl Context<'_> {
    fn name(&self, i: usize) -> String {
        self.domain.vars[i].name.clone()
    }

    fn zexpr_affine(&self, z: &ZExpr, combo: &[Choice], centers: &[Option<Rational>]) -> Result<Affine> {
        let mut out = Affine::from_int(z.constant);
        for (c, a) in &z.atoms {
            let piece = match a {
                Atom::Lin { var, form } => {
                    let j = self.map[*var];
                    let cell = match &combo[j] {
                        Choice::Gamma(cell) => cell,
                        Choice::K(_) => unreachable!("sorts checked"),
                    };
                    let probe = GammaCell::new(None, None, cell.modulus, cell.residue)?;
                    if !form.defined_on(&probe) {
                        return Err(Error::domain(format!(
                            "{form} is not defined on all of {} ≡ {} mod {}",
                            self.name(j),
                            cell.residue,
                            cell.modulus
                        )));
                    }
                    form.to_affine(j)
                }
                Atom::Ord(g) => {
                    let g = g.rename(self.map);
                    ord_affine(&g, centers, self.domain.prime, &|i| self.name(i))?
                }
            };
            out = &out + &piece.scale(&rat(*c));
        }
        Ok(out)
    }

    /// The integrand on one product of cells, including the fiber weights.
    fn integrand(&self, combo: &[Choice]) -> Result<Vec<SymTerm>> {
        let centers: Vec<Option<Rational>> = combo
            .iter()
            .map(|c| match c {
                Choice::K(g) => Some(g.center.clone()),
                Choice::Gamma(_) => None,
            })
            .collect();
        let mut weight_exp = Affine::default();
        let mut weight = AqElem::one();
        for (i, c) in combo.iter().enumerate() {
            if let Choice::K(g) = c {
                weight_exp = &weight_exp - &Affine::var(i).add_constant(&rat(g.depth as i64));
                weight = &weight * &g.mult;
            }
        }
        let mut out = Vec::new();
        for t in &self.f.terms {
            let exponent = &self.zexpr_affine(&t.exponent, combo, &centers)? + &weight_exp;
            let mut poly = MPoly::one();
            for z in &t.factors {
                poly = &poly * &self.zexpr_affine(z, combo, &centers)?.to_mpoly();
            }
            out.push(SymTerm {
                coeff: &t.coeff * &weight,
                exponent,
                poly,
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
enum RawBound {
    Const(i64),
    Lin { var: usize, form: PreparedLinear },
}

#[derive(Clone, Debug)]
struct PieceCell {
    modulus: i64,
    residue: i64,
    first: Option<Affine>,
    last: Option<Affine>,
    unbounded_below_k: bool,
}

struct Shape {
    lower: Option<RawBound>,
    upper: Option<RawBound>,
    modulus: i64,
    residue: i64,
    is_k: bool,
}

fn shapes(combo: &[Choice]) -> Vec<Shape> {
    combo
        .iter()
        .map(|c| match c {
            Choice::Gamma(cell) => {
                let raw = |b: Option<Bound>| {
                    b.map(|b| match b {
                        Bound::Const(c) => RawBound::Const(c),
                        Bound::Lin { var, form } => RawBound::Lin { var, form },
                    })
                };
                Shape {
                    lower: raw(cell.lower),
                    upper: raw(cell.upper),
                    modulus: cell.modulus,
                    residue: cell.residue,
                    is_k: false,
                }
            }
            Choice::K(g) => Shape {
                lower: g.valuation.lower().map(RawBound::Const),
                upper: g.valuation.upper().map(RawBound::Const),
                modulus: g.valuation.modulus(),
                residue: g.valuation.residue(),
                is_k: true,
            },
        })
        .collect()
}

/// Index bound `floor((b - r)/L) + 1` (lower) or `ceil((b - r)/L) - 1`
/// (upper) as an affine form in the variable `b` depends on, valid on the
/// residue class that variable was split into.
fn index_bound(b: &RawBound, lower: bool, modulus: i64, residue: i64, classes: &[(i64, i64)]) -> Affine {
    match b {
        RawBound::Const(c) => {
            let idx = if lower {
                Integer::div_floor(&(c - residue), &modulus) + 1
            } else {
                ceil_div(c - residue, modulus) - 1
            };
            Affine::from_int(idx)
        }
        RawBound::Lin { var, form } => {
            let (_, r) = classes[*var];
            let at = (rat(form.eval(r).expect("class lies in the form's domain")) - rat(residue)) / rat(modulus);
            let slope = Rational::new(form.a.into(), (form.n * modulus).into());
            let idx = if lower { floor_rat(&at) + 1 } else { ceil_rat(&at) - 1 };
            &Affine::from_int(idx) + &Affine::term(*var, slope.clone()).add_constant(&(-slope * rat(r)))
        }
    }
}

/// Splits the product of cells into pieces on which every index bound is an
/// affine function and every parametric range is nonempty.
fn pieces(combo: &[Choice], names: &dyn Fn(usize) -> String) -> Result<Vec<Vec<PieceCell>>> {
    let shapes = shapes(combo);
    let n = shapes.len();
    // moduli after refinement, innermost first so dependents are final
    let mut moduli: Vec<i64> = shapes.iter().map(|s| s.modulus).collect();
    for j in (0..n).rev() {
        for b in [shapes[j].lower, shapes[j].upper].into_iter().flatten() {
            if let RawBound::Lin { var, form } = b {
                let own = GammaCell::new(None, None, shapes[var].modulus, shapes[var].residue)?;
                if !form.defined_on(&own) {
                    return Err(Error::domain(format!(
                        "bound {form} of {} is not defined on all of {} ≡ {} mod {}",
                        names(j),
                        names(var),
                        shapes[var].residue,
                        shapes[var].modulus
                    )));
                }
                moduli[var] = lcm(moduli[var], form.n * moduli[j]);
            }
        }
    }
    let splits: Vec<Vec<i64>> = (0..n)
        .map(|i| {
            (0..moduli[i] / shapes[i].modulus)
                .map(|t| shapes[i].residue + shapes[i].modulus * t)
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut digits = vec![0usize; n];
    loop {
        let classes: Vec<(i64, i64)> = (0..n).map(|i| (moduli[i], splits[i][digits[i]])).collect();
        if let Some(p) = piece(&shapes, &classes, names)? {
            out.push(p);
        }
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < splits[k].len() {
                break;
            }
            digits[k] = 0;
        }
    }
}

fn piece(shapes: &[Shape], classes: &[(i64, i64)], names: &dyn Fn(usize) -> String) -> Result<Option<Vec<PieceCell>>> {
    let n = shapes.len();
    let mut lower: Vec<Option<RawBound>> = shapes.iter().map(|s| s.lower).collect();
    let mut upper: Vec<Option<RawBound>> = shapes.iter().map(|s| s.upper).collect();
    let mut cells: Vec<Option<PieceCell>> = vec![None; n];
    for j in (0..n).rev() {
        let (modulus, residue) = classes[j];
        let first = lower[j].as_ref().map(|b| index_bound(b, true, modulus, residue, classes));
        let last = upper[j].as_ref().map(|b| index_bound(b, false, modulus, residue, classes));
        if let (Some(a), Some(b)) = (&first, &last) {
            let gap = b - a;
            let deps: Vec<(usize, Rational)> = gap.coeffs().map(|(i, c)| (i, c.clone())).collect();
            match deps.as_slice() {
                [] => {
                    if gap.constant_part() < &Rational::zero() {
                        return Ok(None);
                    }
                }
                [(i, slope)] => {
                    // keep the values of variable i for which the range is nonempty
                    let root = -gap.constant_part() / slope;
                    let (side, value) = if slope > &Rational::zero() {
                        (&mut lower[*i], ceil_rat(&root) - 1)
                    } else {
                        (&mut upper[*i], floor_rat(&root) + 1)
                    };
                    let is_lower = slope > &Rational::zero();
                    *side = match side {
                        None => Some(RawBound::Const(value)),
                        Some(RawBound::Const(c)) => Some(RawBound::Const(if is_lower {
                            (*c).max(value)
                        } else {
                            (*c).min(value)
                        })),
                        Some(RawBound::Lin { .. }) => {
                            return Err(Error::Unsupported(format!(
                                "range of {} is nonempty only on part of {}, whose bound is itself parametric",
                                names(j),
                                names(*i)
                            )))
                        }
                    };
                }
                _ => {
                    return Err(Error::Unsupported(format!(
                        "bounds of {} depend on two different variables",
                        names(j)
                    )))
                }
            }
        }
        cells[j] = Some(PieceCell {
            modulus,
            residue,
            first,
            last,
            unbounded_below_k: shapes[j].is_k && shapes[j].lower.is_none(),
        });
    }
    Ok(Some(cells.into_iter().map(|c| c.expect("filled")).collect()))
}

fn merge(terms: Vec<SymTerm>) -> Vec<SymTerm> {
    let mut index: HashMap<(Affine, MPoly), usize> = HashMap::new();
    let mut out: Vec<SymTerm> = Vec::new();
    for t in terms {
        if t.coeff.is_zero() || t.poly.is_zero() {
            continue;
        }
        match index.get(&(t.exponent.clone(), t.poly.clone())) {
            Some(&k) => out[k].coeff = &out[k].coeff + &t.coeff,
            None => {
                index.insert((t.exponent.clone(), t.poly.clone()), out.len());
                out.push(t);
            }
        }
    }
    out.retain(|t| !t.coeff.is_zero());
    out
}

fn sum_piece(mut terms: Vec<SymTerm>, cells: &[PieceCell], names: &dyn Fn(usize) -> String) -> Result<AqElem> {
    for j in (0..cells.len()).rev() {
        let cell = &cells[j];
        let sub = Affine::term(j, rat(cell.modulus)).add_constant(&rat(cell.residue));
        let sub_poly = sub.to_mpoly();
        let mut next = Vec::new();
        for t in terms {
            let exponent = t.exponent.substitute(j, &sub);
            let poly = t.poly.substitute(j, &sub_poly);
            let step = exponent.coeff(j);
            if !step.is_integer() {
                return Err(Error::domain(format!(
                    "exponent is not integral along {} ≡ {} mod {}",
                    names(j),
                    cell.residue,
                    cell.modulus
                )));
            }
            let step = i64::try_from(step.to_integer()).map_err(|_| Error::domain("exponent slope overflows"))?;
            let rest = exponent.without(j);
            let summed = range_sum(&poly, j, step, cell.first.as_ref(), cell.last.as_ref()).map_err(|e| match e {
                Error::DivergentSum(_) if cell.unbounded_below_k => Error::InfiniteMeasure,
                Error::DivergentSum(msg) => Error::DivergentSum(format!("summing over {}: {msg}", names(j))),
                other => other,
            })?;
            for s in summed {
                next.push(SymTerm {
                    coeff: &t.coeff * &s.coeff,
                    exponent: &rest + &s.exponent,
                    poly: s.poly,
                });
            }
        }
        terms = merge(next);
    }
    terms.iter().map(SymTerm::to_aq).sum()
}

/// Exact integral of `f` over `d` in `A_q`: Haar measure on K-variables,
/// counting measure on Γ-variables.
pub fn integrate(f: &ConstructibleExpr, d: &Domain) -> Result<AqElem> {
    let map = bind(f, d)?;
    let ctx = Context { f, map: &map, domain: d };
    let names = |i: usize| ctx.name(i);
    let options = choices(d);
    if options.iter().any(Vec::is_empty) {
        return Ok(AqElem::zero());
    }
    let mut total = AqElem::zero();
    let mut digits = vec![0usize; options.len()];
    loop {
        let combo: Vec<Choice> = digits.iter().enumerate().map(|(i, &k)| options[i][k].clone()).collect();
        let terms = ctx.integrand(&combo)?;
        for cells in pieces(&combo, &names)? {
            total = &total + &sum_piece(terms.clone(), &cells, &names)?;
        }
        let mut k = options.len();
        loop {
            if k == 0 {
                return Ok(total);
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < options[k].len() {
                break;
            }
            digits[k] = 0;
        }
    }
}

/// `|f| <= C·(1 + w)^d·q^(c·w)`: on an undecided residue class `B` at depth
/// `m`, the part of `B` where the undecided valuation equals `w >= m` has
/// measure at most `μ(B)·q^-(w-m)` and there `|f|` (with Γ-variables summed
/// out) is at most the bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrowthBound {
    pub constant: Rational,
    pub degree: u32,
    pub rate: i64,
}

impl GrowthBound {
    pub fn new(constant: Rational, degree: u32, rate: i64) -> Result<Self> {
        if constant.is_negative() || rate > 0 {
            return Err(Error::domain("growth bound needs C >= 0 and c <= 0"));
        }
        Ok(GrowthBound {
            constant,
            degree,
            rate,
        })
    }

    pub fn bounded(constant: Rational) -> Self {
        GrowthBound {
            constant,
            degree: 0,
            rate: 0,
        }
    }

    /// `Σ_{w>=m} q^-(w-m)·C(1+w)^d q^(c·w)` at `q = p`.
    fn tail(&self, prime: Prime, m: u32) -> Result<Rational> {
        let m = m as i64;
        // (1 + m + τ)^d for w = m + τ
        let mut coeffs = vec![Rational::one()];
        for _ in 0..self.degree {
            let mut next = vec![Rational::zero(); coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i] += c * rat(1 + m);
                next[i + 1] += c;
            }
            coeffs = next;
        }
        let cell = GammaCell::new(Some(-1), None, 1, 0)?;
        let s = weighted_sum(&cell, &coeffs, 1 - self.rate)?;
        Ok(&self.constant * s.eval(prime) * prime.rational_pow(self.rate * m))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleOptions {
    pub growth: GrowthBound,
    /// Re-enumerate undecided classes this many digits deeper.
    pub refine: Option<u32>,
    pub budget: u64,
}

impl OracleOptions {
    pub fn new(growth: GrowthBound) -> Self {
        OracleOptions {
            growth,
            refine: None,
            budget: crate::padic::DEFAULT_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleResult {
    pub value: Rational,
    pub tail_bound: Rational,
    /// Residue classes whose representative is a point where `f` is undefined.
    pub skipped: u64,
    /// Residue classes on which `f` or the domain was not constant.
    pub undecided: u64,
}

#[derive(Default)]
struct Tally {
    value: Rational,
    tail: Rational,
    skipped: u64,
    undecided: u64,
    work: u64,
}

impl Tally {
    fn add(mut self, o: Tally) -> Tally {
        self.value += o.value;
        self.tail += o.tail;
        self.skipped += o.skipped;
        self.undecided += o.undecided;
        self.work += o.work;
        self
    }
}

enum Membership {
    In,
    Out,
    Unknown,
}

struct Oracle<'a> {
    f: &'a ConstructibleExpr,
    prime: Prime,
    /// domain index of each K-variable
    k_vars: Vec<usize>,
    regions: Vec<Option<Vec<KCell>>>,
    gamma_points: Vec<Vec<i64>>,
    ord_atoms: Vec<MPoly>,
    to_expr: Vec<Option<usize>>,
    growth: &'a GrowthBound,
}

impl Oracle<'_> {
    fn membership(&self, slot: usize, x: &BigInt, depth: u32) -> Membership {
        let cells = match &self.regions[slot] {
            None => return Membership::In,
            Some(c) => c,
        };
        let x = Rational::from_integer(x.clone());
        let mut unknown = false;
        for c in cells.iter().filter(|c| !c.is_point()) {
            let d = &x - c.center();
            let v = c.valuation_cell();
            match ord_rational(&d, self.prime) {
                ExtendedInteger::Finite(o) if o < depth as i64 => {
                    if !v.contains(o) {
                        continue;
                    }
                    if o + c.ac_depth() as i64 <= depth as i64 {
                        if c.contains_value(&x) {
                            return Membership::In;
                        }
                    } else {
                        unknown = true;
                    }
                }
                _ => {
                    if v.first_member_from(depth as i64).is_some() {
                        unknown = true;
                    }
                }
            }
        }
        if unknown {
            Membership::Unknown
        } else {
            Membership::Out
        }
    }

    fn class(&self, x: &[BigInt], depth: u32, n_domain: usize) -> Result<Tally> {
        let mut t = Tally {
            work: 1,
            ..Tally::default()
        };
        let mut undecided = false;
        for (slot, xi) in x.iter().enumerate() {
            match self.membership(slot, xi, depth) {
                Membership::Out => return Ok(t),
                Membership::Unknown => undecided = true,
                Membership::In => {}
            }
        }
        let values: Vec<Rational> = x.iter().map(|v| Rational::from_integer(v.clone())).collect();
        let mut point = vec![Value::Gamma(0); self.f.vars.len()];
        let mut k_at = vec![None; n_domain];
        for (slot, &i) in self.k_vars.iter().enumerate() {
            k_at[i] = Some(values[slot].clone());
            if let Some(e) = self.to_expr[i] {
                point[e] = Value::K(values[slot].clone());
            }
        }
        for g in &self.ord_atoms {
            let mut args = vec![Rational::zero(); g.num_vars()];
            for i in g.vars() {
                if let Value::K(v) = &point[i] {
                    args[i] = v.clone();
                }
            }
            if ord_rational(&g.eval(&args), self.prime) >= ExtendedInteger::Finite(depth as i64) {
                undecided = true;
            }
        }
        let mu = self.prime.rational_pow(-(depth as i64) * x.len() as i64);
        let mut sum = Some(Rational::zero());
        for gammas in &self.gamma_points {
            let mut gi = 0;
            for (i, slot) in k_at.iter().enumerate() {
                if slot.is_none() {
                    if let Some(e) = self.to_expr[i] {
                        point[e] = Value::Gamma(gammas[gi]);
                    }
                    gi += 1;
                }
            }
            match eval_constructible(self.f, &point, self.prime) {
                Ok(v) => {
                    if let Some(s) = sum.as_mut() {
                        *s += v;
                    }
                }
                Err(Error::UndefinedAtPoint(_)) => {
                    sum = None;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        match &sum {
            Some(s) => t.value = &mu * s,
            None => t.skipped = 1,
        }
        if undecided {
            t.undecided = 1;
            t.tail = &mu * self.growth.tail(self.prime, depth)?;
            if let Some(s) = &sum {
                t.tail += &mu * s.abs();
            }
        } else if sum.is_none() {
            return Err(Error::domain("integrand undefined on a class where it should be constant"));
        }
        Ok(t)
    }
}

/// All tuples of Γ-values in the domain, outermost first.
fn gamma_tuples(d: &Domain, budget: u64) -> Result<Vec<Vec<i64>>> {
    let mut partial: Vec<(Vec<i64>, Vec<i64>)> = vec![(vec![0; d.vars.len()], Vec::new())];
    for (i, v) in d.vars.iter().enumerate() {
        let cells = match &v.region {
            Region::Gamma(cells) => cells,
            _ => continue,
        };
        let mut next = Vec::new();
        for (values, tuple) in &partial {
            for c in cells {
                let cell = c.instantiate(values)?;
                let (lo, hi) = match (cell.lower(), cell.upper()) {
                    (Some(a), Some(b)) => (a + 1, b - 1),
                    _ => {
                        return Err(Error::Unsupported(format!(
                            "the oracle needs bounded cells for {}",
                            v.name
                        )))
                    }
                };
                for g in cell.members_in(lo, hi) {
                    let mut vals = values.clone();
                    vals[i] = g;
                    let mut t = tuple.clone();
                    t.push(g);
                    next.push((vals, t));
                    if next.len() as u64 > budget {
                        return Err(Error::BudgetExceeded {
                            needed: format!("more than {budget} Γ-tuples"),
                            budget,
                        });
                    }
                }
            }
        }
        partial = next;
    }
    Ok(partial.into_iter().map(|(_, t)| t).collect())
}

/// Residue-enumeration estimate of `∫_d f` at depth `m`: the average of `f`
/// over lifts `0 <= x < p^m`, with a certified bound on the error coming from
/// classes where `f` or the domain is not constant.
pub fn brute_force_integrate(
    f: &ConstructibleExpr,
    d: &Domain,
    m: u32,
    prime: Prime,
    opts: &OracleOptions,
) -> Result<OracleResult> {
    if let Some(p) = d.prime {
        if p != prime {
            return Err(Error::domain(format!("domain cells live over {p}, not {prime}")));
        }
    }
    let map = bind(f, d)?;
    let mut to_expr = vec![None; d.vars.len()];
    for (e, &i) in map.iter().enumerate() {
        to_expr[i] = Some(e);
    }
    let mut k_vars = Vec::new();
    let mut regions = Vec::new();
    for (i, v) in d.vars.iter().enumerate() {
        match &v.region {
            Region::UnitBall => {
                k_vars.push(i);
                regions.push(None);
            }
            Region::KCells(cells) => {
                for c in cells.iter().filter(|c| !c.is_point()) {
                    let inside = ord_rational(c.center(), prime) >= ExtendedInteger::Finite(0)
                        && c.valuation_cell().lower().is_some_and(|a| a >= -1);
                    if !inside {
                        return Err(Error::Unsupported(format!(
                            "the oracle needs regions inside the unit ball; `{c}` is not"
                        )));
                    }
                }
                k_vars.push(i);
                regions.push(Some(cells.clone()));
            }
            Region::Gamma(_) => {}
        }
    }
    let n = k_vars.len();
    let classes = check_budget(prime, n, m, opts.budget)?;
    let gamma_points = gamma_tuples(d, opts.budget)?;
    let oracle = Oracle {
        f,
        prime,
        k_vars,
        regions,
        gamma_points,
        ord_atoms: f.ord_atoms().into_iter().cloned().collect(),
        to_expr,
        growth: &opts.growth,
    };
    let modulus = prime.checked_pow(m).expect("within budget");
    let refine = opts.refine.filter(|r| *r > 0);
    let run = |x: Vec<BigInt>| -> Result<Tally> {
        let t = oracle.class(&x, m, d.vars.len())?;
        let delta = match refine {
            Some(r) if t.undecided > 0 => r,
            _ => return Ok(t),
        };
        let base = prime.pow(m);
        let sub = prime.checked_pow(delta).ok_or_else(|| Error::BudgetExceeded {
            needed: format!("{prime}^{delta} refinements per class"),
            budget: opts.budget,
        })?;
        let mut total = Tally::default();
        let mut digits = vec![0u64; n];
        loop {
            let y: Vec<BigInt> = x.iter().zip(&digits).map(|(xi, s)| xi + &base * BigInt::from(*s)).collect();
            total = total.add(oracle.class(&y, m + delta, d.vars.len())?);
            if !crate::padic::advance(&mut digits, sub) {
                break;
            }
        }
        Ok(total)
    };
    let tally = if n == 0 {
        run(Vec::new())?
    } else {
        (0..modulus)
            .into_par_iter()
            .map(|x0| -> Result<Tally> {
                let mut acc = Tally::default();
                let mut rest = vec![0u64; n - 1];
                loop {
                    let x: Vec<BigInt> = std::iter::once(x0).chain(rest.iter().copied()).map(BigInt::from).collect();
                    acc = acc.add(run(x)?);
                    if !crate::padic::advance(&mut rest, modulus) {
                        break;
                    }
                }
                Ok(acc)
            })
            .try_reduce(Tally::default, |a, b| Ok(a.add(b)))?
    };
    if tally.work > opts.budget.max(classes) {
        return Err(Error::BudgetExceeded {
            needed: format!("{} residue classes after refinement", tally.work),
            budget: opts.budget,
        });
    }
    Ok(OracleResult {
        value: tally.value,
        tail_bound: tally.tail,
        skipped: tally.skipped,
        undecided: tally.undecided,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(n: u64) -> Prime {
        Prime::new(n).unwrap()
    }

    fn r(a: i64, b: i64) -> Rational {
        Rational::new(a.into(), b.into())
    }

    fn kx() -> Vec<VarDecl> {
        vec![VarDecl::new("x", Sort::K)]
    }

    fn ord_x() -> ZExpr {
        ZExpr::ord(MPoly::var(0)).unwrap()
    }

    fn unit_ball() -> Domain {
        Domain::new(vec![DomainVar {
            name: "x".into(),
            sort: Sort::K,
            region: Region::UnitBall,
        }])
        .unwrap()
    }

    fn abs_x() -> ConstructibleExpr {
        let t = Term {
            coeff: AqElem::one(),
            exponent: ord_x().scale(-1),
            factors: vec![],
        };
        ConstructibleExpr::from_terms(kx(), vec![t]).unwrap()
    }

    fn ord_x_expr() -> ConstructibleExpr {
        let t = Term {
            coeff: AqElem::one(),
            exponent: ZExpr::default(),
            factors: vec![ord_x()],
        };
        ConstructibleExpr::from_terms(kx(), vec![t]).unwrap()
    }

    fn one(vars: Vec<VarDecl>) -> ConstructibleExpr {
        ConstructibleExpr::from_terms(vars, vec![Term::constant(AqElem::one())]).unwrap()
    }

    fn geo(i: u32) -> AqElem {
        AqElem::inv_one_minus(i, 1)
    }

    #[test]
    fn evaluation_examples() {
        let t = Term {
            coeff: AqElem::one(),
            exponent: ord_x().scale(-1),
            factors: vec![ord_x()],
        };
        let f = ConstructibleExpr::from_terms(kx(), vec![t]).unwrap();
        assert_eq!(eval_constructible(&f, &[Value::K(r(4, 1))], p(2)).unwrap(), r(1, 2));
        assert_eq!(eval_constructible(&one(kx()), &[Value::K(r(7, 3))], p(5)).unwrap(), r(1, 1));
        let vars = vec![VarDecl::new("x", Sort::K), VarDecl::new("y", Sort::K)];
        let xy = &MPoly::var(0) * &MPoly::var(1);
        let t = Term {
            coeff: AqElem::one(),
            exponent: ZExpr::default(),
            factors: vec![ZExpr::ord(xy).unwrap()],
        };
        let f = ConstructibleExpr::from_terms(vars, vec![t]).unwrap();
        let v = eval_constructible(&f, &[Value::K(r(2, 1)), Value::K(r(6, 1))], p(2)).unwrap();
        assert_eq!(v, r(2, 1));
    }

    #[test]
    fn undefined_points() {
        let e = eval_constructible(&ord_x_expr(), &[Value::K(r(0, 1))], p(2));
        assert!(matches!(e, Err(Error::UndefinedAtPoint(_))));
        // a zero coefficient absorbs the infinity
        let zero = ord_x_expr().scale(&AqElem::zero());
        assert_eq!(eval_constructible(&zero, &[Value::K(r(0, 1))], p(2)).unwrap(), r(0, 1));
    }

    #[test]
    fn absolute_value_integral() {
        let v = integrate(&abs_x(), &unit_ball()).unwrap();
        let want = &(&AqElem::one() - &AqElem::q_pow(-1)) * &geo(2);
        assert_eq!(v, want);
        assert_eq!(v.eval(p(2)), r(2, 3));
        assert_eq!(v.eval(p(3)), r(3, 4));
    }

    #[test]
    fn valuation_integral() {
        let v = integrate(&ord_x_expr(), &unit_ball()).unwrap();
        assert_eq!(v, &AqElem::q_pow(-1) * &geo(1));
        assert_eq!(v.eval(p(2)), r(1, 1));
        assert_eq!(v.eval(p(3)), r(1, 2));
    }

    #[test]
    fn gamma_cell_sum() {
        let vars = vec![VarDecl::new("g", Sort::Gamma)];
        let t = Term {
            coeff: AqElem::one(),
            exponent: ZExpr::gamma(0).scale(-1),
            factors: vec![],
        };
        let f = ConstructibleExpr::from_terms(vars, vec![t]).unwrap();
        let d = Domain::new(vec![DomainVar {
            name: "g".into(),
            sort: Sort::Gamma,
            region: Region::Gamma(vec![ParamCell::new(Some(Bound::Const(1)), None, 1, 0).unwrap()]),
        }])
        .unwrap();
        assert_eq!(integrate(&f, &d).unwrap(), &AqElem::q_pow(-2) * &geo(1));
    }

    #[test]
    fn unit_ball_measure_is_one() {
        assert_eq!(integrate(&one(kx()), &unit_ball()).unwrap(), AqElem::one());
        let cells = crate::kcells::partition_unit_ball(2, 3, p(3)).unwrap();
        let d = Domain::new(vec![DomainVar {
            name: "x".into(),
            sort: Sort::K,
            region: Region::KCells(cells),
        }])
        .unwrap();
        assert_eq!(integrate(&one(kx()), &d).unwrap(), AqElem::one());
    }

    #[test]
    fn partial_residue_groups_stay_numeric() {
        let c = KCell::new(r(0, 1), Some(-1), None, 1, 0, 1, 1, p(5)).unwrap();
        let d = Domain::new(vec![DomainVar {
            name: "x".into(),
            sort: Sort::K,
            region: Region::KCells(vec![c.clone()]),
        }])
        .unwrap();
        let v = integrate(&one(kx()), &d).unwrap();
        assert_eq!(v.eval(p(5)), c.measure().unwrap().eval(p(5)));
        assert_eq!(v.eval(p(5)), r(1, 4));
    }

    #[test]
    fn rejects_non_fiber_reducible() {
        let g = &MPoly::var(0) - &MPoly::one();
        let t = Term {
            coeff: AqElem::one(),
            exponent: ZExpr::default(),
            factors: vec![ZExpr::ord(g).unwrap()],
        };
        let f = ConstructibleExpr::from_terms(kx(), vec![t]).unwrap();
        assert!(matches!(integrate(&f, &unit_ball()), Err(Error::NotFiberReducible(_))));
    }

    #[test]
    fn divergence_and_infinite_measure() {
        let vars = vec![VarDecl::new("g", Sort::Gamma)];
        let d = Domain::new(vec![DomainVar {
            name: "g".into(),
            sort: Sort::Gamma,
            region: Region::Gamma(vec![ParamCell::new(Some(Bound::Const(0)), None, 1, 0).unwrap()]),
        }])
        .unwrap();
        assert!(matches!(integrate(&one(vars), &d), Err(Error::DivergentSum(_))));
        let c = KCell::new(r(0, 1), None, Some(3), 1, 0, 1, 1, p(2)).unwrap();
        let d = Domain::new(vec![DomainVar {
            name: "x".into(),
            sort: Sort::K,
            region: Region::KCells(vec![c]),
        }])
        .unwrap();
        assert_eq!(integrate(&one(kx()), &d), Err(Error::InfiniteMeasure));
    }

    #[test]
    fn parametric_triangle() {
        // Σ_{0 < g1 < 6} Σ_{0 < g2 < g1} 1 = 0 + 1 + 2 + 3 + 4
        let vars = vec![VarDecl::new("g1", Sort::Gamma), VarDecl::new("g2", Sort::Gamma)];
        let lin = Bound::Lin {
            var: 0,
            form: PreparedLinear::identity(),
        };
        let d = Domain::new(vec![
            DomainVar {
                name: "g1".into(),
                sort: Sort::Gamma,
                region: Region::Gamma(vec![ParamCell::new(Some(Bound::Const(0)), Some(Bound::Const(6)), 1, 0).unwrap()]),
            },
            DomainVar {
                name: "g2".into(),
                sort: Sort::Gamma,
                region: Region::Gamma(vec![ParamCell::new(Some(Bound::Const(0)), Some(lin), 1, 0).unwrap()]),
            },
        ])
        .unwrap();
        assert_eq!(integrate(&one(vars.clone()), &d).unwrap(), AqElem::from_int(10));
        let value = brute_force_integrate(&one(vars), &d, 1, p(2), &OracleOptions::new(GrowthBound::bounded(r(1, 1))))
            .unwrap();
        assert_eq!(value.value, r(10, 1));
    }

    #[test]
    fn parametric_bound_with_congruences() {
        // Σ_{g1 ≥ 0} Σ_{g2 > (g1-1)/2 - 1, g2 even} q^(-g1-g2) over odd g1
        let vars = vec![VarDecl::new("g1", Sort::Gamma), VarDecl::new("g2", Sort::Gamma)];
        let form = PreparedLinear::new(1, 1, 2, -1).unwrap();
        let d = Domain::new(vec![
            DomainVar {
                name: "g1".into(),
                sort: Sort::Gamma,
                region: Region::Gamma(vec![ParamCell::new(Some(Bound::Const(-1)), None, 2, 1).unwrap()]),
            },
            DomainVar {
                name: "g2".into(),
                sort: Sort::Gamma,
                region: Region::Gamma(vec![ParamCell::new(Some(Bound::Lin { var: 0, form }), None, 2, 0).unwrap()]),
            },
        ])
        .unwrap();
        let t = Term {
            coeff: AqElem::one(),
            exponent: ZExpr::gamma(0).plus(&ZExpr::gamma(1)).scale(-1),
            factors: vec![],
        };
        let f = ConstructibleExpr::from_terms(vars, vec![t]).unwrap();
        let sym = integrate(&f, &d).unwrap();
        for q in [2i64, 3, 7] {
            let q = rat(q);
            let mut direct = Rational::zero();
            for g1 in (1..200).step_by(2) {
                let lo = (g1 - 1) / 2 - 1;
                for g2 in (lo + 1..lo + 200).filter(|g: &i64| g.rem_euclid(2) == 0) {
                    direct += crate::aqring::pow_rational(&q, -(g1 + g2));
                }
            }
            let diff = sym.eval_at(&q) - direct;
            assert!(diff.abs() < r(1, 1_000_000_000), "q = {q}");
        }
    }

    #[test]
    fn oracle_examples() {
        let opts = OracleOptions::new(GrowthBound::new(r(1, 1), 0, -1).unwrap());
        let res = brute_force_integrate(&abs_x(), &unit_ball(), 6, p(2), &opts).unwrap();
        assert!((&res.value - r(2, 3)).abs() <= r(1, 64));
        assert!((&res.value - r(2, 3)).abs() <= res.tail_bound);
        let bounded = OracleOptions::new(GrowthBound::bounded(r(1, 1)));
        for m in 1..5 {
            let res = brute_force_integrate(&one(kx()), &unit_ball(), m, p(3), &bounded).unwrap();
            assert_eq!(res.value, r(1, 1));
            assert_eq!(res.tail_bound, r(0, 1));
        }
        let linear = OracleOptions::new(GrowthBound::new(r(1, 1), 1, 0).unwrap());
        let res = brute_force_integrate(&ord_x_expr(), &unit_ball(), 8, p(2), &linear).unwrap();
        assert_eq!(res.skipped, 1);
        assert!((&res.value - r(1, 1)).abs() <= res.tail_bound);
    }

    #[test]
    fn refinement_tightens_the_tail() {
        let linear = OracleOptions::new(GrowthBound::new(r(1, 1), 1, 0).unwrap());
        let coarse = brute_force_integrate(&ord_x_expr(), &unit_ball(), 4, p(2), &linear).unwrap();
        let fine_opts = OracleOptions {
            refine: Some(3),
            ..linear
        };
        let fine = brute_force_integrate(&ord_x_expr(), &unit_ball(), 4, p(2), &fine_opts).unwrap();
        assert!(fine.tail_bound < coarse.tail_bound);
        assert!((&fine.value - r(1, 1)).abs() <= fine.tail_bound);
    }

    #[test]
    fn json_domain() {
        let v: Json = serde_json::from_str(
            r#"{"vars":[{"name":"g1","sort":"Gamma","region":[{"lower":0,"upper":6,"mod":1,"res":0}]},
                        {"name":"g2","sort":"Gamma","region":[{"lower":0,"upper":{"lin":[1,0,1,0],"var":"g1"},"mod":1,"res":0}]},
                        {"name":"x1","sort":"K","region":"unit_ball"}]}"#,
        )
        .unwrap();
        let d = Domain::from_json(&v).unwrap();
        assert_eq!(d.vars().len(), 3);
        assert!(matches!(d.vars()[1].region, Region::Gamma(ref c) if matches!(c[0].upper, Some(Bound::Lin { var: 0, .. }))));
    }

    #[test]
    fn overlapping_cells_are_rejected() {
        let a = ParamCell::new(Some(Bound::Const(0)), Some(Bound::Const(10)), 1, 0).unwrap();
        let b = ParamCell::new(Some(Bound::Const(5)), None, 2, 0).unwrap();
        let e = Domain::new(vec![DomainVar {
            name: "g".into(),
            sort: Sort::Gamma,
            region: Region::Gamma(vec![a, b]),
        }]);
        assert!(matches!(e, Err(Error::InvalidCell(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn gamma_domain(c1: (i64, i64, i64, i64), c2: (i64, i64, i64, i64), swap: bool) -> Domain {
            let mk = |name: &str, (lo, len, n, k): (i64, i64, i64, i64)| DomainVar {
                name: name.into(),
                sort: Sort::Gamma,
                region: Region::Gamma(vec![
                    ParamCell::new(Some(Bound::Const(lo)), Some(Bound::Const(lo + len)), n, k.rem_euclid(n)).unwrap(),
                ]),
            };
            let (a, b) = (mk("g1", c1), mk("g2", c2));
            Domain::new(if swap { vec![b, a] } else { vec![a, b] }).unwrap()
        }

        fn gamma_integrand(a: i64, b: i64, c: i64) -> ConstructibleExpr {
            let vars = vec![VarDecl::new("g1", Sort::Gamma), VarDecl::new("g2", Sort::Gamma)];
            let t1 = Term {
                coeff: AqElem::from_int(c),
                exponent: ZExpr::gamma(0).scale(-a).plus(&ZExpr::gamma(1).scale(-b)),
                factors: vec![ZExpr::gamma(1)],
            };
            let t2 = Term {
                coeff: AqElem::q_pow(-1),
                exponent: ZExpr::gamma(1).scale(a),
                factors: vec![ZExpr::gamma(0), ZExpr::gamma(0).plus(&ZExpr::constant(1))],
            };
            ConstructibleExpr::from_terms(vars, vec![t1, t2]).unwrap()
        }

        fn cell() -> impl Strategy<Value = (i64, i64, i64, i64)> {
            (-6i64..6, 0i64..12, 1i64..4, 0i64..4)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn fubini_swap(c1 in cell(), c2 in cell(), a in -2i64..3, b in -2i64..3, c in -3i64..4) {
                let f = gamma_integrand(a, b, c);
                let x = integrate(&f, &gamma_domain(c1, c2, false)).unwrap();
                let y = integrate(&f, &gamma_domain(c1, c2, true)).unwrap();
                prop_assert_eq!(x, y);
            }

            #[test]
            fn finite_sums_match_enumeration(c1 in cell(), c2 in cell(), a in -2i64..3, b in -2i64..3, c in -3i64..4) {
                let f = gamma_integrand(a, b, c);
                let d = gamma_domain(c1, c2, false);
                let sym = integrate(&f, &d).unwrap();
                let bounded = OracleOptions::new(GrowthBound::bounded(r(1, 1)));
                for q in [2u64, 3] {
                    let brute = brute_force_integrate(&f, &d, 1, p(q), &bounded).unwrap();
                    prop_assert_eq!(sym.eval(p(q)), brute.value);
                }
            }

            #[test]
            fn linearity(a in -3i64..4, b in -3i64..4, e in 1u32..3) {
                let ca = &AqElem::from_int(a) * &AqElem::q_pow(-1);
                let cb = AqElem::inv_one_minus(e, 1).scale(&rat(b));
                let f = abs_x();
                let g = ord_x_expr();
                let combo = f.scale(&ca).plus(&g.scale(&cb)).unwrap();
                let d = unit_ball();
                let lhs = integrate(&combo, &d).unwrap();
                let rhs = &(&ca * &integrate(&f, &d).unwrap()) + &(&cb * &integrate(&g, &d).unwrap());
                prop_assert_eq!(lhs, rhs);
            }

            #[test]
            fn domain_additivity(m in 1u32..3, n in 1i64..4, q in prop::sample::select(vec![2u64, 3])) {
                let f = ord_x_expr().times(&abs_x()).unwrap();
                let cells = crate::kcells::partition_unit_ball(m, n, p(q)).unwrap();
                let whole = Domain::new(vec![DomainVar { name: "x".into(), sort: Sort::K, region: Region::KCells(cells.clone()) }]).unwrap();
                let total = integrate(&f, &whole).unwrap();
                let mut parts = AqElem::zero();
                for c in cells {
                    let d = Domain::new(vec![DomainVar { name: "x".into(), sort: Sort::K, region: Region::KCells(vec![c]) }]).unwrap();
                    parts = &parts + &integrate(&f, &d).unwrap();
                }
                prop_assert_eq!(total.eval(p(q)), parts.eval(p(q)));
                prop_assert_eq!(total.eval(p(q)), integrate(&f, &unit_ball()).unwrap().eval(p(q)));
            }
        }
    }
}
