//! Text front ends: integer polynomials in `x1..xn` and integrands built from
//! integers, `q^(...)`, `ord(poly)`, `lin(a,k,n,delta;gj)` and `gj`.

use num_bigint::BigInt;
use num_traits::ToPrimitive;

use crate::aqring::AqElem;
use crate::error::{Error, Result};
use crate::integrate::{ConstructibleExpr, Sort, Term, VarDecl, ZExpr};
use crate::mpoly::MPoly;
use crate::padic::Rational;
use crate::poincare::Polynomial;
use crate::presburger::PreparedLinear;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Int(BigInt),
    Ident(String),
    Sym(char),
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let (mut line, mut column) = (1, 1);
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (l, col) = (line, column);
        if c == '\n' {
            line += 1;
            column = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            column += 1;
            i += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            Tok::Int(s.parse().expect("digits"))
        } else if c.is_ascii_alphabetic() {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if "+-*^(),;".contains(c) {
            i += 1;
            Tok::Sym(c)
        } else {
            return Err(Error::Parse {
                line: l,
                column: col,
                message: format!("unexpected character {c:?}"),
            });
        };
        column += i - start;
        out.push(Token {
            tok,
            line: l,
            column: col,
        });
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column,
    });
    Ok(out)
}

struct Cursor {
    toks: Vec<Token>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error_at(t: &Token, message: impl Into<String>) -> Error {
        Error::Parse {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Cursor::error_at(self.peek(), message)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Sym(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    fn finish(&self) -> Result<()> {
        match &self.peek().tok {
            Tok::End => Ok(()),
            _ => Err(self.error("unexpected trailing input")),
        }
    }

    fn exponent(&mut self) -> Result<u32> {
        let t = self.next();
        match &t.tok {
            Tok::Int(n) => n.to_u32().ok_or_else(|| Cursor::error_at(&t, "exponent too large")),
            _ => Err(Cursor::error_at(&t, "expected a nonnegative integer exponent after '^'")),
        }
    }

    fn signed_int(&mut self) -> Result<i64> {
        let neg = self.eat('-');
        let t = self.next();
        match &t.tok {
            Tok::Int(n) => {
                let v = n.to_i64().ok_or_else(|| Cursor::error_at(&t, "integer too large"))?;
                Ok(if neg { -v } else { v })
            }
            _ => Err(Cursor::error_at(&t, "expected an integer")),
        }
    }
}

/// Index of a variable named `prefix<k>` with `k >= 1`.
fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

/// Polynomial grammar over variables resolved by `var`.
fn poly_expr(c: &mut Cursor, var: &dyn Fn(&Token) -> Result<usize>) -> Result<MPoly> {
    let mut acc = poly_term(c, var)?;
    loop {
        if c.eat('+') {
            acc = &acc + &poly_term(c, var)?;
        } else if c.eat('-') {
            acc = &acc - &poly_term(c, var)?;
        } else {
            return Ok(acc);
        }
    }
}

fn poly_term(c: &mut Cursor, var: &dyn Fn(&Token) -> Result<usize>) -> Result<MPoly> {
    let mut acc = poly_unary(c, var)?;
    while c.eat('*') {
        acc = &acc * &poly_unary(c, var)?;
    }
    Ok(acc)
}

fn poly_unary(c: &mut Cursor, var: &dyn Fn(&Token) -> Result<usize>) -> Result<MPoly> {
    if c.eat('-') {
        return Ok(-&poly_unary(c, var)?);
    }
    let base = poly_atom(c, var)?;
    if c.eat('^') {
        let e = c.exponent()?;
        return Ok(base.pow(e));
    }
    Ok(base)
}

fn poly_atom(c: &mut Cursor, var: &dyn Fn(&Token) -> Result<usize>) -> Result<MPoly> {
    let t = c.next();
    match &t.tok {
        Tok::Int(n) => Ok(MPoly::constant(Rational::from_integer(n.clone()))),
        Tok::Ident(_) => Ok(MPoly::var(var(&t)?)),
        Tok::Sym('(') => {
            let inner = poly_expr(c, var)?;
            c.expect(')')?;
            Ok(inner)
        }
        Tok::End => Err(Cursor::error_at(&t, "unexpected end of input")),
        Tok::Sym(s) => Err(Cursor::error_at(&t, format!("unexpected '{s}'"))),
    }
}

/// Parses `"x1^2 + x2^2"`-style text. The number of variables is the largest
/// index mentioned.
pub fn parse_polynomial(text: &str) -> Result<Polynomial> {
    let mut c = Cursor {
        toks: tokenize(text)?,
        pos: 0,
    };
    let var = |t: &Token| match &t.tok {
        Tok::Ident(name) => indexed(name, 'x')
            .map(|k| k - 1)
            .ok_or_else(|| Cursor::error_at(t, format!("unknown variable {name:?}; use x1, x2, ..."))),
        _ => unreachable!(),
    };
    let p = poly_expr(&mut c, &var)?;
    c.finish()?;
    Polynomial::from_mpoly(&p, 1)
}

/// Variables of an integrand: `x<k>` (K-sort) then `g<k>` (Γ-sort), each in
/// ascending index order.
fn integrand_vars(toks: &[Token]) -> Result<Vec<VarDecl>> {
    let mut ks = Vec::new();
    let mut gs = Vec::new();
    for t in toks {
        if let Tok::Ident(name) = &t.tok {
            if let Some(k) = indexed(name, 'x') {
                ks.push(k);
            } else if let Some(k) = indexed(name, 'g') {
                gs.push(k);
            } else if !matches!(name.as_str(), "q" | "ord" | "lin") {
                return Err(Cursor::error_at(t, format!("unknown name {name:?}")));
            }
        }
    }
    ks.sort_unstable();
    ks.dedup();
    gs.sort_unstable();
    gs.dedup();
    let mut out: Vec<VarDecl> = ks.into_iter().map(|k| VarDecl::new(format!("x{k}"), Sort::K)).collect();
    out.extend(gs.into_iter().map(|k| VarDecl::new(format!("g{k}"), Sort::Gamma)));
    Ok(out)
}

struct Integrand<'a> {
    c: Cursor,
    vars: &'a [VarDecl],
}

type Terms = Vec<Term>;

fn as_integer(c: &AqElem) -> Option<i64> {
    if c.denominator().next().is_some() {
        return None;
    }
    let mut terms = c.numerator().terms();
    match (terms.next(), terms.next()) {
        (None, _) => Some(0),
        (Some((0, v)), None) if v.is_integer() => v.to_integer().to_i64(),
        _ => None,
    }
}

fn mul_terms(a: &Terms, b: &Terms) -> Terms {
    let mut out = Vec::new();
    for s in a {
        for t in b {
            let mut factors = s.factors.clone();
            factors.extend(t.factors.iter().cloned());
            out.push(Term {
                coeff: &s.coeff * &t.coeff,
                exponent: s.exponent.plus(&t.exponent),
                factors,
            });
        }
    }
    out
}

fn scale_terms(a: &Terms, k: i64) -> Terms {
    a.iter()
        .map(|t| Term {
            coeff: t.coeff.scale(&Rational::from_integer(k.into())),
            ..t.clone()
        })
        .collect()
}

fn z_term(z: ZExpr) -> Terms {
    vec![Term {
        coeff: AqElem::one(),
        exponent: ZExpr::default(),
        factors: vec![z],
    }]
}

impl Integrand<'_> {
    fn index(&self, name: &str) -> usize {
        self.vars.iter().position(|v| v.name == name).expect("collected")
    }

    fn expr(&mut self) -> Result<Terms> {
        let mut acc = self.term()?;
        loop {
            if self.c.eat('+') {
                acc.extend(self.term()?);
            } else if self.c.eat('-') {
                acc.extend(scale_terms(&self.term()?, -1));
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Terms> {
        let mut acc = self.unary()?;
        while self.c.eat('*') {
            let rhs = self.unary()?;
            acc = mul_terms(&acc, &rhs);
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Terms> {
        if self.c.eat('-') {
            return Ok(scale_terms(&self.unary()?, -1));
        }
        self.atom()
    }

    /// An integer combination of Z-valued atoms, for exponents of `q`.
    fn linear(&mut self, terms: Terms, at: &Token) -> Result<ZExpr> {
        let mut z = ZExpr::default();
        for t in terms {
            let c = as_integer(&t.coeff)
                .ok_or_else(|| Cursor::error_at(at, "exponent of q must have integer coefficients"))?;
            if t.exponent != ZExpr::default() || t.factors.len() > 1 {
                return Err(Cursor::error_at(at, "exponent of q must be linear"));
            }
            match t.factors.first() {
                None => z = z.plus(&ZExpr::constant(c)),
                Some(f) => z = z.plus(&f.scale(c)),
            }
        }
        Ok(z)
    }

    fn atom(&mut self) -> Result<Terms> {
        let t = self.c.next();
        match &t.tok {
            Tok::Int(n) => {
                let v = n.to_i64().ok_or_else(|| Cursor::error_at(&t, "integer too large"))?;
                Ok(vec![Term::constant(AqElem::from_int(v))])
            }
            Tok::Sym('(') => {
                let inner = self.expr()?;
                self.c.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) if name == "q" => {
                self.c.expect('^')?;
                let at = self.c.peek().clone();
                let z = if self.c.eat('(') {
                    let inner = self.expr()?;
                    self.c.expect(')')?;
                    self.linear(inner, &at)?
                } else {
                    ZExpr::constant(self.c.signed_int()?)
                };
                Ok(vec![Term {
                    coeff: AqElem::one(),
                    exponent: z,
                    factors: Vec::new(),
                }])
            }
            Tok::Ident(name) if name == "ord" => {
                self.c.expect('(')?;
                let vars = self.vars;
                let resolve = |tok: &Token| match &tok.tok {
                    Tok::Ident(v) if indexed(v, 'x').is_some() => {
                        Ok(vars.iter().position(|d| &d.name == v).expect("collected"))
                    }
                    Tok::Ident(v) => Err(Cursor::error_at(tok, format!("{v:?} is not a K-variable"))),
                    _ => unreachable!(),
                };
                let g = poly_expr(&mut self.c, &resolve)?;
                self.c.expect(')')?;
                let z = ZExpr::ord(g).map_err(|e| Cursor::error_at(&t, e.to_string()))?;
                Ok(z_term(z))
            }
            Tok::Ident(name) if name == "lin" => {
                self.c.expect('(')?;
                let a = self.c.signed_int()?;
                self.c.expect(',')?;
                let k = self.c.signed_int()?;
                self.c.expect(',')?;
                let n = self.c.signed_int()?;
                self.c.expect(',')?;
                let delta = self.c.signed_int()?;
                self.c.expect(';')?;
                let v = self.c.next();
                let var = match &v.tok {
                    Tok::Ident(g) if indexed(g, 'g').is_some() => self.index(g),
                    _ => return Err(Cursor::error_at(&v, "expected a Γ-variable g1, g2, ...")),
                };
                self.c.expect(')')?;
                let form = PreparedLinear::new(a, k, n, delta).map_err(|e| Cursor::error_at(&t, e.to_string()))?;
                Ok(z_term(ZExpr::lin(var, form)))
            }
            Tok::Ident(name) if indexed(name, 'g').is_some() => Ok(z_term(ZExpr::gamma(self.index(name)))),
            Tok::Ident(name) if indexed(name, 'x').is_some() => {
                Err(Cursor::error_at(&t, format!("K-variable {name} may only appear inside ord(...)")))
            }
            Tok::Ident(name) => Err(Cursor::error_at(&t, format!("unknown name {name:?}"))),
            Tok::End => Err(Cursor::error_at(&t, "unexpected end of input")),
            Tok::Sym(s) => Err(Cursor::error_at(&t, format!("unexpected '{s}'"))),
        }
    }
}

/// Parses an integrand such as `"q^(-ord(x1))"` or `"ord(x1*x2)*q^(-g1)"`.
pub fn parse_integrand(text: &str) -> Result<ConstructibleExpr> {
    let toks = tokenize(text)?;
    let vars = integrand_vars(&toks)?;
    let mut p = Integrand {
        c: Cursor { toks, pos: 0 },
        vars: &vars,
    };
    let terms = p.expr()?;
    p.c.finish()?;
    let terms = terms.into_iter().filter(|t| !t.coeff.is_zero()).collect();
    ConstructibleExpr::from_terms(vars.clone(), terms)
}
