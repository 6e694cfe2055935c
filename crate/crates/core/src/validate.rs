//! The cross-validation suite behind `padic check`: every symbolic engine
//! against a brute-force counterpart on a fixed, deterministic corpus.

use std::fmt;

use num_traits::{Signed, Zero};

use crate::aqring::pow_rational;
use crate::error::Result;
use crate::integrate::{brute_force_integrate, integrate, Domain, DomainVar, GrowthBound, OracleOptions, Region, Sort};
use crate::kcells::{kcell_measure, kcells_disjoint, partition_unit_ball, KCell};
use crate::padic::{Prime, Rational};
use crate::parse::{parse_integrand, parse_polynomial};
use crate::poincare::{poincare_report, Fit, DEFAULT_GUARD};
use crate::presburger::{geom_sum, wellorder_cmp, wellorder_min, GammaCell, GammaCellUnion};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn line(name: &str, failures: Vec<String>, cases: usize) -> CheckLine {
    let passed = failures.is_empty();
    let detail = if passed {
        format!("{cases} cases")
    } else {
        format!("{} of {cases} cases failed, first: {}", failures.len(), failures[0])
    };
    CheckLine {
        name: name.into(),
        passed,
        detail,
    }
}

fn prime(p: u64) -> Prime {
    Prime::new(p).expect("prime")
}

fn rat(n: i64) -> Rational {
    Rational::from_integer(n.into())
}

fn geometric_sums() -> Result<CheckLine> {
    let mut failures = Vec::new();
    let mut cases = 0;
    for lower in -4..4i64 {
        for len in [1i64, 2, 5, 9, 14] {
            for n in 1..4i64 {
                for k in 0..n {
                    let c = GammaCell::new(Some(lower), Some(lower + len), n, k)?;
                    for big_n in 1..4i64 {
                        let sym = geom_sum(&c, big_n)?;
                        let first = c.first_index().expect("bounded");
                        for q in [2i64, 3, 5] {
                            cases += 1;
                            let q = rat(q);
                            let mut direct = Rational::zero();
                            for g in c.members_in(lower, lower + len) {
                                let tau = (g - k) / n;
                                direct += pow_rational(&q, -big_n * tau);
                            }
                            if sym.eval_at(&q) != direct || first > c.last_index().expect("bounded") + 1 {
                                failures.push(format!("{c}, N = {big_n}, q = {q}"));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(line("geometric sums vs enumeration", failures, cases))
}

fn unit_ball_partitions() -> Result<CheckLine> {
    let mut failures = Vec::new();
    let mut cases = 0;
    for p in [2, 3, 5] {
        for m in 1..=2 {
            for n in 1..=3 {
                cases += 1;
                let cells = partition_unit_ball(m, n, prime(p))?;
                let mut total = Rational::zero();
                for c in &cells {
                    total += kcell_measure(c)?.eval(prime(p));
                }
                let disjoint = cells
                    .iter()
                    .enumerate()
                    .all(|(i, a)| cells[i + 1..].iter().all(|b| kcells_disjoint(a, b)));
                if total != rat(1) || !disjoint {
                    failures.push(format!("p = {p}, M = {m}, N = {n}: total {total}"));
                }
            }
        }
    }
    Ok(line("unit ball partitions have measure 1", failures, cases))
}

fn translation_invariance() -> Result<CheckLine> {
    let mut failures = Vec::new();
    let mut cases = 0;
    for p in [2, 3] {
        let cell = KCell::new(rat(0), Some(0), Some(7), 2, 1, 2, 1, prime(p))?;
        let base = kcell_measure(&cell)?;
        for a in -6i64..6 {
            for b in [1i64, 2, 7, 9] {
                cases += 1;
                let moved = cell.with_center(Rational::new(a.into(), b.into()));
                if kcell_measure(&moved)? != base {
                    failures.push(format!("p = {p}, center {a}/{b}"));
                }
            }
        }
    }
    Ok(line("cell measures are translation invariant", failures, cases))
}

fn oracle_agreement(budget: u64) -> Result<CheckLine> {
    let corpus: [(&str, GrowthBound); 5] = [
        ("1", GrowthBound::bounded(rat(1))),
        ("q^(-ord(x1))", GrowthBound::new(rat(1), 0, -1)?),
        ("ord(x1)", GrowthBound::new(rat(1), 1, 0)?),
        ("ord(x1)*q^(-ord(x1))", GrowthBound::new(rat(1), 1, -1)?),
        ("q^(-2*ord(x1))", GrowthBound::new(rat(1), 0, -2)?),
    ];
    let domain = Domain::new(vec![DomainVar {
        name: "x1".into(),
        sort: Sort::K,
        region: Region::UnitBall,
    }])?;
    let mut failures = Vec::new();
    let mut cases = 0;
    for (text, growth) in corpus {
        let f = parse_integrand(text)?;
        let sym = integrate(&f, &domain)?;
        for p in [2, 3] {
            let opts = OracleOptions {
                budget,
                ..OracleOptions::new(growth.clone())
            };
            for depth in 4..=8 {
                cases += 1;
                let r = brute_force_integrate(&f, &domain, depth, prime(p), &opts)?;
                if (sym.eval(prime(p)) - &r.value).abs() > r.tail_bound {
                    failures.push(format!("{text} at p = {p}, depth {depth}"));
                }
            }
        }
    }
    Ok(line("integrals agree with the residue oracle", failures, cases))
}

fn well_order() -> Result<CheckLine> {
    let mut failures = Vec::new();
    let mut cases = 0;
    let bounds = [None, Some(-7), Some(-2), Some(0), Some(3), Some(8)];
    for lower in bounds {
        for upper in bounds {
            for n in 1..4 {
                for k in 0..n {
                    let c = GammaCell::new(lower, upper, n, k)?;
                    if c.is_empty() {
                        continue;
                    }
                    cases += 1;
                    let u = GammaCellUnion::new(vec![c])?;
                    let got = wellorder_min(&u)?;
                    let scan = (-50..=50).filter(|g| c.contains(*g)).min_by(|a, b| wellorder_cmp(*a, *b));
                    if scan != Some(got) {
                        failures.push(format!("{c}: got {got}, scan {scan:?}"));
                    }
                }
            }
        }
    }
    Ok(line("well-order minimum vs scan", failures, cases))
}

fn bounded_sum_example() -> Result<CheckLine> {
    let c = GammaCell::new(Some(0), Some(5), 2, 0)?;
    let got = geom_sum(&c, 2)?;
    let want = &crate::AqElem::q_pow(-2) + &crate::AqElem::q_pow(-4);
    let failures = if got == want {
        Vec::new()
    } else {
        vec![format!("got {got}")]
    };
    Ok(line("bounded sum over 0 < γ < 5, γ even", failures, 1))
}

fn poincare_series(budget: u64) -> Result<CheckLine> {
    let corpus = [
        ("x1", 10),
        ("x1^2", 10),
        ("x1^3", 11),
        ("x1*x2", 8),
        ("x1^2 + x2^2", 8),
        ("x1^2 - x2^2", 10),
    ];
    let mut failures = Vec::new();
    let mut cases = 0;
    for (text, mmax) in corpus {
        let f = parse_polynomial(text)?;
        for p in [2, 3] {
            cases += 1;
            let rep = poincare_report(&f, prime(p), mmax, DEFAULT_GUARD, budget)?;
            let reproduced = match &rep.fit {
                Fit::Rational(r) => r.reproduces(&rep.table.counts),
                Fit::Undetermined(_) => false,
            };
            if !reproduced || !rep.all_checks_hold() || !rep.table.lifting_bound_holds() {
                failures.push(format!("{text} at p = {p}"));
            }
        }
    }
    Ok(line("Poincaré series reproduce the counts", failures, cases))
}

/// Runs every check; the result is deterministic.
pub fn run_suite(budget: u64) -> Result<Vec<CheckLine>> {
    Ok(vec![
        geometric_sums()?,
        bounded_sum_example()?,
        unit_ball_partitions()?,
        translation_invariance()?,
        well_order()?,
        oracle_agreement(budget)?,
        poincare_series(budget)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_checks_pass() {
        for l in [
            geometric_sums().unwrap(),
            bounded_sum_example().unwrap(),
            unit_ball_partitions().unwrap(),
            translation_invariance().unwrap(),
            well_order().unwrap(),
        ] {
            assert!(l.passed, "{l}");
        }
    }
}
