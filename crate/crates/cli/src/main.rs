//! `padic`: command-line front end for the padic-core engines.
//!
//! Exit status: 0 on success, 1 on a domain error (the error name is
//! printed first), 2 on a parse or usage error, 3 when the enumeration
//! budget is exceeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use padic_core::integrate::{brute_force_integrate, integrate, Domain, GrowthBound, OracleOptions};
use padic_core::kcells::{kcell_measure, kcells_disjoint, KCell};
use padic_core::padic::{ac_rational, ord_rational, parse_rational, DEFAULT_BUDGET};
use padic_core::parse::{parse_integrand, parse_polynomial};
use padic_core::poincare::{poincare_report, DEFAULT_GUARD};
use padic_core::presburger::{geom_sum, wellorder_min, GammaCell, GammaCellUnion};
use padic_core::validate::run_suite;
use padic_core::{AqElem, Error, Prime, Rational};
use serde_json::{json, Value as Json};

#[derive(Parser, Debug)]
#[command(name = "padic", version, about = "Exact p-adic measures, integrals and Poincaré series")]
struct Cli {
    /// The prime p.
    #[arg(long, global = true)]
    p: Option<u64>,
    /// Largest number of residues any enumeration may visit.
    /// PADIC_BUDGET, when set, takes precedence.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Oracle depth for `integrate`, digit count for `ac`.
    #[arg(long, global = true)]
    depth: Option<u32>,
    /// Trailing counts the Poincaré fit must predict rather than use.
    #[arg(long, global = true, default_value_t = DEFAULT_GUARD)]
    guard: usize,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// p-adic valuation of a rational number.
    Ord { x: String },
    /// Angular component modulo p^m (m defaults to --depth, then 1).
    Ac { x: String, m: Option<u32> },
    /// Measure of a K-cell, or of a disjoint list of K-cells, from a JSON file.
    Measure { cells: PathBuf },
    /// Σ q^(-Nτ) over a Γ-cell read from a JSON file.
    Gsum {
        cell: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: i64,
    },
    /// Least element of a union of Γ-cells in the well-order 0, 1, -1, 2, -2, ...
    Wmin { cells: PathBuf },
    /// Symbolic integral of a constructible function over a domain file.
    Integrate {
        integrand: String,
        domain: PathBuf,
        /// Also run the residue oracle at --depth (needs --p).
        #[arg(long)]
        oracle: bool,
        /// Re-enumerate undecided classes this many digits deeper.
        #[arg(long)]
        refine: Option<u32>,
        /// Growth bound `C,d,c` meaning |f| <= C(1+w)^d q^(c w); default `1,0,0`.
        #[arg(long, default_value = "1,0,0")]
        growth: String,
    },
    /// Counts N_m for m <= mmax, the fitted series and identity checks.
    Poincare {
        poly: String,
        #[arg(long)]
        mmax: u32,
        /// Human-readable report instead of JSON.
        #[arg(long)]
        text: bool,
    },
    /// Cross-validate every symbolic engine against enumeration.
    Check,
}

enum Failure {
    Core(Error),
    Usage(String),
    Io(String),
    Json(serde_json::Error),
    Mismatch,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

const ERROR_NAMES: [&str; 11] = [
    "NotPrime",
    "BudgetExceeded",
    "DivergentSum",
    "EmptySet",
    "DomainError",
    "InfiniteMeasure",
    "NotFiberReducible",
    "UndefinedAtPoint",
    "InvalidCell",
    "Unsupported",
    "ParseError",
];

impl Failure {
    fn report(&self) -> (u8, String) {
        match self {
            Failure::Core(e) => {
                let code = match e {
                    Error::Parse { .. } => 2,
                    Error::BudgetExceeded { .. } => 3,
                    _ => 1,
                };
                (code, e.to_string())
            }
            Failure::Usage(m) => (2, format!("ParseError: {m}")),
            Failure::Io(m) => (1, format!("IoError: {m}")),
            Failure::Json(e) => {
                use serde_json::error::Category;
                match e.classify() {
                    Category::Data => {
                        let msg = e.to_string();
                        if ERROR_NAMES.iter().any(|n| msg.starts_with(&format!("{n}:"))) {
                            (1, msg)
                        } else {
                            (1, format!("InvalidCell: {msg}"))
                        }
                    }
                    _ => (2, format!("ParseError at {}:{}: {e}", e.line(), e.column())),
                }
            }
            Failure::Mismatch => (1, "CheckFailed: at least one check disagreed".into()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn read_json(path: &Path) -> std::result::Result<Json, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(Failure::Json)
}

/// A single object or an array of them.
fn one_or_many<T: serde::de::DeserializeOwned>(v: Json) -> std::result::Result<Vec<T>, Failure> {
    let items = match v {
        Json::Array(a) => a,
        other => vec![other],
    };
    items
        .into_iter()
        .map(|i| serde_json::from_value(i).map_err(Failure::Json))
        .collect()
}

fn rational_arg(s: &str) -> std::result::Result<Rational, Failure> {
    parse_rational(s.trim()).ok_or_else(|| Failure::Usage(format!("`{s}` is not a rational number")))
}

struct Ctx {
    p: Option<u64>,
    budget: u64,
    depth: Option<u32>,
    guard: usize,
    json: bool,
}

impl Ctx {
    fn prime(&self) -> std::result::Result<Prime, Failure> {
        match self.p {
            Some(p) => Ok(Prime::new(p)?),
            None => Err(Failure::Usage("this command needs --p".into())),
        }
    }

    fn optional_prime(&self) -> std::result::Result<Option<Prime>, Failure> {
        self.p.map(Prime::new).transpose().map_err(Failure::from)
    }

    fn emit(&self, text: &str, json: Json) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&json).expect("serializable"));
        } else {
            println!("{text}");
        }
    }
}

fn cmd_ord(ctx: &Ctx, x: &str) -> Outcome {
    let p = ctx.prime()?;
    let v = ord_rational(&rational_arg(x)?, p);
    ctx.emit(&v.to_string(), json!({"x": x, "p": p.to_string(), "ord": v.to_string()}));
    Ok(())
}

fn cmd_ac(ctx: &Ctx, x: &str, m: Option<u32>) -> Outcome {
    let p = ctx.prime()?;
    let m = m.or(ctx.depth).unwrap_or(1);
    let r = ac_rational(&rational_arg(x)?, p, m);
    ctx.emit(
        &r.to_string(),
        json!({"x": x, "p": p.to_string(), "m": m.to_string(), "ac": r.to_string()}),
    );
    Ok(())
}

fn cmd_measure(ctx: &Ctx, path: &Path) -> Outcome {
    let cells: Vec<KCell> = one_or_many(read_json(path)?)?;
    let Some(first) = cells.first() else {
        return Err(Error::EmptySet.into());
    };
    let p = first.prime();
    if let Some(given) = ctx.optional_prime()? {
        if given != p {
            return Err(Error::DomainError(format!("--p {given} but the cells use p = {p}")).into());
        }
    }
    for (i, a) in cells.iter().enumerate() {
        if a.prime() != p {
            return Err(Error::DomainError("cells use different primes".into()).into());
        }
        if cells[i + 1..].iter().any(|b| !kcells_disjoint(a, b)) {
            return Err(Error::InvalidCell("cells overlap".into()).into());
        }
    }
    let mut total = AqElem::zero();
    for c in &cells {
        total = &total + &kcell_measure(c)?;
    }
    let value = total.eval(p);
    ctx.emit(
        &value.to_string(),
        json!({"p": p.to_string(), "measure": total.to_string(), "value": value.to_string()}),
    );
    Ok(())
}

fn cmd_gsum(ctx: &Ctx, path: &Path, n: i64) -> Outcome {
    let cell: GammaCell = serde_json::from_value(read_json(path)?).map_err(Failure::Json)?;
    let s = geom_sum(&cell, n)?;
    let value = ctx.optional_prime()?.map(|p| s.eval(p));
    let mut text = s.to_string();
    if let Some(v) = &value {
        text.push_str(&format!("\n{v}"));
    }
    ctx.emit(
        &text,
        json!({"sum": s.to_string(), "value": value.map(|v| v.to_string())}),
    );
    Ok(())
}

fn cmd_wmin(ctx: &Ctx, path: &Path) -> Outcome {
    let cells: Vec<GammaCell> = one_or_many(read_json(path)?)?;
    let g = wellorder_min(&GammaCellUnion::new(cells)?)?;
    ctx.emit(&g.to_string(), json!({"min": g.to_string()}));
    Ok(())
}

fn parse_growth(s: &str) -> std::result::Result<GrowthBound, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Failure::Usage(format!("growth bound `{s}` should look like `C,d,c`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let c = parse_rational(parts[0]).ok_or_else(bad)?;
    let d: u32 = parts[1].parse().map_err(|_| bad())?;
    let rate: i64 = parts[2].parse().map_err(|_| bad())?;
    Ok(GrowthBound::new(c, d, rate)?)
}

fn cmd_integrate(ctx: &Ctx, integrand: &str, path: &Path, oracle: bool, refine: Option<u32>, growth: &str) -> Outcome {
    let f = parse_integrand(integrand)?;
    let mut domain = Domain::from_json(&read_json(path)?)?;
    if let Some(p) = ctx.optional_prime()? {
        domain = domain.with_prime(p)?;
    }
    let sym = integrate(&f, &domain)?;
    let value = domain.prime().map(|p| sym.eval(p));
    let mut text = sym.to_string();
    if let Some(v) = &value {
        text.push_str(&format!("\n{v}"));
    }
    let mut out = json!({"integral": sym.to_string(), "value": value.map(|v| v.to_string())});
    if oracle {
        let p = domain.prime().map_or_else(|| ctx.prime(), Ok)?;
        let depth = ctx
            .depth
            .ok_or_else(|| Failure::Usage("--oracle needs --depth".into()))?;
        let opts = OracleOptions {
            refine,
            budget: ctx.budget,
            ..OracleOptions::new(parse_growth(growth)?)
        };
        let r = brute_force_integrate(&f, &domain, depth, p, &opts)?;
        text.push_str(&format!(
            "\noracle at depth {depth}: {} within {} ({} undecided, {} skipped)",
            r.value, r.tail_bound, r.undecided, r.skipped
        ));
        out["oracle"] = json!({
            "depth": depth.to_string(),
            "value": r.value.to_string(),
            "tail_bound": r.tail_bound.to_string(),
            "undecided": r.undecided.to_string(),
            "skipped": r.skipped.to_string(),
        });
    }
    ctx.emit(&text, out);
    Ok(())
}

fn cmd_poincare(ctx: &Ctx, poly: &str, mmax: u32, text: bool) -> Outcome {
    let f = parse_polynomial(poly)?;
    let rep = poincare_report(&f, ctx.prime()?, mmax, ctx.guard, ctx.budget)?;
    if text && !ctx.json {
        print!("{}", rep.render_text());
    } else {
        println!("{}", serde_json::to_string_pretty(&rep.to_json()).expect("serializable"));
    }
    Ok(())
}

fn cmd_check(ctx: &Ctx) -> Outcome {
    let lines = run_suite(ctx.budget)?;
    if ctx.json {
        let arr: Vec<Json> = lines
            .iter()
            .map(|l| json!({"name": l.name, "passed": l.passed, "detail": l.detail}))
            .collect();
        println!("{}", serde_json::to_string_pretty(&arr).expect("serializable"));
    } else {
        for l in &lines {
            println!("{l}");
        }
    }
    if lines.iter().all(|l| l.passed) {
        Ok(())
    } else {
        Err(Failure::Mismatch)
    }
}

fn budget_override(flag: u64) -> std::result::Result<u64, Failure> {
    match std::env::var("PADIC_BUDGET") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("PADIC_BUDGET=`{s}` is not a non-negative integer"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Outcome {
    let ctx = Ctx {
        p: cli.p,
        budget: budget_override(cli.budget)?,
        depth: cli.depth,
        guard: cli.guard,
        json: cli.json,
    };
    match &cli.cmd {
        Cmd::Ord { x } => cmd_ord(&ctx, x),
        Cmd::Ac { x, m } => cmd_ac(&ctx, x, *m),
        Cmd::Measure { cells } => cmd_measure(&ctx, cells),
        Cmd::Gsum { cell, n } => cmd_gsum(&ctx, cell, *n),
        Cmd::Wmin { cells } => cmd_wmin(&ctx, cells),
        Cmd::Integrate {
            integrand,
            domain,
            oracle,
            refine,
            growth,
        } => cmd_integrate(&ctx, integrand, domain, *oracle, *refine, growth),
        Cmd::Poincare { poly, mmax, text } => cmd_poincare(&ctx, poly, *mmax, *text),
        Cmd::Check => cmd_check(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = f.report();
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
