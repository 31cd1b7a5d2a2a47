//! `qeff`: distances between effectful terms, bisimilarity metrics and model
//! checking from the command line.
//!
//! Exit codes: 0 on success, 1 on domain errors (and failing models), 2 on
//! parse and usage errors.

mod render;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use qeffects::bisim::{solve_bisim, unfold_term};
use qeffects::modelcheck::{check_theory, Outcome};
use qeffects::semantics::{denote, term_dist};
use qeffects::sigterm::{well_formed, MonoidElem};
use qeffects::syntax::{
    load_definitions, parse_algebra, parse_coalgebra, parse_term, parse_theory, SyntaxError,
};
use qeffects::{Env, FinMetricSpace, Mode, ParamPool, Rational, Scalar, TheoryExpr};

use render::Render;

#[derive(Parser, Debug)]
#[command(name = "qeff", version, about = "Exact quantitative effects engine")]
struct Cli {
    /// Space or monoid definitions (file or inline text); repeatable.
    #[arg(long = "space", global = true, value_name = "FILE")]
    spaces: Vec<String>,
    /// Monoid definitions (file or inline text); repeatable.
    #[arg(long = "monoid", global = true, value_name = "FILE")]
    monoids: Vec<String>,
    /// Ground metric treatment; defaults to extended, or to the coalgebra
    /// kind's default for `bisim`.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Render numbers as decimals with this many places, rounding half away
    /// from zero, instead of exact fractions.
    #[arg(long, global = true, value_name = "PLACES")]
    decimal: Option<u32>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Distance between two terms.
    Dist {
        #[arg(long)]
        theory: String,
        /// Space whose points the variables denote; defaults to the first
        /// space loaded, or the discrete space on the variables.
        #[arg(long)]
        vars: Option<String>,
        left: String,
        right: String,
    },
    /// Canonical semantic value of a term.
    Normalize {
        #[arg(long)]
        theory: String,
        term: String,
    },
    /// Bisimilarity distances of a coalgebra file.
    Bisim {
        #[arg(long, default_value = "1/1000")]
        tol: String,
        coalgebra: String,
    },
    /// Coalgebra of a closed term with one contractive operator.
    Unfold {
        #[arg(long)]
        theory: String,
        /// Exit space for the term's variables.
        #[arg(long)]
        exits: Option<String>,
        #[arg(long, default_value = "term")]
        name: String,
        term: String,
    },
    /// Checks a finite algebra against a theory.
    CheckModel {
        #[arg(long)]
        theory: String,
        /// Convex weights, comma separated.
        #[arg(long, default_value = "0,1/2,1")]
        weights: String,
        /// Premise distances, comma separated.
        #[arg(long, default_value = "0,1/2,1")]
        eps: String,
        /// Writer elements, comma separated; defaults to every element of a
        /// finite monoid, or `0,1` for Q.
        #[arg(long)]
        alphas: Option<String>,
        algebra: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Extended,
    Bounded,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Extended => Mode::Extended,
            ModeArg::Bounded => Mode::Bounded,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

fn domain(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

/// An input given on the command line: a path if it names a file, inline
/// text otherwise.
struct Input {
    origin: String,
    text: String,
}

impl Input {
    fn load(arg: &str) -> Result<Input, Failure> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(|e| domain(format!("{arg}: {e}")))?;
            Ok(Input {
                origin: arg.to_string(),
                text,
            })
        } else {
            Ok(Input {
                origin: "<inline>".to_string(),
                text: arg.to_string(),
            })
        }
    }

    fn fail(&self, e: SyntaxError) -> Failure {
        Failure {
            code: if e.is_parse() { 2 } else { 1 },
            message: format!("{}: {e}", self.origin),
        }
    }

    fn domain(&self, e: impl std::fmt::Display) -> Failure {
        domain(format!("{}: {e}", self.origin))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((out, code)) => {
            println!("{out}");
            ExitCode::from(code)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(String, u8), Failure> {
    let mut env = Env::default();
    let mut loaded = Vec::new();
    for arg in cli.spaces.iter().chain(&cli.monoids) {
        let input = Input::load(arg)?;
        let names = load_definitions(&input.text, &mut env).map_err(|e| input.fail(e))?;
        loaded.extend(names.into_iter().filter(|n| env.spaces.contains_key(n)));
    }
    let r = Render {
        decimal: cli.decimal,
    };
    let theory = |arg: &str| -> Result<(Input, TheoryExpr), Failure> {
        let input = Input::load(arg)?;
        let th = parse_theory(input.text.trim(), &env).map_err(|e| input.fail(e))?;
        Ok((input, th))
    };
    let term = |arg: &str, th: &TheoryExpr| {
        let input = Input::load(arg)?;
        let t = parse_term(&input.text, th).map_err(|e| input.fail(e))?;
        well_formed(&t, th).map_err(|v| input.domain(format!("ill-formed term {v}")))?;
        Ok::<_, Failure>((input, t))
    };
    let json = cli.format == Format::Json;

    match &cli.verb {
        Verb::Dist {
            theory: th,
            vars,
            left,
            right,
        } => {
            let (_, th) = theory(th)?;
            let (li, l) = term(left, &th)?;
            let (ri, rt) = term(right, &th)?;
            let space = match vars.as_ref().or(loaded.first()) {
                Some(name) => env
                    .space(name)
                    .ok_or_else(|| domain(format!("unknown space `{name}`")))?,
                None => {
                    let mut names: Vec<String> = l.vars().union(&rt.vars()).cloned().collect();
                    if names.is_empty() {
                        names.push("_".into());
                    }
                    FinMetricSpace::discrete("vars", names).map_err(|e| domain(e.to_string()))?
                }
            };
            let mode: Mode = cli.mode.map(Into::into).unwrap_or_default();
            let d = term_dist(&l, &rt, &th, &space, mode)
                .map_err(|e| domain(format!("{} vs {}: {e}", li.origin, ri.origin)))?;
            Ok(if json {
                (
                    pretty(json!({
                        "verb": "dist",
                        "theory": th.to_string(),
                        "mode": mode.to_string(),
                        "left": l.to_string(),
                        "right": rt.to_string(),
                        "distance": r.ext(&d),
                    })),
                    0,
                )
            } else {
                (r.ext(&d), 0)
            })
        }
        Verb::Normalize {
            theory: th,
            term: t,
        } => {
            let (_, th) = theory(th)?;
            let (input, t) = term(t, &th)?;
            let v = denote(&t, &th).map_err(|e| input.domain(e))?;
            Ok(if json {
                (
                    pretty(json!({
                        "verb": "normalize",
                        "theory": th.to_string(),
                        "term": t.to_string(),
                        "value": v.to_string(),
                    })),
                    0,
                )
            } else {
                (v.to_string(), 0)
            })
        }
        Verb::Bisim { tol, coalgebra } => {
            let tol = Rational::parse_rational(tol)
                .filter(|t| t > &Rational::from_int(0))
                .ok_or_else(|| Failure {
                    code: 2,
                    message: format!("--tol: `{tol}` is not a positive rational"),
                })?;
            let input = Input::load(coalgebra)?;
            let coalg = parse_coalgebra(&input.text, &env).map_err(|e| input.fail(e))?;
            let mode = cli
                .mode
                .map(Into::into)
                .unwrap_or_else(|| coalg.default_mode());
            let (d, cert) = solve_bisim(&coalg, &tol, mode).map_err(|e| input.domain(e))?;
            let n = coalg.len();
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect();
            Ok(if json {
                let table: Vec<Value> = pairs
                    .iter()
                    .map(|&(i, j)| json!([coalg.states[i], coalg.states[j], r.ext(d.get(i, j))]))
                    .collect();
                (
                    pretty(json!({
                        "verb": "bisim",
                        "coalgebra": coalg.name,
                        "kind": coalg.kind_name(),
                        "c": r.num(&coalg.c),
                        "mode": mode.to_string(),
                        "tol": r.num(&tol),
                        "distances": table,
                        "certificate": {
                            "iterations": cert.iterations,
                            "apriori_bound": r.num(&cert.apriori_bound),
                            "residual": r.ext(&cert.residual),
                            "exact": cert.exact,
                            "infinite_pairs": cert.infinite_pairs,
                        },
                    })),
                    0,
                )
            } else {
                let mut out = format!(
                    "{} {} (c = {}, mode {}, tol {})\n",
                    coalg.kind_name(),
                    coalg.name,
                    r.num(&coalg.c),
                    mode,
                    r.num(&tol)
                );
                for &(i, j) in &pairs {
                    out += &format!(
                        "d({},{}) = {}\n",
                        coalg.states[i],
                        coalg.states[j],
                        r.ext(d.get(i, j))
                    );
                }
                out += &format!(
                    "certificate: {} iterations, error <= {}, residual {}, {}",
                    cert.iterations,
                    r.num(&cert.apriori_bound),
                    r.ext(&cert.residual),
                    if cert.exact {
                        "exact fixed point"
                    } else {
                        "approximate"
                    }
                );
                if cert.infinite_pairs > 0 {
                    out += &format!(", {} pairs at inf", cert.infinite_pairs);
                }
                (out, 0)
            })
        }
        Verb::Unfold {
            theory: th,
            exits,
            name,
            term: t,
        } => {
            let (_, th) = theory(th)?;
            let (input, t) = term(t, &th)?;
            let exits = match exits {
                Some(x) => Some(
                    env.space(x)
                        .ok_or_else(|| domain(format!("unknown space `{x}`")))?,
                ),
                None => None,
            };
            let (mut coalg, _) =
                unfold_term(&t, &th, exits.as_ref()).map_err(|e| input.domain(e))?;
            coalg.name = name.clone();
            let text = coalg.to_string();
            Ok(if json {
                (
                    pretty(json!({
                        "verb": "unfold",
                        "term": t.to_string(),
                        "states": coalg.states,
                        "coalgebra": text,
                    })),
                    0,
                )
            } else {
                (text.trim_end().to_string(), 0)
            })
        }
        Verb::CheckModel {
            theory: th,
            weights,
            eps,
            alphas,
            algebra,
        } => {
            let (_, th) = theory(th)?;
            let list = |flag: &str, text: &str| -> Result<Vec<Rational>, Failure> {
                text.split(',')
                    .map(|s| {
                        Rational::parse_rational(s).ok_or_else(|| Failure {
                            code: 2,
                            message: format!("--{flag}: `{}` is not a rational", s.trim()),
                        })
                    })
                    .collect()
            };
            let mut pool = ParamPool {
                weights: list("weights", weights)?,
                epsilons: list("eps", eps)?,
                alphas: Vec::new(),
            };
            if let Some(m) = th.writer() {
                pool.alphas = match alphas {
                    Some(text) => text
                        .split(',')
                        .map(|s| {
                            m.parse_elem(s)
                                .map_err(|e| domain(format!("--alphas: {e}")))
                        })
                        .collect::<Result<_, _>>()?,
                    None => m.elements().unwrap_or_else(|| {
                        vec![
                            MonoidElem::Num(Rational::from_int(0)),
                            MonoidElem::Num(Rational::from_int(1)),
                        ]
                    }),
                };
            }
            let input = Input::load(algebra)?;
            let alg = parse_algebra(&input.text, &env, &th).map_err(|e| input.fail(e))?;
            let report = check_theory(&alg, &th, &pool).map_err(|e| input.domain(e))?;
            let code = if report.passed() { 0 } else { 1 };
            Ok(if json {
                let entries: Vec<Value> = report
                    .entries
                    .iter()
                    .map(|e| {
                        let detail = match &e.outcome {
                            Outcome::Pass => Value::Null,
                            Outcome::Expands(w) => json!({
                                "left": w.left, "right": w.right,
                                "left_result": w.left_result, "right_result": w.right_result,
                                "distance": r.ext(&w.actual), "allowed": r.ext(&w.allowed),
                            }),
                            Outcome::Fails(w) => json!({
                                "assignment": w.assignment,
                                "lhs": w.lhs, "rhs": w.rhs,
                                "distance": r.ext(&w.actual), "bound": r.ext(&w.bound),
                            }),
                            Outcome::Missing(op) => json!({ "missing": op }),
                        };
                        json!({
                            "component": e.component,
                            "check": e.check.to_string(),
                            "pass": e.outcome.passed(),
                            "counterexample": detail,
                        })
                    })
                    .collect();
                (
                    pretty(json!({
                        "verb": "check-model",
                        "algebra": report.algebra,
                        "theory": report.theory,
                        "pass": report.passed(),
                        "entries": entries,
                    })),
                    code,
                )
            } else {
                (report.to_string(), code)
            })
        }
    }
}

fn pretty(v: Value) -> String {
    serde_json::to_string_pretty(&v).expect("json values serialize")
}
