//! Text formats: terms, theory expressions, spaces, monoids, coalgebras and
//! algebras.
//!
//! All formats share one lexer. `#` and `//` start comments. Point, state
//! and variable names are identifiers (letters, digits, `_`, `'`, `.`, not
//! starting with a digit) or plain integers; `*` is accepted as a name so the
//! unit exception `raise(*)` can be written.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::bisim::{Coalgebra, Dynamics, Target};
use crate::ext::ExtValue;
use crate::modelcheck::FiniteAlgebra;
use crate::scalar::Scalar;
use crate::sigterm::{OpSym, Term, DEFAULT_NEXT};
use crate::spaces::{FinMetricSpace, BOTTOM};
use crate::theory::{FiniteMonoid, Monoid, TheoryExpr, RATIONALS, UNIT_EXC, UNIT_EXC_SPACE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    /// The text does not follow the grammar.
    #[error("line {line}, column {col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },
    /// The text parses but describes an invalid object (a non-metric, an
    /// unnormalized row, an unknown reference).
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

impl SyntaxError {
    pub fn line(&self) -> usize {
        match self {
            SyntaxError::Parse { line, .. } | SyntaxError::Invalid { line, .. } => *line,
        }
    }

    pub fn is_parse(&self) -> bool {
        matches!(self, SyntaxError::Parse { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(String),
    Arrow,
    Sym(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Num(s) => write!(f, "`{s}`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Sym(c) => write!(f, "`{c}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '.'
}

fn lex(text: &str) -> Result<Vec<Spanned>, SyntaxError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1, 1);
    while let Some(&c) = chars.peek() {
        let (l0, c0) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars);
            continue;
        }
        let rest: String = chars.clone().take(2).collect();
        if c == '#' || rest == "//" {
            while chars.peek().is_some_and(|&c| c != '\n') {
                bump(&mut chars);
            }
            continue;
        }
        let tok = if rest == "->" {
            bump(&mut chars);
            bump(&mut chars);
            Tok::Arrow
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                s.push(bump(&mut chars).unwrap());
            }
            Tok::Num(s)
        } else if c.is_alphabetic() || c == '_' {
            let mut s = String::new();
            while chars.peek().is_some_and(|&c| is_ident_char(c)) {
                s.push(bump(&mut chars).unwrap());
            }
            Tok::Ident(s)
        } else if "(){}[],;:=/*+-".contains(c) {
            bump(&mut chars);
            Tok::Sym(c)
        } else {
            return Err(SyntaxError::Parse {
                line: l0,
                col: c0,
                message: format!("unexpected character `{c}`"),
            });
        };
        out.push(Spanned {
            tok,
            line: l0,
            col: c0,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// Named spaces and monoids that other texts refer to. The unit exception
/// space `1`, the rationals `Q` and the cyclic groups `Z<n>` are built in.
#[derive(Debug, Clone)]
pub struct Env<S> {
    pub spaces: BTreeMap<String, FinMetricSpace<S>>,
    pub monoids: BTreeMap<String, FiniteMonoid<S>>,
}

impl<S: Scalar> Default for Env<S> {
    fn default() -> Self {
        Env {
            spaces: BTreeMap::new(),
            monoids: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> Env<S> {
    pub fn add_space(&mut self, space: FinMetricSpace<S>) {
        self.spaces.insert(space.name().to_string(), space);
    }

    pub fn add_monoid(&mut self, monoid: FiniteMonoid<S>) {
        self.monoids.insert(monoid.name().to_string(), monoid);
    }

    pub fn space(&self, name: &str) -> Option<FinMetricSpace<S>> {
        if let Some(s) = self.spaces.get(name) {
            return Some(s.clone());
        }
        (name == UNIT_EXC_SPACE).then(|| FinMetricSpace::singleton(UNIT_EXC_SPACE, UNIT_EXC))
    }

    pub fn monoid(&self, name: &str) -> Option<Monoid<S>> {
        if let Some(m) = self.monoids.get(name) {
            return Some(Monoid::Finite(Box::new(m.clone())));
        }
        if name == RATIONALS {
            return Some(Monoid::Rationals);
        }
        let n: usize = name.strip_prefix('Z')?.parse().ok()?;
        (n > 0 && n.to_string() == name[1..])
            .then(|| Monoid::Finite(Box::new(FiniteMonoid::cyclic(n))))
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn new(text: &str) -> PResult<Self> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        let s = &self.toks[self.pos];
        Err(SyntaxError::Parse {
            line: s.line,
            col: s.col,
            message: message.into(),
        })
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.error(format!("expected {wanted}, found {}", self.peek()))
    }

    fn at_sym(&self, c: char) -> bool {
        *self.peek() == Tok::Sym(c)
    }

    fn at_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.at_sym(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn sym(&mut self, c: char) -> PResult<()> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            self.unexpected(&format!("`{c}`"))
        }
    }

    fn arrow(&mut self) -> PResult<()> {
        if *self.peek() == Tok::Arrow {
            self.next();
            Ok(())
        } else {
            self.unexpected("`->`")
        }
    }

    fn word(&mut self, w: &str) -> PResult<()> {
        if self.at_word(w) {
            self.next();
            Ok(())
        } else {
            self.unexpected(&format!("`{w}`"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => self.unexpected("an identifier"),
        }
    }

    /// An identifier, an integer or `*`.
    fn name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Num(s) => {
                self.next();
                Ok(s)
            }
            Tok::Sym('*') => {
                self.next();
                Ok("*".into())
            }
            _ => self.unexpected("a name"),
        }
    }

    /// `-? INT (/ INT)?` as text.
    fn rational_text(&mut self) -> PResult<String> {
        let mut s = String::new();
        if self.eat_sym('-') {
            s.push('-');
        }
        match self.next() {
            Tok::Num(n) => s.push_str(&n),
            _ => {
                self.pos -= 1;
                return self.unexpected("a number");
            }
        }
        if self.eat_sym('/') {
            match self.next() {
                Tok::Num(n) => {
                    s.push('/');
                    s.push_str(&n);
                }
                _ => {
                    self.pos -= 1;
                    return self.unexpected("a denominator");
                }
            }
        }
        Ok(s)
    }

    fn rational<S: Scalar>(&mut self) -> PResult<S> {
        let (line, col) = (self.toks[self.pos].line, self.toks[self.pos].col);
        let text = self.rational_text()?;
        S::parse_rational(&text).ok_or(SyntaxError::Parse {
            line,
            col,
            message: format!("`{text}` is not a rational (zero denominator)"),
        })
    }

    fn ext<S: Scalar>(&mut self) -> PResult<ExtValue<S>> {
        if self.at_word("inf") {
            self.next();
            return Ok(ExtValue::Inf);
        }
        let line = self.line();
        let v = self.rational::<S>()?;
        ExtValue::new(v).map_err(|e| invalid(line, e))
    }

    /// A writer element: a rational or a name.
    fn elem_text(&mut self) -> PResult<String> {
        match self.peek() {
            Tok::Num(_) | Tok::Sym('-') => self.rational_text(),
            _ => self.name(),
        }
    }

    fn list<T>(&mut self, mut item: impl FnMut(&mut Self) -> PResult<T>) -> PResult<Vec<T>> {
        let mut out = vec![item(self)?];
        while self.eat_sym(',') {
            out.push(item(self)?);
        }
        Ok(out)
    }

    fn end(&self) -> PResult<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            self.unexpected("end of input")
        }
    }
}

fn invalid(line: usize, e: impl fmt::Display) -> SyntaxError {
    SyntaxError::Invalid {
        line,
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------- terms

/// Parses a term in the signature of `theory`. `next(t)` refers to the
/// theory's only contractive operator (or the one named `next`), and
/// `next[name](t)` to a named one; `wr` elements are read in the theory's
/// writer monoid. Arity and membership are checked afterwards by
/// [`crate::sigterm::well_formed`].
pub fn parse_term<S: Scalar>(text: &str, theory: &TheoryExpr<S>) -> Result<Term<S>, SyntaxError> {
    let mut p = Parser::new(text)?;
    let t = term(&mut p, theory)?;
    p.end()?;
    Ok(t)
}

fn term<S: Scalar>(p: &mut Parser, th: &TheoryExpr<S>) -> PResult<Term<S>> {
    let head = match p.peek().clone() {
        Tok::Ident(s) => s,
        _ => return p.unexpected("a term"),
    };
    let line = p.line();
    let app = *p.peek_at(1) == Tok::Sym('(') || (head == "next" && *p.peek_at(1) == Tok::Sym('['));
    if head == "empty" {
        p.next();
        return Ok(Term::empty());
    }
    if !app {
        p.next();
        return Ok(Term::var(head));
    }
    p.next();
    let t = match head.as_str() {
        "conv" => {
            p.sym('(')?;
            let e = p.rational::<S>()?;
            p.sym(',')?;
            let l = term(p, th)?;
            p.sym(',')?;
            let r = term(p, th)?;
            Term::conv(e, l, r)
        }
        "union" => {
            p.sym('(')?;
            let l = term(p, th)?;
            p.sym(',')?;
            let r = term(p, th)?;
            Term::union(l, r)
        }
        "raise" => {
            p.sym('(')?;
            Term::raise(p.name()?)
        }
        "rd" => {
            p.sym('(')?;
            Term::rd(p.list(|p| term(p, th))?)
        }
        "wr" => {
            p.sym('(')?;
            let text = p.elem_text()?;
            let m = th
                .writer()
                .ok_or_else(|| invalid(line, "`wr` needs a theory with a writer"))?;
            let a = m.parse_elem(&text).map_err(|e| invalid(line, e))?;
            p.sym(',')?;
            Term::wr(a, term(p, th)?)
        }
        "next" => {
            let name = if p.eat_sym('[') {
                let n = p.ident()?;
                p.sym(']')?;
                n
            } else {
                default_contract(th).map_err(|m| invalid(line, m))?
            };
            let factor = th.contract_factor(&name).cloned().ok_or_else(|| {
                invalid(
                    line,
                    format!("the theory has no contractive operator `{name}`"),
                )
            })?;
            p.sym('(')?;
            Term::next(name, factor, term(p, th)?)
        }
        other => return p.error(format!("unknown operation `{other}`")),
    };
    p.sym(')')?;
    Ok(t)
}

fn default_contract<S: Scalar>(th: &TheoryExpr<S>) -> Result<String, String> {
    let cs = th.contracts();
    if cs.iter().any(|(n, _)| n == DEFAULT_NEXT) {
        return Ok(DEFAULT_NEXT.into());
    }
    match cs.as_slice() {
        [(n, _)] => Ok(n.clone()),
        [] => Err("the theory has no contractive operator".into()),
        _ => Err("several contractive operators; write `next[name](..)`".into()),
    }
}

// --------------------------------------------------------------- theories

/// Parses a theory expression. Besides the atoms and `sum`/`tensor`, the
/// shorthands `mp(c)`, `lmp(c, a, ..)`, `mealy(c, MONOID, i, ..)` and
/// `mdp(c, a, ..)` build the composite theories of the four system kinds.
pub fn parse_theory<S: Scalar>(text: &str, env: &Env<S>) -> Result<TheoryExpr<S>, SyntaxError> {
    let mut p = Parser::new(text)?;
    let line = p.line();
    let th = theory(&mut p, env)?;
    p.end()?;
    th.validate().map_err(|e| invalid(line, e))?;
    Ok(th)
}

fn theory<S: Scalar>(p: &mut Parser, env: &Env<S>) -> PResult<TheoryExpr<S>> {
    let line = p.line();
    let head = p.ident()?;
    let braced = |p: &mut Parser, f: &mut dyn FnMut(&mut Parser) -> PResult<()>| -> PResult<()> {
        p.sym('{')?;
        f(p)?;
        p.sym('}')
    };
    Ok(match head.as_str() {
        "bary" => TheoryExpr::Bary,
        "semi" => TheoryExpr::Semi,
        "exc" => {
            let mut name = String::new();
            braced(p, &mut |p| {
                name = p.name()?;
                Ok(())
            })?;
            let space = env
                .space(&name)
                .ok_or_else(|| invalid(line, format!("unknown space `{name}`")))?;
            TheoryExpr::Exc(space)
        }
        "reader" => {
            let mut inputs = Vec::new();
            braced(p, &mut |p| {
                inputs = p.list(Parser::name)?;
                Ok(())
            })?;
            TheoryExpr::Reader(inputs)
        }
        "writer" => {
            let mut name = String::new();
            braced(p, &mut |p| {
                name = p.name()?;
                Ok(())
            })?;
            TheoryExpr::Writer(monoid_ref(env, &name, line)?)
        }
        "contr" => {
            p.sym('{')?;
            let name = p.ident()?;
            p.sym(',')?;
            let c = p.rational::<S>()?;
            p.sym('}')?;
            TheoryExpr::contract(name, c)
        }
        "sum" | "tensor" => {
            p.sym('(')?;
            let l = theory(p, env)?;
            p.sym(',')?;
            let r = theory(p, env)?;
            p.sym(')')?;
            if head == "sum" {
                TheoryExpr::sum(l, r)
            } else {
                TheoryExpr::tensor(l, r)
            }
        }
        "mp" | "lmp" | "mealy" | "mdp" => {
            p.sym('(')?;
            let c = p.rational::<S>()?;
            let th = match head.as_str() {
                "mp" => TheoryExpr::markov_process(c),
                "mealy" => {
                    p.sym(',')?;
                    let m = p.name()?;
                    let m = monoid_ref(env, &m, line)?;
                    p.sym(',')?;
                    TheoryExpr::mealy(p.list(Parser::name)?, m, c)
                }
                kind => {
                    p.sym(',')?;
                    let actions = p.list(Parser::name)?;
                    if kind == "lmp" {
                        TheoryExpr::labelled_markov_process(actions, c)
                    } else {
                        TheoryExpr::mdp(actions, c)
                    }
                }
            };
            p.sym(')')?;
            th
        }
        other => {
            p.pos -= 1;
            return p.error(format!("unknown theory `{other}`"));
        }
    })
}

fn monoid_ref<S: Scalar>(env: &Env<S>, name: &str, line: usize) -> PResult<Monoid<S>> {
    env.monoid(name)
        .ok_or_else(|| invalid(line, format!("unknown monoid `{name}`")))
}

// ----------------------------------------------------- spaces and monoids

/// Parses a sequence of `space` and `monoid` blocks into `env`, returning
/// the names defined, in order. Later blocks may refer to earlier ones.
///
/// ```text
/// space X { points: a, b, c; d(a,b) = 1/2; d(a,c) = inf; }
/// monoid M { carrier = X; unit = a; a * b = b; ... }
/// ```
///
/// Unlisted off-diagonal distances are infinite. A monoid lists its whole
/// multiplication table.
pub fn load_definitions<S: Scalar>(
    text: &str,
    env: &mut Env<S>,
) -> Result<Vec<String>, SyntaxError> {
    let mut p = Parser::new(text)?;
    let mut names = Vec::new();
    while *p.peek() != Tok::Eof {
        if p.at_word("space") {
            let s = space_block(&mut p)?;
            names.push(s.name().to_string());
            env.add_space(s);
        } else if p.at_word("monoid") {
            let m = monoid_block(&mut p, env)?;
            names.push(m.name().to_string());
            env.add_monoid(m);
        } else {
            return p.unexpected("`space` or `monoid`");
        }
    }
    Ok(names)
}

/// Parses exactly one `space` block.
pub fn parse_space<S: Scalar>(text: &str) -> Result<FinMetricSpace<S>, SyntaxError> {
    let mut p = Parser::new(text)?;
    let s = space_block(&mut p)?;
    p.end()?;
    Ok(s)
}

fn space_block<S: Scalar>(p: &mut Parser) -> PResult<FinMetricSpace<S>> {
    let line = p.line();
    p.word("space")?;
    let name = p.name()?;
    p.sym('{')?;
    p.word("points")?;
    p.sym(':')?;
    let points = p.list(Parser::name)?;
    p.sym(';')?;
    let mut pairs = Vec::new();
    while !p.at_sym('}') {
        p.word("d")?;
        p.sym('(')?;
        let a = p.name()?;
        p.sym(',')?;
        let b = p.name()?;
        p.sym(')')?;
        p.sym('=')?;
        let v = p.ext::<S>()?;
        p.sym(';')?;
        pairs.push((a, b, v));
    }
    p.sym('}')?;
    FinMetricSpace::from_pairs(name, points, &pairs).map_err(|e| invalid(line, e))
}

fn monoid_block<S: Scalar>(p: &mut Parser, env: &Env<S>) -> PResult<FiniteMonoid<S>> {
    let line = p.line();
    p.word("monoid")?;
    let name = p.name()?;
    p.sym('{')?;
    p.word("carrier")?;
    p.sym('=')?;
    let cname = p.name()?;
    let carrier = env
        .space(&cname)
        .ok_or_else(|| invalid(line, format!("unknown space `{cname}`")))?;
    p.sym(';')?;
    p.word("unit")?;
    p.sym('=')?;
    let unit = p.name()?;
    p.sym(';')?;
    let mut table: BTreeMap<(String, String), String> = BTreeMap::new();
    while !p.at_sym('}') {
        let l = p.line();
        let a = p.name()?;
        p.sym('*')?;
        let b = p.name()?;
        p.sym('=')?;
        let c = p.name()?;
        p.sym(';')?;
        if table.insert((a.clone(), b.clone()), c).is_some() {
            return Err(invalid(l, format!("{a} * {b} is given twice")));
        }
    }
    p.sym('}')?;
    FiniteMonoid::new(name, carrier, &unit, |a, b| {
        table.get(&(a.to_string(), b.to_string())).cloned()
    })
    .map_err(|e| invalid(line, e))
}

// ------------------------------------------------------------- coalgebras

/// Parses a coalgebra block:
///
/// ```text
/// mp NAME { c = 1/2; state u: 1/2 -> u, 1/2 -> bot; }
/// lmp NAME { c = 1/2; actions: a, b; state u: on a: 1 -> u; on b: 1 -> bot; }
/// mealy NAME { c = 1/2; inputs: i; monoid = Q; state p: on i -> (p, 1); }
/// mdp NAME { c = 1/2; actions: a; state s: on a: 1/2 -> (s, 1), 1/2 -> (s, 0); }
/// ```
///
/// `exits = X;` (after `c`) declares an exit space; `exit(x)` then targets
/// the terminal state labelled `x`.
pub fn parse_coalgebra<S: Scalar>(text: &str, env: &Env<S>) -> Result<Coalgebra<S>, SyntaxError> {
    let mut p = Parser::new(text)?;
    let c = coalgebra(&mut p, env)?;
    p.end()?;
    Ok(c)
}

enum RawTarget {
    Name(String, usize),
    Bot,
    Exit(String),
}

fn raw_target(p: &mut Parser) -> PResult<RawTarget> {
    let line = p.line();
    if p.at_word("exit") && *p.peek_at(1) == Tok::Sym('(') {
        p.next();
        p.next();
        let x = p.name()?;
        p.sym(')')?;
        return Ok(RawTarget::Exit(x));
    }
    let n = p.name()?;
    Ok(if n == BOTTOM {
        RawTarget::Bot
    } else {
        RawTarget::Name(n, line)
    })
}

fn coalgebra<S: Scalar>(p: &mut Parser, env: &Env<S>) -> PResult<Coalgebra<S>> {
    let line = p.line();
    let kind = p.ident()?;
    if !matches!(kind.as_str(), "mp" | "lmp" | "mealy" | "mdp") {
        p.pos -= 1;
        return p.unexpected("`mp`, `lmp`, `mealy` or `mdp`");
    }
    let name = p.name()?;
    p.sym('{')?;
    p.word("c")?;
    p.sym('=')?;
    let c = p.rational::<S>()?;
    p.sym(';')?;
    let mut exits = None;
    if p.at_word("exits") {
        let l = p.line();
        p.next();
        p.sym('=')?;
        let x = p.name()?;
        exits = Some(
            env.space(&x)
                .ok_or_else(|| invalid(l, format!("unknown space `{x}`")))?,
        );
        p.sym(';')?;
    }
    let mut labels = Vec::new();
    let mut monoid = None;
    match kind.as_str() {
        "lmp" | "mdp" => {
            p.word("actions")?;
            p.sym(':')?;
            labels = p.list(Parser::name)?;
            p.sym(';')?;
        }
        "mealy" => {
            p.word("inputs")?;
            p.sym(':')?;
            labels = p.list(Parser::name)?;
            p.sym(';')?;
            let l = p.line();
            p.word("monoid")?;
            p.sym('=')?;
            let m = p.name()?;
            monoid = Some(monoid_ref(env, &m, l)?);
            p.sym(';')?;
        }
        _ => {}
    }

    // Rows are read with raw state names, resolved once all states are known.
    type ProbRow<S> = Vec<(RawTarget, S)>;
    type RewardRow<S> = Vec<(RawTarget, S, S)>;
    enum Raw<S> {
        Prob(Vec<ProbRow<S>>),
        Mealy(Vec<(RawTarget, String, usize)>),
        Reward(Vec<RewardRow<S>>),
    }
    let mut states: Vec<String> = Vec::new();
    let mut raws: Vec<Raw<S>> = Vec::new();
    while p.at_word("state") {
        p.next();
        let sline = p.line();
        let s = p.name()?;
        if s == BOTTOM || states.contains(&s) {
            return Err(invalid(
                sline,
                format!("state `{s}` is reserved or declared twice"),
            ));
        }
        states.push(s);
        p.sym(':')?;
        let prob_row = |p: &mut Parser| -> PResult<ProbRow<S>> {
            if p.at_sym(';') {
                return Ok(Vec::new());
            }
            p.list(|p| {
                let w = p.rational::<S>()?;
                p.arrow()?;
                Ok((raw_target(p)?, w))
            })
        };
        let raw = match kind.as_str() {
            "mp" => {
                let row = prob_row(p)?;
                p.sym(';')?;
                Raw::Prob(vec![row])
            }
            "lmp" | "mdp" => {
                let mut prob = Vec::new();
                let mut reward = Vec::new();
                for a in &labels {
                    p.word("on")?;
                    p.word(a).or_else(|_| {
                        p.error(format!("expected `on {a}` (actions in declared order)"))
                    })?;
                    p.sym(':')?;
                    if kind == "lmp" {
                        prob.push(prob_row(p)?);
                    } else if p.at_sym(';') {
                        reward.push(Vec::new());
                    } else {
                        reward.push(p.list(|p| {
                            let w = p.rational::<S>()?;
                            p.arrow()?;
                            p.sym('(')?;
                            let t = raw_target(p)?;
                            p.sym(',')?;
                            let r = p.rational::<S>()?;
                            p.sym(')')?;
                            Ok((t, r, w))
                        })?);
                    }
                    p.sym(';')?;
                }
                if kind == "lmp" {
                    Raw::Prob(prob)
                } else {
                    Raw::Reward(reward)
                }
            }
            _ => {
                let mut row = Vec::new();
                for i in &labels {
                    p.word("on")?;
                    p.word(i).or_else(|_| {
                        p.error(format!("expected `on {i}` (inputs in declared order)"))
                    })?;
                    p.arrow()?;
                    p.sym('(')?;
                    let t = raw_target(p)?;
                    p.sym(',')?;
                    let l = p.line();
                    let out = p.elem_text()?;
                    p.sym(')')?;
                    p.sym(';')?;
                    row.push((t, out, l));
                }
                Raw::Mealy(row)
            }
        };
        raws.push(raw);
    }
    p.sym('}')?;

    let resolve = |t: RawTarget| -> PResult<Target> {
        Ok(match t {
            RawTarget::Bot => Target::Bot,
            RawTarget::Exit(x) => Target::Exit(x),
            RawTarget::Name(n, l) => Target::State(
                states
                    .iter()
                    .position(|s| *s == n)
                    .ok_or_else(|| invalid(l, format!("unknown state `{n}`")))?,
            ),
        })
    };
    let prob = |rows: Vec<ProbRow<S>>| -> PResult<Vec<Vec<(Target, S)>>> {
        rows.into_iter()
            .map(|r| r.into_iter().map(|(t, w)| Ok((resolve(t)?, w))).collect())
            .collect()
    };
    let dynamics = match kind.as_str() {
        "mp" => {
            let mut rows = Vec::new();
            for r in raws {
                let Raw::Prob(r) = r else { unreachable!() };
                rows.extend(prob(r)?);
            }
            Dynamics::Mp(rows)
        }
        "lmp" => {
            let mut rows = Vec::new();
            for r in raws {
                let Raw::Prob(r) = r else { unreachable!() };
                rows.push(prob(r)?);
            }
            Dynamics::Lmp {
                actions: labels,
                rows,
            }
        }
        "mdp" => {
            let mut rows = Vec::new();
            for r in raws {
                let Raw::Reward(r) = r else { unreachable!() };
                let per: PResult<Vec<_>> = r
                    .into_iter()
                    .map(|row| {
                        row.into_iter()
                            .map(|(t, rw, w)| Ok((resolve(t)?, rw, w)))
                            .collect()
                    })
                    .collect();
                rows.push(per?);
            }
            Dynamics::Mdp {
                actions: labels,
                rows,
            }
        }
        _ => {
            let monoid = monoid.expect("mealy declares a monoid");
            let mut rows = Vec::new();
            for r in raws {
                let Raw::Mealy(r) = r else { unreachable!() };
                let mut per = Vec::new();
                for (t, out, l) in r {
                    per.push((
                        resolve(t)?,
                        monoid.parse_elem(&out).map_err(|e| invalid(l, e))?,
                    ));
                }
                rows.push(per);
            }
            Dynamics::Mealy {
                inputs: labels,
                monoid,
                rows,
            }
        }
    };
    Coalgebra::new(name, c, states, exits, dynamics).map_err(|e| invalid(line, e))
}

// --------------------------------------------------------------- algebras

/// Parses an algebra block whose operations belong to `theory`:
///
/// ```text
/// algebra A {
///   carrier = X;
///   op union: (a, b) -> b, (a, a) -> a, ...;
///   op empty: () -> a;
///   op conv(1/2): (a, b) -> m, ...;
///   op next: (a) -> b, ...;
/// }
/// ```
///
/// `rd` takes its arity from the theory; `wr(..)` elements are read in the
/// theory's writer monoid; `next` and `next[name]` take their factor from
/// the theory. Entries not listed stay undefined.
pub fn parse_algebra<S: Scalar>(
    text: &str,
    env: &Env<S>,
    theory: &TheoryExpr<S>,
) -> Result<FiniteAlgebra<S>, SyntaxError> {
    let mut p = Parser::new(text)?;
    let line = p.line();
    p.word("algebra")?;
    let name = p.name()?;
    p.sym('{')?;
    p.word("carrier")?;
    p.sym('=')?;
    let cname = p.name()?;
    let carrier = env
        .space(&cname)
        .ok_or_else(|| invalid(line, format!("unknown space `{cname}`")))?;
    p.sym(';')?;
    let mut alg = FiniteAlgebra::new(name, carrier);
    while p.at_word("op") {
        p.next();
        let l = p.line();
        let op = op_head(&mut p, theory)?;
        alg.declare(op.clone());
        if p.eat_sym(':') {
            let entries = p.list(|p| {
                let l = p.line();
                p.sym('(')?;
                let args = if p.at_sym(')') {
                    Vec::new()
                } else {
                    p.list(Parser::name)?
                };
                p.sym(')')?;
                p.arrow()?;
                Ok((args, p.name()?, l))
            })?;
            for (args, r, el) in entries {
                let args: Vec<&str> = args.iter().map(String::as_str).collect();
                alg.define(&op, &args, &r).map_err(|e| invalid(el, e))?;
            }
        }
        p.sym(';').map_err(|e| match e {
            SyntaxError::Parse { line, col, message } => SyntaxError::Parse {
                line,
                col,
                message: format!("{message} after the table of `{op}` (line {l})"),
            },
            other => other,
        })?;
    }
    p.sym('}')?;
    p.end()?;
    Ok(alg)
}

fn op_head<S: Scalar>(p: &mut Parser, th: &TheoryExpr<S>) -> PResult<OpSym<S>> {
    let line = p.line();
    let head = p.ident()?;
    Ok(match head.as_str() {
        "conv" => {
            p.sym('(')?;
            let e = p.rational::<S>()?;
            p.sym(')')?;
            OpSym::ConvexComb(e)
        }
        "raise" => {
            p.sym('(')?;
            let l = p.name()?;
            p.sym(')')?;
            OpSym::Raise(l)
        }
        "union" => OpSym::Union,
        "empty" => OpSym::Empty,
        "rd" => {
            let n = th
                .reader()
                .ok_or_else(|| invalid(line, "`rd` needs a theory with a reader"))?
                .len();
            OpSym::Read(n)
        }
        "wr" => {
            p.sym('(')?;
            let text = p.elem_text()?;
            p.sym(')')?;
            let m = th
                .writer()
                .ok_or_else(|| invalid(line, "`wr` needs a theory with a writer"))?;
            OpSym::Write(m.parse_elem(&text).map_err(|e| invalid(line, e))?)
        }
        "next" => {
            let name = if p.eat_sym('[') {
                let n = p.ident()?;
                p.sym(']')?;
                n
            } else {
                default_contract(th).map_err(|m| invalid(line, m))?
            };
            let factor = th.contract_factor(&name).cloned().ok_or_else(|| {
                invalid(
                    line,
                    format!("the theory has no contractive operator `{name}`"),
                )
            })?;
            OpSym::Next { name, factor }
        }
        other => {
            p.pos -= 1;
            return p.error(format!("unknown operation `{other}`"));
        }
    })
}
