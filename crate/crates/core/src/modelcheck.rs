//! Exhaustive model checking of finite quantitative algebras.
//!
//! An algebra interprets operation symbols by tables over a finite metric
//! carrier. Tables may be partial: fragments of infinite models (such as
//! distributions with bounded denominators) are not closed under every
//! operation, and an assignment that evaluates an undefined entry is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::ext::ExtValue;
use crate::scalar::Scalar;
use crate::sigterm::{MonoidElem, OpSym, Term};
use crate::spaces::{hausdorff, kantorovich, FinDist, FinMetricSpace, SpaceError};
use crate::theory::{
    tensor_commutations, AxiomInstance, FiniteMonoid, Monoid, ParamPool, TheoryError, TheoryExpr,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("operation `{0}` has no interpretation")]
    Uninterpreted(String),
    #[error("operation `{op}` takes {expected} arguments, got {got}")]
    Arity {
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("conflicting entries for `{op}` at ({args})")]
    Conflict { op: String, args: String },
    #[error("{0} assignments is too many to enumerate")]
    TooLarge(String),
    #[error("variable `{0}` is not assigned")]
    Unassigned(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

type Table = BTreeMap<Vec<usize>, usize>;

/// A finite carrier with (possibly partial) operation tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteAlgebra<S> {
    name: String,
    carrier: FinMetricSpace<S>,
    tables: BTreeMap<OpSym<S>, Table>,
}

impl<S: Scalar> FiniteAlgebra<S> {
    pub fn new(name: impl Into<String>, carrier: FinMetricSpace<S>) -> Self {
        FiniteAlgebra {
            name: name.into(),
            carrier,
            tables: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn carrier(&self) -> &FinMetricSpace<S> {
        &self.carrier
    }

    /// Interpreted symbols, in order.
    pub fn ops(&self) -> impl Iterator<Item = &OpSym<S>> {
        self.tables.keys()
    }

    pub fn interprets(&self, op: &OpSym<S>) -> bool {
        self.tables.contains_key(op)
    }

    /// Declares `op` with an empty table.
    pub fn declare(&mut self, op: OpSym<S>) {
        self.tables.entry(op).or_default();
    }

    /// Adds one table entry by point names. Re-adding the same entry is
    /// allowed; a different result is a conflict.
    pub fn define(&mut self, op: &OpSym<S>, args: &[&str], result: &str) -> Result<(), ModelError> {
        if args.len() != op.arity() {
            return Err(ModelError::Arity {
                op: op.to_string(),
                expected: op.arity(),
                got: args.len(),
            });
        }
        let key = args
            .iter()
            .map(|a| self.carrier.require(a))
            .collect::<Result<Vec<_>, _>>()?;
        let r = self.carrier.require(result)?;
        let table = self.tables.entry(op.clone()).or_default();
        match table.insert(key, r) {
            Some(prev) if prev != r => Err(ModelError::Conflict {
                op: op.to_string(),
                args: args.join(","),
            }),
            _ => Ok(()),
        }
    }

    /// Tabulates `f` over every argument tuple; `None` leaves the entry
    /// undefined, and a result outside the carrier is an error.
    pub fn define_fn<F>(&mut self, op: OpSym<S>, mut f: F) -> Result<(), ModelError>
    where
        F: FnMut(&[&str]) -> Option<String>,
    {
        let n = self.carrier.len();
        let k = op.arity();
        let total = checked_count(n, k)?;
        let mut table = Table::new();
        for code in 0..total {
            let args = digits(code, n, k);
            let names: Vec<&str> = args
                .iter()
                .map(|&i| self.carrier.points()[i].as_str())
                .collect();
            if let Some(r) = f(&names) {
                table.insert(args, self.carrier.require(&r)?);
            }
        }
        self.tables.insert(op, table);
        Ok(())
    }

    /// Overwrites one entry, returning the previous result.
    pub fn set_entry(&mut self, op: &OpSym<S>, args: Vec<usize>, result: usize) -> Option<usize> {
        self.tables
            .entry(op.clone())
            .or_default()
            .insert(args, result)
    }

    /// Every defined entry, in order.
    pub fn entries(&self) -> Vec<(OpSym<S>, Vec<usize>, usize)> {
        self.tables
            .iter()
            .flat_map(|(op, t)| t.iter().map(move |(a, r)| (op.clone(), a.clone(), *r)))
            .collect()
    }

    pub fn apply(&self, op: &OpSym<S>, args: &[usize]) -> Result<Option<usize>, ModelError> {
        let table = self
            .tables
            .get(op)
            .ok_or_else(|| ModelError::Uninterpreted(op.to_string()))?;
        Ok(table.get(args).copied())
    }

    /// Evaluates a term under an assignment of its variables; `None` when an
    /// undefined entry is reached.
    pub fn eval(
        &self,
        term: &Term<S>,
        env: &BTreeMap<String, usize>,
    ) -> Result<Option<usize>, ModelError> {
        match term {
            Term::Var(x) => env
                .get(x)
                .copied()
                .map(Some)
                .ok_or_else(|| ModelError::Unassigned(x.clone())),
            Term::App(op, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match self.eval(a, env)? {
                        Some(v) => vals.push(v),
                        None => return Ok(None),
                    }
                }
                self.apply(op, &vals)
            }
        }
    }

    fn point(&self, i: usize) -> &str {
        &self.carrier.points()[i]
    }

    fn require_ops<'a>(
        &self,
        terms: impl IntoIterator<Item = &'a Term<S>>,
    ) -> Result<(), ModelError> {
        fn walk<S: Scalar>(alg: &FiniteAlgebra<S>, t: &Term<S>) -> Result<(), ModelError> {
            if let Term::App(op, args) = t {
                if !alg.interprets(op) {
                    return Err(ModelError::Uninterpreted(op.to_string()));
                }
                args.iter().try_for_each(|a| walk(alg, a))?;
            }
            Ok(())
        }
        terms.into_iter().try_for_each(|t| walk(self, t))
    }
}

impl<S: Scalar> fmt::Display for FiniteAlgebra<S> {
    /// Renders in the algebra file format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "algebra {} {{", self.name)?;
        writeln!(f, "  carrier = {};", self.carrier.name())?;
        for (op, table) in &self.tables {
            let rows: Vec<String> = table
                .iter()
                .map(|(args, r)| {
                    let args: Vec<&str> = args.iter().map(|&i| self.point(i)).collect();
                    format!("({}) -> {}", args.join(", "), self.point(*r))
                })
                .collect();
            if rows.is_empty() {
                writeln!(f, "  op {op};")?;
            } else {
                writeln!(f, "  op {op}: {};", rows.join(", "))?;
            }
        }
        write!(f, "}}")
    }
}

fn checked_count(n: usize, k: usize) -> Result<usize, ModelError> {
    u32::try_from(k)
        .ok()
        .and_then(|k| n.checked_pow(k))
        .ok_or_else(|| ModelError::TooLarge(format!("{n}^{k}")))
}

/// Base-`n` digits of `code`, most significant first.
fn digits(mut code: usize, n: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    for slot in out.iter_mut().rev() {
        *slot = code % n;
        code /= n;
    }
    out
}

/// A violation of non-expansiveness (or of the contraction factor).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionWitness<S> {
    pub op: String,
    pub left: Vec<String>,
    pub right: Vec<String>,
    /// `max_i d(left_i, right_i)`, scaled by the contraction factor if any.
    pub allowed: ExtValue<S>,
    pub left_result: String,
    pub right_result: String,
    pub actual: ExtValue<S>,
}

impl<S: Scalar> fmt::Display for ExpansionWitness<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}) = {} and {}({}) = {} are at {} > {}",
            self.op,
            self.left.join(", "),
            self.left_result,
            self.op,
            self.right.join(", "),
            self.right_result,
            self.actual,
            self.allowed
        )
    }
}

/// An assignment under which an axiom instance fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquationWitness<S> {
    pub label: String,
    pub assignment: Vec<(String, String)>,
    /// Realized premise distances, in premise order.
    pub premises: Vec<ExtValue<S>>,
    pub lhs: String,
    pub rhs: String,
    pub actual: ExtValue<S>,
    pub bound: ExtValue<S>,
}

impl<S: Scalar> fmt::Display for EquationWitness<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let env: Vec<String> = self
            .assignment
            .iter()
            .map(|(x, p)| format!("{x}:={p}"))
            .collect();
        write!(
            f,
            "({}) under [{}]: {} vs {} at {} > {}",
            self.label,
            env.join(", "),
            self.lhs,
            self.rhs,
            self.actual,
            self.bound
        )
    }
}

/// Checks `d(f(a), f(b)) <= factor * max_i d(a_i, b_i)` over every pair of
/// defined argument tuples; `factor` is the contraction factor for `next`
/// operators and 1 otherwise. Returns the first violation in tuple order.
pub fn check_non_expansive<S: Scalar>(
    alg: &FiniteAlgebra<S>,
    op: &OpSym<S>,
) -> Result<Option<ExpansionWitness<S>>, ModelError> {
    let table = alg
        .tables
        .get(op)
        .ok_or_else(|| ModelError::Uninterpreted(op.to_string()))?;
    let factor = match op {
        OpSym::Next { factor, .. } => Some(factor.clone()),
        _ => None,
    };
    let rows: Vec<(&Vec<usize>, &usize)> = table.iter().collect();
    let d = |i: usize, j: usize| alg.carrier.d(i, j).clone();
    let witness = (0..rows.len() * rows.len())
        .into_par_iter()
        .find_map_first(|code| {
            let (a, ra) = rows[code / rows.len()];
            let (b, rb) = rows[code % rows.len()];
            let input = ExtValue::sup(a.iter().zip(b).map(|(&x, &y)| d(x, y)));
            let allowed = match &factor {
                Some(c) => input.scale(c).expect("factor is positive"),
                None => input,
            };
            let actual = d(*ra, *rb);
            (actual > allowed).then(|| ExpansionWitness {
                op: op.to_string(),
                left: a.iter().map(|&i| alg.point(i).to_string()).collect(),
                right: b.iter().map(|&i| alg.point(i).to_string()).collect(),
                allowed,
                left_result: alg.point(*ra).to_string(),
                right_result: alg.point(*rb).to_string(),
                actual,
            })
        });
    Ok(witness)
}

/// Checks an axiom instance under every assignment of its variables.
///
/// Besides the stated premise distances, the side condition is checked at
/// the distances the premises actually realize: an assignment whose premise
/// pairs sit at `r` must satisfy the conclusion within the bound the schema
/// gives for `r`. An instance whose bound is looser than its side condition
/// keeps that looseness as slack. Returns the first failing assignment in
/// lexicographic order.
pub fn check_equation<S: Scalar>(
    alg: &FiniteAlgebra<S>,
    ax: &AxiomInstance<S>,
) -> Result<Option<EquationWitness<S>>, ModelError> {
    alg.require_ops([&ax.lhs, &ax.rhs])?;
    let mut vars: BTreeSet<String> = ax.lhs.vars();
    vars.extend(ax.rhs.vars());
    for (x, y, _) in &ax.premises {
        vars.insert(x.clone());
        vars.insert(y.clone());
    }
    let vars: Vec<String> = vars.into_iter().collect();
    let n = alg.carrier.len();
    let total = checked_count(n, vars.len())?;
    let stated: Vec<ExtValue<S>> = ax
        .premises
        .iter()
        .map(|(_, _, e)| ExtValue::Fin(e.clone()))
        .collect();
    let slack = match (&ax.bound, ax.bound_for(&stated)) {
        (ExtValue::Fin(b), ExtValue::Fin(tight)) if *b >= tight => Some(b.clone() - tight),
        _ => None,
    };

    let outcome = (0..total).into_par_iter().find_map_first(|code| {
        let env: BTreeMap<String, usize> = vars
            .iter()
            .cloned()
            .zip(digits(code, n, vars.len()))
            .collect();
        let realized: Vec<ExtValue<S>> = ax
            .premises
            .iter()
            .map(|(x, y, _)| alg.carrier.d(env[x], env[y]).clone())
            .collect();
        let (l, r) = match (alg.eval(&ax.lhs, &env), alg.eval(&ax.rhs, &env)) {
            (Ok(Some(l)), Ok(Some(r))) => (l, r),
            (Err(e), _) | (_, Err(e)) => return Some(Err(e)),
            _ => return None,
        };
        let actual = alg.carrier.d(l, r).clone();
        let holds = realized.iter().zip(&stated).all(|(r, e)| r <= e);
        let mut bound = None;
        if holds && actual > ax.bound {
            bound = Some(ax.bound.clone());
        } else if let Some(slack) = &slack {
            let swept = ax.bound_for(&realized).add(&ExtValue::Fin(slack.clone()));
            if actual > swept {
                bound = Some(swept);
            }
        }
        bound.map(|bound| {
            Ok(EquationWitness {
                label: ax.label.clone(),
                assignment: vars
                    .iter()
                    .map(|x| (x.clone(), alg.point(env[x]).to_string()))
                    .collect(),
                premises: realized,
                lhs: alg.point(l).to_string(),
                rhs: alg.point(r).to_string(),
                actual,
                bound,
            })
        })
    });
    outcome.transpose()
}

/// What a report entry checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Check {
    NonExpansive(String),
    Equation(String),
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Check::NonExpansive(op) => write!(f, "non-expansive {op}"),
            Check::Equation(label) => write!(f, "({label})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome<S> {
    Pass,
    Expands(ExpansionWitness<S>),
    Fails(EquationWitness<S>),
    /// A symbol the check needs is not interpreted.
    Missing(String),
}

impl<S> Outcome<S> {
    pub fn passed(&self) -> bool {
        matches!(self, Outcome::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportEntry<S> {
    /// The sub-theory the check belongs to: an atom, or the tensor whose
    /// commutation law is checked.
    pub component: String,
    pub check: Check,
    pub outcome: Outcome<S>,
}

impl<S: Scalar> fmt::Display for ReportEntry<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: ", self.component, self.check)?;
        match &self.outcome {
            Outcome::Pass => write!(f, "pass"),
            Outcome::Expands(w) => write!(f, "FAIL {w}"),
            Outcome::Fails(w) => write!(f, "FAIL {w}"),
            Outcome::Missing(op) => write!(f, "FAIL `{op}` is not interpreted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report<S> {
    pub algebra: String,
    pub theory: String,
    pub entries: Vec<ReportEntry<S>>,
}

/// Why the continuity rule has no entries.
pub const CONT_NOTE: &str =
    "(Cont) is not checked: on a finite carrier every infimum of distances is attained";

impl<S: Scalar> Report<S> {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.outcome.passed())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportEntry<S>> {
        self.entries.iter().filter(|e| !e.outcome.passed())
    }
}

impl<S: Scalar> fmt::Display for Report<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let failed = self.failures().count();
        writeln!(
            f,
            "{} against {}: {} ({} checks, {} failed)",
            self.algebra,
            self.theory,
            if failed == 0 { "pass" } else { "FAIL" },
            self.entries.len(),
            failed
        )?;
        for e in &self.entries {
            writeln!(f, "  {e}")?;
        }
        write!(f, "  note: {CONT_NOTE}")
    }
}

/// Checks every generator for non-expansiveness and every axiom instance of
/// `theory` over `pool`. A sum contributes its summands' entries; a tensor
/// additionally contributes its commutation instances.
pub fn check_theory<S: Scalar>(
    alg: &FiniteAlgebra<S>,
    theory: &TheoryExpr<S>,
    pool: &ParamPool<S>,
) -> Result<Report<S>, ModelError> {
    theory.validate()?;
    let mut entries = Vec::new();
    collect(alg, theory, pool, &mut entries)?;
    Ok(Report {
        algebra: alg.name.clone(),
        theory: theory.to_string(),
        entries,
    })
}

fn collect<S: Scalar>(
    alg: &FiniteAlgebra<S>,
    th: &TheoryExpr<S>,
    pool: &ParamPool<S>,
    out: &mut Vec<ReportEntry<S>>,
) -> Result<(), ModelError> {
    let equations =
        |component: String, axioms: Vec<AxiomInstance<S>>, out: &mut Vec<ReportEntry<S>>| {
            for ax in axioms {
                let outcome = match check_equation(alg, &ax) {
                    Ok(None) => Outcome::Pass,
                    Ok(Some(w)) => Outcome::Fails(w),
                    Err(ModelError::Uninterpreted(op)) => Outcome::Missing(op),
                    Err(e) => return Err(e),
                };
                out.push(ReportEntry {
                    component: component.clone(),
                    check: Check::Equation(ax.label.clone()),
                    outcome,
                });
            }
            Ok(())
        };
    match th {
        TheoryExpr::Sum(l, r) => {
            collect(alg, l, pool, out)?;
            collect(alg, r, pool, out)
        }
        TheoryExpr::Tensor(l, r) => {
            collect(alg, l, pool, out)?;
            collect(alg, r, pool, out)?;
            equations(th.to_string(), tensor_commutations(l, r, pool)?, out)
        }
        atom => {
            let component = atom.to_string();
            for op in atom.generators(pool)? {
                let outcome = match check_non_expansive(alg, &op) {
                    Ok(None) => Outcome::Pass,
                    Ok(Some(w)) => Outcome::Expands(w),
                    Err(ModelError::Uninterpreted(op)) => Outcome::Missing(op),
                    Err(e) => return Err(e),
                };
                out.push(ReportEntry {
                    component: component.clone(),
                    check: Check::NonExpansive(op.to_string()),
                    outcome,
                });
            }
            equations(component, atom.axioms(pool)?, out)
        }
    }
}

/// Every symbol occurring in the generators or axioms of `theory` over
/// `pool`, e.g. the extra convex weights produced by (SA).
pub fn symbols_of<S: Scalar>(
    theory: &TheoryExpr<S>,
    pool: &ParamPool<S>,
) -> Result<BTreeSet<OpSym<S>>, ModelError> {
    fn walk<S: Scalar>(t: &Term<S>, out: &mut BTreeSet<OpSym<S>>) {
        if let Term::App(op, args) = t {
            out.insert(op.clone());
            args.iter().for_each(|a| walk(a, out));
        }
    }
    let mut out: BTreeSet<OpSym<S>> = theory.generators(pool)?.into_iter().collect();
    for ax in theory.axioms(pool)? {
        walk(&ax.lhs, &mut out);
        walk(&ax.rhs, &mut out);
    }
    Ok(out)
}

/// Finite subsets of `x` (including the empty set) with the Hausdorff
/// metric, union and the empty set. Subsets are named `{a,b}`.
pub fn powerset_model<S: Scalar>(x: &FinMetricSpace<S>) -> Result<FiniteAlgebra<S>, ModelError> {
    let n = x.len();
    let count = 1usize
        .checked_shl(n as u32)
        .filter(|_| n < usize::BITS as usize)
        .ok_or_else(|| ModelError::TooLarge(format!("2^{n}")))?;
    let members = |mask: usize| -> Vec<String> {
        (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| x.points()[i].clone())
            .collect()
    };
    let name = |mask: usize| format!("{{{}}}", members(mask).join(","));
    let names: Vec<String> = (0..count).map(name).collect();
    let mut table = Vec::with_capacity(count * count);
    for a in 0..count {
        for b in 0..count {
            table.push(hausdorff(x, &members(a), &members(b))?);
        }
    }
    let carrier = FinMetricSpace::new(format!("P({})", x.name()), names, |i, j| {
        table[i * count + j].clone()
    })?;
    let mut alg = FiniteAlgebra::new(format!("powerset({})", x.name()), carrier);
    let mut union = Table::new();
    for a in 0..count {
        for b in 0..count {
            union.insert(vec![a, b], a | b);
        }
    }
    alg.tables.insert(OpSym::Union, union);
    alg.tables
        .insert(OpSym::Empty, Table::from([(Vec::new(), 0)]));
    Ok(alg)
}

/// Probability distributions on `x` whose weights all have denominators at
/// most `max_denom`, with the Kantorovich metric. Each convex-combination
/// symbol in `ops` is interpreted by mixing, defined where the mixture stays
/// in the fragment. Points are named like `{a:1/2,b:1/2}`.
pub fn distribution_model<S: Scalar>(
    x: &FinMetricSpace<S>,
    max_denom: u32,
    ops: &BTreeSet<OpSym<S>>,
) -> Result<FiniteAlgebra<S>, ModelError> {
    let dists = bounded_distributions(x, max_denom);
    let names: Vec<String> = dists.iter().map(dist_name).collect();
    let index: BTreeMap<&FinDist<S>, usize> =
        dists.iter().enumerate().map(|(i, d)| (d, i)).collect();
    let k = dists.len();
    let mut table = Vec::with_capacity(k * k);
    for a in &dists {
        for b in &dists {
            table.push(kantorovich(x, a, b)?);
        }
    }
    let carrier = FinMetricSpace::new(format!("D{max_denom}({})", x.name()), names, |i, j| {
        table[i * k + j].clone()
    })?;
    let mut alg = FiniteAlgebra::new(format!("distributions({}, {max_denom})", x.name()), carrier);
    for op in ops {
        if let OpSym::ConvexComb(e) = op {
            let mut t = Table::new();
            for (i, a) in dists.iter().enumerate() {
                for (j, b) in dists.iter().enumerate() {
                    if let Some(&r) = index.get(&a.mix(e, b)) {
                        t.insert(vec![i, j], r);
                    }
                }
            }
            alg.tables.insert(op.clone(), t);
        }
    }
    Ok(alg)
}

fn dist_name<S: Scalar>(d: &FinDist<S>) -> String {
    let body: Vec<String> = d
        .weights()
        .iter()
        .map(|(p, w)| format!("{p}:{w}"))
        .collect();
    format!("{{{}}}", body.join(","))
}

fn bounded_distributions<S: Scalar>(x: &FinMetricSpace<S>, max_denom: u32) -> Vec<FinDist<S>> {
    let denom_ok =
        |w: &S| (1..=max_denom as i64).any(|d| (w.clone() * S::from_int(d)).is_integer_valued());
    // All weights are multiples of 1/lcm(1..=max_denom).
    let l = (1..=max_denom as i64).fold(1i64, num_integer::lcm);
    let pts = x.points();
    let mut out = Vec::new();
    let mut current: Vec<i64> = Vec::new();
    fn rec(remaining: i64, slots: usize, current: &mut Vec<i64>, emit: &mut dyn FnMut(&[i64])) {
        if slots == 1 {
            current.push(remaining);
            emit(current);
            current.pop();
            return;
        }
        for k in 0..=remaining {
            current.push(k);
            rec(remaining - k, slots - 1, current, emit);
            current.pop();
        }
    }
    rec(l, pts.len(), &mut current, &mut |ks| {
        let weights: Vec<(String, S)> = pts
            .iter()
            .zip(ks)
            .filter(|(_, &k)| k > 0)
            .map(|(p, &k)| (p.clone(), S::ratio(k, l)))
            .collect();
        if weights.iter().all(|(_, w)| denom_ok(w)) {
            out.push(FinDist::new(weights).expect("positive weights"));
        }
    });
    out.sort();
    out
}

/// Helper for integrality without a `to_integer` bound on the scalar.
trait IntegerValued {
    fn is_integer_valued(&self) -> bool;
}

impl<S: Scalar> IntegerValued for S {
    fn is_integer_valued(&self) -> bool {
        let r = self.clone() % S::one();
        r.is_zero()
    }
}

/// Functions `inputs -> x` with the supremum metric; `rd` picks the
/// diagonal: `rd(f_1, .., f_n)(i_k) = f_k(i_k)`.
pub fn reader_model<S: Scalar>(
    x: &FinMetricSpace<S>,
    inputs: &[String],
) -> Result<FiniteAlgebra<S>, ModelError> {
    let carrier = x.power(inputs)?;
    let mut alg = FiniteAlgebra::new(
        format!("reader({}, {})", x.name(), inputs.join(",")),
        carrier,
    );
    alg.tables.insert(
        OpSym::Read(inputs.len()),
        diagonal_table(x.len(), inputs.len()),
    );
    Ok(alg)
}

fn diagonal_table(n: usize, k: usize) -> Table {
    let total = n.pow(k as u32);
    let mut t = Table::new();
    for code in 0..total.pow(k as u32) {
        let args = digits(code, total, k);
        let mut out = 0;
        for (slot, &f) in args.iter().enumerate() {
            out = out * n + digits(f, n, k)[slot];
        }
        t.insert(args, out);
    }
    t
}

/// `Λ □ x` for a finite monoid `Λ`, with `wr(α)(β, y) = (α * β, y)` for
/// every element `α`. Points are named `(β,y)`.
pub fn writer_model<S: Scalar>(
    x: &FinMetricSpace<S>,
    monoid: &FiniteMonoid<S>,
) -> Result<FiniteAlgebra<S>, ModelError> {
    let lambda = monoid.carrier();
    let carrier = lambda.boxed(x);
    let n = x.len();
    let mut alg = FiniteAlgebra::new(format!("writer({}, {})", x.name(), monoid.name()), carrier);
    for alpha in lambda.points() {
        let mut t = Table::new();
        for (b, beta) in lambda.points().iter().enumerate() {
            let ab = monoid.mult_points(alpha, beta).expect("total table");
            let ab = lambda.require(ab)?;
            for y in 0..n {
                t.insert(vec![b * n + y], ab * n + y);
            }
        }
        alg.tables
            .insert(OpSym::Write(MonoidElem::Point(alpha.clone())), t);
    }
    Ok(alg)
}

/// The parameter pool matching [`writer_model`]: every monoid element.
pub fn writer_pool<S: Scalar>(monoid: &FiniteMonoid<S>, epsilons: Vec<S>) -> ParamPool<S> {
    ParamPool {
        weights: Vec::new(),
        epsilons,
        alphas: monoid
            .carrier()
            .points()
            .iter()
            .map(|p| MonoidElem::Point(p.clone()))
            .collect(),
    }
}

/// The theory [`writer_model`] is a model of.
pub fn writer_theory<S: Scalar>(monoid: &FiniteMonoid<S>) -> TheoryExpr<S> {
    TheoryExpr::Writer(Monoid::Finite(Box::new(monoid.clone())))
}

/// Lifts `alg` to functions `inputs -> A`: every operation acts pointwise
/// (defined where all components are), and `rd` picks the diagonal. If `alg`
/// models `T`, the lift models `tensor(T, reader{inputs})`.
pub fn lift_reader<S: Scalar>(
    alg: &FiniteAlgebra<S>,
    inputs: &[String],
) -> Result<FiniteAlgebra<S>, ModelError> {
    let carrier = alg.carrier.power(inputs)?;
    let n = alg.carrier.len();
    let k = inputs.len();
    let total = checked_count(n, k)?;
    let mut lifted = FiniteAlgebra::new(format!("{}^{}", alg.name, k), carrier);
    for (op, table) in &alg.tables {
        let m = op.arity();
        let mut t = Table::new();
        for code in 0..checked_count(total, m)? {
            let args = digits(code, total, m);
            let comps: Vec<Vec<usize>> = args.iter().map(|&f| digits(f, n, k)).collect();
            let mut out = 0;
            let mut defined = true;
            for slot in 0..k {
                let key: Vec<usize> = comps.iter().map(|c| c[slot]).collect();
                match table.get(&key) {
                    Some(&r) => out = out * n + r,
                    None => {
                        defined = false;
                        break;
                    }
                }
            }
            if defined {
                t.insert(args, out);
            }
        }
        lifted.tables.insert(op.clone(), t);
    }
    lifted.tables.insert(OpSym::Read(k), diagonal_table(n, k));
    Ok(lifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n.into(), d.into())
    }

    fn two_points(d: Q) -> FinMetricSpace<Q> {
        FinMetricSpace::new("X", vec!["a".into(), "b".into()], |i, j| {
            if i == j {
                ExtValue::zero()
            } else {
                ExtValue::Fin(d.clone())
            }
        })
        .unwrap()
    }

    #[test]
    fn identity_is_non_expansive() {
        let mut alg = FiniteAlgebra::new("id", two_points(q(1, 1)));
        let op = OpSym::Next {
            name: "id".into(),
            factor: q(1, 1),
        };
        alg.define_fn(op.clone(), |a| Some(a[0].to_string()))
            .unwrap();
        assert_eq!(check_non_expansive(&alg, &op).unwrap(), None);
    }

    #[test]
    fn identity_is_not_a_contraction() {
        let mut alg = FiniteAlgebra::new("id", two_points(q(1, 1)));
        let op = OpSym::Next {
            name: "next".into(),
            factor: q(1, 2),
        };
        alg.define_fn(op.clone(), |a| Some(a[0].to_string()))
            .unwrap();
        let w = check_non_expansive(&alg, &op).unwrap().expect("violation");
        assert_eq!(w.allowed, ExtValue::ratio(1, 2));
        assert_eq!(w.actual, ExtValue::one());
        assert_eq!(
            (w.left, w.right),
            (vec!["a".to_string()], vec!["b".to_string()])
        );
    }

    #[test]
    fn powerset_union_models_semilattice() {
        let alg = powerset_model(&two_points(q(1, 1))).unwrap();
        assert_eq!(alg.carrier().len(), 4);
        assert_eq!(check_non_expansive(&alg, &OpSym::Union).unwrap(), None);
        let pool = ParamPool {
            epsilons: vec![q(0, 1), q(1, 2), q(1, 1)],
            ..ParamPool::default()
        };
        let report = check_theory(&alg, &TheoryExpr::Semi, &pool).unwrap();
        assert!(report.passed(), "{report}");
    }

    fn bary_pool() -> ParamPool<Q> {
        ParamPool {
            weights: vec![q(0, 1), q(1, 2), q(1, 1)],
            epsilons: vec![q(0, 1), q(1, 2), q(1, 1)],
            alphas: Vec::new(),
        }
    }

    #[test]
    fn b2_holds_on_half_integer_distributions() {
        let pool = bary_pool();
        let ops = symbols_of(&TheoryExpr::Bary, &pool).unwrap();
        let alg = distribution_model(&two_points(q(1, 1)), 2, &ops).unwrap();
        assert_eq!(alg.carrier().len(), 3);
        let b2 = TheoryExpr::Bary
            .axioms(&pool)
            .unwrap()
            .into_iter()
            .find(|a| a.label == "B2[1/2]")
            .unwrap();
        assert_eq!(check_equation(&alg, &b2).unwrap(), None);
        let report = check_theory(&alg, &TheoryExpr::Bary, &pool).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn writer_model_passes_diff() {
        let z3 = FiniteMonoid::cyclic(3);
        let alg = writer_model(&two_points(q(1, 2)), &z3).unwrap();
        let th = writer_theory(&z3);
        let pool = writer_pool(&z3, vec![q(0, 1), q(1, 2)]);
        let axioms = th.axioms(&pool).unwrap();
        assert!(axioms.iter().any(|a| a.label == "Diff[1,2;1/2]"));
        for ax in &axioms {
            assert_eq!(check_equation(&alg, ax).unwrap(), None, "{ax}");
        }
    }

    #[test]
    fn broken_writer_fails_mult() {
        let z7 = FiniteMonoid::cyclic(7);
        let mut alg = writer_model(&two_points(q(1, 1)), &z7).unwrap();
        // wr(2) sends (3,a) to (6,a) instead of (5,a).
        let wr2 = OpSym::Write(MonoidElem::Point("2".into()));
        let at = |p: &str| alg.carrier().index_of(p).unwrap();
        let (from, to) = (at("(3,a)"), at("(6,a)"));
        alg.set_entry(&wr2, vec![from], to);
        let pool = writer_pool(&z7, vec![q(0, 1)]);
        let mult = writer_theory(&z7)
            .axioms(&pool)
            .unwrap()
            .into_iter()
            .find(|a| a.label == "Mult[2,3]")
            .unwrap();
        let w = check_equation(&alg, &mult)
            .unwrap()
            .expect("counterexample");
        assert_eq!(w.assignment, vec![("x".to_string(), "(0,a)".to_string())]);
        assert_eq!((w.lhs.as_str(), w.rhs.as_str()), ("(6,a)", "(5,a)"));
    }

    #[test]
    fn reader_model_passes_idem_and_diag() {
        let inputs = vec!["i1".to_string(), "i2".to_string()];
        let alg = reader_model(&two_points(q(1, 1)), &inputs).unwrap();
        let report =
            check_theory(&alg, &TheoryExpr::Reader(inputs), &ParamPool::default()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.entries.len(), 3);
    }

    #[test]
    fn lifted_model_commutes() {
        let pool = bary_pool();
        let inputs = vec!["i1".to_string(), "i2".to_string()];
        let th = TheoryExpr::tensor(TheoryExpr::Bary, TheoryExpr::Reader(inputs.clone()));
        let ops = symbols_of(&th, &pool).unwrap();
        let base = distribution_model(&two_points(q(1, 1)), 2, &ops).unwrap();
        let lifted = lift_reader(&base, &inputs).unwrap();
        let report = check_theory(&lifted, &th, &pool).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report
            .entries
            .iter()
            .any(|e| e.check == Check::Equation("Com[conv(1/2)/rd]".into())));
    }

    #[test]
    fn sum_report_is_union_of_components() {
        let pool = bary_pool();
        let x = two_points(q(1, 1));
        let mut alg = powerset_model(&x).unwrap();
        // Two exceptions at distance 1/2 raised as {a} and {b}, which are
        // at distance 1: the exception component fails.
        let e = two_points(q(1, 2)).renamed("E");
        alg.define(&OpSym::Raise("a".into()), &[], "{a}").unwrap();
        alg.define(&OpSym::Raise("b".into()), &[], "{b}").unwrap();
        let exc = TheoryExpr::Exc(e);
        let th = TheoryExpr::sum(TheoryExpr::Semi, exc.clone());
        let whole = check_theory(&alg, &th, &pool).unwrap();
        let mut parts = check_theory(&alg, &TheoryExpr::Semi, &pool)
            .unwrap()
            .entries;
        let raise = check_theory(&alg, &exc, &pool).unwrap();
        parts.extend(raise.entries.iter().cloned());
        assert_eq!(whole.entries, parts);
        assert_eq!(raise.failures().count(), 1);
        assert!(whole.failures().all(|f| f.component == "exc{E}"));
    }

    #[test]
    fn broken_mealy_commutation_names_the_pair() {
        let z2 = FiniteMonoid::<Q>::cyclic(2);
        let th = TheoryExpr::mealy(
            vec!["i".into()],
            Monoid::Finite(Box::new(z2.clone())),
            q(1, 2),
        );
        let pool = writer_pool(&z2, vec![q(1, 1)]);
        let carrier = FinMetricSpace::discrete("S", vec!["p".into(), "q".into()]).unwrap();
        let mut alg = FiniteAlgebra::new("mm", carrier);
        alg.define_fn(OpSym::Read(1), |a| Some(a[0].to_string()))
            .unwrap();
        alg.define_fn(OpSym::Write(MonoidElem::Point("0".into())), |a| {
            Some(a[0].to_string())
        })
        .unwrap();
        alg.define_fn(OpSym::Write(MonoidElem::Point("1".into())), |a| {
            Some(a[0].to_string())
        })
        .unwrap();
        alg.define_fn(
            OpSym::Next {
                name: "next".into(),
                factor: q(1, 2),
            },
            |_| Some("p".into()),
        )
        .unwrap();
        assert!(check_theory(&alg, &th, &pool).unwrap().passed());
        // rd now swaps, so it no longer commutes with wr(1) sending q to p.
        alg.define_fn(OpSym::Read(1), |a| {
            Some(if a[0] == "p" { "q" } else { "p" }.into())
        })
        .unwrap();
        alg.define_fn(OpSym::Write(MonoidElem::Point("1".into())), |_| {
            Some("p".into())
        })
        .unwrap();
        let report = check_theory(&alg, &th, &pool).unwrap();
        let labels: Vec<String> = report.failures().map(|e| e.check.to_string()).collect();
        assert!(
            labels.contains(&"(Com[rd/wr(1)])".to_string()),
            "{labels:?}"
        );
    }

    #[test]
    fn missing_interpretation_is_reported() {
        let alg = FiniteAlgebra::new("bare", two_points(q(1, 1)));
        let report = check_theory(&alg, &TheoryExpr::Semi, &ParamPool::default()).unwrap();
        assert!(!report.passed());
        assert!(report
            .entries
            .iter()
            .all(|e| matches!(e.outcome, Outcome::Missing(_))));
    }

    #[test]
    fn equation_check_is_monotone_in_bound() {
        let x = two_points(q(1, 1));
        let mut alg = FiniteAlgebra::new("proj", x);
        alg.define_fn(OpSym::Union, |a| Some(a[0].to_string()))
            .unwrap();
        let mut ax = TheoryExpr::<Q>::Semi
            .axioms(&ParamPool::default())
            .unwrap()
            .into_iter()
            .find(|a| a.label == "S2")
            .unwrap();
        assert!(check_equation(&alg, &ax).unwrap().is_some());
        ax.bound = ExtValue::one();
        assert!(check_equation(&alg, &ax).unwrap().is_none());
    }
}
