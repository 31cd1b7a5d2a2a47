//! Denotations of terms in the concrete description of a free monad, and
//! the distance between them.
//!
//! A value follows the theory's [`LayerPlan`]: an optional function layer
//! over reader inputs, an optional distribution or set layer, and leaves.
//! Leaves are exceptions, variables and guards (the resumption of a
//! contractive operator, holding a whole value again); with a writer, the
//! variable and guard leaves carry the written monoid element.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ext::ExtValue;
use crate::scalar::Scalar;
use crate::sigterm::{well_formed, MonoidElem, OpSym, Term, Violation};
use crate::spaces::{hausdorff_by, kantorovich_by, FinMetricSpace, SpaceError};
use crate::theory::{Branching, LayerPlan, TheoryError, TheoryExpr};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemError {
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("ill-formed term {0}")]
    IllFormed(Violation),
    #[error("value does not match the layer plan: {0}")]
    Shape(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Canonical semantic value. The derived order (leaves, then guards, then
/// composites) makes equal denotations structurally equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemValue<S> {
    Var(String),
    Exc(String),
    Guard {
        name: String,
        factor: S,
        inner: Box<SemValue<S>>,
    },
    Pair(MonoidElem<S>, Box<SemValue<S>>),
    /// Positive weights summing to 1.
    Dist(BTreeMap<SemValue<S>, S>),
    Set(BTreeSet<SemValue<S>>),
    /// One entry per reader input, in the plan's input order.
    Func(Vec<(String, SemValue<S>)>),
}

impl<S: Scalar> SemValue<S> {
    /// Direct children that are values of the whole monad (guard bodies),
    /// collected in canonical order.
    pub fn guards(&self) -> Vec<&SemValue<S>> {
        let mut out = Vec::new();
        self.collect_guards(&mut out);
        out
    }

    fn collect_guards<'a>(&'a self, out: &mut Vec<&'a SemValue<S>>) {
        match self {
            SemValue::Var(_) | SemValue::Exc(_) => {}
            SemValue::Guard { inner, .. } => out.push(inner),
            SemValue::Pair(_, l) => l.collect_guards(out),
            SemValue::Dist(m) => m.keys().for_each(|k| k.collect_guards(out)),
            SemValue::Set(s) => s.iter().for_each(|k| k.collect_guards(out)),
            SemValue::Func(f) => f.iter().for_each(|(_, v)| v.collect_guards(out)),
        }
    }
}

impl<S: Scalar> fmt::Display for SemValue<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemValue::Var(x) => f.write_str(x),
            SemValue::Exc(e) => write!(f, "raise({e})"),
            SemValue::Guard { name, inner, .. } => write!(f, "Guard[{name}]({inner})"),
            SemValue::Pair(a, l) => write!(f, "Pair({a}, {l})"),
            SemValue::Dist(m) => {
                f.write_str("Dist{")?;
                for (k, (v, w)) in m.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}:{w}")?;
                }
                f.write_str("}")
            }
            SemValue::Set(s) => {
                f.write_str("Set{")?;
                for (k, v) in s.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("}")
            }
            SemValue::Func(m) => {
                f.write_str("Func{")?;
                for (k, (i, v)) in m.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{i} -> {v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Ground metric treatment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Leaf distances as they are, possibly infinite.
    #[default]
    Extended,
    /// Leaf distances truncated at 1.
    Bounded,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Extended => "extended",
            Mode::Bounded => "bounded",
        })
    }
}

/// Denotation of `term` in the free monad of `theory`.
pub fn denote<S: Scalar>(term: &Term<S>, theory: &TheoryExpr<S>) -> Result<SemValue<S>, SemError> {
    let plan = theory.layer_plan()?;
    well_formed(term, theory).map_err(SemError::IllFormed)?;
    denote_in(term, &plan)
}

/// Denotation under an already computed plan; the term is assumed well formed.
pub fn denote_in<S: Scalar>(term: &Term<S>, plan: &LayerPlan<S>) -> Result<SemValue<S>, SemError> {
    Denoter { plan }.run(term)
}

struct Denoter<'a, S> {
    plan: &'a LayerPlan<S>,
}

fn shape<T>(what: impl Into<String>) -> Result<T, SemError> {
    Err(SemError::Shape(what.into()))
}

impl<S: Scalar> Denoter<'_, S> {
    fn run(&self, term: &Term<S>) -> Result<SemValue<S>, SemError> {
        match term {
            Term::Var(x) => Ok(self.unit(self.tag(SemValue::Var(x.clone())))),
            Term::App(op, args) => {
                let vals = args
                    .iter()
                    .map(|a| self.run(a))
                    .collect::<Result<Vec<_>, _>>()?;
                self.apply(op, vals)
            }
        }
    }

    /// Attaches the writer unit to variable and guard leaves.
    fn tag(&self, leaf: SemValue<S>) -> SemValue<S> {
        match &self.plan.writer {
            Some(m) => SemValue::Pair(m.unit(), Box::new(leaf)),
            None => leaf,
        }
    }

    /// The monad unit applied to a leaf.
    fn unit(&self, leaf: SemValue<S>) -> SemValue<S> {
        let branch = match self.plan.branching {
            Some(Branching::Dist) => SemValue::Dist(BTreeMap::from([(leaf, S::one())])),
            Some(Branching::Set) => SemValue::Set(BTreeSet::from([leaf])),
            None => leaf,
        };
        match &self.plan.reader {
            Some(inputs) => {
                SemValue::Func(inputs.iter().map(|i| (i.clone(), branch.clone())).collect())
            }
            None => branch,
        }
    }

    fn apply(&self, op: &OpSym<S>, mut args: Vec<SemValue<S>>) -> Result<SemValue<S>, SemError> {
        match op {
            OpSym::Raise(e) => Ok(self.unit(SemValue::Exc(e.clone()))),
            OpSym::Next { name, factor } => {
                let inner = args.pop().expect("unary");
                Ok(self.unit(self.tag(SemValue::Guard {
                    name: name.clone(),
                    factor: factor.clone(),
                    inner: Box::new(inner),
                })))
            }
            OpSym::ConvexComb(e) => {
                let e = e.clone();
                self.pointwise(args, |mut v| {
                    let right = v.pop().expect("binary");
                    let left = v.pop().expect("binary");
                    mix(&e, left, right)
                })
            }
            OpSym::Union => self.pointwise(args, |mut v| {
                let right = v.pop().expect("binary");
                let left = v.pop().expect("binary");
                match (left, right) {
                    (SemValue::Set(mut a), SemValue::Set(b)) => {
                        a.extend(b);
                        Ok(SemValue::Set(a))
                    }
                    _ => shape("union of non-sets"),
                }
            }),
            OpSym::Empty => {
                if self.plan.branching != Some(Branching::Set) {
                    return shape("empty needs a set layer");
                }
                Ok(match &self.plan.reader {
                    Some(inputs) => SemValue::Func(
                        inputs
                            .iter()
                            .map(|i| (i.clone(), SemValue::Set(BTreeSet::new())))
                            .collect(),
                    ),
                    None => SemValue::Set(BTreeSet::new()),
                })
            }
            OpSym::Read(n) => {
                let Some(inputs) = &self.plan.reader else {
                    return shape("rd needs a reader layer");
                };
                if *n != inputs.len() || args.len() != *n {
                    return shape("rd arity differs from the reader inputs");
                }
                let mut out = Vec::with_capacity(*n);
                for (k, arg) in args.into_iter().enumerate() {
                    match arg {
                        SemValue::Func(mut f) => out.push(f.swap_remove(k)),
                        _ => return shape("rd argument is not a function"),
                    }
                }
                Ok(SemValue::Func(out))
            }
            OpSym::Write(alpha) => {
                let Some(m) = &self.plan.writer else {
                    return shape("wr needs a writer layer");
                };
                map_leaves(args.pop().expect("unary"), &mut |leaf| match leaf {
                    SemValue::Pair(beta, l) => Ok(SemValue::Pair(m.mult(alpha, &beta)?, l)),
                    // writes commute past exceptions
                    exc @ SemValue::Exc(_) => Ok(exc),
                    _ => shape("untagged leaf under a writer"),
                })
            }
        }
    }

    /// Applies a branch-level operation input by input under a reader.
    fn pointwise<F>(&self, args: Vec<SemValue<S>>, f: F) -> Result<SemValue<S>, SemError>
    where
        F: Fn(Vec<SemValue<S>>) -> Result<SemValue<S>, SemError>,
    {
        let Some(inputs) = &self.plan.reader else {
            return f(args);
        };
        let mut columns: Vec<Vec<SemValue<S>>> = vec![Vec::with_capacity(args.len()); inputs.len()];
        for arg in args {
            match arg {
                SemValue::Func(entries) if entries.len() == inputs.len() => {
                    for (k, (_, v)) in entries.into_iter().enumerate() {
                        columns[k].push(v);
                    }
                }
                _ => return shape("expected a function over the reader inputs"),
            }
        }
        let out = inputs
            .iter()
            .zip(columns)
            .map(|(i, col)| Ok((i.clone(), f(col)?)))
            .collect::<Result<Vec<_>, SemError>>()?;
        Ok(SemValue::Func(out))
    }
}

/// `e * left + (1 - e) * right` on distributions, merging equal support
/// points and dropping zero weights.
fn mix<S: Scalar>(e: &S, left: SemValue<S>, right: SemValue<S>) -> Result<SemValue<S>, SemError> {
    let (SemValue::Dist(a), SemValue::Dist(b)) = (left, right) else {
        return shape("convex combination of non-distributions");
    };
    let f = S::one() - e.clone();
    let mut out = BTreeMap::new();
    for (w, m) in [(e, a), (&f, b)] {
        if w.is_zero() {
            continue;
        }
        for (v, p) in m {
            let x = out.entry(v).or_insert_with(S::zero);
            *x = x.clone() + w.clone() * p;
        }
    }
    Ok(SemValue::Dist(out))
}

/// Rebuilds a value with every leaf (below function and branching layers)
/// replaced, merging distribution weights and set elements that collide.
fn map_leaves<S, F>(v: SemValue<S>, f: &mut F) -> Result<SemValue<S>, SemError>
where
    S: Scalar,
    F: FnMut(SemValue<S>) -> Result<SemValue<S>, SemError>,
{
    match v {
        SemValue::Func(entries) => Ok(SemValue::Func(
            entries
                .into_iter()
                .map(|(i, x)| Ok((i, map_leaves(x, f)?)))
                .collect::<Result<_, SemError>>()?,
        )),
        SemValue::Dist(m) => {
            let mut out = BTreeMap::new();
            for (k, p) in m {
                let x = out.entry(f(k)?).or_insert_with(S::zero);
                *x = x.clone() + p;
            }
            Ok(SemValue::Dist(out))
        }
        SemValue::Set(s) => Ok(SemValue::Set(
            s.into_iter().map(&mut *f).collect::<Result<_, _>>()?,
        )),
        leaf => f(leaf),
    }
}

/// Distance between two values of the same plan, with variables
/// interpreted in `space`.
pub fn sem_dist<S: Scalar>(
    v: &SemValue<S>,
    w: &SemValue<S>,
    plan: &LayerPlan<S>,
    space: &FinMetricSpace<S>,
    mode: Mode,
) -> Result<ExtValue<S>, SemError> {
    Metric { plan, space, mode }.value(v, w)
}

/// `sem_dist` of the two denotations.
pub fn term_dist<S: Scalar>(
    t: &Term<S>,
    s: &Term<S>,
    theory: &TheoryExpr<S>,
    space: &FinMetricSpace<S>,
    mode: Mode,
) -> Result<ExtValue<S>, SemError> {
    let plan = theory.layer_plan()?;
    for term in [t, s] {
        well_formed(term, theory).map_err(SemError::IllFormed)?;
    }
    let v = denote_in(t, &plan)?;
    let w = denote_in(s, &plan)?;
    sem_dist(&v, &w, &plan, space, mode)
}

struct Metric<'a, S> {
    plan: &'a LayerPlan<S>,
    space: &'a FinMetricSpace<S>,
    mode: Mode,
}

impl<S: Scalar> Metric<'_, S> {
    fn value(&self, v: &SemValue<S>, w: &SemValue<S>) -> Result<ExtValue<S>, SemError> {
        if v == w {
            // still reject variables the space does not know
            self.check_vars(v)?;
            return Ok(ExtValue::zero());
        }
        match (v, w) {
            (SemValue::Func(a), SemValue::Func(b)) => {
                if a.len() != b.len() || a.iter().zip(b).any(|((i, _), (j, _))| i != j) {
                    return shape("functions over different inputs");
                }
                let mut sup = ExtValue::zero();
                for ((_, x), (_, y)) in a.iter().zip(b) {
                    sup = sup.max(self.branch(x, y)?);
                }
                Ok(sup)
            }
            (SemValue::Func(_), _) | (_, SemValue::Func(_)) => {
                shape("function against non-function")
            }
            _ => self.branch(v, w),
        }
    }

    fn branch(&self, v: &SemValue<S>, w: &SemValue<S>) -> Result<ExtValue<S>, SemError> {
        match (v, w) {
            (SemValue::Dist(a), SemValue::Dist(b)) => {
                let (ak, aw): (Vec<_>, Vec<_>) = a.iter().map(|(k, p)| (k, p.clone())).unzip();
                let (bk, bw): (Vec<_>, Vec<_>) = b.iter().map(|(k, p)| (k, p.clone())).unzip();
                kantorovich_by(&aw, &bw, |i, j| self.leaf(ak[i], bk[j]))
            }
            (SemValue::Set(a), SemValue::Set(b)) => {
                let ak: Vec<_> = a.iter().collect();
                let bk: Vec<_> = b.iter().collect();
                hausdorff_by(ak.len(), bk.len(), |i, j| self.leaf(ak[i], bk[j]))
            }
            (SemValue::Dist(_) | SemValue::Set(_), _)
            | (_, SemValue::Dist(_) | SemValue::Set(_)) => shape("branching layers differ"),
            _ => self.leaf(v, w),
        }
    }

    fn leaf(&self, v: &SemValue<S>, w: &SemValue<S>) -> Result<ExtValue<S>, SemError> {
        let d = self.raw_leaf(v, w)?;
        Ok(match self.mode {
            Mode::Extended => d,
            Mode::Bounded => d.truncate(),
        })
    }

    fn raw_leaf(&self, v: &SemValue<S>, w: &SemValue<S>) -> Result<ExtValue<S>, SemError> {
        use SemValue::*;
        match (v, w) {
            (Var(x), Var(y)) => Ok(self.space.dist(x, y)?),
            (Exc(a), Exc(b)) => match &self.plan.exceptions {
                Some(e) => Ok(e.dist(a, b)?),
                None => shape("exception leaf without an exception space"),
            },
            (
                Guard {
                    name: n1,
                    factor,
                    inner: a,
                },
                Guard {
                    name: n2, inner: b, ..
                },
            ) => {
                if n1 != n2 {
                    return Ok(ExtValue::Inf);
                }
                if a == b {
                    self.check_vars(a)?;
                    return Ok(ExtValue::zero());
                }
                Ok(self.value(a, b)?.scale(factor).expect("positive factor"))
            }
            (Pair(a, x), Pair(b, y)) => {
                let Some(m) = &self.plan.writer else {
                    return shape("pair leaf without a writer");
                };
                Ok(m.dist(a, b)?.add(&self.raw_leaf(x, y)?))
            }
            (Dist(_) | Set(_) | Func(_), _) | (_, Dist(_) | Set(_) | Func(_)) => {
                shape("composite value in leaf position")
            }
            // different leaf kinds sit in different coproduct summands
            _ => {
                self.check_vars(v)?;
                self.check_vars(w)?;
                Ok(ExtValue::Inf)
            }
        }
    }

    fn check_vars(&self, v: &SemValue<S>) -> Result<(), SemError> {
        match v {
            SemValue::Var(x) => {
                self.space.require(x)?;
                Ok(())
            }
            SemValue::Exc(_) => Ok(()),
            SemValue::Guard { inner, .. } | SemValue::Pair(_, inner) => self.check_vars(inner),
            SemValue::Dist(m) => m.keys().try_for_each(|k| self.check_vars(k)),
            SemValue::Set(s) => s.iter().try_for_each(|k| self.check_vars(k)),
            SemValue::Func(f) => f.iter().try_for_each(|(_, k)| self.check_vars(k)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigterm::DEFAULT_NEXT;
    use crate::theory::Monoid;
    use num_rational::BigRational;

    type Q = BigRational;
    type T = Term<Q>;
    type Th = TheoryExpr<Q>;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn x() -> T {
        T::var("x")
    }

    fn y() -> T {
        T::var("y")
    }

    fn wr(a: i64, t: T) -> T {
        T::wr(MonoidElem::Num(Q::from_int(a)), t)
    }

    fn xy(d: i64) -> FinMetricSpace<Q> {
        FinMetricSpace::from_pairs(
            "X",
            vec!["x".into(), "y".into(), "z".into()],
            &[("x".into(), "y".into(), ExtValue::Fin(q(d, 1)))],
        )
        .unwrap()
    }

    fn fin(n: i64, d: i64) -> ExtValue<Q> {
        ExtValue::Fin(q(n, d))
    }

    fn inputs() -> Vec<String> {
        vec!["i1".into(), "i2".into()]
    }

    #[test]
    fn barycentric_idempotence() {
        let v = denote(&T::conv(q(1, 2), x(), x()), &Th::Bary).unwrap();
        assert_eq!(v.to_string(), "Dist{x:1}");
    }

    #[test]
    fn writer_multiplication() {
        let v = denote(&wr(2, wr(3, x())), &Th::Writer(Monoid::Rationals)).unwrap();
        assert_eq!(v.to_string(), "Pair(5, x)");
    }

    #[test]
    fn reader_idempotence() {
        let th = Th::Reader(inputs());
        let v = denote(&T::rd(vec![x(), x()]), &th).unwrap();
        assert_eq!(v.to_string(), "Func{i1 -> x, i2 -> x}");
        assert_eq!(denote(&x(), &th).unwrap(), v);
    }

    #[test]
    fn guard_under_distribution() {
        let t = T::next(DEFAULT_NEXT, q(1, 2), T::conv(q(1, 2), T::raise("*"), x()));
        let v = denote(&t, &Th::markov_process(q(1, 2))).unwrap();
        assert_eq!(
            v.to_string(),
            "Dist{Guard[next](Dist{x:1/2, raise(*):1/2}):1}"
        );
    }

    #[test]
    fn distance_examples() {
        let space = xy(1);
        let d = term_dist(
            &T::conv(q(1, 2), x(), y()),
            &y(),
            &Th::Bary,
            &space,
            Mode::Extended,
        )
        .unwrap();
        assert_eq!(d, fin(1, 2));

        let space3 = FinMetricSpace::from_pairs(
            "X",
            vec!["x".into(), "y".into(), "z".into()],
            &[("y".into(), "z".into(), fin(3, 1))],
        )
        .unwrap();
        let reader = Th::Reader(inputs());
        let d = term_dist(
            &T::rd(vec![x(), y()]),
            &T::rd(vec![x(), T::var("z")]),
            &reader,
            &space3,
            Mode::Extended,
        )
        .unwrap();
        assert_eq!(d, fin(3, 1));

        let w = Th::Writer(Monoid::Rationals);
        assert_eq!(
            term_dist(&wr(2, x()), &wr(5, x()), &w, &space, Mode::Extended).unwrap(),
            fin(3, 1)
        );
    }

    #[test]
    fn guard_and_leaf_metrics() {
        let th = Th::markov_process(q(1, 2));
        let plan = th.layer_plan().unwrap();
        let space = xy(1);
        let g = |t: T| T::next(DEFAULT_NEXT, q(1, 2), t);
        let d = term_dist(&g(x()), &g(y()), &th, &space, Mode::Extended).unwrap();
        assert_eq!(d, fin(1, 2));

        let v = SemValue::Var("x".into());
        let e = SemValue::Exc("*".into());
        assert_eq!(
            sem_dist(&v, &e, &plan, &space, Mode::Extended).unwrap(),
            ExtValue::Inf
        );
        assert_eq!(
            sem_dist(&v, &e, &plan, &space, Mode::Bounded).unwrap(),
            fin(1, 1)
        );
    }

    #[test]
    fn exception_metric() {
        let e = FinMetricSpace::from_pairs(
            "E",
            vec!["a".into(), "b".into()],
            &[("a".into(), "b".into(), fin(2, 1))],
        )
        .unwrap();
        let th = Th::Exc(e);
        let d = term_dist(&T::raise("a"), &T::raise("b"), &th, &xy(1), Mode::Extended).unwrap();
        assert_eq!(d, fin(2, 1));
    }

    #[test]
    fn semilattice_and_hausdorff() {
        let th = Th::Semi;
        let v = denote(&T::union(x(), T::union(y(), x())), &th).unwrap();
        assert_eq!(v.to_string(), "Set{x, y}");
        let space = xy(2);
        let d = term_dist(&x(), &T::union(x(), y()), &th, &space, Mode::Extended).unwrap();
        assert_eq!(d, fin(2, 1));
        let d = term_dist(&T::empty(), &x(), &th, &space, Mode::Extended).unwrap();
        assert_eq!(d, ExtValue::Inf);
        assert_eq!(
            term_dist(&T::empty(), &T::empty(), &th, &space, Mode::Extended).unwrap(),
            fin(0, 1)
        );
    }

    #[test]
    fn writes_pass_through_distributions_and_readers() {
        let th = Th::mdp(vec!["a".into(), "b".into()], q(1, 2));
        let t = wr(1, T::conv(q(1, 3), wr(2, x()), x()));
        let v = denote(&t, &th).unwrap();
        assert_eq!(
            v.to_string(),
            "Func{a -> Dist{Pair(1, x):2/3, Pair(3, x):1/3}, b -> Dist{Pair(1, x):2/3, Pair(3, x):1/3}}"
        );
    }

    #[test]
    fn writer_commutes_with_exceptions() {
        let th = Th::tensor(Th::termination(), Th::Writer(Monoid::Rationals));
        assert_eq!(
            denote(&wr(4, T::raise("*")), &th).unwrap(),
            denote(&T::raise("*"), &th).unwrap()
        );
    }

    #[test]
    fn unknown_variable_is_an_error() {
        let err = term_dist(
            &T::var("w"),
            &T::var("w"),
            &Th::Bary,
            &xy(1),
            Mode::Extended,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SemError::Space(SpaceError::UnknownPoint { .. })
        ));
    }

    #[test]
    fn ill_formed_terms_are_rejected() {
        let err = denote(&T::union(x(), y()), &Th::Bary).unwrap_err();
        assert!(matches!(err, SemError::IllFormed(_)));
    }
}
