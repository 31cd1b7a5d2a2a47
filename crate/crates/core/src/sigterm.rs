//! Operation symbols, terms, substitution and well-formedness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::scalar::Scalar;
use crate::theory::{OpFamily, TheoryExpr};

/// Name given to the contractive operator when none is chosen.
pub const DEFAULT_NEXT: &str = "next";

/// An element of a writer monoid: a rational for the built-in rational line,
/// or a named point of a finite monoid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MonoidElem<S> {
    Num(S),
    Point(String),
}

impl<S: fmt::Display> fmt::Display for MonoidElem<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonoidElem::Num(v) => write!(f, "{v}"),
            MonoidElem::Point(p) => f.write_str(p),
        }
    }
}

/// A concrete operation symbol. Parameterized families (convex combination,
/// raise, write) are instantiated at one parameter value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpSym<S> {
    /// `x +_e y`, weight `e` on the left argument.
    ConvexComb(S),
    Raise(String),
    Union,
    Empty,
    /// `rd` over an input set of the given size.
    Read(usize),
    Write(MonoidElem<S>),
    /// Unary contractive operator with factor in `(0, 1)`.
    Next {
        name: String,
        factor: S,
    },
}

impl<S> OpSym<S> {
    pub fn arity(&self) -> usize {
        match self {
            OpSym::ConvexComb(_) | OpSym::Union => 2,
            OpSym::Raise(_) | OpSym::Empty => 0,
            OpSym::Read(n) => *n,
            OpSym::Write(_) | OpSym::Next { .. } => 1,
        }
    }

    /// Surface-syntax head, e.g. `conv(1/2)` or `wr(3)`.
    pub fn head(&self) -> String
    where
        S: fmt::Display,
    {
        match self {
            OpSym::ConvexComb(e) => format!("conv({e})"),
            OpSym::Raise(l) => format!("raise({l})"),
            OpSym::Union => "union".into(),
            OpSym::Empty => "empty".into(),
            OpSym::Read(_) => "rd".into(),
            OpSym::Write(a) => format!("wr({a})"),
            OpSym::Next { name, .. } if name == DEFAULT_NEXT => "next".into(),
            OpSym::Next { name, .. } => format!("next[{name}]"),
        }
    }
}

impl<S: fmt::Display> fmt::Display for OpSym<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.head())
    }
}

/// A finite term over variables and operation symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term<S> {
    Var(String),
    App(OpSym<S>, Vec<Term<S>>),
}

impl<S: Scalar> Term<S> {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn conv(e: S, left: Self, right: Self) -> Self {
        Term::App(OpSym::ConvexComb(e), vec![left, right])
    }

    pub fn raise(label: impl Into<String>) -> Self {
        Term::App(OpSym::Raise(label.into()), Vec::new())
    }

    pub fn union(left: Self, right: Self) -> Self {
        Term::App(OpSym::Union, vec![left, right])
    }

    pub fn empty() -> Self {
        Term::App(OpSym::Empty, Vec::new())
    }

    pub fn rd(args: Vec<Self>) -> Self {
        Term::App(OpSym::Read(args.len()), args)
    }

    pub fn wr(alpha: MonoidElem<S>, body: Self) -> Self {
        Term::App(OpSym::Write(alpha), vec![body])
    }

    pub fn next(name: impl Into<String>, factor: S, body: Self) -> Self {
        Term::App(
            OpSym::Next {
                name: name.into(),
                factor,
            },
            vec![body],
        )
    }

    /// Free variables.
    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(x) => {
                out.insert(x.clone());
            }
            Term::App(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn is_closed(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::App(_, args) => args.iter().all(Term::is_closed),
        }
    }

    /// Height of the tree; variables and constants have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Term::Var(_) => 0,
            Term::App(_, args) if args.is_empty() => 0,
            Term::App(_, args) => 1 + args.iter().map(Term::depth).max().unwrap_or(0),
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Term::Var(_) => 1,
            Term::App(_, args) => 1 + args.iter().map(Term::size).sum::<usize>(),
        }
    }

    /// Homomorphic substitution. Variables outside the map stay fixed.
    pub fn bind(&self, sigma: &BTreeMap<String, Term<S>>) -> Term<S> {
        match self {
            Term::Var(x) => sigma.get(x).cloned().unwrap_or_else(|| self.clone()),
            Term::App(op, args) => {
                Term::App(op.clone(), args.iter().map(|a| a.bind(sigma)).collect())
            }
        }
    }

    /// `(tau . sigma)(x) = bind(sigma(x), tau)`, defined on the union of the
    /// two domains.
    pub fn compose(
        sigma: &BTreeMap<String, Term<S>>,
        tau: &BTreeMap<String, Term<S>>,
    ) -> BTreeMap<String, Term<S>> {
        let mut out: BTreeMap<String, Term<S>> = sigma
            .iter()
            .map(|(x, t)| (x.clone(), t.bind(tau)))
            .collect();
        for (x, t) in tau {
            out.entry(x.clone()).or_insert_with(|| t.clone());
        }
        out
    }
}

impl<S: Scalar> fmt::Display for Term<S> {
    /// Prints in the term surface grammar.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(x) => f.write_str(x),
            Term::App(op, args) => {
                match op {
                    OpSym::ConvexComb(e) => write!(f, "conv({e}, ")?,
                    OpSym::Raise(l) => return write!(f, "raise({l})"),
                    OpSym::Empty => return f.write_str("empty"),
                    OpSym::Union => f.write_str("union(")?,
                    OpSym::Read(_) => f.write_str("rd(")?,
                    OpSym::Write(a) => write!(f, "wr({a}, ")?,
                    OpSym::Next { .. } => write!(f, "{}(", op.head())?,
                }
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// The first offending node found by [`well_formed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Child indices from the root to the offending node.
    pub path: Vec<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "at root: {}", self.reason)
        } else {
            let p: Vec<String> = self.path.iter().map(|i| i.to_string()).collect();
            write!(f, "at {}: {}", p.join("."), self.reason)
        }
    }
}

/// Checks arities, parameter ranges and membership of every symbol in the
/// signature of `theory`. An invalid theory is reported as a violation at
/// the root.
pub fn well_formed<S: Scalar>(term: &Term<S>, theory: &TheoryExpr<S>) -> Result<(), Violation> {
    let families = theory.signature().map_err(|e| Violation {
        path: Vec::new(),
        reason: e.to_string(),
    })?;
    let mut path = Vec::new();
    check_node(term, &families, &mut path)
}

fn check_node<S: Scalar>(
    term: &Term<S>,
    families: &[OpFamily<S>],
    path: &mut Vec<usize>,
) -> Result<(), Violation> {
    let Term::App(op, args) = term else {
        return Ok(());
    };
    let fail = |reason: String| Violation {
        path: path.clone(),
        reason,
    };
    if args.len() != op.arity() {
        return Err(fail(format!(
            "{} expects {} argument(s), got {}",
            op,
            op.arity(),
            args.len()
        )));
    }
    let mut reasons = Vec::new();
    let admitted = families.iter().any(|fam| match fam.admits(op) {
        Ok(()) => true,
        Err(r) => {
            if let Some(r) = r {
                reasons.push(r);
            }
            false
        }
    });
    if !admitted {
        return Err(fail(
            reasons
                .pop()
                .unwrap_or_else(|| format!("{op} is not in the signature")),
        ));
    }
    for (k, a) in args.iter().enumerate() {
        path.push(k);
        check_node(a, families, path)?;
        path.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::TheoryExpr;
    use num_rational::BigRational;
    use proptest::prelude::*;

    type Q = BigRational;
    type T = Term<Q>;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn x() -> T {
        T::var("x")
    }

    fn y() -> T {
        T::var("y")
    }

    #[test]
    fn well_formedness_examples() {
        let bary = TheoryExpr::<Q>::Bary;
        assert!(well_formed(&T::conv(q(1, 2), x(), y()), &bary).is_ok());

        let bad_arity = T::App(OpSym::Read(2), vec![x()]);
        let reader = TheoryExpr::<Q>::Reader(vec!["i1".into(), "i2".into()]);
        let v = well_formed(&bad_arity, &reader).unwrap_err();
        assert!(v.reason.contains("argument"), "{v}");
        assert!(well_formed(&bad_arity, &bary).is_err());

        let v = well_formed(&T::conv(q(3, 2), x(), y()), &bary).unwrap_err();
        assert!(v.reason.contains("[0,1]"), "{v}");

        // wrong reader width
        let rd3 = T::rd(vec![x(), x(), x()]);
        assert!(well_formed(&rd3, &reader).is_err());
        // not in signature
        assert!(well_formed(&T::union(x(), y()), &bary).is_err());
    }

    #[test]
    fn violation_reports_path() {
        let bary = TheoryExpr::<Q>::Bary;
        let t = T::conv(q(1, 2), x(), T::conv(q(2, 1), x(), y()));
        let v = well_formed(&t, &bary).unwrap_err();
        assert_eq!(v.path, vec![1]);
    }

    #[test]
    fn bind_examples() {
        let sigma = BTreeMap::from([("x".to_string(), T::raise("*"))]);
        assert_eq!(x().bind(&sigma), T::raise("*"));
        assert_eq!(
            T::conv(q(1, 2), x(), y()).bind(&sigma),
            T::conv(q(1, 2), T::raise("*"), y())
        );
        let w = |a: i64, t: T| T::wr(MonoidElem::Num(Q::from_int(a)), t);
        let sigma = BTreeMap::from([("x".to_string(), w(3, y()))]);
        assert_eq!(w(2, x()).bind(&sigma), w(2, w(3, y())));
    }

    #[test]
    fn display_uses_surface_syntax() {
        let t = T::conv(
            q(1, 2),
            T::next(DEFAULT_NEXT, q(1, 2), T::raise("*")),
            T::empty(),
        );
        assert_eq!(t.to_string(), "conv(1/2, next(raise(*)), empty)");
        let n = T::next("tick", q(1, 3), x());
        assert_eq!(n.to_string(), "next[tick](x)");
        assert_eq!(T::rd(vec![x(), y()]).to_string(), "rd(x, y)");
    }

    fn arb_term() -> impl Strategy<Value = T> {
        let leaf = prop_oneof![
            Just(T::var("x")),
            Just(T::var("y")),
            Just(T::var("z")),
            Just(T::raise("*")),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (0i64..=4, inner.clone(), inner.clone()).prop_map(|(e, l, r)| T::conv(
                    Q::ratio(e, 4),
                    l,
                    r
                )),
                inner
                    .clone()
                    .prop_map(|t| T::next(DEFAULT_NEXT, Q::ratio(1, 2), t)),
            ]
        })
    }

    fn arb_subst() -> impl Strategy<Value = BTreeMap<String, T>> {
        proptest::collection::btree_map(
            prop_oneof![Just("x".to_string()), Just("y".to_string())],
            arb_term(),
            0..3,
        )
    }

    proptest! {
        #[test]
        fn bind_is_associative(t in arb_term(), s in arb_subst(), u in arb_subst()) {
            prop_assert_eq!(t.bind(&s).bind(&u), t.bind(&T::compose(&s, &u)));
        }

        #[test]
        fn bind_identity(t in arb_term()) {
            prop_assert_eq!(t.bind(&BTreeMap::new()), t.clone());
            let ids: BTreeMap<String, T> = t.vars().into_iter().map(|v| (v.clone(), T::var(v))).collect();
            prop_assert_eq!(t.bind(&ids), t);
        }

        #[test]
        fn bind_preserves_well_formedness(t in arb_term(), s in arb_subst()) {
            let mp = TheoryExpr::<Q>::markov_process(Q::ratio(1, 2));
            prop_assert!(well_formed(&t, &mp).is_ok());
            prop_assert!(well_formed(&t.bind(&s), &mp).is_ok());
        }
    }
}
