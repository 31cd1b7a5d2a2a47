//! Theory expressions: atoms combined by sum and tensor, their signatures,
//! axiom instantiation over finite parameter pools, and the layer plan that
//! describes the free monad of a supported theory.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ext::ExtValue;
use crate::scalar::Scalar;
use crate::sigterm::{MonoidElem, OpSym, Term};
use crate::spaces::{FinMetricSpace, SpaceError};

/// Name of the built-in one-point exception space.
pub const UNIT_EXC_SPACE: &str = "1";
/// The exception of the one-point space.
pub const UNIT_EXC: &str = "*";
/// Name of the built-in rational writer monoid.
pub const RATIONALS: &str = "Q";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TheoryError {
    #[error("operation families overlap: {0}")]
    Overlap(String),
    #[error("unsupported theory shape: {0}")]
    UnsupportedShape(String),
    #[error("empty parameter pool: {0}")]
    EmptyPool(String),
    #[error("monoid `{name}` is invalid: {reason}")]
    BadMonoid { name: String, reason: String },
    #[error("`{elem}` is not an element of monoid `{monoid}`")]
    UnknownElement { monoid: String, elem: String },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// A finite monoid given by its multiplication table, with a metric on the
/// carrier making multiplication non-expansive in the sum metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteMonoid<S> {
    name: String,
    carrier: FinMetricSpace<S>,
    unit: usize,
    // row-major n x n
    table: Vec<usize>,
}

impl<S: Scalar> FiniteMonoid<S> {
    /// Validates totality, associativity, the unit laws and non-expansiveness
    /// exhaustively.
    pub fn new<F>(
        name: impl Into<String>,
        carrier: FinMetricSpace<S>,
        unit: &str,
        mut mult: F,
    ) -> Result<Self, TheoryError>
    where
        F: FnMut(&str, &str) -> Option<String>,
    {
        let name = name.into();
        let bad = |reason: String| TheoryError::BadMonoid {
            name: name.clone(),
            reason,
        };
        let unit = carrier
            .index_of(unit)
            .ok_or_else(|| bad(format!("unit `{unit}` is not in the carrier")))?;
        let pts = carrier.points().to_vec();
        let n = pts.len();
        let mut table = Vec::with_capacity(n * n);
        for a in &pts {
            for b in &pts {
                let c = mult(a, b).ok_or_else(|| bad(format!("{a} * {b} is undefined")))?;
                let k = carrier
                    .index_of(&c)
                    .ok_or_else(|| bad(format!("{a} * {b} = {c} is not in the carrier")))?;
                table.push(k);
            }
        }
        let m = FiniteMonoid {
            name: name.clone(),
            carrier,
            unit,
            table,
        };
        let at = |a: usize, b: usize| m.table[a * n + b];
        for a in 0..n {
            if at(unit, a) != a || at(a, unit) != a {
                return Err(bad(format!("unit law fails at {}", pts[a])));
            }
            for b in 0..n {
                for c in 0..n {
                    if at(at(a, b), c) != at(a, at(b, c)) {
                        return Err(bad(format!(
                            "associativity fails at ({}, {}, {})",
                            pts[a], pts[b], pts[c]
                        )));
                    }
                }
            }
        }
        for a in 0..n {
            for a2 in 0..n {
                for b in 0..n {
                    for b2 in 0..n {
                        let lhs = m.carrier.d(at(a, b), at(a2, b2));
                        let rhs = m.carrier.d(a, a2).add(m.carrier.d(b, b2));
                        if *lhs > rhs {
                            return Err(bad(format!(
                                "multiplication expands distances at ({}*{}, {}*{})",
                                pts[a], pts[b], pts[a2], pts[b2]
                            )));
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    /// The cyclic group `Z_n` on points `0..n` with the cyclic metric
    /// `min(|a-b|, n-|a-b|)`.
    pub fn cyclic(n: usize) -> Self {
        assert!(n > 0, "Z_0 is not a monoid");
        let pts: Vec<String> = (0..n).map(|k| k.to_string()).collect();
        let carrier = FinMetricSpace::new(format!("Z{n}"), pts, |i, j| {
            let k = i.abs_diff(j);
            ExtValue::Fin(S::from_int(k.min(n - k) as i64))
        })
        .expect("cyclic metric");
        FiniteMonoid::new(format!("Z{n}"), carrier, "0", |a, b| {
            let a: usize = a.parse().ok()?;
            let b: usize = b.parse().ok()?;
            Some(((a + b) % n).to_string())
        })
        .expect("cyclic group")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn carrier(&self) -> &FinMetricSpace<S> {
        &self.carrier
    }

    pub fn unit_point(&self) -> &str {
        &self.carrier.points()[self.unit]
    }

    pub fn mult_points(&self, a: &str, b: &str) -> Option<&str> {
        let i = self.carrier.index_of(a)?;
        let j = self.carrier.index_of(b)?;
        let k = self.table[i * self.carrier.len() + j];
        Some(&self.carrier.points()[k])
    }
}

/// A writer monoid: the rational line under addition, or a finite table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Monoid<S> {
    Rationals,
    Finite(Box<FiniteMonoid<S>>),
}

impl<S: Scalar> Monoid<S> {
    pub fn name(&self) -> &str {
        match self {
            Monoid::Rationals => RATIONALS,
            Monoid::Finite(m) => m.name(),
        }
    }

    pub fn unit(&self) -> MonoidElem<S> {
        match self {
            Monoid::Rationals => MonoidElem::Num(S::zero()),
            Monoid::Finite(m) => MonoidElem::Point(m.unit_point().to_string()),
        }
    }

    pub fn contains(&self, a: &MonoidElem<S>) -> bool {
        match (self, a) {
            (Monoid::Rationals, MonoidElem::Num(_)) => true,
            (Monoid::Finite(m), MonoidElem::Point(p)) => m.carrier.contains(p),
            _ => false,
        }
    }

    fn unknown(&self, a: &MonoidElem<S>) -> TheoryError {
        TheoryError::UnknownElement {
            monoid: self.name().to_string(),
            elem: a.to_string(),
        }
    }

    pub fn mult(&self, a: &MonoidElem<S>, b: &MonoidElem<S>) -> Result<MonoidElem<S>, TheoryError> {
        match (self, a, b) {
            (Monoid::Rationals, MonoidElem::Num(x), MonoidElem::Num(y)) => {
                Ok(MonoidElem::Num(x.clone() + y.clone()))
            }
            (Monoid::Finite(m), MonoidElem::Point(p), MonoidElem::Point(q)) => m
                .mult_points(p, q)
                .map(|r| MonoidElem::Point(r.to_string()))
                .ok_or_else(|| self.unknown(if m.carrier.contains(p) { b } else { a })),
            _ => Err(self.unknown(if self.contains(a) { b } else { a })),
        }
    }

    pub fn dist(&self, a: &MonoidElem<S>, b: &MonoidElem<S>) -> Result<ExtValue<S>, TheoryError> {
        match (self, a, b) {
            (Monoid::Rationals, MonoidElem::Num(x), MonoidElem::Num(y)) => {
                Ok(ExtValue::Fin((x.clone() - y.clone()).abs()))
            }
            (Monoid::Finite(m), MonoidElem::Point(p), MonoidElem::Point(q)) => {
                Ok(m.carrier.dist(p, q)?)
            }
            _ => Err(self.unknown(if self.contains(a) { b } else { a })),
        }
    }

    /// Reads an element from text: a rational for `Q`, a point name otherwise.
    pub fn parse_elem(&self, text: &str) -> Result<MonoidElem<S>, TheoryError> {
        let text = text.trim();
        let elem = match self {
            Monoid::Rationals => S::parse_rational(text).map(MonoidElem::Num),
            Monoid::Finite(_) => Some(MonoidElem::Point(text.to_string())),
        };
        match elem {
            Some(e) if self.contains(&e) => Ok(e),
            _ => Err(TheoryError::UnknownElement {
                monoid: self.name().to_string(),
                elem: text.to_string(),
            }),
        }
    }

    /// All elements, for finite monoids.
    pub fn elements(&self) -> Option<Vec<MonoidElem<S>>> {
        match self {
            Monoid::Rationals => None,
            Monoid::Finite(m) => Some(
                m.carrier
                    .points()
                    .iter()
                    .map(|p| MonoidElem::Point(p.clone()))
                    .collect(),
            ),
        }
    }
}

/// A theory built from atoms by sum and tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TheoryExpr<S> {
    /// Interpolative barycentric algebras.
    Bary,
    /// Semilattices with bottom.
    Semi,
    /// Exceptions drawn from a metric space.
    Exc(FinMetricSpace<S>),
    /// Reading one of finitely many inputs.
    Reader(Vec<String>),
    Writer(Monoid<S>),
    /// A unary contractive operator.
    Contract {
        name: String,
        factor: S,
    },
    Sum(Box<TheoryExpr<S>>, Box<TheoryExpr<S>>),
    Tensor(Box<TheoryExpr<S>>, Box<TheoryExpr<S>>),
}

impl<S: Scalar> TheoryExpr<S> {
    pub fn sum(left: Self, right: Self) -> Self {
        TheoryExpr::Sum(Box::new(left), Box::new(right))
    }

    pub fn tensor(left: Self, right: Self) -> Self {
        TheoryExpr::Tensor(Box::new(left), Box::new(right))
    }

    /// Exceptions over the one-point space `{*}`.
    pub fn termination() -> Self {
        TheoryExpr::Exc(FinMetricSpace::singleton(UNIT_EXC_SPACE, UNIT_EXC))
    }

    pub fn contract(name: impl Into<String>, factor: S) -> Self {
        TheoryExpr::Contract {
            name: name.into(),
            factor,
        }
    }

    /// `B + E_1 + O(next)`.
    pub fn markov_process(c: S) -> Self {
        Self::sum(
            Self::sum(TheoryExpr::Bary, Self::termination()),
            Self::contract(crate::sigterm::DEFAULT_NEXT, c),
        )
    }

    /// `((B + E_1) (x) R[A]) + O(next)`.
    pub fn labelled_markov_process(actions: Vec<String>, c: S) -> Self {
        Self::sum(
            Self::tensor(
                Self::sum(TheoryExpr::Bary, Self::termination()),
                TheoryExpr::Reader(actions),
            ),
            Self::contract(crate::sigterm::DEFAULT_NEXT, c),
        )
    }

    /// `(R[I] (x) W[L]) + O(next)`.
    pub fn mealy(inputs: Vec<String>, outputs: Monoid<S>, c: S) -> Self {
        Self::sum(
            Self::tensor(TheoryExpr::Reader(inputs), TheoryExpr::Writer(outputs)),
            Self::contract(crate::sigterm::DEFAULT_NEXT, c),
        )
    }

    /// `((B (x) W[Q]) (x) R[A]) + O(next)`.
    pub fn mdp(actions: Vec<String>, c: S) -> Self {
        Self::sum(
            Self::tensor(
                Self::tensor(TheoryExpr::Bary, TheoryExpr::Writer(Monoid::Rationals)),
                TheoryExpr::Reader(actions),
            ),
            Self::contract(crate::sigterm::DEFAULT_NEXT, c),
        )
    }

    fn atoms<'a>(&'a self, out: &mut Vec<&'a TheoryExpr<S>>) {
        match self {
            TheoryExpr::Sum(l, r) | TheoryExpr::Tensor(l, r) => {
                l.atoms(out);
                r.atoms(out);
            }
            atom => out.push(atom),
        }
    }

    /// Checks atom parameters, family disjointness and the single
    /// probabilistic/nondeterministic base restriction.
    pub fn validate(&self) -> Result<(), TheoryError> {
        self.signature().map(|_| ())
    }

    /// The operation families of all atoms, in left-to-right order.
    pub fn signature(&self) -> Result<Vec<OpFamily<S>>, TheoryError> {
        let mut atoms = Vec::new();
        self.atoms(&mut atoms);
        let mut families: Vec<OpFamily<S>> = Vec::new();
        let mut bases = 0;
        for atom in atoms {
            let fams = match atom {
                TheoryExpr::Bary => {
                    bases += 1;
                    vec![OpFamily::ConvexComb]
                }
                TheoryExpr::Semi => {
                    bases += 1;
                    vec![OpFamily::Union, OpFamily::Empty]
                }
                TheoryExpr::Exc(space) => vec![OpFamily::Raise(space.clone())],
                TheoryExpr::Reader(inputs) => {
                    if inputs.is_empty() {
                        return Err(TheoryError::BadParameter(
                            "reader needs at least one input".into(),
                        ));
                    }
                    for (k, i) in inputs.iter().enumerate() {
                        if inputs[..k].contains(i) {
                            return Err(TheoryError::BadParameter(format!(
                                "duplicate reader input `{i}`"
                            )));
                        }
                    }
                    vec![OpFamily::Read(inputs.clone())]
                }
                TheoryExpr::Writer(m) => vec![OpFamily::Write(m.clone())],
                TheoryExpr::Contract { name, factor } => {
                    if !(factor.is_positive() && *factor < S::one()) {
                        return Err(TheoryError::BadParameter(format!(
                            "contractive factor of `{name}` must lie in (0, 1), got {factor}"
                        )));
                    }
                    vec![OpFamily::Next {
                        name: name.clone(),
                        factor: factor.clone(),
                    }]
                }
                TheoryExpr::Sum(..) | TheoryExpr::Tensor(..) => unreachable!("atoms are leaves"),
            };
            for f in fams {
                if let Some(g) = families.iter().find(|g| g.overlaps(&f)) {
                    return Err(TheoryError::Overlap(format!("{g} and {f}")));
                }
                families.push(f);
            }
        }
        if bases > 1 {
            return Err(TheoryError::UnsupportedShape(
                "at most one bary or semi atom is supported".into(),
            ));
        }
        Ok(families)
    }

    /// The factor of the contractive operator `name`, if the theory has one.
    pub fn contract_factor(&self, name: &str) -> Option<&S> {
        match self {
            TheoryExpr::Contract { name: n, factor } if n == name => Some(factor),
            TheoryExpr::Sum(l, r) | TheoryExpr::Tensor(l, r) => {
                l.contract_factor(name).or_else(|| r.contract_factor(name))
            }
            _ => None,
        }
    }

    /// Names of all contractive operators.
    pub fn contracts(&self) -> Vec<(String, S)> {
        let mut atoms = Vec::new();
        self.atoms(&mut atoms);
        atoms
            .into_iter()
            .filter_map(|a| match a {
                TheoryExpr::Contract { name, factor } => Some((name.clone(), factor.clone())),
                _ => None,
            })
            .collect()
    }

    /// The writer monoid, if any.
    pub fn writer(&self) -> Option<&Monoid<S>> {
        match self {
            TheoryExpr::Writer(m) => Some(m),
            TheoryExpr::Sum(l, r) | TheoryExpr::Tensor(l, r) => l.writer().or_else(|| r.writer()),
            _ => None,
        }
    }

    /// The reader inputs, if any.
    pub fn reader(&self) -> Option<&[String]> {
        match self {
            TheoryExpr::Reader(i) => Some(i),
            TheoryExpr::Sum(l, r) | TheoryExpr::Tensor(l, r) => l.reader().or_else(|| r.reader()),
            _ => None,
        }
    }

    /// Concrete generators over the pool: one symbol per parameter value.
    pub fn generators(&self, pool: &ParamPool<S>) -> Result<Vec<OpSym<S>>, TheoryError> {
        let mut out = Vec::new();
        for fam in self.signature()? {
            out.extend(fam.instances(pool)?);
        }
        Ok(out)
    }

    /// Every axiom instance of the theory over the pool, including the
    /// commutation equations of each tensor.
    pub fn axioms(&self, pool: &ParamPool<S>) -> Result<Vec<AxiomInstance<S>>, TheoryError> {
        self.validate()?;
        let mut out = Vec::new();
        self.emit(pool, &mut out)?;
        Ok(out)
    }

    fn emit(
        &self,
        pool: &ParamPool<S>,
        out: &mut Vec<AxiomInstance<S>>,
    ) -> Result<(), TheoryError> {
        match self {
            TheoryExpr::Bary => bary_axioms(pool, out),
            TheoryExpr::Semi => {
                semi_axioms(pool, out);
                Ok(())
            }
            TheoryExpr::Exc(space) => {
                exc_axioms(space, out);
                Ok(())
            }
            TheoryExpr::Reader(inputs) => {
                reader_axioms(inputs.len(), out);
                Ok(())
            }
            TheoryExpr::Writer(m) => writer_axioms(m, pool, out),
            TheoryExpr::Contract { name, factor } => contract_axioms(name, factor, pool, out),
            TheoryExpr::Sum(l, r) => {
                l.emit(pool, out)?;
                r.emit(pool, out)
            }
            TheoryExpr::Tensor(l, r) => {
                l.emit(pool, out)?;
                r.emit(pool, out)?;
                out.extend(tensor_commutations(l, r, pool)?);
                Ok(())
            }
        }
    }

    /// The nested semantic layers of the theory's free monad.
    pub fn layer_plan(&self) -> Result<LayerPlan<S>, TheoryError> {
        self.validate()?;
        let mut summands = Vec::new();
        flatten_sum(self, &mut summands);
        let mut plan = LayerPlan::default();
        let mut rest = Vec::new();
        for s in summands {
            match s {
                TheoryExpr::Contract { name, factor } => {
                    plan.guards.insert(name.clone(), factor.clone());
                }
                other => rest.push(other),
            }
        }
        match rest.as_slice() {
            [] => {}
            [core] => plan.add_core(core)?,
            [a, b] => plan.add_base(&TheoryExpr::sum((*a).clone(), (*b).clone()))?,
            _ => {
                return Err(TheoryError::UnsupportedShape(format!(
                    "{self}: a sum may combine contracts with one tensor core or one base"
                )))
            }
        }
        Ok(plan)
    }
}

fn flatten_sum<'a, S>(th: &'a TheoryExpr<S>, out: &mut Vec<&'a TheoryExpr<S>>) {
    match th {
        TheoryExpr::Sum(l, r) => {
            flatten_sum(l, out);
            flatten_sum(r, out);
        }
        other => out.push(other),
    }
}

fn flatten_tensor<'a, S>(th: &'a TheoryExpr<S>, out: &mut Vec<&'a TheoryExpr<S>>) {
    match th {
        TheoryExpr::Tensor(l, r) => {
            flatten_tensor(l, out);
            flatten_tensor(r, out);
        }
        other => out.push(other),
    }
}

impl<S: Scalar> fmt::Display for TheoryExpr<S> {
    /// Prints in the theory surface grammar.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TheoryExpr::Bary => f.write_str("bary"),
            TheoryExpr::Semi => f.write_str("semi"),
            TheoryExpr::Exc(space) => write!(f, "exc{{{}}}", space.name()),
            TheoryExpr::Reader(inputs) => write!(f, "reader{{{}}}", inputs.join(",")),
            TheoryExpr::Writer(m) => write!(f, "writer{{{}}}", m.name()),
            TheoryExpr::Contract { name, factor } => write!(f, "contr{{{name},{factor}}}"),
            TheoryExpr::Sum(l, r) => write!(f, "sum({l}, {r})"),
            TheoryExpr::Tensor(l, r) => write!(f, "tensor({l}, {r})"),
        }
    }
}

/// A parameterized family of operation symbols contributed by one atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpFamily<S> {
    ConvexComb,
    Raise(FinMetricSpace<S>),
    Union,
    Empty,
    Read(Vec<String>),
    Write(Monoid<S>),
    Next { name: String, factor: S },
}

impl<S: Scalar> OpFamily<S> {
    fn overlaps(&self, other: &Self) -> bool {
        use OpFamily::*;
        match (self, other) {
            (Raise(a), Raise(b)) => a.points().iter().any(|p| b.contains(p)),
            (Next { name: a, .. }, Next { name: b, .. }) => a == b,
            (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
        }
    }

    /// `Ok` if the symbol belongs to this family, `Err(Some(reason))` if it has
    /// this family's shape but a bad parameter, `Err(None)` otherwise.
    pub fn admits(&self, op: &OpSym<S>) -> Result<(), Option<String>> {
        match (self, op) {
            (OpFamily::ConvexComb, OpSym::ConvexComb(e)) => {
                if e.in_unit_interval() {
                    Ok(())
                } else {
                    Err(Some(format!("conv weight {e} is outside [0,1]")))
                }
            }
            (OpFamily::Raise(space), OpSym::Raise(l)) => {
                if space.contains(l) {
                    Ok(())
                } else {
                    Err(Some(format!(
                        "`{l}` is not an exception of `{}`",
                        space.name()
                    )))
                }
            }
            (OpFamily::Union, OpSym::Union) | (OpFamily::Empty, OpSym::Empty) => Ok(()),
            (OpFamily::Read(inputs), OpSym::Read(n)) => {
                if *n == inputs.len() {
                    Ok(())
                } else {
                    Err(Some(format!(
                        "rd takes {} arguments, got {n}",
                        inputs.len()
                    )))
                }
            }
            (OpFamily::Write(m), OpSym::Write(a)) => {
                if m.contains(a) {
                    Ok(())
                } else {
                    Err(Some(format!(
                        "`{a}` is not an element of monoid `{}`",
                        m.name()
                    )))
                }
            }
            (OpFamily::Next { name, factor }, OpSym::Next { name: n, factor: c }) if name == n => {
                if factor == c {
                    Ok(())
                } else {
                    Err(Some(format!("`{name}` has factor {factor}, not {c}")))
                }
            }
            _ => Err(None),
        }
    }

    /// Concrete symbols of the family over a pool.
    pub fn instances(&self, pool: &ParamPool<S>) -> Result<Vec<OpSym<S>>, TheoryError> {
        Ok(match self {
            OpFamily::ConvexComb => pool
                .require_weights()?
                .iter()
                .cloned()
                .map(OpSym::ConvexComb)
                .collect(),
            OpFamily::Raise(space) => space.points().iter().cloned().map(OpSym::Raise).collect(),
            OpFamily::Union => vec![OpSym::Union],
            OpFamily::Empty => vec![OpSym::Empty],
            OpFamily::Read(inputs) => vec![OpSym::Read(inputs.len())],
            OpFamily::Write(m) => {
                let alphas = pool.require_alphas()?;
                for a in alphas {
                    if !m.contains(a) {
                        return Err(m.unknown(a));
                    }
                }
                alphas.iter().cloned().map(OpSym::Write).collect()
            }
            OpFamily::Next { name, factor } => vec![OpSym::Next {
                name: name.clone(),
                factor: factor.clone(),
            }],
        })
    }
}

impl<S: Scalar> fmt::Display for OpFamily<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpFamily::ConvexComb => f.write_str("conv(e) for e in [0,1]"),
            OpFamily::Raise(space) => write!(f, "raise(e) for e in {}", space.name()),
            OpFamily::Union => f.write_str("union"),
            OpFamily::Empty => f.write_str("empty"),
            OpFamily::Read(inputs) => write!(f, "rd/{}", inputs.len()),
            OpFamily::Write(m) => write!(f, "wr(a) for a in {}", m.name()),
            OpFamily::Next { name, factor } => write!(f, "{name}/<1,{factor}>"),
        }
    }
}

/// The finite sets from which schema parameters are drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamPool<S> {
    /// Convex-combination weights.
    pub weights: Vec<S>,
    /// Premise distances.
    pub epsilons: Vec<S>,
    /// Writer elements.
    pub alphas: Vec<MonoidElem<S>>,
}

impl<S: Scalar> Default for ParamPool<S> {
    fn default() -> Self {
        ParamPool {
            weights: Vec::new(),
            epsilons: Vec::new(),
            alphas: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamPool<S> {
    fn require_weights(&self) -> Result<&[S], TheoryError> {
        if self.weights.is_empty() {
            return Err(TheoryError::EmptyPool("convex-combination weights".into()));
        }
        if let Some(e) = self.weights.iter().find(|e| !e.in_unit_interval()) {
            return Err(TheoryError::BadParameter(format!(
                "weight {e} is outside [0,1]"
            )));
        }
        Ok(&self.weights)
    }

    fn require_epsilons(&self) -> Result<&[S], TheoryError> {
        if self.epsilons.is_empty() {
            return Err(TheoryError::EmptyPool("premise distances".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| e.is_negative()) {
            return Err(TheoryError::BadParameter(format!("negative distance {e}")));
        }
        Ok(&self.epsilons)
    }

    fn require_alphas(&self) -> Result<&[MonoidElem<S>], TheoryError> {
        if self.alphas.is_empty() {
            return Err(TheoryError::EmptyPool("writer elements".into()));
        }
        Ok(&self.alphas)
    }
}

/// Axiom names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    B1,
    B2,
    SC,
    SA,
    IB,
    S0,
    S1,
    S2,
    S3,
    S4,
    Raise,
    Idem,
    Diag,
    Zero,
    Mult,
    Diff,
    Lip,
    Com,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How the conclusion bound depends on the premise distances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SideCondition<S> {
    /// The bound is a constant.
    Fixed,
    /// `e * eps1 + (1 - e) * eps2`.
    Interpolate(S),
    /// `max(eps1, eps2)`.
    Max,
    /// `c * eps`.
    Lipschitz(S),
    /// `d + eps`.
    WriteShift(ExtValue<S>),
}

impl<S: Scalar> SideCondition<S> {
    /// The tight bound for the given premise distances; `fixed` is returned
    /// for [`SideCondition::Fixed`].
    pub fn bound(&self, eps: &[ExtValue<S>], fixed: &ExtValue<S>) -> ExtValue<S> {
        // Terms with a zero coefficient are dropped, so 0 * inf never arises.
        let weighted = |w: &S, v: &ExtValue<S>| {
            if w.is_zero() {
                ExtValue::zero()
            } else {
                v.scale(w).expect("positive weight")
            }
        };
        match self {
            SideCondition::Fixed => fixed.clone(),
            SideCondition::Interpolate(e) => {
                weighted(e, &eps[0]).add(&weighted(&(S::one() - e.clone()), &eps[1]))
            }
            SideCondition::Max => ExtValue::sup(eps.iter().cloned()),
            SideCondition::Lipschitz(c) => weighted(c, &eps[0]),
            SideCondition::WriteShift(d) => d.add(&eps[0]),
        }
    }
}

/// A conditional quantitative equation `premises |- lhs =_bound rhs` whose
/// premises relate variables only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxiomInstance<S> {
    pub rule: Rule,
    /// Human-readable instance name, e.g. `Mult[2,3]`.
    pub label: String,
    pub premises: Vec<(String, String, S)>,
    pub lhs: Term<S>,
    pub rhs: Term<S>,
    pub bound: ExtValue<S>,
    pub side: SideCondition<S>,
}

impl<S: Scalar> AxiomInstance<S> {
    fn equation(rule: Rule, label: String, lhs: Term<S>, rhs: Term<S>) -> Self {
        AxiomInstance {
            rule,
            label,
            premises: Vec::new(),
            lhs,
            rhs,
            bound: ExtValue::zero(),
            side: SideCondition::Fixed,
        }
    }

    /// True for premise-free equations at distance 0.
    pub fn is_zero_equation(&self) -> bool {
        self.premises.is_empty() && self.bound.is_zero()
    }

    /// The bound implied by the side condition for the given premise
    /// distances, in premise order.
    pub fn bound_for(&self, eps: &[ExtValue<S>]) -> ExtValue<S> {
        self.side.bound(eps, &self.bound)
    }
}

impl<S: Scalar> fmt::Display for AxiomInstance<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) ", self.label)?;
        if !self.premises.is_empty() {
            let ps: Vec<String> = self
                .premises
                .iter()
                .map(|(x, y, e)| format!("{x} =_{e} {y}"))
                .collect();
            write!(f, "{{{}}} ", ps.join(", "))?;
        }
        write!(f, "|- {} =_{} {}", self.lhs, self.bound, self.rhs)
    }
}

fn v<S: Scalar>(name: &str) -> Term<S> {
    Term::var(name)
}

fn bary_axioms<S: Scalar>(
    pool: &ParamPool<S>,
    out: &mut Vec<AxiomInstance<S>>,
) -> Result<(), TheoryError> {
    use Rule::*;
    let one = S::one();
    out.push(AxiomInstance::equation(
        B1,
        "B1".into(),
        Term::conv(one.clone(), v("x"), v("y")),
        v("x"),
    ));
    let weights = pool.require_weights()?;
    for e in weights {
        out.push(AxiomInstance::equation(
            B2,
            format!("B2[{e}]"),
            Term::conv(e.clone(), v("x"), v("x")),
            v("x"),
        ));
    }
    for e in weights {
        out.push(AxiomInstance::equation(
            SC,
            format!("SC[{e}]"),
            Term::conv(e.clone(), v("x"), v("y")),
            Term::conv(one.clone() - e.clone(), v("y"), v("x")),
        ));
    }
    for e in weights.iter().filter(|e| **e < one) {
        for e2 in weights.iter().filter(|e| **e < one) {
            let ee = e.clone() * e2.clone();
            let inner = (e2.clone() - ee.clone()) / (one.clone() - ee.clone());
            out.push(AxiomInstance::equation(
                SA,
                format!("SA[{e},{e2}]"),
                Term::conv(e2.clone(), Term::conv(e.clone(), v("x"), v("y")), v("z")),
                Term::conv(ee, v("x"), Term::conv(inner, v("y"), v("z"))),
            ));
        }
    }
    let eps = pool.require_epsilons()?;
    for e in weights {
        for a in eps {
            for b in eps {
                let side = SideCondition::Interpolate(e.clone());
                let bound = side.bound(
                    &[ExtValue::Fin(a.clone()), ExtValue::Fin(b.clone())],
                    &ExtValue::zero(),
                );
                out.push(AxiomInstance {
                    rule: IB,
                    label: format!("IB[{e};{a},{b}]"),
                    premises: vec![
                        ("x1".into(), "y1".into(), a.clone()),
                        ("x2".into(), "y2".into(), b.clone()),
                    ],
                    lhs: Term::conv(e.clone(), v("x1"), v("x2")),
                    rhs: Term::conv(e.clone(), v("y1"), v("y2")),
                    bound,
                    side,
                });
            }
        }
    }
    Ok(())
}

fn semi_axioms<S: Scalar>(pool: &ParamPool<S>, out: &mut Vec<AxiomInstance<S>>) {
    use Rule::*;
    out.push(AxiomInstance::equation(
        S0,
        "S0".into(),
        Term::union(v("x"), Term::empty()),
        v("x"),
    ));
    out.push(AxiomInstance::equation(
        S1,
        "S1".into(),
        Term::union(v("x"), v("x")),
        v("x"),
    ));
    out.push(AxiomInstance::equation(
        S2,
        "S2".into(),
        Term::union(v("x"), v("y")),
        Term::union(v("y"), v("x")),
    ));
    out.push(AxiomInstance::equation(
        S3,
        "S3".into(),
        Term::union(Term::union(v("x"), v("y")), v("z")),
        Term::union(v("x"), Term::union(v("y"), v("z"))),
    ));
    // S4 is derivable from non-expansiveness, so an empty distance pool
    // simply omits it.
    for a in &pool.epsilons {
        for b in &pool.epsilons {
            let bound = ExtValue::Fin(a.clone().max(b.clone()));
            out.push(AxiomInstance {
                rule: S4,
                label: format!("S4[{a},{b}]"),
                premises: vec![
                    ("x1".into(), "y1".into(), a.clone()),
                    ("x2".into(), "y2".into(), b.clone()),
                ],
                lhs: Term::union(v("x1"), v("x2")),
                rhs: Term::union(v("y1"), v("y2")),
                bound,
                side: SideCondition::Max,
            });
        }
    }
}

fn exc_axioms<S: Scalar>(space: &FinMetricSpace<S>, out: &mut Vec<AxiomInstance<S>>) {
    let pts = space.points();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = space.d(i, j);
            if d.is_inf() {
                continue;
            }
            out.push(AxiomInstance {
                rule: Rule::Raise,
                label: format!("Raise[{},{}]", pts[i], pts[j]),
                premises: Vec::new(),
                lhs: Term::raise(pts[i].clone()),
                rhs: Term::raise(pts[j].clone()),
                bound: d.clone(),
                side: SideCondition::Fixed,
            });
        }
    }
}

fn reader_axioms<S: Scalar>(n: usize, out: &mut Vec<AxiomInstance<S>>) {
    out.push(AxiomInstance::equation(
        Rule::Idem,
        "Idem".into(),
        v("x"),
        Term::rd(vec![v("x"); n]),
    ));
    let x = |i: usize, j: usize| v::<S>(&format!("x{i}_{j}"));
    let diag = Term::rd((1..=n).map(|i| x(i, i)).collect());
    let nested = Term::rd(
        (1..=n)
            .map(|i| Term::rd((1..=n).map(|j| x(i, j)).collect()))
            .collect(),
    );
    out.push(AxiomInstance::equation(
        Rule::Diag,
        "Diag".into(),
        diag,
        nested,
    ));
}

fn writer_axioms<S: Scalar>(
    m: &Monoid<S>,
    pool: &ParamPool<S>,
    out: &mut Vec<AxiomInstance<S>>,
) -> Result<(), TheoryError> {
    use Rule::*;
    out.push(AxiomInstance::equation(
        Zero,
        "Zero".into(),
        v("x"),
        Term::wr(m.unit(), v("x")),
    ));
    let alphas = pool.require_alphas()?;
    for a in alphas {
        for b in alphas {
            out.push(AxiomInstance::equation(
                Mult,
                format!("Mult[{a},{b}]"),
                Term::wr(a.clone(), Term::wr(b.clone(), v("x"))),
                Term::wr(m.mult(a, b)?, v("x")),
            ));
        }
    }
    let eps = pool.require_epsilons()?;
    for a in alphas {
        for b in alphas {
            let d = m.dist(a, b)?;
            if d.is_inf() {
                continue;
            }
            for e in eps {
                out.push(AxiomInstance {
                    rule: Diff,
                    label: format!("Diff[{a},{b};{e}]"),
                    premises: vec![("x".into(), "y".into(), e.clone())],
                    lhs: Term::wr(a.clone(), v("x")),
                    rhs: Term::wr(b.clone(), v("y")),
                    bound: d.add(&ExtValue::Fin(e.clone())),
                    side: SideCondition::WriteShift(d.clone()),
                });
            }
        }
    }
    Ok(())
}

fn contract_axioms<S: Scalar>(
    name: &str,
    factor: &S,
    pool: &ParamPool<S>,
    out: &mut Vec<AxiomInstance<S>>,
) -> Result<(), TheoryError> {
    for e in pool.require_epsilons()? {
        let side = SideCondition::Lipschitz(factor.clone());
        out.push(AxiomInstance {
            rule: Rule::Lip,
            label: format!("Lip[{name};{e}]"),
            premises: vec![("x".into(), "y".into(), e.clone())],
            lhs: Term::next(name, factor.clone(), v("x")),
            rhs: Term::next(name, factor.clone(), v("y")),
            bound: side.bound(&[ExtValue::Fin(e.clone())], &ExtValue::zero()),
            side,
        });
    }
    Ok(())
}

/// The commutation equations of `tensor(left, right)`: one per pair of a
/// left generator `f` and a right generator `g`.
pub fn tensor_commutations<S: Scalar>(
    left: &TheoryExpr<S>,
    right: &TheoryExpr<S>,
    pool: &ParamPool<S>,
) -> Result<Vec<AxiomInstance<S>>, TheoryError> {
    let gs = right.generators(pool)?;
    Ok(left
        .generators(pool)?
        .iter()
        .flat_map(|f| gs.iter().map(move |g| commutation(f, g)))
        .collect())
}

/// `f(g(x1_1..x1_m), .., g(xn_1..xn_m)) =_0 g(f(x1_1..xn_1), .., f(x1_m..xn_m))`.
fn commutation<S: Scalar>(f: &OpSym<S>, g: &OpSym<S>) -> AxiomInstance<S> {
    let (n, m) = (f.arity(), g.arity());
    let x = |i: usize, j: usize| v::<S>(&format!("x{i}_{j}"));
    let lhs = Term::App(
        f.clone(),
        (1..=n)
            .map(|i| Term::App(g.clone(), (1..=m).map(|j| x(i, j)).collect()))
            .collect(),
    );
    let rhs = Term::App(
        g.clone(),
        (1..=m)
            .map(|j| Term::App(f.clone(), (1..=n).map(|i| x(i, j)).collect()))
            .collect(),
    );
    AxiomInstance::equation(Rule::Com, format!("Com[{f}/{g}]"), lhs, rhs)
}

/// Branching structure of the free monad's middle layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branching {
    Dist,
    Set,
}

/// One semantic layer, outermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer<S> {
    Reader(Vec<String>),
    Dist,
    Set,
    Pair(Monoid<S>),
}

/// The concrete shape of a supported free monad:
/// `Reader? > (Dist | Set)? > leaves`, where leaves are exceptions, or
/// guards and variables optionally paired with a writer element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan<S> {
    pub reader: Option<Vec<String>>,
    pub branching: Option<Branching>,
    pub writer: Option<Monoid<S>>,
    pub exceptions: Option<FinMetricSpace<S>>,
    /// Contractive operators by name.
    pub guards: BTreeMap<String, S>,
}

impl<S> Default for LayerPlan<S> {
    fn default() -> Self {
        LayerPlan {
            reader: None,
            branching: None,
            writer: None,
            exceptions: None,
            guards: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> LayerPlan<S> {
    fn add_core(&mut self, core: &TheoryExpr<S>) -> Result<(), TheoryError> {
        let mut factors = Vec::new();
        flatten_tensor(core, &mut factors);
        let mut base_seen = false;
        for f in factors {
            match f {
                TheoryExpr::Reader(i) => self.reader = Some(i.clone()),
                TheoryExpr::Writer(m) => self.writer = Some(m.clone()),
                other => {
                    if base_seen {
                        return Err(TheoryError::UnsupportedShape(format!(
                            "{core}: a tensor may contain one base theory besides readers and writers"
                        )));
                    }
                    base_seen = true;
                    self.add_base(other)?;
                }
            }
        }
        Ok(())
    }

    fn add_base(&mut self, base: &TheoryExpr<S>) -> Result<(), TheoryError> {
        let unsupported = || {
            TheoryError::UnsupportedShape(format!(
                "{base} is not bary, semi, exc, or a sum of bary/semi with exc"
            ))
        };
        let mut parts = Vec::new();
        flatten_sum(base, &mut parts);
        let mut branching_seen = false;
        let mut exc_seen = false;
        for p in parts {
            match p {
                TheoryExpr::Bary | TheoryExpr::Semi if !branching_seen => {
                    branching_seen = true;
                    self.branching = Some(if matches!(p, TheoryExpr::Bary) {
                        Branching::Dist
                    } else {
                        Branching::Set
                    });
                }
                TheoryExpr::Exc(space) if !exc_seen => {
                    exc_seen = true;
                    self.exceptions = Some(space.clone());
                }
                _ => return Err(unsupported()),
            }
        }
        Ok(())
    }

    /// Layers outermost first.
    pub fn layers(&self) -> Vec<Layer<S>> {
        let mut out = Vec::new();
        if let Some(i) = &self.reader {
            out.push(Layer::Reader(i.clone()));
        }
        match self.branching {
            Some(Branching::Dist) => out.push(Layer::Dist),
            Some(Branching::Set) => out.push(Layer::Set),
            None => {}
        }
        if let Some(m) = &self.writer {
            out.push(Layer::Pair(m.clone()));
        }
        out
    }

    pub fn has_guard(&self) -> bool {
        !self.guards.is_empty()
    }

    pub fn guard_factor(&self, name: &str) -> Option<&S> {
        self.guards.get(name)
    }
}

impl<S: Scalar> fmt::Display for LayerPlan<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for layer in self.layers() {
            match layer {
                Layer::Reader(i) => write!(f, "Reader{{{}}} > ", i.join(","))?,
                Layer::Dist => f.write_str("Dist > ")?,
                Layer::Set => f.write_str("Set > ")?,
                Layer::Pair(m) => write!(f, "Pair({}) > ", m.name())?,
            }
        }
        let mut leaves: Vec<String> = self
            .guards
            .iter()
            .map(|(n, c)| format!("Guard[{n}]({c})"))
            .collect();
        if let Some(e) = &self.exceptions {
            leaves.push(format!("Exc({})", e.name()));
        }
        leaves.push("Var".into());
        write!(f, "{{{}}}", leaves.join(", "))
    }
}
