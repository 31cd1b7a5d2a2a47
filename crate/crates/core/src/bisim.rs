//! Finite coalgebras, the discounted bisimilarity operator, its certified
//! fixed point, and the passage between terms and coalgebras.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::ext::ExtValue;
use crate::scalar::Scalar;
use crate::semantics::{denote, Mode, SemError, SemValue};
use crate::sigterm::{MonoidElem, Term, DEFAULT_NEXT};
use crate::spaces::{kantorovich_by, FinMetricSpace, SpaceError};
use crate::theory::{Branching, Monoid, TheoryError, TheoryExpr, UNIT_EXC};

/// Variable standing for a cut continuation in approximations of Mealy
/// machines and MDPs, which have no terminating constant.
pub const CUT_VAR: &str = "stop";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BisimError {
    #[error("invalid coalgebra: {0}")]
    Invalid(String),
    #[error("coalgebras are not compatible: {0}")]
    Incompatible(String),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, BisimError> {
    Err(BisimError::Invalid(msg.into()))
}

/// Where a transition leads.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    State(usize),
    /// Termination, carrying the deficit of a sub-probability.
    Bot,
    /// A terminal state labelled by a point of the exit space.
    Exit(String),
}

/// A probability row: canonical, sorted by target, positive weights.
pub type Row<S> = Vec<(Target, S)>;

/// Transition structure of each kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dynamics<S> {
    /// `X -> Pi(c X + 1)`.
    Mp(Vec<Row<S>>),
    /// `X -> Pi(c X + 1)^A`, rows indexed `[state][action]`.
    Lmp {
        actions: Vec<String>,
        rows: Vec<Vec<Row<S>>>,
    },
    /// `X -> (c X [] L)^I`.
    Mealy {
        inputs: Vec<String>,
        monoid: Monoid<S>,
        rows: Vec<Vec<(Target, MonoidElem<S>)>>,
    },
    /// `X -> Pi(c X [] Q)^A`, support entries `(target, reward, prob)`.
    Mdp {
        actions: Vec<String>,
        rows: Vec<Vec<Vec<(Target, S, S)>>>,
    },
}

/// A finite coalgebra with discount factor `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coalgebra<S> {
    pub name: String,
    pub c: S,
    pub states: Vec<String>,
    /// Labels of terminal states, if any transition exits.
    pub exits: Option<FinMetricSpace<S>>,
    pub dynamics: Dynamics<S>,
}

fn canonical_row<S: Scalar>(row: Vec<(Target, S)>) -> Row<S> {
    let mut m: BTreeMap<Target, S> = BTreeMap::new();
    for (t, p) in row {
        let e = m.entry(t).or_insert_with(S::zero);
        *e = e.clone() + p;
    }
    m.into_iter().filter(|(_, p)| !p.is_zero()).collect()
}

fn canonical_mdp_row<S: Scalar>(row: Vec<(Target, S, S)>) -> Vec<(Target, S, S)> {
    let mut m: BTreeMap<(Target, S), S> = BTreeMap::new();
    for (t, r, p) in row {
        let e = m.entry((t, r)).or_insert_with(S::zero);
        *e = e.clone() + p;
    }
    m.into_iter()
        .filter(|(_, p)| !p.is_zero())
        .map(|((t, r), p)| (t, r, p))
        .collect()
}

impl<S: Scalar> Coalgebra<S> {
    /// Canonicalizes rows and checks every invariant.
    pub fn new(
        name: impl Into<String>,
        c: S,
        states: Vec<String>,
        exits: Option<FinMetricSpace<S>>,
        dynamics: Dynamics<S>,
    ) -> Result<Self, BisimError> {
        let dynamics = match dynamics {
            Dynamics::Mp(rows) => Dynamics::Mp(rows.into_iter().map(canonical_row).collect()),
            Dynamics::Lmp { actions, rows } => Dynamics::Lmp {
                actions,
                rows: rows
                    .into_iter()
                    .map(|r| r.into_iter().map(canonical_row).collect())
                    .collect(),
            },
            Dynamics::Mdp { actions, rows } => Dynamics::Mdp {
                actions,
                rows: rows
                    .into_iter()
                    .map(|r| r.into_iter().map(canonical_mdp_row).collect())
                    .collect(),
            },
            m @ Dynamics::Mealy { .. } => m,
        };
        let coalg = Coalgebra {
            name: name.into(),
            c,
            states,
            exits,
            dynamics,
        };
        coalg.validate()?;
        Ok(coalg)
    }

    pub fn validate(&self) -> Result<(), BisimError> {
        if !(self.c.is_positive() && self.c < S::one()) {
            return invalid(format!("discount {} is outside (0, 1)", self.c));
        }
        if self.states.is_empty() {
            return invalid("no states");
        }
        for (k, s) in self.states.iter().enumerate() {
            if self.states[..k].contains(s) {
                return invalid(format!("duplicate state `{s}`"));
            }
        }
        let n = self.states.len();
        let check_target = |t: &Target, bot_ok: bool| -> Result<(), BisimError> {
            match t {
                Target::State(i) if *i >= n => invalid(format!("state index {i} out of range")),
                Target::Bot if !bot_ok => invalid("this kind has no termination"),
                Target::Exit(x) => match &self.exits {
                    Some(space) if space.contains(x) => Ok(()),
                    Some(space) => {
                        invalid(format!("exit `{x}` is not in space `{}`", space.name()))
                    }
                    None => invalid(format!("exit `{x}` without an exit space")),
                },
                _ => Ok(()),
            }
        };
        let check_prob = |ps: &mut dyn Iterator<Item = &S>, at: &str| -> Result<(), BisimError> {
            let mut total = S::zero();
            for p in ps {
                if !p.is_positive() {
                    return invalid(format!("non-positive probability {p} in {at}"));
                }
                total = total + p.clone();
            }
            if total != S::one() {
                return invalid(format!("probabilities of {at} sum to {total}, not 1"));
            }
            Ok(())
        };
        let check_labels = |labels: &[String], what: &str| -> Result<(), BisimError> {
            if labels.is_empty() {
                return invalid(format!("no {what}"));
            }
            for (k, a) in labels.iter().enumerate() {
                if labels[..k].contains(a) {
                    return invalid(format!("duplicate {what} `{a}`"));
                }
            }
            Ok(())
        };
        let rows_len = |len: usize| {
            if len == n {
                Ok(())
            } else {
                invalid(format!("{len} transition rows for {n} states"))
            }
        };
        match &self.dynamics {
            Dynamics::Mp(rows) => {
                rows_len(rows.len())?;
                for (s, row) in rows.iter().enumerate() {
                    row.iter().try_for_each(|(t, _)| check_target(t, true))?;
                    check_prob(
                        &mut row.iter().map(|(_, p)| p),
                        &format!("state `{}`", self.states[s]),
                    )?;
                }
            }
            Dynamics::Lmp { actions, rows } => {
                check_labels(actions, "actions")?;
                rows_len(rows.len())?;
                for (s, per) in rows.iter().enumerate() {
                    if per.len() != actions.len() {
                        return invalid(format!(
                            "state `{}` lacks a row per action",
                            self.states[s]
                        ));
                    }
                    for (a, row) in per.iter().enumerate() {
                        row.iter().try_for_each(|(t, _)| check_target(t, true))?;
                        let at = format!("state `{}` on `{}`", self.states[s], actions[a]);
                        check_prob(&mut row.iter().map(|(_, p)| p), &at)?;
                    }
                }
            }
            Dynamics::Mealy {
                inputs,
                monoid,
                rows,
            } => {
                check_labels(inputs, "inputs")?;
                rows_len(rows.len())?;
                for (s, per) in rows.iter().enumerate() {
                    if per.len() != inputs.len() {
                        return invalid(format!(
                            "state `{}` lacks a row per input",
                            self.states[s]
                        ));
                    }
                    for (t, out) in per {
                        check_target(t, false)?;
                        if !monoid.contains(out) {
                            return invalid(format!(
                                "output `{out}` is not in monoid `{}`",
                                monoid.name()
                            ));
                        }
                    }
                }
            }
            Dynamics::Mdp { actions, rows } => {
                check_labels(actions, "actions")?;
                rows_len(rows.len())?;
                for (s, per) in rows.iter().enumerate() {
                    if per.len() != actions.len() {
                        return invalid(format!(
                            "state `{}` lacks a row per action",
                            self.states[s]
                        ));
                    }
                    for (a, row) in per.iter().enumerate() {
                        row.iter()
                            .try_for_each(|(t, _, _)| check_target(t, false))?;
                        let at = format!("state `{}` on `{}`", self.states[s], actions[a]);
                        check_prob(&mut row.iter().map(|(_, _, p)| p), &at)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self.dynamics {
            Dynamics::Mp(_) => "mp",
            Dynamics::Lmp { .. } => "lmp",
            Dynamics::Mealy { .. } => "mealy",
            Dynamics::Mdp { .. } => "mdp",
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_index(&self, name: &str) -> Result<usize, BisimError> {
        self.states
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| BisimError::UnknownState(name.to_string()))
    }

    /// The ground-metric mode used when the caller does not choose one:
    /// bounded for probabilistic kinds, extended for Mealy machines, whose
    /// operator takes no 1-bounded functions.
    pub fn default_mode(&self) -> Mode {
        match self.dynamics {
            Dynamics::Mealy { .. } => Mode::Extended,
            _ => Mode::Bounded,
        }
    }

    /// The theory whose closed terms describe this kind of coalgebra, with
    /// contractive operator `next` of factor `c`.
    pub fn theory(&self) -> TheoryExpr<S> {
        let c = self.c.clone();
        match &self.dynamics {
            Dynamics::Mp(_) => TheoryExpr::markov_process(c),
            Dynamics::Lmp { actions, .. } => {
                TheoryExpr::labelled_markov_process(actions.clone(), c)
            }
            Dynamics::Mealy { inputs, monoid, .. } => {
                TheoryExpr::mealy(inputs.clone(), monoid.clone(), c)
            }
            Dynamics::Mdp { actions, .. } => TheoryExpr::mdp(actions.clone(), c),
        }
    }

    /// Places `other`'s states after this one's, prefixing names with `l.`
    /// and `r.`. Returns the union and the offset of `other`'s states.
    pub fn disjoint_union(&self, other: &Self) -> Result<(Self, usize), BisimError> {
        if self.c != other.c {
            return Err(BisimError::Incompatible(format!(
                "discounts {} and {}",
                self.c, other.c
            )));
        }
        let exits = match (&self.exits, &other.exits) {
            (Some(a), Some(b)) if a != b => {
                return Err(BisimError::Incompatible("different exit spaces".into()))
            }
            (a, b) => a.clone().or_else(|| b.clone()),
        };
        let off = self.len();
        let shift = |t: &Target| match t {
            Target::State(i) => Target::State(i + off),
            t => t.clone(),
        };
        let shift_row = |row: &Row<S>| {
            row.iter()
                .map(|(t, p)| (shift(t), p.clone()))
                .collect::<Vec<_>>()
        };
        let dynamics = match (&self.dynamics, &other.dynamics) {
            (Dynamics::Mp(a), Dynamics::Mp(b)) => {
                Dynamics::Mp(a.iter().cloned().chain(b.iter().map(shift_row)).collect())
            }
            (
                Dynamics::Lmp { actions, rows: a },
                Dynamics::Lmp {
                    actions: act2,
                    rows: b,
                },
            ) if actions == act2 => Dynamics::Lmp {
                actions: actions.clone(),
                rows: a
                    .iter()
                    .cloned()
                    .chain(b.iter().map(|per| per.iter().map(shift_row).collect()))
                    .collect(),
            },
            (
                Dynamics::Mealy {
                    inputs,
                    monoid,
                    rows: a,
                },
                Dynamics::Mealy {
                    inputs: in2,
                    monoid: m2,
                    rows: b,
                },
            ) if inputs == in2 && monoid == m2 => Dynamics::Mealy {
                inputs: inputs.clone(),
                monoid: monoid.clone(),
                rows: a
                    .iter()
                    .cloned()
                    .chain(
                        b.iter()
                            .map(|per| per.iter().map(|(t, o)| (shift(t), o.clone())).collect()),
                    )
                    .collect(),
            },
            (
                Dynamics::Mdp { actions, rows: a },
                Dynamics::Mdp {
                    actions: act2,
                    rows: b,
                },
            ) if actions == act2 => Dynamics::Mdp {
                actions: actions.clone(),
                rows: a
                    .iter()
                    .cloned()
                    .chain(b.iter().map(|per| {
                        per.iter()
                            .map(|row| {
                                row.iter()
                                    .map(|(t, r, p)| (shift(t), r.clone(), p.clone()))
                                    .collect()
                            })
                            .collect()
                    }))
                    .collect(),
            },
            _ => {
                return Err(BisimError::Incompatible(format!(
                    "{} and {} coalgebras with different labels",
                    self.kind_name(),
                    other.kind_name()
                )))
            }
        };
        let states = self
            .states
            .iter()
            .map(|s| format!("l.{s}"))
            .chain(other.states.iter().map(|s| format!("r.{s}")))
            .collect();
        let union = Coalgebra::new(
            format!("{}+{}", self.name, other.name),
            self.c.clone(),
            states,
            exits,
            dynamics,
        )?;
        Ok((union, off))
    }
}

impl<S: Scalar> fmt::Display for Coalgebra<S> {
    /// Prints in the coalgebra file format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let target = |t: &Target| match t {
            Target::State(i) => self.states[*i].clone(),
            Target::Bot => "bot".to_string(),
            Target::Exit(x) => format!("exit({x})"),
        };
        let prob_row = |row: &Row<S>| {
            row.iter()
                .map(|(t, p)| format!("{p} -> {}", target(t)))
                .collect::<Vec<_>>()
                .join(", ")
        };
        writeln!(f, "{} {} {{", self.kind_name(), self.name)?;
        writeln!(f, "  c = {};", self.c)?;
        if let Some(x) = &self.exits {
            writeln!(f, "  exits = {};", x.name())?;
        }
        match &self.dynamics {
            Dynamics::Mp(rows) => {
                for (s, row) in rows.iter().enumerate() {
                    writeln!(f, "  state {}: {};", self.states[s], prob_row(row))?;
                }
            }
            Dynamics::Lmp { actions, rows } => {
                writeln!(f, "  actions: {};", actions.join(", "))?;
                for (s, per) in rows.iter().enumerate() {
                    write!(f, "  state {}:", self.states[s])?;
                    for (a, row) in per.iter().enumerate() {
                        write!(f, " on {}: {};", actions[a], prob_row(row))?;
                    }
                    writeln!(f)?;
                }
            }
            Dynamics::Mealy {
                inputs,
                monoid,
                rows,
            } => {
                writeln!(f, "  inputs: {};", inputs.join(", "))?;
                writeln!(f, "  monoid = {};", monoid.name())?;
                for (s, per) in rows.iter().enumerate() {
                    write!(f, "  state {}:", self.states[s])?;
                    for (i, (t, out)) in per.iter().enumerate() {
                        write!(f, " on {} -> ({}, {});", inputs[i], target(t), out)?;
                    }
                    writeln!(f)?;
                }
            }
            Dynamics::Mdp { actions, rows } => {
                writeln!(f, "  actions: {};", actions.join(", "))?;
                for (s, per) in rows.iter().enumerate() {
                    write!(f, "  state {}:", self.states[s])?;
                    for (a, row) in per.iter().enumerate() {
                        let body: Vec<String> = row
                            .iter()
                            .map(|(t, r, p)| format!("{p} -> ({}, {r})", target(t)))
                            .collect();
                        write!(f, " on {}: {};", actions[a], body.join(", "))?;
                    }
                    writeln!(f)?;
                }
            }
        }
        f.write_str("}\n")
    }
}

/// A symmetric table of extended distances between states with zero
/// diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoMetric<S> {
    n: usize,
    table: Vec<ExtValue<S>>,
}

impl<S: Scalar> PseudoMetric<S> {
    pub fn zero(n: usize) -> Self {
        PseudoMetric {
            n,
            table: vec![ExtValue::zero(); n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> &ExtValue<S> {
        &self.table[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: ExtValue<S>) {
        self.table[i * self.n + j] = v.clone();
        self.table[j * self.n + i] = v;
    }

    /// `sup |d(i,j) - e(i,j)|` over pairs finite in both; pairs infinite in
    /// exactly one make the distance infinite.
    pub fn sup_dist(&self, other: &Self) -> ExtValue<S> {
        ExtValue::sup(
            self.table
                .iter()
                .zip(&other.table)
                .map(|(a, b)| match (a, b) {
                    (ExtValue::Inf, ExtValue::Inf) => ExtValue::zero(),
                    (ExtValue::Fin(x), ExtValue::Fin(y)) => {
                        ExtValue::Fin((x.clone() - y.clone()).abs())
                    }
                    _ => ExtValue::Inf,
                }),
        )
    }

    /// Checks zero diagonal, symmetry and the triangle inequality up to
    /// `slack`, returning the first violation.
    pub fn check_pseudometric(&self, slack: &S) -> Result<(), String> {
        let n = self.n;
        for i in 0..n {
            if !self.get(i, i).is_zero() {
                return Err(format!("d({i},{i}) = {}", self.get(i, i)));
            }
            for j in 0..n {
                if self.get(i, j) != self.get(j, i) {
                    return Err(format!("asymmetric at ({i},{j})"));
                }
                for k in 0..n {
                    let via = self
                        .get(i, k)
                        .add(self.get(k, j))
                        .add(&ExtValue::Fin(slack.clone()));
                    if *self.get(i, j) > via {
                        return Err(format!("triangle fails at ({i},{k},{j})"));
                    }
                }
            }
        }
        Ok(())
    }
}

struct Ground<'a, S> {
    c: &'a S,
    exits: Option<&'a FinMetricSpace<S>>,
    d: &'a PseudoMetric<S>,
}

impl<S: Scalar> Ground<'_, S> {
    /// Untruncated distance between transition targets.
    fn target(&self, a: &Target, b: &Target) -> ExtValue<S> {
        match (a, b) {
            (Target::State(i), Target::State(j)) => {
                self.d.get(*i, *j).scale(self.c).expect("c > 0")
            }
            (Target::Bot, Target::Bot) => ExtValue::zero(),
            (Target::Exit(x), Target::Exit(y)) => self
                .exits
                .expect("validated exits")
                .dist(x, y)
                .expect("validated exits"),
            _ => ExtValue::Inf,
        }
    }
}

fn finish<S: Scalar>(d: ExtValue<S>, mode: Mode) -> ExtValue<S> {
    match mode {
        Mode::Extended => d,
        Mode::Bounded => d.truncate(),
    }
}

fn kantorovich_rows<S: Scalar, T>(
    a: &[T],
    b: &[T],
    weight: impl Fn(&T) -> S,
    ground: impl Fn(&T, &T) -> ExtValue<S>,
) -> ExtValue<S> {
    let aw: Vec<S> = a.iter().map(&weight).collect();
    let bw: Vec<S> = b.iter().map(&weight).collect();
    kantorovich_by(&aw, &bw, |i, j| Ok::<_, SpaceError>(ground(&a[i], &b[j])))
        .expect("rows have mass 1")
}

/// One application of the bisimilarity operator of the coalgebra's kind.
pub fn psi_step<S: Scalar>(
    coalg: &Coalgebra<S>,
    d: &PseudoMetric<S>,
    mode: Mode,
) -> PseudoMetric<S> {
    let n = coalg.len();
    assert_eq!(d.len(), n, "metric size differs from the state count");
    let ground = Ground {
        c: &coalg.c,
        exits: coalg.exits.as_ref(),
        d,
    };
    let pair = |i: usize, j: usize| -> ExtValue<S> {
        match &coalg.dynamics {
            Dynamics::Mp(rows) => kantorovich_rows(
                &rows[i],
                &rows[j],
                |e| e.1.clone(),
                |x, y| finish(ground.target(&x.0, &y.0), mode),
            ),
            Dynamics::Lmp { rows, .. } => {
                ExtValue::sup(rows[i].iter().zip(&rows[j]).map(|(a, b)| {
                    kantorovich_rows(
                        a,
                        b,
                        |e| e.1.clone(),
                        |x, y| finish(ground.target(&x.0, &y.0), mode),
                    )
                }))
            }
            Dynamics::Mealy { monoid, rows, .. } => {
                ExtValue::sup(rows[i].iter().zip(&rows[j]).map(|((t, a), (u, b))| {
                    let out = monoid.dist(a, b).expect("validated outputs");
                    finish(ground.target(t, u).add(&out), mode)
                }))
            }
            Dynamics::Mdp { rows, .. } => {
                ExtValue::sup(rows[i].iter().zip(&rows[j]).map(|(a, b)| {
                    kantorovich_rows(
                        a,
                        b,
                        |e| e.2.clone(),
                        |x, y| {
                            let reward = ExtValue::Fin((x.1.clone() - y.1.clone()).abs());
                            finish(ground.target(&x.0, &y.0).add(&reward), mode)
                        },
                    )
                }))
            }
        }
    };
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let values: Vec<ExtValue<S>> = pairs.par_iter().map(|&(i, j)| pair(i, j)).collect();
    let mut out = PseudoMetric::zero(n);
    for ((i, j), v) in pairs.into_iter().zip(values) {
        out.set(i, j, v);
    }
    out
}

/// Convergence evidence for [`solve_bisim`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate<S> {
    /// Number of operator applications `k` producing the returned iterate.
    pub iterations: usize,
    /// `c^k / (1 - c) * ||d_1 - d_0||`, bounding the distance to the fixed
    /// point.
    pub apriori_bound: S,
    /// `||d_k - Psi(d_k)||`.
    pub residual: ExtValue<S>,
    /// The iterate is a fixed point.
    pub exact: bool,
    /// Pairs at infinite distance, found by propagation before iterating.
    pub infinite_pairs: usize,
}

/// Iterates the operator from the zero metric until the a-priori Banach
/// bound drops to `tol`, or an exact fixed point is reached.
///
/// In extended mode, pairs whose distance is infinite are found first by
/// propagating infeasibility of finite couplings; they are reported as `inf`
/// and excluded from the norms.
pub fn solve_bisim<S: Scalar>(
    coalg: &Coalgebra<S>,
    tol: &S,
    mode: Mode,
) -> Result<(PseudoMetric<S>, Certificate<S>), BisimError> {
    if !tol.is_positive() {
        return Err(BisimError::BadTolerance);
    }
    let n = coalg.len();
    let c = &coalg.c;
    let mut d0 = PseudoMetric::zero(n);
    let mut infinite_pairs = 0;
    if mode == Mode::Extended {
        loop {
            let next = psi_step(coalg, &d0, mode);
            let mut changed = false;
            for i in 0..n {
                for j in i + 1..n {
                    if next.get(i, j).is_inf() && !d0.get(i, j).is_inf() {
                        d0.set(i, j, ExtValue::Inf);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        infinite_pairs = (0..n)
            .map(|i| (i + 1..n).filter(|&j| d0.get(i, j).is_inf()).count())
            .sum();
    }
    let d1 = psi_step(coalg, &d0, mode);
    let delta = d1
        .sup_dist(&d0)
        .into_finite()
        .expect("infinite pairs were fixed beforehand");
    let one_minus_c = S::one() - c.clone();
    let mut ck = c.clone();
    let mut d = d1;
    let mut k = 1;
    let mut exact = d == d0;
    while !exact && ck.clone() * delta.clone() / one_minus_c.clone() > *tol {
        let next = psi_step(coalg, &d, mode);
        exact = next == d;
        d = next;
        k += 1;
        ck = ck * c.clone();
    }
    let after = psi_step(coalg, &d, mode);
    let residual = after.sup_dist(&d);
    let exact = exact || after == d;
    Ok((
        d,
        Certificate {
            iterations: k,
            apriori_bound: ck * delta / one_minus_c,
            residual,
            exact,
            infinite_pairs,
        },
    ))
}

/// The coalgebra of a closed term: states are the term's denotation and,
/// recursively, every guarded continuation inside it. Variables become exits
/// into `exits`. Returns the coalgebra and the root state (always 0).
pub fn unfold_term<S: Scalar>(
    term: &Term<S>,
    theory: &TheoryExpr<S>,
    exits: Option<&FinMetricSpace<S>>,
) -> Result<(Coalgebra<S>, usize), BisimError> {
    let plan = theory.layer_plan()?;
    let unsupported = |why: &str| {
        Err(BisimError::Theory(TheoryError::UnsupportedShape(format!(
            "{theory}: {why}"
        ))))
    };
    if plan.guards.len() != 1 {
        return unsupported("unfolding needs exactly one contractive operator");
    }
    let (guard_name, c) = plan
        .guards
        .iter()
        .next()
        .map(|(n, c)| (n.clone(), c.clone()))
        .unwrap();
    if let Some(e) = &plan.exceptions {
        if e.len() != 1 {
            return unsupported("only a single termination exception is supported");
        }
    }
    enum Kind {
        Mp,
        Lmp,
        Mealy,
        Mdp,
    }
    let kind = match (&plan.reader, plan.branching, &plan.writer) {
        (None, Some(Branching::Dist), None) => Kind::Mp,
        (Some(_), Some(Branching::Dist), None) => Kind::Lmp,
        (Some(_), None, Some(_)) if plan.exceptions.is_none() => Kind::Mealy,
        (Some(_), Some(Branching::Dist), Some(Monoid::Rationals)) if plan.exceptions.is_none() => {
            Kind::Mdp
        }
        _ => return unsupported("no coalgebra kind matches this layer plan"),
    };
    let root = denote(term, theory)?;

    // discover states breadth-first
    let mut index: HashMap<SemValue<S>, usize> = HashMap::new();
    let mut values: Vec<SemValue<S>> = Vec::new();
    let mut queue = VecDeque::new();
    index.insert(root.clone(), 0);
    values.push(root.clone());
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        for g in v.guards() {
            if !index.contains_key(g) {
                index.insert(g.clone(), values.len());
                values.push(g.clone());
                queue.push_back(g.clone());
            }
        }
    }

    let shape = |what: &str| BisimError::Sem(SemError::Shape(what.to_string()));
    let target = |leaf: &SemValue<S>| -> Result<Target, BisimError> {
        match leaf {
            SemValue::Guard { name, inner, .. } if *name == guard_name => {
                Ok(Target::State(index[&**inner]))
            }
            SemValue::Exc(e) if e == UNIT_EXC || plan.exceptions.is_some() => Ok(Target::Bot),
            SemValue::Var(x) => match exits {
                Some(space) if space.contains(x) => Ok(Target::Exit(x.clone())),
                Some(space) => Err(BisimError::Space(SpaceError::UnknownPoint {
                    space: space.name().to_string(),
                    point: x.clone(),
                })),
                None => Err(BisimError::Invalid(format!(
                    "variable `{x}` without an exit space"
                ))),
            },
            _ => Err(shape("unexpected leaf")),
        }
    };
    let dist_row = |v: &SemValue<S>| -> Result<Row<S>, BisimError> {
        match v {
            SemValue::Dist(m) => m.iter().map(|(l, p)| Ok((target(l)?, p.clone()))).collect(),
            _ => Err(shape("expected a distribution")),
        }
    };
    let func = |v: &SemValue<S>| -> Result<Vec<SemValue<S>>, BisimError> {
        match v {
            SemValue::Func(f) => Ok(f.iter().map(|(_, x)| x.clone()).collect()),
            _ => Err(shape("expected a function")),
        }
    };
    let states: Vec<String> = (0..values.len()).map(|k| format!("s{k}")).collect();
    let dynamics = match kind {
        Kind::Mp => Dynamics::Mp(values.iter().map(dist_row).collect::<Result<_, _>>()?),
        Kind::Lmp => Dynamics::Lmp {
            actions: plan.reader.clone().unwrap(),
            rows: values
                .iter()
                .map(|v| func(v)?.iter().map(dist_row).collect())
                .collect::<Result<_, _>>()?,
        },
        Kind::Mealy => Dynamics::Mealy {
            inputs: plan.reader.clone().unwrap(),
            monoid: plan.writer.clone().unwrap(),
            rows: values
                .iter()
                .map(|v| {
                    func(v)?
                        .iter()
                        .map(|leaf| match leaf {
                            SemValue::Pair(a, l) => Ok((target(l)?, a.clone())),
                            _ => Err(shape("expected an output pair")),
                        })
                        .collect()
                })
                .collect::<Result<_, _>>()?,
        },
        Kind::Mdp => Dynamics::Mdp {
            actions: plan.reader.clone().unwrap(),
            rows: values
                .iter()
                .map(|v| {
                    func(v)?
                        .iter()
                        .map(|d| match d {
                            SemValue::Dist(m) => m
                                .iter()
                                .map(|(leaf, p)| match leaf {
                                    SemValue::Pair(MonoidElem::Num(r), l) => {
                                        Ok((target(l)?, r.clone(), p.clone()))
                                    }
                                    _ => Err(shape("expected a reward pair")),
                                })
                                .collect(),
                            _ => Err(shape("expected a distribution")),
                        })
                        .collect()
                })
                .collect::<Result<_, _>>()?,
        },
    };
    let coalg = Coalgebra::new("unfold", c, states, exits.cloned(), dynamics)?;
    Ok((coalg, 0))
}

/// The depth-`k` unfolding of state `s0` as a term of [`Coalgebra::theory`].
/// Continuations below depth `k` are cut to `raise(*)`, or to the variable
/// [`CUT_VAR`] for kinds without termination.
pub fn approx_term<S: Scalar>(coalg: &Coalgebra<S>, s0: usize, k: usize) -> Term<S> {
    let c = coalg.c.clone();
    let cut = || match coalg.dynamics {
        Dynamics::Mp(_) | Dynamics::Lmp { .. } => Term::raise(UNIT_EXC),
        _ => Term::var(CUT_VAR),
    };
    let mut memo: Vec<Term<S>> = vec![cut(); coalg.len()];
    for _ in 0..k {
        let prev = memo;
        let leaf = |t: &Target| match t {
            Target::State(j) => Term::next(DEFAULT_NEXT, c.clone(), prev[*j].clone()),
            Target::Bot => Term::raise(UNIT_EXC),
            Target::Exit(x) => Term::var(x.clone()),
        };
        memo = (0..coalg.len())
            .map(|s| match &coalg.dynamics {
                Dynamics::Mp(rows) => {
                    convex_chain(rows[s].iter().map(|(t, p)| (leaf(t), p.clone())).collect())
                }
                Dynamics::Lmp { rows, .. } => Term::rd(
                    rows[s]
                        .iter()
                        .map(|row| {
                            convex_chain(row.iter().map(|(t, p)| (leaf(t), p.clone())).collect())
                        })
                        .collect(),
                ),
                Dynamics::Mealy { rows, .. } => Term::rd(
                    rows[s]
                        .iter()
                        .map(|(t, out)| Term::wr(out.clone(), leaf(t)))
                        .collect(),
                ),
                Dynamics::Mdp { rows, .. } => Term::rd(
                    rows[s]
                        .iter()
                        .map(|row| {
                            convex_chain(
                                row.iter()
                                    .map(|(t, r, p)| {
                                        (Term::wr(MonoidElem::Num(r.clone()), leaf(t)), p.clone())
                                    })
                                    .collect(),
                            )
                        })
                        .collect(),
                ),
            })
            .collect();
    }
    memo.swap_remove(s0)
}

/// `conv(p1, t1, conv(p2 / (1 - p1), t2, ...))` for weights summing to 1.
fn convex_chain<S: Scalar>(items: Vec<(Term<S>, S)>) -> Term<S> {
    let mut rev = items.into_iter().rev();
    let (mut acc, mut mass) = rev.next().expect("empty distribution");
    for (t, p) in rev {
        let total = p.clone() + mass;
        acc = Term::conv(p / total.clone(), t, acc);
        mass = total;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::term_dist;
    use num_rational::BigRational;
    use num_traits::Signed;

    type Q = BigRational;
    type T = Term<Q>;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn fin(n: i64, d: i64) -> ExtValue<Q> {
        ExtValue::Fin(q(n, d))
    }

    fn names(ns: &[&str]) -> Vec<String> {
        ns.iter().map(|s| s.to_string()).collect()
    }

    /// u: 1/2 -> u, 1/2 -> bot; v: 1/4 -> v, 3/4 -> bot.
    fn mp_uv() -> Coalgebra<Q> {
        Coalgebra::new(
            "uv",
            q(1, 2),
            names(&["u", "v"]),
            None,
            Dynamics::Mp(vec![
                vec![(Target::State(0), q(1, 2)), (Target::Bot, q(1, 2))],
                vec![(Target::State(1), q(1, 4)), (Target::Bot, q(3, 4))],
            ]),
        )
        .unwrap()
    }

    fn mealy_pq() -> Coalgebra<Q> {
        let n = |k: i64| MonoidElem::Num(Q::from_int(k));
        Coalgebra::new(
            "pq",
            q(1, 2),
            names(&["p", "q"]),
            None,
            Dynamics::Mealy {
                inputs: names(&["i"]),
                monoid: Monoid::Rationals,
                rows: vec![
                    vec![(Target::State(0), n(1))],
                    vec![(Target::State(1), n(2))],
                ],
            },
        )
        .unwrap()
    }

    #[test]
    fn psi_examples() {
        let mp = mp_uv();
        let d1 = psi_step(&mp, &PseudoMetric::zero(2), Mode::Bounded);
        assert_eq!(*d1.get(0, 1), fin(1, 4));
        let mm = mealy_pq();
        let d1 = psi_step(&mm, &PseudoMetric::zero(2), Mode::Extended);
        assert_eq!(*d1.get(0, 1), fin(1, 1));
    }

    #[test]
    fn mp_fixed_point() {
        let (d, cert) = solve_bisim(&mp_uv(), &q(1, 1_000_000), Mode::Bounded).unwrap();
        let err = (d.get(0, 1).finite().unwrap().clone() - q(2, 7)).abs();
        assert!(err <= q(1, 1_000_000));
        assert!(cert.residual <= fin(1, 1_000_000));
    }

    #[test]
    fn mealy_fixed_point() {
        let tol = q(1, 1000);
        let (d, cert) = solve_bisim(&mealy_pq(), &tol, Mode::Extended).unwrap();
        let v = d.get(0, 1).finite().unwrap().clone();
        assert!((v - q(2, 1)).abs() <= tol);
        assert!(cert.apriori_bound <= tol);
    }

    #[test]
    fn extended_mode_reports_infinite_pairs() {
        // u terminates surely, v loops forever
        let c = Coalgebra::new(
            "inf",
            q(1, 2),
            names(&["u", "v"]),
            None,
            Dynamics::Mp(vec![
                vec![(Target::Bot, q(1, 1))],
                vec![(Target::State(1), q(1, 1))],
            ]),
        )
        .unwrap();
        let (d, cert) = solve_bisim(&c, &q(1, 100), Mode::Extended).unwrap();
        assert!(d.get(0, 1).is_inf());
        assert_eq!(cert.infinite_pairs, 1);
        let (d, _) = solve_bisim(&c, &q(1, 100), Mode::Bounded).unwrap();
        assert_eq!(*d.get(0, 1), fin(1, 1));
    }

    #[test]
    fn bad_rows_are_rejected() {
        let err = Coalgebra::new(
            "bad",
            q(1, 2),
            names(&["u"]),
            None,
            Dynamics::Mp(vec![vec![(Target::State(0), q(1, 2))]]),
        )
        .unwrap_err();
        assert!(matches!(err, BisimError::Invalid(_)));
    }

    fn chain_term() -> T {
        let nx = |t: T| T::next(DEFAULT_NEXT, q(1, 2), t);
        let r = || T::raise("*");
        nx(T::conv(
            q(1, 2),
            nx(r()),
            T::conv(q(1, 2), nx(nx(r())), r()),
        ))
    }

    #[test]
    fn unfold_remark_chain() {
        let th = TheoryExpr::markov_process(q(1, 2));
        let (c, root) = unfold_term(&chain_term(), &th, None).unwrap();
        assert_eq!(root, 0);
        assert_eq!(c.len(), 4);
        let Dynamics::Mp(rows) = &c.dynamics else {
            panic!()
        };
        // s0 -> s1 w.p. 1
        assert_eq!(rows[0], vec![(Target::State(1), q(1, 1))]);
        assert_eq!(rows[1].len(), 3);
    }

    #[test]
    fn approx_of_self_loop() {
        let c = Coalgebra::new(
            "loop",
            q(1, 2),
            names(&["u"]),
            None,
            Dynamics::Mp(vec![vec![(Target::State(0), q(1, 1))]]),
        )
        .unwrap();
        assert_eq!(approx_term(&c, 0, 0).to_string(), "raise(*)");
        assert_eq!(approx_term(&c, 0, 2).to_string(), "next(next(raise(*)))");
    }

    #[test]
    fn convex_chain_weights() {
        let t = convex_chain(vec![
            (T::var("a"), q(1, 2)),
            (T::var("b"), q(1, 4)),
            (T::var("c"), q(1, 4)),
        ]);
        assert_eq!(t.to_string(), "conv(1/2, a, conv(1/2, b, c))");
    }

    #[test]
    fn term_and_unfolding_agree() {
        let th = TheoryExpr::markov_process(q(1, 2));
        let nx = |t: T| T::next(DEFAULT_NEXT, q(1, 2), t);
        let t = chain_term();
        let s = nx(T::conv(q(1, 3), nx(T::raise("*")), T::raise("*")));
        let x = FinMetricSpace::singleton("X", "x");
        for mode in [Mode::Bounded, Mode::Extended] {
            let expected = term_dist(&t, &s, &th, &x, mode).unwrap();
            let (a, _) = unfold_term(&t, &th, None).unwrap();
            let (b, _) = unfold_term(&s, &th, None).unwrap();
            let (u, off) = a.disjoint_union(&b).unwrap();
            let (d, cert) = solve_bisim(&u, &q(1, 1_000_000_000), mode).unwrap();
            assert!(cert.exact);
            assert_eq!(*d.get(0, off), expected, "{mode}");
        }
    }

    #[test]
    fn display_format() {
        let text = mp_uv().to_string();
        assert_eq!(
            text,
            "mp uv {\n  c = 1/2;\n  state u: 1/2 -> u, 1/2 -> bot;\n  state v: 1/4 -> v, 3/4 -> bot;\n}\n"
        );
    }
}
