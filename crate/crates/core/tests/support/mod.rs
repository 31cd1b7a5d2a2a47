//! Shared fixtures for the integration suites: the nine theories under test,
//! random terms and coalgebras, and a brute-force transport oracle.
#![allow(dead_code)]

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;

use qeffects::bisim::{Coalgebra, Dynamics, Target};
use qeffects::semantics::{term_dist, Mode};
use qeffects::sigterm::{MonoidElem, OpSym, Term, DEFAULT_NEXT};
use qeffects::spaces::FinMetricSpace;
use qeffects::theory::{AxiomInstance, Monoid, OpFamily, ParamPool, TheoryExpr};
use qeffects::{ExtValue, Rational as Q};

pub fn q(n: i64, d: i64) -> Q {
    Q::new(n.into(), d.into())
}

pub fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// `x`, `y`, `z` with `d(x,y) = 1/2`, `d(y,z) = 1`, `d(x,z) = 1`.
pub fn space_x() -> FinMetricSpace<Q> {
    let f = |v: Q| ExtValue::Fin(v);
    FinMetricSpace::from_pairs(
        "X",
        names(&["x", "y", "z"]),
        &[
            ("x".into(), "y".into(), f(q(1, 2))),
            ("y".into(), "z".into(), f(q(1, 1))),
            ("x".into(), "z".into(), f(q(1, 1))),
        ],
    )
    .unwrap()
}

/// Three exceptions, one of them unreachable from the others.
pub fn space_e() -> FinMetricSpace<Q> {
    FinMetricSpace::from_pairs(
        "E",
        names(&["e1", "e2", "e3"]),
        &[("e1".into(), "e2".into(), ExtValue::Fin(q(1, 3)))],
    )
    .unwrap()
}

/// One of the theories the suites quantify over.
pub struct Setup {
    pub name: &'static str,
    pub theory: TheoryExpr<Q>,
    pub pool: ParamPool<Q>,
    pub space: FinMetricSpace<Q>,
}

pub fn base_weights() -> Vec<Q> {
    vec![q(0, 1), q(1, 3), q(1, 2), q(1, 1)]
}

pub fn rational_alphas() -> Vec<MonoidElem<Q>> {
    [q(0, 1), q(1, 1), q(-1, 2)]
        .into_iter()
        .map(MonoidElem::Num)
        .collect()
}

/// The five base theories and the four composite system theories.
pub fn setups(c: Q) -> Vec<Setup> {
    let pool = |alphas: Vec<MonoidElem<Q>>| ParamPool {
        weights: base_weights(),
        epsilons: vec![q(1, 2)],
        alphas,
    };
    let ab = names(&["a", "b"]);
    vec![
        Setup {
            name: "Bary",
            theory: TheoryExpr::Bary,
            pool: pool(vec![]),
            space: space_x(),
        },
        Setup {
            name: "Semi",
            theory: TheoryExpr::Semi,
            pool: pool(vec![]),
            space: space_x(),
        },
        Setup {
            name: "Exc",
            theory: TheoryExpr::Exc(space_e()),
            pool: pool(vec![]),
            space: space_x(),
        },
        Setup {
            name: "Reader",
            theory: TheoryExpr::Reader(ab.clone()),
            pool: pool(vec![]),
            space: space_x(),
        },
        Setup {
            name: "Writer",
            theory: TheoryExpr::Writer(Monoid::Rationals),
            pool: pool(rational_alphas()),
            space: space_x(),
        },
        Setup {
            name: "U_MP",
            theory: TheoryExpr::markov_process(c.clone()),
            pool: pool(vec![]),
            space: space_x(),
        },
        Setup {
            name: "U_LMP",
            theory: TheoryExpr::labelled_markov_process(ab.clone(), c.clone()),
            pool: pool(vec![]),
            space: space_x(),
        },
        Setup {
            name: "U_MM",
            theory: TheoryExpr::mealy(ab.clone(), Monoid::Rationals, c.clone()),
            pool: pool(rational_alphas()),
            space: space_x(),
        },
        Setup {
            name: "U_MDP",
            theory: TheoryExpr::mdp(ab, c),
            pool: pool(rational_alphas()),
            space: space_x(),
        },
    ]
}

/// Random terms over a theory's signature with variables drawn from a list.
pub struct TermGen {
    families: Vec<OpFamily<Q>>,
    vars: Vec<String>,
    weights: Vec<Q>,
    alphas: Vec<MonoidElem<Q>>,
}

impl TermGen {
    pub fn new(theory: &TheoryExpr<Q>, vars: Vec<String>) -> Self {
        TermGen {
            families: theory.signature().unwrap(),
            vars,
            weights: vec![q(0, 1), q(1, 4), q(1, 3), q(1, 2), q(2, 3), q(1, 1)],
            alphas: [q(0, 1), q(1, 1), q(2, 1), q(-1, 2)]
                .into_iter()
                .map(MonoidElem::Num)
                .collect(),
        }
    }

    fn leaf(&self, rng: &mut impl Rng) -> Term<Q> {
        let mut options: Vec<Term<Q>> = self.vars.iter().map(Term::var).collect();
        for fam in &self.families {
            match fam {
                OpFamily::Empty => options.push(Term::empty()),
                OpFamily::Raise(space) => {
                    options.extend(space.points().iter().map(Term::raise));
                }
                _ => {}
            }
        }
        options.choose(rng).expect("some leaf").clone()
    }

    pub fn term(&self, rng: &mut impl Rng, depth: usize) -> Term<Q> {
        let inner: Vec<&OpFamily<Q>> = self
            .families
            .iter()
            .filter(|f| !matches!(f, OpFamily::Empty | OpFamily::Raise(_)))
            .collect();
        if depth == 0 || inner.is_empty() || rng.gen_bool(0.25) {
            return self.leaf(rng);
        }
        let sub = |rng: &mut _| self.term(rng, depth - 1);
        match inner.choose(rng).unwrap() {
            OpFamily::ConvexComb => {
                let e = self.weights.choose(rng).unwrap().clone();
                Term::conv(e, sub(rng), sub(rng))
            }
            OpFamily::Union => Term::union(sub(rng), sub(rng)),
            OpFamily::Read(inputs) => Term::rd((0..inputs.len()).map(|_| sub(rng)).collect()),
            OpFamily::Write(m) => {
                let a = match m.elements() {
                    Some(es) => es.choose(rng).unwrap().clone(),
                    None => self.alphas.choose(rng).unwrap().clone(),
                };
                Term::wr(a, sub(rng))
            }
            OpFamily::Next { name, factor } => Term::next(name.clone(), factor.clone(), sub(rng)),
            OpFamily::Empty | OpFamily::Raise(_) => unreachable!(),
        }
    }

    /// A copy of `t` with some variables renamed and some weights nudged, so
    /// that the pair is usually at finite distance.
    pub fn perturb(&self, rng: &mut impl Rng, t: &Term<Q>) -> Term<Q> {
        match t {
            Term::Var(_) if rng.gen_bool(0.5) => Term::var(self.vars.choose(rng).unwrap()),
            Term::Var(_) => t.clone(),
            Term::App(op, args) => {
                let op = match op {
                    OpSym::ConvexComb(_) if rng.gen_bool(0.3) => {
                        OpSym::ConvexComb(self.weights.choose(rng).unwrap().clone())
                    }
                    op => op.clone(),
                };
                Term::App(op, args.iter().map(|a| self.perturb(rng, a)).collect())
            }
        }
    }
}

/// A random substitution for the variables of `ax`; each premise's right
/// variable is, half of the time, a perturbation of its left one.
pub fn sample_subst(
    rng: &mut impl Rng,
    gen: &TermGen,
    ax: &AxiomInstance<Q>,
    depth: usize,
) -> BTreeMap<String, Term<Q>> {
    let mut vars = ax.lhs.vars();
    vars.extend(ax.rhs.vars());
    let mut sigma: BTreeMap<String, Term<Q>> = vars
        .into_iter()
        .map(|v| (v, gen.term(rng, depth)))
        .collect();
    for (x, y, _) in &ax.premises {
        if rng.gen_bool(0.5) {
            let t = gen.perturb(rng, &sigma[x]);
            sigma.insert(y.clone(), t);
        }
    }
    sigma
}

/// Checks one substitution instance of `ax` in the free model: zero
/// equations must hold at distance 0, and conditional ones within the bound
/// their side condition gives for the premise distances realized.
pub fn check_instance(
    setup: &Setup,
    ax: &AxiomInstance<Q>,
    sigma: &BTreeMap<String, Term<Q>>,
    mode: Mode,
) -> Result<(), String> {
    let dist = |a: &Term<Q>, b: &Term<Q>| {
        term_dist(a, b, &setup.theory, &setup.space, mode).map_err(|e| format!("{}: {e}", ax.label))
    };
    let lhs = ax.lhs.bind(sigma);
    let rhs = ax.rhs.bind(sigma);
    let realized = ax
        .premises
        .iter()
        .map(|(x, y, _)| dist(&sigma[x], &sigma[y]))
        .collect::<Result<Vec<_>, _>>()?;
    let bound = ax.bound_for(&realized);
    let d = dist(&lhs, &rhs)?;
    if d > bound {
        return Err(format!(
            "{} [{mode}]: d({lhs}, {rhs}) = {d} exceeds {bound}",
            ax.label
        ));
    }
    Ok(())
}

/// Closed, acyclic process terms: leaves are `raise(*)`.
pub fn random_mp_term(rng: &mut impl Rng, c: &Q, depth: usize) -> Term<Q> {
    let th = TheoryExpr::markov_process(c.clone());
    TermGen::new(&th, Vec::new()).term(rng, depth)
}

pub const KINDS: [&str; 4] = ["mp", "lmp", "mealy", "mdp"];

fn random_dist(rng: &mut impl Rng, targets: &[Target]) -> Vec<(Target, Q)> {
    let denom = rng.gen_range(1..=6i64);
    let mut left = denom;
    let mut row = Vec::new();
    while left > 0 {
        let k = rng.gen_range(1..=left);
        row.push((targets.choose(rng).unwrap().clone(), q(k, denom)));
        left -= k;
    }
    row
}

/// A random coalgebra of the given kind with `n` states.
pub fn random_coalgebra(rng: &mut impl Rng, kind: &str, n: usize, c: Q) -> Coalgebra<Q> {
    let states: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut with_bot: Vec<Target> = (0..n).map(Target::State).collect();
    let only_states = with_bot.clone();
    with_bot.push(Target::Bot);
    let actions = names(&["a", "b"]);
    let rewards = [q(0, 1), q(1, 2), q(1, 1)];
    let outputs = [q(0, 1), q(1, 2), q(1, 1), q(2, 1)];
    let dynamics = match kind {
        "mp" => Dynamics::Mp((0..n).map(|_| random_dist(rng, &with_bot)).collect()),
        "lmp" => Dynamics::Lmp {
            actions: actions.clone(),
            rows: (0..n)
                .map(|_| {
                    actions
                        .iter()
                        .map(|_| random_dist(rng, &with_bot))
                        .collect()
                })
                .collect(),
        },
        "mealy" => Dynamics::Mealy {
            inputs: actions.clone(),
            monoid: Monoid::Rationals,
            rows: (0..n)
                .map(|_| {
                    actions
                        .iter()
                        .map(|_| {
                            (
                                Target::State(rng.gen_range(0..n)),
                                MonoidElem::Num(outputs.choose(rng).unwrap().clone()),
                            )
                        })
                        .collect()
                })
                .collect(),
        },
        "mdp" => Dynamics::Mdp {
            actions: actions.clone(),
            rows: (0..n)
                .map(|_| {
                    actions
                        .iter()
                        .map(|_| {
                            random_dist(rng, &only_states)
                                .into_iter()
                                .map(|(t, p)| (t, rewards.choose(rng).unwrap().clone(), p))
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        },
        other => panic!("unknown kind {other}"),
    };
    Coalgebra::new(format!("rand_{kind}"), c, states, None, dynamics).unwrap()
}

/// Minimum transport cost by enumerating every spanning-tree basis of the
/// bipartite transportation graph and keeping the feasible ones. Positive
/// flow on an infinite cell costs `inf`; zero flow costs nothing.
pub fn transport_by_bases(supply: &[Q], demand: &[Q], cost: &[Vec<ExtValue>]) -> ExtValue {
    let (m, n) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let size = m + n - 1;
    let mut best = ExtValue::Inf;
    let mut chosen = Vec::with_capacity(size);
    combinations(cells.len(), size, 0, &mut chosen, &mut |pick| {
        let tree: Vec<(usize, usize)> = pick.iter().map(|&k| cells[k]).collect();
        if let Some(flow) = basic_solution(supply, demand, &tree) {
            let mut total = ExtValue::zero();
            for (&(i, j), f) in tree.iter().zip(&flow) {
                if f.is_zero() {
                    continue;
                }
                total = total.add(&cost[i][j].scale(f).expect("positive flow"));
            }
            if total < best {
                best = total;
            }
        }
    });
    best
}

fn combinations(
    total: usize,
    k: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    for i in start..total {
        if total - i < k - chosen.len() {
            break;
        }
        chosen.push(i);
        combinations(total, k, i + 1, chosen, f);
        chosen.pop();
    }
}

/// The flows of the basis `tree` (cells `(supply, demand)`), or `None` if
/// the cells do not form a spanning tree or some flow is negative.
fn basic_solution(supply: &[Q], demand: &[Q], tree: &[(usize, usize)]) -> Option<Vec<Q>> {
    let m = supply.len();
    let nodes = m + demand.len();
    let mut rest: Vec<Q> = supply.iter().chain(demand).cloned().collect();
    let mut degree = vec![0usize; nodes];
    for &(i, j) in tree {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    let mut flow: Vec<Option<Q>> = vec![None; tree.len()];
    for _ in 0..tree.len() {
        // A node with exactly one undetermined cell fixes that cell's flow.
        let (node, e) = (0..nodes).find_map(|v| {
            if degree[v] != 1 {
                return None;
            }
            tree.iter()
                .enumerate()
                .find(|(e, &(i, j))| flow[*e].is_none() && (i == v || m + j == v))
                .map(|(e, _)| (v, e))
        })?;
        let (i, j) = tree[e];
        let other = if i == node { m + j } else { i };
        let f = rest[node].clone();
        if f < Q::zero() {
            return None;
        }
        rest[node] = Q::zero();
        rest[other] = rest[other].clone() - f.clone();
        degree[node] -= 1;
        degree[other] -= 1;
        flow[e] = Some(f);
    }
    if rest.iter().any(|r| !r.is_zero()) {
        return None;
    }
    flow.into_iter().collect()
}

/// A random probability vector with `k` positive entries and common
/// denominator at most `max_denom`.
pub fn random_weights(rng: &mut impl Rng, k: usize, max_denom: i64) -> Vec<Q> {
    let denom = rng.gen_range(k as i64..=max_denom.max(k as i64));
    // Cut points splitting `denom` into `k` positive parts.
    let mut cuts: Vec<i64> = (1..denom).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<i64> = cuts.into_iter().take(k - 1).collect();
    cuts.sort();
    let mut prev = 0;
    let mut out = Vec::with_capacity(k);
    for c in cuts.into_iter().chain([denom]) {
        out.push(q(c - prev, denom));
        prev = c;
    }
    debug_assert!(out.iter().cloned().fold(Q::zero(), |a, b| a + b).is_one());
    out
}

pub fn default_next(c: &Q, t: Term<Q>) -> Term<Q> {
    Term::next(DEFAULT_NEXT, c.clone(), t)
}
