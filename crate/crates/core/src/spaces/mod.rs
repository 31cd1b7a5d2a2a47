//! Finite extended metric spaces, finitely supported distributions, and the
//! Hausdorff and Kantorovich lifts of a ground metric.

mod transport;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::ext::{ArithError, ExtValue};
use crate::scalar::Scalar;

pub use transport::{min_cost_transport, TransportPlan};

/// Name of the extra point added by [`FinMetricSpace::with_bottom`].
pub const BOTTOM: &str = "bot";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("a metric space needs at least one point")]
    Empty,
    #[error("duplicate point `{0}`")]
    DuplicatePoint(String),
    #[error("unknown point `{point}` in space `{space}`")]
    UnknownPoint { space: String, point: String },
    #[error("space `{space}` is not an extended metric: {reason}")]
    NotAMetric { space: String, reason: String },
    #[error("masses differ: {left} vs {right}")]
    MassMismatch { left: String, right: String },
    #[error("weight of `{0}` must be positive")]
    NonPositiveWeight(String),
    #[error("rescaling factor {0} is outside (0, 1]")]
    BadFactor(String),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

/// A finite set of named points with an extended metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinMetricSpace<S> {
    name: String,
    points: Vec<String>,
    index: HashMap<String, usize>,
    // row-major n x n
    dist: Vec<ExtValue<S>>,
}

impl<S: Scalar> FinMetricSpace<S> {
    /// Builds a space from a full distance function and validates the metric
    /// axioms.
    pub fn new<F>(
        name: impl Into<String>,
        points: Vec<String>,
        mut d: F,
    ) -> Result<Self, SpaceError>
    where
        F: FnMut(usize, usize) -> ExtValue<S>,
    {
        let space = Self::build(name.into(), points, &mut d)?;
        space.validate()?;
        Ok(space)
    }

    /// Builds a space from listed pairs; unlisted off-diagonal pairs are at
    /// infinite distance. Entries are symmetrized: a pair may be given in
    /// either order, and giving both orders with different values is an error.
    pub fn from_pairs(
        name: impl Into<String>,
        points: Vec<String>,
        pairs: &[(String, String, ExtValue<S>)],
    ) -> Result<Self, SpaceError> {
        let name = name.into();
        let mut space = Self::build(name.clone(), points, |i, j| {
            if i == j {
                ExtValue::zero()
            } else {
                ExtValue::Inf
            }
        })?;
        let mut seen: HashMap<(usize, usize), ExtValue<S>> = HashMap::new();
        for (p, q, v) in pairs {
            let i = space.require(p)?;
            let j = space.require(q)?;
            let key = (i.min(j), i.max(j));
            if let Some(prev) = seen.get(&key) {
                if prev != v {
                    return Err(SpaceError::NotAMetric {
                        space: name,
                        reason: format!("d({p},{q}) given twice with different values"),
                    });
                }
            }
            seen.insert(key, v.clone());
            let n = space.points.len();
            space.dist[i * n + j] = v.clone();
            space.dist[j * n + i] = v.clone();
        }
        space.validate()?;
        Ok(space)
    }

    /// Every pair of distinct points at infinite distance.
    pub fn discrete(name: impl Into<String>, points: Vec<String>) -> Result<Self, SpaceError> {
        Self::new(name, points, |i, j| {
            if i == j {
                ExtValue::zero()
            } else {
                ExtValue::Inf
            }
        })
    }

    /// The one-point space.
    pub fn singleton(name: impl Into<String>, point: impl Into<String>) -> Self {
        Self::discrete(name, vec![point.into()]).expect("one point is a metric space")
    }

    fn build<F>(name: String, points: Vec<String>, mut d: F) -> Result<Self, SpaceError>
    where
        F: FnMut(usize, usize) -> ExtValue<S>,
    {
        if points.is_empty() {
            return Err(SpaceError::Empty);
        }
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if index.insert(p.clone(), i).is_some() {
                return Err(SpaceError::DuplicatePoint(p.clone()));
            }
        }
        let n = points.len();
        let mut dist = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                dist.push(d(i, j));
            }
        }
        Ok(FinMetricSpace {
            name,
            points,
            index,
            dist,
        })
    }

    /// Checks zero diagonal, separation, symmetry and the triangle inequality.
    pub fn validate(&self) -> Result<(), SpaceError> {
        let n = self.points.len();
        let fail = |reason: String| SpaceError::NotAMetric {
            space: self.name.clone(),
            reason,
        };
        for i in 0..n {
            if !self.d(i, i).is_zero() {
                return Err(fail(format!("d({0},{0}) is not 0", self.points[i])));
            }
            for j in 0..n {
                if i != j && self.d(i, j).is_zero() {
                    return Err(fail(format!(
                        "distinct points {} and {} at distance 0",
                        self.points[i], self.points[j]
                    )));
                }
                if self.d(i, j) != self.d(j, i) {
                    return Err(fail(format!(
                        "d({},{}) is not symmetric",
                        self.points[i], self.points[j]
                    )));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if *self.d(i, k) > self.d(i, j).add(self.d(j, k)) {
                        return Err(fail(format!(
                            "triangle inequality fails for {}, {}, {}",
                            self.points[i], self.points[j], self.points[k]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn debug_validate(self) -> Self {
        debug_assert!(self.validate().is_ok(), "{:?}", self.validate());
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    pub fn index_of(&self, point: &str) -> Option<usize> {
        self.index.get(point).copied()
    }

    pub fn contains(&self, point: &str) -> bool {
        self.index.contains_key(point)
    }

    pub fn require(&self, point: &str) -> Result<usize, SpaceError> {
        self.index_of(point)
            .ok_or_else(|| SpaceError::UnknownPoint {
                space: self.name.clone(),
                point: point.to_string(),
            })
    }

    /// Distance by index.
    pub fn d(&self, i: usize, j: usize) -> &ExtValue<S> {
        &self.dist[i * self.points.len() + j]
    }

    /// Distance by point name.
    pub fn dist(&self, p: &str, q: &str) -> Result<ExtValue<S>, SpaceError> {
        Ok(self.d(self.require(p)?, self.require(q)?).clone())
    }

    /// The largest distance between two points.
    pub fn diameter(&self) -> ExtValue<S> {
        ExtValue::sup(self.dist.iter().cloned())
    }

    /// `(X, c * d_X)` for `0 < c <= 1`.
    pub fn rescale(&self, factor: &S) -> Result<Self, SpaceError> {
        if !factor.is_positive() || *factor > S::one() {
            return Err(SpaceError::BadFactor(factor.to_string()));
        }
        let mut dist = Vec::with_capacity(self.dist.len());
        for v in &self.dist {
            dist.push(v.scale(factor)?);
        }
        Ok(FinMetricSpace {
            name: format!("{}*{}", factor, self.name),
            points: self.points.clone(),
            index: self.index.clone(),
            dist,
        }
        .debug_validate())
    }

    /// Disjoint union; points become `inl(p)` and `inr(q)`, and points from
    /// different summands are at infinite distance.
    pub fn coproduct(&self, other: &Self) -> Self {
        let m = self.len();
        let points = self
            .points
            .iter()
            .map(|p| format!("inl({p})"))
            .chain(other.points.iter().map(|q| format!("inr({q})")))
            .collect();
        Self::build(
            format!("{}+{}", self.name, other.name),
            points,
            |i, j| match (i < m, j < m) {
                (true, true) => self.d(i, j).clone(),
                (false, false) => other.d(i - m, j - m).clone(),
                _ => ExtValue::Inf,
            },
        )
        .expect("coproduct points are distinct")
        .debug_validate()
    }

    /// `X + 1` with the extra point named [`BOTTOM`]; the points of `X` keep
    /// their names.
    pub fn with_bottom(&self) -> Result<Self, SpaceError> {
        if self.contains(BOTTOM) {
            return Err(SpaceError::DuplicatePoint(BOTTOM.to_string()));
        }
        let n = self.len();
        let mut points = self.points.clone();
        points.push(BOTTOM.to_string());
        Ok(Self::build(format!("{}+1", self.name), points, |i, j| {
            if i < n && j < n {
                self.d(i, j).clone()
            } else if i == j {
                ExtValue::zero()
            } else {
                ExtValue::Inf
            }
        })?
        .debug_validate())
    }

    /// Monoidal product: pairs `(x,y)` with the sum metric.
    pub fn boxed(&self, other: &Self) -> Self {
        let n = other.len();
        let mut points = Vec::with_capacity(self.len() * n);
        for p in &self.points {
            for q in &other.points {
                points.push(format!("({p},{q})"));
            }
        }
        Self::build(format!("{}[]{}", self.name, other.name), points, |i, j| {
            self.d(i / n, j / n).add(other.d(i % n, j % n))
        })
        .expect("pair names are distinct")
        .debug_validate()
    }

    /// Functions `I -> X` with the pointwise supremum metric. Points are named
    /// `{i1=x,i2=y}` following the order of `inputs`.
    pub fn power(&self, inputs: &[String]) -> Result<Self, SpaceError> {
        if inputs.is_empty() {
            return Err(SpaceError::Empty);
        }
        let n = self.len();
        let k = inputs.len();
        let total = n.checked_pow(k as u32).expect("power space too large");
        let digits = |mut code: usize| {
            let mut out = vec![0; k];
            for slot in out.iter_mut().rev() {
                *slot = code % n;
                code /= n;
            }
            out
        };
        let mut points = Vec::with_capacity(total);
        for code in 0..total {
            let f = digits(code);
            let body: Vec<String> = inputs
                .iter()
                .zip(&f)
                .map(|(i, &x)| format!("{i}={}", self.points[x]))
                .collect();
            points.push(format!("{{{}}}", body.join(",")));
        }
        Ok(Self::build(format!("{}^{}", self.name, k), points, |a, b| {
            let (fa, fb) = (digits(a), digits(b));
            ExtValue::sup(fa.iter().zip(&fb).map(|(&x, &y)| self.d(x, y).clone()))
        })?
        .debug_validate())
    }
}

impl<S: Scalar> fmt::Display for FinMetricSpace<S> {
    /// Renders in the space file format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "space {} {{", self.name)?;
        writeln!(f, "  points: {};", self.points.join(", "))?;
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                writeln!(
                    f,
                    "  d({},{}) = {};",
                    self.points[i],
                    self.points[j],
                    self.d(i, j)
                )?;
            }
        }
        write!(f, "}}")
    }
}

/// A finitely supported measure with positive exact weights.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FinDist<S> {
    weights: BTreeMap<String, S>,
}

impl<S: Scalar> FinDist<S> {
    pub fn new<I, P>(weights: I) -> Result<Self, SpaceError>
    where
        I: IntoIterator<Item = (P, S)>,
        P: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (p, w) in weights {
            let p = p.into();
            if !w.is_positive() {
                return Err(SpaceError::NonPositiveWeight(p));
            }
            if map.insert(p.clone(), w).is_some() {
                return Err(SpaceError::DuplicatePoint(p));
            }
        }
        Ok(FinDist { weights: map })
    }

    /// The Dirac measure.
    pub fn dirac(point: impl Into<String>) -> Self {
        FinDist {
            weights: BTreeMap::from([(point.into(), S::one())]),
        }
    }

    pub fn weights(&self) -> &BTreeMap<String, S> {
        &self.weights
    }

    pub fn weight(&self, point: &str) -> S {
        self.weights.get(point).cloned().unwrap_or_else(S::zero)
    }

    pub fn mass(&self) -> S {
        self.weights.values().cloned().fold(S::zero(), |a, b| a + b)
    }

    pub fn is_probability(&self) -> bool {
        self.mass().is_one()
    }

    /// Completes a sub-probability to a probability on `X + 1` by putting the
    /// missing mass on [`BOTTOM`].
    pub fn pad_bottom(&self) -> Result<Self, SpaceError> {
        let deficit = S::one() - self.mass();
        if deficit.is_negative() {
            return Err(SpaceError::MassMismatch {
                left: self.mass().to_string(),
                right: "1".into(),
            });
        }
        let mut weights = self.weights.clone();
        if deficit.is_positive() && weights.insert(BOTTOM.to_string(), deficit).is_some() {
            return Err(SpaceError::DuplicatePoint(BOTTOM.to_string()));
        }
        Ok(FinDist { weights })
    }

    /// `e * self + (1 - e) * other`.
    pub fn mix(&self, e: &S, other: &Self) -> Self {
        let f = S::one() - e.clone();
        let mut weights: BTreeMap<String, S> = BTreeMap::new();
        let scaled = self
            .weights
            .iter()
            .map(|(p, w)| (p, e.clone() * w.clone()))
            .chain(
                other
                    .weights
                    .iter()
                    .map(|(p, w)| (p, f.clone() * w.clone())),
            );
        for (p, w) in scaled {
            let slot = weights.entry(p.clone()).or_insert_with(S::zero);
            *slot = slot.clone() + w;
        }
        weights.retain(|_, w| !w.is_zero());
        FinDist { weights }
    }
}

impl<S: Scalar> fmt::Display for FinDist<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self
            .weights
            .iter()
            .map(|(p, w)| format!("{p}:{w}"))
            .collect();
        write!(f, "{{{}}}", body.join(", "))
    }
}

/// Hausdorff distance between two finite families, given the ground distance
/// by index. `inf` of an empty family is infinite, `sup` of an empty family
/// is 0.
pub fn hausdorff_by<S, E, F>(left: usize, right: usize, mut ground: F) -> Result<ExtValue<S>, E>
where
    S: Scalar,
    F: FnMut(usize, usize) -> Result<ExtValue<S>, E>,
{
    let mut table = Vec::with_capacity(left);
    for i in 0..left {
        let mut row = Vec::with_capacity(right);
        for j in 0..right {
            row.push(ground(i, j)?);
        }
        table.push(row);
    }
    let directed_left = ExtValue::sup(
        table
            .iter()
            .map(|row| row.iter().cloned().min().unwrap_or(ExtValue::Inf)),
    );
    let directed_right = ExtValue::sup((0..right).map(|j| {
        table
            .iter()
            .map(|row| row[j].clone())
            .min()
            .unwrap_or(ExtValue::Inf)
    }));
    Ok(directed_left.max(directed_right))
}

/// Hausdorff distance between two subsets of `space`.
pub fn hausdorff<S: Scalar>(
    space: &FinMetricSpace<S>,
    left: &[String],
    right: &[String],
) -> Result<ExtValue<S>, SpaceError> {
    let li = left
        .iter()
        .map(|p| space.require(p))
        .collect::<Result<Vec<_>, _>>()?;
    let ri = right
        .iter()
        .map(|p| space.require(p))
        .collect::<Result<Vec<_>, _>>()?;
    hausdorff_by(li.len(), ri.len(), |i, j| {
        Ok::<_, SpaceError>(space.d(li[i], ri[j]).clone())
    })
}

/// Kantorovich distance between two measures of equal mass, given the ground
/// distance by support index. Zero-mass pairs never contribute.
pub fn kantorovich_by<S, E, F>(left: &[S], right: &[S], mut ground: F) -> Result<ExtValue<S>, E>
where
    S: Scalar,
    E: From<SpaceError>,
    F: FnMut(usize, usize) -> Result<ExtValue<S>, E>,
{
    let total = |w: &[S]| w.iter().cloned().fold(S::zero(), |a, b| a + b);
    let (lm, rm) = (total(left), total(right));
    if lm != rm {
        return Err(SpaceError::MassMismatch {
            left: lm.to_string(),
            right: rm.to_string(),
        }
        .into());
    }
    let mut cost = Vec::with_capacity(left.len());
    for i in 0..left.len() {
        let mut row = Vec::with_capacity(right.len());
        for j in 0..right.len() {
            row.push(ground(i, j)?);
        }
        cost.push(row);
    }
    Ok(min_cost_transport(left, right, &cost).cost)
}

/// Kantorovich distance between two measures on `space`.
pub fn kantorovich<S: Scalar>(
    space: &FinMetricSpace<S>,
    mu: &FinDist<S>,
    nu: &FinDist<S>,
) -> Result<ExtValue<S>, SpaceError> {
    let split = |m: &FinDist<S>| -> Result<(Vec<usize>, Vec<S>), SpaceError> {
        let mut idx = Vec::new();
        let mut w = Vec::new();
        for (p, x) in &m.weights {
            idx.push(space.require(p)?);
            w.push(x.clone());
        }
        Ok((idx, w))
    };
    let (li, lw) = split(mu)?;
    let (ri, rw) = split(nu)?;
    kantorovich_by(&lw, &rw, |i, j| {
        Ok::<_, SpaceError>(space.d(li[i], ri[j]).clone())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::{One, Signed};
    use proptest::prelude::*;

    type Q = BigRational;
    type E = ExtValue<Q>;
    type Space = FinMetricSpace<Q>;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn names(ps: &[&str]) -> Vec<String> {
        ps.iter().map(|s| s.to_string()).collect()
    }

    fn line(ps: &[&str], gaps: &[(i64, i64)]) -> Space {
        // points on a line at the given cumulative positions
        let mut pos = vec![q(0, 1)];
        for &(n, d) in gaps {
            let last = pos.last().unwrap().clone();
            pos.push(last + q(n, d));
        }
        Space::new("L", names(ps), |i, j| {
            E::fin((pos[i].clone() - pos[j].clone()).abs())
        })
        .unwrap()
    }

    #[test]
    fn discrete_spaces() {
        let one = Space::discrete("one", names(&["a"])).unwrap();
        assert_eq!(one.len(), 1);
        let two = Space::discrete("two", names(&["a", "b"])).unwrap();
        assert_eq!(two.dist("a", "b").unwrap(), E::Inf);
        assert_eq!(Space::discrete("e", vec![]), Err(SpaceError::Empty));
        assert!(matches!(
            Space::discrete("d", names(&["a", "a"])),
            Err(SpaceError::DuplicatePoint(_))
        ));
    }

    #[test]
    fn loader_defaults_and_symmetrizes() {
        let s = Space::from_pairs(
            "S",
            names(&["p", "q", "r"]),
            &[("q".into(), "p".into(), E::ratio(1, 2))],
        )
        .unwrap();
        assert_eq!(s.dist("p", "q").unwrap(), E::ratio(1, 2));
        assert_eq!(s.dist("p", "r").unwrap(), E::Inf);
    }

    #[test]
    fn validation_rejects_non_metrics() {
        let bad = Space::from_pairs(
            "T",
            names(&["p", "q", "r"]),
            &[
                ("p".into(), "q".into(), E::ratio(1, 1)),
                ("q".into(), "r".into(), E::ratio(1, 1)),
                ("p".into(), "r".into(), E::ratio(3, 1)),
            ],
        );
        assert!(matches!(bad, Err(SpaceError::NotAMetric { .. })));
        let zero = Space::from_pairs(
            "Z",
            names(&["p", "q"]),
            &[("p".into(), "q".into(), E::zero())],
        );
        assert!(matches!(zero, Err(SpaceError::NotAMetric { .. })));
    }

    #[test]
    fn constructors() {
        let x = line(&["x", "y"], &[(1, 1)]);
        let half = x.rescale(&q(1, 2)).unwrap();
        assert_eq!(half.dist("x", "y").unwrap(), E::ratio(1, 2));
        assert!(x.rescale(&q(0, 1)).is_err());

        let lam = line(&["a", "b"], &[(2, 1)]);
        let sum = x.coproduct(&lam);
        assert_eq!(sum.dist("inl(x)", "inr(a)").unwrap(), E::Inf);
        assert_eq!(sum.dist("inr(a)", "inr(b)").unwrap(), E::ratio(2, 1));

        let pair = x.boxed(&lam);
        assert_eq!(pair.dist("(x,a)", "(y,b)").unwrap(), E::ratio(3, 1));

        let pw = x.power(&names(&["i1", "i2"])).unwrap();
        assert_eq!(pw.len(), 4);
        assert_eq!(pw.dist("{i1=x,i2=x}", "{i1=x,i2=y}").unwrap(), E::one());
        assert_eq!(pw.dist("{i1=x,i2=x}", "{i1=y,i2=y}").unwrap(), E::one());
    }

    #[test]
    fn hausdorff_examples() {
        let s = line(&["x", "y"], &[(2, 1)]);
        let u = names(&["x"]);
        let v = names(&["x", "y"]);
        assert_eq!(hausdorff(&s, &v, &v).unwrap(), E::zero());
        assert_eq!(hausdorff(&s, &u, &v).unwrap(), E::ratio(2, 1));
        assert_eq!(hausdorff(&s, &[], &u).unwrap(), E::Inf);
        assert_eq!(hausdorff(&s, &[], &[]).unwrap(), E::zero());
        assert!(hausdorff(&s, &names(&["z"]), &u).is_err());
    }

    #[test]
    fn kantorovich_examples() {
        let s = line(&["a", "b"], &[(1, 1)]);
        let mu = FinDist::new([("a", q(1, 2)), ("b", q(1, 2))]).unwrap();
        let nu = FinDist::dirac("b");
        assert_eq!(kantorovich(&s, &mu, &mu).unwrap(), E::zero());
        assert_eq!(kantorovich(&s, &mu, &nu).unwrap(), E::ratio(1, 2));
        let far = Space::discrete("D", names(&["a", "b"])).unwrap();
        assert_eq!(
            kantorovich(&far, &FinDist::dirac("a"), &FinDist::dirac("b")).unwrap(),
            E::Inf
        );
        let sub = FinDist::new([("a", q(1, 2))]).unwrap();
        assert!(matches!(
            kantorovich(&s, &sub, &nu),
            Err(SpaceError::MassMismatch { .. })
        ));
    }

    #[test]
    fn sub_probabilities_pad_to_bottom() {
        let s = line(&["a", "b"], &[(1, 1)]).with_bottom().unwrap();
        let mu = FinDist::new([("a", q(1, 2))])
            .unwrap()
            .pad_bottom()
            .unwrap();
        let nu = FinDist::new([("a", q(1, 4))])
            .unwrap()
            .pad_bottom()
            .unwrap();
        assert_eq!(mu.weight(BOTTOM), q(1, 2));
        // 1/4 of the mass must move between a and bot
        assert_eq!(kantorovich(&s, &mu, &nu).unwrap(), E::Inf);
        assert!(FinDist::new([("a", q(0, 1))]).is_err());
    }

    #[test]
    fn mixing_merges_support() {
        let a = FinDist::<Q>::dirac("a");
        let b = FinDist::<Q>::dirac("b");
        let m = a.mix(&q(1, 3), &b);
        assert_eq!(m.weight("a"), q(1, 3));
        assert_eq!(a.mix(&q(1, 2), &a), a);
        assert_eq!(a.mix(&q(1, 1), &b), a);
    }

    fn small_space() -> impl Strategy<Value = Space> {
        // random metric from 4 points on a line with small rational gaps
        proptest::collection::vec(1i64..6, 3).prop_map(|gaps| {
            let gaps: Vec<(i64, i64)> = gaps.into_iter().map(|g| (g, 2)).collect();
            line(&["a", "b", "c", "d"], &gaps)
        })
    }

    fn small_dist() -> impl Strategy<Value = FinDist<Q>> {
        proptest::collection::vec(0i64..4, 4).prop_filter_map("nonzero", |w| {
            let total: i64 = w.iter().sum();
            if total == 0 {
                return None;
            }
            let pts = ["a", "b", "c", "d"];
            let ws = pts
                .iter()
                .zip(&w)
                .filter(|(_, &x)| x > 0)
                .map(|(p, &x)| (p.to_string(), q(x, total)));
            Some(FinDist::new(ws).unwrap())
        })
    }

    proptest! {
        #[test]
        fn kantorovich_is_a_pseudometric(s in small_space(), m in small_dist(), n in small_dist(), r in small_dist()) {
            let k = |a: &FinDist<Q>, b: &FinDist<Q>| kantorovich(&s, a, b).unwrap();
            prop_assert_eq!(k(&m, &m), E::zero());
            prop_assert_eq!(k(&m, &n), k(&n, &m));
            prop_assert!(k(&m, &r) <= k(&m, &n).add(&k(&n, &r)));
        }

        #[test]
        fn kantorovich_of_diracs_is_ground(s in small_space(), i in 0usize..4, j in 0usize..4) {
            let p = &s.points()[i];
            let r = &s.points()[j];
            prop_assert_eq!(
                kantorovich(&s, &FinDist::dirac(p.clone()), &FinDist::dirac(r.clone())).unwrap(),
                s.dist(p, r).unwrap()
            );
        }

        #[test]
        fn kantorovich_is_jointly_convex(s in small_space(), m in small_dist(), m2 in small_dist(),
                                         n in small_dist(), n2 in small_dist(), e in 0i64..=6) {
            let e = q(e, 6);
            let k = |a: &FinDist<Q>, b: &FinDist<Q>| kantorovich(&s, a, b).unwrap().into_finite().unwrap();
            let mixed = k(&m.mix(&e, &m2), &n.mix(&e, &n2));
            let bound = e.clone() * k(&m, &n) + (Q::one() - e) * k(&m2, &n2);
            prop_assert!(mixed <= bound);
        }

        #[test]
        fn hausdorff_union_bound(s in small_space(),
                                 u in proptest::collection::btree_set(0usize..4, 1..4),
                                 v in proptest::collection::btree_set(0usize..4, 1..4),
                                 u2 in proptest::collection::btree_set(0usize..4, 1..4),
                                 v2 in proptest::collection::btree_set(0usize..4, 1..4)) {
            let pick = |set: &std::collections::BTreeSet<usize>| set.iter().map(|&i| s.points()[i].clone()).collect::<Vec<_>>();
            let join = |a: &std::collections::BTreeSet<usize>, b: &std::collections::BTreeSet<usize>| pick(&a.union(b).cloned().collect());
            let h = |a: &[String], b: &[String]| hausdorff(&s, a, b).unwrap();
            let lhs = h(&join(&u, &u2), &join(&v, &v2));
            let rhs = h(&pick(&u), &pick(&v)).max(h(&pick(&u2), &pick(&v2)));
            prop_assert!(lhs <= rhs);
        }
    }
}
